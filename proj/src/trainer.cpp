#include "batman/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <stdexcept>

#include "batman/losses.hpp"
#include "batman/parallel.hpp"

namespace batman {

void TrainConfig::validate() const {
  if (!(lr >= 0.0) || !(weight_decay >= 0.0)) throw std::invalid_argument("TrainConfig: negative rate");
  if (batch_size == 0) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  if (w_ce < 0.0 || w_jaccard < 0.0 || w_mse < 0.0) throw std::invalid_argument("TrainConfig: negative loss weight");
  if (!(top_fraction > 0.0 && top_fraction <= 1.0)) throw std::invalid_argument("TrainConfig: top_fraction not in (0, 1]");
  if (ema_decay < 0.0 || ema_decay >= 1.0) throw std::invalid_argument("TrainConfig: ema_decay not in [0, 1)");
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"lr", c.lr},
          {"weight_decay", c.weight_decay},
          {"iterations", c.iterations},
          {"batch_size", c.batch_size},
          {"w_ce", c.w_ce},
          {"w_jaccard", c.w_jaccard},
          {"w_mse", c.w_mse},
          {"top_fraction", c.top_fraction},
          {"ema_decay", c.ema_decay},
          {"seed", c.seed},
          {"image_height", c.scenes.height},
          {"image_width", c.scenes.width},
          {"frames", c.scenes.frames},
          {"noise_sigma", c.scenes.noise_sigma},
          {"log_every", c.log_every}};
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c) {
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j[key].get<std::decay_t<decltype(field)>>();
  };
  get("lr", c.lr);
  get("weight_decay", c.weight_decay);
  get("iterations", c.iterations);
  get("batch_size", c.batch_size);
  get("w_ce", c.w_ce);
  get("w_jaccard", c.w_jaccard);
  get("w_mse", c.w_mse);
  get("top_fraction", c.top_fraction);
  get("ema_decay", c.ema_decay);
  get("seed", c.seed);
  get("image_height", c.scenes.height);
  get("image_width", c.scenes.width);
  get("frames", c.scenes.frames);
  get("noise_sigma", c.scenes.noise_sigma);
  get("log_every", c.log_every);
  c.validate();
  return c;
}

SyntheticDataset::SyntheticDataset(std::uint64_t seed, SceneOptions options, std::size_t batch_size)
    : seed_(seed), options_(options), batch_size_(batch_size) {
  if (options.frames < 2) throw std::invalid_argument("SyntheticDataset: need at least 2 frames");
}

TrainSample SyntheticDataset::sample(std::size_t iteration, std::size_t slot) const {
  const std::size_t index = iteration * batch_size_ + slot;
  const SyntheticSequence seq = generate_sequence(training_scene(seed_, index, options_));
  Rng rng(derive_seed(seed_, 0x5a3b1e, index));
  TrainSample s;
  s.t = static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(seq.length()) - 1));
  s.ref_frame = seq.frames[0];
  s.ref_mask = seq.masks[0];
  s.prev_frame = seq.frames[s.t - 1];
  s.prev_mask = seq.masks[s.t - 1];
  s.query_frame = seq.frames[s.t];
  s.query_mask = seq.masks[s.t];
  const FlowField& gt = seq.flows[s.t - 1];
  s.flow = seq.scene.flow_noise > 0.0 ? add_flow_noise(gt, seq.scene.flow_noise, rng) : gt;
  return s;
}

Var sample_loss(const BoundParams& p, const ModelConfig& mcfg, const TrainConfig& tcfg, const TrainSample& s,
                LossTerms* terms_out) {
  Tape& tape = p.tape();
  QueryEncoding ref = encode_query(p, mcfg, tape.constant(s.ref_frame));
  std::vector<MemoryVar> memory{{ref.tokens, encode_memory(p, mcfg, ref.tokens, s.ref_mask)}};
  if (s.t > 1) {
    QueryEncoding prev = encode_query(p, mcfg, tape.constant(s.prev_frame));
    memory.push_back({prev.tokens, encode_memory(p, mcfg, prev.tokens, s.prev_mask)});
  }
  FrameOutput out = forward_frame(p, mcfg, tape.constant(s.query_frame), s.flow, s.prev_mask.foreground(), memory);

  const int objects = s.ref_mask.max_label();
  std::vector<int> labels(s.query_mask.labels.begin(), s.query_mask.labels.end());
  for (int& l : labels) {
    if (l > objects) l = 0;
  }
  Var logits = ag::slice_cols(ag::chw_to_tokens(out.logits), 0, static_cast<std::size_t>(objects) + 1);
  Var ce = bootstrapped_ce(logits, labels, tcfg.top_fraction);
  Var jac = soft_jaccard(ag::softmax_rows(logits), labels);
  std::vector<Var> terms{ce, jac};
  std::vector<double> w{tcfg.w_ce, tcfg.w_jaccard};
  LossTerms lt;
  if (mcfg.calibrate) {
    Var mse = flow_mse(out.flow, out.init_flow);
    terms.push_back(mse);
    w.push_back(tcfg.w_mse);
    lt.mse = mse.value().item();
  }
  Var total = ag::weighted_sum(terms, w);
  lt.total = total.value().item();
  lt.ce = ce.value().item();
  lt.jaccard = jac.value().item();
  if (terms_out) *terms_out = lt;
  return total;
}

LossTerms sample_loss(const Params& weights, const ModelConfig& mcfg, const TrainConfig& tcfg,
                      const TrainSample& s, std::vector<Tensor>* grads) {
  Tape tape;
  BoundParams p(tape, weights, grads != nullptr);
  LossTerms lt;
  Var total = sample_loss(p, mcfg, tcfg, s, &lt);
  if (grads) {
    tape.backward(total);
    *grads = p.gradients();
  }
  return lt;
}

namespace {
bool finite(const std::vector<Tensor>& ts) {
  for (const auto& t : ts)
    if (!t.all_finite()) return false;
  return true;
}
}  // namespace

TrainResult train(const ModelConfig& mcfg, const TrainConfig& tcfg, const Dataset& data, const TrainCallback& on_step) {
  mcfg.validate();
  tcfg.validate();
  TrainResult r;
  r.weights = init_model(mcfg, tcfg.seed);
  AdamW opt({tcfg.lr, 0.9, 0.999, 1e-8, tcfg.weight_decay}, r.weights);
  Ema ema(tcfg.ema_decay, r.weights);
  const std::size_t b = tcfg.batch_size;
  for (std::size_t it = 0; it < tcfg.iterations; ++it) {
    std::vector<TrainSample> samples;
    for (std::size_t s = 0; s < b; ++s) samples.push_back(data.sample(it, s));
    std::vector<std::vector<Tensor>> grads(b);
    std::vector<LossTerms> losses(b);
    std::vector<std::string> failures(b);
    // Samples are independent; the reduction below runs in a fixed order.
    parallel_for(b, [&](std::size_t begin, std::size_t end) {
      for (std::size_t s = begin; s < end; ++s) {
        try {
          losses[s] = sample_loss(r.weights, mcfg, tcfg, samples[s], &grads[s]);
        } catch (const NonFiniteError& e) {
          failures[s] = e.what();
        }
      }
    });
    TrainStep step;
    step.iteration = it;
    for (const auto& f : failures) {
      if (f.empty()) continue;
      r.diverged = true;
      r.message = "non-finite values at iteration " + std::to_string(it) + ": " + f;
      break;
    }
    if (r.diverged) break;
    std::vector<Tensor> mean = grads[0];
    for (std::size_t i = 0; i < mean.size(); ++i) {
      std::vector<double> acc = grads[0][i].to_vector();
      for (std::size_t s = 1; s < b; ++s)
        for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += grads[s][i][j];
      for (double& v : acc) v /= static_cast<double>(b);
      mean[i] = Tensor(grads[0][i].shape(), std::move(acc));
    }
    for (const auto& l : losses) {
      step.loss.total += l.total / static_cast<double>(b);
      step.loss.ce += l.ce / static_cast<double>(b);
      step.loss.jaccard += l.jaccard / static_cast<double>(b);
      step.loss.mse += l.mse / static_cast<double>(b);
    }
    if (!std::isfinite(step.loss.total) || !finite(mean)) {
      r.diverged = true;
      r.message = "non-finite loss or gradient at iteration " + std::to_string(it);
      break;
    }
    const Params before = r.weights;  // tensors are shared, so this copy is cheap
    opt.step(r.weights, mean);
    if (!finite(r.weights.values())) {
      r.diverged = true;
      r.message = "non-finite weights after iteration " + std::to_string(it);
      r.weights = before;
      break;
    }
    ema.update(r.weights);
    r.curve.push_back(step);
    r.completed = it + 1;
    if (on_step) on_step(step);
  }
  r.ema = ema.shadow();
  return r;
}

void write_loss_csv(std::ostream& out, const std::vector<TrainStep>& curve) {
  out << "iteration,total,ce,jaccard,mse\n";
  char buf[160];
  for (const auto& s : curve) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g,%.9g\n", s.iteration, s.loss.total, s.loss.ce,
                  s.loss.jaccard, s.loss.mse);
    out << buf;
  }
}

void save_training(const std::filesystem::path& stem, const TrainResult& r, const ModelConfig& mcfg,
                   const TrainConfig& tcfg) {
  nlohmann::json meta = {{"model", to_json(mcfg)},
                         {"train", to_json(tcfg)},
                         {"completed_iterations", r.completed},
                         {"diverged", r.diverged},
                         {"weights", "ema"}};
  if (!r.message.empty()) meta["message"] = r.message;
  if (!r.curve.empty()) meta["final_loss"] = r.curve.back().loss.total;
  save_checkpoint(stem, r.ema, meta);
  std::ofstream csv(stem.string() + ".loss.csv");
  if (!csv) throw std::runtime_error("cannot write loss curve next to " + stem.string());
  write_loss_csv(csv, r.curve);
}

Params load_model(const std::filesystem::path& stem, ModelConfig* cfg) {
  nlohmann::json meta;
  Params p = load_checkpoint(stem, &meta);
  if (cfg) {
    if (!meta.contains("model")) throw std::runtime_error("checkpoint " + stem.string() + " has no model config");
    *cfg = model_config_from_json(meta["model"]);
  }
  return p;
}

// --- calibration pretext ---------------------------------------------------------

CalibSample calibration_sample(std::uint64_t seed, std::size_t index, const CalibTrainConfig& cfg) {
  SceneOptions opt = cfg.scenes;
  opt.noise_sigma = cfg.noise_sigma;
  const SyntheticSequence seq = generate_sequence(random_scene(derive_seed(seed, 0xca11b, index), SceneCategory::kNoisyFlow, opt));
  Rng rng(derive_seed(seed, 0xca11c, index));
  const auto t = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(seq.flows.size()) - 1));
  return {add_flow_noise(seq.flows[t], cfg.noise_sigma, rng), seq.flows[t], seq.masks[t].foreground()};
}

Params train_calibration(const CalibConfig& ccfg, const CalibTrainConfig& tcfg, std::vector<double>* curve) {
  Rng rng(derive_seed(tcfg.seed, 0xca1));
  Params w = init_calibration(ccfg, rng);
  AdamW opt({tcfg.lr, 0.9, 0.999, 1e-8, tcfg.weight_decay}, w);
  for (std::size_t step = 0; step < tcfg.steps; ++step) {
    std::vector<Tensor> mean;
    double loss = 0.0;
    for (std::size_t s = 0; s < tcfg.batch_size; ++s) {
      const CalibSample cs = calibration_sample(tcfg.seed, step * tcfg.batch_size + s, tcfg);
      Tape tape;
      BoundParams p(tape, w, true);
      Var noisy = tape.constant(cs.noisy.uv());
      Var out = calibrate_flow(p, ccfg, noisy, tape.constant(cs.mask));
      Var total = ag::weighted_sum({flow_mse(out, tape.constant(cs.clean.uv())), flow_mse(out, noisy)},
                                   {1.0, tcfg.w_tether});
      tape.backward(total);
      loss += total.value().item() / static_cast<double>(tcfg.batch_size);
      auto g = p.gradients();
      if (mean.empty()) {
        mean = std::move(g);
      } else {
        for (std::size_t i = 0; i < g.size(); ++i) mean[i] = kernels::add(mean[i], g[i]);
      }
    }
    for (auto& g : mean) g = kernels::scale(g, 1.0 / static_cast<double>(tcfg.batch_size));
    opt.step(w, mean);
    if (curve) curve->push_back(loss);
  }
  return w;
}

CalibEvaluation evaluate_calibration(const Params& weights, const CalibConfig& ccfg, const CalibTrainConfig& tcfg,
                                     std::uint64_t heldout_seed, std::size_t count) {
  CalibEvaluation ev;
  for (std::size_t i = 0; i < count; ++i) {
    const CalibSample cs = calibration_sample(heldout_seed, i, tcfg);
    const FlowField cal = calibrate_flow(cs.noisy, cs.mask, weights, ccfg);
    ev.mse_noisy += flow_mse(cs.noisy, cs.clean);
    ev.mse_calibrated += flow_mse(cal, cs.clean);
    ev.tv_inside_noisy += masked_total_variation(cs.noisy, cs.mask).inside;
    ev.tv_inside_calibrated += masked_total_variation(cal, cs.mask).inside;
  }
  const double n = static_cast<double>(count);
  ev.mse_noisy /= n;
  ev.mse_calibrated /= n;
  ev.tv_inside_noisy /= n;
  ev.tv_inside_calibrated /= n;
  ev.samples = count;
  return ev;
}

}  // namespace batman

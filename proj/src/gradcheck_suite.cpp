#include <cmath>

#include "batman/attention.hpp"
#include "batman/calibration.hpp"
#include "batman/gradcheck.hpp"
#include "batman/losses.hpp"
#include "batman/model.hpp"
#include "batman/rng.hpp"
#include "batman/trainer.hpp"

namespace batman {

namespace {

// sum(out * r) for a fixed random r of matching shape.
Var project(Var out, const Tensor& r) {
  Var rv = out.tape->constant(r.reshape(out.shape()));
  return ag::sum(ag::mul(out, rv));
}

struct CaseBuilder {
  Rng rng;
  std::vector<GradCheckCase> cases;

  Tensor randn_t(Shape s, double sd = 1.0) { return randn(std::move(s), rng, sd); }

  // Adds a case whose scalar is `body(...)` projected on a random tensor.
  void add(std::string name, std::vector<Tensor> inputs, std::function<Var(Tape&, const std::vector<Var>&)> body) {
    Tape probe;
    std::vector<Var> leaves;
    for (const auto& t : inputs) leaves.push_back(probe.leaf(t, false));
    const Tensor r = randn_t(body(probe, leaves).shape());
    cases.push_back({std::move(name),
                     [body, r](Tape& t, const std::vector<Var>& in) { return project(body(t, in), r); },
                     std::move(inputs),
                     {}});
  }
};

BilateralMask random_mask(std::size_t side, const AttentionConfig& cfg, Rng& rng) {
  return build_bilateral_mask(BilateralEncoding{randn({side * side, 1}, rng), side, side}, cfg);
}

}  // namespace

std::vector<GradCheckCase> operation_gradcheck_cases(std::uint64_t seed) {
  CaseBuilder b{Rng(derive_seed(seed, 0x9c4ec)), {}};
  using V = std::vector<Var>;
  namespace kk = kernels;

  b.add("matmul", {b.randn_t({3, 4}), b.randn_t({4, 5})}, [](Tape&, const V& v) { return ag::matmul(v[0], v[1]); });
  b.add("matmul_nt", {b.randn_t({3, 4}), b.randn_t({5, 4})},
        [](Tape&, const V& v) { return ag::matmul_nt(v[0], v[1]); });
  b.add("transpose", {b.randn_t({3, 4})}, [](Tape&, const V& v) { return ag::transpose(v[0]); });
  b.add("add", {b.randn_t({3, 4}), b.randn_t({3, 4})}, [](Tape&, const V& v) { return ag::add(v[0], v[1]); });
  b.add("sub", {b.randn_t({3, 4}), b.randn_t({3, 4})}, [](Tape&, const V& v) { return ag::sub(v[0], v[1]); });
  b.add("mul", {b.randn_t({3, 4}), b.randn_t({3, 4})}, [](Tape&, const V& v) { return ag::mul(v[0], v[1]); });
  b.add("scale", {b.randn_t({3, 4})}, [](Tape&, const V& v) { return ag::scale(v[0], -1.7); });
  b.add("gelu", {b.randn_t({4, 5}, 2.0)}, [](Tape&, const V& v) { return ag::gelu(v[0]); });
  b.add("add_row_bias", {b.randn_t({3, 4}), b.randn_t({4})},
        [](Tape&, const V& v) { return ag::add_row_bias(v[0], v[1]); });
  b.add("add_channel_bias", {b.randn_t({3, 2, 2}), b.randn_t({3})},
        [](Tape&, const V& v) { return ag::add_channel_bias(v[0], v[1]); });
  b.add("softmax_rows", {b.randn_t({3, 5}, 2.0)}, [](Tape&, const V& v) { return ag::softmax_rows(v[0]); });
  b.add("layer_norm", {b.randn_t({4, 6}), b.randn_t({6}), b.randn_t({6})},
        [](Tape&, const V& v) { return ag::layer_norm(v[0], v[1], v[2]); });
  b.add("conv2d_3x3_s1", {b.randn_t({2, 5, 5}), b.randn_t({3, 2, 3, 3}), b.randn_t({3})},
        [](Tape&, const V& v) { return ag::conv2d(v[0], v[1], v[2], kk::ConvSpec{1, 1}); });
  b.add("conv2d_3x3_s2", {b.randn_t({2, 6, 6}), b.randn_t({3, 2, 3, 3}), b.randn_t({3})},
        [](Tape&, const V& v) { return ag::conv2d(v[0], v[1], v[2], kk::ConvSpec{2, 1}); });
  b.add("conv2d_1x1_nobias", {b.randn_t({3, 4, 4}), b.randn_t({2, 3, 1, 1})},
        [](Tape&, const V& v) { return ag::conv2d(v[0], v[1], kk::ConvSpec{1, 0}); });
  b.add("upsample_nearest", {b.randn_t({2, 3, 3})}, [](Tape&, const V& v) { return ag::upsample_nearest(v[0], 2); });
  b.add("bilinear_resize_up", {b.randn_t({2, 3, 4})},
        [](Tape&, const V& v) { return ag::bilinear_resize(v[0], 5, 7); });
  b.add("bilinear_resize_down", {b.randn_t({2, 8, 6})},
        [](Tape&, const V& v) { return ag::bilinear_resize(v[0], 3, 4); });
  b.add("concat0", {b.randn_t({2, 3}), b.randn_t({1, 3})}, [](Tape&, const V& v) { return ag::concat0({v[0], v[1]}); });
  b.add("concat_cols", {b.randn_t({3, 2}), b.randn_t({3, 4})},
        [](Tape&, const V& v) { return ag::concat_cols({v[0], v[1]}); });
  b.add("slice0", {b.randn_t({5, 3})}, [](Tape&, const V& v) { return ag::slice0(v[0], 1, 4); });
  b.add("slice_cols", {b.randn_t({3, 5})}, [](Tape&, const V& v) { return ag::slice_cols(v[0], 1, 3); });
  b.add("chw_to_tokens", {b.randn_t({3, 2, 4})}, [](Tape&, const V& v) { return ag::chw_to_tokens(v[0]); });
  b.add("tokens_to_chw", {b.randn_t({8, 3})}, [](Tape&, const V& v) { return ag::tokens_to_chw(v[0], 2, 4); });
  b.add("reshape", {b.randn_t({2, 6})}, [](Tape&, const V& v) { return ag::reshape(v[0], {3, 4}); });
  b.add("embedding_lookup", {b.randn_t({4, 3})},
        [](Tape&, const V& v) { return ag::embedding_lookup(v[0], {0, 3, 3, 1, 0}); });
  b.add("sum", {b.randn_t({3, 3})}, [](Tape&, const V& v) { return ag::sum(ag::mul(v[0], v[0])); });
  b.add("mean", {b.randn_t({3, 3})}, [](Tape&, const V& v) { return ag::mean(ag::mul(v[0], v[0])); });
  b.add("weighted_sum", {b.randn_t({1}), b.randn_t({1})},
        [](Tape&, const V& v) { return ag::weighted_sum({v[0], v[1]}, {0.3, -2.0}); });

  // Attention: 4x4 grid, one or two memory frames, W_d = 1.
  AttentionConfig acfg;
  acfg.window_radius = 1;
  acfg.rank_window = 3;
  acfg.num_heads = 2;
  acfg.head_dim = 3;
  acfg.channels = 6;
  const std::size_t n = 16;
  auto mask = std::make_shared<BilateralMask>(random_mask(4, acfg, b.rng));
  b.add("encode_bilateral_space", {b.randn_t({n, 4}), b.randn_t({n, 2}), b.randn_t({1, 6, 1, 1})},
        [](Tape&, const V& v) { return encode_bilateral_space(v[0], v[1], v[2]); });
  b.add("bi_attn_exact", {b.randn_t({n, 3}), b.randn_t({2 * n, 3}), b.randn_t({2 * n, 2})},
        [mask](Tape&, const V& v) { return bi_attn_exact(v[0], v[1], v[2], *mask); });
  b.add("bi_attn_additive", {b.randn_t({n, 3}), b.randn_t({n, 3}), b.randn_t({n, 2}), b.randn_t({n, 1})},
        [mask](Tape&, const V& v) { return bi_attn_additive(v[0], v[1], v[2], *mask, v[3], 30.0); });
  b.add("bi_attn_windowed", {b.randn_t({n, 3}), b.randn_t({2 * n, 3}), b.randn_t({2 * n, 2})},
        [mask](Tape&, const V& v) { return bi_attn_windowed(v[0], v[1], v[2], *mask); });
  b.add("bi_attn_windowed_e", {b.randn_t({n, 3}), b.randn_t({2 * n, 3}), b.randn_t({2 * n, 2}), b.randn_t({n, 1})},
        [mask](Tape&, const V& v) { return bi_attn_windowed(v[0], v[1], v[2], *mask, v[3]); });
  b.add("full_attention", {b.randn_t({5, 3}), b.randn_t({7, 3}), b.randn_t({7, 2})},
        [](Tape&, const V& v) { return full_attention(v[0], v[1], v[2]); });
  const std::vector<std::pair<std::string, AttentionVariant>> variants{
      {"exact", AttentionVariant::kExact}, {"additive", AttentionVariant::kAdditive}, {"windowed", AttentionVariant::kWindowed}};
  for (const auto& [vname, variant] : variants) {
    std::vector<Tensor> in{b.randn_t({n, 6}), b.randn_t({n, 6}), b.randn_t({n, 6}), b.randn_t({6, 6}, 0.5),
                           b.randn_t({6, 6}, 0.5), b.randn_t({6, 6}, 0.5), b.randn_t({6, 6}, 0.5), b.randn_t({n, 1})};
    const AttentionVariant var = variant;
    b.add("multi_head_bi_attn_" + vname, std::move(in), [mask, var](Tape&, const V& v) {
      HeadVars h = split_heads(v[3], v[4], v[5], v[6], 2);
      return multi_head_bi_attn(v[0], v[1], v[2], *mask, h, var, v[7], 30.0);
    });
  }
  b.add("multi_head_full",
        {b.randn_t({5, 6}), b.randn_t({7, 6}), b.randn_t({7, 6}), b.randn_t({6, 6}, 0.5), b.randn_t({6, 6}, 0.5),
         b.randn_t({6, 6}, 0.5), b.randn_t({6, 6}, 0.5)},
        [](Tape&, const V& v) { return multi_head_full(v[0], v[1], v[2], split_heads(v[3], v[4], v[5], v[6], 2)); });

  // Losses take labels as constants; their scalars are used directly.
  const std::vector<int> labels{0, 1, 2, 1, 0, 0, 2, 2, 1, 0, 0, 1};
  b.cases.push_back({"bootstrapped_ce",
                     [labels](Tape&, const V& v) { return bootstrapped_ce(v[0], labels, 0.5); },
                     {b.randn_t({12, 3}, 2.0)},
                     {}});
  b.cases.push_back({"soft_jaccard",
                     [labels](Tape&, const V& v) { return soft_jaccard(ag::softmax_rows(v[0]), labels); },
                     {b.randn_t({12, 3}, 2.0)},
                     {}});
  b.add("flow_mse", {b.randn_t({2, 4, 4}), b.randn_t({2, 4, 4})},
        [](Tape&, const V& v) { return ag::reshape(flow_mse(v[0], v[1]), {1}); });

  // Calibration U-Net with every weight randomised (the zero last layer would
  // hide the down path).
  CalibConfig ccfg;
  ccfg.channels = {3, 4};
  Rng crng = Rng(derive_seed(seed, 0xca1));
  Params cw = init_calibration(ccfg, crng);
  std::vector<Tensor> cin{b.randn_t({2, 8, 8}), b.randn_t({8, 8}, 0.5)};
  for (const auto& t : cw.values()) cin.push_back(randn(t.shape(), b.rng, 0.2));
  auto names = std::make_shared<Params>(cw);
  b.add("calibrate_flow", std::move(cin), [names, ccfg](Tape& tape, const V& v) {
    BoundParams p(tape, *names, std::vector<Var>(v.begin() + 2, v.end()));
    return calibrate_flow(p, ccfg, v[0], v[1]);
  });
  return std::move(b.cases);
}

GradCheckCase model_gradcheck_case(std::uint64_t seed, std::size_t coords_per_tensor) {
  ModelConfig mcfg = ModelConfig::toy();
  mcfg.num_blocks = 1;
  TrainConfig tcfg;
  // Hard top-k selection puts kinks in the loss; bootstrapped_ce has its own case.
  tcfg.top_fraction = 1.0;
  SceneOptions opt{32, 32, 4, 1.5};
  SyntheticDataset data(derive_seed(seed, 0x90de1), opt, 1);
  TrainSample sample = data.sample(0, 0);
  // Memory of two frames exercises the per-frame mask replication.
  for (std::size_t i = 1; sample.t < 2 && i < 64; ++i) sample = data.sample(i, 0);

  auto params = std::make_shared<Params>(init_model(mcfg, seed));
  std::vector<Tensor> inputs;
  Rng rng(derive_seed(seed, 0x9e27));
  for (std::size_t i = 0; i < params->size(); ++i) {
    const std::string& name = params->names()[i];
    Tensor t = params->values()[i];
    // Break the identity start of the calibration net so its gradients are not trivially zero.
    if (name.starts_with("calib.up0")) t = randn(t.shape(), rng, 0.05);
    inputs.push_back(t);
  }
  GradCheckCase c;
  c.name = "model_1block_toy";
  c.inputs = std::move(inputs);
  c.options.max_coords_per_input = coords_per_tensor;
  c.options.sample_seed = derive_seed(seed, 0xc00d);
  c.f = [params, mcfg, tcfg, sample](Tape& tape, const std::vector<Var>& leaves) {
    BoundParams p(tape, *params, leaves);
    return sample_loss(p, mcfg, tcfg, sample);
  };
  return c;
}

}  // namespace batman

#include "batman/model.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "batman/metrics.hpp"

namespace batman {

namespace k = kernels;

namespace {

const char* variant_name(AttentionVariant v) {
  switch (v) {
    case AttentionVariant::kExact: return "exact";
    case AttentionVariant::kAdditive: return "additive";
    case AttentionVariant::kWindowed: return "windowed";
  }
  return "windowed";
}

AttentionVariant parse_variant(const std::string& s) {
  if (s == "exact") return AttentionVariant::kExact;
  if (s == "additive") return AttentionVariant::kAdditive;
  if (s == "windowed") return AttentionVariant::kWindowed;
  throw std::invalid_argument("unknown attention variant '" + s + "'");
}

std::string blk(std::size_t b, const std::string& rest) { return "b" + std::to_string(b) + "." + rest; }

}  // namespace

void ModelConfig::validate() const {
  if (num_blocks < 1) throw std::invalid_argument("ModelConfig: num_blocks must be >= 1");
  if (max_objects < 1 || max_objects > 254) throw std::invalid_argument("ModelConfig: max_objects out of range");
  if (channels % 4 != 0) throw std::invalid_argument("ModelConfig: channels must be divisible by 4");
  if (encoder_channels.size() != 3 || decoder_channels.size() != 3) {
    throw std::invalid_argument("ModelConfig: encoder and decoder plans need 3 entries");
  }
  if (attention.channels != channels) throw std::invalid_argument("ModelConfig: attention.channels != channels");
  if (memory_capacity < 1) throw std::invalid_argument("ModelConfig: memory capacity must be >= 1");
  attention.validate();
}

ModelConfig ModelConfig::toy() { return ModelConfig{}; }

ModelConfig ModelConfig::full() {
  ModelConfig cfg;
  cfg.channels = 256;
  cfg.num_blocks = 12;
  cfg.max_objects = 10;
  cfg.flow_channels = 64;
  cfg.mlp_hidden = 1024;
  cfg.encoder_channels = {32, 64, 128};
  cfg.decoder_channels = {64, 32, 16};
  cfg.attention = AttentionConfig::full_scale(256);
  cfg.calibration = CalibConfig::eleven_layer();
  return cfg;
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"channels", c.channels},
          {"num_blocks", c.num_blocks},
          {"max_objects", c.max_objects},
          {"flow_channels", c.flow_channels},
          {"mlp_hidden", c.mlp_hidden},
          {"encoder_channels", c.encoder_channels},
          {"decoder_channels", c.decoder_channels},
          {"window_radius", c.attention.window_radius},
          {"rank_window", c.attention.rank_window},
          {"suppression", c.attention.suppression},
          {"num_heads", c.attention.num_heads},
          {"bilateral_variant", variant_name(c.bilateral_variant)},
          {"calibrate", c.calibrate},
          {"calibration_channels", c.calibration.channels},
          {"calibration_refine_head", c.calibration.refine_head},
          {"memory_capacity", c.memory_capacity}};
}

ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig c) {
  if (j.contains("preset")) {
    const std::string preset = j["preset"];
    if (preset == "full") {
      c = ModelConfig::full();
    } else if (preset == "toy") {
      c = ModelConfig::toy();
    } else {
      throw std::invalid_argument("unknown model preset '" + preset + "'");
    }
  }
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j[key].get<std::decay_t<decltype(field)>>();
  };
  get("channels", c.channels);
  get("num_blocks", c.num_blocks);
  get("max_objects", c.max_objects);
  get("flow_channels", c.flow_channels);
  get("mlp_hidden", c.mlp_hidden);
  get("encoder_channels", c.encoder_channels);
  get("decoder_channels", c.decoder_channels);
  get("num_heads", c.attention.num_heads);
  get("window_radius", c.attention.window_radius);
  get("rank_window", c.attention.rank_window);
  get("suppression", c.attention.suppression);
  get("calibrate", c.calibrate);
  get("calibration_channels", c.calibration.channels);
  get("calibration_refine_head", c.calibration.refine_head);
  get("memory_capacity", c.memory_capacity);
  if (j.contains("bilateral_variant")) c.bilateral_variant = parse_variant(j["bilateral_variant"]);
  if (c.attention.num_heads == 0 || c.channels % c.attention.num_heads != 0) {
    throw std::invalid_argument("model config: channels not divisible by num_heads");
  }
  c.attention.channels = c.channels;
  c.attention.head_dim = c.channels / c.attention.num_heads;
  c.validate();
  return c;
}

ModelConfig spatial_local_variant(const ModelConfig& cfg) {
  ModelConfig out = cfg;
  out.attention.rank_window = cfg.attention.max_rank_window();
  return out;
}

Params init_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(derive_seed(seed, 0x30de1));
  Params p;
  const std::size_t c = cfg.channels;
  const auto& ec = cfg.encoder_channels;
  const auto& dc = cfg.decoder_channels;
  auto conv = [&](const std::string& name, std::size_t cout, std::size_t cin, std::size_t ks) {
    p.add(name + ".w", conv_init(cout, cin, ks, rng));
    p.add(name + ".b", Tensor::zeros({cout}));
  };
  auto norm = [&](const std::string& name, std::size_t width) {
    p.add(name + ".g", Tensor::full({width}, 1.0));
    p.add(name + ".b", Tensor::zeros({width}));
  };
  auto attn = [&](const std::string& name) {
    for (const char* m : {".q", ".k", ".v", ".o"}) p.add(name + m, linear_init(c, c, rng));
  };
  conv("qenc.c1", ec[0], 3, 3);
  conv("qenc.c2", ec[1], ec[0], 3);
  conv("qenc.c3", ec[2], ec[1], 3);
  conv("qenc.c4", c, ec[2], 1);
  conv("fenc.c1", cfg.flow_channels / 2, 2, 3);
  conv("fenc.c2", cfg.flow_channels, cfg.flow_channels / 2, 3);
  p.add("bilat.proj", conv_init(1, c + cfg.flow_channels, 1, rng));
  p.add("id_emb", randn({cfg.slots(), c}, rng, 1.0));
  for (std::size_t b = 0; b < cfg.num_blocks; ++b) {
    norm(blk(b, "ln1"), c);
    attn(blk(b, "self"));
    norm(blk(b, "ln2"), c);
    norm(blk(b, "lnk"), c);
    norm(blk(b, "lnv"), c);
    attn(blk(b, "cross"));
    attn(blk(b, "bi"));
    norm(blk(b, "ln3"), c);
    p.add(blk(b, "mlp.w1"), linear_init(c, cfg.mlp_hidden, rng));
    p.add(blk(b, "mlp.b1"), Tensor::zeros({cfg.mlp_hidden}));
    p.add(blk(b, "mlp.w2"), linear_init(cfg.mlp_hidden, c, rng));
    p.add(blk(b, "mlp.b2"), Tensor::zeros({c}));
  }
  norm("dec.ln", c);
  conv("dec.c1", dc[0], c, 1);
  conv("dec.c2", dc[1], dc[0] + ec[1], 3);
  conv("dec.c3", dc[2], dc[1] + ec[0] + 3, 3);
  conv("dec.out", cfg.slots(), dc[2], 3);
  if (cfg.calibrate) p.merge(init_calibration(cfg.calibration, rng));
  return p;
}

TokenGrid sinusoidal_pos_embed(std::size_t height, std::size_t width, std::size_t channels) {
  if (channels == 0 || channels % 4 != 0) {
    throw std::invalid_argument("sinusoidal_pos_embed: channels must be a positive multiple of 4");
  }
  const std::size_t half = channels / 2;
  std::vector<double> v(height * width * channels);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      double* row = v.data() + (y * width + x) * channels;
      for (std::size_t ch = 0; ch < half; ++ch) {
        const std::size_t i = ch / 2;
        const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(half));
        const double ay = static_cast<double>(y) * freq, ax = static_cast<double>(x) * freq;
        row[ch] = ch % 2 == 0 ? std::sin(ay) : std::cos(ay);
        row[half + ch] = ch % 2 == 0 ? std::sin(ax) : std::cos(ax);
      }
    }
  }
  return {Tensor({height * width, channels}, std::move(v)), height, width};
}

// --- tape-level ----------------------------------------------------------------

QueryEncoding encode_query(const BoundParams& p, const ModelConfig& cfg, Var frame) {
  if (frame.shape().size() != 3 || frame.dim(0) != 3) {
    throw ShapeError("encode_query: expected [3 x H x W], got " + shape_str(frame.shape()));
  }
  const std::size_t h = frame.dim(1), w = frame.dim(2);
  if (h % ModelConfig::kStride || w % ModelConfig::kStride || h == 0 || w == 0) {
    throw ShapeError("encode_query: " + std::to_string(h) + "x" + std::to_string(w) +
                     " is not divisible by the encoder stride " + std::to_string(ModelConfig::kStride));
  }
  (void)cfg;
  const k::ConvSpec same{1, 1}, down{2, 1}, point{1, 0};
  QueryEncoding out;
  out.skip1 = ag::gelu(ag::conv2d(frame, p("qenc.c1.w"), p("qenc.c1.b"), same));
  out.skip2 = ag::gelu(ag::conv2d(out.skip1, p("qenc.c2.w"), p("qenc.c2.b"), down));
  Var x = ag::gelu(ag::conv2d(out.skip2, p("qenc.c3.w"), p("qenc.c3.b"), down));
  x = ag::conv2d(x, p("qenc.c4.w"), p("qenc.c4.b"), point);
  out.height = h / ModelConfig::kStride;
  out.width = w / ModelConfig::kStride;
  out.tokens = ag::chw_to_tokens(x);
  return out;
}

Var encode_memory(const BoundParams& p, const ModelConfig& cfg, Var features, const LabelMap& mask) {
  const LabelMap small = mask.downscale(ModelConfig::kStride);
  if (small.labels.size() != features.dim(0)) {
    throw ShapeError("encode_memory: mask " + std::to_string(mask.height) + "x" + std::to_string(mask.width) +
                     " does not match " + std::to_string(features.dim(0)) + " tokens");
  }
  std::vector<int> ids(small.labels.begin(), small.labels.end());
  for (int id : ids) {
    if (static_cast<std::size_t>(id) >= cfg.slots()) {
      throw std::out_of_range("encode_memory: label " + std::to_string(id) + " exceeds max_objects " +
                              std::to_string(cfg.max_objects));
    }
  }
  return ag::add(features, ag::embedding_lookup(p("id_emb"), ids));
}

Var encode_flow(const BoundParams& p, const ModelConfig& cfg, Var flow) {
  (void)cfg;
  const k::ConvSpec down{2, 1};
  Var x = ag::gelu(ag::conv2d(flow, p("fenc.c1.w"), p("fenc.c1.b"), down));
  x = ag::conv2d(x, p("fenc.c2.w"), p("fenc.c2.b"), down);
  return ag::chw_to_tokens(x);
}

namespace {

Var norm(const BoundParams& p, const std::string& name, Var x) {
  return ag::layer_norm(x, p(name + ".g"), p(name + ".b"));
}

HeadVars heads(const BoundParams& p, const std::string& name, std::size_t n) {
  return split_heads(p(name + ".q"), p(name + ".k"), p(name + ".v"), p(name + ".o"), n);
}

}  // namespace

Var transformer_block(const BoundParams& p, const ModelConfig& cfg, std::size_t b, Var x, const BlockInputs& in) {
  const std::size_t nh = cfg.attention.num_heads;
  Var a = norm(p, blk(b, "ln1"), x);
  Var x1 = ag::add(x, multi_head_full(a, a, a, heads(p, blk(b, "self"), nh)));
  Var q = norm(p, blk(b, "ln2"), ag::add(x1, in.pos));
  Var keys = norm(p, blk(b, "lnk"), ag::add(in.mem_features, in.mem_pos));
  Var values = norm(p, blk(b, "lnv"), in.mem_encoding);
  Var cross = multi_head_full(q, keys, values, heads(p, blk(b, "cross"), nh));
  Var bi = multi_head_bi_attn(q, keys, values, *in.mask, heads(p, blk(b, "bi"), nh), cfg.bilateral_variant,
                              in.e, cfg.attention.suppression);
  Var x2 = ag::add(x1, ag::add(cross, bi));
  Var hidden = ag::gelu(ag::add_row_bias(ag::matmul(norm(p, blk(b, "ln3"), x2), p(blk(b, "mlp.w1"))),
                                         p(blk(b, "mlp.b1"))));
  Var mlp = ag::add_row_bias(ag::matmul(hidden, p(blk(b, "mlp.w2"))), p(blk(b, "mlp.b2")));
  return ag::add(x2, mlp);
}

Var decode_mask(const BoundParams& p, const ModelConfig& cfg, Var tokens, const QueryEncoding& enc, Var frame) {
  (void)cfg;
  const k::ConvSpec same{1, 1}, point{1, 0};
  Var x = ag::tokens_to_chw(norm(p, "dec.ln", tokens), enc.height, enc.width);
  x = ag::gelu(ag::conv2d(x, p("dec.c1.w"), p("dec.c1.b"), point));
  x = ag::concat0({ag::upsample_nearest(x, 2), enc.skip2});
  x = ag::gelu(ag::conv2d(x, p("dec.c2.w"), p("dec.c2.b"), same));
  x = ag::concat0({ag::upsample_nearest(x, 2), enc.skip1, frame});
  x = ag::gelu(ag::conv2d(x, p("dec.c3.w"), p("dec.c3.b"), same));
  return ag::conv2d(x, p("dec.out.w"), p("dec.out.b"), same);
}

FrameOutput forward_frame(const BoundParams& p, const ModelConfig& cfg, Var frame, const FlowField& init_flow,
                          const Tensor& prev_foreground, const std::vector<MemoryVar>& memory) {
  if (memory.empty()) throw std::invalid_argument("forward_frame: empty memory");
  Tape& tape = p.tape();
  FrameOutput out;
  out.query = encode_query(p, cfg, frame);
  const std::size_t h = out.query.height, w = out.query.width, c = cfg.channels;
  if (init_flow.height() != frame.dim(1) || init_flow.width() != frame.dim(2)) {
    throw ShapeError("forward_frame: flow extent differs from frame");
  }
  out.init_flow = tape.constant(init_flow.uv());
  out.flow = cfg.calibrate ? calibrate_flow(p, cfg.calibration, out.init_flow, tape.constant(prev_foreground))
                           : out.init_flow;
  Var flow_tokens = encode_flow(p, cfg, out.flow);
  out.e = encode_bilateral_space(out.query.tokens, flow_tokens, p("bilat.proj"));
  out.mask = build_bilateral_mask(BilateralEncoding{out.e.value(), h, w}, cfg.attention);

  const Tensor pos = sinusoidal_pos_embed(h, w, c).tokens;
  std::vector<Tensor> pos_rep(memory.size(), pos);
  std::vector<Var> feats, encs;
  for (const auto& m : memory) {
    feats.push_back(m.features);
    encs.push_back(m.encoding);
  }
  BlockInputs in;
  in.pos = tape.constant(pos);
  in.mem_pos = tape.constant(k::concat0(pos_rep));
  in.mem_features = feats.size() == 1 ? feats[0] : ag::concat0(feats);
  in.mem_encoding = encs.size() == 1 ? encs[0] : ag::concat0(encs);
  in.mask = &out.mask;
  if (cfg.bilateral_variant != AttentionVariant::kExact) in.e = out.e;
  Var x = out.query.tokens;
  for (std::size_t b = 0; b < cfg.num_blocks; ++b) x = transformer_block(p, cfg, b, x, in);
  out.logits = decode_mask(p, cfg, x, out.query, frame);
  return out;
}

// --- value-level ---------------------------------------------------------------

TokenGrid encode_query(const Tensor& frame, const Params& w, const ModelConfig& cfg) {
  Tape tape;
  BoundParams p(tape, w, false);
  QueryEncoding enc = encode_query(p, cfg, tape.constant(frame));
  return {enc.tokens.value(), enc.height, enc.width};
}

TokenGrid encode_memory(const Tensor& frame, const LabelMap& mask, const Params& w, const ModelConfig& cfg) {
  Tape tape;
  BoundParams p(tape, w, false);
  QueryEncoding enc = encode_query(p, cfg, tape.constant(frame));
  return {encode_memory(p, cfg, enc.tokens, mask).value(), enc.height, enc.width};
}

FrameMemory::FrameMemory(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw std::invalid_argument("FrameMemory: capacity must be >= 1");
}

void FrameMemory::insert(Entry entry) {
  if (entries_.size() < capacity_) {
    entries_.push_back(std::move(entry));
    return;
  }
  // Keep the first frame; drop the oldest of the rest.
  if (capacity_ == 1) {
    return;
  }
  entries_.erase(entries_.begin() + 1);
  entries_.push_back(std::move(entry));
}

std::vector<std::size_t> FrameMemory::frames() const {
  std::vector<std::size_t> out;
  for (const auto& e : entries_) out.push_back(e.frame);
  return out;
}

namespace {

BlockInputs value_inputs(Tape& tape, const FrameMemory& mem, const ModelConfig& cfg, std::size_t h, std::size_t w) {
  if (mem.entries().empty()) throw std::invalid_argument("empty frame memory");
  const Tensor pos = sinusoidal_pos_embed(h, w, cfg.channels).tokens;
  std::vector<Tensor> feats, encs, pos_rep;
  for (const auto& e : mem.entries()) {
    if (e.features.height != h || e.features.width != w) throw ShapeError("frame memory grid mismatch");
    feats.push_back(e.features.tokens);
    encs.push_back(e.encoding.tokens);
    pos_rep.push_back(pos);
  }
  BlockInputs in;
  in.pos = tape.constant(pos);
  in.mem_pos = tape.constant(k::concat0(pos_rep));
  in.mem_features = tape.constant(k::concat0(feats));
  in.mem_encoding = tape.constant(k::concat0(encs));
  return in;
}

}  // namespace

TokenGrid transformer_block_forward(const TokenGrid& q, const FrameMemory& mem, const BilateralEncoding& e,
                                    const Params& w, const ModelConfig& cfg, std::size_t block) {
  if (e.height != q.height || e.width != q.width) throw ShapeError("transformer_block_forward: E grid mismatch");
  Tape tape;
  BoundParams p(tape, w, false);
  BlockInputs in = value_inputs(tape, mem, cfg, q.height, q.width);
  const BilateralMask mask = build_bilateral_mask(e, cfg.attention);
  in.mask = &mask;
  if (cfg.bilateral_variant != AttentionVariant::kExact) in.e = tape.constant(e.values);
  Var out = transformer_block(p, cfg, block, tape.constant(q.tokens), in);
  return {out.value(), q.height, q.width};
}

Tensor decode_mask(const TokenGrid& features, const Tensor& frame, const Params& w, const ModelConfig& cfg) {
  Tape tape;
  BoundParams p(tape, w, false);
  Var f = tape.constant(frame);
  QueryEncoding enc = encode_query(p, cfg, f);
  if (enc.height != features.height || enc.width != features.width) {
    throw ShapeError("decode_mask: feature grid does not match the frame");
  }
  return decode_mask(p, cfg, tape.constant(features.tokens), enc, f).value();
}

LabelMap argmax_labels(const Tensor& logits, int max_label) {
  require_ndim(logits, 3, "argmax_labels");
  const std::size_t s = logits.dim(0), h = logits.dim(1), w = logits.dim(2), hw = h * w;
  const std::size_t limit = std::min<std::size_t>(s, static_cast<std::size_t>(max_label) + 1);
  LabelMap out(h, w);
  for (std::size_t i = 0; i < hw; ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < limit; ++c) {
      if (logits[c * hw + i] > logits[best * hw + i]) best = c;
    }
    out.labels[i] = static_cast<std::uint8_t>(best);
  }
  return out;
}

SegmentResult segment_sequence(const std::vector<Tensor>& frames, const LabelMap& first_mask,
                               const std::vector<FlowField>& flows, const Params& w, const ModelConfig& cfg,
                               const std::vector<LabelMap>* ground_truth) {
  if (frames.size() < 2) throw std::invalid_argument("segment_sequence: need at least 2 frames");
  if (flows.size() + 1 < frames.size()) throw std::invalid_argument("segment_sequence: missing flows");
  const int objects = first_mask.max_label();
  if (static_cast<std::size_t>(objects) > cfg.max_objects) {
    throw std::out_of_range("segment_sequence: first mask has label " + std::to_string(objects) +
                            " but max_objects is " + std::to_string(cfg.max_objects));
  }
  if (first_mask.height != frames[0].dim(1) || first_mask.width != frames[0].dim(2)) {
    throw ShapeError("segment_sequence: first mask extent differs from frames");
  }
  if (ground_truth && ground_truth->size() != frames.size()) {
    throw std::invalid_argument("segment_sequence: ground truth length differs from frames");
  }
  const int tolerance = default_boundary_tolerance(first_mask.height, first_mask.width);
  SegmentResult result;
  result.masks.push_back(first_mask);
  FrameMemory memory(cfg.memory_capacity);
  memory.insert({encode_query(frames[0], w, cfg), encode_memory(frames[0], first_mask, w, cfg), 0});

  for (std::size_t t = 1; t < frames.size(); ++t) {
    Tape tape;
    BoundParams p(tape, w, false);
    std::vector<MemoryVar> mem;
    for (const auto& e : memory.entries()) {
      mem.push_back({tape.constant(e.features.tokens), tape.constant(e.encoding.tokens)});
    }
    Var frame = tape.constant(frames[t]);
    FrameOutput out = forward_frame(p, cfg, frame, flows[t - 1], result.masks[t - 1].foreground(), mem);
    LabelMap pred = argmax_labels(out.logits.value(), objects);

    FrameDiagnostics d;
    d.frame = t;
    d.memory_frames = memory.frames();
    d.mean_admitted = static_cast<double>(out.mask.total()) / static_cast<double>(out.mask.area());
    d.max_admitted = out.mask.max_count();
    d.calibration_delta = flow_mse(flows[t - 1], FlowField(out.flow.value()));
    if (ground_truth) {
      for (int id = 1; id <= objects; ++id) {
        d.j.push_back(region_j(pred, (*ground_truth)[t], id));
        d.f.push_back(boundary_f(pred, (*ground_truth)[t], id, tolerance));
      }
    }
    result.diagnostics.push_back(std::move(d));

    const TokenGrid features{out.query.tokens.value(), out.query.height, out.query.width};
    Var enc = encode_memory(p, cfg, out.query.tokens, pred);
    memory.insert({features, {enc.value(), out.query.height, out.query.width}, t});
    result.masks.push_back(std::move(pred));
  }
  return result;
}

}  // namespace batman

#include "batman/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "batman/io.hpp"

namespace batman {

std::string category_name(SceneCategory c) {
  switch (c) {
    case SceneCategory::kTwin: return "twin";
    case SceneCategory::kSalientMotion: return "salient_motion";
    case SceneCategory::kDistractor: return "distractor";
    case SceneCategory::kNoisyFlow: return "noisy_flow";
    case SceneCategory::kSingle: return "single";
  }
  return "unknown";
}

SceneCategory parse_category(const std::string& name) {
  for (auto c : {SceneCategory::kTwin, SceneCategory::kSalientMotion, SceneCategory::kDistractor,
                 SceneCategory::kNoisyFlow, SceneCategory::kSingle}) {
    if (category_name(c) == name) return c;
  }
  throw std::invalid_argument("unknown scene category '" + name + "'");
}

namespace {

int floor_div(int a, int b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }

std::uint64_t mix(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

int lattice(int texture, int octave, int i, int j) {
  std::uint64_t h = mix(static_cast<std::uint64_t>(static_cast<std::uint32_t>(texture)));
  h = mix(h ^ static_cast<std::uint64_t>(octave));
  h = mix(h ^ static_cast<std::uint64_t>(static_cast<std::uint32_t>(i)));
  h = mix(h ^ static_cast<std::uint64_t>(static_cast<std::uint32_t>(j)));
  return static_cast<int>(h & 255u);
}

// Bilinear value noise on a lattice of `cell` pixels, integer arithmetic only.
int value_noise(int texture, int octave, int cell, int y, int x) {
  const int i = floor_div(y, cell), j = floor_div(x, cell);
  const int fy = y - i * cell, fx = x - j * cell;
  const int a = lattice(texture, octave, i, j), b = lattice(texture, octave, i, j + 1);
  const int c = lattice(texture, octave, i + 1, j), d = lattice(texture, octave, i + 1, j + 1);
  const int top = a * (cell - fx) + b * fx;
  const int bottom = c * (cell - fx) + d * fx;
  return (top * (cell - fy) + bottom * fy) / (cell * cell);
}

std::pair<int, int> extents(const SceneObject& o) {
  if (o.shape == ObjectShape::kRectangle) return {o.radius, o.half_width};
  return {o.radius, o.radius};
}

bool inside(const SceneObject& o, int dy, int dx) {
  switch (o.shape) {
    case ObjectShape::kDisc: return dy * dy + dx * dx <= o.radius * o.radius;
    case ObjectShape::kRectangle: return std::abs(dy) <= o.radius && std::abs(dx) <= o.half_width;
    case ObjectShape::kRing: {
      const int d2 = dy * dy + dx * dx;
      return d2 <= o.radius * o.radius && d2 > o.inner_radius * o.inner_radius;
    }
  }
  return false;
}

const char* shape_name(ObjectShape s) {
  switch (s) {
    case ObjectShape::kDisc: return "disc";
    case ObjectShape::kRectangle: return "rectangle";
    case ObjectShape::kRing: return "ring";
  }
  return "?";
}

}  // namespace

void texture_rgb(int texture, int y, int x, std::uint8_t rgb[3]) {
  const int n = (2 * value_noise(texture, 0, 8, y, x) + value_noise(texture, 1, 4, y, x)) / 3;
  const std::uint64_t h = mix(static_cast<std::uint64_t>(static_cast<std::uint32_t>(texture)) ^ 0xc0105eedULL);
  for (int c = 0; c < 3; ++c) {
    const int base = 30 + static_cast<int>((h >> (16 * c)) % 196);
    rgb[c] = static_cast<std::uint8_t>(std::clamp(base + (n - 128) * 3 / 4, 0, 255));
  }
}

std::pair<int, int> SyntheticScene::center(const SceneObject& o, std::size_t t) const {
  const auto [ey, ex] = extents(o);
  const int ti = static_cast<int>(t);
  const int y = std::clamp(o.y + o.vy * ti, ey, static_cast<int>(height) - 1 - ey);
  const int x = std::clamp(o.x + o.vx * ti, ex, static_cast<int>(width) - 1 - ex);
  return {y, x};
}

void SyntheticScene::validate() const {
  if (height < 8 || width < 8) throw std::invalid_argument("SyntheticScene: canvas smaller than 8x8");
  if (frames == 0) throw std::invalid_argument("SyntheticScene: zero frames");
  std::set<int> labels;
  for (const auto& o : objects) {
    if (o.label < 0 || o.label > 255) throw std::invalid_argument("SyntheticScene: label out of range");
    if (o.label != 0 && !labels.insert(o.label).second) {
      throw std::invalid_argument("SyntheticScene: two objects share label " + std::to_string(o.label));
    }
    if (o.radius <= 0 || o.half_width <= 0) throw std::invalid_argument("SyntheticScene: non-positive size");
    if (o.shape == ObjectShape::kRing && (o.inner_radius < 0 || o.inner_radius >= o.radius)) {
      throw std::invalid_argument("SyntheticScene: ring inner radius must be in [0, radius)");
    }
    const auto [ey, ex] = extents(o);
    if (2 * ey + 1 > static_cast<int>(height) || 2 * ex + 1 > static_cast<int>(width)) {
      throw std::invalid_argument("SyntheticScene: object larger than canvas");
    }
  }
}

int SyntheticSequence::num_objects() const {
  return masks.empty() ? 0 : masks.front().max_label();
}

SyntheticSequence generate_sequence(const SyntheticScene& scene) {
  scene.validate();
  const int h = static_cast<int>(scene.height), w = static_cast<int>(scene.width);
  const std::size_t hw = scene.height * scene.width;
  SyntheticSequence seq;
  seq.scene = scene;
  std::vector<std::vector<int>> owners;
  for (std::size_t t = 0; t < scene.frames; ++t) {
    std::vector<std::uint8_t> rgb(3 * hw);
    std::vector<int> owner(hw, -1);
    std::uint8_t px[3];
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        texture_rgb(scene.background_texture, y, x, px);
        for (int c = 0; c < 3; ++c) rgb[c * hw + y * w + x] = px[c];
      }
    }
    for (std::size_t k = 0; k < scene.objects.size(); ++k) {
      const auto& o = scene.objects[k];
      const auto [cy, cx] = scene.center(o, t);
      const auto [ey, ex] = extents(o);
      for (int dy = -ey; dy <= ey; ++dy) {
        for (int dx = -ex; dx <= ex; ++dx) {
          if (!inside(o, dy, dx)) continue;
          const int y = cy + dy, x = cx + dx;
          texture_rgb(o.texture, dy, dx, px);
          for (int c = 0; c < 3; ++c) rgb[c * hw + y * w + x] = px[c];
          owner[y * w + x] = static_cast<int>(k);
        }
      }
    }
    std::vector<double> values(3 * hw);
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = rgb[i] / 255.0;
    seq.frames.emplace_back(Shape{3, scene.height, scene.width}, std::move(values));
    LabelMap mask(scene.height, scene.width);
    for (std::size_t i = 0; i < hw; ++i) {
      if (owner[i] >= 0) mask.labels[i] = static_cast<std::uint8_t>(scene.objects[owner[i]].label);
    }
    seq.masks.push_back(std::move(mask));
    owners.push_back(std::move(owner));
  }
  for (std::size_t t = 0; t + 1 < scene.frames; ++t) {
    std::vector<double> uv(2 * hw, 0.0);
    for (std::size_t i = 0; i < hw; ++i) {
      const int k = owners[t][i];
      if (k < 0) continue;
      const auto [y0, x0] = scene.center(scene.objects[k], t);
      const auto [y1, x1] = scene.center(scene.objects[k], t + 1);
      uv[i] = x1 - x0;
      uv[hw + i] = y1 - y0;
    }
    seq.flows.emplace_back(Tensor({2, scene.height, scene.width}, std::move(uv)));
  }
  return seq;
}

namespace {

ObjectShape random_shape(Rng& rng) { return static_cast<ObjectShape>(rng.uniform_int(0, 2)); }

SceneObject random_object(Rng& rng, int label, int texture) {
  SceneObject o;
  o.shape = random_shape(rng);
  o.label = label;
  o.texture = texture;
  o.radius = static_cast<int>(rng.uniform_int(7, 11));
  o.half_width = o.shape == ObjectShape::kRectangle ? static_cast<int>(rng.uniform_int(6, 12)) : o.radius;
  o.inner_radius = o.radius / 2;
  return o;
}

void random_velocity(Rng& rng, SceneObject& o, int min_speed) {
  do {
    o.vy = static_cast<int>(rng.uniform_int(-3, 3));
    o.vx = static_cast<int>(rng.uniform_int(-3, 3));
  } while (std::max(std::abs(o.vy), std::abs(o.vx)) < min_speed);
}

// Chooses a start so the whole trajectory stays inside the canvas without
// clamping; shrinks the velocity when no such start exists.
void place(Rng& rng, const SceneOptions& opt, SceneObject& o) {
  const auto [ey, ex] = extents(o);
  const int span = static_cast<int>(opt.frames) - 1;
  auto range = [&](int extent, int size, int& v) {
    for (;;) {
      const int lo = std::max(extent, extent - v * span);
      const int hi = std::min(size - 1 - extent, size - 1 - extent - v * span);
      if (lo <= hi) return static_cast<int>(rng.uniform_int(lo, hi));
      v += v > 0 ? -1 : 1;
    }
  };
  o.y = range(ey, static_cast<int>(opt.height), o.vy);
  o.x = range(ex, static_cast<int>(opt.width), o.vx);
}

bool fits(const SceneOptions& opt, const SceneObject& o) {
  const auto [ey, ex] = extents(o);
  const int span = static_cast<int>(opt.frames) - 1;
  for (int t : {0, span}) {
    const int y = o.y + o.vy * t, x = o.x + o.vx * t;
    if (y < ey || y > static_cast<int>(opt.height) - 1 - ey) return false;
    if (x < ex || x > static_cast<int>(opt.width) - 1 - ex) return false;
  }
  return true;
}

int random_texture(Rng& rng, int avoid) {
  int t;
  do {
    t = static_cast<int>(rng.uniform_int(1, 999));
  } while (t == avoid);
  return t;
}

}  // namespace

SyntheticScene random_scene(std::uint64_t seed, SceneCategory category, const SceneOptions& opt) {
  Rng rng(derive_seed(seed, 0x5ce9e, static_cast<std::uint64_t>(category)));
  SyntheticScene s;
  s.seed = seed;
  s.height = opt.height;
  s.width = opt.width;
  s.frames = opt.frames;
  s.category = category;
  s.background_texture = static_cast<int>(rng.uniform_int(1000, 1999));
  const int bg = s.background_texture;
  switch (category) {
    case SceneCategory::kSingle: {
      SceneObject o = random_object(rng, 1, random_texture(rng, bg));
      random_velocity(rng, o, 0);
      place(rng, opt, o);
      s.objects.push_back(o);
      break;
    }
    case SceneCategory::kTwin: {
      const int tex = random_texture(rng, bg);
      for (int attempt = 0;; ++attempt) {
        SceneObject a = random_object(rng, 1, tex);
        a.radius = std::min(a.radius, 9);
        a.half_width = std::min(a.half_width, 9);
        a.inner_radius = a.radius / 2;
        a.twin = true;
        SceneObject b = a;
        b.label = 2;
        random_velocity(rng, a, 1);
        do {
          random_velocity(rng, b, 1);
        } while (b.vy == a.vy && b.vx == a.vx);
        place(rng, opt, a);
        const auto [ey, ex] = extents(a);
        const int gap = static_cast<int>(rng.uniform_int(2, 5));
        if (rng.uniform() < 0.5) {
          b.y = a.y + static_cast<int>(rng.uniform_int(-3, 3));
          b.x = a.x + (rng.uniform() < 0.5 ? -1 : 1) * (2 * ex + 1 + gap);
        } else {
          b.x = a.x + static_cast<int>(rng.uniform_int(-3, 3));
          b.y = a.y + (rng.uniform() < 0.5 ? -1 : 1) * (2 * ey + 1 + gap);
        }
        if (fits(opt, b) || attempt > 200) {
          if (!fits(opt, b)) place(rng, opt, b);
          s.objects = {a, b};
          break;
        }
      }
      break;
    }
    case SceneCategory::kSalientMotion: {
      SceneObject o = random_object(rng, 1, bg);
      random_velocity(rng, o, 2);
      place(rng, opt, o);
      s.objects.push_back(o);
      break;
    }
    case SceneCategory::kDistractor: {
      SceneObject target = random_object(rng, 1, random_texture(rng, bg));
      random_velocity(rng, target, 1);
      const int n = static_cast<int>(rng.uniform_int(1, 2));
      for (int i = 0; i < n; ++i) {
        SceneObject d = random_object(rng, 0, random_texture(rng, bg));
        d.vy = target.vy;
        d.vx = target.vx;
        place(rng, opt, d);
        s.objects.push_back(d);
      }
      place(rng, opt, target);
      s.objects.push_back(target);
      break;
    }
    case SceneCategory::kNoisyFlow: {
      const int n = static_cast<int>(rng.uniform_int(1, 2));
      for (int i = 0; i < n; ++i) {
        SceneObject o = random_object(rng, i + 1, random_texture(rng, bg));
        random_velocity(rng, o, 1);
        place(rng, opt, o);
        s.objects.push_back(o);
      }
      s.flow_noise = opt.noise_sigma;
      break;
    }
  }
  s.validate();
  return s;
}

std::vector<SyntheticScene> make_ablation_suite(std::uint64_t seed, std::size_t per_category,
                                                const SceneOptions& opt) {
  std::vector<SyntheticScene> suite;
  const SceneCategory cats[] = {SceneCategory::kTwin, SceneCategory::kSalientMotion,
                                SceneCategory::kDistractor, SceneCategory::kNoisyFlow};
  for (std::size_t c = 0; c < 4; ++c) {
    for (std::size_t i = 0; i < per_category; ++i) {
      suite.push_back(random_scene(derive_seed(seed, 0xab1a7e, c * 1000 + i), cats[c], opt));
    }
  }
  return suite;
}

SyntheticScene training_scene(std::uint64_t seed, std::size_t index, const SceneOptions& opt) {
  static constexpr SceneCategory kCycle[] = {SceneCategory::kSingle, SceneCategory::kTwin,
                                             SceneCategory::kSalientMotion, SceneCategory::kDistractor,
                                             SceneCategory::kNoisyFlow};
  return random_scene(derive_seed(seed, 0x7a1, index), kCycle[index % 5], opt);
}

std::vector<FlowField> noisy_flows(const SyntheticSequence& seq, double sigma, Rng& rng) {
  std::vector<FlowField> out;
  out.reserve(seq.flows.size());
  for (const auto& f : seq.flows) out.push_back(sigma > 0.0 ? add_flow_noise(f, sigma, rng) : f);
  return out;
}

std::string scene_manifest_line(const std::string& name, const SyntheticScene& s) {
  std::ostringstream line;
  line << name << " seed=" << s.seed << " category=" << category_name(s.category) << " height=" << s.height
       << " width=" << s.width << " frames=" << s.frames << " background=" << s.background_texture
       << " flow_noise=" << s.flow_noise << " objects=";
  for (std::size_t i = 0; i < s.objects.size(); ++i) {
    const auto& o = s.objects[i];
    if (i) line << ';';
    line << shape_name(o.shape) << ':' << o.label << ':' << o.texture << ':' << o.y << ':' << o.x << ':'
         << o.vy << ':' << o.vx << ':' << o.radius << ':' << o.half_width << ':' << o.inner_radius
         << (o.twin ? ":twin" : "");
  }
  return line.str();
}

namespace {
std::string indexed(const char* stem, std::size_t t, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%02zu.%s", stem, t, ext);
  return buf;
}

io::RgbImage to_rgb(const Tensor& frame) {
  io::RgbImage img;
  img.height = frame.dim(1);
  img.width = frame.dim(2);
  img.pixels.resize(3 * img.height * img.width);
  const std::size_t hw = img.height * img.width;
  for (std::size_t i = 0; i < hw; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      img.pixels[3 * i + c] = static_cast<std::uint8_t>(std::lround(std::clamp(frame[c * hw + i], 0.0, 1.0) * 255.0));
    }
  }
  return img;
}
}  // namespace

void write_dataset(const std::filesystem::path& dir, const std::vector<SyntheticScene>& scenes) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / "manifest.txt");
  if (!manifest) throw std::runtime_error("cannot write " + (dir / "manifest.txt").string());
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "scene_%04zu", i);
    const SyntheticSequence seq = generate_sequence(scenes[i]);
    const auto sub = dir / name;
    std::filesystem::create_directories(sub);
    for (std::size_t t = 0; t < seq.length(); ++t) {
      io::write_ppm(sub / indexed("frame", t, "ppm"), to_rgb(seq.frames[t]));
      write_label_pgm(sub / indexed("mask", t, "pgm"), seq.masks[t]);
      if (t < seq.flows.size()) save_bflo(sub / indexed("flow", t, "bflo"), seq.flows[t]);
    }
    manifest << scene_manifest_line(name, scenes[i]) << '\n';
  }
}

SyntheticSequence read_sequence_dir(const std::filesystem::path& dir) {
  SyntheticSequence seq;
  for (std::size_t t = 0;; ++t) {
    const auto frame_path = dir / indexed("frame", t, "ppm");
    if (!std::filesystem::exists(frame_path)) break;
    const io::RgbImage img = io::read_ppm(frame_path);
    const std::size_t hw = img.height * img.width;
    std::vector<double> values(3 * hw);
    for (std::size_t i = 0; i < hw; ++i) {
      for (std::size_t c = 0; c < 3; ++c) values[c * hw + i] = img.pixels[3 * i + c] / 255.0;
    }
    seq.frames.emplace_back(Shape{3, img.height, img.width}, std::move(values));
    seq.masks.push_back(read_label_pgm(dir / indexed("mask", t, "pgm")));
    const auto flow_path = dir / indexed("flow", t, "bflo");
    if (std::filesystem::exists(flow_path)) seq.flows.push_back(load_bflo(flow_path));
  }
  if (seq.frames.empty()) throw std::runtime_error("no frames in " + dir.string());
  seq.scene.height = seq.frames[0].dim(1);
  seq.scene.width = seq.frames[0].dim(2);
  seq.scene.frames = seq.frames.size();
  return seq;
}

}  // namespace batman

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "batman/flow.hpp"
#include "batman/label_map.hpp"
#include "batman/rng.hpp"
#include "batman/tensor.hpp"

namespace batman {

enum class ObjectShape { kDisc, kRectangle, kRing };

struct SceneObject {
  ObjectShape shape = ObjectShape::kDisc;
  /// Object id written into the mask; 0 makes the object an unlabeled distractor.
  int label = 1;
  int texture = 1;
  int y = 0, x = 0;        // centre at frame 0
  int vy = 0, vx = 0;      // px per frame
  int radius = 8;          // disc / ring outer radius, rectangle half height
  int half_width = 8;      // rectangle only
  int inner_radius = 4;    // ring only
  bool twin = false;
};

enum class SceneCategory { kTwin, kSalientMotion, kDistractor, kNoisyFlow, kSingle };

std::string category_name(SceneCategory c);
SceneCategory parse_category(const std::string& name);

struct SyntheticScene {
  std::uint64_t seed = 0;
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t frames = 8;
  int background_texture = 0;
  /// Painted in order; later objects occlude earlier ones.
  std::vector<SceneObject> objects;
  SceneCategory category = SceneCategory::kSingle;
  /// Flow noise the consumer is expected to add (pixels).
  double flow_noise = 0.0;

  /// Object centre at frame t, clamped so the shape stays inside the canvas.
  std::pair<int, int> center(const SceneObject& o, std::size_t t) const;
  void validate() const;
};

struct SyntheticSequence {
  SyntheticScene scene;
  std::vector<Tensor> frames;     // [3 x H x W] in [0, 1]
  std::vector<LabelMap> masks;
  /// flows[t] maps frame t to frame t + 1, sampled at frame t pixels.
  std::vector<FlowField> flows;

  std::size_t length() const { return frames.size(); }
  /// Highest object id in the first mask.
  int num_objects() const;
};

/// Integer-only render: bit-identical on every platform.
SyntheticSequence generate_sequence(const SyntheticScene& scene);

/// 8-bit RGB for a texture id at texture coordinates (y, x).
void texture_rgb(int texture, int y, int x, std::uint8_t rgb[3]);

struct SceneOptions {
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t frames = 8;
  double noise_sigma = 1.5;
};

/// Random scene of a given category, fully determined by `seed`.
SyntheticScene random_scene(std::uint64_t seed, SceneCategory category, const SceneOptions& opt = {});

/// Fixed battery: `per_category` scenes of each of twin, salient-motion,
/// distractor and noisy-flow, in that order.
std::vector<SyntheticScene> make_ablation_suite(std::uint64_t seed, std::size_t per_category = 4,
                                                const SceneOptions& opt = {});

/// Training scene `index` of the stream identified by `seed`; categories cycle
/// through single, twin, salient-motion, distractor, noisy-flow.
SyntheticScene training_scene(std::uint64_t seed, std::size_t index, const SceneOptions& opt = {});

/// Ground-truth flows plus N(0, sigma^2) noise on every component.
std::vector<FlowField> noisy_flows(const SyntheticSequence& seq, double sigma, Rng& rng);

/// `<dir>/<name>/frame_TT.ppm, mask_TT.pgm, flow_TT.bflo` per scene plus
/// `<dir>/manifest.txt` with one line of scene parameters per scene.
void write_dataset(const std::filesystem::path& dir, const std::vector<SyntheticScene>& scenes);
std::string scene_manifest_line(const std::string& name, const SyntheticScene& scene);
/// Reads one scene directory written by write_dataset.
SyntheticSequence read_sequence_dir(const std::filesystem::path& dir);

}  // namespace batman

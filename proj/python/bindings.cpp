#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>

#include "batman/attention.hpp"
#include "batman/calibration.hpp"
#include "batman/metrics.hpp"
#include "batman/synthetic.hpp"
#include "batman/trainer.hpp"

namespace py = pybind11;
using namespace batman;

namespace {

using F64Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using U8Array = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const F64Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

F64Array to_numpy(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  F64Array out(shape);
  std::memcpy(out.mutable_data(), t.raw(), t.numel() * sizeof(double));
  return out;
}

LabelMap to_labels(const U8Array& a) {
  if (a.ndim() != 2) throw std::invalid_argument("label map must be 2-D");
  LabelMap m(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
  std::memcpy(m.labels.data(), a.data(), m.labels.size());
  return m;
}

U8Array from_labels(const LabelMap& m) {
  U8Array out({static_cast<py::ssize_t>(m.height), static_cast<py::ssize_t>(m.width)});
  std::memcpy(out.mutable_data(), m.labels.data(), m.labels.size());
  return out;
}

template <class T, class F>
py::array stack(const std::vector<T>& items, F convert) {
  py::list parts;
  for (const auto& item : items) parts.append(convert(item));
  return py::module_::import("numpy").attr("stack")(parts);
}

BilateralEncoding to_encoding(const F64Array& e) {
  if (e.ndim() != 2) throw std::invalid_argument("encoding must be an (H, W) array");
  const auto h = static_cast<std::size_t>(e.shape(0)), w = static_cast<std::size_t>(e.shape(1));
  return {Tensor({h * w, 1}, std::vector<double>(e.data(), e.data() + e.size())), h, w};
}

AttentionConfig mask_config(std::size_t window_radius, std::size_t rank_window) {
  AttentionConfig cfg = AttentionConfig::toy();
  cfg.window_radius = window_radius;
  cfg.rank_window = rank_window;
  return cfg;
}

}  // namespace

PYBIND11_MODULE(_batman, m) {
  m.doc() = "Bilateral attention video object segmentation";

  m.def("category_names", [] {
    std::vector<std::string> out;
    for (auto c : {SceneCategory::kSingle, SceneCategory::kTwin, SceneCategory::kSalientMotion,
                   SceneCategory::kDistractor, SceneCategory::kNoisyFlow})
      out.push_back(category_name(c));
    return out;
  });

  m.def(
      "generate_sequence",
      [](const std::string& category, std::uint64_t seed, std::size_t height, std::size_t width, std::size_t frames) {
        SceneOptions opt;
        opt.height = height;
        opt.width = width;
        opt.frames = frames;
        const SyntheticScene scene = random_scene(seed, parse_category(category), opt);
        const SyntheticSequence seq = generate_sequence(scene);
        py::dict out;
        out["frames"] = stack(seq.frames, to_numpy);
        out["masks"] = stack(seq.masks, from_labels);
        out["flows"] = seq.flows.empty() ? py::array(F64Array({0, 2, (int)height, (int)width}))
                                         : stack(seq.flows, [](const FlowField& f) { return to_numpy(f.uv()); });
        out["flow_noise"] = scene.flow_noise;
        out["manifest"] = scene_manifest_line("scene", scene);
        return out;
      },
      py::arg("category"), py::arg("seed"), py::arg("height") = 64, py::arg("width") = 64, py::arg("frames") = 8);

  m.def(
      "bilateral_mask",
      [](const F64Array& e, std::size_t window_radius, std::size_t rank_window) {
        return to_numpy(build_bilateral_mask(to_encoding(e), mask_config(window_radius, rank_window)).to_dense());
      },
      py::arg("encoding"), py::arg("window_radius"), py::arg("rank_window"),
      "Dense (HW, HW) 0/1 admission matrix for an (H, W) encoding.");

  m.def(
      "bilateral_attention",
      [](const F64Array& q, const F64Array& k, const F64Array& v, const F64Array& e, std::size_t window_radius,
         std::size_t rank_window, const std::string& variant) {
        const BilateralMask mask = build_bilateral_mask(to_encoding(e), mask_config(window_radius, rank_window));
        const Tensor tq = to_tensor(q), tk = to_tensor(k), tv = to_tensor(v);
        if (variant == "exact") return to_numpy(bi_attn_exact(tq, tk, tv, mask));
        if (variant == "windowed") return to_numpy(bi_attn_windowed(tq, tk, tv, mask));
        throw std::invalid_argument("variant must be 'exact' or 'windowed'");
      },
      py::arg("q"), py::arg("k"), py::arg("v"), py::arg("encoding"), py::arg("window_radius"), py::arg("rank_window"),
      py::arg("variant") = "windowed");

  m.def(
      "region_j", [](const U8Array& pred, const U8Array& gt, int id) { return region_j(to_labels(pred), to_labels(gt), id); },
      py::arg("pred"), py::arg("gt"), py::arg("object_id") = 1);
  m.def(
      "boundary_f",
      [](const U8Array& pred, const U8Array& gt, int id, int tolerance) {
        const LabelMap g = to_labels(gt);
        if (tolerance < 0) tolerance = default_boundary_tolerance(g.height, g.width);
        return boundary_f(to_labels(pred), g, id, tolerance);
      },
      py::arg("pred"), py::arg("gt"), py::arg("object_id") = 1, py::arg("tolerance") = -1);

  m.def(
      "flow_to_color",
      [](const F64Array& uv, double max_radius) {
        const io::RgbImage img = flow_to_color(FlowField(to_tensor(uv)), max_radius);
        py::array_t<std::uint8_t> out({(py::ssize_t)img.height, (py::ssize_t)img.width, (py::ssize_t)3});
        std::memcpy(out.mutable_data(), img.pixels.data(), img.pixels.size());
        return out;
      },
      py::arg("uv"), py::arg("max_radius") = -1.0);

  m.def(
      "segment",
      [](const std::filesystem::path& checkpoint, const F64Array& frames, const U8Array& first_mask,
         const F64Array& flows) {
        ModelConfig cfg;
        const Params w = load_model(checkpoint, &cfg);
        if (frames.ndim() != 4 || flows.ndim() != 4) throw std::invalid_argument("frames and flows must be 4-D");
        const Tensor all = to_tensor(frames), all_flows = to_tensor(flows);
        std::vector<Tensor> fs;
        std::vector<FlowField> fl;
        const std::size_t t = all.dim(0), per = all.numel() / std::max<std::size_t>(t, 1);
        for (std::size_t i = 0; i < t; ++i) {
          fs.emplace_back(Shape{all.dim(1), all.dim(2), all.dim(3)},
                          std::vector<double>(all.raw() + i * per, all.raw() + (i + 1) * per));
        }
        const std::size_t fper = 2 * all_flows.dim(2) * all_flows.dim(3);
        for (std::size_t i = 0; i < all_flows.dim(0); ++i) {
          fl.emplace_back(Tensor({2, all_flows.dim(2), all_flows.dim(3)},
                                 std::vector<double>(all_flows.raw() + i * fper, all_flows.raw() + (i + 1) * fper)));
        }
        const SegmentResult r = segment_sequence(fs, to_labels(first_mask), fl, w, cfg);
        return stack(r.masks, from_labels);
      },
      py::arg("checkpoint"), py::arg("frames"), py::arg("first_mask"), py::arg("flows"),
      "Segments (T, 3, H, W) frames from the first mask with a trained checkpoint.");
}

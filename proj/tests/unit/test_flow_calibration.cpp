#include <doctest.h>

#include <sstream>

#include "batman/calibration.hpp"
#include "batman/flow.hpp"
#include "batman/rng.hpp"

using namespace batman;

namespace {

FlowField constant_flow(std::size_t h, std::size_t w, double u, double v) {
  std::vector<double> uv(2 * h * w, u);
  std::fill(uv.begin() + static_cast<long>(h * w), uv.end(), v);
  return FlowField(Tensor({2, h, w}, uv));
}

}  // namespace

TEST_SUITE("flow-calibration") {

TEST_CASE("bflo round trip") {
  Rng rng(1);
  const FlowField f(randn({2, 5, 7}, rng));
  std::stringstream ss;
  write_bflo(ss, f);
  CHECK(ss.str().substr(0, 4) == "BFLO");
  CHECK(ss.str().size() == 4 + 8 + 5 * 7 * 2 * 4);
  ss.seekg(0);
  const FlowField g = read_bflo(ss);
  CHECK(g.height() == 5);
  CHECK(g.width() == 7);
  CHECK(max_abs_diff(g.uv(), f.uv()) < 1e-6);
  CHECK(g.u(2, 3) == doctest::Approx(f.u(2, 3)).epsilon(1e-6));
}

TEST_CASE("flow noise has the requested spread") {
  Rng rng(2);
  const FlowField noisy = add_flow_noise(FlowField::zeros(100, 100), 1.5, rng);
  double s = 0.0, s2 = 0.0;
  for (double v : noisy.uv().data()) {
    s += v;
    s2 += v * v;
  }
  const double n = static_cast<double>(noisy.uv().numel());
  const double sd = std::sqrt(s2 / n - (s / n) * (s / n));
  CHECK(std::abs(sd - 1.5) < 0.05 * 1.5);
}

TEST_CASE("colour wheel rendering") {
  const io::RgbImage still = flow_to_color(FlowField::zeros(3, 4));
  CHECK(still.width == 4);
  CHECK(still.height == 3);
  for (auto p : still.pixels) CHECK(p == 255);
  // Opposite directions land on different hues.
  const io::RgbImage a = flow_to_color(constant_flow(1, 1, 1.0, 0.0), 1.0);
  const io::RgbImage b = flow_to_color(constant_flow(1, 1, -1.0, 0.0), 1.0);
  CHECK(a.pixels != b.pixels);
}

TEST_CASE("calibration network starts as the identity") {
  Rng rng(3);
  const CalibConfig cfg = CalibConfig::toy();
  const Params w = init_calibration(cfg, rng);
  const FlowField init(randn({2, 16, 16}, rng));
  const FlowField out = calibrate_flow(init, Tensor::zeros({16, 16}), w, cfg);
  CHECK(identical(out.uv(), init.uv()));
  CHECK(cfg.layer_count() == 6);
  CHECK(CalibConfig::eleven_layer().layer_count() == 11);
}

TEST_CASE("calibration rejects bad extents") {
  Rng rng(4);
  const CalibConfig cfg = CalibConfig::toy();
  const Params w = init_calibration(cfg, rng);
  CHECK_THROWS(calibrate_flow(FlowField::zeros(12, 12), Tensor::zeros({12, 12}), w, cfg));
  CHECK_THROWS(calibrate_flow(FlowField::zeros(16, 16), Tensor::zeros({8, 8}), w, cfg));
}

TEST_CASE("flow mse") {
  CHECK(flow_mse(constant_flow(2, 3, 1.0, 0.0), constant_flow(2, 3, 0.0, 2.0)) == doctest::Approx(2.5));
  CHECK(flow_mse(constant_flow(2, 3, 1.0, 0.0), constant_flow(2, 3, 1.0, 0.0)) == 0.0);
}

TEST_CASE("masked total variation") {
  const Tensor mask = Tensor::from_list({2, 3}, {1, 1, 0, 1, 1, 0});
  const MaskedTotalVariation flat = masked_total_variation(constant_flow(2, 3, 0.3, -1.0), mask);
  CHECK(flat.inside == 0.0);
  CHECK(flat.outside == 0.0);
  // u = column index, v = 0: horizontal inside pairs differ by 1, vertical by 0.
  const FlowField ramp(Tensor({2, 2, 3}, {0, 1, 2, 0, 1, 2, 0, 0, 0, 0, 0, 0}));
  const MaskedTotalVariation tv = masked_total_variation(ramp, mask);
  CHECK(tv.inside_pairs == 4);
  CHECK(tv.inside == doctest::Approx(1.0));
  CHECK(tv.outside_pairs == 1);
  CHECK(tv.outside == doctest::Approx(0.0));
}

}  // TEST_SUITE

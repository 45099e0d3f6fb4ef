#include "batman/config.hpp"

#include <fstream>
#include <stdexcept>

namespace batman {

namespace {

template <class T>
void get(const nlohmann::json& j, const char* key, T& field) {
  if (j.contains(key)) field = j[key].get<T>();
}

nlohmann::json section(const nlohmann::json& j, const char* key) {
  if (!j.contains(key)) return nlohmann::json::object();
  if (!j[key].is_object()) throw std::invalid_argument(std::string("config section '") + key + "' must be an object");
  return j[key];
}

}  // namespace

nlohmann::json to_json(const RunConfig& c) {
  return {{"model", to_json(c.model)},
          {"train", to_json(c.train)},
          {"calibration",
           {{"steps", c.calibration.steps},
            {"batch_size", c.calibration.batch_size},
            {"lr", c.calibration.lr},
            {"weight_decay", c.calibration.weight_decay},
            {"noise_sigma", c.calibration.noise_sigma},
            {"w_tether", c.calibration.w_tether},
            {"seed", c.calibration.seed}}},
          {"bench",
           {{"sides", c.bench.sides},
            {"reps", c.bench.reps},
            {"seed", c.bench.seed},
            {"window_radius", c.bench.attention.window_radius},
            {"rank_window", c.bench.attention.rank_window},
            {"head_dim", c.bench.attention.head_dim}}},
          {"eval",
           {{"suite_seed", c.eval.suite_seed},
            {"per_category", c.eval.per_category},
            {"noise_seed", c.eval.noise_seed}}},
          {"threads", c.threads}};
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("config must be a JSON object");
  static const char* known[] = {"model", "train", "calibration", "bench", "eval", "threads"};
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw std::invalid_argument("unknown config key '" + key + "'");
  }
  RunConfig c;
  c.model = model_config_from_json(section(j, "model"));
  c.train = train_config_from_json(section(j, "train"));

  const nlohmann::json cal = section(j, "calibration");
  get(cal, "steps", c.calibration.steps);
  get(cal, "batch_size", c.calibration.batch_size);
  get(cal, "lr", c.calibration.lr);
  get(cal, "weight_decay", c.calibration.weight_decay);
  get(cal, "noise_sigma", c.calibration.noise_sigma);
  get(cal, "w_tether", c.calibration.w_tether);
  get(cal, "seed", c.calibration.seed);
  c.calibration.scenes = c.train.scenes;
  c.calibration.scenes.noise_sigma = c.calibration.noise_sigma;

  const nlohmann::json b = section(j, "bench");
  get(b, "sides", c.bench.sides);
  get(b, "reps", c.bench.reps);
  get(b, "seed", c.bench.seed);
  get(b, "window_radius", c.bench.attention.window_radius);
  get(b, "rank_window", c.bench.attention.rank_window);
  if (b.contains("head_dim")) {
    c.bench.attention.head_dim = b["head_dim"].get<std::size_t>();
    c.bench.attention.channels = c.bench.attention.head_dim * c.bench.attention.num_heads;
  }
  c.bench.validate();

  const nlohmann::json e = section(j, "eval");
  get(e, "suite_seed", c.eval.suite_seed);
  get(e, "per_category", c.eval.per_category);
  get(e, "noise_seed", c.eval.noise_seed);
  get(j, "threads", c.threads);
  if (c.threads == 0) throw std::invalid_argument("threads must be positive");
  return c;
}

void apply_overrides(nlohmann::json& doc, const std::vector<std::string>& assignments) {
  for (const auto& a : assignments) {
    const auto eq = a.find('=');
    if (eq == std::string::npos || eq == 0) throw std::invalid_argument("override '" + a + "' is not key=value");
    const std::string key = a.substr(0, eq), text = a.substr(eq + 1);
    nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;
    nlohmann::json* node = &doc;
    std::size_t start = 0;
    for (;;) {
      const auto dot = key.find('.', start);
      const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
      if (part.empty()) throw std::invalid_argument("override '" + a + "' has an empty key segment");
      if (!node->is_object()) *node = nlohmann::json::object();
      node = &(*node)[part];
      if (dot == std::string::npos) break;
      start = dot + 1;
    }
    *node = value;
  }
}

RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  nlohmann::json doc = nlohmann::json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open config " + path.string());
    doc = nlohmann::json::parse(in);
  }
  apply_overrides(doc, overrides);
  return run_config_from_json(doc);
}

}  // namespace batman

#ifndef MRN_CONFIG_HPP
#define MRN_CONFIG_HPP

#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <stdexcept>
#include <string>

#include "json.hpp"
#include "mrn/data.hpp"
#include "mrn/engine.hpp"
#include "mrn/network.hpp"

namespace mrn {

// Raised for any problem with a run-configuration document: unknown keys,
// wrong types, out-of-range values. The message always names the offending
// key with its full path.
struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Where training data comes from and how it is split. An empty `dir`
// synthesizes `synth_n` samples instead of loading from disk.
struct DataConfig {
  std::string dir;
  int synth_n = 200;
  int side = 64;
  double train_frac = 0.7;
};

// One document drives a whole run: every knob has a default, so `{}` is a
// complete configuration. The parsed + validated form is echoed back to the
// run's output directory so the exact settings are always on disk.
struct RunConfig {
  std::uint64_t seed = 0;
  std::string out_dir = "run";
  DataConfig data;
  std::string arch = "mrn";  // "mrn" | "baseline" ("ddsl" accepted as an alias of "mrn")
  MrnConfig model;
  double lambda = 0.4;
  double loss_eps = 1e-6;
  bool augment_enabled = true;
  AugmentSpec augment;
  int epochs = 150;
  int batch_size = 4;
  bool overfit = false;
  ScheduleConfig schedule;
  AdamConfig adam;

  void validate() const {
    auto fail = [](const std::string& msg) { throw config_error("config: " + msg); };
    if (out_dir.empty()) fail("'out_dir' must not be empty");
    if (data.synth_n < 1) fail("'data.synth_n' must be >= 1");
    if (data.side < 16) fail("'data.side' must be >= 16");
    if (data.train_frac <= 0.0 || data.train_frac >= 1.0)
      fail("'data.train_frac' must be in (0, 1)");
    if (arch != "mrn" && arch != "baseline")
      fail("'model.arch' must be \"mrn\" or \"baseline\", got \"" + arch + "\"");
    if (model.depth < 1) fail("'model.depth' must be >= 1");
    if (model.base_channels < 1) fail("'model.base_channels' must be >= 1");
    if (model.in_channels < 1) fail("'model.in_channels' must be >= 1");
    if (model.descriptors < 1) fail("'model.descriptors' must be >= 1");
    if (data.side % (1 << model.depth) != 0)
      fail("'data.side' must be divisible by 2^model.depth (" +
           std::to_string(1 << model.depth) + ")");
    if (data.dir.empty() && data.side % 16 != 0)
      fail("'data.side' must be a multiple of 16 when synthesizing data");
    if (lambda < 0.0) fail("'loss.lambda' must be >= 0");
    if (loss_eps <= 0.0) fail("'loss.eps' must be > 0");
    for (auto [v, key] : {std::pair<float, const char*>{augment.flip_h, "flip_h"},
                          {augment.flip_v, "flip_v"}})
      if (v < 0.0f || v > 1.0f) fail("'augment." + std::string(key) + "' must be in [0, 1]");
    for (auto [v, key] : {std::pair<float, const char*>{augment.rot_deg, "rot_deg"},
                          {augment.scale_frac, "scale_frac"},
                          {augment.brightness, "brightness"},
                          {augment.contrast, "contrast"},
                          {augment.elastic_alpha, "elastic_alpha"},
                          {augment.elastic_sigma, "elastic_sigma"}})
      if (v < 0.0f) fail("'augment." + std::string(key) + "' must be >= 0");
    if (epochs < 1) fail("'train.epochs' must be >= 1");
    if (batch_size < 1) fail("'train.batch_size' must be >= 1");
    if (schedule.lr0 <= 0.0) fail("'train.lr0' must be > 0");
    if (schedule.factor <= 0.0 || schedule.factor >= 1.0)
      fail("'train.factor' must be in (0, 1)");
    if (schedule.plateau_patience < 1) fail("'train.plateau_patience' must be >= 1");
    if (schedule.stop_patience < 1) fail("'train.stop_patience' must be >= 1");
    if (schedule.min_delta < 0.0) fail("'train.min_delta' must be >= 0");
    if (adam.beta1 < 0.0 || adam.beta1 >= 1.0) fail("'train.beta1' must be in [0, 1)");
    if (adam.beta2 < 0.0 || adam.beta2 >= 1.0) fail("'train.beta2' must be in [0, 1)");
    if (adam.eps <= 0.0) fail("'train.adam_eps' must be > 0");
  }
};

namespace detail {

// Strict field readers: a present key must have exactly the expected JSON
// type, and every error names the key's full path.
inline void require_object(const nlohmann::json& j, const std::string& path) {
  if (!j.is_object())
    throw config_error("config key '" + path + "' must be a JSON object");
}

inline void reject_unknown(const nlohmann::json& j, const std::string& prefix,
                           std::initializer_list<const char*> allowed) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : allowed)
      if (it.key() == k) {
        known = true;
        break;
      }
    if (!known) throw config_error("unknown config key '" + prefix + it.key() + "'");
  }
}

inline void get_bool(const nlohmann::json& j, const std::string& prefix, const char* key,
                     bool& into) {
  auto it = j.find(key);
  if (it == j.end()) return;
  if (!it->is_boolean())
    throw config_error("config key '" + prefix + key + "' must be true or false");
  into = it->get<bool>();
}

inline void get_string(const nlohmann::json& j, const std::string& prefix, const char* key,
                       std::string& into) {
  auto it = j.find(key);
  if (it == j.end()) return;
  if (!it->is_string())
    throw config_error("config key '" + prefix + key + "' must be a string");
  into = it->get<std::string>();
}

inline void get_int(const nlohmann::json& j, const std::string& prefix, const char* key,
                    int& into) {
  auto it = j.find(key);
  if (it == j.end()) return;
  if (!it->is_number_integer())
    throw config_error("config key '" + prefix + key + "' must be an integer");
  into = int(it->get<long long>());
}

inline void get_uint64(const nlohmann::json& j, const std::string& prefix, const char* key,
                       std::uint64_t& into) {
  auto it = j.find(key);
  if (it == j.end()) return;
  if (!it->is_number_integer() || (it->is_number_integer() && !it->is_number_unsigned() &&
                                   it->get<long long>() < 0))
    throw config_error("config key '" + prefix + key + "' must be a non-negative integer");
  into = it->get<std::uint64_t>();
}

inline void get_double(const nlohmann::json& j, const std::string& prefix, const char* key,
                       double& into) {
  auto it = j.find(key);
  if (it == j.end()) return;
  if (!it->is_number())
    throw config_error("config key '" + prefix + key + "' must be a number");
  into = it->get<double>();
}

inline void get_float(const nlohmann::json& j, const std::string& prefix, const char* key,
                      float& into) {
  double d = double(into);
  get_double(j, prefix, key, d);
  into = float(d);
}

}  // namespace detail

// Parses a configuration document. Missing keys take their defaults; unknown
// keys and type mismatches are rejected with the key's full path.
inline RunConfig run_config_from_json(const nlohmann::json& j) {
  using namespace detail;
  require_object(j, "<root>");
  reject_unknown(j, "", {"seed", "out_dir", "data", "model", "loss", "augment", "train"});

  RunConfig cfg;
  get_uint64(j, "", "seed", cfg.seed);
  get_string(j, "", "out_dir", cfg.out_dir);

  if (auto it = j.find("data"); it != j.end()) {
    require_object(*it, "data");
    reject_unknown(*it, "data.", {"dir", "synth_n", "side", "train_frac"});
    get_string(*it, "data.", "dir", cfg.data.dir);
    get_int(*it, "data.", "synth_n", cfg.data.synth_n);
    get_int(*it, "data.", "side", cfg.data.side);
    get_double(*it, "data.", "train_frac", cfg.data.train_frac);
  }
  if (auto it = j.find("model"); it != j.end()) {
    require_object(*it, "model");
    reject_unknown(*it, "model.",
                   {"arch", "depth", "base_channels", "in_channels", "descriptors", "msc"});
    get_string(*it, "model.", "arch", cfg.arch);
    if (cfg.arch == "ddsl") cfg.arch = "mrn";  // published name for the same network
    get_int(*it, "model.", "depth", cfg.model.depth);
    get_int(*it, "model.", "base_channels", cfg.model.base_channels);
    get_int(*it, "model.", "in_channels", cfg.model.in_channels);
    get_int(*it, "model.", "descriptors", cfg.model.descriptors);
    get_bool(*it, "model.", "msc", cfg.model.msc);
  }
  if (auto it = j.find("loss"); it != j.end()) {
    require_object(*it, "loss");
    reject_unknown(*it, "loss.", {"lambda", "eps"});
    get_double(*it, "loss.", "lambda", cfg.lambda);
    get_double(*it, "loss.", "eps", cfg.loss_eps);
  }
  if (auto it = j.find("augment"); it != j.end()) {
    require_object(*it, "augment");
    reject_unknown(*it, "augment.",
                   {"enabled", "flip_h", "flip_v", "rot_deg", "scale_frac", "brightness",
                    "contrast", "elastic_alpha", "elastic_sigma"});
    get_bool(*it, "augment.", "enabled", cfg.augment_enabled);
    get_float(*it, "augment.", "flip_h", cfg.augment.flip_h);
    get_float(*it, "augment.", "flip_v", cfg.augment.flip_v);
    get_float(*it, "augment.", "rot_deg", cfg.augment.rot_deg);
    get_float(*it, "augment.", "scale_frac", cfg.augment.scale_frac);
    get_float(*it, "augment.", "brightness", cfg.augment.brightness);
    get_float(*it, "augment.", "contrast", cfg.augment.contrast);
    get_float(*it, "augment.", "elastic_alpha", cfg.augment.elastic_alpha);
    get_float(*it, "augment.", "elastic_sigma", cfg.augment.elastic_sigma);
  }
  if (auto it = j.find("train"); it != j.end()) {
    require_object(*it, "train");
    reject_unknown(*it, "train.",
                   {"epochs", "batch_size", "overfit", "lr0", "factor", "plateau_patience",
                    "stop_patience", "min_delta", "beta1", "beta2", "adam_eps"});
    get_int(*it, "train.", "epochs", cfg.epochs);
    get_int(*it, "train.", "batch_size", cfg.batch_size);
    get_bool(*it, "train.", "overfit", cfg.overfit);
    get_double(*it, "train.", "lr0", cfg.schedule.lr0);
    get_double(*it, "train.", "factor", cfg.schedule.factor);
    get_int(*it, "train.", "plateau_patience", cfg.schedule.plateau_patience);
    get_int(*it, "train.", "stop_patience", cfg.schedule.stop_patience);
    get_double(*it, "train.", "min_delta", cfg.schedule.min_delta);
    get_double(*it, "train.", "beta1", cfg.adam.beta1);
    get_double(*it, "train.", "beta2", cfg.adam.beta2);
    get_double(*it, "train.", "adam_eps", cfg.adam.eps);
  }

  cfg.validate();
  return cfg;
}

// The fully resolved document: parsing this back yields the same RunConfig.
inline nlohmann::json to_json(const RunConfig& cfg) {
  return {
      {"seed", cfg.seed},
      {"out_dir", cfg.out_dir},
      {"data",
       {{"dir", cfg.data.dir},
        {"synth_n", cfg.data.synth_n},
        {"side", cfg.data.side},
        {"train_frac", cfg.data.train_frac}}},
      {"model",
       {{"arch", cfg.arch},
        {"depth", cfg.model.depth},
        {"base_channels", cfg.model.base_channels},
        {"in_channels", cfg.model.in_channels},
        {"descriptors", cfg.model.descriptors},
        {"msc", cfg.model.msc}}},
      {"loss", {{"lambda", cfg.lambda}, {"eps", cfg.loss_eps}}},
      {"augment",
       {{"enabled", cfg.augment_enabled},
        {"flip_h", cfg.augment.flip_h},
        {"flip_v", cfg.augment.flip_v},
        {"rot_deg", cfg.augment.rot_deg},
        {"scale_frac", cfg.augment.scale_frac},
        {"brightness", cfg.augment.brightness},
        {"contrast", cfg.augment.contrast},
        {"elastic_alpha", cfg.augment.elastic_alpha},
        {"elastic_sigma", cfg.augment.elastic_sigma}}},
      {"train",
       {{"epochs", cfg.epochs},
        {"batch_size", cfg.batch_size},
        {"overfit", cfg.overfit},
        {"lr0", cfg.schedule.lr0},
        {"factor", cfg.schedule.factor},
        {"plateau_patience", cfg.schedule.plateau_patience},
        {"stop_patience", cfg.schedule.stop_patience},
        {"min_delta", cfg.schedule.min_delta},
        {"beta1", cfg.adam.beta1},
        {"beta2", cfg.adam.beta2},
        {"adam_eps", cfg.adam.eps}}},
  };
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw config_error("cannot open config file: " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw config_error("config file " + path + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

inline void save_run_config(const std::string& path, const RunConfig& cfg) {
  std::ofstream f(path);
  check(bool(f), "save_run_config: cannot open " + path);
  f << to_json(cfg).dump(2) << '\n';
  check(bool(f), "save_run_config: write failed for " + path);
}

// Maps the document onto the training engine's own knob struct.
inline TrainConfig to_train_config(const RunConfig& cfg) {
  TrainConfig tc;
  tc.epochs = cfg.epochs;
  tc.batch_size = cfg.batch_size;
  tc.lambda = cfg.lambda;
  tc.loss_eps = cfg.loss_eps;
  tc.augment_enabled = cfg.augment_enabled;
  tc.augment = cfg.augment;
  tc.overfit = cfg.overfit;
  tc.seed = cfg.seed;
  tc.schedule = cfg.schedule;
  tc.adam = cfg.adam;
  tc.out_dir = cfg.out_dir;
  return tc;
}

}  // namespace mrn

#endif  // MRN_CONFIG_HPP

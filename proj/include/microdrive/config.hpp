#pragma once

// Run configuration: a single flat, typed key=value file with `include`
// support. Unknown keys are hard errors; environment variables prefixed
// MICRODRIVE_ override file values; parse -> serialize -> parse is identity.

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "microdrive/errors.hpp"
#include "microdrive/grpo.hpp"
#include "microdrive/model.hpp"
#include "microdrive/render.hpp"
#include "microdrive/reward.hpp"
#include "microdrive/scenesim.hpp"

extern "C" char** environ;

namespace microdrive {

struct RunConfig {
  int64_t seed = 0;
  std::string out_dir = "out";
  int threads = 1;

  // scene sets
  int train_scenes = 200;
  int val_scenes = 50;
  int test_scenes = 50;
  double profile_weight_straight = 0.25;
  double profile_weight_curve = 0.25;
  double profile_weight_obstacle = 0.25;
  double profile_weight_crossing = 0.25;
  double crossing_near_prob = 0.55;

  // rendering
  int grid_h = 16;
  int grid_w = 16;
  double cell_size = 1.0;
  int n_rays = 32;
  double d_max = 24.0;
  int n_depth_bins = 32;

  // model
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 4;
  int d_ff = 256;
  int traj_hidden = 64;

  // stage 1
  int pretrain_epochs = 10;
  int sft_epochs = 15;
  double stage1_lr = 3e-5;
  int batch_size = 8;
  double weight_decay = 0.0;
  double mtp_weight = 1.0;
  bool sft_rgb = true;
  bool sft_depth = true;
  double mask_ratio_min = 0.5;
  double mask_ratio_max = 1.0;
  // action augmentation during pre-training: with this probability the
  // expert action is perturbed and the future frame re-rendered at the
  // perturbed pose, so the world model must actually read its action input
  double pretrain_aug_prob = 0.0;
  double pretrain_aug_std = 0.3;        // x/y, metres
  double pretrain_aug_theta_std = 0.1;  // heading, radians

  // stage 2
  int rl_epochs = 5;
  int group_size = 8;
  double clip_eps = 0.1;
  double kl_beta = 0.01;
  double std_floor = 1e-8;
  int updates_per_group = 1;
  double rl_temperature = 1.0;
  double stage2_lr = 3e-6;
  double stage2_lr_mult = 100.0;
  std::string reward_mode = "gated";

  // reward
  double delta = 0.9;
  double lambda = 0.5;

  // evaluation
  std::vector<int> eval_best_of{1, 2, 4, 6, 8};
  double eval_temperature = 1.0;
  int eval_scatter_per_scene = 0;
  int gen_steps = 4;

  // ---- derived views -------------------------------------------------
  RenderParams render_params() const {
    RenderParams rp;
    rp.grid_h = grid_h;
    rp.grid_w = grid_w;
    rp.cell_size = cell_size;
    rp.n_rays = n_rays;
    rp.d_max = d_max;
    rp.n_depth_bins = n_depth_bins;
    return rp;
  }
  SeqLayout layout() const { return SeqLayout::make(render_params()); }
  ModelConfig model_config() const {
    ModelConfig mc;
    mc.d_model = d_model;
    mc.n_layers = n_layers;
    mc.n_heads = n_heads;
    mc.d_ff = d_ff;
    mc.traj_hidden = traj_hidden;
    mc.vocab.n_depth_bins = n_depth_bins;
    mc.max_seq_len = layout().total;
    return mc;
  }
  GrpoConfig grpo_config() const {
    GrpoConfig gc;
    gc.group_size = group_size;
    gc.clip_eps = clip_eps;
    gc.kl_beta = kl_beta;
    gc.std_floor = std_floor;
    gc.updates_per_group = updates_per_group;
    gc.temperature = rl_temperature;
    return gc;
  }
  RewardConfig reward_config() const {
    RewardConfig rc;
    rc.delta = delta;
    rc.lambda = lambda;
    rc.h_ref = entropy_ceiling(layout(), model_config().vocab);
    return rc;
  }
  ProfileParams profile_params() const {
    ProfileParams pp;
    pp.crossing_near_prob = crossing_near_prob;
    return pp;
  }
  double stage2_effective_lr() const { return stage2_lr * stage2_lr_mult; }

  void validate() const {
    if (train_scenes <= 0 || val_scenes <= 0 || test_scenes <= 0)
      throw ConfigError("scene counts must be positive");
    if (mask_ratio_min < 0.0 || mask_ratio_max > 1.0 || mask_ratio_min > mask_ratio_max)
      throw ConfigError("mask ratio range must satisfy 0 <= min <= max <= 1");
    if (d_model % n_heads != 0) throw ConfigError("d_model must be divisible by n_heads");
    const double wsum = profile_weight_straight + profile_weight_curve + profile_weight_obstacle +
                        profile_weight_crossing;
    if (wsum <= 0.0) throw ConfigError("profile weights must sum to a positive value");
    if (eval_best_of.empty()) throw ConfigError("eval_best_of must not be empty");
    for (size_t i = 1; i < eval_best_of.size(); ++i) {
      if (eval_best_of[i] <= eval_best_of[i - 1])
        throw ConfigError("eval_best_of must be strictly increasing");
    }
    reward_mode_from_name(reward_mode);
    model_config().validate();
    grpo_config().validate();
    reward_config().validate();
  }
};

namespace config_detail {

inline std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline int64_t parse_i64(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const int64_t out = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return out;
  } catch (...) {
    throw ConfigError("config: key '" + key + "' expects an integer, got '" + v + "'");
  }
}

inline double parse_f64(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const double out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return out;
  } catch (...) {
    throw ConfigError("config: key '" + key + "' expects a number, got '" + v + "'");
  }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError("config: key '" + key + "' expects true/false, got '" + v + "'");
}

inline std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    out.push_back(static_cast<int>(parse_i64(key, item)));
  }
  if (out.empty()) throw ConfigError("config: key '" + key + "' expects a non-empty int list");
  return out;
}

inline std::string fmt_int_list(const std::vector<int>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(v[i]);
  }
  return s;
}

struct FieldDef {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

inline const std::vector<FieldDef>& fields() {
  static const std::vector<FieldDef> defs = [] {
    std::vector<FieldDef> f;
    auto add_i64 = [&f](const char* key, int64_t RunConfig::* m) {
      f.push_back({key, [key, m](RunConfig& c, const std::string& v) { c.*m = parse_i64(key, v); },
                   [m](const RunConfig& c) { return std::to_string(c.*m); }});
    };
    auto add_int = [&f](const char* key, int RunConfig::* m) {
      f.push_back({key,
                   [key, m](RunConfig& c, const std::string& v) {
                     c.*m = static_cast<int>(parse_i64(key, v));
                   },
                   [m](const RunConfig& c) { return std::to_string(c.*m); }});
    };
    auto add_f64 = [&f](const char* key, double RunConfig::* m) {
      f.push_back({key, [key, m](RunConfig& c, const std::string& v) { c.*m = parse_f64(key, v); },
                   [m](const RunConfig& c) { return fmt_double(c.*m); }});
    };
    auto add_bool = [&f](const char* key, bool RunConfig::* m) {
      f.push_back({key, [key, m](RunConfig& c, const std::string& v) { c.*m = parse_bool(key, v); },
                   [m](const RunConfig& c) { return c.*m ? "true" : "false"; }});
    };
    auto add_str = [&f](const char* key, std::string RunConfig::* m) {
      f.push_back({key, [m](RunConfig& c, const std::string& v) { c.*m = v; },
                   [m](const RunConfig& c) { return c.*m; }});
    };
    add_i64("seed", &RunConfig::seed);
    add_str("out_dir", &RunConfig::out_dir);
    add_int("threads", &RunConfig::threads);
    add_int("train_scenes", &RunConfig::train_scenes);
    add_int("val_scenes", &RunConfig::val_scenes);
    add_int("test_scenes", &RunConfig::test_scenes);
    add_f64("profile_weight_straight", &RunConfig::profile_weight_straight);
    add_f64("profile_weight_curve", &RunConfig::profile_weight_curve);
    add_f64("profile_weight_obstacle", &RunConfig::profile_weight_obstacle);
    add_f64("profile_weight_crossing", &RunConfig::profile_weight_crossing);
    add_f64("crossing_near_prob", &RunConfig::crossing_near_prob);
    add_int("grid_h", &RunConfig::grid_h);
    add_int("grid_w", &RunConfig::grid_w);
    add_f64("cell_size", &RunConfig::cell_size);
    add_int("n_rays", &RunConfig::n_rays);
    add_f64("d_max", &RunConfig::d_max);
    add_int("n_depth_bins", &RunConfig::n_depth_bins);
    add_int("d_model", &RunConfig::d_model);
    add_int("n_layers", &RunConfig::n_layers);
    add_int("n_heads", &RunConfig::n_heads);
    add_int("d_ff", &RunConfig::d_ff);
    add_int("traj_hidden", &RunConfig::traj_hidden);
    add_int("pretrain_epochs", &RunConfig::pretrain_epochs);
    add_int("sft_epochs", &RunConfig::sft_epochs);
    add_f64("stage1_lr", &RunConfig::stage1_lr);
    add_int("batch_size", &RunConfig::batch_size);
    add_f64("weight_decay", &RunConfig::weight_decay);
    add_f64("mtp_weight", &RunConfig::mtp_weight);
    add_bool("sft_rgb", &RunConfig::sft_rgb);
    add_bool("sft_depth", &RunConfig::sft_depth);
    add_f64("mask_ratio_min", &RunConfig::mask_ratio_min);
    add_f64("mask_ratio_max", &RunConfig::mask_ratio_max);
    add_f64("pretrain_aug_prob", &RunConfig::pretrain_aug_prob);
    add_f64("pretrain_aug_std", &RunConfig::pretrain_aug_std);
    add_f64("pretrain_aug_theta_std", &RunConfig::pretrain_aug_theta_std);
    add_int("rl_epochs", &RunConfig::rl_epochs);
    add_int("group_size", &RunConfig::group_size);
    add_f64("clip_eps", &RunConfig::clip_eps);
    add_f64("kl_beta", &RunConfig::kl_beta);
    add_f64("std_floor", &RunConfig::std_floor);
    add_int("updates_per_group", &RunConfig::updates_per_group);
    add_f64("rl_temperature", &RunConfig::rl_temperature);
    add_f64("stage2_lr", &RunConfig::stage2_lr);
    add_f64("stage2_lr_mult", &RunConfig::stage2_lr_mult);
    add_str("reward_mode", &RunConfig::reward_mode);
    add_f64("delta", &RunConfig::delta);
    add_f64("lambda", &RunConfig::lambda);
    f.push_back({"eval_best_of",
                 [](RunConfig& c, const std::string& v) {
                   c.eval_best_of = parse_int_list("eval_best_of", v);
                 },
                 [](const RunConfig& c) { return fmt_int_list(c.eval_best_of); }});
    add_f64("eval_temperature", &RunConfig::eval_temperature);
    add_int("eval_scatter_per_scene", &RunConfig::eval_scatter_per_scene);
    add_int("gen_steps", &RunConfig::gen_steps);
    return f;
  }();
  return defs;
}

inline const FieldDef* find_field(const std::string& key) {
  for (const auto& f : fields()) {
    if (f.key == key) return &f;
  }
  return nullptr;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline void parse_into(RunConfig& cfg, const std::string& path, int depth) {
  if (depth > 8) throw ConfigError("config: include depth exceeds 8 at " + path);
  std::ifstream is(path);
  if (!is) throw IoError("config: cannot open " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    if (t.rfind("include ", 0) == 0) {
      const std::string inc = trim(t.substr(8));
      const auto base = std::filesystem::path(path).parent_path();
      parse_into(cfg, (base / inc).string(), depth + 1);
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: expected 'key = value' at " + path + ":" +
                        std::to_string(lineno));
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    const FieldDef* f = find_field(key);
    if (!f)
      throw ConfigError("config: unknown key '" + key + "' at " + path + ":" +
                        std::to_string(lineno));
    f->set(cfg, value);
  }
}

}  // namespace config_detail

inline constexpr const char* kEnvPrefix = "MICRODRIVE_";

// MICRODRIVE_<KEY> (key upper-cased) overrides the file value.
inline void apply_env_overrides(RunConfig& cfg) {
  for (char** e = ::environ; *e; ++e) {
    const std::string entry(*e);
    if (entry.rfind(kEnvPrefix, 0) != 0) continue;
    const auto eq = entry.find('=');
    if (eq == std::string::npos) continue;
    std::string key = entry.substr(std::string(kEnvPrefix).size(), eq - std::string(kEnvPrefix).size());
    std::transform(key.begin(), key.end(), key.begin(), [](unsigned char c) { return std::tolower(c); });
    const config_detail::FieldDef* f = config_detail::find_field(key);
    if (!f) throw ConfigError("config: unknown env override " + entry.substr(0, eq));
    f->set(cfg, entry.substr(eq + 1));
  }
}

inline RunConfig load_config(const std::string& path, bool env_overrides = true) {
  RunConfig cfg;
  config_detail::parse_into(cfg, path, 0);
  if (env_overrides) apply_env_overrides(cfg);
  cfg.validate();
  return cfg;
}

// Flat, sorted, fully resolved key=value text.
inline std::string serialize_config(const RunConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> kv;
  for (const auto& f : config_detail::fields()) kv.emplace_back(f.key, f.get(cfg));
  std::sort(kv.begin(), kv.end());
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

inline void save_config(const RunConfig& cfg, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("config: cannot write " + path);
  os << serialize_config(cfg);
}

}  // namespace microdrive

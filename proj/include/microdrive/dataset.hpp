#pragma once

// Dataset generation and loading. Scenes live in <split>_scenes.jsonl (one
// scene per line); records in <split>_records.jsonl reference scenes by line
// index. Train/val/test draw from disjoint seed ranges by construction.

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "microdrive/config.hpp"
#include "microdrive/metrics.hpp"
#include "microdrive/render.hpp"
#include "microdrive/scenesim.hpp"
#include "microdrive/threading.hpp"

namespace microdrive {

struct DatasetRecord {
  int scene_ref = 0;
  EgoState ego;
  int command = 0;
  Trajectory expert;
  std::vector<TokenFrame> history;  // t-0.5 s, t
  TokenFrame future;                // t+0.5 s at the expert's first waypoint
};

struct SplitData {
  std::vector<Scene> scenes;
  std::vector<DatasetRecord> records;
};

inline std::array<double, kEgoFeatDim> ego_features_for(const Scene& scene, const EgoState& ego,
                                                        int command) {
  const EgoState hist = history_ego(scene, ego);
  const double heading_rate = wrap_angle(ego.heading - hist.heading) / kWaypointDt;
  return make_ego_features(ego.speed, heading_rate, command);
}

// Disjoint seed ranges: byte 7 carries the split, bytes 3..6 the global
// seed, bytes 0..2 the index.
inline int64_t scene_seed_for(int64_t global_seed, int split_index, int i) {
  const uint64_t v = (static_cast<uint64_t>(split_index + 1) << 56) |
                     ((splitmix64(static_cast<uint64_t>(global_seed)) & 0xffffffffull) << 24) |
                     static_cast<uint64_t>(i & 0xffffff);
  return static_cast<int64_t>(v);
}

inline ScenarioProfile profile_for_index(const RunConfig& cfg, int split_index, int i) {
  Rng rng(mix_seed(static_cast<uint64_t>(cfg.seed), tag_of("profile_pick"),
                   static_cast<uint64_t>(split_index) * 1000003ull + i));
  const double w[4] = {cfg.profile_weight_straight, cfg.profile_weight_curve,
                       cfg.profile_weight_obstacle, cfg.profile_weight_crossing};
  double total = 0.0;
  for (double v : w) total += v;
  double u = rng.uniform01() * total;
  for (int k = 0; k < 4; ++k) {
    u -= w[k];
    if (u < 0.0) return static_cast<ScenarioProfile>(k);
  }
  return ScenarioProfile::kCrossing;
}

inline DatasetRecord build_record(const Scene& scene, ScenarioProfile profile,
                                  const RenderParams& rp, const VocabLayout& vocab,
                                  int scene_ref) {
  DatasetRecord rec;
  rec.scene_ref = scene_ref;
  rec.ego = canonical_ego(scene);
  rec.command = command_for(profile, scene);
  rec.expert = expert_plan(scene, rec.ego);

  const EgoState hist = history_ego(scene, rec.ego);
  rec.history.push_back(render_frame(scene, hist, rp, vocab, -kWaypointDt));
  rec.history.push_back(render_frame(scene, rec.ego, rp, vocab, 0.0));

  // the observation after executing the first 0.5 s of the expert action
  const Waypoint& w1 = rec.expert.waypoints[0];
  EgoState fut;
  fut.position = to_world_frame({w1.x, w1.y}, rec.ego.position, rec.ego.heading);
  fut.heading = wrap_angle(rec.ego.heading + w1.theta);
  fut.speed = Vec2{w1.x, w1.y}.norm() / kWaypointDt;
  rec.future = render_frame(scene, fut, rp, vocab, kWaypointDt);
  return rec;
}

inline nlohmann::json to_json(const DatasetRecord& r, const RenderParams& rp) {
  nlohmann::json j;
  j["v"] = 1;
  j["scene_ref"] = r.scene_ref;
  j["ego"] = to_json(r.ego);
  j["command"] = r.command;
  j["expert"] = to_json(r.expert);
  auto& h = j["history"] = nlohmann::json::array();
  for (const auto& f : r.history) h.push_back(to_json(f, rp));
  j["future"] = to_json(r.future, rp);
  return j;
}

inline DatasetRecord record_from_json(const nlohmann::json& j) {
  if (j.at("v").get<int>() != 1) throw IoError("dataset: unsupported record version");
  DatasetRecord r;
  r.scene_ref = j.at("scene_ref").get<int>();
  r.ego = ego_from_json(j.at("ego"));
  r.command = j.at("command").get<int>();
  r.expert = trajectory_from_json(j.at("expert"));
  for (const auto& f : j.at("history")) r.history.push_back(frame_from_json(f));
  r.future = frame_from_json(j.at("future"));
  return r;
}

inline const char* kSplitNames[3] = {"train", "val", "test"};

inline std::string scenes_path(const std::string& out_dir, const std::string& split) {
  return (std::filesystem::path(out_dir) / (split + "_scenes.jsonl")).string();
}

inline std::string records_path(const std::string& out_dir, const std::string& split) {
  return (std::filesystem::path(out_dir) / (split + "_records.jsonl")).string();
}

struct SplitHashes {
  std::string scenes_hash;
  std::string records_hash;
  int count = 0;
};

inline SplitHashes generate_split(const RunConfig& cfg, int split_index, int count) {
  const std::string split = kSplitNames[split_index];
  const RenderParams rp = cfg.render_params();
  const VocabLayout vocab = cfg.model_config().vocab;
  const ProfileParams pp = cfg.profile_params();

  std::vector<Scene> scenes(count);
  std::vector<ScenarioProfile> profiles(count);
  std::vector<DatasetRecord> records(count);
  parallel_for(count, cfg.threads, [&](int i) {
    profiles[i] = profile_for_index(cfg, split_index, i);
    scenes[i] = generate_scene(scene_seed_for(cfg.seed, split_index, i), profiles[i], pp);
    records[i] = build_record(scenes[i], profiles[i], rp, vocab, i);
  });

  std::string scene_lines, record_lines;
  for (int i = 0; i < count; ++i) {
    scene_lines += to_json(scenes[i]).dump() + "\n";
    record_lines += to_json(records[i], rp).dump() + "\n";
  }
  write_file(scenes_path(cfg.out_dir, split), scene_lines);
  write_file(records_path(cfg.out_dir, split), record_lines);
  return {content_hash(scene_lines), content_hash(record_lines), count};
}

inline SplitData load_split(const std::string& out_dir, const std::string& split) {
  SplitData data;
  for (const auto& j : read_jsonl(scenes_path(out_dir, split))) data.scenes.push_back(scene_from_json(j));
  for (const auto& j : read_jsonl(records_path(out_dir, split))) {
    data.records.push_back(record_from_json(j));
  }
  for (const auto& r : data.records) {
    if (r.scene_ref < 0 || r.scene_ref >= static_cast<int>(data.scenes.size()))
      throw IoError("dataset: record references a missing scene line");
  }
  return data;
}

}  // namespace microdrive

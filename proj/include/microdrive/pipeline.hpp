#pragma once

// Pipeline orchestration behind the CLI: dataset generation, the two
// training stages, evaluation and reporting. Every artifact lands under
// cfg.out_dir and is content-hashed into the run manifest.

#include <chrono>
#include <filesystem>
#include <string>
#include <vector>

#include "microdrive/checkpoint.hpp"
#include "microdrive/config.hpp"
#include "microdrive/dataset.hpp"
#include "microdrive/evaluate.hpp"
#include "microdrive/metrics.hpp"
#include "microdrive/rl_train.hpp"
#include "microdrive/svg.hpp"
#include "microdrive/train.hpp"

namespace microdrive {

inline std::string ckpt_path(const std::string& out_dir, const std::string& stage) {
  return (std::filesystem::path(out_dir) / ("ckpt_" + stage + ".bin")).string();
}

inline std::string metrics_path(const std::string& out_dir, const std::string& stage) {
  return (std::filesystem::path(out_dir) / ("metrics_" + stage + ".jsonl")).string();
}

inline std::string rewards_path(const std::string& out_dir) {
  return (std::filesystem::path(out_dir) / "rewards.jsonl").string();
}

inline std::string eval_report_path(const std::string& out_dir, const std::string& tag) {
  return (std::filesystem::path(out_dir) / ("eval_" + tag + ".json")).string();
}

namespace pipeline_detail {

inline void ensure_dir(const std::string& dir) { std::filesystem::create_directories(dir); }

inline void fresh_file(const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot create " + path);
}

class StageClock {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
  }

 private:
  std::chrono::steady_clock::time_point t0_ = std::chrono::steady_clock::now();
};

inline void record_config(const RunConfig& cfg, nlohmann::json& manifest) {
  const std::string text = serialize_config(cfg);
  // the hash identifies the experiment, not its location on disk
  RunConfig keyed = cfg;
  keyed.out_dir = "";
  manifest["config_hash"] = content_hash(serialize_config(keyed));
  write_file((std::filesystem::path(cfg.out_dir) / "config_resolved.cfg").string(), text);
}

inline SplitData load_split_checked(const RunConfig& cfg, const std::string& split) {
  const std::string sp = scenes_path(cfg.out_dir, split);
  const std::string rp = records_path(cfg.out_dir, split);
  if (!std::filesystem::exists(sp)) throw IoError("missing dataset file: " + sp);
  if (!std::filesystem::exists(rp)) throw IoError("missing dataset file: " + rp);
  return load_split(cfg.out_dir, split);
}

inline Checkpoint load_checkpoint_checked(const RunConfig& cfg, const std::string& path) {
  if (!std::filesystem::exists(path)) throw IoError("missing checkpoint: " + path);
  Checkpoint ck = load_checkpoint(path);
  if (!(ck.config == cfg.model_config()))
    throw ConfigError("checkpoint/config mismatch: " + path);
  return ck;
}

}  // namespace pipeline_detail

struct GenDataSummary {
  SplitHashes train, val, test;
};

inline GenDataSummary cmd_gen_data(const RunConfig& cfg) {
  cfg.validate();
  pipeline_detail::ensure_dir(cfg.out_dir);
  pipeline_detail::StageClock clock;
  GenDataSummary s;
  s.train = generate_split(cfg, 0, cfg.train_scenes);
  s.val = generate_split(cfg, 1, cfg.val_scenes);
  s.test = generate_split(cfg, 2, cfg.test_scenes);
  nlohmann::json manifest = load_manifest(cfg.out_dir);
  pipeline_detail::record_config(cfg, manifest);
  auto rec = [](const SplitHashes& h) {
    return nlohmann::json{
        {"scenes_hash", h.scenes_hash}, {"records_hash", h.records_hash}, {"count", h.count}};
  };
  manifest["datasets"] = {{"train", rec(s.train)}, {"val", rec(s.val)}, {"test", rec(s.test)}};
  manifest["wallclock"]["gen-data"] = clock.seconds();
  save_manifest(cfg.out_dir, manifest);
  return s;
}

inline std::string cmd_pretrain(const RunConfig& cfg) {
  cfg.validate();
  pipeline_detail::ensure_dir(cfg.out_dir);
  pipeline_detail::StageClock clock;
  const SplitData train = pipeline_detail::load_split_checked(cfg, "train");
  const std::string mpath = metrics_path(cfg.out_dir, "pretrain");
  pipeline_detail::fresh_file(mpath);
  JsonlWriter metrics(mpath);
  const StageResult res = run_pretrain(cfg, train, metrics);
  const std::string path = ckpt_path(cfg.out_dir, "pretrain");
  save_checkpoint(path, cfg.model_config(), res.params);

  nlohmann::json manifest = load_manifest(cfg.out_dir);
  pipeline_detail::record_config(cfg, manifest);
  manifest["checkpoints"]["pretrain"] = {{"path", path}, {"hash", file_hash(path)}};
  manifest["metrics"]["pretrain"] = mpath;
  manifest["wallclock"]["pretrain"] = clock.seconds();
  save_manifest(cfg.out_dir, manifest);
  return path;
}

inline std::string cmd_sft(const RunConfig& cfg, std::string init_ckpt = "") {
  cfg.validate();
  pipeline_detail::ensure_dir(cfg.out_dir);
  pipeline_detail::StageClock clock;
  if (init_ckpt.empty()) init_ckpt = ckpt_path(cfg.out_dir, "pretrain");
  Checkpoint init = pipeline_detail::load_checkpoint_checked(cfg, init_ckpt);
  const SplitData train = pipeline_detail::load_split_checked(cfg, "train");
  const SplitData val = pipeline_detail::load_split_checked(cfg, "val");
  const std::string mpath = metrics_path(cfg.out_dir, "sft");
  pipeline_detail::fresh_file(mpath);
  JsonlWriter metrics(mpath);
  const StageResult res = run_sft(cfg, train, val, std::move(init.params), metrics);
  const std::string path = ckpt_path(cfg.out_dir, "sft");
  save_checkpoint(path, cfg.model_config(), res.params);

  nlohmann::json manifest = load_manifest(cfg.out_dir);
  pipeline_detail::record_config(cfg, manifest);
  manifest["checkpoints"]["sft"] = {{"path", path}, {"hash", file_hash(path)}};
  manifest["metrics"]["sft"] = mpath;
  manifest["wallclock"]["sft"] = clock.seconds();
  save_manifest(cfg.out_dir, manifest);
  return path;
}

inline std::string cmd_rl(const RunConfig& cfg, std::string stage1_ckpt = "") {
  cfg.validate();
  pipeline_detail::ensure_dir(cfg.out_dir);
  pipeline_detail::StageClock clock;
  if (stage1_ckpt.empty()) stage1_ckpt = ckpt_path(cfg.out_dir, "sft");
  Checkpoint stage1 = pipeline_detail::load_checkpoint_checked(cfg, stage1_ckpt);
  const std::string frozen_hash = file_hash(stage1_ckpt);
  const SplitData train = pipeline_detail::load_split_checked(cfg, "train");
  const SplitData val = pipeline_detail::load_split_checked(cfg, "val");
  const std::string mpath = metrics_path(cfg.out_dir, "rl");
  pipeline_detail::fresh_file(mpath);
  pipeline_detail::fresh_file(rewards_path(cfg.out_dir));
  JsonlWriter metrics(mpath);
  JsonlWriter rewards(rewards_path(cfg.out_dir));
  const RlResult res = run_rl(cfg, train, val, std::move(stage1.params), metrics, &rewards);
  const std::string path = ckpt_path(cfg.out_dir, "rl");
  save_checkpoint(path, cfg.model_config(), res.params);
  if (file_hash(stage1_ckpt) != frozen_hash)
    throw TrainError("frozen stage-1 checkpoint changed during rl: " + stage1_ckpt);

  nlohmann::json manifest = load_manifest(cfg.out_dir);
  pipeline_detail::record_config(cfg, manifest);
  manifest["checkpoints"]["rl"] = {{"path", path}, {"hash", file_hash(path)}};
  manifest["checkpoints"]["rl_reference"] = {{"path", stage1_ckpt}, {"hash", frozen_hash}};
  manifest["metrics"]["rl"] = mpath;
  manifest["metrics"]["rewards"] = rewards_path(cfg.out_dir);
  manifest["wallclock"]["rl"] = clock.seconds();
  save_manifest(cfg.out_dir, manifest);
  return path;
}

inline EvalReport cmd_eval(const RunConfig& cfg, const std::string& ckpt,
                           const std::string& split, std::string tag = "") {
  cfg.validate();
  pipeline_detail::ensure_dir(cfg.out_dir);
  pipeline_detail::StageClock clock;
  const SplitData data = pipeline_detail::load_split_checked(cfg, split);
  EvalReport rep;
  if (ckpt == "expert") {
    rep = evaluate_params(cfg, cfg.model_config(), nullptr, data);
    if (tag.empty()) tag = "expert_" + split;
  } else {
    Checkpoint ck = pipeline_detail::load_checkpoint_checked(cfg, ckpt);
    rep = evaluate_params(cfg, ck.config, &ck.params, data);
    if (tag.empty()) {
      tag = std::filesystem::path(ckpt).stem().string() + "_" + split;
    }
  }
  const std::string rpath = eval_report_path(cfg.out_dir, tag);
  nlohmann::json j = to_json(rep);
  j["split"] = split;
  j["checkpoint"] = ckpt;
  write_file(rpath, j.dump(2) + "\n");

  const std::string plots = (std::filesystem::path(cfg.out_dir) / "plots").string();
  pipeline_detail::ensure_dir(plots);
  write_histogram_svg(plots + "/score_hist_" + tag + ".svg", rep.composites, 20,
                      "composite score", "score distribution: " + tag);
  if (!rep.scatter.empty()) {
    write_scatter_svg(plots + "/bonus_vs_l2_" + tag + ".svg", rep.scatter, "L2 to expert (m)",
                      "exploration bonus", "bonus vs L2: " + tag);
  }

  nlohmann::json manifest = load_manifest(cfg.out_dir);
  manifest["eval"][tag] = {{"path", rpath}, {"hash", file_hash(rpath)}};
  manifest["wallclock"]["eval_" + tag] = clock.seconds();
  save_manifest(cfg.out_dir, manifest);
  return rep;
}

// ---------------------------------------------------------------------------
// Report: collates stage metrics, eval reports and acceptance results.

inline const std::vector<std::string>& acceptance_criterion_ids() {
  static const std::vector<std::string> ids{"C1", "C2", "C3", "C4", "C5",
                                            "C6", "C7", "C8", "C9", "C10"};
  return ids;
}

inline std::string cmd_report(const std::string& out_dir) {
  const std::string mp = manifest_path(out_dir);
  if (!std::filesystem::exists(mp)) throw IoError("missing manifest: " + mp);
  const nlohmann::json manifest = load_manifest(out_dir);
  std::ostringstream os;
  os << "# Run report\n\n";
  os << "config hash: " << manifest.value("config_hash", std::string("?")) << "\n\n";

  if (manifest.contains("datasets")) {
    os << "## Datasets\n\n";
    for (const auto& [split, d] : manifest["datasets"].items()) {
      os << "- " << split << ": " << d["count"].get<int>() << " scenes, scenes hash "
         << d["scenes_hash"].get<std::string>() << ", records hash "
         << d["records_hash"].get<std::string>() << "\n";
    }
    os << "\n";
  }

  if (manifest.contains("metrics")) {
    os << "## Stages\n\n";
    for (const auto& [stage, path] : manifest["metrics"].items()) {
      const std::string p = path.get<std::string>();
      if (!std::filesystem::exists(p)) throw IoError("missing metrics file: " + p);
      const auto rows = read_jsonl(p);
      os << "### " << stage << " (" << rows.size() << " metric rows)\n\n";
      if (stage == "pretrain" || stage == "sft") {
        for (const auto& r : rows) {
          if (!r.contains("loss")) continue;
          os << "- epoch " << r["epoch"].get<int>() << ": loss " << r["loss"].get<double>();
          if (r.contains("val_l2")) os << ", val L2 " << r["val_l2"].get<double>();
          os << "\n";
        }
      } else if (stage == "rl") {
        for (const auto& r : rows) {
          if (!r.contains("val_composite")) continue;
          os << "- epoch " << r["epoch"].get<int>() << ": val composite "
             << r["val_composite"].get<double>();
          if (r.contains("mean_R")) os << ", mean R " << r["mean_R"].get<double>();
          os << "\n";
        }
      }
      os << "\n";
    }
  }

  if (manifest.contains("checkpoints")) {
    os << "## Checkpoints\n\n";
    for (const auto& [stage, c] : manifest["checkpoints"].items()) {
      os << "- " << stage << ": " << c["hash"].get<std::string>() << "\n";
    }
    os << "\n";
  }

  if (manifest.contains("eval")) {
    os << "## Evaluations\n\n";
    for (const auto& [tag, e] : manifest["eval"].items()) {
      const std::string p = e["path"].get<std::string>();
      if (!std::filesystem::exists(p)) throw IoError("missing eval report: " + p);
      const nlohmann::json r = nlohmann::json::parse(read_file(p));
      os << "### " << tag << "\n\n";
      os << "- mean composite: " << r["mean_composite"].get<double>() << "\n";
      os << "- open-loop L2 (1/2/4 s): " << r["l2_1s"].get<double>() << " / "
         << r["l2_2s"].get<double>() << " / " << r["l2_4s"].get<double>() << "\n";
      if (r.contains("best_of")) {
        os << "- best-of-N composite:";
        for (const auto& [n, v] : r["best_of"].items()) os << " " << n << ":" << v.get<double>();
        os << "\n";
      }
      if (r.contains("spearman_bonus_l2")) {
        os << "- Spearman(bonus, L2): " << r["spearman_bonus_l2"].get<double>() << "\n";
      }
      os << "\n";
    }
  }

  os << "## Acceptance criteria\n\n";
  nlohmann::json acc;
  const std::string ap = (std::filesystem::path(out_dir) / "acceptance_results.json").string();
  if (std::filesystem::exists(ap)) acc = nlohmann::json::parse(read_file(ap));
  for (const std::string& id : acceptance_criterion_ids()) {
    std::string status = "not-run";
    std::string detail;
    if (acc.contains("criteria")) {
      for (const auto& c : acc["criteria"]) {
        if (c["id"] == id) {
          status = c["pass"].get<bool>() ? "PASS" : "FAIL";
          detail = c.value("detail", std::string());
        }
      }
    }
    os << "- " << id << ": " << status;
    if (!detail.empty()) os << " (" << detail << ")";
    os << "\n";
  }
  os << "\n";

  if (manifest.contains("wallclock")) {
    os << "## Timing\n\n";
    for (const auto& [stage, sec] : manifest["wallclock"].items()) {
      os << "- [timing] " << stage << ": " << sec.get<double>() << " s\n";
    }
  }

  const std::string text = os.str();
  write_file((std::filesystem::path(out_dir) / "report.md").string(), text);
  return text;
}

}  // namespace microdrive

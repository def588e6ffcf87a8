// Command-line front end for the full pipeline:
//   gen-data -> pretrain -> sft -> rl -> eval -> report
//
// Exit codes: 0 success, 2 usage, 3 config error, 4 I/O error,
// 5 training/runtime error. Failures print one machine-parsable line:
//   error code=<CODE> msg="..."

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "microdrive/pipeline.hpp"

namespace {

struct CommonOpts {
  std::string config_path;
  std::string out_override;
  std::string checkpoint;
  std::string split = "val";
  int64_t seed = 0;
  bool seed_set = false;
};

microdrive::RunConfig load_cfg(const CommonOpts& o) {
  microdrive::RunConfig cfg = microdrive::load_config(o.config_path);
  if (o.seed_set) cfg.seed = o.seed;
  if (!o.out_override.empty()) cfg.out_dir = o.out_override;
  cfg.validate();
  return cfg;
}

void fail_line(const char* code, const std::string& msg) {
  std::string m = msg;
  for (auto& c : m) {
    if (c == '"' || c == '\n') c = ' ';
  }
  std::fprintf(stderr, "error code=%s msg=\"%s\"\n", code, m.c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"microdrive: a desk-scale driving stack with world-model exploration"};
  app.require_subcommand(1);
  CommonOpts o;

  auto add_common = [&](CLI::App* sub, bool with_ckpt) {
    sub->add_option("--config", o.config_path, "run configuration file")->required();
    sub->add_option("--seed", o.seed, "override the config seed")->each([&](const std::string&) {
      o.seed_set = true;
    });
    sub->add_option("--out", o.out_override, "override the output directory");
    if (with_ckpt) sub->add_option("--checkpoint", o.checkpoint, "checkpoint path");
  };

  CLI::App* gen = app.add_subcommand("gen-data", "generate scene datasets");
  add_common(gen, false);
  CLI::App* pre = app.add_subcommand("pretrain", "stage-1 generation pre-training");
  add_common(pre, false);
  CLI::App* sft = app.add_subcommand("sft", "stage-1 supervised fine-tuning");
  add_common(sft, true);
  CLI::App* rl = app.add_subcommand("rl", "stage-2 GRPO post-training");
  add_common(rl, true);
  CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  add_common(ev, true);
  ev->add_option("--split", o.split, "dataset split (train/val/test)");
  CLI::App* rep = app.add_subcommand("report", "collate a run directory into a report");
  rep->add_option("--config", o.config_path, "run configuration file");
  rep->add_option("--out", o.out_override, "run directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    fail_line("USAGE", e.what());
    return 2;
  }

  try {
    using namespace microdrive;
    if (gen->parsed()) {
      const RunConfig cfg = load_cfg(o);
      const GenDataSummary s = cmd_gen_data(cfg);
      std::printf("train: %d scenes (%s)\n", s.train.count, s.train.scenes_hash.c_str());
      std::printf("val:   %d scenes (%s)\n", s.val.count, s.val.scenes_hash.c_str());
      std::printf("test:  %d scenes (%s)\n", s.test.count, s.test.scenes_hash.c_str());
    } else if (pre->parsed()) {
      const RunConfig cfg = load_cfg(o);
      std::printf("pretrain checkpoint: %s\n", cmd_pretrain(cfg).c_str());
    } else if (sft->parsed()) {
      const RunConfig cfg = load_cfg(o);
      std::printf("sft checkpoint: %s\n", cmd_sft(cfg, o.checkpoint).c_str());
    } else if (rl->parsed()) {
      const RunConfig cfg = load_cfg(o);
      std::printf("rl checkpoint: %s\n", cmd_rl(cfg, o.checkpoint).c_str());
    } else if (ev->parsed()) {
      const RunConfig cfg = load_cfg(o);
      std::string ckpt = o.checkpoint;
      if (ckpt.empty()) {
        const std::string rl_ck = ckpt_path(cfg.out_dir, "rl");
        const std::string sft_ck = ckpt_path(cfg.out_dir, "sft");
        if (std::filesystem::exists(rl_ck)) {
          ckpt = rl_ck;
        } else if (std::filesystem::exists(sft_ck)) {
          ckpt = sft_ck;
        } else {
          throw IoError("no checkpoint found under " + cfg.out_dir +
                        "; pass --checkpoint (or --checkpoint expert)");
        }
      }
      const EvalReport r = cmd_eval(cfg, ckpt, o.split);
      std::printf("split=%s composite=%.4f l2(1/2/4s)=%.3f/%.3f/%.3f\n", o.split.c_str(),
                  r.mean_composite, r.l2_1s, r.l2_2s, r.l2_4s);
      for (const auto& [n, v] : r.best_of) std::printf("best-of-%d composite=%.4f\n", n, v);
      if (std::isfinite(r.spearman_bonus_l2)) {
        std::printf("spearman(bonus, L2)=%.3f over %d candidates\n", r.spearman_bonus_l2,
                    r.n_scatter);
      }
    } else if (rep->parsed()) {
      std::string out = o.out_override;
      if (out.empty()) {
        if (o.config_path.empty()) throw ConfigError("report needs --out or --config");
        out = microdrive::load_config(o.config_path).out_dir;
      }
      std::fputs(cmd_report(out).c_str(), stdout);
    }
  } catch (const microdrive::ConfigError& e) {
    fail_line("CONFIG", e.what());
    return 3;
  } catch (const microdrive::IoError& e) {
    fail_line("IO", e.what());
    return 4;
  } catch (const microdrive::TrainError& e) {
    fail_line("TRAIN", e.what());
    return 5;
  } catch (const std::exception& e) {
    fail_line("RUNTIME", e.what());
    return 5;
  }
  return 0;
}

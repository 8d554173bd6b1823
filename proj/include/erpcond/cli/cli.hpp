// Copyright (c) 2026 erpcond authors
// SPDX-License-Identifier: Apache-2.0
//
// Single command-line surface composing every module into reproducible
// experiments. Exposed as a callable (`run_cli`) so tests can drive commands
// in-process; tools/erpcond_main.cpp is a thin wrapper.
//
// Exit codes are a stable scripting contract:
//   0 success, 2 config error, 3 data error, 4 numeric/internal error.
// All JSON outputs are byte-identical across reruns with identical inputs and
// seeds; wall-clock timestamps are quarantined into provenance.json.

#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "erpcond/dsp/epoch_io.hpp"
#include "erpcond/dsp/filters.hpp"
#include "erpcond/dsp/preprocess.hpp"
#include "erpcond/explain/exports.hpp"
#include "erpcond/models/architectures.hpp"
#include "erpcond/models/checkpoint.hpp"
#include "erpcond/protocol/fold.hpp"
#include "erpcond/protocol/search.hpp"
#include "erpcond/protocol/training.hpp"
#include "erpcond/synth/generator.hpp"
#include "erpcond/synth/truth_io.hpp"

namespace erpcond::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumeric = 4;

// ---------------------------------------------------------------------------
// Experiment configuration: a single JSON file drives cmd_run. Validation
// reports the offending field path so schema violations are actionable.
// ---------------------------------------------------------------------------

struct ExperimentConfig {
  ArchitectureConfig arch;
  TrainConfig train;
  std::vector<int> increments{1, 2, 3, 4};
};

namespace detail {

inline void expect_object(const nlohmann::json& j, const std::string& path) {
  if (!j.is_object()) throw ConfigError(path + ": expected an object");
}

inline void check_known_keys(const nlohmann::json& j, const std::string& path,
                             const std::set<std::string>& allowed) {
  expect_object(j, path);
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (!allowed.count(key)) throw ConfigError(path + "." + key + ": unknown field");
  }
}

inline double get_number(const nlohmann::json& j, const std::string& path) {
  if (!j.is_number()) throw ConfigError(path + ": expected a number");
  return j.get<double>();
}

inline int get_int(const nlohmann::json& j, const std::string& path) {
  if (!j.is_number_integer()) throw ConfigError(path + ": expected an integer");
  return j.get<int>();
}

inline std::uint64_t get_seed(const nlohmann::json& j, const std::string& path) {
  if (!j.is_number_integer() || (j.is_number_integer() && j.get<std::int64_t>() < 0))
    throw ConfigError(path + ": expected a non-negative integer");
  return j.get<std::uint64_t>();
}

inline std::string get_string(const nlohmann::json& j, const std::string& path) {
  if (!j.is_string()) throw ConfigError(path + ": expected a string");
  return j.get<std::string>();
}

}  // namespace detail

inline nlohmann::json experiment_config_to_json(const ExperimentConfig& c) {
  return {{"architecture", arch_name(c.arch.arch)},
          {"window_s", c.arch.window_s},
          {"kernel_length", c.arch.kernel_length},
          {"dropout", c.arch.dropout_rate},
          {"train",
           {{"lr_initial", c.train.lr_initial},
            {"lr_decay_every", c.train.lr_decay_every},
            {"lr_decay_factor", c.train.lr_decay_factor},
            {"patience", c.train.patience},
            {"max_epochs", c.train.max_epochs},
            {"batch_size", c.train.batch_size},
            {"finetune_lr", c.train.finetune_lr},
            {"finetune_patience", c.train.finetune_patience},
            {"finetune_max_epochs", c.train.finetune_max_epochs},
            {"embedding_init", c.train.embedding_init}}},
          {"conditioning", c.train.conditioning ? cond_mode_name(*c.train.conditioning) : "none"},
          {"scaler", c.train.scaler == ScalerKind::standard ? "standard" : "robust"},
          {"loss",
           {{"kind", loss_kind_name(c.train.loss.kind)},
            {"pos_weight", c.train.loss.pos_weight},
            {"focal_gamma", c.train.loss.focal_gamma},
            {"focal_alpha", c.train.loss.focal_alpha},
            {"undersample_ratio", c.train.loss.undersample_ratio}}},
          {"seed", c.train.seed},
          {"increments", c.increments}};
}

inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  using namespace detail;
  check_known_keys(j, "config",
                   {"architecture", "window_s", "kernel_length", "dropout", "conditioning",
                    "scaler", "loss", "train", "seed", "increments"});
  ExperimentConfig c;

  if (!j.count("architecture")) throw ConfigError("config.architecture: missing required field");
  {
    const std::string an = get_string(j.at("architecture"), "config.architecture");
    try {
      c.arch.arch = arch_from_name(an);
    } catch (const std::exception&) {
      throw ConfigError("config.architecture: must be one of eegnet / p300mcnn / phinet, got '" +
                        an + "'");
    }
  }

  c.arch.window_s = j.count("window_s") ? get_number(j.at("window_s"), "config.window_s")
                                        : arch_default_window(c.arch.arch);
  if (j.count("kernel_length"))
    c.arch.kernel_length = get_int(j.at("kernel_length"), "config.kernel_length");
  if (j.count("dropout")) c.arch.dropout_rate = get_number(j.at("dropout"), "config.dropout");

  if (j.count("conditioning")) {
    const std::string cond = get_string(j.at("conditioning"), "config.conditioning");
    if (cond != "none") {
      try {
        c.train.conditioning = cond_mode_from_name(cond);
      } catch (const std::exception&) {
        throw ConfigError("config.conditioning: must be one of none / projection / film");
      }
    }
  }

  if (j.count("scaler")) {
    const std::string s = get_string(j.at("scaler"), "config.scaler");
    if (s != "standard" && s != "robust")
      throw ConfigError("config.scaler: must be 'standard' or 'robust'");
    c.train.scaler = s == "standard" ? ScalerKind::standard : ScalerKind::robust;
  }

  if (j.count("loss")) {
    const auto& l = j.at("loss");
    check_known_keys(l, "config.loss",
                     {"kind", "pos_weight", "focal_gamma", "focal_alpha", "undersample_ratio"});
    if (l.count("kind")) {
      const std::string kn = get_string(l.at("kind"), "config.loss.kind");
      try {
        c.train.loss.kind = loss_kind_from_name(kn);
      } catch (const std::exception&) {
        throw ConfigError(
            "config.loss.kind: must be one of weighted_bce / weighted_bce_undersample / focal, "
            "got '" + kn + "'");
      }
    }
    if (l.count("pos_weight"))
      c.train.loss.pos_weight = get_number(l.at("pos_weight"), "config.loss.pos_weight");
    if (l.count("focal_gamma"))
      c.train.loss.focal_gamma = get_number(l.at("focal_gamma"), "config.loss.focal_gamma");
    if (l.count("focal_alpha"))
      c.train.loss.focal_alpha = get_number(l.at("focal_alpha"), "config.loss.focal_alpha");
    if (l.count("undersample_ratio"))
      c.train.loss.undersample_ratio =
          get_number(l.at("undersample_ratio"), "config.loss.undersample_ratio");
  }

  if (j.count("train")) {
    const auto& t = j.at("train");
    check_known_keys(t, "config.train",
                     {"lr_initial", "lr_decay_every", "lr_decay_factor", "patience", "max_epochs",
                      "batch_size", "finetune_lr", "finetune_patience", "finetune_max_epochs",
                      "embedding_init"});
    if (t.count("lr_initial"))
      c.train.lr_initial = get_number(t.at("lr_initial"), "config.train.lr_initial");
    if (t.count("lr_decay_every"))
      c.train.lr_decay_every = get_int(t.at("lr_decay_every"), "config.train.lr_decay_every");
    if (t.count("lr_decay_factor"))
      c.train.lr_decay_factor = get_number(t.at("lr_decay_factor"), "config.train.lr_decay_factor");
    if (t.count("patience")) c.train.patience = get_int(t.at("patience"), "config.train.patience");
    if (t.count("max_epochs"))
      c.train.max_epochs = get_int(t.at("max_epochs"), "config.train.max_epochs");
    if (t.count("batch_size"))
      c.train.batch_size = get_int(t.at("batch_size"), "config.train.batch_size");
    if (t.count("finetune_lr"))
      c.train.finetune_lr = get_number(t.at("finetune_lr"), "config.train.finetune_lr");
    if (t.count("finetune_patience"))
      c.train.finetune_patience =
          get_int(t.at("finetune_patience"), "config.train.finetune_patience");
    if (t.count("finetune_max_epochs"))
      c.train.finetune_max_epochs =
          get_int(t.at("finetune_max_epochs"), "config.train.finetune_max_epochs");
    if (t.count("embedding_init")) {
      c.train.embedding_init = detail::get_string(t.at("embedding_init"), "config.train.embedding_init");
      if (c.train.embedding_init != "mean" && c.train.embedding_init != "random")
        throw ConfigError("config.train.embedding_init: must be 'mean' or 'random'");
    }
  }

  if (j.count("seed")) c.train.seed = detail::get_seed(j.at("seed"), "config.seed");

  if (j.count("increments")) {
    if (!j.at("increments").is_array())
      throw ConfigError("config.increments: expected an array of integers in 1..4");
    c.increments.clear();
    std::size_t i = 0;
    for (const auto& v : j.at("increments")) {
      const std::string path = "config.increments[" + std::to_string(i++) + "]";
      const int k = detail::get_int(v, path);
      if (k < 1 || k > 4) throw ConfigError(path + ": increment must lie in 1..4");
      if (std::count(c.increments.begin(), c.increments.end(), k))
        throw ConfigError(path + ": duplicate increment " + std::to_string(k));
      c.increments.push_back(k);
    }
    std::sort(c.increments.begin(), c.increments.end());
    if (c.increments.empty()) throw ConfigError("config.increments: must not be empty");
  }

  try {
    c.arch.validate();
  } catch (const ConfigError& e) {
    throw ConfigError("config: " + std::string(e.what()));
  }
  try {
    c.train.validate();
  } catch (const ConfigError& e) {
    throw ConfigError("config: " + std::string(e.what()));
  }
  return c;
}

inline ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in.good()) throw DataError("config file not found: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw ConfigError("config: " + path.string() + " is not valid JSON (" + e.what() + ")");
  }
  return experiment_config_from_json(j);
}

// ---------------------------------------------------------------------------
// Dataset on disk: manifest.json + truth.json + recordings/<id>/ containers.
// ---------------------------------------------------------------------------

inline constexpr const char* kDatasetKind = "erpcond-dataset";

inline std::vector<Recording> load_dataset(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in.good())
    throw DataError("dataset manifest not found: " + manifest_path.string() +
                    " (generate one with `erpcond synth`)");
  nlohmann::json m;
  try {
    in >> m;
  } catch (const std::exception& e) {
    throw DataError("dataset manifest " + manifest_path.string() + " is not valid JSON (" +
                    e.what() + ")");
  }
  if (!m.is_object() || m.value("kind", "") != kDatasetKind)
    throw DataError(manifest_path.string() + ": not an erpcond dataset manifest");

  std::vector<Recording> recs;
  for (const auto& name : m.at("recordings"))
    recs.push_back(load_recording(dir / "recordings" / name.get<std::string>()));
  if (recs.empty()) throw DataError("dataset " + dir.string() + " lists no recordings");
  return recs;
}

/// Fixed preprocessing chain: notch (50/60 Hz, Q 30) -> band-pass 2-15 Hz
/// (order 4) -> epochs [-0.1 s, window] with [-0.1, 0] baseline -> pooled ->
/// resampled to 125 Hz. Scaling happens later, inside each fold.
inline EpochSet preprocess_for_window(const std::vector<Recording>& recs, double window_s,
                                      int* dropped_events = nullptr) {
  std::vector<EpochSet> parts;
  int dropped = 0;
  for (const auto& rec : recs) {
    Recording filtered = apply_bandpass(apply_notch(rec, {50.0, 60.0}, 30.0), 2.0, 15.0, 4);
    EpochResult er = epoch(filtered, -0.1, window_s, {-0.1, 0.0});
    dropped += er.dropped_events;
    parts.push_back(std::move(er.set));
  }
  std::vector<const EpochSet*> ptrs;
  for (const auto& p : parts) ptrs.push_back(&p);
  if (dropped_events) *dropped_events = dropped;
  return resample_half(concat_epochs(ptrs));
}

namespace detail {

inline void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out.good()) throw DataError("cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
  if (!out.good()) throw DataError("failed writing " + path.string());
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in.good()) throw DataError("cannot read " + path.string());
  nlohmann::json j;
  in >> j;
  return j;
}

/// Timestamps live here and only here, keeping every other output
/// byte-identical across reruns.
inline void write_provenance(const std::filesystem::path& dir, const std::string& command,
                             const nlohmann::json& extra = nlohmann::json::object()) {
  nlohmann::json j = extra;
  j["command"] = command;
  j["written_unix"] = static_cast<std::int64_t>(
      std::chrono::duration_cast<std::chrono::seconds>(
          std::chrono::system_clock::now().time_since_epoch())
          .count());
  write_json_file(dir / "provenance.json", j);
}

/// Minimal-digit round-trip decimal form (what the JSON writer emits).
inline std::string number_repr(double v) { return nlohmann::json(v).dump(); }

struct Stats {
  double mean = 0.0;
  double stddev = 0.0;
  int n = 0;
};

inline Stats mean_std(const std::vector<double>& xs) {
  Stats s;
  s.n = static_cast<int>(xs.size());
  if (xs.empty()) return s;
  for (double x : xs) s.mean += x;
  s.mean /= static_cast<double>(xs.size());
  if (xs.size() >= 2) {
    double ss = 0.0;
    for (double x : xs) ss += (x - s.mean) * (x - s.mean);
    s.stddev = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return s;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// synth: write a synthetic cohort with ground truth.
// ---------------------------------------------------------------------------

struct SynthArgs {
  int subjects = 6;
  int sessions = 2;
  std::uint64_t seed = 7;
  double difficulty = 1.0;
  std::string out;
  bool force = false;
};

inline int cmd_synth(const SynthArgs& a, std::ostream& out) {
  const std::filesystem::path dir(a.out);
  if (std::filesystem::exists(dir) && !std::filesystem::is_empty(dir)) {
    if (!a.force)
      throw DataError("output directory " + dir.string() +
                      " is not empty; pass --force to overwrite it");
    std::filesystem::remove_all(dir);
  }
  std::filesystem::create_directories(dir / "recordings");

  const Cohort cohort = generate_cohort(a.subjects, a.sessions, a.seed, a.difficulty);

  nlohmann::json names = nlohmann::json::array();
  for (const auto& rec : cohort.recordings) {
    const std::string name = rec.subject_id + "_" + rec.session_id;
    save_recording(dir / "recordings" / name, rec);
    names.push_back(name);
  }

  CohortTruth truth;
  truth.profiles = cohort.profiles;
  truth.sessions_per_subject = cohort.sessions_per_subject;
  truth.difficulty = cohort.difficulty;
  truth.master_seed = cohort.master_seed;
  save_truth(dir / "truth.json", truth);

  detail::write_json_file(dir / "manifest.json",
                          {{"kind", kDatasetKind},
                           {"schema_version", 1},
                           {"subjects", a.subjects},
                           {"sessions_per_subject", a.sessions},
                           {"seed", a.seed},
                           {"difficulty", a.difficulty},
                           {"sfreq", kSynthSfreq},
                           {"events_per_session", kEventsPerSession},
                           {"targets_per_session", kTargetsPerSession},
                           {"recordings", names}});
  detail::write_provenance(dir, "synth");

  out << "synth: " << a.subjects << " subjects x " << a.sessions << " sessions -> "
      << cohort.recordings.size() << " recordings (" << kEventsPerSession
      << " events each, " << kTargetsPerSession << " targets) at " << dir.string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// run: LOSO pre-training, zero-shot evaluation and incremental fine-tuning.
// ---------------------------------------------------------------------------

struct RunArgs {
  std::string config;
  std::string data;
  std::string out;
  std::string stage = "full";
  std::vector<std::uint64_t> seeds;
  bool resume = false;
  int jobs = 1;
};

namespace detail {

struct FoldOutcome {
  std::uint64_t run_seed = 0;
  std::string fold_id;
  std::optional<double> pretrain_best;
  std::optional<double> zero_shot_mcc;
  std::map<int, double> ft_mean_mcc;  // increment k -> mean MCC over subsets
  std::vector<std::string> log_lines;
};

inline bool fresh_file(const std::filesystem::path& p, std::filesystem::file_time_type not_before) {
  std::error_code ec;
  const auto t = std::filesystem::last_write_time(p, ec);
  return !ec && t >= not_before;
}

/// One (seed, fold) unit of work; writes only inside its own fold directory.
inline FoldOutcome run_fold(const ExperimentConfig& cfg, const RunArgs& args, const EpochSet& es,
                            const FoldPlan& plan, std::uint64_t run_seed,
                            std::filesystem::file_time_type config_mtime) {
  namespace fs = std::filesystem;
  FoldOutcome oc;
  oc.run_seed = run_seed;
  oc.fold_id = plan.fold_id();

  const fs::path fold_dir =
      fs::path(args.out) / "runs" / ("seed_" + std::to_string(run_seed)) / plan.fold_id();
  const fs::path pre_dir = fold_dir / "pretrain";
  const fs::path ckpt_path = pre_dir / "checkpoint.bin";
  const bool want_pretrain = args.stage == "pretrain" || args.stage == "full";
  const bool want_finetune = args.stage == "finetune" || args.stage == "full";

  TrainConfig tcfg = cfg.train;
  tcfg.seed = hash_combine(run_seed, hash_str(plan.fold_id()));

  Checkpoint ckpt;
  bool have_ckpt = false;
  const bool may_reuse = args.resume || !want_pretrain;
  if (may_reuse && fs::exists(ckpt_path) && fresh_file(ckpt_path, config_mtime)) {
    ckpt = load_checkpoint(ckpt_path);
    have_ckpt = true;
    oc.pretrain_best = ckpt.best_val_mcc;
    oc.log_lines.push_back("  " + plan.fold_id() + " seed " + std::to_string(run_seed) +
                           ": pretrain reused (best val MCC " + number_repr(ckpt.best_val_mcc) +
                           ")");
  }

  if (!have_ckpt) {
    if (!want_pretrain)
      throw DataError(plan.fold_id() + ": no usable pre-trained checkpoint at " +
                      ckpt_path.string() + "; run --stage pretrain (or full) first");
    Model model = build(cfg.arch, hash_combine(tcfg.seed, 0xB01Du));
    ckpt = pretrain(std::move(model), es, plan, tcfg);
    have_ckpt = true;
    fs::create_directories(pre_dir);
    save_checkpoint(ckpt_path, ckpt);
    write_json_file(pre_dir / "metrics.json",
                    {{"stage", "pretrain"},
                     {"fold", plan.fold_id()},
                     {"run_seed", run_seed},
                     {"train_seed", tcfg.seed},
                     {"best_val_mcc", ckpt.best_val_mcc},
                     {"epoch_of_best", ckpt.epoch_of_best},
                     {"epochs_trained", ckpt.val_history.size()},
                     {"val_history", ckpt.val_history}});
    oc.pretrain_best = ckpt.best_val_mcc;
    oc.log_lines.push_back("  " + plan.fold_id() + " seed " + std::to_string(run_seed) +
                           ": pretrain best val MCC " + number_repr(ckpt.best_val_mcc) + " (" +
                           std::to_string(ckpt.val_history.size()) + " epochs)");
  }

  // Zero-shot evaluation of the pre-trained model on the held-out subject.
  const fs::path eval_path = fold_dir / "eval" / "metrics.json";
  MetricsReport zs;
  if (args.resume && fs::exists(eval_path) &&
      fresh_file(eval_path, fs::last_write_time(ckpt_path))) {
    zs = MetricsReport::from_json(read_json_file(eval_path));
  } else {
    zs = evaluate(ckpt, es, plan);
    fs::create_directories(fold_dir / "eval");
    nlohmann::json j = zs.to_json();
    j["stage"] = "zero_shot";
    j["fold"] = plan.fold_id();
    write_json_file(eval_path, j);
  }
  oc.zero_shot_mcc = zs.mcc;
  oc.log_lines.push_back("  " + plan.fold_id() + " seed " + std::to_string(run_seed) +
                         ": zero-shot MCC " + number_repr(zs.mcc));

  if (want_finetune) {
    for (int k : cfg.increments) {
      const fs::path inc_dir = fold_dir / "finetune" / ("increment_" + std::to_string(k));
      const fs::path inc_path = inc_dir / "metrics.json";
      if (args.resume && fs::exists(inc_path) &&
          fresh_file(inc_path, fs::last_write_time(ckpt_path))) {
        oc.ft_mean_mcc[k] = read_json_file(inc_path).at("mcc_mean").get<double>();
        oc.log_lines.push_back("  " + plan.fold_id() + " seed " + std::to_string(run_seed) +
                               ": FT I" + std::to_string(k) + " reused (mean MCC " +
                               number_repr(oc.ft_mean_mcc[k]) + ")");
        continue;
      }
      const IncrementResult inc = finetune_increment(ckpt, es, plan, k, tcfg);
      fs::create_directories(inc_dir);
      nlohmann::json subsets = nlohmann::json::array();
      for (std::size_t s = 0; s < inc.subsets.size(); ++s) {
        nlohmann::json rj = inc.reports[s].to_json();
        rj["batches"] = inc.subsets[s];
        subsets.push_back(rj);
      }
      write_json_file(inc_path, {{"stage", "finetune"},
                                 {"fold", plan.fold_id()},
                                 {"run_seed", run_seed},
                                 {"k", k},
                                 {"mcc_mean", inc.aggregate_mean.mcc},
                                 {"mcc_std", inc.mcc_std},
                                 {"balanced_accuracy_mean", inc.aggregate_mean.balanced_accuracy},
                                 {"roc_auc_mean", inc.aggregate_mean.roc_auc},
                                 {"per_subset", subsets}});
      oc.ft_mean_mcc[k] = inc.aggregate_mean.mcc;
      oc.log_lines.push_back("  " + plan.fold_id() + " seed " + std::to_string(run_seed) +
                             ": FT I" + std::to_string(k) + " mean MCC " +
                             number_repr(inc.aggregate_mean.mcc));
    }
  }
  return oc;
}

}  // namespace detail

inline int cmd_run(const RunArgs& a, std::ostream& out, std::ostream& err) {
  namespace fs = std::filesystem;
  if (a.stage != "pretrain" && a.stage != "finetune" && a.stage != "full")
    throw ConfigError("stage must be one of pretrain / finetune / full, got '" + a.stage + "'");
  if (a.jobs < 1) throw ConfigError("--jobs must be at least 1");

  const ExperimentConfig cfg = load_experiment_config(a.config);
  const auto config_mtime = fs::last_write_time(a.config);
  std::vector<std::uint64_t> seeds = a.seeds;
  if (seeds.empty()) seeds.push_back(cfg.train.seed);

  int dropped = 0;
  const std::vector<Recording> recs = load_dataset(a.data);
  const EpochSet es = preprocess_for_window(recs, cfg.arch.window_s, &dropped);
  if (dropped > 0) err << "warning: " << dropped << " events dropped at recording bounds\n";

  fs::create_directories(fs::path(a.out));
  detail::write_json_file(fs::path(a.out) / "manifest.json",
                          {{"command", "run"},
                           {"config", experiment_config_to_json(cfg)},
                           {"config_path", a.config},
                           {"dataset", a.data},
                           {"stage", a.stage},
                           {"seeds", seeds}});
  detail::write_provenance(fs::path(a.out), "run", {{"jobs", a.jobs}});

  // Build all (seed, fold) work items up front so workers never touch shared
  // state; each item writes only inside its own fold directory.
  struct WorkItem {
    std::uint64_t seed;
    const FoldPlan* plan;
  };
  std::vector<FoldPlanResult> plan_results;
  plan_results.reserve(seeds.size());
  for (std::uint64_t s : seeds) {
    plan_results.push_back(make_fold_plans(es, s));
    for (const auto& w : plan_results.back().warnings) err << "warning: " << w << "\n";
  }
  std::vector<WorkItem> items;
  for (std::size_t i = 0; i < seeds.size(); ++i)
    for (const auto& plan : plan_results[i].plans) items.push_back({seeds[i], &plan});

  std::vector<detail::FoldOutcome> outcomes(items.size());
  std::vector<std::exception_ptr> failures(items.size());
  std::atomic<std::size_t> next{0};
  const int n_threads = std::min<int>(a.jobs, static_cast<int>(items.size()));
  auto worker = [&] {
    for (std::size_t i = next.fetch_add(1); i < items.size(); i = next.fetch_add(1)) {
      try {
        outcomes[i] =
            detail::run_fold(cfg, a, es, *items[i].plan, items[i].seed, config_mtime);
      } catch (...) {
        failures[i] = std::current_exception();
      }
    }
  };
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (std::size_t i = 0; i < items.size(); ++i)
    if (failures[i]) std::rethrow_exception(failures[i]);
  for (const auto& oc : outcomes)
    for (const auto& line : oc.log_lines) out << line << "\n";

  // Table-shaped summary: one row per (model, conditioning), stage columns
  // zero-shot and FT I1..I4, mean +/- std across folds x seeds.
  auto stage_block = [](const std::vector<std::pair<std::string, double>>& values) {
    std::vector<double> xs;
    nlohmann::json per_run = nlohmann::json::object();
    for (const auto& [key, v] : values) {
      xs.push_back(v);
      per_run[key] = v;
    }
    const detail::Stats st = detail::mean_std(xs);
    return nlohmann::json{
        {"mean", st.mean}, {"std", st.stddev}, {"n", st.n}, {"values", per_run}};
  };

  nlohmann::json stages = nlohmann::json::object();
  std::vector<std::pair<std::string, double>> zs_vals;
  std::map<int, std::vector<std::pair<std::string, double>>> ft_vals;
  for (const auto& oc : outcomes) {
    const std::string key = "seed_" + std::to_string(oc.run_seed) + "/" + oc.fold_id;
    if (oc.zero_shot_mcc) zs_vals.push_back({key, *oc.zero_shot_mcc});
    for (const auto& [k, v] : oc.ft_mean_mcc) ft_vals[k].push_back({key, v});
  }
  stages["zero_shot"] = stage_block(zs_vals);
  for (const auto& [k, vals] : ft_vals) stages["ft_i" + std::to_string(k)] = stage_block(vals);

  const nlohmann::json summary = {
      {"metric", "mcc"},
      {"model", arch_name(cfg.arch.arch)},
      {"conditioning", cfg.train.conditioning ? cond_mode_name(*cfg.train.conditioning) : "none"},
      {"seeds", seeds},
      {"n_folds", plan_results.front().plans.size()},
      {"stages", stages}};
  detail::write_json_file(fs::path(a.out) / "summary.json", summary);

  out << "run: " << plan_results.front().plans.size() << " folds x " << seeds.size()
      << " seed(s), stage " << a.stage << "\n";
  for (const auto& [name, block] : stages.items())
    out << "  " << name << ": " << detail::number_repr(block.at("mean").get<double>()) << " +/- "
        << detail::number_repr(block.at("std").get<double>()) << " (n="
        << block.at("n").get<int>() << ")\n";
  out << "summary written to " << (fs::path(a.out) / "summary.json").string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// explain: export model introspection artifacts for a checkpoint.
// ---------------------------------------------------------------------------

struct ExplainArgs {
  std::string checkpoint;
  std::string data;
  std::string out;
  std::uint64_t seed = 0;
  int clusters = 2;
  double n_cycles = 7.0;
  bool svg = false;
};

inline int cmd_explain(const ExplainArgs& a, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(a.checkpoint);
  const std::vector<Recording> recs = load_dataset(a.data);
  const EpochSet es = preprocess_for_window(recs, ckpt.model.cfg.window_s);

  ExplainOptions opt;
  opt.seed = a.seed;
  opt.clusters = a.clusters;
  opt.n_cycles = a.n_cycles;
  opt.svg = a.svg;
  opt.checkpoint_id = std::filesystem::path(a.checkpoint).filename().string();

  const auto files = export_explain(a.out, ckpt, es, opt);
  detail::write_provenance(a.out, "explain");
  out << "explain: wrote " << files.size() << " file(s) to " << a.out << "\n";
  for (const auto& f : files) out << "  " << f << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// search: budgeted random hyper-parameter search on the median subject's fold.
// ---------------------------------------------------------------------------

struct SearchArgs {
  std::string space;  // optional JSON file; defaults if empty
  std::string data;
  std::string out;
  int budget = 0;
  std::uint64_t seed = 7;
  int trial_epochs = 40;
  int prepass_trials = 2;
  int prepass_epochs = 10;
  std::string arch = "eegnet";
  std::string conditioning = "none";
};

inline SearchSpace parse_search_space(const nlohmann::json& j) {
  using namespace detail;
  check_known_keys(j, "space",
                   {"windows", "scalers", "losses", "kernel_fraction", "lr_log10", "dropout"});
  SearchSpace sp;
  if (j.count("windows")) {
    if (!j.at("windows").is_array()) throw ConfigError("space.windows: expected an array");
    sp.windows.clear();
    std::size_t i = 0;
    for (const auto& v : j.at("windows"))
      sp.windows.push_back(get_number(v, "space.windows[" + std::to_string(i++) + "]"));
  }
  if (j.count("scalers")) {
    if (!j.at("scalers").is_array()) throw ConfigError("space.scalers: expected an array");
    sp.scalers.clear();
    std::size_t i = 0;
    for (const auto& v : j.at("scalers")) {
      const std::string path = "space.scalers[" + std::to_string(i++) + "]";
      const std::string s = get_string(v, path);
      if (s != "standard" && s != "robust")
        throw ConfigError(path + ": must be 'standard' or 'robust'");
      sp.scalers.push_back(s == "standard" ? ScalerKind::standard : ScalerKind::robust);
    }
  }
  if (j.count("losses")) {
    if (!j.at("losses").is_array()) throw ConfigError("space.losses: expected an array");
    sp.losses.clear();
    std::size_t i = 0;
    for (const auto& v : j.at("losses")) {
      const std::string path = "space.losses[" + std::to_string(i++) + "]";
      const std::string kn = get_string(v, path);
      try {
        sp.losses.push_back(loss_kind_from_name(kn));
      } catch (const std::exception&) {
        throw ConfigError(path +
                          ": must be one of weighted_bce / weighted_bce_undersample / focal, "
                          "got '" + kn + "'");
      }
    }
  }
  auto range = [&](const char* key, double& lo, double& hi) {
    if (!j.count(key)) return;
    const std::string path = std::string("space.") + key;
    const auto& r = j.at(key);
    if (!r.is_array() || r.size() != 2)
      throw ConfigError(path + ": expected a [lo, hi] pair");
    lo = get_number(r[0], path + "[0]");
    hi = get_number(r[1], path + "[1]");
  };
  range("kernel_fraction", sp.kernel_fraction_lo, sp.kernel_fraction_hi);
  range("lr_log10", sp.lr_log10_lo, sp.lr_log10_hi);
  range("dropout", sp.dropout_lo, sp.dropout_hi);
  try {
    sp.validate();
  } catch (const ConfigError& e) {
    throw ConfigError("space: " + std::string(e.what()));
  }
  return sp;
}

inline int cmd_search(const SearchArgs& a, std::ostream& out) {
  namespace fs = std::filesystem;
  if (a.budget < 1) throw ConfigError("--budget must be at least 1");
  if (a.trial_epochs < 1) throw ConfigError("--trial-epochs must be at least 1");
  const Arch arch = arch_from_name(a.arch);
  std::optional<CondMode> conditioning;
  if (a.conditioning != "none") conditioning = cond_mode_from_name(a.conditioning);

  SearchSpace space;
  if (!a.space.empty()) {
    std::ifstream in(a.space);
    if (!in.good()) throw DataError("search space file not found: " + a.space);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const std::exception& e) {
      throw ConfigError("space: " + a.space + " is not valid JSON (" + e.what() + ")");
    }
    space = parse_search_space(j);
  }

  const std::vector<Recording> recs = load_dataset(a.data);

  // Preprocess once per distinct window; the filter chain is window-agnostic
  // but epoch geometry is not.
  std::map<long, EpochSet> es_by_window;
  std::map<long, FoldPlanResult> plans_by_window;
  for (double w : space.windows) {
    const long key = std::lround(w * 1000.0);
    if (es_by_window.count(key)) continue;
    es_by_window[key] = preprocess_for_window(recs, w);
    plans_by_window[key] = make_fold_plans(es_by_window[key], a.seed);
  }

  auto plan_for = [&](long key, const std::string& subject) -> const FoldPlan& {
    for (const auto& p : plans_by_window.at(key).plans)
      if (p.held_out_subject == subject) return p;
    throw DataError("search: no fold plan for subject " + subject);
  };

  auto short_pretrain = [&](const HyperParams& p, const std::string& subject, int max_epochs) {
    ArchitectureConfig ac;
    ac.arch = arch;
    TrainConfig tc;
    tc.conditioning = conditioning;
    tc.seed = hash_combine(a.seed, 0x0B7EC7u);
    apply_hyper_params(p, ac, tc);
    tc.max_epochs = max_epochs;
    const long key = std::lround(p.window_s * 1000.0);
    Model m = build(ac, hash_combine(tc.seed, 0xB01Du));
    return pretrain(std::move(m), es_by_window.at(key), plan_for(key, subject), tc);
  };

  // Step 1 (logged): abbreviated LOSO pre-pass across all subjects. Each fold
  // hosts the same few sampled trials; the per-fold validation MCCs pick the
  // subject whose mean sits closest to the cohort mean.
  const long first_key = std::lround(space.windows.front() * 1000.0);
  RandomSampler presampler(hash_combine(a.seed, 0x9EA55u));
  std::vector<HyperParams> pre_params;
  for (int t = 0; t < a.prepass_trials; ++t) pre_params.push_back(presampler.next(space));
  std::map<std::string, std::vector<double>> per_subject;
  for (const auto& plan : plans_by_window.at(first_key).plans) {
    for (const auto& p : pre_params)
      per_subject[plan.held_out_subject].push_back(
          short_pretrain(p, plan.held_out_subject, a.prepass_epochs).best_val_mcc);
    out << "  pre-pass " << plan.held_out_subject << ": mean val MCC "
        << detail::number_repr(detail::mean_std(per_subject[plan.held_out_subject]).mean) << "\n";
  }
  const std::string median = median_subject(per_subject);
  out << "search: median subject " << median << " hosts the search fold\n";

  // Step 2 (logged): budgeted random search on that fold, validation MCC as
  // the objective.
  int trial_no = 0;
  auto objective = [&](const HyperParams& p) {
    const Checkpoint ck = short_pretrain(p, median, a.trial_epochs);
    out << "  trial " << trial_no++ << ": window " << p.window_s << "s, "
        << loss_kind_name(p.loss) << ", lr " << detail::number_repr(p.lr_initial)
        << " -> val MCC " << detail::number_repr(ck.best_val_mcc) << "\n";
    return ck.best_val_mcc;
  };

  const SearchResult result = hyper_search(space, a.budget, objective, a.seed);

  fs::create_directories(fs::path(a.out));
  {
    std::ostringstream csv;
    csv << "index,kernel_fraction,window_s,scaler,loss,lr_initial,dropout,objective\n";
    for (const auto& t : result.trials) {
      csv << t.index << ',' << detail::number_repr(t.params.kernel_fraction) << ','
          << detail::number_repr(t.params.window_s) << ','
          << (t.params.scaler == ScalerKind::standard ? "standard" : "robust") << ','
          << loss_kind_name(t.params.loss) << ',' << detail::number_repr(t.params.lr_initial)
          << ',' << detail::number_repr(t.params.dropout) << ','
          << detail::number_repr(t.objective) << '\n';
    }
    std::ofstream f(fs::path(a.out) / "trials.csv", std::ios::binary | std::ios::trunc);
    if (!f.good()) throw DataError("cannot write trials.csv in " + a.out);
    f << csv.str();
  }

  // best_config.json is a complete experiment config, directly usable by
  // `erpcond run --config`.
  {
    ExperimentConfig best;
    best.arch.arch = arch;
    best.train.conditioning = conditioning;
    best.train.seed = a.seed;
    apply_hyper_params(result.best().params, best.arch, best.train);
    detail::write_json_file(fs::path(a.out) / "best_config.json",
                            experiment_config_to_json(best));
  }

  nlohmann::json prepass_trials = nlohmann::json::array();
  for (const auto& p : pre_params) prepass_trials.push_back(hyper_params_to_json(p));
  detail::write_json_file(fs::path(a.out) / "search_log.json",
                          {{"prepass",
                            {{"trials", prepass_trials},
                             {"epochs", a.prepass_epochs},
                             {"per_subject_val_mcc", per_subject}}},
                           {"median_subject", median},
                           {"budget", a.budget},
                           {"seed", a.seed},
                           {"trial_epochs", a.trial_epochs},
                           {"architecture", arch_name(arch)},
                           {"conditioning", a.conditioning},
                           {"search", result.log_to_json()}});
  detail::write_provenance(fs::path(a.out), "search");

  out << "search: best trial #" << result.best().index << " with val MCC "
      << detail::number_repr(result.best().objective) << "; wrote best_config.json, trials.csv, "
      << "search_log.json to " << a.out << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// Entry point shared by the binary and in-process tests.
// ---------------------------------------------------------------------------

inline int run_cli(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"erpcond: subject-conditioned ERP classification toolkit"};
  app.require_subcommand(1);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic ERP cohort with ground truth");
  synth->add_option("--subjects", sa.subjects, "Number of subjects")->check(CLI::Range(2, 1000));
  synth->add_option("--sessions", sa.sessions, "Sessions per subject")->check(CLI::Range(1, 100));
  synth->add_option("--seed", sa.seed, "Master seed");
  synth->add_option("--difficulty", sa.difficulty, "Noise scale factor (0 = noise-free)")
      ->check(CLI::NonNegativeNumber);
  synth->add_option("--out", sa.out, "Output dataset directory")->required();
  synth->add_flag("--force", sa.force, "Overwrite a non-empty output directory");

  RunArgs ra;
  auto* run = app.add_subcommand("run", "Run LOSO pre-training and incremental fine-tuning");
  run->add_option("--config", ra.config, "Experiment config JSON")->required();
  run->add_option("--data", ra.data, "Dataset directory (from `synth`)")->required();
  run->add_option("--out", ra.out, "Results directory")->required();
  run->add_option("--stage", ra.stage, "Pipeline stage")
      ->check(CLI::IsMember({"pretrain", "finetune", "full"}));
  run->add_option("--seeds", ra.seeds, "Comma-separated run seeds (default: config seed)")
      ->delimiter(',');
  run->add_flag("--resume", ra.resume, "Reuse completed folds (checkpoint mtime check)");
  run->add_option("--jobs", ra.jobs, "Parallel fold workers")
      ->envname("ERPCOND_JOBS")
      ->check(CLI::Range(1, 256));

  ExplainArgs ea;
  auto* explain = app.add_subcommand("explain", "Export model introspection artifacts");
  explain->add_option("--checkpoint", ea.checkpoint, "Checkpoint file")->required();
  explain->add_option("--data", ea.data, "Dataset directory")->required();
  explain->add_option("--out", ea.out, "Export directory")->required();
  explain->add_option("--seed", ea.seed, "Clustering seed");
  explain->add_option("--clusters", ea.clusters, "Requested embedding clusters")
      ->check(CLI::Range(1, 64));
  explain->add_option("--cycles", ea.n_cycles, "Morlet cycles (>= 3)");
  explain->add_flag("--svg", ea.svg, "Also write schematic SVG renders");

  SearchArgs ga;
  auto* search = app.add_subcommand("search", "Budgeted random hyper-parameter search");
  search->add_option("--space", ga.space, "Search space JSON (defaults if omitted)");
  search->add_option("--data", ga.data, "Dataset directory")->required();
  search->add_option("--out", ga.out, "Output directory")->required();
  search->add_option("--budget", ga.budget, "Number of trials")->required();
  search->add_option("--seed", ga.seed, "Search seed");
  search->add_option("--trial-epochs", ga.trial_epochs, "Max pre-training epochs per trial");
  search->add_option("--prepass-trials", ga.prepass_trials,
                     "Abbreviated trials per fold in the median-subject pre-pass")
      ->check(CLI::Range(1, 64));
  search->add_option("--prepass-epochs", ga.prepass_epochs,
                     "Max pre-training epochs per pre-pass trial")
      ->check(CLI::Range(1, 1000));
  search->add_option("--arch", ga.arch, "Architecture under search")
      ->check(CLI::IsMember({"eegnet", "p300mcnn", "phinet"}));
  search->add_option("--conditioning", ga.conditioning, "Conditioning mechanism")
      ->check(CLI::IsMember({"none", "projection", "film"}));

  int rc = kExitOk;
  synth->callback([&] { rc = cmd_synth(sa, out); });
  run->callback([&] { rc = cmd_run(ra, out, err); });
  explain->callback([&] { rc = cmd_explain(ea, out); });
  search->callback([&] { rc = cmd_search(ga, out); });

  std::reverse(args.begin(), args.end());
  try {
    app.parse(std::move(args));
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return kExitNumeric;
  }
  return rc;
}

}  // namespace erpcond::cli

// Copyright (c) 2026 erpcond authors
// SPDX-License-Identifier: Apache-2.0
//
// Training stages: subject-pooled pre-training with early stopping on the
// validation MCC, incremental fine-tuning on the held-out subject under the
// freeze rules (head only without conditioning, embedding row only with it),
// and checkpoint evaluation on the test batches.

#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "erpcond/core/optimizer.hpp"
#include "erpcond/dsp/preprocess.hpp"
#include "erpcond/models/checkpoint.hpp"
#include "erpcond/protocol/fold.hpp"
#include "erpcond/train/losses.hpp"
#include "erpcond/train/metrics.hpp"

namespace erpcond {

struct TrainConfig {
  double lr_initial = 1e-3;
  int lr_decay_every = 20;      // epochs
  double lr_decay_factor = 10.0;
  int patience = 10;            // pre-training early-stopping patience
  int max_epochs = 200;
  int batch_size = 120;
  LossConfig loss;              // loss.pos_weight <= 0 means "fold ratio"
  ScalerKind scaler = ScalerKind::standard;
  std::optional<CondMode> conditioning;
  double finetune_lr = 5e-4;
  int finetune_patience = 5;
  int finetune_max_epochs = 300;
  std::string embedding_init = "mean";  // unseen-subject row strategy
  std::uint64_t seed = 0;

  void validate() const {
    if (!(lr_initial > 0)) throw ConfigError("train: lr_initial must be positive");
    if (lr_decay_every <= 0) throw ConfigError("train: lr_decay_every must be positive");
    if (!(lr_decay_factor > 1)) throw ConfigError("train: lr_decay_factor must exceed 1");
    if (patience <= 0) throw ConfigError("train: patience must be positive");
    if (max_epochs <= 0) throw ConfigError("train: max_epochs must be positive");
    if (batch_size <= 0) throw ConfigError("train: batch_size must be positive");
    if (!(finetune_lr > 0)) throw ConfigError("train: finetune_lr must be positive");
    if (finetune_patience <= 0) throw ConfigError("train: finetune_patience must be positive");
    if (finetune_max_epochs <= 0) throw ConfigError("train: finetune_max_epochs must be positive");
    if (embedding_init != "mean" && embedding_init != "random")
      throw ConfigError("train: embedding_init must be mean|random");
    if (!(loss.focal_gamma >= 0)) throw ConfigError("loss: focal_gamma must be non-negative");
    if (!(loss.focal_alpha > 0 && loss.focal_alpha < 1))
      throw ConfigError("loss: focal_alpha must lie in (0,1)");
    if (!(loss.undersample_ratio >= 1)) throw ConfigError("loss: undersample_ratio must be >= 1");
  }
};

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
  return {{"lr_initial", c.lr_initial},
          {"lr_decay_every", c.lr_decay_every},
          {"lr_decay_factor", c.lr_decay_factor},
          {"patience", c.patience},
          {"max_epochs", c.max_epochs},
          {"batch_size", c.batch_size},
          {"loss",
           {{"kind", loss_kind_name(c.loss.kind)},
            {"pos_weight", c.loss.pos_weight},
            {"focal_gamma", c.loss.focal_gamma},
            {"focal_alpha", c.loss.focal_alpha},
            {"undersample_ratio", c.loss.undersample_ratio}}},
          {"scaler", c.scaler == ScalerKind::standard ? "standard" : "robust"},
          {"conditioning", c.conditioning ? cond_mode_name(*c.conditioning) : "none"},
          {"finetune_lr", c.finetune_lr},
          {"finetune_patience", c.finetune_patience},
          {"finetune_max_epochs", c.finetune_max_epochs},
          {"embedding_init", c.embedding_init},
          {"seed", c.seed}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.lr_initial = j.at("lr_initial").get<double>();
  c.lr_decay_every = j.at("lr_decay_every").get<int>();
  c.lr_decay_factor = j.at("lr_decay_factor").get<double>();
  c.patience = j.at("patience").get<int>();
  c.max_epochs = j.at("max_epochs").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  const auto& l = j.at("loss");
  c.loss.kind = loss_kind_from_name(l.at("kind").get<std::string>());
  c.loss.pos_weight = l.at("pos_weight").get<double>();
  c.loss.focal_gamma = l.at("focal_gamma").get<double>();
  c.loss.focal_alpha = l.at("focal_alpha").get<double>();
  c.loss.undersample_ratio = l.at("undersample_ratio").get<double>();
  c.scaler = j.at("scaler").get<std::string>() == "standard" ? ScalerKind::standard
                                                             : ScalerKind::robust;
  const std::string cond = j.at("conditioning").get<std::string>();
  if (cond != "none") c.conditioning = cond_mode_from_name(cond);
  c.finetune_lr = j.at("finetune_lr").get<double>();
  c.finetune_patience = j.at("finetune_patience").get<int>();
  c.finetune_max_epochs = j.value("finetune_max_epochs", 300);
  c.embedding_init = j.at("embedding_init").get<std::string>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

/// Step-decayed learning rate: lr_initial divided by `factor` once per
/// completed `decay_every`-epoch block.
inline double scheduled_lr(double lr_initial, int decay_every, double factor, int epoch) {
  if (decay_every <= 0) throw ConfigError("lr schedule: decay_every must be positive");
  return lr_initial / std::pow(factor, static_cast<double>(epoch / decay_every));
}

/// Strict-improvement early stopping: remembers the first epoch achieving the
/// maximum metric and asks to stop after `patience` consecutive epochs without
/// a new maximum.
struct EarlyStopper {
  int patience;
  double best = -std::numeric_limits<double>::infinity();
  int best_epoch = -1;
  int stagnant = 0;

  explicit EarlyStopper(int p) : patience(p) {
    if (p <= 0) throw ConfigError("early stopping: patience must be positive");
  }

  /// Returns true when `value` strictly improves on the running best.
  bool observe(double value, int epoch) {
    if (value > best) {
      best = value;
      best_epoch = epoch;
      stagnant = 0;
      return true;
    }
    ++stagnant;
    return false;
  }

  bool should_stop() const { return stagnant >= patience; }
};

namespace detail {

/// Index of the stimulus-onset sample within an epoch.
inline int onset_sample(const EpochSet& es) {
  return static_cast<int>(std::lround(es.t0_offset * es.sfreq));
}

/// Copies the post-onset model window of the chosen epochs into a float
/// (n, channels, window) batch, applying the scaler on the fly.
inline TensorF model_window_batch(const EpochSet& es, const std::vector<int>& idx,
                                  const ArchitectureConfig& cfg, const Scaler* scaler) {
  const int k0 = onset_sample(es);
  const int want = cfg.window_samples();
  if (es.samples() - k0 != want)
    throw ConfigError("model window: epochs carry " + std::to_string(es.samples() - k0) +
                      " post-onset samples but the architecture needs " + std::to_string(want));
  if (es.channels() != cfg.n_channels)
    throw ConfigError("model window: epochs have " + std::to_string(es.channels()) +
                      " channels, architecture expects " + std::to_string(cfg.n_channels));
  if (scaler && static_cast<int>(scaler->location.size()) != es.channels())
    throw DataError("model window: scaler channel count mismatch");

  TensorF out({static_cast<int>(idx.size()), cfg.n_channels, want});
  const std::size_t s = static_cast<std::size_t>(es.samples());
  float* dst = out.ptr();
  for (int i : idx) {
    if (i < 0 || i >= es.epochs.dim(0)) throw DataError("model window: epoch index out of range");
    const double* src = es.epochs.ptr() + static_cast<std::size_t>(i) * es.channels() * s;
    for (int c = 0; c < es.channels(); ++c) {
      const double loc = scaler ? scaler->location[static_cast<std::size_t>(c)] : 0.0;
      const double inv = scaler ? 1.0 / scaler->scale[static_cast<std::size_t>(c)] : 1.0;
      const double* row = src + static_cast<std::size_t>(c) * s + k0;
      for (int t = 0; t < want; ++t) *dst++ = static_cast<float>((row[t] - loc) * inv);
    }
  }
  return out;
}

inline std::vector<int> labels_at(const EpochSet& es, const std::vector<int>& idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (int i : idx) out.push_back(es.labels[static_cast<std::size_t>(i)]);
  return out;
}

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

/// Eval-mode probabilities for the chosen epochs, conditioning on each
/// epoch's own subject when the model carries a table.
inline std::vector<double> predict_probs(const Model& m, const EpochSet& es,
                                         const std::vector<int>& idx, const Scaler* scaler) {
  std::vector<double> probs;
  probs.reserve(idx.size());
  const std::size_t chunk = 512;
  for (std::size_t at = 0; at < idx.size(); at += chunk) {
    std::vector<int> part(idx.begin() + static_cast<long>(at),
                          idx.begin() + static_cast<long>(std::min(idx.size(), at + chunk)));
    TensorF x = model_window_batch(es, part, m.cfg, scaler);
    TensorF h = extract_features(m, x);
    std::vector<double> p;
    if (m.conditioning) {
      const int d = m.cfg.feature_dim;
      TensorF cond({static_cast<int>(part.size()), d});
      for (std::size_t i = 0; i < part.size(); ++i) {
        const TensorF& row =
            m.conditioning->lookup(es.subject_ids[static_cast<std::size_t>(part[i])]);
        condition_forward_item(m.conditioning->mode(), h.ptr() + i * static_cast<std::size_t>(d),
                               row.ptr(), cond.ptr() + i * static_cast<std::size_t>(d), d);
      }
      p = classify(m, cond);
    } else {
      p = classify(m, h);
    }
    probs.insert(probs.end(), p.begin(), p.end());
  }
  return probs;
}

/// Resolves a "use the fold's class ratio" pos_weight sentinel.
inline LossConfig resolve_loss(LossConfig loss, const std::vector<int>& labels) {
  if (loss.pos_weight <= 0) {
    long long t = 0;
    for (int y : labels) t += (y == 1);
    const long long nt = static_cast<long long>(labels.size()) - t;
    if (t == 0) throw DataError("loss: training set has no targets");
    loss.pos_weight = static_cast<double>(nt) / static_cast<double>(t);
  }
  loss.validate();
  return loss;
}

inline std::string row_param_name(const std::string& subject) { return "cond.row." + subject; }

}  // namespace detail

/// Pools all non-held-out epochs, fits the fold scaler on the training split
/// only, and trains extractor + head (+ embedding table when conditioning is
/// enabled) with Adam, decaying the learning rate every `lr_decay_every`
/// epochs and early-stopping on the validation MCC.
inline Checkpoint pretrain(Model model, const EpochSet& es, const FoldPlan& plan,
                           const TrainConfig& cfg) {
  cfg.validate();
  EpochSet train_set = select_epochs(es, plan.train_idx);
  const EpochSet val_set = select_epochs(es, plan.val_idx);
  if (cfg.loss.kind == LossKind::weighted_bce_undersample)
    train_set = undersample(train_set, cfg.loss.undersample_ratio,
                            hash_combine(cfg.seed, 0x05A3));

  const Scaler scaler = fit_scaler(cfg.scaler, train_set, plan.fold_id());
  const LossConfig loss = detail::resolve_loss(cfg.loss, train_set.labels);

  // Conditioning table over the training subjects (the held-out subject's row
  // is created later, at fine-tune / zero-shot time).
  if (cfg.conditioning && !model.conditioning) {
    std::set<std::string> uniq(train_set.subject_ids.begin(), train_set.subject_ids.end());
    model.conditioning.emplace(*cfg.conditioning, model.cfg.feature_dim,
                               std::vector<std::string>(uniq.begin(), uniq.end()),
                               hash_combine(cfg.seed, 0xC0));
  }

  // Trainable parameters: everything.
  std::map<std::string, TensorF*> params;
  model.extractor.for_each_param("extractor/",
                                 [&](const std::string& n, TensorF& t) { params[n] = &t; });
  model.head.for_each_param("head/", [&](const std::string& n, TensorF& t) { params[n] = &t; });
  if (model.conditioning)
    model.conditioning->for_each_row([&](const std::string& n, TensorF& t) { params[n] = &t; });

  OptimizerConfig opt_cfg;
  opt_cfg.kind = OptKind::adam;
  opt_cfg.lr = cfg.lr_initial;
  Optimizer<float> opt(opt_cfg);

  const int d = model.cfg.feature_dim;
  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  Checkpoint best;
  EarlyStopper stopper(cfg.patience);
  std::vector<double> history;

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    opt.set_lr(scheduled_lr(cfg.lr_initial, cfg.lr_decay_every, cfg.lr_decay_factor, epoch));
    Rng shuffle_rng(hash_combine(cfg.seed, hash_combine(0x3C0FFEE, static_cast<std::uint64_t>(epoch))));
    shuffle_rng.shuffle(order);

    for (std::size_t at = 0, batch_no = 0; at < order.size(); at += static_cast<std::size_t>(cfg.batch_size), ++batch_no) {
      std::vector<int> batch_idx;
      for (std::size_t i = at; i < std::min(order.size(), at + static_cast<std::size_t>(cfg.batch_size)); ++i)
        batch_idx.push_back(static_cast<int>(order[i]));
      const int b = static_cast<int>(batch_idx.size());

      TensorF x3 = detail::model_window_batch(train_set, batch_idx, model.cfg, &scaler);
      TensorF x4({b, 1, model.cfg.n_channels, model.cfg.window_samples()}, std::move(x3.data));
      FwdCtx ctx;
      ctx.train = true;
      ctx.dropout_seed = hash_combine(cfg.seed, hash_combine(static_cast<std::uint64_t>(epoch) * 1000003u,
                                                             static_cast<std::uint64_t>(batch_no)));
      auto ext_trace = model.extractor.forward(std::move(x4), ctx);
      const TensorF& h = ext_trace.output();

      TensorF head_in = h;
      if (model.conditioning) {
        for (int i = 0; i < b; ++i) {
          const TensorF& row = model.conditioning->lookup(
              train_set.subject_ids[static_cast<std::size_t>(batch_idx[static_cast<std::size_t>(i)])]);
          condition_forward_item(model.conditioning->mode(),
                                 h.ptr() + static_cast<std::size_t>(i) * d, row.ptr(),
                                 head_in.ptr() + static_cast<std::size_t>(i) * d, d);
        }
      }
      auto head_trace = model.head.forward(head_in, ctx);

      std::vector<double> probs(static_cast<std::size_t>(b));
      for (int i = 0; i < b; ++i)
        probs[static_cast<std::size_t>(i)] =
            detail::sigmoid(head_trace.output().data[static_cast<std::size_t>(i)]);
      const auto batch_labels = detail::labels_at(train_set, batch_idx);
      const LossResult lr_res = compute_loss(loss, probs, batch_labels);
      if (!std::isfinite(lr_res.loss))
        throw NumericError("pretrain: non-finite loss at epoch " + std::to_string(epoch) +
                           ", batch " + std::to_string(batch_no));

      TensorF dz({b, 1});
      for (int i = 0; i < b; ++i)
        dz.data[static_cast<std::size_t>(i)] =
            static_cast<float>(lr_res.dlogits[static_cast<std::size_t>(i)]);

      GradientSet<float> grads;
      TensorF dhead_in = model.head.backward(head_trace, dz, grads, {}, "head/");
      TensorF dh = dhead_in;
      if (model.conditioning) {
        for (int i = 0; i < b; ++i) {
          const std::string& subj =
              train_set.subject_ids[static_cast<std::size_t>(batch_idx[static_cast<std::size_t>(i)])];
          const TensorF& row = model.conditioning->lookup(subj);
          auto [it, fresh] = grads.emplace(detail::row_param_name(subj), TensorF(row.shape));
          (void)fresh;
          condition_backward_item(model.conditioning->mode(),
                                  h.ptr() + static_cast<std::size_t>(i) * d, row.ptr(),
                                  dhead_in.ptr() + static_cast<std::size_t>(i) * d,
                                  dh.ptr() + static_cast<std::size_t>(i) * d,
                                  it->second.ptr(), d);
        }
      }
      model.extractor.backward(ext_trace, dh, grads, {}, "extractor/");

      opt.step(params, grads);
      if (model.conditioning) model.conditioning->normalize();
    }

    const auto val_probs = detail::predict_probs(model, val_set, [&] {
      std::vector<int> all(val_set.size());
      for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
      return all;
    }(), &scaler);
    const double val_mcc = mcc(confusion_at_threshold(val_probs, val_set.labels));
    history.push_back(val_mcc);

    if (stopper.observe(val_mcc, epoch)) best.model = model;
    if (stopper.should_stop()) break;
  }

  if (stopper.best_epoch < 0) throw NumericError("pretrain: no epoch completed");
  best.best_val_mcc = stopper.best;
  best.epoch_of_best = stopper.best_epoch;
  best.val_history = std::move(history);
  best.seeds = {{"train", cfg.seed}};
  best.config_snapshot = train_config_to_json(cfg);
  best.scaler = scaler;
  return best;
}

struct IncrementResult {
  int k = 0;
  Model base_model;                          // restored checkpoint + fresh embedding row
  std::vector<std::vector<int>> subsets;     // batch indices (0..3) per run
  std::vector<MetricsReport> reports;        // one per subset
  std::vector<Model> models;                 // the adapted model per subset
  MetricsReport aggregate_mean;              // mean over subsets (mcc/bacc/auc)
  double mcc_std = 0.0;                      // sample std over subsets
};

namespace detail {

inline std::vector<std::vector<int>> size_k_subsets(int n, int k) {
  std::vector<std::vector<int>> out;
  std::vector<int> pick;
  std::function<void(int)> rec = [&](int start) {
    if (static_cast<int>(pick.size()) == k) {
      out.push_back(pick);
      return;
    }
    for (int i = start; i < n; ++i) {
      pick.push_back(i);
      rec(i + 1);
      pick.pop_back();
    }
  };
  rec(0);
  return out;
}

struct FinetuneRun {
  Model model;
  MetricsReport report;
};

/// Fine-tunes a restored model on cached features under the freeze rule and
/// returns the adapted model with its eval-mode metrics over the cached test
/// features. With only a handful of trainable parameters and at most four
/// 60-epoch batches there is no held-out validation data, so early stopping
/// watches the eval-mode loss on the fine-tuning subset itself; the quantized
/// MCC of such a small set moves in steps too coarse to register the slow
/// drift that lr 5e-4 produces.
inline FinetuneRun finetune_one(Model model, const TensorF& ft_feats,
                                const std::vector<int>& ft_labels, const TensorF& test_feats,
                                const std::vector<int>& test_labels, const std::string& held,
                                const LossConfig& loss, const TrainConfig& cfg) {
  const int d = model.cfg.feature_dim;
  const int n = ft_feats.dim(0);
  const bool conditioned = model.conditioning.has_value();

  std::map<std::string, TensorF*> params;
  std::set<std::string> head_frozen;
  if (conditioned) {
    params[row_param_name(held)] = &model.conditioning->row_mut(held);
    model.head.for_each_param("head/",
                              [&](const std::string& nm, TensorF&) { head_frozen.insert(nm); });
  } else {
    model.head.for_each_param("head/", [&](const std::string& nm, TensorF& t) { params[nm] = &t; });
  }

  OptimizerConfig opt_cfg;
  opt_cfg.kind = OptKind::adam;
  opt_cfg.lr = cfg.finetune_lr;
  Optimizer<float> opt(opt_cfg);

  auto eval_probs = [&](const TensorF& feats) {
    TensorF head_in = feats;
    if (conditioned) {
      const TensorF& row = model.conditioning->lookup(held);
      for (int i = 0; i < feats.dim(0); ++i)
        condition_forward_item(model.conditioning->mode(),
                               feats.ptr() + static_cast<std::size_t>(i) * d, row.ptr(),
                               head_in.ptr() + static_cast<std::size_t>(i) * d, d);
    }
    return classify(model, head_in);
  };

  Model best_state = model;
  EarlyStopper stopper(cfg.finetune_patience);
  int epochs_run = 0;

  std::vector<std::size_t> order(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < cfg.finetune_max_epochs; ++epoch) {
    ++epochs_run;
    Rng shuffle_rng(hash_combine(cfg.seed, hash_combine(0xF17E, static_cast<std::uint64_t>(epoch))));
    shuffle_rng.shuffle(order);

    for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t hi = std::min(order.size(), at + static_cast<std::size_t>(cfg.batch_size));
      const int b = static_cast<int>(hi - at);
      TensorF h({b, d});
      std::vector<int> yb(static_cast<std::size_t>(b));
      for (std::size_t i = at; i < hi; ++i) {
        std::copy(ft_feats.ptr() + order[i] * static_cast<std::size_t>(d),
                  ft_feats.ptr() + (order[i] + 1) * static_cast<std::size_t>(d),
                  h.ptr() + (i - at) * static_cast<std::size_t>(d));
        yb[i - at] = ft_labels[order[i]];
      }

      TensorF head_in = h;
      const TensorF* row = nullptr;
      if (conditioned) {
        row = &model.conditioning->lookup(held);
        for (int i = 0; i < b; ++i)
          condition_forward_item(model.conditioning->mode(),
                                 h.ptr() + static_cast<std::size_t>(i) * d, row->ptr(),
                                 head_in.ptr() + static_cast<std::size_t>(i) * d, d);
      }
      FwdCtx ctx;
      ctx.train = true;
      ctx.dropout_seed = hash_combine(cfg.seed, static_cast<std::uint64_t>(epoch) * 31 + at);
      auto head_trace = model.head.forward(head_in, ctx);

      std::vector<double> probs(static_cast<std::size_t>(b));
      for (int i = 0; i < b; ++i)
        probs[static_cast<std::size_t>(i)] =
            sigmoid(head_trace.output().data[static_cast<std::size_t>(i)]);
      const LossResult lr_res = compute_loss(loss, probs, yb);
      if (!std::isfinite(lr_res.loss))
        throw NumericError("finetune: non-finite loss at epoch " + std::to_string(epoch));

      TensorF dz({b, 1});
      for (int i = 0; i < b; ++i)
        dz.data[static_cast<std::size_t>(i)] =
            static_cast<float>(lr_res.dlogits[static_cast<std::size_t>(i)]);

      GradientSet<float> grads;
      TensorF dhead_in = model.head.backward(head_trace, dz, grads, head_frozen, "head/");
      if (conditioned) {
        auto [it, fresh] = grads.emplace(row_param_name(held), TensorF(row->shape));
        (void)fresh;
        TensorF dh_unused({b, d});
        for (int i = 0; i < b; ++i)
          condition_backward_item(model.conditioning->mode(),
                                  h.ptr() + static_cast<std::size_t>(i) * d, row->ptr(),
                                  dhead_in.ptr() + static_cast<std::size_t>(i) * d,
                                  dh_unused.ptr() + static_cast<std::size_t>(i) * d,
                                  it->second.ptr(), d);
      }
      opt.step(params, grads);
      if (conditioned) model.conditioning->normalize_subject(held);
    }

    const double ft_loss = compute_loss(loss, eval_probs(ft_feats), ft_labels).loss;
    if (!std::isfinite(ft_loss))
      throw NumericError("finetune: non-finite monitoring loss at epoch " + std::to_string(epoch));
    if (stopper.observe(-ft_loss, epoch)) best_state = model;
    if (stopper.should_stop()) break;
  }
  model = best_state;

  MetricsReport report = compute_metrics(eval_probs(test_feats), test_labels);
  report.n_epochs_trained = epochs_run;
  report.seed = cfg.seed;
  return FinetuneRun{std::move(model), std::move(report)};
}

}  // namespace detail

/// Restores the checkpoint once per size-k subset of the first four
/// fine-tuning batches, trains under the freeze rule, and reports per-subset
/// and aggregated test metrics. The extractor is frozen in every mode, so its
/// features are computed once and cached.
inline IncrementResult finetune_increment(const Checkpoint& ckpt, const EpochSet& es,
                                          const FoldPlan& plan, int k, const TrainConfig& cfg) {
  cfg.validate();
  if (k < 1 || k > 4)
    throw ConfigError("finetune_increment: k must lie in 1..4, got " + std::to_string(k));
  if (!ckpt.scaler) throw ConfigError("finetune_increment: checkpoint carries no scaler");
  if (ckpt.scaler->fold_id != plan.fold_id())
    throw ConfigError("finetune_increment: scaler belongs to '" + ckpt.scaler->fold_id +
                      "', refusing to apply it to '" + plan.fold_id() + "'");

  // Base model: checkpoint weights plus (for conditioning) the held-out
  // subject's freshly initialized embedding row.
  Model base = ckpt.model;
  const std::string& held = plan.held_out_subject;
  if (base.conditioning && !base.conditioning->has_subject(held))
    base.conditioning->add_subject(held, cfg.embedding_init,
                                   hash_combine(cfg.seed, hash_str(held)));

  // Cached features: the batches only reindex these.
  const std::vector<int> ft_idx = plan.finetune_all();
  const std::vector<int> test_idx = plan.test_all();
  TensorF ft_feats = extract_features(base, detail::model_window_batch(es, ft_idx, base.cfg,
                                                                      &*ckpt.scaler));
  TensorF test_feats = extract_features(base, detail::model_window_batch(es, test_idx, base.cfg,
                                                                        &*ckpt.scaler));
  const std::vector<int> test_labels = detail::labels_at(es, test_idx);
  // Map plan batch number -> positions inside ft_feats.
  std::map<int, std::vector<std::size_t>> batch_rows;
  {
    std::size_t pos = 0;
    for (std::size_t b = 0; b < plan.finetune_batches.size(); ++b)
      for (std::size_t j = 0; j < plan.finetune_batches[b].size(); ++j)
        batch_rows[static_cast<int>(b)].push_back(pos++);
  }

  const LossConfig loss = detail::resolve_loss(cfg.loss, detail::labels_at(es, ft_idx));

  IncrementResult result;
  result.k = k;
  result.base_model = base;
  result.subsets = detail::size_k_subsets(4, k);
  const int d = base.cfg.feature_dim;
  for (const auto& subset : result.subsets) {
    std::vector<std::size_t> rows;
    for (int b : subset) rows.insert(rows.end(), batch_rows[b].begin(), batch_rows[b].end());
    TensorF sub_feats({static_cast<int>(rows.size()), d});
    std::vector<int> sub_labels(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      std::copy(ft_feats.ptr() + rows[i] * static_cast<std::size_t>(d),
                ft_feats.ptr() + (rows[i] + 1) * static_cast<std::size_t>(d),
                sub_feats.ptr() + i * static_cast<std::size_t>(d));
      sub_labels[i] = es.labels[static_cast<std::size_t>(ft_idx[rows[i]])];
    }
    auto run = detail::finetune_one(base, sub_feats, sub_labels, test_feats, test_labels, held,
                                    loss, cfg);
    result.reports.push_back(std::move(run.report));
    result.models.push_back(std::move(run.model));
  }

  // Aggregate mean and (sample) std of the target metric across subsets.
  double sum_mcc = 0.0, sum_bacc = 0.0, sum_auc = 0.0;
  for (const auto& r : result.reports) {
    sum_mcc += r.mcc;
    sum_bacc += r.balanced_accuracy;
    sum_auc += r.roc_auc;
  }
  const double nr = static_cast<double>(result.reports.size());
  result.aggregate_mean.mcc = sum_mcc / nr;
  result.aggregate_mean.balanced_accuracy = sum_bacc / nr;
  result.aggregate_mean.roc_auc = sum_auc / nr;
  if (result.reports.size() > 1) {
    double ss = 0.0;
    for (const auto& r : result.reports) {
      const double dlt = r.mcc - result.aggregate_mean.mcc;
      ss += dlt * dlt;
    }
    result.mcc_std = std::sqrt(ss / (nr - 1.0));
  }
  return result;
}

/// Eval-mode test metrics for a checkpoint. A conditioned checkpoint that has
/// never seen the held-out subject gets the zero-shot default row (strategy
/// "mean") on a scratch copy.
inline MetricsReport evaluate(const Checkpoint& ckpt, const EpochSet& es, const FoldPlan& plan) {
  if (!ckpt.scaler) throw ConfigError("evaluate: checkpoint carries no scaler");
  if (ckpt.scaler->fold_id != plan.fold_id())
    throw ConfigError("evaluate: scaler belongs to '" + ckpt.scaler->fold_id +
                      "', refusing to apply it to '" + plan.fold_id() + "'");
  Model model = ckpt.model;
  if (model.conditioning && !model.conditioning->has_subject(plan.held_out_subject))
    model.conditioning->add_subject(plan.held_out_subject, "mean");
  const std::vector<int> test_idx = plan.test_all();
  const auto probs = detail::predict_probs(model, es, test_idx, &*ckpt.scaler);
  MetricsReport r = compute_metrics(probs, detail::labels_at(es, test_idx));
  r.seed = ckpt.seeds.count("train") ? ckpt.seeds.at("train") : 0;
  return r;
}

}  // namespace erpcond

// Copyright (c) 2026 erpcond authors
// SPDX-License-Identifier: Apache-2.0
//
// Leave-one-subject-out planning. Each fold holds one subject out entirely;
// the remaining subjects' epochs are split 0.92:0.08 into train/validation,
// stratified per (subject, label). The held-out subject's two sessions are
// each cut at their class-wise temporal midpoint, and the halves are crossed
// (first half of session A + second half of session B form the fine-tuning
// set, the complementary halves the test set) to counterbalance fatigue
// drift. Both halves are then dealt into exactly 10 batches of 60 epochs, 6
// targets each.

#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "erpcond/core/rng.hpp"
#include "erpcond/dsp/types.hpp"

namespace erpcond {

struct FoldPlan {
  std::string held_out_subject;
  std::vector<int> train_idx;
  std::vector<int> val_idx;
  std::vector<std::vector<int>> finetune_batches;  // 10 x 60 epoch indices
  std::vector<std::vector<int>> test_batches;      // 10 x 60 epoch indices

  std::string fold_id() const { return "fold_" + held_out_subject; }

  std::vector<int> finetune_all() const {
    std::vector<int> out;
    for (const auto& b : finetune_batches) out.insert(out.end(), b.begin(), b.end());
    return out;
  }
  std::vector<int> test_all() const {
    std::vector<int> out;
    for (const auto& b : test_batches) out.insert(out.end(), b.begin(), b.end());
    return out;
  }
};

struct FoldPlanResult {
  std::vector<FoldPlan> plans;
  std::vector<std::string> warnings;  // subjects excluded from the held-out role
};

namespace detail {

/// Splits one session's epoch indices (temporal order) at the class-wise
/// midpoint: each class contributes its first floor(n/2) epochs to the first
/// half and the rest to the second.
inline void split_session_halves(const EpochSet& es, const std::vector<int>& session_idx,
                                 std::vector<int>& first_half, std::vector<int>& second_half) {
  for (int cls : {1, 0}) {
    std::vector<int> of_class;
    for (int i : session_idx)
      if (es.labels[static_cast<std::size_t>(i)] == cls) of_class.push_back(i);
    const std::size_t cut = of_class.size() / 2;
    first_half.insert(first_half.end(), of_class.begin(), of_class.begin() + static_cast<long>(cut));
    second_half.insert(second_half.end(), of_class.begin() + static_cast<long>(cut), of_class.end());
  }
  std::sort(first_half.begin(), first_half.end());
  std::sort(second_half.begin(), second_half.end());
}

/// Deals a 600-epoch half into 10 batches of 60 with 6 targets each,
/// preserving temporal order within each class.
inline std::vector<std::vector<int>> deal_batches(const EpochSet& es, const std::vector<int>& idx,
                                                  const std::string& what) {
  std::vector<int> targets, nontargets;
  for (int i : idx)
    (es.labels[static_cast<std::size_t>(i)] == 1 ? targets : nontargets).push_back(i);
  if (idx.size() != 600 || targets.size() != 60)
    throw DataError(what + ": expected 600 epochs with 60 targets per held-out half, got " +
                    std::to_string(idx.size()) + " with " + std::to_string(targets.size()) +
                    " targets");
  std::vector<std::vector<int>> batches(10);
  for (int b = 0; b < 10; ++b) {
    auto& batch = batches[static_cast<std::size_t>(b)];
    batch.insert(batch.end(), targets.begin() + b * 6, targets.begin() + (b + 1) * 6);
    batch.insert(batch.end(), nontargets.begin() + b * 54, nontargets.begin() + (b + 1) * 54);
    std::sort(batch.begin(), batch.end());
  }
  return batches;
}

}  // namespace detail

/// Builds one LOSO fold per eligible subject. Subjects with fewer than two
/// sessions cannot fill the held-out role and are reported in `warnings`
/// (they still contribute to other folds' train/val pools).
inline FoldPlanResult make_fold_plans(const EpochSet& es, std::uint64_t seed) {
  es.validate();
  // Subject -> session -> epoch indices, preserving first-appearance order of
  // sessions (temporal order of the recording sequence).
  std::map<std::string, std::vector<std::string>> session_order;
  std::map<std::string, std::map<std::string, std::vector<int>>> by_subject_session;
  std::vector<std::string> subject_order;
  for (std::size_t i = 0; i < es.size(); ++i) {
    const auto& subj = es.subject_ids[i];
    const auto& sess = es.session_ids[i];
    if (!by_subject_session.count(subj)) subject_order.push_back(subj);
    auto& sessions = by_subject_session[subj];
    if (!sessions.count(sess)) session_order[subj].push_back(sess);
    sessions[sess].push_back(static_cast<int>(i));
  }
  if (subject_order.size() < 2)
    throw DataError("make_fold_plans: leave-one-subject-out needs at least 2 subjects, got " +
                    std::to_string(subject_order.size()));

  FoldPlanResult result;
  for (const auto& held : subject_order) {
    const auto& sessions = session_order[held];
    if (sessions.size() < 2) {
      result.warnings.push_back("subject '" + held + "' has " +
                                std::to_string(sessions.size()) +
                                " session(s); needs 2 for the held-out role, skipping its fold");
      continue;
    }
    if (sessions.size() > 2)
      result.warnings.push_back("subject '" + held + "' has " +
                                std::to_string(sessions.size()) +
                                " sessions; using the first two for its fold");

    FoldPlan plan;
    plan.held_out_subject = held;

    // Held-out split: cross the session halves.
    std::vector<int> a_first, a_second, b_first, b_second;
    detail::split_session_halves(es, by_subject_session[held][sessions[0]], a_first, a_second);
    detail::split_session_halves(es, by_subject_session[held][sessions[1]], b_first, b_second);
    std::vector<int> finetune = a_first, test = a_second;
    finetune.insert(finetune.end(), b_second.begin(), b_second.end());
    test.insert(test.end(), b_first.begin(), b_first.end());
    std::sort(finetune.begin(), finetune.end());
    std::sort(test.begin(), test.end());
    plan.finetune_batches = detail::deal_batches(es, finetune, "fold " + held + " fine-tune");
    plan.test_batches = detail::deal_batches(es, test, "fold " + held + " test");

    // Train/val pool: everything from the other subjects, stratified per
    // (subject, label) at 0.92:0.08 with a fold-specific seeded shuffle.
    Rng rng(hash_combine(seed, hash_str(held)));
    for (const auto& subj : subject_order) {
      if (subj == held) continue;
      for (int cls : {0, 1}) {
        std::vector<int> group;
        for (const auto& sess : session_order[subj])
          for (int i : by_subject_session[subj][sess])
            if (es.labels[static_cast<std::size_t>(i)] == cls) group.push_back(i);
        rng.shuffle(group);
        const auto n_val = static_cast<std::size_t>(
            std::lround(0.08 * static_cast<double>(group.size())));
        plan.val_idx.insert(plan.val_idx.end(), group.begin(),
                            group.begin() + static_cast<long>(n_val));
        plan.train_idx.insert(plan.train_idx.end(), group.begin() + static_cast<long>(n_val),
                              group.end());
      }
    }
    std::sort(plan.train_idx.begin(), plan.train_idx.end());
    std::sort(plan.val_idx.begin(), plan.val_idx.end());
    result.plans.push_back(std::move(plan));
  }
  if (result.plans.empty())
    throw DataError("make_fold_plans: no subject has the two sessions required for a fold");
  return result;
}

/// The subject whose mean MCC across trials is closest to the pooled mean of
/// all trials; ties break toward the lexicographically smaller id.
inline std::string median_subject(const std::map<std::string, std::vector<double>>& per_subject) {
  if (per_subject.empty()) throw ConfigError("median_subject: no trial data");
  double pooled_sum = 0.0;
  std::size_t pooled_n = 0;
  for (const auto& [subj, trials] : per_subject) {
    if (trials.empty())
      throw ConfigError("median_subject: subject '" + subj + "' has no trials");
    for (double v : trials) pooled_sum += v;
    pooled_n += trials.size();
  }
  const double pooled_mean = pooled_sum / static_cast<double>(pooled_n);
  std::string best;
  double best_dist = 0.0;
  for (const auto& [subj, trials] : per_subject) {  // std::map iterates in id order
    double mean = 0.0;
    for (double v : trials) mean += v;
    mean /= static_cast<double>(trials.size());
    const double dist = std::abs(mean - pooled_mean);
    if (best.empty() || dist < best_dist) {
      best = subj;
      best_dist = dist;
    }
  }
  return best;
}

}  // namespace erpcond

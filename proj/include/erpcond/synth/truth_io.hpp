// Copyright (c) 2026 erpcond authors
// SPDX-License-Identifier: Apache-2.0
//
// Ground-truth sidecar for synthetic cohorts: the drawn subject profiles plus
// the generation settings, enough to reproduce or audit any derived result.

#pragma once

#include <filesystem>
#include <fstream>
#include <vector>

#include <json.hpp>

#include "erpcond/synth/generator.hpp"

namespace erpcond {

struct CohortTruth {
  std::vector<SubjectProfile> profiles;
  int sessions_per_subject = 0;
  double difficulty = 1.0;
  std::uint64_t master_seed = 0;
};

inline void save_truth(const std::filesystem::path& path, const CohortTruth& truth) {
  nlohmann::json subjects = nlohmann::json::array();
  for (const auto& p : truth.profiles) {
    subjects.push_back({{"subject_id", p.subject_id},
                        {"erp_latency_s", p.erp_latency},
                        {"erp_amplitude_uv", p.erp_amplitude},
                        {"spatial_weights", p.spatial_weights},
                        {"noise_scale_uv", p.noise_scale},
                        {"drift_per_session", p.drift_per_session}});
  }
  nlohmann::json j{{"schema_version", 1},
                   {"master_seed", truth.master_seed},
                   {"difficulty", truth.difficulty},
                   {"sessions_per_subject", truth.sessions_per_subject},
                   {"subjects", subjects}};
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

inline CohortTruth load_truth(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  try {
    const auto j = nlohmann::json::parse(in);
    CohortTruth truth;
    truth.master_seed = j.at("master_seed").get<std::uint64_t>();
    truth.difficulty = j.at("difficulty").get<double>();
    truth.sessions_per_subject = j.at("sessions_per_subject").get<int>();
    for (const auto& s : j.at("subjects")) {
      SubjectProfile p;
      p.subject_id = s.at("subject_id").get<std::string>();
      p.erp_latency = s.at("erp_latency_s").get<double>();
      p.erp_amplitude = s.at("erp_amplitude_uv").get<double>();
      p.spatial_weights = s.at("spatial_weights").get<std::vector<double>>();
      p.noise_scale = s.at("noise_scale_uv").get<double>();
      p.drift_per_session = s.at("drift_per_session").get<double>();
      p.validate();
      truth.profiles.push_back(std::move(p));
    }
    return truth;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": malformed truth file: " + e.what());
  }
}

}  // namespace erpcond

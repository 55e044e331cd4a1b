// SPDX-License-Identifier: Apache-2.0
//
// Result tables assembled from stored score documents: DER per dataset with a
// macro column, relative change against a baseline system, and the MD/FA/SC
// decomposition.

#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "eendvc/metrics.hpp"

namespace eendvc {

struct ScoreEntry {
  std::string system;
  std::string dataset;
  DERReport report;
};

/// Reads a score document written by `eendvc score`. The system and dataset
/// fields fall back to the given defaults when absent.
ScoreEntry read_score(const std::string& path, const std::string& default_system = "system",
                      const std::string& default_dataset = "dataset");

struct ReportTables {
  std::string der;             // systems x datasets + Macro
  std::string relative;        // empty without a baseline
  std::string decomposition;   // one row per entry
  nlohmann::json document;
};

/// Systems and datasets keep their order of first appearance. Missing cells
/// are shown as "-" and excluded from the macro average. Throws ConfigError if
/// `baseline` is not empty and names no system.
ReportTables build_report(const std::vector<ScoreEntry>& entries, const std::string& baseline = "");

}  // namespace eendvc

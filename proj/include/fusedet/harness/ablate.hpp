#pragma once

#include <string>
#include <vector>

#include "fusedet/harness/train.hpp"

namespace fusedet::harness {

struct AblationRow {
  bool afif = false, mseii = false, hifa = false;
  bool ok = false;
  double map50 = 0, map5095 = 0;
  std::string error;
};

struct AblationTable {
  std::vector<AblationRow> rows;  // full boolean cube, 8 rows
  std::string to_text() const;
  std::string to_json() const;
};

// Trains/evaluates every {afif, mseii, hifa} combination of the base config
// (finished runs are reused by hash). A failing combination is recorded and
// the sweep continues.
AblationTable ablation_run(const ExperimentConfig& base, const TrainOptions& opts);

}  // namespace fusedet::harness

#include "fusedet/harness/ablate.hpp"

#include <cstdio>
#include <sstream>

#include <json.hpp>

namespace fusedet::harness {

AblationTable ablation_run(const ExperimentConfig& base, const TrainOptions& opts) {
  AblationTable table;
  for (int mask = 0; mask < 8; ++mask) {
    AblationRow r;
    r.afif = (mask & 1) != 0;
    r.mseii = (mask & 2) != 0;
    r.hifa = (mask & 4) != 0;
    ExperimentConfig cfg = base;
    cfg.afif = r.afif;
    cfg.mseii = r.mseii;
    cfg.hifa = r.hifa;
    try {
      TrainOptions to = opts;
      to.resume = true;  // reuse finished runs by hash
      auto s = run_training(cfg, to);
      r.ok = true;
      r.map50 = s.test_report.overall.map50;
      r.map5095 = s.test_report.overall.map5095;
    } catch (const std::exception& e) {
      r.error = e.what();
    }
    table.rows.push_back(std::move(r));
  }
  return table;
}

std::string AblationTable::to_text() const {
  std::ostringstream os;
  os << "AFIF  MSEII  HiFA   mAP50-95   mAP50\n";
  char buf[160];
  for (const auto& r : rows) {
    auto mark = [](bool b) { return b ? "x" : "-"; };
    if (r.ok)
      std::snprintf(buf, sizeof(buf), "%-5s %-6s %-6s %8.4f %8.4f\n", mark(r.afif), mark(r.mseii),
                    mark(r.hifa), r.map5095, r.map50);
    else
      std::snprintf(buf, sizeof(buf), "%-5s %-6s %-6s   failed: %s\n", mark(r.afif),
                    mark(r.mseii), mark(r.hifa), r.error.c_str());
    os << buf;
  }
  return os.str();
}

std::string AblationTable::to_json() const {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : rows)
    j.push_back({{"afif", r.afif}, {"mseii", r.mseii}, {"hifa", r.hifa}, {"ok", r.ok},
                 {"map50", r.map50}, {"map50_95", r.map5095}, {"error", r.error}});
  return j.dump(2);
}

}  // namespace fusedet::harness

#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace ahiv {

enum class Mode { survival, competing };

// One subject: follow-up time T* = min(T, C), event indicator, cause label
// (competing mode, events only), exposure, instrument and confounders.
struct SurvivalRecord {
  double time = 0.0;
  int status = 0;                 // 0 censored, 1 event
  std::optional<int> cause;       // >= 1; present iff status == 1 in competing mode
  double exposure = 0.0;
  double instrument = 0.0;
  std::vector<double> confounders;
};

struct Dataset {
  std::vector<SurvivalRecord> records;
  std::vector<std::string> confounder_names;
  double horizon = 0.0;           // upper integration limit tau
  Mode mode = Mode::survival;

  int n() const { return static_cast<int>(records.size()); }
  int p() const { return static_cast<int>(confounder_names.size()); }
};

// Column bindings for load_dataset. cause is required in competing mode.
struct ColumnMap {
  std::string time = "time";
  std::string status = "status";
  std::string cause;              // empty = not mapped
  std::string exposure = "exposure";
  std::string instrument = "instrument";
  std::vector<std::string> confounders;
};

// Validates records, applies administrative censoring past an explicit
// horizon, and defaults the horizon to the largest observed time.
Dataset make_dataset(std::vector<SurvivalRecord> records, std::vector<std::string> confounder_names,
                     Mode mode, std::optional<double> horizon = std::nullopt);

// CSV ingestion: comma separated, header row required, '.' decimal point,
// rows kept in file order. Missing values are rejected.
Dataset load_dataset(const std::string& path, const ColumnMap& columns, Mode mode,
                     std::optional<double> horizon = std::nullopt);

// Writes records back out at full round-trip precision (%.17g).
void write_dataset_csv(const Dataset& data, const std::string& path, const ColumnMap& columns);

// Region-year treatment panel used to build the area-level instrument.
struct AreaRow {
  std::string region;
  int year = 0;
  int treated = 0;                // 0/1
  double p_hat = 0.0;             // predicted treatment probability
};

struct AreaPanel {
  std::vector<AreaRow> rows;
};

AreaPanel load_area_panel(const std::string& path);

// For each (region, year) with data at year-1, the instrument is
//   (observed treated proportion at year-1) - (mean predicted probability at year-1).
// Pairs whose region has no year-1 data are absent. The result is exactly
// invariant to row order within each (region, year) group.
std::map<std::pair<std::string, int>, double> construct_area_instrument(const AreaPanel& panel);

}  // namespace ahiv

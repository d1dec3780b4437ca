#include "ahiv/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "ahiv/errors.hpp"

namespace ahiv {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const {
    for (std::size_t j = 0; j < header.size(); ++j)
      if (header[j] == name) return static_cast<int>(j);
    throw validation_error("missing column '" + name + "'");
  }
};

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw validation_error("cannot open file '" + path + "'");
  CsvTable table;
  std::string line;
  if (!std::getline(in, line)) throw validation_error("empty file '" + path + "'");
  for (auto& h : split_csv_line(line)) table.header.push_back(trim(h));
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != table.header.size())
      throw validation_error("row " + std::to_string(table.rows.size() + 2) + " in '" + path +
                             "' has " + std::to_string(cells.size()) + " cells, expected " +
                             std::to_string(table.header.size()));
    table.rows.push_back(std::move(cells));
  }
  return table;
}

double parse_double(const std::string& cell, std::size_t row, const std::string& col) {
  const std::string s = trim(cell);
  if (s.empty())
    throw validation_error("empty cell at row " + std::to_string(row) + ", column '" + col + "'");
  std::size_t pos = 0;
  double v;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    throw validation_error("non-numeric cell '" + s + "' at row " + std::to_string(row) +
                           ", column '" + col + "'");
  }
  if (pos != s.size())
    throw validation_error("non-numeric cell '" + s + "' at row " + std::to_string(row) +
                           ", column '" + col + "'");
  if (!std::isfinite(v))
    throw validation_error("non-finite value at row " + std::to_string(row) + ", column '" + col +
                           "'");
  return v;
}

int parse_int(const std::string& cell, std::size_t row, const std::string& col) {
  double v = parse_double(cell, row, col);
  double r = std::nearbyint(v);
  if (std::fabs(v - r) > 1e-9)
    throw validation_error("non-integer value '" + trim(cell) + "' at row " + std::to_string(row) +
                           ", column '" + col + "'");
  return static_cast<int>(r);
}

std::string format_full(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

Dataset make_dataset(std::vector<SurvivalRecord> records, std::vector<std::string> confounder_names,
                     Mode mode, std::optional<double> horizon) {
  Dataset data;
  data.mode = mode;
  data.confounder_names = std::move(confounder_names);
  data.records = std::move(records);

  const std::size_t p = data.confounder_names.size();
  if (data.records.size() < p + 4)
    throw validation_error("need at least p + 4 = " + std::to_string(p + 4) +
                           " records to identify all coefficients, got " +
                           std::to_string(data.records.size()));

  double max_time = 0.0;
  for (std::size_t i = 0; i < data.records.size(); ++i) {
    auto& r = data.records[i];
    const std::string where = " (record " + std::to_string(i + 1) + ")";
    if (!(r.time >= 0.0) || !std::isfinite(r.time))
      throw validation_error("time must be finite and >= 0" + where);
    if (r.status != 0 && r.status != 1)
      throw validation_error("status must be 0 or 1" + where);
    if (r.status == 0 && r.cause.has_value())
      throw validation_error("censored record carries a cause label" + where);
    if (mode == Mode::competing && r.status == 1) {
      if (!r.cause.has_value())
        throw validation_error("event record is missing its cause label" + where);
      if (*r.cause < 1) throw validation_error("cause labels must be >= 1" + where);
    }
    if (r.confounders.size() != p)
      throw validation_error("confounder vector length mismatch" + where);
    for (double c : r.confounders)
      if (!std::isfinite(c)) throw validation_error("non-finite confounder" + where);
    if (!std::isfinite(r.exposure) || !std::isfinite(r.instrument))
      throw validation_error("non-finite exposure or instrument" + where);
    max_time = std::max(max_time, r.time);
  }

  if (horizon.has_value()) {
    if (!(*horizon > 0.0) || !std::isfinite(*horizon))
      throw validation_error("horizon must be positive and finite");
    data.horizon = *horizon;
    // administrative censoring past the horizon
    for (auto& r : data.records) {
      if (r.time > data.horizon) {
        r.time = data.horizon;
        r.status = 0;
        r.cause.reset();
      }
    }
  } else {
    if (!(max_time > 0.0))
      throw validation_error("all follow-up times are zero; horizon undefined");
    data.horizon = max_time;
  }
  return data;
}

Dataset load_dataset(const std::string& path, const ColumnMap& columns, Mode mode,
                     std::optional<double> horizon) {
  if (mode == Mode::competing && columns.cause.empty())
    throw validation_error("competing mode requires a cause column binding");

  CsvTable table = read_csv(path);
  const int jt = table.column(columns.time);
  const int js = table.column(columns.status);
  const int je = table.column(columns.exposure);
  const int ji = table.column(columns.instrument);
  const int jc = columns.cause.empty() ? -1 : table.column(columns.cause);
  std::vector<int> jo;
  for (const auto& name : columns.confounders) jo.push_back(table.column(name));

  std::vector<SurvivalRecord> records;
  records.reserve(table.rows.size());
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& row = table.rows[i];
    const std::size_t file_row = i + 2;  // header is row 1
    SurvivalRecord r;
    r.time = parse_double(row[jt], file_row, columns.time);
    r.status = parse_int(row[js], file_row, columns.status);
    if (jc >= 0 && !trim(row[jc]).empty()) r.cause = parse_int(row[jc], file_row, columns.cause);
    r.exposure = parse_double(row[je], file_row, columns.exposure);
    r.instrument = parse_double(row[ji], file_row, columns.instrument);
    for (std::size_t k = 0; k < jo.size(); ++k)
      r.confounders.push_back(parse_double(row[jo[k]], file_row, columns.confounders[k]));
    records.push_back(std::move(r));
  }

  try {
    return make_dataset(std::move(records), columns.confounders, mode, horizon);
  } catch (const validation_error& e) {
    throw validation_error(std::string(e.what()) + " in '" + path + "'");
  }
}

void write_dataset_csv(const Dataset& data, const std::string& path, const ColumnMap& columns) {
  std::ofstream out(path);
  if (!out) throw validation_error("cannot write file '" + path + "'");
  out << columns.time << ',' << columns.status;
  if (!columns.cause.empty()) out << ',' << columns.cause;
  out << ',' << columns.exposure << ',' << columns.instrument;
  for (const auto& name : columns.confounders) out << ',' << name;
  out << '\n';
  for (const auto& r : data.records) {
    out << format_full(r.time) << ',' << r.status;
    if (!columns.cause.empty()) {
      out << ',';
      if (r.cause.has_value()) out << *r.cause;
    }
    out << ',' << format_full(r.exposure) << ',' << format_full(r.instrument);
    for (double c : r.confounders) out << ',' << format_full(c);
    out << '\n';
  }
}

AreaPanel load_area_panel(const std::string& path) {
  CsvTable table = read_csv(path);
  const int jr = table.column("region");
  const int jy = table.column("year");
  const int jt = table.column("treated");
  const int jp = table.column("p_hat");
  AreaPanel panel;
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& row = table.rows[i];
    const std::size_t file_row = i + 2;
    AreaRow a;
    a.region = trim(row[jr]);
    if (a.region.empty())
      throw validation_error("empty region at row " + std::to_string(file_row));
    a.year = parse_int(row[jy], file_row, "year");
    a.treated = parse_int(row[jt], file_row, "treated");
    if (a.treated != 0 && a.treated != 1)
      throw validation_error("treated must be 0 or 1 at row " + std::to_string(file_row));
    a.p_hat = parse_double(row[jp], file_row, "p_hat");
    panel.rows.push_back(std::move(a));
  }
  return panel;
}

std::map<std::pair<std::string, int>, double> construct_area_instrument(const AreaPanel& panel) {
  if (panel.rows.empty()) throw validation_error("area panel is empty");

  // Group accumulators. p_hat values are sorted before summation so the
  // result is exactly invariant to row order within a group.
  struct Group {
    long treated = 0;
    std::vector<double> p_hats;
  };
  std::map<std::pair<std::string, int>, Group> groups;
  for (const auto& row : panel.rows) {
    if (!(row.p_hat >= 0.0 && row.p_hat <= 1.0))
      throw validation_error("predicted probability outside [0,1] for region '" + row.region +
                             "', year " + std::to_string(row.year));
    auto& g = groups[{row.region, row.year}];
    g.treated += row.treated;
    g.p_hats.push_back(row.p_hat);
  }

  // The difference at (region, y-1) becomes the instrument for (region, y);
  // panel pairs without data at y-1 are absent from the output.
  std::map<std::pair<std::string, int>, double> out;
  for (const auto& [key, g] : groups) {
    (void)g;
    auto prev = groups.find({key.first, key.second - 1});
    if (prev == groups.end()) continue;
    std::vector<double> sorted = prev->second.p_hats;
    std::sort(sorted.begin(), sorted.end());
    double sum = 0.0;
    for (double v : sorted) sum += v;
    const double m = static_cast<double>(sorted.size());
    out[key] = static_cast<double>(prev->second.treated) / m - sum / m;
  }
  return out;
}

}  // namespace ahiv

#ifndef KMSPC_DATASET_HPP
#define KMSPC_DATASET_HPP

#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "kmspc/common.hpp"

namespace kmspc {

struct Dataset {
  Matrix X;
  std::vector<std::string> variables;
  std::vector<int> labels;  // empty when no label column was declared
  Vector time;              // empty when no time column was declared

  bool has_labels() const { return !labels.empty(); }
  bool has_time() const { return time.size() > 0; }
};

struct LoadOptions {
  char delimiter = ',';
  std::string label_column = "label";
  std::string time_column = "time";
};

namespace detail {

inline std::string trim_ws(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

inline std::vector<std::string> split_line(const std::string& line, char delim) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, delim)) cells.push_back(trim_ws(cell));
  if (!line.empty() && line.back() == delim) cells.emplace_back();
  return cells;
}

// Full-cell strtod parse; trailing characters make the cell non-numeric.
inline bool parse_cell(const std::string& cell, double* out) {
  if (cell.empty()) return false;
  const char* begin = cell.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  if (end != begin + cell.size()) return false;
  *out = v;
  return true;
}

}  // namespace detail

// Delimited text with a mandatory header row. Columns named by the label and
// time options are extracted from the numeric block; every remaining column
// becomes a variable. Errors carry 1-based row numbers counting the header.
inline Dataset load_dataset(const std::string& path, const LoadOptions& opts = {}) {
  std::ifstream in(path);
  if (!in) throw IngestionError("load_dataset: cannot open '" + path + "'");

  std::string line;
  if (!std::getline(in, line))
    throw IngestionError("load_dataset: '" + path + "' is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const std::vector<std::string> header = detail::split_line(line, opts.delimiter);
  if (header.empty())
    throw IngestionError("load_dataset: '" + path + "' has an empty header");

  Index label_col = -1, time_col = -1;
  std::vector<std::string> variables;
  std::vector<Index> var_cols;
  for (std::size_t j = 0; j < header.size(); ++j) {
    if (header[j].empty())
      throw IngestionError("load_dataset: unnamed column " + std::to_string(j + 1) +
                           " in header");
    if (header[j] == opts.label_column) {
      if (label_col >= 0)
        throw IngestionError("load_dataset: duplicate column '" + header[j] + "'");
      label_col = static_cast<Index>(j);
    } else if (header[j] == opts.time_column) {
      if (time_col >= 0)
        throw IngestionError("load_dataset: duplicate column '" + header[j] + "'");
      time_col = static_cast<Index>(j);
    } else {
      variables.push_back(header[j]);
      var_cols.push_back(static_cast<Index>(j));
    }
  }
  if (variables.empty())
    throw IngestionError("load_dataset: no variable columns in '" + path + "'");

  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  std::vector<double> times;
  Index row_number = 1;  // header is row 1
  while (std::getline(in, line)) {
    ++row_number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (detail::trim_ws(line).empty()) continue;
    const std::vector<std::string> cells = detail::split_line(line, opts.delimiter);
    if (cells.size() != header.size())
      throw IngestionError("load_dataset: row " + std::to_string(row_number) +
                           " has " + std::to_string(cells.size()) +
                           " cells, expected " + std::to_string(header.size()));
    std::vector<double> parsed(cells.size());
    for (std::size_t j = 0; j < cells.size(); ++j) {
      if (!detail::parse_cell(cells[j], &parsed[j]))
        throw IngestionError("load_dataset: non-numeric cell at row " +
                             std::to_string(row_number) + ", column '" +
                             header[j] + "'");
      if (!std::isfinite(parsed[j]))
        throw IngestionError("load_dataset: non-finite value at row " +
                             std::to_string(row_number) + ", column '" +
                             header[j] + "'");
    }
    if (label_col >= 0) {
      const double y = parsed[static_cast<std::size_t>(label_col)];
      if (y != 0.0 && y != 1.0)
        throw IngestionError("load_dataset: label at row " +
                             std::to_string(row_number) + " is not 0 or 1");
      labels.push_back(static_cast<int>(y));
    }
    if (time_col >= 0) times.push_back(parsed[static_cast<std::size_t>(time_col)]);
    std::vector<double> vars(var_cols.size());
    for (std::size_t j = 0; j < var_cols.size(); ++j)
      vars[j] = parsed[static_cast<std::size_t>(var_cols[j])];
    rows.push_back(std::move(vars));
  }
  if (rows.empty())
    throw IngestionError("load_dataset: '" + path + "' has a header but no rows");

  Dataset ds;
  ds.variables = std::move(variables);
  ds.X.resize(static_cast<Index>(rows.size()), static_cast<Index>(var_cols.size()));
  for (Index i = 0; i < ds.X.rows(); ++i)
    for (Index j = 0; j < ds.X.cols(); ++j)
      ds.X(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  ds.labels = std::move(labels);
  if (!times.empty()) {
    ds.time.resize(static_cast<Index>(times.size()));
    for (std::size_t i = 0; i < times.size(); ++i)
      ds.time[static_cast<Index>(i)] = times[i];
  }
  return ds;
}

inline void save_dataset(const std::string& path, const Dataset& ds,
                         const LoadOptions& opts = {}) {
  std::ofstream out(path);
  if (!out) throw IngestionError("save_dataset: cannot open '" + path + "'");
  bool first = true;
  auto emit = [&](const std::string& name) {
    if (!first) out << opts.delimiter;
    out << name;
    first = false;
  };
  if (ds.has_time()) emit(opts.time_column);
  for (const auto& v : ds.variables) emit(v);
  if (ds.has_labels()) emit(opts.label_column);
  out << '\n';
  for (Index i = 0; i < ds.X.rows(); ++i) {
    first = true;
    auto cell = [&](const std::string& s) {
      if (!first) out << opts.delimiter;
      out << s;
      first = false;
    };
    if (ds.has_time()) cell(format_double(ds.time[i]));
    for (Index j = 0; j < ds.X.cols(); ++j) cell(format_double(ds.X(i, j)));
    if (ds.has_labels()) cell(std::to_string(ds.labels[static_cast<std::size_t>(i)]));
    out << '\n';
  }
  if (!out) throw IngestionError("save_dataset: write to '" + path + "' failed");
}

struct Scaler {
  Vector mean;
  Vector sd;  // (n-1) denominator
  std::vector<std::string> variables;
};

inline Scaler fit_scaler(const Dataset& healthy) {
  const Index n = healthy.X.rows();
  const Index p = healthy.X.cols();
  if (n < 2) throw InputError("fit_scaler: need at least two rows");
  Scaler s;
  s.variables = healthy.variables;
  s.mean = healthy.X.colwise().mean();
  s.sd.resize(p);
  for (Index j = 0; j < p; ++j) {
    const double ss = (healthy.X.col(j).array() - s.mean[j]).square().sum();
    s.sd[j] = std::sqrt(ss / double(n - 1));
    if (!(s.sd[j] > 0.0)) {
      const std::string name = j < static_cast<Index>(healthy.variables.size())
                                   ? healthy.variables[static_cast<std::size_t>(j)]
                                   : std::to_string(j);
      throw DegenerateDataError("fit_scaler: variable '" + name + "' is constant");
    }
  }
  return s;
}

inline Dataset apply_scaler(const Scaler& scaler, const Dataset& ds) {
  if (ds.X.cols() != scaler.mean.size())
    throw InputError("apply_scaler: column count does not match the scaler");
  Dataset out = ds;
  for (Index j = 0; j < ds.X.cols(); ++j)
    out.X.col(j) = (ds.X.col(j).array() - scaler.mean[j]) / scaler.sd[j];
  return out;
}

}  // namespace kmspc

#endif  // KMSPC_DATASET_HPP

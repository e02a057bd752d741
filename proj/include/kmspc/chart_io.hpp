#ifndef KMSPC_CHART_IO_HPP
#define KMSPC_CHART_IO_HPP

#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "kmspc/common.hpp"
#include "kmspc/dataset.hpp"
#include "kmspc/mcmc.hpp"
#include "kmspc/propagate.hpp"

namespace kmspc {

namespace detail {

inline void require_stream(const std::ofstream& out, const std::string& path) {
  if (!out) throw IngestionError("cannot write '" + path + "'");
}

}  // namespace detail

inline void write_theta(const std::string& path,
                        const std::vector<std::string>& names, const Vector& theta) {
  if (static_cast<Index>(names.size()) != theta.size())
    throw InputError("write_theta: name count does not match parameter count");
  std::ofstream out(path);
  detail::require_stream(out, path);
  for (Index i = 0; i < theta.size(); ++i)
    out << names[static_cast<std::size_t>(i)] << ' ' << format_double(theta[i])
        << '\n';
  detail::require_stream(out, path);
}

inline Vector read_theta(const std::string& path,
                         const std::vector<std::string>& names) {
  std::ifstream in(path);
  if (!in) throw IngestionError("read_theta: cannot open '" + path + "'");
  std::vector<double> values;
  std::string name;
  double value = 0.0;
  std::size_t i = 0;
  while (in >> name >> value) {
    if (i >= names.size() || name != names[i])
      throw IngestionError("read_theta: '" + path + "' line " +
                           std::to_string(i + 1) + " names '" + name +
                           "', expected '" +
                           (i < names.size() ? names[i] : std::string("<end>")) +
                           "'");
    values.push_back(value);
    ++i;
  }
  if (values.size() != names.size())
    throw IngestionError("read_theta: '" + path + "' has " +
                         std::to_string(values.size()) + " parameters, expected " +
                         std::to_string(names.size()));
  Vector theta(static_cast<Index>(values.size()));
  for (std::size_t j = 0; j < values.size(); ++j)
    theta[static_cast<Index>(j)] = values[j];
  return theta;
}

// One row per draw, burn-in included; kept = 0 marks the burn-in prefix.
inline void write_chain_csv(const std::string& path, const Chain& chain,
                            const std::vector<std::string>& names) {
  if (static_cast<Index>(names.size()) != chain.draws.cols())
    throw InputError("write_chain_csv: name count does not match the chain");
  std::ofstream out(path);
  detail::require_stream(out, path);
  out << "draw,kept";
  for (const auto& n : names) out << ',' << n;
  out << ",log_post\n";
  for (Index i = 0; i < chain.draws.rows(); ++i) {
    out << i << ',' << (i < chain.burn_in ? 0 : 1);
    for (Index j = 0; j < chain.draws.cols(); ++j)
      out << ',' << format_double(chain.draws(i, j));
    out << ',' << format_double(chain.log_post[i]) << '\n';
  }
  detail::require_stream(out, path);
}

inline Chain read_chain_csv(const std::string& path,
                            const std::vector<std::string>& names) {
  std::ifstream in(path);
  if (!in) throw IngestionError("read_chain_csv: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line))
    throw IngestionError("read_chain_csv: '" + path + "' is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::string expected = "draw,kept";
  for (const auto& n : names) expected += "," + n;
  expected += ",log_post";
  if (line != expected)
    throw IngestionError("read_chain_csv: '" + path + "' header is '" + line +
                         "', expected '" + expected + "'");
  std::vector<std::vector<double>> rows;
  Index burn = 0;
  Index row_no = 1;
  while (std::getline(in, line)) {
    ++row_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (detail::trim_ws(line).empty()) continue;
    const auto cells = detail::split_line(line, ',');
    if (cells.size() != names.size() + 3)
      throw IngestionError("read_chain_csv: row " + std::to_string(row_no) +
                           " has " + std::to_string(cells.size()) + " cells");
    std::vector<double> parsed(cells.size());
    for (std::size_t j = 0; j < cells.size(); ++j)
      if (!detail::parse_cell(cells[j], &parsed[j]))
        throw IngestionError("read_chain_csv: non-numeric cell at row " +
                             std::to_string(row_no));
    if (parsed[1] == 0.0) ++burn;
    rows.push_back(std::move(parsed));
  }
  if (rows.empty())
    throw IngestionError("read_chain_csv: '" + path + "' has no draws");
  Chain chain;
  chain.burn_in = burn;
  chain.draws.resize(static_cast<Index>(rows.size()),
                     static_cast<Index>(names.size()));
  chain.log_post.resize(static_cast<Index>(rows.size()));
  for (Index i = 0; i < chain.draws.rows(); ++i) {
    const auto& r = rows[static_cast<std::size_t>(i)];
    for (Index j = 0; j < chain.draws.cols(); ++j)
      chain.draws(i, j) = r[static_cast<std::size_t>(j) + 2];
    chain.log_post[i] = r.back();
  }
  return chain;
}

// Chart table: per-timestamp posterior summaries plus the chart evaluated at
// the posterior-mean parameters ("point" columns). Limit columns repeat the
// per-chart scalars so each row is self-contained.
struct ChartTable {
  Vector timestamp;
  Vector point;
  Vector point_limit;
  Vector mean;
  Vector median;
  Vector lower;
  Vector upper;
  Vector limit_mean;
  Vector limit_lower;
  Vector limit_upper;

  Index rows() const { return timestamp.size(); }
};

inline ChartTable make_chart_table(const Vector& timestamps, const Vector& point,
                                   double point_limit,
                                   const ProbabilisticChart& chart) {
  const Index n = timestamps.size();
  if (point.size() != n || chart.mean.size() != n)
    throw InputError("make_chart_table: column lengths disagree");
  ChartTable t;
  t.timestamp = timestamps;
  t.point = point;
  t.point_limit = Vector::Constant(n, point_limit);
  t.mean = chart.mean;
  t.median = chart.median;
  t.lower = chart.lower;
  t.upper = chart.upper;
  t.limit_mean = Vector::Constant(n, chart.limit_mean);
  t.limit_lower = Vector::Constant(n, chart.limit_lower);
  t.limit_upper = Vector::Constant(n, chart.limit_upper);
  return t;
}

inline const char* chart_csv_header() {
  return "timestamp,point,point_limit,mean,median,lower,upper,limit_mean,"
         "limit_lower,limit_upper";
}

inline void write_chart_csv(const std::string& path, const ChartTable& t) {
  std::ofstream out(path);
  detail::require_stream(out, path);
  out << chart_csv_header() << '\n';
  for (Index i = 0; i < t.rows(); ++i) {
    out << format_double(t.timestamp[i]) << ',' << format_double(t.point[i]) << ','
        << format_double(t.point_limit[i]) << ',' << format_double(t.mean[i]) << ','
        << format_double(t.median[i]) << ',' << format_double(t.lower[i]) << ','
        << format_double(t.upper[i]) << ',' << format_double(t.limit_mean[i]) << ','
        << format_double(t.limit_lower[i]) << ','
        << format_double(t.limit_upper[i]) << '\n';
  }
  detail::require_stream(out, path);
}

inline ChartTable read_chart_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("read_chart_csv: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line))
    throw IngestionError("read_chart_csv: '" + path + "' is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != chart_csv_header())
    throw IngestionError("read_chart_csv: '" + path + "' has an unexpected header");
  std::vector<std::vector<double>> rows;
  Index row_no = 1;
  while (std::getline(in, line)) {
    ++row_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (detail::trim_ws(line).empty()) continue;
    const auto cells = detail::split_line(line, ',');
    if (cells.size() != 10)
      throw IngestionError("read_chart_csv: row " + std::to_string(row_no) +
                           " has " + std::to_string(cells.size()) +
                           " cells, expected 10");
    std::vector<double> parsed(10);
    for (std::size_t j = 0; j < 10; ++j)
      if (!detail::parse_cell(cells[j], &parsed[j]))
        throw IngestionError("read_chart_csv: non-numeric cell at row " +
                             std::to_string(row_no) + ", column " +
                             std::to_string(j + 1));
    rows.push_back(std::move(parsed));
  }
  if (rows.empty())
    throw IngestionError("read_chart_csv: '" + path + "' has no data rows");
  ChartTable t;
  const Index n = static_cast<Index>(rows.size());
  Vector* cols[10] = {&t.timestamp,   &t.point, &t.point_limit, &t.mean,
                      &t.median,      &t.lower, &t.upper,       &t.limit_mean,
                      &t.limit_lower, &t.limit_upper};
  for (auto* c : cols) c->resize(n);
  for (Index i = 0; i < n; ++i)
    for (std::size_t j = 0; j < 10; ++j)
      (*cols[j])[i] = rows[static_cast<std::size_t>(i)][j];
  return t;
}

struct ContributionBlock {
  Index timestamp = 0;
  std::vector<std::string> variables;
  Vector mean;
  Vector lower;
  Vector upper;
  std::vector<Index> rank;  // 1 = largest |mean|
};

inline const char* contrib_csv_header() {
  return "timestamp,variable,mean,lower,upper,rank";
}

inline void write_contrib_csv(const std::string& path,
                              const std::vector<ContributionBlock>& blocks) {
  std::ofstream out(path);
  detail::require_stream(out, path);
  out << contrib_csv_header() << '\n';
  for (const auto& b : blocks) {
    for (Index j = 0; j < b.mean.size(); ++j) {
      out << b.timestamp << ',' << b.variables[static_cast<std::size_t>(j)] << ','
          << format_double(b.mean[j]) << ',' << format_double(b.lower[j]) << ','
          << format_double(b.upper[j]) << ',' << b.rank[static_cast<std::size_t>(j)]
          << '\n';
    }
  }
  detail::require_stream(out, path);
}

inline std::vector<ContributionBlock> read_contrib_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("read_contrib_csv: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line))
    throw IngestionError("read_contrib_csv: '" + path + "' is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != contrib_csv_header())
    throw IngestionError("read_contrib_csv: '" + path +
                         "' has an unexpected header");
  std::vector<ContributionBlock> blocks;
  std::vector<std::vector<double>> block_rows;
  Index row_no = 1;
  while (std::getline(in, line)) {
    ++row_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (detail::trim_ws(line).empty()) continue;
    const auto cells = detail::split_line(line, ',');
    if (cells.size() != 6)
      throw IngestionError("read_contrib_csv: row " + std::to_string(row_no) +
                           " has " + std::to_string(cells.size()) +
                           " cells, expected 6");
    double ts = 0, mean = 0, lower = 0, upper = 0, rank = 0;
    if (!detail::parse_cell(cells[0], &ts) ||
        !detail::parse_cell(cells[2], &mean) ||
        !detail::parse_cell(cells[3], &lower) ||
        !detail::parse_cell(cells[4], &upper) ||
        !detail::parse_cell(cells[5], &rank))
      throw IngestionError("read_contrib_csv: non-numeric cell at row " +
                           std::to_string(row_no));
    const Index t = static_cast<Index>(ts);
    if (blocks.empty() || blocks.back().timestamp != t) {
      blocks.emplace_back();
      blocks.back().timestamp = t;
      block_rows.emplace_back();
    }
    auto& b = blocks.back();
    b.variables.push_back(cells[1]);
    auto& values = block_rows.back();
    values.push_back(mean);
    values.push_back(lower);
    values.push_back(upper);
    b.rank.push_back(static_cast<Index>(rank));
  }
  if (blocks.empty())
    throw IngestionError("read_contrib_csv: '" + path + "' has no data rows");
  for (std::size_t k = 0; k < blocks.size(); ++k) {
    auto& b = blocks[k];
    const Index m = static_cast<Index>(b.variables.size());
    b.mean.resize(m);
    b.lower.resize(m);
    b.upper.resize(m);
    for (Index j = 0; j < m; ++j) {
      b.mean[j] = block_rows[k][static_cast<std::size_t>(3 * j)];
      b.lower[j] = block_rows[k][static_cast<std::size_t>(3 * j + 1)];
      b.upper[j] = block_rows[k][static_cast<std::size_t>(3 * j + 2)];
    }
  }
  return blocks;
}

inline void write_metrics_csv(
    const std::string& path,
    const std::vector<std::pair<std::string, double>>& rows) {
  std::ofstream out(path);
  detail::require_stream(out, path);
  out << "metric,value\n";
  for (const auto& [name, value] : rows)
    out << name << ',' << format_double(value) << '\n';
  detail::require_stream(out, path);
}

inline std::vector<std::pair<std::string, double>> read_metrics_csv(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("read_metrics_csv: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line))
    throw IngestionError("read_metrics_csv: '" + path + "' is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "metric,value")
    throw IngestionError("read_metrics_csv: '" + path +
                         "' has an unexpected header");
  std::vector<std::pair<std::string, double>> rows;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (detail::trim_ws(line).empty()) continue;
    const auto cells = detail::split_line(line, ',');
    double v = 0.0;
    if (cells.size() != 2 || !detail::parse_cell(cells[1], &v))
      throw IngestionError("read_metrics_csv: malformed row '" + line + "'");
    rows.emplace_back(cells[0], v);
  }
  return rows;
}

}  // namespace kmspc

#endif  // KMSPC_CHART_IO_HPP

#include "fetwfe/panel.hpp"

#include "fetwfe/design.hpp"
#include "fetwfe/error.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

namespace fetwfe {

namespace {

[[noreturn]] void fail(ErrorCode code, const std::string& msg) { throw Error(code, "panel", msg); }

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (char c : line) {
    if (c == '"') {
      quoted = !quoted;
    } else if (c == ',' && !quoted) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(trim(cur));
  return out;
}

std::string where(std::size_t line, const std::string& column) {
  return "line " + std::to_string(line) + ", column '" + column + "'";
}

double parse_double(const std::string& s, std::size_t line, const std::string& column) {
  if (s.empty()) fail(ErrorCode::MissingCell, "missing value at " + where(line, column));
  double v = 0.0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v))
    fail(ErrorCode::Parse, "cannot parse '" + s + "' as a number at " + where(line, column));
  return v;
}

long long parse_label(const std::string& s, std::size_t line, const std::string& column) {
  if (s.empty()) fail(ErrorCode::MissingCell, "missing value at " + where(line, column));
  long long v = 0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec == std::errc() && ptr == end) return v;
  // Accept integral values written with a decimal point, e.g. "1970.0".
  const double d = parse_double(s, line, column);
  if (d != std::floor(d)) fail(ErrorCode::Parse, "time label '" + s + "' is not an integer at " + where(line, column));
  return static_cast<long long>(d);
}

}  // namespace

PanelDataset PanelDataset::make(int n_times, std::vector<int> assignment, Eigen::MatrixXd covariates,
                                Eigen::MatrixXd response, std::vector<std::string> unit_ids,
                                std::vector<std::string> covariate_names, std::vector<long long> time_labels) {
  const int n = static_cast<int>(assignment.size());
  if (n_times < 2) fail(ErrorCode::Parse, "a panel needs at least two time periods");
  if (n == 0) fail(ErrorCode::Parse, "a panel needs at least one unit");
  if (response.rows() != n || response.cols() != n_times)
    fail(ErrorCode::MissingCell, "response must be N x T (" + std::to_string(n) + " x " +
                                     std::to_string(n_times) + ")");
  if (covariates.rows() != n && !(covariates.size() == 0))
    fail(ErrorCode::MissingCell, "covariates must have one row per unit");
  if (covariates.size() == 0) covariates.resize(n, covariates.cols());

  std::set<int> cohort_set;
  bool has_never = false;
  for (int i = 0; i < n; ++i) {
    const int w = assignment[static_cast<std::size_t>(i)];
    if (w == 0) {
      has_never = true;
      continue;
    }
    if (w == 1)
      fail(ErrorCode::CohortAtTimeOne, "unit " + std::to_string(i) + " is treated in the first period");
    if (w < 0 || w > n_times)
      fail(ErrorCode::CohortOutOfRange, "unit " + std::to_string(i) + " has first treatment time " +
                                            std::to_string(w) + " outside 2.." + std::to_string(n_times));
    cohort_set.insert(w);
  }
  if (!has_never) fail(ErrorCode::NoNeverTreated, "no never-treated units");
  if (!response.allFinite()) fail(ErrorCode::Parse, "response contains non-finite values");
  if (!covariates.allFinite()) fail(ErrorCode::Parse, "covariates contain non-finite values");

  for (Eigen::Index j = 0; j < covariates.cols(); ++j) {
    const auto col = covariates.col(j);
    if ((col.array() == col(0)).all())
      fail(ErrorCode::ZeroVarianceCovariate, "covariate " + std::to_string(j + 1) + " has zero variance");
  }

  PanelDataset out;
  out.n_units = n;
  out.n_times = n_times;
  out.cohorts.assign(cohort_set.begin(), cohort_set.end());
  out.assignment = std::move(assignment);
  out.covariates = std::move(covariates);
  out.response = std::move(response);

  if (unit_ids.empty())
    for (int i = 0; i < n; ++i) unit_ids.push_back(std::to_string(i + 1));
  if (static_cast<int>(unit_ids.size()) != n) fail(ErrorCode::Parse, "unit id count does not match N");
  if (covariate_names.empty())
    for (Eigen::Index j = 0; j < out.covariates.cols(); ++j) covariate_names.push_back("x" + std::to_string(j + 1));
  if (static_cast<Eigen::Index>(covariate_names.size()) != out.covariates.cols())
    fail(ErrorCode::Parse, "covariate name count does not match d");
  if (time_labels.empty())
    for (int t = 1; t <= n_times; ++t) time_labels.push_back(t);
  if (static_cast<int>(time_labels.size()) != n_times) fail(ErrorCode::Parse, "time label count does not match T");

  out.unit_ids = std::move(unit_ids);
  out.covariate_names = std::move(covariate_names);
  out.time_labels = std::move(time_labels);
  return out;
}

int CohortCounts::at(int cohort) const {
  if (cohort == 0) return n_0;
  auto it = n_r.find(cohort);
  return it == n_r.end() ? 0 : it->second;
}

CohortCounts cohort_counts(const std::vector<int>& assignment, const std::vector<int>& cohorts) {
  CohortCounts c;
  for (int r : cohorts) c.n_r[r] = 0;
  for (int w : assignment) {
    if (w == 0) {
      ++c.n_0;
    } else {
      ++c.n_r[w];
      ++c.n_tau;
    }
  }
  return c;
}

CohortCounts cohort_counts(const PanelDataset& data) { return cohort_counts(data.assignment, data.cohorts); }

bool ValidationReport::ok() const { return count(Severity::Error) == 0; }

int ValidationReport::count(Severity s) const {
  return static_cast<int>(std::count_if(issues.begin(), issues.end(), [s](const auto& i) { return i.severity == s; }));
}

bool operator==(const ValidationIssue& a, const ValidationIssue& b) {
  return a.severity == b.severity && a.code == b.code && a.message == b.message && a.cohort == b.cohort;
}

bool ValidationReport::operator==(const ValidationReport& o) const { return issues == o.issues; }

ValidationReport validate_rank_preconditions(const PanelDataset& data) {
  ValidationReport report;
  const int d = data.n_covariates();
  const auto counts = cohort_counts(data);

  auto check_group = [&](int cohort, int n_units, const std::string& name) {
    if (n_units < d + 1) {
      report.issues.push_back({Severity::Warning, "cohort_smaller_than_d_plus_1",
                               name + " has " + std::to_string(n_units) + " units, fewer than d + 1 = " +
                                   std::to_string(d + 1) + "; the saturated design is rank deficient",
                               cohort});
    }
  };
  check_group(0, counts.n_0, "never-treated group");
  for (const auto& [r, n_r] : counts.n_r)
    check_group(r, n_r, "cohort " + std::to_string(data.label_of(r)));

  const auto pc = count_params(data.n_times, data.cohorts, d);
  const long long nt = static_cast<long long>(data.n_units) * data.n_times;
  if (pc.p > nt) {
    report.issues.push_back({Severity::Error, "more_parameters_than_observations",
                             "p = " + std::to_string(pc.p) + " exceeds N*T = " + std::to_string(nt),
                             std::nullopt});
  }
  return report;
}

LoadedPanel load_panel(std::istream& in, const LoadOptions& options) {
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (!trim(line).empty()) {
      header = split_csv_line(line);
      break;
    }
  }
  if (header.size() < 4) fail(ErrorCode::Parse, "header must start with unit,time,response,cohort");
  const char* expected[] = {"unit", "time", "response", "cohort"};
  for (std::size_t k = 0; k < 4; ++k) {
    if (header[k] != expected[k])
      fail(ErrorCode::Parse, "header column " + std::to_string(k + 1) + " must be '" + expected[k] + "', got '" +
                                 header[k] + "'");
  }
  const std::size_t d = header.size() - 4;
  const std::vector<std::string> cov_names(header.begin() + 4, header.end());

  struct Row {
    std::size_t line;
    long long time;
    double response;
    long long cohort;
    std::vector<double> x;
  };
  std::map<std::string, std::vector<Row>> by_unit;
  std::vector<std::string> unit_order;
  std::set<long long> time_set;

  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto f = split_csv_line(line);
    if (f.size() != header.size())
      fail(ErrorCode::MissingCell, "line " + std::to_string(line_no) + " has " + std::to_string(f.size()) +
                                       " fields, expected " + std::to_string(header.size()));
    if (f[0].empty()) fail(ErrorCode::MissingCell, "missing value at " + where(line_no, "unit"));
    Row row{line_no, parse_label(f[1], line_no, "time"), parse_double(f[2], line_no, "response"),
            parse_label(f[3], line_no, "cohort"), {}};
    row.x.reserve(d);
    for (std::size_t j = 0; j < d; ++j) row.x.push_back(parse_double(f[4 + j], line_no, cov_names[j]));
    if (!by_unit.count(f[0])) unit_order.push_back(f[0]);
    time_set.insert(row.time);
    by_unit[f[0]].push_back(std::move(row));
  }
  if (by_unit.empty()) fail(ErrorCode::Parse, "no data rows");

  const std::vector<long long> labels(time_set.begin(), time_set.end());
  const int n_times = static_cast<int>(labels.size());
  std::map<long long, int> label_to_t;
  for (int t = 0; t < n_times; ++t) label_to_t[labels[static_cast<std::size_t>(t)]] = t + 1;

  LoadedPanel out;
  std::vector<int> assignment;
  std::vector<std::string> ids;
  std::vector<std::vector<double>> x_rows;
  std::vector<std::vector<double>> y_rows;
  bool varying_warned = false;

  for (const auto& id : unit_order) {
    auto& rows = by_unit[id];
    std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.time < b.time; });
    for (std::size_t k = 1; k < rows.size(); ++k) {
      if (rows[k].time == rows[k - 1].time)
        fail(ErrorCode::Parse, "unit '" + id + "' has duplicate time " + std::to_string(rows[k].time) + " (line " +
                                   std::to_string(rows[k].line) + ")");
    }
    if (static_cast<int>(rows.size()) != n_times) {
      for (long long lab : labels) {
        if (std::none_of(rows.begin(), rows.end(), [lab](const Row& r) { return r.time == lab; }))
          fail(ErrorCode::MissingCell, "unit '" + id + "' has no row for time " + std::to_string(lab) +
                                           " (unbalanced panel; first row of unit at line " +
                                           std::to_string(rows.front().line) + ")");
      }
    }
    const long long cohort_label = rows.front().cohort;
    for (const auto& r : rows) {
      if (r.cohort != cohort_label)
        fail(ErrorCode::InconsistentTreatmentTime, "unit '" + id + "' changes first treatment time at line " +
                                                       std::to_string(r.line));
      if (!varying_warned && r.x != rows.front().x) {
        out.warnings.push_back("covariates vary within unit '" + id +
                               "'; the first-period value is used as the time-invariant control");
        varying_warned = true;
      }
    }
    int w = 0;
    if (cohort_label != 0) {
      auto it = label_to_t.find(cohort_label);
      if (it == label_to_t.end())
        fail(ErrorCode::CohortOutOfRange, "unit '" + id + "' has first treatment time " +
                                              std::to_string(cohort_label) + " outside the observed time labels");
      w = it->second;
    }
    if (w == 1) {
      if (options.drop_always_treated) {
        out.dropped_units.push_back(id);
        continue;
      }
      fail(ErrorCode::CohortAtTimeOne, "unit '" + id + "' is treated in the first period (" +
                                           std::to_string(cohort_label) +
                                           "); pass --drop-always-treated to remove such units (line " +
                                           std::to_string(rows.front().line) + ")");
    }
    assignment.push_back(w);
    ids.push_back(id);
    x_rows.push_back(rows.front().x);
    std::vector<double> y;
    for (const auto& r : rows) y.push_back(r.response);
    y_rows.push_back(std::move(y));
  }

  const int n = static_cast<int>(ids.size());
  Eigen::MatrixXd x(n, static_cast<Eigen::Index>(d));
  Eigen::MatrixXd y(n, n_times);
  for (int i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) x(i, static_cast<Eigen::Index>(j)) = x_rows[static_cast<std::size_t>(i)][j];
    for (int t = 0; t < n_times; ++t) y(i, t) = y_rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(t)];
  }
  out.data = PanelDataset::make(n_times, std::move(assignment), std::move(x), std::move(y), std::move(ids), cov_names,
                                labels);
  return out;
}

LoadedPanel load_panel_csv(const std::string& path, const LoadOptions& options) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "panel", "cannot open '" + path + "'");
  return load_panel(in, options);
}

void write_panel_csv(std::ostream& out, const PanelDataset& data) {
  out << "unit,time,response,cohort";
  for (const auto& name : data.covariate_names) out << ',' << name;
  out << '\n';
  std::ostringstream buf;
  buf.precision(17);
  for (int i = 0; i < data.n_units; ++i) {
    const int w = data.assignment[static_cast<std::size_t>(i)];
    const long long cohort_label = w == 0 ? 0 : data.label_of(w);
    for (int t = 1; t <= data.n_times; ++t) {
      buf.str("");
      buf << data.unit_ids[static_cast<std::size_t>(i)] << ',' << data.label_of(t) << ',' << data.response(i, t - 1)
          << ',' << cohort_label;
      for (Eigen::Index j = 0; j < data.covariates.cols(); ++j) buf << ',' << data.covariates(i, j);
      out << buf.str() << '\n';
    }
  }
}

}  // namespace fetwfe

#include "cli.hpp"

#include "fetwfe/error.hpp"
#include "fetwfe/estimate.hpp"
#include "fetwfe/panel.hpp"
#include "fetwfe/report.hpp"
#include "fetwfe/simulate.hpp"

#include <CLI11.hpp>
#include <openssl/evp.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <sstream>

namespace fetwfe::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

[[noreturn]] void input_error(ErrorCode code, const std::string& msg) { throw Error(code, "cli", msg); }

json file_entry(const std::string& path) { return {{"path", path}, {"sha256", sha256_file(path)}}; }

/// Runs a command body and maps failures onto exit codes.
template <class F>
int guarded(std::ostream& err, F&& body) {
  try {
    return body();
  } catch (const Error& e) {
    err << "error [" << e.module() << "/" << to_string(e.code()) << "]: " << e.what() << "\n";
    return e.is_input_error() ? kInputError : kInternalError;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return kInternalError;
  }
}

std::vector<std::vector<std::string>> read_csv_rows(const std::string& path, const std::vector<std::string>& header) {
  std::ifstream in(path);
  if (!in) input_error(ErrorCode::Io, "cannot open '" + path + "'");
  std::vector<std::vector<std::string>> rows;
  std::string line;
  bool seen_header = false;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    for (std::string f; std::getline(ss, f, ',');) fields.push_back(f);
    if (!seen_header) {
      if (fields != header) {
        std::string want;
        for (const auto& h : header) want += (want.empty() ? "" : ",") + h;
        input_error(ErrorCode::Parse, path + ": header must be '" + want + "'");
      }
      seen_header = true;
      continue;
    }
    if (fields.size() != header.size())
      input_error(ErrorCode::Parse, path + ": line " + std::to_string(line_no) + " has " +
                                        std::to_string(fields.size()) + " fields");
    rows.push_back(std::move(fields));
  }
  return rows;
}

template <class T>
T parse_number(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    T v;
    if constexpr (std::is_same_v<T, double>) v = std::stod(s, &used);
    else v = static_cast<T>(std::stoll(s, &used));
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    input_error(ErrorCode::Parse, where + ": cannot parse '" + s + "'");
  }
}

/// Normalized time for a source label; 0 stays the never-treated code.
int time_of_label(const PanelDataset& data, long long label, const std::string& where) {
  if (label == 0) return 0;
  for (int t = 1; t <= data.n_times; ++t)
    if (data.label_of(t) == label) return t;
  input_error(ErrorCode::Parse, where + ": unknown time label " + std::to_string(label));
}

CohortCounts read_split_counts(const std::string& path, const PanelDataset& data) {
  CohortCounts c;
  for (int r : data.cohorts) c.n_r[r] = 0;
  for (const auto& row : read_csv_rows(path, {"cohort", "count"})) {
    const int r = time_of_label(data, parse_number<long long>(row[0], path), path);
    const int n = parse_number<int>(row[1], path);
    if (n < 0) input_error(ErrorCode::Parse, path + ": negative count");
    if (r == 0) {
      c.n_0 += n;
    } else {
      if (!c.n_r.count(r)) input_error(ErrorCode::Parse, path + ": " + row[0] + " is not a cohort of the panel");
      c.n_r[r] += n;
      c.n_tau += n;
    }
  }
  return c;
}

CellMap read_weights(const std::string& path, const PanelDataset& data) {
  CellMap w;
  for (const auto& row : read_csv_rows(path, {"cohort", "time", "weight"})) {
    const int r = time_of_label(data, parse_number<long long>(row[0], path), path);
    const int t = time_of_label(data, parse_number<long long>(row[1], path), path);
    w[{r, t}] = parse_number<double>(row[2], path);
  }
  return w;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) input_error(ErrorCode::Io, "cannot write '" + path.string() + "'");
  f << text;
}

void prepare_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) input_error(ErrorCode::Io, "cannot create '" + dir + "': " + ec.message());
}

void write_manifest(RunManifest& m, const fs::path& dir) {
  write_text(dir / "manifest.json", m.to_json().dump(2) + "\n");
}

LoadedPanel load_reporting(const std::string& csv, bool drop, std::ostream& err) {
  LoadedPanel loaded = load_panel_csv(csv, LoadOptions{drop});
  for (const auto& w : loaded.warnings) err << "warning: " << w << "\n";
  if (!loaded.dropped_units.empty()) {
    err << "dropped " << loaded.dropped_units.size() << " units treated in the first period:";
    for (const auto& u : loaded.dropped_units) err << " " << u;
    err << "\n";
  }
  return loaded;
}

json issues_json(const ValidationReport& report) {
  json arr = json::array();
  for (const auto& i : report.issues) {
    const char* sev = i.severity == Severity::Error ? "error" : i.severity == Severity::Warning ? "warning" : "info";
    json e{{"severity", sev}, {"code", i.code}, {"message", i.message}};
    if (i.cohort) e["cohort"] = *i.cohort;
    arr.push_back(std::move(e));
  }
  return arr;
}

void print_issues(const ValidationReport& report, std::ostream& err) {
  for (const auto& i : report.issues)
    err << (i.severity == Severity::Error ? "error: " : "warning: ") << i.message << "\n";
}

}  // namespace

json RunManifest::to_json() const {
  json in = json::array();
  for (const auto& p : inputs) in.push_back(file_entry(p));
  json outs = json::array();
  for (const auto& p : outputs) outs.push_back(file_entry(p));
  return {{"command", command},
          {"config", config},
          {"inputs", in},
          {"outputs", outs},
          {"library_version", kVersion},
          {"wall_clock_seconds", wall_clock_seconds}};
}

std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) input_error(ErrorCode::Io, "cannot open '" + path + "'");
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("SHA-256 initialization failed");
  char buf[1 << 16];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf, static_cast<std::size_t>(in.gcount()));
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), md, &len);
  std::ostringstream hex;
  for (unsigned int k = 0; k < len; ++k) hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[k]);
  return hex.str();
}

int cmd_validate(const ValidateArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const LoadedPanel loaded = load_reporting(args.csv, args.drop_always_treated, err);
    const PanelDataset& d = loaded.data;
    const ValidationReport report = validate_rank_preconditions(d);
    print_issues(report, err);

    out << "units: " << d.n_units << ", periods: " << d.n_times << " (" << d.label_of(1) << "-"
        << d.label_of(d.n_times) << "), covariates: " << d.n_covariates() << "\n";
    const CohortCounts counts = cohort_counts(d);
    out << "never treated: " << counts.n_0 << "\ncohorts:";
    for (const auto& [r, n] : counts.n_r) out << " " << d.label_of(r) << " (" << n << ")";
    const auto pc = count_params(d.n_times, d.cohorts, d.n_covariates());
    out << "\nparameters: " << pc.p << " for " << static_cast<long long>(d.n_units) * d.n_times
        << " observations\n" << (report.ok() ? "valid" : "invalid") << "\n";

    if (args.json_out) {
      json j{{"valid", report.ok()},
             {"n_units", d.n_units},
             {"n_times", d.n_times},
             {"n_covariates", d.n_covariates()},
             {"p", pc.p},
             {"dropped_units", loaded.dropped_units},
             {"warnings", loaded.warnings},
             {"issues", issues_json(report)}};
      write_text(*args.json_out, j.dump(2) + "\n");
    }
    return report.ok() ? kSuccess : kInputError;
  });
}

int cmd_estimate(const EstimateArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const auto start = std::chrono::steady_clock::now();
    const LoadedPanel loaded = load_reporting(args.csv, args.drop_always_treated, err);
    const PanelDataset& data = loaded.data;
    const ValidationReport checks = validate_rank_preconditions(data);
    print_issues(checks, err);
    if (!checks.ok()) return static_cast<int>(kInputError);

    EstimateOptions o;
    o.solver.q = args.q;
    o.solver.lambda_grid_size = args.grid_size;
    o.solver.lambda_min_ratio = args.lambda_min_ratio;
    o.solver.ridge_lambda2 = args.ridge_lambda2;
    o.solver.validate();
    o.alpha = args.alpha;
    if (!(args.alpha > 0.0 && args.alpha <= 1.0)) input_error(ErrorCode::Config, "--alpha must lie in (0, 1]");
    if (args.sigma_sq.has_value() != args.sigma_c_sq.has_value())
      input_error(ErrorCode::Config, "--sigma-sq and --sigma-c-sq must be given together");
    if (args.sigma_sq) o.variance = VarianceComponents{*args.sigma_sq, *args.sigma_c_sq, VarianceSource::UserSupplied};
    if (args.split_counts) o.split_counts = read_split_counts(*args.split_counts, data);
    if (args.weights) o.weights = read_weights(*args.weights, data);

    const EffectsReport report = estimate(data, o);
    std::ostringstream summary;
    write_summary(summary, report);
    out << summary.str();

    if (args.out) {
      prepare_dir(*args.out);
      const fs::path dir(*args.out);
      write_text(dir / "report.json", report_to_json(report).dump(2) + "\n");
      write_text(dir / "summary.txt", summary.str());
      RunManifest m;
      m.command = "estimate";
      m.config = {{"q", args.q},
                  {"grid_size", args.grid_size},
                  {"lambda_min_ratio", args.lambda_min_ratio},
                  {"sigma_sq", report.sigma_sq},
                  {"sigma_c_sq", report.sigma_c_sq},
                  {"variance_source", report.variance_source},
                  {"alpha", args.alpha},
                  {"ridge_lambda2", args.ridge_lambda2},
                  {"drop_always_treated", args.drop_always_treated}};
      m.inputs.push_back(args.csv);
      if (args.split_counts) m.inputs.push_back(*args.split_counts);
      if (args.weights) m.inputs.push_back(*args.weights);
      m.outputs = {(dir / "report.json").string(), (dir / "summary.txt").string()};
      m.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      write_manifest(m, dir);
    }
    return static_cast<int>(kSuccess);
  });
}

int cmd_simulate(const SimulateArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const auto start = std::chrono::steady_clock::now();
    if (args.config && args.preset) input_error(ErrorCode::Config, "give either --config or --preset, not both");
    if (!args.config && !args.preset) input_error(ErrorCode::Config, "one of --config or --preset is required");
    SimConfig c = args.config ? load_sim_config(*args.config) : preset(*args.preset);
    if (args.seed) c.seed = *args.seed;
    if (args.replications) c.replications = *args.replications;
    if (args.competitors_raw) c.competitors_raw = true;
    if (args.threads) {
      c.threads = *args.threads;
    } else if (const char* env = std::getenv("FETWFE_THREADS")) {
      c.threads = parse_number<int>(env, "FETWFE_THREADS");
    }
    c.validate();

    const StudyMetrics m = run_study(c);
    for (const auto& reason : m.skip_reasons) err << "skipped " << reason << "\n";
    out << m.name << ": " << m.completed << " of " << m.replications << " replicates completed\n";
    out << "selection accuracy " << m.selection_accuracy.mean << ", conservative coverage "
        << m.conservative_coverage.mean << ", split coverage " << m.split_coverage.mean << "\n";
    for (const auto& mm : m.methods)
      out << "  " << std::left << std::setw(10) << to_string(mm.method) << " ATT squared error "
          << mm.att_sq_error.mean << " (se " << mm.att_sq_error.se << ")\n";

    if (!args.out) {
      out << metrics_to_json(m).dump(2) << "\n";
      return static_cast<int>(kSuccess);
    }
    prepare_dir(*args.out);
    const fs::path dir(*args.out);
    write_text(dir / "metrics.json", metrics_to_json(m).dump(2) + "\n");
    std::ostringstream csv;
    write_metrics_csv(csv, m);
    write_text(dir / "metrics.csv", csv.str());
    RunManifest manifest;
    manifest.command = "simulate";
    manifest.config = sim_config_to_json(c);
    if (args.config) manifest.inputs.push_back(*args.config);
    manifest.outputs = {(dir / "metrics.json").string(), (dir / "metrics.csv").string()};
    manifest.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    write_manifest(manifest, dir);
    return static_cast<int>(kSuccess);
  });
}

int run(int argc, char** argv) {
  CLI::App app{"Fused extended two-way fixed effects estimation"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  ValidateArgs va;
  auto* validate = app.add_subcommand("validate", "Check a panel CSV and report rank preconditions");
  validate->add_option("csv", va.csv, "Long-format panel CSV")->required();
  validate->add_flag("--drop-always-treated", va.drop_always_treated, "Remove units treated in the first period");
  validate->add_option("--json", va.json_out, "Write the validation report as JSON");

  EstimateArgs ea;
  auto* est = app.add_subcommand("estimate", "Fit FETWFE and report treatment effects");
  est->add_option("csv", ea.csv, "Long-format panel CSV")->required();
  est->add_option("--q", ea.q, "Bridge exponent in (0, 2]")->capture_default_str();
  est->add_option("--grid-size", ea.grid_size, "Number of lambda values")->capture_default_str();
  est->add_option("--lambda-min-ratio", ea.lambda_min_ratio, "Smallest lambda relative to the largest")
      ->capture_default_str();
  est->add_option("--sigma-sq", ea.sigma_sq, "Idiosyncratic noise variance");
  est->add_option("--sigma-c-sq", ea.sigma_c_sq, "Unit random effect variance");
  est->add_option("--alpha", ea.alpha, "Interval level is 1 - alpha")->capture_default_str();
  est->add_option("--ridge-lambda2", ea.ridge_lambda2, "Extra ridge penalty on the fused coefficients")
      ->capture_default_str();
  est->add_flag("--drop-always-treated", ea.drop_always_treated, "Remove units treated in the first period");
  est->add_option("--split-counts", ea.split_counts, "CSV cohort,count from an independent sample");
  est->add_option("--weights", ea.weights, "CSV cohort,time,weight for a fixed-weight aggregate");
  est->add_option("--out", ea.out, "Output directory for report.json, summary.txt and manifest.json");

  SimulateArgs sa;
  auto* sim = app.add_subcommand("simulate", "Run a Monte Carlo study");
  sim->add_option("--config", sa.config, "JSON study configuration");
  sim->add_option("--preset", sa.preset, "Named configuration")
      ->check(CLI::IsMember({"study1", "study1-desk", "study2", "study2-desk"}));
  sim->add_option("--seed", sa.seed, "Base seed");
  sim->add_option("--threads", sa.threads, "Worker threads (default FETWFE_THREADS or 1, 0 for all cores)");
  sim->add_option("--replications", sa.replications, "Override the replicate count");
  sim->add_flag("--competitors-raw", sa.competitors_raw, "Fit competitors without the GLS transform");
  sim->add_option("--out", sa.out, "Output directory for metrics.json, metrics.csv and manifest.json");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kSuccess : kInputError;
  }
  if (*validate) return cmd_validate(va, std::cout, std::cerr);
  if (*est) return cmd_estimate(ea, std::cout, std::cerr);
  return cmd_simulate(sa, std::cout, std::cerr);
}

}  // namespace fetwfe::cli

#include "fetwfe/simulate.hpp"

#include "fetwfe/error.hpp"
#include "fetwfe/estimate.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <mutex>
#include <numeric>
#include <ostream>
#include <sstream>
#include <thread>

namespace fetwfe {

using nlohmann::json;

std::string_view to_string(Method m) {
  switch (m) {
    case Method::Fetwfe: return "fetwfe";
    case Method::Etwfe: return "etwfe";
    case Method::Betwfe: return "betwfe";
    case Method::TwfeCovs: return "twfe_covs";
  }
  return "unknown";
}

Method method_from_string(std::string_view name) {
  for (Method m : {Method::Fetwfe, Method::Etwfe, Method::Betwfe, Method::TwfeCovs})
    if (to_string(m) == name) return m;
  throw Error(ErrorCode::Config, "simulate", "unknown method '" + std::string(name) + "'");
}

// ---------------------------------------------------------------- config

std::vector<double> SimConfig::probabilities() const {
  if (!assignment_probs.empty()) return assignment_probs;
  return std::vector<double>(cohorts.size() + 1, 1.0 / static_cast<double>(cohorts.size() + 1));
}

void SimConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::Config, "simulate", msg); };
  if (n_units < 2) fail("n_units must be at least 2");
  if (n_times < 2) fail("n_times must be at least 2");
  if (cohorts.empty()) fail("at least one cohort is required");
  if (d < 0) fail("d must be nonnegative");
  count_params(n_times, cohorts, d);
  if (!(theta_density >= 0.0 && theta_density <= 1.0)) fail("theta_density must lie in [0, 1]");
  if (!(sign_positive_prob >= 0.0 && sign_positive_prob <= 1.0)) fail("sign_positive_prob must lie in [0, 1]");
  if (!std::isfinite(theta_magnitude)) fail("theta_magnitude must be finite");
  if (!(sigma_sq >= 0.0 && std::isfinite(sigma_sq))) fail("sigma_sq must be nonnegative");
  if (!(sigma_c_sq >= 0.0 && std::isfinite(sigma_c_sq))) fail("sigma_c_sq must be nonnegative");
  if (!assignment_probs.empty()) {
    if (assignment_probs.size() != cohorts.size() + 1) fail("assignment_probs needs one entry per cohort plus one");
    double sum = 0.0;
    for (double p : assignment_probs) {
      if (!(p > 0.0)) fail("assignment probabilities must be positive");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) fail("assignment probabilities must sum to 1");
  }
  if (replications < 1) fail("replications must be at least 1");
  if (!(alpha > 0.0 && alpha < 1.0)) fail("alpha must lie in (0, 1)");
  for (Method m : competitors)
    if (m == Method::Fetwfe) fail("fetwfe is always run and cannot be listed as a competitor");
  solver.validate();
}

SimConfig preset(const std::string& name) {
  SimConfig c;
  c.name = name;
  if (name == "study1") return c;
  if (name == "study1-desk") {
    c.n_times = 10;
    c.d = 6;
    c.replications = 100;
    return c;
  }
  if (name == "study2" || name == "study2-desk") {
    c.n_units = name == "study2" ? 1200 : 300;
    c.n_times = 5;
    c.cohorts = {2, 3, 4};
    c.d = 2;
    c.theta_density = 0.5;
    c.replications = name == "study2" ? 700 : 200;
    return c;
  }
  throw Error(ErrorCode::Config, "simulate", "unknown preset '" + name + "'");
}

std::vector<std::string> preset_names() { return {"study1", "study1-desk", "study2", "study2-desk"}; }

json sim_config_to_json(const SimConfig& c) {
  json methods = json::array();
  for (Method m : c.competitors) methods.push_back(std::string(to_string(m)));
  return {{"name", c.name},
          {"n_units", c.n_units},
          {"n_times", c.n_times},
          {"cohorts", c.cohorts},
          {"d", c.d},
          {"theta_density", c.theta_density},
          {"theta_magnitude", c.theta_magnitude},
          {"sign_positive_prob", c.sign_positive_prob},
          {"sigma_sq", c.sigma_sq},
          {"sigma_c_sq", c.sigma_c_sq},
          {"assignment_probs", c.assignment_probs},
          {"replications", c.replications},
          {"seed", c.seed},
          {"alpha", c.alpha},
          {"competitors", methods},
          {"competitors_raw", c.competitors_raw},
          {"threads", c.threads},
          {"solver",
           {{"q", c.solver.q},
            {"lambda_grid_size", c.solver.lambda_grid_size},
            {"lambda_min_ratio", c.solver.lambda_min_ratio},
            {"max_iterations", c.solver.max_iterations},
            {"tolerance", c.solver.tolerance},
            {"ridge_lambda2", c.solver.ridge_lambda2},
            {"standardize", c.solver.standardize}}}};
}

SimConfig sim_config_from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorCode::Config, "simulate", "configuration must be a JSON object");
  static const std::vector<std::string> known{"name",       "preset",           "n_units",      "n_times",
                                              "cohorts",    "d",                "theta_density", "theta_magnitude",
                                              "sign_positive_prob", "sigma_sq", "sigma_c_sq",   "assignment_probs",
                                              "replications", "seed",           "alpha",        "competitors",
                                              "competitors_raw", "threads",     "solver"};
  for (const auto& [key, value] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw Error(ErrorCode::Config, "simulate", "unknown configuration key '" + key + "'");
  try {
    SimConfig c = j.contains("preset") ? preset(j.at("preset").get<std::string>()) : SimConfig{};
    c.name = j.value("name", c.name);
    c.n_units = j.value("n_units", c.n_units);
    c.n_times = j.value("n_times", c.n_times);
    c.cohorts = j.value("cohorts", c.cohorts);
    c.d = j.value("d", c.d);
    c.theta_density = j.value("theta_density", c.theta_density);
    c.theta_magnitude = j.value("theta_magnitude", c.theta_magnitude);
    c.sign_positive_prob = j.value("sign_positive_prob", c.sign_positive_prob);
    c.sigma_sq = j.value("sigma_sq", c.sigma_sq);
    c.sigma_c_sq = j.value("sigma_c_sq", c.sigma_c_sq);
    c.assignment_probs = j.value("assignment_probs", c.assignment_probs);
    c.replications = j.value("replications", c.replications);
    c.seed = j.value("seed", c.seed);
    c.alpha = j.value("alpha", c.alpha);
    c.competitors_raw = j.value("competitors_raw", c.competitors_raw);
    c.threads = j.value("threads", c.threads);
    if (j.contains("competitors")) {
      c.competitors.clear();
      for (const auto& m : j.at("competitors")) c.competitors.push_back(method_from_string(m.get<std::string>()));
    }
    if (j.contains("solver")) {
      const json& s = j.at("solver");
      c.solver.q = s.value("q", c.solver.q);
      c.solver.lambda_grid_size = s.value("lambda_grid_size", c.solver.lambda_grid_size);
      c.solver.lambda_min_ratio = s.value("lambda_min_ratio", c.solver.lambda_min_ratio);
      c.solver.max_iterations = s.value("max_iterations", c.solver.max_iterations);
      c.solver.tolerance = s.value("tolerance", c.solver.tolerance);
      c.solver.ridge_lambda2 = s.value("ridge_lambda2", c.solver.ridge_lambda2);
      c.solver.standardize = s.value("standardize", c.solver.standardize);
    }
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Config, "simulate", std::string("bad configuration value: ") + e.what());
  }
}

SimConfig load_sim_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "simulate", "cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Parse, "simulate", path + ": " + e.what());
  }
  return sim_config_from_json(j);
}

// ---------------------------------------------------------------- generation

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double draw_normal(std::mt19937_64& rng, double sd) {
  if (sd == 0.0) return 0.0;
  return std::normal_distribution<double>(0.0, sd)(rng);
}

Truth make_truth(const DesignLayout& layout, const SimConfig& config, const Coefficients& coef) {
  Truth t;
  t.theta_star = coef.theta_star;
  t.beta_star = coef.beta_star;
  t.att = att_point(coef.beta_star, layout);
  t.cohort = cohort_att(t.att, layout);
  const std::vector<double> probs = config.probabilities();
  double mass = 0.0;
  for (std::size_t k = 0; k < config.cohorts.size(); ++k) {
    t.overall += probs[k + 1] * t.cohort.at(config.cohorts[k]);
    mass += probs[k + 1];
  }
  t.overall /= mass;
  return t;
}

}  // namespace

std::uint64_t replicate_seed(std::uint64_t base, std::uint64_t index) {
  return splitmix64(splitmix64(base) ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

Coefficients gen_coefficients(const DesignLayout& layout, const SimConfig& config, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Coefficients c;
  c.theta_star = Eigen::VectorXd::Zero(layout.p());
  for (Eigen::Index j = 0; j < c.theta_star.size(); ++j) {
    if (unif(rng) < config.theta_density)
      c.theta_star(j) = (unif(rng) < config.sign_positive_prob ? 1.0 : -1.0) * config.theta_magnitude;
  }
  c.beta_star = build_fusion(layout).apply_inverse(c.theta_star);
  return c;
}

std::vector<int> draw_assignment(const SimConfig& config, int n, std::mt19937_64& rng) {
  const std::vector<double> probs = config.probabilities();
  std::discrete_distribution<int> pick(probs.begin(), probs.end());
  std::vector<int> out(static_cast<std::size_t>(n));
  for (auto& w : out) {
    const int k = pick(rng);
    w = k == 0 ? 0 : config.cohorts[static_cast<std::size_t>(k - 1)];
  }
  return out;
}

SimulatedPanel gen_panel(const SimConfig& config, const Coefficients& coef, std::mt19937_64& rng) {
  const int n = config.n_units;
  const int t_count = config.n_times;
  const DesignLayout layout(t_count, config.cohorts, config.d);
  if (coef.beta_star.size() != layout.p())
    throw Error(ErrorCode::LayoutMismatch, "simulate", "coefficients do not match the configuration");

  Eigen::MatrixXd x(n, config.d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < config.d; ++j) x(i, j) = draw_normal(rng, 1.0);

  std::vector<int> assignment;
  constexpr int max_attempts = 1'000'000;
  for (int attempt = 0;; ++attempt) {
    if (attempt == max_attempts)
      throw Error(ErrorCode::RedrawLimitExceeded, "simulate",
                  "could not draw an assignment with every group represented");
    assignment = draw_assignment(config, n, rng);
    const CohortCounts counts = cohort_counts(assignment, config.cohorts);
    bool complete = counts.n_0 > 0;
    for (int r : config.cohorts) complete = complete && counts.at(r) > 0;
    if (complete) break;
  }

  SimulatedPanel out;
  out.data = PanelDataset::make(t_count, assignment, x, Eigen::MatrixXd::Zero(n, t_count));
  const Eigen::VectorXd mean = build_design(out.data).values * coef.beta_star;
  const double sd_c = std::sqrt(config.sigma_c_sq);
  const double sd_u = std::sqrt(config.sigma_sq);
  for (int i = 0; i < n; ++i) {
    const double c = draw_normal(rng, sd_c);
    for (int t = 0; t < t_count; ++t)
      out.data.response(i, t) = mean(static_cast<Eigen::Index>(i) * t_count + t) + c + draw_normal(rng, sd_u);
  }
  out.truth = make_truth(layout, config, coef);
  return out;
}

SimulatedPanel gen_panel(const SimConfig& config, const Coefficients& coef, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return gen_panel(config, coef, rng);
}

// ---------------------------------------------------------------- competitors

namespace {

MethodEstimate estimate_from_beta(Method method, const Eigen::VectorXd& beta, const DesignLayout& layout,
                                  const CohortCounts& counts) {
  MethodEstimate e;
  e.method = method;
  e.att = att_point(beta, layout);
  e.cohort = cohort_att(e.att, layout);
  e.overall = aggregate_weighted(e.att, counts, layout);
  e.rho = recover_beta_blocks(beta, layout).rho;
  return e;
}

MethodEstimate twfe_covs(const PanelDataset& data, const VarianceComponents& vc, bool raw) {
  const int n = data.n_units;
  const int t_count = data.n_times;
  const int r_count = data.n_cohorts();
  const int d = data.n_covariates();
  const int cols = r_count + (t_count - 1) + d + r_count;
  Eigen::MatrixXd z = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n) * t_count, cols);
  for (int i = 0; i < n; ++i) {
    const int w = data.assignment[static_cast<std::size_t>(i)];
    const auto pos = std::find(data.cohorts.begin(), data.cohorts.end(), w);
    const int k = pos == data.cohorts.end() ? -1 : static_cast<int>(pos - data.cohorts.begin());
    for (int t = 1; t <= t_count; ++t) {
      const Eigen::Index row = static_cast<Eigen::Index>(i) * t_count + (t - 1);
      if (k >= 0) z(row, k) = 1.0;
      if (t >= 2) z(row, r_count + t - 2) = 1.0;
      for (int j = 0; j < d; ++j) z(row, r_count + t_count - 1 + j) = data.covariates(i, j);
      if (k >= 0 && t >= w) z(row, r_count + t_count - 1 + d + k) = 1.0;
    }
  }
  Eigen::VectorXd y = stack_response(data);
  if (!raw) {
    z = gls_apply(z, vc, t_count);
    y = gls_apply(y, vc, t_count);
  }
  const Centered c = center_response_and_columns(z, y);
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(c.design);
  if (qr.rank() < cols)
    throw Error(ErrorCode::RankDeficient, "simulate", "TWFE_COVS design is rank deficient");
  const Eigen::VectorXd coef = qr.solve(c.response);

  const DesignLayout layout(t_count, data.cohorts, d);
  MethodEstimate e;
  e.method = Method::TwfeCovs;
  for (int k = 0; k < r_count; ++k) {
    const int r = data.cohorts[static_cast<std::size_t>(k)];
    const double tau = coef(r_count + t_count - 1 + d + k);
    e.cohort[r] = tau;
    for (int t = r; t <= t_count; ++t) e.att[{r, t}] = tau;
  }
  e.overall = aggregate_weighted(e.att, cohort_counts(data), layout);
  return e;
}

}  // namespace

MethodEstimate competitor_fit(Method method, const PanelDataset& data, const VarianceComponents& vc,
                              const SolverConfig& solver, bool raw) {
  if (method == Method::TwfeCovs) return twfe_covs(data, vc, raw);

  EstimateOptions options;
  options.solver = solver;
  options.variance = raw ? VarianceComponents{1.0, 0.0, VarianceSource::UserSupplied} : vc;
  options.fusion = std::make_shared<DirectPenalty>();
  if (method == Method::Etwfe) {
    options.lambda = 0.0;
  } else if (method == Method::Fetwfe) {
    options.fusion = std::make_shared<CohortTimeFusion>();
  }
  try {
    const Estimation est = fit_fetwfe(data, options);
    return estimate_from_beta(method, est.fit().beta_hat, est.layout, est.counts);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::RankDeficientAtZeroLambda)
      throw Error(ErrorCode::RankDeficient, "simulate", std::string(to_string(method)) + ": " + e.what());
    throw;
  }
}

SelectionAccuracy selection_accuracy(const Eigen::VectorXd& theta_hat, const Eigen::VectorXd& theta_star) {
  if (theta_hat.size() != theta_star.size() || theta_hat.size() == 0)
    throw Error(ErrorCode::DimensionMismatch, "simulate", "selection vectors differ in length");
  int agree = 0;
  int zeros = 0;
  int zeros_found = 0;
  for (Eigen::Index j = 0; j < theta_hat.size(); ++j) {
    const bool hat_nz = theta_hat(j) != 0.0;
    const bool star_nz = theta_star(j) != 0.0;
    agree += hat_nz == star_nz;
    if (!star_nz) {
      ++zeros;
      zeros_found += !hat_nz;
    }
  }
  SelectionAccuracy s;
  s.overall = static_cast<double>(agree) / static_cast<double>(theta_hat.size());
  s.recall = zeros == 0 ? 1.0 : static_cast<double>(zeros_found) / zeros;
  return s;
}

// ---------------------------------------------------------------- study

MeanSe MeanSe::of(const std::vector<double>& values) {
  MeanSe m;
  m.count = static_cast<int>(values.size());
  if (values.empty()) return m;
  m.mean = std::accumulate(values.begin(), values.end(), 0.0) / m.count;
  if (m.count > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - m.mean) * (v - m.mean);
    m.se = std::sqrt(ss / (m.count - 1) / m.count);
  }
  return m;
}

const MethodMetrics* StudyMetrics::find(Method m) const {
  for (const auto& mm : methods)
    if (mm.method == m) return &mm;
  return nullptr;
}

namespace {

bool covers(const IntervalReport& ci, double truth) {
  return *ci.ci_low <= truth && truth <= *ci.ci_high;
}

std::optional<bool> coverage(const IntervalReport& ci, double truth) {
  if (ci.degenerate) return std::nullopt;
  return covers(ci, truth);
}

}  // namespace

ReplicateResult run_replicate(const SimConfig& config, const Coefficients& coef, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  SimulatedPanel sim = gen_panel(config, coef, rng);
  const std::vector<int> second_sample = draw_assignment(config, config.n_units, rng);

  // Noiseless draws still need a positive variance for the transform.
  const VarianceComponents vc{std::max(config.sigma_sq, 1e-12), config.sigma_c_sq, VarianceSource::UserSupplied};
  EstimateOptions options;
  options.solver = config.solver;
  options.variance = vc;
  options.alpha = config.alpha;
  options.split_counts = cohort_counts(second_sample, config.cohorts);

  const Estimation est = fit_fetwfe(sim.data, options);
  const EffectsReport report = build_report(sim.data, est, options);

  ReplicateResult out;
  out.truth = sim.truth;
  MethodEstimate fet = estimate_from_beta(Method::Fetwfe, est.fit().beta_hat, est.layout, est.counts);
  out.estimates.push_back(std::move(fet));
  out.selection = selection_accuracy(est.fit().theta_hat, coef.theta_star);
  for (const auto& c : report.cohort_att) out.cohort_covered[c.r] = coverage(c.value, sim.truth.cohort.at(c.r));
  out.conservative_covered = coverage(report.overall, sim.truth.overall);
  if (report.overall_split) out.split_covered = coverage(*report.overall_split, sim.truth.overall);
  out.ciun = report.ciun;

  for (Method m : config.competitors)
    out.estimates.push_back(competitor_fit(m, sim.data, vc, config.solver, config.competitors_raw));
  return out;
}

Coefficients study_coefficients(const SimConfig& config) {
  return gen_coefficients(DesignLayout(config.n_times, config.cohorts, config.d), config, splitmix64(config.seed));
}

StudyMetrics run_study(const SimConfig& config) {
  config.validate();
  const DesignLayout layout(config.n_times, config.cohorts, config.d);
  const Coefficients coef = study_coefficients(config);

  const int reps = config.replications;
  std::vector<std::optional<ReplicateResult>> results(static_cast<std::size_t>(reps));
  std::vector<std::string> errors(static_cast<std::size_t>(reps));
  std::atomic<int> next{0};
  auto worker = [&]() {
    for (int k = next++; k < reps; k = next++) {
      try {
        results[static_cast<std::size_t>(k)] = run_replicate(config, coef, replicate_seed(config.seed, k));
      } catch (const std::exception& e) {
        errors[static_cast<std::size_t>(k)] = e.what();
      }
    }
  };
  int threads = config.threads > 0 ? config.threads : static_cast<int>(std::thread::hardware_concurrency());
  threads = std::clamp(threads, 1, reps);
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int k = 0; k < threads; ++k) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  StudyMetrics m;
  m.name = config.name;
  m.replications = reps;
  std::vector<Method> methods{Method::Fetwfe};
  methods.insert(methods.end(), config.competitors.begin(), config.competitors.end());
  std::vector<std::vector<double>> att_err(methods.size()), rho_err(methods.size());
  std::vector<std::map<int, std::vector<double>>> cohort_err(methods.size());
  std::vector<double> sel, recall, conservative, split, ciun, zero_overall;
  std::map<int, std::vector<double>> cohort_cov;

  for (int k = 0; k < reps; ++k) {
    const auto& res = results[static_cast<std::size_t>(k)];
    if (!res) {
      ++m.skipped;
      m.skip_reasons.push_back("replicate " + std::to_string(k) + ": " + errors[static_cast<std::size_t>(k)]);
      continue;
    }
    ++m.completed;
    const Truth& truth = res->truth;
    for (std::size_t a = 0; a < methods.size(); ++a) {
      const MethodEstimate& e = res->estimates[a];
      att_err[a].push_back((e.overall - truth.overall) * (e.overall - truth.overall));
      for (const auto& [r, v] : e.cohort) cohort_err[a][r].push_back((v - truth.cohort.at(r)) * (v - truth.cohort.at(r)));
      if (e.rho) {
        const Eigen::MatrixXd rho_star = recover_beta_blocks(truth.beta_star, layout).rho;
        rho_err[a].push_back((*e.rho - rho_star).squaredNorm());
      }
    }
    sel.push_back(res->selection.overall);
    recall.push_back(res->selection.recall);
    for (const auto& [r, c] : res->cohort_covered) {
      if (c) cohort_cov[r].push_back(*c ? 1.0 : 0.0);
      else ++m.degenerate_cohort_intervals;
    }
    if (res->conservative_covered) conservative.push_back(*res->conservative_covered ? 1.0 : 0.0);
    else ++m.degenerate_overall_intervals;
    if (res->split_covered) split.push_back(*res->split_covered ? 1.0 : 0.0);
    ciun.push_back(res->ciun ? 1.0 : 0.0);
    zero_overall.push_back(res->estimates.front().overall == 0.0 ? 1.0 : 0.0);
  }

  for (std::size_t a = 0; a < methods.size(); ++a) {
    MethodMetrics mm;
    mm.method = methods[a];
    mm.att_sq_error = MeanSe::of(att_err[a]);
    for (const auto& [r, v] : cohort_err[a]) mm.cohort_sq_error[r] = MeanSe::of(v);
    if (!rho_err[a].empty()) mm.rho_sq_error = MeanSe::of(rho_err[a]);
    m.methods.push_back(std::move(mm));
  }
  m.selection_accuracy = MeanSe::of(sel);
  m.restriction_recall = MeanSe::of(recall);
  for (const auto& [r, v] : cohort_cov) m.cohort_coverage[r] = MeanSe::of(v);
  m.conservative_coverage = MeanSe::of(conservative);
  m.split_coverage = MeanSe::of(split);
  m.ciun_rate = MeanSe::of(ciun);
  m.zero_overall_rate = MeanSe::of(zero_overall);
  return m;
}

// ---------------------------------------------------------------- metrics I/O

namespace {

json mean_se_json(const MeanSe& m) { return {{"mean", m.mean}, {"se", m.se}, {"count", m.count}}; }

MeanSe mean_se_from(const json& j) {
  return {j.at("mean").get<double>(), j.at("se").get<double>(), j.at("count").get<int>()};
}

json cohort_map_json(const std::map<int, MeanSe>& m) {
  json out = json::object();
  for (const auto& [r, v] : m) out[std::to_string(r)] = mean_se_json(v);
  return out;
}

std::map<int, MeanSe> cohort_map_from(const json& j) {
  std::map<int, MeanSe> out;
  for (const auto& [key, v] : j.items()) out[std::stoi(key)] = mean_se_from(v);
  return out;
}

}  // namespace

json metrics_to_json(const StudyMetrics& m) {
  json methods = json::array();
  for (const auto& mm : m.methods) {
    json e = {{"method", std::string(to_string(mm.method))},
              {"att_sq_error", mean_se_json(mm.att_sq_error)},
              {"cohort_sq_error", cohort_map_json(mm.cohort_sq_error)}};
    e["rho_sq_error"] = mm.rho_sq_error ? mean_se_json(*mm.rho_sq_error) : json(nullptr);
    methods.push_back(e);
  }
  return {{"name", m.name},
          {"replications", m.replications},
          {"completed", m.completed},
          {"skipped", m.skipped},
          {"skip_reasons", m.skip_reasons},
          {"methods", methods},
          {"selection_accuracy", mean_se_json(m.selection_accuracy)},
          {"restriction_recall", mean_se_json(m.restriction_recall)},
          {"cohort_coverage", cohort_map_json(m.cohort_coverage)},
          {"conservative_coverage", mean_se_json(m.conservative_coverage)},
          {"split_coverage", mean_se_json(m.split_coverage)},
          {"degenerate_cohort_intervals", m.degenerate_cohort_intervals},
          {"degenerate_overall_intervals", m.degenerate_overall_intervals},
          {"ciun_rate", mean_se_json(m.ciun_rate)},
          {"zero_overall_rate", mean_se_json(m.zero_overall_rate)}};
}

StudyMetrics metrics_from_json(const json& j) {
  try {
    StudyMetrics m;
    m.name = j.at("name").get<std::string>();
    m.replications = j.at("replications").get<int>();
    m.completed = j.at("completed").get<int>();
    m.skipped = j.at("skipped").get<int>();
    m.skip_reasons = j.value("skip_reasons", std::vector<std::string>{});
    for (const auto& e : j.at("methods")) {
      MethodMetrics mm;
      mm.method = method_from_string(e.at("method").get<std::string>());
      mm.att_sq_error = mean_se_from(e.at("att_sq_error"));
      mm.cohort_sq_error = cohort_map_from(e.at("cohort_sq_error"));
      if (e.contains("rho_sq_error") && !e.at("rho_sq_error").is_null())
        mm.rho_sq_error = mean_se_from(e.at("rho_sq_error"));
      m.methods.push_back(std::move(mm));
    }
    m.selection_accuracy = mean_se_from(j.at("selection_accuracy"));
    m.restriction_recall = mean_se_from(j.at("restriction_recall"));
    m.cohort_coverage = cohort_map_from(j.at("cohort_coverage"));
    m.conservative_coverage = mean_se_from(j.at("conservative_coverage"));
    m.split_coverage = mean_se_from(j.at("split_coverage"));
    m.degenerate_cohort_intervals = j.at("degenerate_cohort_intervals").get<int>();
    m.degenerate_overall_intervals = j.at("degenerate_overall_intervals").get<int>();
    m.ciun_rate = mean_se_from(j.at("ciun_rate"));
    m.zero_overall_rate = mean_se_from(j.at("zero_overall_rate"));
    return m;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Parse, "simulate", std::string("malformed metrics: ") + e.what());
  }
}

void write_metrics_csv(std::ostream& out, const StudyMetrics& m) {
  out << "section,method,cohort,mean,se,count\n";
  out << std::setprecision(17);
  auto row = [&](const std::string& section, const std::string& method, const std::string& cohort, const MeanSe& v) {
    out << section << ',' << method << ',' << cohort << ',' << v.mean << ',' << v.se << ',' << v.count << '\n';
  };
  auto scalar = [&](const std::string& section, int value) { row(section, "", "", MeanSe{0.0, 0.0, value}); };
  row("name", m.name, "", {});
  scalar("replications", m.replications);
  scalar("completed", m.completed);
  scalar("skipped", m.skipped);
  scalar("degenerate_cohort_intervals", m.degenerate_cohort_intervals);
  scalar("degenerate_overall_intervals", m.degenerate_overall_intervals);
  for (const auto& mm : m.methods) {
    const std::string name(to_string(mm.method));
    row("att_sq_error", name, "", mm.att_sq_error);
    for (const auto& [r, v] : mm.cohort_sq_error) row("cohort_sq_error", name, std::to_string(r), v);
    if (mm.rho_sq_error) row("rho_sq_error", name, "", *mm.rho_sq_error);
  }
  row("selection_accuracy", "fetwfe", "", m.selection_accuracy);
  row("restriction_recall", "fetwfe", "", m.restriction_recall);
  for (const auto& [r, v] : m.cohort_coverage) row("cohort_coverage", "fetwfe", std::to_string(r), v);
  row("conservative_coverage", "fetwfe", "", m.conservative_coverage);
  row("split_coverage", "fetwfe", "", m.split_coverage);
  row("ciun_rate", "fetwfe", "", m.ciun_rate);
  row("zero_overall_rate", "fetwfe", "", m.zero_overall_rate);
}

StudyMetrics read_metrics_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "section,method,cohort,mean,se,count")
    throw Error(ErrorCode::Parse, "simulate", "metrics CSV has an unexpected header");
  StudyMetrics m;
  int line_no = 1;
  auto method_entry = [&](const std::string& name) -> MethodMetrics& {
    const Method method = method_from_string(name);
    for (auto& mm : m.methods)
      if (mm.method == method) return mm;
    m.methods.push_back({});
    m.methods.back().method = method;
    return m.methods.back();
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() == 5) f.emplace_back();
    if (f.size() != 6)
      throw Error(ErrorCode::Parse, "simulate", "metrics CSV line " + std::to_string(line_no) + ": expected 6 fields");
    MeanSe v;
    try {
      v = {std::stod(f[3]), std::stod(f[4]), std::stoi(f[5])};
    } catch (const std::exception&) {
      throw Error(ErrorCode::Parse, "simulate", "metrics CSV line " + std::to_string(line_no) + ": bad number");
    }
    const std::string& s = f[0];
    if (s == "name") m.name = f[1];
    else if (s == "replications") m.replications = v.count;
    else if (s == "completed") m.completed = v.count;
    else if (s == "skipped") m.skipped = v.count;
    else if (s == "degenerate_cohort_intervals") m.degenerate_cohort_intervals = v.count;
    else if (s == "degenerate_overall_intervals") m.degenerate_overall_intervals = v.count;
    else if (s == "att_sq_error") method_entry(f[1]).att_sq_error = v;
    else if (s == "cohort_sq_error") method_entry(f[1]).cohort_sq_error[std::stoi(f[2])] = v;
    else if (s == "rho_sq_error") method_entry(f[1]).rho_sq_error = v;
    else if (s == "selection_accuracy") m.selection_accuracy = v;
    else if (s == "restriction_recall") m.restriction_recall = v;
    else if (s == "cohort_coverage") m.cohort_coverage[std::stoi(f[2])] = v;
    else if (s == "conservative_coverage") m.conservative_coverage = v;
    else if (s == "split_coverage") m.split_coverage = v;
    else if (s == "ciun_rate") m.ciun_rate = v;
    else if (s == "zero_overall_rate") m.zero_overall_rate = v;
    else throw Error(ErrorCode::Parse, "simulate", "metrics CSV line " + std::to_string(line_no) + ": unknown section");
  }
  return m;
}

}  // namespace fetwfe

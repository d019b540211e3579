#pragma once

#include "fetwfe/design.hpp"
#include "fetwfe/effects.hpp"
#include "fetwfe/fusion.hpp"
#include "fetwfe/gls.hpp"
#include "fetwfe/panel.hpp"
#include "fetwfe/solver.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace fetwfe {

enum class Method { Fetwfe, Etwfe, Betwfe, TwfeCovs };
std::string_view to_string(Method m);
Method method_from_string(std::string_view name);

struct SimConfig {
  std::string name = "custom";
  int n_units = 120;
  int n_times = 30;
  std::vector<int> cohorts{2, 3, 4, 5, 6};
  int d = 12;
  double theta_density = 0.1;
  double theta_magnitude = 2.0;
  double sign_positive_prob = 0.6;
  double sigma_sq = 5.0;
  double sigma_c_sq = 5.0;
  std::vector<double> assignment_probs;  // (pi_0, pi_r...); empty means uniform
  int replications = 700;
  std::uint64_t seed = 20240601;
  SolverConfig solver;
  double alpha = 0.05;
  std::vector<Method> competitors{Method::Etwfe, Method::Betwfe, Method::TwfeCovs};
  bool competitors_raw = false;  // fit competitors without the GLS transform
  int threads = 1;

  /// Uniform probabilities when none were given.
  std::vector<double> probabilities() const;
  void validate() const;
};

/// Named configurations: study1, study1-desk, study2, study2-desk.
SimConfig preset(const std::string& name);
std::vector<std::string> preset_names();

nlohmann::json sim_config_to_json(const SimConfig& config);
SimConfig sim_config_from_json(const nlohmann::json& j);
SimConfig load_sim_config(const std::string& path);

struct Coefficients {
  Eigen::VectorXd theta_star;
  Eigen::VectorXd beta_star;
};

Coefficients gen_coefficients(const DesignLayout& layout, const SimConfig& config, std::uint64_t seed);
/// The coefficients shared by every replicate of a study.
Coefficients study_coefficients(const SimConfig& config);

struct Truth {
  Eigen::VectorXd theta_star;
  Eigen::VectorXd beta_star;
  CellMap att;         // tau*_rt
  CohortMap cohort;    // mean over t of tau*_rt
  double overall = 0;  // population-share weighted cohort average
};

struct SimulatedPanel {
  PanelDataset data;
  Truth truth;
};

/// Standard-normal covariates, multinomial cohorts (redrawn while any group
/// is empty), response Z beta* + c_i + u_it. Throws RedrawLimitExceeded.
SimulatedPanel gen_panel(const SimConfig& config, const Coefficients& coef, std::mt19937_64& rng);
SimulatedPanel gen_panel(const SimConfig& config, const Coefficients& coef, std::uint64_t seed);

/// Draws `n` cohort labels from the configured probabilities with no redraw.
std::vector<int> draw_assignment(const SimConfig& config, int n, std::mt19937_64& rng);

struct MethodEstimate {
  Method method = Method::Fetwfe;
  CellMap att;
  CohortMap cohort;
  double overall = 0.0;  // sample-share weighted
  std::optional<Eigen::MatrixXd> rho;  // W x d when the method estimates it
};

/// Competitor point estimates on `data` with known variance components.
/// ETWFE and BETWFE reuse the FETWFE pipeline; TWFE_COVS is its own least
/// squares. Throws RankDeficient when least squares is not identified.
MethodEstimate competitor_fit(Method method, const PanelDataset& data, const VarianceComponents& vc,
                              const SolverConfig& solver, bool raw = false);

struct SelectionAccuracy {
  double overall = 0.0;  // agreement of the estimated and true supports
  double recall = 1.0;   // true zeros estimated as zero; 1 when there are none
};

SelectionAccuracy selection_accuracy(const Eigen::VectorXd& theta_hat, const Eigen::VectorXd& theta_star);

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
  int count = 0;

  static MeanSe of(const std::vector<double>& values);
  bool operator==(const MeanSe&) const = default;
};

struct MethodMetrics {
  Method method = Method::Fetwfe;
  MeanSe att_sq_error;
  std::map<int, MeanSe> cohort_sq_error;
  std::optional<MeanSe> rho_sq_error;
  bool operator==(const MethodMetrics&) const = default;
};

struct StudyMetrics {
  std::string name;
  int replications = 0;
  int completed = 0;
  int skipped = 0;
  std::vector<std::string> skip_reasons;  // "replicate k: message"
  std::vector<MethodMetrics> methods;     // FETWFE first
  MeanSe selection_accuracy;
  MeanSe restriction_recall;
  std::map<int, MeanSe> cohort_coverage;  // non-degenerate intervals only
  MeanSe conservative_coverage;
  MeanSe split_coverage;
  int degenerate_cohort_intervals = 0;
  int degenerate_overall_intervals = 0;
  MeanSe ciun_rate;           // replicates whose time x covariate block was zeroed
  MeanSe zero_overall_rate;   // replicates with an exactly zero overall estimate

  const MethodMetrics* find(Method m) const;
  bool operator==(const StudyMetrics&) const = default;
};

/// Per-replicate quantities, exposed so callers can inspect single draws.
struct ReplicateResult {
  std::vector<MethodEstimate> estimates;     // FETWFE first
  Truth truth;
  SelectionAccuracy selection;
  std::map<int, std::optional<bool>> cohort_covered;  // nullopt when degenerate
  std::optional<bool> conservative_covered;
  std::optional<bool> split_covered;
  bool ciun = true;
};

std::uint64_t replicate_seed(std::uint64_t base, std::uint64_t index);

ReplicateResult run_replicate(const SimConfig& config, const Coefficients& coef, std::uint64_t seed);

/// Replicates run concurrently on `config.threads` workers and are reduced in
/// index order, so results do not depend on the thread count.
StudyMetrics run_study(const SimConfig& config);

nlohmann::json metrics_to_json(const StudyMetrics& metrics);
StudyMetrics metrics_from_json(const nlohmann::json& j);
/// Long format: section,method,cohort,mean,se,count
void write_metrics_csv(std::ostream& out, const StudyMetrics& metrics);
StudyMetrics read_metrics_csv(std::istream& in);

}  // namespace fetwfe

#include "fetwfe/estimate.hpp"

#include "fetwfe/error.hpp"

namespace fetwfe {

Estimation fit_fetwfe(const PanelDataset& data, const EstimateOptions& options) {
  if (!options.fusion) throw Error(ErrorCode::Config, "estimate", "no fusion strategy");
  Estimation est;
  const DesignMatrix design = build_design(data, options.cohort_means);
  est.layout = design.layout;
  est.variance = options.variance ? *options.variance : estimate_variance_components(data, design);
  est.variance.validate();

  const Transformed tr = gls_transform(design.values, stack_response(data), est.variance, data.n_times);
  const Centered c = center_response_and_columns(tr.design, tr.response);
  est.fusion = std::make_shared<FusionMatrix>(options.fusion->build(est.layout));
  est.reparameterized = est.fusion->reparameterize(c.design);
  est.counts = cohort_counts(data);
  est.n_obs = static_cast<long long>(data.n_units) * data.n_times;

  std::optional<BridgeProblem> problem;
  if (options.solver.ridge_lambda2 > 0.0) {
    const Augmented aug = ridge_augment(est.reparameterized, c.response, *est.fusion, options.solver.ridge_lambda2);
    problem.emplace(aug.design, aug.response, options.solver, est.reparameterized.rows());
  } else {
    problem.emplace(est.reparameterized, c.response, options.solver);
  }

  if (options.lambda) {
    BridgeFit fit = problem->fit(*options.lambda);
    est.path.path.push_back({fit.lambda, static_cast<int>(fit.selected.size()), fit.rss, fit.bic, fit.converged});
    est.path.selected = std::move(fit);
    est.path.selected_index = 0;
  } else {
    est.path = fit_path_bic(*problem, problem->lambda_grid());
  }
  attach_beta(est.path.selected, *est.fusion);
  return est;
}

IntervalReport IntervalReport::from(const ConfidenceInterval& ci) {
  IntervalReport out;
  out.estimate = ci.estimate;
  out.degenerate = ci.degenerate;
  if (!ci.degenerate) {
    out.se = ci.se;
    out.ci_low = ci.low;
    out.ci_high = ci.high;
  }
  return out;
}

int EffectsReport::zero_cohorts() const {
  int zeros = 0;
  for (const auto& c : cohort_att)
    if (c.value.estimate == 0.0) ++zeros;
  return zeros;
}

namespace {

VarianceEstimate fixed_variance(const CellMap& weights, const Estimation& est,
                                const std::optional<SelectedCovariance>& cov) {
  if (!cov) return {0.0, VarianceKind::Fixed, true};
  return var_fixed(psi_vector_fixed(weights, *est.fusion, est.layout), *cov, est.variance.sigma_sq);
}

}  // namespace

EffectsReport build_report(const PanelDataset& data, const Estimation& est, const EstimateOptions& options) {
  const BridgeFit& fit = est.fit();
  const DesignLayout& layout = est.layout;
  const double alpha = options.alpha;

  std::optional<SelectedCovariance> cov;
  if (!fit.selected.empty()) cov = selected_cov_reparameterized(est.reparameterized, fit.selected);

  EffectsReport rep;
  const CellMap att = att_point(fit, layout);
  for (const auto& [cell, value] : att) {
    const VarianceEstimate v = fixed_variance({{cell, 1.0}}, est, cov);
    rep.att.push_back({cell.first, cell.second, data.label_of(cell.first), data.label_of(cell.second),
                       IntervalReport::from(conf_interval(value, v, est.n_obs, alpha))});
  }

  const CohortMap cohorts = cohort_att(att, layout);
  for (const auto& [r, value] : cohorts) {
    const VarianceEstimate v = fixed_variance(single_cohort_weights(layout, r), est, cov);
    rep.cohort_att.push_back({r, data.label_of(r), IntervalReport::from(conf_interval(value, v, est.n_obs, alpha))});
  }

  const double overall = aggregate_weighted(att, est.counts, layout);
  VarianceEstimate overall_var{0.0, VarianceKind::WeightedConservative, true};
  if (cov) overall_var = var_weighted(fit, layout, *est.fusion, *cov, est.counts, est.variance.sigma_sq).conservative;
  rep.overall = IntervalReport::from(conf_interval(overall, overall_var, est.n_obs, alpha));

  if (options.split_counts) {
    const double split = aggregate_weighted(att, *options.split_counts, layout);
    VarianceEstimate split_var{0.0, VarianceKind::WeightedSplit, true};
    if (cov)
      split_var =
          var_weighted(fit, layout, *est.fusion, *cov, *options.split_counts, est.variance.sigma_sq).split;
    rep.overall_split = IntervalReport::from(conf_interval(split, split_var, est.n_obs, alpha));
  }

  if (options.weights) {
    const double value = aggregate_fixed(att, *options.weights);
    rep.fixed_weights =
        IntervalReport::from(conf_interval(value, fixed_variance(*options.weights, est, cov), est.n_obs, alpha));
  }

  for (const auto& query : options.catt_queries) {
    const double value = catt_point(fit, layout, query.r, query.t, query.x);
    rep.catt.push_back({query.r, query.t, std::vector<double>(query.x.data(), query.x.data() + query.x.size()), value});
  }

  const CiunDiagnostic ciun = ciun_diagnostic(fit, layout);
  rep.ciun = ciun.holds;
  rep.ciun_violations = ciun.violations;

  rep.lambda = fit.lambda;
  rep.q = fit.q;
  rep.p = layout.p();
  rep.selected = static_cast<int>(fit.selected.size());
  rep.n_units = data.n_units;
  rep.n_times = data.n_times;
  rep.sigma_sq = est.variance.sigma_sq;
  rep.sigma_c_sq = est.variance.sigma_c_sq;
  rep.variance_source = std::string(to_string(est.variance.source));
  rep.alpha = alpha;
  rep.covariate_names = data.covariate_names;
  return rep;
}

EffectsReport estimate(const PanelDataset& data, const EstimateOptions& options) {
  return build_report(data, fit_fetwfe(data, options), options);
}

}  // namespace fetwfe

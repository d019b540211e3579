#include "fetwfe/report.hpp"

#include "fetwfe/error.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>

namespace fetwfe {

using nlohmann::json;

namespace {

json interval_json(const IntervalReport& v) {
  json j;
  j["estimate"] = v.estimate;
  j["se"] = v.se ? json(*v.se) : json(nullptr);
  j["ci_low"] = v.ci_low ? json(*v.ci_low) : json(nullptr);
  j["ci_high"] = v.ci_high ? json(*v.ci_high) : json(nullptr);
  j["degenerate"] = v.degenerate;
  return j;
}

std::optional<double> optional_number(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

IntervalReport interval_from(const json& j) {
  IntervalReport v;
  v.estimate = j.at("estimate").get<double>();
  v.se = optional_number(j, "se");
  v.ci_low = optional_number(j, "ci_low");
  v.ci_high = optional_number(j, "ci_high");
  v.degenerate = j.value("degenerate", false);
  return v;
}

std::string fmt(double x) {
  std::ostringstream s;
  s << std::setprecision(6) << x;
  return s.str();
}

std::string fmt_interval(const IntervalReport& v) {
  if (v.degenerate) return "degenerate";
  return "[" + fmt(*v.ci_low) + ", " + fmt(*v.ci_high) + "]";
}

}  // namespace

json report_to_json(const EffectsReport& report) {
  json j;
  j["att"] = json::array();
  for (const auto& c : report.att) {
    json e = interval_json(c.value);
    e["r"] = c.r;
    e["t"] = c.t;
    e["r_label"] = c.r_label;
    e["t_label"] = c.t_label;
    j["att"].push_back(e);
  }
  j["cohort_att"] = json::array();
  for (const auto& c : report.cohort_att) {
    json e = interval_json(c.value);
    e["r"] = c.r;
    e["r_label"] = c.r_label;
    j["cohort_att"].push_back(e);
  }
  j["overall"] = interval_json(report.overall);
  j["overall"]["kind"] = "weighted_conservative";
  if (report.overall_split) {
    j["overall_split"] = interval_json(*report.overall_split);
    j["overall_split"]["kind"] = "weighted_split";
  }
  if (report.fixed_weights) {
    j["fixed_weights"] = interval_json(*report.fixed_weights);
    j["fixed_weights"]["kind"] = "fixed";
  }
  j["catt"] = json::array();
  for (const auto& c : report.catt) j["catt"].push_back({{"r", c.r}, {"t", c.t}, {"x", c.x}, {"value", c.value}});
  j["ciun"] = report.ciun;
  j["ciun_violations"] = json::array();
  for (const auto& [t, cov] : report.ciun_violations) j["ciun_violations"].push_back({{"t", t}, {"covariate", cov}});
  j["zero_cohorts"] = report.zero_cohorts();
  j["fit"] = {{"lambda", report.lambda},
              {"q", report.q},
              {"p", report.p},
              {"selected", report.selected},
              {"n_units", report.n_units},
              {"n_times", report.n_times},
              {"sigma_sq", report.sigma_sq},
              {"sigma_c_sq", report.sigma_c_sq},
              {"variance_source", report.variance_source},
              {"alpha", report.alpha},
              {"covariates", report.covariate_names}};
  return j;
}

EffectsReport report_from_json(const json& j) {
  try {
    EffectsReport rep;
    for (const auto& e : j.at("att"))
      rep.att.push_back({e.at("r").get<int>(), e.at("t").get<int>(), e.value("r_label", 0LL), e.value("t_label", 0LL),
                         interval_from(e)});
    for (const auto& e : j.at("cohort_att"))
      rep.cohort_att.push_back({e.at("r").get<int>(), e.value("r_label", 0LL), interval_from(e)});
    rep.overall = interval_from(j.at("overall"));
    if (j.contains("overall_split")) rep.overall_split = interval_from(j.at("overall_split"));
    if (j.contains("fixed_weights")) rep.fixed_weights = interval_from(j.at("fixed_weights"));
    if (j.contains("catt"))
      for (const auto& e : j.at("catt"))
        rep.catt.push_back(
            {e.at("r").get<int>(), e.at("t").get<int>(), e.at("x").get<std::vector<double>>(), e.at("value").get<double>()});
    rep.ciun = j.at("ciun").get<bool>();
    if (j.contains("ciun_violations"))
      for (const auto& e : j.at("ciun_violations"))
        rep.ciun_violations.emplace_back(e.at("t").get<int>(), e.at("covariate").get<int>());
    const json& fit = j.at("fit");
    rep.lambda = fit.at("lambda").get<double>();
    rep.q = fit.at("q").get<double>();
    rep.p = fit.at("p").get<int>();
    rep.selected = fit.at("selected").get<int>();
    rep.n_units = fit.at("n_units").get<int>();
    rep.n_times = fit.at("n_times").get<int>();
    rep.sigma_sq = fit.at("sigma_sq").get<double>();
    rep.sigma_c_sq = fit.at("sigma_c_sq").get<double>();
    rep.variance_source = fit.at("variance_source").get<std::string>();
    rep.alpha = fit.at("alpha").get<double>();
    rep.covariate_names = fit.value("covariates", std::vector<std::string>{});
    return rep;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Parse, "report", std::string("malformed report: ") + e.what());
  }
}

void write_summary(std::ostream& out, const EffectsReport& report) {
  const int pct = static_cast<int>(std::lround(100.0 * (1.0 - report.alpha)));
  out << "FETWFE fit: p = " << report.p << ", selected = " << report.selected << ", lambda = " << fmt(report.lambda)
      << ", q = " << report.q << "\n";
  out << "variance components (" << report.variance_source << "): sigma^2 = " << fmt(report.sigma_sq)
      << ", sigma_c^2 = " << fmt(report.sigma_c_sq) << "\n\n";

  out << "Cell effects\n";
  out << std::left << std::setw(10) << "cohort" << std::setw(10) << "time" << std::setw(14) << "estimate"
      << std::setw(14) << "se" << pct << "% CI\n";
  for (const auto& c : report.att)
    out << std::setw(10) << c.r_label << std::setw(10) << c.t_label << std::setw(14) << fmt(c.value.estimate)
        << std::setw(14) << (c.value.se ? fmt(*c.value.se) : "-") << fmt_interval(c.value) << "\n";

  out << "\nCohort effects\n";
  out << std::setw(10) << "cohort" << std::setw(14) << "estimate" << std::setw(14) << "se" << pct << "% CI\n";
  for (const auto& c : report.cohort_att)
    out << std::setw(10) << c.r_label << std::setw(14) << fmt(c.value.estimate) << std::setw(14)
        << (c.value.se ? fmt(*c.value.se) : "-") << fmt_interval(c.value) << "\n";
  if (report.zero_cohorts() == 0)
    out << "no restriction zeroed a cohort effect\n";
  else
    out << "cohorts fused to zero: " << report.zero_cohorts() << " of " << report.cohort_att.size() << "\n";

  out << "\nOverall ATT: " << fmt(report.overall.estimate);
  if (report.overall.se) out << " (conservative se " << fmt(*report.overall.se) << ")";
  out << ", " << pct << "% CI " << fmt_interval(report.overall) << "\n";
  if (report.overall_split) {
    out << "Overall ATT, split-sample shares: " << fmt(report.overall_split->estimate) << ", " << pct << "% CI "
        << fmt_interval(*report.overall_split) << "\n";
  }
  if (report.fixed_weights) {
    out << "Fixed-weight aggregate: " << fmt(report.fixed_weights->estimate) << ", " << pct << "% CI "
        << fmt_interval(*report.fixed_weights) << "\n";
  }
  out << "Untreated trends independent of covariates: " << (report.ciun ? "yes" : "no");
  if (!report.ciun) out << " (" << report.ciun_violations.size() << " nonzero time x covariate terms)";
  out << "\n";
}

}  // namespace fetwfe

#pragma once

#include "fetwfe/estimate.hpp"

#include <json.hpp>

#include <iosfwd>

namespace fetwfe {

nlohmann::json report_to_json(const EffectsReport& report);
EffectsReport report_from_json(const nlohmann::json& j);

/// Plain-text tables of cell, cohort and overall effects.
void write_summary(std::ostream& out, const EffectsReport& report);

}  // namespace fetwfe

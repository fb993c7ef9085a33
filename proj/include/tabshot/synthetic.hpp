#pragma once

#include "tabshot/table.hpp"

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace tabshot {

// Synthetic cohorts shaped like the clinical tables this harness targets. They
// stand in for controlled-access data in tests, demos and acceptance runs.

/// Covariates AGE, PTGENDER, PTEDUCAT, APOE4 plus eleven fluid/imaging markers
/// whose means shift with the label. Subject ids are "S0001"...
FeatureTable make_biomarker_cohort(std::size_t n, std::size_t positives, std::uint64_t seed);

/// The same four covariates plus `roi_count` regional measures. The first
/// `informative` regions carry label signal; the rest are noise.
FeatureTable make_imaging_cohort(std::size_t n, std::size_t positives, std::size_t roi_count, std::uint64_t seed,
                                 std::size_t informative = 12);

/// Region names: lh_/rh_ cortical regions then subcortical structures, padded
/// with roi_NN names when more are requested.
std::vector<std::string> roi_names(std::size_t count);

/// Blanks cells so each row misses between 1 and max_missing of its non-label,
/// non-id cells (natural, row-heterogeneous missingness).
FeatureTable add_row_missingness(const FeatureTable& table, std::size_t max_missing, std::uint64_t seed);

}  // namespace tabshot

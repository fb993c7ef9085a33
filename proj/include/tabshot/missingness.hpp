#pragma once

#include "tabshot/error.hpp"
#include "tabshot/table.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace tabshot {

enum class MissingnessErrc { bad_rate, bad_edges, unknown_subject, bad_plan };
using MissingnessError = TypedError<MissingnessErrc>;

enum class MaskScope { whole_table, targets_only };

/// Replayable record of an MCAR masking pass.
struct MaskPlan {
    double rate = 0.0;
    std::uint64_t seed = 0;
    MaskScope scope = MaskScope::whole_table;
    std::size_t eligible = 0;
    std::vector<std::pair<std::string, std::string>> cells;  // (subject id, column), table order
};

struct MaskResult {
    FeatureTable table;
    MaskPlan plan;
};

/// Masks exactly llround(rate * eligible) cells chosen uniformly without
/// replacement. Eligible cells are every covariate and feature cell of the rows
/// in scope (all rows, or the `targets` rows); subject ids and labels are never
/// touched. A cell that is already Missing stays Missing if drawn.
MaskResult mask_mcar(const FeatureTable& table, double rate, std::uint64_t seed,
                     MaskScope scope = MaskScope::whole_table, std::span<const std::string> targets = {});

FeatureTable apply_mask_plan(const FeatureTable& table, const MaskPlan& plan);

std::string mask_plan_to_json(const MaskPlan& plan);
MaskPlan mask_plan_from_json(std::string_view text);

/// Rows with at least one Missing covariate or feature cell.
FeatureTable filter_incomplete(const FeatureTable& table);

struct MissingnessStrata {
    std::vector<double> edges;
    std::vector<std::vector<std::string>> bins;  // target ids per bin, input order
    double pool_mean_missingness = 0.0;
};

/// Bins targets by their own missing fraction. Bins are half-open [e_i, e_i+1)
/// except the last, which is closed. Edges must start at 0, end at 1 and
/// increase strictly.
MissingnessStrata bin_by_target_missingness(const FeatureTable& table, std::span<const std::string> targets,
                                            std::span<const double> edges,
                                            std::span<const std::string> pool = {});

double mean_missingness(const FeatureTable& table, std::span<const std::string> ids);

struct NaturalSplit {
    std::vector<std::string> pool;
    std::vector<std::string> targets;
};

/// Shuffles the incomplete cohort with `seed` and cuts it by largest-remainder
/// apportionment into a demonstration pool (pool_fraction) and targets.
NaturalSplit natural_missingness_split(const FeatureTable& incomplete, double pool_fraction, std::uint64_t seed);

}  // namespace tabshot

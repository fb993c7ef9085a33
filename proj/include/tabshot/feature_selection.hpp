#pragma once

#include "tabshot/error.hpp"
#include "tabshot/table.hpp"

#include <cstddef>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace tabshot {

enum class SelectionErrc { degenerate_labels, empty_feature_set, p_too_large, unknown_feature, score_out_of_range,
                           malformed_ranking };
using SelectionError = TypedError<SelectionErrc>;

enum class RankingMethod { lasso_path, external };
std::string_view to_string(RankingMethod m);

struct RankedEntry {
    std::string feature;
    double score = 0.0;
    bool operator==(const RankedEntry&) const = default;
};

struct RankedFeatures {
    std::vector<RankedEntry> entries;  // score descending, ties by canonical column index
    RankingMethod method = RankingMethod::lasso_path;
    std::string train_fingerprint;
};

struct FeatureSet {
    std::vector<std::string> selected;
    std::vector<std::string> always_included;
    RankingMethod method = RankingMethod::lasso_path;
    std::string train_fingerprint;

    std::size_t p() const { return selected.size(); }
};

/// sign(z) * max(|z| - lambda, 0).
double soft_threshold(double z, double lambda);

/// Dense column-major design matrix.
class DesignMatrix {
public:
    DesignMatrix() = default;
    DesignMatrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    double& operator()(std::size_t r, std::size_t c) { return data_[c * rows_ + r]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[c * rows_ + r]; }
    std::span<const double> column(std::size_t c) const { return {data_.data() + c * rows_, rows_}; }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

struct LassoOptions {
    std::size_t path_points = 100;
    double min_ratio = 1e-3;    // smallest lambda = lambda_max * min_ratio
    double tolerance = 1e-7;    // max coefficient change per sweep
    std::size_t max_sweeps = 10000;
};

struct LassoPath {
    std::vector<double> lambdas;                    // decreasing
    std::vector<std::vector<double>> coefficients;  // one vector per lambda
    std::vector<std::size_t> sweeps;                // sweeps used per lambda
};

/// lambda_max = max_j |<z_j, y>| / n for a standardized design and centered y.
double lambda_max(const DesignMatrix& z, std::span<const double> y);

/// Minimizes (1/2n)||y - Z b||^2 + lambda ||b||_1 by cyclic coordinate descent,
/// starting from `beta` (warm start) and writing the solution back into it.
/// Columns of Z are assumed to satisfy ||z_j||^2 = n. Returns sweeps used.
std::size_t lasso_solve(const DesignMatrix& z, std::span<const double> y, double lambda, std::vector<double>& beta,
                        const LassoOptions& options = {});

/// Geometric path from lambda_max down to lambda_max * min_ratio with warm starts.
LassoPath lasso_path(const DesignMatrix& z, std::span<const double> y, const LassoOptions& options = {});

/// Ranks the non-covariate features of a training table by LASSO path entry:
/// score = the first path lambda at which the coefficient is nonzero, 0 for
/// features that never enter, -inf for constant (or non-numeric) columns.
/// Standardization uses this table only; Missing cells are skipped in the
/// statistics and contribute 0 in standardized units.
RankedFeatures lasso_path_rank(const FeatureTable& train, const LassoOptions& options = {});

/// First p entries; covariates passed through verbatim.
FeatureSet select_top_p(const RankedFeatures& ranked, std::size_t p, std::span<const std::string> covariates);

/// Reads "feature,score" CSV (scores normalized to [0,1]) and re-sorts it under
/// the canonical tie rule using the table's column order.
RankedFeatures import_external_ranking(std::istream& document, const FeatureTable& schema_table);

/// Hash of the training ids in order; ties a ranking to the rows it saw.
std::string train_fingerprint(const FeatureTable& train);

void write_ranking_csv(std::ostream& sink, const RankedFeatures& ranked);
std::string feature_set_to_json(const FeatureSet& fs);
FeatureSet feature_set_from_json(std::string_view text);

}  // namespace tabshot

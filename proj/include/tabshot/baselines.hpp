#pragma once

#include "tabshot/error.hpp"
#include "tabshot/feature_selection.hpp"
#include "tabshot/records.hpp"
#include "tabshot/splits.hpp"
#include "tabshot/table.hpp"

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace tabshot {

enum class BaselineErrc { single_class, shape_mismatch, bad_labels, adapter_failure };
using BaselineError = TypedError<BaselineErrc>;

struct Standardizer {
    std::vector<double> mean;
    std::vector<double> scale;  // population SD; 1 for constant columns

    /// Column statistics of `x`.
    static Standardizer fit(const DesignMatrix& x);
    static Standardizer identity(std::size_t cols);
    DesignMatrix apply(const DesignMatrix& x) const;
    std::vector<double> apply(std::span<const double> row) const;
};

struct LogRegOptions {
    double l2 = 1.0;
    double gradient_tolerance = 1e-8;  // stop when ||grad||_inf falls below
    std::size_t max_iterations = 50000;
    bool record_trace = false;
};

/// Minimizer of mean log-loss + (l2/2)||w||^2 (the intercept is not penalized).
struct LogRegModel {
    std::vector<double> weights;  // one per column
    double bias = 0.0;
    double l2 = 1.0;
    Standardizer stats;  // applied to raw rows by predict_logreg
    std::size_t iterations = 0;
    double gradient_norm = 0.0;
    std::vector<double> objective_trace;  // accepted objective values when recorded
};

double logreg_objective(std::span<const double> weights, double bias, const DesignMatrix& x, std::span<const int> y,
                        double l2);
/// Gradient with respect to (weights..., bias).
std::vector<double> logreg_gradient(std::span<const double> weights, double bias, const DesignMatrix& x,
                                    std::span<const int> y, double l2);

/// Gradient descent with Armijo backtracking on already standardized x. Throws
/// BaselineError(single_class) when y holds one class only.
LogRegModel fit_logreg(const DesignMatrix& x, std::span<const int> y, const LogRegOptions& options = {});

struct BaselinePrediction {
    int label = 0;
    double probability = 0.5;
    bool majority_fallback = false;
};

/// Standardizes the raw row with the model's statistics; label = probability >= 0.5.
BaselinePrediction predict_logreg(const LogRegModel& model, std::span<const double> raw_row);

/// Per-target baseline: fits on the k context examples only. Columns missing in
/// the target or any example are dropped; categorical columns are coded by level
/// index. Falls back to the context majority (ties to 0) when the examples hold a
/// single class or no usable column remains.
BaselinePrediction fewshot_logreg(const FeatureTable& table, const FeatureSet& features, const ContextSet& context,
                                  const SubjectRow& target, double l2 = 1.0);

/// External baseline invoked as a subprocess per target. The command reads
/// {"train":[{"x":[..],"y":0|1},...],"test":{"x":[..]}} on stdin and prints
/// {"label":0|1,"probability":p} on stdout.
class ExternalBaseline {
public:
    explicit ExternalBaseline(std::string command) : command_(std::move(command)) {}
    BaselinePrediction predict(const std::vector<std::vector<double>>& train_x, std::span<const int> train_y,
                               std::span<const double> test_x) const;

private:
    std::string command_;
};

}  // namespace tabshot

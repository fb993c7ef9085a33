#pragma once

#include "tabshot/error.hpp"
#include "tabshot/records.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace tabshot {

struct ConfusionMatrix {
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
    std::size_t undecodable_pos = 0;  // undecodable, true label 1
    std::size_t undecodable_neg = 0;  // undecodable, true label 0

    std::size_t undecodable() const { return undecodable_pos + undecodable_neg; }
    std::size_t total() const { return tp + fp + tn + fn + undecodable(); }
    bool operator==(const ConfusionMatrix&) const = default;
};

enum class EvalErrc { id_mismatch, empty_input };
using EvalError = TypedError<EvalErrc>;

/// Positive class is 1. Predictions and truth are matched by target id; both
/// must cover exactly the same ids.
ConfusionMatrix confusion(std::span<const PredictionRecord> preds, const std::map<std::string, int>& truth);

/// Metric value, or nullopt for an undefined 0/0 case.
using Metric = std::optional<double>;

struct MetricsReport {
    Metric f1, balanced_accuracy, precision, recall;
    std::size_t n = 0;
    std::size_t undecodable = 0;
    std::uint64_t seed = 0;
};

inline constexpr std::array<std::string_view, 4> kMetricNames{"f1", "balanced_accuracy", "precision", "recall"};
Metric metric_by_name(const MetricsReport& report, std::string_view name);

/// precision = tp/(tp+fp); recall = tp/(tp+fn+undecodable_pos);
/// f1 = 2tp/(2tp+fp+fn+undecodable_pos);
/// balanced accuracy = (recall + tn/(tn+fp+undecodable_neg))/2.
MetricsReport metrics(const ConfusionMatrix& cm, std::uint64_t seed = 0);

struct MetricSummary {
    Metric mean;
    Metric sd;             // sample SD (n-1); 0 when only one value is defined
    std::size_t count = 0;     // defined values used
    std::size_t undefined = 0; // reports where the metric was undefined
};

struct SummaryStats {
    std::map<std::string, MetricSummary> metrics;
    std::vector<std::uint64_t> seeds;
};

SummaryStats aggregate_seeds(std::span<const MetricsReport> reports);

std::string metrics_to_json(const MetricsReport& report, const ConfusionMatrix& cm, std::string_view manifest_hash);
std::string summary_to_json(const SummaryStats& stats, std::string_view manifest_hash);

/// Row of the flat metrics CSV: dataset,format,variant,k,p,seed,metric,value.
struct FlatMetricRow {
    std::string dataset, format, variant, k, p;
    std::uint64_t seed = 0;
    std::string metric;
    Metric value;
};
void write_flat_csv(std::ostream& sink, std::span<const FlatMetricRow> rows);

/// Shortest round-trip text for a metric; "NA" when undefined.
std::string metric_text(const Metric& m);

}  // namespace tabshot

#include "tabshot/evaluation.hpp"
#include "tabshot/numeric_format.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <set>

namespace tabshot {

namespace {

Metric ratio(double num, double den) {
    if (den == 0.0) return std::nullopt;
    return num / den;
}

nlohmann::ordered_json metric_json(const Metric& m) {
    return m ? nlohmann::ordered_json(*m) : nlohmann::ordered_json(nullptr);
}

}  // namespace

ConfusionMatrix confusion(std::span<const PredictionRecord> preds, const std::map<std::string, int>& truth) {
    ConfusionMatrix cm;
    std::set<std::string> seen;
    for (const auto& p : preds) {
        auto it = truth.find(p.target_id);
        if (it == truth.end()) throw EvalError(EvalErrc::id_mismatch, "prediction for unknown target '" + p.target_id + "'");
        if (!seen.insert(p.target_id).second) {
            throw EvalError(EvalErrc::id_mismatch, "duplicate prediction for '" + p.target_id + "'");
        }
        const int y = it->second;
        if (!p.label) {
            (y == 1 ? cm.undecodable_pos : cm.undecodable_neg)++;
        } else if (*p.label == 1) {
            (y == 1 ? cm.tp : cm.fp)++;
        } else {
            (y == 1 ? cm.fn : cm.tn)++;
        }
    }
    if (seen.size() != truth.size()) throw EvalError(EvalErrc::id_mismatch, "predictions do not cover every target");
    return cm;
}

MetricsReport metrics(const ConfusionMatrix& cm, std::uint64_t seed) {
    const double tp = static_cast<double>(cm.tp), fp = static_cast<double>(cm.fp);
    const double tn = static_cast<double>(cm.tn), fn = static_cast<double>(cm.fn);
    const double up = static_cast<double>(cm.undecodable_pos), un = static_cast<double>(cm.undecodable_neg);
    MetricsReport r;
    r.seed = seed;
    r.n = cm.total();
    r.undecodable = cm.undecodable();
    r.precision = ratio(tp, tp + fp);
    r.recall = ratio(tp, tp + fn + up);
    r.f1 = ratio(2.0 * tp, 2.0 * tp + fp + fn + up);
    const Metric specificity = ratio(tn, tn + fp + un);
    if (r.recall && specificity) r.balanced_accuracy = (*r.recall + *specificity) / 2.0;
    return r;
}

Metric metric_by_name(const MetricsReport& report, std::string_view name) {
    if (name == "f1") return report.f1;
    if (name == "balanced_accuracy") return report.balanced_accuracy;
    if (name == "precision") return report.precision;
    if (name == "recall") return report.recall;
    return std::nullopt;
}

SummaryStats aggregate_seeds(std::span<const MetricsReport> reports) {
    if (reports.empty()) throw EvalError(EvalErrc::empty_input, "no reports to aggregate");
    SummaryStats stats;
    for (const auto& r : reports) stats.seeds.push_back(r.seed);
    for (auto name : kMetricNames) {
        MetricSummary s;
        std::vector<double> values;
        for (const auto& r : reports) {
            auto m = metric_by_name(r, name);
            if (m) {
                values.push_back(*m);
            } else {
                ++s.undefined;
            }
        }
        s.count = values.size();
        if (!values.empty()) {
            // Sort so the result is independent of input order down to the last bit.
            std::sort(values.begin(), values.end());
            // Welford's update: exact mean and zero spread for constant inputs.
            double mean = 0.0;
            double sq = 0.0;
            for (std::size_t i = 0; i < values.size(); ++i) {
                const double delta = values[i] - mean;
                mean += delta / static_cast<double>(i + 1);
                sq += delta * (values[i] - mean);
            }
            s.mean = mean;
            s.sd = values.size() > 1 ? std::sqrt(sq / static_cast<double>(values.size() - 1)) : 0.0;
        }
        stats.metrics.emplace(std::string(name), s);
    }
    return stats;
}

std::string metrics_to_json(const MetricsReport& report, const ConfusionMatrix& cm, std::string_view manifest_hash) {
    nlohmann::ordered_json doc;
    doc["manifest_hash"] = std::string(manifest_hash);
    doc["seed"] = report.seed;
    doc["n"] = report.n;
    doc["undecodable"] = report.undecodable;
    for (auto name : kMetricNames) doc[std::string(name)] = metric_json(metric_by_name(report, name));
    nlohmann::ordered_json c;
    c["tp"] = cm.tp;
    c["fp"] = cm.fp;
    c["tn"] = cm.tn;
    c["fn"] = cm.fn;
    c["undecodable_pos"] = cm.undecodable_pos;
    c["undecodable_neg"] = cm.undecodable_neg;
    doc["confusion"] = c;
    return doc.dump(2) + "\n";
}

std::string summary_to_json(const SummaryStats& stats, std::string_view manifest_hash) {
    nlohmann::ordered_json doc;
    doc["manifest_hash"] = std::string(manifest_hash);
    doc["seeds"] = stats.seeds;
    nlohmann::ordered_json m;
    for (auto name : kMetricNames) {
        const auto& s = stats.metrics.at(std::string(name));
        nlohmann::ordered_json e;
        e["mean"] = metric_json(s.mean);
        e["sd"] = metric_json(s.sd);
        e["count"] = s.count;
        e["undefined"] = s.undefined;
        m[std::string(name)] = e;
    }
    doc["metrics"] = m;
    return doc.dump(2) + "\n";
}

std::string metric_text(const Metric& m) {
    return m ? shortest_decimal(*m) : std::string("NA");
}

void write_flat_csv(std::ostream& sink, std::span<const FlatMetricRow> rows) {
    sink << "dataset,format,variant,k,p,seed,metric,value\n";
    for (const auto& r : rows) {
        sink << r.dataset << ',' << r.format << ',' << r.variant << ',' << r.k << ',' << r.p << ',' << r.seed << ','
             << r.metric << ',' << metric_text(r.value) << '\n';
    }
}

}  // namespace tabshot

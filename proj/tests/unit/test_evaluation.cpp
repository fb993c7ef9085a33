#include "tabshot/evaluation.hpp"
#include "tabshot/rng.hpp"

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <sstream>

using namespace tabshot;

namespace {

struct Instance {
    std::vector<PredictionRecord> preds;
    std::map<std::string, int> truth;
};

Instance random_instance(Rng& rng) {
    Instance inst;
    const auto n = 1 + rng.below(40);
    for (std::size_t i = 0; i < n; ++i) {
        PredictionRecord p;
        p.target_id = "t" + std::to_string(i);
        const auto roll = rng.below(10);
        if (roll > 0) p.label = static_cast<int>(rng.below(2));
        inst.truth[p.target_id] = static_cast<int>(rng.below(2));
        inst.preds.push_back(p);
    }
    return inst;
}

Metric ratio(double num, double den) {
    if (den == 0.0) return std::nullopt;
    return num / den;
}

/// Metrics straight from (prediction, truth) pairs.
MetricsReport brute_force(const Instance& inst) {
    double tp = 0, fp = 0, tn = 0, fn = 0, upos = 0, uneg = 0;
    for (const auto& p : inst.preds) {
        const int t = inst.truth.at(p.target_id);
        if (!p.label) {
            (t == 1 ? upos : uneg) += 1;
        } else if (*p.label == 1) {
            (t == 1 ? tp : fp) += 1;
        } else {
            (t == 1 ? fn : tn) += 1;
        }
    }
    MetricsReport r;
    r.precision = ratio(tp, tp + fp);
    r.recall = ratio(tp, tp + fn + upos);
    r.f1 = ratio(2 * tp, 2 * tp + fp + fn + upos);
    auto spec = ratio(tn, tn + fp + uneg);
    if (r.recall && spec) r.balanced_accuracy = (*r.recall + *spec) / 2;
    return r;
}

void expect_metric(const Metric& got, const Metric& want, const std::string& what) {
    ASSERT_EQ(got.has_value(), want.has_value()) << what;
    if (got) EXPECT_NEAR(*got, *want, 1e-12) << what;
}

std::vector<PredictionRecord> records(const std::vector<std::optional<int>>& labels) {
    std::vector<PredictionRecord> out;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        PredictionRecord p;
        p.target_id = "t" + std::to_string(i);
        p.label = labels[i];
        out.push_back(p);
    }
    return out;
}

std::map<std::string, int> truth_of(const std::vector<int>& labels) {
    std::map<std::string, int> out;
    for (std::size_t i = 0; i < labels.size(); ++i) out["t" + std::to_string(i)] = labels[i];
    return out;
}

MetricsReport report_with_f1(double f1, std::uint64_t seed) {
    MetricsReport r;
    r.f1 = f1;
    r.seed = seed;
    return r;
}

}  // namespace

TEST(Confusion, SpecExamples) {
    std::vector<int> truth(30, 0);
    std::fill(truth.begin(), truth.begin() + 10, 1);
    std::vector<std::optional<int>> correct(truth.begin(), truth.end());
    EXPECT_EQ(confusion(records(correct), truth_of(truth)), (ConfusionMatrix{10, 0, 20, 0, 0, 0}));
    std::vector<std::optional<int>> all_one(30, 1);
    EXPECT_EQ(confusion(records(all_one), truth_of(truth)), (ConfusionMatrix{10, 20, 0, 0, 0, 0}));
    auto one_bad = correct;
    one_bad[3] = std::nullopt;
    auto cm = confusion(records(one_bad), truth_of(truth));
    EXPECT_EQ(cm.total(), 30u);
    EXPECT_EQ(cm.undecodable(), 1u);
    EXPECT_EQ(cm.undecodable_pos, 1u);
}

TEST(Confusion, IdMismatch) {
    auto preds = records({1, 0});
    try {
        confusion(preds, truth_of({1}));
        FAIL();
    } catch (const EvalError& e) {
        EXPECT_EQ(e.kind(), EvalErrc::id_mismatch);
    }
    EXPECT_THROW(confusion(preds, {{"t0", 1}, {"zz", 0}}), EvalError);
}

TEST(Metrics, SpecExamples) {
    auto perfect = metrics({10, 0, 20, 0, 0, 0});
    EXPECT_EQ(perfect.f1, 1.0);
    EXPECT_EQ(perfect.balanced_accuracy, 1.0);
    auto all_pos = metrics({10, 20, 0, 0, 0, 0});
    EXPECT_NEAR(*all_pos.precision, 1.0 / 3.0, 1e-15);
    EXPECT_EQ(all_pos.recall, 1.0);
    EXPECT_NEAR(*all_pos.f1, 0.5, 1e-15);
    EXPECT_NEAR(*all_pos.balanced_accuracy, 0.5, 1e-15);
    auto none = metrics({0, 0, 20, 0, 0, 0});
    EXPECT_FALSE(none.precision);
    EXPECT_FALSE(none.f1);
    EXPECT_FALSE(none.recall);
    EXPECT_FALSE(none.balanced_accuracy);
    EXPECT_EQ(none.n, 20u);
}

TEST(Metrics, UndecodableCountsAsWrong) {
    auto m = metrics({4, 0, 5, 0, 1, 1});
    EXPECT_EQ(m.precision, 1.0);
    EXPECT_NEAR(*m.recall, 0.8, 1e-15);
    EXPECT_NEAR(*m.balanced_accuracy, (0.8 + 5.0 / 6.0) / 2, 1e-15);
    EXPECT_EQ(m.undecodable, 2u);
    EXPECT_EQ(m.n, 11u);
}

TEST(Metrics, MatchBruteForceOnRandomInstances) {
    Rng rng(2024);
    for (int i = 0; i < 1000; ++i) {
        auto inst = random_instance(rng);
        auto got = metrics(confusion(inst.preds, inst.truth));
        auto want = brute_force(inst);
        expect_metric(got.f1, want.f1, "f1");
        expect_metric(got.precision, want.precision, "precision");
        expect_metric(got.recall, want.recall, "recall");
        expect_metric(got.balanced_accuracy, want.balanced_accuracy, "balanced_accuracy");
        if (got.precision && got.recall && *got.precision + *got.recall > 0) {
            const double hm = 2 * *got.precision * *got.recall / (*got.precision + *got.recall);
            EXPECT_NEAR(*got.f1, hm, 1e-12);
        }
    }
}

TEST(Metrics, F1IgnoresExtraTrueNegatives) {
    Rng rng(5);
    for (int i = 0; i < 200; ++i) {
        ConfusionMatrix cm{rng.below(10), rng.below(10), rng.below(10), rng.below(10), rng.below(3), rng.below(3)};
        auto base = metrics(cm);
        cm.tn += 1 + rng.below(20);
        auto more = metrics(cm);
        EXPECT_EQ(base.f1, more.f1);
        EXPECT_EQ(base.precision, more.precision);
        EXPECT_EQ(base.recall, more.recall);
    }
}

TEST(Aggregate, MeanAndSampleSd) {
    std::vector<MetricsReport> two{report_with_f1(0.8, 36), report_with_f1(0.9, 73)};
    auto s = aggregate_seeds(two);
    const auto& f1 = s.metrics.at("f1");
    EXPECT_NEAR(*f1.mean, 0.85, 1e-15);
    EXPECT_NEAR(*f1.sd, std::sqrt(0.005), 1e-15);
    EXPECT_NEAR(*f1.sd, 0.0707, 1e-4);
    EXPECT_EQ(s.seeds, (std::vector<std::uint64_t>{36, 73}));
    EXPECT_EQ(s.metrics.at("precision").undefined, 2u);
    EXPECT_FALSE(s.metrics.at("precision").mean);

    std::vector<MetricsReport> one{report_with_f1(0.6, 1)};
    auto single = aggregate_seeds(one);
    EXPECT_EQ(single.metrics.at("f1").mean, 0.6);
    EXPECT_EQ(single.metrics.at("f1").sd, 0.0);
    EXPECT_EQ(single.metrics.at("f1").count, 1u);

    std::vector<MetricsReport> same(10, report_with_f1(0.7, 0));
    EXPECT_EQ(aggregate_seeds(same).metrics.at("f1").sd, 0.0);
    EXPECT_THROW(aggregate_seeds(std::vector<MetricsReport>{}), EvalError);
}

TEST(Aggregate, PermutationInvariant) {
    Rng rng(77);
    std::vector<MetricsReport> reports;
    for (int i = 0; i < 10; ++i) reports.push_back(report_with_f1(rng.uniform(), static_cast<std::uint64_t>(i)));
    auto base = aggregate_seeds(reports);
    for (int trial = 0; trial < 20; ++trial) {
        rng.shuffle(std::span<MetricsReport>(reports));
        auto again = aggregate_seeds(reports);
        EXPECT_NEAR(*again.metrics.at("f1").mean, *base.metrics.at("f1").mean, 1e-15);
        EXPECT_NEAR(*again.metrics.at("f1").sd, *base.metrics.at("f1").sd, 1e-15);
    }
}

TEST(Serialization, JsonAndFlatCsv) {
    ConfusionMatrix cm{0, 0, 20, 0, 0, 0};
    auto j = nlohmann::json::parse(metrics_to_json(metrics(cm, 36), cm, "abc"));
    EXPECT_TRUE(j.at("f1").is_null());
    EXPECT_EQ(j.at("seed"), 36);
    EXPECT_EQ(j.at("manifest_hash"), "abc");

    std::vector<FlatMetricRow> rows{{"ds", "few_tabular_standard", "standard", "8", "16", 36, "f1", 0.5},
                                    {"ds", "few_tabular_standard", "standard", "8", "all", 73, "precision", std::nullopt}};
    std::ostringstream out;
    write_flat_csv(out, rows);
    EXPECT_EQ(out.str(),
              "dataset,format,variant,k,p,seed,metric,value\n"
              "ds,few_tabular_standard,standard,8,16,36,f1,0.5\n"
              "ds,few_tabular_standard,standard,8,all,73,precision,NA\n");
    EXPECT_EQ(metric_text(1.0 / 3.0), "0.3333333333333333");
}

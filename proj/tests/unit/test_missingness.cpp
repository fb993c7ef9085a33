#include "tabshot/missingness.hpp"
#include "tabshot/synthetic.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <set>

using namespace tabshot;

namespace {

/// rows x features complete table; features f0..f{n-1}, label alternating.
FeatureTable grid_table(std::size_t rows, std::size_t features) {
    std::vector<ColumnSpec> cols{{"id", ColumnKind::identifier, "", {}, false, false}};
    for (std::size_t c = 0; c < features; ++c) cols.push_back({"f" + std::to_string(c), ColumnKind::numeric, "", {}, false, false});
    cols.push_back({"y", ColumnKind::binary, "", {}, false, true});
    std::vector<SubjectRow> out;
    for (std::size_t r = 0; r < rows; ++r) {
        SubjectRow row{"r" + std::to_string(r), {Cell::text("r" + std::to_string(r))}};
        for (std::size_t c = 0; c < features; ++c) row.cells.push_back(Cell::number(static_cast<double>(r * 100 + c)));
        row.cells.push_back(Cell::number(static_cast<double>(r % 2)));
        out.push_back(std::move(row));
    }
    return FeatureTable(cols, out);
}

std::size_t missing_cells(const FeatureTable& t) {
    std::size_t n = 0;
    for (const auto& row : t.rows()) {
        for (const auto& c : row.cells) n += c.is_missing();
    }
    return n;
}

/// Writes explicit Missing cells: (row, column name).
FeatureTable with_holes(const FeatureTable& t, const std::vector<std::pair<std::size_t, std::string>>& holes) {
    auto rows = t.rows();
    for (const auto& [r, name] : holes) rows[r].cells[*t.column_index(name)] = Cell::missing();
    return t.with_rows(rows);
}

}  // namespace

TEST(MaskMcar, RateZeroIsIdentity) {
    auto t = grid_table(6, 5);
    auto r = mask_mcar(t, 0.0, 1);
    EXPECT_EQ(r.table, t);
    EXPECT_TRUE(r.plan.cells.empty());
    EXPECT_EQ(r.plan.eligible, 30u);
}

TEST(MaskMcar, HalfOfFourByFive) {
    auto t = grid_table(4, 5);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto r = mask_mcar(t, 0.5, seed);
        EXPECT_EQ(r.plan.cells.size(), 10u);
        EXPECT_EQ(missing_cells(r.table), 10u);
    }
}

TEST(MaskMcar, RateOneBlanksEveryFeatureButKeepsIdsAndLabels) {
    auto t = make_biomarker_cohort(30, 15, 2);
    auto r = mask_mcar(t, 1.0, 9);
    for (std::size_t i = 0; i < t.size(); ++i) {
        const auto& row = r.table.rows()[i];
        EXPECT_EQ(row.subject_id, t.rows()[i].subject_id);
        EXPECT_EQ(row.cells[t.id_index()], t.rows()[i].cells[t.id_index()]);
        EXPECT_EQ(row.cells[t.label_index()], t.rows()[i].cells[t.label_index()]);
        EXPECT_DOUBLE_EQ(missing_fraction(row, r.table), 1.0);
    }
}

TEST(MaskMcar, ExactCountsAcrossRatesAndSeeds) {
    auto t = grid_table(23, 7);  // 161 eligible cells: rounding is exercised
    for (double rate : {0.1, 0.2, 0.3, 0.4, 0.5}) {
        const auto expected = static_cast<std::size_t>(std::llround(rate * 161));
        for (std::uint64_t seed = 0; seed < 100; ++seed) {
            auto r = mask_mcar(t, rate, seed);
            ASSERT_EQ(r.plan.cells.size(), expected);
            ASSERT_EQ(missing_cells(r.table), expected);
            std::set<std::pair<std::string, std::string>> unique(r.plan.cells.begin(), r.plan.cells.end());
            ASSERT_EQ(unique.size(), expected);
            for (const auto& [id, col] : r.plan.cells) {
                ASSERT_NE(col, "id");
                ASSERT_NE(col, "y");
            }
        }
    }
}

TEST(MaskMcar, DeterministicAndSeedSensitive) {
    auto t = grid_table(10, 10);
    EXPECT_EQ(mask_mcar(t, 0.3, 5).plan.cells, mask_mcar(t, 0.3, 5).plan.cells);
    EXPECT_NE(mask_mcar(t, 0.3, 5).plan.cells, mask_mcar(t, 0.3, 6).plan.cells);
}

TEST(MaskMcar, PerCellFrequencyIsUniform) {
    auto t = grid_table(10, 10);
    std::map<std::pair<std::string, std::string>, int> hits;
    const int seeds = 1000;
    for (int seed = 0; seed < seeds; ++seed) {
        for (const auto& cell : mask_mcar(t, 0.3, static_cast<std::uint64_t>(seed)).plan.cells) ++hits[cell];
    }
    ASSERT_EQ(hits.size(), 100u);
    double chi2 = 0.0;
    for (const auto& [cell, n] : hits) {
        EXPECT_NEAR(n / static_cast<double>(seeds), 0.3, 0.05);
        chi2 += (n - 300.0) * (n - 300.0) / 300.0;
    }
    EXPECT_LT(chi2, 134.6416);  // chi-square 0.99 quantile, 99 degrees of freedom
}

TEST(MaskMcar, TargetsOnlyScope) {
    auto t = grid_table(10, 4);
    std::vector<std::string> targets{"r2", "r7"};
    auto r = mask_mcar(t, 0.5, 3, MaskScope::targets_only, targets);
    EXPECT_EQ(r.plan.eligible, 8u);
    EXPECT_EQ(r.plan.cells.size(), 4u);
    for (const auto& [id, col] : r.plan.cells) EXPECT_TRUE(id == "r2" || id == "r7");
    try {
        std::vector<std::string> bad{"nobody"};
        mask_mcar(t, 0.5, 3, MaskScope::targets_only, bad);
        FAIL();
    } catch (const MissingnessError& e) {
        EXPECT_EQ(e.kind(), MissingnessErrc::unknown_subject);
    }
}

TEST(MaskMcar, RateOutOfRange) {
    auto t = grid_table(3, 3);
    for (double rate : {-0.1, 1.1, std::nan("")}) {
        try {
            mask_mcar(t, rate, 1);
            FAIL() << rate;
        } catch (const MissingnessError& e) {
            EXPECT_EQ(e.kind(), MissingnessErrc::bad_rate);
        }
    }
}

TEST(MaskPlan, JsonRoundTripAndReplay) {
    auto t = make_imaging_cohort(25, 10, 20, 4);
    auto r = mask_mcar(t, 0.2, 77);
    auto back = mask_plan_from_json(mask_plan_to_json(r.plan));
    EXPECT_EQ(back.cells, r.plan.cells);
    EXPECT_EQ(back.rate, r.plan.rate);
    EXPECT_EQ(back.seed, r.plan.seed);
    EXPECT_EQ(back.eligible, r.plan.eligible);
    EXPECT_EQ(apply_mask_plan(t, back), r.table);
    back.cells.push_back({"S9999", "AGE"});
    EXPECT_THROW(apply_mask_plan(t, back), MissingnessError);
    EXPECT_THROW(mask_plan_from_json("{\"rate\": 0.2}"), MissingnessError);
}

TEST(FilterIncomplete, KeepsRowsWithAnyHole) {
    auto t = with_holes(grid_table(5, 3), {{1, "f0"}, {3, "f2"}, {3, "f1"}});
    auto inc = filter_incomplete(t);
    ASSERT_EQ(inc.size(), 2u);
    EXPECT_EQ(inc.rows()[0].subject_id, "r1");
    EXPECT_EQ(inc.rows()[1].subject_id, "r3");
    EXPECT_EQ(filter_complete(t).size() + inc.size(), t.size());
}

TEST(Strata, BoundaryConventions) {
    // 4 features: fractions 0, 0.25, 0.5, 1.0
    auto t = with_holes(grid_table(4, 4), {{1, "f0"}, {2, "f0"}, {2, "f1"}, {3, "f0"}, {3, "f1"}, {3, "f2"}, {3, "f3"}});
    std::vector<std::string> targets{"r0", "r1", "r2", "r3"};
    std::vector<double> edges{0.0, 0.25, 0.5, 1.0};
    auto s = bin_by_target_missingness(t, targets, edges);
    ASSERT_EQ(s.bins.size(), 3u);
    EXPECT_EQ(s.bins[0], (std::vector<std::string>{"r0"}));
    EXPECT_EQ(s.bins[1], (std::vector<std::string>{"r1"}));
    EXPECT_EQ(s.bins[2], (std::vector<std::string>{"r2", "r3"}));
}

TEST(Strata, EveryTargetInExactlyOneBinAndPoolMean) {
    auto t = add_row_missingness(make_biomarker_cohort(120, 60, 6), 10, 6);
    std::vector<std::string> targets, pool;
    for (std::size_t i = 0; i < t.size(); ++i) (i % 5 == 0 ? pool : targets).push_back(t.rows()[i].subject_id);
    std::vector<double> edges{0.0, 0.1, 0.2, 0.4, 1.0};
    auto s = bin_by_target_missingness(t, targets, edges, pool);
    std::multiset<std::string> seen;
    for (const auto& b : s.bins) seen.insert(b.begin(), b.end());
    EXPECT_EQ(seen, std::multiset<std::string>(targets.begin(), targets.end()));

    // Hand computation: missing feature/covariate cells over 15 such columns per row.
    double total = 0.0;
    const auto width = t.covariate_indices().size() + t.feature_indices().size();
    ASSERT_EQ(width, 15u);
    for (const auto& id : pool) {
        std::size_t holes = 0;
        for (auto c : t.covariate_indices()) holes += t.at(id).cells[c].is_missing();
        for (auto c : t.feature_indices()) holes += t.at(id).cells[c].is_missing();
        total += static_cast<double>(holes) / 15.0;
    }
    EXPECT_NEAR(s.pool_mean_missingness, total / static_cast<double>(pool.size()), 1e-15);
}

TEST(Strata, BadEdges) {
    auto t = grid_table(2, 2);
    std::vector<std::string> targets{"r0"};
    for (auto edges : std::vector<std::vector<double>>{{}, {0.0}, {0.1, 1.0}, {0.0, 0.9}, {0.0, 0.5, 0.5, 1.0}, {0.0, 0.6, 0.4, 1.0}}) {
        try {
            bin_by_target_missingness(t, targets, edges);
            FAIL();
        } catch (const MissingnessError& e) {
            EXPECT_EQ(e.kind(), MissingnessErrc::bad_edges);
        }
    }
}

TEST(NaturalSplit, TwentyPercentPool) {
    std::vector<std::pair<std::size_t, std::string>> holes;
    for (std::size_t r = 0; r < 541; ++r) holes.push_back({r, "f" + std::to_string(r % 3)});
    auto t = with_holes(grid_table(541, 3), holes);
    auto split = natural_missingness_split(t, 0.2, 36);
    EXPECT_EQ(split.pool.size(), 108u);
    EXPECT_EQ(split.targets.size(), 433u);
    std::set<std::string> all(split.pool.begin(), split.pool.end());
    all.insert(split.targets.begin(), split.targets.end());
    EXPECT_EQ(all.size(), 541u);
    EXPECT_EQ(natural_missingness_split(t, 0.2, 36).pool, split.pool);
    EXPECT_NE(natural_missingness_split(t, 0.2, 37).pool, split.pool);
    EXPECT_THROW(natural_missingness_split(t, 0.0, 36), MissingnessError);
}

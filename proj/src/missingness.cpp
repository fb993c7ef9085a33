#include "tabshot/missingness.hpp"

#include "tabshot/rng.hpp"
#include "tabshot/splits.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <set>
#include <unordered_set>

namespace tabshot {

using json = nlohmann::json;

namespace {

std::vector<std::size_t> maskable_columns(const FeatureTable& table) {
    std::vector<std::size_t> cols = table.covariate_indices();
    auto features = table.feature_indices();
    cols.insert(cols.end(), features.begin(), features.end());
    std::sort(cols.begin(), cols.end());
    return cols;
}

std::string_view scope_name(MaskScope s) { return s == MaskScope::whole_table ? "whole_table" : "targets_only"; }

}  // namespace

MaskResult mask_mcar(const FeatureTable& table, double rate, std::uint64_t seed, MaskScope scope,
                     std::span<const std::string> targets) {
    if (!(rate >= 0.0 && rate <= 1.0)) {
        throw MissingnessError(MissingnessErrc::bad_rate, "mask rate must lie in [0, 1]");
    }
    std::vector<bool> in_scope(table.size(), scope == MaskScope::whole_table);
    if (scope == MaskScope::targets_only) {
        std::unordered_set<std::string> wanted;
        for (const auto& id : targets) {
            if (!table.find(id)) {
                throw MissingnessError(MissingnessErrc::unknown_subject, "unknown target '" + id + "'");
            }
            wanted.insert(id);
        }
        for (std::size_t r = 0; r < table.size(); ++r) in_scope[r] = wanted.count(table.rows()[r].subject_id) > 0;
    }
    const auto cols = maskable_columns(table);
    std::vector<std::pair<std::size_t, std::size_t>> eligible;  // (row, column)
    for (std::size_t r = 0; r < table.size(); ++r) {
        if (!in_scope[r]) continue;
        for (auto c : cols) eligible.emplace_back(r, c);
    }
    const auto count = static_cast<std::size_t>(std::llround(rate * static_cast<double>(eligible.size())));

    // Partial Fisher-Yates: the first `count` slots become a uniform sample.
    Rng rng(seed);
    for (std::size_t i = 0; i < count; ++i) {
        const auto j = i + static_cast<std::size_t>(rng.below(eligible.size() - i));
        std::swap(eligible[i], eligible[j]);
    }
    std::vector<std::pair<std::size_t, std::size_t>> chosen(eligible.begin(),
                                                             eligible.begin() + static_cast<std::ptrdiff_t>(count));
    std::sort(chosen.begin(), chosen.end());

    MaskResult out;
    out.plan.rate = rate;
    out.plan.seed = seed;
    out.plan.scope = scope;
    out.plan.eligible = eligible.size();
    auto rows = table.rows();
    for (auto [r, c] : chosen) {
        rows[r].cells[c] = Cell::missing();
        out.plan.cells.emplace_back(rows[r].subject_id, table.columns()[c].name);
    }
    out.table = table.with_rows(std::move(rows));
    return out;
}

FeatureTable apply_mask_plan(const FeatureTable& table, const MaskPlan& plan) {
    auto rows = table.rows();
    std::unordered_map<std::string, std::size_t> row_index;
    for (std::size_t r = 0; r < rows.size(); ++r) row_index.emplace(rows[r].subject_id, r);
    for (const auto& [id, column] : plan.cells) {
        auto it = row_index.find(id);
        if (it == row_index.end()) {
            throw MissingnessError(MissingnessErrc::bad_plan, "mask plan names unknown subject '" + id + "'");
        }
        auto c = table.column_index(column);
        if (!c || *c == table.id_index() || *c == table.label_index()) {
            throw MissingnessError(MissingnessErrc::bad_plan, "mask plan names non-maskable column '" + column + "'");
        }
        rows[it->second].cells[*c] = Cell::missing();
    }
    return table.with_rows(std::move(rows));
}

std::string mask_plan_to_json(const MaskPlan& plan) {
    nlohmann::ordered_json doc;
    doc["rate"] = plan.rate;
    doc["seed"] = plan.seed;
    doc["scope"] = std::string(scope_name(plan.scope));
    doc["eligible"] = plan.eligible;
    auto cells = nlohmann::ordered_json::array();
    for (const auto& [id, column] : plan.cells) cells.push_back({id, column});
    doc["cells"] = std::move(cells);
    return doc.dump(2);
}

MaskPlan mask_plan_from_json(std::string_view text) {
    json doc = json::parse(text, nullptr, false);
    if (!doc.is_object()) throw MissingnessError(MissingnessErrc::bad_plan, "mask plan is not a JSON object");
    MaskPlan plan;
    try {
        plan.rate = doc.at("rate").get<double>();
        plan.seed = doc.at("seed").get<std::uint64_t>();
        const auto scope = doc.at("scope").get<std::string>();
        if (scope == "whole_table") {
            plan.scope = MaskScope::whole_table;
        } else if (scope == "targets_only") {
            plan.scope = MaskScope::targets_only;
        } else {
            throw MissingnessError(MissingnessErrc::bad_plan, "unknown mask scope '" + scope + "'");
        }
        plan.eligible = doc.value("eligible", std::size_t{0});
        for (const auto& cell : doc.at("cells")) {
            plan.cells.emplace_back(cell.at(0).get<std::string>(), cell.at(1).get<std::string>());
        }
    } catch (const json::exception& e) {
        throw MissingnessError(MissingnessErrc::bad_plan, std::string("mask plan: ") + e.what());
    }
    return plan;
}

FeatureTable filter_incomplete(const FeatureTable& table) {
    const auto cols = maskable_columns(table);
    std::vector<SubjectRow> rows;
    for (const auto& row : table.rows()) {
        const bool incomplete =
            std::any_of(cols.begin(), cols.end(), [&](std::size_t c) { return row.cells[c].is_missing(); });
        if (incomplete) rows.push_back(row);
    }
    return table.with_rows(std::move(rows));
}

double mean_missingness(const FeatureTable& table, std::span<const std::string> ids) {
    if (ids.empty()) return 0.0;
    double total = 0.0;
    for (const auto& id : ids) total += missing_fraction(table.at(id), table);
    return total / static_cast<double>(ids.size());
}

MissingnessStrata bin_by_target_missingness(const FeatureTable& table, std::span<const std::string> targets,
                                            std::span<const double> edges, std::span<const std::string> pool) {
    if (edges.size() < 2 || edges.front() != 0.0 || edges.back() != 1.0) {
        throw MissingnessError(MissingnessErrc::bad_edges, "bin edges must start at 0 and end at 1");
    }
    for (std::size_t i = 1; i < edges.size(); ++i) {
        if (!(edges[i] > edges[i - 1])) {
            throw MissingnessError(MissingnessErrc::bad_edges, "bin edges must increase strictly");
        }
    }
    MissingnessStrata out;
    out.edges.assign(edges.begin(), edges.end());
    out.bins.resize(edges.size() - 1);
    for (const auto& id : targets) {
        const double f = missing_fraction(table.at(id), table);
        // upper_bound finds the first edge > f; the bin is the one before it.
        auto it = std::upper_bound(edges.begin(), edges.end(), f);
        std::size_t bin = static_cast<std::size_t>(it - edges.begin());
        bin = bin == 0 ? 0 : bin - 1;
        bin = std::min(bin, out.bins.size() - 1);
        out.bins[bin].push_back(id);
    }
    out.pool_mean_missingness = mean_missingness(table, pool);
    return out;
}

NaturalSplit natural_missingness_split(const FeatureTable& incomplete, double pool_fraction, std::uint64_t seed) {
    if (!(pool_fraction > 0.0 && pool_fraction < 1.0)) {
        throw MissingnessError(MissingnessErrc::bad_rate, "pool fraction must lie in (0, 1)");
    }
    std::vector<std::string> ids;
    ids.reserve(incomplete.size());
    for (const auto& row : incomplete.rows()) ids.push_back(row.subject_id);
    Rng rng(seed);
    rng.shuffle(std::span<std::string>(ids));
    const double weights[] = {pool_fraction, 1.0 - pool_fraction};
    const auto sizes = largest_remainder(ids.size(), weights);
    NaturalSplit out;
    out.pool.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(sizes[0]));
    out.targets.assign(ids.begin() + static_cast<std::ptrdiff_t>(sizes[0]), ids.end());
    return out;
}

}  // namespace tabshot

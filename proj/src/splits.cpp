#include "tabshot/splits.hpp"
#include "tabshot/hashing.hpp"
#include "tabshot/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>
#include <unordered_set>

namespace tabshot {

namespace {

constexpr std::array<std::string_view, kPartitionCount> kPartitionNames = {
    "train", "val", "test", "pool_train", "pool_val", "pool_test"};

std::array<std::size_t, kPartitionCount> partition_sizes(std::size_t total, const SplitFractions& f) {
    auto v = largest_remainder(total, f.values);
    std::array<std::size_t, kPartitionCount> out{};
    std::copy(v.begin(), v.end(), out.begin());
    return out;
}

}  // namespace

std::string_view to_string(Partition p) { return kPartitionNames[static_cast<std::size_t>(p)]; }

Partition partition_from_string(std::string_view name) {
    for (std::size_t i = 0; i < kPartitionCount; ++i) {
        if (kPartitionNames[i] == name) return static_cast<Partition>(i);
    }
    throw SplitError(SplitErrc::invalid_assignment, "unknown partition '" + std::string(name) + "'");
}

Partition pool_for(Partition split) {
    switch (split) {
        case Partition::train: return Partition::pool_train;
        case Partition::val: return Partition::pool_val;
        case Partition::test: return Partition::pool_test;
        default: break;
    }
    throw SplitError(SplitErrc::invalid_assignment, "partition '" + std::string(to_string(split)) +
                                                        "' is a pool, not an evaluated split");
}

void SplitFractions::validate() const {
    double sum = 0.0;
    for (double v : values) {
        if (!(v >= 0.0)) throw SplitError(SplitErrc::bad_fractions, "split fractions must be nonnegative");
        sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
        throw SplitError(SplitErrc::bad_fractions, "split fractions must sum to 1 (got " + std::to_string(sum) + ")");
    }
}

std::vector<std::size_t> largest_remainder(std::size_t total, std::span<const double> weights) {
    const std::size_t n = weights.size();
    std::vector<std::size_t> seats(n);
    std::vector<double> remainder(n);
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double quota = static_cast<double>(total) * weights[i];
        // Snap quotas that sit within 1e-9 of an integer so 33.300000000000004
        // and 33.3 rank as equal remainders.
        double floor_q = std::floor(quota + 1e-9);
        if (floor_q > quota) floor_q = std::round(quota);
        seats[i] = static_cast<std::size_t>(std::max(0.0, floor_q));
        remainder[i] = std::max(0.0, quota - floor_q);
        assigned += seats[i];
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return remainder[a] > remainder[b] + 1e-9;
    });
    for (std::size_t i = 0; assigned < total && i < n; ++i, ++assigned) ++seats[order[i]];
    return seats;
}

SplitAssignment make_splits(const FeatureTable& table, const SplitFractions& fractions,
                            std::uint64_t seed, bool stratified) {
    fractions.validate();
    const std::size_t n = table.size();
    if (n < kPartitionCount) {
        throw SplitError(SplitErrc::too_few_subjects,
                         "cohort of " + std::to_string(n) + " is too small to split six ways");
    }
    const auto sizes = partition_sizes(n, fractions);
    Rng rng(seed);

    SplitAssignment out;
    out.seed = seed;
    out.fractions = fractions;
    out.stratified = stratified;

    std::unordered_map<std::string, std::size_t> row_pos;
    for (std::size_t i = 0; i < n; ++i) row_pos.emplace(table.rows()[i].subject_id, i);

    if (!stratified) {
        std::vector<std::string> ids;
        ids.reserve(n);
        for (const auto& row : table.rows()) ids.push_back(row.subject_id);
        rng.shuffle(std::span<std::string>(ids));
        std::size_t cursor = 0;
        for (std::size_t p = 0; p < kPartitionCount; ++p) {
            out.partitions[p].assign(ids.begin() + static_cast<std::ptrdiff_t>(cursor),
                                     ids.begin() + static_cast<std::ptrdiff_t>(cursor + sizes[p]));
            cursor += sizes[p];
        }
    } else {
        std::vector<std::string> positives, negatives;
        for (const auto& row : table.rows()) {
            // Unlabeled rows are stratified with the negatives.
            (table.label(row).value_or(0) == 1 ? positives : negatives).push_back(row.subject_id);
        }
        rng.shuffle(std::span<std::string>(positives));
        rng.shuffle(std::span<std::string>(negatives));
        // Apportion positives proportionally to partition sizes; negatives fill the
        // rest, which keeps both classes within one subject of their quota.
        std::vector<double> share(kPartitionCount);
        for (std::size_t p = 0; p < kPartitionCount; ++p) {
            share[p] = static_cast<double>(sizes[p]) / static_cast<double>(n);
        }
        auto pos_counts = largest_remainder(positives.size(), share);
        std::size_t pi = 0, ni = 0;
        for (std::size_t p = 0; p < kPartitionCount; ++p) {
            auto& part = out.partitions[p];
            for (std::size_t j = 0; j < pos_counts[p]; ++j) part.push_back(positives[pi++]);
            for (std::size_t j = pos_counts[p]; j < sizes[p]; ++j) part.push_back(negatives[ni++]);
        }
    }
    for (auto& part : out.partitions) {
        std::sort(part.begin(), part.end(), [&](const std::string& a, const std::string& b) {
            return row_pos.at(a) < row_pos.at(b);
        });
    }
    return out;
}

void validate_assignment(const SplitAssignment& assignment, const FeatureTable& table) {
    auto fail = [](const std::string& why) { throw SplitError(SplitErrc::invalid_assignment, why); };
    try {
        assignment.fractions.validate();
    } catch (const SplitError& e) {
        fail(e.what());
    }
    std::unordered_set<std::string> seen;
    std::size_t total = 0;
    for (std::size_t p = 0; p < kPartitionCount; ++p) {
        for (const auto& id : assignment.partitions[p]) {
            if (!table.find(id)) fail("assignment names unknown subject '" + id + "'");
            if (!seen.insert(id).second) fail("subject '" + id + "' appears in more than one partition");
            ++total;
        }
    }
    if (total != table.size()) fail("assignment does not cover the whole cohort");
    const auto sizes = partition_sizes(table.size(), assignment.fractions);
    for (std::size_t p = 0; p < kPartitionCount; ++p) {
        if (assignment.partitions[p].size() != sizes[p]) {
            fail("partition '" + std::string(kPartitionNames[p]) + "' has size " +
                 std::to_string(assignment.partitions[p].size()) + ", expected " + std::to_string(sizes[p]));
        }
    }
}

std::string assignment_to_json(const SplitAssignment& a) {
    nlohmann::ordered_json doc;
    doc["seed"] = a.seed;
    nlohmann::ordered_json fr;
    for (std::size_t p = 0; p < kPartitionCount; ++p) fr[std::string(kPartitionNames[p])] = a.fractions.values[p];
    doc["fractions"] = fr;
    doc["stratified"] = a.stratified;
    nlohmann::ordered_json parts;
    for (std::size_t p = 0; p < kPartitionCount; ++p) parts[std::string(kPartitionNames[p])] = a.partitions[p];
    doc["partitions"] = parts;
    return doc.dump(2) + "\n";
}

SplitAssignment assignment_from_json(std::string_view text) {
    SplitAssignment a;
    try {
        auto doc = nlohmann::json::parse(text);
        a.seed = doc.at("seed").get<std::uint64_t>();
        a.stratified = doc.value("stratified", true);
        const auto& fr = doc.at("fractions");
        const auto& parts = doc.at("partitions");
        for (std::size_t p = 0; p < kPartitionCount; ++p) {
            const std::string name(kPartitionNames[p]);
            a.fractions.values[p] = fr.at(name).get<double>();
            a.partitions[p] = parts.at(name).get<std::vector<std::string>>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw SplitError(SplitErrc::invalid_assignment, std::string("malformed split document: ") + e.what());
    }
    return a;
}

std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view target_id) {
    return fnv1a64(target_id) ^ global_seed;
}

ContextSet sample_context(std::span<const LabeledId> pool, std::size_t k, std::uint64_t global_seed,
                          std::string_view target_id, Partition source_pool) {
    if (k > pool.size()) {
        throw SplitError(SplitErrc::pool_too_small, "cannot draw k=" + std::to_string(k) + " from a pool of " +
                                                        std::to_string(pool.size()));
    }
    for (const auto& member : pool) {
        if (member.subject_id == target_id) {
            throw SplitError(SplitErrc::target_in_pool, "target '" + std::string(target_id) + "' is in its own pool");
        }
    }
    ContextSet ctx;
    ctx.target_id = std::string(target_id);
    ctx.source_pool = source_pool;
    std::vector<std::size_t> idx(pool.size());
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(derive_seed(global_seed, target_id));
    // Partial Fisher-Yates: the first k slots are a uniform draw in order.
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(idx.size() - i));
        std::swap(idx[i], idx[j]);
        ctx.examples.push_back(pool[idx[i]]);
    }
    return ctx;
}

std::vector<LabeledId> labeled_pool(const SplitAssignment& assignment, Partition pool,
                                    const FeatureTable& table) {
    std::vector<LabeledId> out;
    for (const auto& id : assignment[pool]) {
        const auto label = table.label(table.at(id));
        if (!label) throw SplitError(SplitErrc::invalid_assignment, "pool member '" + id + "' has no label");
        out.push_back({id, *label});
    }
    return out;
}

}  // namespace tabshot

#pragma once

#include "tabshot/error.hpp"
#include "tabshot/table.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace tabshot {

enum class Partition : std::size_t { train = 0, val, test, pool_train, pool_val, pool_test };

inline constexpr std::size_t kPartitionCount = 6;
inline constexpr std::array<Partition, kPartitionCount> kAllPartitions = {
    Partition::train, Partition::val, Partition::test,
    Partition::pool_train, Partition::pool_val, Partition::pool_test};

std::string_view to_string(Partition p);
Partition partition_from_string(std::string_view name);
/// The ICL pool that serves targets of an evaluated split.
Partition pool_for(Partition split);

struct SplitFractions {
    std::array<double, kPartitionCount> values{0.40, 0.10, 0.20, 0.10, 0.10, 0.10};

    double operator[](Partition p) const { return values[static_cast<std::size_t>(p)]; }
    /// Throws SplitError(bad_fractions) unless nonnegative and summing to 1 within 1e-9.
    void validate() const;
    bool operator==(const SplitFractions&) const = default;
};

/// Hamilton apportionment of `total` seats over `weights` (sum 1). Remainders that
/// tie within 1e-9 go to the earlier index.
std::vector<std::size_t> largest_remainder(std::size_t total, std::span<const double> weights);

struct SplitAssignment {
    std::uint64_t seed = 0;
    SplitFractions fractions;
    bool stratified = true;
    std::array<std::vector<std::string>, kPartitionCount> partitions;

    const std::vector<std::string>& operator[](Partition p) const {
        return partitions[static_cast<std::size_t>(p)];
    }
    bool operator==(const SplitAssignment&) const = default;
};

enum class SplitErrc { bad_fractions, too_few_subjects, pool_too_small, target_in_pool, invalid_assignment };
using SplitError = TypedError<SplitErrc>;

/// Seeded partition into train/val/test and three disjoint ICL pools. Sizes follow
/// largest-remainder rounding of the fractions. With `stratified`, each class is
/// apportioned across partitions so per-partition class counts are within one
/// subject of proportional.
SplitAssignment make_splits(const FeatureTable& table, const SplitFractions& fractions,
                            std::uint64_t seed, bool stratified = true);

/// Checks disjointness, exhaustiveness against the table and the size rule.
/// Throws SplitError(invalid_assignment).
void validate_assignment(const SplitAssignment& assignment, const FeatureTable& table);

std::string assignment_to_json(const SplitAssignment& assignment);
SplitAssignment assignment_from_json(std::string_view text);

struct LabeledId {
    std::string subject_id;
    int label = 0;
    bool operator==(const LabeledId&) const = default;
};

struct ContextSet {
    std::string target_id;
    std::vector<LabeledId> examples;
    Partition source_pool = Partition::pool_test;

    std::size_t k() const { return examples.size(); }
};

/// Per-target stream seed: FNV-1a-64(target_id) XOR global_seed.
std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view target_id);

/// Uniform sample of k pool members without replacement, in draw order.
/// Deterministic for a fixed (global_seed, target_id).
ContextSet sample_context(std::span<const LabeledId> pool, std::size_t k, std::uint64_t global_seed,
                          std::string_view target_id, Partition source_pool = Partition::pool_test);

/// Pool members with their labels, in assignment order.
std::vector<LabeledId> labeled_pool(const SplitAssignment& assignment, Partition pool,
                                    const FeatureTable& table);

}  // namespace tabshot

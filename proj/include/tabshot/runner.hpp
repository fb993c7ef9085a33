#pragma once

#include "tabshot/error.hpp"
#include "tabshot/evaluation.hpp"
#include "tabshot/inference.hpp"
#include "tabshot/missingness.hpp"
#include "tabshot/prompt.hpp"
#include "tabshot/splits.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace tabshot {

inline const std::vector<std::uint64_t> kDefaultSeeds{36, 73, 105, 254, 314, 492, 564, 688, 777, 825};
inline const std::vector<std::uint64_t> kAblationSeeds{36, 73, 314};

enum class RunnerErrc { bad_manifest, hash_mismatch, empty_grid, missing_artifact };
using RunnerError = TypedError<RunnerErrc>;

enum class SelectorKind { none, lasso_path, external };
enum class EndpointKind { mock, http, logreg };
enum class MissingnessMode { none, mcar, natural };

/// Declarative description of one experiment. Relative paths resolve against
/// base_dir (the manifest's directory); the hash covers everything except
/// output_dir, workers and base_dir, so a rerun elsewhere keeps its identity.
struct ExperimentManifest {
    std::string name;
    std::string dataset_name;
    std::string table_path;
    std::string schema_path;
    std::vector<std::uint64_t> seeds = kDefaultSeeds;
    PromptFormat format;
    std::optional<std::size_t> k;
    std::optional<std::size_t> p;  // nullopt with a selector means "all"
    SelectorKind selector = SelectorKind::none;
    std::string ranking_path;  // external selector only
    EndpointKind endpoint_kind = EndpointKind::mock;
    MockRule mock_rule;
    EndpointConfig endpoint;
    double baseline_l2 = 1.0;
    MissingnessMode missingness = MissingnessMode::none;
    double mcar_rate = 0.0;
    MaskScope mask_scope = MaskScope::whole_table;
    double natural_pool_fraction = 0.2;
    std::vector<double> strata_edges{0.0, 0.25, 0.5, 1.0};
    bool reflection = false;
    std::string instructions_path;
    std::string serialization_path;
    SplitFractions fractions;
    bool stratified = true;
    std::string output_dir;
    std::size_t workers = 1;
    std::filesystem::path base_dir;

    void validate() const;
    std::filesystem::path resolve(const std::string& path) const;
    std::string p_text() const;  // "16", "all"
    std::string k_text() const;  // "8", "0" for zero-shot
};

ExperimentManifest parse_manifest(std::string_view json_text, std::filesystem::path base_dir = {});
ExperimentManifest load_manifest(const std::filesystem::path& path);
/// Canonical JSON of the hashed fields.
std::string manifest_to_json(const ExperimentManifest& manifest);
std::string manifest_hash(const ExperimentManifest& manifest);

struct SeedResult {
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    ConfusionMatrix confusion;
    MetricsReport report;
    std::filesystem::path directory;
};

struct ResultSet {
    std::string manifest_hash;
    std::vector<SeedResult> seeds;
    SummaryStats summary;
    std::size_t failures() const;
};

struct RunHooks {
    /// Replaces the model the manifest describes (tests inject fakes here).
    std::shared_ptr<ChatModel> model;
    std::function<void(const std::string&)> log;
};

/// Per seed: split, select, mask, render, infer, reflect, decode, score. Every
/// artifact lands in output_dir/seed_<N>/; a failing seed writes failure.json
/// and the remaining seeds still run. Writes summary.json and metrics.csv.
ResultSet run_experiment(const ExperimentManifest& manifest, const RunHooks& hooks = {});

struct GridCell {
    std::size_t k = 0;
    std::string p;
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    MetricsReport report;
};

/// One run per (k, p, seed), each under output_dir/k<K>_p<P>. Writes grid.csv
/// (k,p,seed,f1,balanced_accuracy,precision,recall,n,undecodable) for the cells
/// that succeeded, sorted by k, p, seed.
std::vector<GridCell> run_ablation_grid(const ExperimentManifest& base, const std::vector<std::size_t>& ks,
                                        const std::vector<std::optional<std::size_t>>& ps,
                                        const std::vector<std::uint64_t>& seeds, const RunHooks& hooks = {});

struct ReportOutput {
    std::string flat_csv;
    std::string markdown;
};

/// Reads a run directory (summary.json + seed_*/metrics.json), refuses artifacts
/// whose manifest hash differs from expected_hash (or from summary.json when
/// expected_hash is empty), and renders the flat CSV and a markdown table.
ReportOutput build_report(const std::filesystem::path& run_dir, const std::string& expected_hash = {});

}  // namespace tabshot

// Command-line front end: every pipeline stage is a subcommand so single steps
// can be run and inspected on their own; `run` and `ablate` drive whole manifests.

#include "tabshot/baselines.hpp"
#include "tabshot/feature_selection.hpp"
#include "tabshot/finetune_export.hpp"
#include "tabshot/hashing.hpp"
#include "tabshot/missingness.hpp"
#include "tabshot/prompt.hpp"
#include "tabshot/runner.hpp"
#include "tabshot/splits.hpp"
#include "tabshot/synthetic.hpp"
#include "tabshot/table.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <sstream>

namespace fs = std::filesystem;
using namespace tabshot;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot read " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spill(const std::string& path, const std::string& content) {
    if (path.empty() || path == "-") {
        std::cout << content;
        return;
    }
    if (auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path);
    out << content;
}

FeatureTable load(const std::string& schema, const std::string& table) {
    const auto columns = load_schema_file(schema);
    return load_table_file(table, columns);
}

template <typename T>
std::vector<T> parse_list(const std::string& text) {
    std::vector<T> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        if constexpr (std::is_same_v<T, double>) {
            out.push_back(std::stod(item));
        } else {
            out.push_back(static_cast<T>(std::stoull(item)));
        }
    }
    return out;
}

std::optional<std::size_t> parse_p(const std::string& text) {
    if (text == "all") return std::nullopt;
    return static_cast<std::size_t>(std::stoull(text));
}

struct TableArgs {
    std::string schema;
    std::string table;
    void add(CLI::App* app) {
        app->add_option("--schema", schema, "schema JSON")->required();
        app->add_option("--table", table, "table CSV")->required();
    }
};

struct PromptArgs {
    TableArgs data;
    std::string split_path;
    std::string features_path;
    std::string format = "few_tabular_standard";
    std::size_t k = 8;
    std::uint64_t seed = 36;
    std::string instructions;
    std::string serialization;
    std::string partition = "test";

    void add(CLI::App* app) {
        data.add(app);
        app->add_option("--split", split_path, "split assignment JSON")->required();
        app->add_option("--features", features_path, "feature set JSON (default: every feature)");
        app->add_option("--format", format, "e.g. few_tabular_standard, zero_serialized_interpretable");
        app->add_option("--k", k, "context size for few-shot formats");
        app->add_option("--seed", seed, "global seed for context sampling");
        app->add_option("--instructions", instructions, "instruction set JSON")->required();
        app->add_option("--serialization", serialization, "serialization template JSON");
        app->add_option("--partition", partition, "targets: train, val or test");
    }

    struct Built {
        FeatureTable table;
        FeatureSet features;
        InstructionSet instructions;
        std::optional<SerializationTemplate> serialization;
        std::vector<RenderedPrompt> prompts;
    };

    Built build() const {
        Built b;
        b.table = load(data.schema, data.table);
        const auto assignment = assignment_from_json(slurp(split_path));
        validate_assignment(assignment, b.table);
        b.features = features_path.empty() ? all_features(b.table) : feature_set_from_json(slurp(features_path));
        b.table = select_columns(b.table, b.features.selected);
        b.instructions = load_instruction_set(instructions);
        if (!serialization.empty()) b.serialization = load_serialization_template(serialization);
        const auto fmt = parse_prompt_format(format);
        const auto split = partition_from_string(partition);
        const auto pool_partition = pool_for(split);
        const auto pool = labeled_pool(assignment, pool_partition, b.table);
        PromptInputs inputs{&b.table, &b.features, &b.instructions, b.serialization ? &*b.serialization : nullptr};
        const std::size_t shots = fmt.shots == Shots::zero ? 0 : k;
        for (const auto& id : assignment[split]) {
            auto context = sample_context(pool, shots, seed, id, pool_partition);
            b.prompts.push_back(build_prompt(b.table.at(id), context, fmt, inputs));
        }
        return b;
    }
};

int cmd_ingest(const TableArgs& args, const std::string& out, bool complete_only) {
    auto table = load(args.schema, args.table);
    const auto incomplete = filter_incomplete(table).size();
    if (complete_only) table = filter_complete(table);
    nlohmann::ordered_json summary;
    summary["dataset_hash"] = hex64(fnv1a64(slurp(args.table)));
    summary["rows"] = table.size();
    summary["columns"] = table.columns().size();
    summary["features"] = table.feature_indices().size();
    summary["covariates"] = table.covariate_names();
    std::size_t pos = 0, neg = 0, unlabeled = 0;
    for (const auto& row : table.rows()) {
        auto y = table.label(row);
        if (!y) {
            ++unlabeled;
        } else {
            (*y ? pos : neg) += 1;
        }
    }
    summary["label_counts"] = {{"0", neg}, {"1", pos}, {"missing", unlabeled}};
    summary["incomplete_rows_in_source"] = incomplete;
    std::cout << summary.dump(2) << "\n";
    if (!out.empty()) {
        std::ostringstream csv;
        write_table(csv, table);
        spill(out, csv.str());
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"tabshot: few-shot tabular prompting and evaluation harness"};
    app.require_subcommand(1);

    // ingest
    TableArgs ingest_args;
    std::string ingest_out;
    bool complete_only = false;
    auto* ingest = app.add_subcommand("ingest", "validate a table against its schema and write it canonically");
    ingest_args.add(ingest);
    ingest->add_option("--out", ingest_out, "canonical CSV output");
    ingest->add_flag("--complete-only", complete_only, "drop rows with any Missing cell");

    // split
    TableArgs split_args;
    std::uint64_t split_seed = 36;
    std::string split_out, split_fractions;
    bool no_stratify = false;
    auto* split = app.add_subcommand("split", "seeded train/val/test + context pool assignment");
    split_args.add(split);
    split->add_option("--seed", split_seed, "split seed");
    split->add_option("--fractions", split_fractions, "six comma-separated fractions");
    split->add_flag("--no-stratify", no_stratify, "plain shuffle instead of label stratification");
    split->add_option("--out", split_out, "split JSON output (default stdout)");

    // select-features
    TableArgs sel_args;
    std::string sel_split, sel_p = "all", sel_method = "lasso", sel_ranking, sel_out, sel_ranking_out;
    auto* select = app.add_subcommand("select-features", "rank features on the training split and keep the top p");
    sel_args.add(select);
    select->add_option("--split", sel_split, "split assignment JSON")->required();
    select->add_option("--p", sel_p, "number of features or 'all'");
    select->add_option("--method", sel_method, "lasso or external")->check(CLI::IsMember({"lasso", "external"}));
    select->add_option("--ranking", sel_ranking, "external ranking CSV (feature,score)");
    select->add_option("--ranking-out", sel_ranking_out, "write the ranking CSV here");
    select->add_option("--out", sel_out, "feature set JSON output (default stdout)");

    // gen-prompts
    PromptArgs gen_args;
    std::string gen_out;
    double chars_per_token = 0.0;
    auto* gen = app.add_subcommand("gen-prompts", "render prompts for every target of a partition");
    gen_args.add(gen);
    gen->add_option("--out", gen_out, "prompt dump (default stdout)");
    gen->add_option("--chars-per-token", chars_per_token, "print a token estimate per prompt to stderr");

    // export-finetune
    PromptArgs exp_args;
    std::string exp_out, exp_dataset = "dataset", exp_validate;
    auto* exporter = app.add_subcommand("export-finetune", "write chat JSONL for adapter fine-tuning");
    exp_args.partition = "train";
    exp_args.add(exporter);
    exporter->add_option("--dataset", exp_dataset, "dataset name recorded in meta");
    exporter->add_option("--out", exp_out, "JSONL output; a .manifest.json sidecar is written next to it");
    auto* validate = app.add_subcommand("validate-finetune", "check an exported JSONL file");
    validate->add_option("file", exp_validate, "JSONL file")->required();

    // run
    std::string run_manifest, run_output;
    auto* run = app.add_subcommand("run", "execute an experiment manifest");
    run->add_option("--manifest", run_manifest, "manifest JSON")->required();
    run->add_option("--output", run_output, "override the manifest output directory");

    // ablate
    std::string abl_manifest, abl_output, abl_ks, abl_ps, abl_seeds;
    auto* ablate = app.add_subcommand("ablate", "k x p ablation grid over a base manifest");
    ablate->add_option("--manifest", abl_manifest, "base manifest JSON")->required();
    ablate->add_option("--ks", abl_ks, "comma-separated k values")->required();
    ablate->add_option("--ps", abl_ps, "comma-separated p values ('all' allowed)")->required();
    ablate->add_option("--seeds", abl_seeds, "comma-separated seeds (default 36,73,314)");
    ablate->add_option("--output", abl_output, "override the output directory");

    // missingness
    TableArgs mis_args;
    std::string mis_mode = "mask", mis_out_table, mis_out_plan, mis_edges = "0,0.25,0.5,1";
    double mis_rate = 0.1, mis_pool_fraction = 0.2;
    std::uint64_t mis_seed = 36;
    auto* missing = app.add_subcommand("missingness", "MCAR masking or natural-missingness stratification");
    mis_args.add(missing);
    missing->add_option("--mode", mis_mode, "mask or strata")->check(CLI::IsMember({"mask", "strata"}));
    missing->add_option("--rate", mis_rate, "MCAR rate for mask mode");
    missing->add_option("--seed", mis_seed, "seed");
    missing->add_option("--out-table", mis_out_table, "masked table CSV (mask mode)");
    missing->add_option("--out-plan", mis_out_plan, "mask plan JSON (mask mode; default stdout)");
    missing->add_option("--pool-fraction", mis_pool_fraction, "pool share of the incomplete cohort (strata mode)");
    missing->add_option("--edges", mis_edges, "bin edges over target missing fraction (strata mode)");

    // report
    std::string rep_dir, rep_hash, rep_csv, rep_md;
    auto* report = app.add_subcommand("report", "flat metrics CSV and markdown summary for a run directory");
    report->add_option("--run", rep_dir, "run output directory")->required();
    report->add_option("--hash", rep_hash, "expected manifest hash");
    report->add_option("--csv", rep_csv, "flat CSV output");
    report->add_option("--markdown", rep_md, "markdown output (default stdout)");

    // synth
    std::string syn_kind = "biomarker", syn_out;
    std::size_t syn_n = 333, syn_pos = 0, syn_rois = 72, syn_missing = 0;
    std::uint64_t syn_seed = 1;
    auto* synth = app.add_subcommand("synth", "write a synthetic cohort (table.csv + schema.json)");
    synth->add_option("--kind", syn_kind, "biomarker or imaging")->check(CLI::IsMember({"biomarker", "imaging"}));
    synth->add_option("--n", syn_n, "subjects");
    synth->add_option("--positives", syn_pos, "label-1 subjects (default n/3)");
    synth->add_option("--rois", syn_rois, "regional features (imaging)");
    synth->add_option("--max-missing", syn_missing, "blank 1..N cells per row");
    synth->add_option("--seed", syn_seed, "generator seed");
    synth->add_option("--out", syn_out, "output directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*ingest) return cmd_ingest(ingest_args, ingest_out, complete_only);

        if (*split) {
            const auto table = load(split_args.schema, split_args.table);
            SplitFractions fractions;
            if (!split_fractions.empty()) {
                auto v = parse_list<double>(split_fractions);
                if (v.size() != fractions.values.size()) throw Error("--fractions needs six values");
                std::copy(v.begin(), v.end(), fractions.values.begin());
            }
            const auto assignment = make_splits(table, fractions, split_seed, !no_stratify);
            spill(split_out, assignment_to_json(assignment));
            return 0;
        }

        if (*select) {
            const auto table = load(sel_args.schema, sel_args.table);
            const auto assignment = assignment_from_json(slurp(sel_split));
            validate_assignment(assignment, table);
            RankedFeatures ranked;
            if (sel_method == "lasso") {
                ranked = lasso_path_rank(table.subset(assignment[Partition::train]));
            } else {
                if (sel_ranking.empty()) throw Error("--method external needs --ranking");
                std::ifstream in(sel_ranking);
                if (!in) throw Error("cannot read " + sel_ranking);
                ranked = import_external_ranking(in, table);
            }
            if (!sel_ranking_out.empty()) {
                std::ostringstream csv;
                write_ranking_csv(csv, ranked);
                spill(sel_ranking_out, csv.str());
            }
            const auto p = parse_p(sel_p).value_or(ranked.entries.size());
            spill(sel_out, feature_set_to_json(select_top_p(ranked, p, table.covariate_names())));
            return 0;
        }

        if (*gen) {
            const auto built = gen_args.build();
            std::string dump;
            for (const auto& prompt : built.prompts) {
                if (auto leak = find_label_leak(prompt)) throw Error("label leak in " + prompt.target_id + ": " + *leak);
                dump += "### " + prompt.target_id + "\n" + prompt_to_text(prompt);
                if (chars_per_token > 0.0) {
                    std::cerr << prompt.target_id << "\t" << token_budget(prompt, chars_per_token) << "\n";
                }
            }
            spill(gen_out, dump);
            return 0;
        }

        if (*exporter) {
            const auto built = exp_args.build();
            std::vector<FinetuneRecord> records;
            for (const auto& prompt : built.prompts) {
                const int label = *built.table.label(built.table.at(prompt.target_id));
                records.push_back(make_finetune_record(prompt, label, exp_dataset, exp_args.seed));
            }
            std::ostringstream jsonl;
            export_chat_jsonl(records, jsonl);
            spill(exp_out, jsonl.str());
            if (!exp_out.empty() && exp_out != "-") {
                spill(exp_out + ".manifest.json",
                      export_manifest_json(hex64(fnv1a64(slurp(exp_args.data.table))), exp_args.seed,
                                           parse_prompt_format(exp_args.format).name(), built.instructions.version,
                                           records.size()) +
                          "\n");
            }
            return 0;
        }

        if (*validate) {
            std::ifstream in(exp_validate);
            if (!in) throw Error("cannot read " + exp_validate);
            const auto rep = validate_jsonl(in);
            std::cout << report_to_json(rep) << "\n";
            return rep.ok() ? 0 : 1;
        }

        auto log = [](const std::string& line) { std::cerr << line << "\n"; };

        if (*run) {
            auto manifest = load_manifest(run_manifest);
            if (!run_output.empty()) manifest.output_dir = run_output;
            const auto result = run_experiment(manifest, RunHooks{nullptr, log});
            std::cout << "manifest " << result.manifest_hash << ": " << result.seeds.size() - result.failures()
                      << " seeds ok, " << result.failures() << " failed -> " << manifest.output_dir << "\n";
            return result.failures() == result.seeds.size() ? 1 : 0;
        }

        if (*ablate) {
            auto manifest = load_manifest(abl_manifest);
            if (!abl_output.empty()) manifest.output_dir = abl_output;
            std::vector<std::optional<std::size_t>> ps;
            std::stringstream ss(abl_ps);
            for (std::string item; std::getline(ss, item, ',');) {
                if (!item.empty()) ps.push_back(parse_p(item));
            }
            const auto seeds = abl_seeds.empty() ? kAblationSeeds : parse_list<std::uint64_t>(abl_seeds);
            const auto grid = run_ablation_grid(manifest, parse_list<std::size_t>(abl_ks), ps, seeds,
                                                RunHooks{nullptr, log});
            const auto failed = std::count_if(grid.begin(), grid.end(), [](const auto& g) { return !g.ok; });
            std::cout << grid.size() << " grid runs, " << failed << " failed -> "
                      << (fs::path(manifest.output_dir) / "grid.csv").string() << "\n";
            return 0;
        }

        if (*missing) {
            const auto table = load(mis_args.schema, mis_args.table);
            if (mis_mode == "mask") {
                auto result = mask_mcar(filter_complete(table), mis_rate, mis_seed);
                if (!mis_out_table.empty()) {
                    std::ostringstream csv;
                    write_table(csv, result.table);
                    spill(mis_out_table, csv.str());
                }
                spill(mis_out_plan, mask_plan_to_json(result.plan) + "\n");
                return 0;
            }
            const auto incomplete = filter_incomplete(table);
            const auto split_ids = natural_missingness_split(incomplete, mis_pool_fraction, mis_seed);
            const auto edges = parse_list<double>(mis_edges);
            const auto strata = bin_by_target_missingness(incomplete, split_ids.targets, edges, split_ids.pool);
            nlohmann::ordered_json doc;
            doc["incomplete_subjects"] = incomplete.size();
            doc["pool"] = split_ids.pool.size();
            doc["targets"] = split_ids.targets.size();
            doc["pool_mean_missingness"] = strata.pool_mean_missingness;
            doc["edges"] = strata.edges;
            auto bins = nlohmann::ordered_json::array();
            for (const auto& b : strata.bins) bins.push_back(b.size());
            doc["bin_sizes"] = bins;
            std::cout << doc.dump(2) << "\n";
            return 0;
        }

        if (*report) {
            const auto out = build_report(rep_dir, rep_hash);
            if (!rep_csv.empty()) spill(rep_csv, out.flat_csv);
            spill(rep_md, out.markdown);
            return 0;
        }

        if (*synth) {
            const std::size_t positives = syn_pos ? syn_pos : syn_n / 3;
            auto table = syn_kind == "biomarker" ? make_biomarker_cohort(syn_n, positives, syn_seed)
                                                 : make_imaging_cohort(syn_n, positives, syn_rois, syn_seed);
            if (syn_missing) table = add_row_missingness(table, syn_missing, syn_seed + 1);
            fs::create_directories(syn_out);
            std::ostringstream csv;
            write_table(csv, table);
            spill((fs::path(syn_out) / "table.csv").string(), csv.str());
            spill((fs::path(syn_out) / "schema.json").string(), schema_to_json(table.columns()) + "\n");
            std::cout << "wrote " << table.size() << " subjects to " << syn_out << "\n";
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

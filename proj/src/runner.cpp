#include "tabshot/runner.hpp"

#include "tabshot/baselines.hpp"
#include "tabshot/concurrency.hpp"
#include "tabshot/feature_selection.hpp"
#include "tabshot/hashing.hpp"
#include "tabshot/interpretation.hpp"
#include "tabshot/numeric_format.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <iterator>
#include <map>
#include <mutex>
#include <set>
#include <sstream>

namespace tabshot {

namespace fs = std::filesystem;
using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace {

constexpr auto kReplace = ordered_json::error_handler_t::replace;

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw RunnerError(RunnerErrc::missing_artifact, "cannot read " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& path, std::string_view content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << content;
}

std::string_view selector_name(SelectorKind s) {
    switch (s) {
        case SelectorKind::none: return "none";
        case SelectorKind::lasso_path: return "lasso_path";
        case SelectorKind::external: return "external";
    }
    return "none";
}

std::string_view missingness_name(MissingnessMode m) {
    switch (m) {
        case MissingnessMode::none: return "none";
        case MissingnessMode::mcar: return "mcar";
        case MissingnessMode::natural: return "natural";
    }
    return "none";
}

[[noreturn]] void bad(const std::string& what) { throw RunnerError(RunnerErrc::bad_manifest, what); }

ordered_json endpoint_json(const ExperimentManifest& m) {
    ordered_json e;
    switch (m.endpoint_kind) {
        case EndpointKind::mock:
            e["kind"] = "mock";
            e["feature"] = m.mock_rule.feature;
            e["threshold"] = m.mock_rule.threshold;
            e["direction"] =
                m.mock_rule.direction == MockRule::Direction::greater_is_positive ? "greater" : "less";
            break;
        case EndpointKind::logreg:
            e["kind"] = "logreg";
            e["l2"] = m.baseline_l2;
            break;
        case EndpointKind::http: {
            const auto& c = m.endpoint;
            e["kind"] = "http";
            e["base_url"] = c.base_url;
            e["model"] = c.model_name;
            e["auth_env"] = c.auth_env;
            e["max_output_tokens"] = c.max_output_tokens;
            e["temperature"] = c.temperature;
            e["supports_logit_bias"] = c.supports_logit_bias;
            if (c.token_id_zero && c.token_id_one) e["token_ids"] = {{"0", *c.token_id_zero}, {"1", *c.token_id_one}};
            e["logit_bias_strength"] = c.logit_bias_strength;
            e["timeout_ms"] = c.timeout.count();
            e["retry"] = {{"max_attempts", c.retry.max_attempts},
                          {"initial_backoff_ms", c.retry.initial_backoff.count()},
                          {"backoff_multiplier", c.retry.backoff_multiplier}};
            e["concurrency"] = c.concurrency;
            break;
        }
    }
    return e;
}

void log_line(const RunHooks& hooks, const std::string& line) {
    if (hooks.log) hooks.log(line);
}

}  // namespace

void ExperimentManifest::validate() const {
    if (table_path.empty() || schema_path.empty()) bad("dataset needs 'table' and 'schema' paths");
    if (seeds.empty()) bad("seed list is empty");
    if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) bad("seed list has duplicates");
    if (instructions_path.empty()) bad("'instructions' path is required");
    if (format.variant == PromptVariant::reflection_round) {
        bad("use \"reflection\": true with a standard or interpretable format instead of a reflection format");
    }
    if (format.shots == Shots::zero && k) bad("zero-shot manifests must not set k");
    if (format.shots == Shots::few && (!k || *k == 0)) bad("few-shot manifests need k >= 1");
    if (selector == SelectorKind::none && p) bad("p requires a feature selector");
    if (selector == SelectorKind::external && ranking_path.empty()) bad("external selector needs a ranking path");
    if (p && *p == 0) bad("p must be >= 1");
    if (format.structure == PromptStructure::serialized && serialization_path.empty()) {
        bad("serialized formats need a 'serialization' template path");
    }
    if (endpoint_kind == EndpointKind::logreg) {
        if (format.shots != Shots::few) bad("the logistic-regression baseline needs few-shot contexts");
        if (reflection) bad("reflection is not defined for the logistic-regression baseline");
        if (baseline_l2 < 0.0) bad("baseline l2 must be nonnegative");
    }
    if (endpoint_kind == EndpointKind::mock && mock_rule.feature.empty()) bad("mock endpoint needs a feature");
    if (endpoint_kind == EndpointKind::http) endpoint.validate();
    if (missingness == MissingnessMode::mcar && !(mcar_rate >= 0.0 && mcar_rate <= 1.0)) {
        bad("mcar rate must lie in [0, 1]");
    }
    if (missingness == MissingnessMode::natural && !(natural_pool_fraction > 0.0 && natural_pool_fraction < 1.0)) {
        bad("natural pool fraction must lie in (0, 1)");
    }
    if (workers == 0) bad("workers must be >= 1");
    fractions.validate();
}

fs::path ExperimentManifest::resolve(const std::string& path) const {
    fs::path p(path);
    if (p.is_absolute() || base_dir.empty()) return p;
    return base_dir / p;
}

std::string ExperimentManifest::p_text() const { return p ? std::to_string(*p) : "all"; }
std::string ExperimentManifest::k_text() const { return std::to_string(k.value_or(0)); }

ExperimentManifest parse_manifest(std::string_view json_text, fs::path base_dir) {
    json doc = json::parse(json_text, nullptr, false);
    if (!doc.is_object()) bad("manifest is not a JSON object");
    ExperimentManifest m;
    m.base_dir = std::move(base_dir);
    try {
        m.name = doc.value("name", std::string());
        const auto& ds = doc.at("dataset");
        m.dataset_name = ds.value("name", std::string("dataset"));
        m.table_path = ds.at("table").get<std::string>();
        m.schema_path = ds.at("schema").get<std::string>();
        if (doc.contains("seeds")) m.seeds = doc["seeds"].get<std::vector<std::uint64_t>>();
        m.format = parse_prompt_format(doc.at("format").get<std::string>());
        if (doc.contains("k") && !doc["k"].is_null()) m.k = doc["k"].get<std::size_t>();
        if (doc.contains("p") && !doc["p"].is_null()) {
            if (doc["p"].is_string()) {
                if (doc["p"].get<std::string>() != "all") bad("p must be a count or \"all\"");
            } else {
                m.p = doc["p"].get<std::size_t>();
            }
        }
        const auto sel = doc.value("selector", json("none"));
        if (sel.is_string()) {
            const auto s = sel.get<std::string>();
            if (s == "none") {
                m.selector = SelectorKind::none;
            } else if (s == "lasso_path") {
                m.selector = SelectorKind::lasso_path;
            } else {
                bad("unknown selector '" + s + "'");
            }
        } else {
            m.selector = SelectorKind::external;
            m.ranking_path = sel.at("external").get<std::string>();
        }
        if (m.selector == SelectorKind::none && doc.contains("p") && doc["p"].is_string()) {
            bad("p requires a feature selector");
        }

        const auto& ep = doc.at("endpoint");
        const auto kind = ep.at("kind").get<std::string>();
        if (kind == "mock") {
            m.endpoint_kind = EndpointKind::mock;
            m.mock_rule = mock_rule_from_json(ep.dump());
        } else if (kind == "http") {
            m.endpoint_kind = EndpointKind::http;
            m.endpoint = endpoint_from_json(ep.dump());
        } else if (kind == "logreg") {
            m.endpoint_kind = EndpointKind::logreg;
            m.baseline_l2 = ep.value("l2", 1.0);
        } else {
            bad("unknown endpoint kind '" + kind + "'");
        }

        if (doc.contains("missingness")) {
            const auto& ms = doc["missingness"];
            const auto mode = ms.value("mode", std::string("none"));
            if (mode == "none") {
                m.missingness = MissingnessMode::none;
            } else if (mode == "mcar") {
                m.missingness = MissingnessMode::mcar;
                m.mcar_rate = ms.at("rate").get<double>();
                const auto scope = ms.value("scope", std::string("whole_table"));
                if (scope == "whole_table") {
                    m.mask_scope = MaskScope::whole_table;
                } else if (scope == "targets_only") {
                    m.mask_scope = MaskScope::targets_only;
                } else {
                    bad("unknown mask scope '" + scope + "'");
                }
            } else if (mode == "natural") {
                m.missingness = MissingnessMode::natural;
                m.natural_pool_fraction = ms.value("pool_fraction", 0.2);
                if (ms.contains("edges")) m.strata_edges = ms["edges"].get<std::vector<double>>();
            } else {
                bad("unknown missingness mode '" + mode + "'");
            }
        }
        m.reflection = doc.value("reflection", false);
        m.instructions_path = doc.at("instructions").get<std::string>();
        m.serialization_path = doc.value("serialization", std::string());
        if (doc.contains("split")) {
            const auto& sp = doc["split"];
            if (sp.contains("fractions")) {
                auto f = sp["fractions"].get<std::vector<double>>();
                if (f.size() != m.fractions.values.size()) bad("split fractions need six values");
                std::copy(f.begin(), f.end(), m.fractions.values.begin());
            }
            m.stratified = sp.value("stratified", true);
        }
        m.output_dir = m.resolve(doc.value("output", std::string("out"))).string();
        m.workers = doc.value("workers", std::size_t{1});
    } catch (const json::exception& e) {
        bad(std::string("manifest: ") + e.what());
    }
    m.validate();
    return m;
}

ExperimentManifest load_manifest(const fs::path& path) {
    return parse_manifest(read_file(path), path.parent_path());
}

std::string manifest_to_json(const ExperimentManifest& m) {
    ordered_json doc;
    doc["name"] = m.name;
    doc["dataset"] = {{"name", m.dataset_name}, {"table", m.table_path}, {"schema", m.schema_path}};
    doc["seeds"] = m.seeds;
    doc["format"] = m.format.name();
    doc["k"] = m.k ? ordered_json(*m.k) : ordered_json(nullptr);
    if (m.selector == SelectorKind::none) {
        doc["p"] = nullptr;
    } else {
        doc["p"] = m.p ? ordered_json(*m.p) : ordered_json("all");
    }
    if (m.selector == SelectorKind::external) {
        doc["selector"] = {{"external", m.ranking_path}};
    } else {
        doc["selector"] = std::string(selector_name(m.selector));
    }
    doc["endpoint"] = endpoint_json(m);
    ordered_json ms;
    ms["mode"] = std::string(missingness_name(m.missingness));
    if (m.missingness == MissingnessMode::mcar) {
        ms["rate"] = m.mcar_rate;
        ms["scope"] = m.mask_scope == MaskScope::whole_table ? "whole_table" : "targets_only";
    } else if (m.missingness == MissingnessMode::natural) {
        ms["pool_fraction"] = m.natural_pool_fraction;
        ms["edges"] = m.strata_edges;
    }
    doc["missingness"] = std::move(ms);
    doc["reflection"] = m.reflection;
    doc["instructions"] = m.instructions_path;
    doc["serialization"] = m.serialization_path;
    doc["split"] = {{"fractions", m.fractions.values}, {"stratified", m.stratified}};
    return doc.dump(2);
}

std::string manifest_hash(const ExperimentManifest& manifest) { return hex64(fnv1a64(manifest_to_json(manifest))); }

std::size_t ResultSet::failures() const {
    return static_cast<std::size_t>(std::count_if(seeds.begin(), seeds.end(), [](const auto& s) { return !s.ok; }));
}

namespace {

struct Dataset {
    FeatureTable table;
    std::string hash;
    InstructionSet instructions;
    std::optional<SerializationTemplate> serialization;
    std::optional<RankedFeatures> external_ranking;
};

Dataset load_dataset(const ExperimentManifest& m) {
    Dataset d;
    const auto schema = load_schema_file(m.resolve(m.schema_path).string());
    const auto table_path = m.resolve(m.table_path);
    d.hash = hex64(fnv1a64(read_file(table_path)));
    FeatureTable table = load_table_file(table_path.string(), schema);
    // Unlabeled subjects can be neither scored nor shown as examples.
    std::vector<SubjectRow> labeled;
    for (const auto& row : table.rows()) {
        if (table.label(row)) labeled.push_back(row);
    }
    table = table.with_rows(std::move(labeled));
    d.table = m.missingness == MissingnessMode::natural ? filter_incomplete(table) : filter_complete(table);
    d.instructions = load_instruction_set(m.resolve(m.instructions_path).string());
    if (!m.serialization_path.empty()) {
        d.serialization = load_serialization_template(m.resolve(m.serialization_path).string());
    }
    if (m.selector == SelectorKind::external) {
        std::ifstream in(m.resolve(m.ranking_path));
        if (!in) throw RunnerError(RunnerErrc::missing_artifact, "cannot read ranking " + m.ranking_path);
        d.external_ranking = import_external_ranking(in, d.table);
    }
    return d;
}

std::shared_ptr<ChatModel> make_model(const ExperimentManifest& m) {
    switch (m.endpoint_kind) {
        case EndpointKind::mock: return std::make_shared<MockRuleModel>(m.mock_rule);
        case EndpointKind::http: return std::make_shared<HttpChatModel>(m.endpoint, make_httplib_transport());
        case EndpointKind::logreg: return nullptr;
    }
    return nullptr;
}

std::string with_hash(const std::string& json_text, const std::string& hash) {
    ordered_json doc = ordered_json::parse(json_text);
    ordered_json out;
    out["manifest_hash"] = hash;
    for (auto it = doc.begin(); it != doc.end(); ++it) out[it.key()] = it.value();
    return out.dump(2) + "\n";
}

std::string prediction_line(const PredictionRecord& r, const std::string& hash) {
    ordered_json line;
    line["manifest_hash"] = hash;
    line["target_id"] = r.target_id;
    line["label"] = r.label ? ordered_json(*r.label) : ordered_json(nullptr);
    line["confidence"] = r.confidence ? ordered_json(*r.confidence) : ordered_json(nullptr);
    line["reasoning"] = r.reasoning;
    line["raw_text"] = r.raw_text;
    line["seed"] = r.seed;
    line["format"] = r.format;
    line["endpoint"] = r.endpoint;
    line["round"] = r.round;
    return line.dump(-1, ' ', false, kReplace);
}

std::string add_hash_to_line(const std::string& line, const std::string& hash) {
    return "{\"manifest_hash\":\"" + hash + "\"," + line.substr(1);
}

struct SeedPlan {
    FeatureTable table;  // rows available to this seed, before masking
    std::vector<std::string> targets;
    std::vector<LabeledId> pool;
    Partition pool_partition = Partition::pool_test;
    FeatureTable selection_table;  // rows used for feature ranking
};

SeedPlan plan_seed(const ExperimentManifest& m, const Dataset& d, std::uint64_t seed, const fs::path& dir,
                   const std::string& hash) {
    SeedPlan plan;
    plan.table = d.table;
    if (m.missingness == MissingnessMode::natural) {
        auto split = natural_missingness_split(d.table, m.natural_pool_fraction, seed);
        plan.targets = split.targets;
        for (const auto& id : split.pool) plan.pool.push_back({id, *d.table.label(d.table.at(id))});
        plan.selection_table = d.table.subset(split.pool);
        ordered_json doc;
        doc["manifest_hash"] = hash;
        doc["mode"] = "natural";
        doc["seed"] = seed;
        doc["pool_fraction"] = m.natural_pool_fraction;
        doc["pool"] = split.pool;
        doc["targets"] = split.targets;
        write_file(dir / "split.json", doc.dump(2) + "\n");
        return plan;
    }
    auto assignment = make_splits(d.table, m.fractions, seed, m.stratified);
    validate_assignment(assignment, d.table);
    write_file(dir / "split.json", with_hash(assignment_to_json(assignment), hash));
    plan.targets = assignment[Partition::test];
    plan.pool = labeled_pool(assignment, Partition::pool_test, d.table);
    plan.selection_table = d.table.subset(assignment[Partition::train]);
    return plan;
}

FeatureSet choose_features(const ExperimentManifest& m, const Dataset& d, const SeedPlan& plan) {
    if (m.selector == SelectorKind::none) return all_features(d.table);
    RankedFeatures ranked = m.selector == SelectorKind::lasso_path ? lasso_path_rank(plan.selection_table)
                                                                   : *d.external_ranking;
    const std::size_t p = m.p.value_or(ranked.entries.size());
    return select_top_p(ranked, p, d.table.covariate_names());
}

SeedResult run_seed(const ExperimentManifest& m, const Dataset& d, std::uint64_t seed, const std::string& hash,
                    const std::shared_ptr<ChatModel>& model, const RunHooks& hooks) {
    SeedResult result;
    result.seed = seed;
    result.directory = fs::path(m.output_dir) / ("seed_" + std::to_string(seed));
    fs::create_directories(result.directory);
    const auto& dir = result.directory;

    SeedPlan plan = plan_seed(m, d, seed, dir, hash);
    const FeatureSet features = choose_features(m, d, plan);
    write_file(dir / "feature_set.json", with_hash(feature_set_to_json(features), hash));

    // The table the prompts see: pool + targets, selected columns only.
    std::vector<std::string> visible;
    for (const auto& ex : plan.pool) visible.push_back(ex.subject_id);
    visible.insert(visible.end(), plan.targets.begin(), plan.targets.end());
    std::vector<std::string> keep = features.selected;
    FeatureTable prompt_table = select_columns(plan.table.subset(visible), keep);
    if (m.missingness == MissingnessMode::mcar) {
        auto masked = mask_mcar(prompt_table, m.mcar_rate, derive_seed(seed, "mcar"), m.mask_scope, plan.targets);
        write_file(dir / "mask_plan.json", with_hash(mask_plan_to_json(masked.plan), hash));
        prompt_table = std::move(masked.table);
    }
    const FeatureSet& prompt_features = features;

    std::map<std::string, int> truth;
    for (const auto& id : plan.targets) truth[id] = *d.table.label(d.table.at(id));

    const std::size_t k = m.k.value_or(0);
    std::vector<ContextSet> contexts;
    contexts.reserve(plan.targets.size());
    for (const auto& id : plan.targets) {
        contexts.push_back(sample_context(plan.pool, k, seed, id, plan.pool_partition));
    }

    const std::string endpoint_name = model ? model->name() : "logreg";
    std::vector<PredictionRecord> predictions(plan.targets.size());
    std::vector<PredictionRecord> round_one;
    std::string transcripts;

    if (m.endpoint_kind == EndpointKind::logreg && !hooks.model) {
        for (std::size_t i = 0; i < plan.targets.size(); ++i) {
            const auto& target = prompt_table.at(plan.targets[i]);
            auto pred = fewshot_logreg(prompt_table, prompt_features, contexts[i], target, m.baseline_l2);
            auto& rec = predictions[i];
            rec.target_id = plan.targets[i];
            rec.label = pred.label;
            rec.confidence = pred.probability;
            rec.raw_text = shortest_decimal(pred.probability);
            rec.seed = seed;
            rec.format = m.format.name();
            rec.endpoint = endpoint_name;
            ordered_json line;
            line["manifest_hash"] = hash;
            line["target_id"] = rec.target_id;
            line["endpoint"] = endpoint_name;
            line["examples"] = contexts[i].k();
            line["probability"] = pred.probability;
            line["majority_fallback"] = pred.majority_fallback;
            transcripts += line.dump() + "\n";
        }
    } else {
        PromptInputs inputs{&prompt_table, &prompt_features, &d.instructions,
                            d.serialization ? &*d.serialization : nullptr};
        std::vector<RenderedPrompt> prompts;
        prompts.reserve(plan.targets.size());
        std::string prompt_dump;
        for (std::size_t i = 0; i < plan.targets.size(); ++i) {
            prompts.push_back(build_prompt(prompt_table.at(plan.targets[i]), contexts[i], m.format, inputs));
            if (auto leak = find_label_leak(prompts.back())) {
                throw PromptError(PromptErrc::format_contract, "label leak for " + plan.targets[i] + ": " + *leak);
            }
            prompt_dump += "### " + plan.targets[i] + "\n" + prompt_to_text(prompts.back());
        }
        write_file(dir / "prompts.txt", prompt_dump);

        std::vector<RawResponse> responses(prompts.size());
        for_each_bounded(prompts.size(), model->concurrency(),
                         [&](std::size_t i) { responses[i] = model->complete(prompts[i]); });
        std::vector<std::string> lines(prompts.size());
        for (std::size_t i = 0; i < prompts.size(); ++i) {
            auto rec = decode_prediction(plan.targets[i], responses[i].text);
            rec.seed = seed;
            rec.format = m.format.name();
            rec.endpoint = endpoint_name;
            predictions[i] = std::move(rec);
            lines[i] = add_hash_to_line(transcript_line(prompts[i], responses[i], 1), hash);
        }

        if (m.reflection) {
            round_one = predictions;
            std::vector<std::optional<ReflectionOutcome>> outcomes(prompts.size());
            for_each_bounded(prompts.size(), model->concurrency(), [&](std::size_t i) {
                if (round_one[i].label) {
                    outcomes[i] = run_self_reflection(*model, prompts[i], round_one[i], d.instructions);
                }
            });
            std::size_t changed = 0;
            for (std::size_t i = 0; i < prompts.size(); ++i) {
                if (!outcomes[i]) continue;
                predictions[i] = outcomes[i]->revised;
                changed += outcomes[i]->changed ? 1 : 0;
                lines[i] += "\n" + add_hash_to_line(transcript_line(outcomes[i]->prompt, outcomes[i]->response, 2), hash);
            }
            log_line(hooks, "seed " + std::to_string(seed) + ": reflection changed " + std::to_string(changed) +
                                " of " + std::to_string(prompts.size()) + " answers");
        }
        for (const auto& l : lines) transcripts += l + "\n";
    }
    write_file(dir / "transcripts.jsonl", transcripts);

    std::string pred_lines;
    for (const auto& r : predictions) pred_lines += prediction_line(r, hash) + "\n";
    write_file(dir / "predictions.jsonl", pred_lines);

    result.confusion = confusion(predictions, truth);
    result.report = metrics(result.confusion, seed);
    write_file(dir / "metrics.json", metrics_to_json(result.report, result.confusion, hash));
    if (!round_one.empty()) {
        auto cm1 = confusion(round_one, truth);
        write_file(dir / "metrics_round1.json", metrics_to_json(metrics(cm1, seed), cm1, hash));
    }

    if (m.missingness == MissingnessMode::natural) {
        std::vector<std::string> pool_ids;
        for (const auto& ex : plan.pool) pool_ids.push_back(ex.subject_id);
        auto strata = bin_by_target_missingness(d.table, plan.targets, m.strata_edges, pool_ids);
        std::map<std::string, const PredictionRecord*> by_id;
        for (const auto& r : predictions) by_id[r.target_id] = &r;
        ordered_json doc;
        doc["manifest_hash"] = hash;
        doc["edges"] = strata.edges;
        doc["pool_mean_missingness"] = strata.pool_mean_missingness;
        ordered_json bins = ordered_json::array();
        for (std::size_t b = 0; b < strata.bins.size(); ++b) {
            std::vector<PredictionRecord> subset;
            std::map<std::string, int> subset_truth;
            for (const auto& id : strata.bins[b]) {
                subset.push_back(*by_id.at(id));
                subset_truth[id] = truth.at(id);
            }
            auto cm = confusion(subset, subset_truth);
            auto rep = metrics(cm, seed);
            ordered_json bin;
            bin["lower"] = strata.edges[b];
            bin["upper"] = strata.edges[b + 1];
            bin["targets"] = strata.bins[b];
            for (auto name : kMetricNames) {
                auto v = metric_by_name(rep, name);
                bin[std::string(name)] = v ? ordered_json(*v) : ordered_json(nullptr);
            }
            bins.push_back(std::move(bin));
        }
        doc["bins"] = std::move(bins);
        write_file(dir / "strata.json", doc.dump(2) + "\n");
    }
    result.ok = true;
    return result;
}

std::vector<FlatMetricRow> flat_rows(const std::string& dataset, const std::string& format,
                                     const std::string& variant, const std::string& k, const std::string& p,
                                     std::span<const MetricsReport> reports) {
    std::vector<FlatMetricRow> rows;
    for (const auto& r : reports) {
        for (auto name : kMetricNames) {
            rows.push_back({dataset, format, variant, k, p, r.seed, std::string(name), metric_by_name(r, name)});
        }
    }
    return rows;
}

}  // namespace

ResultSet run_experiment(const ExperimentManifest& manifest, const RunHooks& hooks) {
    manifest.validate();
    ResultSet out;
    out.manifest_hash = manifest_hash(manifest);
    const fs::path root(manifest.output_dir);
    fs::create_directories(root);
    {
        ordered_json doc;
        doc["manifest_hash"] = out.manifest_hash;
        doc["manifest"] = ordered_json::parse(manifest_to_json(manifest));
        write_file(root / "manifest.json", doc.dump(2) + "\n");
    }

    const Dataset dataset = load_dataset(manifest);
    std::shared_ptr<ChatModel> model = hooks.model ? hooks.model : make_model(manifest);

    out.seeds.resize(manifest.seeds.size());
    for_each_bounded(manifest.seeds.size(), manifest.workers, [&](std::size_t i) {
        const auto seed = manifest.seeds[i];
        try {
            out.seeds[i] = run_seed(manifest, dataset, seed, out.manifest_hash, model, hooks);
            log_line(hooks, "seed " + std::to_string(seed) + ": f1=" + metric_text(out.seeds[i].report.f1));
        } catch (const std::exception& e) {
            SeedResult failed;
            failed.seed = seed;
            failed.error = e.what();
            failed.directory = root / ("seed_" + std::to_string(seed));
            fs::create_directories(failed.directory);
            ordered_json doc;
            doc["manifest_hash"] = out.manifest_hash;
            doc["seed"] = seed;
            doc["error"] = failed.error;
            write_file(failed.directory / "failure.json", doc.dump(2, ' ', false, kReplace) + "\n");
            out.seeds[i] = std::move(failed);
            log_line(hooks, "seed " + std::to_string(seed) + " failed: " + e.what());
        }
    });

    std::vector<MetricsReport> reports;
    for (const auto& s : out.seeds) {
        if (s.ok) reports.push_back(s.report);
    }
    ordered_json failures = ordered_json::array();
    for (const auto& s : out.seeds) {
        if (!s.ok) failures.push_back({{"seed", s.seed}, {"error", s.error}});
    }
    if (!reports.empty()) {
        out.summary = aggregate_seeds(reports);
        ordered_json summary = ordered_json::parse(summary_to_json(out.summary, out.manifest_hash));
        summary["failures"] = failures;
        write_file(root / "summary.json", summary.dump(2, ' ', false, kReplace) + "\n");
    } else {
        ordered_json summary;
        summary["manifest_hash"] = out.manifest_hash;
        summary["seeds"] = ordered_json::array();
        summary["metrics"] = ordered_json::object();
        summary["failures"] = failures;
        write_file(root / "summary.json", summary.dump(2, ' ', false, kReplace) + "\n");
    }
    std::ostringstream csv;
    write_flat_csv(csv, flat_rows(manifest.dataset_name, manifest.format.name(),
                                  std::string(to_string(manifest.format.variant)), manifest.k_text(),
                                  manifest.p_text(), reports));
    write_file(root / "metrics.csv", csv.str());
    return out;
}

std::vector<GridCell> run_ablation_grid(const ExperimentManifest& base, const std::vector<std::size_t>& ks,
                                        const std::vector<std::optional<std::size_t>>& ps,
                                        const std::vector<std::uint64_t>& seeds, const RunHooks& hooks) {
    if (ks.empty()) throw RunnerError(RunnerErrc::empty_grid, "ablation grid needs at least one k");
    if (ps.empty()) throw RunnerError(RunnerErrc::empty_grid, "ablation grid needs at least one p");
    if (seeds.empty()) throw RunnerError(RunnerErrc::empty_grid, "ablation grid needs at least one seed");
    if (base.format.shots != Shots::few) bad("k ablation needs a few-shot format");

    struct Cell {
        std::size_t k;
        std::optional<std::size_t> p;
    };
    std::vector<Cell> cells;
    for (auto k : ks) {
        for (const auto& p : ps) cells.push_back({k, p});
    }
    std::vector<ExperimentManifest> manifests;
    for (const auto& c : cells) {
        ExperimentManifest m = base;
        m.k = c.k;
        m.p = c.p;
        m.seeds = seeds;
        m.workers = 1;
        m.output_dir = (fs::path(base.output_dir) / ("k" + std::to_string(c.k) + "_p" + m.p_text())).string();
        m.validate();
        manifests.push_back(std::move(m));
    }

    std::vector<std::vector<GridCell>> results(cells.size());
    for_each_bounded(cells.size(), base.workers, [&](std::size_t i) {
        const auto& m = manifests[i];
        std::vector<GridCell> out;
        try {
            auto rs = run_experiment(m, hooks);
            for (const auto& s : rs.seeds) {
                out.push_back({cells[i].k, m.p_text(), s.seed, s.ok, s.error, s.report});
            }
        } catch (const std::exception& e) {
            for (auto seed : seeds) out.push_back({cells[i].k, m.p_text(), seed, false, e.what(), {}});
        }
        results[i] = std::move(out);
    });

    std::vector<GridCell> grid;
    for (auto& r : results) grid.insert(grid.end(), r.begin(), r.end());
    auto p_key = [](const std::string& p) {
        return p == "all" ? std::numeric_limits<std::size_t>::max() : static_cast<std::size_t>(std::stoull(p));
    };
    std::stable_sort(grid.begin(), grid.end(), [&](const GridCell& a, const GridCell& b) {
        return std::tuple(a.k, p_key(a.p), a.seed) < std::tuple(b.k, p_key(b.p), b.seed);
    });

    std::string csv = "k,p,seed,f1,balanced_accuracy,precision,recall,n,undecodable\n";
    ordered_json failures = ordered_json::array();
    for (const auto& g : grid) {
        if (!g.ok) {
            failures.push_back({{"k", g.k}, {"p", g.p}, {"seed", g.seed}, {"error", g.error}});
            continue;
        }
        csv += std::to_string(g.k) + "," + g.p + "," + std::to_string(g.seed);
        for (auto name : kMetricNames) csv += "," + metric_text(metric_by_name(g.report, name));
        csv += "," + std::to_string(g.report.n) + "," + std::to_string(g.report.undecodable) + "\n";
    }
    fs::create_directories(base.output_dir);
    write_file(fs::path(base.output_dir) / "grid.csv", csv);
    write_file(fs::path(base.output_dir) / "grid_failures.json", failures.dump(2, ' ', false, kReplace) + "\n");
    return grid;
}

namespace {

Metric metric_from(const json& v) {
    if (v.is_null()) return std::nullopt;
    return v.get<double>();
}

std::string markdown_number(const Metric& m) {
    if (!m) return "NA";
    auto text = format_decimal(shortest_decimal(*m), 4, false);
    return text ? *text : "NA";
}

}  // namespace

ReportOutput build_report(const fs::path& run_dir, const std::string& expected_hash) {
    const json manifest_doc = json::parse(read_file(run_dir / "manifest.json"));
    const json summary = json::parse(read_file(run_dir / "summary.json"));
    const std::string hash = expected_hash.empty() ? summary.at("manifest_hash").get<std::string>() : expected_hash;
    auto check = [&](const json& doc, const fs::path& where) {
        const auto found = doc.value("manifest_hash", std::string());
        if (found != hash) {
            throw RunnerError(RunnerErrc::hash_mismatch,
                              where.string() + " carries manifest hash '" + found + "', expected '" + hash + "'");
        }
    };
    check(manifest_doc, run_dir / "manifest.json");
    check(summary, run_dir / "summary.json");

    const auto& m = manifest_doc.at("manifest");
    const std::string dataset = m.at("dataset").at("name").get<std::string>();
    const std::string format = m.at("format").get<std::string>();
    const std::string variant(to_string(parse_prompt_format(format).variant));
    const std::string k = m.at("k").is_null() ? "0" : std::to_string(m.at("k").get<std::size_t>());
    std::string p = "all";
    if (m.at("p").is_number()) p = std::to_string(m.at("p").get<std::size_t>());

    std::vector<MetricsReport> reports;
    for (auto seed : m.at("seeds").get<std::vector<std::uint64_t>>()) {
        const auto path = run_dir / ("seed_" + std::to_string(seed)) / "metrics.json";
        if (!fs::exists(path)) continue;  // failed seed; listed in summary.json
        const json doc = json::parse(read_file(path));
        check(doc, path);
        MetricsReport r;
        r.seed = doc.at("seed").get<std::uint64_t>();
        r.n = doc.at("n").get<std::size_t>();
        r.undecodable = doc.at("undecodable").get<std::size_t>();
        r.f1 = metric_from(doc.at("f1"));
        r.balanced_accuracy = metric_from(doc.at("balanced_accuracy"));
        r.precision = metric_from(doc.at("precision"));
        r.recall = metric_from(doc.at("recall"));
        reports.push_back(r);
    }
    if (reports.empty()) throw RunnerError(RunnerErrc::missing_artifact, "no seed metrics under " + run_dir.string());

    ReportOutput out;
    std::ostringstream csv;
    write_flat_csv(csv, flat_rows(dataset, format, variant, k, p, reports));
    out.flat_csv = csv.str();

    const auto stats = aggregate_seeds(reports);
    std::ostringstream md;
    md << "# " << (m.value("name", std::string()).empty() ? dataset : m.value("name", std::string())) << "\n\n";
    md << "- dataset: " << dataset << "\n- format: " << format << "\n- k: " << k << "\n- p: " << p
       << "\n- seeds: " << reports.size() << " succeeded";
    const auto failures = summary.value("failures", json::array()).size();
    if (failures) md << ", " << failures << " failed";
    md << "\n- manifest hash: " << hash << "\n\n";
    md << "| metric | mean | sd | seeds | undefined |\n|---|---|---|---|---|\n";
    for (auto name : kMetricNames) {
        const auto& s = stats.metrics.at(std::string(name));
        md << "| " << name << " | " << markdown_number(s.mean) << " | " << markdown_number(s.sd) << " | "
           << s.count << " | " << s.undefined << " |\n";
    }
    out.markdown = md.str();
    return out;
}

}  // namespace tabshot

#include "tabshot/finetune_export.hpp"

#include <nlohmann/json.hpp>

namespace tabshot {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace {

constexpr auto kReplace = ordered_json::error_handler_t::replace;

Role role_from_string(const std::string& name) {
    if (name == "system") return Role::system;
    if (name == "user") return Role::user;
    if (name == "assistant") return Role::assistant;
    throw ExportError(ExportErrc::invariant_violation, "unknown role '" + name + "'");
}

ordered_json record_to_json(const FinetuneRecord& record) {
    ordered_json doc;
    ordered_json messages = ordered_json::array();
    for (const auto& m : record.messages) {
        ordered_json msg;
        msg["role"] = std::string(to_string(m.role));
        msg["content"] = m.content;
        messages.push_back(std::move(msg));
    }
    doc["messages"] = std::move(messages);
    doc["label"] = record.label;
    ordered_json meta;
    meta["seed"] = record.meta.seed;
    meta["format"] = record.meta.format;
    meta["dataset"] = record.meta.dataset;
    meta["target_id"] = record.meta.target_id;
    doc["meta"] = std::move(meta);
    return doc;
}

FinetuneRecord record_from_json(const json& doc) {
    FinetuneRecord r;
    for (const auto& m : doc.at("messages")) {
        r.messages.push_back({role_from_string(m.at("role").get<std::string>()), m.at("content").get<std::string>()});
    }
    r.label = doc.at("label").get<int>();
    const auto& meta = doc.at("meta");
    r.meta.seed = meta.at("seed").get<std::uint64_t>();
    r.meta.format = meta.at("format").get<std::string>();
    r.meta.dataset = meta.at("dataset").get<std::string>();
    r.meta.target_id = meta.at("target_id").get<std::string>();
    return r;
}

}  // namespace

std::string supervision_text(int label, PromptVariant variant) {
    if (variant == PromptVariant::interpretable) return PriorAnswer{label, "", 1.0}.as_text();
    return std::to_string(label);
}

FinetuneRecord make_finetune_record(const RenderedPrompt& prompt, int label, const std::string& dataset,
                                    std::uint64_t seed) {
    if (prompt.format.variant == PromptVariant::reflection_round) {
        throw ExportError(ExportErrc::invariant_violation, "reflection prompts are not exported for fine-tuning");
    }
    FinetuneRecord r;
    r.messages = prompt.messages;
    r.messages.push_back({Role::assistant, supervision_text(label, prompt.format.variant)});
    r.label = label;
    r.meta = {seed, prompt.format.name(), dataset, prompt.target_id};
    return r;
}

std::string check_record(const FinetuneRecord& record) {
    if (record.label != 0 && record.label != 1) return "label must be 0 or 1";
    if (record.meta.target_id.empty()) return "meta.target_id is empty";
    PromptFormat format;
    try {
        format = parse_prompt_format(record.meta.format);
    } catch (const std::exception& e) {
        return std::string("meta.format: ") + e.what();
    }
    if (format.variant == PromptVariant::reflection_round) return "reflection format is not exportable";
    if (record.messages.size() < 2) return "record needs a prompt and an answer";
    if (record.messages.back().role != Role::assistant) return "last message is not the assistant answer";
    if (record.messages.back().content != supervision_text(record.label, format.variant)) {
        return "assistant answer does not encode the label";
    }
    const Message* user = nullptr;
    for (const auto& m : record.messages) {
        if (m.role == Role::user) {
            user = &m;
            break;
        }
    }
    if (!user) return "record has no user message";
    if (auto leak = find_label_leak(user->content, format.structure)) return "label leak: " + *leak;
    return {};
}

std::size_t export_chat_jsonl(std::span<const FinetuneRecord> records, std::ostream& sink) {
    for (std::size_t i = 0; i < records.size(); ++i) {
        auto problem = check_record(records[i]);
        if (!problem.empty()) {
            throw ExportError(ExportErrc::invariant_violation,
                              "record " + std::to_string(i) + " (" + records[i].meta.target_id + "): " + problem);
        }
    }
    for (const auto& r : records) sink << record_to_json(r).dump(-1, ' ', false, kReplace) << '\n';
    return records.size();
}

JsonlReport validate_jsonl(std::istream& source) {
    JsonlReport report;
    std::string line;
    while (std::getline(source, line)) {
        ++report.lines;
        json doc = json::parse(line, nullptr, false);
        if (!doc.is_object()) {
            report.issues.push_back({report.lines, "not a JSON object"});
            continue;
        }
        FinetuneRecord record;
        try {
            record = record_from_json(doc);
        } catch (const std::exception& e) {
            report.issues.push_back({report.lines, std::string("bad record shape: ") + e.what()});
            continue;
        }
        auto problem = check_record(record);
        if (!problem.empty()) {
            report.issues.push_back({report.lines, problem});
            continue;
        }
        ++report.label_counts[static_cast<std::size_t>(record.label)];
    }
    return report;
}

std::string report_to_json(const JsonlReport& report) {
    ordered_json doc;
    doc["lines"] = report.lines;
    doc["ok"] = report.ok();
    doc["label_counts"] = {{"0", report.label_counts[0]}, {"1", report.label_counts[1]}};
    ordered_json issues = ordered_json::array();
    for (const auto& i : report.issues) issues.push_back({{"line", i.line}, {"reason", i.reason}});
    doc["issues"] = std::move(issues);
    return doc.dump(2, ' ', false, kReplace);
}

std::string export_manifest_json(const std::string& dataset_hash, std::uint64_t seed, const std::string& format,
                                 const std::string& instruction_version, std::size_t records) {
    ordered_json doc;
    doc["dataset_hash"] = dataset_hash;
    doc["seed"] = seed;
    doc["format"] = format;
    doc["instruction_version"] = instruction_version;
    doc["records"] = records;
    return doc.dump(2);
}

}  // namespace tabshot

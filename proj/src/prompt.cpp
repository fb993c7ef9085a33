#include "tabshot/prompt.hpp"
#include "tabshot/numeric_format.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_set>

namespace tabshot {

namespace {

using json = nlohmann::json;

std::string read_file(const std::string& path, PromptErrc errc) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw PromptError(errc, "cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string lower_first(std::string s) {
    // "The patient" -> "the patient"; pronouns like "He" -> "he".
    if (!s.empty()) s[0] = static_cast<char>(std::tolower(static_cast<unsigned char>(s[0])));
    return s;
}

void replace_all(std::string& s, std::string_view from, std::string_view to) {
    std::size_t pos = 0;
    while ((pos = s.find(from, pos)) != std::string::npos) {
        s.replace(pos, from.size(), to);
        pos += to.size();
    }
}

std::string grid_cell(std::string text) {
    replace_all(text, "|", "\\|");
    replace_all(text, "\n", " ");
    return text;
}

std::string grid_line(const std::vector<std::string>& cells) {
    std::string line = "|";
    for (const auto& c : cells) {
        line += ' ';
        line += grid_cell(c);
        line += " |";
    }
    return line;
}

std::vector<std::string> split_grid_line(std::string_view line) {
    // Inverse of grid_line, honouring "\|" escapes.
    std::vector<std::string> cells;
    if (line.empty() || line.front() != '|') return cells;
    std::string cur;
    for (std::size_t i = 1; i < line.size(); ++i) {
        if (line[i] == '\\' && i + 1 < line.size() && line[i + 1] == '|') {
            cur.push_back('|');
            ++i;
        } else if (line[i] == '|') {
            std::size_t b = cur.find_first_not_of(' ');
            std::size_t e = cur.find_last_not_of(' ');
            cells.push_back(b == std::string::npos ? std::string() : cur.substr(b, e - b + 1));
            cur.clear();
        } else {
            cur.push_back(line[i]);
        }
    }
    return cells;
}

std::vector<std::string_view> split_lines(std::string_view text) {
    std::vector<std::string_view> lines;
    std::size_t start = 0;
    while (start <= text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string_view::npos) {
            lines.push_back(text.substr(start));
            break;
        }
        lines.push_back(text.substr(start, end - start));
        start = end + 1;
    }
    return lines;
}

const std::string& pick(const std::string& value, const char* key) {
    if (value.empty()) throw PromptError(PromptErrc::format_contract, std::string("instruction set lacks '") + key + "'");
    return value;
}

constexpr std::string_view kTargetHeader = "Target patient:";
constexpr std::string_view kDiagnosisPrefix = "Diagnosis: ";

}  // namespace

std::string_view to_string(PromptStructure s) { return s == PromptStructure::tabular ? "tabular" : "serialized"; }
std::string_view to_string(Shots s) { return s == Shots::zero ? "zero" : "few"; }
std::string_view to_string(PromptVariant v) {
    switch (v) {
        case PromptVariant::standard: return "standard";
        case PromptVariant::interpretable: return "interpretable";
        case PromptVariant::reflection_round: return "reflection";
    }
    return "standard";
}
std::string_view to_string(Role r) {
    switch (r) {
        case Role::system: return "system";
        case Role::user: return "user";
        case Role::assistant: return "assistant";
    }
    return "user";
}

std::string PromptFormat::name() const {
    return std::string(to_string(shots)) + "_" + std::string(to_string(structure)) + "_" +
           std::string(to_string(variant));
}

PromptFormat parse_prompt_format(std::string_view name) {
    for (auto shots : {Shots::zero, Shots::few}) {
        for (auto structure : {PromptStructure::tabular, PromptStructure::serialized}) {
            for (auto variant : {PromptVariant::standard, PromptVariant::interpretable, PromptVariant::reflection_round}) {
                PromptFormat f{structure, shots, variant};
                if (f.name() == name) return f;
                // The variant suffix may be omitted for standard prompts.
                if (variant == PromptVariant::standard &&
                    name == std::string(to_string(shots)) + "_" + std::string(to_string(structure))) {
                    return f;
                }
            }
        }
    }
    throw PromptError(PromptErrc::format_contract, "unknown prompt format '" + std::string(name) + "'");
}

InstructionSet parse_instruction_set(std::string_view json_text) {
    try {
        auto doc = json::parse(json_text);
        InstructionSet s;
        s.version = doc.at("version").get<std::string>();
        s.system = doc.at("system").get<std::string>();
        s.tabular_zero = doc.at("tabular_zero").get<std::string>();
        s.tabular_few = doc.at("tabular_few").get<std::string>();
        s.serialized_zero = doc.at("serialized_zero").get<std::string>();
        s.serialized_few = doc.at("serialized_few").get<std::string>();
        s.answer_standard = doc.at("answer_standard").get<std::string>();
        s.interpretable_cue = doc.at("interpretable_cue").get<std::string>();
        s.interpretable_schema = doc.at("interpretable_schema").get<std::string>();
        s.reflection = doc.at("reflection").get<std::string>();
        return s;
    } catch (const json::exception& e) {
        throw PromptError(PromptErrc::format_contract, std::string("malformed instruction set: ") + e.what());
    }
}

InstructionSet load_instruction_set(const std::string& path) {
    return parse_instruction_set(read_file(path, PromptErrc::format_contract));
}

SerializationTemplate parse_serialization_template(std::string_view json_text) {
    try {
        auto doc = json::parse(json_text);
        SerializationTemplate t;
        t.version = doc.value("version", std::string());
        const auto style = doc.at("style").get<std::string>();
        if (style == "narrative") {
            t.style = SerializationStyle::narrative;
        } else if (style == "keyvalue") {
            t.style = SerializationStyle::keyvalue;
        } else {
            throw PromptError(PromptErrc::missing_template_rule, "unknown serialization style '" + style + "'");
        }
        t.sex_column = doc.value("sex_column", std::string());
        if (doc.contains("pronouns")) {
            for (const auto& [key, value] : doc.at("pronouns").items()) {
                PronounSet p{value.at("subject").get<std::string>(), value.at("possessive").get<std::string>()};
                if (key == "default") {
                    t.default_pronouns = p;
                } else {
                    t.pronouns.emplace(key, p);
                }
            }
        }
        t.sentences = doc.value("sentences", std::map<std::string, std::string>{});
        t.value_labels = doc.value("value_labels", std::map<std::string, std::map<std::string, std::string>>{});
        t.units = doc.value("units", std::map<std::string, std::string>{});
        t.numeric_precision = doc.value("numeric_precision", 4);
        return t;
    } catch (const json::exception& e) {
        throw PromptError(PromptErrc::missing_template_rule, std::string("malformed serialization template: ") + e.what());
    }
}

SerializationTemplate load_serialization_template(const std::string& path) {
    return parse_serialization_template(read_file(path, PromptErrc::missing_template_rule));
}

std::vector<std::size_t> prompt_columns(const FeatureTable& table, const FeatureSet& features) {
    std::unordered_set<std::string> covariates(features.always_included.begin(), features.always_included.end());
    std::unordered_set<std::string> selected(features.selected.begin(), features.selected.end());
    for (const auto& name : features.always_included) {
        auto idx = table.column_index(name);
        if (!idx || !table.columns()[*idx].is_covariate) {
            throw PromptError(PromptErrc::unknown_feature, "'" + name + "' is not a covariate of the table");
        }
    }
    for (const auto& name : features.selected) {
        auto idx = table.column_index(name);
        if (!idx || !table.columns()[*idx].is_feature()) {
            throw PromptError(PromptErrc::unknown_feature, "'" + name + "' is not a feature of the table");
        }
    }
    std::vector<std::size_t> out;
    for (auto i : table.covariate_indices()) {
        if (covariates.count(table.columns()[i].name)) out.push_back(i);
    }
    for (auto i : table.feature_indices()) {
        if (selected.count(table.columns()[i].name)) out.push_back(i);
    }
    out.push_back(table.label_index());
    return out;
}

FeatureSet all_features(const FeatureTable& table) {
    FeatureSet fs;
    fs.selected = table.feature_names();
    fs.always_included = table.covariate_names();
    return fs;
}

std::string render_value(const Cell& cell, const ColumnSpec& column, int precision) {
    if (cell.is_missing()) return "NaN";
    switch (column.kind) {
        case ColumnKind::numeric: {
            auto s = format_decimal(cell.str(), precision, true);
            return s ? *s : cell.str();
        }
        case ColumnKind::binary:
        case ColumnKind::count: {
            auto s = format_decimal(cell.str(), 0, false);
            return s ? *s : cell.str();
        }
        case ColumnKind::categorical:
        case ColumnKind::identifier:
            break;
    }
    return cell.str();
}

std::string render_table_block(const ContextSet& context, const SubjectRow& target, const FeatureSet& features,
                               const FeatureTable& table) {
    const auto cols = prompt_columns(table, features);
    const std::size_t width = table.columns().size();
    auto check_row = [&](const SubjectRow& row) {
        if (row.cells.size() != width) {
            throw PromptError(PromptErrc::schema_drift, "row '" + row.subject_id + "' does not match the table schema");
        }
    };
    std::vector<std::string> cells;
    for (auto c : cols) cells.push_back(table.columns()[c].name);
    std::string out = grid_line(cells);

    for (const auto& ex : context.examples) {
        const SubjectRow* row = table.find(ex.subject_id);
        if (!row) throw PromptError(PromptErrc::schema_drift, "context example '" + ex.subject_id + "' is not in the table");
        check_row(*row);
        cells.clear();
        for (auto c : cols) {
            if (c == table.label_index()) {
                cells.push_back(std::to_string(ex.label));
            } else {
                cells.push_back(render_value(row->cells[c], table.columns()[c]));
            }
        }
        out += '\n';
        out += grid_line(cells);
    }
    check_row(target);
    cells.clear();
    for (auto c : cols) {
        cells.push_back(c == table.label_index() ? std::string("?") : render_value(target.cells[c], table.columns()[c]));
    }
    out += '\n';
    out += grid_line(cells);
    return out;
}

std::string serialize_subject(const SubjectRow& row, const FeatureTable& table, const FeatureSet& features,
                              const SerializationTemplate& tmpl, bool include_label) {
    if (row.cells.size() != table.columns().size()) {
        throw PromptError(PromptErrc::schema_drift, "row '" + row.subject_id + "' does not match the table schema");
    }
    PronounSet pronouns = tmpl.default_pronouns;
    if (!tmpl.sex_column.empty()) {
        if (auto idx = table.column_index(tmpl.sex_column)) {
            const Cell& sex = row.cells[*idx];
            if (!sex.is_missing()) {
                auto it = tmpl.pronouns.find(sex.str());
                if (it != tmpl.pronouns.end()) pronouns = it->second;
            }
        }
    }
    auto value_text = [&](std::size_t c) {
        const auto& spec = table.columns()[c];
        const Cell& cell = row.cells[c];
        std::string v = render_value(cell, spec, tmpl.numeric_precision);
        if (!cell.is_missing()) {
            auto labels = tmpl.value_labels.find(spec.name);
            if (labels != tmpl.value_labels.end()) {
                auto hit = labels->second.find(v);
                if (hit != labels->second.end()) v = hit->second;
            }
        }
        return v;
    };
    auto sentence = [&](std::size_t c) {
        const auto& spec = table.columns()[c];
        auto it = tmpl.sentences.find(spec.name);
        if (it == tmpl.sentences.end()) {
            throw PromptError(PromptErrc::missing_template_rule, "no serialization rule for column '" + spec.name + "'");
        }
        std::string unit = spec.unit;
        if (auto u = tmpl.units.find(spec.name); u != tmpl.units.end()) unit = u->second;
        const bool missing = row.cells[c].is_missing();
        std::string s = it->second;
        replace_all(s, "{Subj}", pronouns.subject);
        replace_all(s, "{subj}", lower_first(pronouns.subject));
        replace_all(s, "{Poss}", pronouns.possessive);
        replace_all(s, "{poss}", lower_first(pronouns.possessive));
        replace_all(s, "{unit}", (!missing && !unit.empty()) ? " " + unit : std::string());
        replace_all(s, "{value}", value_text(c));
        return s;
    };

    const auto cols = prompt_columns(table, features);
    std::vector<std::string> parts;
    std::vector<std::string> pairs;
    for (auto c : cols) {
        if (c == table.label_index()) continue;
        const auto& spec = table.columns()[c];
        if (spec.is_covariate || tmpl.style == SerializationStyle::narrative) {
            parts.push_back(sentence(c));
        } else {
            pairs.push_back(spec.name + "=" + value_text(c));
        }
    }
    std::string out;
    for (const auto& p : parts) {
        if (!out.empty()) out += ' ';
        out += p;
    }
    if (!pairs.empty()) {
        if (!out.empty()) out += ' ';
        for (std::size_t i = 0; i < pairs.size(); ++i) {
            if (i) out += ", ";
            out += pairs[i];
        }
    }
    if (include_label) {
        auto label = table.label(row);
        if (!label) {
            throw PromptError(PromptErrc::format_contract, "subject '" + row.subject_id + "' has no label to show");
        }
        out += '\n';
        out += kDiagnosisPrefix;
        out += *label == 1 ? "AD" : "CN";
    }
    return out;
}

std::string PriorAnswer::as_text() const {
    if (reasoning.empty() && !confidence) return std::to_string(label);
    nlohmann::ordered_json doc;
    doc["prediction"] = label;
    doc["reasoning"] = reasoning;
    if (confidence) doc["confidence"] = *confidence;
    return doc.dump();
}

RenderedPrompt build_prompt(const SubjectRow& target, const ContextSet& context, const PromptFormat& format,
                            const PromptInputs& inputs, const PriorAnswer* prior) {
    if (!inputs.table || !inputs.features || !inputs.instructions) {
        throw PromptError(PromptErrc::format_contract, "build_prompt needs a table, a feature set and instructions");
    }
    const auto& table = *inputs.table;
    const auto& ins = *inputs.instructions;
    if (format.shots == Shots::few && context.k() == 0) {
        throw PromptError(PromptErrc::format_contract, "few-shot prompt needs at least one context example");
    }
    if (format.shots == Shots::zero && context.k() != 0) {
        throw PromptError(PromptErrc::format_contract, "zero-shot prompt cannot carry context examples");
    }
    if (format.variant == PromptVariant::reflection_round && !prior) {
        throw PromptError(PromptErrc::format_contract, "reflection prompt needs the prior answer");
    }
    for (const auto& ex : context.examples) {
        if (ex.subject_id == target.subject_id) {
            throw PromptError(PromptErrc::format_contract, "target appears in its own context set");
        }
        const SubjectRow* row = table.find(ex.subject_id);
        if (!row) throw PromptError(PromptErrc::schema_drift, "context example '" + ex.subject_id + "' is not in the table");
        if (table.label(*row) != ex.label) {
            throw PromptError(PromptErrc::schema_drift, "context label for '" + ex.subject_id + "' disagrees with the table");
        }
    }

    std::string user;
    LabelPosition position;
    if (format.structure == PromptStructure::tabular) {
        user = pick(format.shots == Shots::zero ? ins.tabular_zero : ins.tabular_few, "tabular instruction");
        user += "\n\n";
        user += render_table_block(context, target, *inputs.features, table);
        position.kind = LabelPosition::Kind::grid_last_cell;
    } else {
        if (!inputs.serialization) {
            throw PromptError(PromptErrc::missing_template_rule, "serialized prompt needs a serialization template");
        }
        user = pick(format.shots == Shots::zero ? ins.serialized_zero : ins.serialized_few, "serialized instruction");
        std::size_t n = 0;
        for (const auto& ex : context.examples) {
            const SubjectRow* row = table.find(ex.subject_id);
            user += "\n\nExample " + std::to_string(++n) + ":\n";
            user += serialize_subject(*row, table, *inputs.features, *inputs.serialization, true);
        }
        user += "\n\n";
        user += kTargetHeader;
        user += '\n';
        user += serialize_subject(target, table, *inputs.features, *inputs.serialization, false);
        position.kind = LabelPosition::Kind::serialized_target_block;
    }
    user += "\n\n";
    if (format.variant == PromptVariant::interpretable) {
        user += pick(ins.interpretable_cue, "interpretable_cue");
        user += '\n';
        user += pick(ins.interpretable_schema, "interpretable_schema");
    } else {
        user += pick(ins.answer_standard, "answer_standard");
    }

    RenderedPrompt prompt;
    prompt.messages.push_back({Role::system, pick(ins.system, "system")});
    prompt.messages.push_back({Role::user, std::move(user)});
    prompt.target_id = target.subject_id;
    prompt.format = format;
    prompt.expected_label_position = position;
    prompt.expected_label_position.message_index = 1;
    prompt.instruction_version = ins.version;
    prompt.k = context.k();
    if (format.variant == PromptVariant::reflection_round) {
        return build_reflection_prompt(prompt, *prior, ins);
    }
    return prompt;
}

RenderedPrompt build_reflection_prompt(const RenderedPrompt& original, const PriorAnswer& prior,
                                       const InstructionSet& instructions) {
    RenderedPrompt out = original;
    out.format.variant = PromptVariant::reflection_round;
    out.messages.push_back({Role::assistant, prior.as_text()});
    out.messages.push_back({Role::user, pick(instructions.reflection, "reflection")});
    return out;
}

std::size_t token_budget(const RenderedPrompt& prompt, double chars_per_token) {
    if (!(chars_per_token > 0.0)) {
        throw PromptError(PromptErrc::format_contract, "chars_per_token must be positive");
    }
    std::size_t chars = 0;
    for (const auto& m : prompt.messages) {
        for (unsigned char c : m.content) {
            if ((c & 0xC0) != 0x80) ++chars;  // count UTF-8 lead bytes only
        }
    }
    return static_cast<std::size_t>(std::ceil(static_cast<double>(chars) / chars_per_token));
}

std::string prompt_to_text(const RenderedPrompt& prompt) {
    std::string out;
    for (const auto& m : prompt.messages) {
        out += "<|";
        out += to_string(m.role);
        out += "|>\n";
        out += m.content;
        out += '\n';
    }
    return out;
}

std::optional<Grid> parse_grid(std::string_view text) {
    Grid grid;
    bool in_grid = false;
    for (auto line : split_lines(text)) {
        const bool is_grid = !line.empty() && line.front() == '|';
        if (is_grid) {
            auto cells = split_grid_line(line);
            if (!in_grid) {
                grid.header = std::move(cells);
                in_grid = true;
            } else {
                grid.rows.push_back(std::move(cells));
            }
        } else if (in_grid) {
            break;
        }
    }
    if (!in_grid) return std::nullopt;
    return grid;
}

std::optional<std::string> serialized_target_block(std::string_view text) {
    auto pos = text.rfind(kTargetHeader);
    if (pos == std::string_view::npos) return std::nullopt;
    auto start = pos + kTargetHeader.size();
    if (start < text.size() && text[start] == '\n') ++start;
    auto end = text.find("\n\n", start);
    return std::string(text.substr(start, end == std::string_view::npos ? std::string_view::npos : end - start));
}

std::size_t count_labeled_rows(const Grid& grid) {
    std::size_t n = 0;
    for (const auto& row : grid.rows) {
        if (!row.empty() && row.back() != "?") ++n;
    }
    return n;
}

std::optional<std::string> find_label_leak(std::string_view user_message, PromptStructure structure) {
    if (structure == PromptStructure::tabular) {
        auto grid = parse_grid(user_message);
        if (!grid || grid->rows.empty()) return "no grid with a target row";
        const auto& last = grid->rows.back();
        if (last.size() != grid->header.size()) return "target row width differs from header";
        if (last.back() != "?") return "target label cell shows '" + last.back() + "'";
        for (std::size_t i = 0; i + 1 < grid->rows.size(); ++i) {
            if (!grid->rows[i].empty() && grid->rows[i].back() == "?") return "masked row before the target row";
        }
        return std::nullopt;
    }
    auto block = serialized_target_block(user_message);
    if (!block) return "no target block";
    if (block->find("Diagnosis:") != std::string::npos) return "target description carries a diagnosis";
    return std::nullopt;
}

std::optional<std::string> find_label_leak(const RenderedPrompt& prompt) {
    const auto idx = prompt.expected_label_position.message_index;
    if (idx >= prompt.messages.size()) return "label position outside the prompt";
    return find_label_leak(prompt.messages[idx].content, prompt.format.structure);
}

}  // namespace tabshot

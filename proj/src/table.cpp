#include "tabshot/table.hpp"
#include "tabshot/numeric_format.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_set>

namespace tabshot {

namespace {

using json = nlohmann::json;

bool is_missing_sentinel(std::string_view text) {
    auto iequals = [](std::string_view a, std::string_view b) {
        return a.size() == b.size() &&
               std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
                   return std::tolower(static_cast<unsigned char>(x)) ==
                          std::tolower(static_cast<unsigned char>(y));
               });
    };
    return text.empty() || iequals(text, "NA") || iequals(text, "NaN");
}

std::optional<double> parse_finite(std::string_view text) {
    if (!format_decimal(text, 0, false)) return std::nullopt;  // rejects hex, inf, junk
    std::string_view digits = text;
    if (!digits.empty() && digits.front() == '+') digits.remove_prefix(1);
    double value = 0.0;
    auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), value);
    if (ec != std::errc{} || ptr != digits.data() + digits.size() || !std::isfinite(value)) {
        return std::nullopt;
    }
    return value;
}

bool is_unsigned_integer(std::string_view text) {
    return !text.empty() && std::all_of(text.begin(), text.end(), [](char c) {
        return std::isdigit(static_cast<unsigned char>(c));
    });
}

[[noreturn]] void bad_cell(std::size_t row, const ColumnSpec& col, std::string_view text,
                           std::string_view why) {
    throw TableError(TableErrc::bad_cell, "bad cell at data row " + std::to_string(row + 1) +
                                              ", column '" + col.name + "': '" +
                                              std::string(text) + "' (" + std::string(why) + ")");
}

Cell parse_cell(std::string_view text, const ColumnSpec& col, std::size_t row) {
    if (col.kind == ColumnKind::identifier) {
        if (text.empty()) bad_cell(row, col, text, "empty subject id");
        return Cell::text(std::string(text));
    }
    if (is_missing_sentinel(text)) return Cell::missing();
    switch (col.kind) {
        case ColumnKind::numeric: {
            auto v = parse_finite(text);
            if (!v) bad_cell(row, col, text, "not a finite number");
            return Cell::number(std::string(text), *v);
        }
        case ColumnKind::binary:
            if (text != "0" && text != "1") bad_cell(row, col, text, "expected 0 or 1");
            return Cell::number(std::string(text), text == "1" ? 1.0 : 0.0);
        case ColumnKind::count: {
            if (!is_unsigned_integer(text)) bad_cell(row, col, text, "expected a non-negative integer");
            auto v = parse_finite(text);
            return Cell::number(std::string(text), *v);
        }
        case ColumnKind::categorical:
            if (!col.levels.empty() &&
                std::find(col.levels.begin(), col.levels.end(), text) == col.levels.end()) {
                bad_cell(row, col, text, "not a declared level");
            }
            return Cell::text(std::string(text));
        case ColumnKind::identifier:
            break;
    }
    return Cell::missing();
}

void validate_cell(const Cell& cell, const ColumnSpec& col, std::size_t row) {
    if (cell.is_missing()) {
        if (col.kind == ColumnKind::identifier) bad_cell(row, col, "", "missing subject id");
        return;
    }
    Cell reparsed = parse_cell(cell.str(), col, row);
    if (reparsed.is_missing()) bad_cell(row, col, cell.str(), "present cell uses a missing sentinel");
}

}  // namespace

std::string_view to_string(ColumnKind kind) {
    switch (kind) {
        case ColumnKind::identifier: return "identifier";
        case ColumnKind::numeric: return "numeric";
        case ColumnKind::categorical: return "categorical";
        case ColumnKind::binary: return "binary";
        case ColumnKind::count: return "count";
    }
    return "numeric";
}

ColumnKind column_kind_from_string(std::string_view name) {
    for (auto kind : {ColumnKind::identifier, ColumnKind::numeric, ColumnKind::categorical,
                      ColumnKind::binary, ColumnKind::count}) {
        if (to_string(kind) == name) return kind;
    }
    throw TableError(TableErrc::invalid_schema, "unknown column kind '" + std::string(name) + "'");
}

Cell Cell::number(std::string text, double value) {
    Cell c;
    c.present_ = true;
    c.text_ = std::move(text);
    c.value_ = value;
    return c;
}

Cell Cell::number(double value) {
    return number(shortest_decimal(value), value);
}

Cell Cell::text(std::string text) {
    Cell c;
    c.present_ = true;
    c.text_ = std::move(text);
    return c;
}

FeatureTable::FeatureTable(std::vector<ColumnSpec> columns, std::vector<SubjectRow> rows) {
    std::size_t n_id = 0, n_label = 0;
    std::unordered_set<std::string> names;
    for (const auto& c : columns) {
        if (c.name.empty()) throw TableError(TableErrc::invalid_schema, "column with empty name");
        if (!names.insert(c.name).second) {
            throw TableError(TableErrc::invalid_schema, "duplicate column '" + c.name + "'");
        }
        if (c.kind == ColumnKind::identifier) {
            ++n_id;
            if (c.is_label || c.is_covariate) {
                throw TableError(TableErrc::invalid_schema, "id column cannot be label or covariate");
            }
        }
        if (c.is_label) {
            ++n_label;
            if (c.is_covariate) {
                throw TableError(TableErrc::invalid_schema, "label column '" + c.name + "' flagged as covariate");
            }
            if (c.kind != ColumnKind::binary) {
                throw TableError(TableErrc::invalid_schema, "label column '" + c.name + "' must be binary");
            }
        }
    }
    if (n_id != 1) throw TableError(TableErrc::invalid_schema, "schema needs exactly one identifier column");
    if (n_label != 1) throw TableError(TableErrc::invalid_schema, "schema needs exactly one label column");

    // Canonical order: id, covariates, features, label.
    std::vector<std::size_t> order;
    auto push_if = [&](auto pred) {
        for (std::size_t i = 0; i < columns.size(); ++i) {
            if (pred(columns[i])) order.push_back(i);
        }
    };
    push_if([](const ColumnSpec& c) { return c.kind == ColumnKind::identifier; });
    push_if([](const ColumnSpec& c) { return c.is_covariate; });
    push_if([](const ColumnSpec& c) { return c.is_feature(); });
    push_if([](const ColumnSpec& c) { return c.is_label; });

    columns_.reserve(columns.size());
    for (auto i : order) columns_.push_back(columns[i]);
    id_index_ = 0;
    label_index_ = columns_.size() - 1;

    rows_.reserve(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        auto& row = rows[r];
        if (row.cells.size() != columns.size()) {
            throw TableError(TableErrc::bad_cell, "row " + std::to_string(r + 1) + " has " +
                                                      std::to_string(row.cells.size()) + " cells, expected " +
                                                      std::to_string(columns.size()));
        }
        SubjectRow canonical{row.subject_id, {}};
        canonical.cells.reserve(order.size());
        for (auto i : order) canonical.cells.push_back(std::move(row.cells[i]));
        for (std::size_t c = 0; c < columns_.size(); ++c) validate_cell(canonical.cells[c], columns_[c], r);
        if (canonical.cells[id_index_].str() != canonical.subject_id) {
            throw TableError(TableErrc::bad_cell, "row " + std::to_string(r + 1) +
                                                      ": subject id does not match id cell");
        }
        if (!row_by_id_.emplace(canonical.subject_id, rows_.size()).second) {
            throw TableError(TableErrc::duplicate_subject, "duplicate subject id '" + canonical.subject_id + "'");
        }
        rows_.push_back(std::move(canonical));
    }
}

std::optional<std::size_t> FeatureTable::column_index(std::string_view name) const {
    for (std::size_t i = 0; i < columns_.size(); ++i) {
        if (columns_[i].name == name) return i;
    }
    return std::nullopt;
}

std::vector<std::size_t> FeatureTable::covariate_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < columns_.size(); ++i) {
        if (columns_[i].is_covariate) out.push_back(i);
    }
    return out;
}

std::vector<std::size_t> FeatureTable::feature_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < columns_.size(); ++i) {
        if (columns_[i].is_feature()) out.push_back(i);
    }
    return out;
}

std::vector<std::string> FeatureTable::feature_names() const {
    std::vector<std::string> out;
    for (auto i : feature_indices()) out.push_back(columns_[i].name);
    return out;
}

std::vector<std::string> FeatureTable::covariate_names() const {
    std::vector<std::string> out;
    for (auto i : covariate_indices()) out.push_back(columns_[i].name);
    return out;
}

std::optional<int> FeatureTable::label(const SubjectRow& row) const {
    const Cell& c = row.cells[label_index_];
    if (c.is_missing()) return std::nullopt;
    return c.str() == "1" ? 1 : 0;
}

const SubjectRow* FeatureTable::find(std::string_view subject_id) const {
    auto it = row_by_id_.find(std::string(subject_id));
    return it == row_by_id_.end() ? nullptr : &rows_[it->second];
}

const SubjectRow& FeatureTable::at(std::string_view subject_id) const {
    const SubjectRow* row = find(subject_id);
    if (!row) throw TableError(TableErrc::unknown_subject, "unknown subject id '" + std::string(subject_id) + "'");
    return *row;
}

FeatureTable FeatureTable::with_rows(std::vector<SubjectRow> rows) const {
    return FeatureTable(columns_, std::move(rows));
}

FeatureTable FeatureTable::subset(std::span<const std::string> subject_ids) const {
    std::vector<SubjectRow> rows;
    rows.reserve(subject_ids.size());
    for (const auto& id : subject_ids) rows.push_back(at(id));
    return with_rows(std::move(rows));
}

std::vector<ColumnSpec> parse_schema(std::string_view json_text) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::exception& e) {
        throw TableError(TableErrc::invalid_schema, std::string("schema is not valid JSON: ") + e.what());
    }
    const json& cols = doc.is_array() ? doc : doc.value("columns", json::array());
    if (!cols.is_array() || cols.empty()) {
        throw TableError(TableErrc::invalid_schema, "schema lists no columns");
    }
    std::vector<ColumnSpec> out;
    for (const auto& c : cols) {
        try {
            ColumnSpec spec;
            spec.name = c.at("name").get<std::string>();
            spec.kind = column_kind_from_string(c.value("kind", std::string("numeric")));
            spec.unit = c.value("unit", std::string());
            spec.levels = c.value("levels", std::vector<std::string>{});
            spec.is_covariate = c.value("covariate", false);
            spec.is_label = c.value("label", false);
            out.push_back(std::move(spec));
        } catch (const json::exception& e) {
            throw TableError(TableErrc::invalid_schema, std::string("bad column entry: ") + e.what());
        }
    }
    return out;
}

std::vector<ColumnSpec> load_schema_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw TableError(TableErrc::invalid_schema, "cannot open schema file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_schema(ss.str());
}

std::string schema_to_json(std::span<const ColumnSpec> columns) {
    nlohmann::ordered_json cols = nlohmann::ordered_json::array();
    for (const auto& c : columns) {
        nlohmann::ordered_json e;
        e["name"] = c.name;
        e["kind"] = std::string(to_string(c.kind));
        if (!c.unit.empty()) e["unit"] = c.unit;
        if (!c.levels.empty()) e["levels"] = c.levels;
        if (c.is_covariate) e["covariate"] = true;
        if (c.is_label) e["label"] = true;
        cols.push_back(std::move(e));
    }
    nlohmann::ordered_json doc;
    doc["columns"] = std::move(cols);
    return doc.dump(2) + "\n";
}

std::vector<std::vector<std::string>> parse_csv(std::istream& source) {
    std::vector<std::vector<std::string>> records;
    std::vector<std::string> record;
    std::string field;
    bool in_quotes = false;
    bool field_started = false;
    bool any = false;
    char ch;
    auto end_field = [&] {
        record.push_back(std::move(field));
        field.clear();
        field_started = false;
    };
    auto end_record = [&] {
        end_field();
        records.push_back(std::move(record));
        record.clear();
        any = false;
    };
    while (source.get(ch)) {
        any = true;
        if (in_quotes) {
            if (ch == '"') {
                if (source.peek() == '"') {
                    source.get(ch);
                    field.push_back('"');
                } else {
                    in_quotes = false;
                }
            } else {
                field.push_back(ch);
            }
            continue;
        }
        if (ch == '"' && !field_started) {
            in_quotes = true;
            field_started = true;
        } else if (ch == ',') {
            end_field();
        } else if (ch == '\r') {
            if (source.peek() == '\n') source.get(ch);
            end_record();
        } else if (ch == '\n') {
            end_record();
        } else {
            field.push_back(ch);
            field_started = true;
        }
    }
    if (in_quotes) throw TableError(TableErrc::bad_cell, "unterminated quoted field at end of input");
    if (any) end_record();
    return records;
}

std::string csv_escape(std::string_view field) {
    if (field.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(field);
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

FeatureTable load_table(std::istream& source, std::span<const ColumnSpec> schema) {
    auto records = parse_csv(source);
    if (records.empty()) throw TableError(TableErrc::schema_mismatch, "CSV has no header row");
    const auto& header = records.front();
    bool matches = header.size() == schema.size();
    for (std::size_t i = 0; matches && i < header.size(); ++i) matches = header[i] == schema[i].name;
    if (!matches) {
        std::string got;
        for (const auto& h : header) got += (got.empty() ? "" : ",") + h;
        throw TableError(TableErrc::schema_mismatch, "CSV header does not match schema: " + got);
    }
    std::size_t id_col = 0;
    for (std::size_t i = 0; i < schema.size(); ++i) {
        if (schema[i].kind == ColumnKind::identifier) id_col = i;
    }
    std::vector<SubjectRow> rows;
    rows.reserve(records.size() - 1);
    for (std::size_t r = 1; r < records.size(); ++r) {
        const auto& rec = records[r];
        if (rec.size() == 1 && rec[0].empty()) continue;  // blank line
        if (rec.size() != schema.size()) {
            throw TableError(TableErrc::bad_cell, "data row " + std::to_string(r) + " has " +
                                                      std::to_string(rec.size()) + " fields, expected " +
                                                      std::to_string(schema.size()));
        }
        SubjectRow row;
        row.cells.reserve(schema.size());
        for (std::size_t c = 0; c < schema.size(); ++c) row.cells.push_back(parse_cell(rec[c], schema[c], r - 1));
        row.subject_id = row.cells[id_col].str();
        rows.push_back(std::move(row));
    }
    return FeatureTable(std::vector<ColumnSpec>(schema.begin(), schema.end()), std::move(rows));
}

FeatureTable load_table_file(const std::string& path, std::span<const ColumnSpec> schema) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw TableError(TableErrc::schema_mismatch, "cannot open table file " + path);
    return load_table(in, schema);
}

void write_table(std::ostream& sink, const FeatureTable& table) {
    const auto& cols = table.columns();
    for (std::size_t i = 0; i < cols.size(); ++i) sink << (i ? "," : "") << csv_escape(cols[i].name);
    sink << '\n';
    for (const auto& row : table.rows()) {
        for (std::size_t i = 0; i < row.cells.size(); ++i) {
            sink << (i ? "," : "");
            if (!row.cells[i].is_missing()) sink << csv_escape(row.cells[i].str());
        }
        sink << '\n';
    }
}

FeatureTable filter_complete(const FeatureTable& table) {
    std::vector<SubjectRow> rows;
    for (const auto& row : table.rows()) {
        if (std::none_of(row.cells.begin(), row.cells.end(), [](const Cell& c) { return c.is_missing(); })) {
            rows.push_back(row);
        }
    }
    return table.with_rows(std::move(rows));
}

FeatureTable select_columns(const FeatureTable& table, std::span<const std::string> names) {
    const auto& cols = table.columns();
    std::vector<bool> wanted(cols.size(), false);
    for (const auto& name : names) {
        auto idx = table.column_index(name);
        if (!idx) throw TableError(TableErrc::unknown_column, "unknown column '" + name + "'");
        wanted[*idx] = true;
    }
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < cols.size(); ++i) {
        if (!cols[i].is_feature() || wanted[i]) keep.push_back(i);
    }

    std::vector<ColumnSpec> out_cols;
    for (auto i : keep) out_cols.push_back(cols[i]);
    std::vector<SubjectRow> out_rows;
    out_rows.reserve(table.size());
    for (const auto& row : table.rows()) {
        SubjectRow r{row.subject_id, {}};
        r.cells.reserve(keep.size());
        for (auto i : keep) r.cells.push_back(row.cells[i]);
        out_rows.push_back(std::move(r));
    }
    return FeatureTable(std::move(out_cols), std::move(out_rows));
}

double missing_fraction(const SubjectRow& row, const FeatureTable& table) {
    std::size_t total = 0, missing = 0;
    for (std::size_t i = 0; i < row.cells.size(); ++i) {
        if (i == table.id_index() || i == table.label_index()) continue;
        ++total;
        if (row.cells[i].is_missing()) ++missing;
    }
    return total == 0 ? 0.0 : static_cast<double>(missing) / static_cast<double>(total);
}

}  // namespace tabshot

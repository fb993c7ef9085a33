#pragma once

#include "tabshot/error.hpp"

#include <cstddef>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace tabshot {

enum class ColumnKind { identifier, numeric, categorical, binary, count };

std::string_view to_string(ColumnKind kind);
ColumnKind column_kind_from_string(std::string_view name);

struct ColumnSpec {
    std::string name;
    ColumnKind kind = ColumnKind::numeric;
    std::string unit;                 // numeric columns only; may be empty
    std::vector<std::string> levels;  // categorical columns only; empty accepts any text
    bool is_covariate = false;
    bool is_label = false;

    bool is_feature() const { return kind != ColumnKind::identifier && !is_label && !is_covariate; }
    bool operator==(const ColumnSpec&) const = default;
};

/// One table cell: Present(text[, value]) or Missing. Numeric-like cells keep the
/// source decimal text so rendering never goes through a float round trip.
class Cell {
public:
    static Cell missing() { return Cell{}; }
    static Cell number(std::string text, double value);
    static Cell number(double value);
    static Cell text(std::string text);

    bool is_missing() const { return !present_; }
    const std::string& str() const { return text_; }
    /// Parsed value for numeric-like cells; NaN for categorical or missing cells.
    double value() const { return value_; }

    friend bool operator==(const Cell& a, const Cell& b) {
        return a.present_ == b.present_ && a.text_ == b.text_;
    }

private:
    bool present_ = false;
    std::string text_;
    double value_ = std::numeric_limits<double>::quiet_NaN();
};

struct SubjectRow {
    std::string subject_id;
    std::vector<Cell> cells;

    bool operator==(const SubjectRow&) const = default;
};

enum class TableErrc { invalid_schema, schema_mismatch, bad_cell, duplicate_subject, unknown_column, unknown_subject };
using TableError = TypedError<TableErrc>;

/// Immutable subject-by-feature table. Columns are held in canonical order:
/// subject id, covariates, features, label (each group in schema order).
class FeatureTable {
public:
    FeatureTable() = default;
    /// Validates every invariant and reorders columns (and cells) canonically.
    FeatureTable(std::vector<ColumnSpec> columns, std::vector<SubjectRow> rows);

    const std::vector<ColumnSpec>& columns() const { return columns_; }
    const std::vector<SubjectRow>& rows() const { return rows_; }
    std::size_t size() const { return rows_.size(); }
    bool empty() const { return rows_.empty(); }

    std::size_t id_index() const { return id_index_; }
    std::size_t label_index() const { return label_index_; }
    const std::string& label_column() const { return columns_[label_index_].name; }
    const std::string& subject_id_column() const { return columns_[id_index_].name; }
    std::optional<std::size_t> column_index(std::string_view name) const;

    std::vector<std::size_t> covariate_indices() const;
    std::vector<std::size_t> feature_indices() const;
    std::vector<std::string> feature_names() const;
    std::vector<std::string> covariate_names() const;

    /// Label of a row, or nullopt when its label cell is Missing.
    std::optional<int> label(const SubjectRow& row) const;
    const SubjectRow* find(std::string_view subject_id) const;
    const SubjectRow& at(std::string_view subject_id) const;

    /// Same schema, a different row set (rows must satisfy the schema).
    FeatureTable with_rows(std::vector<SubjectRow> rows) const;
    /// Rows for the given ids, in the order given.
    FeatureTable subset(std::span<const std::string> subject_ids) const;

    bool operator==(const FeatureTable& other) const {
        return columns_ == other.columns_ && rows_ == other.rows_;
    }

private:
    std::vector<ColumnSpec> columns_;
    std::vector<SubjectRow> rows_;
    std::unordered_map<std::string, std::size_t> row_by_id_;
    std::size_t id_index_ = 0;
    std::size_t label_index_ = 0;
};

/// Parses a JSON schema document: {"columns":[{"name","kind","unit"?,"levels"?,
/// "covariate"?,"label"?}, ...]} listing every CSV column in header order.
std::vector<ColumnSpec> parse_schema(std::string_view json_text);
std::vector<ColumnSpec> load_schema_file(const std::string& path);
std::string schema_to_json(std::span<const ColumnSpec> columns);

/// Reads a CSV (RFC 4180 quoting, header row) whose header equals the schema
/// names in order. Empty, "NA" and "NaN" cells (case-insensitive) are Missing.
FeatureTable load_table(std::istream& source, std::span<const ColumnSpec> schema);
FeatureTable load_table_file(const std::string& path, std::span<const ColumnSpec> schema);

/// Writes the table in canonical column order; present cells are emitted with
/// their stored source text and Missing cells as empty fields.
void write_table(std::ostream& sink, const FeatureTable& table);

FeatureTable filter_complete(const FeatureTable& table);

/// Keeps id, every covariate, the named features and the label, all in canonical
/// order. Names that refer to id/covariate/label columns are already retained.
FeatureTable select_columns(const FeatureTable& table, std::span<const std::string> names);

/// (#Missing feature cells) / (#feature columns); covariates count as features
/// here, the id and label do not. Returns 0 for a table without feature columns.
double missing_fraction(const SubjectRow& row, const FeatureTable& table);

/// Parses CSV records, honouring RFC 4180 quotes. Exposed for reuse by
/// ranking-file readers.
std::vector<std::vector<std::string>> parse_csv(std::istream& source);
std::string csv_escape(std::string_view field);

}  // namespace tabshot

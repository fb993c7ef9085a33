#include "tabshot/synthetic.hpp"
#include "tabshot/numeric_format.hpp"
#include "tabshot/rng.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace tabshot {

namespace {

Cell decimal_cell(double value, int digits) {
    std::string text = *format_decimal(shortest_decimal(value), digits, false);
    return Cell::number(text, std::stod(text));
}

Cell integer_cell(long value) {
    return Cell::number(std::to_string(value), static_cast<double>(value));
}

std::vector<int> shuffled_labels(std::size_t n, std::size_t positives, Rng& rng) {
    std::vector<int> labels(n, 0);
    std::fill(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(std::min(positives, n)), 1);
    rng.shuffle(std::span<int>(labels));
    return labels;
}

std::string subject_id(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "S%04zu", i + 1);
    return buf;
}

std::vector<ColumnSpec> covariate_columns() {
    return {
        {"RID", ColumnKind::identifier, "", {}, false, false},
        {"AGE", ColumnKind::numeric, "", {}, true, false},
        {"PTGENDER", ColumnKind::categorical, "", {"Male", "Female"}, true, false},
        {"PTEDUCAT", ColumnKind::count, "", {}, true, false},
        {"APOE4", ColumnKind::count, "", {}, true, false},
    };
}

void push_covariates(std::vector<Cell>& cells, const std::string& id, int label, Rng& rng) {
    cells.push_back(Cell::text(id));
    cells.push_back(decimal_cell(std::clamp(73.0 + 2.0 * label + 6.5 * rng.normal(), 55.0, 92.0), 1));
    cells.push_back(Cell::text(rng.uniform() < 0.5 ? "Male" : "Female"));
    cells.push_back(integer_cell(std::lround(std::clamp(16.0 - 0.6 * label + 2.8 * rng.normal(), 6.0, 20.0))));
    const double u = rng.uniform();
    const double p1 = label ? 0.45 : 0.22, p2 = label ? 0.18 : 0.03;
    cells.push_back(integer_cell(u < p2 ? 2 : (u < p2 + p1 ? 1 : 0)));
}

}  // namespace

FeatureTable make_biomarker_cohort(std::size_t n, std::size_t positives, std::uint64_t seed) {
    struct Marker {
        const char* name;
        const char* unit;
        double cn_mean, ad_mean, sd;
        int digits;
    };
    static constexpr std::array<Marker, 11> markers{{
        {"FDG", "", 6.5, 5.3, 0.6, 4},
        {"AV45", "SUVR", 1.1, 1.42, 0.18, 4},
        {"ABETA", "pg/mL", 1200.0, 650.0, 300.0, 1},
        {"TAU", "pg/mL", 230.0, 370.0, 90.0, 2},
        {"PTAU", "pg/mL", 21.0, 37.0, 9.0, 2},
        {"WholeBrain", "mm^3", 1030000.0, 960000.0, 90000.0, 0},
        {"Hippocampus", "mm^3", 7400.0, 5800.0, 900.0, 0},
        {"Entorhinal", "mm^3", 3800.0, 2900.0, 600.0, 0},
        {"Ventricles", "mm^3", 33000.0, 48000.0, 15000.0, 0},
        {"MidTemp", "mm^3", 20500.0, 17000.0, 2400.0, 0},
        {"Fusiform", "mm^3", 18000.0, 15600.0, 2200.0, 0},
    }};
    auto columns = covariate_columns();
    for (const auto& m : markers) columns.push_back({m.name, ColumnKind::numeric, m.unit, {}, false, false});
    columns.push_back({"DX", ColumnKind::binary, "", {}, false, true});

    Rng rng(seed);
    const auto labels = shuffled_labels(n, positives, rng);
    std::vector<SubjectRow> rows;
    rows.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        SubjectRow row{subject_id(i), {}};
        push_covariates(row.cells, row.subject_id, labels[i], rng);
        for (const auto& m : markers) {
            const double mean = labels[i] ? m.ad_mean : m.cn_mean;
            row.cells.push_back(decimal_cell(std::max(0.0, mean + m.sd * rng.normal()), m.digits));
        }
        row.cells.push_back(integer_cell(labels[i]));
        rows.push_back(std::move(row));
    }
    return FeatureTable(std::move(columns), std::move(rows));
}

std::vector<std::string> roi_names(std::size_t count) {
    static constexpr std::array<const char*, 34> cortical{
        "bankssts", "caudalanteriorcingulate", "caudalmiddlefrontal", "cuneus", "entorhinal", "fusiform",
        "inferiorparietal", "inferiortemporal", "isthmuscingulate", "lateraloccipital", "lateralorbitofrontal",
        "lingual", "medialorbitofrontal", "middletemporal", "parahippocampal", "paracentral", "parsopercularis",
        "parsorbitalis", "parstriangularis", "pericalcarine", "postcentral", "posteriorcingulate", "precentral",
        "precuneus", "rostralanteriorcingulate", "rostralmiddlefrontal", "superiorfrontal", "superiorparietal",
        "superiortemporal", "supramarginal", "frontalpole", "temporalpole", "transversetemporal", "insula"};
    static constexpr std::array<const char*, 4> subcortical{"thalamus", "hippocampus", "amygdala", "caudate"};
    std::vector<std::string> names;
    for (const char* hemi : {"lh_", "rh_"}) {
        for (const char* region : cortical) names.push_back(std::string(hemi) + region);
    }
    for (const char* region : subcortical) names.push_back(region);
    while (names.size() < count) names.push_back("roi_" + std::to_string(names.size() + 1));
    names.resize(count);
    return names;
}

FeatureTable make_imaging_cohort(std::size_t n, std::size_t positives, std::size_t roi_count, std::uint64_t seed,
                                 std::size_t informative) {
    auto columns = covariate_columns();
    const auto names = roi_names(roi_count);
    for (const auto& name : names) columns.push_back({name, ColumnKind::numeric, "SUVR", {}, false, false});
    columns.push_back({"DX", ColumnKind::binary, "", {}, false, true});

    Rng rng(seed);
    const auto labels = shuffled_labels(n, positives, rng);
    std::vector<SubjectRow> rows;
    rows.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        SubjectRow row{subject_id(i), {}};
        push_covariates(row.cells, row.subject_id, labels[i], rng);
        const double burden = labels[i] ? 0.35 : 0.0;
        for (std::size_t r = 0; r < roi_count; ++r) {
            const double shift = r < informative ? burden * (1.0 - 0.04 * static_cast<double>(r)) : 0.0;
            row.cells.push_back(decimal_cell(1.0 + shift + 0.15 * rng.normal(), 4));
        }
        row.cells.push_back(integer_cell(labels[i]));
        rows.push_back(std::move(row));
    }
    return FeatureTable(std::move(columns), std::move(rows));
}

FeatureTable add_row_missingness(const FeatureTable& table, std::size_t max_missing, std::uint64_t seed) {
    std::vector<std::size_t> eligible;
    for (std::size_t c = 0; c < table.columns().size(); ++c) {
        if (c != table.id_index() && c != table.label_index()) eligible.push_back(c);
    }
    max_missing = std::clamp<std::size_t>(max_missing, 1, eligible.size());
    Rng rng(seed);
    std::vector<SubjectRow> rows = table.rows();
    for (auto& row : rows) {
        const std::size_t count = 1 + static_cast<std::size_t>(rng.below(max_missing));
        auto cols = eligible;
        rng.shuffle(std::span<std::size_t>(cols));
        for (std::size_t j = 0; j < count; ++j) row.cells[cols[j]] = Cell::missing();
    }
    return table.with_rows(std::move(rows));
}

}  // namespace tabshot

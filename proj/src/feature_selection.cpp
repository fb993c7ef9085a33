#include "tabshot/feature_selection.hpp"
#include "tabshot/hashing.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <numeric>
#include <unordered_map>
#include <unordered_set>

namespace tabshot {

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

void sort_canonical(std::vector<RankedEntry>& entries, const std::unordered_map<std::string, std::size_t>& col_index) {
    std::stable_sort(entries.begin(), entries.end(), [&](const RankedEntry& a, const RankedEntry& b) {
        if (a.score != b.score) return a.score > b.score;
        return col_index.at(a.feature) < col_index.at(b.feature);
    });
}

}  // namespace

std::string_view to_string(RankingMethod m) {
    return m == RankingMethod::lasso_path ? "lasso_path" : "external";
}

double soft_threshold(double z, double lambda) {
    if (z > lambda) return z - lambda;
    if (z < -lambda) return z + lambda;
    return 0.0;
}

double lambda_max(const DesignMatrix& z, std::span<const double> y) {
    const double n = static_cast<double>(z.rows());
    double best = 0.0;
    for (std::size_t j = 0; j < z.cols(); ++j) best = std::max(best, std::abs(dot(z.column(j), y) / n));
    return best;
}

std::size_t lasso_solve(const DesignMatrix& z, std::span<const double> y, double lambda, std::vector<double>& beta,
                        const LassoOptions& options) {
    const std::size_t n = z.rows();
    const std::size_t d = z.cols();
    // Divide (not multiply by 1/n) so that at beta = 0 rho matches lambda_max bit
    // for bit and lambda >= lambda_max yields exact zeros.
    const double dn = static_cast<double>(n);
    beta.resize(d, 0.0);
    std::vector<double> residual(y.begin(), y.end());
    for (std::size_t j = 0; j < d; ++j) {
        if (beta[j] == 0.0) continue;
        auto col = z.column(j);
        for (std::size_t i = 0; i < n; ++i) residual[i] -= col[i] * beta[j];
    }
    std::size_t sweep = 0;
    while (sweep < options.max_sweeps) {
        ++sweep;
        double max_change = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            auto col = z.column(j);
            const double rho = dot(col, residual) / dn + beta[j];
            const double updated = soft_threshold(rho, lambda);
            const double delta = updated - beta[j];
            if (delta != 0.0) {
                for (std::size_t i = 0; i < n; ++i) residual[i] -= col[i] * delta;
                beta[j] = updated;
                max_change = std::max(max_change, std::abs(delta));
            }
        }
        if (max_change < options.tolerance) break;
    }
    return sweep;
}

LassoPath lasso_path(const DesignMatrix& z, std::span<const double> y, const LassoOptions& options) {
    LassoPath path;
    const double top = lambda_max(z, y);
    const std::size_t points = std::max<std::size_t>(options.path_points, 1);
    std::vector<double> beta(z.cols(), 0.0);
    for (std::size_t t = 0; t < points; ++t) {
        double lambda = top;
        if (points > 1) {
            lambda = top * std::pow(options.min_ratio, static_cast<double>(t) / static_cast<double>(points - 1));
        }
        path.sweeps.push_back(lasso_solve(z, y, lambda, beta, options));
        path.lambdas.push_back(lambda);
        path.coefficients.push_back(beta);
    }
    return path;
}

std::string train_fingerprint(const FeatureTable& train) {
    std::uint64_t h = kFnvOffsetBasis;
    for (const auto& row : train.rows()) {
        h = fnv1a64(row.subject_id, h);
        h = fnv1a64("\n", h);
    }
    return hex64(h);
}

RankedFeatures lasso_path_rank(const FeatureTable& train, const LassoOptions& options) {
    const auto features = train.feature_indices();
    if (features.empty()) throw SelectionError(SelectionErrc::empty_feature_set, "table has no rankable features");

    std::vector<double> y;
    std::vector<const SubjectRow*> rows;
    std::size_t positives = 0;
    for (const auto& row : train.rows()) {
        auto label = train.label(row);
        if (!label) continue;
        y.push_back(static_cast<double>(*label));
        rows.push_back(&row);
        positives += static_cast<std::size_t>(*label);
    }
    const std::size_t n = y.size();
    if (positives == 0 || positives == n) {
        throw SelectionError(SelectionErrc::degenerate_labels, "LASSO ranking needs both classes in the training rows");
    }
    const double y_mean = static_cast<double>(positives) / static_cast<double>(n);
    for (double& v : y) v -= y_mean;

    // Standardize each usable column with training statistics.
    std::vector<std::size_t> usable;  // positions into `features`
    std::vector<std::vector<double>> z_cols;
    for (std::size_t f = 0; f < features.size(); ++f) {
        const auto& spec = train.columns()[features[f]];
        if (spec.kind == ColumnKind::categorical) continue;
        double sum = 0.0, sq = 0.0;
        std::size_t count = 0;
        for (const auto* row : rows) {
            const Cell& c = row->cells[features[f]];
            if (c.is_missing()) continue;
            sum += c.value();
            ++count;
        }
        if (count == 0) continue;
        const double mean = sum / static_cast<double>(count);
        for (const auto* row : rows) {
            const Cell& c = row->cells[features[f]];
            if (!c.is_missing()) sq += (c.value() - mean) * (c.value() - mean);
        }
        const double sd = std::sqrt(sq / static_cast<double>(count));
        if (!(sd > 1e-12 * std::max(1.0, std::abs(mean)))) continue;
        std::vector<double> col(n);
        for (std::size_t i = 0; i < n; ++i) {
            const Cell& c = rows[i]->cells[features[f]];
            col[i] = c.is_missing() ? 0.0 : (c.value() - mean) / sd;
        }
        usable.push_back(f);
        z_cols.push_back(std::move(col));
    }

    RankedFeatures ranked;
    ranked.method = RankingMethod::lasso_path;
    ranked.train_fingerprint = train_fingerprint(train);
    std::vector<double> score(features.size(), -std::numeric_limits<double>::infinity());

    if (!usable.empty()) {
        DesignMatrix z(n, usable.size());
        for (std::size_t j = 0; j < usable.size(); ++j) {
            // Missing cells break the unit-norm assumption; rescale so ||z_j||^2 = n.
            double norm2 = 0.0;
            for (double v : z_cols[j]) norm2 += v * v;
            const double scale = std::sqrt(static_cast<double>(n) / norm2);
            for (std::size_t i = 0; i < n; ++i) z(i, j) = z_cols[j][i] * scale;
        }
        const auto path = lasso_path(z, y, options);
        for (std::size_t j = 0; j < usable.size(); ++j) {
            score[usable[j]] = 0.0;
            for (std::size_t t = 0; t < path.lambdas.size(); ++t) {
                if (path.coefficients[t][j] != 0.0) {
                    score[usable[j]] = path.lambdas[t];
                    break;
                }
            }
        }
    }

    std::unordered_map<std::string, std::size_t> col_index;
    for (std::size_t f = 0; f < features.size(); ++f) {
        const auto& name = train.columns()[features[f]].name;
        col_index.emplace(name, features[f]);
        ranked.entries.push_back({name, score[f]});
    }
    sort_canonical(ranked.entries, col_index);
    return ranked;
}

FeatureSet select_top_p(const RankedFeatures& ranked, std::size_t p, std::span<const std::string> covariates) {
    if (p > ranked.entries.size()) {
        throw SelectionError(SelectionErrc::p_too_large, "p=" + std::to_string(p) + " exceeds the " +
                                                             std::to_string(ranked.entries.size()) + " ranked features");
    }
    FeatureSet fs;
    fs.method = ranked.method;
    fs.train_fingerprint = ranked.train_fingerprint;
    for (std::size_t i = 0; i < p; ++i) fs.selected.push_back(ranked.entries[i].feature);
    fs.always_included.assign(covariates.begin(), covariates.end());
    return fs;
}

RankedFeatures import_external_ranking(std::istream& document, const FeatureTable& schema_table) {
    std::vector<std::vector<std::string>> records;
    try {
        records = parse_csv(document);
    } catch (const TableError& e) {
        throw SelectionError(SelectionErrc::malformed_ranking, e.what());
    }
    if (records.empty() || records.front() != std::vector<std::string>{"feature", "score"}) {
        throw SelectionError(SelectionErrc::malformed_ranking, "ranking file must start with header 'feature,score'");
    }
    std::unordered_map<std::string, std::size_t> col_index;
    for (auto i : schema_table.feature_indices()) col_index.emplace(schema_table.columns()[i].name, i);

    RankedFeatures ranked;
    ranked.method = RankingMethod::external;
    std::unordered_set<std::string> seen;
    for (std::size_t r = 1; r < records.size(); ++r) {
        const auto& rec = records[r];
        if (rec.size() == 1 && rec[0].empty()) continue;
        if (rec.size() != 2) {
            throw SelectionError(SelectionErrc::malformed_ranking, "ranking line " + std::to_string(r + 1) +
                                                                       " must have two fields");
        }
        if (!col_index.count(rec[0])) {
            throw SelectionError(SelectionErrc::unknown_feature, "ranking names unknown feature '" + rec[0] + "'");
        }
        if (!seen.insert(rec[0]).second) {
            throw SelectionError(SelectionErrc::malformed_ranking, "feature '" + rec[0] + "' ranked twice");
        }
        double score = 0.0;
        const auto& s = rec[1];
        auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), score);
        if (ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(score)) {
            throw SelectionError(SelectionErrc::malformed_ranking, "bad score '" + s + "' for '" + rec[0] + "'");
        }
        if (score < 0.0 || score > 1.0) {
            throw SelectionError(SelectionErrc::score_out_of_range, "score " + s + " for '" + rec[0] +
                                                                        "' is outside [0,1]");
        }
        ranked.entries.push_back({rec[0], score});
    }
    sort_canonical(ranked.entries, col_index);
    return ranked;
}

void write_ranking_csv(std::ostream& sink, const RankedFeatures& ranked) {
    sink << "feature,score\n";
    for (const auto& e : ranked.entries) {
        sink << csv_escape(e.feature) << ',';
        if (std::isinf(e.score)) {
            sink << (e.score < 0 ? "-inf" : "inf");
        } else {
            char buf[64];
            auto [end, ec] = std::to_chars(buf, buf + sizeof buf, e.score);
            sink << std::string_view(buf, static_cast<std::size_t>(end - buf));
        }
        sink << '\n';
    }
}

std::string feature_set_to_json(const FeatureSet& fs) {
    nlohmann::ordered_json doc;
    doc["p"] = fs.p();
    doc["selected"] = fs.selected;
    doc["always_included"] = fs.always_included;
    doc["method"] = std::string(to_string(fs.method));
    doc["train_fingerprint"] = fs.train_fingerprint;
    return doc.dump(2) + "\n";
}

FeatureSet feature_set_from_json(std::string_view text) {
    try {
        auto doc = nlohmann::json::parse(text);
        FeatureSet fs;
        fs.selected = doc.at("selected").get<std::vector<std::string>>();
        fs.always_included = doc.at("always_included").get<std::vector<std::string>>();
        fs.method = doc.at("method").get<std::string>() == "external" ? RankingMethod::external
                                                                       : RankingMethod::lasso_path;
        fs.train_fingerprint = doc.value("train_fingerprint", std::string());
        if (doc.at("p").get<std::size_t>() != fs.selected.size()) {
            throw SelectionError(SelectionErrc::malformed_ranking, "feature set p does not match selected count");
        }
        return fs;
    } catch (const nlohmann::json::exception& e) {
        throw SelectionError(SelectionErrc::malformed_ranking, std::string("malformed feature set: ") + e.what());
    }
}

}  // namespace tabshot

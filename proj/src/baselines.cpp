#include "tabshot/baselines.hpp"

#include "tabshot/prompt.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <unistd.h>

namespace tabshot {

using json = nlohmann::json;

namespace {

std::uint64_t next_request_id() {
    static std::atomic<std::uint64_t> counter{0};
    return counter.fetch_add(1);
}


double softplus(double t) { return t > 0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t)); }
double sigmoid(double t) {
    if (t >= 0) return 1.0 / (1.0 + std::exp(-t));
    const double e = std::exp(t);
    return e / (1.0 + e);
}

void check_shape(const DesignMatrix& x, std::span<const int> y, std::size_t weights) {
    if (x.rows() != y.size() || x.cols() != weights) {
        throw BaselineError(BaselineErrc::shape_mismatch, "design matrix, labels and weights disagree in size");
    }
    for (int v : y) {
        if (v != 0 && v != 1) throw BaselineError(BaselineErrc::bad_labels, "labels must be 0 or 1");
    }
}

std::vector<double> linear_scores(std::span<const double> w, double b, const DesignMatrix& x) {
    std::vector<double> z(x.rows(), b);
    for (std::size_t c = 0; c < x.cols(); ++c) {
        const auto col = x.column(c);
        for (std::size_t r = 0; r < x.rows(); ++r) z[r] += w[c] * col[r];
    }
    return z;
}

}  // namespace

Standardizer Standardizer::fit(const DesignMatrix& x) {
    Standardizer s;
    s.mean.assign(x.cols(), 0.0);
    s.scale.assign(x.cols(), 1.0);
    const double n = static_cast<double>(x.rows());
    if (x.rows() == 0) return s;
    for (std::size_t c = 0; c < x.cols(); ++c) {
        const auto col = x.column(c);
        double m = 0.0;
        for (double v : col) m += v;
        m /= n;
        double ss = 0.0;
        for (double v : col) ss += (v - m) * (v - m);
        const double sd = std::sqrt(ss / n);
        s.mean[c] = m;
        s.scale[c] = sd > 1e-12 ? sd : 1.0;
    }
    return s;
}

Standardizer Standardizer::identity(std::size_t cols) {
    return {std::vector<double>(cols, 0.0), std::vector<double>(cols, 1.0)};
}

DesignMatrix Standardizer::apply(const DesignMatrix& x) const {
    DesignMatrix out(x.rows(), x.cols());
    for (std::size_t c = 0; c < x.cols(); ++c) {
        for (std::size_t r = 0; r < x.rows(); ++r) out(r, c) = (x(r, c) - mean[c]) / scale[c];
    }
    return out;
}

std::vector<double> Standardizer::apply(std::span<const double> row) const {
    std::vector<double> out(row.size());
    for (std::size_t c = 0; c < row.size(); ++c) out[c] = (row[c] - mean[c]) / scale[c];
    return out;
}

double logreg_objective(std::span<const double> weights, double bias, const DesignMatrix& x, std::span<const int> y,
                        double l2) {
    check_shape(x, y, weights.size());
    const auto z = linear_scores(weights, bias, x);
    double loss = 0.0;
    for (std::size_t r = 0; r < z.size(); ++r) {
        // -log p(y|x) = softplus(-m) with margin m = (2y-1) z
        loss += softplus(y[r] == 1 ? -z[r] : z[r]);
    }
    loss /= static_cast<double>(std::max<std::size_t>(z.size(), 1));
    double penalty = 0.0;
    for (double w : weights) penalty += w * w;
    return loss + 0.5 * l2 * penalty;
}

std::vector<double> logreg_gradient(std::span<const double> weights, double bias, const DesignMatrix& x,
                                    std::span<const int> y, double l2) {
    check_shape(x, y, weights.size());
    const auto z = linear_scores(weights, bias, x);
    const double n = static_cast<double>(std::max<std::size_t>(z.size(), 1));
    std::vector<double> residual(z.size());
    for (std::size_t r = 0; r < z.size(); ++r) residual[r] = sigmoid(z[r]) - y[r];
    std::vector<double> g(weights.size() + 1, 0.0);
    for (std::size_t c = 0; c < x.cols(); ++c) {
        const auto col = x.column(c);
        double s = 0.0;
        for (std::size_t r = 0; r < z.size(); ++r) s += residual[r] * col[r];
        g[c] = s / n + l2 * weights[c];
    }
    double sb = 0.0;
    for (double v : residual) sb += v;
    g.back() = sb / n;
    return g;
}

LogRegModel fit_logreg(const DesignMatrix& x, std::span<const int> y, const LogRegOptions& options) {
    LogRegModel model;
    model.weights.assign(x.cols(), 0.0);
    model.l2 = options.l2;
    model.stats = Standardizer::identity(x.cols());
    check_shape(x, y, model.weights.size());
    const auto positives = std::count(y.begin(), y.end(), 1);
    if (positives == 0 || positives == static_cast<std::ptrdiff_t>(y.size())) {
        throw BaselineError(BaselineErrc::single_class, "logistic regression needs both classes");
    }

    double f = logreg_objective(model.weights, model.bias, x, y, options.l2);
    if (options.record_trace) model.objective_trace.push_back(f);
    double step = 1.0;
    std::vector<double> trial_w(model.weights.size());
    for (model.iterations = 0; model.iterations < options.max_iterations; ++model.iterations) {
        const auto g = logreg_gradient(model.weights, model.bias, x, y, options.l2);
        double gnorm_inf = 0.0;
        double gnorm_sq = 0.0;
        for (double v : g) {
            gnorm_inf = std::max(gnorm_inf, std::abs(v));
            gnorm_sq += v * v;
        }
        model.gradient_norm = gnorm_inf;
        if (gnorm_inf < options.gradient_tolerance) break;

        // Armijo backtracking: accept f(w - t g) <= f(w) - t/2 ||g||^2.
        step = std::min(step * 2.0, 1e6);
        double trial_f = f;
        double trial_b = model.bias;
        for (;;) {
            for (std::size_t c = 0; c < trial_w.size(); ++c) trial_w[c] = model.weights[c] - step * g[c];
            trial_b = model.bias - step * g.back();
            trial_f = logreg_objective(trial_w, trial_b, x, y, options.l2);
            if (trial_f <= f - 0.5 * step * gnorm_sq || step < 1e-20) break;
            step *= 0.5;
        }
        if (trial_f > f) break;  // no descent possible at machine precision
        model.weights = trial_w;
        model.bias = trial_b;
        f = trial_f;
        if (options.record_trace) model.objective_trace.push_back(f);
    }
    return model;
}

BaselinePrediction predict_logreg(const LogRegModel& model, std::span<const double> raw_row) {
    if (raw_row.size() != model.weights.size()) {
        throw BaselineError(BaselineErrc::shape_mismatch, "row width differs from the model");
    }
    const auto x = model.stats.apply(raw_row);
    double z = model.bias;
    for (std::size_t c = 0; c < x.size(); ++c) z += model.weights[c] * x[c];
    BaselinePrediction out;
    out.probability = sigmoid(z);
    out.label = out.probability >= 0.5 ? 1 : 0;
    return out;
}

namespace {

std::optional<double> numeric_code(const Cell& cell, const ColumnSpec& spec) {
    if (cell.is_missing()) return std::nullopt;
    if (spec.kind == ColumnKind::categorical) {
        auto it = std::find(spec.levels.begin(), spec.levels.end(), cell.str());
        if (it == spec.levels.end()) return std::nullopt;
        return static_cast<double>(it - spec.levels.begin());
    }
    const double v = cell.value();
    if (std::isnan(v)) return std::nullopt;
    return v;
}

}  // namespace

BaselinePrediction fewshot_logreg(const FeatureTable& table, const FeatureSet& features, const ContextSet& context,
                                  const SubjectRow& target, double l2) {
    std::vector<int> y;
    std::vector<const SubjectRow*> rows;
    for (const auto& ex : context.examples) {
        rows.push_back(&table.at(ex.subject_id));
        y.push_back(ex.label);
    }
    const auto positives = static_cast<std::size_t>(std::count(y.begin(), y.end(), 1));
    BaselinePrediction majority;
    majority.majority_fallback = true;
    majority.label = positives * 2 > y.size() ? 1 : 0;
    majority.probability = y.empty() ? 0.5 : static_cast<double>(positives) / static_cast<double>(y.size());
    if (positives == 0 || positives == y.size()) return majority;

    std::vector<std::size_t> usable;
    for (auto c : prompt_columns(table, features)) {
        if (c == table.label_index()) continue;
        const auto& spec = table.columns()[c];
        bool ok = numeric_code(target.cells[c], spec).has_value();
        for (const auto* row : rows) ok = ok && numeric_code(row->cells[c], spec).has_value();
        if (ok) usable.push_back(c);
    }
    if (usable.empty()) return majority;

    DesignMatrix raw(rows.size(), usable.size());
    std::vector<double> target_row(usable.size());
    for (std::size_t j = 0; j < usable.size(); ++j) {
        const auto& spec = table.columns()[usable[j]];
        for (std::size_t r = 0; r < rows.size(); ++r) raw(r, j) = *numeric_code(rows[r]->cells[usable[j]], spec);
        target_row[j] = *numeric_code(target.cells[usable[j]], spec);
    }
    const auto stats = Standardizer::fit(raw);
    LogRegOptions options;
    options.l2 = l2;
    auto model = fit_logreg(stats.apply(raw), y, options);
    model.stats = stats;
    return predict_logreg(model, target_row);
}

BaselinePrediction ExternalBaseline::predict(const std::vector<std::vector<double>>& train_x,
                                             std::span<const int> train_y, std::span<const double> test_x) const {
    if (train_x.size() != train_y.size()) {
        throw BaselineError(BaselineErrc::shape_mismatch, "train rows and labels differ in count");
    }
    json request;
    request["train"] = json::array();
    for (std::size_t i = 0; i < train_x.size(); ++i) request["train"].push_back({{"x", train_x[i]}, {"y", train_y[i]}});
    request["test"] = {{"x", std::vector<double>(test_x.begin(), test_x.end())}};

    auto input = std::filesystem::temp_directory_path() /
                 ("tabshot_baseline_" + std::to_string(::getpid()) + "_" + std::to_string(next_request_id()) + ".json");
    {
        std::ofstream f(input);
        f << request.dump();
    }
    const std::string command = command_ + " < '" + input.string() + "'";
    std::unique_ptr<FILE, int (*)(FILE*)> pipe(::popen(command.c_str(), "r"), ::pclose);
    if (!pipe) {
        std::filesystem::remove(input);
        throw BaselineError(BaselineErrc::adapter_failure, "cannot start '" + command_ + "'");
    }
    std::string output;
    char buf[4096];
    while (auto n = std::fread(buf, 1, sizeof buf, pipe.get())) output.append(buf, n);
    const int status = ::pclose(pipe.release());
    std::filesystem::remove(input);
    if (status != 0) {
        throw BaselineError(BaselineErrc::adapter_failure,
                            "'" + command_ + "' exited with status " + std::to_string(status));
    }
    json reply = json::parse(output, nullptr, false);
    if (!reply.is_object() || !reply.contains("label") || !reply["label"].is_number_integer()) {
        throw BaselineError(BaselineErrc::adapter_failure, "adapter reply lacks an integer label");
    }
    BaselinePrediction out;
    out.label = reply["label"].get<int>();
    if (out.label != 0 && out.label != 1) {
        throw BaselineError(BaselineErrc::adapter_failure, "adapter label is not 0/1");
    }
    out.probability = out.label;
    if (reply.contains("probability") && reply["probability"].is_number()) {
        out.probability = reply["probability"].get<double>();
    }
    return out;
}

}  // namespace tabshot

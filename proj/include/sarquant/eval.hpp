#pragma once

// K-fold cross-validation, regression/threshold metrics, and the fold-loss
// report (text table and JSON).

#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <functional>
#include <mutex>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "corpus.hpp"
#include "error.hpp"
#include "model.hpp"
#include "model_file.hpp"
#include "random.hpp"

namespace sarquant {

struct FoldPlan {
    std::size_t n = 0;
    std::uint64_t seed = 0;
    std::vector<std::vector<std::size_t>> folds;

    std::size_t k() const noexcept { return folds.size(); }

    /// All indices outside fold `i`, ascending.
    std::vector<std::size_t> training_indices(std::size_t i) const {
        std::vector<char> held_out(n, 0);
        for (auto idx : folds[i]) held_out[idx] = 1;
        std::vector<std::size_t> out;
        out.reserve(n - folds[i].size());
        for (std::size_t idx = 0; idx < n; ++idx)
            if (!held_out[idx]) out.push_back(idx);
        return out;
    }
};

/// Shuffles 0..n-1 with a seeded Fisher-Yates, then cuts k contiguous folds;
/// the first n mod k folds get one extra element.
inline FoldPlan kfold_indices(std::size_t n, std::size_t k, std::uint64_t seed) {
    if (k < 2) throw ConfigError("k must be >= 2");
    if (n < k) throw DataError("cannot split " + std::to_string(n) + " examples into " + std::to_string(k) + " folds");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed);
    fisher_yates(std::span<std::size_t>(order), rng);
    FoldPlan plan{n, seed, {}};
    const std::size_t base = n / k;
    const std::size_t extra = n % k;
    std::size_t pos = 0;
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t size = base + (i < extra ? 1 : 0);
        plan.folds.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(pos),
                                order.begin() + static_cast<std::ptrdiff_t>(pos + size));
        pos += size;
    }
    return plan;
}

struct Metrics {
    std::size_t count = 0;
    double mse = 0.0;
    double mae = 0.0;
    double accuracy = 0.0;  // binarize(pred) == binarize(target)
};

inline Metrics evaluate_predictions(std::span<const double> preds, std::span<const double> targets,
                                    double threshold) {
    Metrics m;
    m.mse = mse_loss(preds, targets);
    m.count = preds.size();
    std::size_t agree = 0;
    double abs_sum = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        abs_sum += std::abs(preds[i] - targets[i]);
        agree += binarize(preds[i], threshold) == binarize(targets[i], threshold) ? 1 : 0;
    }
    m.mae = abs_sum / static_cast<double>(m.count);
    m.accuracy = static_cast<double>(agree) / static_cast<double>(m.count);
    return m;
}

inline Metrics evaluate(const RegressorParams& params, std::span<const Sample> data,
                        std::span<const std::size_t> indices, double threshold) {
    if (indices.empty()) throw DataError("cannot evaluate on an empty dataset");
    std::vector<double> preds, targets;
    preds.reserve(indices.size());
    targets.reserve(indices.size());
    for (auto i : indices) {
        preds.push_back(predict(params, data[i].features));
        targets.push_back(data[i].label);
    }
    return evaluate_predictions(preds, targets, threshold);
}

inline Metrics evaluate(const RegressorParams& params, std::span<const Sample> data, double threshold) {
    std::vector<std::size_t> all(data.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    return evaluate(params, data, all, threshold);
}

// -- report ------------------------------------------------------------------

struct CvReport {
    std::size_t k = 0;
    std::uint64_t seed = 0;
    double threshold = 0.0;
    std::vector<double> fold_losses;
    double final_loss = 0.0;  // unweighted mean of fold_losses
    std::vector<Metrics> metrics;
    nlohmann::json config = nlohmann::json::object();

    static double mean_of(std::span<const double> losses) {
        double sum = 0.0;
        for (double l : losses) sum += l;
        return sum / static_cast<double>(losses.size());
    }
};

inline constexpr const char* kFinalLossRule = "unweighted_mean_of_fold_losses";

inline nlohmann::json to_json(const CvReport& r) {
    nlohmann::json metrics = nlohmann::json::array();
    for (std::size_t i = 0; i < r.metrics.size(); ++i) {
        const auto& m = r.metrics[i];
        metrics.push_back({{"fold", i + 1}, {"n_valid", m.count}, {"mse", m.mse}, {"mae", m.mae},
                           {"accuracy", m.accuracy}});
    }
    return {{"k", r.k},
            {"seed", r.seed},
            {"fold_losses", r.fold_losses},
            {"final_loss", r.final_loss},
            {"final_loss_rule", kFinalLossRule},
            {"threshold", r.threshold},
            {"metrics", std::move(metrics)},
            {"config", r.config}};
}

inline CvReport cv_report_from_json(const nlohmann::json& j) {
    try {
        CvReport r;
        r.k = j.at("k").get<std::size_t>();
        r.seed = j.at("seed").get<std::uint64_t>();
        r.fold_losses = j.at("fold_losses").get<std::vector<double>>();
        r.final_loss = j.at("final_loss").get<double>();
        r.threshold = j.value("threshold", 0.0);
        for (const auto& m : j.at("metrics"))
            r.metrics.push_back({m.at("n_valid").get<std::size_t>(), m.at("mse").get<double>(),
                                 m.at("mae").get<double>(), m.at("accuracy").get<double>()});
        r.config = j.value("config", nlohmann::json::object());
        if (r.fold_losses.size() != r.k) throw DataError("report fold count does not match k");
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed CV report: ") + e.what());
    }
}

inline std::string render_json(const CvReport& r) { return to_json(r).dump(2) + "\n"; }

/// "Fold Number | Evaluation loss" table, one row per fold plus "Final loss",
/// losses with 9 decimals.
inline std::string render_text(const CvReport& r) {
    std::vector<std::pair<std::string, double>> rows;
    for (std::size_t i = 0; i < r.fold_losses.size(); ++i)
        rows.emplace_back("Fold " + std::to_string(i + 1), r.fold_losses[i]);
    rows.emplace_back("Final loss", r.final_loss);
    const std::string head1 = "Fold Number", head2 = "Evaluation loss";
    std::size_t w = head1.size();
    for (const auto& row : rows) w = std::max(w, row.first.size());
    auto pad = [w](const std::string& s) { return s + std::string(w - s.size(), ' '); };
    std::string out = pad(head1) + " | " + head2 + "\n";
    out += std::string(w, '-') + "-+-" + std::string(head2.size(), '-') + "\n";
    for (const auto& [name, loss] : rows) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.9f", loss);
        out += pad(name) + " | " + buf + "\n";
    }
    return out;
}

// -- cross-validation --------------------------------------------------------

/// Maps a feature vector to a level estimate.
using Predictor = std::function<double(const FeatureVector&)>;

/// Fit hook: (data, training indices, fold index) -> predictor.
using FitFn = std::function<Predictor(std::span<const Sample>, std::span<const std::size_t>, std::size_t)>;

/// Runs every fold through `fit`, evaluates on the held-out fold, and
/// assembles results in fold order. Folds execute on up to `jobs` threads.
inline CvReport cross_validate_with(std::span<const Sample> data, std::size_t k, std::uint64_t seed,
                                    double threshold, const FitFn& fit, std::size_t jobs = 1) {
    const FoldPlan plan = kfold_indices(data.size(), k, derive_seed(seed, "folds"));
    std::vector<std::optional<Metrics>> results(k);
    std::vector<std::exception_ptr> errors(k);
    std::atomic<std::size_t> next{0};

    auto worker = [&] {
        for (std::size_t i = next++; i < k; i = next++) {
            try {
                const auto train_idx = plan.training_indices(i);
                const Predictor pred = fit(data, train_idx, i);
                std::vector<double> preds, targets;
                for (auto idx : plan.folds[i]) {
                    preds.push_back(pred(data[idx].features));
                    targets.push_back(data[idx].label);
                }
                results[i] = evaluate_predictions(preds, targets, threshold);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    jobs = std::clamp<std::size_t>(jobs, 1, k);
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < jobs; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();

    for (std::size_t i = 0; i < k; ++i) {
        if (!errors[i]) continue;
        const std::string where = "fold " + std::to_string(i + 1) + ": ";
        try {
            std::rethrow_exception(errors[i]);
        } catch (const TrainingError& e) {
            throw TrainingError(where + e.what());
        } catch (const ConfigError& e) {
            throw ConfigError(where + e.what());
        } catch (const std::exception& e) {
            throw DataError(where + e.what());
        }
    }

    CvReport report;
    report.k = k;
    report.seed = seed;
    report.threshold = threshold;
    for (auto& m : results) {
        report.fold_losses.push_back(m->mse);
        report.metrics.push_back(*m);
    }
    report.final_loss = CvReport::mean_of(report.fold_losses);
    return report;
}

/// Each fold trains a fresh model whose seed is derived from (seed, fold index).
inline CvReport cross_validate(std::span<const Sample> data, const TrainConfig& config, std::size_t k,
                               std::uint64_t seed, double threshold = default_threshold(),
                               std::size_t jobs = 1) {
    config.validate();
    FitFn fit = [&config, seed](std::span<const Sample> d, std::span<const std::size_t> idx, std::size_t fold) {
        TrainConfig fold_config = config;
        fold_config.seed = derive_seed(seed, "fold-" + std::to_string(fold));
        auto result = train(d, idx, fold_config);
        return Predictor([params = std::move(result.params)](const FeatureVector& x) { return predict(params, x); });
    };
    CvReport report = cross_validate_with(data, k, seed, threshold, fit, jobs);
    report.config = to_json(config);
    report.config.erase("seed");
    return report;
}

}  // namespace sarquant

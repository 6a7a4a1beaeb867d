#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <mutex>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "sarquant/eval.hpp"

using namespace sarquant;

namespace {

std::vector<std::size_t> sizes(const FoldPlan& plan) {
    std::vector<std::size_t> s;
    for (const auto& f : plan.folds) s.push_back(f.size());
    return s;
}

std::vector<Sample> linear_data(std::size_t n, std::size_t d, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> w(d);
    for (double& x : w) x = uniform(rng, -1.0, 1.0);
    std::vector<Sample> out;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> x(d);
        double dot = 0.0;
        for (std::size_t j = 0; j < d; ++j) dot += w[j] * (x[j] = uniform(rng, -1.0, 1.0));
        out.push_back({FeatureVector(std::move(x)), sigmoid(dot)});
    }
    return out;
}

CvReport sample_report() {
    CvReport r;
    r.k = 10;
    r.seed = 7;
    r.threshold = 6.0 / 11;
    r.fold_losses = {0.039962884, 0.020321029, 0.012043999, 0.008851729, 0.010085999,
                     0.005922336, 0.006725985, 0.003881201, 0.005128059, 0.005128059};
    r.final_loss = CvReport::mean_of(r.fold_losses);
    for (double l : r.fold_losses) r.metrics.push_back({155, l, std::sqrt(l), 0.9});
    r.config = {{"epochs", 10}};
    return r;
}

}  // namespace

TEST(KFold, SizesFromDivisionRule) {
    EXPECT_EQ(sizes(kfold_indices(1554, 10, 1)),
              (std::vector<std::size_t>{156, 156, 156, 156, 155, 155, 155, 155, 155, 155}));
    EXPECT_EQ(sizes(kfold_indices(10, 10, 1)), std::vector<std::size_t>(10, 1));
    EXPECT_EQ(sizes(kfold_indices(23, 10, 1)), (std::vector<std::size_t>{3, 3, 3, 2, 2, 2, 2, 2, 2, 2}));
    EXPECT_THROW(kfold_indices(5, 10, 1), DataError);
    EXPECT_THROW(kfold_indices(5, 1, 1), ConfigError);
}

TEST(KFold, PartitionProperty) {
    Rng rng(31);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t k = 2 + uniform_below(rng, 19);
        const std::size_t n = k + uniform_below(rng, 2000);
        const auto plan = kfold_indices(n, k, rng());
        std::vector<int> seen(n, 0);
        std::size_t lo = n, hi = 0;
        for (const auto& f : plan.folds) {
            lo = std::min(lo, f.size());
            hi = std::max(hi, f.size());
            for (auto i : f) ++seen[i];
        }
        EXPECT_LE(hi - lo, 1u);
        EXPECT_TRUE(std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; }));
    }
}

TEST(KFold, DependsOnlyOnNKSeed) {
    EXPECT_EQ(kfold_indices(100, 7, 3).folds, kfold_indices(100, 7, 3).folds);
    EXPECT_NE(kfold_indices(100, 7, 3).folds, kfold_indices(100, 7, 4).folds);
}

TEST(KFold, TrainingIndicesAreComplement) {
    const auto plan = kfold_indices(50, 5, 2);
    for (std::size_t i = 0; i < 5; ++i) {
        const auto train = plan.training_indices(i);
        EXPECT_EQ(train.size() + plan.folds[i].size(), 50u);
        for (auto v : plan.folds[i]) EXPECT_FALSE(std::binary_search(train.begin(), train.end(), v));
    }
}

TEST(Evaluate, HandComputed) {
    const std::vector<double> t = {1.0, 0.0};
    const auto perfect = evaluate_predictions(t, t, 0.5);
    EXPECT_EQ(perfect.mse, 0.0);
    EXPECT_EQ(perfect.mae, 0.0);
    EXPECT_EQ(perfect.accuracy, 1.0);
    const auto m = evaluate_predictions(std::vector<double>{0.9, 0.1}, t, 0.5);
    EXPECT_NEAR(m.mse, 0.01, 1e-15);
    EXPECT_NEAR(m.mae, 0.1, 1e-15);
    EXPECT_EQ(m.accuracy, 1.0);
    EXPECT_THROW(evaluate_predictions(std::vector<double>{}, std::vector<double>{}, 0.5), DataError);
}

TEST(Evaluate, MatchesNaiveLoops) {
    Rng rng(17);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 1 + uniform_below(rng, 300);
        std::vector<double> p(n), t(n);
        for (std::size_t i = 0; i < n; ++i) {
            p[i] = uniform01(rng);
            t[i] = static_cast<double>(uniform_below(rng, 12)) / 11.0;
        }
        double se = 0.0, ae = 0.0;
        std::size_t agree = 0;
        for (std::size_t i = 0; i < n; ++i) {
            se += (p[i] - t[i]) * (p[i] - t[i]);
            ae += std::abs(p[i] - t[i]);
            agree += (p[i] >= 6.0 / 11) == (t[i] >= 6.0 / 11);
        }
        const auto m = evaluate_predictions(p, t, 6.0 / 11);
        EXPECT_NEAR(m.mse, se / n, 1e-12);
        EXPECT_NEAR(m.mae, ae / n, 1e-12);
        EXPECT_NEAR(m.accuracy, static_cast<double>(agree) / n, 1e-12);
    }
}

TEST(CrossValidate, ConstantOracleHookGivesZeroLoss) {
    std::vector<Sample> data(37, Sample{FeatureVector(std::vector<double>{1.0, 2.0}), 0.375});
    const FitFn constant = [](std::span<const Sample>, std::span<const std::size_t>, std::size_t) {
        return Predictor([](const FeatureVector&) { return 0.375; });
    };
    const auto r = cross_validate_with(data, 10, 5, 0.5, constant);
    ASSERT_EQ(r.fold_losses.size(), 10u);
    for (double l : r.fold_losses) EXPECT_EQ(l, 0.0);
    EXPECT_EQ(r.final_loss, 0.0);
}

TEST(CrossValidate, EveryExampleValidatedExactlyOnce) {
    const std::size_t n = 53;
    std::vector<Sample> data;
    for (std::size_t i = 0; i < n; ++i) data.push_back({FeatureVector(std::vector<double>{double(i)}), 0.0});
    std::mutex mu;
    std::vector<int> validated(n, 0);
    const FitFn recorder = [&](std::span<const Sample>, std::span<const std::size_t> train, std::size_t) {
        std::lock_guard lock(mu);
        std::vector<char> in_train(n, 0);
        for (auto i : train) in_train[i] = 1;
        for (std::size_t i = 0; i < n; ++i)
            if (!in_train[i]) ++validated[i];
        return Predictor([](const FeatureVector&) { return 0.0; });
    };
    cross_validate_with(data, 10, 1, 0.5, recorder, 4);
    for (int v : validated) EXPECT_EQ(v, 1);
}

TEST(CrossValidate, DeterministicAndIndependentOfJobs) {
    const auto data = linear_data(60, 4, 8);
    TrainConfig c;
    c.hidden_width = 8;
    c.epochs = 3;
    const auto a = cross_validate(data, c, 5, 42, 0.5, 1);
    const auto b = cross_validate(data, c, 5, 42, 0.5, 3);
    EXPECT_EQ(render_json(a), render_json(b));
    EXPECT_NEAR(a.final_loss, CvReport::mean_of(a.fold_losses), 1e-12);
}

TEST(CrossValidate, ErrorsNameTheFold) {
    std::vector<Sample> data(20, Sample{FeatureVector(std::vector<double>{1.0}), 0.5});
    const FitFn failing = [](std::span<const Sample>, std::span<const std::size_t>, std::size_t fold) -> Predictor {
        if (fold == 2) throw TrainingError("non-finite loss at epoch 1, batch 1");
        return [](const FeatureVector&) { return 0.5; };
    };
    try {
        cross_validate_with(data, 4, 1, 0.5, failing);
        FAIL();
    } catch (const TrainingError& e) {
        EXPECT_EQ(std::string(e.what()).rfind("fold 3: ", 0), 0u) << e.what();
    }
}

TEST(Report, TextTableShape) {
    const auto text = render_text(sample_report());
    std::istringstream in(text);
    std::string line;
    std::vector<std::string> lines;
    while (std::getline(in, line)) lines.push_back(line);
    ASSERT_EQ(lines.size(), 13u);  // header, rule, 10 folds, final
    EXPECT_EQ(lines[0], "Fold Number | Evaluation loss");
    EXPECT_EQ(lines[2], "Fold 1      | 0.039962884");
    EXPECT_EQ(lines[11], "Fold 10     | 0.005128059");
    EXPECT_EQ(lines[12].rfind("Final loss  | 0.0", 0), 0u);
    for (std::size_t i = 2; i < lines.size(); ++i) {
        const auto dot = lines[i].rfind('.');
        EXPECT_EQ(lines[i].size() - dot - 1, 9u) << lines[i];
    }
}

TEST(Report, JsonRoundTripIsByteIdentical) {
    const auto json = render_json(sample_report());
    const auto back = cv_report_from_json(nlohmann::json::parse(json));
    EXPECT_EQ(render_json(back), json);
    EXPECT_NEAR(back.final_loss, CvReport::mean_of(back.fold_losses), 1e-12);
    auto j = nlohmann::json::parse(json);
    j["k"] = 9;
    EXPECT_THROW(cv_report_from_json(j), DataError);
}

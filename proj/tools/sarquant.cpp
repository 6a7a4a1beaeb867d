// sarquant: command-line entry point for the sarcasm-level pipeline.
//
// Exit status: 0 success, 1 usage error, 2 data/validation error.

#include <unistd.h>

#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <httplib.h>
#include <json.hpp>

#include "sarquant/corpus.hpp"
#include "sarquant/eval.hpp"
#include "sarquant/features.hpp"
#include "sarquant/http.hpp"
#include "sarquant/model.hpp"
#include "sarquant/model_file.hpp"
#include "sarquant/service.hpp"

namespace sq = sarquant;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Writes via a temp file in the same directory and renames on success.
void write_file_atomic(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp." + std::to_string(::getpid());
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw sq::DataError("cannot write '" + path + "'");
        out << content;
        out.flush();
        if (!out) {
            std::filesystem::remove(tmp);
            throw sq::DataError("cannot write '" + path + "'");
        }
    }
    std::filesystem::rename(tmp, path);
}

void print_warnings(const std::vector<std::string>& warnings) {
    for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
}

struct FeatureFlags {
    std::string backend = "hashed";
    std::size_t dim = 4096;
    std::size_t ngram_min = 3;
    std::size_t ngram_max = 5;
    std::string embeddings;
    bool strip_diacritics = false;
    bool strip_tatweel = false;
    bool collapse_whitespace = false;

    void add_to(CLI::App& app) {
        app.add_option("--backend", backend, "Feature backend")->check(CLI::IsMember({"hashed", "embeddings"}));
        app.add_option("--dim", dim, "Hashed feature dimension D");
        app.add_option("--ngram-min", ngram_min, "Shortest character n-gram");
        app.add_option("--ngram-max", ngram_max, "Longest character n-gram");
        app.add_option("--embeddings", embeddings, "Embeddings file (id<TAB>v1,...,vD) for --backend embeddings");
        app.add_flag("--strip-diacritics", strip_diacritics, "Remove Arabic diacritics before hashing");
        app.add_flag("--strip-tatweel", strip_tatweel, "Remove tatweel (U+0640) before hashing");
        app.add_flag("--collapse-whitespace", collapse_whitespace, "Collapse whitespace runs before hashing");
    }

    sq::FeatureConfig config() const {
        sq::FeatureConfig c;
        c.backend = sq::parse_backend(backend);
        c.dimension = dim;
        c.ngram_min = ngram_min;
        c.ngram_max = ngram_max;
        c.normalize = {strip_diacritics, strip_tatweel, collapse_whitespace};
        if (c.backend == sq::FeatureBackend::embeddings && embeddings.empty())
            throw UsageError("--backend embeddings requires --embeddings FILE");
        if (c.backend == sq::FeatureBackend::hashed && !embeddings.empty())
            throw UsageError("--embeddings is only valid with --backend embeddings");
        return c;
    }
};

void add_train_flags(CLI::App& app, sq::TrainConfig& c) {
    app.add_option("--batch-size", c.batch_size, "Mini-batch size B");
    app.add_option("--epochs", c.epochs, "Training epochs E");
    app.add_option("--lr", c.learning_rate, "Adam learning rate");
    app.add_option("--dropout", c.dropout, "Dropout rate p on hidden activations");
    app.add_option("--hidden", c.hidden_width, "Hidden layer width H");
    app.add_option("--layers", c.hidden_layers, "Number of hidden layers L");
    app.add_option("--beta1", c.beta1, "Adam beta1");
    app.add_option("--beta2", c.beta2, "Adam beta2");
    app.add_option("--adam-eps", c.epsilon, "Adam epsilon");
}

std::vector<sq::Sample> build_samples(const std::vector<sq::LabeledExample>& corpus, sq::FeatureConfig& fc,
                                      const std::string& embeddings_path) {
    std::optional<sq::EmbeddingTable> table;
    if (fc.backend == sq::FeatureBackend::embeddings) {
        table = sq::load_embedding_table(embeddings_path);
        fc.dimension = table->dimension;
    }
    fc.validate();
    std::vector<sq::Sample> samples;
    samples.reserve(corpus.size());
    for (const auto& ex : corpus)
        samples.push_back({sq::featurize(ex, fc, table ? &*table : nullptr), ex.label});
    return samples;
}

double resolve_threshold(const CLI::App& app, double flag_value, std::size_t quorum) {
    return app.count("--threshold") ? flag_value : sq::default_threshold(quorum);
}

std::string format_level(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9f", v);
    return buf;
}

httplib::Server* g_server = nullptr;

extern "C" void handle_stop_signal(int) {
    if (g_server) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sarcasm level quantification: aggregate annotator votes, train and evaluate a regressor, "
                 "and collect annotations"};
    app.option_defaults()->always_capture_default();
    app.require_subcommand(1);

    std::size_t quorum = sq::kDefaultQuorum;
    double threshold = sq::default_threshold();
    std::uint64_t seed = 0;

    // aggregate
    auto* aggregate = app.add_subcommand("aggregate", "Votes file -> aggregated corpus (label = yes votes / quorum)");
    std::string agg_in, agg_out;
    aggregate->add_option("--in", agg_in, "Votes JSON Lines file")->required();
    aggregate->add_option("--out", agg_out, "Aggregated corpus JSON Lines file")->required();
    aggregate->add_option("--quorum", quorum, "Annotators per sentence A");

    // stats
    auto* stats = app.add_subcommand("stats", "Corpus statistics: size, categories, level histogram");
    std::string stats_in;
    stats->add_option("--in", stats_in, "Aggregated corpus file")->required();
    stats->add_option("--quorum", quorum, "Annotators per sentence A (histogram bins A+1)");
    stats->add_option("--threshold", threshold, "Binary sarcastic threshold (default: strict majority of A)");

    // train
    auto* train = app.add_subcommand("train", "Train the regressor on a corpus");
    std::string train_in, train_out, train_history;
    sq::TrainConfig train_cfg;
    FeatureFlags train_features;
    train->add_option("--in", train_in, "Aggregated corpus file")->required();
    train->add_option("--out", train_out, "Model JSON output")->required();
    train->add_option("--history", train_history, "Optional per-epoch loss history JSON output");
    train->add_option("--seed", seed, "Master random seed");
    add_train_flags(*train, train_cfg);
    train_features.add_to(*train);

    // cv
    auto* cv = app.add_subcommand("cv", "K-fold cross-validation; text table to stdout, JSON report to --out");
    std::string cv_in, cv_out;
    std::size_t cv_k = 10, cv_jobs = 1;
    sq::TrainConfig cv_cfg;
    FeatureFlags cv_features;
    cv->add_option("--in", cv_in, "Aggregated corpus file")->required();
    cv->add_option("--out", cv_out, "JSON report output");
    cv->add_option("--k", cv_k, "Number of folds K");
    cv->add_option("--seed", seed, "Master random seed");
    cv->add_option("--jobs", cv_jobs, "Folds trained concurrently");
    cv->add_option("--threshold", threshold, "Threshold for the accuracy metric (default: strict majority of A)");
    cv->add_option("--quorum", quorum, "Annotators per sentence A");
    add_train_flags(*cv, cv_cfg);
    cv_features.add_to(*cv);

    // predict
    auto* predict = app.add_subcommand("predict", "Predict sarcasm levels with a trained model");
    std::string pred_model, pred_in, pred_corpus, pred_embeddings;
    std::vector<std::string> pred_texts;
    predict->add_option("--model", pred_model, "Model JSON file")->required();
    predict->add_option("--text", pred_texts, "Sentence to score (repeatable)");
    predict->add_option("--in", pred_in, "Plain-text file, one sentence per line");
    predict->add_option("--corpus", pred_corpus, "Corpus JSON Lines file; prints id<TAB>level");
    predict->add_option("--embeddings", pred_embeddings, "Embeddings file for models trained on embeddings");

    // gradcheck
    auto* gradcheck = app.add_subcommand("gradcheck", "Compare analytic and finite-difference gradients");
    std::size_t gc_nets = 20, gc_dim = 6, gc_hidden = 4, gc_layers = 2;
    double gc_h = 1e-5, gc_tol = 1e-4;
    gradcheck->add_option("--nets", gc_nets, "Random networks to check");
    gradcheck->add_option("--dim", gc_dim, "Input dimension");
    gradcheck->add_option("--hidden", gc_hidden, "Hidden width");
    gradcheck->add_option("--layers", gc_layers, "Hidden layers");
    gradcheck->add_option("--step", gc_h, "Central-difference step");
    gradcheck->add_option("--tol", gc_tol, "Maximum allowed relative error");
    gradcheck->add_option("--seed", seed, "Master random seed");

    // serve
    auto* serve = app.add_subcommand("serve", "Run the annotation collection HTTP service");
    std::string serve_host = "0.0.0.0", serve_dir = "annotate-data", serve_web_root;
    int serve_port = 8080;
    serve->add_option("--host", serve_host, "Listen address");
    serve->add_option("--port", serve_port, "Listen port");
    serve->add_option("--data-dir", serve_dir, "Directory holding the event log")->envname("SARQUANT_DATA_DIR");
    serve->add_option("--quorum", quorum, "Distinct annotators required per sentence");
    serve->add_option("--web-root", serve_web_root, "Optional directory of static web client assets");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (quorum == 0) throw UsageError("--quorum must be >= 1");

        if (*aggregate) {
            std::vector<std::string> warnings;
            const auto votes = sq::read_votes_file(agg_in, quorum, &warnings);
            print_warnings(warnings);
            std::ostringstream out;
            for (const auto& rec : votes) out << sq::format_corpus_line(sq::to_labeled(rec)) << '\n';
            write_file_atomic(agg_out, out.str());
            std::cout << "aggregated " << votes.size() << " records into " << agg_out << '\n';
        } else if (*stats) {
            std::vector<std::string> warnings;
            const auto corpus = sq::read_corpus_file(stats_in, &warnings);
            print_warnings(warnings);
            const double t = resolve_threshold(*stats, threshold, quorum);
            const auto s = sq::corpus_stats(corpus, t, quorum);
            std::cout << "N\t" << s.total << '\n';
            for (auto c : sq::kAllCategories) std::cout << "category\t" << sq::to_string(c) << '\t' << s.count(c) << '\n';
            for (std::size_t k = 0; k < s.level_histogram.size(); ++k)
                std::cout << "level\t" << sq::format_label(static_cast<double>(k) / static_cast<double>(quorum), quorum)
                          << '\t' << s.level_histogram[k] << '\n';
            std::cout << "sarcastic\t" << s.sarcastic << "\tthreshold " << format_level(t) << '\n';
        } else if (*train) {
            std::vector<std::string> warnings;
            const auto corpus = sq::read_corpus_file(train_in, &warnings);
            print_warnings(warnings);
            auto fc = train_features.config();
            train_cfg.seed = sq::derive_seed(seed, "train");
            const auto samples = build_samples(corpus, fc, train_features.embeddings);
            const auto result = sq::train(samples, train_cfg);
            for (std::size_t e = 0; e < result.loss_history.size(); ++e)
                std::cout << "epoch " << (e + 1) << "\tloss " << format_level(result.loss_history[e]) << '\n';
            write_file_atomic(train_out, sq::to_json(sq::ModelFile{result.params, fc, train_cfg}).dump() + "\n");
            if (!train_history.empty())
                write_file_atomic(train_history, nlohmann::json{{"loss_history", result.loss_history}}.dump(2) + "\n");
        } else if (*cv) {
            std::vector<std::string> warnings;
            const auto corpus = sq::read_corpus_file(cv_in, &warnings);
            print_warnings(warnings);
            auto fc = cv_features.config();
            const auto samples = build_samples(corpus, fc, cv_features.embeddings);
            const double t = resolve_threshold(*cv, threshold, quorum);
            auto report = sq::cross_validate(samples, cv_cfg, cv_k, sq::derive_seed(seed, "cv"), t, cv_jobs);
            report.seed = seed;
            report.config["features"] = sq::to_json(fc);
            std::cout << sq::render_text(report);
            if (!cv_out.empty()) write_file_atomic(cv_out, sq::render_json(report));
        } else if (*predict) {
            const auto model = sq::load_model(pred_model);
            std::optional<sq::EmbeddingTable> table;
            if (model.features.backend == sq::FeatureBackend::embeddings) {
                if (pred_embeddings.empty() || pred_corpus.empty())
                    throw UsageError("model uses embeddings: --corpus and --embeddings are required");
                table = sq::load_embedding_table(pred_embeddings);
            } else if (!pred_embeddings.empty()) {
                throw UsageError("model uses hashed features; --embeddings does not apply");
            }
            if (pred_texts.empty() && pred_in.empty() && pred_corpus.empty())
                throw UsageError("nothing to predict: pass --text, --in or --corpus");
            auto score = [&](const sq::LabeledExample& ex) {
                return sq::predict(model.params, sq::featurize(ex, model.features, table ? &*table : nullptr));
            };
            std::ostringstream out;
            if (table && (!pred_texts.empty() || !pred_in.empty()))
                throw UsageError("model uses embeddings; raw text cannot be featurized");
            for (const auto& text : pred_texts) out << format_level(score({"", text, {}, 0.0})) << '\n';
            if (!pred_in.empty()) {
                std::ifstream in(pred_in, std::ios::binary);
                if (!in) throw sq::DataError("cannot open '" + pred_in + "'");
                std::string line;
                while (std::getline(in, line)) {
                    if (!line.empty() && line.back() == '\r') line.pop_back();
                    out << format_level(score({"", line, {}, 0.0})) << '\n';
                }
            }
            if (!pred_corpus.empty()) {
                // Labels are irrelevant here; accept sentence files without them.
                std::ifstream in(pred_corpus, std::ios::binary);
                if (!in) throw sq::DataError("cannot open '" + pred_corpus + "'");
                std::vector<std::string> warnings;
                const auto sentences = sq::annotate::parse_sentences(
                    std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>()), &warnings);
                print_warnings(warnings);
                for (const auto& s : sentences)
                    out << s.id << '\t' << format_level(score({s.id, s.text, s.category, 0.0})) << '\n';
            }
            std::cout << out.str();
        } else if (*gradcheck) {
            if (gc_layers < 1 || gc_dim < 1 || gc_hidden < 1) throw UsageError("dimensions must be >= 1");
            sq::Rng rng(sq::derive_seed(seed, "gradcheck"));
            double worst = 0.0;
            for (std::size_t n = 0; n < gc_nets; ++n) {
                const auto params = sq::init_model(gc_dim, gc_hidden, gc_layers, rng());
                std::vector<double> x(gc_dim);
                for (double& v : x) v = sq::uniform(rng, -1.0, 1.0);
                const double y = sq::uniform01(rng);
                const auto r = sq::grad_check(params, x, y, gc_h);
                worst = std::max(worst, r.max_relative_error);
                std::cout << "net " << (n + 1) << "\tmax_rel_error " << r.max_relative_error << "\tmax_abs_error "
                      << r.max_absolute_error << '\n';
            }
            std::cout << "worst\t" << worst << "\ttolerance " << gc_tol << '\n';
            if (worst >= gc_tol) {
                std::cerr << "gradient check failed\n";
                return kExitData;
            }
        } else if (*serve) {
            sq::annotate::Service service(serve_dir, quorum);
            httplib::Server server;
            server.new_task_queue = [] { return new httplib::ThreadPool(64); };
            sq::annotate::mount_api(server, service);
            if (!serve_web_root.empty() && !server.set_mount_point("/", serve_web_root))
                throw UsageError("--web-root '" + serve_web_root + "' is not a directory");
            g_server = &server;
            std::signal(SIGINT, handle_stop_signal);
            std::signal(SIGTERM, handle_stop_signal);
            const auto p = service.progress();
            std::cerr << "serving on " << serve_host << ':' << serve_port << " (quorum " << quorum << ", "
                      << p.total << " sentences, " << p.total_votes << " votes, log " << service.log_path().string()
                      << ")\n";
            if (!server.listen(serve_host, serve_port)) {
                std::cerr << "error: cannot listen on " << serve_host << ':' << serve_port << '\n';
                return kExitUsage;
            }
        }
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const sq::ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitData;
    }
    return 0;
}

#pragma once

// Multi-annotator sarcasm corpora: vote records, aggregated sarcasm levels,
// label strings ("k/A", "0", "1"), and corpus statistics.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "error.hpp"

namespace sarquant {

inline constexpr std::size_t kDefaultQuorum = 11;

enum class Category { politics, entertainment, products_services, sports, unknown };

inline constexpr std::array<Category, 5> kAllCategories = {
    Category::politics, Category::entertainment, Category::products_services,
    Category::sports, Category::unknown};

constexpr std::string_view to_string(Category c) noexcept {
    switch (c) {
        case Category::politics: return "politics";
        case Category::entertainment: return "entertainment";
        case Category::products_services: return "products_services";
        case Category::sports: return "sports";
        case Category::unknown: break;
    }
    return "unknown";
}

/// Unrecognized names map to `unknown`; `recognized` reports which case hit.
inline Category parse_category(std::string_view name, bool* recognized = nullptr) {
    for (Category c : kAllCategories) {
        if (name == to_string(c)) {
            if (recognized) *recognized = true;
            return c;
        }
    }
    if (recognized) *recognized = false;
    return Category::unknown;
}

struct VoteRecord {
    std::string id;
    std::string text;
    Category category = Category::unknown;
    std::vector<std::uint8_t> votes;  // 1 = sarcastic

    std::size_t yes_count() const noexcept {
        return static_cast<std::size_t>(std::count(votes.begin(), votes.end(), std::uint8_t{1}));
    }
};

struct LabeledExample {
    std::string id;
    std::string text;
    Category category = Category::unknown;
    double label = 0.0;
};

struct CorpusStats {
    std::size_t total = 0;
    std::array<std::size_t, kAllCategories.size()> category_counts{};
    std::vector<std::size_t> level_histogram;  // bin k holds labels nearest k/A
    std::size_t sarcastic = 0;
    double threshold = 0.0;

    std::size_t count(Category c) const noexcept {
        return category_counts[static_cast<std::size_t>(c)];
    }
};

// -- aggregation -------------------------------------------------------------

/// Fraction of annotators who judged the sentence sarcastic.
template <typename Vote>
double aggregate_label(std::span<const Vote> votes) {
    if (votes.empty()) throw DataError("cannot aggregate an empty vote sequence");
    std::size_t yes = 0;
    for (std::size_t i = 0; i < votes.size(); ++i) {
        const auto v = static_cast<long long>(votes[i]);
        if (v != 0 && v != 1)
            throw DataError("non-binary vote at position " + std::to_string(i + 1));
        yes += static_cast<std::size_t>(v);
    }
    return static_cast<double>(yes) / static_cast<double>(votes.size());
}

inline double aggregate_label(const std::vector<std::uint8_t>& votes) {
    return aggregate_label(std::span<const std::uint8_t>(votes));
}

inline double aggregate_label(std::initializer_list<int> votes) {
    return aggregate_label(std::span<const int>(votes.begin(), votes.size()));
}

/// 1 iff level >= threshold.
constexpr int binarize(double level, double threshold) noexcept {
    return level >= threshold ? 1 : 0;
}

inline double default_threshold(std::size_t quorum = kDefaultQuorum) {
    return static_cast<double>(quorum / 2 + 1) / static_cast<double>(quorum);
}

// -- label strings -----------------------------------------------------------

namespace detail {

inline bool parse_uint(std::string_view s, std::size_t& out) {
    if (s.empty()) return false;
    const auto* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(s.data(), end, out);
    return ec == std::errc{} && ptr == end;
}

}  // namespace detail

/// Parses "k/A", "0" or "1". The denominator must equal the quorum.
inline double parse_label_string(std::string_view s, std::size_t quorum = kDefaultQuorum) {
    const std::string shown(s);
    if (quorum == 0) throw ConfigError("quorum must be positive");
    const auto slash = s.find('/');
    if (slash == std::string_view::npos) {
        if (s == "0") return 0.0;
        if (s == "1") return 1.0;
        throw DataError("malformed label '" + shown + "': expected k/" +
                        std::to_string(quorum) + ", 0 or 1");
    }
    std::size_t k = 0, denom = 0;
    if (!detail::parse_uint(s.substr(0, slash), k) || !detail::parse_uint(s.substr(slash + 1), denom))
        throw DataError("malformed label '" + shown + "'");
    if (denom != quorum)
        throw DataError("label '" + shown + "' has denominator " + std::to_string(denom) +
                        ", quorum is " + std::to_string(quorum));
    if (k > quorum) throw DataError("label '" + shown + "' exceeds 1 (k > quorum)");
    return static_cast<double>(k) / static_cast<double>(quorum);
}

/// Inverse of parse_label_string for levels on the k/A grid.
inline std::string format_label(double level, std::size_t quorum = kDefaultQuorum) {
    const double scaled = level * static_cast<double>(quorum);
    const auto k = static_cast<long long>(std::llround(scaled));
    if (k < 0 || k > static_cast<long long>(quorum) || std::abs(scaled - static_cast<double>(k)) > 1e-9)
        throw DataError("level " + std::to_string(level) + " is not a multiple of 1/" +
                        std::to_string(quorum));
    if (k == 0) return "0";
    if (k == static_cast<long long>(quorum)) return "1";
    return std::to_string(k) + "/" + std::to_string(quorum);
}

// -- records -----------------------------------------------------------------

namespace detail {

inline std::string at_line(std::size_t line_no) {
    return line_no ? "line " + std::to_string(line_no) + ": " : std::string{};
}

inline const nlohmann::json& require(const nlohmann::json& obj, const char* key,
                                     std::size_t line_no) {
    auto it = obj.find(key);
    if (it == obj.end())
        throw DataError(at_line(line_no) + "missing field '" + key + "'");
    return *it;
}

inline std::string require_string(const nlohmann::json& obj, const char* key,
                                  std::size_t line_no) {
    const auto& v = require(obj, key, line_no);
    if (!v.is_string())
        throw DataError(at_line(line_no) + "field '" + key + "' must be a string");
    return v.get<std::string>();
}

inline nlohmann::json parse_object(std::string_view line, std::size_t line_no) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
        throw DataError(at_line(line_no) + "malformed JSON: " + e.what());
    }
    if (!j.is_object()) throw DataError(at_line(line_no) + "expected a JSON object");
    return j;
}

inline Category read_category(const nlohmann::json& obj, std::size_t line_no,
                              std::vector<std::string>* warnings) {
    const auto name = require_string(obj, "category", line_no);
    bool recognized = false;
    const Category c = parse_category(name, &recognized);
    if (!recognized && warnings)
        warnings->push_back(at_line(line_no) + "unknown category '" + name + "', using 'unknown'");
    return c;
}

}  // namespace detail

/// One line of a votes file. `line_no` (1-based, 0 = unknown) prefixes errors.
inline VoteRecord parse_vote_record(std::string_view line, std::size_t quorum = kDefaultQuorum,
                                    std::size_t line_no = 0,
                                    std::vector<std::string>* warnings = nullptr) {
    using detail::at_line;
    const auto j = detail::parse_object(line, line_no);
    VoteRecord rec;
    rec.id = detail::require_string(j, "id", line_no);
    if (rec.id.empty()) throw DataError(at_line(line_no) + "empty id");
    rec.text = detail::require_string(j, "text", line_no);
    rec.category = detail::read_category(j, line_no, warnings);
    const auto& votes = detail::require(j, "votes", line_no);
    if (!votes.is_array()) throw DataError(at_line(line_no) + "field 'votes' must be an array");
    if (votes.size() != quorum)
        throw DataError(at_line(line_no) + "vote count " + std::to_string(votes.size()) +
                        " != quorum " + std::to_string(quorum));
    rec.votes.reserve(votes.size());
    for (std::size_t i = 0; i < votes.size(); ++i) {
        const auto& v = votes[i];
        if (!v.is_number_integer() || (v.get<long long>() != 0 && v.get<long long>() != 1))
            throw DataError(at_line(line_no) + "non-binary vote at position " + std::to_string(i + 1));
        rec.votes.push_back(static_cast<std::uint8_t>(v.get<long long>()));
    }
    return rec;
}

inline LabeledExample to_labeled(const VoteRecord& rec) {
    return {rec.id, rec.text, rec.category, aggregate_label(rec.votes)};
}

/// One line of an aggregated corpus file.
inline LabeledExample parse_labeled_example(std::string_view line, std::size_t line_no = 0,
                                            std::vector<std::string>* warnings = nullptr) {
    using detail::at_line;
    const auto j = detail::parse_object(line, line_no);
    LabeledExample ex;
    ex.id = detail::require_string(j, "id", line_no);
    if (ex.id.empty()) throw DataError(at_line(line_no) + "empty id");
    ex.text = detail::require_string(j, "text", line_no);
    ex.category = detail::read_category(j, line_no, warnings);
    const auto& label = detail::require(j, "label", line_no);
    if (!label.is_number()) throw DataError(at_line(line_no) + "field 'label' must be a number");
    ex.label = label.get<double>();
    if (!(ex.label >= 0.0 && ex.label <= 1.0))
        throw DataError(at_line(line_no) + "label outside [0,1]");
    return ex;
}

inline nlohmann::json to_json(const LabeledExample& ex) {
    return {{"id", ex.id}, {"text", ex.text}, {"category", to_string(ex.category)}, {"label", ex.label}};
}

/// Serialized doubles use shortest round-trip form, so labels reparse bit-exactly.
inline std::string format_corpus_line(const LabeledExample& ex) {
    return to_json(ex).dump();
}

// -- files -------------------------------------------------------------------

namespace detail {

template <typename Record, typename ParseLine>
std::vector<Record> read_jsonl(std::istream& in, ParseLine&& parse) {
    std::vector<Record> out;
    std::unordered_set<std::string> seen;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        Record rec = parse(line, line_no);
        if (!seen.insert(rec.id).second)
            throw DataError(at_line(line_no) + "duplicate id '" + rec.id + "'");
        out.push_back(std::move(rec));
    }
    return out;
}

inline std::ifstream open_input(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path + "'");
    return in;
}

}  // namespace detail

inline std::vector<VoteRecord> read_votes(std::istream& in, std::size_t quorum = kDefaultQuorum,
                                          std::vector<std::string>* warnings = nullptr) {
    return detail::read_jsonl<VoteRecord>(in, [&](std::string_view line, std::size_t n) {
        return parse_vote_record(line, quorum, n, warnings);
    });
}

inline std::vector<VoteRecord> read_votes_file(const std::string& path,
                                               std::size_t quorum = kDefaultQuorum,
                                               std::vector<std::string>* warnings = nullptr) {
    auto in = detail::open_input(path);
    return read_votes(in, quorum, warnings);
}

inline std::vector<LabeledExample> read_corpus(std::istream& in,
                                               std::vector<std::string>* warnings = nullptr) {
    return detail::read_jsonl<LabeledExample>(in, [&](std::string_view line, std::size_t n) {
        return parse_labeled_example(line, n, warnings);
    });
}

inline std::vector<LabeledExample> read_corpus_file(const std::string& path,
                                                    std::vector<std::string>* warnings = nullptr) {
    auto in = detail::open_input(path);
    return read_corpus(in, warnings);
}

inline void write_corpus(std::ostream& out, std::span<const LabeledExample> corpus) {
    for (const auto& ex : corpus) out << format_corpus_line(ex) << '\n';
}

// -- statistics --------------------------------------------------------------

inline CorpusStats corpus_stats(std::span<const LabeledExample> corpus, double threshold,
                                std::size_t quorum = kDefaultQuorum) {
    if (corpus.empty()) throw DataError("corpus is empty");
    CorpusStats s;
    s.total = corpus.size();
    s.threshold = threshold;
    s.level_histogram.assign(quorum + 1, 0);
    for (const auto& ex : corpus) {
        ++s.category_counts[static_cast<std::size_t>(ex.category)];
        const auto bin = static_cast<std::size_t>(std::llround(ex.label * static_cast<double>(quorum)));
        ++s.level_histogram[std::min(bin, quorum)];
        s.sarcastic += static_cast<std::size_t>(binarize(ex.label, threshold));
    }
    return s;
}

}  // namespace sarquant

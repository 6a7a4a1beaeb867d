#pragma once

// Sentence -> fixed-length dense vector. Two backends: hashed character
// n-grams (FNV-1a over UTF-8 bytes, index = hash mod D, unit L2 norm) and an
// imported per-id embedding table produced by an external frozen encoder.

#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <istream>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "corpus.hpp"
#include "error.hpp"
#include "hash.hpp"

namespace sarquant {

enum class FeatureBackend { hashed, embeddings };

constexpr std::string_view to_string(FeatureBackend b) noexcept {
    return b == FeatureBackend::hashed ? "hashed" : "embeddings";
}

inline FeatureBackend parse_backend(std::string_view s) {
    if (s == "hashed") return FeatureBackend::hashed;
    if (s == "embeddings") return FeatureBackend::embeddings;
    throw ConfigError("unknown feature backend '" + std::string(s) + "'");
}

struct NormalizeOptions {
    bool strip_diacritics = false;  // Arabic harakat U+064B..U+0652, dagger alef U+0670
    bool strip_tatweel = false;     // U+0640
    bool collapse_whitespace = false;

    bool any() const noexcept { return strip_diacritics || strip_tatweel || collapse_whitespace; }
};

struct FeatureConfig {
    FeatureBackend backend = FeatureBackend::hashed;
    std::size_t dimension = 4096;
    std::size_t ngram_min = 3;
    std::size_t ngram_max = 5;
    NormalizeOptions normalize;

    void validate() const {
        if (dimension < 1) throw ConfigError("feature dimension must be >= 1");
        if (ngram_min < 1) throw ConfigError("n-gram minimum must be >= 1");
        if (ngram_min > ngram_max) throw ConfigError("n-gram minimum exceeds maximum");
    }
};

struct FeatureVector {
    std::vector<double> values;

    FeatureVector() = default;
    explicit FeatureVector(std::size_t dim) : values(dim, 0.0) {}
    explicit FeatureVector(std::vector<double> v) : values(std::move(v)) {}

    std::size_t size() const noexcept { return values.size(); }
    std::span<const double> view() const noexcept { return values; }
    double operator[](std::size_t i) const noexcept { return values[i]; }

    friend bool operator==(const FeatureVector&, const FeatureVector&) = default;
};

// -- UTF-8 -------------------------------------------------------------------

namespace utf8 {

/// Byte offsets of each code point start, plus a trailing end offset.
/// Invalid lead bytes are treated as single-byte code points.
inline std::vector<std::size_t> boundaries(std::string_view s) {
    std::vector<std::size_t> out;
    out.reserve(s.size() + 1);
    std::size_t i = 0;
    while (i < s.size()) {
        out.push_back(i);
        const auto b = static_cast<unsigned char>(s[i]);
        std::size_t len = 1;
        if (b >= 0xF0 && b < 0xF8) len = 4;
        else if (b >= 0xE0) len = (b < 0xF0) ? 3 : 1;
        else if (b >= 0xC0) len = 2;
        std::size_t j = 1;
        while (j < len && i + j < s.size() &&
               (static_cast<unsigned char>(s[i + j]) & 0xC0) == 0x80)
            ++j;
        i += j;
    }
    out.push_back(s.size());
    return out;
}

/// Decodes the code point at [first, last); assumes boundaries() output.
inline char32_t decode(std::string_view s, std::size_t first, std::size_t last) {
    const auto b0 = static_cast<unsigned char>(s[first]);
    const std::size_t len = last - first;
    if (len == 1) return b0;
    char32_t cp = (len == 2) ? (b0 & 0x1F) : (len == 3) ? (b0 & 0x0F) : (b0 & 0x07);
    for (std::size_t i = first + 1; i < last; ++i)
        cp = (cp << 6) | (static_cast<unsigned char>(s[i]) & 0x3F);
    return cp;
}

}  // namespace utf8

// -- operations --------------------------------------------------------------

/// With all options off the input is returned byte-for-byte.
inline std::string normalize_text(std::string_view text, const NormalizeOptions& opts) {
    if (!opts.any()) return std::string(text);
    const auto cuts = utf8::boundaries(text);
    std::string out;
    out.reserve(text.size());
    bool in_space = false;
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
        const char32_t cp = utf8::decode(text, cuts[i], cuts[i + 1]);
        if (opts.strip_tatweel && cp == U'\u0640') continue;
        if (opts.strip_diacritics && ((cp >= U'\u064B' && cp <= U'\u0652') || cp == U'\u0670')) continue;
        if (opts.collapse_whitespace) {
            const bool ws = cp == U' ' || cp == U'\t' || cp == U'\n' || cp == U'\r' ||
                            cp == U'\f' || cp == U'\v';
            if (ws) {
                if (!in_space) out.push_back(' ');
                in_space = true;
                continue;
            }
            in_space = false;
        }
        out.append(text.substr(cuts[i], cuts[i + 1] - cuts[i]));
    }
    return out;
}

/// All contiguous code-point n-grams for n in [n_min, n_max], shortest n first,
/// then by start position. Grams are views into `text`.
inline std::vector<std::string_view> char_ngrams(std::string_view text, std::size_t n_min,
                                                 std::size_t n_max) {
    if (n_min < 1) throw ConfigError("n-gram minimum must be >= 1");
    std::vector<std::string_view> grams;
    const auto cuts = utf8::boundaries(text);
    const std::size_t count = cuts.size() - 1;
    for (std::size_t n = n_min; n <= n_max && n <= count; ++n)
        for (std::size_t start = 0; start + n <= count; ++start)
            grams.push_back(text.substr(cuts[start], cuts[start + n] - cuts[start]));
    return grams;
}

inline FeatureVector hash_featurize(std::string_view text, const FeatureConfig& config) {
    config.validate();
    FeatureVector v(config.dimension);
    const std::string normalized = normalize_text(text, config.normalize);
    for (auto gram : char_ngrams(normalized, config.ngram_min, config.ngram_max))
        v.values[fnv1a64(gram) % config.dimension] += 1.0;
    double sq = 0.0;
    for (double x : v.values) sq += x * x;
    if (sq > 0.0) {
        const double inv = 1.0 / std::sqrt(sq);
        for (double& x : v.values) x *= inv;
    }
    return v;
}

// -- embedding table ---------------------------------------------------------

struct EmbeddingTable {
    std::size_t dimension = 0;
    std::unordered_map<std::string, FeatureVector> rows;

    const FeatureVector* find(const std::string& id) const {
        auto it = rows.find(id);
        return it == rows.end() ? nullptr : &it->second;
    }
    std::size_t size() const noexcept { return rows.size(); }
};

/// Format: `dim<TAB>D`, then `id<TAB>v1,...,vD` per line. Lines starting
/// with '#' are metadata and skipped.
inline EmbeddingTable read_embedding_table(std::istream& in) {
    EmbeddingTable table;
    std::string line;
    std::size_t line_no = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty() && line.front() == '#') continue;
        const std::string where = "embeddings line " + std::to_string(line_no) + ": ";
        if (!have_header) {
            std::size_t dim = 0;
            if (line.rfind("dim\t", 0) != 0 || !detail::parse_uint(std::string_view(line).substr(4), dim) ||
                dim == 0)
                throw DataError(where + "missing header 'dim<TAB>D'");
            table.dimension = dim;
            have_header = true;
            continue;
        }
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos || tab == 0) throw DataError(where + "expected 'id<TAB>values'");
        std::string id = line.substr(0, tab);
        std::vector<double> values;
        values.reserve(table.dimension);
        std::string_view rest = std::string_view(line).substr(tab + 1);
        while (true) {
            const auto comma = rest.find(',');
            const auto field = rest.substr(0, comma);
            double value = 0.0;
            auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
            if (ec != std::errc{} || ptr != field.data() + field.size())
                throw DataError(where + "row '" + id + "' has a malformed value '" + std::string(field) + "'");
            if (!std::isfinite(value)) throw DataError(where + "row '" + id + "' has a non-finite value");
            values.push_back(value);
            if (comma == std::string_view::npos) break;
            rest.remove_prefix(comma + 1);
        }
        if (values.size() != table.dimension)
            throw DataError(where + "row '" + id + "' has " + std::to_string(values.size()) +
                            " values, expected " + std::to_string(table.dimension));
        if (!table.rows.emplace(id, FeatureVector(std::move(values))).second)
            throw DataError(where + "duplicate id '" + id + "'");
    }
    if (!have_header) throw DataError("embeddings file: missing header 'dim<TAB>D'");
    return table;
}

inline EmbeddingTable load_embedding_table(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path + "'");
    return read_embedding_table(in);
}

/// Dispatches on config.backend. The embeddings backend requires `table`.
inline FeatureVector featurize(const LabeledExample& example, const FeatureConfig& config,
                               const EmbeddingTable* table = nullptr) {
    if (config.backend == FeatureBackend::hashed) return hash_featurize(example.text, config);
    if (!table) throw ConfigError("embeddings backend requires an embedding table");
    if (table->dimension != config.dimension)
        throw ConfigError("embedding table dimension " + std::to_string(table->dimension) +
                          " != configured dimension " + std::to_string(config.dimension));
    const FeatureVector* v = table->find(example.id);
    if (!v) throw DataError("no embedding for id " + example.id);
    return *v;
}

inline nlohmann::json to_json(const FeatureConfig& c) {
    return {{"backend", to_string(c.backend)},
            {"dimension", c.dimension},
            {"ngram_min", c.ngram_min},
            {"ngram_max", c.ngram_max},
            {"strip_diacritics", c.normalize.strip_diacritics},
            {"strip_tatweel", c.normalize.strip_tatweel},
            {"collapse_whitespace", c.normalize.collapse_whitespace}};
}

inline FeatureConfig feature_config_from_json(const nlohmann::json& j) {
    FeatureConfig c;
    c.backend = parse_backend(j.at("backend").get<std::string>());
    c.dimension = j.at("dimension").get<std::size_t>();
    c.ngram_min = j.at("ngram_min").get<std::size_t>();
    c.ngram_max = j.at("ngram_max").get<std::size_t>();
    c.normalize.strip_diacritics = j.value("strip_diacritics", false);
    c.normalize.strip_tatweel = j.value("strip_tatweel", false);
    c.normalize.collapse_whitespace = j.value("collapse_whitespace", false);
    c.validate();
    return c;
}

}  // namespace sarquant

#pragma once

// Annotation collection: sentences are imported, annotators fetch tasks and
// submit binary sarcasm votes until each sentence has votes from `quorum`
// distinct annotators. The append-only event log is the source of truth;
// in-memory state is rebuilt from it by replay on startup.

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "corpus.hpp"
#include "error.hpp"

namespace sarquant::annotate {

struct Sentence {
    std::string id;
    std::string text;
    Category category = Category::unknown;
    std::map<std::string, bool> votes;  // annotator -> sarcastic, name-sorted
    bool complete = false;
};

struct SentenceInput {
    std::string id;
    std::string text;
    Category category = Category::unknown;
};

struct Progress {
    std::size_t total = 0;
    std::size_t complete = 0;
    std::size_t total_votes = 0;
    std::map<std::string, std::size_t> per_annotator;

    friend bool operator==(const Progress&, const Progress&) = default;
};

enum class VoteOutcome { recorded, not_found, duplicate_vote, complete, invalid };

constexpr std::string_view to_string(VoteOutcome o) noexcept {
    switch (o) {
        case VoteOutcome::recorded: return "recorded";
        case VoteOutcome::not_found: return "not_found";
        case VoteOutcome::duplicate_vote: return "duplicate_vote";
        case VoteOutcome::complete: return "complete";
        case VoteOutcome::invalid: break;
    }
    return "invalid";
}

/// Import rejected because an id already exists (in the service or the batch).
class ImportConflict : public DataError {
public:
    explicit ImportConflict(std::string id)
        : DataError("duplicate sentence id '" + id + "'"), id_(std::move(id)) {}
    const std::string& id() const noexcept { return id_; }

private:
    std::string id_;
};

/// The event log cannot be replayed (gap, corruption, truncation).
class LogCorruption : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline nlohmann::json to_json(const Progress& p) {
    return {{"total", p.total},
            {"complete", p.complete},
            {"total_votes", p.total_votes},
            {"per_annotator", p.per_annotator}};
}

/// Parses an import body: JSON Lines of {"id","text","category"}.
inline std::vector<SentenceInput> parse_sentences(std::string_view body,
                                                  std::vector<std::string>* warnings = nullptr) {
    std::vector<SentenceInput> out;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos < body.size()) {
        auto eol = body.find('\n', pos);
        if (eol == std::string_view::npos) eol = body.size();
        auto line = body.substr(pos, eol - pos);
        pos = eol + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.find_first_not_of(" \t") == std::string_view::npos) continue;
        const auto j = detail::parse_object(line, line_no);
        SentenceInput s;
        s.id = detail::require_string(j, "id", line_no);
        if (s.id.empty()) throw DataError(detail::at_line(line_no) + "empty id");
        s.text = detail::require_string(j, "text", line_no);
        s.category = detail::read_category(j, line_no, warnings);
        out.push_back(std::move(s));
    }
    return out;
}

// -- state -------------------------------------------------------------------

/// Pure in-memory state; every mutation is a function of one event payload.
/// Not synchronized.
class State {
public:
    explicit State(std::size_t quorum = kDefaultQuorum) : quorum_(quorum) {
        if (quorum == 0) throw ConfigError("quorum must be >= 1");
    }

    std::size_t quorum() const noexcept { return quorum_; }
    const std::vector<Sentence>& sentences() const noexcept { return sentences_; }

    const Sentence* find(std::string_view id) const {
        auto it = index_.find(std::string(id));
        return it == index_.end() ? nullptr : &sentences_[it->second];
    }

    /// Throws ImportConflict without touching state.
    void check_import(const std::vector<SentenceInput>& batch) const {
        std::unordered_set<std::string> seen;
        for (const auto& s : batch)
            if (index_.count(s.id) || !seen.insert(s.id).second) throw ImportConflict(s.id);
    }

    void apply_import(const std::vector<SentenceInput>& batch) {
        check_import(batch);
        for (const auto& s : batch) {
            index_.emplace(s.id, sentences_.size());
            sentences_.push_back({s.id, s.text, s.category, {}, false});
        }
    }

    VoteOutcome check_vote(std::string_view annotator, std::string_view sentence_id) const {
        if (annotator.empty() || sentence_id.empty()) return VoteOutcome::invalid;
        const Sentence* s = find(sentence_id);
        if (!s) return VoteOutcome::not_found;
        if (s->votes.count(std::string(annotator))) return VoteOutcome::duplicate_vote;
        if (s->complete) return VoteOutcome::complete;
        return VoteOutcome::recorded;
    }

    VoteOutcome apply_vote(const std::string& annotator, const std::string& sentence_id, bool value) {
        const VoteOutcome outcome = check_vote(annotator, sentence_id);
        if (outcome != VoteOutcome::recorded) return outcome;
        Sentence& s = sentences_[index_.at(sentence_id)];
        s.votes.emplace(annotator, value);
        if (s.votes.size() >= quorum_) s.complete = true;
        ++per_annotator_[annotator];
        ++total_votes_;
        return outcome;
    }

    /// Open sentence with the fewest votes that `annotator` has not voted on;
    /// ties go to the earliest import.
    const Sentence* next_task(std::string_view annotator) const {
        const Sentence* best = nullptr;
        const std::string name(annotator);
        for (const auto& s : sentences_) {
            if (s.complete || s.votes.count(name)) continue;
            if (!best || s.votes.size() < best->votes.size()) best = &s;
        }
        return best;
    }

    Progress progress() const {
        Progress p;
        p.total = sentences_.size();
        p.total_votes = total_votes_;
        p.per_annotator = per_annotator_;
        for (const auto& s : sentences_) p.complete += s.complete ? 1 : 0;
        return p;
    }

    /// Aggregated corpus as JSON Lines. Complete sentences are labeled with
    /// aggregate_label over votes in annotator-name order. With
    /// include_partial, open sentences that have at least one vote follow the
    /// same rule and carry "partial": true.
    std::string export_corpus(bool include_partial) const {
        std::string out;
        for (const auto& s : sentences_) {
            if (!s.complete && (!include_partial || s.votes.empty())) continue;
            std::vector<std::uint8_t> votes;
            votes.reserve(s.votes.size());
            for (const auto& [name, value] : s.votes) votes.push_back(value ? 1 : 0);
            auto j = to_json(LabeledExample{s.id, s.text, s.category, aggregate_label(votes)});
            if (!s.complete) {
                j["partial"] = true;
                j["votes"] = votes.size();
            }
            out += j.dump();
            out += '\n';
        }
        return out;
    }

private:
    std::size_t quorum_;
    std::vector<Sentence> sentences_;
    std::unordered_map<std::string, std::size_t> index_;
    std::map<std::string, std::size_t> per_annotator_;
    std::size_t total_votes_ = 0;
};

// -- events ------------------------------------------------------------------

enum class EventKind { import, vote };

struct Event {
    std::uint64_t seq = 0;
    EventKind kind = EventKind::import;
    nlohmann::json payload;
    std::string ts;
};

inline nlohmann::json import_payload(const std::vector<SentenceInput>& batch) {
    nlohmann::json list = nlohmann::json::array();
    for (const auto& s : batch)
        list.push_back({{"id", s.id}, {"text", s.text}, {"category", to_string(s.category)}});
    return {{"sentences", std::move(list)}};
}

inline nlohmann::json vote_payload(const std::string& annotator, const std::string& sentence_id, bool value) {
    return {{"annotator", annotator}, {"sentence_id", sentence_id}, {"value", value}};
}

inline std::string iso8601_now() {
    const auto now = std::chrono::system_clock::now();
    const auto secs = std::chrono::system_clock::to_time_t(now);
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
    std::tm tm{};
    gmtime_r(&secs, &tm);
    char buf[40];
    const auto n = std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
    std::snprintf(buf + n, sizeof buf - n, ".%03dZ", static_cast<int>(ms));
    return buf;
}

/// Applies one logged event; a payload the live service could never have
/// accepted is corruption.
inline void apply_event(State& state, const Event& e) {
    const std::string where = "event seq " + std::to_string(e.seq) + ": ";
    try {
        if (e.kind == EventKind::import) {
            std::vector<SentenceInput> batch;
            for (const auto& s : e.payload.at("sentences"))
                batch.push_back({s.at("id").get<std::string>(), s.at("text").get<std::string>(),
                                 parse_category(s.at("category").get<std::string>())});
            state.apply_import(batch);
        } else {
            const auto outcome = state.apply_vote(e.payload.at("annotator").get<std::string>(),
                                                  e.payload.at("sentence_id").get<std::string>(),
                                                  e.payload.at("value").get<bool>());
            if (outcome != VoteOutcome::recorded)
                throw LogCorruption(where + "vote rejected on replay (" + std::string(to_string(outcome)) + ")");
        }
    } catch (const nlohmann::json::exception& ex) {
        throw LogCorruption(where + "malformed payload: " + ex.what());
    } catch (const ImportConflict& ex) {
        throw LogCorruption(where + ex.what());
    }
}

/// Reads and validates a log: every line complete, parseable, with
/// sequence numbers 1, 2, 3, ... in order.
inline std::vector<Event> read_event_log(const std::filesystem::path& path) {
    std::vector<Event> events;
    std::ifstream in(path, std::ios::binary);
    if (!in) return events;
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::size_t pos = 0;
    std::uint64_t expected = 1;
    while (pos < content.size()) {
        const auto eol = content.find('\n', pos);
        if (eol == std::string::npos)
            throw LogCorruption("truncated final record in " + path.string() + " (expected seq " +
                                std::to_string(expected) + ")");
        const std::string_view line(content.data() + pos, eol - pos);
        pos = eol + 1;
        Event e;
        try {
            const auto j = nlohmann::json::parse(line);
            e.seq = j.at("seq").get<std::uint64_t>();
            const auto kind = j.at("kind").get<std::string>();
            if (kind == "import") e.kind = EventKind::import;
            else if (kind == "vote") e.kind = EventKind::vote;
            else throw LogCorruption("unknown event kind '" + kind + "' at seq " + std::to_string(e.seq));
            e.payload = j.at("payload");
            e.ts = j.at("ts").get<std::string>();
        } catch (const nlohmann::json::exception& ex) {
            throw LogCorruption("corrupt record in " + path.string() + " (expected seq " + std::to_string(expected) +
                                "): " + ex.what());
        }
        if (e.seq != expected)
            throw LogCorruption("sequence gap in " + path.string() + ": expected seq " + std::to_string(expected) +
                                ", found " + std::to_string(e.seq));
        ++expected;
        events.push_back(std::move(e));
    }
    return events;
}

/// Pure fold of a log into a fresh state.
inline State replay(const std::vector<Event>& events, std::size_t quorum) {
    State state(quorum);
    for (const auto& e : events) apply_event(state, e);
    return state;
}

/// Append-only JSON Lines log; each append is fsync'ed before returning.
class EventLog {
public:
    EventLog(const std::filesystem::path& path, std::uint64_t last_seq) : path_(path), last_seq_(last_seq) {
        fd_ = ::open(path.c_str(), O_WRONLY | O_APPEND | O_CREAT | O_CLOEXEC, 0644);
        if (fd_ < 0) throw std::runtime_error("cannot open event log " + path.string() + ": " + std::strerror(errno));
    }
    EventLog(const EventLog&) = delete;
    EventLog& operator=(const EventLog&) = delete;
    ~EventLog() {
        if (fd_ >= 0) ::close(fd_);
    }

    std::uint64_t last_seq() const noexcept { return last_seq_; }
    const std::filesystem::path& path() const noexcept { return path_; }

    std::uint64_t append(EventKind kind, const nlohmann::json& payload) {
        const std::uint64_t seq = last_seq_ + 1;
        const nlohmann::json record{{"seq", seq},
                                    {"kind", kind == EventKind::import ? "import" : "vote"},
                                    {"payload", payload},
                                    {"ts", iso8601_now()}};
        const std::string line = record.dump() + "\n";
        std::size_t written = 0;
        while (written < line.size()) {
            const auto n = ::write(fd_, line.data() + written, line.size() - written);
            if (n < 0) {
                if (errno == EINTR) continue;
                throw std::runtime_error("event log write failed: " + std::string(std::strerror(errno)));
            }
            written += static_cast<std::size_t>(n);
        }
        if (::fsync(fd_) != 0) throw std::runtime_error("event log fsync failed: " + std::string(std::strerror(errno)));
        last_seq_ = seq;
        return seq;
    }

private:
    std::filesystem::path path_;
    int fd_ = -1;
    std::uint64_t last_seq_ = 0;
};

// -- service -----------------------------------------------------------------

/// Thread-safe facade. Mutations are serialized: validated, logged durably,
/// then applied, one at a time. Reads take a shared lock.
class Service {
public:
    static constexpr const char* kLogName = "events.jsonl";

    /// Replays `data_dir`/events.jsonl (if any); throws LogCorruption on a bad log.
    Service(const std::filesystem::path& data_dir, std::size_t quorum = kDefaultQuorum)
        : Service(recover(data_dir, quorum)) {}

    std::size_t quorum() const noexcept { return state_.quorum(); }
    std::filesystem::path log_path() const { return log_.path(); }

    std::size_t import_sentences(const std::vector<SentenceInput>& batch) {
        std::unique_lock lock(mutex_);
        state_.check_import(batch);
        if (batch.empty()) return 0;
        log_.append(EventKind::import, import_payload(batch));
        state_.apply_import(batch);
        return batch.size();
    }

    std::size_t import_jsonl(std::string_view body, std::vector<std::string>* warnings = nullptr) {
        return import_sentences(parse_sentences(body, warnings));
    }

    VoteOutcome submit_vote(const std::string& annotator, const std::string& sentence_id, bool value) {
        std::unique_lock lock(mutex_);
        const VoteOutcome outcome = state_.check_vote(annotator, sentence_id);
        if (outcome != VoteOutcome::recorded) return outcome;
        log_.append(EventKind::vote, vote_payload(annotator, sentence_id, value));
        return state_.apply_vote(annotator, sentence_id, value);
    }

    std::optional<Sentence> next_task(std::string_view annotator) const {
        if (annotator.empty()) return std::nullopt;
        std::shared_lock lock(mutex_);
        const Sentence* s = state_.next_task(annotator);
        return s ? std::optional<Sentence>(*s) : std::nullopt;
    }

    Progress progress() const {
        std::shared_lock lock(mutex_);
        return state_.progress();
    }

    std::string export_corpus(bool include_partial) const {
        std::shared_lock lock(mutex_);
        return state_.export_corpus(include_partial);
    }

private:
    struct Recovered {
        State state;
        std::filesystem::path log_path;
        std::uint64_t last_seq = 0;
    };

    static Recovered recover(const std::filesystem::path& dir, std::size_t quorum) {
        std::filesystem::create_directories(dir);
        const auto path = dir / kLogName;
        const auto events = read_event_log(path);
        return {replay(events, quorum), path, events.empty() ? 0 : events.back().seq};
    }

    explicit Service(Recovered r) : state_(std::move(r.state)), log_(r.log_path, r.last_seq) {}

    mutable std::shared_mutex mutex_;
    State state_;
    EventLog log_;
};

}  // namespace sarquant::annotate

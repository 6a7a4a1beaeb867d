#include <gtest/gtest.h>

#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>

#include "sarquant/corpus.hpp"
#include "sarquant/http.hpp"
#include "sarquant/service.hpp"

using namespace sarquant;
using namespace sarquant::annotate;
namespace fs = std::filesystem;

namespace {

class TempDir {
public:
    TempDir() {
        static std::atomic<int> counter{0};
        path_ = fs::temp_directory_path() /
                ("sarquant-svc-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() { fs::remove_all(path_); }
    const fs::path& path() const { return path_; }

private:
    fs::path path_;
};

std::string sentences_jsonl(std::size_t n, std::size_t offset = 0) {
    std::string out;
    for (std::size_t i = 0; i < n; ++i)
        out += R"({"id":"s)" + std::to_string(offset + i) + R"(","text":"جملة )" + std::to_string(i) +
               R"(","category":"politics"})" + "\n";
    return out;
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string annotator(int i) { return "ann" + std::string(i < 10 ? "0" : "") + std::to_string(i); }

}  // namespace

TEST(Import, CountsAndAtomicity) {
    TempDir dir;
    Service svc(dir.path());
    EXPECT_EQ(svc.import_jsonl(sentences_jsonl(5)), 5u);
    auto p = svc.progress();
    EXPECT_EQ(p.total, 5u);
    EXPECT_EQ(p.complete, 0u);

    // s4 already exists: nothing from this batch may land.
    EXPECT_THROW(svc.import_jsonl(sentences_jsonl(3, 4)), ImportConflict);
    EXPECT_EQ(svc.progress().total, 5u);
    EXPECT_FALSE(svc.next_task("x")->id.empty());
    EXPECT_THROW(svc.import_jsonl(R"({"id":"z","text":"a","category":"sports"})" "\n"
                                  R"({"id":"z","text":"b","category":"sports"})" "\n"),
                 ImportConflict);
    EXPECT_EQ(svc.progress().total, 5u);
    EXPECT_EQ(svc.import_jsonl(""), 0u);
    EXPECT_THROW(svc.import_jsonl("{broken\n"), DataError);
}

TEST(NextTask, AssignmentRule) {
    TempDir dir;
    Service svc(dir.path());
    svc.import_jsonl(sentences_jsonl(3));
    EXPECT_EQ(svc.next_task("a")->id, "s0");

    // s0 gets 10 votes, s1 gets 2: a fresh annotator is sent to s2 (0 votes),
    // then, once s2 is past s1, to s1.
    for (int i = 0; i < 10; ++i) svc.submit_vote(annotator(i), "s0", true);
    for (int i = 0; i < 2; ++i) svc.submit_vote(annotator(i), "s1", false);
    EXPECT_EQ(svc.next_task("fresh")->id, "s2");
    for (int i = 0; i < 3; ++i) svc.submit_vote(annotator(i), "s2", false);
    EXPECT_EQ(svc.next_task("fresh")->id, "s1");

    for (const char* id : {"s0", "s1", "s2"}) svc.submit_vote("busy", id, true);
    EXPECT_FALSE(svc.next_task("busy").has_value());
    EXPECT_FALSE(svc.next_task("").has_value());
}

TEST(SubmitVote, QuorumAndRejections) {
    TempDir dir;
    Service svc(dir.path());
    svc.import_jsonl(sentences_jsonl(2));
    EXPECT_EQ(svc.submit_vote("ann00", "s0", true), VoteOutcome::recorded);
    EXPECT_EQ(svc.submit_vote("ann00", "s0", false), VoteOutcome::duplicate_vote);
    for (int i = 1; i < 11; ++i) EXPECT_EQ(svc.submit_vote(annotator(i), "s0", i % 2 == 0), VoteOutcome::recorded);
    EXPECT_EQ(svc.submit_vote("late", "s0", true), VoteOutcome::complete);
    EXPECT_EQ(svc.submit_vote("ann00", "nope", true), VoteOutcome::not_found);
    EXPECT_EQ(svc.submit_vote("", "s0", true), VoteOutcome::invalid);

    const auto p = svc.progress();
    EXPECT_EQ(p.complete, 1u);
    EXPECT_EQ(p.total_votes, 11u);
    std::size_t sum = 0;
    for (const auto& [name, n] : p.per_annotator) sum += n;
    EXPECT_EQ(sum, p.total_votes);
}

TEST(Progress, FreshServiceIsZero) {
    TempDir dir;
    Service svc(dir.path());
    EXPECT_EQ(svc.progress(), Progress{});
}

TEST(Export, LabelsFollowAggregation) {
    TempDir dir;
    Service svc(dir.path());
    svc.import_jsonl(sentences_jsonl(2));
    EXPECT_EQ(svc.export_corpus(false), "");

    // Three yes votes out of eleven.
    const std::vector<std::uint8_t> row2 = {1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 1};
    for (int i = 0; i < 11; ++i) svc.submit_vote(annotator(i), "s0", row2[i] == 1);
    svc.submit_vote("ann00", "s1", true);

    const auto text = svc.export_corpus(false);
    std::istringstream in(text);
    const auto corpus = read_corpus(in);
    ASSERT_EQ(corpus.size(), 1u);
    EXPECT_EQ(corpus[0].id, "s0");
    EXPECT_EQ(corpus[0].label, 3.0 / 11.0);
    EXPECT_EQ(corpus[0].label, aggregate_label(row2));

    std::istringstream partial(svc.export_corpus(true));
    const auto with_partial = read_corpus(partial);
    ASSERT_EQ(with_partial.size(), 2u);
    EXPECT_EQ(with_partial[1].label, 1.0);
    EXPECT_NE(svc.export_corpus(true).find("\"partial\":true"), std::string::npos);
}

TEST(Replay, RestartReproducesState) {
    TempDir dir;
    Progress before;
    std::string exported;
    {
        Service svc(dir.path());
        svc.import_jsonl(sentences_jsonl(4));
        for (int i = 0; i < 11; ++i) svc.submit_vote(annotator(i), "s1", i < 4);
        svc.submit_vote("x", "s2", true);
        svc.submit_vote("x", "s2", true);  // rejected, not logged
        before = svc.progress();
        exported = svc.export_corpus(true);
    }
    Service again(dir.path());
    EXPECT_EQ(again.progress(), before);
    EXPECT_EQ(again.export_corpus(true), exported);
    EXPECT_EQ(again.submit_vote("x", "s2", false), VoteOutcome::duplicate_vote);

    const auto events = read_event_log(again.log_path());
    ASSERT_EQ(events.size(), 13u);  // 1 import + 12 votes
    for (std::size_t i = 0; i < events.size(); ++i) EXPECT_EQ(events[i].seq, i + 1);
}

TEST(Replay, EmptyLogIsFreshState) {
    TempDir dir;
    std::ofstream(dir.path() / Service::kLogName).close();
    Service svc(dir.path());
    EXPECT_EQ(svc.progress(), Progress{});
}

TEST(Replay, RefusesTruncatedLog) {
    TempDir dir;
    {
        Service svc(dir.path());
        svc.import_jsonl(sentences_jsonl(1));
        svc.submit_vote("a", "s0", true);
    }
    const auto log = dir.path() / Service::kLogName;
    auto content = read_file(log);
    content.resize(content.size() - 10);
    std::ofstream(log, std::ios::binary | std::ios::trunc) << content;
    try {
        Service svc(dir.path());
        FAIL();
    } catch (const LogCorruption& e) {
        EXPECT_NE(std::string(e.what()).find("seq 2"), std::string::npos) << e.what();
    }
}

TEST(Replay, RefusesSequenceGap) {
    TempDir dir;
    {
        Service svc(dir.path());
        svc.import_jsonl(sentences_jsonl(1));
        svc.submit_vote("a", "s0", true);
        svc.submit_vote("b", "s0", true);
    }
    const auto log = dir.path() / Service::kLogName;
    std::istringstream lines(read_file(log));
    std::string l1, l2, l3;
    std::getline(lines, l1);
    std::getline(lines, l2);
    std::getline(lines, l3);
    std::ofstream(log, std::ios::binary | std::ios::trunc) << l1 << "\n" << l3 << "\n";
    try {
        Service svc(dir.path());
        FAIL();
    } catch (const LogCorruption& e) {
        EXPECT_NE(std::string(e.what()).find("expected seq 2, found 3"), std::string::npos) << e.what();
    }
}

TEST(Replay, AcknowledgedVotesSurviveSigkill) {
    TempDir dir;
    {
        Service svc(dir.path());
        svc.import_jsonl(sentences_jsonl(30));
    }
    int ack_pipe[2];
    ASSERT_EQ(::pipe(ack_pipe), 0);
    const pid_t child = ::fork();
    ASSERT_GE(child, 0);
    if (child == 0) {
        ::close(ack_pipe[0]);
        Service svc(dir.path());
        for (int i = 0;; ++i) {
            const auto outcome = svc.submit_vote(annotator(i % 11), "s" + std::to_string((i / 11) % 30), true);
            if (outcome == VoteOutcome::recorded) {
                const char ack = 1;
                if (::write(ack_pipe[1], &ack, 1) != 1) ::_exit(3);
            }
            if (i >= 30 * 11) ::pause();
        }
    }
    ::close(ack_pipe[1]);
    std::size_t acked = 0;
    char buf;
    while (acked < 100 && ::read(ack_pipe[0], &buf, 1) == 1) ++acked;
    ::kill(child, SIGKILL);
    int status = 0;
    ::waitpid(child, &status, 0);
    ::close(ack_pipe[0]);
    ASSERT_TRUE(WIFSIGNALED(status));
    ASSERT_EQ(acked, 100u);

    Service svc(dir.path());
    EXPECT_GE(svc.progress().total_votes, acked);
    const auto events = read_event_log(svc.log_path());
    EXPECT_EQ(events.size(), 1 + svc.progress().total_votes);
}

TEST(Concurrency, ManyWritersNeverOvervote) {
    TempDir dir;
    Service svc(dir.path(), 11);
    svc.import_jsonl(sentences_jsonl(20));
    std::vector<std::thread> threads;
    for (int a = 0; a < 50; ++a)
        threads.emplace_back([&svc, a] {
            const std::string name = annotator(a);
            while (auto task = svc.next_task(name)) {
                svc.submit_vote(name, task->id, a % 3 == 0);
                svc.submit_vote(name, task->id, true);  // always a duplicate or complete
            }
        });
    for (auto& t : threads) t.join();
    const auto p = svc.progress();
    EXPECT_EQ(p.complete, 20u);
    EXPECT_EQ(p.total_votes, 220u);
}

// -- HTTP surface ------------------------------------------------------------

class HttpApi : public ::testing::Test {
protected:
    void SetUp() override {
        service_ = std::make_unique<Service>(dir_.path(), 3);
        mount_api(server_, *service_);
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    void TearDown() override {
        server_.stop();
        thread_.join();
    }
    httplib::Client client() const { return httplib::Client("127.0.0.1", port_); }

    TempDir dir_;
    std::unique_ptr<Service> service_;
    httplib::Server server_;
    std::thread thread_;
    int port_ = 0;
};

TEST_F(HttpApi, FullProtocol) {
    auto cli = client();
    auto r = cli.Post("/api/import", sentences_jsonl(2), "application/x-ndjson");
    ASSERT_TRUE(r);
    EXPECT_EQ(r->status, 201);
    EXPECT_EQ(nlohmann::json::parse(r->body)["imported"], 2);

    r = cli.Post("/api/import", sentences_jsonl(1), "application/x-ndjson");
    EXPECT_EQ(r->status, 409);
    EXPECT_EQ(nlohmann::json::parse(r->body)["error"], "duplicate_id");
    EXPECT_EQ(cli.Post("/api/import", "{oops", "application/x-ndjson")->status, 422);

    r = cli.Get("/api/next?annotator=amal");
    ASSERT_EQ(r->status, 200);
    const auto task = nlohmann::json::parse(r->body);
    EXPECT_EQ(task["sentence_id"], "s0");
    EXPECT_EQ(task["category"], "politics");
    EXPECT_EQ(cli.Get("/api/next")->status, 422);

    auto vote = [&](const std::string& who, const std::string& id, const nlohmann::json& value) {
        return cli.Post("/api/votes", nlohmann::json{{"annotator", who}, {"sentence_id", id}, {"value", value}}.dump(),
                        "application/json");
    };
    r = vote("amal", "s0", true);
    EXPECT_EQ(r->status, 201);
    EXPECT_EQ(nlohmann::json::parse(r->body)["status"], "recorded");
    r = vote("amal", "s0", false);
    EXPECT_EQ(r->status, 409);
    EXPECT_EQ(nlohmann::json::parse(r->body)["error"], "duplicate_vote");
    EXPECT_EQ(vote("amal", "s9", true)->status, 404);
    EXPECT_EQ(vote("amal", "s1", 1)->status, 422);
    EXPECT_EQ(cli.Post("/api/votes", "not json", "application/json")->status, 422);
    EXPECT_EQ(vote("b", "s0", false)->status, 201);
    EXPECT_EQ(vote("c", "s0", false)->status, 201);
    r = vote("d", "s0", true);
    EXPECT_EQ(r->status, 409);
    EXPECT_EQ(nlohmann::json::parse(r->body)["error"], "complete");

    r = cli.Get("/api/progress");
    ASSERT_EQ(r->status, 200);
    const auto progress = nlohmann::json::parse(r->body);
    EXPECT_EQ(progress["total"], 2);
    EXPECT_EQ(progress["complete"], 1);
    EXPECT_EQ(progress["total_votes"], 3);
    EXPECT_EQ(progress["per_annotator"]["amal"], 1);

    r = cli.Get("/api/export?include_partial=false");
    ASSERT_EQ(r->status, 200);
    std::istringstream in(r->body);
    const auto corpus = read_corpus(in);
    ASSERT_EQ(corpus.size(), 1u);
    EXPECT_EQ(corpus[0].label, 1.0 / 3.0);
    EXPECT_EQ(cli.Get("/api/export?include_partial=maybe")->status, 422);

    for (const char* who : {"amal", "b", "c"}) vote(who, "s1", true);
    EXPECT_EQ(cli.Get("/api/next?annotator=amal")->status, 204);
}

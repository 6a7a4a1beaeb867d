#pragma once

// JSON-over-HTTP surface of the annotation service.
//
//   GET  /api/next?annotator=NAME     200 {"sentence_id","text","category"} | 204
//   POST /api/votes                   201 {"status":"recorded"} | 404 | 409 | 422
//   GET  /api/progress                200 progress object
//   GET  /api/export?include_partial= 200 JSON Lines
//   POST /api/import                  201 {"imported":n} | 409 | 422

#include <string>

#include <httplib.h>
#include <json.hpp>

#include "service.hpp"

namespace sarquant::annotate {

namespace detail {

inline void reply_json(httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json; charset=utf-8");
}

inline void reply_error(httplib::Response& res, int status, const std::string& error,
                        const std::string& detail = {}) {
    nlohmann::json body{{"error", error}};
    if (!detail.empty()) body["detail"] = detail;
    reply_json(res, status, body);
}

}  // namespace detail

inline void mount_api(httplib::Server& server, Service& service) {
    using detail::reply_error;
    using detail::reply_json;

    server.Get("/api/next", [&service](const httplib::Request& req, httplib::Response& res) {
        const std::string annotator = req.get_param_value("annotator");
        if (annotator.empty()) return reply_error(res, 422, "validation", "annotator is required");
        const auto task = service.next_task(annotator);
        if (!task) {
            res.status = 204;
            return;
        }
        reply_json(res, 200, {{"sentence_id", task->id}, {"text", task->text},
                              {"category", to_string(task->category)}});
    });

    server.Post("/api/votes", [&service](const httplib::Request& req, httplib::Response& res) {
        const auto body = nlohmann::json::parse(req.body, nullptr, false);
        if (body.is_discarded() || !body.is_object())
            return reply_error(res, 422, "validation", "body must be a JSON object");
        const auto annotator = body.find("annotator");
        const auto sentence = body.find("sentence_id");
        const auto value = body.find("value");
        if (annotator == body.end() || !annotator->is_string() || annotator->get<std::string>().empty() ||
            sentence == body.end() || !sentence->is_string() || value == body.end() || !value->is_boolean())
            return reply_error(res, 422, "validation",
                               "expected {\"annotator\": string, \"sentence_id\": string, \"value\": bool}");
        switch (service.submit_vote(annotator->get<std::string>(), sentence->get<std::string>(), value->get<bool>())) {
            case VoteOutcome::recorded: return reply_json(res, 201, {{"status", "recorded"}});
            case VoteOutcome::not_found: return reply_error(res, 404, "not_found");
            case VoteOutcome::duplicate_vote: return reply_error(res, 409, "duplicate_vote");
            case VoteOutcome::complete: return reply_error(res, 409, "complete");
            case VoteOutcome::invalid: return reply_error(res, 422, "validation");
        }
    });

    server.Get("/api/progress", [&service](const httplib::Request&, httplib::Response& res) {
        reply_json(res, 200, to_json(service.progress()));
    });

    server.Get("/api/export", [&service](const httplib::Request& req, httplib::Response& res) {
        const std::string flag = req.has_param("include_partial") ? req.get_param_value("include_partial") : "false";
        if (flag != "true" && flag != "false")
            return reply_error(res, 422, "validation", "include_partial must be true or false");
        res.status = 200;
        res.set_content(service.export_corpus(flag == "true"), "application/x-ndjson; charset=utf-8");
    });

    server.Post("/api/import", [&service](const httplib::Request& req, httplib::Response& res) {
        try {
            const auto n = service.import_jsonl(req.body);
            reply_json(res, 201, {{"imported", n}});
        } catch (const ImportConflict& e) {
            reply_json(res, 409, {{"error", "duplicate_id"}, {"id", e.id()}});
        } catch (const DataError& e) {
            reply_error(res, 422, "validation", e.what());
        }
    });

    server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
        std::string what = "internal error";
        try {
            std::rethrow_exception(ep);
        } catch (const std::exception& e) {
            what = e.what();
        } catch (...) {
        }
        reply_error(res, 500, "internal", what);
    });
}

}  // namespace sarquant::annotate

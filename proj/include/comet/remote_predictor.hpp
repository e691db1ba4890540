#pragma once

// Client for an external model service speaking the JSON session protocol:
//   POST /session  {d, C, class_ids, support: {features, labels}} -> {session_id}
//   POST /predict  {session_id, queries}                         -> {probabilities}
//   DELETE /session/{id}

// Eigen must come before httplib: <resolv.h> defines a _res macro.
#include "comet/errors.hpp"
#include "comet/predictor.hpp"
#include "comet/types.hpp"

#include <httplib.h>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace comet {

struct RemotePredictorConfig {
    std::string endpoint = "http://127.0.0.1:8765";
    double timeout_seconds = 60.0;
    std::size_t max_batch = 1024;
    int retries = 2;
    int max_in_flight = 1;
    std::optional<std::string> bearer_token;

    void validate() const {
        if (max_batch < 1) throw SchemaError("remote max_batch must be >= 1");
        if (retries < 0) throw SchemaError("remote retries must be >= 0");
        if (max_in_flight < 1) throw SchemaError("remote max_in_flight must be >= 1");
        if (!(timeout_seconds > 0.0)) throw SchemaError("remote timeout must be > 0");
        if (endpoint.rfind("http://", 0) != 0)
            throw SchemaError("remote endpoint must start with http://, got '" + endpoint + "'");
    }
};

// Splits "http://host:port/prefix" into the client base and a path prefix.
struct Endpoint {
    std::string base;
    std::string prefix;
};

inline Endpoint parse_endpoint(const std::string& url) {
    const std::size_t scheme = url.find("://");
    if (scheme == std::string::npos) throw SchemaError("endpoint '" + url + "' has no scheme");
    const std::size_t slash = url.find('/', scheme + 3);
    Endpoint e;
    e.base = slash == std::string::npos ? url : url.substr(0, slash);
    e.prefix = slash == std::string::npos ? "" : url.substr(slash);
    while (!e.prefix.empty() && e.prefix.back() == '/') e.prefix.pop_back();
    return e;
}

struct HttpResult {
    int status = 0;  // 0 when no response arrived
    std::string body;
    std::string transport_error;
};

// One HTTP exchange per call; retries connection failures and 5xx answers.
class RemoteClient {
public:
    explicit RemoteClient(RemotePredictorConfig cfg) : cfg_(std::move(cfg)), ep_(parse_endpoint(cfg_.endpoint)) {
        cfg_.validate();
    }

    const RemotePredictorConfig& config() const { return cfg_; }

    HttpResult send(const std::string& method, const std::string& path, const std::string& body = {}) const {
        HttpResult last;
        for (int attempt = 0; attempt <= cfg_.retries; ++attempt) {
            if (attempt > 0) std::this_thread::sleep_for(std::chrono::milliseconds(50 * (1 << std::min(attempt, 6))));
            last = send_once(method, path, body);
            if (last.status != 0 && last.status < 500) return last;
        }
        return last;
    }

    std::string open_session(const Matrix& support, const Labels& labels, int num_classes) const {
        nlohmann::json req;
        req["d"] = support.cols();
        req["C"] = num_classes;
        std::vector<int> ids(static_cast<std::size_t>(num_classes));
        for (int c = 0; c < num_classes; ++c) ids[static_cast<std::size_t>(c)] = c;
        req["class_ids"] = ids;
        req["support"]["features"] = rows_f32(support, 0, support.rows());
        req["support"]["labels"] = labels;
        const auto res = send("POST", "/session", req.dump());
        const auto body = expect_ok(res, "POST /session");
        if (!body.contains("session_id") || !body["session_id"].is_string())
            throw PredictorError(diagnostic("POST /session", res, "response has no string session_id"));
        return body["session_id"].get<std::string>();
    }

    Matrix predict_batch(const std::string& session, const Matrix& query, Eigen::Index begin, Eigen::Index end,
                         int num_classes) const {
        nlohmann::json req;
        req["session_id"] = session;
        req["queries"] = rows_f32(query, begin, end);
        const auto res = send("POST", "/predict", req.dump());
        const auto body = expect_ok(res, "POST /predict");
        const auto it = body.find("probabilities");
        if (it == body.end() || !it->is_array())
            throw PredictorError(diagnostic("POST /predict", res, "response has no probabilities array"));
        const Eigen::Index m = end - begin;
        if (static_cast<Eigen::Index>(it->size()) != m)
            throw PredictorError(diagnostic("POST /predict", res,
                                            "expected " + std::to_string(m) + " rows, got " + std::to_string(it->size())));
        Matrix p(m, num_classes);
        for (Eigen::Index i = 0; i < m; ++i) {
            const auto& row = (*it)[static_cast<std::size_t>(i)];
            if (!row.is_array() || static_cast<int>(row.size()) != num_classes)
                throw PredictorError(diagnostic("POST /predict", res, "row " + std::to_string(i) + " does not have C entries"));
            for (int c = 0; c < num_classes; ++c) {
                const auto& v = row[static_cast<std::size_t>(c)];
                if (!v.is_number()) throw PredictorError(diagnostic("POST /predict", res, "non-numeric probability"));
                p(i, c) = v.get<double>();
            }
        }
        try {
            check_row_stochastic(p, m, num_classes, 1e-4);
        } catch (const PredictorError& e) {
            throw PredictorError(diagnostic("POST /predict", res, e.what()));
        }
        return p;
    }

    int delete_session(const std::string& session) const { return send("DELETE", "/session/" + session).status; }

private:
    HttpResult send_once(const std::string& method, const std::string& path, const std::string& body) const {
        httplib::Client cli(ep_.base);
        const auto secs = static_cast<time_t>(cfg_.timeout_seconds);
        const auto usecs = static_cast<time_t>((cfg_.timeout_seconds - static_cast<double>(secs)) * 1e6);
        cli.set_connection_timeout(secs, usecs);
        cli.set_read_timeout(secs, usecs);
        cli.set_write_timeout(secs, usecs);
        if (cfg_.bearer_token) cli.set_bearer_token_auth(*cfg_.bearer_token);
        const std::string full = ep_.prefix + path;
        httplib::Result r = method == "POST" ? cli.Post(full, body, "application/json")
                          : method == "DELETE" ? cli.Delete(full)
                                               : cli.Get(full);
        HttpResult out;
        if (!r) {
            out.transport_error = httplib::to_string(r.error());
            return out;
        }
        out.status = r->status;
        out.body = r->body;
        return out;
    }

    static nlohmann::json rows_f32(const Matrix& m, Eigen::Index begin, Eigen::Index end) {
        nlohmann::json rows = nlohmann::json::array();
        for (Eigen::Index i = begin; i < end; ++i) {
            nlohmann::json row = nlohmann::json::array();
            for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(static_cast<float>(m(i, j)));
            rows.push_back(std::move(row));
        }
        return rows;
    }

    static std::string diagnostic(const std::string& what, const HttpResult& res, const std::string& detail) {
        std::string body = res.body.size() > 300 ? res.body.substr(0, 300) + "..." : res.body;
        std::string msg = what + ": " + detail + " (status " + std::to_string(res.status);
        if (!res.transport_error.empty()) msg += ", transport: " + res.transport_error;
        if (!body.empty()) msg += ", body: " + body;
        return msg + ")";
    }

    static nlohmann::json expect_ok(const HttpResult& res, const std::string& what) {
        if (res.status == 0) throw PredictorError(diagnostic(what, res, "no response after retries"));
        if (res.status != 200) {
            std::string detail = "HTTP " + std::to_string(res.status);
            const auto j = nlohmann::json::parse(res.body, nullptr, false);
            if (!j.is_discarded() && j.contains("error") && j["error"].is_object())
                detail += " " + j["error"].value("code", std::string("?")) + ": " + j["error"].value("message", std::string());
            throw PredictorError(diagnostic(what, res, detail));
        }
        auto j = nlohmann::json::parse(res.body, nullptr, false);
        if (j.is_discarded() || !j.is_object()) throw PredictorError(diagnostic(what, res, "malformed JSON response"));
        return j;
    }

    RemotePredictorConfig cfg_;
    Endpoint ep_;
};

class RemotePredictor final : public InContextClassifier {
public:
    explicit RemotePredictor(RemotePredictorConfig cfg) : client_(std::move(cfg)) {}

    Matrix predict(const Matrix& query, const Matrix& support, const Labels& support_labels,
                   int num_classes) const override {
        check_predict_inputs(query, support, support_labels, num_classes);
        std::string session;
        {
            std::lock_guard<std::mutex> lock(handshake_);
            session = client_.open_session(support, support_labels, num_classes);
        }
        Matrix out(query.rows(), num_classes);
        const auto batch = static_cast<Eigen::Index>(client_.config().max_batch);
        const Eigen::Index batches = (query.rows() + batch - 1) / batch;
        try {
            parallel_batches(batches, [&](Eigen::Index b) {
                const Eigen::Index begin = b * batch;
                const Eigen::Index end = std::min(query.rows(), begin + batch);
                out.middleRows(begin, end - begin) = client_.predict_batch(session, query, begin, end, num_classes);
            });
        } catch (...) {
            client_.delete_session(session);
            throw;
        }
        client_.delete_session(session);
        // Wire rows only promise 1e-4; renormalize to the in-process contract.
        for (Eigen::Index i = 0; i < out.rows(); ++i) out.row(i) /= out.row(i).sum();
        return out;
    }

    std::string name() const override { return "remote"; }

private:
    template <typename Fn>
    void parallel_batches(Eigen::Index batches, Fn&& fn) const {
        const int in_flight = std::max(1, std::min<int>(client_.config().max_in_flight, static_cast<int>(batches)));
        if (in_flight == 1) {
            for (Eigen::Index b = 0; b < batches; ++b) fn(b);
            return;
        }
        std::vector<std::thread> workers;
        std::vector<std::exception_ptr> errors(static_cast<std::size_t>(in_flight));
        for (int w = 0; w < in_flight; ++w) {
            workers.emplace_back([&, w] {
                try {
                    for (Eigen::Index b = w; b < batches; b += in_flight) fn(b);
                } catch (...) {
                    errors[static_cast<std::size_t>(w)] = std::current_exception();
                }
            });
        }
        for (auto& t : workers) t.join();
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
    }

    RemoteClient client_;
    mutable std::mutex handshake_;
};

}  // namespace comet

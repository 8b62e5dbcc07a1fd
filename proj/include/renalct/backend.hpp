#pragma once

// Text generation behind one interface: a deterministic local stub (endpoint
// scheme "stub:") or an OpenAI-compatible chat-completion service.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "renalct/error.hpp"
#include "renalct/prompt.hpp"
#include "renalct/rng.hpp"
#include "renalct/rule_parser.hpp"
#include "renalct/schema.hpp"
#include "renalct/stub_report.hpp"

namespace renalct {

struct BackendConfig {
    std::string endpoint = "stub:";
    std::string model = "stub";
    double temperature = 0.0;
    int max_tokens = 512;
    double timeout_seconds = 60.0;
    int max_retries = 3;
    int max_concurrent_requests = 4;
    std::string api_key_env = "RENALCT_API_KEY";
    double backoff_base_ms = 500.0;
    double backoff_max_ms = 30000.0;

    void validate() const {
        if (max_concurrent_requests < 1)
            fail(ErrorKind::config, "max_concurrent_requests must be at least 1");
        if (max_retries < 0)
            fail(ErrorKind::config, "max_retries must be non-negative");
        if (!(temperature >= 0.0))
            fail(ErrorKind::config, "temperature must be non-negative");
        if (!(timeout_seconds > 0.0))
            fail(ErrorKind::config, "timeout_seconds must be positive");
        if (max_tokens < 1)
            fail(ErrorKind::config, "max_tokens must be positive");
        if (endpoint.empty())
            fail(ErrorKind::config, "endpoint must be set");
    }
};

inline nlohmann::ordered_json backend_config_to_json(const BackendConfig &c) {
    return {{"endpoint", c.endpoint},
            {"model", c.model},
            {"temperature", c.temperature},
            {"max_tokens", c.max_tokens},
            {"timeout_seconds", c.timeout_seconds},
            {"max_retries", c.max_retries},
            {"max_concurrent_requests", c.max_concurrent_requests},
            {"api_key_env", c.api_key_env},
            {"backoff_base_ms", c.backoff_base_ms},
            {"backoff_max_ms", c.backoff_max_ms}};
}

inline BackendConfig backend_config_from_json(const nlohmann::json &j, BackendConfig c = {}) {
    try {
        c.endpoint = j.value("endpoint", c.endpoint);
        c.model = j.value("model", c.model);
        c.temperature = j.value("temperature", c.temperature);
        c.max_tokens = j.value("max_tokens", c.max_tokens);
        c.timeout_seconds = j.value("timeout_seconds", c.timeout_seconds);
        c.max_retries = j.value("max_retries", c.max_retries);
        c.max_concurrent_requests = j.value("max_concurrent_requests", c.max_concurrent_requests);
        c.api_key_env = j.value("api_key_env", c.api_key_env);
        c.backoff_base_ms = j.value("backoff_base_ms", c.backoff_base_ms);
        c.backoff_max_ms = j.value("backoff_max_ms", c.backoff_max_ms);
    } catch (const nlohmann::json::exception &e) {
        fail(ErrorKind::config, std::string("backend config: ") + e.what());
    }
    return c;
}

enum class GenerationMode { ft, zs };

template <> struct EnumTokens<GenerationMode> {
    static constexpr std::string_view name = "mode";
    static constexpr std::array<std::pair<GenerationMode, std::string_view>, 2> values{{
        {GenerationMode::ft, "ft"},
        {GenerationMode::zs, "zs"},
    }};
};

struct TokenUsage {
    std::optional<long long> prompt_tokens;
    std::optional<long long> completion_tokens;
    std::optional<long long> total_tokens;

    bool operator==(const TokenUsage &) const = default;
};

struct Completion {
    std::string text;
    double latency_ms = 0.0;
    std::optional<TokenUsage> usage;
    int attempts = 1;
};

struct GeneratedReport {
    std::string text;
    std::string annotation_id;
    Modality modality = Modality::both;
    GenerationMode mode = GenerationMode::zs;
    std::string model;
    double latency_ms = 0.0;
    std::optional<TokenUsage> usage;
};

/// Structured log events (attempt outcomes, backoff delays).
using LogSink = std::function<void(const nlohmann::json &)>;

class Backend {
  public:
    virtual ~Backend() = default;
    /// Must be safe to call from several threads at once.
    virtual Completion complete(const RenderedPrompt &prompt) = 0;
    virtual std::string model() const = 0;
};

// ---------------------------------------------------------------------------
// Stub

namespace detail {

inline bool has_renal_term(std::string_view sentence) {
    static constexpr std::string_view include[] = {
        "kidney", "renal", "nephro", "ureter", "cyst", "calculi", "stone", "hydronephrosis",
        "parenchyma", "cortex", "medulla", "atrophy", "mass", "tumor", "lesion"};
    std::string lower(sentence);
    std::transform(lower.begin(), lower.end(), lower.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (lower.find("adrenal") != std::string::npos || lower.find("suprarenal") != std::string::npos)
        return false;
    for (auto term : include)
        if (lower.find(term) != std::string::npos)
            return true;
    return false;
}

/// Sentence extraction by section heading ("FINDINGS:" etc.) and term match.
inline nlohmann::ordered_json stub_sentence_extraction(std::string_view report) {
    static constexpr std::string_view sections[] = {"HISTORY", "EXAM", "PRIOR STUDY", "FINDINGS"};
    nlohmann::ordered_json extracts;
    for (auto s : sections)
        extracts[std::string(s)] = "none";
    std::string current;
    std::string pending;
    auto flush_sentence = [&] {
        const auto first = pending.find_first_not_of(" \t\r\n");
        if (first == std::string::npos) {
            pending.clear();
            return;
        }
        const std::string sentence = pending.substr(first);
        pending.clear();
        if (current.empty() || !has_renal_term(sentence))
            return;
        auto &slot = extracts[current];
        slot = slot == "none" ? sentence : slot.get<std::string>() + " " + sentence;
    };
    for (std::size_t i = 0; i < report.size();) {
        bool heading = false;
        for (auto s : sections) {
            if (report.compare(i, s.size(), s) == 0 && i + s.size() < report.size() &&
                report[i + s.size()] == ':') {
                flush_sentence();
                current = std::string(s);
                i += s.size() + 1;
                heading = true;
                break;
            }
        }
        if (heading)
            continue;
        pending += report[i];
        const bool decimal = report[i] == '.' && i > 0 && i + 1 < report.size() &&
                             std::isdigit(static_cast<unsigned char>(report[i - 1])) &&
                             std::isdigit(static_cast<unsigned char>(report[i + 1]));
        if ((report[i] == '.' && !decimal) || report[i] == '\n')
            flush_sentence();
        ++i;
    }
    flush_sentence();
    nlohmann::ordered_json out;
    out["renal_extracts"] = extracts;
    return out;
}

inline std::optional<std::string> query_value(std::string_view query, std::string_view key) {
    std::size_t pos = 0;
    while (pos <= query.size()) {
        auto amp = query.find('&', pos);
        if (amp == std::string_view::npos)
            amp = query.size();
        const auto pair = query.substr(pos, amp - pos);
        const auto eq = pair.find('=');
        if (eq != std::string_view::npos && pair.substr(0, eq) == key)
            return std::string(pair.substr(eq + 1));
        pos = amp + 1;
    }
    return std::nullopt;
}

} // namespace detail

/// Deterministic local backend. "stub:" answers with stub_generate;
/// "stub:noisy?rate=R&seed=S" corrupts generated fields with noisy_stub_generate.
class StubBackend final : public Backend {
  public:
    explicit StubBackend(std::string_view endpoint = "stub:") {
        if (!endpoint.starts_with("stub:"))
            fail(ErrorKind::config, "not a stub endpoint: " + std::string(endpoint));
        auto rest = endpoint.substr(5);
        if (rest.empty())
            return;
        if (!rest.starts_with("noisy"))
            fail(ErrorKind::config, "unknown stub variant '" + std::string(rest) + "'");
        const auto q = rest.find('?');
        const auto query = q == std::string_view::npos ? std::string_view{} : rest.substr(q + 1);
        try {
            noise_rate_ = std::stod(detail::query_value(query, "rate").value_or("0"));
            noise_seed_ = std::stoull(detail::query_value(query, "seed").value_or("0"));
        } catch (const std::exception &) {
            fail(ErrorKind::config, "malformed stub endpoint '" + std::string(endpoint) + "'");
        }
        if (!(noise_rate_ >= 0.0 && noise_rate_ <= 1.0))
            fail(ErrorKind::config, "stub noise rate must lie in [0, 1]");
    }

    Completion complete(const RenderedPrompt &prompt) override {
        Completion c;
        c.text = respond(prompt);
        return c;
    }

    std::string model() const override { return noise_rate_ > 0.0 ? "stub-noisy" : "stub"; }

  private:
    std::string respond(const RenderedPrompt &prompt) const {
        switch (prompt.kind) {
        case PromptKind::report_generation: {
            const auto features = parse_feature_block(prompt.user_text);
            if (!features)
                return std::string(kNoFindingsSentence);
            if (noise_rate_ > 0.0)
                return noisy_stub_generate(*features, noise_rate_,
                                           derive_seed(noise_seed_, render_feature_block(*features)));
            return stub_generate(*features);
        }
        case PromptKind::feature_extraction: {
            const auto text = embedded_input(prompt.user_text).value_or("");
            return feature_set_to_extraction_json(parse_report_rule_based(text).features).dump(1);
        }
        case PromptKind::sentence_extraction: {
            const auto text = embedded_input(prompt.user_text).value_or("");
            return detail::stub_sentence_extraction(text).dump(2);
        }
        }
        return std::string(kNoFindingsSentence);
    }

    double noise_rate_ = 0.0;
    std::uint64_t noise_seed_ = 0;
};

/// Wraps a callable; used for scripted responses in tests and adapters.
class CallbackBackend final : public Backend {
  public:
    using Fn = std::function<std::string(const RenderedPrompt &)>;
    explicit CallbackBackend(Fn fn, std::string model = "callback")
        : fn_(std::move(fn)), model_(std::move(model)) {}

    Completion complete(const RenderedPrompt &prompt) override {
        Completion c;
        c.text = fn_(prompt);
        return c;
    }
    std::string model() const override { return model_; }

  private:
    Fn fn_;
    std::string model_;
};

// ---------------------------------------------------------------------------
// Chat-completion client

namespace detail {

struct Endpoint {
    std::string scheme_host_port;
    std::string path_prefix;
};

inline Endpoint split_endpoint(const std::string &url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos)
        fail(ErrorKind::config, "endpoint must be an http(s) URL or stub:, got '" + url + "'");
    const auto path_start = url.find('/', scheme_end + 3);
    Endpoint e;
    e.scheme_host_port = url.substr(0, path_start);
    e.path_prefix = path_start == std::string::npos ? "" : url.substr(path_start);
    while (!e.path_prefix.empty() && e.path_prefix.back() == '/')
        e.path_prefix.pop_back();
    return e;
}

inline std::string excerpt(std::string_view body, std::size_t limit = 200) {
    std::string out(body.substr(0, limit));
    if (body.size() > limit)
        out += "...";
    return out;
}

} // namespace detail

inline nlohmann::ordered_json chat_request_body(const RenderedPrompt &p, const BackendConfig &cfg) {
    nlohmann::ordered_json messages = nlohmann::ordered_json::array();
    if (!p.system_text.empty())
        messages.push_back({{"role", "system"}, {"content", p.system_text}});
    nlohmann::ordered_json content = nlohmann::ordered_json::array();
    content.push_back({{"type", "text"}, {"text", p.user_text}});
    if (p.image_attachment)
        content.push_back({{"type", "image_url"}, {"image_url", {{"url", *p.image_attachment}}}});
    messages.push_back({{"role", "user"}, {"content", content}});
    nlohmann::ordered_json body;
    body["model"] = cfg.model;
    body["temperature"] = cfg.temperature;
    body["max_tokens"] = cfg.max_tokens;
    body["messages"] = messages;
    return body;
}

class HttpChatBackend final : public Backend {
  public:
    explicit HttpChatBackend(BackendConfig cfg, LogSink log = {})
        : cfg_(std::move(cfg)), endpoint_(detail::split_endpoint(cfg_.endpoint)), log_(std::move(log)) {
        cfg_.validate();
        if (!cfg_.api_key_env.empty())
            if (const char *key = std::getenv(cfg_.api_key_env.c_str()))
                api_key_ = key;
    }

    std::string model() const override { return cfg_.model; }

    Completion complete(const RenderedPrompt &prompt) override {
        const std::string body = chat_request_body(prompt, cfg_).dump();
        const std::string path = endpoint_.path_prefix + "/chat/completions";
        Rng jitter(derive_seed(fnv1a64(body), "backoff"));
        const auto started = std::chrono::steady_clock::now();
        std::string last_error;
        for (int attempt = 1; attempt <= cfg_.max_retries + 1; ++attempt) {
            httplib::Client client(endpoint_.scheme_host_port);
            const auto secs = static_cast<time_t>(cfg_.timeout_seconds);
            const auto usecs = static_cast<time_t>((cfg_.timeout_seconds - static_cast<double>(secs)) * 1e6);
            client.set_connection_timeout(secs, usecs);
            client.set_read_timeout(secs, usecs);
            client.set_write_timeout(secs, usecs);
            if (!api_key_.empty())
                client.set_bearer_token_auth(api_key_);
            auto res = client.Post(path, body, "application/json");

            if (res && res->status >= 200 && res->status < 300) {
                log({{"event", "attempt"}, {"attempt", attempt}, {"status", res->status}});
                Completion c = parse_response(res->body);
                c.attempts = attempt;
                c.latency_ms = std::chrono::duration<double, std::milli>(
                                   std::chrono::steady_clock::now() - started)
                                   .count();
                return c;
            }
            if (res && res->status >= 400 && res->status < 500 && res->status != 408 && res->status != 429) {
                log({{"event", "attempt"}, {"attempt", attempt}, {"status", res->status}});
                fail(ErrorKind::backend, "HTTP " + std::to_string(res->status) + " from " +
                                             cfg_.endpoint + ": " + detail::excerpt(res->body));
            }
            last_error = res ? "HTTP " + std::to_string(res->status) + ": " + detail::excerpt(res->body)
                             : httplib::to_string(res.error());
            nlohmann::json event{{"event", "attempt"}, {"attempt", attempt}, {"error", last_error}};
            if (attempt <= cfg_.max_retries) {
                const double cap = std::min(cfg_.backoff_max_ms,
                                            cfg_.backoff_base_ms * std::pow(2.0, attempt - 1));
                const double delay = cap * (0.5 + 0.5 * jitter.uniform());
                event["backoff_ms"] = delay;
                log(event);
                std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(delay));
            } else {
                log(event);
            }
        }
        fail(ErrorKind::backend, "request to " + cfg_.endpoint + " failed after " +
                                     std::to_string(cfg_.max_retries + 1) + " attempts: " + last_error);
    }

    static Completion parse_response(const std::string &body) {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(body);
        } catch (const nlohmann::json::exception &) {
            fail(ErrorKind::backend, "response is not JSON: " + detail::excerpt(body));
        }
        Completion c;
        try {
            const auto &content = j.at("choices").at(0).at("message").at("content");
            if (content.is_string())
                c.text = content.get<std::string>();
        } catch (const nlohmann::json::exception &) {
            fail(ErrorKind::backend, "response has no choices[0].message.content: " + detail::excerpt(body));
        }
        if (c.text.find_first_not_of(" \t\r\n") == std::string::npos)
            fail(ErrorKind::backend, "empty completion");
        if (j.contains("usage") && j["usage"].is_object()) {
            TokenUsage u;
            const auto &uj = j["usage"];
            if (uj.contains("prompt_tokens")) u.prompt_tokens = uj["prompt_tokens"].get<long long>();
            if (uj.contains("completion_tokens")) u.completion_tokens = uj["completion_tokens"].get<long long>();
            if (uj.contains("total_tokens")) u.total_tokens = uj["total_tokens"].get<long long>();
            c.usage = u;
        }
        return c;
    }

  private:
    void log(const nlohmann::json &event) const {
        if (log_)
            log_(event);
    }

    BackendConfig cfg_;
    detail::Endpoint endpoint_;
    LogSink log_;
    std::string api_key_;
};

inline std::unique_ptr<Backend> make_backend(const BackendConfig &cfg, LogSink log = {}) {
    cfg.validate();
    if (cfg.endpoint.starts_with("stub:"))
        return std::make_unique<StubBackend>(cfg.endpoint);
    return std::make_unique<HttpChatBackend>(cfg, std::move(log));
}

/// Runs complete() over all prompts with at most max_concurrent workers.
/// Results come back in input order; the first failure (by input order) is
/// rethrown once every worker has finished.
inline std::vector<Completion> complete_batch(Backend &backend, const std::vector<RenderedPrompt> &prompts,
                                              int max_concurrent) {
    if (max_concurrent < 1)
        fail(ErrorKind::config, "max_concurrent_requests must be at least 1");
    std::vector<Completion> results(prompts.size());
    std::vector<std::exception_ptr> errors(prompts.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < prompts.size(); i = next++) {
            try {
                results[i] = backend.complete(prompts[i]);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const auto n = std::min<std::size_t>(static_cast<std::size_t>(max_concurrent), prompts.size());
    if (n <= 1) {
        worker();
    } else {
        std::vector<std::thread> threads;
        for (std::size_t t = 0; t < n; ++t)
            threads.emplace_back(worker);
        for (auto &t : threads)
            t.join();
    }
    for (const auto &e : errors)
        if (e)
            std::rethrow_exception(e);
    return results;
}

inline GeneratedReport to_report(Completion c, std::string annotation_id, Modality modality,
                                 GenerationMode mode, std::string model) {
    if (c.text.empty())
        fail(ErrorKind::backend, "empty completion for " + annotation_id);
    GeneratedReport r;
    r.text = std::move(c.text);
    r.annotation_id = std::move(annotation_id);
    r.modality = modality;
    r.mode = mode;
    r.model = std::move(model);
    r.latency_ms = c.latency_ms;
    r.usage = c.usage;
    return r;
}

inline GeneratedReport generate(const RenderedPrompt &p, Backend &backend, std::string annotation_id = "",
                                Modality modality = Modality::both,
                                GenerationMode mode = GenerationMode::zs) {
    return to_report(backend.complete(p), std::move(annotation_id), modality, mode, backend.model());
}

inline nlohmann::ordered_json generated_report_to_json(const GeneratedReport &r) {
    nlohmann::ordered_json j;
    j["annotation_id"] = r.annotation_id;
    j["text"] = r.text;
    j["modality"] = to_token(r.modality);
    j["mode"] = to_token(r.mode);
    j["model"] = r.model;
    j["latency_ms"] = r.latency_ms;
    if (r.usage) {
        nlohmann::ordered_json u = nlohmann::ordered_json::object();
        if (r.usage->prompt_tokens) u["prompt_tokens"] = *r.usage->prompt_tokens;
        if (r.usage->completion_tokens) u["completion_tokens"] = *r.usage->completion_tokens;
        if (r.usage->total_tokens) u["total_tokens"] = *r.usage->total_tokens;
        j["usage"] = u;
    }
    return j;
}

inline GeneratedReport generated_report_from_json(const nlohmann::json &j) {
    GeneratedReport r;
    try {
        r.annotation_id = j.at("annotation_id").get<std::string>();
        r.text = j.at("text").get<std::string>();
        r.modality = parse_token<Modality>(j.value("modality", std::string("both")));
        r.mode = parse_token<GenerationMode>(j.value("mode", std::string("zs")));
        r.model = j.value("model", std::string());
        r.latency_ms = j.value("latency_ms", 0.0);
        if (j.contains("usage")) {
            TokenUsage u;
            const auto &uj = j["usage"];
            if (uj.contains("prompt_tokens")) u.prompt_tokens = uj["prompt_tokens"].get<long long>();
            if (uj.contains("completion_tokens")) u.completion_tokens = uj["completion_tokens"].get<long long>();
            if (uj.contains("total_tokens")) u.total_tokens = uj["total_tokens"].get<long long>();
            r.usage = u;
        }
    } catch (const nlohmann::json::exception &e) {
        fail(ErrorKind::data, std::string("generated report record: ") + e.what());
    }
    return r;
}

} // namespace renalct

#include <chrono>
#include <cstdlib>
#include <mutex>
#include <optional>

#include <gtest/gtest.h>

#include "fake_chat_server.hpp"
#include "renalct/backend.hpp"
#include "test_support.hpp"

using namespace renalct;
using renalct::testing::FakeChatServer;
using renalct::testing::FakeReply;
using renalct::testing::chat_reply_body;

namespace {

BackendConfig fast_config(const std::string &endpoint) {
    BackendConfig cfg;
    cfg.endpoint = endpoint;
    cfg.model = "fake-model";
    cfg.timeout_seconds = 5.0;
    cfg.max_retries = 3;
    cfg.backoff_base_ms = 5.0;
    cfg.backoff_max_ms = 20.0;
    cfg.api_key_env = "";
    return cfg;
}

RenderedPrompt text_prompt(int i) {
    auto p = render_generation_prompt(renalct::testing::worked_feature_set(), nullptr, Modality::feature_only);
    p.user_text += "#" + std::to_string(i);
    return p;
}

std::optional<ErrorKind> kind_of(const std::function<void()> &fn) {
    try {
        fn();
    } catch (const Error &e) {
        return e.kind();
    }
    return std::nullopt;
}

} // namespace

TEST(HttpBackend, ReturnsContentAndUsage) {
    FakeChatServer server([](int, const nlohmann::json &) { return FakeReply{200, chat_reply_body("A report."), {}}; });
    HttpChatBackend backend(fast_config(server.endpoint()));
    const auto c = backend.complete(text_prompt(0));
    EXPECT_EQ(c.text, "A report.");
    EXPECT_EQ(c.attempts, 1);
    ASSERT_TRUE(c.usage);
    EXPECT_EQ(c.usage->total_tokens, 18);
    EXPECT_GE(c.latency_ms, 0.0);
}

TEST(HttpBackend, RequestBodyShape) {
    FakeChatServer server([](int, const nlohmann::json &) { return FakeReply{200, chat_reply_body("ok"), {}}; });
    auto cfg = fast_config(server.endpoint());
    cfg.temperature = 0.0;
    cfg.max_tokens = 77;
    HttpChatBackend backend(cfg);
    auto p = text_prompt(0);
    p.image_attachment = "data:image/png;base64,AAAA";
    backend.complete(p);
    const auto bodies = server.bodies();
    ASSERT_EQ(bodies.size(), 1u);
    const auto &b = bodies[0];
    EXPECT_EQ(b["model"], "fake-model");
    EXPECT_EQ(b["temperature"], 0.0);
    EXPECT_EQ(b["max_tokens"], 77);
    ASSERT_EQ(b["messages"].size(), 2u);
    EXPECT_EQ(b["messages"][0]["role"], "system");
    EXPECT_EQ(b["messages"][0]["content"], p.system_text);
    const auto &content = b["messages"][1]["content"];
    EXPECT_EQ(content[0]["type"], "text");
    EXPECT_EQ(content[0]["text"], p.user_text);
    EXPECT_EQ(content[1]["type"], "image_url");
    EXPECT_EQ(content[1]["image_url"]["url"], "data:image/png;base64,AAAA");
}

TEST(HttpBackend, BearerTokenFromEnvironment) {
    FakeChatServer server([](int, const nlohmann::json &) { return FakeReply{200, chat_reply_body("ok"), {}}; });
    ::setenv("RENALCT_TEST_KEY", "secret-123", 1);
    auto cfg = fast_config(server.endpoint());
    cfg.api_key_env = "RENALCT_TEST_KEY";
    HttpChatBackend(cfg).complete(text_prompt(0));
    ::unsetenv("RENALCT_TEST_KEY");
    EXPECT_EQ(server.auth_headers().at(0), "Bearer secret-123");
}

TEST(HttpBackend, ConcurrencyNeverExceedsLimit) {
    FakeChatServer server([](int i, const nlohmann::json &) {
        return FakeReply{200, chat_reply_body("r" + std::to_string(i)), std::chrono::milliseconds(20)};
    });
    HttpChatBackend backend(fast_config(server.endpoint()));
    std::vector<RenderedPrompt> prompts;
    for (int i = 0; i < 100; ++i)
        prompts.push_back(text_prompt(i));
    const auto results = complete_batch(backend, prompts, 4);
    EXPECT_EQ(results.size(), 100u);
    EXPECT_EQ(server.requests(), 100);
    EXPECT_LE(server.max_in_flight(), 4);
    EXPECT_GE(server.max_in_flight(), 2);
}

TEST(HttpBackend, BatchPreservesInputOrder) {
    FakeChatServer server([](int, const nlohmann::json &body) {
        const std::string text = body["messages"][1]["content"][0]["text"];
        return FakeReply{200, chat_reply_body(text.substr(text.rfind('#'))), {}};
    });
    HttpChatBackend backend(fast_config(server.endpoint()));
    std::vector<RenderedPrompt> prompts;
    for (int i = 0; i < 20; ++i)
        prompts.push_back(text_prompt(i));
    const auto results = complete_batch(backend, prompts, 3);
    for (int i = 0; i < 20; ++i)
        EXPECT_EQ(results[static_cast<std::size_t>(i)].text, "#" + std::to_string(i));
}

TEST(HttpBackend, TimeoutsRetryThenFail) {
    FakeChatServer server([](int, const nlohmann::json &) {
        return FakeReply{200, chat_reply_body("late"), std::chrono::milliseconds(600)};
    });
    auto cfg = fast_config(server.endpoint());
    cfg.timeout_seconds = 0.2;
    cfg.max_retries = 2;
    std::vector<nlohmann::json> events;
    std::mutex mu;
    HttpChatBackend backend(cfg, [&](const nlohmann::json &e) {
        std::lock_guard lock(mu);
        events.push_back(e);
    });
    try {
        backend.complete(text_prompt(0));
        FAIL();
    } catch (const Error &e) {
        EXPECT_EQ(e.kind(), ErrorKind::backend);
        EXPECT_EQ(e.exit_code(), 4);
        EXPECT_NE(std::string(e.what()).find("3 attempts"), std::string::npos) << e.what();
    }
    EXPECT_EQ(server.requests(), 3);
    ASSERT_EQ(events.size(), 3u);
    EXPECT_TRUE(events[0].contains("backoff_ms"));
    EXPECT_TRUE(events[1].contains("backoff_ms"));
    EXPECT_FALSE(events[2].contains("backoff_ms"));
    EXPECT_LE(events[1]["backoff_ms"].get<double>(), 10.0);
}

TEST(HttpBackend, ServerErrorsRetryThenSucceed) {
    FakeChatServer server([](int i, const nlohmann::json &) {
        if (i < 2)
            return FakeReply{503, R"({"error":"busy"})", {}};
        return FakeReply{200, chat_reply_body("finally"), {}};
    });
    HttpChatBackend backend(fast_config(server.endpoint()));
    const auto c = backend.complete(text_prompt(0));
    EXPECT_EQ(c.text, "finally");
    EXPECT_EQ(c.attempts, 3);
}

TEST(HttpBackend, RateLimitIsRetried) {
    FakeChatServer server([](int i, const nlohmann::json &) {
        return i == 0 ? FakeReply{429, "slow down", {}} : FakeReply{200, chat_reply_body("ok"), {}};
    });
    EXPECT_EQ(HttpChatBackend(fast_config(server.endpoint())).complete(text_prompt(0)).attempts, 2);
}

TEST(HttpBackend, ClientErrorIsImmediateWithExcerpt) {
    FakeChatServer server([](int, const nlohmann::json &) {
        return FakeReply{400, R"({"error":{"message":"bad model name"}})", {}};
    });
    try {
        HttpChatBackend(fast_config(server.endpoint())).complete(text_prompt(0));
        FAIL();
    } catch (const Error &e) {
        EXPECT_EQ(e.kind(), ErrorKind::backend);
        const std::string msg = e.what();
        EXPECT_NE(msg.find("400"), std::string::npos);
        EXPECT_NE(msg.find("bad model name"), std::string::npos);
    }
    EXPECT_EQ(server.requests(), 1);
}

TEST(HttpBackend, LongBodiesAreTruncatedInErrors) {
    const std::string long_body(5000, 'x');
    FakeChatServer server([&](int, const nlohmann::json &) { return FakeReply{401, long_body, {}}; });
    try {
        HttpChatBackend(fast_config(server.endpoint())).complete(text_prompt(0));
        FAIL();
    } catch (const Error &e) {
        EXPECT_LT(std::string(e.what()).size(), 600u);
    }
}

TEST(HttpBackend, EmptyOrMalformedCompletionIsBackendError) {
    for (const std::string &body : {chat_reply_body("   "), std::string("not json"), std::string(R"({"choices":[]})")}) {
        FakeChatServer server([&](int, const nlohmann::json &) { return FakeReply{200, body, {}}; });
        EXPECT_EQ(kind_of([&] { HttpChatBackend(fast_config(server.endpoint())).complete(text_prompt(0)); }),
                  ErrorKind::backend)
            << body;
    }
}

TEST(HttpBackend, UnreachableEndpoint) {
    int port = 0;
    {
        httplib::Server probe;
        port = probe.bind_to_any_port("127.0.0.1");
    }
    auto cfg = fast_config("http://127.0.0.1:" + std::to_string(port) + "/v1");
    cfg.timeout_seconds = 0.3;
    cfg.max_retries = 1;
    EXPECT_EQ(kind_of([&] { HttpChatBackend(cfg).complete(text_prompt(0)); }), ErrorKind::backend);
}

TEST(BackendConfig, ValidationAndFactory) {
    BackendConfig cfg;
    cfg.max_concurrent_requests = 0;
    EXPECT_EQ(kind_of([&] { cfg.validate(); }), ErrorKind::config);
    cfg = BackendConfig{};
    cfg.endpoint = "ftp-ish";
    EXPECT_EQ(kind_of([&] { make_backend(cfg); }), ErrorKind::config);
    cfg.endpoint = "stub:";
    EXPECT_EQ(make_backend(cfg)->model(), "stub");
    cfg.endpoint = "stub:noisy?rate=0.5&seed=3";
    EXPECT_EQ(make_backend(cfg)->model(), "stub-noisy");
    cfg.endpoint = "stub:noisy?rate=2";
    EXPECT_EQ(kind_of([&] { make_backend(cfg); }), ErrorKind::config);
    EXPECT_EQ(kind_of([&] {
                  StubBackend stub;
                  complete_batch(stub, {}, 0);
              }),
              ErrorKind::config);
}

TEST(BackendConfig, JsonRoundTrip) {
    BackendConfig cfg;
    cfg.endpoint = "http://localhost:1/v1";
    cfg.model = "m";
    cfg.max_retries = 7;
    cfg.backoff_base_ms = 12.5;
    const auto back = backend_config_from_json(nlohmann::json::parse(backend_config_to_json(cfg).dump()));
    EXPECT_EQ(back.endpoint, cfg.endpoint);
    EXPECT_EQ(back.model, "m");
    EXPECT_EQ(back.max_retries, 7);
    EXPECT_DOUBLE_EQ(back.backoff_base_ms, 12.5);
}

TEST(StubBackendTest, BatchMatchesSerialAndFirstErrorWins) {
    StubBackend stub;
    std::vector<RenderedPrompt> prompts;
    for (int i = 0; i < 12; ++i)
        prompts.push_back(text_prompt(i));
    const auto serial = complete_batch(stub, prompts, 1);
    const auto parallel = complete_batch(stub, prompts, 4);
    for (std::size_t i = 0; i < prompts.size(); ++i)
        EXPECT_EQ(serial[i].text, parallel[i].text);

    CallbackBackend failing([](const RenderedPrompt &p) -> std::string {
        if (p.user_text.ends_with("#5"))
            fail(ErrorKind::backend, "five");
        if (p.user_text.ends_with("#9"))
            fail(ErrorKind::backend, "nine");
        return "ok";
    });
    try {
        complete_batch(failing, prompts, 4);
        FAIL();
    } catch (const Error &e) {
        EXPECT_STREQ(e.what(), "five");
    }
}

TEST(GeneratedReportJson, RoundTrip) {
    GeneratedReport r;
    r.text = "x";
    r.annotation_id = "A1";
    r.modality = Modality::image_only;
    r.mode = GenerationMode::zs;
    r.model = "m";
    r.latency_ms = 3.5;
    r.usage = TokenUsage{1, 2, 3};
    const auto back = generated_report_from_json(nlohmann::json::parse(generated_report_to_json(r).dump()));
    EXPECT_EQ(back.text, "x");
    EXPECT_EQ(back.modality, Modality::image_only);
    EXPECT_EQ(back.usage, r.usage);
    EXPECT_EQ(kind_of([] { to_report(Completion{}, "A", Modality::both, GenerationMode::zs, "m"); }),
              ErrorKind::backend);
}

#include "flaky_server.hpp"
#include "support.hpp"

#include "tabshot/inference.hpp"
#include "tabshot/synthetic.hpp"

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <deque>

using namespace tabshot;
using namespace tabshot::fixtures;

namespace {

/// Transport that replays scripted outcomes: an HTTP status, or 0 for a
/// connection failure.
class ScriptedTransport : public HttpTransport {
public:
    explicit ScriptedTransport(std::deque<int> script) : script_(std::move(script)) {}
    HttpResponse post(const HttpRequest& request, std::chrono::milliseconds) override {
        requests.push_back(request);
        const int status = script_.size() > 1 ? script_.front() : script_.back();
        if (script_.size() > 1) script_.pop_front();
        if (status == 0) throw TransportFailure("connection refused");
        if (status == 200) return {200, R"({"choices":[{"message":{"content":" 1\n"},"finish_reason":"stop"}]})"};
        return {status, "nope"};
    }
    std::vector<HttpRequest> requests;

private:
    std::deque<int> script_;
};

EndpointConfig test_config() {
    EndpointConfig cfg;
    cfg.base_url = "http://example.invalid/v1/";
    cfg.model_name = "test-model";
    cfg.retry.initial_backoff = std::chrono::milliseconds(10);
    return cfg;
}

struct Outcome {
    std::optional<InferenceErrc> error;
    std::size_t requests = 0;
    std::vector<long> sleeps;
};

Outcome run_script(std::deque<int> script, EndpointConfig cfg = test_config()) {
    auto transport = std::make_shared<ScriptedTransport>(std::move(script));
    Outcome out;
    HttpChatModel model(cfg, transport, [&](std::chrono::milliseconds d) { out.sleeps.push_back(d.count()); });
    try {
        auto raw = model.complete(mini_prompt({PromptStructure::tabular, Shots::few, PromptVariant::standard}));
        EXPECT_EQ(raw.text, " 1\n");
        EXPECT_EQ(raw.attempts, static_cast<int>(transport->requests.size()));
    } catch (const InferenceError& e) {
        out.error = e.kind();
    }
    out.requests = transport->requests.size();
    return out;
}

}  // namespace

TEST(Decode, SpecExamples) {
    EXPECT_EQ(constrained_binary_decode(" 1\n"), 1);
    EXPECT_EQ(constrained_binary_decode("The diagnosis is 0 (cognitively normal)."), 0);
    EXPECT_EQ(constrained_binary_decode("I cannot determine this."), std::nullopt);
}

TEST(Decode, AdversarialCorpus) {
    auto corpus = nlohmann::json::parse(read_text(golden("decode_corpus.json")));
    ASSERT_EQ(corpus.size(), 50u);
    for (const auto& c : corpus) {
        const auto text = c.at("text").get<std::string>();
        std::optional<int> expected;
        if (!c.at("label").is_null()) expected = c.at("label").get<int>();
        EXPECT_EQ(constrained_binary_decode(text), expected) << "text: " << text;
    }
}

TEST(Decode, TotalOnMockAlphabet) {
    RawResponse r;
    for (const char* t : {"0", "1"}) {
        r.text = t;
        EXPECT_TRUE(constrained_binary_decode(r).has_value());
    }
}

TEST(RequestBody, LogitBiasGoldenIsByteExact) {
    auto cfg = test_config();
    cfg.supports_logit_bias = true;
    cfg.token_id_zero = 15;
    cfg.token_id_one = 16;
    auto body = build_request_body(cfg, mini_prompt({PromptStructure::tabular, Shots::few, PromptVariant::standard}));
    EXPECT_EQ(body, read_text(golden("request_logit_bias.json")));
}

TEST(RequestBody, BiasOnlyForStandardVariant) {
    auto cfg = test_config();
    cfg.supports_logit_bias = true;
    cfg.token_id_zero = 15;
    cfg.token_id_one = 16;
    for (const auto& format : all_formats()) {
        auto body = nlohmann::json::parse(build_request_body(cfg, mini_prompt(format)));
        const bool standard = format.variant == PromptVariant::standard;
        EXPECT_EQ(body.contains("logit_bias"), standard) << format.name();
        EXPECT_EQ(body.at("max_tokens"), standard ? 1 : 512) << format.name();
        EXPECT_EQ(body.at("messages").size(), mini_prompt(format).messages.size());
    }
    cfg.supports_logit_bias = false;
    auto body = nlohmann::json::parse(
        build_request_body(cfg, mini_prompt({PromptStructure::tabular, Shots::few, PromptVariant::standard})));
    EXPECT_FALSE(body.contains("logit_bias"));
    EXPECT_EQ(body.at("max_tokens"), 512);
}

TEST(ResponseParse, ShapesAndErrors) {
    auto r = parse_completion_response(
        R"({"choices":[{"message":{"content":"0"},"finish_reason":"length"}],"usage":{"prompt_tokens":7,"completion_tokens":1}})");
    EXPECT_EQ(r.text, "0");
    EXPECT_EQ(r.finish_reason, "length");
    EXPECT_EQ(r.prompt_tokens, 7);
    EXPECT_EQ(r.completion_tokens, 1);
    for (const char* bad : {"", "[]", "{}", R"({"choices":[]})", R"({"choices":[{"text":"1"}]})"}) {
        try {
            parse_completion_response(bad);
            ADD_FAILURE() << bad;
        } catch (const InferenceError& e) {
            EXPECT_EQ(e.kind(), InferenceErrc::malformed_response);
        }
    }
}

TEST(Retry, SucceedsOnThirdAttemptWithBackoff) {
    auto out = run_script({500, 500, 200});
    EXPECT_FALSE(out.error);
    EXPECT_EQ(out.requests, 3u);
    EXPECT_EQ(out.sleeps, (std::vector<long>{10, 20}));
}

TEST(Retry, ConnectionFailuresAreRetried) {
    auto out = run_script({0, 503, 200});
    EXPECT_FALSE(out.error);
    EXPECT_EQ(out.requests, 3u);
}

TEST(Retry, ClientErrorsAreNotRetried) {
    auto rejected = run_script({400, 200});
    EXPECT_EQ(rejected.error, InferenceErrc::request_rejected);
    EXPECT_EQ(rejected.requests, 1u);
    auto auth = run_script({401, 200});
    EXPECT_EQ(auth.error, InferenceErrc::auth_failure);
    EXPECT_EQ(auth.requests, 1u);
    EXPECT_TRUE(auth.sleeps.empty());
}

TEST(Retry, ExhaustionReportsTheLastFailure) {
    auto limited = run_script({429});
    EXPECT_EQ(limited.error, InferenceErrc::rate_limited);
    EXPECT_EQ(limited.requests, 3u);
    auto down = run_script({500});
    EXPECT_EQ(down.error, InferenceErrc::transport);
    auto refused = run_script({0});
    EXPECT_EQ(refused.error, InferenceErrc::transport);
}

TEST(Auth, BearerTokenFromNamedVariable) {
    auto cfg = test_config();
    cfg.auth_env = "TABSHOT_TEST_TOKEN";
    auto transport = std::make_shared<ScriptedTransport>(std::deque<int>{200});
    HttpChatModel model(cfg, transport, [](auto) {}, [](const std::string& name) -> std::optional<std::string> {
        if (name == "TABSHOT_TEST_TOKEN") return "sekrit";
        return std::nullopt;
    });
    model.complete(mini_prompt({PromptStructure::tabular, Shots::zero, PromptVariant::standard}));
    ASSERT_EQ(transport->requests.size(), 1u);
    EXPECT_EQ(transport->requests[0].url, "http://example.invalid/v1/chat/completions");
    auto& h = transport->requests[0].headers;
    EXPECT_NE(std::find(h.begin(), h.end(), std::pair<std::string, std::string>{"Authorization", "Bearer sekrit"}),
              h.end());

    HttpChatModel unset(cfg, transport, [](auto) {}, [](const std::string&) { return std::optional<std::string>(); });
    try {
        unset.complete(mini_prompt({PromptStructure::tabular, Shots::zero, PromptVariant::standard}));
        FAIL();
    } catch (const InferenceError& e) {
        EXPECT_EQ(e.kind(), InferenceErrc::auth_failure);
    }
}

TEST(HttpTransport, FlakyLocalServer) {
    FlakyServer server({500, 500, 200});
    auto cfg = test_config();
    cfg.base_url = server.base_url();
    cfg.supports_logit_bias = true;
    cfg.token_id_zero = 15;
    cfg.token_id_one = 16;
    cfg.timeout = std::chrono::milliseconds(5000);
    std::vector<long> sleeps;
    HttpChatModel model(cfg, make_httplib_transport(), [&](std::chrono::milliseconds d) { sleeps.push_back(d.count()); });
    auto prompt = mini_prompt({PromptStructure::tabular, Shots::few, PromptVariant::standard});
    auto raw = model.complete(prompt);
    EXPECT_EQ(raw.text, "1");
    EXPECT_EQ(raw.attempts, 3);
    EXPECT_EQ(raw.prompt_tokens, 12);
    auto bodies = server.bodies();
    ASSERT_EQ(bodies.size(), 3u);
    for (const auto& b : bodies) EXPECT_EQ(b, read_text(golden("request_logit_bias.json")));
    EXPECT_EQ(sleeps, (std::vector<long>{10, 20}));
}

TEST(HttpTransport, RefusedConnectionIsTransportError) {
    auto cfg = test_config();
    cfg.base_url = "http://127.0.0.1:1/v1";
    cfg.timeout = std::chrono::milliseconds(2000);
    HttpChatModel model(cfg, make_httplib_transport(), [](auto) {});
    try {
        model.complete(mini_prompt({PromptStructure::tabular, Shots::zero, PromptVariant::standard}));
        FAIL();
    } catch (const InferenceError& e) {
        EXPECT_EQ(e.kind(), InferenceErrc::transport);
    }
}

TEST(EndpointConfig, ParsesAndValidates) {
    auto cfg = endpoint_from_json(R"({"base_url":"http://h:1/v1","model":"m","auth_env":"K","supports_logit_bias":true,
        "token_ids":{"0":15,"1":16},"timeout_ms":1234,"concurrency":2,
        "retry":{"max_attempts":5,"initial_backoff_ms":7,"backoff_multiplier":3}})");
    EXPECT_EQ(cfg.model_name, "m");
    EXPECT_EQ(cfg.token_id_one, 16);
    EXPECT_EQ(cfg.timeout.count(), 1234);
    EXPECT_EQ(cfg.concurrency, 2u);
    EXPECT_EQ(cfg.retry.max_attempts, 5);
    EXPECT_EQ(cfg.retry.initial_backoff.count(), 7);
    EXPECT_DOUBLE_EQ(cfg.retry.backoff_multiplier, 3.0);
    for (const char* bad : {R"({"model":"m"})", R"({"base_url":"http://h","model":"m","supports_logit_bias":true})",
                            R"({"base_url":"http://h","model":"m","retry":{"max_attempts":0}})", "not json"}) {
        try {
            endpoint_from_json(bad);
            ADD_FAILURE() << bad;
        } catch (const InferenceError& e) {
            EXPECT_EQ(e.kind(), InferenceErrc::bad_config) << bad;
        }
    }
}

TEST(MockOracle, SpecExamplesAndBoundary) {
    MockRule rule{"AGE", 75.0, MockRule::Direction::greater_is_positive};
    EXPECT_EQ(rule.evaluate(80), 1);
    EXPECT_EQ(rule.evaluate(75), 0);
    EXPECT_EQ(rule.evaluate(std::nan("")), 0);
    MockRule less{"x", 1.0, MockRule::Direction::less_is_positive};
    EXPECT_EQ(less.evaluate(0.5), 1);
    EXPECT_EQ(less.evaluate(1.0), 0);
}

TEST(MockOracle, ReadsTargetFromBothStructures) {
    MockRule rule{"hippocampus", 3500.0, MockRule::Direction::greater_is_positive};  // S01 has 3541.2
    for (const auto& format : all_formats()) {
        if (format.variant == PromptVariant::reflection_round) continue;
        EXPECT_EQ(mock_oracle_predict(mini_prompt(format), rule).text, "1") << format.name();
    }
    rule.threshold = 3541.2;
    EXPECT_EQ(mock_oracle_predict(mini_prompt({PromptStructure::tabular, Shots::few, PromptVariant::standard}), rule).text,
              "0");
    MockRule absent{"TAU", 1.0, MockRule::Direction::greater_is_positive};
    try {
        mock_oracle_predict(mini_prompt({PromptStructure::serialized, Shots::few, PromptVariant::standard}), absent);
        FAIL();
    } catch (const InferenceError& e) {
        EXPECT_EQ(e.kind(), InferenceErrc::feature_not_found);
    }
}

TEST(MockOracle, RuleFromJson) {
    auto r = mock_rule_from_json(R"({"feature":"TAU","threshold":300,"direction":"less"})");
    EXPECT_EQ(r.feature, "TAU");
    EXPECT_EQ(r.direction, MockRule::Direction::less_is_positive);
    EXPECT_THROW(mock_rule_from_json(R"({"feature":"TAU","threshold":300,"direction":"up"})"), InferenceError);
    EXPECT_THROW(mock_rule_from_json(R"({"threshold":300})"), InferenceError);
}

TEST(Transcript, OrderedAuditLine) {
    auto prompt = mini_prompt({PromptStructure::tabular, Shots::zero, PromptVariant::standard});
    RawResponse raw{"1", "stop", 12.5, 40, 1, 2};
    auto line = transcript_line(prompt, raw, 1);
    EXPECT_EQ(line.find('\n'), std::string::npos);
    auto j = nlohmann::ordered_json::parse(line);
    std::vector<std::string> keys;
    for (auto it = j.begin(); it != j.end(); ++it) keys.push_back(it.key());
    EXPECT_EQ(keys, (std::vector<std::string>{"target_id", "format", "round", "messages", "response", "finish_reason",
                                              "latency_ms", "attempts", "prompt_tokens", "completion_tokens"}));
    EXPECT_EQ(j.at("target_id"), "S01");
    EXPECT_EQ(j.at("format"), "zero_tabular_standard");
    raw.text = "bad \xff byte";
    EXPECT_NO_THROW(nlohmann::json::parse(transcript_line(prompt, raw, 2)));
}

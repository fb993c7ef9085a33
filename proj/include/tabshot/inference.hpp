#pragma once

#include "tabshot/error.hpp"
#include "tabshot/prompt.hpp"

#include <chrono>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace tabshot {

struct RetryPolicy {
    int max_attempts = 3;
    std::chrono::milliseconds initial_backoff{500};
    double backoff_multiplier = 2.0;
};

struct EndpointConfig {
    std::string base_url;         // e.g. "http://localhost:8000/v1"
    std::string model_name;
    std::string auth_env;         // environment variable holding the bearer token; empty = no auth
    int max_output_tokens = 512;
    double temperature = 0.0;
    bool supports_logit_bias = false;
    std::optional<long> token_id_zero;  // tokenizer id of "0"
    std::optional<long> token_id_one;   // tokenizer id of "1"
    double logit_bias_strength = 100.0;
    std::chrono::milliseconds timeout{60000};
    RetryPolicy retry;
    std::size_t concurrency = 4;

    void validate() const;
};

EndpointConfig endpoint_from_json(std::string_view json_text);

struct RawResponse {
    std::string text;
    std::string finish_reason;
    double latency_ms = 0.0;
    std::optional<long> prompt_tokens;
    std::optional<long> completion_tokens;
    int attempts = 1;
};

enum class InferenceErrc { transport, auth_failure, rate_limited, malformed_response, request_rejected, bad_config,
                           feature_not_found };
using InferenceError = TypedError<InferenceErrc>;

struct HttpRequest {
    std::string url;
    std::vector<std::pair<std::string, std::string>> headers;
    std::string body;
};

struct HttpResponse {
    int status = 0;
    std::string body;
};

/// Thrown by transports for connection-level failures (refused, timeout, reset).
class TransportFailure : public Error {
public:
    using Error::Error;
};

class HttpTransport {
public:
    virtual ~HttpTransport() = default;
    virtual HttpResponse post(const HttpRequest& request, std::chrono::milliseconds timeout) = 0;
};

/// cpp-httplib backed transport (http, and https when built with OpenSSL).
std::shared_ptr<HttpTransport> make_httplib_transport();

class ChatModel {
public:
    virtual ~ChatModel() = default;
    virtual RawResponse complete(const RenderedPrompt& prompt) = 0;
    virtual std::string name() const = 0;
    /// In-flight request bound for callers that fan out.
    virtual std::size_t concurrency() const { return 1; }
};

/// JSON body for POST {base_url}/chat/completions. Keys in fixed order: model,
/// messages, temperature, max_tokens, logit_bias. The bias map (favoring the
/// "0"/"1" tokens) and max_tokens=1 apply to standard-variant prompts only.
std::string build_request_body(const EndpointConfig& config, const RenderedPrompt& prompt);

/// Reads choices[0].message.content (+ finish_reason, usage). Throws
/// InferenceError(malformed_response).
RawResponse parse_completion_response(std::string_view body);

class HttpChatModel : public ChatModel {
public:
    using Sleeper = std::function<void(std::chrono::milliseconds)>;
    using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;

    HttpChatModel(EndpointConfig config, std::shared_ptr<HttpTransport> transport, Sleeper sleeper = {},
                  EnvLookup env = {});

    /// One chat-completion call with retries on transport errors, 429 and 5xx.
    /// Other 4xx responses fail immediately.
    RawResponse complete(const RenderedPrompt& prompt) override;
    std::string name() const override { return config_.model_name; }
    std::size_t concurrency() const override { return config_.concurrency; }
    const EndpointConfig& config() const { return config_; }

private:
    EndpointConfig config_;
    std::shared_ptr<HttpTransport> transport_;
    Sleeper sleeper_;
    EnvLookup env_;
};

struct MockRule {
    enum class Direction { greater_is_positive, less_is_positive };
    std::string feature;
    double threshold = 0.0;
    Direction direction = Direction::greater_is_positive;

    /// Direct evaluation on a value; Missing (NaN) maps to 0.
    int evaluate(double value) const;
};

MockRule mock_rule_from_json(std::string_view json_text);

/// Reads the target's value for rule.feature from the prompt (final grid row, or
/// "name=value" pair of the serialized target block) and answers "1"/"0".
RawResponse mock_oracle_predict(const RenderedPrompt& prompt, const MockRule& rule);

class MockRuleModel : public ChatModel {
public:
    explicit MockRuleModel(MockRule rule, std::size_t concurrency = 4) : rule_(std::move(rule)), concurrency_(concurrency) {}
    RawResponse complete(const RenderedPrompt& prompt) override { return mock_oracle_predict(prompt, rule_); }
    std::string name() const override { return "mock:" + rule_.feature; }
    std::size_t concurrency() const override { return concurrency_; }

private:
    MockRule rule_;
    std::size_t concurrency_;
};

/// Maps free text to a label: (1) trimmed text is "0"/"1"; (2) earliest standalone
/// 0/1 digit; (3) earliest "CN"/"cognitively normal" (0) or "AD"/"Alzheimer" (1),
/// case-insensitive. nullopt means undecodable.
std::optional<int> constrained_binary_decode(std::string_view text);
inline std::optional<int> constrained_binary_decode(const RawResponse& raw) {
    return constrained_binary_decode(raw.text);
}

/// One audit line for the transcript JSONL.
std::string transcript_line(const RenderedPrompt& prompt, const RawResponse& response, int round);

}  // namespace tabshot

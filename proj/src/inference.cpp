#include "tabshot/inference.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <thread>

namespace tabshot {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace {

constexpr auto kReplace = json::error_handler_t::replace;

bool is_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }
bool is_digit(char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; }
char lower(char c) { return static_cast<char>(std::tolower(static_cast<unsigned char>(c))); }

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

bool starts_with_ci(std::string_view text, std::size_t pos, std::string_view needle) {
    if (pos + needle.size() > text.size()) return false;
    for (std::size_t i = 0; i < needle.size(); ++i) {
        if (lower(text[pos + i]) != needle[i]) return false;
    }
    return true;
}

// A 0/1 digit counts as standalone when it is not glued to letters or other
// digits and is not part of a decimal ("0.5", "1.25") or a signed number.
bool standalone_digit(std::string_view s, std::size_t i) {
    if (i > 0) {
        const char p = s[i - 1];
        if (is_alnum(p) || p == '-' || p == '+' || p == '_') return false;
        if (p == '.' && i > 1 && is_digit(s[i - 2])) return false;
        if (p == '.' && i == 1) return false;
    }
    if (i + 1 < s.size()) {
        const char n = s[i + 1];
        if (is_alnum(n) || n == '_') return false;
        if ((n == '.' || n == ',') && i + 2 < s.size() && is_digit(s[i + 2])) return false;
    }
    return true;
}

bool word_at(std::string_view s, std::size_t pos, std::size_t len) {
    const bool left = pos == 0 || !is_alnum(s[pos - 1]);
    const bool right = pos + len >= s.size() || !is_alnum(s[pos + len]);
    return left && right;
}

std::optional<double> parse_double(std::string_view s) {
    s = trim(s);
    if (s.empty()) return std::nullopt;
    if (s.front() == '+') s.remove_prefix(1);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
    return v;
}

struct UrlParts {
    std::string origin;  // scheme://host[:port]
    std::string path;
};

UrlParts split_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) {
        throw TransportFailure("endpoint URL '" + url + "' has no scheme");
    }
    const auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

class HttplibTransport : public HttpTransport {
public:
    HttpResponse post(const HttpRequest& request, std::chrono::milliseconds timeout) override {
        auto parts = split_url(request.url);
        httplib::Client client(parts.origin);
        const auto secs = static_cast<time_t>(timeout.count() / 1000);
        const auto usecs = static_cast<time_t>((timeout.count() % 1000) * 1000);
        client.set_connection_timeout(secs, usecs);
        client.set_read_timeout(secs, usecs);
        client.set_write_timeout(secs, usecs);
        httplib::Headers headers;
        std::string content_type = "application/json";
        for (const auto& [k, v] : request.headers) {
            if (k == "Content-Type") {
                content_type = v;
            } else {
                headers.emplace(k, v);
            }
        }
        auto result = client.Post(parts.path, headers, request.body, content_type);
        if (!result) {
            throw TransportFailure("request to " + request.url + " failed: " + httplib::to_string(result.error()));
        }
        return {result->status, result->body};
    }
};

}  // namespace

void EndpointConfig::validate() const {
    if (base_url.empty()) throw InferenceError(InferenceErrc::bad_config, "endpoint base_url is empty");
    if (model_name.empty()) throw InferenceError(InferenceErrc::bad_config, "endpoint model name is empty");
    if (max_output_tokens < 1) throw InferenceError(InferenceErrc::bad_config, "max_output_tokens must be positive");
    if (retry.max_attempts < 1) throw InferenceError(InferenceErrc::bad_config, "retry.max_attempts must be >= 1");
    if (concurrency < 1) throw InferenceError(InferenceErrc::bad_config, "concurrency must be >= 1");
    if (supports_logit_bias && (!token_id_zero || !token_id_one)) {
        throw InferenceError(InferenceErrc::bad_config, "logit bias needs token ids for \"0\" and \"1\"");
    }
}

EndpointConfig endpoint_from_json(std::string_view json_text) {
    json doc = json::parse(json_text, nullptr, false);
    if (!doc.is_object()) throw InferenceError(InferenceErrc::bad_config, "endpoint config is not a JSON object");
    EndpointConfig cfg;
    try {
        cfg.base_url = doc.at("base_url").get<std::string>();
        cfg.model_name = doc.at("model").get<std::string>();
        cfg.auth_env = doc.value("auth_env", std::string());
        cfg.max_output_tokens = doc.value("max_output_tokens", cfg.max_output_tokens);
        cfg.temperature = doc.value("temperature", cfg.temperature);
        cfg.supports_logit_bias = doc.value("supports_logit_bias", false);
        if (doc.contains("token_ids")) {
            const auto& ids = doc.at("token_ids");
            cfg.token_id_zero = ids.at("0").get<long>();
            cfg.token_id_one = ids.at("1").get<long>();
        }
        cfg.logit_bias_strength = doc.value("logit_bias_strength", cfg.logit_bias_strength);
        cfg.timeout = std::chrono::milliseconds(doc.value("timeout_ms", static_cast<long>(cfg.timeout.count())));
        cfg.concurrency = doc.value("concurrency", cfg.concurrency);
        if (doc.contains("retry")) {
            const auto& r = doc.at("retry");
            cfg.retry.max_attempts = r.value("max_attempts", cfg.retry.max_attempts);
            cfg.retry.initial_backoff =
                std::chrono::milliseconds(r.value("initial_backoff_ms", static_cast<long>(cfg.retry.initial_backoff.count())));
            cfg.retry.backoff_multiplier = r.value("backoff_multiplier", cfg.retry.backoff_multiplier);
        }
    } catch (const json::exception& e) {
        throw InferenceError(InferenceErrc::bad_config, std::string("endpoint config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

std::shared_ptr<HttpTransport> make_httplib_transport() { return std::make_shared<HttplibTransport>(); }

std::string build_request_body(const EndpointConfig& config, const RenderedPrompt& prompt) {
    ordered_json body;
    body["model"] = config.model_name;
    ordered_json messages = ordered_json::array();
    for (const auto& m : prompt.messages) {
        ordered_json msg;
        msg["role"] = std::string(to_string(m.role));
        msg["content"] = m.content;
        messages.push_back(std::move(msg));
    }
    body["messages"] = std::move(messages);
    body["temperature"] = config.temperature;
    const bool constrain = config.supports_logit_bias && prompt.format.variant == PromptVariant::standard;
    body["max_tokens"] = constrain ? 1 : config.max_output_tokens;
    if (constrain) {
        ordered_json bias;
        bias[std::to_string(*config.token_id_zero)] = config.logit_bias_strength;
        bias[std::to_string(*config.token_id_one)] = config.logit_bias_strength;
        body["logit_bias"] = std::move(bias);
    }
    return body.dump(-1, ' ', false, ordered_json::error_handler_t::replace);
}

RawResponse parse_completion_response(std::string_view body) {
    json doc = json::parse(body, nullptr, false);
    if (!doc.is_object()) throw InferenceError(InferenceErrc::malformed_response, "response body is not a JSON object");
    RawResponse out;
    try {
        const auto& choice = doc.at("choices").at(0);
        const auto& content = choice.at("message").at("content");
        out.text = content.is_null() ? std::string() : content.get<std::string>();
        if (choice.contains("finish_reason") && choice["finish_reason"].is_string()) {
            out.finish_reason = choice["finish_reason"].get<std::string>();
        }
        if (doc.contains("usage") && doc["usage"].is_object()) {
            const auto& usage = doc["usage"];
            if (usage.contains("prompt_tokens")) out.prompt_tokens = usage["prompt_tokens"].get<long>();
            if (usage.contains("completion_tokens")) out.completion_tokens = usage["completion_tokens"].get<long>();
        }
    } catch (const json::exception& e) {
        throw InferenceError(InferenceErrc::malformed_response, std::string("unexpected response shape: ") + e.what());
    }
    return out;
}

HttpChatModel::HttpChatModel(EndpointConfig config, std::shared_ptr<HttpTransport> transport, Sleeper sleeper,
                             EnvLookup env)
    : config_(std::move(config)), transport_(std::move(transport)), sleeper_(std::move(sleeper)), env_(std::move(env)) {
    config_.validate();
    if (!transport_) transport_ = make_httplib_transport();
    if (!sleeper_) sleeper_ = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
    if (!env_) {
        env_ = [](const std::string& name) -> std::optional<std::string> {
            const char* v = std::getenv(name.c_str());
            if (!v) return std::nullopt;
            return std::string(v);
        };
    }
}

RawResponse HttpChatModel::complete(const RenderedPrompt& prompt) {
    HttpRequest request;
    std::string base = config_.base_url;
    while (!base.empty() && base.back() == '/') base.pop_back();
    request.url = base + "/chat/completions";
    request.headers.emplace_back("Content-Type", "application/json");
    if (!config_.auth_env.empty()) {
        auto token = env_(config_.auth_env);
        if (!token || token->empty()) {
            throw InferenceError(InferenceErrc::auth_failure,
                                 "environment variable " + config_.auth_env + " is not set");
        }
        request.headers.emplace_back("Authorization", "Bearer " + *token);
    }
    request.body = build_request_body(config_, prompt);

    auto backoff = config_.retry.initial_backoff;
    std::string last_error;
    InferenceErrc last_kind = InferenceErrc::transport;
    for (int attempt = 1; attempt <= config_.retry.max_attempts; ++attempt) {
        if (attempt > 1) {
            sleeper_(backoff);
            backoff = std::chrono::milliseconds(
                static_cast<long>(static_cast<double>(backoff.count()) * config_.retry.backoff_multiplier));
        }
        const auto start = std::chrono::steady_clock::now();
        HttpResponse response;
        try {
            response = transport_->post(request, config_.timeout);
        } catch (const TransportFailure& e) {
            last_error = e.what();
            last_kind = InferenceErrc::transport;
            continue;
        }
        const auto elapsed = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start);
        if (response.status >= 200 && response.status < 300) {
            RawResponse out = parse_completion_response(response.body);
            out.latency_ms = elapsed.count();
            out.attempts = attempt;
            return out;
        }
        if (response.status == 401 || response.status == 403) {
            throw InferenceError(InferenceErrc::auth_failure,
                                 "endpoint rejected credentials (HTTP " + std::to_string(response.status) + ")");
        }
        if (response.status == 429) {
            last_kind = InferenceErrc::rate_limited;
            last_error = "rate limited (HTTP 429)";
            continue;
        }
        if (response.status >= 500) {
            last_kind = InferenceErrc::transport;
            last_error = "server error (HTTP " + std::to_string(response.status) + ")";
            continue;
        }
        throw InferenceError(InferenceErrc::request_rejected,
                             "endpoint rejected the request (HTTP " + std::to_string(response.status) + "): " +
                                 response.body.substr(0, 200));
    }
    throw InferenceError(last_kind, last_error + " after " + std::to_string(config_.retry.max_attempts) + " attempts");
}

int MockRule::evaluate(double value) const {
    if (std::isnan(value)) return 0;
    if (direction == Direction::greater_is_positive) return value > threshold ? 1 : 0;
    return value < threshold ? 1 : 0;
}

MockRule mock_rule_from_json(std::string_view json_text) {
    json doc = json::parse(json_text, nullptr, false);
    if (!doc.is_object()) throw InferenceError(InferenceErrc::bad_config, "mock rule is not a JSON object");
    MockRule rule;
    try {
        rule.feature = doc.at("feature").get<std::string>();
        rule.threshold = doc.at("threshold").get<double>();
        const auto dir = doc.value("direction", std::string("greater"));
        if (dir == "greater") {
            rule.direction = MockRule::Direction::greater_is_positive;
        } else if (dir == "less") {
            rule.direction = MockRule::Direction::less_is_positive;
        } else {
            throw InferenceError(InferenceErrc::bad_config, "mock rule direction must be 'greater' or 'less'");
        }
    } catch (const json::exception& e) {
        throw InferenceError(InferenceErrc::bad_config, std::string("mock rule: ") + e.what());
    }
    return rule;
}

namespace {

std::optional<std::string> target_value_from_prompt(const RenderedPrompt& prompt, const std::string& feature) {
    const auto idx = prompt.expected_label_position.message_index;
    if (idx >= prompt.messages.size()) return std::nullopt;
    const std::string& text = prompt.messages[idx].content;
    if (prompt.expected_label_position.kind == LabelPosition::Kind::grid_last_cell) {
        auto grid = parse_grid(text);
        if (!grid || grid->rows.empty()) return std::nullopt;
        auto it = std::find(grid->header.begin(), grid->header.end(), feature);
        if (it == grid->header.end()) return std::nullopt;
        const auto col = static_cast<std::size_t>(it - grid->header.begin());
        const auto& row = grid->rows.back();
        if (col >= row.size()) return std::nullopt;
        return row[col];
    }
    auto block = serialized_target_block(text);
    if (!block) return std::nullopt;
    const std::string key = feature + "=";
    std::size_t pos = 0;
    while ((pos = block->find(key, pos)) != std::string::npos) {
        const bool boundary = pos == 0 || (*block)[pos - 1] == ' ' || (*block)[pos - 1] == '\n';
        if (boundary) {
            const auto start = pos + key.size();
            auto end = block->find_first_of(", \n", start);
            return block->substr(start, end == std::string::npos ? std::string::npos : end - start);
        }
        pos += key.size();
    }
    return std::nullopt;
}

}  // namespace

RawResponse mock_oracle_predict(const RenderedPrompt& prompt, const MockRule& rule) {
    auto text = target_value_from_prompt(prompt, rule.feature);
    if (!text) {
        throw InferenceError(InferenceErrc::feature_not_found,
                             "feature '" + rule.feature + "' is not readable from the prompt for " + prompt.target_id);
    }
    double value = std::numeric_limits<double>::quiet_NaN();
    if (*text != "NaN") {
        auto v = parse_double(*text);
        if (!v) {
            throw InferenceError(InferenceErrc::feature_not_found,
                                 "feature '" + rule.feature + "' has non-numeric value '" + *text + "'");
        }
        value = *v;
    }
    RawResponse out;
    out.text = rule.evaluate(value) == 1 ? "1" : "0";
    out.finish_reason = "stop";
    return out;
}

std::optional<int> constrained_binary_decode(std::string_view text) {
    const auto trimmed = trim(text);
    if (trimmed == "0") return 0;
    if (trimmed == "1") return 1;

    for (std::size_t i = 0; i < text.size(); ++i) {
        if ((text[i] == '0' || text[i] == '1') && standalone_digit(text, i)) return text[i] - '0';
    }

    struct Cue {
        std::string_view needle;
        int label;
        bool whole_word;
    };
    static constexpr Cue kCues[] = {
        {"cognitively normal", 0, false},
        {"alzheimer", 1, false},
        {"cn", 0, true},
        {"ad", 1, true},
    };
    std::optional<std::size_t> best_pos;
    int best_label = 0;
    for (const auto& cue : kCues) {
        for (std::size_t pos = 0; pos + cue.needle.size() <= text.size(); ++pos) {
            if (best_pos && pos >= *best_pos) break;
            if (!starts_with_ci(text, pos, cue.needle)) continue;
            if (cue.whole_word && !word_at(text, pos, cue.needle.size())) continue;
            best_pos = pos;
            best_label = cue.label;
            break;
        }
    }
    if (best_pos) return best_label;
    return std::nullopt;
}

std::string transcript_line(const RenderedPrompt& prompt, const RawResponse& response, int round) {
    ordered_json line;
    line["target_id"] = prompt.target_id;
    line["format"] = prompt.format.name();
    line["round"] = round;
    ordered_json messages = ordered_json::array();
    for (const auto& m : prompt.messages) {
        messages.push_back({{"role", std::string(to_string(m.role))}, {"content", m.content}});
    }
    line["messages"] = std::move(messages);
    line["response"] = response.text;
    line["finish_reason"] = response.finish_reason;
    line["latency_ms"] = response.latency_ms;
    line["attempts"] = response.attempts;
    if (response.prompt_tokens) line["prompt_tokens"] = *response.prompt_tokens;
    if (response.completion_tokens) line["completion_tokens"] = *response.completion_tokens;
    return line.dump(-1, ' ', false, ordered_json::error_handler_t::replace);
}

}  // namespace tabshot

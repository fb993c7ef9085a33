#include "tabshot/interpretation.hpp"

#include <nlohmann/json.hpp>

#include <charconv>
#include <cmath>

namespace tabshot {

using json = nlohmann::json;

namespace {

// End index (exclusive) of the balanced object starting at `open`, or npos.
std::size_t balanced_end(std::string_view s, std::size_t open) {
    int depth = 0;
    bool in_string = false;
    bool escaped = false;
    for (std::size_t i = open; i < s.size(); ++i) {
        const char c = s[i];
        if (in_string) {
            if (escaped) {
                escaped = false;
            } else if (c == '\\') {
                escaped = true;
            } else if (c == '"') {
                in_string = false;
            }
            continue;
        }
        if (c == '"') {
            in_string = true;
        } else if (c == '{') {
            ++depth;
        } else if (c == '}') {
            if (--depth == 0) return i + 1;
        }
    }
    return std::string_view::npos;
}

std::optional<double> as_number(const json& v) {
    if (v.is_number()) return v.get<double>();
    if (!v.is_string()) return std::nullopt;
    std::string_view s = v.get_ref<const std::string&>();
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    if (s.empty()) return std::nullopt;
    double d = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), d);
    if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
    return d;
}

std::variant<InterpretableAnswer, ParseFailure> read_answer(const json& obj) {
    for (const char* key : {"prediction", "reasoning", "confidence"}) {
        if (!obj.contains(key)) return ParseFailure::missing_key;
    }
    auto p = as_number(obj["prediction"]);
    if (!p || (*p != 0.0 && *p != 1.0)) return ParseFailure::bad_prediction;
    InterpretableAnswer out;
    out.prediction = static_cast<int>(*p);
    const auto& r = obj["reasoning"];
    out.reasoning = r.is_string() ? r.get<std::string>() : r.dump(-1, ' ', false, json::error_handler_t::replace);
    auto c = as_number(obj["confidence"]);
    if (!c || std::isnan(*c)) return ParseFailure::bad_confidence;
    if (*c < 0.0 || *c > 1.0) {
        out.confidence_clamped = true;
        *c = std::clamp(*c, 0.0, 1.0);
    }
    out.confidence = *c;
    return out;
}

}  // namespace

std::string_view to_string(ParseFailure f) {
    switch (f) {
        case ParseFailure::no_json_found: return "no_json_found";
        case ParseFailure::missing_key: return "missing_key";
        case ParseFailure::bad_prediction: return "bad_prediction";
        case ParseFailure::bad_confidence: return "bad_confidence";
    }
    return "unknown";
}

std::variant<InterpretableAnswer, ParseFailure> parse_interpretable(std::string_view text) {
    std::optional<ParseFailure> first_failure;
    std::size_t pos = 0;
    while ((pos = text.find('{', pos)) != std::string_view::npos) {
        const auto end = balanced_end(text, pos);
        if (end == std::string_view::npos) break;
        json doc = json::parse(text.substr(pos, end - pos), nullptr, false);
        if (doc.is_object()) {
            auto answer = read_answer(doc);
            if (std::holds_alternative<InterpretableAnswer>(answer)) return answer;
            if (!first_failure) first_failure = std::get<ParseFailure>(answer);
            pos = end;
        } else {
            ++pos;
        }
    }
    return first_failure.value_or(ParseFailure::no_json_found);
}

PredictionRecord decode_prediction(std::string_view target_id, std::string_view raw_text) {
    PredictionRecord rec;
    rec.target_id = std::string(target_id);
    rec.raw_text = std::string(raw_text);
    auto parsed = parse_interpretable(raw_text);
    if (auto* answer = std::get_if<InterpretableAnswer>(&parsed)) {
        rec.label = answer->prediction;
        rec.reasoning = answer->reasoning;
        rec.confidence = answer->confidence;
        return rec;
    }
    rec.label = constrained_binary_decode(raw_text);
    return rec;
}

ReflectionOutcome run_self_reflection(ChatModel& model, const RenderedPrompt& original,
                                      const PredictionRecord& initial, const InstructionSet& instructions) {
    if (!initial.label) {
        throw Error("cannot reflect on an undecodable answer for " + initial.target_id);
    }
    ReflectionOutcome out;
    out.initial = initial;
    PriorAnswer prior{*initial.label, initial.reasoning, initial.confidence};
    out.prompt = build_reflection_prompt(original, prior, instructions);
    out.response = model.complete(out.prompt);

    PredictionRecord revised = decode_prediction(initial.target_id, out.response.text);
    revised.seed = initial.seed;
    revised.format = out.prompt.format.name();
    revised.endpoint = initial.endpoint;
    revised.round = 2;
    if (!revised.label) {
        out.retained_on_failure = true;
        revised.label = initial.label;
        revised.reasoning = initial.reasoning;
        revised.confidence = initial.confidence;
    }
    out.changed = *revised.label != *initial.label;
    out.revised = std::move(revised);
    return out;
}

}  // namespace tabshot

#pragma once

#include "tabshot/inference.hpp"
#include "tabshot/prompt.hpp"
#include "tabshot/records.hpp"

#include <optional>
#include <string>
#include <string_view>
#include <variant>

namespace tabshot {

struct InterpretableAnswer {
    int prediction = 0;
    std::string reasoning;
    std::optional<double> confidence;
    bool confidence_clamped = false;  // the raw confidence was outside [0,1]
};

enum class ParseFailure { no_json_found, missing_key, bad_prediction, bad_confidence };
std::string_view to_string(ParseFailure f);

/// Extracts the first balanced top-level JSON object from free text (string and
/// escape aware, so code fences and surrounding prose are tolerated) that carries
/// "prediction", "reasoning" and "confidence" keys. Prediction and confidence may be
/// numbers or numeric strings; prediction must be 0/1 and confidence is clamped to
/// [0,1]. Total: never throws.
std::variant<InterpretableAnswer, ParseFailure> parse_interpretable(std::string_view text);

/// JSON answer first, constrained binary decode second. The record carries no
/// provenance; callers fill seed/format/endpoint/round.
PredictionRecord decode_prediction(std::string_view target_id, std::string_view raw_text);

struct ReflectionOutcome {
    PredictionRecord initial;
    PredictionRecord revised;
    bool changed = false;
    bool retained_on_failure = false;  // round two was undecodable; the initial answer stands
    RenderedPrompt prompt;             // the round-two prompt
    RawResponse response;              // the round-two response
};

/// Second round: shows the model its own answer and asks for a review. When the
/// revision cannot be decoded, the initial answer is kept.
ReflectionOutcome run_self_reflection(ChatModel& model, const RenderedPrompt& original,
                                      const PredictionRecord& initial, const InstructionSet& instructions);

}  // namespace tabshot

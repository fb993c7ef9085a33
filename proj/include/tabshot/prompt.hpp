#pragma once

#include "tabshot/error.hpp"
#include "tabshot/feature_selection.hpp"
#include "tabshot/splits.hpp"
#include "tabshot/table.hpp"

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace tabshot {

enum class PromptStructure { tabular, serialized };
enum class Shots { zero, few };
enum class PromptVariant { standard, interpretable, reflection_round };

struct PromptFormat {
    PromptStructure structure = PromptStructure::tabular;
    Shots shots = Shots::few;
    PromptVariant variant = PromptVariant::standard;

    /// e.g. "few_tabular_standard"; parse_prompt_format accepts the same spelling.
    std::string name() const;
    bool operator==(const PromptFormat&) const = default;
};

PromptFormat parse_prompt_format(std::string_view name);
std::string_view to_string(PromptStructure s);
std::string_view to_string(Shots s);
std::string_view to_string(PromptVariant v);

enum class Role { system, user, assistant };
std::string_view to_string(Role r);

struct Message {
    Role role = Role::user;
    std::string content;
    bool operator==(const Message&) const = default;
};

/// Where the masked diagnosis sits: the last cell of the final grid row, or the
/// unlabeled "Target patient:" block of a serialized prompt.
struct LabelPosition {
    enum class Kind { grid_last_cell, serialized_target_block };
    Kind kind = Kind::grid_last_cell;
    std::size_t message_index = 1;
    bool operator==(const LabelPosition&) const = default;
};

struct RenderedPrompt {
    std::vector<Message> messages;
    std::string target_id;
    PromptFormat format;
    LabelPosition expected_label_position;
    std::string instruction_version;
    std::size_t k = 0;
};

/// Versioned instruction texts, loaded from a JSON fixture.
struct InstructionSet {
    std::string version;
    std::string system;
    std::string tabular_zero;
    std::string tabular_few;
    std::string serialized_zero;
    std::string serialized_few;
    std::string answer_standard;
    std::string interpretable_cue;    // "Let's think step by step."
    std::string interpretable_schema;
    std::string reflection;
};

InstructionSet parse_instruction_set(std::string_view json_text);
InstructionSet load_instruction_set(const std::string& path);

enum class SerializationStyle { narrative, keyvalue };

struct PronounSet {
    std::string subject;     // capitalized, e.g. "He"
    std::string possessive;  // capitalized, e.g. "His"
};

/// Rules for turning one subject row into text. Sentence templates accept the
/// placeholders {Subj} {subj} {Poss} {poss} {value} {unit}; {unit} expands to
/// " <unit>" when the column has a unit and the value is present.
struct SerializationTemplate {
    std::string version;
    SerializationStyle style = SerializationStyle::keyvalue;
    std::string sex_column;
    std::map<std::string, PronounSet> pronouns;  // keyed by sex cell text
    PronounSet default_pronouns{"The patient", "The patient's"};
    std::map<std::string, std::string> sentences;  // covariates (both styles) and features (narrative)
    std::map<std::string, std::map<std::string, std::string>> value_labels;
    std::map<std::string, std::string> units;  // overrides ColumnSpec::unit
    int numeric_precision = 4;
};

SerializationTemplate parse_serialization_template(std::string_view json_text);
SerializationTemplate load_serialization_template(const std::string& path);

enum class PromptErrc { schema_drift, missing_template_rule, format_contract, unknown_feature };
using PromptError = TypedError<PromptErrc>;

/// Columns a prompt shows, as indices into the table: covariates (table order,
/// restricted to features.always_included), selected features (table order), label.
std::vector<std::size_t> prompt_columns(const FeatureTable& table, const FeatureSet& features);
/// FeatureSet holding every feature and every covariate of the table.
FeatureSet all_features(const FeatureTable& table);

/// Cell text as shown to a model: "NaN" for Missing; numeric columns rounded to
/// `precision` fractional digits with trailing zeros trimmed (at least one kept);
/// binary and count columns as bare integers; categorical text verbatim.
std::string render_value(const Cell& cell, const ColumnSpec& column, int precision = 4);

/// Pipe grid: header, one row per context example (label shown), final target
/// row with the label cell rendered "?". Lines are "| a | b | c |".
std::string render_table_block(const ContextSet& context, const SubjectRow& target, const FeatureSet& features,
                               const FeatureTable& table);

std::string serialize_subject(const SubjectRow& row, const FeatureTable& table, const FeatureSet& features,
                              const SerializationTemplate& tmpl, bool include_label);

/// The model's round-one answer, embedded by reflection prompts.
struct PriorAnswer {
    int label = 0;
    std::string reasoning;
    std::optional<double> confidence;

    /// "0"/"1", or a canonical JSON object when reasoning or confidence is known.
    std::string as_text() const;
};

struct PromptInputs {
    const FeatureTable* table = nullptr;
    const FeatureSet* features = nullptr;
    const InstructionSet* instructions = nullptr;
    const SerializationTemplate* serialization = nullptr;  // required for serialized prompts
};

RenderedPrompt build_prompt(const SubjectRow& target, const ContextSet& context, const PromptFormat& format,
                            const PromptInputs& inputs, const PriorAnswer* prior = nullptr);

/// Appends the prior answer and the review instruction to a round-one prompt.
RenderedPrompt build_reflection_prompt(const RenderedPrompt& original, const PriorAnswer& prior,
                                       const InstructionSet& instructions);

/// ceil(characters / chars_per_token) over all message contents (UTF-8 code points).
std::size_t token_budget(const RenderedPrompt& prompt, double chars_per_token);

/// Stable text form used for golden fixtures and prompt dumps.
std::string prompt_to_text(const RenderedPrompt& prompt);

struct Grid {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

/// Parses the first pipe grid in `text` (contiguous lines starting with "|").
std::optional<Grid> parse_grid(std::string_view text);

/// Text of the "Target patient:" block of a serialized prompt, if present.
std::optional<std::string> serialized_target_block(std::string_view text);

/// Structural leakage scan. Returns a description of the leak, or nullopt when the
/// target's label cell is masked and its description carries no diagnosis.
std::optional<std::string> find_label_leak(const RenderedPrompt& prompt);
std::optional<std::string> find_label_leak(std::string_view user_message, PromptStructure structure);

/// Number of grid rows whose label cell is not "?".
std::size_t count_labeled_rows(const Grid& grid);

}  // namespace tabshot

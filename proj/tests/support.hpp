#pragma once

#include "tabshot/prompt.hpp"
#include "tabshot/splits.hpp"
#include "tabshot/table.hpp"

#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

namespace tabshot::fixtures {

inline std::string fixture(const std::string& rel) { return std::string(FIXTURE_DIR) + "/" + rel; }
inline std::string golden(const std::string& rel) { return std::string(GOLDEN_DIR) + "/" + rel; }

inline std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Five hand-written subjects used by the golden prompt fixtures.
inline FeatureTable mini_table() {
    const auto schema = load_schema_file(golden("mini_schema.json"));
    return load_table_file(golden("mini_table.csv"), schema);
}

/// Target S01 with examples S02 (CN) and S03 (AD), or no examples for zero-shot.
inline ContextSet mini_context(Shots shots) {
    ContextSet c;
    c.target_id = "S01";
    if (shots == Shots::few) c.examples = {{"S02", 0}, {"S03", 1}};
    return c;
}

inline const PriorAnswer& mini_prior() {
    static const PriorAnswer prior{1, "Hippocampal volume is below the examples labeled CN.", 0.8};
    return prior;
}

/// Every structure x shots x variant combination, in a fixed order.
inline std::vector<PromptFormat> all_formats() {
    std::vector<PromptFormat> out;
    for (auto shots : {Shots::zero, Shots::few}) {
        for (auto structure : {PromptStructure::tabular, PromptStructure::serialized}) {
            for (auto variant : {PromptVariant::standard, PromptVariant::interpretable, PromptVariant::reflection_round}) {
                out.push_back({structure, shots, variant});
            }
        }
    }
    return out;
}

/// The golden exemplar for one format, built from the mini table.
inline RenderedPrompt mini_prompt(const PromptFormat& format) {
    static const FeatureTable table = mini_table();
    static const FeatureSet features = all_features(table);
    static const InstructionSet instructions = load_instruction_set(fixture("instructions/v1.json"));
    static const SerializationTemplate tmpl = load_serialization_template(fixture("templates/imaging_keyvalue.json"));
    PromptInputs inputs{&table, &features, &instructions, &tmpl};
    const PriorAnswer* prior = format.variant == PromptVariant::reflection_round ? &mini_prior() : nullptr;
    return build_prompt(table.at("S01"), mini_context(format.shots), format, inputs, prior);
}

}  // namespace tabshot::fixtures

#include "support.hpp"

#include "tabshot/prompt.hpp"
#include "tabshot/splits.hpp"
#include "tabshot/synthetic.hpp"

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <functional>
#include <set>

using namespace tabshot;
using namespace tabshot::fixtures;

namespace {

struct MiniInputs {
    FeatureTable table = mini_table();
    FeatureSet features = all_features(table);
    InstructionSet instructions = load_instruction_set(fixture("instructions/v1.json"));
    SerializationTemplate keyvalue = load_serialization_template(fixture("templates/imaging_keyvalue.json"));
    PromptInputs inputs() const { return {&table, &features, &instructions, &keyvalue}; }
};

std::vector<LabeledId> pool_without(const FeatureTable& table, const std::string& target) {
    std::vector<LabeledId> pool;
    for (const auto& r : table.rows()) {
        if (r.subject_id != target) pool.push_back({r.subject_id, *table.label(r)});
    }
    return pool;
}

std::size_t count_lines_starting_with(const std::string& text, char c) {
    std::size_t n = 0;
    bool at_start = true;
    for (char ch : text) {
        if (at_start && ch == c) ++n;
        at_start = ch == '\n';
    }
    return n;
}

PromptErrc prompt_error_kind(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const PromptError& e) {
        return e.kind();
    }
    ADD_FAILURE() << "no PromptError thrown";
    return PromptErrc::format_contract;
}

}  // namespace

TEST(RenderValue, KindsAndMissing) {
    ColumnSpec numeric{"x", ColumnKind::numeric, "", {}, false, false};
    ColumnSpec count{"AGE", ColumnKind::count, "", {}, true, false};
    ColumnSpec binary{"DX", ColumnKind::binary, "", {}, false, true};
    ColumnSpec cat{"PTGENDER", ColumnKind::categorical, "", {}, true, false};
    EXPECT_EQ(render_value(Cell::missing(), numeric), "NaN");
    EXPECT_EQ(render_value(Cell::missing(), cat), "NaN");
    EXPECT_EQ(render_value(Cell::number("1201", 1201), numeric), "1201.0");
    EXPECT_EQ(render_value(Cell::number("980.33333", 980.33333), numeric), "980.3333");
    EXPECT_EQ(render_value(Cell::number("1299.99995", 1299.99995), numeric), "1300.0");
    EXPECT_EQ(render_value(Cell::number("72", 72), count), "72");
    EXPECT_EQ(render_value(Cell::number("1", 1), binary), "1");
    EXPECT_EQ(render_value(Cell::text("Female"), cat), "Female");
}

TEST(TableBlock, HandWrittenGrid) {
    MiniInputs m;
    auto block = render_table_block(mini_context(Shots::few), m.table.at("S01"), m.features, m.table);
    EXPECT_EQ(block,
              "| AGE | PTGENDER | hippocampus | amygdala | DX |\n"
              "| 68 | Female | 4012.55 | 1350.125 | 0 |\n"
              "| 80 | Male | 3100.0 | 980.3333 | 1 |\n"
              "| 72 | Male | 3541.2 | 1201.0 | ? |");
}

TEST(TableBlock, MissingCellsRenderAsNaN) {
    MiniInputs m;
    ContextSet c{"S01", {{"S04", 0}}};
    auto block = render_table_block(c, m.table.at("S01"), m.features, m.table);
    EXPECT_NE(block.find("| 75 | Female | NaN | 1100.5 | 0 |"), std::string::npos);
}

TEST(TableBlock, ColumnSubsetFollowsFeatureSet) {
    MiniInputs m;
    FeatureSet fs{{"amygdala"}, {"AGE"}, RankingMethod::lasso_path, ""};
    auto block = render_table_block(mini_context(Shots::zero), m.table.at("S01"), fs, m.table);
    EXPECT_EQ(block, "| AGE | amygdala | DX |\n| 72 | 1201.0 | ? |");
}

TEST(Serialize, KeyValueTarget) {
    MiniInputs m;
    EXPECT_EQ(serialize_subject(m.table.at("S01"), m.table, m.features, m.keyvalue, false),
              "He is 72 years old. He is male. hippocampus=3541.2, amygdala=1201.0");
    EXPECT_EQ(serialize_subject(m.table.at("S02"), m.table, m.features, m.keyvalue, true),
              "She is 68 years old. She is female. hippocampus=4012.55, amygdala=1350.125\nDiagnosis: CN");
    EXPECT_EQ(serialize_subject(m.table.at("S04"), m.table, m.features, m.keyvalue, false),
              "She is 75 years old. She is female. hippocampus=NaN, amygdala=1100.5");
}

TEST(Serialize, NarrativeUsesPronounsAndUnits) {
    auto table = make_biomarker_cohort(6, 3, 4);
    auto tmpl = load_serialization_template(fixture("templates/biomarker_narrative.json"));
    FeatureSet fs{{"TAU", "Hippocampus"}, {"PTGENDER"}, RankingMethod::lasso_path, ""};
    for (const auto& row : table.rows()) {
        auto text = serialize_subject(row, table, fs, tmpl, false);
        const bool male = row.cells[*table.column_index("PTGENDER")].str() == "Male";
        EXPECT_EQ(text.rfind(male ? "He is male." : "She is female.", 0), 0u) << text;
        EXPECT_NE(text.find(male ? "His CSF total tau level is " : "Her CSF total tau level is "), std::string::npos);
        const auto& unit = table.columns()[*table.column_index("TAU")].unit;
        if (!unit.empty()) EXPECT_NE(text.find(" " + unit + "."), std::string::npos) << text;
    }
}

TEST(Serialize, NarrativeWithoutRuleIsAnError) {
    MiniInputs m;
    auto tmpl = m.keyvalue;
    tmpl.style = SerializationStyle::narrative;
    EXPECT_EQ(prompt_error_kind([&] { serialize_subject(m.table.at("S01"), m.table, m.features, tmpl, false); }),
              PromptErrc::missing_template_rule);
}

TEST(Serialize, UnknownSexFallsBackToDefaultPronouns) {
    MiniInputs m;
    auto tmpl = m.keyvalue;
    tmpl.pronouns.clear();
    EXPECT_EQ(serialize_subject(m.table.at("S01"), m.table, m.features, tmpl, false),
              "The patient is 72 years old. The patient is male. hippocampus=3541.2, amygdala=1201.0");
}

TEST(BuildPrompt, MatchesEveryGolden) {
    for (const auto& format : all_formats()) {
        auto expected = read_text(golden(format.name() + ".txt"));
        ASSERT_FALSE(expected.empty()) << format.name();
        EXPECT_EQ(prompt_to_text(mini_prompt(format)), expected) << format.name();
    }
}

TEST(BuildPrompt, ShapeOfEachVariant) {
    for (const auto& format : all_formats()) {
        auto p = mini_prompt(format);
        EXPECT_EQ(p.target_id, "S01");
        EXPECT_EQ(p.format, format);
        EXPECT_EQ(p.messages.front().role, Role::system);
        EXPECT_EQ(p.expected_label_position.message_index, 1u);
        EXPECT_EQ(p.k, format.shots == Shots::few ? 2u : 0u);
        EXPECT_FALSE(find_label_leak(p).has_value()) << format.name();
        switch (format.variant) {
            case PromptVariant::standard:
                ASSERT_EQ(p.messages.size(), 2u);
                EXPECT_TRUE(p.messages[1].content.ends_with("Answer with a single digit: 0 for CN or 1 for AD."));
                break;
            case PromptVariant::interpretable:
                ASSERT_EQ(p.messages.size(), 2u);
                EXPECT_NE(p.messages[1].content.find("Let's think step by step."), std::string::npos);
                EXPECT_TRUE(p.messages[1].content.ends_with(
                    R"({"prediction": <0 for CN or 1 for AD>, "reasoning": "<brief explanation>", "confidence": <number between 0 and 1>})"));
                break;
            case PromptVariant::reflection_round:
                ASSERT_EQ(p.messages.size(), 4u);
                EXPECT_EQ(p.messages[2].role, Role::assistant);
                EXPECT_EQ(p.messages[2].content, mini_prior().as_text());
                EXPECT_EQ(p.messages[3].role, Role::user);
                break;
        }
    }
}

TEST(BuildPrompt, ZeroShotHasOnlyTheTargetRow) {
    auto p = mini_prompt({PromptStructure::tabular, Shots::zero, PromptVariant::standard});
    auto grid = parse_grid(p.messages[1].content);
    ASSERT_TRUE(grid);
    ASSERT_EQ(grid->rows.size(), 1u);
    EXPECT_EQ(count_labeled_rows(*grid), 0u);
    for (const char* id : {"S02", "S03", "4012.55", "3100.0"}) {
        EXPECT_EQ(p.messages[1].content.find(id), std::string::npos);
    }
}

TEST(BuildPrompt, EightShotGridHasTenLines) {
    auto table = make_biomarker_cohort(60, 30, 8);
    auto fs = all_features(table);
    auto ins = load_instruction_set(fixture("instructions/v1.json"));
    PromptInputs in{&table, &fs, &ins, nullptr};
    const auto& target = table.rows().front();
    auto pool = pool_without(table, target.subject_id);
    auto ctx = sample_context(pool, 8, 11, target.subject_id);
    auto p = build_prompt(target, ctx, {PromptStructure::tabular, Shots::few, PromptVariant::standard}, in);
    EXPECT_EQ(count_lines_starting_with(p.messages[1].content, '|'), 10u);
    auto grid = parse_grid(p.messages[1].content);
    EXPECT_EQ(count_labeled_rows(*grid), 8u);
    EXPECT_EQ(grid->rows.back().back(), "?");
    EXPECT_EQ(grid->header.size(), table.columns().size() - 1);  // every column but the subject id
}

TEST(BuildPrompt, ContractViolations) {
    MiniInputs m;
    auto in = m.inputs();
    const auto& target = m.table.at("S01");
    PromptFormat few{PromptStructure::tabular, Shots::few, PromptVariant::standard};
    PromptFormat zero{PromptStructure::tabular, Shots::zero, PromptVariant::standard};
    EXPECT_EQ(prompt_error_kind([&] { build_prompt(target, mini_context(Shots::zero), few, in); }),
              PromptErrc::format_contract);
    EXPECT_EQ(prompt_error_kind([&] { build_prompt(target, mini_context(Shots::few), zero, in); }),
              PromptErrc::format_contract);
    EXPECT_EQ(prompt_error_kind([&] {
                  build_prompt(target, ContextSet{"S01", {{"S01", 1}}}, few, in);
              }),
              PromptErrc::format_contract);
    EXPECT_EQ(prompt_error_kind([&] {
                  build_prompt(target, mini_context(Shots::zero),
                               {PromptStructure::tabular, Shots::zero, PromptVariant::reflection_round}, in);
              }),
              PromptErrc::format_contract);
    EXPECT_EQ(prompt_error_kind([&] { build_prompt(target, ContextSet{"S01", {{"S02", 1}}}, few, in); }),
              PromptErrc::schema_drift);
    EXPECT_EQ(prompt_error_kind([&] { build_prompt(target, ContextSet{"S01", {{"S99", 1}}}, few, in); }),
              PromptErrc::schema_drift);
    PromptInputs no_template{&m.table, &m.features, &m.instructions, nullptr};
    EXPECT_EQ(prompt_error_kind([&] {
                  build_prompt(target, mini_context(Shots::zero),
                               {PromptStructure::serialized, Shots::zero, PromptVariant::standard}, no_template);
              }),
              PromptErrc::missing_template_rule);
    FeatureSet bogus{{"DX"}, {}, RankingMethod::lasso_path, ""};
    PromptInputs bad_features{&m.table, &bogus, &m.instructions, nullptr};
    EXPECT_EQ(prompt_error_kind([&] { build_prompt(target, mini_context(Shots::zero), zero, bad_features); }),
              PromptErrc::unknown_feature);
}

TEST(BuildPrompt, DeterministicAcrossCalls) {
    for (const auto& format : all_formats()) {
        EXPECT_EQ(prompt_to_text(mini_prompt(format)), prompt_to_text(mini_prompt(format)));
    }
}

TEST(Reflection, AppendsPriorAndInstruction) {
    MiniInputs m;
    auto round1 = build_prompt(m.table.at("S01"), mini_context(Shots::few),
                               {PromptStructure::tabular, Shots::few, PromptVariant::interpretable}, m.inputs());
    auto r = build_reflection_prompt(round1, mini_prior(), m.instructions);
    ASSERT_EQ(r.messages.size(), 4u);
    EXPECT_EQ(r.messages[0], round1.messages[0]);
    EXPECT_EQ(r.messages[1], round1.messages[1]);
    EXPECT_EQ(r.messages[3].content, m.instructions.reflection);
    EXPECT_EQ(r.format.variant, PromptVariant::reflection_round);
    EXPECT_FALSE(find_label_leak(r).has_value());
}

TEST(PriorAnswerText, BareDigitOrJson) {
    EXPECT_EQ((PriorAnswer{1, "", std::nullopt}).as_text(), "1");
    auto j = nlohmann::json::parse(mini_prior().as_text());
    EXPECT_EQ(j.at("prediction"), 1);
    EXPECT_EQ(j.at("reasoning"), mini_prior().reasoning);
    EXPECT_DOUBLE_EQ(j.at("confidence").get<double>(), 0.8);
}

TEST(TokenBudget, EmptyMonotoneAndCodePoints) {
    RenderedPrompt empty;
    EXPECT_EQ(token_budget(empty, 4.0), 0u);
    RenderedPrompt p;
    p.messages.push_back({Role::user, "abcde"});
    EXPECT_EQ(token_budget(p, 4.0), 2u);
    p.messages.push_back({Role::user, "\xC3\xA9\xC3\xA9"});  // two code points, four bytes
    EXPECT_EQ(token_budget(p, 1.0), 7u);
    std::size_t prev = 0;
    RenderedPrompt grow;
    for (int i = 0; i < 50; ++i) {
        grow.messages.push_back({Role::user, std::string(static_cast<std::size_t>(i), 'x')});
        auto now = token_budget(grow, 3.5);
        EXPECT_GE(now, prev);
        prev = now;
    }
    EXPECT_THROW(token_budget(p, 0.0), PromptError);
}

TEST(LeakScan, DetectsExposedLabels) {
    EXPECT_TRUE(find_label_leak("| a | DX |\n| 1 | 0 |\n| 2 | 1 |", PromptStructure::tabular).has_value());
    EXPECT_TRUE(find_label_leak("| a | DX |\n| 1 | ? |\n| 2 | ? |", PromptStructure::tabular).has_value());
    EXPECT_TRUE(find_label_leak("| a | DX |\n| 1 |", PromptStructure::tabular).has_value());
    EXPECT_TRUE(find_label_leak("no grid here", PromptStructure::tabular).has_value());
    EXPECT_FALSE(find_label_leak("| a | DX |\n| 1 | 0 |\n| 2 | ? |", PromptStructure::tabular).has_value());
    EXPECT_TRUE(find_label_leak("Target patient:\nHe is 70.\nDiagnosis: AD\n\nAnswer", PromptStructure::serialized)
                    .has_value());
    EXPECT_FALSE(find_label_leak("Target patient:\nHe is 70.\n\nAnswer", PromptStructure::serialized).has_value());
    EXPECT_TRUE(find_label_leak("He is 70.", PromptStructure::serialized).has_value());
}

TEST(LeakScan, NoLeakOverRandomPrompts) {
    auto table = make_biomarker_cohort(80, 40, 21);
    auto fs = all_features(table);
    auto ins = load_instruction_set(fixture("instructions/v1.json"));
    auto tmpl = load_serialization_template(fixture("templates/biomarker_narrative.json"));
    PromptInputs in{&table, &fs, &ins, &tmpl};
    for (std::size_t t = 0; t < 40; ++t) {
        const auto& target = table.rows()[t];
        for (auto structure : {PromptStructure::tabular, PromptStructure::serialized}) {
            auto pool = pool_without(table, target.subject_id);
            auto ctx = sample_context(pool, 4, t, target.subject_id);
            auto p = build_prompt(target, ctx, {structure, Shots::few, PromptVariant::interpretable}, in);
            EXPECT_FALSE(find_label_leak(p).has_value());
        }
    }
}

TEST(PromptFormat, NamesRoundTrip) {
    std::set<std::string> names;
    for (const auto& f : all_formats()) {
        names.insert(f.name());
        EXPECT_EQ(parse_prompt_format(f.name()), f);
    }
    EXPECT_EQ(names.size(), 12u);
    EXPECT_THROW(parse_prompt_format("few_grid_standard"), PromptError);
}

#pragma once

#include "tabshot/error.hpp"
#include "tabshot/prompt.hpp"

#include <array>
#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace tabshot {

enum class ExportErrc { invariant_violation };
using ExportError = TypedError<ExportErrc>;

struct FinetuneMeta {
    std::uint64_t seed = 0;
    std::string format;
    std::string dataset;
    std::string target_id;
};

/// Chat-format training record: the prompt messages followed by the assistant
/// answer that supervises the target label.
struct FinetuneRecord {
    std::vector<Message> messages;
    int label = 0;
    FinetuneMeta meta;
};

/// Assistant answer for a label: "0"/"1" for standard prompts, a JSON object
/// {"prediction","reasoning","confidence"} for interpretable ones.
std::string supervision_text(int label, PromptVariant variant);

FinetuneRecord make_finetune_record(const RenderedPrompt& prompt, int label, const std::string& dataset,
                                    std::uint64_t seed);

/// Empty when the record is well formed and leak free, else the reason.
std::string check_record(const FinetuneRecord& record);

/// One JSON object per line with keys in order: messages, label, meta. Every
/// record is checked before any line is written; a bad record throws
/// ExportError(invariant_violation). Returns the number of lines written.
std::size_t export_chat_jsonl(std::span<const FinetuneRecord> records, std::ostream& sink);

struct LineIssue {
    std::size_t line = 0;  // 1-based
    std::string reason;
};

struct JsonlReport {
    std::size_t lines = 0;
    std::array<std::size_t, 2> label_counts{0, 0};
    std::vector<LineIssue> issues;

    bool ok() const { return issues.empty() && lines > 0; }
};

/// Re-reads an exported file and checks every line against the record contract.
JsonlReport validate_jsonl(std::istream& source);
std::string report_to_json(const JsonlReport& report);

/// Sidecar written next to an export: provenance needed to reproduce it.
std::string export_manifest_json(const std::string& dataset_hash, std::uint64_t seed, const std::string& format,
                                 const std::string& instruction_version, std::size_t records);

}  // namespace tabshot

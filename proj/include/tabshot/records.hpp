#pragma once

#include <cstdint>
#include <optional>
#include <string>

namespace tabshot {

/// One decoded model answer for one target. An empty label means the output was
/// undecodable; it is scored as wrong and counted separately.
struct PredictionRecord {
    std::string target_id;
    std::optional<int> label;
    std::optional<double> confidence;
    std::string reasoning;
    std::string raw_text;
    // provenance
    std::uint64_t seed = 0;
    std::string format;
    std::string endpoint;
    int round = 1;

    bool decodable() const { return label.has_value(); }
};

}  // namespace tabshot

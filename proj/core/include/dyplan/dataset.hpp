#pragma once

#include "dyplan/metrics.hpp"

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace dyplan {

struct DatasetRecord {
    std::string id;
    std::string question;
    std::vector<std::string> answers;

    GoldAnswerSet golds() const { return GoldAnswerSet(id, answers); }
};

enum class DatasetFormat {
    Canonical,  // JSONL {"id", "question", "answers": [...]}
    HotpotQa,   // JSON array of {"_id", "question", "answer"}
};

DatasetFormat dataset_format_from_string(std::string_view name);

// Throws ParseError with the line number on malformed input, DataError on
// duplicate ids, empty questions or empty answer lists.
std::vector<DatasetRecord> load_dataset(const std::filesystem::path& path,
                                        DatasetFormat format = DatasetFormat::Canonical);

}  // namespace dyplan

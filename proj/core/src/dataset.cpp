#include "dyplan/dataset.hpp"

#include "dyplan/error.hpp"
#include "dyplan/text.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <unordered_set>

namespace dyplan {

DatasetFormat dataset_format_from_string(std::string_view name)
{
    if (name == "canonical") return DatasetFormat::Canonical;
    if (name == "hotpotqa") return DatasetFormat::HotpotQa;
    throw ConfigError("unknown dataset format '" + std::string(name) + "' (expected canonical or hotpotqa)");
}

namespace {

void check_record(const DatasetRecord& record, std::unordered_set<std::string>& seen, const std::string& where)
{
    if (record.id.empty()) {
        throw DataError(where + ": empty id");
    }
    if (trim(record.question).empty()) {
        throw DataError(where + ": question '" + record.id + "' is empty");
    }
    if (record.answers.empty()) {
        throw DataError(where + ": question '" + record.id + "' has no answers");
    }
    if (!seen.insert(record.id).second) {
        throw DataError(where + ": duplicate id '" + record.id + "'");
    }
}

}  // namespace

std::vector<DatasetRecord> load_dataset(const std::filesystem::path& path, DatasetFormat format)
{
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open dataset: " + path.string());
    }
    std::vector<DatasetRecord> records;
    std::unordered_set<std::string> seen;

    if (format == DatasetFormat::HotpotQa) {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(in);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(path.string() + ": " + e.what());
        }
        if (!j.is_array()) {
            throw ParseError(path.string() + ": expected a JSON array of questions");
        }
        for (std::size_t i = 0; i < j.size(); ++i) {
            const auto where = path.string() + "[" + std::to_string(i) + "]";
            DatasetRecord record;
            try {
                record.id = j[i].at("_id").get<std::string>();
                record.question = j[i].at("question").get<std::string>();
                record.answers = {j[i].at("answer").get<std::string>()};
            } catch (const nlohmann::json::exception& e) {
                throw ParseError(where + ": " + e.what());
            }
            check_record(record, seen, where);
            records.push_back(std::move(record));
        }
        return records;
    }

    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) {
            continue;
        }
        const auto where = path.string() + ":" + std::to_string(line_no);
        DatasetRecord record;
        try {
            const auto j = nlohmann::json::parse(line);
            record.id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
            record.question = j.at("question").get<std::string>();
            record.answers = j.at("answers").get<std::vector<std::string>>();
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(where + ": " + e.what());
        }
        check_record(record, seen, where);
        records.push_back(std::move(record));
    }
    return records;
}

}  // namespace dyplan

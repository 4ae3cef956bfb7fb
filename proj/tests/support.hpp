#pragma once

#include "dyplan/backend.hpp"
#include "dyplan/dataset.hpp"
#include "dyplan/retrieval.hpp"
#include "dyplan/strategy.hpp"

#include <atomic>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace dyplan::test {

inline std::filesystem::path fixture(const std::string& name)
{
    return std::filesystem::path(DYPLAN_TEST_FIXTURES) / name;
}

class TempDir {
public:
    TempDir()
    {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("dyplan_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() { std::filesystem::remove_all(path_); }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline void write_file(const std::filesystem::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << text;
}

inline std::string read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline const std::vector<std::string>& default_order()
{
    static const std::vector<std::string> order{"direct", "plan", "reason", "retrieval"};
    return order;
}

inline std::string qid(std::size_t i)
{
    std::ostringstream ss;
    ss << 'q' << (i < 10 ? "00" : i < 100 ? "0" : "") << i;
    return ss.str();
}

inline std::string gold_of(const std::string& id)
{
    return "answer " + id;
}

// A complete table whose cell (d, s) is correct iff correct(d_index, s_index).
// Correct cells answer the gold; others answer a token-disjoint distractor.
inline CorrectnessTable planted_table(std::size_t n_questions, const std::vector<std::string>& order,
                                      const std::function<bool(std::size_t, std::size_t)>& correct)
{
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < n_questions; ++i) {
        ids.push_back(qid(i));
    }
    CorrectnessTable table(ids, order);
    for (std::size_t i = 0; i < n_questions; ++i) {
        for (std::size_t s = 0; s < order.size(); ++s) {
            StrategyOutcome o;
            o.question_id = ids[i];
            o.question = "question " + ids[i];
            o.strategy = order[s];
            const bool ok = correct(i, s);
            o.answer = ok ? gold_of(ids[i]) : "unknown";
            o.raw_generation = "Final answer: \"" + o.answer + "\"";
            o.em = ok ? 1 : 0;
            o.f1 = ok ? 1.0 : 0.0;
            o.gen_tokens = 10 * (s + 1);
            o.retrievals = order[s] == "retrieval" ? 1 : 0;
            table.add(std::move(o));
        }
    }
    return table;
}

inline std::vector<DatasetRecord> planted_dataset(std::size_t n)
{
    std::vector<DatasetRecord> out;
    for (std::size_t i = 0; i < n; ++i) {
        out.push_back({qid(i), "question " + qid(i) + "?", {gold_of(qid(i))}});
    }
    return out;
}

inline Bm25Index toy_index()
{
    std::vector<Document> docs{
        {"Paris", "Paris is the capital and largest city of France."},
        {"Berlin", "Berlin is the capital of Germany and its largest city."},
        {"Danube", "The Danube flows through Vienna, Budapest and Belgrade."},
        {"Louvre", "The Louvre in Paris is the most visited museum in the world."},
        {"Rhine", "The Rhine rises in Switzerland and flows to the North Sea."},
    };
    return Bm25Index::build(chunk_corpus(docs));
}

}  // namespace dyplan::test

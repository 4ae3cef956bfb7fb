#include "dyplan/retrieval.hpp"

#include "dyplan/error.hpp"
#include "dyplan/metrics.hpp"
#include "dyplan/text.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace dyplan {

namespace fs = std::filesystem;

std::vector<Passage> chunk_corpus(std::span<const Document> documents, std::size_t window)
{
    if (window == 0) {
        throw ConfigError("chunk window must be at least 1");
    }
    std::vector<Passage> passages;
    for (const auto& doc : documents) {
        const auto tokens = split_whitespace(doc.body);
        for (std::size_t start = 0; start < tokens.size(); start += window) {
            const auto end = std::min(tokens.size(), start + window);
            Passage p;
            p.id = static_cast<PassageId>(passages.size());
            p.doc_title = doc.title;
            p.text = join(std::vector<std::string>(tokens.begin() + static_cast<std::ptrdiff_t>(start),
                                                   tokens.begin() + static_cast<std::ptrdiff_t>(end)),
                          " ");
            p.token_count = end - start;
            passages.push_back(std::move(p));
        }
    }
    return passages;
}

std::vector<Document> load_corpus(const fs::path& path)
{
    std::vector<Document> docs;
    if (fs::is_directory(path)) {
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(path)) {
            if (entry.is_regular_file()) {
                files.push_back(entry.path());
            }
        }
        std::sort(files.begin(), files.end());
        for (const auto& file : files) {
            std::ifstream in(file, std::ios::binary);
            std::ostringstream body;
            body << in.rdbuf();
            docs.push_back({file.stem().string(), body.str()});
        }
        return docs;
    }
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open corpus: " + path.string());
    }
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) {
            continue;
        }
        try {
            const auto j = nlohmann::json::parse(line);
            docs.push_back({j.value("title", std::string{}), j.at("text").get<std::string>()});
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return docs;
}

std::vector<std::string> index_terms(std::string_view text)
{
    return answer_tokens(text);
}

Bm25Index Bm25Index::build(std::vector<Passage> passages, Bm25Params params)
{
    if (passages.empty()) {
        throw DataError("cannot build an index over zero passages");
    }
    if (!(params.k1 > 0.0) || !(params.b > 0.0)) {
        throw ConfigError("BM25 k1 and b must be positive");
    }
    Bm25Index index;
    index.params_ = params;
    for (std::size_t i = 0; i < passages.size(); ++i) {
        passages[i].id = static_cast<PassageId>(i);
        std::map<std::string, std::uint32_t> tf;
        for (auto& term : index_terms(passages[i].text)) {
            ++tf[std::move(term)];
        }
        for (auto& [term, count] : tf) {
            index.postings_[term].push_back({passages[i].id, count});
        }
    }
    index.passages_ = std::move(passages);
    index.finalize();
    return index;
}

void Bm25Index::finalize()
{
    double total = 0.0;
    for (const auto& p : passages_) {
        total += static_cast<double>(p.token_count);
    }
    avg_doc_len_ = total / static_cast<double>(passages_.size());
    if (!(avg_doc_len_ > 0.0)) {
        throw DataError("index has zero average passage length");
    }
}

double Bm25Index::idf(std::string_view term) const
{
    const auto it = postings_.find(std::string(term));
    const double df = it == postings_.end() ? 0.0 : static_cast<double>(it->second.size());
    const double n = static_cast<double>(passages_.size());
    return std::log((n - df + 0.5) / (df + 0.5) + 1.0);
}

std::vector<SearchHit> Bm25Index::search(std::string_view query, std::size_t k) const
{
    if (passages_.empty()) {
        throw DataError("search on an empty index");
    }
    std::unordered_map<PassageId, double> scores;
    for (const auto& term : index_terms(query)) {
        const auto it = postings_.find(term);
        if (it == postings_.end()) {
            continue;
        }
        const double term_idf = idf(term);
        for (const auto& posting : it->second) {
            const double tf = posting.tf;
            const double len = static_cast<double>(passages_[posting.id].token_count);
            const double norm = params_.k1 * (1.0 - params_.b + params_.b * len / avg_doc_len_);
            scores[posting.id] += term_idf * tf * (params_.k1 + 1.0) / (tf + norm);
        }
    }
    std::vector<SearchHit> hits;
    hits.reserve(scores.size());
    for (const auto& [id, score] : scores) {
        hits.push_back({id, score});
    }
    const auto better = [](const SearchHit& a, const SearchHit& b) {
        return a.score != b.score ? a.score > b.score : a.id < b.id;
    };
    const auto keep = std::min(k, hits.size());
    std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(keep), hits.end(), better);
    hits.resize(keep);
    return hits;
}

std::vector<Passage> Bm25Index::retrieve(std::string_view query, std::size_t k) const
{
    std::vector<Passage> out;
    for (const auto& hit : search(query, k)) {
        out.push_back(passages_[hit.id]);
    }
    return out;
}

const Passage& Bm25Index::passage(PassageId id) const
{
    if (id >= passages_.size()) {
        throw DataError("unknown passage id " + std::to_string(id));
    }
    return passages_[id];
}

void Bm25Index::save(const fs::path& path) const
{
    nlohmann::ordered_json j;
    j["format_version"] = kIndexFormatVersion;
    j["params"] = {{"k1", params_.k1}, {"b", params_.b}};
    j["avg_doc_len"] = avg_doc_len_;
    auto& ps = j["passages"] = nlohmann::ordered_json::array();
    for (const auto& p : passages_) {
        ps.push_back({{"id", p.id}, {"title", p.doc_title}, {"text", p.text}, {"token_count", p.token_count}});
    }
    std::map<std::string_view, const std::vector<Posting>*> sorted;
    for (const auto& [term, list] : postings_) {
        sorted.emplace(term, &list);
    }
    auto& post = j["postings"] = nlohmann::ordered_json::object();
    for (const auto& [term, list] : sorted) {
        auto arr = nlohmann::ordered_json::array();
        for (const auto& p : *list) {
            arr.push_back({p.id, p.tf});
        }
        post[std::string(term)] = std::move(arr);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error("cannot write index: " + path.string());
    }
    out << j.dump() << '\n';
}

Bm25Index Bm25Index::load(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ConfigError("cannot open index: " + path.string());
    }
    Bm25Index index;
    try {
        const auto j = nlohmann::json::parse(in);
        const int version = j.at("format_version").get<int>();
        if (version != kIndexFormatVersion) {
            throw ParseError("unsupported index format_version " + std::to_string(version));
        }
        index.params_.k1 = j.at("params").at("k1").get<double>();
        index.params_.b = j.at("params").at("b").get<double>();
        for (const auto& p : j.at("passages")) {
            Passage passage;
            passage.id = p.at("id").get<PassageId>();
            passage.doc_title = p.at("title").get<std::string>();
            passage.text = p.at("text").get<std::string>();
            passage.token_count = p.at("token_count").get<std::size_t>();
            if (passage.id != index.passages_.size()) {
                throw ParseError("index passages are not densely numbered");
            }
            index.passages_.push_back(std::move(passage));
        }
        for (const auto& [term, list] : j.at("postings").items()) {
            auto& out = index.postings_[term];
            for (const auto& entry : list) {
                const Posting posting{entry.at(0).get<PassageId>(), entry.at(1).get<std::uint32_t>()};
                if (posting.id >= index.passages_.size()) {
                    throw ParseError("posting for term '" + term + "' references unknown passage");
                }
                out.push_back(posting);
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("malformed index " + path.string() + ": " + e.what());
    }
    if (index.passages_.empty()) {
        throw DataError("index " + path.string() + " has no passages");
    }
    index.finalize();
    return index;
}

}  // namespace dyplan

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace dyplan {

using PassageId = std::uint32_t;

struct Document {
    std::string title;
    std::string body;
};

// A window of at most `window` whitespace tokens cut from one document.
struct Passage {
    PassageId id = 0;
    std::string doc_title;
    std::string text;
    std::size_t token_count = 0;
};

struct SearchHit {
    PassageId id = 0;
    double score = 0.0;
};

inline constexpr std::size_t kDefaultChunkWindow = 200;
inline constexpr std::size_t kDefaultTopK = 3;
inline constexpr int kIndexFormatVersion = 1;

// Passage ids are assigned consecutively in document order starting at 0.
std::vector<Passage> chunk_corpus(std::span<const Document> documents, std::size_t window = kDefaultChunkWindow);

// A directory of UTF-8 text files (title = file stem, files taken in name order)
// or a JSONL file of {"title", "text"} objects.
std::vector<Document> load_corpus(const std::filesystem::path& path);

// Terms as the index sees them: the answer normalizer split into tokens.
std::vector<std::string> index_terms(std::string_view text);

class Retriever {
public:
    virtual ~Retriever() = default;
    virtual std::vector<Passage> retrieve(std::string_view query, std::size_t k) const = 0;
};

struct Bm25Params {
    double k1 = 1.2;
    double b = 0.75;
};

struct Posting {
    PassageId id = 0;
    std::uint32_t tf = 0;
};

// Okapi BM25 over an immutable passage set. Safe for concurrent search.
class Bm25Index final : public Retriever {
public:
    static Bm25Index build(std::vector<Passage> passages, Bm25Params params = {});

    static Bm25Index load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;

    // Top-k passages with at least one query term; descending score, ascending id on ties.
    std::vector<SearchHit> search(std::string_view query, std::size_t k = kDefaultTopK) const;

    std::vector<Passage> retrieve(std::string_view query, std::size_t k) const override;

    // ln((N - df + 0.5) / (df + 0.5) + 1)
    double idf(std::string_view term) const;

    const Passage& passage(PassageId id) const;
    const std::vector<Passage>& passages() const { return passages_; }
    const std::unordered_map<std::string, std::vector<Posting>>& postings() const { return postings_; }
    std::size_t doc_length(PassageId id) const { return passages_.at(id).token_count; }
    double avg_doc_len() const { return avg_doc_len_; }
    std::size_t n_docs() const { return passages_.size(); }
    const Bm25Params& params() const { return params_; }

private:
    Bm25Index() = default;
    void finalize();

    std::vector<Passage> passages_;  // indexed by PassageId
    std::unordered_map<std::string, std::vector<Posting>> postings_;
    double avg_doc_len_ = 0.0;
    Bm25Params params_;
};

}  // namespace dyplan

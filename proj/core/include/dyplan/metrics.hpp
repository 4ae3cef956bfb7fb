#pragma once

#include <nlohmann/json.hpp>

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dyplan {

// Reference answers for one question. Stored verbatim; normalized only when scoring.
class GoldAnswerSet {
public:
    GoldAnswerSet() = default;
    GoldAnswerSet(std::string question_id, std::vector<std::string> answers);

    const std::string& question_id() const { return question_id_; }
    const std::vector<std::string>& answers() const { return answers_; }
    const std::string& primary() const { return answers_.front(); }

private:
    std::string question_id_;
    std::vector<std::string> answers_;
};

struct CostWeights {
    double w_token = 1.0;
    double w_retrieval = 100.0;

    void validate() const;
};

struct EvalReport {
    double em = 0.0;
    double f1 = 0.0;
    double tokens_mean = 0.0;      // #T
    double retrievals_mean = 0.0;  // #R
    std::size_t n = 0;
};

// One scored item as fed into aggregation. gen_tokens and retrievals are already
// summed over every turn that produced the item's answer.
struct ScoredItem {
    double em = 0.0;
    double f1 = 0.0;
    double gen_tokens = 0.0;
    double retrievals = 0.0;
};

struct UnscoredItem {
    std::string prediction;
    GoldAnswerSet golds;
    double gen_tokens = 0.0;
    double retrievals = 0.0;
};

// Lowercase, drop punctuation, drop the articles a/an/the, collapse whitespace.
std::string normalize_answer(std::string_view text);

std::vector<std::string> answer_tokens(std::string_view text);

int exact_match(std::string_view prediction, const GoldAnswerSet& golds);
double f1_score(std::string_view prediction, const GoldAnswerSet& golds);

// Single-reference token F1 over already normalized strings.
double token_f1(std::string_view normalized_prediction, std::string_view normalized_gold);

// Throws DataError on an empty list.
EvalReport aggregate_report(std::span<const UnscoredItem> items);
EvalReport aggregate_scored(std::span<const ScoredItem> items);

double weighted_cost(const EvalReport& report, const CostWeights& weights);

// {em, f1, tokens_mean, retrievals_mean, n, weighted_cost}
nlohmann::ordered_json report_to_json(const EvalReport& report, const CostWeights& weights);

}  // namespace dyplan

#include "dyplan/metrics.hpp"

#include "dyplan/error.hpp"
#include "dyplan/text.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

namespace dyplan {

GoldAnswerSet::GoldAnswerSet(std::string question_id, std::vector<std::string> answers)
    : question_id_(std::move(question_id)), answers_(std::move(answers))
{
    if (answers_.empty()) {
        throw DataError("gold answer set for '" + question_id_ + "' is empty");
    }
}

void CostWeights::validate() const
{
    if (!std::isfinite(w_token) || !std::isfinite(w_retrieval) || w_token < 0.0 || w_retrieval < 0.0) {
        throw ConfigError("cost weights must be finite and non-negative");
    }
}

std::vector<std::string> answer_tokens(std::string_view text)
{
    auto tokens = split_whitespace(strip_punctuation(to_lower(text)));
    std::erase_if(tokens, [](const std::string& t) { return t == "a" || t == "an" || t == "the"; });
    return tokens;
}

std::string normalize_answer(std::string_view text)
{
    return join(answer_tokens(text), " ");
}

int exact_match(std::string_view prediction, const GoldAnswerSet& golds)
{
    const auto pred = normalize_answer(prediction);
    for (const auto& gold : golds.answers()) {
        if (pred == normalize_answer(gold)) {
            return 1;
        }
    }
    return 0;
}

double token_f1(std::string_view normalized_prediction, std::string_view normalized_gold)
{
    const auto pred = split_whitespace(normalized_prediction);
    const auto gold = split_whitespace(normalized_gold);
    if (pred.empty() || gold.empty()) {
        return pred.empty() && gold.empty() ? 1.0 : 0.0;
    }
    std::unordered_map<std::string_view, int> counts;
    for (const auto& t : gold) {
        ++counts[t];
    }
    int overlap = 0;
    for (const auto& t : pred) {
        auto it = counts.find(t);
        if (it != counts.end() && it->second > 0) {
            --it->second;
            ++overlap;
        }
    }
    if (overlap == 0) {
        return 0.0;
    }
    const double precision = static_cast<double>(overlap) / static_cast<double>(pred.size());
    const double recall = static_cast<double>(overlap) / static_cast<double>(gold.size());
    return 2.0 * precision * recall / (precision + recall);
}

double f1_score(std::string_view prediction, const GoldAnswerSet& golds)
{
    const auto pred = normalize_answer(prediction);
    double best = 0.0;
    for (const auto& gold : golds.answers()) {
        best = std::max(best, token_f1(pred, normalize_answer(gold)));
    }
    return best;
}

EvalReport aggregate_scored(std::span<const ScoredItem> items)
{
    if (items.empty()) {
        throw DataError("no items to score");
    }
    EvalReport report;
    for (const auto& item : items) {
        report.em += item.em;
        report.f1 += item.f1;
        report.tokens_mean += item.gen_tokens;
        report.retrievals_mean += item.retrievals;
    }
    const auto n = static_cast<double>(items.size());
    report.em /= n;
    report.f1 /= n;
    report.tokens_mean /= n;
    report.retrievals_mean /= n;
    report.n = items.size();
    return report;
}

EvalReport aggregate_report(std::span<const UnscoredItem> items)
{
    std::vector<ScoredItem> scored;
    scored.reserve(items.size());
    for (const auto& item : items) {
        scored.push_back({static_cast<double>(exact_match(item.prediction, item.golds)),
                          f1_score(item.prediction, item.golds), item.gen_tokens, item.retrievals});
    }
    return aggregate_scored(scored);
}

double weighted_cost(const EvalReport& report, const CostWeights& weights)
{
    return weights.w_token * report.tokens_mean + weights.w_retrieval * report.retrievals_mean;
}

nlohmann::ordered_json report_to_json(const EvalReport& report, const CostWeights& weights)
{
    nlohmann::ordered_json j;
    j["em"] = report.em;
    j["f1"] = report.f1;
    j["tokens_mean"] = report.tokens_mean;
    j["retrievals_mean"] = report.retrievals_mean;
    j["n"] = report.n;
    j["weighted_cost"] = weighted_cost(report, weights);
    return j;
}

}  // namespace dyplan

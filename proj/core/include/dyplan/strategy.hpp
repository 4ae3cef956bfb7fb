#pragma once

#include "dyplan/backend.hpp"
#include "dyplan/dataset.hpp"
#include "dyplan/metrics.hpp"
#include "dyplan/retrieval.hpp"
#include "dyplan/templates.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace dyplan {

inline constexpr std::string_view kFinalAnswerMarker = "Final answer:";
inline constexpr std::size_t kForcedDecodeBudget = 20;

struct StrategySpec {
    std::string name;
    std::string description;
    int preference_rank = 1;  // 1 = most preferred
    std::size_t max_gen_tokens = 200;
    std::size_t n_shot = 0;
    bool needs_retrieval = false;
    std::string template_id;
};

// direct, plan, reason, retrieval with their generation budgets and shot counts.
std::vector<StrategySpec> default_strategies();

// Picks the named strategies out of `registry` in the given order and reassigns
// preference ranks 1..n. Rejects unknown and repeated names.
std::vector<StrategySpec> select_strategies(const std::vector<StrategySpec>& registry,
                                            const std::vector<std::string>& order);

// Names unique, ranks a permutation of 1..n.
void validate_strategies(const std::vector<StrategySpec>& specs);

const StrategySpec& find_strategy(const std::vector<StrategySpec>& specs, std::string_view name);

std::vector<StrategySpec> with_zero_shots(std::vector<StrategySpec> specs);

struct Exemplar {
    std::string question;
    std::vector<std::string> passages;
    std::string output;
};

// JSONL of {"question", "output", "passages"?}.
std::vector<Exemplar> load_exemplars(const std::filesystem::path& path);

// Exemplars per strategy, loaded from <dir>/<strategy>.jsonl and cut to n_shot.
using ShotBank = std::map<std::string, std::vector<Exemplar>>;
ShotBank load_shot_bank(const std::filesystem::path& dir, const std::vector<StrategySpec>& specs);

// "title: text", or just the text for untitled passages.
std::vector<std::string> passage_lines(const std::vector<Passage>& passages);

// "[1] title: text" lines in rank order.
std::string render_passages(const std::vector<Passage>& passages);
std::string render_passages(const std::vector<std::string>& passage_texts);

std::vector<ChatMessage> render_fixed_prompt(std::string_view question, const StrategySpec& spec,
                                             const std::vector<Exemplar>& shots,
                                             const std::optional<std::vector<Passage>>& passages,
                                             const TemplateSet& templates);

// Removes one trailing period and one layer of matching quotes.
std::string clean_answer(std::string_view raw);

// Answer after the first case-insensitive "Final answer:" marker, if non-empty.
std::optional<std::string> parse_final_answer(std::string_view text);

struct ExtractedAnswer {
    std::string answer;
    std::size_t extra_tokens = 0;
    bool forced = false;
    std::string continuation;  // text of the forced continuation, if issued
};

// Parses the marker; otherwise issues exactly one continuation seeded with the
// marker in an assistant turn. An unparsed continuation yields "".
ExtractedAnswer extract_final_answer(const Generation& generation, Backend& backend,
                                     const std::vector<ChatMessage>& messages, RequestTag tag,
                                     std::size_t budget = kForcedDecodeBudget);

// When a question counts as answered correctly by a strategy.
struct CorrectnessCriterion {
    bool use_f1 = false;
    double f1_threshold = 1.0;
};

struct StrategyOutcome {
    std::string question_id;
    std::string question;
    std::string strategy;
    std::string raw_generation;
    std::string answer;
    int em = 0;
    double f1 = 0.0;
    std::size_t gen_tokens = 0;
    std::size_t retrievals = 0;
    bool forced_decode_used = false;
    bool tokens_approximate = false;
    std::vector<std::string> passages;  // rendered into the prompt, retrieval only
    std::optional<std::string> error;   // failure marker

    bool correct(const CorrectnessCriterion& criterion = {}) const
    {
        return criterion.use_f1 ? f1 >= criterion.f1_threshold : em == 1;
    }
};

nlohmann::ordered_json to_json(const StrategyOutcome& outcome);
StrategyOutcome outcome_from_json(const nlohmann::json& j);

// (question, strategy) -> outcome over a fixed question list and strategy order.
class CorrectnessTable {
public:
    CorrectnessTable() = default;
    CorrectnessTable(std::vector<std::string> question_ids, std::vector<std::string> order);

    void add(StrategyOutcome outcome);

    bool contains(std::string_view question_id, std::string_view strategy) const;
    const StrategyOutcome& at(std::string_view question_id, std::string_view strategy) const;
    bool correct(std::string_view question_id, std::string_view strategy) const;

    const std::vector<std::string>& question_ids() const { return question_ids_; }
    const std::vector<std::string>& order() const { return order_; }
    std::size_t size() const { return cells_.size(); }

    // Throws DataError naming the first missing cell.
    void validate_complete() const;
    std::size_t failure_count() const;

    // D^s_p and D^s_n in question order.
    std::vector<std::string> positives(std::string_view strategy) const;
    std::vector<std::string> negatives(std::string_view strategy) const;

    void set_criterion(CorrectnessCriterion criterion) { criterion_ = criterion; }
    const CorrectnessCriterion& criterion() const { return criterion_; }

    // Same table with the strategy order replaced; every new name must be present.
    CorrectnessTable reordered(const std::vector<std::string>& order) const;

    // One outcome per line, questions in order, strategies in preference order.
    void save_jsonl(const std::filesystem::path& path) const;
    // Question order is first appearance; strategy order is `order` if given,
    // else first appearance.
    static CorrectnessTable load_jsonl(const std::filesystem::path& path, std::vector<std::string> order = {});

private:
    std::vector<std::string> question_ids_;
    std::vector<std::string> order_;
    std::map<std::pair<std::string, std::string>, StrategyOutcome, std::less<>> cells_;
    CorrectnessCriterion criterion_;
};

struct FixedRunContext {
    Backend& backend;
    const TemplateSet& templates;
    const ShotBank* shots = nullptr;       // n_shot exemplars per strategy; null means none
    const Retriever* retriever = nullptr;  // required iff a strategy needs retrieval
    std::size_t top_k = kDefaultTopK;
};

// Answers one question with one strategy. Backend and retrieval failures are
// recorded in the outcome's error field instead of thrown.
StrategyOutcome run_fixed(const DatasetRecord& record, const StrategySpec& spec, const FixedRunContext& ctx);

// Every question under every strategy, `parallelism` questions at a time.
CorrectnessTable run_fixed_dataset(const std::vector<DatasetRecord>& dataset, const std::vector<StrategySpec>& specs,
                                   const FixedRunContext& ctx, std::size_t parallelism = 1);

}  // namespace dyplan

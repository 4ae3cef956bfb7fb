#pragma once

#include "dyplan/backend.hpp"
#include "dyplan/strategy.hpp"
#include "dyplan/templates.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace dyplan {

// f*: question id -> first correct strategy in preference order, else the least preferred.
struct OptimalPolicy {
    std::map<std::string, std::string> choice;

    const std::string& at(std::string_view question_id) const;
    bool contains(std::string_view question_id) const { return choice.contains(std::string(question_id)); }
    std::size_t size() const { return choice.size(); }
    std::map<std::string, std::size_t> histogram() const;
};

// Index of the first set bit, or bits.size() - 1 when none is set.
std::size_t first_correct_or_last(const std::vector<bool>& bits);

// Throws DataError on an incomplete table or an order naming absent strategies.
OptimalPolicy optimal_policy(const CorrectnessTable& table, const std::vector<std::string>& order);

enum class InstanceKind { Decision, Execution, Verification, Multiround };

std::string_view to_string(InstanceKind kind);
InstanceKind instance_kind_from_string(std::string_view name);

struct TrainingInstance {
    InstanceKind kind = InstanceKind::Decision;
    std::string question_id;
    std::vector<ChatMessage> messages;
    std::vector<bool> train_mask;
    std::vector<std::string> source_strategies;
};

// Exactly one masked message, the last one, with role assistant; user/assistant
// alternate after an optional leading system message.
void validate_instance(const TrainingInstance& instance);

// Prompt material shared by every builder: templates and the strategy registry
// in preference order (the order of the table).
struct DatagenContext {
    const TemplateSet& templates;
    std::vector<StrategySpec> strategies;
};

// One instance per question: Decision prompt -> f*(d).
std::vector<TrainingInstance> build_decision_data(const CorrectnessTable& table, const OptimalPolicy& policy,
                                                  const DatagenContext& ctx);

// For every strategy s and d in D^s_p: Decision s, then Execution with the recorded generation.
std::vector<TrainingInstance> build_execution_data(const CorrectnessTable& table, const DatagenContext& ctx);

// For every (d, s): Decision s, recorded Execution, Verification "yes" iff d in D^s_p.
// With `balance`, the majority label is subsampled to the minority count.
std::vector<TrainingInstance> build_verification_data(const CorrectnessTable& table, const DatagenContext& ctx,
                                                      bool balance = false, std::uint64_t seed = 0);

// Two-round instances: wrong s_i rejected with "no", then correct s_j from the
// reduced pool. Pairs are visited s_j-major in preference order, then s_i; at
// most `pair_budget` questions per pair.
std::vector<TrainingInstance> build_multiround_data(const CorrectnessTable& table, const DatagenContext& ctx,
                                                    std::size_t pair_budget = std::numeric_limits<std::size_t>::max());

// The assistant text used for a recorded execution, completing forced decodes.
std::string execution_target(const StrategyOutcome& outcome);

// Seeded Fisher-Yates with a rejection-sampled index, identical across standard libraries.
template <typename T>
void deterministic_shuffle(std::vector<T>& items, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    for (std::size_t i = items.size(); i > 1; --i) {
        const std::uint64_t bound = i;
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % bound;
        std::uint64_t draw = rng();
        while (draw >= limit) {
            draw = rng();
        }
        std::swap(items[i - 1], items[static_cast<std::size_t>(draw % bound)]);
    }
}

// Relative share per kind under a cap. Empty means the natural (uncapped) mix.
using KindWeights = std::map<InstanceKind, double>;

// Per-kind quotas by largest remainder so each kind keeps its natural share.
std::map<InstanceKind, std::size_t> stratified_quotas(const std::vector<TrainingInstance>& instances, std::size_t cap);

// Quotas proportional to `weights`; a kind with fewer instances than its share
// keeps all of them and the rest is spread over the others.
std::map<InstanceKind, std::size_t> stratified_quotas(const std::vector<TrainingInstance>& instances, std::size_t cap,
                                                      const KindWeights& weights);

// Stratified cap followed by a seeded shuffle.
std::vector<TrainingInstance> cap_and_shuffle(std::vector<TrainingInstance> instances, std::uint64_t seed,
                                              std::size_t total_cap, const KindWeights& weights = {});

inline constexpr std::size_t kDefaultTrainingCap = 20000;

// Writes {"kind", "question_id", "messages", "train_mask"} lines. Returns lines written.
std::size_t emit_training_jsonl(const std::filesystem::path& path, std::vector<TrainingInstance> instances,
                                std::uint64_t shuffle_seed, std::size_t total_cap = kDefaultTrainingCap,
                                const KindWeights& weights = {});

nlohmann::ordered_json to_json(const TrainingInstance& instance);
TrainingInstance training_instance_from_json(const nlohmann::json& j);
std::vector<TrainingInstance> load_training_jsonl(const std::filesystem::path& path);

// Equal shares (differing by at most one, earlier datasets first) drawn with a
// seeded shuffle. Throws DataError naming any dataset smaller than its share.
std::vector<TrainingInstance> mix_combined(
    const std::vector<std::pair<std::string, std::vector<TrainingInstance>>>& datasets, std::size_t total,
    std::uint64_t seed = 0);

}  // namespace dyplan

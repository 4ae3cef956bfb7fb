#pragma once

#include "dyplan/datagen.hpp"
#include "dyplan/metrics.hpp"
#include "dyplan/pipeline.hpp"
#include "dyplan/strategy.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace dyplan {

// Probability per strategy, zero-filled over the order's support.
struct StrategyDistribution {
    std::vector<std::string> support;
    std::vector<double> probability;

    double at(std::string_view strategy) const;
    nlohmann::ordered_json to_json() const;
};

// Throws DataError on empty input or a choice outside `order`.
StrategyDistribution usage_distribution(const std::vector<std::string>& choices, const std::vector<std::string>& order);

StrategyDistribution policy_distribution(const OptimalPolicy& policy, const std::vector<std::string>& order);

inline constexpr double kKlSmoothing = 1e-9;

// KL(p || q) after adding eps to every cell and renormalizing both.
double kl_divergence(const StrategyDistribution& p, const StrategyDistribution& q, double eps = kKlSmoothing);

// Fraction of questions whose choice equals f*(d). `choices` maps question id to strategy.
double decision_accuracy(const std::map<std::string, std::string>& choices, const OptimalPolicy& policy);

// Round-1 decisions of a trace set.
std::map<std::string, std::string> first_round_choices(const std::vector<PipelineTrace>& traces);
std::map<std::string, std::string> final_round_choices(const std::vector<PipelineTrace>& traces);

struct VerificationStats {
    double kl_pre = 0.0;
    double kl_post = 0.0;
    double reject_pct = 0.0;
    std::optional<double> precision_no;  // absent without rejections
    std::size_t rejections = 0;
};

VerificationStats verification_stats(const std::vector<PipelineTrace>& traces,
                                     const std::map<std::string, GoldAnswerSet>& golds, const OptimalPolicy& policy,
                                     const std::vector<std::string>& order);

// Scores the recorded outcome of f*(d) for every question.
EvalReport upper_bound(const CorrectnessTable& table, const OptimalPolicy& policy);

struct EnsembleResult {
    std::map<std::string, std::string> answers;  // question id -> answer
    std::map<std::string, std::string> winner;   // question id -> strategy whose answer was used
    EvalReport report;
};

// Plurality over normalized answers; ties go to the group holding the strategy
// latest in `order`. Costs are the sum over all member strategies.
EnsembleResult majority_ensemble(const CorrectnessTable& table, const std::vector<std::string>& order);

// Bit i of a subset mask stands for order[i].
struct CombinationContribution {
    std::vector<std::string> order;
    std::vector<double> mass;     // indexed by mask; mass[0] is the none-correct residual
    std::vector<bool> violation;  // indexed by mask
    std::vector<std::size_t> count;

    double violation_mass() const;
    double total_mass() const;
    std::string csv() const;
    nlohmann::ordered_json to_json() const;
};

// True iff the mask is non-empty and not of the form {order[k], ..., order[n-1]}.
bool is_hierarchy_violation(std::uint32_t mask, std::size_t n);

CombinationContribution hierarchy_violations(const CorrectnessTable& table, const std::vector<std::string>& order);

}  // namespace dyplan

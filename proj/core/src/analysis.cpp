#include "dyplan/analysis.hpp"

#include "dyplan/error.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

namespace dyplan {

double StrategyDistribution::at(std::string_view strategy) const
{
    const auto it = std::find(support.begin(), support.end(), strategy);
    if (it == support.end()) {
        throw DataError("strategy '" + std::string(strategy) + "' outside the distribution support");
    }
    return probability[static_cast<std::size_t>(it - support.begin())];
}

nlohmann::ordered_json StrategyDistribution::to_json() const
{
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (std::size_t i = 0; i < support.size(); ++i) {
        j[support[i]] = probability[i];
    }
    return j;
}

StrategyDistribution usage_distribution(const std::vector<std::string>& choices, const std::vector<std::string>& order)
{
    if (choices.empty()) {
        throw DataError("no choices to summarize");
    }
    StrategyDistribution d{order, std::vector<double>(order.size(), 0.0)};
    for (const auto& c : choices) {
        const auto it = std::find(order.begin(), order.end(), c);
        if (it == order.end()) {
            throw DataError("choice '" + c + "' is not in the strategy order");
        }
        d.probability[static_cast<std::size_t>(it - order.begin())] += 1.0;
    }
    for (auto& p : d.probability) {
        p /= static_cast<double>(choices.size());
    }
    return d;
}

StrategyDistribution policy_distribution(const OptimalPolicy& policy, const std::vector<std::string>& order)
{
    std::vector<std::string> choices;
    choices.reserve(policy.size());
    for (const auto& [q, s] : policy.choice) {
        choices.push_back(s);
    }
    return usage_distribution(choices, order);
}

double kl_divergence(const StrategyDistribution& p, const StrategyDistribution& q, double eps)
{
    if (p.support != q.support || p.probability.size() != q.probability.size()) {
        throw DataError("KL divergence needs distributions over the same support");
    }
    const auto smooth = [eps](const std::vector<double>& v) {
        std::vector<double> out(v.size());
        double total = 0.0;
        for (std::size_t i = 0; i < v.size(); ++i) {
            out[i] = v[i] + eps;
            total += out[i];
        }
        for (auto& x : out) {
            x /= total;
        }
        return out;
    };
    const auto ps = smooth(p.probability);
    const auto qs = smooth(q.probability);
    double kl = 0.0;
    for (std::size_t i = 0; i < ps.size(); ++i) {
        kl += ps[i] * std::log(ps[i] / qs[i]);
    }
    return std::max(0.0, kl);
}

double decision_accuracy(const std::map<std::string, std::string>& choices, const OptimalPolicy& policy)
{
    if (choices.empty()) {
        throw DataError("no decisions to score");
    }
    std::size_t hits = 0;
    for (const auto& [q, s] : choices) {
        if (policy.at(q) == s) {
            ++hits;
        }
    }
    return static_cast<double>(hits) / static_cast<double>(choices.size());
}

std::map<std::string, std::string> first_round_choices(const std::vector<PipelineTrace>& traces)
{
    std::map<std::string, std::string> out;
    for (const auto& t : traces) {
        if (!t.rounds.empty()) {
            out[t.question_id] = t.rounds.front().decision;
        }
    }
    return out;
}

std::map<std::string, std::string> final_round_choices(const std::vector<PipelineTrace>& traces)
{
    std::map<std::string, std::string> out;
    for (const auto& t : traces) {
        if (!t.rounds.empty()) {
            out[t.question_id] = t.rounds.back().decision;
        }
    }
    return out;
}

namespace {

std::vector<std::string> values_of(const std::map<std::string, std::string>& m)
{
    std::vector<std::string> out;
    for (const auto& [k, v] : m) {
        out.push_back(v);
    }
    return out;
}

}  // namespace

VerificationStats verification_stats(const std::vector<PipelineTrace>& traces,
                                     const std::map<std::string, GoldAnswerSet>& golds, const OptimalPolicy& policy,
                                     const std::vector<std::string>& order)
{
    if (traces.empty()) {
        throw DataError("no traces to analyze");
    }
    const auto optimal = policy_distribution(policy, order);
    VerificationStats stats;
    stats.kl_pre = kl_divergence(usage_distribution(values_of(first_round_choices(traces)), order), optimal);
    stats.kl_post = kl_divergence(usage_distribution(values_of(final_round_choices(traces)), order), optimal);

    std::size_t rejected_traces = 0;
    std::size_t no_verdicts = 0;
    std::size_t correct_rejections = 0;
    for (const auto& t : traces) {
        if (t.mode != PipelineMode::Verify) {
            throw DataError("verification stats need verify-mode traces ('" + t.question_id + "' is base)");
        }
        const auto g = golds.find(t.question_id);
        if (g == golds.end()) {
            throw DataError("no gold answers for '" + t.question_id + "'");
        }
        bool any_no = false;
        for (const auto& r : t.rounds) {
            if (r.verdict == Verdict::No) {
                any_no = true;
                ++no_verdicts;
                if (exact_match(r.execution.answer, g->second) == 0) {
                    ++correct_rejections;
                }
            }
        }
        rejected_traces += any_no ? 1 : 0;
    }
    stats.rejections = no_verdicts;
    stats.reject_pct = static_cast<double>(rejected_traces) / static_cast<double>(traces.size());
    if (no_verdicts > 0) {
        stats.precision_no = static_cast<double>(correct_rejections) / static_cast<double>(no_verdicts);
    }
    return stats;
}

EvalReport upper_bound(const CorrectnessTable& table, const OptimalPolicy& policy)
{
    table.validate_complete();
    std::vector<ScoredItem> items;
    for (const auto& q : table.question_ids()) {
        const auto& o = table.at(q, policy.at(q));
        items.push_back({static_cast<double>(o.em), o.f1, static_cast<double>(o.gen_tokens),
                         static_cast<double>(o.retrievals)});
    }
    return aggregate_scored(items);
}

EnsembleResult majority_ensemble(const CorrectnessTable& table, const std::vector<std::string>& order)
{
    table.validate_complete();
    if (order.size() < 2) {
        throw ConfigError("ensemble needs at least two strategies");
    }
    EnsembleResult result;
    std::vector<ScoredItem> items;
    for (const auto& q : table.question_ids()) {
        // normalized answer -> (votes, highest order index among members)
        std::map<std::string, std::pair<std::size_t, std::size_t>> groups;
        double tokens = 0.0;
        double retrievals = 0.0;
        for (std::size_t i = 0; i < order.size(); ++i) {
            const auto& o = table.at(q, order[i]);
            auto& g = groups[normalize_answer(o.answer)];
            ++g.first;
            g.second = std::max(g.second, i);
            tokens += static_cast<double>(o.gen_tokens);
            retrievals += static_cast<double>(o.retrievals);
        }
        const auto best = std::max_element(groups.begin(), groups.end(), [](const auto& a, const auto& b) {
            return a.second.first != b.second.first ? a.second.first < b.second.first
                                                    : a.second.second < b.second.second;
        });
        const auto& winner = table.at(q, order[best->second.second]);
        result.answers[q] = winner.answer;
        result.winner[q] = winner.strategy;

        // Every member of the winning group shares the normalized answer, so the
        // winner's scores are the group's scores.
        items.push_back({static_cast<double>(winner.em), winner.f1, tokens, retrievals});
    }
    result.report = aggregate_scored(items);
    return result;
}

bool is_hierarchy_violation(std::uint32_t mask, std::size_t n)
{
    if (mask == 0) {
        return false;
    }
    const std::uint32_t full = n >= 32 ? ~0u : (1u << n) - 1u;
    for (std::size_t k = 0; k < n; ++k) {
        if (mask == (full & ~((1u << k) - 1u))) {
            return false;
        }
    }
    return true;
}

CombinationContribution hierarchy_violations(const CorrectnessTable& table, const std::vector<std::string>& order)
{
    table.validate_complete();
    const auto n = order.size();
    if (n == 0 || n > 16) {
        throw ConfigError("hierarchy analysis supports 1 to 16 strategies");
    }
    const std::size_t subsets = std::size_t{1} << n;
    CombinationContribution c;
    c.order = order;
    c.mass.assign(subsets, 0.0);
    c.count.assign(subsets, 0);
    c.violation.assign(subsets, false);
    for (std::uint32_t mask = 0; mask < subsets; ++mask) {
        c.violation[mask] = is_hierarchy_violation(mask, n);
    }
    const auto total = static_cast<double>(table.question_ids().size());
    for (const auto& q : table.question_ids()) {
        std::uint32_t mask = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (table.correct(q, order[i])) {
                mask |= 1u << i;
            }
        }
        // Best F1 within the correct set; over all strategies for the empty set.
        double best = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (mask == 0 || (mask & (1u << i)) != 0) {
                best = std::max(best, table.at(q, order[i]).f1);
            }
        }
        c.mass[mask] += best / total;
        ++c.count[mask];
    }
    return c;
}

double CombinationContribution::violation_mass() const
{
    double sum = 0.0;
    for (std::size_t m = 0; m < mass.size(); ++m) {
        if (violation[m]) {
            sum += mass[m];
        }
    }
    return sum;
}

double CombinationContribution::total_mass() const
{
    double sum = 0.0;
    for (const auto m : mass) {
        sum += m;
    }
    return sum;
}

std::string CombinationContribution::csv() const
{
    std::ostringstream out;
    out << "mask,strategies,count,mass,violation\n";
    out << std::setprecision(17);
    for (std::size_t m = 0; m < mass.size(); ++m) {
        std::string names;
        for (std::size_t i = 0; i < order.size(); ++i) {
            if ((m & (std::size_t{1} << i)) != 0) {
                names += (names.empty() ? "" : "+") + order[i];
            }
        }
        out << m << ',' << (names.empty() ? "none" : names) << ',' << count[m] << ',' << mass[m] << ','
            << (violation[m] ? 1 : 0) << '\n';
    }
    return out.str();
}

nlohmann::ordered_json CombinationContribution::to_json() const
{
    nlohmann::ordered_json j;
    j["order"] = order;
    j["membership"] = "em";
    j["mass_formula"] = "sum over questions with exactly this correct set of max F1 within the set, divided by |D|";
    auto& subsets = j["subsets"] = nlohmann::ordered_json::array();
    for (std::size_t m = 1; m < mass.size(); ++m) {
        std::vector<std::string> names;
        for (std::size_t i = 0; i < order.size(); ++i) {
            if ((m & (std::size_t{1} << i)) != 0) {
                names.push_back(order[i]);
            }
        }
        subsets.push_back({{"mask", m}, {"strategies", names}, {"count", count[m]}, {"mass", mass[m]},
                           {"violation", static_cast<bool>(violation[m])}});
    }
    j["none_correct_residual"] = mass.empty() ? 0.0 : mass[0];
    j["none_correct_count"] = count.empty() ? 0 : count[0];
    j["violation_mass"] = violation_mass();
    j["total_mass"] = total_mass();
    return j;
}

}  // namespace dyplan

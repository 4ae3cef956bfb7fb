#include "dyplan/datagen.hpp"

#include "dyplan/error.hpp"
#include "dyplan/pipeline.hpp"
#include "dyplan/text.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace dyplan {

namespace fs = std::filesystem;

const std::string& OptimalPolicy::at(std::string_view question_id) const
{
    const auto it = choice.find(std::string(question_id));
    if (it == choice.end()) {
        throw DataError("optimal policy has no entry for '" + std::string(question_id) + "'");
    }
    return it->second;
}

std::map<std::string, std::size_t> OptimalPolicy::histogram() const
{
    std::map<std::string, std::size_t> h;
    for (const auto& [q, s] : choice) {
        ++h[s];
    }
    return h;
}

std::size_t first_correct_or_last(const std::vector<bool>& bits)
{
    if (bits.empty()) {
        throw DataError("no strategies to choose from");
    }
    const auto it = std::find(bits.begin(), bits.end(), true);
    return it == bits.end() ? bits.size() - 1 : static_cast<std::size_t>(it - bits.begin());
}

OptimalPolicy optimal_policy(const CorrectnessTable& table, const std::vector<std::string>& order)
{
    table.validate_complete();
    if (order.empty()) {
        throw DataError("optimal policy needs a non-empty strategy order");
    }
    OptimalPolicy policy;
    for (const auto& q : table.question_ids()) {
        std::vector<bool> bits;
        bits.reserve(order.size());
        for (const auto& s : order) {
            bits.push_back(table.correct(q, s));
        }
        policy.choice[q] = order[first_correct_or_last(bits)];
    }
    return policy;
}

std::string_view to_string(InstanceKind kind)
{
    switch (kind) {
    case InstanceKind::Decision: return "decision";
    case InstanceKind::Execution: return "execution";
    case InstanceKind::Verification: return "verification";
    case InstanceKind::Multiround: return "multiround";
    }
    return "decision";
}

InstanceKind instance_kind_from_string(std::string_view name)
{
    if (name == "decision") return InstanceKind::Decision;
    if (name == "execution") return InstanceKind::Execution;
    if (name == "verification") return InstanceKind::Verification;
    if (name == "multiround") return InstanceKind::Multiround;
    throw ParseError("unknown instance kind '" + std::string(name) + "'");
}

void validate_instance(const TrainingInstance& instance)
{
    const auto& m = instance.messages;
    if (m.size() != instance.train_mask.size()) {
        throw DataError("train_mask length differs from message count");
    }
    if (m.empty() || m.back().role != Role::Assistant) {
        throw DataError("training instance must end with an assistant message");
    }
    if (std::count(instance.train_mask.begin(), instance.train_mask.end(), true) != 1 ||
        !instance.train_mask.back()) {
        throw DataError("exactly the final assistant message must be masked for training");
    }
    const std::size_t start = m.front().role == Role::System ? 1 : 0;
    for (std::size_t i = start; i < m.size(); ++i) {
        const auto expected = (i - start) % 2 == 0 ? Role::User : Role::Assistant;
        if (m[i].role != expected) {
            throw DataError("training instance roles do not alternate user/assistant");
        }
    }
}

std::string execution_target(const StrategyOutcome& outcome)
{
    if (!outcome.forced_decode_used) {
        return outcome.raw_generation;
    }
    const auto body = std::string(trim(outcome.raw_generation));
    return (body.empty() ? std::string{} : body + "\n") + std::string(kFinalAnswerMarker) + " \"" + outcome.answer +
           "\"";
}

namespace {

const std::string& question_text(const CorrectnessTable& table, const std::string& question_id)
{
    const auto& text = table.at(question_id, table.order().front()).question;
    if (text.empty()) {
        throw DataError("outcome log has no question text for '" + question_id + "'");
    }
    return text;
}

std::vector<StrategySpec> specs_in_order(const DatagenContext& ctx, const std::vector<std::string>& order)
{
    std::vector<StrategySpec> out;
    for (const auto& name : order) {
        auto spec = find_strategy(ctx.strategies, name);
        spec.preference_rank = static_cast<int>(out.size()) + 1;
        out.push_back(std::move(spec));
    }
    return out;
}

// Decision turn choosing `chosen`, then its Execution turn with the recorded generation.
void append_round(std::vector<ChatMessage>& messages, const std::string& question,
                  const std::vector<StrategySpec>& offered, const StrategySpec& chosen, const StrategyOutcome& outcome,
                  const DatagenContext& ctx)
{
    messages = render_decision_prompt(question, offered, messages, ctx.templates);
    messages.push_back({Role::Assistant, chosen.name});
    messages.push_back(render_execution_turn(question, chosen, outcome.passages, ctx.templates));
    messages.push_back({Role::Assistant, execution_target(outcome)});
}

TrainingInstance finish(InstanceKind kind, const std::string& question_id, std::vector<ChatMessage> messages,
                        std::vector<std::string> sources)
{
    TrainingInstance instance;
    instance.kind = kind;
    instance.question_id = question_id;
    instance.train_mask.assign(messages.size(), false);
    instance.train_mask.back() = true;
    instance.messages = std::move(messages);
    instance.source_strategies = std::move(sources);
    return instance;
}

}  // namespace

std::vector<TrainingInstance> build_decision_data(const CorrectnessTable& table, const OptimalPolicy& policy,
                                                  const DatagenContext& ctx)
{
    const auto offered = specs_in_order(ctx, table.order());
    std::vector<TrainingInstance> out;
    for (const auto& q : table.question_ids()) {
        const auto& target = policy.at(q);
        auto messages = render_decision_prompt(question_text(table, q), offered, {}, ctx.templates);
        messages.push_back({Role::Assistant, target});
        out.push_back(finish(InstanceKind::Decision, q, std::move(messages), {target}));
    }
    return out;
}

std::vector<TrainingInstance> build_execution_data(const CorrectnessTable& table, const DatagenContext& ctx)
{
    table.validate_complete();
    const auto offered = specs_in_order(ctx, table.order());
    std::vector<TrainingInstance> out;
    for (const auto& spec : offered) {
        for (const auto& q : table.positives(spec.name)) {
            std::vector<ChatMessage> messages;
            append_round(messages, question_text(table, q), offered, spec, table.at(q, spec.name), ctx);
            out.push_back(finish(InstanceKind::Execution, q, std::move(messages), {spec.name}));
        }
    }
    return out;
}

std::vector<TrainingInstance> build_verification_data(const CorrectnessTable& table, const DatagenContext& ctx,
                                                      bool balance, std::uint64_t seed)
{
    table.validate_complete();
    const auto offered = specs_in_order(ctx, table.order());
    std::vector<TrainingInstance> out;
    std::vector<std::size_t> yes;
    std::vector<std::size_t> no;
    for (const auto& spec : offered) {
        for (const auto& q : table.question_ids()) {
            const bool correct = table.correct(q, spec.name);
            std::vector<ChatMessage> messages;
            append_round(messages, question_text(table, q), offered, spec, table.at(q, spec.name), ctx);
            messages.push_back(render_verification_turn(ctx.templates));
            messages.push_back({Role::Assistant, correct ? "yes" : "no"});
            (correct ? yes : no).push_back(out.size());
            out.push_back(finish(InstanceKind::Verification, q, std::move(messages), {spec.name}));
        }
    }
    if (!balance || yes.empty() || no.empty() || yes.size() == no.size()) {
        return out;
    }
    auto& majority = yes.size() > no.size() ? yes : no;
    const auto keep = std::min(yes.size(), no.size());
    deterministic_shuffle(majority, seed);
    majority.resize(keep);
    std::vector<std::size_t> kept(yes);
    kept.insert(kept.end(), no.begin(), no.end());
    std::sort(kept.begin(), kept.end());
    std::vector<TrainingInstance> balanced;
    balanced.reserve(kept.size());
    for (auto i : kept) {
        balanced.push_back(std::move(out[i]));
    }
    return balanced;
}

std::vector<TrainingInstance> build_multiround_data(const CorrectnessTable& table, const DatagenContext& ctx,
                                                    std::size_t pair_budget)
{
    table.validate_complete();
    const auto offered = specs_in_order(ctx, table.order());
    std::vector<TrainingInstance> out;
    for (const auto& second : offered) {
        for (const auto& first : offered) {
            if (first.name == second.name) {
                continue;
            }
            std::vector<StrategySpec> reduced;
            std::copy_if(offered.begin(), offered.end(), std::back_inserter(reduced),
                         [&](const StrategySpec& s) { return s.name != first.name; });
            std::size_t taken = 0;
            for (const auto& q : table.question_ids()) {
                if (taken >= pair_budget) {
                    break;
                }
                if (table.correct(q, first.name) || !table.correct(q, second.name)) {
                    continue;
                }
                const auto& question = question_text(table, q);
                std::vector<ChatMessage> messages;
                append_round(messages, question, offered, first, table.at(q, first.name), ctx);
                messages.push_back(render_verification_turn(ctx.templates));
                messages.push_back({Role::Assistant, "no"});
                append_round(messages, question, reduced, second, table.at(q, second.name), ctx);
                out.push_back(finish(InstanceKind::Multiround, q, std::move(messages), {first.name, second.name}));
                ++taken;
            }
        }
    }
    return out;
}

std::map<InstanceKind, std::size_t> stratified_quotas(const std::vector<TrainingInstance>& instances, std::size_t cap)
{
    std::map<InstanceKind, std::size_t> counts;
    for (const auto& i : instances) {
        ++counts[i.kind];
    }
    if (cap >= instances.size()) {
        return counts;
    }
    const auto total = instances.size();
    std::map<InstanceKind, std::size_t> quotas;
    std::vector<std::pair<std::size_t, InstanceKind>> remainders;  // numerator of the fractional part
    std::size_t assigned = 0;
    for (const auto& [kind, n] : counts) {
        quotas[kind] = n * cap / total;
        assigned += quotas[kind];
        remainders.emplace_back(n * cap % total, kind);
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t i = 0; assigned < cap; ++i) {
        ++quotas[remainders[i].second];
        ++assigned;
    }
    return quotas;
}

std::map<InstanceKind, std::size_t> stratified_quotas(const std::vector<TrainingInstance>& instances, std::size_t cap,
                                                      const KindWeights& weights)
{
    if (weights.empty()) {
        return stratified_quotas(instances, cap);
    }
    std::map<InstanceKind, std::size_t> counts;
    for (const auto& i : instances) {
        ++counts[i.kind];
    }
    for (const auto& [kind, w] : weights) {
        if (!(w >= 0.0) || !std::isfinite(w)) {
            throw ConfigError("kind weights must be finite and non-negative");
        }
    }
    std::map<InstanceKind, std::size_t> quotas;
    std::vector<InstanceKind> active;
    for (const auto& [kind, n] : counts) {
        quotas[kind] = 0;
        const auto w = weights.find(kind);
        if (w != weights.end() && w->second > 0.0) {
            active.push_back(kind);
        }
    }
    std::size_t remaining = std::min(cap, [&] {
        std::size_t available = 0;
        for (const auto k : active) {
            available += counts[k];
        }
        return available;
    }());
    // Saturate kinds whose share exceeds their supply, then split the rest.
    for (bool saturated = true; saturated && !active.empty();) {
        saturated = false;
        double wsum = 0.0;
        for (const auto k : active) {
            wsum += weights.at(k);
        }
        for (auto it = active.begin(); it != active.end(); ++it) {
            if (weights.at(*it) / wsum * static_cast<double>(remaining) >= static_cast<double>(counts[*it])) {
                quotas[*it] = counts[*it];
                remaining -= counts[*it];
                active.erase(it);
                saturated = true;
                break;
            }
        }
    }
    if (active.empty()) {
        return quotas;
    }
    double wsum = 0.0;
    for (const auto k : active) {
        wsum += weights.at(k);
    }
    std::vector<std::pair<double, InstanceKind>> remainders;
    std::size_t assigned = 0;
    for (const auto k : active) {
        const double share = weights.at(k) / wsum * static_cast<double>(remaining);
        quotas[k] = static_cast<std::size_t>(std::floor(share));
        assigned += quotas[k];
        remainders.emplace_back(share - std::floor(share), k);
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t i = 0; assigned < remaining; i = (i + 1) % remainders.size()) {
        auto& q = quotas[remainders[i].second];
        if (q < counts[remainders[i].second]) {
            ++q;
            ++assigned;
        }
    }
    return quotas;
}

std::vector<TrainingInstance> cap_and_shuffle(std::vector<TrainingInstance> instances, std::uint64_t seed,
                                              std::size_t total_cap, const KindWeights& weights)
{
    const auto quotas = stratified_quotas(instances, total_cap, weights);
    std::map<InstanceKind, std::vector<TrainingInstance>> by_kind;
    for (auto& i : instances) {
        by_kind[i.kind].push_back(std::move(i));
    }
    std::vector<TrainingInstance> selected;
    for (auto& [kind, group] : by_kind) {
        deterministic_shuffle(group, seed + static_cast<std::uint64_t>(kind) + 1);
        group.resize(std::min(group.size(), quotas.at(kind)));
        std::move(group.begin(), group.end(), std::back_inserter(selected));
    }
    deterministic_shuffle(selected, seed);
    return selected;
}

nlohmann::ordered_json to_json(const TrainingInstance& instance)
{
    nlohmann::ordered_json j;
    j["kind"] = to_string(instance.kind);
    j["question_id"] = instance.question_id;
    auto& messages = j["messages"] = nlohmann::ordered_json::array();
    for (const auto& m : instance.messages) {
        messages.push_back(nlohmann::ordered_json(to_json(m)));
    }
    j["train_mask"] = instance.train_mask;
    return j;
}

TrainingInstance training_instance_from_json(const nlohmann::json& j)
{
    TrainingInstance instance;
    instance.kind = instance_kind_from_string(j.at("kind").get<std::string>());
    instance.question_id = j.at("question_id").get<std::string>();
    for (const auto& m : j.at("messages")) {
        instance.messages.push_back(message_from_json(m));
    }
    instance.train_mask = j.at("train_mask").get<std::vector<bool>>();
    validate_instance(instance);
    return instance;
}

std::size_t emit_training_jsonl(const fs::path& path, std::vector<TrainingInstance> instances,
                                std::uint64_t shuffle_seed, std::size_t total_cap, const KindWeights& weights)
{
    if (instances.empty()) {
        throw DataError("no training instances to write");
    }
    for (const auto& i : instances) {
        validate_instance(i);
    }
    const auto selected = cap_and_shuffle(std::move(instances), shuffle_seed, total_cap, weights);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error("cannot write training data: " + path.string());
    }
    for (const auto& i : selected) {
        out << to_json(i).dump() << '\n';
    }
    if (!out) {
        throw Error("write failed: " + path.string());
    }
    return selected.size();
}

std::vector<TrainingInstance> load_training_jsonl(const fs::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open training data: " + path.string());
    }
    std::vector<TrainingInstance> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) {
            continue;
        }
        try {
            out.push_back(training_instance_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        } catch (const Error& e) {
            throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

std::vector<TrainingInstance> mix_combined(
    const std::vector<std::pair<std::string, std::vector<TrainingInstance>>>& datasets, std::size_t total,
    std::uint64_t seed)
{
    if (datasets.size() < 2) {
        throw ConfigError("mixing needs at least two datasets");
    }
    const auto n = datasets.size();
    std::vector<TrainingInstance> out;
    for (std::size_t i = 0; i < n; ++i) {
        const auto share = total / n + (i < total % n ? 1 : 0);
        const auto& [name, instances] = datasets[i];
        if (instances.size() < share) {
            throw DataError("dataset '" + name + "' has " + std::to_string(instances.size()) +
                            " instances, fewer than its share of " + std::to_string(share));
        }
        auto pool = instances;
        deterministic_shuffle(pool, seed + i);
        std::move(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(share), std::back_inserter(out));
    }
    return out;
}

}  // namespace dyplan

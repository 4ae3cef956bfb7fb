#include <doctest.h>

#include "dyplan/datagen.hpp"
#include "dyplan/error.hpp"
#include "support.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <random>
#include <set>

using namespace dyplan;

namespace {

struct Fixture {
    TemplateSet templates = TemplateSet::builtin();
    std::vector<StrategySpec> strategies = default_strategies();
    DatagenContext ctx() const { return {templates, strategies}; }
};

// Planted 4-strategy pattern with every subset represented.
bool pattern(std::size_t i, std::size_t s)
{
    return ((i * 7 + 3) >> s) & 1u;
}

}  // namespace

TEST_CASE("first_correct_or_last")
{
    CHECK(first_correct_or_last({true, false, true, true}) == 0);
    CHECK(first_correct_or_last({false, false, true, true}) == 2);
    CHECK(first_correct_or_last({false, false, false, false}) == 3);
    CHECK_THROWS_AS(first_correct_or_last({}), DataError);
}

TEST_CASE("optimal_policy examples")
{
    const auto& order = test::default_order();
    const auto table = test::planted_table(2, order, [](std::size_t i, std::size_t s) {
        return i == 0 ? s != 1 : false;
    });
    const auto policy = optimal_policy(table, order);
    CHECK(policy.at("q000") == "direct");
    CHECK(policy.at("q001") == "retrieval");
    CHECK_THROWS_AS(policy.at("zzz"), DataError);

    CorrectnessTable partial({"a"}, {"direct", "plan"});
    CHECK_THROWS_AS(optimal_policy(partial, {"direct", "plan"}), DataError);
}

TEST_CASE("decision data")
{
    Fixture f;
    const auto& order = test::default_order();
    const auto table = test::planted_table(16, order, pattern);
    const auto policy = optimal_policy(table, order);
    const auto data = build_decision_data(table, policy, f.ctx());
    REQUIRE(data.size() == 16);
    std::map<std::string, std::size_t> hist;
    for (const auto& d : data) {
        CHECK_NOTHROW(validate_instance(d));
        CHECK(d.messages.back().content == policy.at(d.question_id));
        ++hist[d.messages.back().content];
    }
    CHECK(hist == policy.histogram());
}

TEST_CASE("execution data uses positives only")
{
    Fixture f;
    const auto& order = test::default_order();
    const auto table = test::planted_table(16, order, pattern);
    const auto data = build_execution_data(table, f.ctx());
    std::size_t expected = 0;
    for (const auto& s : order) {
        expected += table.positives(s).size();
    }
    CHECK(data.size() == expected);
    for (const auto& d : data) {
        validate_instance(d);
        const auto& s = d.source_strategies.at(0);
        CHECK(table.correct(d.question_id, s));
        CHECK(d.messages.back().content == table.at(d.question_id, s).raw_generation);
        CHECK(d.messages[d.messages.size() - 3].content == s);
    }
}

TEST_CASE("execution target completes forced decodes")
{
    StrategyOutcome o;
    o.raw_generation = "It is Rome";
    o.answer = "Rome";
    CHECK(execution_target(o) == "It is Rome");
    o.forced_decode_used = true;
    CHECK(execution_target(o) == "It is Rome\nFinal answer: \"Rome\"");
}

TEST_CASE("verification data labels equal EM bits")
{
    Fixture f;
    const auto& order = test::default_order();
    const auto table = test::planted_table(16, order, pattern);
    const auto data = build_verification_data(table, f.ctx());
    CHECK(data.size() == 64);
    std::size_t yes = 0;
    for (const auto& d : data) {
        validate_instance(d);
        const bool correct = table.correct(d.question_id, d.source_strategies.at(0));
        CHECK(d.messages.back().content == (correct ? "yes" : "no"));
        yes += correct ? 1 : 0;
    }
    std::size_t positives = 0;
    for (const auto& s : order) {
        positives += table.positives(s).size();
    }
    CHECK(yes == positives);

    const auto balanced = build_verification_data(table, f.ctx(), true, 7);
    std::size_t by = 0;
    for (const auto& d : balanced) {
        by += d.messages.back().content == "yes" ? 1 : 0;
    }
    CHECK(by * 2 == balanced.size());
    CHECK(balanced.size() == 2 * std::min(yes, 64 - yes));
}

TEST_CASE("multiround data matches the set-intersection oracle")
{
    Fixture f;
    const auto& order = test::default_order();
    const auto table = test::planted_table(40, order, [](std::size_t i, std::size_t s) { return pattern(i, s); });
    for (const std::size_t budget : {std::size_t{1}, std::size_t{3}, std::numeric_limits<std::size_t>::max()}) {
        const auto data = build_multiround_data(table, f.ctx(), budget);
        std::map<std::pair<std::string, std::string>, std::size_t> counts;
        for (const auto& d : data) {
            validate_instance(d);
            const auto& si = d.source_strategies.at(0);
            const auto& sj = d.source_strategies.at(1);
            CHECK(si != sj);
            CHECK_FALSE(table.correct(d.question_id, si));
            CHECK(table.correct(d.question_id, sj));
            ++counts[{si, sj}];
        }
        for (const auto& si : order) {
            for (const auto& sj : order) {
                if (si == sj) {
                    continue;
                }
                std::size_t inter = 0;
                for (const auto& q : table.question_ids()) {
                    inter += (!table.correct(q, si) && table.correct(q, sj)) ? 1 : 0;
                }
                CHECK(counts[{si, sj}] == std::min(inter, budget));
            }
        }
    }

    const auto all_correct = test::planted_table(5, order, [](std::size_t, std::size_t) { return true; });
    CHECK(build_multiround_data(all_correct, f.ctx()).empty());
}

TEST_CASE("multiround instance layout")
{
    Fixture f;
    const auto& order = test::default_order();
    // q000: direct wrong, reason right.
    const auto table = test::planted_table(1, order, [](std::size_t, std::size_t s) { return s == 2; });
    const auto data = build_multiround_data(table, f.ctx());
    const auto it = std::find_if(data.begin(), data.end(), [](const TrainingInstance& d) {
        return d.source_strategies == std::vector<std::string>{"direct", "reason"};
    });
    REQUIRE(it != data.end());
    const auto& m = it->messages;
    // system, decision, "direct", exec, answer, verify, "no", follow-up decision, "reason", exec, answer
    REQUIRE(m.size() == 11);
    CHECK(m[2].content == "direct");
    CHECK(m[6].content == "no");
    CHECK(m[7].content.find("- direct:") == std::string::npos);
    CHECK(m[7].content.find("- reason:") != std::string::npos);
    CHECK(m[8].content == "reason");
    std::vector<bool> mask(11, false);
    mask.back() = true;
    CHECK(it->train_mask == mask);
}

TEST_CASE("validate_instance rejects malformed layouts")
{
    TrainingInstance t;
    t.messages = {{Role::User, "u"}, {Role::Assistant, "a"}};
    t.train_mask = {false, true};
    CHECK_NOTHROW(validate_instance(t));
    t.train_mask = {true, true};
    CHECK_THROWS_AS(validate_instance(t), DataError);
    t.train_mask = {true, false};
    CHECK_THROWS_AS(validate_instance(t), DataError);
    t.messages = {{Role::Assistant, "a"}, {Role::Assistant, "b"}};
    t.train_mask = {false, true};
    CHECK_THROWS_AS(validate_instance(t), DataError);
    t.messages = {{Role::User, "u"}};
    t.train_mask = {true};
    CHECK_THROWS_AS(validate_instance(t), DataError);
}

TEST_CASE("deterministic shuffle is a seeded permutation")
{
    std::vector<int> a(100);
    std::iota(a.begin(), a.end(), 0);
    auto b = a;
    auto c = a;
    deterministic_shuffle(b, 42);
    deterministic_shuffle(c, 42);
    CHECK(b == c);
    CHECK(b != a);
    auto sorted = b;
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == a);
    auto d = a;
    deterministic_shuffle(d, 43);
    CHECK(d != b);
}

TEST_CASE("stratified caps keep kind proportions")
{
    std::vector<TrainingInstance> mix;
    const auto add = [&](InstanceKind k, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) {
            TrainingInstance t;
            t.kind = k;
            t.question_id = std::string(to_string(k)) + std::to_string(i);
            t.messages = {{Role::User, "u"}, {Role::Assistant, "a"}};
            t.train_mask = {false, true};
            mix.push_back(t);
        }
    };
    add(InstanceKind::Decision, 500);
    add(InstanceKind::Execution, 300);
    add(InstanceKind::Verification, 170);
    add(InstanceKind::Multiround, 30);
    for (const std::size_t cap : {1u, 7u, 100u, 333u, 999u}) {
        const auto q = stratified_quotas(mix, cap);
        std::size_t total = 0;
        for (const auto& [k, n] : q) {
            const double natural = (k == InstanceKind::Decision     ? 500.0
                                    : k == InstanceKind::Execution  ? 300.0
                                    : k == InstanceKind::Verification ? 170.0
                                                                      : 30.0) *
                                   static_cast<double>(cap) / 1000.0;
            CHECK(std::abs(static_cast<double>(n) - natural) < 1.0);
            total += n;
        }
        CHECK(total == cap);
        CHECK(cap_and_shuffle(mix, 1, cap).size() == cap);
    }
    CHECK(cap_and_shuffle(mix, 1, 5000).size() == 1000);

    // Weighted mix: multiround saturates, the remainder follows the weights.
    const KindWeights w{{InstanceKind::Decision, 1}, {InstanceKind::Execution, 1}, {InstanceKind::Multiround, 2}};
    const auto q = stratified_quotas(mix, 200, w);
    CHECK(q.at(InstanceKind::Multiround) == 30);
    CHECK(q.at(InstanceKind::Decision) == 85);
    CHECK(q.at(InstanceKind::Execution) == 85);
    CHECK(q.at(InstanceKind::Verification) == 0);
}

TEST_CASE("emit_training_jsonl caps, shuffles deterministically and round-trips")
{
    Fixture f;
    const auto& order = test::default_order();
    const auto table = test::planted_table(10, order, pattern);
    const auto policy = optimal_policy(table, order);
    const auto data = build_decision_data(table, policy, f.ctx());
    test::TempDir dir;
    CHECK(emit_training_jsonl(dir / "a.jsonl", data, 3, 5) == 5);
    CHECK(emit_training_jsonl(dir / "b.jsonl", data, 3, 5) == 5);
    CHECK(test::read_file(dir / "a.jsonl") == test::read_file(dir / "b.jsonl"));
    const auto back = load_training_jsonl(dir / "a.jsonl");
    REQUIRE(back.size() == 5);
    for (const auto& t : back) {
        CHECK(t.kind == InstanceKind::Decision);
        CHECK(t.messages.back().content == policy.at(t.question_id));
    }
    const auto line = nlohmann::json::parse(test::read_file(dir / "a.jsonl").substr(0, test::read_file(dir / "a.jsonl").find('\n')));
    std::vector<std::string> keys;
    for (const auto& [k, v] : line.items()) {
        keys.push_back(k);
    }
    std::sort(keys.begin(), keys.end());
    CHECK(keys == std::vector<std::string>{"kind", "messages", "question_id", "train_mask"});
    CHECK_THROWS_AS(emit_training_jsonl(dir / "c.jsonl", {}, 0, 5), DataError);
}

TEST_CASE("mix_combined equal shares")
{
    const auto make = [](std::size_t n, const std::string& tag) {
        std::vector<TrainingInstance> v;
        for (std::size_t i = 0; i < n; ++i) {
            TrainingInstance t;
            t.question_id = tag + std::to_string(i);
            t.messages = {{Role::User, "u"}, {Role::Assistant, "a"}};
            t.train_mask = {false, true};
            v.push_back(t);
        }
        return v;
    };
    const auto count = [](const std::vector<TrainingInstance>& v, char c) {
        return std::count_if(v.begin(), v.end(), [c](const TrainingInstance& t) { return t.question_id[0] == c; });
    };
    auto mixed = mix_combined({{"a", make(7000, "a")}, {"b", make(7000, "b")}, {"c", make(7000, "c")}}, 20000);
    CHECK(mixed.size() == 20000);
    CHECK(count(mixed, 'a') == 6667);
    CHECK(count(mixed, 'b') == 6667);
    CHECK(count(mixed, 'c') == 6666);

    mixed = mix_combined({{"a", make(3, "a")}, {"b", make(3, "b")}}, 4);
    CHECK(count(mixed, 'a') == 2);
    CHECK(count(mixed, 'b') == 2);

    try {
        mix_combined({{"big", make(5, "a")}, {"tiny", make(1, "b")}}, 4);
        FAIL("expected an error");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("tiny") != std::string::npos);
    }
    CHECK_THROWS_AS(mix_combined({{"only", make(5, "a")}}, 2), ConfigError);
}

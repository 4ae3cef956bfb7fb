#include <doctest.h>

#include "dyplan/analysis.hpp"
#include "dyplan/error.hpp"
#include "support.hpp"

#include <cmath>
#include <random>

using namespace dyplan;

namespace {

// Table from per-question answers (one per strategy); EM/F1 scored against "gold".
CorrectnessTable answer_table(const std::vector<std::vector<std::string>>& answers,
                              const std::vector<std::string>& order)
{
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < answers.size(); ++i) {
        ids.push_back(test::qid(i));
    }
    CorrectnessTable table(ids, order);
    for (std::size_t i = 0; i < answers.size(); ++i) {
        const GoldAnswerSet gold(ids[i], {"gold"});
        for (std::size_t s = 0; s < order.size(); ++s) {
            StrategyOutcome o;
            o.question_id = ids[i];
            o.strategy = order[s];
            o.answer = answers[i][s];
            o.em = exact_match(o.answer, gold);
            o.f1 = f1_score(o.answer, gold);
            o.gen_tokens = s + 1;
            o.retrievals = order[s] == "retrieval" ? 1 : 0;
            table.add(std::move(o));
        }
    }
    return table;
}

RoundRecord round_of(const std::string& s, const std::string& answer, std::optional<Verdict> v)
{
    RoundRecord r;
    r.decision = s;
    r.execution.strategy = s;
    r.execution.answer = answer;
    r.verdict = v;
    return r;
}

}  // namespace

TEST_CASE("usage distribution")
{
    const auto& order = test::default_order();
    const auto d = usage_distribution({"direct", "direct", "reason", "retrieval"}, order);
    CHECK(d.at("direct") == doctest::Approx(0.5));
    CHECK(d.at("plan") == 0.0);
    CHECK(d.at("reason") == doctest::Approx(0.25));
    CHECK(d.at("retrieval") == doctest::Approx(0.25));
    CHECK_THROWS_AS(usage_distribution({}, order), DataError);
    CHECK_THROWS_AS(usage_distribution({"guess"}, order), DataError);
    CHECK(d.to_json().dump() == R"({"direct":0.5,"plan":0.0,"reason":0.25,"retrieval":0.25})");
}

TEST_CASE("KL divergence properties")
{
    const std::vector<std::string> two{"a", "b"};
    const StrategyDistribution p{two, {1.0, 0.0}};
    const StrategyDistribution u{two, {0.5, 0.5}};
    CHECK(kl_divergence(p, p) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(kl_divergence(u, u) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(std::abs(kl_divergence(p, u) - std::log(2.0)) < 1e-4);
    CHECK(std::isfinite(kl_divergence(u, p)));
    // 0.5 ln(0.5 / 1e-9) + 0.5 ln(0.5)
    CHECK(kl_divergence(u, p) == doctest::Approx(0.5 * std::log(0.5 / 1e-9) + 0.5 * std::log(0.5)).epsilon(1e-6));

    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const auto& order = test::default_order();
    for (int trial = 0; trial < 1000; ++trial) {
        StrategyDistribution a{order, {}};
        StrategyDistribution b{order, {}};
        double sa = 0, sb = 0;
        for (std::size_t i = 0; i < order.size(); ++i) {
            a.probability.push_back(trial % 3 == 0 && i == 0 ? 0.0 : unit(rng));
            b.probability.push_back(unit(rng));
            sa += a.probability.back();
            sb += b.probability.back();
        }
        for (std::size_t i = 0; i < order.size(); ++i) {
            a.probability[i] /= sa;
            b.probability[i] /= sb;
        }
        CHECK(kl_divergence(a, b) >= 0.0);
        CHECK(kl_divergence(a, a) < 1e-12);
    }
    const StrategyDistribution other{{"x", "y"}, {0.5, 0.5}};
    CHECK_THROWS_AS(kl_divergence(u, other), DataError);
}

TEST_CASE("decision accuracy")
{
    const auto& order = test::default_order();
    const auto table = test::planted_table(200, order, [](std::size_t i, std::size_t s) { return (i + s) % 3 == 0; });
    const auto policy = optimal_policy(table, order);
    const auto h = policy.histogram();
    for (const auto& s : order) {
        std::map<std::string, std::string> constant;
        for (const auto& q : table.question_ids()) {
            constant[q] = s;
        }
        const double expected = h.contains(s) ? static_cast<double>(h.at(s)) / 200.0 : 0.0;
        CHECK(decision_accuracy(constant, policy) == doctest::Approx(expected));
    }

    // Uniform random choices against a random policy converge to 1/|S|.
    std::mt19937_64 rng(5);
    const auto big = test::planted_table(10000, order, [&rng](std::size_t, std::size_t) { return rng() % 2 == 0; });
    const auto big_policy = optimal_policy(big, order);
    std::map<std::string, std::string> random;
    for (const auto& q : big.question_ids()) {
        random[q] = order[rng() % order.size()];
    }
    CHECK(std::abs(decision_accuracy(random, big_policy) - 0.25) < 0.02);

    CHECK_THROWS_AS(decision_accuracy({}, policy), DataError);
}

TEST_CASE("verification stats")
{
    const auto& order = test::default_order();
    const auto table = test::planted_table(10, order, [](std::size_t, std::size_t s) { return s == 2; });
    const auto policy = optimal_policy(table, order);
    std::map<std::string, GoldAnswerSet> golds;
    std::vector<PipelineTrace> traces;
    for (std::size_t i = 0; i < 10; ++i) {
        const auto q = test::qid(i);
        golds.emplace(q, GoldAnswerSet(q, {test::gold_of(q)}));
        PipelineTrace t;
        t.question_id = q;
        t.mode = PipelineMode::Verify;
        if (i < 2) {
            t.rounds.push_back(round_of("direct", "unknown", Verdict::No));
            t.rounds.push_back(round_of("reason", test::gold_of(q), Verdict::Yes));
        } else {
            t.rounds.push_back(round_of("reason", test::gold_of(q), Verdict::Yes));
        }
        traces.push_back(t);
    }
    auto stats = verification_stats(traces, golds, policy, order);
    CHECK(stats.reject_pct == doctest::Approx(0.2));
    CHECK(stats.rejections == 2);
    REQUIRE(stats.precision_no.has_value());
    CHECK(*stats.precision_no == doctest::Approx(1.0));
    CHECK(stats.kl_post < stats.kl_pre);
    CHECK(stats.kl_post == doctest::Approx(0.0).epsilon(1e-9));

    // A verifier that never says no leaves the distribution unchanged.
    for (auto& t : traces) {
        t.rounds = {round_of("direct", "x", Verdict::Yes)};
    }
    stats = verification_stats(traces, golds, policy, order);
    CHECK(stats.kl_post == stats.kl_pre);
    CHECK(stats.reject_pct == 0.0);
    CHECK_FALSE(stats.precision_no.has_value());

    traces[0].mode = PipelineMode::Base;
    CHECK_THROWS_AS(verification_stats(traces, golds, policy, order), DataError);
}

TEST_CASE("upper bound equals union coverage")
{
    const auto& order = test::default_order();
    // 63 of 100 questions have at least one correct strategy.
    const auto table = test::planted_table(100, order, [](std::size_t i, std::size_t s) {
        return i < 63 && (i % 4) == s;
    });
    const auto policy = optimal_policy(table, order);
    const auto report = upper_bound(table, policy);
    CHECK(report.em == doctest::Approx(0.63));
    CHECK(report.n == 100);
    for (const auto& s : order) {
        double em = 0;
        for (const auto& q : table.question_ids()) {
            em += table.at(q, s).em;
        }
        CHECK(report.em >= em / 100.0);
    }
    // Costs are those of f*(d): 37 uncovered questions fall through to retrieval.
    double tokens = 0;
    double retrievals = 0;
    for (const auto& q : table.question_ids()) {
        tokens += table.at(q, policy.at(q)).gen_tokens;
        retrievals += table.at(q, policy.at(q)).retrievals;
    }
    CHECK(report.tokens_mean == doctest::Approx(tokens / 100));
    CHECK(report.retrievals_mean == doctest::Approx(retrievals / 100));
}

TEST_CASE("majority ensemble")
{
    const auto& order = test::default_order();
    auto table = answer_table({{"gold", "gold", "b", "c"}}, order);
    auto r = majority_ensemble(table, order);
    CHECK(r.answers.at("q000") == "gold");
    CHECK(r.winner.at("q000") == "plan");
    CHECK(r.report.em == 1.0);
    CHECK(r.report.tokens_mean == doctest::Approx(1 + 2 + 3 + 4));
    CHECK(r.report.retrievals_mean == doctest::Approx(1.0));

    // Normalization merges surface variants.
    table = answer_table({{"The Gold.", "gold", "x", "y"}}, order);
    CHECK(majority_ensemble(table, order).report.em == 1.0);

    // All distinct: the tie goes to the latest strategy.
    table = answer_table({{"a", "b", "c", "gold"}}, order);
    r = majority_ensemble(table, order);
    CHECK(r.winner.at("q000") == "retrieval");
    CHECK(r.answers.at("q000") == "gold");

    // 2-2 tie: the group holding the latest strategy wins.
    table = answer_table({{"gold", "x", "x", "gold"}, {"gold", "x", "gold", "x"}}, order);
    r = majority_ensemble(table, order);
    CHECK(r.answers.at("q000") == "gold");
    CHECK(r.answers.at("q001") == "x");

    // Two strategies: disagreement always resolves to the second.
    const std::vector<std::string> two{"direct", "retrieval"};
    table = answer_table({{"gold", "x"}, {"x", "gold"}, {"gold", "gold"}}, two);
    r = majority_ensemble(table, two);
    CHECK(r.answers.at("q000") == "x");
    CHECK(r.answers.at("q001") == "gold");
    CHECK(r.answers.at("q002") == "gold");

    CHECK_THROWS_AS(majority_ensemble(table, {"direct"}), ConfigError);
}

TEST_CASE("ensemble never beats the best single strategy on union coverage")
{
    const auto& order = test::default_order();
    const std::vector<std::string> pool{"gold", "a", "b"};
    // Every answer assignment over 3 and 4 strategies from a 3-answer pool.
    for (const std::size_t n : {std::size_t{3}, std::size_t{4}}) {
        const std::vector<std::string> sub(order.begin(), order.begin() + static_cast<long>(n));
        std::size_t combos = 1;
        for (std::size_t i = 0; i < n; ++i) {
            combos *= pool.size();
        }
        std::vector<std::vector<std::string>> rows;
        for (std::size_t c = 0; c < combos; ++c) {
            std::vector<std::string> row;
            for (std::size_t i = 0, x = c; i < n; ++i, x /= pool.size()) {
                row.push_back(pool[x % pool.size()]);
            }
            rows.push_back(row);
        }
        const auto table = answer_table(rows, sub);
        const auto r = majority_ensemble(table, sub);
        const auto ub = upper_bound(table, optimal_policy(table, sub));
        CHECK(r.report.em <= ub.em);
        for (std::size_t c = 0; c < rows.size(); ++c) {
            // Reference plurality: count, then prefer the latest member on ties.
            std::map<std::string, std::size_t> votes;
            std::map<std::string, std::size_t> latest;
            for (std::size_t i = 0; i < n; ++i) {
                ++votes[rows[c][i]];
                latest[rows[c][i]] = i;
            }
            std::string best;
            for (const auto& [a, v] : votes) {
                if (best.empty() || v > votes[best] || (v == votes[best] && latest[a] > latest[best])) {
                    best = a;
                }
            }
            CHECK(r.answers.at(test::qid(c)) == best);
        }
    }
}

TEST_CASE("hierarchy violation masks")
{
    std::size_t violations = 0;
    for (std::uint32_t m = 0; m < 16; ++m) {
        violations += is_hierarchy_violation(m, 4) ? 1 : 0;
    }
    CHECK(violations == 11);
    CHECK_FALSE(is_hierarchy_violation(0b0000, 4));
    CHECK_FALSE(is_hierarchy_violation(0b1000, 4));
    CHECK_FALSE(is_hierarchy_violation(0b1100, 4));
    CHECK_FALSE(is_hierarchy_violation(0b1110, 4));
    CHECK_FALSE(is_hierarchy_violation(0b1111, 4));
    CHECK(is_hierarchy_violation(0b0001, 4));
    CHECK(is_hierarchy_violation(0b0111, 4));
    CHECK(is_hierarchy_violation(0b1010, 4));
    for (std::size_t n = 1; n <= 6; ++n) {
        std::size_t v = 0;
        for (std::uint32_t m = 0; m < (1u << n); ++m) {
            v += is_hierarchy_violation(m, n) ? 1 : 0;
        }
        CHECK(v == (std::size_t{1} << n) - 1 - n);
    }
}

TEST_CASE("hierarchy violation mass")
{
    const auto& order = test::default_order();
    // Upward-closed correctness: no violating mass.
    auto table = test::planted_table(20, order, [](std::size_t i, std::size_t s) { return s >= i % 5; });
    auto c = hierarchy_violations(table, order);
    CHECK(c.violation_mass() == 0.0);
    CHECK(c.total_mass() == doctest::Approx(16.0 / 20.0));

    // Hand-computed: 5 x {direct}, 3 x {plan, reason}, 2 x {retrieval}, 4 x all, 6 x none.
    const auto pick = [](std::size_t i, std::size_t s) {
        if (i < 5) return s == 0;
        if (i < 8) return s == 1 || s == 2;
        if (i < 10) return s == 3;
        if (i < 14) return true;
        return false;
    };
    table = test::planted_table(20, order, pick);
    c = hierarchy_violations(table, order);
    CHECK(c.count[0b0001] == 5);
    CHECK(c.count[0b0110] == 3);
    CHECK(c.count[0b1000] == 2);
    CHECK(c.count[0b1111] == 4);
    CHECK(c.count[0] == 6);
    CHECK(c.mass[0b0001] == doctest::Approx(0.25));
    CHECK(c.mass[0b0110] == doctest::Approx(0.15));
    CHECK(c.violation_mass() == doctest::Approx(0.40));
    CHECK(c.total_mass() == doctest::Approx(0.70));
    CHECK(c.mass[0] == 0.0);

    const auto csv = c.csv();
    CHECK(csv.rfind("mask,strategies,count,mass,violation\n", 0) == 0);
    CHECK(csv.find("\n1,direct,5,0.25") != std::string::npos);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 17);
    const auto j = c.to_json();
    CHECK(j.contains("none_correct_residual"));
}

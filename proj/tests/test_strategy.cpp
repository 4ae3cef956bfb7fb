#include <doctest.h>

#include "dyplan/error.hpp"
#include "dyplan/strategy.hpp"
#include "dyplan/templates.hpp"
#include "support.hpp"

using namespace dyplan;

namespace {

const StrategySpec& spec(const std::vector<StrategySpec>& specs, const char* name)
{
    return find_strategy(specs, name);
}

std::vector<Exemplar> shots(std::size_t n)
{
    std::vector<Exemplar> out;
    for (std::size_t i = 0; i < n; ++i) {
        out.push_back({"shot question " + std::to_string(i), {}, "Final answer: \"a" + std::to_string(i) + "\""});
    }
    return out;
}

}  // namespace

TEST_CASE("default strategy registry")
{
    const auto specs = default_strategies();
    REQUIRE(specs.size() == 4);
    CHECK(spec(specs, "direct").max_gen_tokens == 100);
    CHECK(spec(specs, "direct").n_shot == 8);
    CHECK(spec(specs, "plan").max_gen_tokens == 200);
    CHECK(spec(specs, "plan").n_shot == 4);
    CHECK(spec(specs, "reason").n_shot == 8);
    CHECK(spec(specs, "retrieval").needs_retrieval);
    CHECK(spec(specs, "retrieval").preference_rank == 4);
    CHECK_NOTHROW(validate_strategies(specs));

    const auto picked = select_strategies(specs, {"reason", "direct"});
    REQUIRE(picked.size() == 2);
    CHECK(picked[0].name == "reason");
    CHECK(picked[0].preference_rank == 1);
    CHECK(picked[1].preference_rank == 2);
    CHECK_THROWS_AS(select_strategies(specs, {"direct", "direct"}), ConfigError);
    CHECK_THROWS_AS(select_strategies(specs, {"guess"}), ConfigError);

    auto broken = specs;
    broken[0].preference_rank = 4;
    CHECK_THROWS_AS(validate_strategies(broken), ConfigError);
    CHECK(with_zero_shots(specs)[0].n_shot == 0);
}

TEST_CASE("answer extraction parsing")
{
    CHECK(parse_final_answer("Final answer: \"Paris\"") == "Paris");
    CHECK(parse_final_answer("Step 1 ...\nStep 2 ...\nFinal answer: \"Henry Scheffé\"") == "Henry Scheffé");
    CHECK(parse_final_answer("final ANSWER: Rome.\nmore") == "Rome");
    CHECK(parse_final_answer("Final answer: “Tokyo”") == "Tokyo");
    CHECK(parse_final_answer("Final answer: 'x'") == "x");
    CHECK(parse_final_answer("Final answer: a\nFinal answer: b") == "a");
    CHECK_FALSE(parse_final_answer("no marker here").has_value());
    CHECK_FALSE(parse_final_answer("Final answer:   ").has_value());

    CHECK(clean_answer("\"Paris.\"") == "Paris.");
    CHECK(clean_answer("\"Paris\".") == "Paris");
    CHECK(clean_answer("\"mismatched'") == "\"mismatched'");
    CHECK(clean_answer("  spaced  ") == "spaced");
}

TEST_CASE("forced decoding issues exactly one continuation")
{
    const std::vector<ChatMessage> messages{{Role::User, "Question: q?"}};
    const RequestTag tag{"q1", Component::Fixed, 0, "reason", false, {}};

    ScriptedBackend b({{"q1/fixed/reason/force", {" \"Rome\"", 2}}});
    auto e = extract_final_answer({"I think it is Rome", 5, FinishReason::Stop, true}, b, messages, tag);
    CHECK(e.answer == "Rome");
    CHECK(e.forced);
    CHECK(e.extra_tokens == 2);
    CHECK(b.call_count() == 1);

    e = extract_final_answer({"Final answer: \"Paris\"", 5, FinishReason::Stop, true}, b, messages, tag);
    CHECK(e.answer == "Paris");
    CHECK_FALSE(e.forced);
    CHECK(e.extra_tokens == 0);
    CHECK(b.call_count() == 1);

    ScriptedBackend empty({{"q1/fixed/reason/force", {"", 0}}});
    e = extract_final_answer({"rambling", 5, FinishReason::Length, true}, empty, messages, tag);
    CHECK(e.answer == "");
    CHECK(e.forced);
    CHECK(empty.call_count() == 1);
}

TEST_CASE("forced continuation request shape")
{
    struct Recorder final : Backend {
        GenerationRequest last;
        std::string kind() const override { return "scripted"; }
        Generation do_generate(const GenerationRequest& r) override
        {
            last = r;
            return {" \"x\"\nignored", 3, FinishReason::Stop, true};
        }
    } rec;
    const std::vector<ChatMessage> messages{{Role::System, "s"}, {Role::User, "u"}};
    const auto e = extract_final_answer({"  thinking...  ", 4, FinishReason::Stop, true}, rec, messages,
                                        {"q", Component::Fixed, 0, "direct", false, {}});
    CHECK(e.answer == "x");
    REQUIRE(rec.last.messages.size() == 3);
    CHECK(rec.last.messages[2].role == Role::Assistant);
    CHECK(rec.last.messages[2].content == "thinking...\nFinal answer:");
    CHECK(rec.last.max_tokens == kForcedDecodeBudget);
    CHECK(rec.last.stop == std::vector<std::string>{"\n"});
    CHECK(rec.last.tag.forced);
}

TEST_CASE("fixed prompt rendering")
{
    const auto specs = default_strategies();
    const auto templates = TemplateSet::builtin();
    auto direct = spec(specs, "direct");
    direct.n_shot = 0;
    auto msgs = render_fixed_prompt("Who?", direct, {}, std::nullopt, templates);
    REQUIRE(msgs.size() == 2);
    CHECK(msgs[0].role == Role::System);
    CHECK(msgs[1].content == "Question: Who?");

    msgs = render_fixed_prompt("Who?", spec(specs, "direct"), shots(8), std::nullopt, templates);
    CHECK(msgs.size() == 2 + 16);
    CHECK(msgs[1].content == "Question: shot question 0");
    CHECK(msgs[2].role == Role::Assistant);
    CHECK(msgs == render_fixed_prompt("Who?", spec(specs, "direct"), shots(8), std::nullopt, templates));

    CHECK_THROWS_AS(render_fixed_prompt("Who?", spec(specs, "direct"), shots(3), std::nullopt, templates), ConfigError);

    auto retrieval = spec(specs, "retrieval");
    retrieval.n_shot = 0;
    const std::vector<Passage> passages{{0, "A", "first text", 2}, {1, "B", "second text", 2}, {2, "", "third", 1}};
    msgs = render_fixed_prompt("Why?", retrieval, {}, passages, templates);
    const auto& user = msgs.back().content;
    const auto p1 = user.find("[1] A: first text");
    const auto p2 = user.find("[2] B: second text");
    const auto p3 = user.find("[3] third");
    CHECK(p1 != std::string::npos);
    CHECK(p2 > p1);
    CHECK(p3 > p2);
    CHECK_THROWS_AS(render_fixed_prompt("Why?", retrieval, {}, std::nullopt, templates), ConfigError);
    CHECK_THROWS_AS(render_fixed_prompt("Who?", direct, {}, passages, templates), ConfigError);
}

TEST_CASE("template placeholders and directory overrides")
{
    CHECK(render_template("{a} and {b} but {c}", {{"a", "1"}, {"b", "{a}"}}) == "1 and {a} but {c}");

    test::TempDir dir;
    test::write_file(dir / "direct.fixed.txt", "[system]\nBe brief.\n[user]\nQ: {question}\n");
    const auto t = TemplateSet::load(dir.path());
    CHECK(t.fixed("direct").system == "Be brief.");
    CHECK(t.fixed("plan").system == TemplateSet::builtin().fixed("plan").system);

    test::write_file(dir / "reason.fixed.txt", "no sections");
    CHECK_THROWS_AS(TemplateSet::load(dir.path()), ConfigError);
}

TEST_CASE("shipped template directory matches the built-in set")
{
    const auto dir = std::filesystem::path(DYPLAN_CONFIG_DIR) / "templates";
    std::size_t files = 0;
    for (const auto& [name, content] : TemplateSet::builtin_files()) {
        INFO(name);
        CHECK(test::read_file(dir / name) == content);
        ++files;
    }
    std::size_t on_disk = 0;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        on_disk += e.is_regular_file() ? 1 : 0;
    }
    CHECK(on_disk == files);
}

TEST_CASE("shipped shot bank loads with the default shot counts")
{
    const auto specs = default_strategies();
    const auto bank = load_shot_bank(std::filesystem::path(DYPLAN_CONFIG_DIR) / "shots", specs);
    for (const auto& s : specs) {
        CHECK(bank.at(s.name).size() == s.n_shot);
    }
    for (const auto& e : bank.at("retrieval")) {
        CHECK_FALSE(e.passages.empty());
    }
    for (const auto& e : bank.at("direct")) {
        CHECK(parse_final_answer(e.output).has_value());
    }
}

TEST_CASE("run_fixed with the oracle backend")
{
    OracleBackend backend({{"q1", {"Paris"}, {{"direct", true}, {"reason", false}, {"retrieval", true}}}});
    const auto templates = TemplateSet::builtin();
    const auto index = test::toy_index();
    const auto specs = with_zero_shots(default_strategies());
    const FixedRunContext ctx{backend, templates, nullptr, &index, 3};
    const DatasetRecord rec{"q1", "What is the capital of France?", {"Paris"}};

    auto o = run_fixed(rec, spec(specs, "direct"), ctx);
    CHECK(o.em == 1);
    CHECK(o.retrievals == 0);
    CHECK(o.gen_tokens == 8);
    CHECK_FALSE(o.error.has_value());

    o = run_fixed(rec, spec(specs, "reason"), ctx);
    CHECK(o.em == 0);
    CHECK(o.f1 < 1.0);

    o = run_fixed(rec, spec(specs, "retrieval"), ctx);
    CHECK(o.em == 1);
    CHECK(o.retrievals == 1);
    CHECK(o.passages.size() == 3);
}

TEST_CASE("run_fixed records backend failures and forced decoding")
{
    const auto templates = TemplateSet::builtin();
    const auto specs = with_zero_shots(default_strategies());
    const DatasetRecord rec{"q1", "Q?", {"Rome"}};

    ScriptedBackend b({{"*/fixed/reason", {"It is Rome I believe", 5}}, {"*/fixed/reason/force", {" \"Rome\"", 2}}});
    const FixedRunContext ctx{b, templates, nullptr, nullptr, 3};
    auto o = run_fixed(rec, spec(specs, "reason"), ctx);
    CHECK(o.em == 1);
    CHECK(o.forced_decode_used);
    CHECK(o.gen_tokens == 7);

    o = run_fixed(rec, spec(specs, "plan"), ctx);  // script miss
    CHECK(o.error.has_value());
    CHECK(o.em == 0);

    // Retrieval without an index is a configuration error, not a per-question failure.
    CHECK_THROWS_AS(run_fixed(rec, spec(specs, "retrieval"), ctx), ConfigError);
}

TEST_CASE("run_fixed_dataset builds a complete table and reuses the cache")
{
    test::TempDir dir;
    std::vector<OracleRow> rows;
    const auto data = test::planted_dataset(2);
    for (const auto& r : data) {
        rows.push_back({r.id, r.answers, {{"direct", r.id == "q000"}, {"plan", true}}});
    }
    auto cached = std::make_shared<CachedBackend>(std::make_shared<OracleBackend>(rows), dir / "cache.jsonl");
    const auto templates = TemplateSet::builtin();
    const auto specs = with_zero_shots(select_strategies(default_strategies(), {"direct", "plan"}));
    const FixedRunContext ctx{*cached, templates, nullptr, nullptr, 3};
    const auto table = run_fixed_dataset(data, specs, ctx, 2);
    CHECK(table.size() == 4);
    CHECK(table.correct("q000", "direct"));
    CHECK_FALSE(table.correct("q001", "direct"));
    const auto inner_calls = cached->inner().call_count();

    const auto again = run_fixed_dataset(data, specs, ctx, 2);
    CHECK(cached->inner().call_count() == inner_calls);
    for (const auto& q : table.question_ids()) {
        for (const auto& s : table.order()) {
            CHECK(to_json(table.at(q, s)) == to_json(again.at(q, s)));
        }
    }
}

TEST_CASE("oracle-backed 100x4 run reproduces planted marginals")
{
    const auto data = test::planted_dataset(100);
    std::vector<OracleRow> rows;
    std::map<std::string, int> planted;
    for (std::size_t i = 0; i < data.size(); ++i) {
        OracleRow r{data[i].id, data[i].answers, {}};
        r.correct["direct"] = i % 4 == 0;
        r.correct["plan"] = i % 5 == 0;
        r.correct["reason"] = i % 3 == 0;
        r.correct["retrieval"] = i % 2 == 0;
        for (const auto& [s, c] : r.correct) {
            planted[s] += c ? 1 : 0;
        }
        rows.push_back(std::move(r));
    }
    OracleBackend backend(rows);
    const auto templates = TemplateSet::builtin();
    const auto index = test::toy_index();
    const auto specs = with_zero_shots(default_strategies());
    const auto table = run_fixed_dataset(data, specs, {backend, templates, nullptr, &index, 3}, 4);
    for (const auto& s : table.order()) {
        CHECK(table.positives(s).size() == static_cast<std::size_t>(planted[s]));
        CHECK(table.positives(s).size() + table.negatives(s).size() == 100);
    }
}

TEST_CASE("correctness table invariants and persistence")
{
    auto table = test::planted_table(5, test::default_order(), [](std::size_t i, std::size_t s) { return i % 4 == s; });
    CHECK_NOTHROW(table.validate_complete());
    for (const auto& s : table.order()) {
        const auto p = table.positives(s);
        const auto n = table.negatives(s);
        CHECK(p.size() + n.size() == 5);
        for (const auto& q : p) {
            CHECK(std::find(n.begin(), n.end(), q) == n.end());
        }
    }
    CHECK_THROWS_AS(table.add(table.at("q000", "direct")), DataError);

    test::TempDir dir;
    table.save_jsonl(dir / "outcomes.jsonl");
    const auto back = CorrectnessTable::load_jsonl(dir / "outcomes.jsonl");
    CHECK(back.question_ids() == table.question_ids());
    CHECK(back.order() == table.order());
    CHECK(to_json(back.at("q003", "retrieval")) == to_json(table.at("q003", "retrieval")));

    CorrectnessTable partial({"a", "b"}, {"direct"});
    StrategyOutcome o;
    o.question_id = "a";
    o.strategy = "direct";
    partial.add(o);
    CHECK_THROWS_AS(partial.validate_complete(), DataError);

    auto f1_table = table;
    f1_table.set_criterion({true, 0.5});
    CHECK(f1_table.correct("q000", "direct"));
}

#include "dyplan/backend.hpp"
#include "dyplan/metrics.hpp"
#include "dyplan/pipeline.hpp"
#include "dyplan/retrieval.hpp"
#include "dyplan/templates.hpp"

#include <benchmark/benchmark.h>

#include <random>
#include <string>
#include <vector>

namespace {

using namespace dyplan;

// Zipf-ish synthetic corpus: `docs` documents of `words` tokens each.
std::vector<Document> synthetic_corpus(std::size_t docs, std::size_t words)
{
    std::mt19937_64 rng(1);
    std::vector<Document> out;
    for (std::size_t d = 0; d < docs; ++d) {
        std::string text;
        for (std::size_t w = 0; w < words; ++w) {
            const auto r = static_cast<double>(rng() % 100000) / 100000.0;
            text += "w" + std::to_string(static_cast<int>(5000.0 * r * r * r)) + " ";
        }
        out.push_back({"doc" + std::to_string(d), text});
    }
    return out;
}

void BM_Bm25Search(benchmark::State& state)
{
    const auto index = Bm25Index::build(chunk_corpus(synthetic_corpus(static_cast<std::size_t>(state.range(0)), 200)));
    const std::vector<std::string> queries{"w1 w17 w250", "w3 w4000", "w0 w2 w9 w88 w1200"};
    std::size_t i = 0;
    for (auto _ : state) {
        benchmark::DoNotOptimize(index.search(queries[i++ % queries.size()], 3));
    }
    state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_Bm25Search)->Arg(1000)->Arg(10000);

void BM_Bm25Build(benchmark::State& state)
{
    const auto passages = chunk_corpus(synthetic_corpus(2000, 200));
    for (auto _ : state) {
        benchmark::DoNotOptimize(Bm25Index::build(passages));
    }
}
BENCHMARK(BM_Bm25Build)->Unit(benchmark::kMillisecond);

void BM_NormalizeAnswer(benchmark::State& state)
{
    const std::string text = "The Eiffel Tower, in Paris (France), was completed in 1889 -- an époque of iron!";
    for (auto _ : state) {
        benchmark::DoNotOptimize(normalize_answer(text));
    }
}
BENCHMARK(BM_NormalizeAnswer);

void BM_F1Score(benchmark::State& state)
{
    const GoldAnswerSet golds("q", {"the Eiffel Tower in Paris", "Eiffel Tower", "La tour Eiffel"});
    for (auto _ : state) {
        benchmark::DoNotOptimize(f1_score("It is the Eiffel Tower, located in Paris.", golds));
    }
}
BENCHMARK(BM_F1Score);

void BM_ScriptedVerifyPipeline(benchmark::State& state)
{
    const auto templates = TemplateSet::builtin();
    const auto index = Bm25Index::build(chunk_corpus(synthetic_corpus(500, 200)));
    const auto strategies = default_strategies();
    std::map<std::string, ScriptEntry> script;
    for (int k = 1; k <= 4; ++k) {
        const auto r = "*/r" + std::to_string(k);
        script[r + "/decision"] = {strategies[static_cast<std::size_t>(k - 1)].name, 1};
        for (const auto& s : strategies) {
            script[r + "/exec/" + s.name] = {"Some reasoning.\nFinal answer: \"w17\"", 40};
            script[r + "/verify/" + s.name] = {k == 4 ? "yes" : "no", 1};
        }
    }
    ScriptedBackend backend(script);
    PipelineContext ctx{backend, templates, &index, {}};
    ctx.options.max_rounds = 4;
    const DatasetRecord record{"q", "Which w17 appears with w250?", {"w17"}};
    for (auto _ : state) {
        benchmark::DoNotOptimize(run_dyplan_verify(record, strategies, ctx));
    }
}
BENCHMARK(BM_ScriptedVerifyPipeline);

}  // namespace

BENCHMARK_MAIN();

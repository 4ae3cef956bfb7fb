#include "dyplan/run.hpp"

#include "dyplan/dataset.hpp"
#include "dyplan/digest.hpp"
#include "dyplan/error.hpp"
#include "dyplan/parallel.hpp"
#include "dyplan/pipeline.hpp"
#include "dyplan/retrieval.hpp"
#include "dyplan/strategy.hpp"
#include "dyplan/templates.hpp"
#include "dyplan/text.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <map>
#include <optional>
#include <set>

#ifndef DYPLAN_VERSION
#define DYPLAN_VERSION "0.0.0"
#endif

namespace dyplan {

namespace fs = std::filesystem;

std::string_view library_version()
{
    return DYPLAN_VERSION;
}

std::string utc_timestamp()
{
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

namespace {

void write_text(const fs::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out || !(out << text)) {
        throw Error("cannot write " + path.string());
    }
}

std::vector<nlohmann::json> read_jsonl(const fs::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open log: " + path.string());
    }
    std::vector<nlohmann::json> rows;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) {
            continue;
        }
        try {
            rows.push_back(nlohmann::json::parse(line));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    if (rows.empty()) {
        throw DataError("log is empty: " + path.string());
    }
    return rows;
}

ScoredItem scored(const StrategyOutcome& o)
{
    return {static_cast<double>(o.em), o.f1, static_cast<double>(o.gen_tokens), static_cast<double>(o.retrievals)};
}

}  // namespace

nlohmann::ordered_json build_report(const fs::path& log, const CostWeights& weights)
{
    weights.validate();
    const auto rows = read_jsonl(log);
    nlohmann::ordered_json report;
    if (rows.front().contains("rounds")) {
        std::vector<ScoredItem> items;
        std::size_t failures = 0;
        std::optional<PipelineMode> mode;
        for (const auto& r : rows) {
            const auto t = trace_from_json(r);
            if (mode && *mode != t.mode) {
                throw DataError("trace log mixes pipeline modes: " + log.string());
            }
            mode = t.mode;
            failures += t.error ? 1 : 0;
            items.push_back({static_cast<double>(t.em), t.f1, static_cast<double>(t.total_gen_tokens),
                             static_cast<double>(t.total_retrievals)});
        }
        report["mode"] = *mode == PipelineMode::Base ? "dyplan-base" : "dyplan-verify";
        report["questions"] = items.size();
        report["failures"] = failures;
        report["overall"] = report_to_json(aggregate_scored(items), weights);
        return report;
    }

    std::vector<std::string> order;
    std::map<std::string, std::vector<ScoredItem>> by_strategy;
    std::set<std::string> questions;
    std::size_t failures = 0;
    for (const auto& r : rows) {
        const auto o = outcome_from_json(r);
        if (!by_strategy.contains(o.strategy)) {
            order.push_back(o.strategy);
        }
        by_strategy[o.strategy].push_back(scored(o));
        questions.insert(o.question_id);
        failures += o.error ? 1 : 0;
    }
    report["mode"] = "fixed";
    report["questions"] = questions.size();
    report["failures"] = failures;
    auto& per = report["strategies"] = nlohmann::ordered_json::object();
    for (const auto& s : order) {
        per[s] = report_to_json(aggregate_scored(by_strategy[s]), weights);
    }
    return report;
}

std::string render_report(const fs::path& log, const CostWeights& weights)
{
    return build_report(log, weights).dump(2) + "\n";
}

RunResult run_command(const RunConfig& config, const RunHooks& hooks)
{
    const auto clock = hooks.clock ? hooks.clock : utc_timestamp;
    const auto started = clock();

    // Everything that can fail on configuration happens before the first call.
    config.validate();
    const auto dataset = load_dataset(config.dataset, config.format);
    if (dataset.empty()) {
        throw DataError("dataset is empty: " + config.dataset.string());
    }
    const auto templates = config.templates.empty() ? TemplateSet::builtin() : TemplateSet::load(config.templates);
    auto specs = select_strategies(default_strategies(), config.strategies);
    if (config.zero_shot) {
        specs = with_zero_shots(std::move(specs));
    }
    std::optional<ShotBank> shots;
    if (config.mode == RunMode::Fixed && !config.zero_shot) {
        shots = load_shot_bank(config.shots, specs);
    }
    std::optional<Bm25Index> index;
    if (!config.index.empty()) {
        index = Bm25Index::load(config.index);
    }
    PipelineOptions options;
    options.max_rounds = config.rounds;
    options.top_k = config.top_k;
    options.decision_fallback = config.decision_fallback;
    if (!config.decision_shots.empty()) {
        options.decision_shots = load_decision_exemplars(config.decision_shots);
    }
    auto backend = hooks.backend ? hooks.backend : make_backend(config.backend);
    fs::create_directories(config.out);

    const Retriever* retriever = index ? &*index : nullptr;
    const auto workers = config.backend.parallelism;
    const auto cancelled = [&] { return hooks.cancel != nullptr && hooks.cancel->load(); };

    RunResult result;
    result.questions = dataset.size();
    result.report = config.out / kReportFile;
    result.manifest = config.out / kManifestFile;
    bool tokens_approximate = false;

    if (config.mode == RunMode::Fixed) {
        FixedRunContext ctx{*backend, templates, shots ? &*shots : nullptr, retriever, config.top_k};
        std::vector<std::optional<std::vector<StrategyOutcome>>> rows(dataset.size());
        parallel_for(dataset.size(), workers, [&](std::size_t i) {
            if (cancelled()) {
                return;
            }
            std::vector<StrategyOutcome> row;
            for (const auto& spec : specs) {
                row.push_back(run_fixed(dataset[i], spec, ctx));
            }
            rows[i] = std::move(row);
        });
        std::vector<std::string> ids;
        for (const auto& r : dataset) {
            ids.push_back(r.id);
        }
        CorrectnessTable table(ids, config.strategies);
        for (auto& row : rows) {
            if (!row) {
                continue;
            }
            ++result.completed;
            for (auto& o : *row) {
                if (o.error) {
                    result.failures.push_back(o.question_id + " [" + o.strategy + "]: " + *o.error);
                }
                tokens_approximate = tokens_approximate || o.tokens_approximate;
                table.add(std::move(o));
            }
        }
        result.log = config.out / kOutcomeLog;
        table.save_jsonl(result.log);
    } else {
        PipelineContext ctx{*backend, templates, retriever, options};
        std::vector<std::optional<PipelineTrace>> traces(dataset.size());
        parallel_for(dataset.size(), workers, [&](std::size_t i) {
            if (cancelled()) {
                return;
            }
            traces[i] = config.mode == RunMode::DyplanBase ? run_dyplan_base(dataset[i], specs, ctx)
                                                            : run_dyplan_verify(dataset[i], specs, ctx);
        });
        std::vector<PipelineTrace> done;
        for (auto& t : traces) {
            if (!t) {
                continue;
            }
            if (t->error) {
                result.failures.push_back(t->question_id + ": " + *t->error);
            }
            for (const auto& r : t->rounds) {
                tokens_approximate = tokens_approximate || r.execution.tokens_approximate;
            }
            done.push_back(std::move(*t));
        }
        result.completed = done.size();
        result.log = config.out / kTraceLog;
        save_traces_jsonl(result.log, done);
    }

    const bool interrupted = result.completed < result.questions;
    if (result.completed > 0) {
        write_text(result.report, render_report(result.log, config.weights));
    }

    const auto config_json = config.to_json();
    nlohmann::ordered_json manifest;
    manifest["version"] = std::string(library_version());
    manifest["config_digest"] = sha256_hex(config_json.dump());
    manifest["config"] = config_json;
    manifest["started_at"] = started;
    manifest["finished_at"] = clock();
    manifest["questions"] = result.questions;
    manifest["completed"] = result.completed;
    manifest["interrupted"] = interrupted;
    manifest["failures"] = result.failures;
    manifest["backend_calls"] = backend->call_count();
    manifest["tokens_approximate"] = tokens_approximate;
    manifest["weights"] = {{"w_token", config.weights.w_token}, {"w_retrieval", config.weights.w_retrieval}};
    manifest["artifacts"] = {{"log", result.log.filename().string()},
                             {"report", result.completed > 0 ? kReportFile : ""}};
    write_text(result.manifest, manifest.dump(2) + "\n");

    result.exit_code = interrupted ? 130 : (result.failures.empty() ? 0 : 1);
    return result;
}

}  // namespace dyplan

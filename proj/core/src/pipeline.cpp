#include "dyplan/pipeline.hpp"

#include "dyplan/error.hpp"
#include "dyplan/parallel.hpp"
#include "dyplan/text.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>

namespace dyplan {

namespace fs = std::filesystem;

std::string_view to_string(PipelineMode mode)
{
    return mode == PipelineMode::Base ? "base" : "verify";
}

PipelineMode pipeline_mode_from_string(std::string_view name)
{
    if (name == "base") return PipelineMode::Base;
    if (name == "verify") return PipelineMode::Verify;
    throw ParseError("unknown pipeline mode '" + std::string(name) + "'");
}

std::vector<DecisionExemplar> load_decision_exemplars(const fs::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open decision exemplars: " + path.string());
    }
    std::vector<DecisionExemplar> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) {
            continue;
        }
        try {
            const auto j = nlohmann::json::parse(line);
            out.push_back({j.at("question").get<std::string>(), j.at("strategy").get<std::string>()});
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

std::string render_strategy_list(const std::vector<StrategySpec>& offered)
{
    auto sorted = offered;
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const StrategySpec& a, const StrategySpec& b) { return a.preference_rank < b.preference_rank; });
    std::string out;
    for (const auto& s : sorted) {
        if (!out.empty()) {
            out += '\n';
        }
        out += "- " + s.name + ": " + s.description;
    }
    return out;
}

std::vector<ChatMessage> render_decision_prompt(std::string_view question, const std::vector<StrategySpec>& offered,
                                                const std::vector<ChatMessage>& history, const TemplateSet& templates,
                                                const std::vector<DecisionExemplar>& shots)
{
    if (offered.empty()) {
        throw ConfigError("decision prompt needs at least one offered strategy");
    }
    std::vector<ChatMessage> messages = history;
    const auto strategies = render_strategy_list(offered);
    if (history.empty()) {
        std::string shot_block;
        if (!shots.empty()) {
            shot_block = "\nExamples:\n";
            for (const auto& shot : shots) {
                shot_block += "Question: " + shot.question + "\nStrategy: " + shot.strategy + "\n";
            }
            shot_block += "\n";
        }
        messages.push_back({Role::System, templates.pipeline_system()});
        messages.push_back({Role::User, render_template(templates.decision(), {{"question", std::string(question)},
                                                                               {"strategies", strategies},
                                                                               {"shots", shot_block}})});
    } else {
        messages.push_back({Role::User, render_template(templates.decision_followup(),
                                                        {{"question", std::string(question)},
                                                         {"strategies", strategies},
                                                         {"shots", ""}})});
    }
    return messages;
}

ChatMessage render_execution_turn(std::string_view question, const StrategySpec& spec,
                                  const std::vector<std::string>& passage_texts, const TemplateSet& templates)
{
    return {Role::User, render_template(templates.execution(spec.template_id),
                                        {{"question", std::string(question)},
                                         {"strategy", spec.name},
                                         {"passages", render_passages(passage_texts)}})};
}

ChatMessage render_verification_turn(const TemplateSet& templates)
{
    return {Role::User, templates.verification()};
}

DecisionParse parse_decision(std::string_view text, const std::vector<std::string>& offered, std::string_view fallback)
{
    if (offered.empty()) {
        throw ConfigError("cannot parse a decision against an empty pool");
    }
    std::size_t best_pos = std::string_view::npos;
    const std::string* best = nullptr;
    for (const auto& name : offered) {
        const auto pos = ifind_ascii(text, name);
        if (pos == std::string_view::npos) {
            continue;
        }
        if (pos < best_pos || (pos == best_pos && name.size() > best->size())) {
            best_pos = pos;
            best = &name;
        }
    }
    if (best != nullptr) {
        return {*best, false};
    }
    if (!fallback.empty() && std::find(offered.begin(), offered.end(), fallback) != offered.end()) {
        return {std::string(fallback), true};
    }
    return {offered.back(), true};
}

VerdictParse parse_verdict(std::string_view text)
{
    const auto trimmed = trim(text);
    const auto end = std::find_if(trimmed.begin(), trimmed.end(), [](unsigned char c) { return std::isspace(c); });
    const auto token = to_lower(strip_punctuation(trimmed.substr(0, static_cast<std::size_t>(end - trimmed.begin()))));
    if (token == "yes") {
        return {Verdict::Yes, false};
    }
    if (token == "no") {
        return {Verdict::No, false};
    }
    return {Verdict::Yes, true};
}

namespace {

std::vector<std::string> names_of(const std::vector<StrategySpec>& specs)
{
    std::vector<std::string> names;
    for (const auto& s : specs) {
        names.push_back(s.name);
    }
    return names;
}

class PipelineRunner {
public:
    PipelineRunner(const DatasetRecord& record, const std::vector<StrategySpec>& strategies,
                   const PipelineContext& ctx, PipelineMode mode)
        : record_(record), ctx_(ctx), golds_(record.golds())
    {
        validate_strategies(strategies);
        pool_ = strategies;
        std::stable_sort(pool_.begin(), pool_.end(), [](const StrategySpec& a, const StrategySpec& b) {
            return a.preference_rank < b.preference_rank;
        });
        for (const auto& s : pool_) {
            if (s.needs_retrieval && ctx.retriever == nullptr) {
                throw ConfigError("strategy '" + s.name + "' needs a retrieval index");
            }
        }
        if (mode == PipelineMode::Verify && ctx.options.max_rounds < 1) {
            throw ConfigError("max_rounds must be at least 1");
        }
        trace_.question_id = record.id;
        trace_.mode = mode;
    }

    PipelineTrace run()
    {
        const int max_rounds = trace_.mode == PipelineMode::Base ? 1 : ctx_.options.max_rounds;
        try {
            for (int round = 1; round <= max_rounds && !pool_.empty(); ++round) {
                auto& r = run_round(round);
                trace_.final_answer = r.execution.answer;
                if (trace_.mode == PipelineMode::Base || r.verdict == Verdict::Yes) {
                    break;
                }
                std::erase_if(pool_, [&](const StrategySpec& s) { return s.name == r.decision; });
            }
        } catch (const ConfigError&) {
            throw;
        } catch (const Error& e) {
            trace_.error = e.what();
            trace_.final_answer.clear();
        }
        for (const auto& r : trace_.rounds) {
            trace_.total_gen_tokens += r.total_tokens();
            trace_.total_retrievals += r.execution.retrievals;
        }
        trace_.em = trace_.error ? 0 : exact_match(trace_.final_answer, golds_);
        trace_.f1 = trace_.error ? 0.0 : f1_score(trace_.final_answer, golds_);
        return std::move(trace_);
    }

private:
    Generation generate(std::vector<ChatMessage> messages, std::size_t budget, std::vector<std::string> stop,
                        RequestTag tag)
    {
        return ctx_.backend.generate({std::move(messages), budget, std::move(stop), std::move(tag)});
    }

    RoundRecord& run_round(int round)
    {
        auto& transcript = trace_.messages;
        trace_.rounds.emplace_back();
        auto& r = trace_.rounds.back();
        r.round_index = round;
        r.offered = names_of(pool_);

        // Decision
        transcript = render_decision_prompt(record_.question, pool_, transcript, ctx_.templates,
                                            round == 1 ? ctx_.options.decision_shots
                                                       : std::vector<DecisionExemplar>{});
        const auto decision = generate(transcript, ctx_.options.decision_budget, {"\n"},
                                       {record_.id, Component::Decision, round, {}, false, r.offered});
        r.decision_raw = decision.text;
        r.decision_tokens = decision.gen_tokens;
        const auto parsed = parse_decision(decision.text, r.offered, ctx_.options.decision_fallback);
        r.decision = parsed.strategy;
        r.decision_fallback_used = parsed.fallback_used;
        transcript.push_back({Role::Assistant, decision.text});

        // Execution
        const auto& spec = find_strategy(pool_, r.decision);
        auto& exec = r.execution;
        exec.question_id = record_.id;
        exec.question = record_.question;
        exec.strategy = spec.name;
        if (spec.needs_retrieval) {
            exec.retrievals = 1;
            exec.passages = passage_lines(ctx_.retriever->retrieve(record_.question, ctx_.options.top_k));
        }
        transcript.push_back(render_execution_turn(record_.question, spec, exec.passages, ctx_.templates));
        const RequestTag exec_tag{record_.id, Component::Execution, round, spec.name, false, {}};
        const auto generation = generate(transcript, spec.max_gen_tokens, {}, exec_tag);
        const auto extracted = extract_final_answer(generation, ctx_.backend, transcript, exec_tag);
        exec.raw_generation = generation.text;
        exec.answer = extracted.answer;
        exec.forced_decode_used = extracted.forced;
        exec.gen_tokens = generation.gen_tokens + extracted.extra_tokens;
        exec.tokens_approximate = !generation.usage_reported;
        exec.em = exact_match(exec.answer, golds_);
        exec.f1 = f1_score(exec.answer, golds_);
        auto assistant = generation.text;
        if (extracted.forced) {
            const auto body = std::string(trim(generation.text));
            assistant = (body.empty() ? std::string{} : body + "\n") + std::string(kFinalAnswerMarker) +
                        extracted.continuation;
        }
        transcript.push_back({Role::Assistant, std::move(assistant)});

        // Verification
        if (trace_.mode == PipelineMode::Verify) {
            transcript.push_back(render_verification_turn(ctx_.templates));
            const auto verification = generate(transcript, ctx_.options.verification_budget, {"\n"},
                                               {record_.id, Component::Verification, round, spec.name, false, {}});
            const auto verdict = parse_verdict(verification.text);
            r.verification_raw = verification.text;
            r.verdict = verdict.verdict;
            r.verdict_unparseable = verdict.unparseable;
            r.verification_tokens = verification.gen_tokens;
            transcript.push_back({Role::Assistant, verification.text});
        }
        return r;
    }

    const DatasetRecord& record_;
    const PipelineContext& ctx_;
    GoldAnswerSet golds_;
    std::vector<StrategySpec> pool_;
    PipelineTrace trace_;
};

}  // namespace

PipelineTrace run_dyplan_base(const DatasetRecord& record, const std::vector<StrategySpec>& strategies,
                              const PipelineContext& ctx)
{
    return PipelineRunner(record, strategies, ctx, PipelineMode::Base).run();
}

PipelineTrace run_dyplan_verify(const DatasetRecord& record, const std::vector<StrategySpec>& strategies,
                                const PipelineContext& ctx)
{
    return PipelineRunner(record, strategies, ctx, PipelineMode::Verify).run();
}

std::vector<PipelineTrace> run_pipeline_dataset(const std::vector<DatasetRecord>& dataset,
                                                const std::vector<StrategySpec>& strategies, PipelineMode mode,
                                                const PipelineContext& ctx, std::size_t parallelism)
{
    if (dataset.empty()) {
        throw DataError("dataset is empty");
    }
    std::vector<PipelineTrace> traces(dataset.size());
    parallel_for(dataset.size(), parallelism, [&](std::size_t i) {
        traces[i] = mode == PipelineMode::Base ? run_dyplan_base(dataset[i], strategies, ctx)
                                               : run_dyplan_verify(dataset[i], strategies, ctx);
    });
    return traces;
}

// ---- serialization ----

namespace {

nlohmann::ordered_json round_to_json(const RoundRecord& r)
{
    nlohmann::ordered_json j;
    j["round_index"] = r.round_index;
    j["offered"] = r.offered;
    j["decision_raw"] = r.decision_raw;
    j["decision"] = r.decision;
    j["decision_fallback_used"] = r.decision_fallback_used;
    j["decision_tokens"] = r.decision_tokens;
    j["execution"] = to_json(r.execution);
    j["verification_raw"] = r.verification_raw ? nlohmann::ordered_json(*r.verification_raw) : nlohmann::ordered_json(nullptr);
    j["verdict"] = r.verdict ? nlohmann::ordered_json(*r.verdict == Verdict::Yes ? "yes" : "no") : nlohmann::ordered_json(nullptr);
    j["verdict_unparseable"] = r.verdict_unparseable;
    j["verification_tokens"] = r.verification_tokens;
    return j;
}

RoundRecord round_from_json(const nlohmann::json& j)
{
    RoundRecord r;
    r.round_index = j.at("round_index").get<int>();
    r.offered = j.at("offered").get<std::vector<std::string>>();
    r.decision_raw = j.at("decision_raw").get<std::string>();
    r.decision = j.at("decision").get<std::string>();
    r.decision_fallback_used = j.at("decision_fallback_used").get<bool>();
    r.decision_tokens = j.at("decision_tokens").get<std::size_t>();
    r.execution = outcome_from_json(j.at("execution"));
    if (!j.at("verification_raw").is_null()) {
        r.verification_raw = j["verification_raw"].get<std::string>();
    }
    if (!j.at("verdict").is_null()) {
        const auto v = j["verdict"].get<std::string>();
        if (v != "yes" && v != "no") {
            throw ParseError("verdict must be yes or no");
        }
        r.verdict = v == "yes" ? Verdict::Yes : Verdict::No;
    }
    r.verdict_unparseable = j.value("verdict_unparseable", false);
    r.verification_tokens = j.value("verification_tokens", std::size_t{0});
    return r;
}

}  // namespace

nlohmann::ordered_json to_json(const PipelineTrace& t)
{
    nlohmann::ordered_json j;
    j["question_id"] = t.question_id;
    j["mode"] = to_string(t.mode);
    auto& rounds = j["rounds"] = nlohmann::ordered_json::array();
    for (const auto& r : t.rounds) {
        rounds.push_back(round_to_json(r));
    }
    j["final_answer"] = t.final_answer;
    j["em"] = t.em;
    j["f1"] = t.f1;
    j["total_gen_tokens"] = t.total_gen_tokens;
    j["total_retrievals"] = t.total_retrievals;
    auto& messages = j["messages"] = nlohmann::ordered_json::array();
    for (const auto& m : t.messages) {
        messages.push_back(nlohmann::ordered_json(to_json(m)));
    }
    j["error"] = t.error ? nlohmann::ordered_json(*t.error) : nlohmann::ordered_json(nullptr);
    return j;
}

PipelineTrace trace_from_json(const nlohmann::json& j)
{
    PipelineTrace t;
    t.question_id = j.at("question_id").get<std::string>();
    t.mode = pipeline_mode_from_string(j.at("mode").get<std::string>());
    for (const auto& r : j.at("rounds")) {
        t.rounds.push_back(round_from_json(r));
    }
    t.final_answer = j.at("final_answer").get<std::string>();
    t.em = j.at("em").get<int>();
    t.f1 = j.at("f1").get<double>();
    t.total_gen_tokens = j.at("total_gen_tokens").get<std::size_t>();
    t.total_retrievals = j.at("total_retrievals").get<std::size_t>();
    for (const auto& m : j.at("messages")) {
        t.messages.push_back(message_from_json(m));
    }
    if (j.contains("error") && !j["error"].is_null()) {
        t.error = j["error"].get<std::string>();
    }
    return t;
}

void save_traces_jsonl(const fs::path& path, const std::vector<PipelineTrace>& traces)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error("cannot write trace log: " + path.string());
    }
    for (const auto& t : traces) {
        out << to_json(t).dump() << '\n';
    }
}

std::vector<PipelineTrace> load_traces_jsonl(const fs::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open trace log: " + path.string());
    }
    std::vector<PipelineTrace> traces;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) {
            continue;
        }
        try {
            traces.push_back(trace_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        } catch (const ParseError& e) {
            throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return traces;
}

}  // namespace dyplan

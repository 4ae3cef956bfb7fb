#pragma once

#include "dyplan/backend.hpp"
#include "dyplan/dataset.hpp"
#include "dyplan/retrieval.hpp"
#include "dyplan/strategy.hpp"
#include "dyplan/templates.hpp"

#include <nlohmann/json.hpp>

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace dyplan {

enum class PipelineMode { Base, Verify };

std::string_view to_string(PipelineMode mode);
PipelineMode pipeline_mode_from_string(std::string_view name);

enum class Verdict { Yes, No };

struct VerdictParse {
    Verdict verdict = Verdict::Yes;
    bool unparseable = false;
};

struct DecisionParse {
    std::string strategy;
    bool fallback_used = false;
};

// Few-shot Decision exemplar: a question and the strategy that should be picked.
struct DecisionExemplar {
    std::string question;
    std::string strategy;
};

// JSONL of {"question", "strategy"}.
std::vector<DecisionExemplar> load_decision_exemplars(const std::filesystem::path& path);

struct RoundRecord {
    int round_index = 1;
    std::vector<std::string> offered;
    std::string decision_raw;
    std::string decision;
    bool decision_fallback_used = false;
    std::size_t decision_tokens = 0;
    StrategyOutcome execution;
    std::optional<std::string> verification_raw;
    std::optional<Verdict> verdict;
    bool verdict_unparseable = false;
    std::size_t verification_tokens = 0;

    std::size_t total_tokens() const { return decision_tokens + execution.gen_tokens + verification_tokens; }
};

struct PipelineTrace {
    std::string question_id;
    PipelineMode mode = PipelineMode::Base;
    std::vector<RoundRecord> rounds;
    std::string final_answer;
    int em = 0;
    double f1 = 0.0;
    std::size_t total_gen_tokens = 0;
    std::size_t total_retrievals = 0;
    std::vector<ChatMessage> messages;
    std::optional<std::string> error;
};

nlohmann::ordered_json to_json(const PipelineTrace& trace);
PipelineTrace trace_from_json(const nlohmann::json& j);

void save_traces_jsonl(const std::filesystem::path& path, const std::vector<PipelineTrace>& traces);
std::vector<PipelineTrace> load_traces_jsonl(const std::filesystem::path& path);

struct PipelineOptions {
    int max_rounds = 2;
    std::size_t decision_budget = 10;
    std::size_t verification_budget = 10;
    std::size_t top_k = kDefaultTopK;
    // Used when the Decision output names no offered strategy. Empty, or not
    // offered, means the least-preferred offered strategy.
    std::string decision_fallback;
    // Non-empty switches the Decision turn to few-shot mode.
    std::vector<DecisionExemplar> decision_shots;
};

struct PipelineContext {
    Backend& backend;
    const TemplateSet& templates;
    const Retriever* retriever = nullptr;
    PipelineOptions options;
};

// "- name: description" per strategy in preference order.
std::string render_strategy_list(const std::vector<StrategySpec>& offered);

// With an empty history this starts the transcript (system message plus the
// first-round Decision turn); otherwise appends a follow-up Decision turn.
std::vector<ChatMessage> render_decision_prompt(std::string_view question, const std::vector<StrategySpec>& offered,
                                                const std::vector<ChatMessage>& history, const TemplateSet& templates,
                                                const std::vector<DecisionExemplar>& shots = {});

ChatMessage render_execution_turn(std::string_view question, const StrategySpec& spec,
                                  const std::vector<std::string>& passage_texts, const TemplateSet& templates);

ChatMessage render_verification_turn(const TemplateSet& templates);

// Earliest case-insensitive mention of an offered name; otherwise the fallback.
DecisionParse parse_decision(std::string_view text, const std::vector<std::string>& offered,
                             std::string_view fallback = {});

// Leading "yes"/"no" token; anything else is accepted as yes and flagged.
VerdictParse parse_verdict(std::string_view text);

// One Decision turn followed by one Execution turn.
PipelineTrace run_dyplan_base(const DatasetRecord& record, const std::vector<StrategySpec>& strategies,
                              const PipelineContext& ctx);

// Decision -> Execution -> Verification rounds. A "yes" exits with that round's
// answer; a "no" removes the used strategy from the pool. When rounds or
// strategies run out, the last round's answer is returned.
PipelineTrace run_dyplan_verify(const DatasetRecord& record, const std::vector<StrategySpec>& strategies,
                                const PipelineContext& ctx);

std::vector<PipelineTrace> run_pipeline_dataset(const std::vector<DatasetRecord>& dataset,
                                                const std::vector<StrategySpec>& strategies, PipelineMode mode,
                                                const PipelineContext& ctx, std::size_t parallelism = 1);

}  // namespace dyplan

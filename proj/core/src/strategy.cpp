#include "dyplan/strategy.hpp"

#include "dyplan/error.hpp"
#include "dyplan/parallel.hpp"
#include "dyplan/text.hpp"

#include <algorithm>
#include <fstream>
#include <set>

namespace dyplan {

namespace fs = std::filesystem;

std::vector<StrategySpec> default_strategies()
{
    return {
        {"direct", "Directly provide the final answer without any reasoning.", 1, 100, 8, false, "direct"},
        {"plan", "Decompose the question into simpler follow-up questions and answer them to reach the final answer.",
         2, 200, 4, false, "plan"},
        {"reason", "Reason step-by-step to reach the final answer.", 3, 200, 8, false, "reason"},
        {"retrieval", "Retrieve three relevant passages and reason over them to reach the final answer.", 4, 200, 8,
         true, "retrieval"},
    };
}

void validate_strategies(const std::vector<StrategySpec>& specs)
{
    if (specs.empty()) {
        throw ConfigError("no strategies configured");
    }
    std::set<std::string> names;
    std::set<int> ranks;
    for (const auto& s : specs) {
        if (!names.insert(s.name).second) {
            throw ConfigError("duplicate strategy '" + s.name + "'");
        }
        if (s.max_gen_tokens == 0) {
            throw ConfigError("strategy '" + s.name + "' needs max_gen_tokens >= 1");
        }
        ranks.insert(s.preference_rank);
    }
    if (ranks.size() != specs.size() || *ranks.begin() != 1 ||
        *ranks.rbegin() != static_cast<int>(specs.size())) {
        throw ConfigError("strategy preference ranks must be a permutation of 1..n");
    }
}

std::vector<StrategySpec> select_strategies(const std::vector<StrategySpec>& registry,
                                            const std::vector<std::string>& order)
{
    std::vector<StrategySpec> out;
    std::set<std::string> seen;
    for (const auto& name : order) {
        if (!seen.insert(name).second) {
            throw ConfigError("strategy '" + name + "' listed twice");
        }
        auto spec = find_strategy(registry, name);
        spec.preference_rank = static_cast<int>(out.size()) + 1;
        out.push_back(std::move(spec));
    }
    validate_strategies(out);
    return out;
}

const StrategySpec& find_strategy(const std::vector<StrategySpec>& specs, std::string_view name)
{
    const auto it = std::find_if(specs.begin(), specs.end(), [&](const StrategySpec& s) { return s.name == name; });
    if (it == specs.end()) {
        throw ConfigError("unknown strategy '" + std::string(name) + "'");
    }
    return *it;
}

std::vector<StrategySpec> with_zero_shots(std::vector<StrategySpec> specs)
{
    for (auto& s : specs) {
        s.n_shot = 0;
    }
    return specs;
}

std::vector<Exemplar> load_exemplars(const fs::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open exemplars: " + path.string());
    }
    std::vector<Exemplar> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) {
            continue;
        }
        try {
            const auto j = nlohmann::json::parse(line);
            Exemplar e;
            e.question = j.at("question").get<std::string>();
            e.output = j.at("output").get<std::string>();
            if (j.contains("passages")) {
                e.passages = j["passages"].get<std::vector<std::string>>();
            }
            out.push_back(std::move(e));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

ShotBank load_shot_bank(const fs::path& dir, const std::vector<StrategySpec>& specs)
{
    ShotBank bank;
    for (const auto& spec : specs) {
        if (spec.n_shot == 0) {
            bank[spec.name] = {};
            continue;
        }
        auto shots = load_exemplars(dir / (spec.template_id + ".jsonl"));
        if (shots.size() < spec.n_shot) {
            throw ConfigError("strategy '" + spec.name + "' needs " + std::to_string(spec.n_shot) +
                              " exemplars but " + (dir / (spec.template_id + ".jsonl")).string() + " has " +
                              std::to_string(shots.size()));
        }
        shots.resize(spec.n_shot);
        bank[spec.name] = std::move(shots);
    }
    return bank;
}

std::string render_passages(const std::vector<std::string>& passage_texts)
{
    std::string out;
    for (std::size_t i = 0; i < passage_texts.size(); ++i) {
        if (i > 0) {
            out += '\n';
        }
        out += "[" + std::to_string(i + 1) + "] " + passage_texts[i];
    }
    return out;
}

namespace {

std::string passage_line(const Passage& p)
{
    return p.doc_title.empty() ? p.text : p.doc_title + ": " + p.text;
}

}  // namespace

std::vector<std::string> passage_lines(const std::vector<Passage>& passages)
{
    std::vector<std::string> lines;
    lines.reserve(passages.size());
    for (const auto& p : passages) {
        lines.push_back(passage_line(p));
    }
    return lines;
}

std::string render_passages(const std::vector<Passage>& passages)
{
    return render_passages(passage_lines(passages));
}

std::vector<ChatMessage> render_fixed_prompt(std::string_view question, const StrategySpec& spec,
                                             const std::vector<Exemplar>& shots,
                                             const std::optional<std::vector<Passage>>& passages,
                                             const TemplateSet& templates)
{
    if (spec.needs_retrieval && !passages) {
        throw ConfigError("strategy '" + spec.name + "' needs retrieved passages");
    }
    if (!spec.needs_retrieval && passages) {
        throw ConfigError("strategy '" + spec.name + "' does not take passages");
    }
    if (shots.size() != spec.n_shot) {
        throw ConfigError("strategy '" + spec.name + "' expects " + std::to_string(spec.n_shot) + " exemplars, got " +
                          std::to_string(shots.size()));
    }
    const auto& tmpl = templates.fixed(spec.template_id);
    const auto user_turn = [&](std::string_view q, const std::string& rendered_passages) {
        return render_template(tmpl.user, {{"question", std::string(q)}, {"passages", rendered_passages}});
    };

    std::vector<ChatMessage> messages;
    const bool inline_shots = tmpl.system.find("{shots}") != std::string::npos;
    std::string shot_block;
    if (inline_shots) {
        for (const auto& shot : shots) {
            shot_block += user_turn(shot.question, render_passages(shot.passages)) + "\n" + shot.output + "\n\n";
        }
    }
    messages.push_back({Role::System, render_template(tmpl.system, {{"shots", shot_block}})});
    if (!inline_shots) {
        for (const auto& shot : shots) {
            messages.push_back({Role::User, user_turn(shot.question, render_passages(shot.passages))});
            messages.push_back({Role::Assistant, shot.output});
        }
    }
    messages.push_back({Role::User, user_turn(question, passages ? render_passages(*passages) : std::string{})});
    return messages;
}

std::string clean_answer(std::string_view raw)
{
    auto s = trim(raw);
    if (!s.empty() && s.back() == '.') {
        s.remove_suffix(1);
        s = trim(s);
    }
    static constexpr std::pair<std::string_view, std::string_view> kQuotes[] = {
        {"\"", "\""}, {"'", "'"}, {"“", "”"}, {"‘", "’"}};
    for (const auto& [open, close] : kQuotes) {
        if (s.size() >= open.size() + close.size() && s.starts_with(open) && s.ends_with(close)) {
            s = trim(s.substr(open.size(), s.size() - open.size() - close.size()));
            break;
        }
    }
    return std::string(s);
}

std::optional<std::string> parse_final_answer(std::string_view text)
{
    const auto pos = ifind_ascii(text, kFinalAnswerMarker);
    if (pos == std::string_view::npos) {
        return std::nullopt;
    }
    auto rest = text.substr(pos + kFinalAnswerMarker.size());
    rest = rest.substr(0, rest.find('\n'));
    auto answer = clean_answer(rest);
    if (answer.empty()) {
        return std::nullopt;
    }
    return answer;
}

ExtractedAnswer extract_final_answer(const Generation& generation, Backend& backend,
                                     const std::vector<ChatMessage>& messages, RequestTag tag, std::size_t budget)
{
    if (auto parsed = parse_final_answer(generation.text)) {
        return {std::move(*parsed), 0, false, {}};
    }
    // Seed the assistant turn with what was generated plus the marker.
    auto seeded = messages;
    const auto body = std::string(trim(generation.text));
    const auto marker = std::string(kFinalAnswerMarker);
    seeded.push_back({Role::Assistant, body.empty() ? marker : body + "\n" + marker});

    tag.forced = true;
    GenerationRequest request{std::move(seeded), budget, {"\n"}, std::move(tag)};
    const auto continuation = backend.generate(request);
    ExtractedAnswer out;
    out.forced = true;
    out.extra_tokens = continuation.gen_tokens;
    out.continuation = continuation.text;
    const auto first_line = std::string_view(continuation.text).substr(0, continuation.text.find('\n'));
    out.answer = clean_answer(first_line);
    return out;
}

nlohmann::ordered_json to_json(const StrategyOutcome& o)
{
    nlohmann::ordered_json j;
    j["question_id"] = o.question_id;
    j["question"] = o.question;
    j["strategy"] = o.strategy;
    j["raw_generation"] = o.raw_generation;
    j["answer"] = o.answer;
    j["em"] = o.em;
    j["f1"] = o.f1;
    j["gen_tokens"] = o.gen_tokens;
    j["retrievals"] = o.retrievals;
    j["forced_decode_used"] = o.forced_decode_used;
    j["tokens_approximate"] = o.tokens_approximate;
    j["passages"] = o.passages;
    j["error"] = o.error ? nlohmann::ordered_json(*o.error) : nlohmann::ordered_json(nullptr);
    return j;
}

StrategyOutcome outcome_from_json(const nlohmann::json& j)
{
    StrategyOutcome o;
    o.question_id = j.at("question_id").get<std::string>();
    o.question = j.value("question", std::string{});
    o.strategy = j.at("strategy").get<std::string>();
    o.raw_generation = j.at("raw_generation").get<std::string>();
    o.answer = j.at("answer").get<std::string>();
    o.em = j.at("em").get<int>();
    o.f1 = j.at("f1").get<double>();
    o.gen_tokens = j.at("gen_tokens").get<std::size_t>();
    o.retrievals = j.at("retrievals").get<std::size_t>();
    o.forced_decode_used = j.value("forced_decode_used", false);
    o.tokens_approximate = j.value("tokens_approximate", false);
    if (j.contains("passages")) {
        o.passages = j["passages"].get<std::vector<std::string>>();
    }
    if (j.contains("error") && !j["error"].is_null()) {
        o.error = j["error"].get<std::string>();
    }
    if (o.em != 0 && o.em != 1) {
        throw ParseError("outcome em must be 0 or 1");
    }
    return o;
}

// ---- CorrectnessTable ----

CorrectnessTable::CorrectnessTable(std::vector<std::string> question_ids, std::vector<std::string> order)
    : question_ids_(std::move(question_ids)), order_(std::move(order))
{
    if (std::set<std::string>(order_.begin(), order_.end()).size() != order_.size()) {
        throw DataError("strategy order contains duplicates");
    }
    if (std::set<std::string>(question_ids_.begin(), question_ids_.end()).size() != question_ids_.size()) {
        throw DataError("question ids contain duplicates");
    }
}

void CorrectnessTable::add(StrategyOutcome outcome)
{
    if (std::find(question_ids_.begin(), question_ids_.end(), outcome.question_id) == question_ids_.end()) {
        throw DataError("outcome for unknown question '" + outcome.question_id + "'");
    }
    if (std::find(order_.begin(), order_.end(), outcome.strategy) == order_.end()) {
        throw DataError("outcome for strategy '" + outcome.strategy + "' outside the table order");
    }
    auto key = std::make_pair(outcome.question_id, outcome.strategy);
    if (!cells_.emplace(std::move(key), std::move(outcome)).second) {
        throw DataError("duplicate outcome cell");
    }
}

bool CorrectnessTable::contains(std::string_view question_id, std::string_view strategy) const
{
    return cells_.contains(std::make_pair(std::string(question_id), std::string(strategy)));
}

const StrategyOutcome& CorrectnessTable::at(std::string_view question_id, std::string_view strategy) const
{
    const auto it = cells_.find(std::make_pair(std::string(question_id), std::string(strategy)));
    if (it == cells_.end()) {
        throw DataError("no outcome for (" + std::string(question_id) + ", " + std::string(strategy) + ")");
    }
    return it->second;
}

bool CorrectnessTable::correct(std::string_view question_id, std::string_view strategy) const
{
    return at(question_id, strategy).correct(criterion_);
}

void CorrectnessTable::validate_complete() const
{
    if (question_ids_.empty() || order_.empty()) {
        throw DataError("correctness table is empty");
    }
    for (const auto& q : question_ids_) {
        for (const auto& s : order_) {
            if (!contains(q, s)) {
                throw DataError("correctness table is missing (" + q + ", " + s + ")");
            }
        }
    }
}

std::size_t CorrectnessTable::failure_count() const
{
    return static_cast<std::size_t>(
        std::count_if(cells_.begin(), cells_.end(), [](const auto& kv) { return kv.second.error.has_value(); }));
}

std::vector<std::string> CorrectnessTable::positives(std::string_view strategy) const
{
    std::vector<std::string> out;
    for (const auto& q : question_ids_) {
        if (correct(q, strategy)) {
            out.push_back(q);
        }
    }
    return out;
}

std::vector<std::string> CorrectnessTable::negatives(std::string_view strategy) const
{
    std::vector<std::string> out;
    for (const auto& q : question_ids_) {
        if (!correct(q, strategy)) {
            out.push_back(q);
        }
    }
    return out;
}

CorrectnessTable CorrectnessTable::reordered(const std::vector<std::string>& order) const
{
    CorrectnessTable out(question_ids_, order);
    out.criterion_ = criterion_;
    for (const auto& q : question_ids_) {
        for (const auto& s : order) {
            out.add(at(q, s));
        }
    }
    return out;
}

void CorrectnessTable::save_jsonl(const fs::path& path) const
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error("cannot write outcome log: " + path.string());
    }
    for (const auto& q : question_ids_) {
        for (const auto& s : order_) {
            if (contains(q, s)) {
                out << to_json(at(q, s)).dump() << '\n';
            }
        }
    }
}

CorrectnessTable CorrectnessTable::load_jsonl(const fs::path& path, std::vector<std::string> order)
{
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open outcome log: " + path.string());
    }
    std::vector<StrategyOutcome> outcomes;
    std::vector<std::string> questions;
    std::set<std::string> seen_q;
    std::vector<std::string> seen_order;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) {
            continue;
        }
        try {
            auto o = outcome_from_json(nlohmann::json::parse(line));
            if (seen_q.insert(o.question_id).second) {
                questions.push_back(o.question_id);
            }
            if (std::find(seen_order.begin(), seen_order.end(), o.strategy) == seen_order.end()) {
                seen_order.push_back(o.strategy);
            }
            outcomes.push_back(std::move(o));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        } catch (const ParseError& e) {
            throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    if (order.empty()) {
        order = seen_order;
    }
    CorrectnessTable table(std::move(questions), std::move(order));
    for (auto& o : outcomes) {
        if (std::find(table.order_.begin(), table.order_.end(), o.strategy) != table.order_.end()) {
            table.add(std::move(o));
        }
    }
    return table;
}

// ---- runs ----

StrategyOutcome run_fixed(const DatasetRecord& record, const StrategySpec& spec, const FixedRunContext& ctx)
{
    if (spec.needs_retrieval && ctx.retriever == nullptr) {
        throw ConfigError("strategy '" + spec.name + "' needs a retriever");
    }
    static const std::vector<Exemplar> kNoShots;
    const std::vector<Exemplar>* shots = &kNoShots;
    if (ctx.shots != nullptr) {
        const auto it = ctx.shots->find(spec.name);
        if (it != ctx.shots->end()) {
            shots = &it->second;
        }
    }
    if (shots->size() != spec.n_shot) {
        throw ConfigError("strategy '" + spec.name + "' expects " + std::to_string(spec.n_shot) + " exemplars, got " +
                          std::to_string(shots->size()));
    }

    StrategyOutcome o;
    o.question_id = record.id;
    o.question = record.question;
    o.strategy = spec.name;
    try {
        std::optional<std::vector<Passage>> passages;
        if (spec.needs_retrieval) {
            passages = ctx.retriever->retrieve(record.question, ctx.top_k);
            o.retrievals = 1;
            o.passages = passage_lines(*passages);
        }
        auto messages = render_fixed_prompt(record.question, spec, *shots, passages, ctx.templates);
        RequestTag tag{record.id, Component::Fixed, 0, spec.name, false, {}};
        const auto generation = ctx.backend.generate({messages, spec.max_gen_tokens, {}, tag});
        const auto extracted = extract_final_answer(generation, ctx.backend, messages, tag);
        o.raw_generation = generation.text;
        o.answer = extracted.answer;
        o.forced_decode_used = extracted.forced;
        o.gen_tokens = generation.gen_tokens + extracted.extra_tokens;
        o.tokens_approximate = !generation.usage_reported;
        const auto golds = record.golds();
        o.em = exact_match(o.answer, golds);
        o.f1 = f1_score(o.answer, golds);
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        o.error = e.what();
        o.em = 0;
        o.f1 = 0.0;
    }
    return o;
}

CorrectnessTable run_fixed_dataset(const std::vector<DatasetRecord>& dataset, const std::vector<StrategySpec>& specs,
                                   const FixedRunContext& ctx, std::size_t parallelism)
{
    if (dataset.empty()) {
        throw DataError("dataset is empty");
    }
    validate_strategies(specs);
    auto sorted = specs;
    std::sort(sorted.begin(), sorted.end(),
              [](const StrategySpec& a, const StrategySpec& b) { return a.preference_rank < b.preference_rank; });
    for (const auto& s : sorted) {
        if (s.needs_retrieval && ctx.retriever == nullptr) {
            throw ConfigError("strategy '" + s.name + "' needs a retrieval index");
        }
    }

    std::vector<std::vector<StrategyOutcome>> rows(dataset.size());
    parallel_for(dataset.size(), parallelism, [&](std::size_t i) {
        for (const auto& spec : sorted) {
            rows[i].push_back(run_fixed(dataset[i], spec, ctx));
        }
    });

    std::vector<std::string> ids;
    std::vector<std::string> order;
    for (const auto& r : dataset) {
        ids.push_back(r.id);
    }
    for (const auto& s : sorted) {
        order.push_back(s.name);
    }
    CorrectnessTable table(std::move(ids), std::move(order));
    for (auto& row : rows) {
        for (auto& o : row) {
            table.add(std::move(o));
        }
    }
    table.validate_complete();
    return table;
}

}  // namespace dyplan

#include "dyplan/backend.hpp"

#include "dyplan/digest.hpp"
#include "dyplan/error.hpp"
#include "dyplan/metrics.hpp"
#include "dyplan/text.hpp"

#include <algorithm>
#include <fstream>
#include <set>

namespace dyplan {

namespace fs = std::filesystem;

std::string_view to_string(Role role)
{
    switch (role) {
    case Role::System: return "system";
    case Role::User: return "user";
    case Role::Assistant: return "assistant";
    }
    return "user";
}

Role role_from_string(std::string_view name)
{
    if (name == "system") return Role::System;
    if (name == "user") return Role::User;
    if (name == "assistant") return Role::Assistant;
    throw ParseError("unknown chat role '" + std::string(name) + "'");
}

std::string_view to_string(FinishReason reason)
{
    switch (reason) {
    case FinishReason::Stop: return "stop";
    case FinishReason::Length: return "length";
    case FinishReason::Scripted: return "scripted";
    }
    return "stop";
}

FinishReason finish_reason_from_string(std::string_view name)
{
    if (name == "stop") return FinishReason::Stop;
    if (name == "length") return FinishReason::Length;
    if (name == "scripted") return FinishReason::Scripted;
    throw ParseError("unknown finish reason '" + std::string(name) + "'");
}

std::string RequestTag::str() const
{
    std::string out = question_id;
    switch (component) {
    case Component::Fixed:
        out += "/fixed/" + strategy;
        break;
    case Component::Decision:
        out += "/r" + std::to_string(round) + "/decision";
        break;
    case Component::Execution:
        out += "/r" + std::to_string(round) + "/exec/" + strategy;
        break;
    case Component::Verification:
        out += "/r" + std::to_string(round) + "/verify/" + strategy;
        break;
    }
    if (forced) {
        out += "/force";
    }
    return out;
}

bool truncate_at_stop(std::string& text, const std::vector<std::string>& stop)
{
    auto cut = std::string::npos;
    for (const auto& s : stop) {
        if (s.empty()) {
            continue;
        }
        cut = std::min(cut, text.find(s));
    }
    if (cut == std::string::npos) {
        return false;
    }
    text.resize(cut);
    return true;
}

std::string request_digest(std::string_view kind, std::string_view model, double temperature,
                           const GenerationRequest& request)
{
    nlohmann::ordered_json j;
    j["kind"] = kind;
    j["model"] = model;
    j["temperature"] = temperature;
    auto& messages = j["messages"] = nlohmann::ordered_json::array();
    for (const auto& m : request.messages) {
        messages.push_back({{"role", to_string(m.role)}, {"content", m.content}});
    }
    j["max_tokens"] = request.max_tokens;
    j["stop"] = request.stop;
    if (kind != "http") {
        j["tag"] = request.tag.str();
    }
    return sha256_hex(j.dump());
}

Generation Backend::generate(const GenerationRequest& request)
{
    if (request.messages.empty()) {
        throw ConfigError("generation request has no messages");
    }
    if (request.max_tokens == 0) {
        throw ConfigError("generation request needs max_tokens >= 1");
    }
    ++calls_;
    auto generation = do_generate(request);
    if (truncate_at_stop(generation.text, request.stop) && !generation.usage_reported) {
        generation.gen_tokens = whitespace_token_count(generation.text);
    }
    return generation;
}

nlohmann::json to_json(const ChatMessage& message)
{
    return {{"role", to_string(message.role)}, {"content", message.content}};
}

ChatMessage message_from_json(const nlohmann::json& j)
{
    return {role_from_string(j.at("role").get<std::string>()), j.at("content").get<std::string>()};
}

nlohmann::json to_json(const Generation& generation)
{
    nlohmann::ordered_json j;
    j["text"] = generation.text;
    j["gen_tokens"] = generation.gen_tokens;
    j["finish_reason"] = to_string(generation.finish_reason);
    j["usage_reported"] = generation.usage_reported;
    return j;
}

Generation generation_from_json(const nlohmann::json& j)
{
    Generation g;
    g.text = j.at("text").get<std::string>();
    g.gen_tokens = j.at("gen_tokens").get<std::size_t>();
    g.finish_reason = finish_reason_from_string(j.at("finish_reason").get<std::string>());
    g.usage_reported = j.value("usage_reported", true);
    return g;
}

// ---- scripted ----

ScriptedBackend::ScriptedBackend(std::map<std::string, ScriptEntry> entries)
    : entries_(std::move(entries))
{
}

std::unique_ptr<ScriptedBackend> ScriptedBackend::from_file(const fs::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open script: " + path.string());
    }
    std::map<std::string, ScriptEntry> entries;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) {
            continue;
        }
        try {
            const auto j = nlohmann::json::parse(line);
            ScriptEntry entry;
            entry.text = j.at("text").get<std::string>();
            if (j.contains("gen_tokens") && !j["gen_tokens"].is_null()) {
                entry.gen_tokens = j["gen_tokens"].get<std::size_t>();
            }
            auto key = j.at("key").get<std::string>();
            if (!entries.emplace(key, std::move(entry)).second) {
                throw ParseError(path.string() + ":" + std::to_string(line_no) + ": duplicate key '" + key + "'");
            }
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return std::make_unique<ScriptedBackend>(std::move(entries));
}

Generation ScriptedBackend::do_generate(const GenerationRequest& request)
{
    const auto digest_key = digest(request);
    const auto tag_key = request.tag.str();
    const auto wildcard_key = "*" + tag_key.substr(request.tag.question_id.size());
    for (const auto* key : {&digest_key, &tag_key, &wildcard_key}) {
        const auto it = entries_.find(*key);
        if (it == entries_.end()) {
            continue;
        }
        Generation g;
        g.text = it->second.text;
        g.finish_reason = FinishReason::Scripted;
        g.usage_reported = it->second.gen_tokens.has_value();
        g.gen_tokens = it->second.gen_tokens.value_or(whitespace_token_count(g.text));
        return g;
    }
    throw ScriptMissError("no scripted response for tag '" + tag_key + "' (digest " + digest_key + ")");
}

// ---- oracle ----

OracleBackend::OracleBackend(std::vector<OracleRow> rows, OracleOptions options)
    : options_(std::move(options))
{
    for (auto& row : rows) {
        if (row.answers.empty()) {
            throw DataError("oracle row '" + row.question_id + "' has no answers");
        }
        auto id = row.question_id;
        if (!rows_.emplace(std::move(id), std::move(row)).second) {
            throw DataError("duplicate oracle row id");
        }
    }
}

std::vector<OracleRow> OracleBackend::load_table(const fs::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open oracle table: " + path.string());
    }
    std::vector<OracleRow> rows;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) {
            continue;
        }
        try {
            const auto j = nlohmann::json::parse(line);
            OracleRow row;
            row.question_id = j.at("id").get<std::string>();
            row.answers = j.at("answers").get<std::vector<std::string>>();
            for (const auto& [name, bit] : j.at("correct").items()) {
                row.correct[name] = bit.is_boolean() ? bit.get<bool>() : bit.get<int>() != 0;
            }
            rows.push_back(std::move(row));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return rows;
}

const OracleRow& OracleBackend::row(std::string_view question_id) const
{
    const auto it = rows_.find(std::string(question_id));
    if (it == rows_.end()) {
        throw DataError("oracle table has no row for question '" + std::string(question_id) + "'");
    }
    return it->second;
}

std::string OracleBackend::distractor_for(const std::vector<std::string>& answers)
{
    std::set<std::string> gold_tokens;
    for (const auto& a : answers) {
        for (auto& t : answer_tokens(a)) {
            gold_tokens.insert(std::move(t));
        }
    }
    for (int i = 0;; ++i) {
        std::string candidate = i == 0 ? "unanswerable" : "unanswerable" + std::to_string(i);
        if (!gold_tokens.contains(candidate)) {
            return candidate;
        }
    }
}

Generation OracleBackend::do_generate(const GenerationRequest& request)
{
    const auto& tag = request.tag;
    const auto& r = row(tag.question_id);
    const auto is_correct = [&](const std::string& strategy) {
        const auto it = r.correct.find(strategy);
        return it != r.correct.end() && it->second;
    };

    Generation g;
    g.finish_reason = FinishReason::Stop;
    g.usage_reported = true;
    switch (tag.component) {
    case Component::Decision: {
        if (tag.offered.empty()) {
            throw DataError("oracle decision request without an offered pool");
        }
        if (options_.decision == "optimal") {
            const auto it = std::find_if(tag.offered.begin(), tag.offered.end(), is_correct);
            g.text = it != tag.offered.end() ? *it : tag.offered.back();
        } else {
            g.text = options_.decision;
        }
        g.gen_tokens = 1;
        return g;
    }
    case Component::Verification: {
        if (options_.verifier == "perfect") {
            g.text = is_correct(tag.strategy) ? "yes" : "no";
        } else {
            g.text = options_.verifier;
        }
        g.gen_tokens = 1;
        return g;
    }
    case Component::Fixed:
    case Component::Execution: {
        const auto answer = is_correct(tag.strategy) ? r.answers.front() : distractor_for(r.answers);
        if (tag.forced) {
            g.text = " \"" + answer + "\"";
            g.gen_tokens = whitespace_token_count(g.text);
            return g;
        }
        g.text = "Final answer: \"" + answer + "\"";
        const auto it = options_.token_profile.find(tag.strategy);
        g.gen_tokens = it != options_.token_profile.end() ? it->second : options_.default_tokens;
        return g;
    }
    }
    throw Error("unreachable oracle component");
}

// ---- cache ----

CachedBackend::CachedBackend(std::shared_ptr<Backend> inner, fs::path cache_path)
    : inner_(std::move(inner)), path_(std::move(cache_path))
{
    if (!inner_) {
        throw ConfigError("cached backend needs an inner backend");
    }
    load();
}

void CachedBackend::load()
{
    if (!fs::exists(path_)) {
        return;
    }
    std::ifstream in(path_);
    if (!in) {
        throw CacheError("cannot read cache " + path_.string());
    }
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) {
            continue;
        }
        try {
            const auto j = nlohmann::json::parse(line);
            auto key = j.at("key").get<std::string>();
            auto generation = generation_from_json(j.at("generation"));
            const auto [it, inserted] = entries_.emplace(key, generation);
            if (!inserted && !(it->second == generation)) {
                throw CacheError("cache " + path_.string() + ":" + std::to_string(line_no) +
                                 ": conflicting entries for key " + key);
            }
        } catch (const nlohmann::json::exception& e) {
            throw CacheError("corrupt cache " + path_.string() + ":" + std::to_string(line_no) + ": " + e.what());
        } catch (const ParseError& e) {
            throw CacheError("corrupt cache " + path_.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
}

void CachedBackend::append(const std::string& key, const Generation& generation)
{
    std::ofstream out(path_, std::ios::app | std::ios::binary);
    if (!out) {
        throw CacheError("cannot append to cache " + path_.string());
    }
    nlohmann::ordered_json j;
    j["key"] = key;
    j["generation"] = to_json(generation);
    out << j.dump() << '\n';
}

std::size_t CachedBackend::size() const
{
    std::lock_guard lock(mutex_);
    return entries_.size();
}

Generation CachedBackend::do_generate(const GenerationRequest& request)
{
    const auto key = digest(request);
    std::promise<Generation> promise;
    {
        std::unique_lock lock(mutex_);
        if (const auto it = entries_.find(key); it != entries_.end()) {
            return it->second;
        }
        if (const auto it = in_flight_.find(key); it != in_flight_.end()) {
            auto pending = it->second;
            lock.unlock();
            return pending.get();
        }
        in_flight_.emplace(key, promise.get_future().share());
    }
    try {
        auto generation = inner_->generate(request);
        std::lock_guard lock(mutex_);
        append(key, generation);
        entries_.emplace(key, generation);
        in_flight_.erase(key);
        promise.set_value(generation);
        return generation;
    } catch (...) {
        std::lock_guard lock(mutex_);
        in_flight_.erase(key);
        promise.set_exception(std::current_exception());
        throw;
    }
}

// ---- factory ----

void BackendConfig::validate() const
{
    const auto require = [&](bool ok, const char* what) {
        if (!ok) {
            throw ConfigError("backend kind '" + kind + "' requires " + what);
        }
    };
    const auto forbid = [&](bool set, const char* what) {
        if (set) {
            throw ConfigError("backend kind '" + kind + "' does not accept " + what);
        }
    };
    if (parallelism == 0) {
        throw ConfigError("backend parallelism must be at least 1");
    }
    if (kind == "http") {
        require(!http.endpoint.empty(), "endpoint");
        require(!http.model.empty(), "model");
        require(http.temperature >= 0.0, "temperature >= 0");
        forbid(!script.empty(), "script");
        forbid(!oracle_table.empty(), "oracle_table");
    } else if (kind == "scripted") {
        require(!script.empty(), "script");
        forbid(!http.endpoint.empty(), "endpoint");
        forbid(!oracle_table.empty(), "oracle_table");
    } else if (kind == "oracle") {
        require(!oracle_table.empty(), "oracle_table");
        forbid(!http.endpoint.empty(), "endpoint");
        forbid(!script.empty(), "script");
    } else {
        throw ConfigError("unknown backend kind '" + kind + "' (expected http, scripted or oracle)");
    }
}

std::shared_ptr<Backend> make_backend(const BackendConfig& config)
{
    config.validate();
    std::shared_ptr<Backend> backend;
    if (config.kind == "http") {
        backend = std::make_shared<HttpBackend>(config.http);
    } else if (config.kind == "scripted") {
        backend = ScriptedBackend::from_file(config.script);
    } else {
        backend = std::make_shared<OracleBackend>(OracleBackend::load_table(config.oracle_table), config.oracle);
    }
    if (!config.cache.empty()) {
        backend = std::make_shared<CachedBackend>(std::move(backend), config.cache);
    }
    return backend;
}

}  // namespace dyplan

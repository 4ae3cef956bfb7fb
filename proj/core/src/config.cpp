#include "dyplan/config.hpp"

#include "dyplan/error.hpp"
#include "dyplan/strategy.hpp"
#include "dyplan/text.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

namespace dyplan {

namespace fs = std::filesystem;

std::optional<std::string> process_env(const std::string& name)
{
    const char* v = std::getenv(name.c_str());
    if (v == nullptr) {
        return std::nullopt;
    }
    return std::string(v);
}

std::string interpolate_env(std::string_view value, const EnvLookup& env)
{
    std::string out;
    std::size_t i = 0;
    while (i < value.size()) {
        if (value[i] == '$' && i + 1 < value.size() && value[i + 1] == '{') {
            const auto close = value.find('}', i + 2);
            if (close == std::string_view::npos) {
                throw ConfigError("unterminated ${ in value: " + std::string(value));
            }
            const std::string name(value.substr(i + 2, close - i - 2));
            if (name.empty()) {
                throw ConfigError("empty variable name in value: " + std::string(value));
            }
            const auto v = env(name);
            if (!v) {
                throw ConfigError("environment variable '" + name + "' is not set");
            }
            out += *v;
            i = close + 1;
        } else {
            out += value[i++];
        }
    }
    return out;
}

std::vector<std::pair<std::string, std::string>> parse_key_values(std::string_view text, const EnvLookup& env)
{
    std::vector<std::pair<std::string, std::string>> out;
    std::set<std::string> seen;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto t = trim(line);
        if (t.empty() || t.front() == '#') {
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw ParseError("line " + std::to_string(line_no) + ": expected key = value");
        }
        std::string key(trim(t.substr(0, eq)));
        if (key.empty()) {
            throw ParseError("line " + std::to_string(line_no) + ": empty key");
        }
        if (!seen.insert(key).second) {
            throw ParseError("line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
        }
        out.emplace_back(std::move(key), interpolate_env(trim(t.substr(eq + 1)), env));
    }
    return out;
}

std::string_view to_string(RunMode mode)
{
    switch (mode) {
    case RunMode::Fixed:
        return "fixed";
    case RunMode::DyplanBase:
        return "dyplan-base";
    case RunMode::DyplanVerify:
        return "dyplan-verify";
    }
    return "fixed";
}

RunMode run_mode_from_string(std::string_view name)
{
    if (name == "fixed") {
        return RunMode::Fixed;
    }
    if (name == "dyplan-base") {
        return RunMode::DyplanBase;
    }
    if (name == "dyplan-verify") {
        return RunMode::DyplanVerify;
    }
    throw ConfigError("unknown mode '" + std::string(name) + "' (expected fixed, dyplan-base or dyplan-verify)");
}

namespace {

template <typename T>
T parse_number(std::string_view key, std::string_view value)
{
    T out{};
    const auto* end = value.data() + value.size();
    const auto [ptr, ec] = std::from_chars(value.data(), end, out);
    if (ec != std::errc{} || ptr != end) {
        throw ConfigError("'" + std::string(key) + "' expects a number, got '" + std::string(value) + "'");
    }
    return out;
}

double parse_double(std::string_view key, std::string_view value)
{
    try {
        std::size_t used = 0;
        const std::string s(value);
        const double v = std::stod(s, &used);
        if (used == s.size()) {
            return v;
        }
    } catch (const std::exception&) {
    }
    throw ConfigError("'" + std::string(key) + "' expects a real number, got '" + std::string(value) + "'");
}

bool parse_bool(std::string_view key, std::string_view value)
{
    if (value == "true" || value == "1" || value == "yes") {
        return true;
    }
    if (value == "false" || value == "0" || value == "no") {
        return false;
    }
    throw ConfigError("'" + std::string(key) + "' expects true or false, got '" + std::string(value) + "'");
}

fs::path resolve(std::string_view value, const fs::path& base_dir)
{
    fs::path p{std::string(value)};
    if (p.empty() || p.is_absolute() || base_dir.empty()) {
        return p;
    }
    return base_dir / p;
}

std::string read_file(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ConfigError("cannot open config file: " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

void set_backend_key(BackendConfig& c, std::string_view key, std::string_view value, const fs::path& base_dir)
{
    constexpr std::string_view kTokens = "oracle.tokens.";
    if (key == "kind") {
        c.kind = std::string(value);
    } else if (key == "endpoint") {
        c.http.endpoint = std::string(value);
    } else if (key == "model") {
        c.http.model = std::string(value);
    } else if (key == "temperature") {
        c.http.temperature = parse_double(key, value);
    } else if (key == "api_key_env") {
        c.http.api_key_env = std::string(value);
    } else if (key == "timeout") {
        c.http.timeout_seconds = parse_number<int>(key, value);
    } else if (key == "max_retries") {
        c.http.max_retries = parse_number<int>(key, value);
    } else if (key == "backoff_ms") {
        c.http.backoff_ms = parse_number<int>(key, value);
    } else if (key == "script") {
        c.script = resolve(value, base_dir);
    } else if (key == "oracle_table") {
        c.oracle_table = resolve(value, base_dir);
    } else if (key == "oracle.decision") {
        c.oracle.decision = std::string(value);
    } else if (key == "oracle.verifier") {
        c.oracle.verifier = std::string(value);
    } else if (key == "oracle.default_tokens") {
        c.oracle.default_tokens = parse_number<std::size_t>(key, value);
    } else if (key.starts_with(kTokens)) {
        c.oracle.token_profile[std::string(key.substr(kTokens.size()))] = parse_number<std::size_t>(key, value);
    } else if (key == "cache") {
        c.cache = resolve(value, base_dir);
    } else if (key == "parallelism") {
        c.parallelism = parse_number<std::size_t>(key, value);
    } else {
        throw ConfigError("unknown backend key '" + std::string(key) + "'");
    }
}

void RunConfig::set(std::string_view key, std::string_view value, const fs::path& base_dir)
{
    if (key.starts_with("backend.")) {
        set_backend_key(backend, key.substr(8), value, base_dir);
    } else if (key == "dataset") {
        dataset = resolve(value, base_dir);
    } else if (key == "format") {
        format = dataset_format_from_string(value);
    } else if (key == "strategies") {
        strategies = split(value, ',');
    } else if (key == "mode") {
        mode = run_mode_from_string(value);
    } else if (key == "rounds") {
        rounds = parse_number<int>(key, value);
    } else if (key == "index") {
        index = resolve(value, base_dir);
    } else if (key == "templates") {
        templates = resolve(value, base_dir);
    } else if (key == "shots") {
        shots = resolve(value, base_dir);
    } else if (key == "decision_shots") {
        decision_shots = resolve(value, base_dir);
    } else if (key == "zero_shot") {
        zero_shot = parse_bool(key, value);
    } else if (key == "top_k") {
        top_k = parse_number<std::size_t>(key, value);
    } else if (key == "decision_fallback") {
        decision_fallback = std::string(value);
    } else if (key == "w_token") {
        weights.w_token = parse_double(key, value);
    } else if (key == "w_retrieval") {
        weights.w_retrieval = parse_double(key, value);
    } else if (key == "seed") {
        seed = parse_number<std::uint64_t>(key, value);
    } else if (key == "out") {
        out = resolve(value, base_dir);
    } else if (key == "parallelism") {
        backend.parallelism = parse_number<std::size_t>(key, value);
    } else {
        throw ConfigError("unknown config key '" + std::string(key) + "'");
    }
}

void RunConfig::validate() const
{
    if (dataset.empty()) {
        throw ConfigError("no dataset given");
    }
    if (out.empty()) {
        throw ConfigError("no output directory given");
    }
    if (rounds < 1) {
        throw ConfigError("rounds must be at least 1");
    }
    if (top_k == 0) {
        throw ConfigError("top_k must be at least 1");
    }
    weights.validate();
    backend.validate();

    // Rejects unknown names and duplicates.
    const auto specs = select_strategies(default_strategies(), strategies);
    const bool wants_retrieval =
        std::any_of(specs.begin(), specs.end(), [](const StrategySpec& s) { return s.needs_retrieval; });
    if (wants_retrieval && index.empty()) {
        throw ConfigError("strategy 'retrieval' needs an index path");
    }
    if (!decision_fallback.empty() &&
        std::find(strategies.begin(), strategies.end(), decision_fallback) == strategies.end()) {
        throw ConfigError("decision_fallback '" + decision_fallback + "' is not a selected strategy");
    }
    if (mode == RunMode::Fixed && shots.empty() && !zero_shot) {
        throw ConfigError("fixed mode needs a shots directory or zero_shot = true");
    }
    if (mode == RunMode::Fixed && !decision_shots.empty()) {
        throw ConfigError("decision_shots only apply to dyplan modes");
    }
}

nlohmann::ordered_json RunConfig::to_json() const
{
    nlohmann::ordered_json j;
    j["dataset"] = dataset.generic_string();
    j["format"] = format == DatasetFormat::Canonical ? "canonical" : "hotpotqa";
    j["strategies"] = strategies;
    j["mode"] = std::string(to_string(mode));
    j["rounds"] = rounds;
    j["index"] = index.generic_string();
    j["templates"] = templates.generic_string();
    j["shots"] = shots.generic_string();
    j["decision_shots"] = decision_shots.generic_string();
    j["zero_shot"] = zero_shot;
    j["top_k"] = top_k;
    j["decision_fallback"] = decision_fallback;
    j["w_token"] = weights.w_token;
    j["w_retrieval"] = weights.w_retrieval;
    j["seed"] = seed;
    auto& b = j["backend"];
    b["kind"] = backend.kind;
    if (backend.kind == "http") {
        b["endpoint"] = backend.http.endpoint;
        b["model"] = backend.http.model;
        b["temperature"] = backend.http.temperature;
        b["api_key_env"] = backend.http.api_key_env;  // the name, never the value
        b["timeout"] = backend.http.timeout_seconds;
        b["max_retries"] = backend.http.max_retries;
    } else if (backend.kind == "scripted") {
        b["script"] = backend.script.generic_string();
    } else {
        b["oracle_table"] = backend.oracle_table.generic_string();
        b["oracle_decision"] = backend.oracle.decision;
        b["oracle_verifier"] = backend.oracle.verifier;
        b["oracle_tokens"] = backend.oracle.token_profile;
        b["oracle_default_tokens"] = backend.oracle.default_tokens;
    }
    b["cache"] = backend.cache.generic_string();
    b["parallelism"] = backend.parallelism;
    return j;
}

RunConfig load_run_config(const fs::path& path, const EnvLookup& env)
{
    RunConfig config;
    const auto base = path.parent_path();
    for (const auto& [k, v] : parse_key_values(read_file(path), env)) {
        config.set(k, v, base);
    }
    return config;
}

BackendConfig load_backend_config(const fs::path& path, const EnvLookup& env)
{
    BackendConfig config;
    const auto base = path.parent_path();
    for (const auto& [k, v] : parse_key_values(read_file(path), env)) {
        const std::string_view key = k;
        set_backend_key(config, key.starts_with("backend.") ? key.substr(8) : key, v, base);
    }
    return config;
}

}  // namespace dyplan

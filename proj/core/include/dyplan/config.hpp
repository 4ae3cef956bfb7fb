#pragma once

#include "dyplan/backend.hpp"
#include "dyplan/dataset.hpp"
#include "dyplan/metrics.hpp"
#include "dyplan/pipeline.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace dyplan {

// One `key = value` pair per line; `#` starts a comment line. ${NAME} in a
// value expands to the environment variable NAME (unset is an error).
using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;

std::optional<std::string> process_env(const std::string& name);

std::string interpolate_env(std::string_view value, const EnvLookup& env = process_env);

std::vector<std::pair<std::string, std::string>> parse_key_values(std::string_view text,
                                                                  const EnvLookup& env = process_env);

enum class RunMode { Fixed, DyplanBase, DyplanVerify };

std::string_view to_string(RunMode mode);
RunMode run_mode_from_string(std::string_view name);

struct RunConfig {
    std::filesystem::path dataset;
    DatasetFormat format = DatasetFormat::Canonical;
    std::vector<std::string> strategies{"direct", "plan", "reason", "retrieval"};
    RunMode mode = RunMode::Fixed;
    int rounds = 2;
    BackendConfig backend;
    std::filesystem::path index;
    std::filesystem::path templates;       // empty uses the built-in set
    std::filesystem::path shots;           // empty runs zero-shot
    std::filesystem::path decision_shots;  // JSONL of decision exemplars
    bool zero_shot = false;
    std::size_t top_k = kDefaultTopK;
    std::string decision_fallback;
    CostWeights weights;
    std::uint64_t seed = 0;
    std::filesystem::path out;

    // Relative paths resolve against `base_dir`. Unknown keys are a ConfigError.
    void set(std::string_view key, std::string_view value, const std::filesystem::path& base_dir = {});

    // Checks everything that can be checked without touching a backend.
    void validate() const;

    // Canonical form used for the manifest digest.
    nlohmann::ordered_json to_json() const;
};

RunConfig load_run_config(const std::filesystem::path& path, const EnvLookup& env = process_env);

// Backend-only file: the same `backend.*` keys, with or without the prefix.
BackendConfig load_backend_config(const std::filesystem::path& path, const EnvLookup& env = process_env);

// Applies one `backend.*` key (prefix already removed).
void set_backend_key(BackendConfig& config, std::string_view key, std::string_view value,
                     const std::filesystem::path& base_dir = {});

}  // namespace dyplan

#pragma once

#include "dyplan/backend.hpp"
#include "dyplan/config.hpp"
#include "dyplan/metrics.hpp"

#include <nlohmann/json.hpp>

#include <atomic>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace dyplan {

std::string_view library_version();

inline constexpr const char* kOutcomeLog = "outcomes.jsonl";
inline constexpr const char* kTraceLog = "traces.jsonl";
inline constexpr const char* kReportFile = "report.json";
inline constexpr const char* kManifestFile = "manifest.json";

struct RunHooks {
    // Set asynchronously (e.g. from a SIGINT handler); unstarted questions are skipped.
    const std::atomic<bool>* cancel = nullptr;
    // Replaces the backend built from the config; the config is still validated.
    std::shared_ptr<Backend> backend;
    // ISO-8601 UTC timestamps for the manifest.
    std::function<std::string()> clock;
};

struct RunResult {
    int exit_code = 0;  // 0 clean, 1 per-question failures, 130 interrupted
    std::size_t questions = 0;
    std::size_t completed = 0;
    std::vector<std::string> failures;  // "<question id>: <message>"
    std::filesystem::path log;
    std::filesystem::path report;
    std::filesystem::path manifest;
};

// Validates everything up front, then runs the configured mode and writes the
// log, report and manifest into config.out. Logs of completed questions are
// written even when the run is interrupted.
RunResult run_command(const RunConfig& config, const RunHooks& hooks = {});

// Report JSON from an outcome or trace log alone.
nlohmann::ordered_json build_report(const std::filesystem::path& log, const CostWeights& weights);

// Exact bytes written to report.json.
std::string render_report(const std::filesystem::path& log, const CostWeights& weights);

std::string utc_timestamp();

}  // namespace dyplan

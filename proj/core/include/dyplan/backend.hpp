#pragma once

#include <atomic>
#include <cstddef>
#include <filesystem>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

namespace dyplan {

enum class Role { System, User, Assistant };

std::string_view to_string(Role role);
Role role_from_string(std::string_view name);

struct ChatMessage {
    Role role = Role::User;
    std::string content;

    bool operator==(const ChatMessage&) const = default;
};

enum class FinishReason { Stop, Length, Scripted };

std::string_view to_string(FinishReason reason);
FinishReason finish_reason_from_string(std::string_view name);

struct Generation {
    std::string text;
    std::size_t gen_tokens = 0;
    FinishReason finish_reason = FinishReason::Stop;
    // False when gen_tokens is the whitespace approximation.
    bool usage_reported = true;

    bool operator==(const Generation&) const = default;
};

enum class Component { Fixed, Decision, Execution, Verification };

// Identifies which turn of which question a request belongs to. Rendered as
//   <qid>/fixed/<strategy>      <qid>/r<k>/decision
//   <qid>/r<k>/exec/<strategy>  <qid>/r<k>/verify/<strategy>
// with a "/force" suffix for forced-decoding continuations. Scripted backends
// resolve requests by this string; the oracle backend reads its fields.
struct RequestTag {
    std::string question_id;
    Component component = Component::Fixed;
    int round = 0;
    std::string strategy;
    bool forced = false;
    // Strategies offered to a Decision turn, in preference order.
    std::vector<std::string> offered;

    std::string str() const;
};

struct GenerationRequest {
    std::vector<ChatMessage> messages;
    std::size_t max_tokens = 0;
    std::vector<std::string> stop;
    RequestTag tag;
};

// Truncates at the earliest occurrence of any stop sequence. Returns true if cut.
bool truncate_at_stop(std::string& text, const std::vector<std::string>& stop);

// Digest over (kind, model, temperature, messages, max_tokens, stop). Non-http kinds
// also mix in the request tag, since their output depends on it.
std::string request_digest(std::string_view kind, std::string_view model, double temperature,
                           const GenerationRequest& request);

class Backend {
public:
    virtual ~Backend() = default;

    // Validates the request, calls the implementation, and applies stop truncation.
    Generation generate(const GenerationRequest& request);

    virtual std::string kind() const = 0;
    virtual std::string model() const { return {}; }
    virtual double temperature() const { return 0.0; }

    // Number of requests that reached the implementation.
    std::size_t call_count() const { return calls_.load(); }

    std::string digest(const GenerationRequest& request) const
    {
        return request_digest(kind(), model(), temperature(), request);
    }

protected:
    virtual Generation do_generate(const GenerationRequest& request) = 0;

private:
    std::atomic<std::size_t> calls_{0};
};

struct ScriptEntry {
    std::string text;
    std::optional<std::size_t> gen_tokens;
};

// Table-driven backend. A request is resolved by, in order: its digest, its tag
// string, and its tag string with the question id replaced by "*".
class ScriptedBackend final : public Backend {
public:
    explicit ScriptedBackend(std::map<std::string, ScriptEntry> entries);

    // JSONL of {"key", "text", "gen_tokens"?}.
    static std::unique_ptr<ScriptedBackend> from_file(const std::filesystem::path& path);

    std::string kind() const override { return "scripted"; }

protected:
    Generation do_generate(const GenerationRequest& request) override;

private:
    std::map<std::string, ScriptEntry> entries_;
};

// Planted-truth row: which strategies answer this question correctly.
struct OracleRow {
    std::string question_id;
    std::vector<std::string> answers;
    std::map<std::string, bool> correct;
};

struct OracleOptions {
    // Generated tokens reported per strategy for execution turns.
    std::map<std::string, std::size_t> token_profile{
        {"direct", 8}, {"plan", 160}, {"reason", 110}, {"retrieval", 90}};
    std::size_t default_tokens = 50;
    // "optimal" picks the first correct offered strategy, else the last offered;
    // any other value must be a strategy name and is always emitted.
    std::string decision = "optimal";
    // "perfect" says yes exactly when the round's strategy is correct; "yes"/"no" are constant.
    std::string verifier = "perfect";
};

// Answers from a planted correctness table: correct cells emit the first gold
// answer, incorrect cells emit a distractor sharing no tokens with any gold.
class OracleBackend final : public Backend {
public:
    OracleBackend(std::vector<OracleRow> rows, OracleOptions options = {});

    // JSONL of {"id", "answers": [...], "correct": {"<strategy>": bool|0|1}}.
    static std::vector<OracleRow> load_table(const std::filesystem::path& path);

    std::string kind() const override { return "oracle"; }

    const OracleRow& row(std::string_view question_id) const;
    static std::string distractor_for(const std::vector<std::string>& answers);

protected:
    Generation do_generate(const GenerationRequest& request) override;

private:
    std::unordered_map<std::string, OracleRow> rows_;
    OracleOptions options_;
};

struct HttpOptions {
    // Full URL of the chat-completions route, e.g. http://localhost:8000/v1/chat/completions
    std::string endpoint;
    std::string model;
    double temperature = 0.4;
    // Environment variable holding the bearer token; unset or empty sends no Authorization.
    std::string api_key_env = "OPENAI_API_KEY";
    int timeout_seconds = 120;
    int max_retries = 3;
    int backoff_ms = 500;
};

// Chat-completion client. Transport errors and non-2xx statuses are retried with
// exponential backoff; malformed bodies fail immediately with ParseError.
class HttpBackend final : public Backend {
public:
    explicit HttpBackend(HttpOptions options);

    std::string kind() const override { return "http"; }
    std::string model() const override { return options_.model; }
    double temperature() const override { return options_.temperature; }

    static nlohmann::json build_request_body(const HttpOptions& options, const GenerationRequest& request);
    static Generation parse_response_body(std::string_view body);

protected:
    Generation do_generate(const GenerationRequest& request) override;

private:
    HttpOptions options_;
    std::string scheme_host_port_;
    std::string path_;
};

// Persistent append-only JSONL cache in front of another backend.
// A corrupt cache file is an error, never silently regenerated.
class CachedBackend final : public Backend {
public:
    CachedBackend(std::shared_ptr<Backend> inner, std::filesystem::path cache_path);

    std::string kind() const override { return inner_->kind(); }
    std::string model() const override { return inner_->model(); }
    double temperature() const override { return inner_->temperature(); }

    Backend& inner() { return *inner_; }
    std::size_t size() const;

protected:
    Generation do_generate(const GenerationRequest& request) override;

private:
    void load();
    void append(const std::string& key, const Generation& generation);

    std::shared_ptr<Backend> inner_;
    std::filesystem::path path_;
    mutable std::mutex mutex_;
    std::unordered_map<std::string, Generation> entries_;
    std::unordered_map<std::string, std::shared_future<Generation>> in_flight_;
};

struct BackendConfig {
    std::string kind = "scripted";  // http | scripted | oracle
    HttpOptions http;
    std::filesystem::path script;
    std::filesystem::path oracle_table;
    OracleOptions oracle;
    std::filesystem::path cache;  // empty disables caching
    std::size_t parallelism = 4;

    // Rejects missing or foreign fields for the chosen kind.
    void validate() const;
};

std::shared_ptr<Backend> make_backend(const BackendConfig& config);

nlohmann::json to_json(const ChatMessage& message);
ChatMessage message_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Generation& generation);
Generation generation_from_json(const nlohmann::json& j);

}  // namespace dyplan

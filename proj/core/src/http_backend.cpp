#include "dyplan/backend.hpp"

#include "dyplan/error.hpp"
#include "dyplan/text.hpp"

#include <httplib.h>

#include <chrono>
#include <cstdlib>
#include <thread>

namespace dyplan {

namespace {

// Splits "scheme://host[:port]/path" into ("scheme://host[:port]", "/path").
std::pair<std::string, std::string> split_endpoint(const std::string& url)
{
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) {
        throw ConfigError("endpoint must be an absolute http(s) URL: " + url);
    }
    const auto scheme = url.substr(0, scheme_end);
    if (scheme != "http" && scheme != "https") {
        throw ConfigError("unsupported endpoint scheme '" + scheme + "'");
    }
    const auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) {
        return {url, "/v1/chat/completions"};
    }
    return {url.substr(0, path_start), url.substr(path_start)};
}

}  // namespace

HttpBackend::HttpBackend(HttpOptions options)
    : options_(std::move(options))
{
    if (options_.temperature < 0.0) {
        throw ConfigError("temperature must be >= 0");
    }
    std::tie(scheme_host_port_, path_) = split_endpoint(options_.endpoint);
}

nlohmann::json HttpBackend::build_request_body(const HttpOptions& options, const GenerationRequest& request)
{
    nlohmann::ordered_json body;
    body["model"] = options.model;
    auto& messages = body["messages"] = nlohmann::ordered_json::array();
    for (const auto& m : request.messages) {
        messages.push_back({{"role", to_string(m.role)}, {"content", m.content}});
    }
    body["max_tokens"] = request.max_tokens;
    body["temperature"] = options.temperature;
    if (!request.stop.empty()) {
        body["stop"] = request.stop;
    }
    return body;
}

Generation HttpBackend::parse_response_body(std::string_view body)
{
    try {
        const auto j = nlohmann::json::parse(body);
        const auto& choice = j.at("choices").at(0);
        Generation g;
        const auto& content = choice.at("message").at("content");
        g.text = content.is_null() ? std::string{} : content.get<std::string>();
        const auto reason = choice.value("finish_reason", std::string("stop"));
        g.finish_reason = reason == "length" ? FinishReason::Length : FinishReason::Stop;
        if (j.contains("usage") && j["usage"].is_object() && j["usage"].contains("completion_tokens")) {
            g.gen_tokens = j["usage"]["completion_tokens"].get<std::size_t>();
            g.usage_reported = true;
        } else {
            g.gen_tokens = whitespace_token_count(g.text);
            g.usage_reported = false;
        }
        return g;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed chat-completion response: ") + e.what());
    }
}

Generation HttpBackend::do_generate(const GenerationRequest& request)
{
    const auto payload = build_request_body(options_, request).dump();
    httplib::Headers headers;
    if (const char* key = std::getenv(options_.api_key_env.c_str()); key != nullptr && *key != '\0') {
        headers.emplace("Authorization", std::string("Bearer ") + key);
    }

    std::string last_error;
    for (int attempt = 0; attempt <= options_.max_retries; ++attempt) {
        if (attempt > 0) {
            std::this_thread::sleep_for(std::chrono::milliseconds(options_.backoff_ms) * (1 << (attempt - 1)));
        }
        httplib::Client client(scheme_host_port_);
        client.set_connection_timeout(options_.timeout_seconds, 0);
        client.set_read_timeout(options_.timeout_seconds, 0);
        client.set_write_timeout(options_.timeout_seconds, 0);
        auto response = client.Post(path_, headers, payload, "application/json");
        if (!response) {
            last_error = "transport error: " + httplib::to_string(response.error());
            continue;
        }
        if (response->status < 200 || response->status >= 300) {
            last_error = "HTTP " + std::to_string(response->status) + ": " + response->body.substr(0, 200);
            continue;
        }
        return parse_response_body(response->body);
    }
    throw TransportError(options_.endpoint + ": " + last_error + " (after " +
                         std::to_string(options_.max_retries + 1) + " attempts)");
}

}  // namespace dyplan

#pragma once

#include <cstdlib>
#include <optional>
#include <string>
#include <utility>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "pgkd/teacher.hpp"
#include "pgkd/text.hpp"

namespace pgkd {

// Generic chat-completion endpoint. Provider specifics (Bedrock, an OpenAI
// proxy, a local server) are a matter of configuration, not code.
struct HttpBackendConfig {
    std::string endpoint;  // e.g. http://localhost:8080/v1/chat/completions
    std::string model = "teacher";
    double temperature = 1.0;
    int max_output_tokens = 4096;
    int timeout_seconds = 120;
    std::string credential_env;  // env var holding a bearer token; empty = none
};

class HttpChatBackend : public TeacherBackend {
public:
    explicit HttpChatBackend(HttpBackendConfig config) : config_(std::move(config)) {}

    CompletionResult complete(const std::string& prompt) override {
        std::string host;
        std::string path;
        if (!split_endpoint(config_.endpoint, host, path)) {
            return CompletionResult::failure("unsupported endpoint (need http://host[:port]/path): " +
                                             config_.endpoint);
        }

        nlohmann::ordered_json body;
        body["model"] = config_.model;
        body["messages"] = nlohmann::json::array({
            nlohmann::ordered_json{{"role", "user"}, {"content", prompt}},
        });
        body["temperature"] = config_.temperature;
        body["max_tokens"] = config_.max_output_tokens;

        httplib::Client client(host);
        client.set_connection_timeout(config_.timeout_seconds, 0);
        client.set_read_timeout(config_.timeout_seconds, 0);
        httplib::Headers headers;
        if (!config_.credential_env.empty()) {
            if (const char* token = std::getenv(config_.credential_env.c_str())) {
                headers.emplace("Authorization", std::string("Bearer ") + token);
            } else {
                return CompletionResult::failure("credential env var not set: " +
                                                 config_.credential_env);
            }
        }

        auto res = client.Post(path, headers, body.dump(), "application/json");
        if (!res) {
            return CompletionResult::failure("transport error: " + httplib::to_string(res.error()));
        }
        if (res->status != 200) {
            return CompletionResult::failure("http status " + std::to_string(res->status));
        }

        nlohmann::json doc = nlohmann::json::parse(res->body, nullptr, false);
        if (doc.is_discarded()) {
            return CompletionResult::failure("response body is not JSON");
        }
        std::string content;
        try {
            content = doc.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const std::exception&) {
            return CompletionResult::failure("response missing choices[0].message.content");
        }

        TokenUsage usage;
        if (doc.contains("usage") && doc["usage"].is_object()) {
            const auto& u = doc["usage"];
            usage.input_tokens = u.value("prompt_tokens", u.value("input_tokens", 0L));
            usage.output_tokens = u.value("completion_tokens", u.value("output_tokens", 0L));
        }
        if (usage.input_tokens == 0 && usage.output_tokens == 0) {
            usage.input_tokens = approx_token_count(prompt);
            usage.output_tokens = approx_token_count(content);
        }
        return CompletionResult::success(std::move(content), usage);
    }

    // Each call builds its own client, so fan-out is safe.
    bool concurrent_safe() const override { return true; }

private:
    static bool split_endpoint(const std::string& endpoint, std::string& host, std::string& path) {
        const std::string scheme = "http://";
        if (endpoint.rfind(scheme, 0) != 0) return false;
        const std::size_t slash = endpoint.find('/', scheme.size());
        if (slash == std::string::npos) {
            host = endpoint;
            path = "/";
        } else {
            host = endpoint.substr(0, slash);
            path = endpoint.substr(slash);
        }
        return true;
    }

    HttpBackendConfig config_;
};

}  // namespace pgkd

#pragma once

#include "imprint/error.hpp"

#include <json.hpp>

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <vector>

namespace imprint {

// ---------------------------------------------------------------------------
// Chat
// ---------------------------------------------------------------------------

enum class FinishReason { stop, length, error };

std::string to_string(FinishReason r);

struct ChatRequest {
    std::string model_id;
    std::string system;
    std::string user;
    int max_tokens = 1024;
    double temperature = 0.0;
    std::optional<nlohmann::json> response_schema;
};

struct ChatResponse {
    std::string text;
    FinishReason finish_reason = FinishReason::stop;
};

class ChatProvider {
public:
    virtual ~ChatProvider() = default;
    virtual std::string id() const = 0;
    virtual ChatResponse chat(const ChatRequest& req) = 0;
};

/// Structured output did not satisfy its schema within the retry budget.
class SchemaError : public ProviderError {
public:
    SchemaError(const std::string& what, std::string last_text)
        : ProviderError(what, false), last_text_(std::move(last_text)) {}
    const std::string& last_text() const { return last_text_; }

private:
    std::string last_text_;
};

/// Retry budget with exponential backoff. Jitter is drawn from `seed`, so the
/// delay sequence is reproducible. `sleep` is injectable for tests.
struct RetryPolicy {
    int max_attempts = 3;
    std::chrono::milliseconds base_delay{500};
    double multiplier = 2.0;
    double jitter = 0.25; ///< relative, delay scaled by 1 ± jitter
    std::uint64_t seed = 0;
    std::function<void(std::chrono::milliseconds)> sleep;

    std::chrono::milliseconds delay(int attempt) const;
    void wait(int attempt) const;

    static RetryPolicy immediate(int attempts = 3);
};

/// Runs `fn` until it succeeds, a non-retriable ProviderError escapes, or the
/// budget is spent (the last retriable error is rethrown as permanent).
template <typename F>
auto with_retry(const RetryPolicy& policy, F&& fn) -> decltype(fn()) {
    for (int attempt = 0;; ++attempt) {
        try {
            return fn();
        } catch (const ProviderError& e) {
            if (!e.retriable()) throw;
            if (attempt + 1 >= policy.max_attempts)
                throw ProviderError(std::string(e.what()) + " (retry budget of " + std::to_string(policy.max_attempts) +
                                        " attempts exhausted)",
                                    false);
            policy.wait(attempt);
        }
    }
}

/// Validates `value` against the JSON-schema subset used for structured output:
/// type, properties, required, minimum, maximum, enum, items.
/// Returns a description of the first violation, or nullopt.
std::optional<std::string> schema_violation(const nlohmann::json& value, const nlohmann::json& schema);

/// Pulls the JSON object out of a model reply (tolerates code fences and prose around it).
std::optional<nlohmann::json> extract_json(const std::string& text);

struct StructuredReply {
    nlohmann::json value;
    std::string text;
    int attempts = 0;
};

/// Chat call whose reply must parse against `req.response_schema`. Schema
/// failures are retried up to `policy.max_attempts`; afterwards SchemaError.
StructuredReply chat_structured(ChatProvider& provider, const ChatRequest& req, const RetryPolicy& policy);

/// Offline chat provider: replies are a pure function of (seed, request).
class MockChatProvider : public ChatProvider {
public:
    using Responder = std::function<std::string(const ChatRequest&, std::uint64_t seed)>;

    MockChatProvider(std::string id, Responder responder, std::uint64_t seed = 0)
        : id_(std::move(id)), responder_(std::move(responder)), seed_(seed) {}

    std::string id() const override { return id_; }
    ChatResponse chat(const ChatRequest& req) override;
    std::size_t calls() const { return calls_.load(); }

private:
    std::string id_;
    Responder responder_;
    std::uint64_t seed_;
    std::atomic<std::size_t> calls_{0};
};

/// Always returns `text`.
MockChatProvider::Responder fixed_responder(std::string text);
/// Replies with a schema-conforming object for the LLM-only prompt whose
/// values are hashed from the prompt and seed.
MockChatProvider::Responder nmr_mock_responder();

// ---------------------------------------------------------------------------
// Embeddings
// ---------------------------------------------------------------------------

struct EmbedRequest {
    std::string provider_id;
    std::vector<std::string> texts;
    int max_context_tokens = 8192;
};

struct EmbedResponse {
    std::vector<std::vector<double>> vectors;
    std::vector<bool> truncated;
};

class EmbedProvider {
public:
    virtual ~EmbedProvider() = default;
    virtual std::string id() const = 0;
    virtual EmbedResponse embed(const EmbedRequest& req) = 0;
};

/// Approximate token count: whitespace-separated words × 1.3, rounded up.
std::size_t approx_tokens(const std::string& text);

/// Keeps the leading words that fit in `max_tokens`; second is true when
/// anything was dropped.
std::pair<std::string, bool> truncate_to_context(const std::string& text, int max_tokens);

/// Deterministic offline embedder: every lower-cased word token (plus a
/// token-count feature) is hashed with the seed to a fixed Gaussian row of a
/// virtual projection matrix; rows are summed and the result L2-normalized.
class HashEmbedder : public EmbedProvider {
public:
    HashEmbedder(std::size_t dim, std::uint64_t seed, std::string id = "mock-hash");

    std::string id() const override { return id_; }
    std::size_t dim() const { return dim_; }
    EmbedResponse embed(const EmbedRequest& req) override;
    std::vector<double> embed_one(const std::string& text) const;

private:
    std::size_t dim_;
    std::uint64_t seed_;
    std::string id_;
};

// ---------------------------------------------------------------------------
// Search tools
// ---------------------------------------------------------------------------

struct SearchResult {
    int rank = 1;
    std::string title;
    std::string snippet;
    std::string url;
};

/// Tool call result. Failures never throw into the agent; they surface as
/// an empty result list plus an error message.
struct ToolOutcome {
    std::vector<SearchResult> results;
    std::optional<std::string> error;
};

class SearchProvider {
public:
    virtual ~SearchProvider() = default;
    virtual ToolOutcome wiki_lookup(const std::string& query) = 0;
    virtual ToolOutcome web_search(const std::string& query, int k = 10) = 0;
};

/// Lower-cased, trimmed, whitespace-collapsed query used as fixture key.
std::string normalize_query(const std::string& query);

/// Serves results from fixtures/<tool>/<sha256(normalized query)>.json where
/// tool is "wiki" or "search".
class FixtureSearchProvider : public SearchProvider {
public:
    explicit FixtureSearchProvider(std::filesystem::path root) : root_(std::move(root)) {}

    ToolOutcome wiki_lookup(const std::string& query) override;
    ToolOutcome web_search(const std::string& query, int k = 10) override;

    static std::filesystem::path fixture_path(const std::filesystem::path& root, const std::string& tool,
                                              const std::string& query);
    static void write_fixture(const std::filesystem::path& root, const std::string& tool, const std::string& query,
                              const std::vector<SearchResult>& results);

private:
    ToolOutcome serve(const std::string& tool, const std::string& query, int k);
    std::filesystem::path root_;
};

// ---------------------------------------------------------------------------
// Remote HTTP providers
// ---------------------------------------------------------------------------

/// Caps in-flight calls and average request rate for one provider.
class RateLimiter {
public:
    RateLimiter(int max_concurrency, double requests_per_second);

    class Permit {
    public:
        explicit Permit(RateLimiter* owner) : owner_(owner) {}
        Permit(Permit&& other) noexcept : owner_(std::exchange(other.owner_, nullptr)) {}
        Permit(const Permit&) = delete;
        Permit& operator=(const Permit&) = delete;
        ~Permit();

    private:
        RateLimiter* owner_;
    };

    Permit acquire();
    int in_flight() const { return in_flight_.load(); }

private:
    std::counting_semaphore<1024> slots_;
    double rps_;
    std::mutex mu_;
    std::chrono::steady_clock::time_point next_slot_{};
    std::atomic<int> in_flight_{0};
};

/// Generic JSON-over-HTTP endpoint. The request template is JSON text in which
/// placeholders such as {{model}}, {{system}}, {{user}}, {{input}}, {{query}},
/// {{k}}, {{max_tokens}} and {{temperature}} are replaced by JSON-encoded values.
struct HttpEndpoint {
    std::string base_url;         ///< scheme://host[:port]
    std::string path;             ///< e.g. /v1/chat/completions
    std::string method = "POST";  ///< POST (template body) or GET (template as query string)
    std::string auth_env;         ///< env var holding the credential; empty for none
    std::string auth_header = "Authorization";
    std::string auth_prefix = "Bearer ";
    std::string request_template;
    std::string response_pointer; ///< JSON pointer to the payload in the reply
    int timeout_seconds = 60;
    int max_concurrency = 4;
    double requests_per_second = 0.0; ///< 0 = unlimited
};

std::string render_template(const std::string& tmpl, const std::map<std::string, nlohmann::json>& values);

class HttpChatProvider : public ChatProvider {
public:
    HttpChatProvider(std::string id, HttpEndpoint endpoint, RetryPolicy retry);
    ~HttpChatProvider() override;

    std::string id() const override { return id_; }
    ChatResponse chat(const ChatRequest& req) override;

private:
    std::string id_;
    HttpEndpoint endpoint_;
    RetryPolicy retry_;
    RateLimiter limiter_;
};

/// Embedding endpoint. `response_pointer` locates the array of items and
/// `vector_pointer` the vector inside each item (e.g. "/data" and "/embedding").
class HttpEmbedProvider : public EmbedProvider {
public:
    HttpEmbedProvider(std::string id, HttpEndpoint endpoint, RetryPolicy retry, std::string vector_pointer,
                      std::size_t batch_size = 64);
    ~HttpEmbedProvider() override;

    std::string id() const override { return id_; }
    EmbedResponse embed(const EmbedRequest& req) override;

private:
    std::vector<std::vector<double>> embed_batch(const std::vector<std::string>& texts);

    std::string id_;
    HttpEndpoint endpoint_;
    RetryPolicy retry_;
    std::string vector_pointer_;
    std::size_t batch_size_;
    RateLimiter limiter_;
};

/// Search endpoint returning an array of {title, snippet, url} objects at
/// `response_pointer`. One endpoint per tool.
class HttpSearchProvider : public SearchProvider {
public:
    HttpSearchProvider(HttpEndpoint wiki, HttpEndpoint search, RetryPolicy retry);
    ~HttpSearchProvider() override;

    ToolOutcome wiki_lookup(const std::string& query) override;
    ToolOutcome web_search(const std::string& query, int k = 10) override;

private:
    ToolOutcome call(const HttpEndpoint& ep, RateLimiter& limiter, const std::string& query, int k);

    HttpEndpoint wiki_;
    HttpEndpoint search_;
    RetryPolicy retry_;
    RateLimiter wiki_limiter_;
    RateLimiter search_limiter_;
};

// ---------------------------------------------------------------------------
// Registry
// ---------------------------------------------------------------------------

/// Maps model ids and provider ids to provider instances.
class ProviderRegistry {
public:
    void add_chat(const std::string& model_id, std::shared_ptr<ChatProvider> p) { chat_[model_id] = std::move(p); }
    void add_embedder(const std::string& provider_id, std::shared_ptr<EmbedProvider> p) {
        embed_[provider_id] = std::move(p);
    }
    void set_search(std::shared_ptr<SearchProvider> p) { search_ = std::move(p); }

    ChatProvider& chat(const std::string& model_id) const;
    EmbedProvider& embedder(const std::string& provider_id) const;
    SearchProvider& search() const;
    bool has_search() const { return search_ != nullptr; }

private:
    std::map<std::string, std::shared_ptr<ChatProvider>> chat_;
    std::map<std::string, std::shared_ptr<EmbedProvider>> embed_;
    std::shared_ptr<SearchProvider> search_;
};

} // namespace imprint

#include "imprint/providers.hpp"

#include "imprint/util.hpp"

#include <httplib.h>
#include <spdlog/spdlog.h>

#include <cstdlib>

namespace imprint {

using json = nlohmann::json;

std::string render_template(const std::string& tmpl, const std::map<std::string, json>& values) {
    std::string out;
    std::size_t pos = 0;
    while (true) {
        const auto open = tmpl.find("{{", pos);
        if (open == std::string::npos) {
            out.append(tmpl, pos, std::string::npos);
            break;
        }
        const auto close = tmpl.find("}}", open + 2);
        if (close == std::string::npos) throw ConfigError("unterminated placeholder in request template");
        out.append(tmpl, pos, open - pos);
        const auto name = trim(std::string_view(tmpl).substr(open + 2, close - open - 2));
        auto it = values.find(name);
        if (it == values.end()) throw ConfigError("request template uses unknown placeholder '{{" + name + "}}'");
        out += it->second.dump();
        pos = close + 2;
    }
    return out;
}

namespace {

struct HttpReply {
    int status = 0;
    std::string body;
};

httplib::Headers auth_headers(const HttpEndpoint& ep) {
    httplib::Headers headers;
    if (!ep.auth_env.empty()) {
        const char* secret = std::getenv(ep.auth_env.c_str());
        if (!secret || !*secret) throw ConfigError("environment variable " + ep.auth_env + " is not set");
        headers.emplace(ep.auth_header, ep.auth_prefix + secret);
    }
    return headers;
}

/// One HTTP exchange. Transport failures, 429 and 5xx are retriable.
json http_exchange(const HttpEndpoint& ep, const json& payload) {
    httplib::Client client(ep.base_url);
    client.set_connection_timeout(ep.timeout_seconds, 0);
    client.set_read_timeout(ep.timeout_seconds, 0);
    client.set_write_timeout(ep.timeout_seconds, 0);
    const auto headers = auth_headers(ep);

    httplib::Result res;
    if (ep.method == "GET") {
        httplib::Params params;
        if (payload.is_object())
            for (const auto& [k, v] : payload.items()) params.emplace(k, v.is_string() ? v.get<std::string>() : v.dump());
        res = client.Get(ep.path, params, headers);
    } else {
        res = client.Post(ep.path, headers, payload.dump(), "application/json");
    }
    if (!res) throw ProviderError(ep.base_url + ep.path + ": " + httplib::to_string(res.error()), true);
    if (res->status == 429 || res->status >= 500)
        throw ProviderError(ep.base_url + ep.path + ": HTTP " + std::to_string(res->status), true);
    if (res->status != 200)
        throw ProviderError(ep.base_url + ep.path + ": HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200),
                            false);
    try {
        return json::parse(res->body);
    } catch (const json::parse_error& e) {
        throw ProviderError(ep.base_url + ep.path + ": reply is not JSON: " + e.what(), false);
    }
}

json at_pointer(const json& doc, const std::string& pointer, const std::string& what) {
    if (pointer.empty()) return doc;
    try {
        return doc.at(json::json_pointer(pointer));
    } catch (const json::exception& e) {
        throw ProviderError(what + ": response has nothing at " + pointer + " (" + e.what() + ")", false);
    }
}

json render_payload(const HttpEndpoint& ep, const std::map<std::string, json>& values) {
    try {
        return json::parse(render_template(ep.request_template, values));
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("request template does not render to JSON: ") + e.what());
    }
}

} // namespace

// ---------------------------------------------------------------------------

HttpChatProvider::HttpChatProvider(std::string id, HttpEndpoint endpoint, RetryPolicy retry)
    : id_(std::move(id)), endpoint_(std::move(endpoint)), retry_(std::move(retry)),
      limiter_(endpoint_.max_concurrency, endpoint_.requests_per_second) {}

HttpChatProvider::~HttpChatProvider() = default;

ChatResponse HttpChatProvider::chat(const ChatRequest& req) {
    if (req.temperature < 0.0) throw ValidationError("temperature must be >= 0");
    const auto payload = render_payload(endpoint_, {{"model", req.model_id},
                                                    {"system", req.system},
                                                    {"user", req.user},
                                                    {"max_tokens", req.max_tokens},
                                                    {"temperature", req.temperature},
                                                    {"response_schema", req.response_schema.value_or(json(nullptr))}});
    return with_retry(retry_, [&] {
        auto permit = limiter_.acquire();
        const auto reply = http_exchange(endpoint_, payload);
        const auto text = at_pointer(reply, endpoint_.response_pointer, id_);
        if (!text.is_string()) throw ProviderError(id_ + ": chat payload is not a string", false);
        return ChatResponse{text.get<std::string>(), FinishReason::stop};
    });
}

// ---------------------------------------------------------------------------

HttpEmbedProvider::HttpEmbedProvider(std::string id, HttpEndpoint endpoint, RetryPolicy retry,
                                     std::string vector_pointer, std::size_t batch_size)
    : id_(std::move(id)), endpoint_(std::move(endpoint)), retry_(std::move(retry)),
      vector_pointer_(std::move(vector_pointer)), batch_size_(std::max<std::size_t>(1, batch_size)),
      limiter_(endpoint_.max_concurrency, endpoint_.requests_per_second) {}

HttpEmbedProvider::~HttpEmbedProvider() = default;

std::vector<std::vector<double>> HttpEmbedProvider::embed_batch(const std::vector<std::string>& texts) {
    const auto payload = render_payload(endpoint_, {{"model", id_}, {"input", texts}});
    return with_retry(retry_, [&] {
        auto permit = limiter_.acquire();
        const auto reply = http_exchange(endpoint_, payload);
        const auto items = at_pointer(reply, endpoint_.response_pointer, id_);
        if (!items.is_array() || items.size() != texts.size())
            throw ProviderError(id_ + ": expected " + std::to_string(texts.size()) + " embeddings", false);
        std::vector<std::vector<double>> out(texts.size());
        for (std::size_t i = 0; i < items.size(); ++i) {
            // Providers may return items out of order; an explicit index wins.
            const std::size_t slot = items[i].contains("index") ? items[i]["index"].get<std::size_t>() : i;
            if (slot >= out.size() || !out[slot].empty()) throw ProviderError(id_ + ": bad embedding index", false);
            const auto vec = at_pointer(items[i], vector_pointer_, id_);
            out[slot] = vec.get<std::vector<double>>();
        }
        return out;
    });
}

EmbedResponse HttpEmbedProvider::embed(const EmbedRequest& req) {
    EmbedResponse out;
    std::vector<std::string> prepared;
    for (const auto& text : req.texts) {
        if (trim(text).empty()) throw ValidationError("cannot embed an empty text");
        auto [kept, truncated] = truncate_to_context(text, req.max_context_tokens);
        prepared.push_back(std::move(kept));
        out.truncated.push_back(truncated);
    }
    for (std::size_t start = 0; start < prepared.size(); start += batch_size_) {
        const auto end = std::min(prepared.size(), start + batch_size_);
        auto batch = embed_batch({prepared.begin() + static_cast<std::ptrdiff_t>(start),
                                  prepared.begin() + static_cast<std::ptrdiff_t>(end)});
        for (auto& v : batch) out.vectors.push_back(std::move(v));
    }
    for (const auto& v : out.vectors)
        if (v.size() != out.vectors.front().size()) throw ProviderError(id_ + ": inconsistent embedding dims", false);
    return out;
}

// ---------------------------------------------------------------------------

HttpSearchProvider::HttpSearchProvider(HttpEndpoint wiki, HttpEndpoint search, RetryPolicy retry)
    : wiki_(std::move(wiki)), search_(std::move(search)), retry_(std::move(retry)),
      wiki_limiter_(wiki_.max_concurrency, wiki_.requests_per_second),
      search_limiter_(search_.max_concurrency, search_.requests_per_second) {}

HttpSearchProvider::~HttpSearchProvider() = default;

ToolOutcome HttpSearchProvider::call(const HttpEndpoint& ep, RateLimiter& limiter, const std::string& query, int k) {
    ToolOutcome out;
    try {
        const auto payload = render_payload(ep, {{"query", query}, {"k", k}});
        const auto items = with_retry(retry_, [&] {
            auto permit = limiter.acquire();
            return at_pointer(http_exchange(ep, payload), ep.response_pointer, ep.base_url);
        });
        if (!items.is_array()) throw ProviderError("search response is not an array", false);
        int rank = 1;
        for (const auto& item : items) {
            if (rank > k) break;
            out.results.push_back({rank++, item.value("title", ""), item.value("snippet", ""), item.value("url", "")});
        }
    } catch (const Error& e) {
        out.results.clear();
        out.error = e.what();
        spdlog::warn("tool error: {}", e.what());
    }
    return out;
}

ToolOutcome HttpSearchProvider::wiki_lookup(const std::string& query) { return call(wiki_, wiki_limiter_, query, 1); }

ToolOutcome HttpSearchProvider::web_search(const std::string& query, int k) {
    if (k < 1) return {{}, "search: k must be >= 1"};
    return call(search_, search_limiter_, query, k);
}

} // namespace imprint

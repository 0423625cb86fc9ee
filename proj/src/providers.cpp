#include "imprint/providers.hpp"

#include "imprint/util.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <regex>
#include <sstream>
#include <thread>

namespace imprint {

using json = nlohmann::json;

std::string to_string(FinishReason r) {
    switch (r) {
    case FinishReason::stop: return "stop";
    case FinishReason::length: return "length";
    case FinishReason::error: return "error";
    }
    return "error";
}

// ---------------------------------------------------------------------------
// Retry
// ---------------------------------------------------------------------------

std::chrono::milliseconds RetryPolicy::delay(int attempt) const {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(attempt)));
    const double base = static_cast<double>(base_delay.count()) * std::pow(multiplier, attempt);
    const double scale = 1.0 + jitter * (2.0 * rng.uniform() - 1.0);
    return std::chrono::milliseconds(static_cast<std::int64_t>(std::llround(base * scale)));
}

void RetryPolicy::wait(int attempt) const {
    const auto d = delay(attempt);
    if (sleep) sleep(d);
    else std::this_thread::sleep_for(d);
}

RetryPolicy RetryPolicy::immediate(int attempts) {
    RetryPolicy p;
    p.max_attempts = attempts;
    p.base_delay = std::chrono::milliseconds(0);
    p.sleep = [](std::chrono::milliseconds) {};
    return p;
}

// ---------------------------------------------------------------------------
// Structured output
// ---------------------------------------------------------------------------

namespace {

std::optional<std::string> violation_at(const json& value, const json& schema, const std::string& path) {
    if (!schema.is_object()) return std::nullopt;
    const auto at = path.empty() ? std::string("value") : path;
    if (auto t = schema.find("type"); t != schema.end()) {
        const auto type = t->get<std::string>();
        bool ok = true;
        if (type == "object") ok = value.is_object();
        else if (type == "array") ok = value.is_array();
        else if (type == "string") ok = value.is_string();
        else if (type == "number") ok = value.is_number();
        else if (type == "integer") ok = value.is_number_integer();
        else if (type == "boolean") ok = value.is_boolean();
        else if (type == "null") ok = value.is_null();
        if (!ok) return at + " is not of type " + type;
    }
    if (auto e = schema.find("enum"); e != schema.end() && e->is_array()) {
        if (std::find(e->begin(), e->end(), value) == e->end()) return at + " is not one of the allowed values";
    }
    if (value.is_number()) {
        const double v = value.get<double>();
        if (!std::isfinite(v)) return at + " is not finite";
        if (auto m = schema.find("minimum"); m != schema.end() && v < m->get<double>())
            return at + " is below minimum " + format_double(m->get<double>());
        if (auto m = schema.find("maximum"); m != schema.end() && v > m->get<double>())
            return at + " is above maximum " + format_double(m->get<double>());
    }
    if (value.is_object()) {
        if (auto req = schema.find("required"); req != schema.end())
            for (const auto& name : *req)
                if (!value.contains(name.get<std::string>())) return at + " lacks required property '" + name.get<std::string>() + "'";
        if (auto props = schema.find("properties"); props != schema.end())
            for (const auto& [name, sub] : props->items())
                if (auto it = value.find(name); it != value.end())
                    if (auto err = violation_at(*it, sub, path.empty() ? name : path + "." + name)) return err;
    }
    if (value.is_array())
        if (auto items = schema.find("items"); items != schema.end())
            for (std::size_t i = 0; i < value.size(); ++i)
                if (auto err = violation_at(value[i], *items, at + "[" + std::to_string(i) + "]")) return err;
    return std::nullopt;
}

} // namespace

std::optional<std::string> schema_violation(const json& value, const json& schema) {
    return violation_at(value, schema, "");
}

std::optional<json> extract_json(const std::string& text) {
    auto parse = [](const std::string& s) -> std::optional<json> {
        try {
            return json::parse(s);
        } catch (const json::parse_error&) {
            return std::nullopt;
        }
    };
    if (auto j = parse(trim(text))) return j;
    const auto b = text.find('{');
    const auto e = text.rfind('}');
    if (b == std::string::npos || e == std::string::npos || e < b) return std::nullopt;
    return parse(text.substr(b, e - b + 1));
}

StructuredReply chat_structured(ChatProvider& provider, const ChatRequest& req, const RetryPolicy& policy) {
    std::string last_text;
    std::string last_error = "no attempt made";
    for (int attempt = 0; attempt < std::max(1, policy.max_attempts); ++attempt) {
        const auto resp = with_retry(policy, [&] { return provider.chat(req); });
        last_text = resp.text;
        if (resp.finish_reason == FinishReason::error) {
            last_error = "provider reported an error";
            continue;
        }
        auto value = extract_json(resp.text);
        if (!value) {
            last_error = "reply is not valid JSON";
            continue;
        }
        if (req.response_schema) {
            if (auto err = schema_violation(*value, *req.response_schema)) {
                last_error = *err;
                continue;
            }
        }
        return {std::move(*value), resp.text, attempt + 1};
    }
    throw SchemaError("structured output from " + provider.id() + " failed after " +
                          std::to_string(std::max(1, policy.max_attempts)) + " attempts: " + last_error,
                      last_text);
}

// ---------------------------------------------------------------------------
// Mock chat
// ---------------------------------------------------------------------------

ChatResponse MockChatProvider::chat(const ChatRequest& req) {
    ++calls_;
    return {responder_(req, seed_), FinishReason::stop};
}

MockChatProvider::Responder fixed_responder(std::string text) {
    return [text = std::move(text)](const ChatRequest&, std::uint64_t) { return text; };
}

MockChatProvider::Responder nmr_mock_responder() {
    return [](const ChatRequest& req, std::uint64_t seed) {
        const auto digest = sha256_hex(std::to_string(seed) + '\x1f' + req.system + '\x1f' + req.user);
        Rng rng(std::stoull(digest.substr(0, 16), nullptr, 16));
        const double prediction = std::round(rng.uniform(5.0, 95.0) * 10.0) / 10.0;
        const double confidence = std::round(rng.uniform(0.5, 0.95) * 100.0) / 100.0;
        static const char* const kTerms[] = {"farmland", "market town", "paved roads", "informal housing",
                                             "fishing villages", "electrification", "river delta", "mining",
                                             "tin roofs", "schools", "clinics", "highland pasture"};
        std::string desc = "Mock narrative " + digest.substr(0, 8) + ":";
        for (int i = 0; i < 6; ++i) desc += std::string(" ") + kTerms[rng.below(std::size(kTerms))];
        json reply = {{"description", desc},
                      {"prediction", prediction},
                      {"justification", "Mock justification " + digest.substr(8, 8)},
                      {"confidence", confidence}};
        return reply.dump();
    };
}

// ---------------------------------------------------------------------------
// Embeddings
// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> words(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    std::string w;
    while (in >> w) out.push_back(w);
    return out;
}

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

} // namespace

std::size_t approx_tokens(const std::string& text) {
    return static_cast<std::size_t>(std::ceil(static_cast<double>(words(text).size()) * 1.3 - 1e-9));
}

std::pair<std::string, bool> truncate_to_context(const std::string& text, int max_tokens) {
    if (max_tokens <= 0) throw ValidationError("max_context_tokens must be positive");
    if (approx_tokens(text) <= static_cast<std::size_t>(max_tokens)) return {text, false};
    const auto w = words(text);
    const auto keep = static_cast<std::size_t>(std::floor(max_tokens / 1.3 + 1e-9));
    std::vector<std::string> head(w.begin(), w.begin() + static_cast<std::ptrdiff_t>(std::min(keep, w.size())));
    return {join(head, " "), true};
}

HashEmbedder::HashEmbedder(std::size_t dim, std::uint64_t seed, std::string id)
    : dim_(dim), seed_(seed), id_(std::move(id)) {
    if (dim_ == 0) throw ValidationError("embedding dim must be positive");
}

std::vector<double> HashEmbedder::embed_one(const std::string& text) const {
    std::vector<std::string> features;
    std::string cur;
    for (unsigned char c : text) {
        if (std::isalnum(c)) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            features.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) features.push_back(std::move(cur));
    features.push_back("\x01len=" + std::to_string(features.size()));

    std::vector<double> v(dim_, 0.0);
    for (const auto& f : features) {
        Rng row(mix64(seed_ ^ fnv1a(f)));
        for (auto& x : v) x += row.normal();
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    for (auto& x : v) x /= norm;
    return v;
}

EmbedResponse HashEmbedder::embed(const EmbedRequest& req) {
    EmbedResponse out;
    for (const auto& text : req.texts) {
        if (trim(text).empty()) throw ValidationError("cannot embed an empty text");
        auto [kept, truncated] = truncate_to_context(text, req.max_context_tokens);
        out.vectors.push_back(embed_one(kept));
        out.truncated.push_back(truncated);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Fixture search
// ---------------------------------------------------------------------------

std::string normalize_query(const std::string& query) {
    std::string out;
    bool space = false;
    for (unsigned char c : trim(query)) {
        if (std::isspace(c)) {
            space = true;
            continue;
        }
        if (space && !out.empty()) out.push_back(' ');
        space = false;
        out.push_back(static_cast<char>(std::tolower(c)));
    }
    return out;
}

std::filesystem::path FixtureSearchProvider::fixture_path(const std::filesystem::path& root, const std::string& tool,
                                                          const std::string& query) {
    return root / tool / (sha256_hex(normalize_query(query)) + ".json");
}

void FixtureSearchProvider::write_fixture(const std::filesystem::path& root, const std::string& tool,
                                          const std::string& query, const std::vector<SearchResult>& results) {
    nlohmann::ordered_json j;
    j["query"] = normalize_query(query);
    j["results"] = nlohmann::ordered_json::array();
    for (const auto& r : results)
        j["results"].push_back({{"rank", r.rank}, {"title", r.title}, {"snippet", r.snippet}, {"url", r.url}});
    write_file(fixture_path(root, tool, query), j.dump(2) + '\n');
}

ToolOutcome FixtureSearchProvider::serve(const std::string& tool, const std::string& query, int k) {
    ToolOutcome out;
    if (normalize_query(query).empty()) {
        out.error = tool + ": empty query";
        return out;
    }
    const auto path = fixture_path(root_, tool, query);
    if (!std::filesystem::exists(path)) {
        out.error = tool + ": no fixture for query '" + normalize_query(query) + "'";
        spdlog::debug("{}", *out.error);
        return out;
    }
    try {
        const auto j = json::parse(read_file(path));
        std::vector<SearchResult> all;
        for (const auto& r : j.at("results"))
            all.push_back({r.at("rank").get<int>(), r.value("title", ""), r.value("snippet", ""), r.value("url", "")});
        std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.rank < b.rank; });
        for (std::size_t i = 0; i < all.size(); ++i)
            if (all[i].rank != static_cast<int>(i + 1)) throw Error("ranks are not contiguous from 1");
        if (all.size() > static_cast<std::size_t>(k)) all.resize(static_cast<std::size_t>(k));
        out.results = std::move(all);
    } catch (const std::exception& e) {
        out.error = tool + ": bad fixture " + path.filename().string() + ": " + e.what();
        spdlog::warn("{}", *out.error);
    }
    return out;
}

ToolOutcome FixtureSearchProvider::wiki_lookup(const std::string& query) { return serve("wiki", query, 1); }

ToolOutcome FixtureSearchProvider::web_search(const std::string& query, int k) {
    if (k < 1) return {{}, "search: k must be >= 1"};
    return serve("search", query, k);
}

// ---------------------------------------------------------------------------
// Rate limiting
// ---------------------------------------------------------------------------

RateLimiter::RateLimiter(int max_concurrency, double requests_per_second)
    : slots_(std::clamp(max_concurrency, 1, 1024)), rps_(requests_per_second) {}

RateLimiter::Permit RateLimiter::acquire() {
    slots_.acquire();
    ++in_flight_;
    if (rps_ > 0.0) {
        std::chrono::steady_clock::time_point start;
        {
            std::lock_guard lock(mu_);
            const auto now = std::chrono::steady_clock::now();
            start = std::max(now, next_slot_);
            next_slot_ = start + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                     std::chrono::duration<double>(1.0 / rps_));
        }
        std::this_thread::sleep_until(start);
    }
    return Permit(this);
}

RateLimiter::Permit::~Permit() {
    if (owner_) {
        --owner_->in_flight_;
        owner_->slots_.release();
    }
}

// ---------------------------------------------------------------------------
// Registry
// ---------------------------------------------------------------------------

ChatProvider& ProviderRegistry::chat(const std::string& model_id) const {
    auto it = chat_.find(model_id);
    if (it == chat_.end()) throw ConfigError("chat model '" + model_id + "' is not registered");
    return *it->second;
}

EmbedProvider& ProviderRegistry::embedder(const std::string& provider_id) const {
    auto it = embed_.find(provider_id);
    if (it == embed_.end()) throw ConfigError("embedding provider '" + provider_id + "' is not registered");
    return *it->second;
}

SearchProvider& ProviderRegistry::search() const {
    if (!search_) throw ConfigError("no search provider registered");
    return *search_;
}

} // namespace imprint

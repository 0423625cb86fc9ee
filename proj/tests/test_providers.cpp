#include "imprint/error.hpp"
#include "imprint/providers.hpp"
#include "imprint/util.hpp"

#include "support.hpp"

#include <doctest.h>
#include <httplib.h>

#include <cstdlib>
#include <set>
#include <thread>

using namespace imprint;
using json = nlohmann::json;
using testsupport::TempDir;

TEST_CASE("mock chat is a pure function of seed and request") {
    MockChatProvider a("m", nmr_mock_responder(), 3), b("m", nmr_mock_responder(), 3), c("m", nmr_mock_responder(), 4);
    ChatRequest req{"m", "sys", "user prompt", 256, 0.0, std::nullopt};
    CHECK(a.chat(req).text == b.chat(req).text);
    CHECK(a.chat(req).text != c.chat(req).text);
    CHECK(a.calls() == 2);
}

TEST_CASE("structured output against a schema") {
    const json schema = {{"type", "object"},
                         {"required", {"prediction"}},
                         {"properties", {{"prediction", {{"type", "number"}}}}}};
    MockChatProvider ok("m", fixed_responder(R"({"prediction": 42})"));
    ChatRequest req{"m", "", "q", 64, 0.0, schema};
    const auto r = chat_structured(ok, req, RetryPolicy::immediate());
    CHECK(r.value["prediction"] == 42);
    CHECK(r.attempts == 1);

    MockChatProvider bad("m", fixed_responder("not json at all"));
    try {
        chat_structured(bad, req, RetryPolicy::immediate(3));
        FAIL("expected SchemaError");
    } catch (const SchemaError& e) {
        CHECK_FALSE(e.retriable());
        CHECK(e.last_text() == "not json at all");
    }
    CHECK(bad.calls() == 3);
}

TEST_CASE("schema subset") {
    const json schema = {{"type", "object"},
                         {"required", {"p", "c"}},
                         {"properties", {{"p", {{"type", "number"}, {"minimum", 0}, {"maximum", 100}}}, {"c", {{"type", "string"}, {"enum", {"x", "y"}}}}}}};
    CHECK_FALSE(schema_violation(json{{"p", 5}, {"c", "x"}}, schema));
    CHECK(schema_violation(json{{"p", 150}, {"c", "x"}}, schema));
    CHECK(schema_violation(json{{"p", 5}, {"c", "z"}}, schema));
    CHECK(schema_violation(json{{"p", 5}}, schema));
    CHECK(schema_violation(json{{"p", "5"}, {"c", "x"}}, schema));
}

TEST_CASE("json extraction tolerates fences and prose") {
    CHECK((*extract_json("Sure:\n```json\n{\"a\": 1}\n```"))["a"] == 1);
    CHECK((*extract_json("answer {\"a\": {\"b\": \"}\"}} done"))["a"]["b"] == "}");
    CHECK_FALSE(extract_json("nothing here"));
}

TEST_CASE("retry budget and backoff") {
    int calls = 0;
    auto policy = RetryPolicy::immediate(3);
    CHECK_THROWS_AS(with_retry(policy, [&]() -> int {
                        ++calls;
                        throw ProviderError("flaky", true);
                    }),
                    ProviderError);
    CHECK(calls == 3);
    calls = 0;
    CHECK(with_retry(policy, [&] {
              if (++calls < 2) throw ProviderError("flaky", true);
              return 7;
          }) == 7);
    calls = 0;
    CHECK_THROWS(with_retry(policy, [&]() -> int {
        ++calls;
        throw ProviderError("fatal", false);
    }));
    CHECK(calls == 1);

    RetryPolicy p;
    p.seed = 9;
    RetryPolicy q = p;
    for (int a = 0; a < 3; ++a) {
        CHECK(p.delay(a) == q.delay(a));
        const double base = 500.0 * std::pow(2.0, a);
        CHECK(p.delay(a).count() >= std::floor(base * 0.75));
        CHECK(p.delay(a).count() <= std::ceil(base * 1.25));
    }
}

TEST_CASE("hash embedder") {
    HashEmbedder e(8, 1);
    const auto r1 = e.embed({"mock-hash", {"abc"}, 8192});
    const auto r2 = HashEmbedder(8, 1).embed({"mock-hash", {"abc"}, 8192});
    REQUIRE(r1.vectors.size() == 1);
    CHECK(r1.vectors[0].size() == 8);
    CHECK(r1.vectors[0] == r2.vectors[0]);
    double norm = 0;
    for (double v : r1.vectors[0]) norm += v * v;
    CHECK(norm == doctest::Approx(1.0));
    CHECK_FALSE(r1.truncated[0]);
}

TEST_CASE("hash embedder separates every text of a test corpus") {
    // brute-force collision scan
    HashEmbedder e(16, 2);
    std::vector<std::string> corpus;
    for (int i = 0; i < 300; ++i) corpus.push_back("cluster " + std::to_string(i) + " has paved roads and " + std::to_string(i % 7) + " schools");
    corpus.push_back("abc");
    corpus.push_back("ABC abc");
    const auto r = e.embed({"mock-hash", corpus, 8192});
    std::set<std::vector<double>> distinct(r.vectors.begin(), r.vectors.end());
    CHECK(distinct.size() == corpus.size());
}

TEST_CASE("context truncation is flagged") {
    std::string long_text;
    for (int i = 0; i < 100; ++i) long_text += "word ";
    CHECK(approx_tokens(long_text) == 130);
    const auto [cut, flagged] = truncate_to_context(long_text, 13);
    CHECK(flagged);
    CHECK(approx_tokens(cut) <= 13);
    HashEmbedder e(8, 1);
    const auto r = e.embed({"mock-hash", {long_text, "short"}, 13});
    CHECK(r.truncated[0]);
    CHECK_FALSE(r.truncated[1]);
    CHECK(r.vectors[0].size() == 8);
}

TEST_CASE("fixture search") {
    TempDir tmp("fx");
    FixtureSearchProvider::write_fixture(tmp.path(), "wiki", "Manazary Madagascar",
                                         {{1, "Manazary", "Manazary is a commune in Madagascar.", "https://example.org/manazary"}});
    std::vector<SearchResult> many;
    for (int i = 1; i <= 25; ++i) many.push_back({i, "t" + std::to_string(i), "s", "u"});
    FixtureSearchProvider::write_fixture(tmp.path(), "search", "many", many);

    FixtureSearchProvider fx(tmp.path());
    const auto w = fx.wiki_lookup("  manazary   MADAGASCAR ");
    REQUIRE(w.results.size() == 1);
    CHECK(w.results[0].snippet.find("commune in Madagascar") != std::string::npos);

    const auto miss = fx.web_search("no such query");
    CHECK(miss.results.empty());
    CHECK(miss.error);

    const auto top = fx.web_search("many", 10);
    REQUIRE(top.results.size() == 10);
    for (int i = 0; i < 10; ++i) CHECK(top.results[i].rank == i + 1);
}

namespace {

/// Local HTTP server on an ephemeral port, stopped on destruction.
struct LocalServer {
    httplib::Server svr;
    int port = 0;
    std::thread th;

    LocalServer() = default;
    void start() {
        port = svr.bind_to_any_port("127.0.0.1");
        th = std::thread([this] { svr.listen_after_bind(); });
        svr.wait_until_ready();
    }
    ~LocalServer() {
        svr.stop();
        if (th.joinable()) th.join();
    }
    std::string url() const { return "http://127.0.0.1:" + std::to_string(port); }
};

} // namespace

TEST_CASE("http chat retries 5xx and reads the reply pointer") {
    LocalServer s;
    std::atomic<int> hits{0};
    std::string seen_auth;
    json seen_body;
    s.svr.Post("/chat", [&](const httplib::Request& req, httplib::Response& res) {
        if (hits++ == 0) {
            res.status = 503;
            return;
        }
        seen_auth = req.get_header_value("Authorization");
        seen_body = json::parse(req.body);
        res.set_content(json{{"choices", {{{"message", {{"content", "hello"}}}}}}}.dump(), "application/json");
    });
    s.start();
    ::setenv("IMPRINT_TEST_KEY", "k123", 1);
    HttpEndpoint ep;
    ep.base_url = s.url();
    ep.path = "/chat";
    ep.auth_env = "IMPRINT_TEST_KEY";
    ep.request_template = R"({"model": {{model}}, "messages": [{"role": "system", "content": {{system}}}, {"role": "user", "content": {{user}}}], "temperature": {{temperature}}})";
    ep.response_pointer = "/choices/0/message/content";
    HttpChatProvider chat("remote", ep, RetryPolicy::immediate());
    const auto r = chat.chat({"gpt", "be brief", "say \"hi\"", 16, 0.0, std::nullopt});
    CHECK(r.text == "hello");
    CHECK(hits == 2);
    CHECK(seen_auth == "Bearer k123");
    CHECK(seen_body["messages"][1]["content"] == "say \"hi\"");
    CHECK(seen_body["model"] == "gpt");
}

TEST_CASE("http chat: client errors are permanent, missing credentials are config errors") {
    LocalServer s;
    std::atomic<int> hits{0};
    s.svr.Post("/chat", [&](const httplib::Request&, httplib::Response& res) {
        ++hits;
        res.status = 400;
    });
    s.start();
    HttpEndpoint ep;
    ep.base_url = s.url();
    ep.path = "/chat";
    ep.request_template = R"({"u": {{user}}})";
    HttpChatProvider chat("remote", ep, RetryPolicy::immediate());
    CHECK_THROWS_AS(chat.chat({"m", "", "x", 16, 0.0, std::nullopt}), ProviderError);
    CHECK(hits == 1);

    ep.auth_env = "IMPRINT_TEST_DEFINITELY_UNSET";
    HttpChatProvider noauth("remote", ep, RetryPolicy::immediate());
    CHECK_THROWS_AS(noauth.chat({"m", "", "x", 16, 0.0, std::nullopt}), ConfigError);
}

TEST_CASE("http embeddings batch and keep order") {
    LocalServer s;
    std::atomic<int> batches{0};
    s.svr.Post("/embed", [&](const httplib::Request& req, httplib::Response& res) {
        ++batches;
        const auto body = json::parse(req.body);
        json data = json::array();
        for (const auto& t : body["input"]) {
            const auto str = t.get<std::string>();
            data.push_back({{"embedding", {static_cast<double>(str.size()), 1.0}}});
        }
        res.set_content(json{{"data", data}}.dump(), "application/json");
    });
    s.start();
    HttpEndpoint ep;
    ep.base_url = s.url();
    ep.path = "/embed";
    ep.request_template = R"({"model": {{model}}, "input": {{input}}})";
    ep.response_pointer = "/data";
    HttpEmbedProvider emb("remote-embed", ep, RetryPolicy::immediate(), "/embedding", 2);
    const auto r = emb.embed({"remote-embed", {"a", "bb", "ccc", "dddd", "eeeee"}, 8192});
    REQUIRE(r.vectors.size() == 5);
    for (std::size_t i = 0; i < 5; ++i) CHECK(r.vectors[i][0] == static_cast<double>(i + 1));
    CHECK(batches == 3);
}

TEST_CASE("http search failures surface as tool errors, not exceptions") {
    LocalServer s;
    s.svr.Get("/wiki", [&](const httplib::Request& req, httplib::Response& res) {
        const auto q = req.get_param_value("q");
        res.set_content(json{{"results", {{{"title", q}, {"snippet", "about " + q}, {"url", "u"}}}}}.dump(), "application/json");
    });
    s.svr.Get("/search", [&](const httplib::Request&, httplib::Response& res) { res.status = 500; });
    s.start();
    HttpEndpoint wiki;
    wiki.base_url = s.url();
    wiki.path = "/wiki";
    wiki.method = "GET";
    wiki.request_template = R"({"q": {{query}}})";
    wiki.response_pointer = "/results";
    HttpEndpoint search = wiki;
    search.path = "/search";
    HttpSearchProvider p(wiki, search, RetryPolicy::immediate(2));
    const auto w = p.wiki_lookup("Kanzenze");
    REQUIRE(w.results.size() == 1);
    CHECK(w.results[0].rank == 1);
    CHECK(w.results[0].snippet == "about Kanzenze");
    const auto f = p.web_search("anything", 10);
    CHECK(f.results.empty());
    CHECK(f.error);
}

TEST_CASE("rate limiter caps concurrency") {
    RateLimiter lim(2, 0.0);
    std::atomic<int> peak{0};
    std::vector<std::thread> ts;
    for (int i = 0; i < 8; ++i)
        ts.emplace_back([&] {
            auto permit = lim.acquire();
            int now = lim.in_flight();
            int prev = peak.load();
            while (now > prev && !peak.compare_exchange_weak(prev, now)) {
            }
            std::this_thread::sleep_for(std::chrono::milliseconds(5));
        });
    for (auto& t : ts) t.join();
    CHECK(peak.load() <= 2);
    CHECK(lim.in_flight() == 0);
}

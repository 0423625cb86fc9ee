#include "imprint/textgen.hpp"

#include "imprint/util.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <regex>
#include <set>
#include <sstream>

namespace imprint {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Prompts
// ---------------------------------------------------------------------------

PromptSet PromptSet::defaults() {
    PromptSet p;
    p.version = "v1";
    p.nmr_system =
        "You are a development economist with broad knowledge of African geography and history. "
        "Answer from memory only; you have no tools.";
    p.nmr_user =
        "Describe the neighborhood of {place} at latitude/longitude {lat}, {lon} as it was in {year}: "
        "infrastructure, livelihoods, housing quality and access to services. Then estimate its "
        "International Wealth Index on a scale from zero to one hundred.\n"
        "Reply with a JSON object with keys description (string), prediction (number), "
        "justification (string) and confidence (number between zero and one).";
    p.agent_system =
        "You are a research agent collecting socioeconomic, historical and contextual information about a "
        "neighborhood.\nPlace: {place}\nCoordinates: {lat}, {lon}\nYear: {year}\n"
        "Tools: wiki (encyclopedia lookup) and search (web search, top results).\n"
        "Reply each turn with exactly one JSON object: {\"tool\": \"wiki\", \"query\": \"...\"}, "
        "{\"tool\": \"search\", \"query\": \"...\"} or {\"tool\": \"finalize\", \"answer\": {\"summary\": \"...\", "
        "\"justification\": \"...\", \"prediction\": <wealth index 0-100>, \"confidence\": <0-1>}}.";
    p.agent_step = "Evidence gathered so far:\n{transcript}\nChoose the next action.";
    p.agent_reprompt =
        "Your previous reply was not a valid action. Reply with exactly one JSON object as instructed.\n"
        "Evidence gathered so far:\n{transcript}";
    p.agent_finalize =
        "Stop searching now. Using only the evidence below, reply with a JSON object with keys summary, "
        "justification, prediction (wealth index 0-100) and confidence (0-1).\nEvidence:\n{transcript}";
    return p;
}

PromptSet PromptSet::from_directory(const std::filesystem::path& dir) {
    auto p = defaults();
    auto load = [&](const char* name, std::string& field) {
        const auto path = dir / (std::string(name) + ".txt");
        if (std::filesystem::exists(path)) field = read_file(path);
    };
    load("version", p.version);
    p.version = trim(p.version);
    load("nmr_system", p.nmr_system);
    load("nmr_user", p.nmr_user);
    load("agent_system", p.agent_system);
    load("agent_step", p.agent_step);
    load("agent_reprompt", p.agent_reprompt);
    load("agent_finalize", p.agent_finalize);
    return p;
}

std::string PromptSet::hash() const {
    const std::string sep(1, '\x1f');
    return sha256_hex(version + sep + nmr_system + sep + nmr_user + sep + agent_system + sep + agent_step + sep +
                      agent_reprompt + sep + agent_finalize);
}

std::string format_coordinate(double deg) {
    auto s = format_double(deg);
    if (s.ends_with(".0")) s.resize(s.size() - 2);
    return s;
}

std::string render_prompt(const std::string& tmpl, const ClusterRecord& cluster, const std::string& transcript) {
    const std::map<std::string, std::string> values = {
        {"{place}", cluster.place_name.empty() ? std::string("an unnamed place") : cluster.place_name},
        {"{lat}", format_coordinate(cluster.lat)},
        {"{lon}", format_coordinate(cluster.lon)},
        {"{year}", std::to_string(cluster.year)},
        {"{transcript}", transcript.empty() ? std::string("(none yet)") : transcript},
    };
    std::string out;
    std::size_t pos = 0;
    while (pos < tmpl.size()) {
        bool replaced = false;
        if (tmpl[pos] == '{') {
            for (const auto& [key, value] : values) {
                if (tmpl.compare(pos, key.size(), key) == 0) {
                    out += value;
                    pos += key.size();
                    replaced = true;
                    break;
                }
            }
        }
        if (!replaced) out.push_back(tmpl[pos++]);
    }
    return out;
}

json nmr_schema() {
    return {{"type", "object"},
            {"required", {"description", "prediction", "justification", "confidence"}},
            {"properties",
             {{"description", {{"type", "string"}}},
              {"prediction", {{"type", "number"}, {"minimum", 0}, {"maximum", 100}}},
              {"justification", {{"type", "string"}}},
              {"confidence", {{"type", "number"}, {"minimum", 0}, {"maximum", 1}}}}}};
}

json finalize_schema() {
    return {{"type", "object"},
            {"required", {"summary", "justification", "prediction", "confidence"}},
            {"properties",
             {{"summary", {{"type", "string"}}},
              {"justification", {{"type", "string"}}},
              {"prediction", {{"type", "number"}, {"minimum", 0}, {"maximum", 100}}},
              {"confidence", {{"type", "number"}, {"minimum", 0}, {"maximum", 1}}}}}};
}

namespace {

json action_schema() {
    return {{"type", "object"},
            {"required", {"tool"}},
            {"properties", {{"tool", {{"type", "string"}, {"enum", {"wiki", "search", "finalize"}}}}, {"query", {{"type", "string"}}}}}};
}

} // namespace

TextBundle nmr_generate(const ClusterRecord& cluster, const std::string& model_id, ChatProvider& chat,
                        const PromptSet& prompts, const RetryPolicy& retry) {
    ChatRequest req;
    req.model_id = model_id;
    req.system = render_prompt(prompts.nmr_system, cluster);
    req.user = render_prompt(prompts.nmr_user, cluster);
    req.response_schema = nmr_schema();

    TextBundle b;
    b.cluster_id = cluster.cluster_id;
    b.source_tag = SourceTag::NMR;
    b.provider_id = model_id;
    try {
        const auto reply = chat_structured(chat, req, retry);
        b.desc = reply.value["description"].get<std::string>();
        b.justification = reply.value["justification"].get<std::string>();
        b.prediction = reply.value["prediction"].get<double>();
        b.confidence = reply.value["confidence"].get<double>();
    } catch (const SchemaError& e) {
        spdlog::warn("NMR output for {} degraded: {}", cluster.cluster_id, e.what());
        b.degraded = true;
        const auto partial = extract_json(e.last_text());
        if (partial && partial->is_object() && partial->contains("description") && (*partial)["description"].is_string())
            b.desc = (*partial)["description"].get<std::string>();
        else
            b.desc = e.last_text();
        if (partial && partial->is_object() && partial->contains("justification") && (*partial)["justification"].is_string())
            b.justification = (*partial)["justification"].get<std::string>();
    }
    return b;
}

// ---------------------------------------------------------------------------
// Agent
// ---------------------------------------------------------------------------

std::string to_string(EventKind k) {
    switch (k) {
    case EventKind::thought: return "thought";
    case EventKind::tool_call: return "tool_call";
    case EventKind::tool_result: return "tool_result";
    }
    return "thought";
}

namespace {

EventKind event_kind_from_string(const std::string& s) {
    if (s == "thought") return EventKind::thought;
    if (s == "tool_call") return EventKind::tool_call;
    if (s == "tool_result") return EventKind::tool_result;
    throw ParseError("unknown transcript event kind '" + s + "'");
}

} // namespace

std::string render_tool_payload(const std::vector<SearchResult>& results) {
    std::string out;
    for (const auto& r : results) {
        if (!r.title.empty()) out += r.title + ": ";
        out += r.snippet;
        out += "\n\n";
    }
    return out;
}

std::string render_transcript(const std::vector<AgentEvent>& events) {
    std::string out;
    for (const auto& e : events) {
        out += "[step " + std::to_string(e.step) + "] " + to_string(e.kind);
        switch (e.kind) {
        case EventKind::thought: out += ": " + e.text + "\n"; break;
        case EventKind::tool_call: out += " " + e.tool + ": " + e.query + "\n"; break;
        case EventKind::tool_result:
            out += " " + e.tool + ":\n";
            out += e.error ? "(tool error: " + *e.error + ")\n" : (e.text.empty() ? std::string("(no results)\n") : e.text);
            break;
        }
    }
    return out;
}

std::string request_hash(const ChatRequest& req) {
    const std::string sep(1, '\x1f');
    return sha256_hex(req.model_id + sep + req.system + sep + req.user + sep +
                      (req.response_schema ? req.response_schema->dump() : std::string()));
}

namespace {

struct Answer {
    std::string summary;
    std::string justification;
    double prediction = 0.0;
    double confidence = 0.0;
};

std::optional<Answer> parse_answer(const json& value) {
    if (schema_violation(value, finalize_schema())) return std::nullopt;
    return Answer{value["summary"].get<std::string>(), value["justification"].get<std::string>(),
                  value["prediction"].get<double>(), value["confidence"].get<double>()};
}

struct Action {
    std::string tool;
    std::string query;
    std::optional<Answer> answer;
};

std::optional<Action> parse_action(const std::string& reply) {
    const auto value = extract_json(reply);
    if (!value || schema_violation(*value, action_schema())) return std::nullopt;
    Action a;
    a.tool = (*value)["tool"].get<std::string>();
    if (a.tool == "finalize") {
        if (!value->contains("answer")) return std::nullopt;
        a.answer = parse_answer((*value)["answer"]);
        if (!a.answer) return std::nullopt;
        return a;
    }
    if (!value->contains("query")) return std::nullopt;
    a.query = trim((*value)["query"].get<std::string>());
    if (a.query.empty()) return std::nullopt;
    return a;
}

} // namespace

AgentRun asa_run(const ClusterRecord& cluster, const std::string& model_id, ChatProvider& chat, SearchProvider& tools,
                 int max_steps, const PromptSet& prompts, int search_k) {
    if (max_steps < 1) throw ValidationError("max_steps must be >= 1");
    AgentRun run;
    auto& state = run.state;
    auto& out = run.output;
    state.cluster = cluster;
    state.max_steps = max_steps;

    const auto system = render_prompt(prompts.agent_system, cluster);
    auto call = [&](const std::string& user_tmpl, const json& schema) -> std::optional<std::string> {
        ChatRequest req;
        req.model_id = model_id;
        req.system = system;
        req.user = render_prompt(user_tmpl, cluster, render_transcript(state.transcript));
        req.response_schema = schema;
        ++out.chat_calls;
        try {
            auto resp = chat.chat(req);
            run.exchanges.push_back({request_hash(req), resp.text});
            if (resp.finish_reason == FinishReason::error) return std::nullopt;
            return resp.text;
        } catch (const ProviderError& e) {
            spdlog::warn("agent chat call failed for {}: {}", cluster.cluster_id, e.what());
            return std::nullopt;
        }
    };

    std::optional<Answer> answer;
    bool finalized_by_action = false;
    int invalid_streak = 0;
    while (!state.done) {
        if (state.step >= state.max_steps || invalid_streak >= 2) {
            out.forced_finalize = true;
            if (auto reply = call(prompts.agent_finalize, finalize_schema())) {
                state.transcript.push_back({EventKind::thought, state.step, {}, {}, *reply, std::nullopt});
                if (auto value = extract_json(*reply)) answer = parse_answer(*value);
            }
            state.done = true;
            break;
        }
        const auto reply = call(invalid_streak ? prompts.agent_reprompt : prompts.agent_step, action_schema());
        ++state.step;
        state.transcript.push_back({EventKind::thought, state.step, {}, {}, reply.value_or(""), std::nullopt});
        const auto action = reply ? parse_action(*reply) : std::nullopt;
        if (!action) {
            ++invalid_streak;
            continue;
        }
        invalid_streak = 0;
        if (action->tool == "finalize") {
            answer = action->answer;
            finalized_by_action = true;
            state.done = true;
            break;
        }
        state.transcript.push_back({EventKind::tool_call, state.step, action->tool, action->query, {}, std::nullopt});
        const auto outcome = action->tool == "wiki" ? tools.wiki_lookup(action->query) : tools.web_search(action->query, search_k);
        const auto payload = render_tool_payload(outcome.results);
        state.transcript.push_back({EventKind::tool_result, state.step, action->tool, action->query, payload, outcome.error});
        out.segments.push_back({action->tool, payload});
        ++out.tools_invoked[action->tool];
    }

    out.steps_used = state.step - (finalized_by_action ? 1 : 0);
    auto& b = out.bundle;
    b.cluster_id = cluster.cluster_id;
    b.source_tag = SourceTag::ASA;
    b.provider_id = model_id;
    for (const auto& seg : out.segments) b.trace += seg.text;
    b.low_evidence = std::all_of(out.segments.begin(), out.segments.end(), [](const auto& s) { return s.text.empty(); });
    if (answer) {
        b.summary = answer->summary;
        b.justification = answer->justification;
        b.prediction = answer->prediction;
        b.confidence = answer->confidence;
    } else {
        b.degraded = true;
    }
    return run;
}

// ---------------------------------------------------------------------------
// Trace store
// ---------------------------------------------------------------------------

ordered_json agent_run_to_json(const AgentRun& run) {
    ordered_json j;
    const auto& c = run.state.cluster;
    j["cluster"] = ordered_json::parse(records_to_jsonl({c}));
    j["step"] = run.state.step;
    j["max_steps"] = run.state.max_steps;
    j["done"] = run.state.done;
    j["transcript"] = ordered_json::array();
    for (const auto& e : run.state.transcript) {
        ordered_json ev;
        ev["kind"] = to_string(e.kind);
        ev["step"] = e.step;
        ev["tool"] = e.tool;
        ev["query"] = e.query;
        ev["text"] = e.text;
        ev["error"] = e.error ? ordered_json(*e.error) : ordered_json(nullptr);
        j["transcript"].push_back(std::move(ev));
    }
    const auto& o = run.output;
    ordered_json out;
    out["steps_used"] = o.steps_used;
    out["chat_calls"] = o.chat_calls;
    out["forced_finalize"] = o.forced_finalize;
    out["tools_invoked"] = ordered_json::object();
    for (const auto& [tool, n] : o.tools_invoked) out["tools_invoked"][tool] = n;
    out["segments"] = ordered_json::array();
    for (const auto& s : o.segments) out["segments"].push_back({{"tool", s.tool}, {"text", s.text}});
    const auto& b = o.bundle;
    out["bundle"] = {{"summary", b.summary},
                     {"justification", b.justification},
                     {"prediction", b.prediction ? ordered_json(*b.prediction) : ordered_json(nullptr)},
                     {"confidence", b.confidence ? ordered_json(*b.confidence) : ordered_json(nullptr)},
                     {"provider_id", b.provider_id},
                     {"degraded", b.degraded},
                     {"low_evidence", b.low_evidence}};
    j["output"] = std::move(out);
    j["exchanges"] = ordered_json::array();
    for (const auto& x : run.exchanges) j["exchanges"].push_back({{"request_hash", x.request_hash}, {"reply", x.reply}});
    return j;
}

AgentRun agent_run_from_json(const json& j) {
    AgentRun run;
    try {
        auto& c = run.state.cluster;
        const auto& jc = j.at("cluster");
        c.cluster_id = jc.at("cluster_id").get<std::string>();
        c.lat = jc.at("lat").get<double>();
        c.lon = jc.at("lon").get<double>();
        c.country = jc.at("country").get<std::string>();
        c.year = jc.at("year").get<int>();
        c.place_name = jc.value("place_name", "");
        if (jc.contains("iwi")) c.iwi = jc["iwi"].get<double>();
        run.state.step = j.at("step").get<int>();
        run.state.max_steps = j.at("max_steps").get<int>();
        run.state.done = j.at("done").get<bool>();
        for (const auto& ev : j.at("transcript")) {
            AgentEvent e;
            e.kind = event_kind_from_string(ev.at("kind").get<std::string>());
            e.step = ev.at("step").get<int>();
            e.tool = ev.at("tool").get<std::string>();
            e.query = ev.at("query").get<std::string>();
            e.text = ev.at("text").get<std::string>();
            if (!ev.at("error").is_null()) e.error = ev["error"].get<std::string>();
            run.state.transcript.push_back(std::move(e));
        }
        const auto& o = j.at("output");
        auto& out = run.output;
        out.steps_used = o.at("steps_used").get<int>();
        out.chat_calls = o.at("chat_calls").get<int>();
        out.forced_finalize = o.at("forced_finalize").get<bool>();
        for (const auto& [tool, n] : o.at("tools_invoked").items()) out.tools_invoked[tool] = n.get<int>();
        for (const auto& s : o.at("segments")) out.segments.push_back({s.at("tool").get<std::string>(), s.at("text").get<std::string>()});
        const auto& b = o.at("bundle");
        auto& bundle = out.bundle;
        bundle.cluster_id = c.cluster_id;
        bundle.source_tag = SourceTag::ASA;
        bundle.provider_id = b.at("provider_id").get<std::string>();
        bundle.summary = b.at("summary").get<std::string>();
        bundle.justification = b.at("justification").get<std::string>();
        if (!b.at("prediction").is_null()) bundle.prediction = b["prediction"].get<double>();
        if (!b.at("confidence").is_null()) bundle.confidence = b["confidence"].get<double>();
        bundle.degraded = b.at("degraded").get<bool>();
        bundle.low_evidence = b.at("low_evidence").get<bool>();
        for (const auto& s : out.segments) bundle.trace += s.text;
        for (const auto& x : j.at("exchanges"))
            run.exchanges.push_back({x.at("request_hash").get<std::string>(), x.at("reply").get<std::string>()});
    } catch (const json::exception& e) {
        throw ParseError(std::string("malformed agent trace: ") + e.what());
    }
    return run;
}

void save_agent_run(const std::filesystem::path& dir, const AgentRun& run) {
    write_file(dir / (run.state.cluster.cluster_id + ".json"), agent_run_to_json(run).dump(2) + '\n');
}

AgentRun load_agent_run(const std::filesystem::path& path) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
    return agent_run_from_json(j);
}

ReplayChatProvider::ReplayChatProvider(const std::vector<AgentRun>& runs, std::string id) : id_(std::move(id)) {
    for (const auto& run : runs)
        for (const auto& x : run.exchanges) replies_.emplace(x.request_hash, x.reply);
}

ChatResponse ReplayChatProvider::chat(const ChatRequest& req) {
    auto it = replies_.find(request_hash(req));
    if (it == replies_.end()) throw ProviderError("no recorded reply for request " + request_hash(req).substr(0, 12), false);
    return {it->second, FinishReason::stop};
}

// ---------------------------------------------------------------------------
// Mock agent policies
// ---------------------------------------------------------------------------

namespace {

bool is_finalize_request(const ChatRequest& req) {
    return req.response_schema && req.response_schema->contains("required") &&
           std::find((*req.response_schema)["required"].begin(), (*req.response_schema)["required"].end(), "summary") !=
               (*req.response_schema)["required"].end();
}

std::size_t count_occurrences(const std::string& text, const std::string& needle) {
    std::size_t n = 0;
    for (auto pos = text.find(needle); pos != std::string::npos; pos = text.find(needle, pos + needle.size())) ++n;
    return n;
}

std::string place_from_system(const std::string& system) {
    const std::string marker = "Place: ";
    const auto pos = system.find(marker);
    if (pos == std::string::npos) return "unknown place";
    const auto end = system.find('\n', pos);
    return system.substr(pos + marker.size(), end == std::string::npos ? std::string::npos : end - pos - marker.size());
}

json hashed_answer(const ChatRequest& req, std::uint64_t seed) {
    const auto digest = sha256_hex(std::to_string(seed) + '\x1f' + req.system + '\x1f' + req.user);
    Rng rng(std::stoull(digest.substr(0, 16), nullptr, 16));
    const auto place = place_from_system(req.system);
    return {{"summary", "Evidence about " + place + " summarized (" + digest.substr(0, 8) + ")."},
            {"justification", "Infrastructure and livelihoods described for " + place + " suggest a moderate level of wealth."},
            {"prediction", std::round(rng.uniform(10.0, 90.0) * 10.0) / 10.0},
            {"confidence", std::round(rng.uniform(0.4, 0.9) * 100.0) / 100.0}};
}

} // namespace

MockChatProvider::Responder cooperative_agent_responder() {
    return [](const ChatRequest& req, std::uint64_t seed) {
        if (is_finalize_request(req)) return hashed_answer(req, seed).dump();
        const auto place = place_from_system(req.system);
        const auto done = count_occurrences(req.user, "] tool_result ");
        json action;
        if (done == 0) action = {{"tool", "wiki"}, {"query", place}};
        else if (done == 1) action = {{"tool", "search"}, {"query", place}};
        else action = {{"tool", "finalize"}, {"answer", hashed_answer(req, seed)}};
        return action.dump();
    };
}

MockChatProvider::Responder never_finalize_responder() {
    return [](const ChatRequest& req, std::uint64_t seed) {
        if (is_finalize_request(req)) return hashed_answer(req, seed).dump();
        const auto n = count_occurrences(req.user, "] thought");
        return json{{"tool", n % 2 ? "search" : "wiki"}, {"query", place_from_system(req.system) + " " + std::to_string(n)}}.dump();
    };
}

MockChatProvider::Responder scripted_agent_responder(std::vector<json> actions) {
    return [actions = std::move(actions)](const ChatRequest& req, std::uint64_t seed) -> std::string {
        if (is_finalize_request(req)) return hashed_answer(req, seed).dump();
        const auto n = count_occurrences(req.user, "] thought");
        if (n >= actions.size()) return json{{"tool", "finalize"}, {"answer", hashed_answer(req, seed)}}.dump();
        const auto& a = actions[n];
        if (a.is_string()) return a.get<std::string>();
        if (a.value("tool", "") == "finalize" && !a.contains("answer")) {
            auto filled = a;
            filled["answer"] = hashed_answer(req, seed);
            return filled.dump();
        }
        return a.dump();
    };
}

// ---------------------------------------------------------------------------
// Trace processing
// ---------------------------------------------------------------------------

namespace {

std::string collapse_ws(const std::string& s) {
    std::string out;
    bool space = false;
    for (unsigned char c : s) {
        if (std::isspace(c)) {
            space = true;
            continue;
        }
        if (space && !out.empty()) out.push_back(' ');
        space = false;
        out.push_back(static_cast<char>(c));
    }
    return out;
}

std::string strip_tags(std::string s) {
    static const std::regex tag("<[^<>]*>");
    while (true) {
        auto next = std::regex_replace(s, tag, "");
        if (next == s) return s;
        s = std::move(next);
    }
}

} // namespace

std::string clean_trace(const std::string& raw) {
    std::vector<std::string> paragraphs;
    std::string current;
    std::istringstream in(raw);
    std::string line;
    auto flush = [&] {
        if (!current.empty()) paragraphs.push_back(std::move(current));
        current.clear();
    };
    while (std::getline(in, line)) {
        if (trim(line).empty()) {
            flush();
        } else {
            if (!current.empty()) current.push_back('\n');
            current += line;
        }
    }
    flush();

    std::set<std::string> seen;
    std::vector<std::string> kept;
    for (const auto& p : paragraphs) {
        auto cleaned = collapse_ws(strip_tags(collapse_ws(p)));
        if (cleaned.empty() || !seen.insert(cleaned).second) continue;
        kept.push_back(std::move(cleaned));
    }
    return join(kept, "\n\n");
}

std::string to_string(VariantKey k) {
    switch (k) {
    case VariantKey::cleaned_traces: return "cleaned_traces";
    case VariantKey::wikipedia: return "wikipedia";
    case VariantKey::top10: return "top10";
    case VariantKey::justification_only: return "justification_only";
    case VariantKey::justification_prediction: return "justification_prediction";
    }
    return "cleaned_traces";
}

std::string variant_source(VariantKey k) { return "ASA:" + to_string(k); }

std::vector<SourceVariant> extract_variants(const AgentOutput& out) {
    std::string wiki;
    std::string web;
    for (const auto& seg : out.segments) (seg.tool == "wiki" ? wiki : web) += seg.text;
    const auto& b = out.bundle;
    std::string jp = b.justification + "\nPredicted IWI: " + (b.prediction ? format_fixed(*b.prediction, 1) : std::string("NA"));
    return {{VariantKey::cleaned_traces, clean_trace(b.trace)},
            {VariantKey::wikipedia, std::move(wiki)},
            {VariantKey::top10, std::move(web)},
            {VariantKey::justification_only, b.justification},
            {VariantKey::justification_prediction, std::move(jp)}};
}

std::vector<std::string> default_leakage_terms() { return {"IWI", "International Wealth Index", "DHS"}; }

LeakageResult leakage_filter(const std::vector<TextBundle>& bundles, const std::vector<std::string>& terms) {
    if (terms.empty()) throw ValidationError("leakage filter needs at least one term");
    std::vector<std::string> lowered;
    for (const auto& t : terms) lowered.push_back(to_lower(t));
    LeakageResult res;
    for (const auto& b : bundles) {
        const auto trace = to_lower(b.trace);
        const bool hit = std::any_of(lowered.begin(), lowered.end(), [&](const std::string& t) {
            return trace.find(t) != std::string::npos;
        });
        (hit ? res.removed : res.kept).push_back(b);
    }
    res.fraction_removed = bundles.empty() ? 0.0 : static_cast<double>(res.removed.size()) / static_cast<double>(bundles.size());
    return res;
}

} // namespace imprint

#pragma once

#include "imprint/core_data.hpp"
#include "imprint/providers.hpp"

#include <json.hpp>

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace imprint {

/// Prompt wording for both text pipelines. Templates use {place}, {lat},
/// {lon}, {year}, {transcript} placeholders; the hash goes into report provenance.
struct PromptSet {
    std::string version = "v1";
    std::string nmr_system;
    std::string nmr_user;
    std::string agent_system;
    std::string agent_step;
    std::string agent_reprompt;
    std::string agent_finalize;

    static PromptSet defaults();
    /// Reads <dir>/<field>.txt for every template present; missing files keep defaults.
    static PromptSet from_directory(const std::filesystem::path& dir);
    std::string hash() const;
};

/// Coordinates and year rendered as they appear in prompts.
std::string format_coordinate(double deg);

std::string render_prompt(const std::string& tmpl, const ClusterRecord& cluster, const std::string& transcript = {});

nlohmann::json nmr_schema();
nlohmann::json finalize_schema();

TextBundle nmr_generate(const ClusterRecord& cluster, const std::string& model_id, ChatProvider& chat,
                        const PromptSet& prompts = PromptSet::defaults(),
                        const RetryPolicy& retry = RetryPolicy::immediate());

// ---------------------------------------------------------------------------
// Search agent
// ---------------------------------------------------------------------------

enum class EventKind { thought, tool_call, tool_result };

std::string to_string(EventKind k);

struct AgentEvent {
    EventKind kind = EventKind::thought;
    int step = 0;
    std::string tool;  ///< "wiki" or "search" for tool events
    std::string query;
    std::string text;  ///< model reply (thought) or tool payload (tool_result)
    std::optional<std::string> error;
};

struct AgentState {
    ClusterRecord cluster;
    int step = 0;
    int max_steps = 20;
    std::vector<AgentEvent> transcript;
    bool done = false;
};

/// One tool result's contribution to the trace.
struct TraceSegment {
    std::string tool;
    std::string text;
};

struct AgentOutput {
    TextBundle bundle;
    std::vector<TraceSegment> segments; ///< bundle.trace is their in-order concatenation
    int steps_used = 0;
    std::map<std::string, int> tools_invoked;
    int chat_calls = 0;
    bool forced_finalize = false;
};

/// Request/reply pair recorded for replay.
struct ChatExchange {
    std::string request_hash;
    std::string reply;
};

struct AgentRun {
    AgentState state;
    AgentOutput output;
    std::vector<ChatExchange> exchanges;
};

/// Text a tool result contributes to the trace: one paragraph per result
/// ("title: snippet"), each terminated by a blank line.
std::string render_tool_payload(const std::vector<SearchResult>& results);

/// Transcript as shown to the model at each step.
std::string render_transcript(const std::vector<AgentEvent>& events);

/// Bounded search-agent loop. Each step the model replies with
/// {"tool": "wiki"|"search"|"finalize", "query"?, "answer"?}. An invalid reply
/// gets one reprompt; a second consecutive invalid reply forces finalization.
/// Every action call consumes one step, so a run makes at most max_steps + 1 chat calls.
AgentRun asa_run(const ClusterRecord& cluster, const std::string& model_id, ChatProvider& chat,
                 SearchProvider& tools, int max_steps = 20, const PromptSet& prompts = PromptSet::defaults(),
                 int search_k = 10);

std::string request_hash(const ChatRequest& req);

/// Trace store entry: traces/<dataset>/<cluster_id>.json.
nlohmann::ordered_json agent_run_to_json(const AgentRun& run);
AgentRun agent_run_from_json(const nlohmann::json& j);
void save_agent_run(const std::filesystem::path& dir, const AgentRun& run);
AgentRun load_agent_run(const std::filesystem::path& path);

/// Replays the chat exchanges of recorded runs, keyed by request hash.
class ReplayChatProvider : public ChatProvider {
public:
    explicit ReplayChatProvider(const std::vector<AgentRun>& runs, std::string id = "replay");
    std::string id() const override { return id_; }
    ChatResponse chat(const ChatRequest& req) override;

private:
    std::string id_;
    std::map<std::string, std::string> replies_;
};

/// Mock agent policy: looks the place up on the wiki, runs one web search,
/// then finalizes with a hashed answer.
MockChatProvider::Responder cooperative_agent_responder();
/// Mock policy that keeps issuing searches and never finalizes on its own.
MockChatProvider::Responder never_finalize_responder();
/// Replies with the scripted actions in order (by number of completed tool
/// calls in the transcript), and a hashed answer to the finalization prompt.
MockChatProvider::Responder scripted_agent_responder(std::vector<nlohmann::json> actions);

// ---------------------------------------------------------------------------
// Trace processing
// ---------------------------------------------------------------------------

/// Removes HTML tags, collapses whitespace inside paragraphs, drops empty and
/// exactly repeated paragraphs (first occurrence kept). Idempotent.
std::string clean_trace(const std::string& raw);

enum class VariantKey { cleaned_traces, wikipedia, top10, justification_only, justification_prediction };

std::string to_string(VariantKey k);
/// Embedding source key, e.g. "ASA:cleaned_traces".
std::string variant_source(VariantKey k);

struct SourceVariant {
    VariantKey key;
    std::string text;
};

/// The five text sources derived from one agent run, in VariantKey order.
std::vector<SourceVariant> extract_variants(const AgentOutput& out);

struct LeakageResult {
    std::vector<TextBundle> kept;
    std::vector<TextBundle> removed;
    double fraction_removed = 0.0;
};

std::vector<std::string> default_leakage_terms();

/// Case-insensitive substring search of each bundle's trace for any term.
LeakageResult leakage_filter(const std::vector<TextBundle>& bundles, const std::vector<std::string>& terms);

} // namespace imprint

#include "imprint/cli.hpp"

#include "imprint/config.hpp"
#include "imprint/converge.hpp"
#include "imprint/core_data.hpp"
#include "imprint/error.hpp"
#include "imprint/eval.hpp"
#include "imprint/model.hpp"
#include "imprint/providers.hpp"
#include "imprint/report.hpp"
#include "imprint/synthgen.hpp"
#include "imprint/textgen.hpp"
#include "imprint/util.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <exception>
#include <optional>
#include <set>

namespace imprint {

namespace fs = std::filesystem;
using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

std::vector<std::pair<std::string, std::string>> hash_tree(const fs::path& dir) {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file()) out.emplace_back(fs::relative(e.path(), dir).generic_string(), sha256_file(e.path()));
    std::sort(out.begin(), out.end());
    return out;
}

namespace {

constexpr const char* kManifestName = "run_manifest.json";

/// Accumulates provenance for one command and writes it next to the outputs.
class RunManifest {
public:
    RunManifest(const std::vector<std::string>& args, const std::optional<Config>& cfg,
                const std::optional<std::string>& cfg_path) {
        j_["tool"] = "imprint";
        j_["command"] = args;
        j_["cwd"] = fs::current_path().generic_string();
        const std::string canonical = cfg ? cfg->canonical() : "";
        if (cfg_path) j_["config"] = {{"path", *cfg_path}, {"sha256", sha256_file(*cfg_path)}};
        j_["config_hash"] = sha256_hex(join(args, "\x1f") + "\x1e" + canonical);
        j_["inputs"] = ordered_json::array();
        j_["seeds"] = ordered_json::object();
        j_["outputs"] = ordered_json::array();
    }

    void input(const fs::path& p) {
        if (fs::is_directory(p)) {
            for (const auto& [rel, sha] : hash_tree(p)) j_["inputs"].push_back({{"path", (p / rel).generic_string()}, {"sha256", sha}});
        } else if (fs::exists(p)) {
            j_["inputs"].push_back({{"path", p.generic_string()}, {"sha256", sha256_file(p)}});
        }
    }
    void seed(const std::string& name, std::uint64_t v) { j_["seeds"][name] = v; }
    void note(const std::string& key, ordered_json v) { j_[key] = std::move(v); }
    void output(const fs::path& p) { j_["outputs"].push_back({{"path", p.generic_string()}, {"sha256", sha256_file(p)}}); }

    void write(const fs::path& p) const { write_file(p, j_.dump(2) + "\n"); }

private:
    ordered_json j_;
};

/// Output directory written through a visible "<dir>.partial" staging area;
/// files only appear under `dir` once the whole command succeeded.
class StagedDir {
public:
    explicit StagedDir(fs::path final_dir) : final_(std::move(final_dir)) {
        stage_ = final_;
        stage_ += ".partial";
        fs::remove_all(stage_);
        std::error_code ec;
        fs::create_directories(stage_, ec);
        if (ec) throw Error("cannot create output directory " + stage_.string() + ": " + ec.message());
    }

    const fs::path& path() const { return stage_; }
    fs::path operator/(const std::string& name) const { return stage_ / name; }

    /// Moves staged files into place and returns their final paths, sorted.
    std::vector<fs::path> commit() {
        std::vector<fs::path> moved;
        fs::create_directories(final_);
        move_tree(stage_, final_, moved);
        fs::remove_all(stage_);
        std::sort(moved.begin(), moved.end());
        return moved;
    }

    const fs::path& final_path() const { return final_; }

private:
    static void move_tree(const fs::path& src, const fs::path& dst, std::vector<fs::path>& moved) {
        std::vector<fs::directory_entry> entries(fs::directory_iterator(src), fs::directory_iterator{});
        for (const auto& e : entries) {
            const auto target = dst / e.path().filename();
            if (e.is_directory()) {
                fs::create_directories(target);
                move_tree(e.path(), target, moved);
            } else {
                fs::rename(e.path(), target);
                moved.push_back(target);
            }
        }
    }

    fs::path final_;
    fs::path stage_;
};

void finish_dir(StagedDir& stage, RunManifest& manifest) {
    for (const auto& p : stage.commit())
        if (p.filename() != kManifestName) manifest.output(p);
    manifest.write(stage.final_path() / kManifestName);
}

void finish_file(const fs::path& out, RunManifest& manifest) {
    manifest.output(out);
    manifest.write(fs::path(out.string() + ".manifest.json"));
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    for (const auto& part : split(s, ',')) {
        const auto t = trim(part);
        if (!t.empty()) out.push_back(t);
    }
    return out;
}

/// Writes every embedding group of `ds` as a binary manifest under `dir`.
void write_embeddings(const fs::path& dir, const Dataset& ds) {
    std::map<std::pair<std::string, std::string>, std::vector<EmbeddingVector>> groups;
    for (const auto& rec : ds.records())
        for (const auto& [sp, _] : ds.source_dims())
            if (const auto* e = ds.find_embedding(rec.cluster_id, sp.first, sp.second)) groups[sp].push_back(*e);
    for (const auto& [sp, vectors] : groups)
        save_embedding_manifest(dir / (source_file_stem(sp.first, sp.second) + ".json"), vectors);
}

/// Attaches extra manifests (files, or every manifest in a directory).
Dataset attach_extra(Dataset ds, const std::vector<std::string>& paths, RunManifest& manifest) {
    for (const auto& p : paths) {
        std::vector<fs::path> files;
        if (fs::is_directory(p)) {
            for (const auto& e : fs::directory_iterator(p)) {
                const auto name = e.path().filename().string();
                if (name.ends_with(".ids.jsonl") || name.ends_with(".manifest.json") || name == kManifestName) continue;
                const auto ext = e.path().extension().string();
                if (ext == ".json" || ext == ".jsonl") files.push_back(e.path());
            }
            std::sort(files.begin(), files.end());
            manifest.input(p);
        } else {
            if (!fs::exists(p)) throw ConfigError("embedding manifest not found: " + p);
            files.push_back(p);
            manifest.input(p);
            const auto stem = fs::path(p).parent_path() / fs::path(p).stem();
            manifest.input(stem.string() + ".f32");
            manifest.input(stem.string() + ".ids.jsonl");
        }
        for (const auto& f : files) ds = attach_embeddings(ds, f);
    }
    return ds;
}

Dataset load_data(const std::string& data, const std::vector<std::string>& extra, RunManifest& manifest) {
    const fs::path dir(data);
    if (!fs::exists(dir / "records.jsonl")) throw ConfigError("no records.jsonl in data directory " + data);
    manifest.input(dir / "records.jsonl");
    manifest.input(dir / "texts.jsonl");
    if (fs::is_directory(dir / "embeddings")) manifest.input(dir / "embeddings");
    auto ds = load_dataset_dir(dir);
    for (const auto& w : ds.warnings()) spdlog::warn("{}", w);
    return attach_extra(std::move(ds), extra, manifest);
}

HttpEndpoint endpoint_from(const Config& cfg, const std::string& section, const std::string& prefix = "") {
    HttpEndpoint ep;
    auto k = [&](const char* name) { return section + "." + prefix + name; };
    const auto base = cfg.get(k("base_url"));
    if (!base) throw ConfigError("missing " + k("base_url"));
    ep.base_url = *base;
    ep.path = cfg.get_or(k("path"), "/");
    ep.method = to_upper(cfg.get_or(k("method"), "POST"));
    ep.auth_env = cfg.get_or(k("auth_env"), "");
    ep.auth_header = cfg.get_or(k("auth_header"), ep.auth_header);
    ep.auth_prefix = cfg.get_or(k("auth_prefix"), ep.auth_prefix);
    ep.request_template = cfg.get_or(k("request_template"), "");
    if (ep.request_template.empty()) throw ConfigError("missing " + k("request_template"));
    ep.response_pointer = cfg.get_or(k("response_pointer"), "");
    ep.timeout_seconds = static_cast<int>(cfg.get_int(k("timeout_seconds"), ep.timeout_seconds));
    ep.max_concurrency = static_cast<int>(cfg.get_int(k("max_concurrency"), ep.max_concurrency));
    ep.requests_per_second = cfg.get_double(k("requests_per_second"), ep.requests_per_second);
    return ep;
}

RetryPolicy retry_from(const Config& cfg, const std::string& section, std::uint64_t seed) {
    RetryPolicy r;
    r.max_attempts = static_cast<int>(cfg.get_int(section + ".max_attempts", r.max_attempts));
    r.base_delay = std::chrono::milliseconds(cfg.get_int(section + ".base_delay_ms", r.base_delay.count()));
    r.seed = seed;
    return r;
}

struct Ctx {
    std::vector<std::string> args;
    std::optional<Config> cfg;
    std::optional<std::string> cfg_path;
    int threads = 0;
    std::ostream* out = nullptr;

    const Config& config() const {
        static const Config empty;
        return cfg ? *cfg : empty;
    }
    RunManifest manifest() const { return RunManifest(args, cfg, cfg_path); }
};

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

struct IngestArgs {
    std::string records, format = "auto", texts, out;
    std::vector<std::string> embeddings, require;
};

void cmd_ingest(const Ctx& ctx, const IngestArgs& a) {
    auto manifest = ctx.manifest();
    manifest.input(a.records);
    Dataset ds = a.format == "auto" ? load_dataset(a.records)
                                    : load_dataset(a.records, a.format == "csv" ? RecordFormat::csv : RecordFormat::jsonl);
    for (const auto& w : ds.warnings()) spdlog::warn("{}", w);
    if (!a.texts.empty()) {
        manifest.input(a.texts);
        ds = attach_texts(ds, a.texts);
    }
    ds = attach_extra(std::move(ds), a.embeddings, manifest);

    StagedDir stage(a.out);
    save_records(stage / "records.jsonl", ds.records());
    if (!ds.texts().empty()) write_file(stage / "texts.jsonl", texts_to_jsonl(ds));
    write_embeddings(stage.path() / "embeddings", ds);
    auto required = a.require;
    if (required.empty())
        for (const auto& [key, dim] : ds.source_dims()) required.push_back(key.first);
    required.erase(std::unique(required.begin(), required.end()), required.end());
    std::string cov = "source,n_present,n_missing\n";
    for (const auto& row : coverage_report(ds, required))
        cov += fmt::format("{},{},{}\n", row.source, row.n_present, row.n_missing);
    write_file(stage / "coverage.csv", cov);
    finish_dir(stage, manifest);
    *ctx.out << fmt::format("ingested {} records into {}\n", ds.size(), a.out) << cov;
}

struct SynthArgs {
    std::string out;
    std::optional<std::uint64_t> seed;
    std::optional<int> n_clusters, n_countries;
    std::optional<double> vision_noise, text_noise, country_effect_scale, agent_extra_signal, leakage_rate;
};

void cmd_synthgen(const Ctx& ctx, const SynthArgs& a) {
    Config cfg = ctx.config();
    if (a.seed) cfg.set("synthgen.seed", std::to_string(*a.seed));
    if (a.n_clusters) cfg.set("synthgen.n_clusters", std::to_string(*a.n_clusters));
    if (a.n_countries) cfg.set("synthgen.n_countries", std::to_string(*a.n_countries));
    if (a.vision_noise) cfg.set("synthgen.vision_noise", format_double(*a.vision_noise));
    if (a.text_noise) cfg.set("synthgen.text_noise", format_double(*a.text_noise));
    if (a.country_effect_scale) cfg.set("synthgen.country_effect_scale", format_double(*a.country_effect_scale));
    if (a.agent_extra_signal) cfg.set("synthgen.agent_extra_signal", format_double(*a.agent_extra_signal));
    if (a.leakage_rate) cfg.set("synthgen.leakage_rate", format_double(*a.leakage_rate));
    const auto gen = gen_config_from(cfg);

    auto manifest = ctx.manifest();
    manifest.seed("synthgen", gen.seed);
    const auto data = generate(gen);
    StagedDir stage(a.out);
    write_synthetic(stage.path(), data);
    write_file(stage / "gen_config.json", gen_config_to_json(gen).dump(2) + "\n");
    finish_dir(stage, manifest);
    *ctx.out << fmt::format("generated {} clusters over {} countries into {}\n", gen.n_clusters, gen.n_countries, a.out);
}

struct TextgenArgs {
    std::string mode, data, out, model = "mock", fixtures, prompts, search = "fixtures";
    int max_steps = 20;
    int search_k = 10;
    std::size_t limit = 0;
    std::uint64_t seed = 0;
};

std::shared_ptr<ChatProvider> make_chat(const Ctx& ctx, const std::string& model, const std::string& mode, std::uint64_t seed) {
    if (model == "mock")
        return std::make_shared<MockChatProvider>("mock", mode == "nmr" ? nmr_mock_responder() : cooperative_agent_responder(),
                                                  seed);
    const auto section = "chat." + model;
    if (!ctx.config().has(section + ".base_url"))
        throw ConfigError("model '" + model + "' is not configured (expected a [" + section + "] section)");
    return std::make_shared<HttpChatProvider>(model, endpoint_from(ctx.config(), section), retry_from(ctx.config(), section, seed));
}

void cmd_textgen(const Ctx& ctx, const TextgenArgs& a) {
    if (a.mode != "nmr" && a.mode != "asa") throw ConfigError("textgen mode must be nmr or asa, got '" + a.mode + "'");
    auto manifest = ctx.manifest();
    manifest.seed("mock", a.seed);
    const fs::path data(a.data);
    manifest.input(data / "records.jsonl");
    const auto ds = load_dataset(data / "records.jsonl", RecordFormat::jsonl);
    const auto prompts = a.prompts.empty() ? PromptSet::defaults() : PromptSet::from_directory(a.prompts);
    if (!a.prompts.empty()) manifest.input(a.prompts);
    auto chat = make_chat(ctx, a.model, a.mode, a.seed);

    std::shared_ptr<SearchProvider> search;
    if (a.mode == "asa") {
        if (a.search == "fixtures") {
            const fs::path root = a.fixtures.empty() ? data / "fixtures" : fs::path(a.fixtures);
            if (fs::is_directory(root)) manifest.input(root);
            search = std::make_shared<FixtureSearchProvider>(root);
        } else if (a.search == "http") {
            const auto& cfg = ctx.config();
            search = std::make_shared<HttpSearchProvider>(endpoint_from(cfg, "search", "wiki_"), endpoint_from(cfg, "search", "web_"),
                                                          retry_from(cfg, "search", a.seed));
        } else {
            throw ConfigError("--search must be fixtures or http");
        }
    }

    auto records = ds.records();
    if (a.limit > 0 && records.size() > a.limit) records.resize(a.limit);
    std::vector<TextBundle> bundles(records.size());
    std::vector<AgentRun> runs(a.mode == "asa" ? records.size() : 0);
    std::vector<std::exception_ptr> errors(records.size());
    parallel_for(records.size(), ctx.threads, [&](std::size_t i) {
        try {
            if (a.mode == "nmr") {
                bundles[i] = nmr_generate(records[i], a.model, *chat, prompts);
            } else {
                runs[i] = asa_run(records[i], a.model, *chat, *search, a.max_steps, prompts, a.search_k);
                bundles[i] = runs[i].output.bundle;
            }
        } catch (...) {
            errors[i] = std::current_exception();
        }
    });
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);

    StagedDir stage(a.out);
    write_file(stage / "texts.jsonl", texts_to_jsonl(Dataset(records).with_texts(bundles)));
    for (const auto& run : runs) save_agent_run(stage.path() / "agent_runs", run);
    std::size_t degraded = 0, low = 0;
    for (const auto& b : bundles) {
        degraded += b.degraded;
        low += b.low_evidence;
    }
    ordered_json meta;
    meta["mode"] = a.mode;
    meta["model"] = a.model;
    meta["prompt_version"] = prompts.version;
    meta["prompt_hash"] = prompts.hash();
    meta["max_steps"] = a.max_steps;
    meta["n"] = bundles.size();
    meta["degraded"] = degraded;
    meta["low_evidence"] = low;
    write_file(stage / "textgen.json", meta.dump(2) + "\n");
    finish_dir(stage, manifest);
    *ctx.out << fmt::format("generated {} {} bundles ({} degraded, {} low-evidence) into {}\n", bundles.size(), a.mode,
                            degraded, low, a.out);
}

struct EmbedArgs {
    std::string data, texts, tag = "nmr", field, runs, embedder = "mock", source, out;
    std::size_t dim = 64;
    int max_context = 8192;
    std::uint64_t seed = 0;
};

std::shared_ptr<EmbedProvider> make_embedder(const Ctx& ctx, const EmbedArgs& a) {
    if (a.embedder == "mock") return std::make_shared<HashEmbedder>(a.dim, a.seed);
    const auto section = "embed." + a.embedder;
    const auto& cfg = ctx.config();
    if (!cfg.has(section + ".base_url"))
        throw ConfigError("embedder '" + a.embedder + "' is not configured (expected a [" + section + "] section)");
    return std::make_shared<HttpEmbedProvider>(a.embedder, endpoint_from(cfg, section), retry_from(cfg, section, a.seed),
                                               cfg.get_or(section + ".vector_pointer", "/embedding"),
                                               static_cast<std::size_t>(cfg.get_int(section + ".batch_size", 64)));
}

std::string text_for(const TextBundle& b, const EmbedArgs& a, const fs::path& runs, const std::string& field) {
    if (a.tag == "nmr") {
        if (field == "desc") return b.desc;
        if (field == "justification") return b.justification;
        throw ConfigError("NMR texts offer fields desc and justification, not '" + field + "'");
    }
    if (field == "summary") return b.summary;
    AgentOutput out;
    out.bundle = b;
    if (field == "wikipedia" || field == "top10") {
        if (runs.empty()) throw ConfigError("field '" + field + "' needs the agent runs directory (--runs)");
        out = load_agent_run(runs / (b.cluster_id + ".json")).output;
    }
    for (const auto& v : extract_variants(out))
        if (to_string(v.key) == field) return v.text;
    throw ConfigError("unknown agent text field '" + field + "'");
}

void cmd_embed(const Ctx& ctx, const EmbedArgs& a) {
    if (a.tag != "nmr" && a.tag != "asa") throw ConfigError("--tag must be nmr or asa");
    const std::string field = a.field.empty() ? (a.tag == "nmr" ? "desc" : "cleaned_traces") : a.field;
    const std::string source = a.source.empty() ? (a.tag == "nmr" ? "NMR:" : "ASA:") + field : a.source;
    auto manifest = ctx.manifest();
    manifest.seed("embedder", a.seed);
    const fs::path data(a.data);
    manifest.input(data / "records.jsonl");
    const fs::path texts_path = a.texts.empty() ? data / "texts.jsonl" : fs::path(a.texts);
    manifest.input(texts_path);
    if (!a.runs.empty()) manifest.input(a.runs);
    const auto ds = load_dataset(data / "records.jsonl", RecordFormat::jsonl);
    const auto bundles = load_texts(texts_path);
    const auto tag = a.tag == "nmr" ? SourceTag::NMR : SourceTag::ASA;

    std::map<std::string, const TextBundle*> by_id;
    for (const auto& b : bundles)
        if (b.source_tag == tag && !by_id.count(b.cluster_id)) by_id[b.cluster_id] = &b;
    std::vector<std::string> ids, texts;
    std::size_t skipped = 0;
    for (const auto& rec : ds.records()) {
        auto it = by_id.find(rec.cluster_id);
        if (it == by_id.end()) continue;
        auto text = text_for(*it->second, a, a.runs, field);
        if (trim(text).empty()) {
            ++skipped;
            continue;
        }
        ids.push_back(rec.cluster_id);
        texts.push_back(std::move(text));
    }
    if (ids.empty()) throw ValidationError("no non-empty " + field + " texts to embed");
    if (skipped) spdlog::warn("skipped {} clusters with empty {} text", skipped, field);

    auto embedder = make_embedder(ctx, a);
    const auto resp = embedder->embed({embedder->id(), texts, a.max_context});
    std::size_t truncated = 0;
    std::vector<EmbeddingVector> vectors;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        truncated += resp.truncated.size() > i && resp.truncated[i];
        vectors.push_back({ids[i], source, embedder->id(), resp.vectors[i]});
    }
    if (truncated) spdlog::info("{} texts were truncated to the {}-token context", truncated, a.max_context);
    manifest.note("embedding", {{"source", source}, {"provider_id", embedder->id()}, {"n", ids.size()},
                                {"skipped_empty", skipped}, {"truncated", truncated}});

    StagedDir stage(a.out);
    save_embedding_manifest(stage / (source_file_stem(source, embedder->id()) + ".json"), vectors);
    finish_dir(stage, manifest);
    *ctx.out << fmt::format("embedded {} texts as {}@{} into {}\n", ids.size(), source, embedder->id(), a.out);
}

struct EvalArgs {
    std::string data, sources, strategy = "random", protocol = "bootstrap", out, texts;
    std::vector<std::string> embeddings, leak_terms, prompt_hashes;
    int iterations = 100, folds = 5;
    double alpha = 1.0, tolerance = 0.02;
    std::uint64_t seed = 0;
    bool oot_random = false, exclude_leaked = false;
};

void cmd_eval(const Ctx& ctx, const EvalArgs& a) {
    auto manifest = ctx.manifest();
    manifest.seed("eval", a.seed);
    auto ds = load_data(a.data, a.embeddings, manifest);
    RunOptions opts;
    opts.threads = ctx.threads;
    opts.split.tolerance = a.tolerance;
    opts.split.oot_random = a.oot_random;
    opts.prompt_hashes = a.prompt_hashes;
    if (!a.texts.empty()) {
        manifest.input(a.texts);
        ds = attach_texts(ds, a.texts);
        const auto meta = fs::path(a.texts).parent_path() / "textgen.json";
        if (fs::exists(meta)) opts.prompt_hashes.push_back(json::parse(read_file(meta)).at("prompt_hash").get<std::string>());
    }

    ordered_json leak;
    if (a.exclude_leaked) {
        const auto terms = a.leak_terms.empty() ? default_leakage_terms() : a.leak_terms;
        std::vector<TextBundle> asa;
        for (const auto& [id, list] : ds.texts())
            for (const auto& b : list)
                if (b.source_tag == SourceTag::ASA) asa.push_back(b);
        const auto res = leakage_filter(asa, terms);
        std::set<std::string> drop;
        for (const auto& b : res.removed) drop.insert(b.cluster_id);
        std::vector<std::string> keep;
        for (const auto& r : ds.records())
            if (!drop.count(r.cluster_id)) keep.push_back(r.cluster_id);
        ds = ds.subset(keep);
        spdlog::info("leakage filter removed {} of {} agent traces ({:.1f}%)", res.removed.size(), asa.size(),
                     100.0 * res.fraction_removed);
        leak = {{"terms", terms}, {"removed", res.removed.size()}, {"fraction_removed", res.fraction_removed}};
    }

    Protocol protocol;
    if (a.protocol == "bootstrap")
        protocol = Protocol::bootstrap(a.iterations);
    else if (a.protocol == "kfold")
        protocol = Protocol::kfold(a.folds);
    else
        throw ConfigError("--protocol must be bootstrap or kfold");
    auto rep = run_protocol(ds, split_list(a.sources), split_strategy_from_string(a.strategy), protocol, a.alpha, a.seed, opts);
    if (!leak.is_null()) {
        rep.provenance["leakage_filter"] = leak;
        rep.config_hash = sha256_hex(rep.provenance.dump());
    }
    save_report(a.out, rep);
    finish_file(a.out, manifest);
    *ctx.out << fmt::format("{} {} {}: R2 {:.4f} ± {:.4f}  RMSE {:.3f} ± {:.3f}  (n={}, dropped {} missing, {} unlabeled)\n",
                            a.sources, a.strategy, to_string(protocol.kind), rep.mean_r2, rep.se_r2, rep.mean_rmse,
                            rep.se_rmse, rep.n_used, rep.n_dropped_missing, rep.n_dropped_unlabeled);
}

struct ConvergeArgs {
    std::string data, a, b, reg = "auto", out;
    std::vector<std::string> embeddings;
    int k = 8, perm = 200, window = 0, bins = 40;
    double fit_fraction = 0.5;
    std::uint64_t seed = 0;
    bool matrix = false;
};

void cmd_converge(const Ctx& ctx, const ConvergeArgs& a) {
    auto manifest = ctx.manifest();
    manifest.seed("converge", a.seed);
    const auto ds = load_data(a.data, a.embeddings, manifest);
    const auto ids = clusters_with_sources(ds, {a.a, a.b}, false);
    if (ids.size() < 6) throw ValidationError("fewer than 6 clusters carry both sources");
    const auto A = fuse_matrix(ds, ids, {a.a}).X;
    const auto B = fuse_matrix(ds, ids, {a.b}).X;
    std::vector<double> lats;
    for (const auto& id : ids) lats.push_back(ds.record(id).lat);

    ConvergeOptions opts;
    opts.k = a.k;
    opts.reg = CcaReg::parse(a.reg);
    opts.convention = a.window > 0 ? CosineConvention::windowed(a.window) : CosineConvention::score_vector(a.k);
    opts.n_perm = a.perm;
    opts.seed = a.seed;
    opts.fit_fraction = a.fit_fraction;
    opts.with_matrix = a.matrix;
    const auto res = converge_analysis(A, B, ids, lats, opts);

    StagedDir stage(a.out);
    auto stats = converge_to_json(res);
    stats["sources"] = {a.a, a.b};
    write_file(stage / "stats.json", stats.dump(2) + "\n");
    std::string sims = "cluster_id,lat,similarity\n";
    std::vector<double> values;
    for (const auto& id : res.sims.ordering) {
        auto it = res.sims.pair_sims.find(id);
        sims += id + "," + format_double(ds.record(id).lat) + "," + (it == res.sims.pair_sims.end() ? "NA" : format_double(it->second)) + "\n";
        if (it != res.sims.pair_sims.end()) values.push_back(it->second);
    }
    write_file(stage / "pair_sims.csv", sims);
    const auto h = histogram(values, a.bins);
    write_file(stage / "histogram.csv", histogram_csv(h));
    write_file(stage / "histogram.svg",
               render_histogram_svg(h.edges, h.counts, fmt::format("{} vs {} aligned cosine, {}", a.a, a.b, res.sims.convention)));
    if (res.sims.matrix) {
        write_file(stage / "matrix.csv", matrix_csv(res.sims));
        write_file(stage / "matrix.svg", render_heatmap_svg(*res.sims.matrix, fmt::format("{} vs {} similarity", a.a, a.b)));
    }
    finish_dir(stage, manifest);
    const auto& st = *res.sims.stats;
    *ctx.out << fmt::format("{} vs {} [{}]: mean {:.4f} median {:.4f} null sigma {:.4f} t {:.3f} p {}\n", a.a, a.b,
                            res.sims.convention, st.mean, st.median, res.null.sigma, st.t_stat, st.p_text);
}

struct ReportArgs {
    std::string baseline, best, report, data, out;
    std::vector<std::string> rows;
    double cell_km = 100.0;
    std::size_t n_min = 30;
};

void cmd_report_hexmap(const Ctx& ctx, const ReportArgs& a) {
    auto manifest = ctx.manifest();
    manifest.input(a.baseline);
    manifest.input(a.best);
    manifest.input(fs::path(a.data) / "records.jsonl");
    const auto base = load_report(a.baseline), best = load_report(a.best);
    const auto ds = load_dataset(fs::path(a.data) / "records.jsonl", RecordFormat::jsonl);
    const auto diffs = residual_diff(base, best);
    const auto cells = hex_aggregate(diffs, ds, a.cell_km);
    const auto grid = hex_grid_for(diffs, ds, a.cell_km);
    const auto years = per_year_series(base, best, a.n_min);

    StagedDir stage(a.out);
    write_file(stage / "residual_diff.csv", residual_diff_csv(diffs, ds));
    write_file(stage / "hexmap.csv", hex_csv(cells));
    write_file(stage / "hexmap.svg", render_hexmap_svg(cells, grid, fmt::format("Residual difference, {} km cells", format_double(a.cell_km))));
    write_file(stage / "year_diff.csv", year_series_csv(years));
    write_file(stage / "year_diff.svg", render_line_svg(years, "Mean absolute residual difference by year"));
    finish_dir(stage, manifest);
    double pos = 0;
    for (const auto& [_, d] : diffs) pos += d > 0;
    *ctx.out << fmt::format("{} shared clusters, {} hex cells, {:.1f}% improved by the best model\n", diffs.size(), cells.size(),
                            100.0 * pos / static_cast<double>(diffs.size()));
}

void cmd_report_years(const Ctx& ctx, const ReportArgs& a) {
    auto manifest = ctx.manifest();
    manifest.input(a.report);
    const auto rep = load_report(a.report);
    const auto s = per_year_series(rep, a.n_min);
    StagedDir stage(a.out);
    write_file(stage / "year_r2.csv", year_series_csv(s));
    write_file(stage / "year_r2.svg", render_line_svg(s, "Test R² by year"));
    finish_dir(stage, manifest);
    *ctx.out << fmt::format("{} years, Mann-Kendall z {:.3f} p {:.3g}\n", s.points.size(), s.trend.z, s.trend.p);
}

void cmd_report_table(const Ctx& ctx, const ReportArgs& a) {
    auto manifest = ctx.manifest();
    std::vector<TableEntry> entries;
    for (const auto& row : a.rows) {
        const auto parts = split(row, '|');
        if (parts.size() != 4) throw ConfigError("--row must be 'procedure|source|embedding|report.json', got '" + row + "'");
        manifest.input(parts[3]);
        entries.push_back(table_entry(load_report(parts[3]), parts[0], parts[1], parts[2]));
    }
    StagedDir stage(a.out);
    const auto md = summary_table_markdown(entries);
    write_file(stage / "table.csv", table_to_csv(entries));
    write_file(stage / "table.md", md);
    finish_dir(stage, manifest);
    *ctx.out << md;
}

struct CompareArgs {
    std::string a, b, out;
};

void cmd_compare(const Ctx& ctx, const CompareArgs& args) {
    auto manifest = ctx.manifest();
    manifest.input(args.a);
    manifest.input(args.b);
    const auto c = compare_reports(load_report(args.a), load_report(args.b));
    ordered_json j;
    j["a"] = args.a;
    j["b"] = args.b;
    j["n_shared"] = c.n_shared;
    j["n_only_a"] = c.n_only_a;
    j["n_only_b"] = c.n_only_b;
    j["r2_a"] = c.r2_a;
    j["r2_b"] = c.r2_b;
    j["rmse_a"] = c.rmse_a;
    j["rmse_b"] = c.rmse_b;
    j["delta_r2"] = c.delta_r2;
    j["delta_rmse"] = c.delta_rmse;
    if (!args.out.empty()) {
        write_file(args.out, j.dump(2) + "\n");
        finish_file(args.out, manifest);
    }
    *ctx.out << fmt::format("shared {} (only a {}, only b {})\nR2   a {:.4f}  b {:.4f}  delta {:+.4f}\nRMSE a {:.4f}  b {:.4f}  delta {:+.4f}\n",
                            c.n_shared, c.n_only_a, c.n_only_b, c.r2_a, c.r2_b, c.delta_r2, c.rmse_a, c.rmse_b, c.delta_rmse);
}

int cmd_rerun(const std::string& manifest_path, bool force, std::ostream& out, std::ostream& err) {
    json m;
    try {
        m = json::parse(read_file(manifest_path));
    } catch (const json::parse_error& e) {
        throw ConfigError(manifest_path + ": " + e.what());
    }
    const auto command = m.at("command").get<std::vector<std::string>>();
    if (!command.empty() && command.front() == "rerun") throw ConfigError("refusing to rerun a rerun manifest");
    const fs::path cwd = m.at("cwd").get<std::string>();
    const auto previous = fs::current_path();
    fs::current_path(cwd);
    struct Restore {
        fs::path p;
        ~Restore() { fs::current_path(p); }
    } restore{previous};

    std::vector<std::string> changed;
    for (const auto& in : m.at("inputs")) {
        const auto p = in.at("path").get<std::string>();
        if (!fs::exists(p) || sha256_file(p) != in.at("sha256").get<std::string>()) changed.push_back(p);
    }
    if (m.contains("config")) {
        const auto p = m["config"].at("path").get<std::string>();
        if (!fs::exists(p) || sha256_file(p) != m["config"].at("sha256").get<std::string>()) changed.push_back(p);
    }
    if (!changed.empty()) {
        for (const auto& p : changed) err << "input changed since the manifest was written: " << p << "\n";
        if (!force) throw ConfigError("inputs differ from the manifest; pass --force to rerun anyway");
    }
    return run_cli(command, out, err);
}

class ExitRequest : public std::exception {
public:
    explicit ExitRequest(int code) : code(code) {}
    int code;
};

} // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"imprint: multimodal wealth prediction from imagery and text embeddings"};
    app.name("imprint");
    app.require_subcommand(1);
    app.fallthrough();
    app.set_help_all_flag("--help-all", "Show help for every subcommand");

    Ctx ctx;
    ctx.args = args;
    ctx.out = &out;
    std::string config_path, log_level = "warn";
    app.add_option("--config", config_path, "Config file (key = value with [sections])");
    app.add_option("--log-level", log_level, "trace, debug, info, warn, error")->capture_default_str();
    app.add_option("--threads", ctx.threads, "Worker threads (0 = all cores)")->capture_default_str();

    IngestArgs ingest;
    auto* c_ingest = app.add_subcommand("ingest", "Validate records/texts/embeddings and write a canonical data directory");
    c_ingest->add_option("--records", ingest.records, "Records file (.jsonl or .csv)")->required();
    c_ingest->add_option("--format", ingest.format, "auto, jsonl or csv")->capture_default_str();
    c_ingest->add_option("--texts", ingest.texts, "Texts JSONL");
    c_ingest->add_option("--embeddings", ingest.embeddings, "Embedding manifests or directories");
    c_ingest->add_option("--require", ingest.require, "Sources to include in the coverage report")->delimiter(',');
    c_ingest->add_option("--out", ingest.out, "Output directory")->required();

    SynthArgs synth;
    auto* c_synth = app.add_subcommand("synthgen", "Generate a synthetic dataset with known structure");
    c_synth->add_option("--out", synth.out, "Output directory")->required();
    c_synth->add_option("--seed", synth.seed, "Generator seed");
    c_synth->add_option("--n-clusters", synth.n_clusters);
    c_synth->add_option("--n-countries", synth.n_countries);
    c_synth->add_option("--vision-noise", synth.vision_noise);
    c_synth->add_option("--text-noise", synth.text_noise);
    c_synth->add_option("--country-effect-scale", synth.country_effect_scale);
    c_synth->add_option("--agent-extra-signal", synth.agent_extra_signal);
    c_synth->add_option("--leakage-rate", synth.leakage_rate);

    TextgenArgs tg;
    auto* c_tg = app.add_subcommand("textgen", "Generate texts with the LLM-only (nmr) or search-agent (asa) pipeline");
    c_tg->add_option("mode", tg.mode, "nmr or asa")->required();
    c_tg->add_option("--data,--dataset", tg.data, "Data directory with records.jsonl")->required();
    c_tg->add_option("--out", tg.out, "Output directory")->required();
    c_tg->add_option("--model", tg.model, "Model id: mock or a configured [chat.<id>] section")->capture_default_str();
    c_tg->add_option("--search", tg.search, "fixtures or http")->capture_default_str();
    c_tg->add_option("--fixtures", tg.fixtures, "Search fixture directory (default <data>/fixtures)");
    c_tg->add_option("--prompts", tg.prompts, "Directory of prompt template overrides");
    c_tg->add_option("--max-steps", tg.max_steps, "Agent step budget")->capture_default_str();
    c_tg->add_option("--search-k", tg.search_k, "Web results per search")->capture_default_str();
    c_tg->add_option("--limit", tg.limit, "Only the first N records");
    c_tg->add_option("--seed", tg.seed, "Seed for mock providers and retry jitter")->capture_default_str();

    EmbedArgs em;
    auto* c_em = app.add_subcommand("embed", "Embed generated texts into a manifest");
    c_em->add_option("--data,--dataset", em.data, "Data directory with records.jsonl")->required();
    c_em->add_option("--texts", em.texts, "Texts JSONL (default <data>/texts.jsonl)");
    c_em->add_option("--tag", em.tag, "nmr or asa")->capture_default_str();
    c_em->add_option("--field", em.field, "desc, justification, summary, cleaned_traces, wikipedia, top10, justification_only, justification_prediction");
    c_em->add_option("--runs", em.runs, "Agent runs directory (needed for wikipedia/top10)");
    c_em->add_option("--embedder", em.embedder, "mock or a configured [embed.<id>] section")->capture_default_str();
    c_em->add_option("--dim", em.dim, "Dimension of the mock embedder")->capture_default_str();
    c_em->add_option("--max-context", em.max_context, "Context window in tokens")->capture_default_str();
    c_em->add_option("--source", em.source, "Source key override");
    c_em->add_option("--seed", em.seed)->capture_default_str();
    c_em->add_option("--out", em.out, "Output directory for the manifest")->required();

    EvalArgs ev;
    auto* c_eval = app.add_subcommand("eval", "Evaluate ridge regression on fused sources");
    c_eval->require_subcommand(1);
    auto* c_run = c_eval->add_subcommand("run", "Run a split/protocol experiment and write an EvalReport");
    c_run->add_option("--data,--dataset", ev.data, "Data directory")->required();
    c_run->add_option("--embeddings", ev.embeddings, "Extra embedding manifests or directories");
    c_run->add_option("--texts", ev.texts, "Extra texts JSONL (for YHAT sources or leakage filtering)");
    c_run->add_option("--sources", ev.sources, "Comma-separated source keys in fusion order")->required();
    c_run->add_option("--strategy", ev.strategy, "random, ooc or oot")->capture_default_str();
    c_run->add_option("--protocol", ev.protocol, "bootstrap or kfold")->capture_default_str();
    c_run->add_option("--iterations", ev.iterations, "Bootstrap iterations")->capture_default_str();
    c_run->add_option("--folds", ev.folds, "k-fold folds")->capture_default_str();
    c_run->add_option("--alpha", ev.alpha, "Ridge penalty")->capture_default_str();
    c_run->add_option("--seed", ev.seed)->capture_default_str();
    c_run->add_option("--tolerance", ev.tolerance, "Allowed test-share deviation for unit splits")->capture_default_str();
    c_run->add_flag("--oot-random", ev.oot_random, "Assign years to folds at random instead of chronologically");
    c_run->add_flag("--exclude-leaked", ev.exclude_leaked, "Drop clusters whose agent trace mentions a survey term");
    c_run->add_option("--leak-terms", ev.leak_terms, "Terms for --exclude-leaked")->delimiter(',');
    c_run->add_option("--prompt-hash", ev.prompt_hashes, "Prompt hashes to record in provenance");
    c_run->add_option("--out", ev.out, "Report JSON path")->required();

    ConvergeArgs cv;
    auto* c_cv = app.add_subcommand("converge", "CCA-aligned cross-modal similarity analysis");
    c_cv->add_option("--data,--dataset", cv.data, "Data directory")->required();
    c_cv->add_option("--embeddings", cv.embeddings, "Extra embedding manifests or directories");
    c_cv->add_option("--a", cv.a, "First source key")->required();
    c_cv->add_option("--b", cv.b, "Second source key")->required();
    c_cv->add_option("--k", cv.k, "CCA components")->capture_default_str();
    c_cv->add_option("--reg", cv.reg, "Covariance shrinkage: auto or a number")->capture_default_str();
    c_cv->add_option("--perm", cv.perm, "Null permutations")->capture_default_str();
    c_cv->add_option("--window", cv.window, "Use first-component scores over a window of this many clusters");
    c_cv->add_option("--fit-fraction", cv.fit_fraction, "Share of clusters used to fit the CCA (0 = in-sample)")->capture_default_str();
    c_cv->add_option("--bins", cv.bins, "Histogram bins")->capture_default_str();
    c_cv->add_option("--seed", cv.seed)->capture_default_str();
    c_cv->add_flag("--matrix", cv.matrix, "Also emit the latitude-sorted similarity matrix");
    c_cv->add_option("--out", cv.out, "Output directory")->required();

    ReportArgs rp;
    auto* c_rep = app.add_subcommand("report", "Figures and tables from EvalReports");
    c_rep->require_subcommand(1);
    auto* c_hex = c_rep->add_subcommand("hexmap", "Residual-difference hex map and per-year series");
    c_hex->add_option("--baseline", rp.baseline, "Baseline report")->required();
    c_hex->add_option("--best", rp.best, "Best report")->required();
    c_hex->add_option("--data,--dataset", rp.data, "Data directory (for coordinates)")->required();
    c_hex->add_option("--cell-km", rp.cell_km, "Hex cell width in km")->capture_default_str();
    c_hex->add_option("--n-min", rp.n_min, "Minimum clusters per year before flagging low support")->capture_default_str();
    c_hex->add_option("--out", rp.out, "Output directory")->required();
    auto* c_years = c_rep->add_subcommand("years", "Per-year R² series of one report");
    c_years->add_option("--report", rp.report, "Report JSON")->required();
    c_years->add_option("--n-min", rp.n_min)->capture_default_str();
    c_years->add_option("--out", rp.out, "Output directory")->required();
    auto* c_table = c_rep->add_subcommand("table", "Comparison table sorted by random-split R²");
    c_table->add_option("--row", rp.rows, "procedure|source|embedding|report.json (repeatable)")->required();
    c_table->add_option("--out", rp.out, "Output directory")->required();

    CompareArgs cmp;
    auto* c_cmp = app.add_subcommand("compare", "Compare two reports on their shared test clusters");
    c_cmp->add_option("--a", cmp.a, "First report")->required();
    c_cmp->add_option("--b", cmp.b, "Second report")->required();
    c_cmp->add_option("--out", cmp.out, "Write the comparison as JSON");

    std::string manifest_path;
    bool force = false;
    auto* c_rerun = app.add_subcommand("rerun", "Re-execute the command recorded in a run manifest");
    c_rerun->add_option("manifest", manifest_path, "Run manifest JSON")->required();
    c_rerun->add_flag("--force", force, "Rerun even if inputs changed");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        if (!args.empty() && !args.front().starts_with("-") && !app.got_subcommand(args.front()))
            err << "unknown subcommand '" << args.front() << "'\n";
        err << "run 'imprint --help' for usage\n";
        return 2;
    }

    try {
        spdlog::set_level(spdlog::level::from_str(log_level));
        if (!config_path.empty()) {
            ctx.cfg = Config::load(config_path);
            ctx.cfg_path = config_path;
        }
        if (c_ingest->parsed()) cmd_ingest(ctx, ingest);
        else if (c_synth->parsed()) cmd_synthgen(ctx, synth);
        else if (c_tg->parsed()) cmd_textgen(ctx, tg);
        else if (c_em->parsed()) cmd_embed(ctx, em);
        else if (c_run->parsed()) cmd_eval(ctx, ev);
        else if (c_cv->parsed()) cmd_converge(ctx, cv);
        else if (c_hex->parsed()) cmd_report_hexmap(ctx, rp);
        else if (c_years->parsed()) cmd_report_years(ctx, rp);
        else if (c_table->parsed()) cmd_report_table(ctx, rp);
        else if (c_cmp->parsed()) cmd_compare(ctx, cmp);
        else if (c_rerun->parsed()) return cmd_rerun(manifest_path, force, out, err);
        return 0;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
}

} // namespace imprint

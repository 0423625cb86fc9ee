// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria (capped at 1 for ctest).

#include "imprint/cli.hpp"
#include "imprint/converge.hpp"
#include "imprint/error.hpp"
#include "imprint/eval.hpp"
#include "imprint/model.hpp"
#include "imprint/providers.hpp"
#include "imprint/report.hpp"
#include "imprint/synthgen.hpp"
#include "imprint/textgen.hpp"
#include "imprint/util.hpp"

#include "support.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <chrono>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

using namespace imprint;
namespace fs = std::filesystem;
using testsupport::TempDir;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Outcome ridge_oracle_equivalence() {
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(1001);
    const double alphas[] = {0.1, 1.0, 10.0};
    double worst = 0.0;
    for (int inst = 0; inst < 200; ++inst) {
        const auto n = 2 + static_cast<Eigen::Index>(rng() % 49);
        const auto d = 1 + static_cast<Eigen::Index>(rng() % 10);
        const double alpha = alphas[inst % 3];
        const Eigen::MatrixXd X = testsupport::gaussian(rng, n, d) * 3.0;
        const Eigen::VectorXd y = testsupport::gaussian(rng, n, 1).col(0) * 10.0;
        const Eigen::MatrixXd Xq = testsupport::gaussian(rng, 5, d) * 3.0;
        std::vector<std::vector<double>> rows(static_cast<std::size_t>(n), std::vector<double>(static_cast<std::size_t>(d)));
        std::vector<double> ys(static_cast<std::size_t>(n));
        for (Eigen::Index i = 0; i < n; ++i) {
            ys[static_cast<std::size_t>(i)] = y(i);
            for (Eigen::Index j = 0; j < d; ++j) rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = X(i, j);
        }
        const auto oracle = testsupport::ridge_oracle(rows, ys, alpha);
        const auto model = ridge_fit(X, y, alpha);
        for (const Eigen::MatrixXd* M : {&X, &Xq}) {
            const Eigen::VectorXd pred = ridge_predict(model, *M);
            for (Eigen::Index i = 0; i < M->rows(); ++i) {
                std::vector<double> row(static_cast<std::size_t>(d));
                for (Eigen::Index j = 0; j < d; ++j) row[static_cast<std::size_t>(j)] = (*M)(i, j);
                worst = std::max(worst, std::abs(pred(i) - oracle.predict(row)));
            }
        }
    }
    const double secs = seconds_since(t0);
    return {worst <= 1e-8 && secs < 10.0, fmt::format("max |Δŷ| {:.2e} over 200 instances, {:.2f}s", worst, secs)};
}

Outcome cca_oracle_equivalence() {
    std::mt19937_64 rng(2002);
    double worst = 0.0;
    for (int inst = 0; inst < 100; ++inst) {
        const auto da = 1 + static_cast<Eigen::Index>(rng() % 10);
        const auto db = 1 + static_cast<Eigen::Index>(rng() % 10);
        const auto n = 40 + static_cast<Eigen::Index>(rng() % 161);
        const Eigen::MatrixXd Z = testsupport::gaussian(rng, n, 2);
        const Eigen::MatrixXd A = Z * testsupport::gaussian(rng, 2, da) + testsupport::gaussian(rng, n, da);
        const Eigen::MatrixXd B = Z * testsupport::gaussian(rng, 2, db) + testsupport::gaussian(rng, n, db);
        const int k = static_cast<int>(std::min(da, db));
        const auto m = cca_fit(A, B, k, CcaReg::fixed(0.0));
        const Eigen::VectorXd ref = testsupport::cca_oracle(A, B, 0.0, 0.0);
        for (int c = 0; c < k; ++c) worst = std::max(worst, std::abs(m.correlations(c) - ref(c)));
    }
    const Eigen::MatrixXd A = testsupport::gaussian(rng, 150, 6);
    const double self = cca_fit(A, A, 1, CcaReg::fixed(0.0)).correlations(0);
    return {worst <= 1e-6 && self >= 1 - 1e-6, fmt::format("max |Δρ| {:.2e} over 100 instances; self-alignment ρ₁ = {:.9f}", worst, self)};
}

const Dataset& default_synth() {
    static const Dataset ds = [] {
        GenConfig g;
        g.seed = 1;
        return generate(g).dataset;
    }();
    return ds;
}

Outcome fusion_gain() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto& ds = default_synth();
    const auto cv = run_protocol(ds, {"CV"}, SplitStrategy::random, Protocol::bootstrap(100), 1.0, 7);
    const auto fused = run_protocol(ds, {"CV", "NMR:desc"}, SplitStrategy::random, Protocol::bootstrap(100), 1.0, 7);
    const double secs = seconds_since(t0);
    const bool in_band = cv.mean_r2 >= 0.55 && cv.mean_r2 <= 0.70;
    const bool gain = fused.mean_r2 - cv.mean_r2 >= 0.05;
    const bool separated = cv.mean_r2 + 2 * cv.se_r2 < fused.mean_r2 - 2 * fused.se_r2;
    return {in_band && gain && separated && secs < 120.0,
            fmt::format("CV {:.4f}±{:.4f}, CV+NMR {:.4f}±{:.4f}, gain {:.4f}, {:.1f}s", cv.mean_r2, cv.se_r2, fused.mean_r2,
                        fused.se_r2, fused.mean_r2 - cv.mean_r2, secs)};
}

Outcome ooc_degradation() {
    auto gap = [](double scale) {
        GenConfig g;
        g.seed = 1;
        g.country_effect_scale = scale;
        const auto ds = generate(g).dataset;
        const auto rnd = run_protocol(ds, {"CV"}, SplitStrategy::random, Protocol::bootstrap(50), 1.0, 11);
        const auto ooc = run_protocol(ds, {"CV"}, SplitStrategy::ooc, Protocol::bootstrap(50), 1.0, 11);
        return std::make_pair(rnd.mean_r2, ooc.mean_r2);
    };
    const auto [r1, o1] = gap(1.0);
    const auto [r0, o0] = gap(0.0);
    return {r1 - o1 >= 0.05 && std::abs(r0 - o0) < 0.02,
            fmt::format("scale 1: random {:.4f} ooc {:.4f} (gap {:.4f}); scale 0: random {:.4f} ooc {:.4f} (gap {:.4f})", r1, o1,
                        r1 - o1, r0, o0, r0 - o0)};
}

Outcome split_leakage() {
    GenConfig g;
    g.seed = 3;
    g.n_countries = 40;
    const auto ds = generate(g).dataset;
    std::map<std::string, std::string> country, year;
    for (const auto& r : ds.records()) {
        country[r.cluster_id] = r.country;
        year[r.cluster_id] = std::to_string(r.year);
    }
    auto overlaps = [](const SplitPlan& p, const std::map<std::string, std::string>& unit) {
        std::set<std::string> train, test;
        for (const auto& id : p.train_ids) train.insert(unit.at(id));
        for (const auto& id : p.val_ids) train.insert(unit.at(id));
        for (const auto& id : p.test_ids) test.insert(unit.at(id));
        std::size_t n = 0;
        for (const auto& u : test) n += train.count(u);
        return n;
    };
    std::size_t overlap = 0, share_violations = 0;
    double worst_share = 0.0;
    for (std::uint64_t s = 0; s < 1000; ++s) {
        const auto ooc = make_split(ds, SplitStrategy::ooc, s, Fractions{});
        overlap += overlaps(ooc, country);
        const double dev = std::abs(ooc.test_share() - 0.2);
        worst_share = std::max(worst_share, dev);
        if (dev > 0.02 + 1e-12) ++share_violations;
        SplitOptions opts;
        opts.oot_random = s % 2 == 1;
        overlap += overlaps(make_split(ds, SplitStrategy::oot, s, Fractions{}, opts), year);
    }
    return {overlap == 0 && share_violations == 0,
            fmt::format("1000 OOC + 1000 OOT plans: {} unit overlaps, max |OOC test share − 0.20| = {:.4f}", overlap, worst_share)};
}

Outcome agent_termination() {
    TempDir tmp("acc_agent");
    const ClusterRecord rec{"mg1", -18.85, 47.58, "MG", 1997, "Manazary, Madagascar", 30.0};
    FixtureSearchProvider::write_fixture(
        tmp.path(), "wiki", rec.place_name,
        {{1, "Manazary", "Manazary is a commune in Madagascar. It has a population estimated at 37,000 in 2001.", "u1"}});
    FixtureSearchProvider::write_fixture(
        tmp.path(), "search", rec.place_name,
        {{1, "Antananarivo-Avaradrano", "Antananarivo- Avaradrano is a district of Analamanga in Madagascar.", "u2"}});
    // The adversary asks "<place> <n>" forever; give every query its own answer
    // so the trace check compares real payloads.
    for (int n = 0; n < 20; ++n)
        FixtureSearchProvider::write_fixture(tmp.path(), n % 2 ? "search" : "wiki", rec.place_name + " " + std::to_string(n),
                                             {{1, fmt::format("Result {}", n), fmt::format("Snippet number {} about the commune.", n),
                                               fmt::format("u{}", n)}});
    FixtureSearchProvider tools(tmp.path());

    MockChatProvider adversary("m", never_finalize_responder());
    const auto stuck = asa_run(rec, "m", adversary, tools, 20);
    std::string concat;
    for (const auto& e : stuck.state.transcript)
        if (e.kind == EventKind::tool_result) concat += e.text;
    const bool halted = stuck.output.steps_used == 20 && adversary.calls() <= 21;
    bool ordered = true;
    std::size_t pos = 0;
    for (int n = 0; n < 20 && ordered; ++n) {
        pos = concat.find(fmt::format("Snippet number {} ", n), pos);
        ordered = pos != std::string::npos;
    }
    const bool fidelity = stuck.output.bundle.trace == concat && ordered;

    MockChatProvider helper("m", cooperative_agent_responder(), 5);
    const auto good = asa_run(rec, "m", helper, tools, 20);
    const bool quick = good.output.steps_used <= 3 && !good.output.forced_finalize;
    return {halted && fidelity && quick,
            fmt::format("adversarial: {} steps, {} calls, trace match {}; cooperative: {} steps", stuck.output.steps_used,
                        adversary.calls(), fidelity ? "yes" : "no", good.output.steps_used)};
}

Outcome convergence_statistics() {
    ConvergeOptions opts;
    opts.k = 3;
    opts.convention = CosineConvention::score_vector(3);
    opts.n_perm = 200;
    opts.seed = 5;
    const Eigen::Index n = 1000;
    std::vector<std::string> ids;
    std::vector<double> lats;
    for (Eigen::Index i = 0; i < n; ++i) {
        ids.push_back(fmt::format("c{:04d}", i));
        lats.push_back(static_cast<double>(i % 97));
    }

    std::mt19937_64 rng(77);
    const Eigen::MatrixXd Z = testsupport::gaussian(rng, n, 3);
    const Eigen::MatrixXd A = Z * testsupport::gaussian(rng, 3, 10) + 0.5 * testsupport::gaussian(rng, n, 10);
    const Eigen::MatrixXd B = Z * testsupport::gaussian(rng, 3, 12) + 0.5 * testsupport::gaussian(rng, n, 12);
    const auto shared = converge_analysis(A, B, ids, lats, opts);
    const bool rejects = shared.test_null.p < 1e-6;

    double max_t = 0.0;
    for (std::uint64_t s = 0; s < 20; ++s) {
        std::mt19937_64 r(1000 + s);
        const Eigen::MatrixXd Ai = testsupport::gaussian(r, n, 10);
        const Eigen::MatrixXd Bi = testsupport::gaussian(r, n, 12);
        auto o = opts;
        o.seed = s;
        max_t = std::max(max_t, std::abs(converge_analysis(Ai, Bi, ids, lats, o).test_null.t));
    }

    const auto m = cca_fit(A, B, 3);
    const auto s1 = null_calibrate(m, A, B, 200, 42, opts.convention);
    const auto s2 = null_calibrate(m, A, B, 200, 42, opts.convention);
    const double dsig = std::abs(s1.sigma - s2.sigma);
    return {rejects && max_t < 3.0 && dsig <= 1e-12,
            fmt::format("shared: mean {:.3f} p {}; independent: max |t| {:.3f} over 20 seeds; σ repeat Δ {:.1e}",
                        shared.sims.stats ? shared.sims.stats->mean : 0.0, shared.test_null.p_text, max_t, dsig)};
}

Outcome leakage_arithmetic() {
    std::vector<TextBundle> corpus;
    for (int i = 0; i < 1000; ++i) {
        TextBundle b;
        b.cluster_id = fmt::format("c{}", i);
        b.source_tag = SourceTag::ASA;
        b.trace = i < 104 ? "Census notes. The DHS team visited in 2009." : "A rural district with a weekly market.";
        corpus.push_back(b);
    }
    const auto lr = leakage_filter(corpus, default_leakage_terms());
    const bool exact = lr.fraction_removed == 0.104 && lr.removed.size() == 104;

    const auto& ds = default_synth();
    std::vector<TextBundle> asa;
    for (const auto& [id, bundles] : ds.texts())
        for (const auto& b : bundles)
            if (b.source_tag == SourceTag::ASA) asa.push_back(b);
    const auto filtered = leakage_filter(asa, default_leakage_terms());
    std::vector<std::string> keep;
    for (const auto& b : filtered.kept) keep.push_back(b.cluster_id);
    const auto sources = std::vector<std::string>{"CV", "ASA:cleaned_traces"};
    const auto full = run_protocol(ds, sources, SplitStrategy::random, Protocol::bootstrap(100), 1.0, 13);
    const auto post = run_protocol(ds.subset(keep), sources, SplitStrategy::random, Protocol::bootstrap(100), 1.0, 13);
    const double delta = post.mean_r2 - full.mean_r2;
    return {exact && std::abs(delta) < 0.02,
            fmt::format("constructed corpus fraction {}; synthetic: {:.1f}% removed, R² {:.4f} → {:.4f} (Δ {:+.4f})",
                        format_double(lr.fraction_removed), 100 * filtered.fraction_removed, full.mean_r2, post.mean_r2, delta)};
}

int quiet_cli(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    if (code != 0) throw Error("imprint " + join(args, " ") + " failed: " + err.str());
    return code;
}

std::vector<std::pair<std::string, std::string>> pipeline(const fs::path& root) {
    const auto prev = fs::current_path();
    fs::current_path(root);
    try {
        quiet_cli({"synthgen", "--out", "data", "--n-clusters", "300", "--seed", "5"});
        quiet_cli({"textgen", "nmr", "--data", "data", "--out", "nmr"});
        quiet_cli({"textgen", "asa", "--data", "data", "--out", "asa", "--max-steps", "6"});
        quiet_cli({"embed", "--data", "data", "--texts", "nmr/texts.jsonl", "--tag", "nmr", "--out", "emb_nmr"});
        quiet_cli({"embed", "--data", "data", "--texts", "asa/texts.jsonl", "--tag", "asa", "--runs", "asa/agent_runs", "--out",
                   "emb_asa"});
        quiet_cli({"eval", "run", "--data", "data", "--sources", "CV", "--iterations", "10", "--out", "eval_cv.json"});
        quiet_cli({"eval", "run", "--data", "data", "--embeddings", "emb_nmr", "--embeddings", "emb_asa", "--sources",
                   "CV,NMR:desc@mock-hash,ASA:cleaned_traces@mock-hash", "--iterations", "10", "--out", "eval_fused.json"});
        quiet_cli({"converge", "--data", "data", "--embeddings", "emb_nmr", "--a", "CV", "--b", "NMR:desc@mock-hash", "--perm",
                   "50", "--matrix", "--out", "conv"});
        quiet_cli({"report", "hexmap", "--baseline", "eval_cv.json", "--best", "eval_fused.json", "--data", "data", "--out",
                   "hex"});
        quiet_cli({"report", "years", "--report", "eval_fused.json", "--out", "years"});
        quiet_cli({"report", "table", "--row", "Base|CV|synthetic|eval_cv.json", "--row",
                   "LLM|NMR+ASA+CV|mock|eval_fused.json", "--out", "table"});
    } catch (...) {
        fs::current_path(prev);
        throw;
    }
    fs::current_path(prev);
    // Manifests record the working directory, which differs between the two roots.
    auto tree = hash_tree(root);
    std::erase_if(tree, [](const auto& e) {
        return e.first.ends_with("run_manifest.json") || e.first.ends_with(".manifest.json");
    });
    return tree;
}

Outcome determinism() {
    TempDir a("acc_run_a"), b("acc_run_b");
    const auto ta = pipeline(a.path());
    const auto tb = pipeline(b.path());
    std::size_t differing = 0;
    for (std::size_t i = 0; i < std::min(ta.size(), tb.size()); ++i) differing += ta[i] != tb[i];
    const bool same = ta == tb && ta.size() > 20;

    // Replaying a recorded manifest reproduces its output byte for byte.
    const auto before = read_file(a / "eval_fused.json");
    const auto prev = fs::current_path();
    quiet_cli({"rerun", (a / "eval_fused.json.manifest.json").string()});
    fs::current_path(prev);
    const bool replay = read_file(a / "eval_fused.json") == before;
    return {same && replay, fmt::format("{} files per run, {} differing; manifest replay {}", ta.size(),
                                        differing + (ta.size() > tb.size() ? ta.size() - tb.size() : tb.size() - ta.size()),
                                        replay ? "identical" : "changed")};
}

Outcome report_mechanics() {
    Rng rng(10);
    std::vector<ClusterRecord> recs;
    std::map<std::string, double> diffs;
    for (int i = 0; i < 10000; ++i) {
        const auto id = fmt::format("p{}", i);
        recs.push_back({id, rng.uniform(-35, 35), rng.uniform(-20, 55), "XA", 2000, "", 50.0});
        diffs[id] = 10 * rng.normal();
    }
    const Dataset ds(recs);
    const auto cells = hex_aggregate(diffs, ds, 100);
    double total = 0, from_cells = 0;
    std::size_t count = 0;
    for (const auto& [_, d] : diffs) total += d;
    for (const auto& c : cells) {
        from_cells += c.mean_diff * static_cast<double>(c.n);
        count += c.n;
    }
    const double err = std::abs(total - from_cells);
    const bool conserved = err <= 1e-9 && count == diffs.size();

    auto e = [](std::string p, std::string s, SplitStrategy sp, double r2) { return TableEntry{p, s, "emb", sp, r2, 1.0, 0.0}; };
    const auto md = summary_table_markdown({e("Base", "CV", SplitStrategy::random, 0.634), e("Base", "CV", SplitStrategy::ooc, 0.446),
                                            e("LLM", "NMR+CV", SplitStrategy::random, 0.765)});
    const auto lines = split(md, '\n');
    const bool layout = lines.size() >= 4 &&
                        lines[0] == "| Procedure | Source | Embedding | Random R² | Random RMSE | OOC R² | OOC RMSE | OOT R² | OOT RMSE |" &&
                        lines[2].starts_with("| LLM | NMR+CV | emb | 0.765 |") &&
                        lines[3].starts_with("| Base | CV | emb | 0.634 | 1.000 | 0.446 |");
    return {conserved && layout, fmt::format("{} cells over 10000 points, |Σ error| {:.1e}; table order {}", cells.size(), err,
                                             layout ? "NMR+CV (0.765) above CV (0.634)" : "wrong")};
}

} // namespace

int main() {
    spdlog::set_level(spdlog::level::err);
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"ridge oracle equivalence", ridge_oracle_equivalence},
        {"CCA oracle equivalence", cca_oracle_equivalence},
        {"fusion gain", fusion_gain},
        {"OOC degradation", ooc_degradation},
        {"split leakage", split_leakage},
        {"agent termination and fidelity", agent_termination},
        {"convergence statistics", convergence_statistics},
        {"leakage-filter arithmetic", leakage_arithmetic},
        {"end-to-end determinism", determinism},
        {"report mechanics", report_mechanics},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& ex) {
            o = {false, std::string("threw: ") + ex.what()};
        }
        failed += !o.pass;
        std::cout << (o.pass ? "PASS" : "FAIL") << "  AC" << i + 1 << " " << criteria[i].first << ": " << o.detail << std::endl;
    }
    std::cout << criteria.size() - static_cast<std::size_t>(failed) << "/" << criteria.size() << " criteria passed" << std::endl;
    return failed == 0 ? 0 : 1;
}

#include "imprint/error.hpp"
#include "imprint/report.hpp"
#include "imprint/synthgen.hpp"
#include "imprint/util.hpp"

#include "support.hpp"

#include <doctest.h>

#include <algorithm>

using namespace imprint;
using testsupport::TempDir;

namespace {

EvalReport report_with(std::map<std::string, ClusterPredictions> pc) {
    EvalReport r;
    r.per_cluster = std::move(pc);
    return r;
}

Dataset points(const std::vector<std::pair<double, double>>& latlon) {
    std::vector<ClusterRecord> recs;
    for (std::size_t i = 0; i < latlon.size(); ++i)
        recs.push_back({"p" + std::to_string(i), latlon[i].first, latlon[i].second, "XA", 2000, "", 50.0});
    return Dataset(recs);
}

} // namespace

TEST_CASE("residual difference") {
    const auto base = report_with({{"a", {50, 2000, {40}}}, {"b", {10, 2000, {10}}}});
    const auto best = report_with({{"a", {50, 2000, {45}}}, {"c", {10, 2000, {10}}}});
    const auto d = residual_diff(base, best);
    REQUIRE(d.size() == 1);
    CHECK(d.at("a") == 5.0);
    for (const auto& [id, v] : residual_diff(base, base)) CHECK(v == 0.0);
    // repeated tests: mean absolute residual per model
    const auto multi_base = report_with({{"a", {50, 2000, {40, 60, 56}}}});
    const auto multi_best = report_with({{"a", {50, 2000, {51}}}});
    CHECK(residual_diff(multi_base, multi_best).at("a") == doctest::Approx((10.0 + 10.0 + 6.0) / 3.0 - 1.0));
    CHECK_THROWS_AS(residual_diff(base, report_with({{"zz", {1, 2000, {1}}}})), ValidationError);
}

TEST_CASE("hex cells: single point, nearby points, bad size") {
    const auto ds = points({{10.0, 20.0}});
    const auto one = hex_aggregate({{"p0", 3.5}}, ds, 100);
    REQUIRE(one.size() == 1);
    CHECK(one[0].n == 1);
    CHECK(one[0].mean_diff == 3.5);

    HexGrid g{100.0, 10.0};
    const auto [clat, clon] = g.center(0, 0);
    const double km_per_deg = 6371.0088 * M_PI / 180.0;
    const auto ds2 = points({{clat, clon}, {clat + 1.0 / km_per_deg, clon}});
    const auto two = hex_aggregate({{"p0", 1.0}, {"p1", 2.0}}, ds2, 100);
    REQUIRE(two.size() == 1);
    CHECK(two[0].n == 2);
    CHECK(two[0].mean_diff == 1.5);
    CHECK_THROWS_AS(hex_aggregate({{"p0", 1.0}}, ds, 0.0), ConfigError);
}

TEST_CASE("hex index is a total function with cell centers mapping to themselves") {
    HexGrid g{50.0, -5.0};
    for (int q = -5; q <= 5; ++q)
        for (int r = -5; r <= 5; ++r) {
            const auto [lat, lon] = g.center(q, r);
            CHECK(g.index(lat, lon) == std::make_pair(q, r));
        }
    // a point exactly between two horizontal neighbours goes to the lower q
    const auto [la, loa] = g.center(0, 0);
    const auto [lb, lob] = g.center(1, 0);
    CHECK(g.index((la + lb) / 2, (loa + lob) / 2) == std::make_pair(0, 0));
}

TEST_CASE("hex aggregation conserves mass") {
    Rng rng(5);
    std::vector<std::pair<double, double>> ll;
    std::map<std::string, double> diffs;
    for (int i = 0; i < 2000; ++i) {
        ll.emplace_back(rng.uniform(-30, 30), rng.uniform(-20, 50));
        diffs["p" + std::to_string(i)] = rng.normal() * 5;
    }
    const auto ds = points(ll);
    const auto cells = hex_aggregate(diffs, ds, 150);
    double total = 0, from_cells = 0;
    std::size_t n = 0;
    for (const auto& [id, d] : diffs) total += d;
    for (const auto& c : cells) {
        from_cells += c.mean_diff * static_cast<double>(c.n);
        n += c.n;
    }
    CHECK(n == diffs.size());
    CHECK(std::abs(total - from_cells) < 1e-9);
    CHECK(std::is_sorted(cells.begin(), cells.end(), [](const HexCell& a, const HexCell& b) {
        return std::make_pair(a.q, a.r) < std::make_pair(b.q, b.r);
    }));
}

TEST_CASE("mann-kendall against the hand formula") {
    const auto t = mann_kendall({1, 2, 3, 4, 5});
    CHECK(t.s == 10);
    const double var = 5.0 * 4.0 * 15.0 / 18.0;
    CHECK(t.z == doctest::Approx(9.0 / std::sqrt(var)));
    CHECK(t.p == doctest::Approx(0.02749).epsilon(1e-3));
    const auto tied = mann_kendall({1, 1, 2, 2});
    CHECK(tied.s == 4);
    const double tv = (4.0 * 3.0 * 13.0 - 2.0 * (2.0 * 1.0 * 9.0)) / 18.0;
    CHECK(tied.z == doctest::Approx(3.0 / std::sqrt(tv)));
    CHECK(mann_kendall({3, 3, 3}).z == 0.0);
}

TEST_CASE("per-year series") {
    const auto single = report_with({{"a", {10, 2001, {12}}}, {"b", {20, 2001, {19}}}, {"c", {30, 2001, {31}}}});
    const auto s = per_year_series(single, 30);
    REQUIRE(s.points.size() == 1);
    CHECK(s.points[0].low_support);
    CHECK(s.metric == "r2");

    std::map<std::string, ClusterPredictions> pc;
    for (int i = 0; i < 40; ++i) pc["c" + std::to_string(i)] = {static_cast<double>(i), 2000 + i % 4, {static_cast<double>(i)}};
    pc["lonely"] = {5, 1999, {6}};
    const auto perfect = per_year_series(report_with(pc), 5);
    CHECK(perfect.points.size() == 4);
    for (const auto& p : perfect.points) CHECK(*p.value == doctest::Approx(1.0));
    CHECK(perfect.excluded == std::vector<int>{1999});

    const auto pair = per_year_series(report_with(pc), report_with(pc), 5);
    CHECK(pair.metric == "mean_abs_residual_diff");
    for (const auto& p : pair.points) CHECK(*p.value == 0.0);
}

TEST_CASE("label drift after a year shows up as lower R² in later years") {
    GenConfig g;
    g.n_clusters = 4000;
    g.drift_year = 2017;
    g.drift_shift = 15.0;
    g.seed = 8;
    const auto ds = generate(g).dataset;
    const auto rep = run_protocol(ds, {"CV", "NMR:desc"}, SplitStrategy::oot, Protocol::bootstrap(1), 1.0, 1);
    const auto s = per_year_series(rep, 30);
    double pre = 0, post = 0;
    int npre = 0, npost = 0;
    for (const auto& p : s.points) {
        if (!p.value) continue;
        (p.year >= 2017 ? post : pre) += *p.value;
        ++(p.year >= 2017 ? npost : npre);
    }
    REQUIRE(npre > 0);
    REQUIRE(npost > 0);
    CHECK(post / npost < pre / npre);
}

TEST_CASE("text-informative countries gain from fusion") {
    GenConfig g;
    g.n_clusters = 3000;
    g.n_countries = 4;
    g.text_informativeness_by_country = {{"XA", 2.0}, {"XB", 0.0}, {"XC", 0.0}, {"XD", 0.0}};
    g.seed = 12;
    const auto ds = generate(g).dataset;
    const auto cv = run_protocol(ds, {"CV"}, SplitStrategy::random, Protocol::bootstrap(10), 1.0, 4);
    const auto fused = run_protocol(ds, {"CV", "NMR:desc"}, SplitStrategy::random, Protocol::bootstrap(10), 1.0, 4);
    std::map<std::string, std::pair<double, int>> by_country;
    for (const auto& [id, d] : residual_diff(cv, fused)) {
        auto& slot = by_country[ds.record(id).country];
        slot.first += d;
        ++slot.second;
    }
    const double xa = by_country["XA"].first / by_country["XA"].second;
    const double xb = by_country["XB"].first / by_country["XB"].second;
    CHECK(xa > 0.0);
    CHECK(xa > xb);
}

TEST_CASE("svg rendering is deterministic and copes with empty input") {
    const auto empty = render_hexmap_svg({}, HexGrid{100, 0}, "Empty");
    CHECK(empty.rfind("<svg", 0) == 0);
    CHECK(empty.find("</svg>") != std::string::npos);
    CHECK(empty.find("<polygon") == std::string::npos);
    CHECK(empty.find("mean residual difference") != std::string::npos);

    const std::vector<HexCell> cells{{1.0, 2.0, 0, 0, 1.5, 3}, {1.5, 2.5, 1, 0, -2.0, 1}};
    const auto a = render_hexmap_svg(cells, HexGrid{100, 1}, "Cells");
    CHECK(a == render_hexmap_svg(cells, HexGrid{100, 1}, "Cells"));
    CHECK(std::count(a.begin(), a.end(), '\n') > 3);
    CHECK(sha256_hex(a) == sha256_hex(render_hexmap_svg(cells, HexGrid{100, 1}, "Cells")));

    Eigen::MatrixXd m(2, 2);
    m << 1, 0.5, std::nan(""), -1;
    const auto h = render_heatmap_svg(m, "M");
    CHECK(h == render_heatmap_svg(m, "M"));
    CHECK(h.find("nan") == std::string::npos);
    const auto big = render_heatmap_svg(Eigen::MatrixXd::Random(900, 900), "big");
    // block-averaged down to at most 400 × 400 cells
    std::size_t rects = 0;
    for (auto p = big.find("<rect"); p != std::string::npos; p = big.find("<rect", p + 1)) ++rects;
    CHECK(rects <= 400 * 400 + 64);
    CHECK(rects >= 400 * 400);

    YearSeries ys;
    ys.metric = "r2";
    ys.points = {{2000, 0.5, 40, false}, {2001, std::nullopt, 3, true}, {2002, 0.6, 40, false}};
    CHECK(render_line_svg(ys, "Years").find("<polyline") != std::string::npos);
    CHECK(render_histogram_svg({-1, 0, 1}, {3, 4}, "H").find("<rect") != std::string::npos);
}

TEST_CASE("summary table follows the comparison layout, sorted by random R²") {
    auto e = [](std::string proc, std::string src, SplitStrategy s, double r2) {
        return TableEntry{std::move(proc), std::move(src), "emb", s, r2, 10.0, 0.01};
    };
    const std::vector<TableEntry> rows{e("Base", "CV", SplitStrategy::random, 0.634), e("Base", "CV", SplitStrategy::ooc, 0.446),
                                       e("LLM", "NMR+CV", SplitStrategy::random, 0.765), e("Agent", "ASA", SplitStrategy::ooc, 0.3),
                                       e("LLM", "NMR", SplitStrategy::random, 0.701), e("LLM", "NMR", SplitStrategy::oot, 0.6)};
    const auto md = summary_table_markdown(rows);
    const auto lines = split(md, '\n');
    CHECK(lines[0] == "| Procedure | Source | Embedding | Random R² | Random RMSE | OOC R² | OOC RMSE | OOT R² | OOT RMSE |");
    CHECK(lines[2].find("| LLM | NMR+CV |") == 0);
    CHECK(lines[3].find("| LLM | NMR |") == 0);
    CHECK(lines[4].find("| Base | CV |") == 0);
    CHECK(lines[4].find("0.446") != std::string::npos);
    CHECK(lines[5].find("| Agent | ASA |") == 0);
    CHECK(lines[5].find("| NA | NA |") != std::string::npos);
}

TEST_CASE("csv exports") {
    const auto ds = points({{1.25, 2.5}});
    CHECK(residual_diff_csv({{"p0", 2.0}}, ds) == "cluster_id,lat,lon,country,year,diff\np0,1.25,2.5,XA,2000,2.0\n");
    CHECK(hex_csv({}).rfind("q,r,center_lat", 0) == 0);
}

TEST_CASE("emit fails clearly on an unwritable location") {
    TempDir tmp("emit");
    write_file(tmp / "file", "x");
    CHECK_THROWS_AS(emit(tmp / "file" / "sub", "a.csv", "x"), Error);
    emit(tmp / "ok", "a.csv", "x");
    CHECK(read_file(tmp / "ok" / "a.csv") == "x");
}

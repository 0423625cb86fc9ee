#include "imprint/report.hpp"

#include "imprint/error.hpp"
#include "imprint/util.hpp"

#include <boost/math/distributions/normal.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <tuple>

namespace imprint {

namespace {

constexpr double kEarthRadiusKm = 6371.0088;
constexpr double kDeg = std::numbers::pi / 180.0;

double mean_abs_residual(const ClusterPredictions& cp) {
    double s = 0.0;
    for (double p : cp.yhat) s += std::abs(cp.y - p);
    return s / static_cast<double>(cp.yhat.size());
}

std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
        case '&': out += "&amp;"; break;
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '"': out += "&quot;"; break;
        default: out += c;
        }
    }
    return out;
}

std::string f2(double v) {
    const auto s = fmt::format("{:.2f}", v);
    return s == "-0.00" ? "0.00" : s;
}

/// Blue at −1, white at 0, red at +1; grey for undefined values.
std::string diverging(double t) {
    if (std::isnan(t)) return "#bdbdbd";
    t = std::clamp(t, -1.0, 1.0);
    const double lo[3] = {49, 54, 149}, hi[3] = {165, 0, 38};
    const double* end = t < 0 ? lo : hi;
    const double a = std::abs(t);
    int rgb[3];
    for (int i = 0; i < 3; ++i) rgb[i] = static_cast<int>(std::lround(255.0 + (end[i] - 255.0) * a));
    return fmt::format("#{:02x}{:02x}{:02x}", rgb[0], rgb[1], rgb[2]);
}

std::string svg_open(int w, int h) {
    return fmt::format("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\" "
                       "font-family=\"sans-serif\" font-size=\"12\">\n<rect width=\"{}\" height=\"{}\" fill=\"white\"/>\n",
                       w, h, w, h, w, h);
}

std::string svg_text(double x, double y, const std::string& text, const char* anchor = "start", int size = 12) {
    return fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"{}\" font-size=\"{}\">{}</text>\n", f2(x), f2(y), anchor, size,
                       xml_escape(text));
}

/// Horizontal colour bar labelled with the value range it encodes.
std::string legend(double x, double y, double lo, double hi, const std::string& label) {
    std::string out;
    constexpr int steps = 20;
    for (int i = 0; i < steps; ++i) {
        const double t = -1.0 + 2.0 * (i + 0.5) / steps;
        out += fmt::format("<rect x=\"{}\" y=\"{}\" width=\"10\" height=\"12\" fill=\"{}\"/>\n", f2(x + 10.0 * i), f2(y),
                           diverging(t));
    }
    out += svg_text(x, y + 26, fmt::format("{:.3g}", lo));
    out += svg_text(x + 10.0 * steps, y + 26, fmt::format("{:.3g}", hi), "end");
    out += svg_text(x + 10.0 * steps + 8, y + 11, label);
    return out;
}

} // namespace

std::map<std::string, double> residual_diff(const EvalReport& baseline, const EvalReport& best) {
    std::map<std::string, double> out;
    for (const auto& [id, b] : baseline.per_cluster) {
        auto it = best.per_cluster.find(id);
        if (it == best.per_cluster.end() || b.yhat.empty() || it->second.yhat.empty()) continue;
        out[id] = mean_abs_residual(b) - mean_abs_residual(it->second);
    }
    if (out.empty()) throw ValidationError("reports share no test clusters; residual differences are undefined");
    return out;
}

// ---------------------------------------------------------------------------
// Hex grid
// ---------------------------------------------------------------------------

std::pair<double, double> HexGrid::project_km(double lat, double lon) const {
    return {kEarthRadiusKm * lon * kDeg * std::cos(ref_lat * kDeg), kEarthRadiusKm * lat * kDeg};
}

std::pair<double, double> HexGrid::center(int q, int r) const {
    const double size = cell_km / std::sqrt(3.0);
    const double x = size * std::sqrt(3.0) * (q + r / 2.0);
    const double y = size * 1.5 * r;
    return {y / kEarthRadiusKm / kDeg, x / (kEarthRadiusKm * std::cos(ref_lat * kDeg)) / kDeg};
}

std::vector<std::pair<double, double>> HexGrid::corners_km(int q, int r) const {
    const double size = cell_km / std::sqrt(3.0);
    const double cx = size * std::sqrt(3.0) * (q + r / 2.0);
    const double cy = size * 1.5 * r;
    std::vector<std::pair<double, double>> out;
    for (int i = 0; i < 6; ++i) {
        const double angle = (60.0 * i - 30.0) * kDeg;
        out.emplace_back(cx + size * std::cos(angle), cy + size * std::sin(angle));
    }
    return out;
}

std::pair<int, int> HexGrid::index(double lat, double lon) const {
    const double size = cell_km / std::sqrt(3.0);
    const auto [x, y] = project_km(lat, lon);
    const double qf = (std::sqrt(3.0) / 3.0 * x - y / 3.0) / size;
    const double rf = (2.0 / 3.0 * y) / size;
    // Cube rounding gives the nearest cell except on boundaries; checking its
    // neighbours by distance makes boundary points resolve deterministically.
    const double sf = -qf - rf;
    double rq = std::round(qf), rr = std::round(rf), rs = std::round(sf);
    const double dq = std::abs(rq - qf), dr = std::abs(rr - rf), ds = std::abs(rs - sf);
    if (dq > dr && dq > ds)
        rq = -rr - rs;
    else if (dr > ds)
        rr = -rq - rs;
    const int q0 = static_cast<int>(rq), r0 = static_cast<int>(rr);

    static constexpr int nb[7][2] = {{0, 0}, {1, 0}, {-1, 0}, {0, 1}, {0, -1}, {1, -1}, {-1, 1}};
    std::tuple<double, int, int> best{std::numeric_limits<double>::infinity(), 0, 0};
    for (const auto& d : nb) {
        const int q = q0 + d[0], r = r0 + d[1];
        const double cx = size * std::sqrt(3.0) * (q + r / 2.0);
        const double cy = size * 1.5 * r;
        const double dist = std::hypot(x - cx, y - cy);
        const auto& [bd, bq, br] = best;
        const double eps = 1e-9 * size;
        if (dist < bd - eps || (std::abs(dist - bd) <= eps && std::tie(q, r) < std::tie(bq, br))) best = {dist, q, r};
    }
    return {std::get<1>(best), std::get<2>(best)};
}

HexGrid hex_grid_for(const std::map<std::string, double>& diffs, const Dataset& ds, double cell_km) {
    if (!(cell_km > 0.0)) throw ConfigError("cell_km must be > 0");
    HexGrid g;
    g.cell_km = cell_km;
    double s = 0.0;
    for (const auto& [id, _] : diffs) s += ds.record(id).lat;
    g.ref_lat = diffs.empty() ? 0.0 : s / static_cast<double>(diffs.size());
    return g;
}

std::vector<HexCell> hex_aggregate(const std::map<std::string, double>& diffs, const Dataset& ds, double cell_km) {
    const auto grid = hex_grid_for(diffs, ds, cell_km);
    std::map<std::pair<int, int>, std::pair<double, std::size_t>> acc;
    for (const auto& [id, d] : diffs) {
        const auto& rec = ds.record(id);
        auto& cell = acc[grid.index(rec.lat, rec.lon)];
        cell.first += d;
        ++cell.second;
    }
    std::vector<HexCell> cells;
    for (const auto& [qr, sum_n] : acc) {
        HexCell c;
        c.q = qr.first;
        c.r = qr.second;
        std::tie(c.center_lat, c.center_lon) = grid.center(c.q, c.r);
        c.n = sum_n.second;
        c.mean_diff = sum_n.first / static_cast<double>(c.n);
        cells.push_back(c);
    }
    return cells;
}

// ---------------------------------------------------------------------------
// Year series
// ---------------------------------------------------------------------------

TrendTest mann_kendall(const std::vector<double>& x) {
    TrendTest t;
    t.n = x.size();
    if (x.size() < 3) return t;
    const auto n = static_cast<double>(x.size());
    for (std::size_t i = 0; i < x.size(); ++i)
        for (std::size_t j = i + 1; j < x.size(); ++j) t.s += (x[j] > x[i]) - (x[j] < x[i]);
    auto sorted = x;
    std::sort(sorted.begin(), sorted.end());
    double ties = 0.0;
    for (std::size_t i = 0; i < sorted.size();) {
        std::size_t j = i;
        while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
        const double g = static_cast<double>(j - i);
        ties += g * (g - 1) * (2 * g + 5);
        i = j;
    }
    const double var = (n * (n - 1) * (2 * n + 5) - ties) / 18.0;
    if (var <= 0.0) return t;
    t.z = t.s > 0 ? (t.s - 1) / std::sqrt(var) : t.s < 0 ? (t.s + 1) / std::sqrt(var) : 0.0;
    t.p = 2.0 * boost::math::cdf(boost::math::complement(boost::math::normal(), std::abs(t.z)));
    return t;
}

namespace {

YearSeries finish_series(std::string metric, std::map<int, YearPoint> points, std::vector<int> excluded) {
    YearSeries s;
    s.metric = std::move(metric);
    s.excluded = std::move(excluded);
    std::vector<double> values;
    for (auto& [year, p] : points) {
        if (p.value) values.push_back(*p.value);
        s.points.push_back(p);
    }
    for (int y : s.excluded) spdlog::info("year {} excluded from series: fewer than 2 clusters", y);
    s.trend = mann_kendall(values);
    return s;
}

} // namespace

YearSeries per_year_series(const EvalReport& r, std::size_t n_min) {
    std::map<int, std::pair<std::vector<double>, std::vector<double>>> by_year;
    for (const auto& [id, cp] : r.per_cluster) {
        if (cp.yhat.empty()) continue;
        by_year[cp.year].first.push_back(cp.y);
        by_year[cp.year].second.push_back(mean(cp.yhat));
    }
    std::map<int, YearPoint> points;
    std::vector<int> excluded;
    for (const auto& [year, yy] : by_year) {
        if (yy.first.size() < 2) {
            excluded.push_back(year);
            continue;
        }
        YearPoint p;
        p.year = year;
        p.n = yy.first.size();
        p.value = metrics(yy.first, yy.second).r2;
        p.low_support = p.n < n_min;
        points[year] = p;
    }
    return finish_series("r2", std::move(points), std::move(excluded));
}

YearSeries per_year_series(const EvalReport& baseline, const EvalReport& best, std::size_t n_min) {
    const auto diffs = residual_diff(baseline, best);
    std::map<int, std::vector<double>> by_year;
    for (const auto& [id, d] : diffs) by_year[baseline.per_cluster.at(id).year].push_back(d);
    std::map<int, YearPoint> points;
    std::vector<int> excluded;
    for (const auto& [year, ds] : by_year) {
        if (ds.size() < 2) {
            excluded.push_back(year);
            continue;
        }
        points[year] = {year, mean(ds), ds.size(), ds.size() < n_min};
    }
    return finish_series("mean_abs_residual_diff", std::move(points), std::move(excluded));
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

std::string residual_diff_csv(const std::map<std::string, double>& diffs, const Dataset& ds) {
    std::string out = "cluster_id,lat,lon,country,year,diff\n";
    for (const auto& [id, d] : diffs) {
        const auto& r = ds.record(id);
        out += id + "," + format_double(r.lat) + "," + format_double(r.lon) + "," + r.country + "," + std::to_string(r.year) +
               "," + format_double(d) + "\n";
    }
    return out;
}

std::string hex_csv(const std::vector<HexCell>& cells) {
    std::string out = "q,r,center_lat,center_lon,mean_diff,n\n";
    for (const auto& c : cells)
        out += fmt::format("{},{},{},{},{},{}\n", c.q, c.r, format_fixed(c.center_lat, 6), format_fixed(c.center_lon, 6),
                           format_double(c.mean_diff), c.n);
    return out;
}

std::string year_series_csv(const YearSeries& s) {
    std::string out = "year," + s.metric + ",n,low_support\n";
    for (const auto& p : s.points)
        out += fmt::format("{},{},{},{}\n", p.year, p.value ? format_double(*p.value) : "NA", p.n, p.low_support ? 1 : 0);
    return out;
}

// ---------------------------------------------------------------------------
// SVG
// ---------------------------------------------------------------------------

std::string render_hexmap_svg(const std::vector<HexCell>& cells, const HexGrid& grid, const std::string& title) {
    constexpr int W = 800, H = 640;
    constexpr double margin = 40, top = 50, bottom = 70;
    std::string out = svg_open(W, H);
    out += svg_text(W / 2.0, 28, title, "middle", 16);

    double vmax = 0.0;
    for (const auto& c : cells) vmax = std::max(vmax, std::abs(c.mean_diff));
    if (vmax == 0.0) vmax = 1.0;

    if (!cells.empty()) {
        double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
        std::vector<std::vector<std::pair<double, double>>> polys;
        for (const auto& c : cells) {
            polys.push_back(grid.corners_km(c.q, c.r));
            for (const auto& [x, y] : polys.back()) {
                x0 = std::min(x0, x);
                x1 = std::max(x1, x);
                y0 = std::min(y0, y);
                y1 = std::max(y1, y);
            }
        }
        const double scale = std::min((W - 2 * margin) / std::max(x1 - x0, 1e-9), (H - top - bottom) / std::max(y1 - y0, 1e-9));
        for (std::size_t i = 0; i < cells.size(); ++i) {
            std::string pts;
            for (const auto& [x, y] : polys[i]) {
                if (!pts.empty()) pts += ' ';
                pts += f2(margin + (x - x0) * scale) + "," + f2(top + (y1 - y) * scale);
            }
            out += fmt::format("<polygon points=\"{}\" fill=\"{}\" stroke=\"#555555\" stroke-width=\"0.5\"><title>n={} mean={}</title></polygon>\n",
                               pts, diverging(cells[i].mean_diff / vmax), cells[i].n, format_fixed(cells[i].mean_diff, 4));
        }
    }
    out += legend(margin, H - 45, -vmax, vmax, "mean residual difference");
    out += "</svg>\n";
    return out;
}

std::string render_heatmap_svg(const Eigen::MatrixXd& m, const std::string& title) {
    constexpr int W = 720, H = 760;
    constexpr double left = 40, top = 50, side = 640;
    // Large matrices are block-averaged so the file stays drawable.
    constexpr Eigen::Index max_cells = 400;
    const Eigen::Index n = m.rows();
    const Eigen::Index g = std::min(n, max_cells);
    std::string out = svg_open(W, H);
    out += svg_text(W / 2.0, 28, title, "middle", 16);
    if (g > 0) {
        const double cell = side / static_cast<double>(g);
        for (Eigen::Index i = 0; i < g; ++i) {
            const auto r0 = i * n / g, r1 = (i + 1) * n / g;
            for (Eigen::Index j = 0; j < g; ++j) {
                const auto c0 = j * n / g, c1 = (j + 1) * n / g;
                double s = 0.0;
                int k = 0;
                for (auto a = r0; a < r1; ++a)
                    for (auto b = c0; b < c1; ++b)
                        if (!std::isnan(m(a, b))) {
                            s += m(a, b);
                            ++k;
                        }
                const double v = k ? s / k : std::numeric_limits<double>::quiet_NaN();
                out += fmt::format("<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\"/>\n", f2(left + j * cell),
                                   f2(top + i * cell), f2(cell + 0.01), f2(cell + 0.01), diverging(v));
            }
        }
    }
    out += svg_text(left, top + side + 16, "rows/columns sorted by ascending latitude");
    out += legend(left, H - 45, -1.0, 1.0, "cosine similarity");
    out += "</svg>\n";
    return out;
}

std::string render_line_svg(const YearSeries& s, const std::string& title) {
    constexpr int W = 720, H = 420;
    constexpr double left = 60, right = 20, top = 50, bottom = 60;
    std::string out = svg_open(W, H);
    out += svg_text(W / 2.0, 28, title, "middle", 16);
    std::vector<const YearPoint*> pts;
    for (const auto& p : s.points)
        if (p.value) pts.push_back(&p);
    double v0 = 0.0, v1 = 1.0;
    int y0 = 0, y1 = 1;
    if (!pts.empty()) {
        v0 = v1 = *pts.front()->value;
        y0 = y1 = pts.front()->year;
        for (auto* p : pts) {
            v0 = std::min(v0, *p->value);
            v1 = std::max(v1, *p->value);
            y0 = std::min(y0, p->year);
            y1 = std::max(y1, p->year);
        }
        if (v1 - v0 < 1e-9) {
            v0 -= 0.5;
            v1 += 0.5;
        }
        if (y1 == y0) {
            --y0;
            ++y1;
        }
    }
    const double pw = W - left - right, ph = H - top - bottom;
    auto px = [&](int year) { return left + (year - y0) * pw / (y1 - y0); };
    auto py = [&](double v) { return top + (v1 - v) * ph / (v1 - v0); };
    out += fmt::format("<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n", f2(left), f2(top + ph), f2(left + pw), f2(top + ph));
    out += fmt::format("<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n", f2(left), f2(top), f2(left), f2(top + ph));
    out += svg_text(left - 6, py(v1) + 4, fmt::format("{:.3g}", v1), "end");
    out += svg_text(left - 6, py(v0) + 4, fmt::format("{:.3g}", v0), "end");
    out += svg_text(left + pw / 2, H - 15, "year", "middle");
    out += svg_text(14, top - 10, s.metric);
    if (!pts.empty()) {
        std::string line;
        for (auto* p : pts) {
            if (!line.empty()) line += ' ';
            line += f2(px(p->year)) + "," + f2(py(*p->value));
        }
        out += "<polyline fill=\"none\" stroke=\"#2166ac\" stroke-width=\"2\" points=\"" + line + "\"/>\n";
        for (auto* p : pts) {
            out += fmt::format("<circle cx=\"{}\" cy=\"{}\" r=\"4\" fill=\"{}\" stroke=\"#2166ac\"/>\n", f2(px(p->year)),
                               f2(py(*p->value)), p->low_support ? "white" : "#2166ac");
            out += svg_text(px(p->year), top + ph + 18, std::to_string(p->year), "middle", 10);
        }
    }
    out += svg_text(left + pw, top - 10,
                    fmt::format("Mann-Kendall S={} z={:.3f} p={:.3g}", static_cast<long>(s.trend.s), s.trend.z, s.trend.p), "end");
    out += "</svg>\n";
    return out;
}

std::string render_histogram_svg(const std::vector<double>& edges, const std::vector<std::size_t>& counts,
                                 const std::string& title) {
    if (edges.size() != counts.size() + 1) throw ValidationError("histogram needs one more edge than counts");
    constexpr int W = 720, H = 420;
    constexpr double left = 60, right = 20, top = 50, bottom = 60;
    std::string out = svg_open(W, H);
    out += svg_text(W / 2.0, 28, title, "middle", 16);
    std::size_t cmax = 1;
    for (auto c : counts) cmax = std::max(cmax, c);
    const double pw = W - left - right, ph = H - top - bottom;
    const double bw = counts.empty() ? 0.0 : pw / static_cast<double>(counts.size());
    for (std::size_t i = 0; i < counts.size(); ++i) {
        const double h = ph * static_cast<double>(counts[i]) / static_cast<double>(cmax);
        out += fmt::format("<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"#4393c3\" stroke=\"white\" stroke-width=\"0.5\"/>\n",
                           f2(left + i * bw), f2(top + ph - h), f2(bw), f2(h));
    }
    out += fmt::format("<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n", f2(left), f2(top + ph), f2(left + pw), f2(top + ph));
    if (!edges.empty()) {
        out += svg_text(left, top + ph + 18, fmt::format("{:.3g}", edges.front()), "middle");
        out += svg_text(left + pw, top + ph + 18, fmt::format("{:.3g}", edges.back()), "middle");
    }
    out += svg_text(left - 6, top + 4, std::to_string(cmax), "end");
    out += "</svg>\n";
    return out;
}

// ---------------------------------------------------------------------------
// Summary table
// ---------------------------------------------------------------------------

std::string summary_table_markdown(const std::vector<TableEntry>& entries) {
    using Key = std::tuple<std::string, std::string, std::string>;
    struct Row {
        Key key;
        std::map<SplitStrategy, const TableEntry*> by_split;
    };
    std::map<Key, Row> rows;
    for (const auto& e : entries) {
        auto& row = rows[{e.procedure, e.source, e.embedding}];
        row.key = {e.procedure, e.source, e.embedding};
        if (row.by_split.count(e.split))
            throw ValidationError("duplicate table entry for " + e.procedure + "/" + e.source + "/" + e.embedding + "/" +
                                  to_string(e.split));
        row.by_split[e.split] = &e;
    }
    std::vector<const Row*> ordered;
    for (const auto& [_, r] : rows) ordered.push_back(&r);
    std::stable_sort(ordered.begin(), ordered.end(), [](const Row* a, const Row* b) {
        const auto ra = a->by_split.find(SplitStrategy::random), rb = b->by_split.find(SplitStrategy::random);
        const bool ha = ra != a->by_split.end(), hb = rb != b->by_split.end();
        if (ha != hb) return ha;
        return ha && ra->second->r2 > rb->second->r2;
    });
    std::string out = "| Procedure | Source | Embedding | Random R² | Random RMSE | OOC R² | OOC RMSE | OOT R² | OOT RMSE |\n"
                      "|---|---|---|---|---|---|---|---|---|\n";
    for (const auto* r : ordered) {
        out += "| " + std::get<0>(r->key) + " | " + std::get<1>(r->key) + " | " + std::get<2>(r->key) + " |";
        for (auto s : {SplitStrategy::random, SplitStrategy::ooc, SplitStrategy::oot}) {
            auto it = r->by_split.find(s);
            if (it == r->by_split.end())
                out += " NA | NA |";
            else
                out += " " + format_fixed(it->second->r2, 3) + " | " + format_fixed(it->second->rmse, 3) + " |";
        }
        out += "\n";
    }
    return out;
}

void emit(const std::filesystem::path& dir, const std::string& name, const std::string& content) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw Error("cannot create output directory " + dir.string() + ": " + ec.message());
    write_file(dir / name, content);
}

} // namespace imprint

#pragma once

#include "imprint/core_data.hpp"
#include "imprint/eval.hpp"

#include <Eigen/Dense>

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace imprint {

/// |y − ŷ_baseline| − |y − ŷ_best| per shared test cluster; positive means the
/// best model is closer to the truth. Clusters tested several times use the
/// mean absolute residual of each model.
std::map<std::string, double> residual_diff(const EvalReport& baseline, const EvalReport& best);

struct HexCell {
    double center_lat = 0.0;
    double center_lon = 0.0;
    int q = 0;
    int r = 0;
    double mean_diff = 0.0;
    std::size_t n = 0;
};

/// Pointy-top axial grid on an equirectangular projection scaled at `ref_lat`.
/// `cell_km` is the distance between opposite edges of a cell.
struct HexGrid {
    double cell_km = 100.0;
    double ref_lat = 0.0;

    std::pair<int, int> index(double lat, double lon) const;
    std::pair<double, double> center(int q, int r) const; ///< (lat, lon)
    /// Corner coordinates in projected km, for drawing.
    std::vector<std::pair<double, double>> corners_km(int q, int r) const;
    std::pair<double, double> project_km(double lat, double lon) const; ///< (x, y)
};

/// Mean difference and count per occupied cell, sorted by (q, r). The grid
/// reference latitude is the mean latitude of the contributing clusters.
std::vector<HexCell> hex_aggregate(const std::map<std::string, double>& diffs, const Dataset& ds, double cell_km = 100.0);
HexGrid hex_grid_for(const std::map<std::string, double>& diffs, const Dataset& ds, double cell_km);

struct TrendTest {
    double s = 0.0; ///< Mann–Kendall S
    double z = 0.0;
    double p = 1.0;
    std::size_t n = 0;
};

/// Mann–Kendall monotonic trend test with tie correction, normal approximation.
TrendTest mann_kendall(const std::vector<double>& series);

struct YearPoint {
    int year = 0;
    std::optional<double> value; ///< absent when R² is undefined (constant targets)
    std::size_t n = 0;
    bool low_support = false;
};

struct YearSeries {
    std::string metric; ///< "r2" or "mean_abs_residual_diff"
    std::vector<YearPoint> points;
    std::vector<int> excluded; ///< years with fewer than 2 clusters
    TrendTest trend;
};

/// Per-year R² of one report, computed on each cluster's mean prediction.
YearSeries per_year_series(const EvalReport& r, std::size_t n_min = 30);
/// Per-year mean residual difference of a report pair.
YearSeries per_year_series(const EvalReport& baseline, const EvalReport& best, std::size_t n_min = 30);

std::string residual_diff_csv(const std::map<std::string, double>& diffs, const Dataset& ds);
std::string hex_csv(const std::vector<HexCell>& cells);
std::string year_series_csv(const YearSeries& s);

std::string render_hexmap_svg(const std::vector<HexCell>& cells, const HexGrid& grid, const std::string& title);
std::string render_heatmap_svg(const Eigen::MatrixXd& m, const std::string& title);
std::string render_line_svg(const YearSeries& s, const std::string& title);
std::string render_histogram_svg(const std::vector<double>& edges, const std::vector<std::size_t>& counts,
                                 const std::string& title);

/// Rows grouped by (procedure, source, embedding) with R²/RMSE per split, in
/// the order Random, OOC, OOT, sorted by descending random-split R².
std::string summary_table_markdown(const std::vector<TableEntry>& entries);

/// Writes `content` under `dir`, failing with a clear error if the directory
/// cannot be created or written.
void emit(const std::filesystem::path& dir, const std::string& name, const std::string& content);

} // namespace imprint

#pragma once

#include <Eigen/Dense>
#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace imprint {

/// Paired linear projections maximizing successive cross-modal correlations.
struct CcaModel {
    int k = 1;
    Eigen::MatrixXd proj_a;       ///< d_a × k, unit variance under the regularized covariance
    Eigen::MatrixXd proj_b;       ///< d_b × k
    Eigen::VectorXd correlations; ///< descending
    double reg_a = 0.0;           ///< shrinkage actually added to diag(Caa)
    double reg_b = 0.0;
    Eigen::VectorXd means_a;
    Eigen::VectorXd means_b;
};

/// Shrinkage added to each covariance diagonal. Automatic uses
/// 1e-3 · trace(C) / dim per covariance.
struct CcaReg {
    bool automatic = true;
    double value = 0.0;

    static CcaReg fixed(double v) { return {false, v}; }
    static CcaReg autoscaled() { return {true, 0.0}; }
    static CcaReg parse(const std::string& s); ///< "auto" or a number ≥ 0
};

/// Solves Cab Cbb⁻¹ Cba a = ρ² Caa a. Sign convention: the first nonzero
/// loading of each proj_a column is positive and proj_b follows so that the
/// component correlation is non-negative.
CcaModel cca_fit(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B, int k, CcaReg reg = {});

/// Centered component scores of each row, first `k` components.
Eigen::MatrixXd project_a(const CcaModel& m, const Eigen::MatrixXd& A, int k);
Eigen::MatrixXd project_b(const CcaModel& m, const Eigen::MatrixXd& B, int k);

/// How per-pair similarity is formed from component scores. With one
/// component the cosine of two scalars is only a sign, so two conventions
/// exist: cosine of the k-dim score vectors, or (for any k) cosine of the
/// first-component scores of a window of w consecutive clusters ending at
/// the pair. w = 1 is the pure sign.
struct CosineConvention {
    enum class Kind { score_vector, window } kind = Kind::score_vector;
    int k = 8;
    int window = 1;

    static CosineConvention score_vector(int k) { return {Kind::score_vector, k, 1}; }
    static CosineConvention windowed(int w) { return {Kind::window, 1, w}; }
    std::string label() const;
};

struct SimilarityStats {
    double mean = 0.0;
    double median = 0.0;
    double t_stat = 0.0;
    double p_value = 1.0;
    std::string p_text;       ///< "<1e-300" when below double range
    std::optional<double> null_sigma;
    bool low_confidence = false; ///< null estimated from fewer than 100 permutations
};

struct SimilarityResult {
    std::string convention;
    std::vector<std::string> ordering;         ///< rows of `matrix`, and pair_sims order for exports
    std::map<std::string, double> pair_sims;
    std::vector<std::string> missing;          ///< pairs with a zero projected vector
    std::optional<Eigen::MatrixXd> matrix;     ///< NaN where undefined
    std::optional<SimilarityStats> stats;
};

/// Per-pair cosine after alignment; rows of A, B are matched and named by `ids`.
SimilarityResult aligned_cosine(const CcaModel& m, const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                                const std::vector<std::string>& ids, const CosineConvention& conv);

struct NullCalibration {
    double sigma = 0.0;
    double mean = 0.0;
    int n_perm = 0;
    std::size_t n_sims = 0;
    bool low_confidence = false;
};

/// Re-pairs B's rows with fixed-point-free permutations and measures the
/// spread of mismatched-pair similarities.
NullCalibration null_calibrate(const CcaModel& m, const Eigen::MatrixXd& A, const Eigen::MatrixXd& B, int n_perm,
                               std::uint64_t seed, const CosineConvention& conv);

struct TTest {
    double t = 0.0;
    double p = 1.0;
    double df = 0.0;
    std::string p_text;
};

/// Two-sided test of zero mean. Without `sigma` the sample std is used;
/// with it, t = mean / (sigma / √n). Degrees of freedom n − 1 either way.
TTest one_sample_test(const std::vector<double>& sims, std::optional<double> sigma = std::nullopt);

/// Formats a p-value; values below 1e-300 become "<1e-300".
std::string format_p_value(double p);

/// M[i][j] = cos(score_a(o(i)), score_b(o(j))) with o sorting clusters by
/// ascending latitude (ties keep input order).
SimilarityResult similarity_matrix(const CcaModel& m, const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                                   const std::vector<std::string>& ids, const std::vector<double>& latitudes, int k);

struct ConvergeOptions {
    int k = 8;
    CcaReg reg;
    CosineConvention convention = CosineConvention::score_vector(8);
    int n_perm = 200;
    std::uint64_t seed = 0;
    /// Fraction of clusters used to fit the CCA; similarities are measured on
    /// the rest. 0 fits and measures on all rows (in-sample, biased upward).
    double fit_fraction = 0.5;
    bool with_matrix = false;
};

struct ConvergeResult {
    CcaModel model;
    std::vector<std::string> fit_ids;
    SimilarityResult sims;
    NullCalibration null;
    TTest test_sample;  ///< sample-std t-test
    TTest test_null;    ///< t-test using the null sigma
};

ConvergeResult converge_analysis(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B, const std::vector<std::string>& ids,
                                 const std::vector<double>& latitudes, const ConvergeOptions& opts);

struct Histogram {
    std::vector<double> edges; ///< bins + 1 edges
    std::vector<std::size_t> counts;
};

/// Equal-width bins on [lo, hi]; values outside are clamped into the end bins.
Histogram histogram(const std::vector<double>& values, int bins = 40, double lo = -1.0, double hi = 1.0);
std::string histogram_csv(const Histogram& h);
std::string matrix_csv(const SimilarityResult& r);
nlohmann::ordered_json converge_to_json(const ConvergeResult& r);

} // namespace imprint

#pragma once

// Independent reference implementations and fixtures shared by the tests.
// Nothing here calls into the library's numeric code.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace testsupport {

/// Fresh empty directory under the system temp dir; removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static std::mt19937_64 rng(std::random_device{}());
        path_ = std::filesystem::temp_directory_path() / ("imprint_" + tag + "_" + std::to_string(rng()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

/// Solves M x = b by Gaussian elimination with partial pivoting.
inline std::vector<double> gauss_solve(std::vector<std::vector<double>> M, std::vector<double> b) {
    const std::size_t n = b.size();
    for (std::size_t c = 0; c < n; ++c) {
        std::size_t piv = c;
        for (std::size_t r = c + 1; r < n; ++r)
            if (std::abs(M[r][c]) > std::abs(M[piv][c])) piv = r;
        if (std::abs(M[piv][c]) < 1e-300) throw std::runtime_error("singular system");
        std::swap(M[c], M[piv]);
        std::swap(b[c], b[piv]);
        for (std::size_t r = c + 1; r < n; ++r) {
            const double f = M[r][c] / M[c][c];
            for (std::size_t k = c; k < n; ++k) M[r][k] -= f * M[c][k];
            b[r] -= f * b[c];
        }
    }
    std::vector<double> x(n);
    for (std::size_t i = n; i-- > 0;) {
        double s = b[i];
        for (std::size_t k = i + 1; k < n; ++k) s -= M[i][k] * x[k];
        x[i] = s / M[i][i];
    }
    return x;
}

struct RidgeOracle {
    std::vector<double> means, scales, weights;
    double intercept = 0.0;

    double predict(const std::vector<double>& row) const {
        double s = intercept;
        for (std::size_t j = 0; j < row.size(); ++j) s += weights[j] * (row[j] - means[j]) / scales[j];
        return s;
    }
};

/// Ridge on z-scored columns (population std, constant columns pinned to
/// weight 0) with an unpenalized intercept, via the explicit normal equations.
inline RidgeOracle ridge_oracle(const std::vector<std::vector<double>>& X, const std::vector<double>& y, double alpha) {
    const std::size_t n = X.size(), d = X.front().size();
    RidgeOracle o;
    o.means.assign(d, 0.0);
    o.scales.assign(d, 1.0);
    for (std::size_t j = 0; j < d; ++j) {
        for (const auto& r : X) o.means[j] += r[j];
        o.means[j] /= static_cast<double>(n);
        double ss = 0;
        for (const auto& r : X) ss += (r[j] - o.means[j]) * (r[j] - o.means[j]);
        const double sd = std::sqrt(ss / static_cast<double>(n));
        if (sd > 1e-12 * std::max(1.0, std::abs(o.means[j]))) o.scales[j] = sd;
    }
    double ybar = 0;
    for (double v : y) ybar += v;
    ybar /= static_cast<double>(n);
    o.intercept = ybar;

    std::vector<std::size_t> active;
    for (std::size_t j = 0; j < d; ++j) {
        bool constant = true;
        for (const auto& r : X) constant = constant && std::abs(r[j] - o.means[j]) <= 1e-12 * std::max(1.0, std::abs(o.means[j]));
        if (!constant) active.push_back(j);
    }
    o.weights.assign(d, 0.0);
    if (active.empty()) return o;
    const std::size_t k = active.size();
    std::vector<std::vector<double>> G(k, std::vector<double>(k, 0.0));
    std::vector<double> rhs(k, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> z(k);
        for (std::size_t a = 0; a < k; ++a) z[a] = (X[i][active[a]] - o.means[active[a]]) / o.scales[active[a]];
        for (std::size_t a = 0; a < k; ++a) {
            rhs[a] += z[a] * (y[i] - ybar);
            for (std::size_t b = 0; b < k; ++b) G[a][b] += z[a] * z[b];
        }
    }
    for (std::size_t a = 0; a < k; ++a) G[a][a] += alpha;
    const auto w = gauss_solve(G, rhs);
    for (std::size_t a = 0; a < k; ++a) o.weights[active[a]] = w[a];
    return o;
}

inline Eigen::MatrixXd inv_sqrt_psd(const Eigen::MatrixXd& C) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(C);
    return es.eigenvectors() * es.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
}

/// Canonical correlations by whitening each block and taking the singular
/// values of the whitened cross-covariance.
inline Eigen::VectorXd cca_oracle(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B, double reg_a, double reg_b) {
    const Eigen::MatrixXd Ac = A.rowwise() - A.colwise().mean();
    const Eigen::MatrixXd Bc = B.rowwise() - B.colwise().mean();
    const double dn = static_cast<double>(A.rows() - 1);
    Eigen::MatrixXd Caa = Ac.transpose() * Ac / dn;
    Eigen::MatrixXd Cbb = Bc.transpose() * Bc / dn;
    const Eigen::MatrixXd Cab = Ac.transpose() * Bc / dn;
    Caa.diagonal().array() += reg_a;
    Cbb.diagonal().array() += reg_b;
    const Eigen::MatrixXd T = inv_sqrt_psd(Caa) * Cab * inv_sqrt_psd(Cbb);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(T);
    return svd.singularValues();
}

inline Eigen::MatrixXd gaussian(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
    std::normal_distribution<double> nd;
    Eigen::MatrixXd M(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) M(i, j) = nd(rng);
    return M;
}

} // namespace testsupport

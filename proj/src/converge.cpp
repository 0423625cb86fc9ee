#include "imprint/converge.hpp"

#include "imprint/error.hpp"
#include "imprint/util.hpp"

#include <boost/math/distributions/students_t.hpp>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace imprint {

using ordered_json = nlohmann::ordered_json;

CcaReg CcaReg::parse(const std::string& s) {
    if (to_lower(trim(s)) == "auto") return autoscaled();
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != trim(s).size() || !(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument(s);
        return fixed(v);
    } catch (const std::exception&) {
        throw ConfigError("reg must be 'auto' or a number >= 0, got '" + s + "'");
    }
}

namespace {

Eigen::MatrixXd covariance(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y) {
    return X.transpose() * Y / static_cast<double>(X.rows() - 1);
}

double shrinkage(const Eigen::MatrixXd& C, const CcaReg& reg) {
    if (!reg.automatic) return reg.value;
    const double t = C.trace() / static_cast<double>(C.rows());
    return 1e-3 * (t > 0.0 ? t : 1.0);
}

void require_full_rank(const Eigen::MatrixXd& C, const char* which, Eigen::Index n) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(C, Eigen::EigenvaluesOnly);
    const double hi = es.eigenvalues().maxCoeff();
    const double lo = es.eigenvalues().minCoeff();
    if (!(hi > 0.0) || lo <= 1e-10 * hi)
        throw NumericError(fmt::format("covariance of {} is rank deficient (n={}, d={}); use reg > 0 or reg=auto", which, n,
                                       C.rows()));
}

void fix_sign(Eigen::Ref<Eigen::VectorXd> a, Eigen::Ref<Eigen::VectorXd> b) {
    const double scale = a.cwiseAbs().maxCoeff();
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        if (std::abs(a(i)) > 1e-12 * scale) {
            if (a(i) < 0) {
                a = -a;
                b = -b;
            }
            return;
        }
    }
}

double cosine(const Eigen::Ref<const Eigen::RowVectorXd>& u, const Eigen::Ref<const Eigen::RowVectorXd>& v) {
    const double nu = u.norm(), nv = v.norm();
    if (nu == 0.0 || nv == 0.0) return std::numeric_limits<double>::quiet_NaN();
    return std::clamp(u.dot(v) / (nu * nv), -1.0, 1.0);
}

/// Similarity of row i of sa with row perm[i] of sb under `conv`; NaN when undefined.
std::vector<double> pair_similarities(const Eigen::MatrixXd& sa, const Eigen::MatrixXd& sb,
                                      const std::vector<std::size_t>& perm, const CosineConvention& conv) {
    const auto n = static_cast<std::size_t>(sa.rows());
    std::vector<double> out(n);
    if (conv.kind == CosineConvention::Kind::score_vector) {
        for (std::size_t i = 0; i < n; ++i)
            out[i] = cosine(sa.row(static_cast<Eigen::Index>(i)), sb.row(static_cast<Eigen::Index>(perm[i])));
        return out;
    }
    const auto w = static_cast<std::size_t>(conv.window);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t start = i + 1 >= w ? i + 1 - w : 0;
        double dot = 0, na = 0, nb = 0;
        for (std::size_t j = start; j <= i; ++j) {
            const double a = sa(static_cast<Eigen::Index>(j), 0);
            const double b = sb(static_cast<Eigen::Index>(perm[j]), 0);
            dot += a * b;
            na += a * a;
            nb += b * b;
        }
        out[i] = na == 0.0 || nb == 0.0 ? std::numeric_limits<double>::quiet_NaN()
                                        : std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
    }
    return out;
}

void check_conv(const CcaModel& m, const CosineConvention& conv) {
    if (conv.k < 1 || conv.k > m.k)
        throw ConfigError(fmt::format("similarity uses {} components but the model has {}", conv.k, m.k));
    if (conv.kind == CosineConvention::Kind::window && conv.window < 1) throw ConfigError("window must be >= 1");
}

void check_rows(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B, std::size_t n_ids) {
    if (A.rows() != B.rows()) throw ValidationError("A and B must have the same number of rows (matched clusters)");
    if (static_cast<std::size_t>(A.rows()) != n_ids) throw ValidationError("one cluster id per row is required");
}

std::vector<std::size_t> identity(std::size_t n) {
    std::vector<std::size_t> v(n);
    std::iota(v.begin(), v.end(), 0);
    return v;
}

Eigen::MatrixXd take_rows(const Eigen::MatrixXd& X, const std::vector<std::size_t>& rows) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), X.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = X.row(static_cast<Eigen::Index>(rows[i]));
    return out;
}

} // namespace

CcaModel cca_fit(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B, int k, CcaReg reg) {
    const auto n = A.rows();
    if (B.rows() != n) throw ValidationError("cca_fit: A and B must have matched rows");
    if (n < 3) throw ValidationError("cca_fit needs at least 3 matched rows");
    if (A.cols() < 1 || B.cols() < 1) throw ValidationError("cca_fit: empty feature matrix");
    if (k < 1 || k > std::min(A.cols(), B.cols()))
        throw ConfigError(fmt::format("k must be in [1, {}]", std::min(A.cols(), B.cols())));
    if (!reg.automatic && !(reg.value >= 0.0)) throw ConfigError("reg must be >= 0");
    if (!A.allFinite() || !B.allFinite()) throw NumericError("cca_fit: non-finite input");

    CcaModel m;
    m.k = k;
    m.means_a = A.colwise().mean().transpose();
    m.means_b = B.colwise().mean().transpose();
    const Eigen::MatrixXd Ac = A.rowwise() - m.means_a.transpose();
    const Eigen::MatrixXd Bc = B.rowwise() - m.means_b.transpose();
    Eigen::MatrixXd Caa = covariance(Ac, Ac);
    Eigen::MatrixXd Cbb = covariance(Bc, Bc);
    const Eigen::MatrixXd Cab = covariance(Ac, Bc);
    m.reg_a = shrinkage(Caa, reg);
    m.reg_b = shrinkage(Cbb, reg);
    Caa.diagonal().array() += m.reg_a;
    Cbb.diagonal().array() += m.reg_b;
    if (m.reg_a == 0.0) require_full_rank(Caa, "A", n);
    if (m.reg_b == 0.0) require_full_rank(Cbb, "B", n);

    Eigen::LLT<Eigen::MatrixXd> llt_b(Cbb);
    if (llt_b.info() != Eigen::Success) throw NumericError("covariance of B is not positive definite; use reg > 0");
    const Eigen::MatrixXd CbbInvCba = llt_b.solve(Cab.transpose());
    Eigen::MatrixXd M = Cab * CbbInvCba;
    M = 0.5 * (M + M.transpose());

    Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> es(M, Caa);
    if (es.info() != Eigen::Success) throw NumericError("CCA eigenproblem failed; use reg > 0");

    const auto da = A.cols();
    m.proj_a.resize(da, k);
    m.proj_b.resize(B.cols(), k);
    m.correlations.resize(k);
    for (int c = 0; c < k; ++c) {
        const auto idx = da - 1 - c;
        const double rho = std::sqrt(std::max(es.eigenvalues()(idx), 0.0));
        Eigen::VectorXd a = es.eigenvectors().col(idx);
        Eigen::VectorXd b = CbbInvCba * a;
        const double bnorm = std::sqrt(std::max(b.dot(Cbb * b), 0.0));
        if (bnorm > 0.0) b /= bnorm;
        fix_sign(a, b);
        m.proj_a.col(c) = a;
        m.proj_b.col(c) = b;
        m.correlations(c) = rho;
    }
    return m;
}

Eigen::MatrixXd project_a(const CcaModel& m, const Eigen::MatrixXd& A, int k) {
    if (A.cols() != m.proj_a.rows()) throw ValidationError("project_a: dimension mismatch");
    return (A.rowwise() - m.means_a.transpose()) * m.proj_a.leftCols(k);
}

Eigen::MatrixXd project_b(const CcaModel& m, const Eigen::MatrixXd& B, int k) {
    if (B.cols() != m.proj_b.rows()) throw ValidationError("project_b: dimension mismatch");
    return (B.rowwise() - m.means_b.transpose()) * m.proj_b.leftCols(k);
}

std::string CosineConvention::label() const {
    if (kind == Kind::score_vector) return fmt::format("score_vector(k={})", k);
    return fmt::format("window(k=1,w={})", window);
}

SimilarityResult aligned_cosine(const CcaModel& m, const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                                const std::vector<std::string>& ids, const CosineConvention& conv) {
    check_rows(A, B, ids.size());
    check_conv(m, conv);
    const auto sa = project_a(m, A, conv.k);
    const auto sb = project_b(m, B, conv.k);
    const auto sims = pair_similarities(sa, sb, identity(ids.size()), conv);
    SimilarityResult r;
    r.convention = conv.label();
    r.ordering = ids;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (std::isnan(sims[i]))
            r.missing.push_back(ids[i]);
        else
            r.pair_sims[ids[i]] = sims[i];
    }
    return r;
}

NullCalibration null_calibrate(const CcaModel& m, const Eigen::MatrixXd& A, const Eigen::MatrixXd& B, int n_perm,
                               std::uint64_t seed, const CosineConvention& conv) {
    if (A.rows() != B.rows()) throw ValidationError("null_calibrate: A and B must have matched rows");
    if (A.rows() < 2) throw ValidationError("null_calibrate needs at least 2 rows");
    if (n_perm < 1) throw ConfigError("n_perm must be >= 1");
    check_conv(m, conv);
    const auto sa = project_a(m, A, conv.k);
    const auto sb = project_b(m, B, conv.k);
    const auto n = static_cast<std::size_t>(A.rows());

    std::vector<std::vector<double>> per_perm(static_cast<std::size_t>(n_perm));
    parallel_for(per_perm.size(), 0, [&](std::size_t p) {
        // Sattolo's algorithm: a single n-cycle, so no cluster keeps its own partner.
        Rng rng(derive_seed(seed, p));
        auto perm = identity(n);
        for (std::size_t i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i)]);
        per_perm[p] = pair_similarities(sa, sb, perm, conv);
    });

    std::vector<double> pooled;
    pooled.reserve(n * per_perm.size());
    for (const auto& sims : per_perm)
        for (double s : sims)
            if (!std::isnan(s)) pooled.push_back(s);
    NullCalibration out;
    out.n_perm = n_perm;
    out.n_sims = pooled.size();
    out.mean = mean(pooled);
    out.sigma = sample_std(pooled);
    out.low_confidence = n_perm < 100;
    return out;
}

std::string format_p_value(double p) {
    if (p < 1e-300) return "<1e-300";
    return fmt::format("{:.6g}", p);
}

TTest one_sample_test(const std::vector<double>& sims, std::optional<double> sigma) {
    if (sims.size() < 2) throw ValidationError("t-test needs at least 2 similarities");
    const double n = static_cast<double>(sims.size());
    const double m = mean(sims);
    double s = 0.0;
    if (sigma) {
        if (!(*sigma > 0.0)) throw ValidationError("sigma must be > 0");
        s = *sigma;
    } else {
        s = sample_std(sims);
        if (s == 0.0) throw NumericError("all similarities are identical; t statistic undefined without sigma");
    }
    TTest t;
    t.df = n - 1.0;
    t.t = m / (s / std::sqrt(n));
    boost::math::students_t dist(t.df);
    t.p = std::isinf(t.t) ? 0.0 : 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t.t)));
    t.p = std::min(t.p, 1.0);
    t.p_text = format_p_value(t.p);
    return t;
}

SimilarityResult similarity_matrix(const CcaModel& m, const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                                   const std::vector<std::string>& ids, const std::vector<double>& latitudes, int k) {
    check_rows(A, B, ids.size());
    if (latitudes.size() != ids.size()) throw ValidationError("one latitude per cluster is required");
    const auto conv = CosineConvention::score_vector(k);
    check_conv(m, conv);
    auto order = identity(ids.size());
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return latitudes[a] < latitudes[b]; });
    const auto sa = project_a(m, take_rows(A, order), k);
    const auto sb = project_b(m, take_rows(B, order), k);
    const auto n = static_cast<Eigen::Index>(order.size());

    Eigen::MatrixXd M(n, n);
    parallel_for(static_cast<std::size_t>(n), 0, [&](std::size_t i) {
        const auto r = static_cast<Eigen::Index>(i);
        for (Eigen::Index j = 0; j < n; ++j) M(r, j) = cosine(sa.row(r), sb.row(j));
    });

    SimilarityResult r;
    r.convention = conv.label();
    for (auto o : order) r.ordering.push_back(ids[o]);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& id = r.ordering[static_cast<std::size_t>(i)];
        if (std::isnan(M(i, i)))
            r.missing.push_back(id);
        else
            r.pair_sims[id] = M(i, i);
    }
    r.matrix = std::move(M);
    return r;
}

ConvergeResult converge_analysis(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B, const std::vector<std::string>& ids,
                                 const std::vector<double>& latitudes, const ConvergeOptions& opts) {
    check_rows(A, B, ids.size());
    if (latitudes.size() != ids.size()) throw ValidationError("one latitude per cluster is required");
    if (opts.fit_fraction < 0.0 || opts.fit_fraction >= 1.0) throw ConfigError("fit_fraction must be in [0, 1)");
    const auto n = ids.size();

    std::vector<std::size_t> fit_rows, eval_rows;
    if (opts.fit_fraction == 0.0) {
        fit_rows = eval_rows = identity(n);
    } else {
        auto rows = identity(n);
        Rng rng(opts.seed);
        rng.shuffle(rows);
        const auto n_fit = static_cast<std::size_t>(std::llround(opts.fit_fraction * static_cast<double>(n)));
        if (n_fit < 3 || n - n_fit < 3) throw ValidationError("too few clusters to hold out a similarity sample");
        fit_rows.assign(rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(n_fit));
        eval_rows.assign(rows.begin() + static_cast<std::ptrdiff_t>(n_fit), rows.end());
        std::sort(fit_rows.begin(), fit_rows.end());
    }
    // Similarities are reported in latitude order so windows cover neighbouring clusters.
    std::stable_sort(eval_rows.begin(), eval_rows.end(), [&](auto a, auto b) { return latitudes[a] < latitudes[b]; });

    ConvergeResult out;
    for (auto r : fit_rows) out.fit_ids.push_back(ids[r]);
    out.model = cca_fit(take_rows(A, fit_rows), take_rows(B, fit_rows), opts.k, opts.reg);

    const auto Ae = take_rows(A, eval_rows);
    const auto Be = take_rows(B, eval_rows);
    std::vector<std::string> eval_ids;
    std::vector<double> eval_lats;
    for (auto r : eval_rows) {
        eval_ids.push_back(ids[r]);
        eval_lats.push_back(latitudes[r]);
    }
    out.sims = aligned_cosine(out.model, Ae, Be, eval_ids, opts.convention);
    out.null = null_calibrate(out.model, Ae, Be, opts.n_perm, derive_seed(opts.seed, 1), opts.convention);
    if (opts.with_matrix) {
        const int mk = opts.convention.kind == CosineConvention::Kind::score_vector ? opts.convention.k : 1;
        out.sims.matrix = similarity_matrix(out.model, Ae, Be, eval_ids, eval_lats, mk).matrix;
    }

    std::vector<double> values;
    for (const auto& id : out.sims.ordering)
        if (auto it = out.sims.pair_sims.find(id); it != out.sims.pair_sims.end()) values.push_back(it->second);
    out.test_sample = one_sample_test(values);
    if (out.null.sigma > 0.0) out.test_null = one_sample_test(values, out.null.sigma);

    SimilarityStats st;
    st.mean = mean(values);
    st.median = median(values);
    st.t_stat = out.test_null.df > 0 ? out.test_null.t : out.test_sample.t;
    st.p_value = out.test_null.df > 0 ? out.test_null.p : out.test_sample.p;
    st.p_text = format_p_value(st.p_value);
    st.null_sigma = out.null.sigma;
    st.low_confidence = out.null.low_confidence;
    out.sims.stats = st;
    return out;
}

Histogram histogram(const std::vector<double>& values, int bins, double lo, double hi) {
    if (bins < 1 || !(hi > lo)) throw ConfigError("histogram needs bins >= 1 and hi > lo");
    Histogram h;
    for (int i = 0; i <= bins; ++i) h.edges.push_back(lo + (hi - lo) * i / bins);
    h.counts.assign(static_cast<std::size_t>(bins), 0);
    for (double v : values) {
        if (std::isnan(v)) continue;
        auto b = static_cast<long>(std::floor((v - lo) / (hi - lo) * bins));
        b = std::clamp<long>(b, 0, bins - 1);
        ++h.counts[static_cast<std::size_t>(b)];
    }
    return h;
}

std::string histogram_csv(const Histogram& h) {
    std::string out = "bin_lo,bin_hi,count\n";
    for (std::size_t i = 0; i < h.counts.size(); ++i)
        out += format_double(h.edges[i]) + "," + format_double(h.edges[i + 1]) + "," + std::to_string(h.counts[i]) + "\n";
    return out;
}

std::string matrix_csv(const SimilarityResult& r) {
    if (!r.matrix) throw ValidationError("similarity result carries no matrix");
    const auto& M = *r.matrix;
    std::string out = "cluster_id";
    for (const auto& id : r.ordering) out += "," + id;
    out += "\n";
    for (Eigen::Index i = 0; i < M.rows(); ++i) {
        out += r.ordering[static_cast<std::size_t>(i)];
        for (Eigen::Index j = 0; j < M.cols(); ++j) out += "," + (std::isnan(M(i, j)) ? std::string("NA") : format_double(M(i, j)));
        out += "\n";
    }
    return out;
}

ordered_json converge_to_json(const ConvergeResult& r) {
    ordered_json j;
    j["convention"] = r.sims.convention;
    j["k"] = r.model.k;
    j["reg_a"] = r.model.reg_a;
    j["reg_b"] = r.model.reg_b;
    j["correlations"] = std::vector<double>(r.model.correlations.data(), r.model.correlations.data() + r.model.correlations.size());
    j["n_fit"] = r.fit_ids.size();
    j["n_eval"] = r.sims.ordering.size();
    j["n_missing"] = r.sims.missing.size();
    if (r.sims.stats) {
        const auto& s = *r.sims.stats;
        j["mean"] = s.mean;
        j["median"] = s.median;
    }
    j["null"] = {{"sigma", r.null.sigma}, {"mean", r.null.mean}, {"n_perm", r.null.n_perm},
                 {"n_sims", r.null.n_sims}, {"low_confidence", r.null.low_confidence}};
    j["t_test_sample_std"] = {{"t", r.test_sample.t}, {"df", r.test_sample.df}, {"p", r.test_sample.p_text}};
    if (r.test_null.df > 0)
        j["t_test_null_sigma"] = {{"t", r.test_null.t}, {"df", r.test_null.df}, {"p", r.test_null.p_text}};
    j["missing"] = r.sims.missing;
    ordered_json sims = ordered_json::object();
    for (const auto& id : r.sims.ordering)
        if (auto it = r.sims.pair_sims.find(id); it != r.sims.pair_sims.end()) sims[id] = it->second;
    j["pair_sims"] = std::move(sims);
    return j;
}

} // namespace imprint

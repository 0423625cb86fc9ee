#include "imprint/model.hpp"

#include "imprint/error.hpp"
#include "imprint/util.hpp"

#include <json.hpp>

#include <cmath>
#include <cstring>
#include <set>

namespace imprint {

using json = nlohmann::json;

SourceRef resolve_source(const Dataset& ds, const std::string& key) {
    SourceRef ref;
    ref.key = key;
    const auto base = key.substr(0, key.rfind('@'));
    if (base == "YHAT:NMR" || base == "YHAT:ASA") {
        ref.source = base;
        ref.scalar_prediction = true;
        ref.dim = 1;
        const auto tag = base == "YHAT:NMR" ? SourceTag::NMR : SourceTag::ASA;
        std::set<std::string> providers;
        for (const auto& [_, list] : ds.texts())
            for (const auto& b : list)
                if (b.source_tag == tag) providers.insert(b.provider_id);
        if (base.size() < key.size()) {
            ref.provider_id = key.substr(base.size() + 1);
        } else if (providers.size() > 1) {
            throw ValidationError("source '" + key + "' has predictions from several providers (" +
                                  join(std::vector<std::string>(providers.begin(), providers.end()), ", ") +
                                  "); write it as " + key + "@provider");
        } else if (providers.size() == 1) {
            ref.provider_id = *providers.begin();
        }
        return ref;
    }
    const auto at = key.rfind('@');
    if (at != std::string::npos) {
        ref.source = key.substr(0, at);
        ref.provider_id = key.substr(at + 1);
        ref.dim = ds.dim(ref.source, ref.provider_id);
        return ref;
    }
    ref.source = key;
    const auto providers = ds.providers_for(key);
    if (providers.empty()) throw ValidationError("no embeddings for source '" + key + "'");
    if (providers.size() > 1)
        throw ValidationError("source '" + key + "' has several providers (" + join(providers, ", ") +
                              "); write it as source@provider");
    ref.provider_id = providers.front();
    ref.dim = ds.dim(ref.source, ref.provider_id);
    return ref;
}

namespace {

const std::vector<double>* lookup(const Dataset& ds, const SourceRef& ref, const std::string& id, std::vector<double>& scratch) {
    if (ref.scalar_prediction) {
        const auto tag = ref.source == "YHAT:NMR" ? SourceTag::NMR : SourceTag::ASA;
        auto it = ds.texts().find(id);
        if (it == ds.texts().end()) return nullptr;
        for (const auto& b : it->second) {
            if (b.source_tag != tag || b.provider_id != ref.provider_id || !b.prediction) continue;
            scratch.assign(1, *b.prediction);
            return &scratch;
        }
        return nullptr;
    }
    const auto* e = ds.find_embedding(id, ref.source, ref.provider_id);
    return e ? &e->values : nullptr;
}

std::vector<SourceRef> resolve_all(const Dataset& ds, const std::vector<std::string>& keys) {
    if (keys.empty()) throw ValidationError("at least one source is required");
    std::set<std::string> seen;
    std::vector<SourceRef> refs;
    for (const auto& k : keys) {
        if (!seen.insert(k).second) throw ValidationError("source '" + k + "' listed twice");
        refs.push_back(resolve_source(ds, k));
    }
    return refs;
}

} // namespace

FusedMatrix fuse_matrix(const Dataset& ds, const std::vector<std::string>& cluster_ids,
                        const std::vector<std::string>& source_keys) {
    const auto refs = resolve_all(ds, source_keys);
    FusedMatrix fm;
    fm.cluster_ids = cluster_ids;
    fm.source_keys = source_keys;
    std::size_t total = 0;
    for (const auto& r : refs) {
        fm.dims.push_back(r.dim);
        total += r.dim;
    }
    fm.X.resize(static_cast<Eigen::Index>(cluster_ids.size()), static_cast<Eigen::Index>(total));
    std::vector<std::string> missing;
    std::vector<double> scratch;
    for (std::size_t i = 0; i < cluster_ids.size(); ++i) {
        Eigen::Index col = 0;
        for (const auto& r : refs) {
            const auto* v = lookup(ds, r, cluster_ids[i], scratch);
            if (!v) {
                missing.push_back("(" + cluster_ids[i] + ", " + r.key + ")");
            } else {
                for (std::size_t k = 0; k < v->size(); ++k) fm.X(static_cast<Eigen::Index>(i), col + static_cast<Eigen::Index>(k)) = (*v)[k];
            }
            col += static_cast<Eigen::Index>(r.dim);
        }
    }
    if (!missing.empty()) throw ValidationError("missing embeddings: " + join(missing, ", "));
    return fm;
}

std::vector<FusedEmbedding> fuse(const Dataset& ds, const std::vector<std::string>& cluster_ids,
                                 const std::vector<std::string>& source_keys) {
    const auto fm = fuse_matrix(ds, cluster_ids, source_keys);
    std::vector<FusedEmbedding> out;
    out.reserve(cluster_ids.size());
    for (std::size_t i = 0; i < cluster_ids.size(); ++i) {
        FusedEmbedding f{cluster_ids[i], source_keys, {}};
        const auto row = fm.X.row(static_cast<Eigen::Index>(i));
        f.values.resize(static_cast<std::size_t>(row.size()));
        for (Eigen::Index k = 0; k < row.size(); ++k) f.values[static_cast<std::size_t>(k)] = row(k);
        out.push_back(std::move(f));
    }
    return out;
}

std::vector<std::string> clusters_with_sources(const Dataset& ds, const std::vector<std::string>& source_keys,
                                               bool labeled_only) {
    const auto refs = resolve_all(ds, source_keys);
    std::vector<std::string> out;
    std::vector<double> scratch;
    for (const auto& r : ds.records()) {
        if (labeled_only && !r.labeled()) continue;
        bool ok = true;
        for (const auto& ref : refs)
            if (!lookup(ds, ref, r.cluster_id, scratch)) {
                ok = false;
                break;
            }
        if (ok) out.push_back(r.cluster_id);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Ridge
// ---------------------------------------------------------------------------

RidgeModel ridge_fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double alpha, RidgeSolver solver) {
    const auto n = X.rows();
    const auto d = X.cols();
    if (n < 2) throw ValidationError("ridge_fit needs at least 2 rows");
    if (d < 1) throw ValidationError("ridge_fit needs at least 1 feature");
    if (y.size() != n) throw ValidationError("ridge_fit: X has " + std::to_string(n) + " rows but y has " + std::to_string(y.size()));
    if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ValidationError("ridge alpha must be positive and finite");
    if (!X.allFinite() || !y.allFinite()) throw ValidationError("ridge_fit: non-finite input");

    RidgeModel m;
    m.alpha = alpha;
    m.feature_means = X.colwise().mean().transpose();
    m.feature_scales.resize(d);
    std::vector<Eigen::Index> active;
    for (Eigen::Index j = 0; j < d; ++j) {
        const double sd = std::sqrt((X.col(j).array() - m.feature_means(j)).square().mean());
        const bool constant = !(sd > 1e-12 * std::max(1.0, std::abs(m.feature_means(j))));
        m.feature_scales(j) = constant ? 1.0 : sd;
        if (!constant) active.push_back(j);
    }
    m.target_mean = y.mean();
    m.intercept = m.target_mean;
    m.weights = Eigen::VectorXd::Zero(d);
    if (active.empty()) return m;

    const auto k = static_cast<Eigen::Index>(active.size());
    Eigen::MatrixXd Z(n, k);
    for (Eigen::Index c = 0; c < k; ++c)
        Z.col(c) = (X.col(active[static_cast<std::size_t>(c)]).array() - m.feature_means(active[static_cast<std::size_t>(c)])) /
                   m.feature_scales(active[static_cast<std::size_t>(c)]);
    const Eigen::VectorXd yc = y.array() - m.target_mean;

    const bool dual = solver == RidgeSolver::dual || (solver == RidgeSolver::automatic && k > n);
    m.dual_solve = dual;
    Eigen::VectorXd w;
    if (dual) {
        Eigen::MatrixXd K = Z * Z.transpose();
        K.diagonal().array() += alpha;
        Eigen::LLT<Eigen::MatrixXd> llt(K);
        if (llt.info() != Eigen::Success) throw NumericError("ridge dual system is not positive definite");
        w = Z.transpose() * llt.solve(yc);
    } else {
        Eigen::MatrixXd G = Z.transpose() * Z;
        G.diagonal().array() += alpha;
        Eigen::LLT<Eigen::MatrixXd> llt(G);
        if (llt.info() != Eigen::Success) throw NumericError("ridge normal equations are not positive definite");
        w = llt.solve(Z.transpose() * yc);
    }
    for (Eigen::Index c = 0; c < k; ++c) m.weights(active[static_cast<std::size_t>(c)]) = w(c);
    return m;
}

Eigen::VectorXd ridge_predict(const RidgeModel& m, const Eigen::MatrixXd& X) {
    if (static_cast<std::size_t>(X.cols()) != m.dim())
        throw ValidationError("ridge_predict: model expects " + std::to_string(m.dim()) + " features, got " +
                              std::to_string(X.cols()));
    const Eigen::MatrixXd Z = (X.rowwise() - m.feature_means.transpose()).array().rowwise() / m.feature_scales.transpose().array();
    return (Z * m.weights).array() + m.intercept;
}

void save_ridge_model(const std::filesystem::path& header_path, const RidgeModel& m) {
    const auto stem = header_path.stem().string();
    std::string blob;
    for (Eigen::Index j = 0; j < m.weights.size(); ++j) {
        const auto f = static_cast<float>(m.weights(j));
        blob.append(reinterpret_cast<const char*>(&f), sizeof f);
    }
    nlohmann::ordered_json h;
    h["alpha"] = m.alpha;
    h["dim"] = m.dim();
    h["source_keys"] = m.source_keys;
    h["source_dims"] = m.source_dims;
    h["intercept"] = m.intercept;
    h["target_mean"] = m.target_mean;
    h["standardized"] = true;
    h["dual_solve"] = m.dual_solve;
    h["feature_means"] = std::vector<double>(m.feature_means.data(), m.feature_means.data() + m.feature_means.size());
    h["feature_scales"] = std::vector<double>(m.feature_scales.data(), m.feature_scales.data() + m.feature_scales.size());
    h["dtype"] = "f32";
    h["weights"] = stem + ".weights.f32";
    write_file(header_path.parent_path() / (stem + ".weights.f32"), blob);
    write_file(header_path, h.dump(2) + '\n');
}

RidgeModel load_ridge_model(const std::filesystem::path& header_path) {
    json h;
    try {
        h = json::parse(read_file(header_path));
    } catch (const json::parse_error& e) {
        throw ParseError(header_path.string() + ": " + e.what());
    }
    RidgeModel m;
    try {
        m.alpha = h.at("alpha").get<double>();
        const auto d = h.at("dim").get<std::size_t>();
        m.source_keys = h.value("source_keys", std::vector<std::string>{});
        m.source_dims = h.value("source_dims", std::vector<std::size_t>{});
        m.intercept = h.at("intercept").get<double>();
        m.target_mean = h.at("target_mean").get<double>();
        m.dual_solve = h.value("dual_solve", false);
        const auto means = h.at("feature_means").get<std::vector<double>>();
        const auto scales = h.at("feature_scales").get<std::vector<double>>();
        if (means.size() != d || scales.size() != d) throw ParseError("feature statistics do not match dim");
        m.feature_means = Eigen::Map<const Eigen::VectorXd>(means.data(), static_cast<Eigen::Index>(d));
        m.feature_scales = Eigen::Map<const Eigen::VectorXd>(scales.data(), static_cast<Eigen::Index>(d));
        const auto blob = read_file(header_path.parent_path() / h.at("weights").get<std::string>());
        if (blob.size() != d * sizeof(float)) throw ParseError("weight blob size does not match dim");
        m.weights.resize(static_cast<Eigen::Index>(d));
        for (std::size_t j = 0; j < d; ++j) {
            float f;
            std::memcpy(&f, blob.data() + j * sizeof f, sizeof f);
            m.weights(static_cast<Eigen::Index>(j)) = f;
        }
    } catch (const json::exception& e) {
        throw ParseError(header_path.string() + ": " + e.what());
    }
    return m;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

Metrics metrics(std::span<const double> y, std::span<const double> yhat) {
    if (y.size() != yhat.size()) throw ValidationError("metrics: y and yhat differ in length");
    if (y.size() < 2) throw ValidationError("metrics need at least 2 observations");
    Metrics m;
    m.n = y.size();
    const double ybar = mean(y);
    double ss_res = 0.0, ss_tot = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        ss_res += (y[i] - yhat[i]) * (y[i] - yhat[i]);
        ss_tot += (y[i] - ybar) * (y[i] - ybar);
    }
    m.rmse = std::sqrt(ss_res / static_cast<double>(y.size()));
    if (ss_tot > 0.0) m.r2 = 1.0 - ss_res / ss_tot;
    return m;
}

Metrics metrics(const Eigen::VectorXd& y, const Eigen::VectorXd& yhat) {
    return metrics(std::span<const double>(y.data(), static_cast<std::size_t>(y.size())),
                   std::span<const double>(yhat.data(), static_cast<std::size_t>(yhat.size())));
}

} // namespace imprint

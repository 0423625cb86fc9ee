#pragma once

#include "imprint/core_data.hpp"

#include <Eigen/Dense>

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace imprint {

/// A source reference resolved against a dataset. Keys are written
/// "source" or "source@provider"; "YHAT:NMR" / "YHAT:ASA" (optionally @provider) select the scalar
/// predictions of the text pipelines as 1-dim sources.
struct SourceRef {
    std::string key;
    std::string source;
    std::string provider_id;
    bool scalar_prediction = false;
    std::size_t dim = 0;
};

SourceRef resolve_source(const Dataset& ds, const std::string& key);

struct FusedEmbedding {
    std::string cluster_id;
    std::vector<std::string> source_keys;
    std::vector<double> values;

    std::size_t dim() const { return values.size(); }
};

/// Row-aligned design matrix produced by fusion.
struct FusedMatrix {
    std::vector<std::string> cluster_ids;
    std::vector<std::string> source_keys;
    std::vector<std::size_t> dims;
    Eigen::MatrixXd X;
};

/// Ordered concatenation of per-source vectors, no projection or rescaling.
/// Throws ValidationError listing every missing (cluster, source) pair.
std::vector<FusedEmbedding> fuse(const Dataset& ds, const std::vector<std::string>& cluster_ids,
                                 const std::vector<std::string>& source_keys);
FusedMatrix fuse_matrix(const Dataset& ds, const std::vector<std::string>& cluster_ids,
                        const std::vector<std::string>& source_keys);

/// Clusters that carry every requested source (and a label, when `labeled_only`).
std::vector<std::string> clusters_with_sources(const Dataset& ds, const std::vector<std::string>& source_keys,
                                               bool labeled_only);

/// Ridge regression on z-scored features with an unpenalized intercept.
struct RidgeModel {
    Eigen::VectorXd weights;        ///< in standardized feature space
    double intercept = 0.0;         ///< equals the training target mean
    double alpha = 1.0;
    Eigen::VectorXd feature_means;
    Eigen::VectorXd feature_scales; ///< population std; 1 for constant columns
    double target_mean = 0.0;
    std::vector<std::string> source_keys;
    std::vector<std::size_t> source_dims;
    bool dual_solve = false;        ///< solved through the n×n kernel system

    std::size_t dim() const { return static_cast<std::size_t>(weights.size()); }
};

enum class RidgeSolver { automatic, primal, dual };

RidgeModel ridge_fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double alpha = 1.0,
                     RidgeSolver solver = RidgeSolver::automatic);
Eigen::VectorXd ridge_predict(const RidgeModel& m, const Eigen::MatrixXd& X);

/// JSON header (alpha, dims, source keys, means, scales) + f32 weight blob at
/// `<stem>.weights.f32` next to the header.
void save_ridge_model(const std::filesystem::path& header_path, const RidgeModel& m);
RidgeModel load_ridge_model(const std::filesystem::path& header_path);

struct Metrics {
    std::optional<double> r2; ///< absent when the targets have zero variance
    double rmse = 0.0;
    std::size_t n = 0;
};

Metrics metrics(std::span<const double> y, std::span<const double> yhat);
Metrics metrics(const Eigen::VectorXd& y, const Eigen::VectorXd& yhat);

} // namespace imprint

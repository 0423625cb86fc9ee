#pragma once

#include "imprint/core_data.hpp"
#include "imprint/model.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace imprint {

enum class SplitStrategy { random, ooc, oot };
enum class AtomicUnit { none, country, year };
enum class Fold { train, val, test };

std::string to_string(SplitStrategy s);
SplitStrategy split_strategy_from_string(const std::string& s);
std::string to_string(AtomicUnit u);
std::string to_string(Fold f);

struct Fractions {
    double train = 0.8;
    double val = 0.0;
    double test = 0.2;
};

struct SplitOptions {
    double tolerance = 0.02;  ///< allowed |test share - target| for unit-based splits
    bool oot_random = false;  ///< random year assignment instead of chronological
    int max_attempts = 256;   ///< random unit orderings tried before giving up
};

struct SplitPlan {
    SplitStrategy strategy = SplitStrategy::random;
    std::uint64_t seed = 0;
    std::vector<std::string> train_ids;
    std::vector<std::string> val_ids;
    std::vector<std::string> test_ids;
    AtomicUnit atomic_unit = AtomicUnit::none;
    std::map<std::string, Fold> unit_assignment; ///< country code or year → fold

    double test_share() const;
};

/// Splits the labeled records of `ds`. Random assigns clusters uniformly;
/// ooc keeps countries whole and balances cluster counts to within
/// `opts.tolerance` of the target test share; oot keeps years whole, by
/// default training on the earliest years.
SplitPlan make_split(const Dataset& ds, SplitStrategy strategy, std::uint64_t seed, Fractions fractions,
                     const SplitOptions& opts = {});

/// Same, restricted to `cluster_ids` (all must be labeled).
SplitPlan make_split(const Dataset& ds, const std::vector<std::string>& cluster_ids, SplitStrategy strategy,
                     std::uint64_t seed, Fractions fractions, const SplitOptions& opts = {});

/// Throws if the folds overlap or an atomic unit appears in two folds.
void verify_split(const Dataset& ds, const SplitPlan& plan);

/// K disjoint test folds (15% each by default) with validation carved from
/// the remainder; the 5 × 15% arrangement leaves clusters that are never tested.
std::vector<SplitPlan> make_kfold(const Dataset& ds, const std::vector<std::string>& cluster_ids, SplitStrategy strategy,
                                  std::uint64_t seed, int folds, Fractions fractions, const SplitOptions& opts = {});

enum class ProtocolKind { bootstrap, kfold };

struct Protocol {
    ProtocolKind kind = ProtocolKind::bootstrap;
    int iterations = 100;
    Fractions fractions{0.8, 0.0, 0.2};
    int folds = 5;

    static Protocol bootstrap(int iterations = 100);
    static Protocol kfold(int folds = 5);
    void validate() const;
};

std::string to_string(ProtocolKind k);

struct ClusterPredictions {
    double y = 0.0;
    int year = 0;
    std::vector<double> yhat; ///< one entry per iteration in which the cluster was tested
};

struct EvalReport {
    std::string config_hash;
    std::vector<std::string> sources;
    SplitStrategy strategy = SplitStrategy::random;
    Protocol protocol;
    double alpha = 1.0;
    std::uint64_t seed = 0;
    std::vector<Metrics> per_iteration;
    double mean_r2 = 0.0;
    double se_r2 = 0.0;
    double mean_rmse = 0.0;
    double se_rmse = 0.0;
    std::map<std::string, ClusterPredictions> per_cluster;
    std::map<int, Metrics> per_year;
    std::size_t n_used = 0;
    std::size_t n_dropped_missing = 0;
    std::size_t n_dropped_unlabeled = 0;
    nlohmann::ordered_json provenance;
};

struct RunOptions {
    SplitOptions split;
    std::vector<std::string> prompt_hashes;
    int threads = 0; ///< 0 = hardware concurrency
};

/// Per iteration: split, fuse, fit ridge on train, score on test. Records
/// lacking any source are dropped (counted), unlabeled records are excluded.
EvalReport run_protocol(const Dataset& ds, const std::vector<std::string>& sources, SplitStrategy strategy,
                        const Protocol& protocol, double alpha, std::uint64_t seed, const RunOptions& opts = {});

nlohmann::ordered_json report_to_json(const EvalReport& r);
EvalReport report_from_json(const nlohmann::ordered_json& j);
void save_report(const std::filesystem::path& path, const EvalReport& r);
EvalReport load_report(const std::filesystem::path& path);

struct Comparison {
    std::size_t n_shared = 0;
    std::size_t n_only_a = 0;
    std::size_t n_only_b = 0;
    double r2_a = 0.0;
    double r2_b = 0.0;
    double rmse_a = 0.0;
    double rmse_b = 0.0;
    double delta_r2 = 0.0;   ///< b − a on shared clusters
    double delta_rmse = 0.0; ///< b − a on shared clusters
};

/// Compares two reports on the clusters both tested, using each cluster's
/// mean prediction. Throws when no cluster is shared.
Comparison compare_reports(const EvalReport& a, const EvalReport& b);

/// One line of the long-format results table.
struct TableEntry {
    std::string procedure;
    std::string source;
    std::string embedding;
    SplitStrategy split = SplitStrategy::random;
    double r2 = 0.0;
    double rmse = 0.0;
    double se = 0.0;
};

TableEntry table_entry(const EvalReport& r, std::string procedure, std::string source, std::string embedding);
/// CSV with columns procedure,source,embedding,split,r2,rmse,se.
std::string table_to_csv(const std::vector<TableEntry>& rows);

} // namespace imprint

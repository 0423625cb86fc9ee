#include "imprint/eval.hpp"

#include "imprint/error.hpp"
#include "imprint/util.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <limits>
#include <cmath>
#include <exception>
#include <numeric>
#include <set>
#include <thread>

namespace imprint {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

std::string to_string(SplitStrategy s) {
    switch (s) {
    case SplitStrategy::random: return "random";
    case SplitStrategy::ooc: return "ooc";
    case SplitStrategy::oot: return "oot";
    }
    return "random";
}

SplitStrategy split_strategy_from_string(const std::string& s) {
    const auto l = to_lower(s);
    if (l == "random") return SplitStrategy::random;
    if (l == "ooc") return SplitStrategy::ooc;
    if (l == "oot") return SplitStrategy::oot;
    throw ConfigError("unknown split strategy '" + s + "' (expected random, ooc or oot)");
}

std::string to_string(AtomicUnit u) {
    switch (u) {
    case AtomicUnit::none: return "none";
    case AtomicUnit::country: return "country";
    case AtomicUnit::year: return "year";
    }
    return "none";
}

std::string to_string(Fold f) {
    switch (f) {
    case Fold::train: return "train";
    case Fold::val: return "val";
    case Fold::test: return "test";
    }
    return "train";
}

std::string to_string(ProtocolKind k) { return k == ProtocolKind::bootstrap ? "bootstrap" : "kfold"; }

double SplitPlan::test_share() const {
    const auto n = train_ids.size() + val_ids.size() + test_ids.size();
    return n ? static_cast<double>(test_ids.size()) / static_cast<double>(n) : 0.0;
}

namespace {

void check_fractions(const Fractions& f) {
    if (f.train < 0 || f.val < 0 || f.test < 0) throw ConfigError("split fractions must be non-negative");
    if (std::abs(f.train + f.val + f.test - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
    if (f.test <= 0.0 || f.train <= 0.0) throw ConfigError("train and test fractions must be positive");
}

struct Unit {
    std::string key;
    std::vector<std::string> ids;
};

std::string unit_key(const ClusterRecord& r, AtomicUnit u) {
    return u == AtomicUnit::country ? r.country : std::to_string(r.year);
}

/// Units in order of first appearance among `ids`.
std::vector<Unit> group_units(const Dataset& ds, const std::vector<std::string>& ids, AtomicUnit u) {
    std::vector<Unit> units;
    std::map<std::string, std::size_t> index;
    for (const auto& id : ids) {
        const auto key = unit_key(ds.record(id), u);
        auto [it, inserted] = index.emplace(key, units.size());
        if (inserted) units.push_back({key, {}});
        units[it->second].ids.push_back(id);
    }
    return units;
}

/// Greedy fill: take units in order while the running count stays within target + tol.
std::vector<std::size_t> greedy_fill(const std::vector<Unit>& units, const std::vector<std::size_t>& order,
                                     const std::vector<bool>& taken, double target, double tol) {
    std::vector<std::size_t> picked;
    double count = 0;
    for (auto u : order) {
        if (taken[u]) continue;
        const auto size = static_cast<double>(units[u].ids.size());
        if (count + size <= target + tol + 1e-9) {
            picked.push_back(u);
            count += size;
        }
    }
    return picked;
}

double count_of(const std::vector<Unit>& units, const std::vector<std::size_t>& picked) {
    double c = 0;
    for (auto u : picked) c += static_cast<double>(units[u].ids.size());
    return c;
}

struct UnitAssignment {
    std::vector<std::vector<std::size_t>> test_groups; ///< one per fold
    std::vector<std::vector<std::size_t>> val_groups;
};

/// Assigns `folds` disjoint test groups (and one validation group per fold,
/// disjoint from that fold's test group) within tolerance. Tries random unit
/// orders first, then a largest-first order.
std::optional<UnitAssignment> balance_units(const std::vector<Unit>& units, std::size_t n, int folds, const Fractions& fr,
                                            std::uint64_t seed, const SplitOptions& opts) {
    const double tol = opts.tolerance * static_cast<double>(n);
    const double test_target = fr.test * static_cast<double>(n);
    const double val_target = fr.val * static_cast<double>(n);

    auto attempt = [&](std::vector<std::size_t> order, Rng& rng, bool shuffle_val) -> std::optional<UnitAssignment> {
        UnitAssignment a;
        std::vector<bool> tested(units.size(), false);
        for (int f = 0; f < folds; ++f) {
            auto test = greedy_fill(units, order, tested, test_target, tol);
            if (test.empty() || std::abs(count_of(units, test) - test_target) > tol + 1e-9) return std::nullopt;
            std::vector<bool> blocked(units.size(), false);
            for (auto u : test) tested[u] = blocked[u] = true;
            std::vector<std::size_t> val;
            if (fr.val > 0) {
                auto val_order = order;
                if (shuffle_val) rng.shuffle(val_order);
                val = greedy_fill(units, val_order, blocked, val_target, tol);
                if (std::abs(count_of(units, val) - val_target) > tol + 1e-9) return std::nullopt;
                for (auto u : val) blocked[u] = true;
            }
            if (std::all_of(blocked.begin(), blocked.end(), [](bool b) { return b; })) return std::nullopt; // empty train
            a.test_groups.push_back(std::move(test));
            a.val_groups.push_back(std::move(val));
        }
        return a;
    };

    std::vector<std::size_t> base(units.size());
    std::iota(base.begin(), base.end(), 0);
    for (int t = 0; t < opts.max_attempts; ++t) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(t)));
        auto order = base;
        rng.shuffle(order);
        if (auto a = attempt(order, rng, true)) return a;
    }
    auto order = base;
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) {
        if (units[a].ids.size() != units[b].ids.size()) return units[a].ids.size() > units[b].ids.size();
        return units[a].key < units[b].key;
    });
    Rng rng(seed);
    return attempt(order, rng, false);
}

SplitPlan plan_from_groups(const std::vector<Unit>& units, const std::vector<std::size_t>& test,
                           const std::vector<std::size_t>& val, SplitStrategy s, AtomicUnit au, std::uint64_t seed) {
    SplitPlan plan;
    plan.strategy = s;
    plan.seed = seed;
    plan.atomic_unit = au;
    std::vector<Fold> fold(units.size(), Fold::train);
    for (auto u : test) fold[u] = Fold::test;
    for (auto u : val) fold[u] = Fold::val;
    for (std::size_t u = 0; u < units.size(); ++u) {
        plan.unit_assignment[units[u].key] = fold[u];
        auto& dst = fold[u] == Fold::test ? plan.test_ids : fold[u] == Fold::val ? plan.val_ids : plan.train_ids;
        dst.insert(dst.end(), units[u].ids.begin(), units[u].ids.end());
    }
    return plan;
}

std::vector<std::string> labeled_ids(const Dataset& ds) {
    std::vector<std::string> ids;
    for (const auto& r : ds.records())
        if (r.labeled()) ids.push_back(r.cluster_id);
    return ids;
}

void require_labeled(const Dataset& ds, const std::vector<std::string>& ids) {
    for (const auto& id : ids)
        if (!ds.record(id).labeled()) throw ValidationError("cluster '" + id + "' is unlabeled; evaluation needs labels");
}

AtomicUnit unit_for(SplitStrategy s) {
    return s == SplitStrategy::ooc ? AtomicUnit::country : s == SplitStrategy::oot ? AtomicUnit::year : AtomicUnit::none;
}

std::vector<Unit> units_for(const Dataset& ds, const std::vector<std::string>& ids, SplitStrategy strategy) {
    auto units = group_units(ds, ids, unit_for(strategy));
    if (units.size() < 2)
        throw ValidationError(std::string(strategy == SplitStrategy::ooc ? "out-of-country" : "out-of-time") +
                              " split needs at least 2 " + (strategy == SplitStrategy::ooc ? "countries" : "years") +
                              ", found " + std::to_string(units.size()));
    return units;
}

SplitPlan chronological_split(const Dataset& ds, const std::vector<std::string>& ids, std::uint64_t seed, const Fractions& fr) {
    auto units = units_for(ds, ids, SplitStrategy::oot);
    std::sort(units.begin(), units.end(), [](const Unit& a, const Unit& b) { return std::stoi(a.key) < std::stoi(b.key); });
    const auto n = static_cast<double>(ids.size());
    const auto y = units.size();

    // Latest years form the test block, the ones just before it the validation block.
    auto best_suffix = [&](std::size_t end, std::size_t max_take, double target) {
        std::size_t best_k = 1;
        double best_err = std::numeric_limits<double>::infinity();
        double count = 0;
        for (std::size_t k = 1; k <= max_take; ++k) {
            count += static_cast<double>(units[end - k].ids.size());
            const double err = std::abs(count - target);
            if (err < best_err) {
                best_err = err;
                best_k = k;
            }
        }
        return best_k;
    };
    const std::size_t reserve_val = fr.val > 0 ? 1 : 0;
    if (y < 2 + reserve_val) throw ValidationError("out-of-time split with validation needs at least 3 years");
    const auto k_test = best_suffix(y, y - 1 - reserve_val, fr.test * n);
    std::vector<std::size_t> test, val;
    for (std::size_t k = 0; k < k_test; ++k) test.push_back(y - 1 - k);
    if (fr.val > 0) {
        const auto k_val = best_suffix(y - k_test, y - k_test - 1, fr.val * n);
        for (std::size_t k = 0; k < k_val; ++k) val.push_back(y - k_test - 1 - k);
    }
    return plan_from_groups(units, test, val, SplitStrategy::oot, AtomicUnit::year, seed);
}

} // namespace

SplitPlan make_split(const Dataset& ds, const std::vector<std::string>& ids, SplitStrategy strategy, std::uint64_t seed,
                     Fractions fr, const SplitOptions& opts) {
    check_fractions(fr);
    require_labeled(ds, ids);
    if (ids.size() < 2) throw ValidationError("need at least 2 labeled clusters to split");

    if (strategy == SplitStrategy::random) {
        auto shuffled = ids;
        Rng rng(seed);
        rng.shuffle(shuffled);
        const auto n = shuffled.size();
        auto n_test = static_cast<std::size_t>(std::llround(fr.test * static_cast<double>(n)));
        auto n_val = static_cast<std::size_t>(std::llround(fr.val * static_cast<double>(n)));
        n_test = std::clamp<std::size_t>(n_test, 1, n - 1);
        n_val = std::min(n_val, n - 1 - n_test);
        SplitPlan plan;
        plan.strategy = strategy;
        plan.seed = seed;
        plan.test_ids.assign(shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(n_test));
        plan.val_ids.assign(shuffled.begin() + static_cast<std::ptrdiff_t>(n_test),
                            shuffled.begin() + static_cast<std::ptrdiff_t>(n_test + n_val));
        plan.train_ids.assign(shuffled.begin() + static_cast<std::ptrdiff_t>(n_test + n_val), shuffled.end());
        return plan;
    }
    if (strategy == SplitStrategy::oot && !opts.oot_random) return chronological_split(ds, ids, seed, fr);

    const auto units = units_for(ds, ids, strategy);
    const auto a = balance_units(units, ids.size(), 1, fr, seed, opts);
    if (!a)
        throw ValidationError("cannot assign whole " + std::string(strategy == SplitStrategy::ooc ? "countries" : "years") +
                              " to reach the target fractions within ±" + format_fixed(100 * opts.tolerance, 1) +
                              " points; relax the tolerance");
    return plan_from_groups(units, a->test_groups[0], a->val_groups[0], strategy, unit_for(strategy), seed);
}

SplitPlan make_split(const Dataset& ds, SplitStrategy strategy, std::uint64_t seed, Fractions fractions,
                     const SplitOptions& opts) {
    return make_split(ds, labeled_ids(ds), strategy, seed, fractions, opts);
}

std::vector<SplitPlan> make_kfold(const Dataset& ds, const std::vector<std::string>& ids, SplitStrategy strategy,
                                  std::uint64_t seed, int folds, Fractions fr, const SplitOptions& opts) {
    check_fractions(fr);
    require_labeled(ds, ids);
    if (folds < 2) throw ConfigError("k-fold needs at least 2 folds");
    if (fr.test * folds > 1.0 + 1e-9) throw ConfigError("folds × test fraction exceeds 1; test folds cannot be disjoint");
    std::vector<SplitPlan> plans;
    if (strategy == SplitStrategy::random) {
        auto shuffled = ids;
        Rng rng(seed);
        rng.shuffle(shuffled);
        const auto n = shuffled.size();
        const auto m = static_cast<std::size_t>(std::floor(fr.test * static_cast<double>(n) + 0.5));
        const auto n_val = static_cast<std::size_t>(std::llround(fr.val * static_cast<double>(n)));
        if (m == 0 || m * static_cast<std::size_t>(folds) > n) throw ValidationError("too few clusters for k-fold");
        for (int f = 0; f < folds; ++f) {
            SplitPlan plan;
            plan.strategy = strategy;
            plan.seed = derive_seed(seed, static_cast<std::uint64_t>(f));
            const auto b = static_cast<std::size_t>(f) * m;
            plan.test_ids.assign(shuffled.begin() + static_cast<std::ptrdiff_t>(b), shuffled.begin() + static_cast<std::ptrdiff_t>(b + m));
            std::vector<std::string> rest(shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(b));
            rest.insert(rest.end(), shuffled.begin() + static_cast<std::ptrdiff_t>(b + m), shuffled.end());
            Rng vr(plan.seed);
            vr.shuffle(rest);
            const auto v = std::min(n_val, rest.size() - 1);
            plan.val_ids.assign(rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(v));
            plan.train_ids.assign(rest.begin() + static_cast<std::ptrdiff_t>(v), rest.end());
            plans.push_back(std::move(plan));
        }
        return plans;
    }
    const auto units = units_for(ds, ids, strategy);
    const auto a = balance_units(units, ids.size(), folds, fr, seed, opts);
    if (!a)
        throw ValidationError("cannot form " + std::to_string(folds) + " disjoint unit-based test folds within ±" +
                              format_fixed(100 * opts.tolerance, 1) + " points; relax the tolerance");
    for (int f = 0; f < folds; ++f)
        plans.push_back(plan_from_groups(units, a->test_groups[static_cast<std::size_t>(f)], a->val_groups[static_cast<std::size_t>(f)],
                                         strategy, unit_for(strategy), derive_seed(seed, static_cast<std::uint64_t>(f))));
    return plans;
}

void verify_split(const Dataset& ds, const SplitPlan& plan) {
    std::set<std::string> seen;
    for (const auto* ids : {&plan.train_ids, &plan.val_ids, &plan.test_ids})
        for (const auto& id : *ids)
            if (!seen.insert(id).second) throw ValidationError("cluster '" + id + "' appears in two folds");
    if (plan.atomic_unit == AtomicUnit::none) return;
    std::map<std::string, Fold> unit_fold;
    auto check = [&](const std::vector<std::string>& ids, Fold f) {
        for (const auto& id : ids) {
            const auto key = unit_key(ds.record(id), plan.atomic_unit);
            auto [it, inserted] = unit_fold.emplace(key, f);
            if (!inserted && it->second != f)
                throw ValidationError("leakage: " + to_string(plan.atomic_unit) + " '" + key + "' appears in both " +
                                      to_string(it->second) + " and " + to_string(f));
        }
    };
    check(plan.train_ids, Fold::train);
    check(plan.val_ids, Fold::val);
    check(plan.test_ids, Fold::test);
}

// ---------------------------------------------------------------------------
// Protocol
// ---------------------------------------------------------------------------

Protocol Protocol::bootstrap(int iterations) {
    Protocol p;
    p.kind = ProtocolKind::bootstrap;
    p.iterations = iterations;
    p.fractions = {0.8, 0.0, 0.2};
    return p;
}

Protocol Protocol::kfold(int folds) {
    Protocol p;
    p.kind = ProtocolKind::kfold;
    p.folds = folds;
    p.iterations = folds;
    p.fractions = {0.7, 0.15, 0.15};
    return p;
}

void Protocol::validate() const {
    check_fractions(fractions);
    if (kind == ProtocolKind::bootstrap && iterations < 1) throw ConfigError("bootstrap needs at least 1 iteration");
    if (kind == ProtocolKind::kfold && folds < 2) throw ConfigError("k-fold needs at least 2 folds");
}

namespace {

struct IterationResult {
    Metrics metrics;
    std::vector<std::size_t> test_rows;
    Eigen::VectorXd yhat;
};

Eigen::MatrixXd rows_of(const Eigen::MatrixXd& X, const std::vector<std::size_t>& rows) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), X.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = X.row(static_cast<Eigen::Index>(rows[i]));
    return out;
}

Eigen::VectorXd rows_of(const Eigen::VectorXd& y, const std::vector<std::size_t>& rows) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) out(static_cast<Eigen::Index>(i)) = y(static_cast<Eigen::Index>(rows[i]));
    return out;
}

} // namespace

EvalReport run_protocol(const Dataset& ds, const std::vector<std::string>& sources, SplitStrategy strategy,
                        const Protocol& protocol, double alpha, std::uint64_t seed, const RunOptions& opts) {
    protocol.validate();
    EvalReport rep;
    rep.sources = sources;
    rep.strategy = strategy;
    rep.protocol = protocol;
    rep.alpha = alpha;
    rep.seed = seed;

    std::size_t labeled = 0;
    for (const auto& r : ds.records()) labeled += r.labeled();
    rep.n_dropped_unlabeled = ds.size() - labeled;
    const auto ids = clusters_with_sources(ds, sources, true);
    rep.n_dropped_missing = labeled - ids.size();
    rep.n_used = ids.size();
    if (rep.n_dropped_unlabeled) spdlog::info("excluded {} unlabeled clusters", rep.n_dropped_unlabeled);
    if (rep.n_dropped_missing) spdlog::info("dropped {} labeled clusters missing a requested source", rep.n_dropped_missing);
    if (ids.size() < 4) throw ValidationError("too few usable clusters (" + std::to_string(ids.size()) + ") for evaluation");

    const auto fm = fuse_matrix(ds, ids, sources);
    Eigen::VectorXd y(static_cast<Eigen::Index>(ids.size()));
    std::map<std::string, std::size_t> row_of;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        y(static_cast<Eigen::Index>(i)) = *ds.record(ids[i]).iwi;
        row_of[ids[i]] = i;
    }

    std::vector<SplitPlan> plans;
    if (protocol.kind == ProtocolKind::kfold) {
        plans = make_kfold(ds, ids, strategy, seed, protocol.folds, protocol.fractions, opts.split);
    } else {
        plans.resize(static_cast<std::size_t>(protocol.iterations));
        std::vector<std::exception_ptr> errs(plans.size());
        parallel_for(plans.size(), opts.threads, [&](std::size_t i) {
            try {
                plans[i] = make_split(ds, ids, strategy, derive_seed(seed, i), protocol.fractions, opts.split);
            } catch (...) {
                errs[i] = std::current_exception();
            }
        });
        for (auto& e : errs)
            if (e) std::rethrow_exception(e);
    }

    std::vector<IterationResult> results(plans.size());
    std::vector<std::exception_ptr> errors(plans.size());
    parallel_for(plans.size(), opts.threads, [&](std::size_t i) {
        try {
            const auto& plan = plans[i];
            verify_split(ds, plan);
            std::vector<std::size_t> train, test;
            for (const auto& id : plan.train_ids) train.push_back(row_of.at(id));
            for (const auto& id : plan.test_ids) test.push_back(row_of.at(id));
            auto model = ridge_fit(rows_of(fm.X, train), rows_of(y, train), alpha);
            auto& res = results[i];
            res.yhat = ridge_predict(model, rows_of(fm.X, test));
            res.metrics = imprint::metrics(rows_of(y, test), res.yhat);
            if (!res.metrics.r2) throw NumericError("iteration " + std::to_string(i) + ": test targets have zero variance");
            res.test_rows = std::move(test);
        } catch (...) {
            errors[i] = std::current_exception();
        }
    });
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);

    std::vector<double> r2s, rmses;
    std::map<int, std::pair<std::vector<double>, std::vector<double>>> by_year;
    for (const auto& res : results) {
        rep.per_iteration.push_back(res.metrics);
        r2s.push_back(*res.metrics.r2);
        rmses.push_back(res.metrics.rmse);
        for (std::size_t k = 0; k < res.test_rows.size(); ++k) {
            const auto& id = ids[res.test_rows[k]];
            const auto& rec = ds.record(id);
            auto& cp = rep.per_cluster[id];
            cp.y = *rec.iwi;
            cp.year = rec.year;
            cp.yhat.push_back(res.yhat(static_cast<Eigen::Index>(k)));
            by_year[rec.year].first.push_back(*rec.iwi);
            by_year[rec.year].second.push_back(res.yhat(static_cast<Eigen::Index>(k)));
        }
    }
    for (const auto& [year, pair] : by_year)
        if (pair.first.size() >= 2) rep.per_year[year] = imprint::metrics(pair.first, pair.second);

    const double k = static_cast<double>(r2s.size());
    rep.mean_r2 = mean(r2s);
    rep.mean_rmse = mean(rmses);
    if (protocol.kind == ProtocolKind::bootstrap) {
        rep.se_r2 = sample_std(r2s) / std::sqrt(k);
        rep.se_rmse = sample_std(rmses) / std::sqrt(k);
    } else {
        rep.se_r2 = sample_std(r2s);
        rep.se_rmse = sample_std(rmses);
    }

    ordered_json prov;
    prov["dataset_hash"] = ds.content_hash();
    prov["sources"] = sources;
    std::vector<std::string> providers;
    for (const auto& s : sources) {
        const auto ref = resolve_source(ds, s);
        providers.push_back(ref.scalar_prediction ? s + "@" + ref.provider_id : ref.provider_id);
    }
    prov["provider_ids"] = providers;
    prov["strategy"] = to_string(strategy);
    prov["protocol"] = {{"kind", to_string(protocol.kind)},
                        {"iterations", protocol.kind == ProtocolKind::bootstrap ? protocol.iterations : protocol.folds},
                        {"fractions", {protocol.fractions.train, protocol.fractions.val, protocol.fractions.test}}};
    prov["alpha"] = alpha;
    prov["seed"] = seed;
    prov["iteration_seed_rule"] = "splitmix64(seed xor iteration)";
    prov["standardized_features"] = true;
    prov["split_tolerance"] = opts.split.tolerance;
    prov["oot_order"] = opts.split.oot_random ? "random" : "chronological";
    prov["prompt_hashes"] = opts.prompt_hashes;
    rep.config_hash = sha256_hex(prov.dump());
    rep.provenance = std::move(prov);
    return rep;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

namespace {

ordered_json metrics_json(const Metrics& m) {
    ordered_json j;
    j["r2"] = m.r2 ? ordered_json(*m.r2) : ordered_json(nullptr);
    j["rmse"] = m.rmse;
    j["n"] = m.n;
    return j;
}

Metrics metrics_from(const ordered_json& j) {
    Metrics m;
    if (!j.at("r2").is_null()) m.r2 = j["r2"].get<double>();
    m.rmse = j.at("rmse").get<double>();
    m.n = j.at("n").get<std::size_t>();
    return m;
}

} // namespace

ordered_json report_to_json(const EvalReport& r) {
    ordered_json j;
    j["config_hash"] = r.config_hash;
    j["sources"] = r.sources;
    j["strategy"] = to_string(r.strategy);
    j["protocol"] = {{"kind", to_string(r.protocol.kind)},
                     {"iterations", r.protocol.iterations},
                     {"folds", r.protocol.folds},
                     {"fractions", {r.protocol.fractions.train, r.protocol.fractions.val, r.protocol.fractions.test}}};
    j["alpha"] = r.alpha;
    j["seed"] = r.seed;
    j["n_used"] = r.n_used;
    j["n_dropped_missing"] = r.n_dropped_missing;
    j["n_dropped_unlabeled"] = r.n_dropped_unlabeled;
    j["mean_r2"] = r.mean_r2;
    j["se_r2"] = r.se_r2;
    j["mean_rmse"] = r.mean_rmse;
    j["se_rmse"] = r.se_rmse;
    j["per_iteration"] = ordered_json::array();
    for (const auto& m : r.per_iteration) j["per_iteration"].push_back(metrics_json(m));
    j["per_year"] = ordered_json::object();
    for (const auto& [year, m] : r.per_year) j["per_year"][std::to_string(year)] = metrics_json(m);
    j["per_cluster"] = ordered_json::object();
    for (const auto& [id, cp] : r.per_cluster) j["per_cluster"][id] = {{"y", cp.y}, {"year", cp.year}, {"yhat", cp.yhat}};
    j["provenance"] = r.provenance;
    return j;
}

EvalReport report_from_json(const ordered_json& j) {
    EvalReport r;
    try {
        r.config_hash = j.at("config_hash").get<std::string>();
        r.sources = j.at("sources").get<std::vector<std::string>>();
        r.strategy = split_strategy_from_string(j.at("strategy").get<std::string>());
        const auto& p = j.at("protocol");
        r.protocol.kind = p.at("kind").get<std::string>() == "kfold" ? ProtocolKind::kfold : ProtocolKind::bootstrap;
        r.protocol.iterations = p.at("iterations").get<int>();
        r.protocol.folds = p.at("folds").get<int>();
        const auto fr = p.at("fractions").get<std::vector<double>>();
        if (fr.size() != 3) throw ParseError("protocol.fractions must have 3 entries");
        r.protocol.fractions = {fr[0], fr[1], fr[2]};
        r.alpha = j.at("alpha").get<double>();
        r.seed = j.at("seed").get<std::uint64_t>();
        r.n_used = j.at("n_used").get<std::size_t>();
        r.n_dropped_missing = j.at("n_dropped_missing").get<std::size_t>();
        r.n_dropped_unlabeled = j.at("n_dropped_unlabeled").get<std::size_t>();
        r.mean_r2 = j.at("mean_r2").get<double>();
        r.se_r2 = j.at("se_r2").get<double>();
        r.mean_rmse = j.at("mean_rmse").get<double>();
        r.se_rmse = j.at("se_rmse").get<double>();
        for (const auto& m : j.at("per_iteration")) r.per_iteration.push_back(metrics_from(m));
        for (const auto& [year, m] : j.at("per_year").items()) r.per_year[std::stoi(year)] = metrics_from(m);
        for (const auto& [id, cp] : j.at("per_cluster").items())
            r.per_cluster[id] = {cp.at("y").get<double>(), cp.at("year").get<int>(), cp.at("yhat").get<std::vector<double>>()};
        r.provenance = j.at("provenance");
    } catch (const json::exception& e) {
        throw ParseError(std::string("malformed report: ") + e.what());
    }
    return r;
}

void save_report(const std::filesystem::path& path, const EvalReport& r) { write_file(path, report_to_json(r).dump(2) + '\n'); }

EvalReport load_report(const std::filesystem::path& path) {
    ordered_json j;
    try {
        j = ordered_json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
    return report_from_json(j);
}

// ---------------------------------------------------------------------------
// Comparison and tables
// ---------------------------------------------------------------------------

Comparison compare_reports(const EvalReport& a, const EvalReport& b) {
    Comparison c;
    std::vector<double> y, ya, yb;
    for (const auto& [id, pa] : a.per_cluster) {
        auto it = b.per_cluster.find(id);
        if (it == b.per_cluster.end()) {
            ++c.n_only_a;
            continue;
        }
        y.push_back(pa.y);
        ya.push_back(mean(pa.yhat));
        yb.push_back(mean(it->second.yhat));
    }
    c.n_shared = y.size();
    c.n_only_b = b.per_cluster.size() - c.n_shared;
    if (c.n_shared == 0) throw ValidationError("reports share no test clusters; refusing to compare");
    const auto ma = metrics(y, ya);
    const auto mb = metrics(y, yb);
    if (!ma.r2 || !mb.r2) throw NumericError("shared clusters have zero target variance");
    c.r2_a = *ma.r2;
    c.r2_b = *mb.r2;
    c.rmse_a = ma.rmse;
    c.rmse_b = mb.rmse;
    c.delta_r2 = c.r2_b - c.r2_a;
    c.delta_rmse = c.rmse_b - c.rmse_a;
    return c;
}

TableEntry table_entry(const EvalReport& r, std::string procedure, std::string source, std::string embedding) {
    return {std::move(procedure), std::move(source), std::move(embedding), r.strategy, r.mean_r2, r.mean_rmse, r.se_r2};
}

std::string table_to_csv(const std::vector<TableEntry>& rows) {
    auto quote = [](const std::string& s) {
        if (s.find_first_of(",\"\n") == std::string::npos) return s;
        std::string q = "\"";
        for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
        return q + "\"";
    };
    std::string out = "procedure,source,embedding,split,r2,rmse,se\n";
    for (const auto& r : rows)
        out += quote(r.procedure) + "," + quote(r.source) + "," + quote(r.embedding) + "," + to_string(r.split) + "," +
               format_fixed(r.r2, 6) + "," + format_fixed(r.rmse, 6) + "," + format_fixed(r.se, 6) + "\n";
    return out;
}

} // namespace imprint

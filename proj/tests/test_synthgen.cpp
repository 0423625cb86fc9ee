#include "imprint/cli.hpp"
#include "imprint/config.hpp"
#include "imprint/error.hpp"
#include "imprint/eval.hpp"
#include "imprint/synthgen.hpp"

#include "support.hpp"

#include <doctest.h>

#include <Eigen/Dense>

#include <cmath>

using namespace imprint;
using testsupport::TempDir;

namespace {

GenConfig small(std::uint64_t seed = 3) {
    GenConfig g;
    g.n_clusters = 400;
    g.seed = seed;
    return g;
}

// Residual of each column after least squares on the design X.
Eigen::MatrixXd residualize(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y) {
    const Eigen::MatrixXd beta = X.colPivHouseholderQr().solve(Y);
    return Y - X * beta;
}

} // namespace

TEST_CASE("generation is deterministic and seed-sensitive") {
    const auto a = generate(small());
    const auto b = generate(small());
    CHECK(a.dataset.content_hash() == b.dataset.content_hash());
    CHECK(a.latent_wealth == b.latent_wealth);
    CHECK(generate(small(4)).dataset.content_hash() != a.dataset.content_hash());

    TempDir t1("synth1"), t2("synth2");
    write_synthetic(t1.path(), a);
    write_synthetic(t2.path(), b);
    const auto h1 = hash_tree(t1.path());
    CHECK(!h1.empty());
    CHECK(h1 == hash_tree(t2.path()));
}

TEST_CASE("written data loads back with every source") {
    TempDir t("synthload");
    const auto d = generate(small());
    write_synthetic(t.path(), d);
    CHECK(std::filesystem::exists(t / "records.jsonl"));
    CHECK(std::filesystem::exists(t / "texts.jsonl"));
    const auto& ds = d.dataset;
    CHECK(ds.size() == 400);
    CHECK(ds.dim("CV") == 64);
    CHECK(ds.dim("NMR:desc") == 48);
    CHECK(ds.dim("ASA:cleaned_traces") == 48);
    for (const auto& r : ds.records()) {
        REQUIRE(r.iwi);
        CHECK(*r.iwi >= 0.0);
        CHECK(*r.iwi <= 100.0);
        CHECK(r.country.size() == 2);
    }
}

TEST_CASE("modalities are nearly independent given wealth and country") {
    GenConfig g;
    g.n_clusters = 5000;
    g.seed = 31;
    const auto d = generate(g);
    const auto& ds = d.dataset;
    const auto codes = synthetic_country_codes(g.n_countries);
    const auto n = static_cast<Eigen::Index>(ds.size());
    Eigen::MatrixXd X = Eigen::MatrixXd::Zero(n, 2 + g.n_countries);
    Eigen::MatrixXd V(n, 5), T(n, 5);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& rec = ds.records()[static_cast<std::size_t>(i)];
        X(i, 0) = 1.0;
        X(i, 1) = d.latent_wealth[static_cast<std::size_t>(i)];
        const auto c = std::find(codes.begin(), codes.end(), rec.country) - codes.begin();
        X(i, 2 + c) = 1.0;
        const auto* cv = ds.find_embedding(rec.cluster_id, "CV", "synthetic-vit");
        const auto* tx = ds.find_embedding(rec.cluster_id, "NMR:desc", "synthetic-text");
        REQUIRE(cv);
        REQUIRE(tx);
        for (int k = 0; k < 5; ++k) {
            V(i, k) = cv->values[static_cast<std::size_t>(k)];
            T(i, k) = tx->values[static_cast<std::size_t>(k)];
        }
    }
    const Eigen::MatrixXd rv = residualize(X, V), rt = residualize(X, T);
    for (int k = 0; k < 5; ++k) {
        const double rho = rv.col(k).dot(rt.col(k)) / (rv.col(k).norm() * rt.col(k).norm());
        CHECK(std::abs(rho) < 0.05);
    }
}

TEST_CASE("noise extremes: noiseless imagery is almost perfect, drowned text is useless") {
    GenConfig g;
    g.n_clusters = 3000;
    g.seed = 17;
    g.vision_noise = 0.0;
    g.text_noise = 1e6;
    const auto ds = generate(g).dataset;
    const auto cv = run_protocol(ds, {"CV"}, SplitStrategy::random, Protocol::bootstrap(3), 1.0, 2);
    const auto text = run_protocol(ds, {"NMR:desc"}, SplitStrategy::random, Protocol::bootstrap(3), 1.0, 2);
    CHECK(cv.mean_r2 > 0.98);
    CHECK(text.mean_r2 < 0.02);
}

TEST_CASE("leak flags follow the configured rate") {
    GenConfig g;
    g.n_clusters = 5000;
    g.seed = 9;
    const auto d = generate(g);
    const auto leaked = static_cast<double>(std::count(d.leaked.begin(), d.leaked.end(), true));
    const double p = leaked / 5000.0;
    const double se = std::sqrt(0.104 * (1 - 0.104) / 5000.0);
    CHECK(std::abs(p - 0.104) < 4 * se);

    g.leakage_rate = 0.0;
    const auto none = generate(g);
    CHECK(std::count(none.leaked.begin(), none.leaked.end(), true) == 0);
}

TEST_CASE("config section parsing") {
    const auto cfg = Config::parse("[synthgen]\nn_clusters = 120\nyears = [2000-2002, 2010]\nvision_noise = 2.5\n"
                                   "drift_year = 2001\nseed = 77\n[synthgen.text_informativeness]\nxa = 0\n");
    const auto g = gen_config_from(cfg);
    CHECK(g.n_clusters == 120);
    CHECK(g.years == std::vector<int>{2000, 2001, 2002, 2010});
    CHECK(g.vision_noise == 2.5);
    CHECK(g.drift_year == 2001);
    CHECK(g.seed == 77);
    CHECK(g.text_informativeness_by_country.at("XA") == 0.0);
    CHECK(gen_config_to_json(g)["n_clusters"] == 120);

    CHECK_THROWS_AS(gen_config_from(Config::parse("[synthgen]\nyears = [abc]\n")), ConfigError);
    CHECK_THROWS_AS(gen_config_from(Config::parse("[synthgen]\nleakage_rate = 1.5\n")), ConfigError);
    CHECK_THROWS_AS(gen_config_from(Config::parse("[synthgen]\nn_clusters = 0\n")), ConfigError);
}

TEST_CASE("country codes") {
    CHECK(synthetic_country_codes(3) == std::vector<std::string>{"XA", "XB", "XC"});
    const auto many = synthetic_country_codes(30);
    CHECK(many[0] == "AA");
    CHECK(many[27] == "BB");
}

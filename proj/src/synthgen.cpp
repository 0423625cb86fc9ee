#include "imprint/synthgen.hpp"

#include "imprint/error.hpp"
#include "imprint/textgen.hpp"
#include "imprint/util.hpp"

#include <Eigen/Dense>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>

namespace imprint {

using ordered_json = nlohmann::ordered_json;

namespace {

constexpr std::uint64_t kGlobalStream = 0x5eed0001;
const char* kVisionProvider = "synthetic-vit";
const char* kTextProvider = "synthetic-text";

const std::vector<std::string> kSyllables = {"ka", "mo", "ri", "ta", "ne", "zu", "lo", "ba",
                                             "si", "de", "wa", "gu", "fe", "ho", "mi", "no"};

const std::vector<std::vector<std::string>> kTierWords = {
    {"subsistence farming", "thatched roofs", "unpaved tracks", "no grid electricity", "seasonal food shortages",
     "hand-dug wells"},
    {"a weekly market", "mixed brick and mud housing", "a primary school", "intermittent electricity",
     "small-scale trade", "a gravel road to the district town"},
    {"paved streets", "reliable electricity", "secondary schools and a clinic", "commercial shops",
     "piped water", "salaried employment"},
};

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::string place_name(Rng& rng, int index) {
    std::string name;
    const auto n = 2 + rng.below(2);
    for (std::size_t i = 0; i < n; ++i) name += kSyllables[rng.below(kSyllables.size())];
    name[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(name[0])));
    return name + " " + std::to_string(index);
}

int tier_of(double y) { return y < 30.0 ? 0 : y < 60.0 ? 1 : 2; }

std::string pick_phrases(Rng& rng, int tier, int count) {
    auto words = kTierWords[static_cast<std::size_t>(tier)];
    rng.shuffle(words);
    std::vector<std::string> chosen(words.begin(), words.begin() + count);
    return join(chosen, ", ");
}

double round_to(double v, int digits) {
    const double f = std::pow(10.0, digits);
    return std::round(v * f) / f;
}

} // namespace

std::vector<int> GenConfig::default_years() {
    std::vector<int> y;
    for (int v = 1990; v < 2020; ++v) y.push_back(v);
    return y;
}

void GenConfig::validate() const {
    if (n_clusters < 1) throw ConfigError("n_clusters must be >= 1");
    if (n_countries < 1 || n_countries > 26 * 26) throw ConfigError("n_countries must be in [1, 676]");
    if (years.empty()) throw ConfigError("years must not be empty");
    if (latent_dim < 1 || cv_dim < 1 || text_dim < 1) throw ConfigError("dimensions must be >= 1");
    if (vision_noise < 0 || text_noise < 0) throw ConfigError("noise scales must be >= 0");
    if (country_effect_scale < 0) throw ConfigError("country_effect_scale must be >= 0");
    if (agent_extra_signal < 0) throw ConfigError("agent_extra_signal must be >= 0");
    if (leakage_rate < 0 || leakage_rate > 1) throw ConfigError("leakage_rate must be in [0, 1]");
    for (const auto& [code, v] : text_informativeness_by_country)
        if (v < 0) throw ConfigError("text informativeness for " + code + " must be >= 0");
}

std::vector<std::string> synthetic_country_codes(int n) {
    std::vector<std::string> out;
    for (int i = 0; i < n; ++i) {
        if (n <= 26)
            out.push_back(std::string("X") + static_cast<char>('A' + i));
        else
            out.push_back(std::string(1, static_cast<char>('A' + i / 26)) + static_cast<char>('A' + i % 26));
    }
    return out;
}

GenConfig gen_config_from(const Config& cfg, const std::string& section) {
    GenConfig g;
    const auto key = [&](const char* k) { return section + "." + k; };
    g.n_clusters = static_cast<int>(cfg.get_int(key("n_clusters"), g.n_clusters));
    g.n_countries = static_cast<int>(cfg.get_int(key("n_countries"), g.n_countries));
    if (cfg.has(key("years"))) {
        g.years.clear();
        for (const auto& y : cfg.get_list(key("years"))) {
            const auto range = y.find('-');
            try {
                if (range != std::string::npos && range > 0) {
                    const int a = std::stoi(y.substr(0, range)), b = std::stoi(y.substr(range + 1));
                    for (int v = a; v <= b; ++v) g.years.push_back(v);
                } else {
                    g.years.push_back(std::stoi(y));
                }
            } catch (const std::exception&) {
                throw ConfigError(key("years") + ": bad year '" + y + "'");
            }
        }
    }
    g.latent_dim = static_cast<int>(cfg.get_int(key("latent_dim"), g.latent_dim));
    g.cv_dim = static_cast<int>(cfg.get_int(key("cv_dim"), g.cv_dim));
    g.text_dim = static_cast<int>(cfg.get_int(key("text_dim"), g.text_dim));
    g.vision_noise = cfg.get_double(key("vision_noise"), g.vision_noise);
    g.text_noise = cfg.get_double(key("text_noise"), g.text_noise);
    g.country_effect_scale = cfg.get_double(key("country_effect_scale"), g.country_effect_scale);
    g.agent_extra_signal = cfg.get_double(key("agent_extra_signal"), g.agent_extra_signal);
    g.leakage_rate = cfg.get_double(key("leakage_rate"), g.leakage_rate);
    if (cfg.has(key("drift_year"))) g.drift_year = static_cast<int>(cfg.get_int(key("drift_year"), 0));
    g.drift_shift = cfg.get_double(key("drift_shift"), g.drift_shift);
    g.nonlinear = cfg.get_bool(key("nonlinear"), g.nonlinear);
    g.seed = cfg.get_u64(key("seed"), g.seed);
    const auto inf_section = section + ".text_informativeness";
    for (const auto& code : cfg.keys_in(inf_section))
        g.text_informativeness_by_country[to_upper(code)] = cfg.get_double(inf_section + "." + code, 1.0);
    g.validate();
    return g;
}

ordered_json gen_config_to_json(const GenConfig& g) {
    ordered_json j;
    j["n_clusters"] = g.n_clusters;
    j["n_countries"] = g.n_countries;
    j["years"] = g.years;
    j["latent_dim"] = g.latent_dim;
    j["cv_dim"] = g.cv_dim;
    j["text_dim"] = g.text_dim;
    j["vision_noise"] = g.vision_noise;
    j["text_noise"] = g.text_noise;
    j["country_effect_scale"] = g.country_effect_scale;
    j["text_informativeness_by_country"] = g.text_informativeness_by_country;
    j["agent_extra_signal"] = g.agent_extra_signal;
    j["leakage_rate"] = g.leakage_rate;
    j["drift_year"] = g.drift_year ? ordered_json(*g.drift_year) : ordered_json(nullptr);
    j["drift_shift"] = g.drift_shift;
    j["nonlinear"] = g.nonlinear;
    j["seed"] = g.seed;
    return j;
}

SynthData generate(const GenConfig& cfg) {
    cfg.validate();
    const auto codes = synthetic_country_codes(cfg.n_countries);
    const int L = cfg.latent_dim, dv = cfg.cv_dim, dt = cfg.text_dim;

    // Fixed random maps and country parameters, shared by every cluster.
    Rng g(derive_seed(cfg.seed, kGlobalStream));
    auto gaussian = [&](int rows, int cols) {
        Eigen::MatrixXd m(rows, cols);
        for (int j = 0; j < cols; ++j)
            for (int i = 0; i < rows; ++i) m(i, j) = g.normal();
        return m;
    };
    const Eigen::VectorXd a_v = gaussian(dv, 1);
    const Eigen::MatrixXd W_v = gaussian(dv, L);
    const Eigen::VectorXd a_t = gaussian(dt, 1);
    const Eigen::MatrixXd W_t = gaussian(dt, L);
    const Eigen::VectorXd a_h = gaussian(dt, 1);
    std::vector<double> c_lat, c_lon, c_shift;
    std::vector<Eigen::VectorXd> c_style;
    for (int c = 0; c < cfg.n_countries; ++c) {
        c_lat.push_back(g.uniform(-25.0, 25.0));
        c_lon.push_back(g.uniform(-15.0, 45.0));
        c_shift.push_back(cfg.country_effect_scale * g.normal());
        c_style.push_back(cfg.country_effect_scale * gaussian(dv, 1));
    }

    const auto n = static_cast<std::size_t>(cfg.n_clusters);
    std::vector<ClusterRecord> records(n);
    std::vector<double> latent(n);
    std::vector<unsigned char> leaked(n); // not vector<bool>: written concurrently
    std::vector<TextBundle> nmr(n), asa(n);
    std::vector<EmbeddingVector> cv(n), ev_nmr(n), ev_asa(n);
    std::vector<std::vector<SearchResult>> wiki_results(n), search_results(n);

    auto to_values = [&](const Eigen::VectorXd& v) {
        std::vector<double> out(static_cast<std::size_t>(v.size()));
        for (Eigen::Index i = 0; i < v.size(); ++i) out[static_cast<std::size_t>(i)] = cfg.nonlinear ? std::tanh(v(i) / 4.0) : v(i);
        return out;
    };

    parallel_for(n, 0, [&](std::size_t i) {
        // Per-cluster stream: the draw sequence is the same for every config.
        Rng r(derive_seed(cfg.seed, i + 1));
        auto normal_vec = [&](int d) {
            Eigen::VectorXd v(d);
            for (int k = 0; k < d; ++k) v(k) = r.normal();
            return v;
        };
        const auto c = r.below(static_cast<std::size_t>(cfg.n_countries));
        const auto& code = codes[c];
        auto& rec = records[i];
        rec.cluster_id = fmt::format("c{:05d}", i + 1);
        rec.country = code;
        rec.year = cfg.years[r.below(cfg.years.size())];
        rec.lat = round_to(std::clamp(c_lat[c] + 1.5 * r.normal(), -89.0, 89.0), 5);
        rec.lon = round_to(std::clamp(c_lon[c] + 1.5 * r.normal(), -179.0, 179.0), 5);
        rec.place_name = place_name(r, static_cast<int>(i + 1));

        const double eta = -0.2 + c_shift[c] + r.normal();
        const double y = 100.0 * sigmoid(eta);
        latent[i] = y;
        double label = y;
        if (cfg.drift_year && rec.year >= *cfg.drift_year) label = std::clamp(y + cfg.drift_shift, 0.0, 100.0);
        rec.iwi = round_to(label, 4);
        const double s = (y - 50.0) / 20.0;

        auto inf_it = cfg.text_informativeness_by_country.find(code);
        const double inf = inf_it == cfg.text_informativeness_by_country.end() ? 1.0 : inf_it->second;

        const Eigen::VectorXd u_v = normal_vec(L), u_t = normal_vec(L), u_a = normal_vec(L);
        const Eigen::VectorXd e_v = normal_vec(dv), e_t = normal_vec(dt), e_a = normal_vec(dt);
        const double xi = r.normal();
        const Eigen::VectorXd v_cv = a_v * s + c_style[c] + W_v * u_v + cfg.vision_noise * e_v;
        const Eigen::VectorXd v_nmr = inf * s * a_t + W_t * u_t + cfg.text_noise * e_t;
        const Eigen::VectorXd v_asa =
            inf * s * a_t + W_t * u_a + cfg.agent_extra_signal * (s + xi) * a_h + cfg.text_noise * e_a;
        cv[i] = {rec.cluster_id, "CV", kVisionProvider, to_values(v_cv)};
        ev_nmr[i] = {rec.cluster_id, "NMR:desc", kTextProvider, to_values(v_nmr)};
        ev_asa[i] = {rec.cluster_id, "ASA:cleaned_traces", kTextProvider, to_values(v_asa)};

        // Texts carry a noisy reading of wealth; the survey term is independent of it.
        const int tier = tier_of(y + 10.0 * r.normal());
        leaked[i] = r.uniform() < cfg.leakage_rate;
        auto& b = nmr[i];
        b.cluster_id = rec.cluster_id;
        b.source_tag = SourceTag::NMR;
        b.provider_id = kTextProvider;
        b.desc = fmt::format("{} in {} ({}) is a settlement with {}.", rec.place_name, code, rec.year, pick_phrases(r, tier, 3));
        b.justification = fmt::format("Described features suggest {} living standards.",
                                      tier == 0 ? "low" : tier == 1 ? "moderate" : "high");
        b.prediction = round_to(std::clamp(y + 12.0 * r.normal(), 0.0, 100.0), 1);
        b.confidence = round_to(r.uniform(0.3, 0.9), 2);

        wiki_results[i] = {{1, rec.place_name,
                            fmt::format("{} is a locality in {}. The area is known for {}.", rec.place_name, code,
                                        pick_phrases(r, tier, 2)),
                            fmt::format("https://wiki.example/{}", rec.cluster_id)}};
        for (int k = 0; k < 3; ++k) {
            std::string snippet = fmt::format("Reports from {} mention {}.", rec.place_name, pick_phrases(r, tier, 2));
            if (k == 0 && leaked[i]) snippet += " Household data were collected by a DHS survey team.";
            search_results[i].push_back({k + 1, fmt::format("{} report {}", rec.place_name, k + 1), snippet,
                                         fmt::format("https://search.example/{}/{}", rec.cluster_id, k + 1)});
        }
        auto& a = asa[i];
        a.cluster_id = rec.cluster_id;
        a.source_tag = SourceTag::ASA;
        a.provider_id = kTextProvider;
        a.trace = render_tool_payload(wiki_results[i]) + render_tool_payload(search_results[i]);
        a.summary = fmt::format("Sources describe {} as having {}.", rec.place_name, pick_phrases(r, tier, 2));
        a.justification = b.justification;
        a.prediction = round_to(std::clamp(y + 10.0 * r.normal(), 0.0, 100.0), 1);
        a.confidence = round_to(r.uniform(0.4, 0.95), 2);
    });

    std::vector<TextBundle> bundles;
    for (std::size_t i = 0; i < n; ++i) {
        bundles.push_back(std::move(nmr[i]));
        bundles.push_back(std::move(asa[i]));
    }
    std::vector<EmbeddingVector> vectors;
    vectors.reserve(3 * n);
    for (auto* group : {&cv, &ev_nmr, &ev_asa}) vectors.insert(vectors.end(), group->begin(), group->end());

    SynthData out;
    out.dataset = Dataset(records).with_texts(bundles).with_embeddings(vectors);
    out.latent_wealth = std::move(latent);
    out.leaked.assign(leaked.begin(), leaked.end());
    for (std::size_t i = 0; i < n; ++i) {
        out.fixtures.push_back({"wiki", records[i].place_name, std::move(wiki_results[i])});
        out.fixtures.push_back({"search", records[i].place_name, std::move(search_results[i])});
    }
    return out;
}

void write_synthetic(const std::filesystem::path& dir, const SynthData& data) {
    const auto& ds = data.dataset;
    save_records(dir / "records.jsonl", ds.records());
    write_file(dir / "texts.jsonl", texts_to_jsonl(ds));
    std::map<std::pair<std::string, std::string>, std::vector<EmbeddingVector>> groups;
    for (const auto& rec : ds.records())
        for (const auto& [sp, _] : ds.source_dims())
            if (const auto* e = ds.find_embedding(rec.cluster_id, sp.first, sp.second)) groups[sp].push_back(*e);
    for (const auto& [sp, vectors] : groups)
        save_embedding_manifest(dir / "embeddings" / (source_file_stem(sp.first, sp.second) + ".json"), vectors);
    for (const auto& f : data.fixtures) FixtureSearchProvider::write_fixture(dir / "fixtures", f.tool, f.query, f.results);
}

} // namespace imprint

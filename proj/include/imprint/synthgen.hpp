#pragma once

#include "imprint/config.hpp"
#include "imprint/core_data.hpp"
#include "imprint/providers.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace imprint {

/// Parameters of the synthetic generator. Wealth Y causes both the vision and
/// the text embeddings; their remaining variation comes from independent
/// latents and noise, so the two modalities are independent given Y (and
/// country). All constants are test fixtures, not claims about the world.
struct GenConfig {
    int n_clusters = 5000;
    int n_countries = 20;
    std::vector<int> years = default_years();
    int latent_dim = 8;
    int cv_dim = 64;
    int text_dim = 48;
    double vision_noise = 7.0;
    double text_noise = 7.0;
    /// Std of the per-country wealth shift; also scales the country "style"
    /// imprinted on imagery (the background-factor confounder).
    double country_effect_scale = 1.0;
    /// Multiplier on the wealth signal in text embeddings per country code; 1 when absent.
    std::map<std::string, double> text_informativeness_by_country;
    /// Extra wealth information carried only by agent embeddings.
    double agent_extra_signal = 0.0;
    /// Fraction of agent traces that mention a survey term, independent of Y.
    double leakage_rate = 0.104;
    /// Label shift: from `drift_year` on, Y is shifted by `drift_shift` while
    /// features keep following the unshifted value.
    std::optional<int> drift_year;
    double drift_shift = 0.0;
    bool nonlinear = false; ///< pass embeddings through tanh
    std::uint64_t seed = 1;

    static std::vector<int> default_years();
    void validate() const;
};

GenConfig gen_config_from(const Config& cfg, const std::string& section = "synthgen");
nlohmann::ordered_json gen_config_to_json(const GenConfig& cfg);

/// Country codes used by the generator: "XA", "XB", … (user-assigned ISO range).
std::vector<std::string> synthetic_country_codes(int n);

struct FixtureEntry {
    std::string tool; ///< "wiki" or "search"
    std::string query;
    std::vector<SearchResult> results;
};

struct SynthData {
    Dataset dataset;                   ///< records, texts, embeddings
    std::vector<double> latent_wealth; ///< Y before any drift shift, per record
    std::vector<bool> leaked;          ///< agent trace mentions a survey term, per record
    std::vector<FixtureEntry> fixtures;
};

/// Sources written: "CV" (provider "synthetic-vit"), "NMR:desc" and
/// "ASA:cleaned_traces" (provider "synthetic-text").
SynthData generate(const GenConfig& cfg);

/// Writes records.jsonl, texts.jsonl, embeddings/<stem>.json manifests and
/// search fixtures under fixtures/ so agent runs can be replayed offline.
void write_synthetic(const std::filesystem::path& dir, const SynthData& data);

} // namespace imprint

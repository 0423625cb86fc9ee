#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

namespace imprint {

/// One surveyed neighborhood cluster.
struct ClusterRecord {
    std::string cluster_id;
    double lat = 0.0;
    double lon = 0.0;
    std::string country;
    int year = 0;
    std::string place_name;
    std::optional<double> iwi; ///< wealth label in [0, 100]; absent in inference mode

    bool labeled() const { return iwi.has_value(); }
};

enum class SourceTag { NMR, ASA };

std::string to_string(SourceTag tag);
SourceTag source_tag_from_string(const std::string& s);

/// Generated texts for a cluster from either the LLM-only or the search-agent pipeline.
struct TextBundle {
    std::string cluster_id;
    std::string desc;
    std::string trace;
    std::string summary;
    std::string justification;
    std::optional<double> prediction;
    std::optional<double> confidence;
    SourceTag source_tag = SourceTag::NMR;
    std::string provider_id;
    bool degraded = false;     ///< structured output could not be obtained
    bool low_evidence = false; ///< agent finished without any successful tool result
};

struct EmbeddingVector {
    std::string cluster_id;
    std::string source;
    std::string provider_id;
    std::vector<double> values;

    std::size_t dim() const { return values.size(); }
};

using EmbeddingKey = std::tuple<std::string, std::string, std::string>; ///< (cluster_id, source, provider_id)

struct CoverageRow {
    std::string source;
    std::size_t n_present = 0;
    std::size_t n_missing = 0;
};

/// Validated, immutable collection of cluster records and their attachments.
///
/// Construction validates every invariant and throws on the first violation,
/// so any Dataset instance that exists is fully valid.
class Dataset {
public:
    Dataset() = default;
    Dataset(std::vector<ClusterRecord> records,
            std::map<std::string, std::vector<TextBundle>> texts = {},
            std::map<EmbeddingKey, EmbeddingVector> embeddings = {});

    const std::vector<ClusterRecord>& records() const { return records_; }
    const std::map<std::string, std::vector<TextBundle>>& texts() const { return texts_; }
    const std::map<EmbeddingKey, EmbeddingVector>& embeddings() const { return embeddings_; }
    const std::vector<std::string>& warnings() const { return warnings_; }

    std::size_t size() const { return records_.size(); }
    const ClusterRecord& record(const std::string& cluster_id) const;
    bool contains(const std::string& cluster_id) const { return index_.count(cluster_id) > 0; }

    /// Embedding dimension for (source, provider); throws if the pair is unknown.
    std::size_t dim(const std::string& source, const std::string& provider_id) const;
    /// Dimension for a source that has exactly one provider.
    std::size_t dim(const std::string& source) const;
    /// Providers that supply `source`, sorted.
    std::vector<std::string> providers_for(const std::string& source) const;
    /// All (source, provider) pairs with their dims.
    std::map<std::pair<std::string, std::string>, std::size_t> source_dims() const { return dims_; }

    const EmbeddingVector* find_embedding(const std::string& cluster_id, const std::string& source,
                                          const std::string& provider_id) const;
    const TextBundle* find_text(const std::string& cluster_id, SourceTag tag) const;

    /// Copy restricted to the given clusters (attachments follow their clusters).
    Dataset subset(const std::vector<std::string>& cluster_ids) const;
    Dataset with_embeddings(const std::vector<EmbeddingVector>& vectors) const;
    Dataset with_texts(const std::vector<TextBundle>& bundles) const;

    /// Content hash over records, texts and embeddings in canonical order.
    std::string content_hash() const;

private:
    std::vector<ClusterRecord> records_;
    std::map<std::string, std::vector<TextBundle>> texts_;
    std::map<EmbeddingKey, EmbeddingVector> embeddings_;
    std::unordered_map<std::string, std::size_t> index_;
    std::map<std::pair<std::string, std::string>, std::size_t> dims_;
    std::vector<std::string> warnings_;
};

enum class RecordFormat { jsonl, csv };

Dataset load_dataset(const std::filesystem::path& path, RecordFormat format);
/// Format inferred from the extension (.csv → csv, anything else → jsonl).
Dataset load_dataset(const std::filesystem::path& path);

/// Canonical JSONL for records: fixed key order, iwi omitted when absent.
std::string records_to_jsonl(const std::vector<ClusterRecord>& records);
void save_records(const std::filesystem::path& path, const std::vector<ClusterRecord>& records);

std::string texts_to_jsonl(const Dataset& ds);
std::vector<TextBundle> load_texts(const std::filesystem::path& path);
Dataset attach_texts(const Dataset& ds, const std::filesystem::path& path);

/// Reads either a binary manifest (header .json + f32 blob + id sidecar) or
/// the pure-JSONL variant, and merges it into a copy of `ds`.
Dataset attach_embeddings(const Dataset& ds, const std::filesystem::path& path);
std::vector<EmbeddingVector> load_embedding_manifest(const std::filesystem::path& path);

/// Writes the binary manifest triple next to `header_path`: header JSON,
/// `<stem>.f32` and `<stem>.ids.jsonl`. All vectors must share source, provider and dim.
void save_embedding_manifest(const std::filesystem::path& header_path, const std::vector<EmbeddingVector>& vectors);

/// File-name-safe form of a source key ("NMR:desc" → "NMR_desc").
std::string source_file_stem(const std::string& source, const std::string& provider_id);

std::vector<CoverageRow> coverage_report(const Dataset& ds, const std::vector<std::string>& required_sources);

/// Directory layout used by the CLI: records.jsonl, optional texts.jsonl,
/// and every manifest under embeddings/ (*.json or *.jsonl).
Dataset load_dataset_dir(const std::filesystem::path& dir);

} // namespace imprint

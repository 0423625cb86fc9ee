#include "imprint/core_data.hpp"

#include "imprint/error.hpp"
#include "imprint/util.hpp"

#include <json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

namespace imprint {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

std::string to_string(SourceTag tag) { return tag == SourceTag::NMR ? "NMR" : "ASA"; }

SourceTag source_tag_from_string(const std::string& s) {
    if (s == "NMR") return SourceTag::NMR;
    if (s == "ASA") return SourceTag::ASA;
    throw ValidationError("unknown source_tag '" + s + "' (expected NMR or ASA)");
}

namespace {

bool plausible_country_code(const std::string& code) {
    if (code.size() != 2 && code.size() != 3) return false;
    return std::all_of(code.begin(), code.end(), [](char c) { return c >= 'A' && c <= 'Z'; });
}

void check_record(const ClusterRecord& r, std::size_t line) {
    auto fail = [&](const std::string& field, const std::string& msg) {
        if (line) throw ParseError(msg, line, field);
        throw ValidationError("cluster '" + r.cluster_id + "', field '" + field + "': " + msg);
    };
    if (r.cluster_id.empty()) fail("cluster_id", "must be non-empty");
    if (!std::isfinite(r.lat) || r.lat < -90.0 || r.lat > 90.0) fail("lat", "out of range [-90, 90]");
    if (!std::isfinite(r.lon) || r.lon < -180.0 || r.lon > 180.0) fail("lon", "out of range [-180, 180]");
    if (r.country.empty()) fail("country", "must be non-empty");
    if (r.iwi && (!std::isfinite(*r.iwi) || *r.iwi < 0.0 || *r.iwi > 100.0)) fail("iwi", "out of range [0, 100]");
}

void check_bundle(const TextBundle& b) {
    auto fail = [&](const std::string& msg) {
        throw ValidationError("text bundle for '" + b.cluster_id + "': " + msg);
    };
    if (b.prediction && (!std::isfinite(*b.prediction) || *b.prediction < 0.0 || *b.prediction > 100.0))
        fail("prediction out of range [0, 100]");
    if (b.confidence && (!std::isfinite(*b.confidence) || *b.confidence < 0.0 || *b.confidence > 1.0))
        fail("confidence out of range [0, 1]");
    if (b.source_tag == SourceTag::NMR && (!b.trace.empty() || !b.summary.empty()))
        fail("NMR bundles carry no trace or summary");
}

} // namespace

Dataset::Dataset(std::vector<ClusterRecord> records, std::map<std::string, std::vector<TextBundle>> texts,
                 std::map<EmbeddingKey, EmbeddingVector> embeddings)
    : records_(std::move(records)), texts_(std::move(texts)), embeddings_(std::move(embeddings)) {
    std::set<std::string> duplicates;
    for (std::size_t i = 0; i < records_.size(); ++i) {
        auto& r = records_[i];
        r.country = to_upper(r.country);
        check_record(r, 0);
        if (!index_.emplace(r.cluster_id, i).second) duplicates.insert(r.cluster_id);
    }
    if (!duplicates.empty())
        throw ValidationError("duplicate cluster_id: " + join(std::vector<std::string>(duplicates.begin(), duplicates.end()), ", "));

    std::set<std::string> unusual;
    for (const auto& r : records_)
        if (!plausible_country_code(r.country)) unusual.insert(r.country);
    for (const auto& code : unusual) {
        warnings_.push_back("unrecognized country code '" + code + "'");
        spdlog::warn("unrecognized country code '{}'", code);
    }

    for (const auto& [id, bundles] : texts_) {
        if (!contains(id)) throw ValidationError("text bundle references unknown cluster_id '" + id + "'");
        for (const auto& b : bundles) {
            if (b.cluster_id != id) throw ValidationError("text bundle keyed under '" + id + "' names '" + b.cluster_id + "'");
            check_bundle(b);
        }
    }

    for (const auto& [key, e] : embeddings_) {
        const auto& [id, source, provider] = key;
        if (!contains(id))
            throw ValidationError("embedding (" + source + ", " + provider + ") references unknown cluster_id '" + id + "'");
        if (e.cluster_id != id || e.source != source || e.provider_id != provider)
            throw ValidationError("embedding key does not match its vector for cluster '" + id + "'");
        if (e.values.empty()) throw ValidationError("embedding for '" + id + "' / " + source + " has dim 0");
        for (double v : e.values)
            if (!std::isfinite(v)) throw ValidationError("embedding for '" + id + "' / " + source + " contains NaN/Inf");
        auto [it, inserted] = dims_.emplace(std::make_pair(source, provider), e.dim());
        if (!inserted && it->second != e.dim())
            throw ValidationError("dim mismatch for source '" + source + "' provider '" + provider + "': " +
                                  std::to_string(it->second) + " vs " + std::to_string(e.dim()) + " (cluster '" + id + "')");
    }
}

const ClusterRecord& Dataset::record(const std::string& cluster_id) const {
    auto it = index_.find(cluster_id);
    if (it == index_.end()) throw ValidationError("unknown cluster_id '" + cluster_id + "'");
    return records_[it->second];
}

std::size_t Dataset::dim(const std::string& source, const std::string& provider_id) const {
    auto it = dims_.find({source, provider_id});
    if (it == dims_.end()) throw ValidationError("no embeddings for source '" + source + "' provider '" + provider_id + "'");
    return it->second;
}

std::size_t Dataset::dim(const std::string& source) const {
    const auto providers = providers_for(source);
    if (providers.empty()) throw ValidationError("no embeddings for source '" + source + "'");
    if (providers.size() > 1)
        throw ValidationError("source '" + source + "' has several providers (" + join(providers, ", ") + "); use source@provider");
    return dim(source, providers.front());
}

std::vector<std::string> Dataset::providers_for(const std::string& source) const {
    std::vector<std::string> out;
    for (const auto& [key, d] : dims_)
        if (key.first == source) out.push_back(key.second);
    return out;
}

const EmbeddingVector* Dataset::find_embedding(const std::string& cluster_id, const std::string& source,
                                               const std::string& provider_id) const {
    auto it = embeddings_.find({cluster_id, source, provider_id});
    return it == embeddings_.end() ? nullptr : &it->second;
}

const TextBundle* Dataset::find_text(const std::string& cluster_id, SourceTag tag) const {
    auto it = texts_.find(cluster_id);
    if (it == texts_.end()) return nullptr;
    for (const auto& b : it->second)
        if (b.source_tag == tag) return &b;
    return nullptr;
}

Dataset Dataset::subset(const std::vector<std::string>& cluster_ids) const {
    std::set<std::string> keep(cluster_ids.begin(), cluster_ids.end());
    std::vector<ClusterRecord> recs;
    for (const auto& r : records_)
        if (keep.count(r.cluster_id)) recs.push_back(r);
    std::map<std::string, std::vector<TextBundle>> texts;
    for (const auto& [id, b] : texts_)
        if (keep.count(id)) texts.emplace(id, b);
    std::map<EmbeddingKey, EmbeddingVector> embs;
    for (const auto& [k, e] : embeddings_)
        if (keep.count(std::get<0>(k))) embs.emplace(k, e);
    return Dataset(std::move(recs), std::move(texts), std::move(embs));
}

Dataset Dataset::with_embeddings(const std::vector<EmbeddingVector>& vectors) const {
    auto embs = embeddings_;
    for (const auto& v : vectors) embs.insert_or_assign({v.cluster_id, v.source, v.provider_id}, v);
    return Dataset(records_, texts_, std::move(embs));
}

Dataset Dataset::with_texts(const std::vector<TextBundle>& bundles) const {
    auto texts = texts_;
    for (const auto& b : bundles) {
        auto& slot = texts[b.cluster_id];
        auto it = std::find_if(slot.begin(), slot.end(), [&](const TextBundle& x) {
            return x.source_tag == b.source_tag && x.provider_id == b.provider_id;
        });
        if (it != slot.end()) *it = b;
        else slot.push_back(b);
    }
    return Dataset(records_, std::move(texts), embeddings_);
}

std::string Dataset::content_hash() const {
    std::string blob = records_to_jsonl(records_);
    blob += texts_to_jsonl(*this);
    for (const auto& [k, e] : embeddings_) {
        blob += std::get<0>(k) + '\x1f' + std::get<1>(k) + '\x1f' + std::get<2>(k) + '\x1f';
        blob.append(reinterpret_cast<const char*>(e.values.data()), e.values.size() * sizeof(double));
    }
    return sha256_hex(blob);
}

// --------------------------------------------------------------------------
// Records
// --------------------------------------------------------------------------

namespace {

double json_number(const json& row, const char* field, std::size_t line) {
    auto it = row.find(field);
    if (it == row.end()) throw ParseError("missing field", line, field);
    if (!it->is_number()) throw ParseError("expected a number", line, field);
    return it->get<double>();
}

std::string json_string(const json& row, const char* field, std::size_t line, bool required) {
    auto it = row.find(field);
    if (it == row.end() || it->is_null()) {
        if (required) throw ParseError("missing field", line, field);
        return {};
    }
    if (!it->is_string()) throw ParseError("expected a string", line, field);
    return it->get<std::string>();
}

ClusterRecord record_from_json(const json& row, std::size_t line) {
    if (!row.is_object()) throw ParseError("expected a JSON object", line);
    ClusterRecord r;
    r.cluster_id = json_string(row, "cluster_id", line, true);
    r.lat = json_number(row, "lat", line);
    r.lon = json_number(row, "lon", line);
    r.country = to_upper(json_string(row, "country", line, true));
    auto year = row.find("year");
    if (year == row.end()) throw ParseError("missing field", line, "year");
    if (!year->is_number_integer()) throw ParseError("expected an integer", line, "year");
    r.year = year->get<int>();
    r.place_name = json_string(row, "place_name", line, false);
    if (auto iwi = row.find("iwi"); iwi != row.end() && !iwi->is_null()) {
        if (!iwi->is_number()) throw ParseError("expected a number", line, "iwi");
        r.iwi = iwi->get<double>();
    }
    check_record(r, line);
    return r;
}

std::vector<std::string> parse_csv_line(const std::string& line, std::size_t lineno) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(std::move(cur));
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    if (quoted) throw ParseError("unterminated quoted field", lineno);
    fields.push_back(std::move(cur));
    return fields;
}

template <typename T>
T csv_number(const std::string& text, std::size_t line, const std::string& field) {
    const auto s = trim(text);
    T value{};
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (s.empty() || ec != std::errc() || ptr != s.data() + s.size())
        throw ParseError("not a number: '" + s + "'", line, field);
    return value;
}

std::vector<ClusterRecord> parse_records_jsonl(std::istream& in) {
    std::vector<ClusterRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        json row;
        try {
            row = json::parse(line);
        } catch (const json::parse_error& e) {
            throw ParseError(std::string("invalid JSON: ") + e.what(), lineno);
        }
        out.push_back(record_from_json(row, lineno));
    }
    return out;
}

std::vector<ClusterRecord> parse_records_csv(std::istream& in) {
    std::vector<ClusterRecord> out;
    std::string line;
    std::size_t lineno = 0;
    std::map<std::string, std::size_t> col;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        auto fields = parse_csv_line(line, lineno);
        if (col.empty()) {
            for (std::size_t i = 0; i < fields.size(); ++i) col[trim(fields[i])] = i;
            for (const char* req : {"cluster_id", "lat", "lon", "country", "year"})
                if (!col.count(req)) throw ParseError("header lacks required column", lineno, req);
            continue;
        }
        if (fields.size() != col.size())
            throw ParseError("expected " + std::to_string(col.size()) + " columns, got " + std::to_string(fields.size()), lineno);
        auto get = [&](const char* name) -> std::string {
            auto it = col.find(name);
            return it == col.end() ? std::string{} : fields[it->second];
        };
        ClusterRecord r;
        r.cluster_id = trim(get("cluster_id"));
        r.lat = csv_number<double>(get("lat"), lineno, "lat");
        r.lon = csv_number<double>(get("lon"), lineno, "lon");
        r.country = to_upper(trim(get("country")));
        r.year = csv_number<int>(get("year"), lineno, "year");
        r.place_name = get("place_name");
        if (auto iwi = trim(get("iwi")); !iwi.empty()) r.iwi = csv_number<double>(iwi, lineno, "iwi");
        check_record(r, lineno);
        out.push_back(std::move(r));
    }
    return out;
}

} // namespace

Dataset load_dataset(const std::filesystem::path& path, RecordFormat format) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    auto records = format == RecordFormat::csv ? parse_records_csv(in) : parse_records_jsonl(in);
    return Dataset(std::move(records));
}

Dataset load_dataset(const std::filesystem::path& path) {
    return load_dataset(path, to_lower(path.extension().string()) == ".csv" ? RecordFormat::csv : RecordFormat::jsonl);
}

std::string records_to_jsonl(const std::vector<ClusterRecord>& records) {
    std::string out;
    for (const auto& r : records) {
        ordered_json j;
        j["cluster_id"] = r.cluster_id;
        j["lat"] = r.lat;
        j["lon"] = r.lon;
        j["country"] = r.country;
        j["year"] = r.year;
        j["place_name"] = r.place_name;
        if (r.iwi) j["iwi"] = *r.iwi;
        out += j.dump();
        out += '\n';
    }
    return out;
}

void save_records(const std::filesystem::path& path, const std::vector<ClusterRecord>& records) {
    write_file(path, records_to_jsonl(records));
}

// --------------------------------------------------------------------------
// Texts
// --------------------------------------------------------------------------

namespace {

ordered_json bundle_to_json(const TextBundle& b) {
    ordered_json j;
    j["cluster_id"] = b.cluster_id;
    j["source_tag"] = to_string(b.source_tag);
    j["provider_id"] = b.provider_id;
    j["desc"] = b.desc;
    j["trace"] = b.trace;
    j["summary"] = b.summary;
    j["justification"] = b.justification;
    j["prediction"] = b.prediction ? ordered_json(*b.prediction) : ordered_json(nullptr);
    j["confidence"] = b.confidence ? ordered_json(*b.confidence) : ordered_json(nullptr);
    j["degraded"] = b.degraded;
    j["low_evidence"] = b.low_evidence;
    return j;
}

TextBundle bundle_from_json(const json& j, std::size_t line) {
    if (!j.is_object()) throw ParseError("expected a JSON object", line);
    TextBundle b;
    b.cluster_id = json_string(j, "cluster_id", line, true);
    try {
        b.source_tag = source_tag_from_string(json_string(j, "source_tag", line, true));
    } catch (const ValidationError& e) {
        throw ParseError(e.what(), line, "source_tag");
    }
    b.provider_id = json_string(j, "provider_id", line, false);
    b.desc = json_string(j, "desc", line, false);
    b.trace = json_string(j, "trace", line, false);
    b.summary = json_string(j, "summary", line, false);
    b.justification = json_string(j, "justification", line, false);
    for (const char* f : {"prediction", "confidence"}) {
        auto it = j.find(f);
        if (it == j.end() || it->is_null()) continue;
        if (!it->is_number()) throw ParseError("expected a number", line, f);
        (std::string(f) == "prediction" ? b.prediction : b.confidence) = it->get<double>();
    }
    b.degraded = j.value("degraded", false);
    b.low_evidence = j.value("low_evidence", false);
    return b;
}

} // namespace

std::string texts_to_jsonl(const Dataset& ds) {
    std::string out;
    for (const auto& [id, bundles] : ds.texts())
        for (const auto& b : bundles) out += bundle_to_json(b).dump() + '\n';
    return out;
}

std::vector<TextBundle> load_texts(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    std::vector<TextBundle> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw ParseError(std::string("invalid JSON: ") + e.what(), lineno);
        }
        out.push_back(bundle_from_json(j, lineno));
    }
    return out;
}

Dataset attach_texts(const Dataset& ds, const std::filesystem::path& path) { return ds.with_texts(load_texts(path)); }

// --------------------------------------------------------------------------
// Embedding manifests
// --------------------------------------------------------------------------

std::string source_file_stem(const std::string& source, const std::string& provider_id) {
    std::string s = source + "__" + provider_id;
    for (auto& c : s)
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_' && c != '.') c = '_';
    return s;
}

namespace {

static_assert(std::endian::native == std::endian::little, "f32 blobs are read in native order");

std::vector<EmbeddingVector> load_jsonl_embeddings(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    std::vector<EmbeddingVector> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw ParseError(std::string("invalid JSON: ") + e.what(), lineno);
        }
        EmbeddingVector e;
        e.cluster_id = json_string(j, "cluster_id", lineno, true);
        e.source = json_string(j, "source", lineno, true);
        e.provider_id = json_string(j, "provider_id", lineno, false);
        if (e.provider_id.empty()) e.provider_id = "default";
        auto vals = j.find("values");
        if (vals == j.end() || !vals->is_array()) throw ParseError("expected an array", lineno, "values");
        for (const auto& v : *vals) {
            if (!v.is_number()) throw ParseError("non-numeric entry", lineno, "values");
            e.values.push_back(v.get<double>());
        }
        out.push_back(std::move(e));
    }
    return out;
}

std::vector<EmbeddingVector> load_binary_manifest(const std::filesystem::path& path) {
    json header;
    try {
        header = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("invalid manifest header: ") + e.what());
    }
    for (const char* f : {"source", "provider_id", "dim", "dtype"})
        if (!header.contains(f)) throw ParseError("manifest header lacks field", 1, f);
    if (header["dtype"] != "f32") throw ParseError("only dtype f32 is supported", 1, "dtype");
    const auto dim = header["dim"].get<std::int64_t>();
    if (dim <= 0) throw ParseError("dim must be positive", 1, "dim");
    const auto dir = path.parent_path();
    const auto stem = path.stem().string();
    const auto blob_path = dir / header.value("blob", stem + ".f32");
    const auto ids_path = dir / header.value("ids", stem + ".ids.jsonl");

    std::vector<std::string> ids;
    {
        std::ifstream in(ids_path, std::ios::binary);
        if (!in) throw Error("cannot open " + ids_path.string());
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (trim(line).empty()) continue;
            try {
                auto j = json::parse(line);
                ids.push_back(j.is_string() ? j.get<std::string>() : j.at("cluster_id").get<std::string>());
            } catch (const json::exception& e) {
                throw ParseError(std::string("bad id row: ") + e.what(), lineno, "cluster_id");
            }
        }
    }
    const std::string blob = read_file(blob_path);
    const auto row_bytes = static_cast<std::size_t>(dim) * sizeof(float);
    if (blob.size() != ids.size() * row_bytes)
        throw ParseError("blob holds " + std::to_string(blob.size()) + " bytes, expected " + std::to_string(ids.size()) +
                         " rows x " + std::to_string(dim) + " f32");
    if (header.contains("count") && header["count"].get<std::size_t>() != ids.size())
        throw ParseError("count does not match id sidecar", 1, "count");

    std::vector<EmbeddingVector> out;
    out.reserve(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        EmbeddingVector e;
        e.cluster_id = ids[i];
        e.source = header["source"].get<std::string>();
        e.provider_id = header["provider_id"].get<std::string>();
        e.values.resize(static_cast<std::size_t>(dim));
        for (std::size_t k = 0; k < e.values.size(); ++k) {
            float f;
            std::memcpy(&f, blob.data() + i * row_bytes + k * sizeof(float), sizeof f);
            e.values[k] = f;
        }
        out.push_back(std::move(e));
    }
    return out;
}

} // namespace

std::vector<EmbeddingVector> load_embedding_manifest(const std::filesystem::path& path) {
    return to_lower(path.extension().string()) == ".jsonl" ? load_jsonl_embeddings(path) : load_binary_manifest(path);
}

Dataset attach_embeddings(const Dataset& ds, const std::filesystem::path& path) {
    auto vectors = load_embedding_manifest(path);
    std::vector<std::string> unknown;
    for (const auto& v : vectors)
        if (!ds.contains(v.cluster_id)) unknown.push_back(v.cluster_id);
    if (!unknown.empty())
        throw ValidationError("embedding manifest " + path.filename().string() + " references unknown cluster_id: " +
                              join(unknown, ", "));
    std::map<std::pair<std::string, std::string>, std::size_t> dims;
    for (const auto& v : vectors) {
        auto [it, inserted] = dims.emplace(std::make_pair(v.source, v.provider_id), v.dim());
        if (!inserted && it->second != v.dim())
            throw ValidationError("dim mismatch for source '" + v.source + "' provider '" + v.provider_id + "': " +
                                  std::to_string(it->second) + " vs " + std::to_string(v.dim()));
    }
    return ds.with_embeddings(vectors);
}

void save_embedding_manifest(const std::filesystem::path& header_path, const std::vector<EmbeddingVector>& vectors) {
    if (vectors.empty()) throw ValidationError("cannot write an empty embedding manifest");
    const auto& first = vectors.front();
    std::string blob;
    std::string ids;
    blob.reserve(vectors.size() * first.dim() * sizeof(float));
    for (const auto& v : vectors) {
        if (v.source != first.source || v.provider_id != first.provider_id || v.dim() != first.dim())
            throw ValidationError("manifest vectors must share source, provider and dim");
        for (double x : v.values) {
            const auto f = static_cast<float>(x);
            blob.append(reinterpret_cast<const char*>(&f), sizeof f);
        }
        ids += json(v.cluster_id).dump() + '\n';
    }
    const auto stem = header_path.stem().string();
    ordered_json header;
    header["source"] = first.source;
    header["provider_id"] = first.provider_id;
    header["dim"] = first.dim();
    header["dtype"] = "f32";
    header["count"] = vectors.size();
    header["blob"] = stem + ".f32";
    header["ids"] = stem + ".ids.jsonl";
    const auto dir = header_path.parent_path();
    write_file(dir / (stem + ".f32"), blob);
    write_file(dir / (stem + ".ids.jsonl"), ids);
    write_file(header_path, header.dump(2) + '\n');
}

std::vector<CoverageRow> coverage_report(const Dataset& ds, const std::vector<std::string>& required_sources) {
    std::vector<CoverageRow> rows;
    for (const auto& source : required_sources) {
        CoverageRow row{source, 0, 0};
        const auto providers = ds.providers_for(source);
        for (const auto& r : ds.records()) {
            const bool present = std::any_of(providers.begin(), providers.end(), [&](const std::string& p) {
                return ds.find_embedding(r.cluster_id, source, p) != nullptr;
            });
            ++(present ? row.n_present : row.n_missing);
        }
        rows.push_back(row);
    }
    return rows;
}

Dataset load_dataset_dir(const std::filesystem::path& dir) {
    auto ds = load_dataset(dir / "records.jsonl", RecordFormat::jsonl);
    if (std::filesystem::exists(dir / "texts.jsonl")) ds = attach_texts(ds, dir / "texts.jsonl");
    const auto emb_dir = dir / "embeddings";
    if (std::filesystem::is_directory(emb_dir)) {
        std::vector<std::filesystem::path> manifests;
        for (const auto& entry : std::filesystem::directory_iterator(emb_dir)) {
            const auto name = entry.path().filename().string();
            if (name.ends_with(".ids.jsonl")) continue;
            const auto ext = entry.path().extension().string();
            if (ext == ".json" || ext == ".jsonl") manifests.push_back(entry.path());
        }
        std::sort(manifests.begin(), manifests.end());
        std::vector<EmbeddingVector> all;
        for (const auto& m : manifests) {
            auto v = load_embedding_manifest(m);
            all.insert(all.end(), std::make_move_iterator(v.begin()), std::make_move_iterator(v.end()));
        }
        if (!all.empty()) ds = ds.with_embeddings(all);
    }
    return ds;
}

} // namespace imprint

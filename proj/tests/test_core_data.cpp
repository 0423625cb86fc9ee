#include "imprint/core_data.hpp"
#include "imprint/error.hpp"
#include "imprint/util.hpp"

#include "support.hpp"

#include <doctest.h>

using namespace imprint;
using testsupport::TempDir;

namespace {

const char* kManazary =
    R"({"cluster_id":"c1","lat":-18.85,"lon":47.58,"country":"MG","year":1997,"place_name":"Manazary","iwi":30.0})";

std::vector<ClusterRecord> three_records() {
    std::vector<ClusterRecord> r;
    for (int i = 0; i < 3; ++i) r.push_back({"c" + std::to_string(i), 1.0 * i, 2.0 * i, "RW", 2000 + i, "", 10.0 * i});
    return r;
}

EmbeddingVector vec(const std::string& id, const std::string& source, std::vector<double> v, std::string provider = "p") {
    return {id, source, std::move(provider), std::move(v)};
}

} // namespace

TEST_CASE("csv with only a header gives an empty dataset") {
    TempDir tmp("core");
    write_file(tmp / "r.csv", "cluster_id,lat,lon,country,year,place_name,iwi\n");
    const auto ds = load_dataset(tmp / "r.csv");
    CHECK(ds.size() == 0);
}

TEST_CASE("single record keeps its coordinates exactly") {
    TempDir tmp("core");
    write_file(tmp / "r.jsonl", std::string(kManazary) + "\n");
    const auto ds = load_dataset(tmp / "r.jsonl", RecordFormat::jsonl);
    REQUIRE(ds.size() == 1);
    const auto& r = ds.record("c1");
    CHECK(r.lat == -18.85);
    CHECK(r.lon == 47.58);
    CHECK(r.year == 1997);
    CHECK(*r.iwi == 30.0);

    // canonical form round-trips byte for byte
    save_records(tmp / "out.jsonl", ds.records());
    const auto again = load_dataset(tmp / "out.jsonl", RecordFormat::jsonl);
    save_records(tmp / "out2.jsonl", again.records());
    CHECK(read_file(tmp / "out.jsonl") == read_file(tmp / "out2.jsonl"));
    CHECK(read_file(tmp / "out.jsonl").find("-18.85") != std::string::npos);
}

TEST_CASE("iwi out of range names the line and the field") {
    TempDir tmp("core");
    write_file(tmp / "r.jsonl", std::string(kManazary) + "\n" +
                                    R"({"cluster_id":"c2","lat":0,"lon":0,"country":"MG","year":1997,"place_name":"","iwi":101})" + "\n");
    try {
        load_dataset(tmp / "r.jsonl");
        FAIL("expected a ParseError");
    } catch (const ParseError& e) {
        CHECK(e.line() == 2);
        CHECK(e.field() == "iwi");
    }
}

TEST_CASE("malformed rows report line and field") {
    TempDir tmp("core");
    write_file(tmp / "r.csv", "cluster_id,lat,lon,country,year,place_name,iwi\nc1,abc,1,RW,2000,,5\n");
    try {
        load_dataset(tmp / "r.csv");
        FAIL("expected a ParseError");
    } catch (const ParseError& e) {
        CHECK(e.line() == 2);
        CHECK(e.field() == "lat");
    }
    write_file(tmp / "m.jsonl", R"({"cluster_id":"c1","lat":0,"lon":0,"country":"RW","place_name":""})" "\n");
    CHECK_THROWS_AS(load_dataset(tmp / "m.jsonl"), ParseError);
}

TEST_CASE("duplicate ids are listed") {
    auto recs = three_records();
    recs.push_back(recs[1]);
    try {
        Dataset ds(recs);
        FAIL("expected a ValidationError");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("c1") != std::string::npos);
    }
}

TEST_CASE("unlabeled records and lower-case countries") {
    TempDir tmp("core");
    write_file(tmp / "r.jsonl", R"({"cluster_id":"a","lat":1,"lon":2,"country":"rw","year":2001,"place_name":"x"})" "\n"
                                R"({"cluster_id":"b","lat":1,"lon":2,"country":"QQQQ","year":2001,"place_name":"x","iwi":3})" "\n");
    const auto ds = load_dataset(tmp / "r.jsonl");
    CHECK_FALSE(ds.record("a").labeled());
    CHECK(ds.record("a").country == "RW");
    CHECK(ds.warnings().size() == 1);
}

TEST_CASE("lat/lon range checked") {
    auto recs = three_records();
    recs[0].lat = 91;
    CHECK_THROWS_AS(Dataset{recs}, ValidationError);
    recs[0].lat = 0;
    recs[0].lon = -181;
    CHECK_THROWS_AS(Dataset{recs}, ValidationError);
}

TEST_CASE("embedding dims") {
    const Dataset base(three_records());
    const auto ds = base.with_embeddings({vec("c1", "CV", {1, 2, 3, 4})});
    CHECK(ds.dim("CV") == 4);
    CHECK_THROWS_AS(base.with_embeddings({vec("c1", "CV", {1, 2, 3, 4}), vec("c2", "CV", {1, 2, 3, 4, 5})}), ValidationError);
    CHECK_THROWS_AS(base.with_embeddings({vec("zz", "CV", {1})}), ValidationError);
    CHECK_THROWS_AS(base.with_embeddings({vec("c1", "CV", {1, std::nan("")})}), ValidationError);
}

TEST_CASE("binary manifest with 1536-dim vectors") {
    TempDir tmp("core");
    const Dataset base(three_records());
    std::vector<EmbeddingVector> vs;
    Rng rng(3);
    for (const auto& r : base.records()) {
        std::vector<double> v(1536);
        for (auto& x : v) x = static_cast<float>(rng.normal());
        vs.push_back(vec(r.cluster_id, "NMR:desc", v, "oai-3-small"));
    }
    const auto header = tmp / (source_file_stem("NMR:desc", "oai-3-small") + ".json");
    save_embedding_manifest(header, vs);
    const auto ds = attach_embeddings(base, header);
    CHECK(ds.dim("NMR:desc", "oai-3-small") == 1536);
    // f32 storage: values already rounded to float survive exactly
    CHECK(ds.find_embedding("c2", "NMR:desc", "oai-3-small")->values == vs[2].values);
}

TEST_CASE("jsonl manifest and unknown cluster ids") {
    TempDir tmp("core");
    const Dataset base(three_records());
    write_file(tmp / "e.jsonl", R"({"cluster_id":"c0","source":"CV","provider_id":"v","values":[1,2]})" "\n");
    CHECK(attach_embeddings(base, tmp / "e.jsonl").dim("CV") == 2);
    write_file(tmp / "bad.jsonl", R"({"cluster_id":"nope","source":"CV","provider_id":"v","values":[1,2]})" "\n");
    CHECK_THROWS_AS(attach_embeddings(base, tmp / "bad.jsonl"), ValidationError);
}

TEST_CASE("coverage report") {
    Dataset ds(three_records());
    std::vector<EmbeddingVector> vs;
    for (const auto& r : ds.records()) vs.push_back(vec(r.cluster_id, "CV", {1, 2}));
    vs.push_back(vec("c0", "ASA:cleaned_traces", {1}));
    ds = ds.with_embeddings(vs);
    const auto rows = coverage_report(ds, {"CV", "ASA:cleaned_traces", "NMR:desc"});
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].source == "CV");
    CHECK(rows[0].n_present == 3);
    CHECK(rows[0].n_missing == 0);
    CHECK(rows[1].n_present == 1);
    CHECK(rows[1].n_missing == 2);
    CHECK(rows[2].n_present == 0);
    CHECK(rows[2].n_missing == 3);
}

TEST_CASE("text bundle invariants") {
    const Dataset base(three_records());
    TextBundle b;
    b.cluster_id = "c0";
    b.desc = "d";
    b.prediction = 120;
    CHECK_THROWS_AS(base.with_texts({b}), ValidationError);
    b.prediction = 50;
    b.confidence = 1.5;
    CHECK_THROWS_AS(base.with_texts({b}), ValidationError);
    b.confidence = 0.5;
    b.trace = "nmr bundles carry no trace";
    CHECK_THROWS_AS(base.with_texts({b}), ValidationError);
    b.trace.clear();
    const auto ds = base.with_texts({b});
    CHECK(ds.find_text("c0", SourceTag::NMR)->desc == "d");
    CHECK(ds.find_text("c0", SourceTag::ASA) == nullptr);
}

TEST_CASE("texts round-trip through jsonl") {
    TempDir tmp("core");
    TextBundle b{"c1", "", "trace <b>x</b>", "sum", "just", 42.5, 0.25, SourceTag::ASA, "m", false, true};
    const auto ds = Dataset(three_records()).with_texts({b});
    write_file(tmp / "t.jsonl", texts_to_jsonl(ds));
    const auto back = load_texts(tmp / "t.jsonl");
    REQUIRE(back.size() == 1);
    CHECK(back[0].trace == b.trace);
    CHECK(*back[0].prediction == 42.5);
    CHECK(back[0].low_evidence);
    CHECK(texts_to_jsonl(Dataset(three_records()).with_texts(back)) == read_file(tmp / "t.jsonl"));
}

TEST_CASE("subset keeps attachments and content hash is order independent of construction") {
    Dataset ds(three_records());
    ds = ds.with_embeddings({vec("c0", "CV", {1}), vec("c2", "CV", {3})});
    const auto s = ds.subset({"c2"});
    CHECK(s.size() == 1);
    CHECK(s.find_embedding("c2", "CV", "p") != nullptr);
    CHECK(s.embeddings().size() == 1);
    const auto ds2 = Dataset(three_records()).with_embeddings({vec("c2", "CV", {3}), vec("c0", "CV", {1})});
    CHECK(ds.content_hash() == ds2.content_hash());
}

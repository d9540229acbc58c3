#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "nptax/classifier.hpp"
#include "nptax/error.hpp"
#include "nptax/fasta.hpp"
#include "nptax/library_io.hpp"
#include "nptax/model_io.hpp"
#include "nptax/predictions_io.hpp"
#include "nptax/synth.hpp"
#include "support.hpp"

using namespace nptax;
using testsupport::temp_path;

namespace {

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
}

std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Library synthetic(std::size_t n, std::uint64_t seed, std::size_t length = 40) {
    SynthConfig c;
    c.ranks = {"family", "genus", "species"};
    c.levels = {{1.0, 0.2}, {1.0, 0.2}, {1.0, 0.2}};
    c.concentration = {3.0, 3.0, 3.0};
    c.length = length;
    c.gap_rate = 0.02;
    c.n = n;
    c.seed = seed;
    return simulate_library(c).library;
}

Model trained(const Library& lib, KernelSpec spec) {
    const auto recs = lib.taxon_records();
    const auto seqs = lib.sequences();
    return Model::train(lib.ranks, recs, seqs, spec, 0.3);
}

}  // namespace

TEST(Fasta, MultiLineRecordsAndCarriageReturns) {
    std::istringstream in(">a desc here\r\nAC\r\ngt\r\n\n>b\nNN-A\n");
    FastaReader r(in);
    auto x = r.next();
    ASSERT_TRUE(x);
    EXPECT_EQ(x->id, "a");
    EXPECT_EQ(x->header, "a desc here");
    EXPECT_EQ(x->sequence, "ACgt");
    x = r.next();
    ASSERT_TRUE(x);
    EXPECT_EQ(x->id, "b");
    EXPECT_EQ(x->sequence, "NN-A");
    EXPECT_FALSE(r.next());
}

TEST(Fasta, RejectsSequenceBeforeHeader) {
    std::istringstream in("ACGT\n>a\nAC\n");
    FastaReader r(in);
    EXPECT_THROW(r.next(), DataError);
}

TEST(Fasta, EmbeddedTaxonomy) {
    const auto t = parse_embedded_taxonomy("id7;tax=Diptera,Tephritidae,Acidia extra");
    ASSERT_TRUE(t);
    EXPECT_EQ(t->first, "id7");
    EXPECT_EQ(t->second, (std::vector<std::string>{"Diptera", "Tephritidae", "Acidia"}));
    EXPECT_FALSE(parse_embedded_taxonomy("plain header"));
}

TEST(LoadLibrary, JoinsToyFiles) {
    const auto fa = temp_path("toy.fasta"), tsv = temp_path("toy.tsv");
    write_text(fa, ">x1\nacgtn\n>x2\nAC-GT\n");
    write_text(tsv, "id\tgenus\tspecies\nx2\tG\tS2\nx1\tG\tS1\n");
    const auto rep = load_library(fa, tsv, {});
    ASSERT_EQ(rep.library.records.size(), 2u);
    EXPECT_EQ(rep.library.ranks, (std::vector<std::string>{"genus", "species"}));
    EXPECT_EQ(rep.library.records[0].id, "x1");
    EXPECT_EQ(rep.library.records[0].sequence, "ACGT-");
    EXPECT_EQ(rep.library.records[0].labels, (std::vector<std::string>{"G", "S1"}));
    EXPECT_EQ(rep.library.records[1].labels[1], "S2");
    EXPECT_TRUE(rep.missing_sequence.empty());
    EXPECT_TRUE(rep.missing_taxonomy.empty());
}

TEST(LoadLibrary, BlankCellGetsDummyLabel) {
    std::istringstream in("id\tOrder\tSubfamily\tGenus\nq\tDiptera\t\tAcidia\n");
    const auto t = read_taxonomy(in);
    ASSERT_EQ(t.labels.size(), 1u);
    EXPECT_EQ(t.labels[0][1], "unk_Diptera");
    EXPECT_EQ(t.labels[0][2], "Acidia");
}

TEST(LoadLibrary, UnmatchedIdsReportedOrFatal) {
    const auto fa = temp_path("unmatched.fasta"), tsv = temp_path("unmatched.tsv");
    write_text(fa, ">a\nAC\n>b\nAC\n");
    write_text(tsv, "id\tg\ts\na\tG\tS\nc\tG\tS\n");
    const auto rep = load_library(fa, tsv, {});
    EXPECT_EQ(rep.library.records.size(), 1u);
    EXPECT_EQ(rep.missing_taxonomy, (std::vector<std::string>{"b"}));
    EXPECT_EQ(rep.missing_sequence, (std::vector<std::string>{"c"}));
    LoadOptions strict;
    strict.strict = true;
    EXPECT_THROW(load_library(fa, tsv, strict), DataError);
    EXPECT_THROW(load_library(temp_path("does-not-exist.fasta"), tsv, {}), DataError);
}

TEST(LoadLibrary, EmbeddedHeaders) {
    const auto fa = temp_path("embedded.fasta");
    write_text(fa, ">a;tax=F,G,S\nACGT\n>b;tax=F,,S2\nACGA\n");
    const auto rep = load_library_embedded(fa, {"family", "genus", "species"}, {});
    ASSERT_EQ(rep.library.records.size(), 2u);
    EXPECT_EQ(rep.library.records[1].labels[1], "unk_F");
}

TEST(LoadLibrary, LargeRoundTrip) {
    const auto lib = synthetic(10000, 5, 30);
    const auto fa = temp_path("round.fasta"), tsv = temp_path("round.tsv");
    write_library(lib, fa, tsv);
    const auto rep = load_library(fa, tsv, {});
    ASSERT_EQ(rep.library.records.size(), lib.records.size());
    EXPECT_EQ(rep.library.ranks, lib.ranks);
    for (std::size_t i = 0; i < lib.records.size(); ++i) {
        EXPECT_EQ(rep.library.records[i].id, lib.records[i].id);
        EXPECT_EQ(rep.library.records[i].labels, lib.records[i].labels);
        EXPECT_EQ(rep.library.records[i].sequence, lib.records[i].sequence);
    }
    // a second pass reads back the same records
    write_library(rep.library, fa, tsv);
    const auto again = load_library(fa, tsv, {});
    EXPECT_EQ(again.library.records.size(), lib.records.size());
    EXPECT_EQ(again.library.records.back().sequence, lib.records.back().sequence);
}

TEST(ModelFile, RoundTripClassifiesBitExactly) {
    const auto lib = synthetic(600, 8);
    for (const KernelSpec spec : {KernelSpec{KernelKind::Product1, 40, 5}, KernelSpec{KernelKind::Product2, 40, 5},
                                  KernelSpec{KernelKind::Kmer, 0, 4}}) {
        const auto m = trained(lib, spec);
        const auto path = temp_path("model.bin");
        save_model(m, path);
        const auto back = load_model(path);
        EXPECT_EQ(back.rho(), m.rho());
        ASSERT_EQ(back.candidates(), m.candidates());
        EXPECT_EQ(back.log_prior(), m.log_prior());
        SplitMix64 rng(1);
        for (int i = 0; i < 50; ++i) {
            const auto q = testsupport::random_dna(rng, 40, 0.05);
            EXPECT_EQ(m.log_joint(m.encode(q)), back.log_joint(back.encode(q)));
        }
        EXPECT_EQ(serialize_model(back), serialize_model(m));
    }
}

TEST(ModelFile, TruncatedOrCorruptedFilesFailCleanly) {
    const auto m = trained(synthetic(200, 9), {KernelKind::Product1, 40, 5});
    const auto bytes = serialize_model(m);
    for (std::size_t cut : {std::size_t{0}, std::size_t{5}, std::size_t{20}, bytes.size() / 2, bytes.size() - 1}) {
        std::vector<std::uint8_t> part(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
        EXPECT_THROW(deserialize_model(part), ModelFormatError) << cut;
    }
    auto flipped = bytes;
    flipped[flipped.size() / 2] ^= 0x40;
    EXPECT_THROW(deserialize_model(flipped), ModelFormatError);
    auto wrong_version = bytes;
    wrong_version[8] = 99;
    EXPECT_THROW(deserialize_model(wrong_version), ModelFormatError);
}

TEST(ModelFile, InspectReadsHeaderOnly) {
    const auto lib = synthetic(300, 10);
    const auto m = trained(lib, {KernelKind::Kmer, 0, 5});
    const auto path = temp_path("inspect.bin");
    save_model(m, path);
    const auto meta = inspect_model(path);
    EXPECT_EQ(meta.ranks, lib.ranks);
    EXPECT_EQ(meta.kernel.kind, KernelKind::Kmer);
    EXPECT_EQ(meta.kernel.kappa, 5);
    EXPECT_EQ(meta.rho, 0.3);
    ASSERT_EQ(meta.level_params.size(), 3u);
    for (std::size_t l = 0; l < 3; ++l) EXPECT_EQ(meta.level_params[l], m.level_params()[l]);
    EXPECT_EQ(meta.candidates, m.candidates().size());
    EXPECT_EQ(meta.sequences, 300u);
}

TEST(ModelFile, InspectIgnoresTrailingArrays) {
    const auto m = trained(synthetic(300, 11), {KernelKind::Product1, 40, 5});
    const auto bytes = serialize_model(m);
    // keep magic, version, header length and header; cut everything after
    std::uint64_t header_len = 0;
    std::memcpy(&header_len, bytes.data() + 12, 8);
    const auto path = temp_path("header-only.bin");
    write_text(path, std::string(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(20 + header_len)));
    const auto meta = inspect_model(path);
    EXPECT_EQ(meta.kernel.length, 40u);
    EXPECT_THROW(load_model(path), ModelFormatError);
}

TEST(Predictions, TsvColumnsAndNovelLabels) {
    const std::vector<TaxonRecord> recs{{"a", {"Trypetinae", "Trypetini", "Trypeta"}},
                                        {"b", {"Trypetinae", "Trypetini", "Euleia"}}};
    const auto t = build_tree({"Subfamily", "Tribe", "Genus"}, recs);
    const auto c = enumerate_candidates(t);
    std::vector<double> post(c.size(), 0.0);
    for (std::size_t i = 0; i < c.size(); ++i)
        if (candidate_label(t, c[i]) == "New Genus in Trypetini") post[i] = 0.75;
    post[0] = 0.25;
    auto a = annotate(t, c, post, 3);
    a.query_id = "q1";
    std::ostringstream out;
    const std::vector<std::string> ranks{"Subfamily", "Tribe", "Genus"};
    write_predictions_tsv(out, std::span<const Annotation>(&a, 1), ranks, 3);
    std::istringstream lines(out.str());
    std::string header, row, extra;
    std::getline(lines, header);
    std::getline(lines, row);
    EXPECT_FALSE(std::getline(lines, extra));
    const auto hc = split_tabs(header), rc = split_tabs(row);
    EXPECT_EQ(hc.size(), 1u + 3 * 3 + 3);
    EXPECT_EQ(rc.size(), hc.size());
    EXPECT_EQ(rc[0], "q1");
    EXPECT_EQ(rc[7], "New Genus in Trypetini");
    EXPECT_EQ(rc[8], "0.75");
    EXPECT_EQ(rc[9], "1");
    EXPECT_EQ(rc[10], "New Genus in Trypetini:0.75");
}

TEST(Predictions, TsvParseBackWithinPrintPrecision) {
    const auto lib = synthetic(500, 12);
    const auto m = trained(lib, {KernelKind::Product1, 40, 5});
    SplitMix64 rng(2);
    std::vector<Query> qs;
    for (int i = 0; i < 40; ++i) qs.push_back({"q" + std::to_string(i), testsupport::random_dna(rng, 40, 0.05)});
    const auto rows = classify_batch(m, qs, {0.3, 5, 1, 16});
    const auto path = temp_path("preds.tsv");
    write_predictions(path, rows, lib.ranks, 5, PredictionFormat::Tsv);
    const auto back = read_predictions_tsv(path);
    EXPECT_EQ(back.ranks, lib.ranks);
    ASSERT_EQ(back.rows.size(), rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        EXPECT_EQ(back.rows[i].query_id, rows[i].query_id);
        EXPECT_EQ(back.rows[i].novel_from, rows[i].novel_from);
        for (std::size_t l = 0; l < rows[i].ranks.size(); ++l) {
            EXPECT_EQ(back.rows[i].ranks[l].label, rows[i].ranks[l].label);
            EXPECT_EQ(back.rows[i].ranks[l].novel, rows[i].ranks[l].novel);
            const double p = rows[i].ranks[l].probability;
            EXPECT_LE(std::abs(back.rows[i].ranks[l].probability - p), 5e-6 * p + 1e-300);
        }
        ASSERT_EQ(back.rows[i].top_leaves.size(), rows[i].top_leaves.size());
        EXPECT_EQ(back.rows[i].top_leaves[0].label, rows[i].top_leaves[0].label);
    }
    // deterministic output
    const auto first = read_text(path);
    write_predictions(path, rows, lib.ranks, 5, PredictionFormat::Tsv);
    EXPECT_EQ(read_text(path), first);
}

TEST(Predictions, JsonLines) {
    const auto lib = synthetic(200, 13);
    const auto m = trained(lib, {KernelKind::Product1, 40, 5});
    std::vector<Query> qs{{"a", std::string(40, 'A')}, {"b", std::string(40, 'C')}};
    const auto rows = classify_batch(m, qs);
    std::ostringstream out;
    write_predictions_jsonl(out, rows, lib.ranks);
    std::istringstream in(out.str());
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        const auto j = nlohmann::json::parse(line);
        EXPECT_EQ(j["id"], rows[n].query_id);
        ASSERT_EQ(j["ranks"].size(), 3u);
        EXPECT_EQ(j["ranks"][2]["label"], rows[n].ranks[2].label);
        EXPECT_EQ(j["ranks"][0]["rank"], "family");
        EXPECT_EQ(j["top"].size(), rows[n].top_leaves.size());
        ++n;
    }
    EXPECT_EQ(n, 2u);
    EXPECT_EQ(parse_prediction_format("jsonl"), PredictionFormat::JsonLines);
    EXPECT_THROW(parse_prediction_format("xml"), DataError);
}

TEST(Predictions, MalformedFilesAreRejected) {
    std::istringstream no_header("q\tA\t0.5\t0\n");
    EXPECT_THROW(read_predictions_tsv(no_header), DataError);
    std::istringstream short_row("id\tg\tg_prob\tg_novel\nq\tA\n");
    EXPECT_THROW(read_predictions_tsv(short_row), DataError);
    std::istringstream bad_prob("id\tg\tg_prob\tg_novel\nq\tA\tx\t0\n");
    EXPECT_THROW(read_predictions_tsv(bad_prob), DataError);
}

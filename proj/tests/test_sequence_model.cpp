#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <numeric>

#include "nptax/error.hpp"
#include "nptax/rng.hpp"
#include "nptax/sequence.hpp"
#include "nptax/sequence_model.hpp"
#include "support.hpp"

using namespace nptax;
using testsupport::random_dna;

namespace {

KernelSpec product1(std::size_t p) { return {KernelKind::Product1, p, 5}; }

}  // namespace

TEST(Encoding, AlignedMapsNonAcgtToGap) {
    const auto e = encode_aligned("AC-GN", 5);
    const std::vector<std::uint8_t> expected{base::A, base::C, base::GAP, base::G, base::GAP};
    EXPECT_EQ(e, expected);
    EXPECT_EQ(encode_aligned("ACGT", 4), (std::vector<std::uint8_t>{base::A, base::C, base::G, base::T}));
    EXPECT_EQ(encode_aligned("acgt", 4), encode_aligned("ACGT", 4));
    EXPECT_THROW(encode_aligned("ACG", 4), DataError);
}

TEST(Encoding, NormalizeUppercasesAndGaps) { EXPECT_EQ(normalize_sequence("acgtRYn-."), "ACGT-----"); }

TEST(Kmers, SlidingWindowCounts) {
    const auto k = kmer_counts("AAAT", 3);
    EXPECT_EQ(k.total, 2u);
    EXPECT_EQ(k.count(0), 1u);                  // AAA
    EXPECT_EQ(k.count(3), 1u);                  // AAT = 0*16 + 0*4 + 3
    const auto one = kmer_counts("ACGT", 1);
    for (std::uint32_t g = 0; g < 4; ++g) EXPECT_EQ(one.count(g), 1u);
    EXPECT_EQ(kmer_string(3, 3), "AAT");
    EXPECT_THROW(kmer_counts("ACGT", 0), DataError);
    EXPECT_THROW(kmer_counts("ACGT", 9), DataError);
}

TEST(Kmers, SkipsWindowsWithAmbiguousBases) {
    const auto k = kmer_counts("ACNGT", 2);
    EXPECT_EQ(k.total, 2u);  // AC and GT
}

TEST(Kmers, MatchesHashMapTally) {
    SplitMix64 rng(12);
    const auto seq = random_dna(rng, 200, 0.03);
    for (int kappa : {1, 3, 5}) {
        std::map<std::string, std::uint32_t> tally;
        std::uint32_t total = 0;
        for (std::size_t i = 0; i + static_cast<std::size_t>(kappa) <= seq.size(); ++i) {
            const auto w = seq.substr(i, static_cast<std::size_t>(kappa));
            if (w.find('-') != std::string::npos) continue;
            ++tally[w];
            ++total;
        }
        const auto k = kmer_counts(seq, kappa);
        EXPECT_EQ(k.total, total);
        std::uint32_t sum = 0;
        for (const auto& [idx, c] : k.counts) {
            EXPECT_EQ(tally[kmer_string(idx, kappa)], c);
            sum += c;
        }
        EXPECT_EQ(sum, total);
        EXPECT_EQ(k.counts.size(), tally.size());
    }
}

TEST(Stats, GapsExcludedFromCounts) {
    const std::vector<TaxonRecord> recs{{"a", {"G", "S"}}, {"b", {"G", "S"}}};
    const auto t = build_tree({"genus", "species"}, recs);
    const std::vector<std::string> seqs{"A-", "AC"};
    const auto c = accumulate_stats(t, seqs, product1(2));
    const auto l0 = c.row(0, 0), l1 = c.row(0, 1);
    EXPECT_EQ(std::vector<std::uint32_t>(l0.begin(), l0.end()), (std::vector<std::uint32_t>{2, 0, 0, 0}));
    EXPECT_EQ(std::vector<std::uint32_t>(l1.begin(), l1.end()), (std::vector<std::uint32_t>{0, 1, 0, 0}));
}

TEST(Stats, EmptyCountsAreZero) {
    LeafCounts c(3, product1(4));
    for (auto x : c.raw()) EXPECT_EQ(x, 0u);
}

TEST(Stats, MatchBruteForceHistograms) {
    SplitMix64 rng(3);
    const auto recs = testsupport::random_records(100, 2, 3, 9);
    const auto t = build_tree({"genus", "species"}, recs);
    std::vector<std::string> seqs;
    for (std::size_t i = 0; i < recs.size(); ++i) seqs.push_back(random_dna(rng, 30, 0.1));

    const auto c1 = accumulate_stats(t, seqs, product1(30));
    const auto c2 = accumulate_stats(t, seqs, {KernelKind::Product2, 30, 5});
    const auto ck = accumulate_stats(t, seqs, {KernelKind::Kmer, 0, 3});
    std::map<std::tuple<std::size_t, std::size_t, std::size_t>, std::uint32_t> h1, h2, hk;
    const std::string bases = "ACGT";
    for (std::size_t i = 0; i < recs.size(); ++i) {
        const auto leaf = t.leaf_index(t.record_leaf(i));
        const auto& s = seqs[i];
        for (std::size_t p = 0; p < s.size(); ++p) {
            if (s[p] != '-') ++h1[{leaf, p, bases.find(s[p])}];
            if (p + 1 < s.size() && s[p] != '-' && s[p + 1] != '-')
                ++h2[{leaf, p, 4 * bases.find(s[p]) + bases.find(s[p + 1])}];
            if (p + 3 <= s.size() && s.substr(p, 3).find('-') == std::string::npos)
                ++hk[{leaf, 0, 16 * bases.find(s[p]) + 4 * bases.find(s[p + 1]) + bases.find(s[p + 2])}];
        }
    }
    auto compare = [&](const LeafCounts& c, auto& h) {
        for (std::size_t leaf = 0; leaf < c.leaves(); ++leaf)
            for (std::size_t s = 0; s < c.loci(); ++s)
                for (std::size_t g = 0; g < c.alphabet(); ++g) {
                    auto it = h.find({leaf, s, g});
                    EXPECT_EQ(c.row(leaf, s)[g], it == h.end() ? 0u : it->second);
                }
    };
    compare(c1, h1);
    compare(c2, h2);
    compare(ck, hk);
}

TEST(Moments, RecoversDirichletConcentration) {
    SplitMix64 rng(77);
    const std::size_t leaves = 10000;
    const std::vector<double> alpha{2, 2, 2, 2};
    std::vector<double> prop_sum(4, 0.0), theta(4);
    double sq = 0.0;
    for (std::size_t v = 0; v < leaves; ++v) {
        rng.dirichlet(alpha, theta);
        for (std::size_t g = 0; g < 4; ++g) {
            prop_sum[g] += theta[g];
            sq += theta[g] * theta[g];
        }
    }
    std::vector<double> xi(4);
    const bool clamped = solve_moments(prop_sum, sq, static_cast<std::uint32_t>(leaves), xi);
    EXPECT_FALSE(clamped);
    const double xi0 = std::accumulate(xi.begin(), xi.end(), 0.0);
    EXPECT_NEAR(xi0, 8.0, 0.4);
    for (double x : xi) EXPECT_NEAR(x / xi0, 0.25, 0.02);
}

TEST(Moments, MeanRatioIdentityWithoutClamping) {
    std::vector<double> xi(4);
    // two leaves with proportions (0.5,0.3,0.1,0.1) and (0.2,0.4,0.2,0.2)
    const std::vector<double> sum{0.7, 0.7, 0.3, 0.3};
    const double sq = (0.25 + 0.09 + 0.01 + 0.01) + (0.04 + 0.16 + 0.04 + 0.04);
    ASSERT_FALSE(solve_moments(sum, sq, 2, xi));
    const double xi0 = std::accumulate(xi.begin(), xi.end(), 0.0);
    for (std::size_t g = 0; g < 4; ++g) EXPECT_NEAR(xi[g] / xi0, sum[g] / 2.0, 1e-14);
    const double m = 0.35 * 0.35 * 2 + 0.15 * 0.15 * 2, s = sq / 2;
    EXPECT_NEAR(xi0, (1 - s) / (s - m), 1e-12);
}

TEST(Moments, DegenerateLocusClampsToFour) {
    const std::vector<TaxonRecord> recs{{"a", {"G", "S"}}, {"b", {"G", "S"}}};
    const auto t = build_tree({"genus", "species"}, recs);
    const std::vector<std::string> seqs{"AC", "AC"};
    const auto c = accumulate_stats(t, seqs, product1(2));
    const auto h = fit_moments(t, c, t.find(std::vector<std::string>{"G"}).value());
    ASSERT_EQ(h.clamped, (std::vector<std::uint8_t>{1, 1}));
    double xi0 = 0.0;
    for (std::size_t g = 0; g < 4; ++g) xi0 += h.xi[g];
    EXPECT_NEAR(xi0, 4.0, 1e-12);
    EXPECT_GT(h.xi[base::A], 3.9);  // centred on the observed base
    for (double x : h.xi) EXPECT_GT(x, 0.0);
}

TEST(Moments, BottomUpMatchesDirectFit) {
    SplitMix64 rng(5);
    const auto recs = testsupport::random_records(300, 3, 3, 21);
    const auto t = build_tree(testsupport::rank_names(3), recs);
    std::vector<std::string> seqs;
    for (std::size_t i = 0; i < recs.size(); ++i) seqs.push_back(random_dna(rng, 12, 0.05));
    const auto c = accumulate_stats(t, seqs, product1(12));
    const auto all = fit_all_moments(t, c);
    for (NodeId id = 0; id < t.size(); ++id) {
        if (t.is_leaf(id)) {
            EXPECT_TRUE(all[id].xi.empty());
            continue;
        }
        const auto direct = fit_moments(t, c, id);
        ASSERT_EQ(all[id].xi.size(), direct.xi.size());
        for (std::size_t i = 0; i < direct.xi.size(); ++i)
            EXPECT_NEAR(all[id].xi[i], direct.xi[i], 1e-9 * direct.xi[i]);
    }
}

TEST(Hyper, SourcesFollowParentOrAnchor) {
    const auto t = build_tree(testsupport::figure_ranks(), testsupport::figure_library());
    const auto cands = enumerate_candidates(t);
    const auto src = assign_hyperparameters(t, cands);
    for (std::size_t i = 0; i < cands.size(); ++i) {
        // independent walk: observed leaf -> one step up the label path
        if (cands[i].novel()) {
            EXPECT_EQ(src[i], cands[i].node);
        } else {
            auto path = t.path_labels(cands[i].node);
            path.pop_back();
            EXPECT_EQ(src[i], t.find(path).value());
        }
    }
    EXPECT_EQ(src.back(), t.root());
    EXPECT_EQ(src[0], src[1]);  // sibling genera G1, G2 share F1
}

TEST(Predictive, HandExample) {
    const KernelSpec spec = product1(1);
    const std::vector<double> xi{1, 1, 1, 1};
    const std::vector<std::uint32_t> n{2, 0, 0, 0};
    const auto q = encode_query(spec, "A");
    // (1 + 2) / (4 + 2): the mass M counts the two observed sequences
    EXPECT_NEAR(log_predictive(spec, q, n, xi), std::log(0.5), 1e-15);
    const std::vector<std::uint32_t> four{2, 1, 1, 0};
    EXPECT_NEAR(log_predictive(spec, q, four, xi), std::log(3.0 / 8.0), 1e-15);
    EXPECT_NEAR(log_predictive(spec, q, {}, xi), std::log(0.25), 1e-15);
    EXPECT_EQ(log_predictive(spec, encode_query(spec, "-"), n, xi), 0.0);
}

TEST(Predictive, KmerKernel) {
    const KernelSpec spec{KernelKind::Kmer, 0, 1};
    const std::vector<double> xi{1, 2, 3, 4};
    const std::vector<std::uint32_t> n{5, 0, 1, 0};
    const auto q = encode_query(spec, "AACG");  // A:2 C:1 G:1
    const double m = 10 + 6;
    const double expected = 2 * std::log(6 / m) + std::log(2 / m) + std::log(4 / m);
    EXPECT_NEAR(log_predictive(spec, q, n, xi), expected, 1e-13);
}

TEST(Predictive, MonteCarloIntegral) {
    SplitMix64 rng(2718);
    const KernelSpec spec = product1(3);
    const std::size_t draws = 1000000;
    for (int leaf = 0; leaf < 3; ++leaf) {
        std::vector<double> xi(12);
        std::vector<std::uint32_t> n(12);
        std::string query;
        for (std::size_t s = 0; s < 3; ++s) {
            std::size_t best = 0;
            for (std::size_t g = 0; g < 4; ++g) {
                xi[s * 4 + g] = 0.5 + 2.5 * rng.uniform();
                n[s * 4 + g] = static_cast<std::uint32_t>(rng.below(100));
                if (n[s * 4 + g] > n[s * 4 + best]) best = g;
            }
            n[s * 4 + best] += 100;
            query += "ACGT"[best];
        }
        const auto q = encode_query(spec, query);
        std::vector<double> post(4), theta(4);
        double acc = 0.0;
        for (std::size_t d = 0; d < draws; ++d) {
            double prod = 1.0;
            for (std::size_t s = 0; s < 3; ++s) {
                for (std::size_t g = 0; g < 4; ++g) post[g] = xi[s * 4 + g] + n[s * 4 + g];
                rng.dirichlet(post, theta);
                prod *= theta[q.symbols[s]];
            }
            acc += prod;
        }
        const double mc = acc / static_cast<double>(draws);
        const double exact = std::exp(log_predictive(spec, q, n, xi));
        EXPECT_LT(std::abs(mc - exact) / exact, 1e-3);
    }
}

TEST(SequenceModelTables, RowsNormalizeAndRebuildExactly) {
    SplitMix64 rng(15);
    const auto recs = testsupport::random_records(200, 3, 3, 4);
    const auto t = build_tree(testsupport::rank_names(3), recs);
    std::vector<std::string> seqs;
    for (std::size_t i = 0; i < recs.size(); ++i) seqs.push_back(random_dna(rng, 20, 0.1));
    for (auto kind : {KernelKind::Product1, KernelKind::Product2, KernelKind::Kmer}) {
        const KernelSpec spec{kind, kind == KernelKind::Kmer ? 0u : 20u, 3};
        const auto cands = enumerate_candidates(t);
        const auto m = SequenceModel::train(t, seqs, spec, cands);
        for (std::size_t c = 0; c < cands.size(); ++c) {
            const auto tab = m.table(c);
            const auto again = m.rebuild_table(c);
            ASSERT_TRUE(std::equal(tab.begin(), tab.end(), again.begin()));
            for (std::size_t s = 0; s < spec.loci(); ++s) {
                double sum = 0.0;
                for (std::size_t g = 0; g < spec.alphabet(); ++g) sum += std::exp(tab[s * m.stride() + g]);
                EXPECT_NEAR(sum, 1.0, 1e-12);
            }
            const auto lm = m.leaf_model(c);
            for (double x : lm.xi) EXPECT_GT(x, 0.0);
        }
        // the table path agrees with the closed form
        for (int i = 0; i < 5; ++i) {
            const auto q = m.encode(random_dna(rng, 20, 0.2));
            for (std::size_t c = 0; c < cands.size(); ++c) {
                const auto lm = m.leaf_model(c);
                EXPECT_NEAR(m.log_predictive(q, c), log_predictive(spec, q, lm.counts, lm.xi), 1e-10);
            }
        }
    }
}

TEST(SequenceModelTables, ExtraObservationRaisesPredictive) {
    const KernelSpec spec = product1(1);
    const std::vector<double> xi{0.3, 1.2, 0.7, 2.0};
    const auto q = encode_query(spec, "G");
    std::vector<std::uint32_t> n{3, 1, 0, 5};
    for (int step = 0; step < 10; ++step) {
        const double before = log_predictive(spec, q, n, xi);
        ++n[base::G];
        EXPECT_GT(log_predictive(spec, q, n, xi), before);
    }
}

TEST(SequenceModelTables, ScoreBlockMatchesSingleQueries) {
    SplitMix64 rng(6);
    const auto recs = testsupport::random_records(150, 2, 5, 8);
    const auto t = build_tree({"genus", "species"}, recs);
    std::vector<std::string> seqs;
    for (std::size_t i = 0; i < recs.size(); ++i) seqs.push_back(random_dna(rng, 37));
    const auto cands = enumerate_candidates(t);
    const auto m = SequenceModel::train(t, seqs, product1(37), cands);
    std::vector<QueryFeatures> qs;
    for (int i = 0; i < 9; ++i) qs.push_back(m.encode(random_dna(rng, 37, 0.1)));
    std::vector<double> out(qs.size() * cands.size());
    m.score_block(qs, out);
    for (std::size_t q = 0; q < qs.size(); ++q)
        for (std::size_t c = 0; c < cands.size(); ++c)
            EXPECT_NEAR(out[q * cands.size() + c], m.log_predictive(qs[q], c), 1e-11);
    EXPECT_THROW(m.encode("ACGT"), DataError);
}

TEST(SequenceModelTables, OrderOfTrainingSequencesIsIrrelevant) {
    SplitMix64 rng(19);
    auto recs = testsupport::random_records(80, 2, 3, 2);
    std::vector<std::string> seqs;
    for (std::size_t i = 0; i < recs.size(); ++i) seqs.push_back(random_dna(rng, 15));
    const auto t1 = build_tree({"g", "s"}, recs);
    const auto m1 = SequenceModel::train(t1, seqs, product1(15), enumerate_candidates(t1));
    std::reverse(recs.begin(), recs.end());
    std::reverse(seqs.begin(), seqs.end());
    const auto t2 = build_tree({"g", "s"}, recs);
    const auto m2 = SequenceModel::train(t2, seqs, product1(15), enumerate_candidates(t2));
    ASSERT_EQ(m1.candidates(), m2.candidates());
    for (std::size_t c = 0; c < m1.candidates(); ++c) {
        const auto a = m1.table(c), b = m2.table(c);
        for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
    }
}

#pragma once
// Shared fixtures for the test suites.

#include <gtest/gtest.h>

#include <cstdio>
#include <string>
#include <vector>

#include "nptax/rng.hpp"
#include "nptax/taxonomy.hpp"

namespace testsupport {

// Three-level library shaped like the butterfly/bee figure: two orders,
// three families, seven genera, 28 sequences; order O1 holds 12 sequences
// and its family F1 holds 8 split over two genera.
inline std::vector<nptax::TaxonRecord> figure_library() {
    struct Group {
        const char *order, *family, *genus;
        int count;
    };
    const Group groups[] = {
        {"O1", "F1", "G1", 5}, {"O1", "F1", "G2", 3}, {"O1", "F2", "G3", 2}, {"O1", "F2", "G4", 2},
        {"O2", "F3", "G5", 6}, {"O2", "F3", "G6", 6}, {"O2", "F3", "G7", 4},
    };
    std::vector<nptax::TaxonRecord> out;
    int id = 0;
    for (const auto& g : groups)
        for (int i = 0; i < g.count; ++i) out.push_back({"s" + std::to_string(++id), {g.order, g.family, g.genus}});
    return out;
}

inline std::vector<std::string> figure_ranks() { return {"Order", "Family", "Genus"}; }

// Random records with a small label alphabet per rank, so label collisions
// across branches are common.
inline std::vector<nptax::TaxonRecord> random_records(std::size_t n, std::size_t depth, std::size_t labels_per_rank,
                                                      std::uint64_t seed) {
    nptax::SplitMix64 rng(seed);
    std::vector<nptax::TaxonRecord> out;
    for (std::size_t i = 0; i < n; ++i) {
        nptax::TaxonRecord r;
        r.id = "r" + std::to_string(i);
        for (std::size_t l = 0; l < depth; ++l) r.labels.push_back("L" + std::to_string(rng.below(labels_per_rank)));
        out.push_back(std::move(r));
    }
    return out;
}

inline std::vector<std::string> rank_names(std::size_t depth) {
    std::vector<std::string> out;
    for (std::size_t l = 1; l <= depth; ++l) out.push_back("rank" + std::to_string(l));
    return out;
}

// Path key "a/b/c" of the first `len` labels.
inline std::string path_key(const std::vector<std::string>& labels, std::size_t len) {
    std::string s;
    for (std::size_t l = 0; l < len; ++l) {
        if (l) s += '/';
        s += labels[l];
    }
    return s;
}

// Random ACGT string; each position is a gap with probability gap_rate.
inline std::string random_dna(nptax::SplitMix64& rng, std::size_t n, double gap_rate = 0.0) {
    static const char bases[] = "ACGT";
    std::string s(n, 'A');
    for (auto& c : s) c = (gap_rate > 0 && rng.uniform() < gap_rate) ? '-' : bases[rng.below(4)];
    return s;
}

inline std::string temp_path(const std::string& name) {
    return std::string(::testing::TempDir()) + name;
}

}  // namespace testsupport

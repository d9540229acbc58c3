#pragma once
// Synthetic reference libraries drawn from the classifier's own generative
// model: nested Pitman-Yor urns for the labels and per-locus categorical
// sequences whose probabilities drift down the tree through Dirichlet draws.

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "nptax/error.hpp"
#include "nptax/library.hpp"
#include "nptax/rng.hpp"
#include "nptax/sequence.hpp"
#include "nptax/species_prior.hpp"

namespace nptax {

struct SynthConfig {
    std::vector<std::string> ranks;      // L rank names
    std::vector<LevelParams> levels;     // urn parameters per rank
    std::vector<double> concentration;   // per rank: Dirichlet total mass around the parent's probabilities
    std::array<double, 4> root_base{0.25, 0.25, 0.25, 0.25};
    std::size_t length = 100;            // aligned length p
    double gap_rate = 0.0;               // per-locus probability of emitting '-'
    std::size_t n = 100;
    std::uint64_t seed = 1;

    void check() const {
        if (ranks.empty()) throw DataError("synthetic library needs at least one rank");
        if (levels.size() != ranks.size() || concentration.size() != ranks.size())
            throw DataError("need one (alpha, sigma) pair and one concentration per rank");
        // alpha = -sigma is allowed here: after the first draw no new block opens
        for (const auto& p : levels)
            if (!(std::isfinite(p.alpha) && p.sigma >= 0.0 && p.sigma < 1.0 && p.alpha >= -p.sigma))
                throw NumericError("invalid urn parameters for simulation");
        for (double c : concentration)
            if (!(c > 0.0)) throw DataError("concentrations must be positive");
        if (n == 0) throw DataError("synthetic library needs n >= 1");
        if (length == 0) throw DataError("synthetic sequences need positive length");
        if (gap_rate < 0.0 || gap_rate >= 1.0) throw DataError("gap rate must lie in [0, 1)");
    }
};

struct SyntheticLibrary {
    Library library;
    std::vector<LevelParams> params;
    std::map<std::string, std::vector<double>> leaf_theta;  // leaf path -> p x 4 probabilities
};

inline SyntheticLibrary simulate_library(const SynthConfig& cfg) {
    cfg.check();
    SplitMix64 rng(cfg.seed);
    const std::size_t depth = cfg.ranks.size();
    const std::size_t p = cfg.length;

    struct SimNode {
        std::size_t level;
        std::string label;
        std::size_t parent;
        std::vector<std::size_t> children;
        std::uint64_t count = 0;
        std::vector<double> theta;  // p x 4
    };
    std::vector<SimNode> nodes;
    nodes.push_back({0, "root", 0, {}, 0, {}});
    nodes[0].theta.resize(p * 4);
    for (std::size_t s = 0; s < p; ++s)
        for (std::size_t g = 0; g < 4; ++g) nodes[0].theta[s * 4 + g] = cfg.root_base[g];
    std::vector<std::size_t> made(depth + 1, 0);

    SyntheticLibrary out;
    out.params = cfg.levels;
    out.library.ranks = cfg.ranks;
    out.library.records.reserve(cfg.n);

    std::vector<double> weights, alpha(4), draw(4);
    for (std::size_t i = 0; i < cfg.n; ++i) {
        std::size_t at = 0;
        std::vector<std::string> labels;
        for (std::size_t level = 1; level <= depth; ++level) {
            const auto& prm = cfg.levels[level - 1];
            const auto& kids = nodes[at].children;
            weights.clear();
            for (auto c : kids) weights.push_back(static_cast<double>(nodes[c].count) - prm.sigma);
            weights.push_back(kids.empty() ? 1.0 : prm.alpha + prm.sigma * static_cast<double>(kids.size()));
            const std::size_t pick = rng.categorical(weights);
            if (pick < kids.size()) {
                at = kids[pick];
            } else {
                char buf[64];
                std::snprintf(buf, sizeof buf, "%s_%05zu", cfg.ranks[level - 1].c_str(), ++made[level]);
                SimNode child{level, buf, at, {}, 0, std::vector<double>(p * 4)};
                const double conc = cfg.concentration[level - 1];
                for (std::size_t s = 0; s < p; ++s) {
                    for (std::size_t g = 0; g < 4; ++g) alpha[g] = conc * nodes[at].theta[s * 4 + g];
                    rng.dirichlet(alpha, draw);
                    for (std::size_t g = 0; g < 4; ++g) child.theta[s * 4 + g] = draw[g];
                }
                nodes.push_back(std::move(child));
                const std::size_t id = nodes.size() - 1;
                nodes[at].children.push_back(id);
                at = id;
            }
            labels.push_back(nodes[at].label);
        }
        for (std::size_t v = at;; v = nodes[v].parent) {
            ++nodes[v].count;
            if (v == 0) break;
        }
        std::string seq(p, '-');
        const auto& theta = nodes[at].theta;
        for (std::size_t s = 0; s < p; ++s) {
            if (cfg.gap_rate > 0.0 && rng.uniform() < cfg.gap_rate) continue;
            const std::size_t g = rng.categorical(std::span<const double>(theta).subspan(s * 4, 4));
            seq[s] = nucleotide_char(static_cast<std::uint8_t>(g));
        }
        char id[32];
        std::snprintf(id, sizeof id, "seq%07zu", i + 1);
        out.library.records.push_back({id, labels, std::move(seq)});
    }
    for (const auto& node : nodes) {
        if (node.level != depth) continue;
        std::string path;
        std::vector<std::string> parts;
        for (auto v = static_cast<std::size_t>(&node - nodes.data()); v != 0; v = nodes[v].parent)
            parts.push_back(nodes[v].label);
        for (auto it = parts.rbegin(); it != parts.rend(); ++it) {
            if (!path.empty()) path += '/';
            path += *it;
        }
        out.leaf_theta[path] = node.theta;
    }
    return out;
}

enum class SplitMode { Random, Stratified };

struct Split {
    std::vector<std::size_t> train;  // record indices, ascending
    std::vector<std::size_t> test;
};

// Random: a uniformly chosen round(fraction * n) records go to the test set.
// Stratified: each test draw picks a taxon at `rank_level` uniformly among
// those with records left, then one of its records uniformly. Taxa with
// fewer than `min_taxon_size` records are never drawn from, so the test set
// may fall short of the quota.
inline Split holdout_split(const Library& lib, SplitMode mode, double fraction, std::uint64_t seed, int rank_level = 1,
                           std::size_t min_taxon_size = 1) {
    if (!(fraction > 0.0 && fraction < 1.0)) throw DataError("hold-out fraction must lie in (0, 1)");
    const std::size_t n = lib.records.size();
    const auto quota = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
    SplitMix64 rng(seed);
    std::vector<char> in_test(n, 0);
    if (mode == SplitMode::Random) {
        std::vector<std::size_t> idx(n);
        for (std::size_t i = 0; i < n; ++i) idx[i] = i;
        shuffle(idx, rng);
        for (std::size_t i = 0; i < quota; ++i) in_test[idx[i]] = 1;
    } else {
        if (rank_level < 1 || static_cast<std::size_t>(rank_level) > lib.ranks.size())
            throw DataError("stratification rank out of range");
        std::map<std::vector<std::string>, std::vector<std::size_t>> groups;
        for (std::size_t i = 0; i < n; ++i) {
            const auto& l = lib.records[i].labels;
            groups[std::vector<std::string>(l.begin(), l.begin() + rank_level)].push_back(i);
        }
        std::vector<std::vector<std::size_t>> pools;
        for (auto& [key, members] : groups)
            if (members.size() >= min_taxon_size) pools.push_back(std::move(members));
        for (std::size_t t = 0; t < quota && !pools.empty(); ++t) {
            const std::size_t g = static_cast<std::size_t>(rng.below(pools.size()));
            auto& pool = pools[g];
            const std::size_t k = static_cast<std::size_t>(rng.below(pool.size()));
            in_test[pool[k]] = 1;
            pool[k] = pool.back();
            pool.pop_back();
            if (pool.empty()) {
                pools[g] = std::move(pools.back());
                pools.pop_back();
            }
        }
    }
    Split s;
    for (std::size_t i = 0; i < n; ++i) (in_test[i] ? s.test : s.train).push_back(i);
    return s;
}

}  // namespace nptax

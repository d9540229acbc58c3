#pragma once
// Pitman-Yor species-sampling prior over the taxonomic tree.
//
// Each observed node draws its children from an independent Pitman-Yor urn
// whose (alpha, sigma) depend only on the child rank. The pieces here are the
// urn itself, its exchangeable partition probability function (EPPF), the
// per-rank maximum likelihood fit of (alpha, sigma) from the product of
// EPPFs over all parents of that rank, and the resulting prior over every
// candidate leaf.

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "nptax/detail/nelder_mead.hpp"
#include "nptax/error.hpp"
#include "nptax/taxonomy.hpp"

namespace nptax {

struct LevelParams {
    double alpha = 1.0;
    double sigma = 0.0;

    bool valid() const noexcept {
        return std::isfinite(alpha) && sigma >= 0.0 && sigma < 1.0 && alpha > -sigma;
    }
    void check() const {
        if (!valid())
            throw NumericError("invalid Pitman-Yor parameters (alpha=" + std::to_string(alpha) +
                               ", sigma=" + std::to_string(sigma) + "): need sigma in [0,1) and alpha > -sigma");
    }
    friend bool operator==(const LevelParams&, const LevelParams&) = default;
};

// Block sizes n_1..n_k of a partition of n items.
struct PartitionCounts {
    std::vector<std::uint64_t> frequencies;

    std::uint64_t total() const noexcept {
        return std::accumulate(frequencies.begin(), frequencies.end(), std::uint64_t{0});
    }
    std::size_t blocks() const noexcept { return frequencies.size(); }
};

// Probabilities that the next draw joins block 1..k, followed by the
// probability that it opens a new block. A non-empty urn also accepts the
// boundary alpha = -sigma (alpha = sigma = 0 gives plain proportions).
inline std::vector<double> urn_probabilities(const PartitionCounts& counts, const LevelParams& params) {
    const bool boundary = counts.blocks() > 0 && std::isfinite(params.alpha) && params.sigma >= 0.0 &&
                          params.sigma < 1.0 && params.alpha == -params.sigma;
    if (!boundary) params.check();
    const double n = static_cast<double>(counts.total());
    const double k = static_cast<double>(counts.blocks());
    const double denom = params.alpha + n;
    std::vector<double> out;
    out.reserve(counts.blocks() + 1);
    if (counts.blocks() == 0) {
        out.push_back(1.0);  // an empty urn always opens a block
        return out;
    }
    for (auto nj : counts.frequencies) out.push_back((static_cast<double>(nj) - params.sigma) / denom);
    out.push_back((params.alpha + params.sigma * k) / denom);
    return out;
}

namespace detail {
// log of the rising factorial (x)_a = Gamma(x + a) / Gamma(x)
inline double log_pochhammer(double x, double a) { return std::lgamma(x + a) - std::lgamma(x); }

inline double log_new_block_product(double alpha, double sigma, std::uint64_t k) {
    double s = 0.0;
    for (std::uint64_t i = 1; i < k; ++i) s += std::log(alpha + static_cast<double>(i) * sigma);
    return s;
}
}  // namespace detail

// Log EPPF: log of prod_{i<k}(alpha + i sigma) / (alpha+1)_{n-1} * prod_j (1-sigma)_{n_j - 1}.
inline double log_eppf(std::span<const std::uint64_t> frequencies, const LevelParams& params) {
    params.check();
    std::uint64_t n = 0;
    for (auto f : frequencies) {
        if (f == 0) throw DataError("partition block of size zero");
        n += f;
    }
    if (n == 0) return 0.0;
    const double a = params.alpha, s = params.sigma;
    double out = detail::log_new_block_product(a, s, frequencies.size());
    out -= detail::log_pochhammer(a + 1.0, static_cast<double>(n - 1));
    for (auto f : frequencies)
        if (f > 1) out += detail::log_pochhammer(1.0 - s, static_cast<double>(f - 1));
    return out;
}

inline double log_eppf(const PartitionCounts& counts, const LevelParams& params) {
    return log_eppf(std::span<const std::uint64_t>(counts.frequencies), params);
}

// Sufficient statistics of the product-EPPF objective for one rank: the
// (K, N) pair of every parent and the size of every child, as histograms.
class LevelPartitions {
  public:
    LevelPartitions() = default;

    void add_parent(std::span<const std::uint64_t> child_sizes) {
        std::uint64_t n = 0;
        for (auto c : child_sizes) {
            n += c;
            if (c > 1) ++child_sizes_[c];
        }
        if (!child_sizes.empty()) ++parents_[{child_sizes.size(), n}];
    }

    static LevelPartitions from_tree(const TaxonomicTree& tree, int level) {
        if (level < 1 || level > tree.depth()) throw DataError("rank level out of range");
        LevelPartitions out;
        std::vector<std::uint64_t> sizes;
        for (NodeId parent : tree.level_nodes(level - 1)) {
            sizes.clear();
            for (NodeId c : tree.node(parent).children) sizes.push_back(tree.node(c).seq_count);
            out.add_parent(sizes);
        }
        return out;
    }

    bool empty() const noexcept { return parents_.empty(); }

    // Every parent holds a single sequence: the likelihood does not depend on
    // (alpha, sigma).
    bool degenerate() const noexcept {
        for (const auto& [kn, mult] : parents_)
            if (kn.second > 1) return false;
        return true;
    }

    double log_objective(const LevelParams& p) const {
        if (!p.valid()) return -std::numeric_limits<double>::infinity();
        double out = 0.0;
        for (const auto& [kn, mult] : parents_) {
            const auto [k, n] = kn;
            const double term = detail::log_new_block_product(p.alpha, p.sigma, k) -
                                detail::log_pochhammer(p.alpha + 1.0, static_cast<double>(n - 1));
            out += static_cast<double>(mult) * term;
        }
        const double base = std::lgamma(1.0 - p.sigma);
        for (const auto& [size, mult] : child_sizes_)
            out += static_cast<double>(mult) * (std::lgamma(1.0 - p.sigma + static_cast<double>(size - 1)) - base);
        return out;
    }

  private:
    std::map<std::pair<std::uint64_t, std::uint64_t>, std::uint64_t> parents_;  // (K, N) -> multiplicity
    std::map<std::uint64_t, std::uint64_t> child_sizes_;                        // size > 1 -> multiplicity
};

struct LevelFit {
    LevelParams params;
    double log_objective = 0.0;
    bool degenerate = false;  // fallback used: the likelihood is flat
};

inline constexpr LevelParams kDegenerateLevelParams{1e-2, 0.0};

// Maps an unconstrained point to admissible parameters:
// sigma = logistic(x), alpha = exp(y) - sigma + 1e-8.
inline LevelParams level_params_from_unconstrained(double x, double y) {
    const double sigma = 1.0 / (1.0 + std::exp(-x));
    return {std::exp(y) - sigma + 1e-8, sigma};
}

inline LevelFit fit_level_params(const LevelPartitions& parts) {
    if (parts.empty()) throw DataError("rank has no parent with children");
    if (parts.degenerate()) return {kDegenerateLevelParams, parts.log_objective(kDegenerateLevelParams), true};

    auto negloglik = [&](const std::vector<double>& v) {
        const LevelParams p = level_params_from_unconstrained(v[0], v[1]);
        if (!p.valid() || p.sigma >= 1.0) return std::numeric_limits<double>::infinity();
        return -parts.log_objective(p);
    };

    detail::SimplexResult best;
    for (double x0 : {-2.0, 0.0, 2.0}) {
        for (double y0 : {-1.0, 1.0}) {
            auto r = detail::nelder_mead(negloglik, {x0, y0});
            // restart from the optimum until the simplex stops improving
            for (int restart = 0; restart < 4; ++restart) {
                auto again = detail::nelder_mead(negloglik, r.x, {.initial_step = 0.1});
                const bool improved = again.value < r.value - 1e-12;
                if (again.value <= r.value) r = std::move(again);
                if (!improved) break;
            }
            if (r.value < best.value) best = std::move(r);
        }
    }
    const LevelParams p = level_params_from_unconstrained(best.x[0], best.x[1]);
    return {p, -best.value, false};
}

inline LevelFit fit_level_params(const TaxonomicTree& tree, int level) {
    return fit_level_params(LevelPartitions::from_tree(tree, level));
}

// Fits every rank 1..L.
inline std::vector<LevelFit> fit_all_levels(const TaxonomicTree& tree) {
    std::vector<LevelFit> out;
    for (int l = 1; l <= tree.depth(); ++l) out.push_back(fit_level_params(tree, l));
    return out;
}

// Log prior probability of each candidate leaf, aligned with `candidates`.
// params[l-1] holds the parameters of rank l.
inline std::vector<double> leaf_log_priors(const TaxonomicTree& tree, std::span<const LevelParams> params,
                                           std::span<const CandidateLeaf> candidates) {
    if (params.size() != static_cast<std::size_t>(tree.depth()))
        throw DataError("need one parameter pair per rank");
    for (const auto& p : params) p.check();

    // log prior of reaching each observed node, parents precede children in preorder
    std::vector<double> reach(tree.size(), 0.0);
    for (NodeId id = 1; id < tree.size(); ++id) {
        const auto& node = tree.node(id);
        const auto& parent = tree.node(node.parent);
        const auto& p = params[static_cast<std::size_t>(node.level - 1)];
        reach[id] = reach[node.parent] + std::log((static_cast<double>(node.seq_count) - p.sigma) /
                                                  (p.alpha + static_cast<double>(parent.seq_count)));
    }
    std::vector<double> out;
    out.reserve(candidates.size());
    for (const auto& c : candidates) {
        if (!c.novel()) {
            out.push_back(reach[c.node]);
            continue;
        }
        const auto& anchor = tree.node(c.node);
        const auto& p = params[static_cast<std::size_t>(anchor.level)];
        const double pnew = (p.alpha + p.sigma * static_cast<double>(anchor.child_count())) /
                            (p.alpha + static_cast<double>(anchor.seq_count));
        out.push_back(reach[c.node] + std::log(pnew));  // levels below the novelty contribute log 1
    }
    return out;
}

inline double leaf_prior(const TaxonomicTree& tree, std::span<const LevelParams> params, const CandidateLeaf& c) {
    const CandidateLeaf one[] = {c};
    return std::exp(leaf_log_priors(tree, params, one).front());
}

}  // namespace nptax

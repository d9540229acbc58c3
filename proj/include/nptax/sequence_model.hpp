#pragma once
// Multinomial sequence kernels with conjugate Dirichlet priors.
//
// Three kernels share one representation: a matrix of `loci` rows by
// `alphabet` columns per leaf.
//   Product1  aligned, one row per locus, alphabet {A,C,G,T}
//   Product2  aligned, one row per overlapping adjacent pair (p-1 rows), 16 dinucleotides
//   Kmer      unaligned, a single row over all 4^kappa kappa-mers
// Training counts n[v,s,g] are kept per observed leaf. Dirichlet
// hyperparameters xi are estimated by the method of moments at every internal
// node; an observed leaf takes the xi of its parent and a novel leaf the xi of
// its anchor. Scoring uses dense per-candidate tables of log predictive
// probabilities.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "nptax/error.hpp"
#include "nptax/sequence.hpp"
#include "nptax/taxonomy.hpp"

namespace nptax {

enum class KernelKind : std::uint8_t { Product1 = 0, Product2 = 1, Kmer = 2 };

inline std::string_view to_string(KernelKind k) {
    switch (k) {
        case KernelKind::Product1: return "product1";
        case KernelKind::Product2: return "product2";
        case KernelKind::Kmer: return "kmer";
    }
    return "?";
}

inline KernelKind parse_kernel(std::string_view name) {
    if (name == "product1") return KernelKind::Product1;
    if (name == "product2") return KernelKind::Product2;
    if (name == "kmer") return KernelKind::Kmer;
    throw DataError("unknown kernel '" + std::string(name) + "' (expected product1, product2 or kmer)");
}

struct KernelSpec {
    KernelKind kind = KernelKind::Product1;
    std::size_t length = 0;  // aligned length p; unused by Kmer
    int kappa = 5;           // Kmer only

    bool aligned() const noexcept { return kind != KernelKind::Kmer; }

    std::size_t loci() const noexcept {
        switch (kind) {
            case KernelKind::Product1: return length;
            case KernelKind::Product2: return length > 0 ? length - 1 : 0;
            case KernelKind::Kmer: return 1;
        }
        return 0;
    }
    std::size_t alphabet() const noexcept {
        switch (kind) {
            case KernelKind::Product1: return 4;
            case KernelKind::Product2: return 16;
            case KernelKind::Kmer: return std::size_t{1} << (2 * kappa);
        }
        return 0;
    }
    std::size_t cells() const noexcept { return loci() * alphabet(); }

    void check() const {
        if (kind == KernelKind::Kmer) {
            check_kappa(kappa);
        } else if (loci() == 0) {
            throw DataError("aligned kernel needs sequences of positive length" +
                            std::string(kind == KernelKind::Product2 ? " (at least 2 for product2)" : ""));
        }
    }
    friend bool operator==(const KernelSpec&, const KernelSpec&) = default;
};

// A sequence encoded for one kernel. Aligned kernels use `symbols` (one per
// locus, value alphabet() meaning missing); Kmer uses `kmers`.
struct QueryFeatures {
    std::vector<std::uint8_t> symbols;
    std::vector<std::pair<std::uint32_t, std::uint32_t>> kmers;
};

inline QueryFeatures encode_query(const KernelSpec& spec, std::string_view raw) {
    QueryFeatures q;
    switch (spec.kind) {
        case KernelKind::Product1: q.symbols = encode_aligned(raw, spec.length); break;
        case KernelKind::Product2: {
            const auto codes = encode_aligned(raw, spec.length);
            q.symbols.resize(spec.loci());
            for (std::size_t s = 0; s + 1 < codes.size(); ++s) {
                const bool gap = codes[s] == base::GAP || codes[s + 1] == base::GAP;
                q.symbols[s] = gap ? std::uint8_t{16} : static_cast<std::uint8_t>(4 * codes[s] + codes[s + 1]);
            }
            break;
        }
        case KernelKind::Kmer: q.kmers = kmer_counts(raw, spec.kappa).counts; break;
    }
    return q;
}

// Training counts, one loci x alphabet block per observed leaf (leaf order of
// the tree).
class LeafCounts {
  public:
    LeafCounts() = default;
    LeafCounts(std::size_t leaves, const KernelSpec& spec)
        : leaves_(leaves), loci_(spec.loci()), alphabet_(spec.alphabet()), data_(leaves * spec.cells(), 0) {}

    std::size_t leaves() const noexcept { return leaves_; }
    std::size_t loci() const noexcept { return loci_; }
    std::size_t alphabet() const noexcept { return alphabet_; }

    std::span<std::uint32_t> leaf(std::size_t i) { return {data_.data() + i * loci_ * alphabet_, loci_ * alphabet_}; }
    std::span<const std::uint32_t> leaf(std::size_t i) const {
        return {data_.data() + i * loci_ * alphabet_, loci_ * alphabet_};
    }
    std::span<const std::uint32_t> row(std::size_t i, std::size_t locus) const {
        return {data_.data() + (i * loci_ + locus) * alphabet_, alphabet_};
    }

    // Adds one encoded training sequence to leaf i.
    void add(std::size_t i, const QueryFeatures& q) {
        auto block = leaf(i);
        if (!q.kmers.empty() || q.symbols.empty()) {
            for (const auto& [k, c] : q.kmers) block[k] += c;
            return;
        }
        for (std::size_t s = 0; s < q.symbols.size(); ++s)
            if (q.symbols[s] < alphabet_) ++block[s * alphabet_ + q.symbols[s]];
    }

    std::vector<std::uint32_t>& raw() noexcept { return data_; }
    const std::vector<std::uint32_t>& raw() const noexcept { return data_; }

  private:
    std::size_t leaves_ = 0, loci_ = 0, alphabet_ = 0;
    std::vector<std::uint32_t> data_;
};

// Per-leaf sufficient statistics; sequences[i] belongs to record i of the tree.
inline LeafCounts accumulate_stats(const TaxonomicTree& tree, std::span<const std::string> sequences,
                                   const KernelSpec& spec) {
    spec.check();
    if (sequences.size() != tree.record_leaves().size())
        throw DataError("sequence count does not match the number of tree records");
    LeafCounts out(tree.leaves().size(), spec);
    for (std::size_t i = 0; i < sequences.size(); ++i)
        out.add(tree.leaf_index(tree.record_leaf(i)), encode_query(spec, sequences[i]));
    return out;
}

// Dirichlet hyperparameters for one node: xi[s * alphabet + g].
struct DirichletHyper {
    std::vector<double> xi;
    std::vector<std::uint8_t> clamped;  // per locus: 1 when the fallback rule was used
};

inline constexpr double kClampConcentration = 4.0;
inline constexpr double kMinConcentration = 1e-2;
inline constexpr double kMaxConcentration = 1e4;
inline constexpr double kMinMomentGap = 1e-9;

// Floor applied to the mean proportions when clamping; 1e-3 for nucleotides,
// scaled down for larger alphabets so the floors never dominate the mass.
inline double theta_floor(std::size_t alphabet) { return 1e-3 * 4.0 / static_cast<double>(alphabet); }

// Running sums over leaves for the moment equations at one node.
struct MomentSums {
    std::vector<double> proportion;  // sum over leaves of n[v,s,g] / n[v,s,.]
    std::vector<double> square;      // per locus: sum over leaves of sum_g (n/n.)^2
    std::vector<std::uint32_t> leaves;  // per locus: leaves with any observation there

    MomentSums() = default;
    MomentSums(std::size_t loci, std::size_t alphabet)
        : proportion(loci * alphabet, 0.0), square(loci, 0.0), leaves(loci, 0) {}

    void add_leaf(const LeafCounts& counts, std::size_t leaf) {
        const std::size_t alpha = counts.alphabet();
        for (std::size_t s = 0; s < counts.loci(); ++s) {
            const auto row = counts.row(leaf, s);
            std::uint64_t total = 0;
            for (auto c : row) total += c;
            if (total == 0) continue;
            const double inv = 1.0 / static_cast<double>(total);
            double sq = 0.0;
            for (std::size_t g = 0; g < alpha; ++g) {
                if (row[g] == 0) continue;
                const double p = static_cast<double>(row[g]) * inv;
                proportion[s * alpha + g] += p;
                sq += p * p;
            }
            square[s] += sq;
            ++leaves[s];
        }
    }

    void add(const MomentSums& other) {
        for (std::size_t i = 0; i < proportion.size(); ++i) proportion[i] += other.proportion[i];
        for (std::size_t s = 0; s < square.size(); ++s) {
            square[s] += other.square[s];
            leaves[s] += other.leaves[s];
        }
    }
};

// Method-of-moments solution for one locus.
//   theta_hat = mean leaf proportion, S_hat = mean sum of squared proportions,
//   m = sum theta_hat^2, xi0 = (1 - S_hat) / (S_hat - m), xi = xi0 * theta_hat.
// Falls back to xi0 = 4 centred on the floored theta_hat when S_hat - m is
// not positive or xi0 leaves [1e-2, 1e4]; zero mean proportions are floored
// the same way. Returns true when any fallback applied.
inline bool solve_moments(std::span<const double> proportion_sum, double square_sum, std::uint32_t leaves,
                          std::span<double> xi_out) {
    const std::size_t alpha = xi_out.size();
    std::vector<double> theta(alpha, 1.0 / static_cast<double>(alpha));
    double xi0 = kClampConcentration;
    bool clamped = true;
    if (leaves > 0) {
        const double inv = 1.0 / static_cast<double>(leaves);
        double m = 0.0;
        for (std::size_t g = 0; g < alpha; ++g) {
            theta[g] = proportion_sum[g] * inv;
            m += theta[g] * theta[g];
        }
        const double s_hat = square_sum * inv;
        const double gap = s_hat - m;
        if (gap > kMinMomentGap) {
            const double candidate = (1.0 - s_hat) / gap;
            if (candidate >= kMinConcentration && candidate <= kMaxConcentration) {
                xi0 = candidate;
                clamped = false;
            }
        }
    }
    const double floor = theta_floor(alpha);
    bool floored = false;
    for (double t : theta) floored = floored || t < floor;
    if (floored) {
        double total = 0.0;
        for (double& t : theta) total += (t = std::max(t, floor));
        for (double& t : theta) t /= total;
    }
    for (std::size_t g = 0; g < alpha; ++g) xi_out[g] = xi0 * theta[g];
    return clamped || floored;
}

inline DirichletHyper solve_moments(const MomentSums& sums, std::size_t loci, std::size_t alphabet) {
    DirichletHyper h;
    h.xi.assign(loci * alphabet, 0.0);
    h.clamped.assign(loci, 0);
    for (std::size_t s = 0; s < loci; ++s) {
        h.clamped[s] = solve_moments(std::span<const double>(sums.proportion).subspan(s * alphabet, alphabet),
                                     sums.square[s], sums.leaves[s],
                                     std::span<double>(h.xi).subspan(s * alphabet, alphabet))
                           ? 1
                           : 0;
    }
    return h;
}

// Hyperparameters estimated from the leaves below `node`.
inline DirichletHyper fit_moments(const TaxonomicTree& tree, const LeafCounts& counts, NodeId node) {
    const auto& n = tree.node(node);
    MomentSums sums(counts.loci(), counts.alphabet());
    for (std::uint32_t leaf = n.leaf_begin; leaf < n.leaf_end; ++leaf) sums.add_leaf(counts, leaf);
    return solve_moments(sums, counts.loci(), counts.alphabet());
}

// fit_moments for every internal node (levels 0..L-1), indexed by node id;
// leaf entries stay empty. Sums are built bottom-up so each leaf is read once.
inline std::vector<DirichletHyper> fit_all_moments(const TaxonomicTree& tree, const LeafCounts& counts) {
    std::vector<DirichletHyper> out(tree.size());
    const std::size_t loci = counts.loci(), alphabet = counts.alphabet();
    // open accumulators for the current root-to-node path, indexed by level
    std::vector<MomentSums> open(static_cast<std::size_t>(tree.depth()));
    std::vector<NodeId> open_node(static_cast<std::size_t>(tree.depth()), kNoNode);

    auto close_from = [&](int level) {
        for (int l = tree.depth() - 1; l >= level; --l) {
            auto idx = static_cast<std::size_t>(l);
            if (open_node[idx] == kNoNode) continue;
            out[open_node[idx]] = solve_moments(open[idx], loci, alphabet);
            if (l > 0) open[idx - 1].add(open[idx]);
            open_node[idx] = kNoNode;
        }
    };

    for (NodeId id = 0; id < tree.size(); ++id) {
        const auto& node = tree.node(id);
        if (node.level < tree.depth()) {
            close_from(node.level);
            open[static_cast<std::size_t>(node.level)] = MomentSums(loci, alphabet);
            open_node[static_cast<std::size_t>(node.level)] = id;
        } else {
            open[static_cast<std::size_t>(tree.depth() - 1)].add_leaf(counts, tree.leaf_index(id));
        }
    }
    close_from(0);
    return out;
}

// Node whose hyperparameters each candidate uses: the parent of an observed
// leaf, the anchor of a novel one.
inline std::vector<NodeId> assign_hyperparameters(const TaxonomicTree& tree, std::span<const CandidateLeaf> candidates) {
    std::vector<NodeId> out;
    out.reserve(candidates.size());
    for (const auto& c : candidates) out.push_back(c.novel() ? c.node : tree.node(c.node).parent);
    return out;
}

// Closed-form log predictive probability of a query straight from counts and
// hyperparameters. `counts` is empty for a novel leaf (prior predictive).
inline double log_predictive(const KernelSpec& spec, const QueryFeatures& q, std::span<const std::uint32_t> counts,
                             std::span<const double> xi) {
    const std::size_t alpha = spec.alphabet();
    auto cell = [&](std::size_t i) { return xi[i] + (counts.empty() ? 0.0 : static_cast<double>(counts[i])); };
    auto row_mass = [&](std::size_t s) {
        double m = 0.0;
        for (std::size_t g = 0; g < alpha; ++g) m += cell(s * alpha + g);
        return m;
    };
    double out = 0.0;
    if (spec.kind == KernelKind::Kmer) {
        const double mass = row_mass(0);
        for (const auto& [k, c] : q.kmers) out += static_cast<double>(c) * std::log(cell(k) / mass);
        return out;
    }
    for (std::size_t s = 0; s < q.symbols.size(); ++s) {
        if (q.symbols[s] >= alpha) continue;
        out += std::log(cell(s * alpha + q.symbols[s]) / row_mass(s));
    }
    return out;
}

// View of everything that determines one candidate's predictive distribution.
struct LeafModel {
    CandidateLeaf candidate;
    NodeId hyper_source = kNoNode;
    std::span<const std::uint32_t> counts;  // empty for novel leaves
    std::span<const double> xi;
};

// Trained sequence component: counts, hyperparameters and the dense
// log-predictive tables used for scoring.
class SequenceModel {
  public:
    SequenceModel() = default;

    // `hyper` is indexed by node id and must be filled for internal nodes.
    SequenceModel(const TaxonomicTree& tree, KernelSpec spec, LeafCounts counts, std::vector<DirichletHyper> hyper,
                  std::span<const CandidateLeaf> candidates)
        : spec_(spec), counts_(std::move(counts)), hyper_(std::move(hyper)) {
        spec_.check();
        if (counts_.leaves() != tree.leaves().size() || counts_.loci() != spec_.loci() ||
            counts_.alphabet() != spec_.alphabet())
            throw DataError("leaf counts do not match the tree and kernel");
        if (hyper_.size() != tree.size()) throw DataError("hyperparameters not indexed by node");
        for (NodeId id = 0; id < tree.size(); ++id) {
            if (tree.is_leaf(id)) continue;
            const auto& xi = hyper_[id].xi;
            if (xi.size() != spec_.cells()) throw DataError("hyperparameter block has the wrong size");
            for (double x : xi)
                if (!(x > 0.0) || !std::isfinite(x)) throw DataError("hyperparameters must be positive and finite");
        }
        candidates_.assign(candidates.begin(), candidates.end());
        sources_ = assign_hyperparameters(tree, candidates_);
        leaf_of_candidate_.resize(candidates_.size(), kNoNode);
        for (std::size_t c = 0; c < candidates_.size(); ++c)
            if (!candidates_[c].novel()) leaf_of_candidate_[c] = tree.leaf_index(candidates_[c].node);
        build_tables();
    }

    static SequenceModel train(const TaxonomicTree& tree, std::span<const std::string> sequences, KernelSpec spec,
                               std::span<const CandidateLeaf> candidates) {
        auto counts = accumulate_stats(tree, sequences, spec);
        auto hyper = fit_all_moments(tree, counts);
        return SequenceModel(tree, spec, std::move(counts), std::move(hyper), candidates);
    }

    const KernelSpec& spec() const noexcept { return spec_; }
    const LeafCounts& counts() const noexcept { return counts_; }
    const std::vector<DirichletHyper>& hyper() const noexcept { return hyper_; }
    std::size_t candidates() const noexcept { return candidates_.size(); }
    std::size_t stride() const noexcept { return stride_; }

    LeafModel leaf_model(std::size_t c) const {
        LeafModel m;
        m.candidate = candidates_.at(c);
        m.hyper_source = sources_[c];
        if (leaf_of_candidate_[c] != kNoNode) m.counts = counts_.leaf(leaf_of_candidate_[c]);
        m.xi = hyper_[sources_[c]].xi;
        return m;
    }

    QueryFeatures encode(std::string_view raw) const { return encode_query(spec_, raw); }

    // Table row for candidate c: log predictive per (locus, symbol). Aligned
    // kernels carry one extra zero slot per locus for missing symbols.
    std::span<const double> table(std::size_t c) const {
        return {tables_.data() + c * table_size_, table_size_};
    }

    // Rebuilds the table of candidate c from counts and hyperparameters.
    std::vector<double> rebuild_table(std::size_t c) const {
        std::vector<double> out(table_size_, 0.0);
        fill_table(c, out);
        return out;
    }

    // Query symbols converted to table offsets (aligned kernels).
    std::vector<std::uint32_t> offsets(const QueryFeatures& q) const {
        check_query(q);
        std::vector<std::uint32_t> off(q.symbols.size());
        for (std::size_t s = 0; s < q.symbols.size(); ++s)
            off[s] = static_cast<std::uint32_t>(s * stride_ + std::min<std::size_t>(q.symbols[s], spec_.alphabet()));
        return off;
    }

    void check_query(const QueryFeatures& q) const {
        if (spec_.aligned() && q.symbols.size() != spec_.loci())
            throw DataError("query encoding does not match the model kernel");
        if (!spec_.aligned() && !q.symbols.empty()) throw DataError("aligned query given to a kmer model");
    }

    double log_predictive(const QueryFeatures& q, std::size_t c) const {
        check_query(q);
        const auto tab = table(c);
        double sum = 0.0;
        if (spec_.aligned()) {
            for (std::size_t s = 0; s < q.symbols.size(); ++s)
                sum += tab[s * stride_ + std::min<std::size_t>(q.symbols[s], spec_.alphabet())];
        } else {
            for (const auto& [k, n] : q.kmers) sum += static_cast<double>(n) * tab[k];
        }
        return sum;
    }

    // Log predictive of a block of queries against every candidate:
    // out[q * candidates() + c]. Candidate-major traversal keeps each table
    // hot in cache while the block is scored.
    void score_block(std::span<const QueryFeatures> queries, std::span<double> out) const {
        const std::size_t nc = candidates_.size();
        if (out.size() != queries.size() * nc) throw DataError("score buffer has the wrong size");
        if (!spec_.aligned()) {
            for (std::size_t q = 0; q < queries.size(); ++q) {
                check_query(queries[q]);
                for (std::size_t c = 0; c < nc; ++c) out[q * nc + c] = log_predictive(queries[q], c);
            }
            return;
        }
        std::vector<std::vector<std::uint32_t>> offs;
        offs.reserve(queries.size());
        for (const auto& q : queries) offs.push_back(offsets(q));
        const std::size_t loci = spec_.loci();
        for (std::size_t c = 0; c < nc; ++c) {
            const double* tab = tables_.data() + c * table_size_;
            for (std::size_t q = 0; q < queries.size(); ++q) {
                const std::uint32_t* o = offs[q].data();
                double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
                std::size_t s = 0;
                for (; s + 4 <= loci; s += 4) {
                    s0 += tab[o[s]];
                    s1 += tab[o[s + 1]];
                    s2 += tab[o[s + 2]];
                    s3 += tab[o[s + 3]];
                }
                for (; s < loci; ++s) s0 += tab[o[s]];
                out[q * nc + c] = (s0 + s1) + (s2 + s3);
            }
        }
    }

  private:
    void build_tables() {
        stride_ = spec_.aligned() ? spec_.alphabet() + 1 : spec_.alphabet();
        table_size_ = spec_.loci() * stride_;
        tables_.assign(candidates_.size() * table_size_, 0.0);
        for (std::size_t c = 0; c < candidates_.size(); ++c)
            fill_table(c, std::span<double>(tables_.data() + c * table_size_, table_size_));
    }

    void fill_table(std::size_t c, std::span<double> out) const {
        const std::size_t alpha = spec_.alphabet();
        const auto& xi = hyper_[sources_[c]].xi;
        const std::uint32_t* n = leaf_of_candidate_[c] == kNoNode ? nullptr : counts_.leaf(leaf_of_candidate_[c]).data();
        for (std::size_t s = 0; s < spec_.loci(); ++s) {
            double mass = 0.0;
            for (std::size_t g = 0; g < alpha; ++g)
                mass += xi[s * alpha + g] + (n ? static_cast<double>(n[s * alpha + g]) : 0.0);
            for (std::size_t g = 0; g < alpha; ++g) {
                const double cell = xi[s * alpha + g] + (n ? static_cast<double>(n[s * alpha + g]) : 0.0);
                out[s * stride_ + g] = std::log(cell / mass);
            }
            if (stride_ > alpha) out[s * stride_ + alpha] = 0.0;
        }
    }

    KernelSpec spec_;
    LeafCounts counts_;
    std::vector<DirichletHyper> hyper_;
    std::vector<CandidateLeaf> candidates_;
    std::vector<NodeId> sources_;
    std::vector<NodeId> leaf_of_candidate_;
    std::size_t stride_ = 0, table_size_ = 0;
    std::vector<double> tables_;
};

}  // namespace nptax

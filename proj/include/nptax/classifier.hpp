#pragma once
// Leaf posteriors, upward aggregation, temperature and the top-down call.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "nptax/error.hpp"
#include "nptax/sequence_model.hpp"
#include "nptax/species_prior.hpp"
#include "nptax/taxonomy.hpp"

namespace nptax {

inline void check_rho(double rho) {
    if (!(rho > 0.0 && rho <= 1.0)) throw NumericError("temperature rho must lie in (0, 1], got " + std::to_string(rho));
}

// p_i^rho / sum_j p_j^rho for a normalized probability vector.
inline std::vector<double> temper(std::span<const double> probabilities, double rho) {
    check_rho(rho);
    std::vector<double> out(probabilities.begin(), probabilities.end());
    if (rho == 1.0) return out;
    double total = 0.0;
    for (double& p : out) total += (p = p > 0.0 ? std::pow(p, rho) : 0.0);
    if (total > 0.0)
        for (double& p : out) p /= total;
    return out;
}

// Normalized, tempered probabilities from unnormalized log weights:
// softmax(rho * w). Equal to temper(softmax(w), rho).
inline std::vector<double> tempered_softmax(std::span<const double> log_weights, double rho) {
    check_rho(rho);
    double top = -std::numeric_limits<double>::infinity();
    for (double w : log_weights) top = std::max(top, w);
    if (!std::isfinite(top)) throw NumericError("no candidate has positive probability");
    std::vector<double> out(log_weights.size());
    double total = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) total += (out[i] = std::exp(rho * (log_weights[i] - top)));
    for (double& p : out) p /= total;
    return out;
}

// Probability mass of every observed node plus, per internal node, the mass
// of its novel child.
struct NodeProbabilities {
    std::vector<double> node;   // indexed by node id; root is 1
    std::vector<double> novel;  // indexed by node id; mass of the novel leaf anchored there
};

inline NodeProbabilities aggregate(const TaxonomicTree& tree, std::span<const CandidateLeaf> candidates,
                                   std::span<const double> leaf_posterior) {
    if (leaf_posterior.size() != candidates.size()) throw DataError("posterior length differs from candidate count");
    NodeProbabilities out;
    out.node.assign(tree.size(), 0.0);
    out.novel.assign(tree.size(), 0.0);
    for (std::size_t c = 0; c < candidates.size(); ++c) {
        const auto& cand = candidates[c];
        if (cand.novel()) {
            out.novel[cand.node] = leaf_posterior[c];
        }
        out.node[cand.node] += leaf_posterior[c];
    }
    // children follow parents in preorder: accumulate in reverse
    for (NodeId id = static_cast<NodeId>(tree.size()); id-- > 1;) out.node[tree.node(id).parent] += out.node[id];
    return out;
}

struct RankCall {
    int level = 0;
    std::string label;
    double probability = 0.0;
    bool novel = false;
};

struct LeafScore {
    std::size_t candidate = 0;
    std::string label;
    double probability = 0.0;
};

struct Annotation {
    std::string query_id;
    std::vector<RankCall> ranks;      // levels 1..L
    std::vector<LeafScore> top_leaves;
    NodeId deepest_observed = 0;       // last observed node on the predicted branch
    int novel_from = 0;                // first novel level, 0 when fully observed

    bool novel() const noexcept { return novel_from > 0; }
};

// Top-down walk: from the root take, at each level, the child (observed or
// novel) with the largest aggregated mass; ties go to the smaller label with
// the novel child last. Below a novel choice the branch is forced.
inline Annotation annotate(const TaxonomicTree& tree, std::span<const CandidateLeaf> candidates,
                           std::span<const double> leaf_posterior, std::size_t top_k = 5) {
    const auto probs = aggregate(tree, candidates, leaf_posterior);
    Annotation a;
    NodeId at = TaxonomicTree::root();
    for (int level = 1; level <= tree.depth(); ++level) {
        if (a.novel_from > 0) {
            a.ranks.push_back({level, novel_label(tree, at, level), a.ranks.back().probability, true});
            continue;
        }
        NodeId best = kNoNode;
        double best_p = -1.0;
        for (NodeId c : tree.node(at).children) {  // label order: strict > keeps the first
            if (probs.node[c] > best_p) {
                best = c;
                best_p = probs.node[c];
            }
        }
        if (probs.novel[at] > best_p) {
            a.novel_from = level;
            a.ranks.push_back({level, novel_label(tree, at, level), probs.novel[at], true});
            continue;
        }
        at = best;
        a.ranks.push_back({level, tree.node(at).label, best_p, false});
    }
    a.deepest_observed = at;

    std::vector<std::size_t> order(candidates.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const std::size_t k = std::min(top_k, order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](std::size_t x, std::size_t y) {
                          if (leaf_posterior[x] != leaf_posterior[y]) return leaf_posterior[x] > leaf_posterior[y];
                          return x < y;
                      });
    for (std::size_t i = 0; i < k; ++i)
        a.top_leaves.push_back({order[i], candidate_label(tree, candidates[order[i]]), leaf_posterior[order[i]]});
    return a;
}

// A trained classifier: tree, per-rank prior parameters, sequence model and
// the stored temperature.
class Model {
  public:
    Model() = default;

    Model(TaxonomicTree tree, std::vector<LevelParams> params, SequenceModel seq, double rho)
        : tree_(std::move(tree)), params_(std::move(params)), rho_(rho) {
        check_rho(rho_);
        candidates_ = enumerate_candidates(tree_);
        log_prior_ = leaf_log_priors(tree_, params_, candidates_);
        seq_ = std::move(seq);
        if (seq_.candidates() != candidates_.size()) throw DataError("sequence model built for other candidates");
    }

    // Trains every component from records (labels) and their sequences.
    static Model train(std::vector<std::string> ranks, std::span<const TaxonRecord> records,
                       std::span<const std::string> sequences, KernelSpec spec, double rho = 1.0,
                       std::vector<LevelFit>* fits = nullptr) {
        auto tree = TaxonomicTree::build(std::move(ranks), records);
        auto level_fits = fit_all_levels(tree);
        std::vector<LevelParams> params;
        for (const auto& f : level_fits) params.push_back(f.params);
        if (fits) *fits = level_fits;
        const auto candidates = enumerate_candidates(tree);
        auto seq = SequenceModel::train(tree, sequences, spec, candidates);
        return Model(std::move(tree), std::move(params), std::move(seq), rho);
    }

    const TaxonomicTree& tree() const noexcept { return tree_; }
    const std::vector<LevelParams>& level_params() const noexcept { return params_; }
    const SequenceModel& sequence_model() const noexcept { return seq_; }
    const std::vector<CandidateLeaf>& candidates() const noexcept { return candidates_; }
    const std::vector<double>& log_prior() const noexcept { return log_prior_; }
    double rho() const noexcept { return rho_; }
    void set_rho(double rho) {
        check_rho(rho);
        rho_ = rho;
    }

    QueryFeatures encode(std::string_view raw) const { return seq_.encode(raw); }

    // Unnormalized log posterior (log prior + log predictive) per candidate.
    std::vector<double> log_joint(const QueryFeatures& q) const {
        std::vector<double> out(candidates_.size());
        seq_.score_block(std::span<const QueryFeatures>(&q, 1), out);
        for (std::size_t c = 0; c < out.size(); ++c) out[c] += log_prior_[c];
        return out;
    }

    // Block version: out[q * candidates + c].
    void log_joint_block(std::span<const QueryFeatures> queries, std::span<double> out) const {
        seq_.score_block(queries, out);
        const std::size_t nc = candidates_.size();
        for (std::size_t q = 0; q < queries.size(); ++q)
            for (std::size_t c = 0; c < nc; ++c) out[q * nc + c] += log_prior_[c];
    }

    std::vector<double> posterior(const QueryFeatures& q, double rho) const {
        return tempered_softmax(log_joint(q), rho);
    }

    Annotation annotate_log_joint(std::span<const double> log_joint, double rho, std::size_t top_k = 5) const {
        const auto post = tempered_softmax(log_joint, rho);
        return annotate(tree_, candidates_, post, top_k);
    }

  private:
    TaxonomicTree tree_;
    std::vector<LevelParams> params_;
    SequenceModel seq_;
    double rho_ = 1.0;
    std::vector<CandidateLeaf> candidates_;
    std::vector<double> log_prior_;
};

struct ClassifyOptions {
    double rho = 1.0;
    std::size_t top_k = 5;
    unsigned threads = 1;
    std::size_t block = 32;  // queries scored together against each candidate table
};

struct Query {
    std::string id;
    std::string sequence;
};

// Result of classifying one query.
struct Classification {
    std::vector<double> leaf_posterior;  // tempered, aligned with model.candidates()
    Annotation annotation;
};

// Classifies one encoded query.
inline Classification classify(const Model& model, const QueryFeatures& q, double rho, std::size_t top_k = 5) {
    Classification out;
    out.leaf_posterior = model.posterior(q, rho);
    out.annotation = annotate(model.tree(), model.candidates(), out.leaf_posterior, top_k);
    return out;
}

// Runs fn(begin, end) over contiguous chunks of [0, n) on up to `threads`
// workers. Chunks are disjoint, so writes indexed by item are race-free.
template <typename Fn>
void parallel_chunks(std::size_t n, unsigned threads, std::size_t grain, Fn&& fn) {
    if (threads <= 1 || n <= grain) {
        fn(std::size_t{0}, n);
        return;
    }
    const std::size_t workers = std::min<std::size_t>(threads, (n + grain - 1) / grain);
    const std::size_t per = (n + workers - 1) / workers;
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                const std::size_t b = w * per, e = std::min(n, b + per);
                if (b < e) fn(b, e);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

// Untempered log joints for many queries, out[q * candidates + c].
inline std::vector<double> log_joints(const Model& model, std::span<const QueryFeatures> queries, unsigned threads = 1,
                                      std::size_t block = 32) {
    const std::size_t nc = model.candidates().size();
    std::vector<double> out(queries.size() * nc);
    parallel_chunks(queries.size(), threads, block, [&](std::size_t b, std::size_t e) {
        for (std::size_t q = b; q < e; q += block) {
            const std::size_t end = std::min(e, q + block);
            model.log_joint_block(queries.subspan(q, end - q), std::span<double>(out).subspan(q * nc, (end - q) * nc));
        }
    });
    return out;
}

// Classifies a batch; output order equals input order and does not depend on
// the thread count.
inline std::vector<Annotation> classify_batch(const Model& model, std::span<const Query> queries,
                                              const ClassifyOptions& opt = {}) {
    check_rho(opt.rho);
    std::vector<QueryFeatures> encoded(queries.size());
    for (std::size_t i = 0; i < queries.size(); ++i) {
        try {
            encoded[i] = model.encode(queries[i].sequence);
        } catch (const DataError& e) {
            throw DataError("query '" + queries[i].id + "': " + e.what());
        }
    }
    const std::size_t nc = model.candidates().size();
    std::vector<Annotation> out(queries.size());
    parallel_chunks(queries.size(), opt.threads, opt.block, [&](std::size_t b, std::size_t e) {
        std::vector<double> buf;
        for (std::size_t q = b; q < e; q += opt.block) {
            const std::size_t end = std::min(e, q + opt.block);
            buf.resize((end - q) * nc);
            model.log_joint_block(std::span<const QueryFeatures>(encoded).subspan(q, end - q), buf);
            for (std::size_t i = q; i < end; ++i) {
                out[i] = model.annotate_log_joint(std::span<const double>(buf).subspan((i - q) * nc, nc), opt.rho,
                                                  opt.top_k);
                out[i].query_id = queries[i].id;
            }
        }
    });
    return out;
}

}  // namespace nptax

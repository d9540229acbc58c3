#pragma once
// Rooted taxonomic tree built from rank-labelled training records.
//
// Nodes are numbered in depth-first preorder with children sorted by label,
// so the root is node 0 and the leaves under any node occupy a contiguous
// range of the leaf list. A taxon is identified by its full root-to-node
// label path: equal labels under different parents are different nodes.

#include <algorithm>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "nptax/error.hpp"

namespace nptax {

using NodeId = std::uint32_t;
inline constexpr NodeId kNoNode = static_cast<NodeId>(-1);

struct TaxonRecord {
    std::string id;
    std::vector<std::string> labels;  // one per rank, highest rank first
};

struct TaxonNode {
    int level = 0;  // 0 for the root, 1..L below it
    std::string label;
    NodeId parent = kNoNode;
    std::vector<NodeId> children;  // sorted by label
    std::uint64_t seq_count = 0;   // N_n(v)
    std::uint32_t leaf_begin = 0;  // leaves below this node: [leaf_begin, leaf_end)
    std::uint32_t leaf_end = 0;

    std::size_t child_count() const noexcept { return children.size(); }  // K_n(v)
};

// Replaces blank labels with "unk_<parent path>" so every record carries a
// full path. A blank top rank becomes "unk_root".
inline std::vector<std::string> fill_missing_ranks(std::vector<std::string> labels) {
    std::string path;
    for (auto& label : labels) {
        const bool blank = label.find_first_not_of(" \t\r\n") == std::string::npos;
        if (blank) label = "unk_" + (path.empty() ? std::string("root") : path);
        if (!path.empty()) path += '/';
        path += label;
    }
    return labels;
}

class TaxonomicTree {
  public:
    TaxonomicTree() = default;

    // Builds the tree; record i is attached to record_leaf(i).
    static TaxonomicTree build(std::vector<std::string> ranks, std::span<const TaxonRecord> records) {
        if (ranks.size() < 2) throw DataError("taxonomy needs at least two ranks");
        const std::size_t depth = ranks.size();

        struct Trie {
            std::map<std::string, std::unique_ptr<Trie>, std::less<>> children;
            std::uint64_t count = 0;
            NodeId id = kNoNode;
        };
        Trie root;
        std::unordered_set<std::string> seen_ids;
        std::vector<Trie*> record_tips;
        record_tips.reserve(records.size());

        for (const auto& rec : records) {
            if (!seen_ids.insert(rec.id).second) throw DataError("duplicate sequence id '" + rec.id + "'");
            if (rec.labels.size() != depth)
                throw DataError("record '" + rec.id + "' has " + std::to_string(rec.labels.size()) +
                                " labels, expected " + std::to_string(depth));
            Trie* at = &root;
            ++at->count;
            for (const auto& label : rec.labels) {
                if (label.empty()) throw DataError("record '" + rec.id + "' has an empty rank label");
                auto& slot = at->children[label];
                if (!slot) slot = std::make_unique<Trie>();
                at = slot.get();
                ++at->count;
            }
            record_tips.push_back(at);
        }

        TaxonomicTree tree;
        tree.ranks_ = std::move(ranks);
        tree.by_level_.resize(depth + 1);

        // iterative preorder; std::map keeps children in label order
        struct Frame {
            Trie* trie;
            NodeId parent;
            int level;
            std::string label;
        };
        std::vector<Frame> stack;
        stack.push_back({&root, kNoNode, 0, "root"});
        while (!stack.empty()) {
            Frame f = std::move(stack.back());
            stack.pop_back();
            const auto id = static_cast<NodeId>(tree.nodes_.size());
            f.trie->id = id;
            TaxonNode node;
            node.level = f.level;
            node.label = std::move(f.label);
            node.parent = f.parent;
            node.seq_count = f.trie->count;
            tree.nodes_.push_back(std::move(node));
            tree.by_level_[static_cast<std::size_t>(f.level)].push_back(id);
            if (f.parent != kNoNode) tree.nodes_[f.parent].children.push_back(id);
            for (auto it = f.trie->children.rbegin(); it != f.trie->children.rend(); ++it)
                stack.push_back({it->second.get(), id, f.level + 1, it->first});
        }

        tree.leaf_index_.assign(tree.nodes_.size(), kNoNode);
        for (NodeId id = 0; id < tree.nodes_.size(); ++id) {
            if (tree.nodes_[id].level == static_cast<int>(depth)) {
                tree.leaf_index_[id] = static_cast<NodeId>(tree.leaves_.size());
                tree.leaves_.push_back(id);
            }
        }
        // leaf ranges, children before parents (reverse preorder)
        for (NodeId id = static_cast<NodeId>(tree.nodes_.size()); id-- > 0;) {
            auto& node = tree.nodes_[id];
            if (node.level == static_cast<int>(depth)) {
                node.leaf_begin = tree.leaf_index_[id];
                node.leaf_end = node.leaf_begin + 1;
            } else if (!node.children.empty()) {
                node.leaf_begin = tree.nodes_[node.children.front()].leaf_begin;
                node.leaf_end = tree.nodes_[node.children.back()].leaf_end;
            }
        }

        tree.record_leaf_.reserve(record_tips.size());
        for (const Trie* tip : record_tips) tree.record_leaf_.push_back(tip->id);
        return tree;
    }

    // Rebuilds a tree from a preorder node list (model loading). Validates the
    // structural invariants and throws DataError when they fail.
    static TaxonomicTree from_nodes(std::vector<std::string> ranks, std::vector<TaxonNode> nodes) {
        TaxonomicTree tree;
        const int depth = static_cast<int>(ranks.size());
        if (depth < 2) throw DataError("taxonomy needs at least two ranks");
        if (nodes.empty() || nodes[0].level != 0 || nodes[0].parent != kNoNode)
            throw DataError("node list does not start with the root");
        tree.ranks_ = std::move(ranks);
        tree.nodes_ = std::move(nodes);
        tree.by_level_.assign(static_cast<std::size_t>(depth) + 1, {});
        for (auto& n : tree.nodes_) n.children.clear();
        for (NodeId id = 0; id < tree.nodes_.size(); ++id) {
            const auto& n = tree.nodes_[id];
            if (n.level < 0 || n.level > depth) throw DataError("node level out of range");
            if (id != 0) {
                if (n.parent >= id || tree.nodes_[n.parent].level != n.level - 1)
                    throw DataError("node parent link violates preorder");
                auto& siblings = tree.nodes_[n.parent].children;
                if (!siblings.empty() && !(tree.nodes_[siblings.back()].label < n.label))
                    throw DataError("children are not in label order");
                siblings.push_back(id);
            }
            tree.by_level_[static_cast<std::size_t>(n.level)].push_back(id);
        }
        tree.leaf_index_.assign(tree.nodes_.size(), kNoNode);
        for (NodeId id = 0; id < tree.nodes_.size(); ++id) {
            if (tree.nodes_[id].level == depth) {
                tree.leaf_index_[id] = static_cast<NodeId>(tree.leaves_.size());
                tree.leaves_.push_back(id);
            }
        }
        for (NodeId id = static_cast<NodeId>(tree.nodes_.size()); id-- > 0;) {
            auto& node = tree.nodes_[id];
            if (node.level == depth) {
                if (node.seq_count == 0) throw DataError("leaf without sequences");
                node.leaf_begin = tree.leaf_index_[id];
                node.leaf_end = node.leaf_begin + 1;
                continue;
            }
            if (node.children.empty()) throw DataError("internal node without children");
            std::uint64_t sum = 0;
            for (NodeId c : node.children) sum += tree.nodes_[c].seq_count;
            if (sum != node.seq_count) throw DataError("node count differs from the sum of its children");
            node.leaf_begin = tree.nodes_[node.children.front()].leaf_begin;
            node.leaf_end = tree.nodes_[node.children.back()].leaf_end;
        }
        return tree;
    }

    int depth() const noexcept { return static_cast<int>(ranks_.size()); }
    const std::vector<std::string>& ranks() const noexcept { return ranks_; }
    const std::string& rank_name(int level) const { return ranks_.at(static_cast<std::size_t>(level - 1)); }

    std::size_t size() const noexcept { return nodes_.size(); }
    static constexpr NodeId root() noexcept { return 0; }
    const TaxonNode& node(NodeId id) const { return nodes_.at(id); }
    const std::vector<TaxonNode>& nodes() const noexcept { return nodes_; }

    std::uint64_t total() const noexcept { return nodes_.empty() ? 0 : nodes_[0].seq_count; }

    std::span<const NodeId> level_nodes(int level) const { return by_level_.at(static_cast<std::size_t>(level)); }
    std::span<const NodeId> leaves() const noexcept { return leaves_; }
    NodeId leaf_index(NodeId id) const { return leaf_index_.at(id); }
    bool is_leaf(NodeId id) const { return nodes_.at(id).level == depth(); }

    std::span<const NodeId> record_leaves() const noexcept { return record_leaf_; }
    NodeId record_leaf(std::size_t record) const { return record_leaf_.at(record); }

    std::optional<NodeId> child(NodeId parent, std::string_view label) const {
        const auto& kids = nodes_.at(parent).children;
        auto it = std::lower_bound(kids.begin(), kids.end(), label,
                                   [&](NodeId c, std::string_view l) { return nodes_[c].label < l; });
        if (it == kids.end() || nodes_[*it].label != label) return std::nullopt;
        return *it;
    }

    // Deepest node matching a prefix of `labels`; returns the node and the
    // number of labels matched (0 means only the root matched).
    std::pair<NodeId, int> deepest_match(std::span<const std::string> labels) const {
        NodeId at = root();
        int matched = 0;
        for (const auto& label : labels) {
            auto next = child(at, label);
            if (!next) break;
            at = *next;
            ++matched;
        }
        return {at, matched};
    }

    std::optional<NodeId> find(std::span<const std::string> labels) const {
        auto [node, matched] = deepest_match(labels);
        if (matched != static_cast<int>(labels.size())) return std::nullopt;
        return node;
    }

    NodeId ancestor_at(NodeId id, int level) const {
        while (nodes_.at(id).level > level) id = nodes_[id].parent;
        return id;
    }

    // Labels from level 1 down to the node.
    std::vector<std::string> path_labels(NodeId id) const {
        std::vector<std::string> out;
        while (id != root()) {
            out.push_back(nodes_.at(id).label);
            id = nodes_[id].parent;
        }
        std::reverse(out.begin(), out.end());
        return out;
    }

    std::string path_string(NodeId id, char sep = '/') const {
        std::string out;
        for (const auto& l : path_labels(id)) {
            if (!out.empty()) out += sep;
            out += l;
        }
        return out;
    }

  private:
    std::vector<std::string> ranks_;
    std::vector<TaxonNode> nodes_;
    std::vector<std::vector<NodeId>> by_level_;
    std::vector<NodeId> leaves_;
    std::vector<NodeId> leaf_index_;
    std::vector<NodeId> record_leaf_;
};

inline TaxonomicTree build_tree(std::vector<std::string> ranks, std::span<const TaxonRecord> records) {
    return TaxonomicTree::build(std::move(ranks), records);
}

// A leaf a query can be assigned to: an observed leaf, or the novel leaf
// created by a new branch under an observed anchor at level 0..L-1.
struct CandidateLeaf {
    enum class Kind : std::uint8_t { Observed, Novel };
    Kind kind = Kind::Observed;
    NodeId node = kNoNode;  // the leaf, or the novelty anchor

    bool novel() const noexcept { return kind == Kind::Novel; }
    friend bool operator==(const CandidateLeaf&, const CandidateLeaf&) = default;
};

// Depth-first over the tree: each node's children first, then the node's own
// novel candidate, so candidate k of a subtree stays contiguous.
inline std::vector<CandidateLeaf> enumerate_candidates(const TaxonomicTree& tree) {
    std::vector<CandidateLeaf> out;
    if (tree.size() == 0) return out;
    out.reserve(tree.size());
    struct Frame {
        NodeId id;
        std::size_t next_child;
    };
    std::vector<Frame> stack{{TaxonomicTree::root(), 0}};
    while (!stack.empty()) {
        auto& f = stack.back();
        const auto& node = tree.node(f.id);
        if (tree.is_leaf(f.id)) {
            out.push_back({CandidateLeaf::Kind::Observed, f.id});
            stack.pop_back();
        } else if (f.next_child < node.children.size()) {
            stack.push_back({node.children[f.next_child++], 0});
        } else {
            out.push_back({CandidateLeaf::Kind::Novel, f.id});
            stack.pop_back();
        }
    }
    return out;
}

// Display label of the rank-`level` entry on a branch that turns novel below
// `anchor`, e.g. "New Species in New Genus in Trypetini".
inline std::string novel_label(const TaxonomicTree& tree, NodeId anchor, int level) {
    const int first = tree.node(anchor).level + 1;
    std::string label = anchor == TaxonomicTree::root() ? std::string() : tree.node(anchor).label;
    for (int l = first; l <= level; ++l)
        label = label.empty() ? "New " + tree.rank_name(l) : "New " + tree.rank_name(l) + " in " + label;
    return label;
}

inline std::string candidate_label(const TaxonomicTree& tree, const CandidateLeaf& c) {
    return c.novel() ? novel_label(tree, c.node, tree.depth()) : tree.node(c.node).label;
}

}  // namespace nptax

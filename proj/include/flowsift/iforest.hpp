#pragma once

// Isolation forest: training on benign samples, leaf traversal, path length
// and anomaly score. Leaves carry stable ids so distillation can attach
// embeddings without touching the structure.

#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <vector>

#include "traffic.hpp"

namespace flowsift {

// Average unsuccessful-search path length in a BST of n nodes.
inline double c_factor(uint64_t n) {
    if (n <= 1) return 0.0;
    if (n == 2) return 1.0;
    constexpr double kEulerGamma = 0.5772156649015328606;
    double h = std::log(double(n - 1)) + kEulerGamma;
    return 2.0 * h - 2.0 * double(n - 1) / double(n);
}

struct ITreeNode {
    int split_feature = -1;  // -1 marks a leaf
    double split_threshold = 0.0;
    int left = -1;
    int right = -1;
    uint32_t n_samples = 0;  // leaf only: training samples isolated here
    int leaf_id = -1;        // leaf only: dense per-tree id

    bool is_leaf() const { return split_feature < 0; }
};

struct ITree {
    std::vector<ITreeNode> nodes;  // nodes[0] is the root
    int leaf_count = 0;
};

struct IForestModel {
    FeatureSchema schema;
    std::vector<ITree> trees;
    uint32_t psi = 0;
    uint64_t n_train = 0;
    uint64_t seed = 0;
};

namespace detail {

inline uint64_t derive_seed(uint64_t seed, uint64_t stream) {
    return mix64(seed ^ mix64(stream + 0x9e3779b97f4a7c15ULL));
}

struct TreeBuilder {
    const std::vector<FeatureVector>& data;
    std::mt19937_64 rng;
    ITree tree;
    int depth_cap;

    int build(std::vector<uint32_t>& idx, int lo, int hi, int depth) {
        int node_id = int(tree.nodes.size());
        tree.nodes.emplace_back();
        int n = hi - lo;
        if (n <= 1 || depth >= depth_cap) return make_leaf(node_id, n);

        // Candidate features: those with a non-degenerate range here.
        size_t m = data[idx[lo]].size();
        std::vector<int> candidates;
        std::vector<double> mins(m, std::numeric_limits<double>::infinity());
        std::vector<double> maxs(m, -std::numeric_limits<double>::infinity());
        for (int i = lo; i < hi; ++i)
            for (size_t f = 0; f < m; ++f) {
                mins[f] = std::min(mins[f], data[idx[i]][f]);
                maxs[f] = std::max(maxs[f], data[idx[i]][f]);
            }
        for (size_t f = 0; f < m; ++f)
            if (mins[f] < maxs[f] && std::nextafter(mins[f], maxs[f]) < maxs[f])
                candidates.push_back(int(f));
        if (candidates.empty()) return make_leaf(node_id, n);

        int feature = candidates[std::uniform_int_distribution<size_t>(
            0, candidates.size() - 1)(rng)];
        std::uniform_real_distribution<double> dist(mins[feature], maxs[feature]);
        double threshold = dist(rng);
        while (threshold <= mins[feature] || threshold >= maxs[feature]) threshold = dist(rng);

        // Partition: x[f] <= threshold goes left.
        int mid = lo;
        for (int i = lo; i < hi; ++i)
            if (data[idx[i]][feature] <= threshold) std::swap(idx[i], idx[mid++]);

        int left = build(idx, lo, mid, depth + 1);
        int right = build(idx, mid, hi, depth + 1);
        tree.nodes[node_id].split_feature = feature;
        tree.nodes[node_id].split_threshold = threshold;
        tree.nodes[node_id].left = left;
        tree.nodes[node_id].right = right;
        return node_id;
    }

    int make_leaf(int node_id, int n) {
        tree.nodes[node_id].n_samples = uint32_t(n);
        tree.nodes[node_id].leaf_id = tree.leaf_count++;
        return node_id;
    }
};

}  // namespace detail

inline IForestModel train_iforest(const std::vector<FeatureVector>& X,
                                  const FeatureSchema& schema, uint32_t t, uint32_t psi,
                                  uint64_t seed) {
    if (X.empty()) throw std::invalid_argument("train_iforest: empty dataset");
    if (psi < 2 || psi > X.size())
        throw std::invalid_argument("train_iforest: need 2 <= psi <= |X|");
    if (t < 1) throw std::invalid_argument("train_iforest: need t >= 1");
    for (const auto& x : X)
        if (x.size() != schema.size())
            throw std::invalid_argument("train_iforest: sample does not match schema");

    IForestModel model;
    model.schema = schema;
    model.psi = psi;
    model.n_train = X.size();
    model.seed = seed;
    int depth_cap = int(std::ceil(std::log2(double(psi))));

    model.trees.reserve(t);
    for (uint32_t ti = 0; ti < t; ++ti) {
        detail::TreeBuilder builder{X, std::mt19937_64(detail::derive_seed(seed, ti)),
                                    ITree{}, depth_cap};
        // Sub-sample of size psi without replacement.
        std::vector<uint32_t> idx(X.size());
        std::iota(idx.begin(), idx.end(), 0);
        for (uint32_t i = 0; i < psi; ++i) {
            std::uniform_int_distribution<size_t> d(i, idx.size() - 1);
            std::swap(idx[i], idx[d(builder.rng)]);
        }
        idx.resize(psi);
        builder.build(idx, 0, int(psi), 0);
        model.trees.push_back(std::move(builder.tree));
    }
    return model;
}

struct LeafHit {
    int leaf_id = 0;
    double path_length = 0.0;
    int node_index = 0;
};

inline LeafHit traverse_to_leaf(const ITree& tree, const FeatureVector& x) {
    int node = 0;
    int edges = 0;
    while (!tree.nodes[node].is_leaf()) {
        const auto& nd = tree.nodes[node];
        node = x[nd.split_feature] <= nd.split_threshold ? nd.left : nd.right;
        ++edges;
    }
    const auto& leaf = tree.nodes[node];
    return {leaf.leaf_id, double(edges) + c_factor(leaf.n_samples), node};
}

inline double mean_path_length(const IForestModel& model, const FeatureVector& x) {
    double total = 0.0;
    for (const auto& tree : model.trees) total += traverse_to_leaf(tree, x).path_length;
    return total / double(model.trees.size());
}

inline double anomaly_score(const IForestModel& model, const FeatureVector& x) {
    return std::exp2(-mean_path_length(model, x) / c_factor(model.psi));
}

inline int label_if(const IForestModel& model, const FeatureVector& x, double theta_if = 0.5) {
    if (theta_if <= 0.0 || theta_if >= 1.0)
        throw std::invalid_argument("label_if: theta must lie in (0,1)");
    return anomaly_score(model, x) >= theta_if ? 1 : 0;
}

// ---------------------------------------------------------------------------
// Leaf boxes: the (lo, hi] interval product a leaf covers, before clamping.

struct Interval {
    double lo = -std::numeric_limits<double>::infinity();
    double hi = std::numeric_limits<double>::infinity();
};

using LeafBox = std::vector<Interval>;

inline std::vector<LeafBox> leaf_boxes(const ITree& tree, size_t n_features) {
    std::vector<LeafBox> boxes(tree.leaf_count);
    LeafBox box(n_features);
    // Depth-first with explicit stack of (node, box).
    std::vector<std::pair<int, LeafBox>> stack{{0, box}};
    while (!stack.empty()) {
        auto [node_id, b] = std::move(stack.back());
        stack.pop_back();
        const auto& nd = tree.nodes[node_id];
        if (nd.is_leaf()) {
            boxes[nd.leaf_id] = std::move(b);
            continue;
        }
        LeafBox left = b, right = std::move(b);
        left[nd.split_feature].hi = std::min(left[nd.split_feature].hi, nd.split_threshold);
        right[nd.split_feature].lo = std::max(right[nd.split_feature].lo, nd.split_threshold);
        stack.emplace_back(nd.left, std::move(left));
        stack.emplace_back(nd.right, std::move(right));
    }
    return boxes;
}

}  // namespace flowsift

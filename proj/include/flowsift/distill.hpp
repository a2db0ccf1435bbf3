#pragma once

// Knowledge transfer from an autoencoder ensemble into isolation forest
// leaves: leaf mapping, box augmentation, expected reconstruction errors,
// leaf labels, and distilled / combined inference.

#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <stdexcept>
#include <vector>

#include "autoencoder.hpp"
#include "iforest.hpp"

namespace flowsift {

struct LeafEmbedding {
    std::vector<double> mean_res;  // expected RE per teacher member
    std::vector<int> indicator_l;  // 1{mean_res_u > T_u}
    int label = 1;                 // unmatched space defaults to suspicious
    uint32_t mapped_count = 0;
    uint32_t augmented_count = 0;
};

enum class Combiner { product, distilled_only, iforest_only };

inline const char* to_string(Combiner c) {
    switch (c) {
        case Combiner::product: return "product";
        case Combiner::distilled_only: return "distilled_only";
        default: return "iforest_only";
    }
}

struct DistilledForest {
    IForestModel forest;
    std::vector<std::vector<LeafEmbedding>> embeddings;  // per tree, by leaf_id
    Combiner combiner = Combiner::product;
    double theta_if = 0.5;

    bool embedded() const { return !embeddings.empty(); }
};

// Per tree, the training-sample indices reaching each leaf. The lists of one
// tree partition X_train.
inline std::vector<std::vector<std::vector<uint32_t>>> map_training_to_leaves(
    const IForestModel& model, const std::vector<FeatureVector>& X_train) {
    std::vector<std::vector<std::vector<uint32_t>>> mapping(model.trees.size());
    for (size_t ti = 0; ti < model.trees.size(); ++ti) {
        mapping[ti].resize(model.trees[ti].leaf_count);
        for (uint32_t i = 0; i < X_train.size(); ++i)
            mapping[ti][traverse_to_leaf(model.trees[ti], X_train[i]).leaf_id].push_back(i);
    }
    return mapping;
}

struct AugmentResult {
    std::vector<FeatureVector> points;
    uint32_t shortfall = 0;  // k minus what the box could supply
};

namespace detail {

struct AxisRange {
    bool integer = false;
    int64_t ilo = 0, ihi = -1;  // integer axes: inclusive range
    double lo = 0, hi = 0;      // continuous axes
};

inline AxisRange clamp_axis(const Interval& iv, const FeatureSpec& spec, double domain_max) {
    AxisRange a;
    a.integer = spec.integer;
    if (spec.integer) {
        double lo = std::max(iv.lo, -1.0);
        double hi = std::min(iv.hi, domain_max);
        a.ilo = int64_t(std::floor(lo)) + 1;
        a.ihi = int64_t(std::floor(hi));
    } else {
        a.lo = std::max(iv.lo, 0.0);
        a.hi = std::min(iv.hi, domain_max);
        if (a.hi < a.lo) a.hi = a.lo;  // zero-volume box: a point range
    }
    return a;
}

}  // namespace detail

// Uniform sampling inside a leaf box. All-integer boxes are sampled without
// replacement, truncating k to the box cardinality; boxes with a continuous
// axis are sampled independently per axis.
inline AugmentResult augment_leaf(const LeafBox& box, const FeatureSchema& schema, uint32_t k,
                                  std::mt19937_64& rng) {
    AugmentResult res;
    if (k == 0) return res;
    size_t m = schema.size();
    std::vector<detail::AxisRange> axes(m);
    bool all_integer = true;
    double cardinality = 1.0;
    for (size_t f = 0; f < m; ++f) {
        axes[f] = detail::clamp_axis(box[f], schema.at(f), schema.domain_max(f));
        if (axes[f].integer) {
            if (axes[f].ihi < axes[f].ilo) {
                res.shortfall = k;  // box holds no integer point on this axis
                return res;
            }
            cardinality *= double(axes[f].ihi - axes[f].ilo + 1);
        } else {
            all_integer = false;
        }
    }

    auto sample_point = [&]() {
        FeatureVector x(m);
        for (size_t f = 0; f < m; ++f) {
            if (axes[f].integer) {
                std::uniform_int_distribution<int64_t> d(axes[f].ilo, axes[f].ihi);
                x[f] = double(d(rng));
            } else {
                std::uniform_real_distribution<double> d(axes[f].lo, axes[f].hi);
                x[f] = axes[f].lo == axes[f].hi ? axes[f].lo : d(rng);
            }
        }
        return x;
    };

    if (!all_integer) {
        for (uint32_t i = 0; i < k; ++i) res.points.push_back(sample_point());
        return res;
    }

    if (cardinality <= double(k)) {
        // Exhaust the box: every integer tuple, mixed-radix enumeration.
        uint64_t total = uint64_t(cardinality);
        for (uint64_t code = 0; code < total; ++code) {
            FeatureVector x(m);
            uint64_t rem = code;
            for (size_t f = 0; f < m; ++f) {
                uint64_t width = uint64_t(axes[f].ihi - axes[f].ilo + 1);
                x[f] = double(axes[f].ilo + int64_t(rem % width));
                rem /= width;
            }
            res.points.push_back(std::move(x));
        }
        res.shortfall = k - uint32_t(total);
        return res;
    }

    std::set<std::vector<int64_t>> seen;
    while (res.points.size() < k) {
        FeatureVector x = sample_point();
        std::vector<int64_t> key(m);
        for (size_t f = 0; f < m; ++f) key[f] = int64_t(x[f]);
        if (seen.insert(std::move(key)).second) res.points.push_back(std::move(x));
    }
    return res;
}

// Embeds expected reconstruction errors and labels into every leaf. The tree
// structure (and therefore anomaly scores) is untouched.
inline DistilledForest embed_leaves(const IForestModel& model, const Ensemble& teacher,
                                    const std::vector<FeatureVector>& X_train, uint32_t k,
                                    uint64_t seed, Combiner combiner = Combiner::product,
                                    double theta_if = 0.5) {
    teacher.validate();
    for (const auto& member : teacher.members)
        if (member.input_size() != model.schema.size())
            throw std::invalid_argument("teacher and forest schemas disagree");

    DistilledForest df;
    df.forest = model;
    df.combiner = combiner;
    df.theta_if = theta_if;
    auto mapping = map_training_to_leaves(model, X_train);
    size_t r = teacher.size();

    df.embeddings.resize(model.trees.size());
    for (size_t ti = 0; ti < model.trees.size(); ++ti) {
        auto boxes = leaf_boxes(model.trees[ti], model.schema.size());
        df.embeddings[ti].resize(model.trees[ti].leaf_count);
        for (int leaf = 0; leaf < model.trees[ti].leaf_count; ++leaf) {
            LeafEmbedding& emb = df.embeddings[ti][leaf];
            std::mt19937_64 rng(detail::derive_seed(seed, (uint64_t(ti) << 24) | uint64_t(leaf)));
            AugmentResult aug = augment_leaf(boxes[leaf], model.schema, k, rng);
            const auto& mapped = mapping[ti][leaf];
            emb.mapped_count = uint32_t(mapped.size());
            emb.augmented_count = uint32_t(aug.points.size());

            uint64_t total = mapped.size() + aug.points.size();
            if (total == 0) {
                emb.mean_res.assign(r, 0.0);
                emb.indicator_l.assign(r, 1);
                emb.label = 1;
                continue;
            }
            emb.mean_res.assign(r, 0.0);
            for (size_t u = 0; u < r; ++u) {
                double sum = 0.0;
                for (uint32_t i : mapped)
                    sum += reconstruction_error(teacher.members[u], X_train[i]);
                for (const auto& x : aug.points)
                    sum += reconstruction_error(teacher.members[u], x);
                emb.mean_res[u] = sum / double(total);
            }
            emb.indicator_l.resize(r);
            for (size_t u = 0; u < r; ++u)
                emb.indicator_l[u] =
                    emb.mean_res[u] > teacher.members[u].rmse_threshold ? 1 : 0;
            emb.label = weighted_indicator_label(emb.indicator_l, teacher.weights);
        }
    }
    return df;
}

// Majority vote over the t leaf labels; a tie is malicious.
inline int predict_distilled(const DistilledForest& df, const FeatureVector& x) {
    if (!df.embedded()) throw std::logic_error("predict_distilled: forest is not embedded");
    size_t ones = 0;
    for (size_t ti = 0; ti < df.forest.trees.size(); ++ti) {
        int leaf = traverse_to_leaf(df.forest.trees[ti], x).leaf_id;
        ones += df.embeddings[ti][leaf].label;
    }
    return 2 * ones >= df.forest.trees.size() ? 1 : 0;
}

inline double vote_fraction(const DistilledForest& df, const FeatureVector& x) {
    if (!df.embedded()) throw std::logic_error("vote_fraction: forest is not embedded");
    size_t ones = 0;
    for (size_t ti = 0; ti < df.forest.trees.size(); ++ti) {
        int leaf = traverse_to_leaf(df.forest.trees[ti], x).leaf_id;
        ones += df.embeddings[ti][leaf].label;
    }
    return double(ones) / double(df.forest.trees.size());
}

inline int predict_combined(const DistilledForest& df, const FeatureVector& x) {
    switch (df.combiner) {
        case Combiner::product:
            return label_if(df.forest, x, df.theta_if) * predict_distilled(df, x);
        case Combiner::distilled_only:
            return predict_distilled(df, x);
        default:
            return label_if(df.forest, x, df.theta_if);
    }
}

// Continuous score for ranking (PR curves); mirrors the combiner.
inline double combined_score(const DistilledForest& df, const FeatureVector& x) {
    switch (df.combiner) {
        case Combiner::product:
            return vote_fraction(df, x) * anomaly_score(df.forest, x);
        case Combiner::distilled_only:
            return vote_fraction(df, x);
        default:
            return anomaly_score(df.forest, x);
    }
}

// Fraction of X_eval where the distilled majority vote agrees with the
// teacher's label.
inline double distillation_consistency(const DistilledForest& df, const Ensemble& teacher,
                                       const std::vector<FeatureVector>& X_eval) {
    if (X_eval.empty()) throw std::invalid_argument("distillation_consistency: empty set");
    size_t agree = 0;
    for (const auto& x : X_eval)
        if (predict_distilled(df, x) == ensemble_label(teacher, x).label) ++agree;
    return double(agree) / double(X_eval.size());
}

}  // namespace flowsift

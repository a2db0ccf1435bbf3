#pragma once

// Compiles a distilled forest into labeled hypercubes and whitelist range
// rules: branch-set extraction, integer shifting, cartesian grid, labeling,
// adjacent-cube merging and rule matching.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "distill.hpp"

namespace flowsift {

using BranchSets = std::vector<std::vector<double>>;
using IntBranchSets = std::vector<std::vector<int64_t>>;

// Union of split thresholds per feature over all trees, sorted, deduplicated.
inline BranchSets extract_branch_sets(const IForestModel& model) {
    BranchSets sets(model.schema.size());
    for (const auto& tree : model.trees)
        for (const auto& node : tree.nodes)
            if (!node.is_leaf()) sets[node.split_feature].push_back(node.split_threshold);
    for (auto& s : sets) {
        std::sort(s.begin(), s.end());
        s.erase(std::unique(s.begin(), s.end()), s.end());
    }
    return sets;
}

// Floor every threshold to an integer. Valid only for integer features; a
// non-integer feature must be explicitly opted in (accepting the shift as an
// approximation), otherwise the call refuses.
inline IntBranchSets shift_integer_boundaries(const BranchSets& sets, const FeatureSchema& schema,
                                              const std::set<std::string>& non_integer_opt_in = {}) {
    IntBranchSets out(sets.size());
    for (size_t f = 0; f < sets.size(); ++f) {
        const auto& spec = schema.at(f);
        if (!spec.integer && !non_integer_opt_in.count(spec.name))
            throw std::invalid_argument("shift_integer_boundaries: feature " + spec.name +
                                        " is not integral (pass an explicit opt-in to floor it)");
        for (double b : sets[f]) out[f].push_back(int64_t(std::floor(b)));
        std::sort(out[f].begin(), out[f].end());
        out[f].erase(std::unique(out[f].begin(), out[f].end()), out[f].end());
    }
    return out;
}

// The cartesian grid induced by per-feature boundaries. Cell i on feature f
// covers the half-open integer interval (edges[f][i], edges[f][i+1]].
struct HypercubeGrid {
    FeatureSchema schema;
    std::vector<std::vector<int64_t>> edges;  // per feature: -1, b_1..b_n, domain_max
    std::vector<uint8_t> labels;              // by mixed-radix cube index; empty until labeled

    size_t cube_count() const {
        size_t n = 1;
        for (const auto& e : edges) n *= e.size() - 1;
        return n;
    }
    size_t axis_cells(size_t f) const { return edges[f].size() - 1; }

    std::vector<size_t> decode(size_t cube_index) const {
        std::vector<size_t> cell(edges.size());
        for (size_t f = 0; f < edges.size(); ++f) {
            cell[f] = cube_index % axis_cells(f);
            cube_index /= axis_cells(f);
        }
        return cell;
    }
    size_t encode(const std::vector<size_t>& cell) const {
        size_t idx = 0;
        for (size_t f = edges.size(); f-- > 0;) idx = idx * axis_cells(f) + cell[f];
        return idx;
    }
    // Cell holding integer point x (x must lie inside the domain).
    size_t locate(const FeatureVector& x) const {
        std::vector<size_t> cell(edges.size());
        for (size_t f = 0; f < edges.size(); ++f) {
            const auto& e = edges[f];
            // first i with x <= edges[i+1], i.e. x in (edges[i], edges[i+1]]
            auto it = std::lower_bound(e.begin() + 1, e.end(), int64_t(x[f]));
            cell[f] = size_t(it - e.begin()) - 1;
        }
        return encode(cell);
    }
    FeatureVector representative(size_t cube_index) const {
        auto cell = decode(cube_index);
        FeatureVector x(edges.size());
        for (size_t f = 0; f < edges.size(); ++f) x[f] = double(edges[f][cell[f] + 1]);
        return x;
    }
};

// Builds the grid, clamping infinities to the schema's bit-width domain and
// dropping boundaries outside it. Aborts when the cube count exceeds the cap.
inline HypercubeGrid build_hypercube_grid(const IntBranchSets& sets, const FeatureSchema& schema,
                                          size_t cube_cap = 10'000'000) {
    HypercubeGrid grid;
    grid.schema = schema;
    grid.edges.resize(sets.size());
    double count = 1.0;
    for (size_t f = 0; f < sets.size(); ++f) {
        int64_t domain_max = int64_t(schema.domain_max(f));
        auto& e = grid.edges[f];
        e.push_back(-1);
        for (int64_t b : sets[f])
            if (b >= 0 && b < domain_max) e.push_back(b);
        e.push_back(domain_max);
        count *= double(e.size() - 1);
    }
    if (count > double(cube_cap))
        throw std::runtime_error(
            "hypercube grid would hold " + std::to_string(uint64_t(count)) +
            " cubes (cap " + std::to_string(cube_cap) +
            "); reduce the number of trees, tree depth, or feature count");
    return grid;
}

// Labels every cube with the combined predictor evaluated at the cube's
// representative point (per-axis upper bound). Label consistency inside a
// cube is what makes the choice of point immaterial.
inline void label_hypercubes(HypercubeGrid& grid, const DistilledForest& df) {
    size_t n = grid.cube_count();
    grid.labels.resize(n);
    for (size_t i = 0; i < n; ++i)
        grid.labels[i] = uint8_t(predict_combined(df, grid.representative(i)));
}

struct LabeledCube {
    std::vector<std::pair<int64_t, int64_t>> bounds;  // per feature (lo, hi], lo exclusive
    uint8_t label = 0;
};

inline std::vector<LabeledCube> grid_to_cubes(const HypercubeGrid& grid) {
    if (grid.labels.size() != grid.cube_count())
        throw std::logic_error("grid_to_cubes: grid is not labeled");
    std::vector<LabeledCube> cubes(grid.cube_count());
    for (size_t i = 0; i < cubes.size(); ++i) {
        auto cell = grid.decode(i);
        cubes[i].bounds.resize(grid.edges.size());
        for (size_t f = 0; f < grid.edges.size(); ++f)
            cubes[i].bounds[f] = {grid.edges[f][cell[f]], grid.edges[f][cell[f] + 1]};
        cubes[i].label = grid.labels[i];
    }
    return cubes;
}

// Greedy axis-by-axis coalescing to a fixpoint: cubes merge when labels match,
// bounds agree on every other axis and the intervals abut on the merge axis.
inline std::vector<LabeledCube> merge_adjacent(std::vector<LabeledCube> cubes) {
    if (cubes.empty()) return cubes;
    size_t m = cubes[0].bounds.size();
    bool changed = true;
    while (changed) {
        changed = false;
        for (size_t axis = 0; axis < m; ++axis) {
            auto key_less = [axis](const LabeledCube& a, const LabeledCube& b) {
                if (a.label != b.label) return a.label < b.label;
                for (size_t f = 0; f < a.bounds.size(); ++f) {
                    if (f == axis) continue;
                    if (a.bounds[f] != b.bounds[f]) return a.bounds[f] < b.bounds[f];
                }
                return a.bounds[axis] < b.bounds[axis];
            };
            auto same_group = [axis](const LabeledCube& a, const LabeledCube& b) {
                if (a.label != b.label) return false;
                for (size_t f = 0; f < a.bounds.size(); ++f)
                    if (f != axis && a.bounds[f] != b.bounds[f]) return false;
                return true;
            };
            std::sort(cubes.begin(), cubes.end(), key_less);
            std::vector<LabeledCube> merged;
            merged.reserve(cubes.size());
            for (auto& cube : cubes) {
                if (!merged.empty() && same_group(merged.back(), cube) &&
                    merged.back().bounds[axis].second == cube.bounds[axis].first) {
                    merged.back().bounds[axis].second = cube.bounds[axis].second;
                    changed = true;
                } else {
                    merged.push_back(std::move(cube));
                }
            }
            cubes = std::move(merged);
        }
    }
    return cubes;
}

struct WhitelistRule {
    std::vector<std::pair<int64_t, int64_t>> bounds;  // closed integer ranges [lo, hi]
};

struct WhitelistRuleSet {
    FeatureSchema schema;
    std::vector<WhitelistRule> rules;
    std::string model_hash;

    bool matches(const FeatureVector& x) const {
        for (const auto& rule : rules) {
            bool inside = true;
            for (size_t f = 0; f < rule.bounds.size() && inside; ++f) {
                int64_t v = int64_t(x[f]);
                inside = v >= rule.bounds[f].first && v <= rule.bounds[f].second;
            }
            if (inside) return true;
        }
        return false;
    }
};

// Label-0 cubes become closed integer range rules; everything else is
// implicitly malicious.
inline WhitelistRuleSet emit_whitelist(const std::vector<LabeledCube>& cubes,
                                       const FeatureSchema& schema,
                                       const std::string& model_hash = "") {
    WhitelistRuleSet rs;
    rs.schema = schema;
    rs.model_hash = model_hash;
    for (const auto& cube : cubes) {
        if (cube.label != 0) continue;
        WhitelistRule rule;
        for (auto [lo, hi] : cube.bounds) rule.bounds.emplace_back(lo + 1, hi);
        rs.rules.push_back(std::move(rule));
    }
    return rs;
}

// Whitelist-miss means malicious.
inline int match_rules(const WhitelistRuleSet& rules, const FeatureVector& x) {
    return rules.matches(x) ? 0 : 1;
}

inline double rules_consistency(const WhitelistRuleSet& rules, const DistilledForest& df,
                                const std::vector<FeatureVector>& X_eval) {
    if (X_eval.empty()) throw std::invalid_argument("rules_consistency: empty evaluation set");
    size_t agree = 0;
    for (const auto& x : X_eval)
        if (match_rules(rules, x) == predict_combined(df, x)) ++agree;
    return double(agree) / double(X_eval.size());
}

// One compile pass: thresholds -> integer grid -> labels -> merged cubes ->
// whitelist.
inline WhitelistRuleSet compile_whitelist(const DistilledForest& df,
                                          const std::string& model_hash = "",
                                          size_t cube_cap = 10'000'000,
                                          const std::set<std::string>& non_integer_opt_in = {}) {
    BranchSets branches = extract_branch_sets(df.forest);
    IntBranchSets shifted = shift_integer_boundaries(branches, df.forest.schema,
                                                     non_integer_opt_in);
    HypercubeGrid grid = build_hypercube_grid(shifted, df.forest.schema, cube_cap);
    label_hypercubes(grid, df);
    auto cubes = merge_adjacent(grid_to_cubes(grid));
    return emit_whitelist(cubes, df.forest.schema, model_hash);
}

// Two tagged whitelists routed by packet phase: early packets (and collision
// fallback) match PL rules, completed bursts match BL rules.
struct CombinedRuleSet {
    WhitelistRuleSet bl_rules;
    WhitelistRuleSet pl_rules;
};

inline CombinedRuleSet merge_rule_sets(const WhitelistRuleSet& bl_rules,
                                       const WhitelistRuleSet& pl_rules,
                                       const std::set<std::string>& shared_axes = {"dst_port"}) {
    for (const auto& bf : bl_rules.schema.features)
        for (const auto& pf : pl_rules.schema.features)
            if (bf.name == pf.name && !shared_axes.count(bf.name))
                throw std::invalid_argument("merge_rule_sets: schemas overlap on " + bf.name +
                                            " without a shared-axis declaration");
    return CombinedRuleSet{bl_rules, pl_rules};
}

}  // namespace flowsift

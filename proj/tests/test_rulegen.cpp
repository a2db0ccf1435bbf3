#include <catch2/catch_amalgamated.hpp>

#include <random>

#include <flowsift/rulegen.hpp>
#include <flowsift/serialize.hpp>

using namespace flowsift;

namespace {

FeatureSchema int_schema(size_t m, int width = 8) {
    FeatureSchema s;
    for (size_t i = 0; i < m; ++i)
        s.features.push_back({"f" + std::to_string(i), FeatureKind::BL, true, width});
    return s;
}

ITree stump(int feature, double threshold) {
    ITree t;
    t.nodes.resize(3);
    t.nodes[0].split_feature = feature;
    t.nodes[0].split_threshold = threshold;
    t.nodes[0].left = 1;
    t.nodes[0].right = 2;
    t.nodes[1].n_samples = 1;
    t.nodes[1].leaf_id = 0;
    t.nodes[2].n_samples = 1;
    t.nodes[2].leaf_id = 1;
    t.leaf_count = 2;
    return t;
}

std::vector<FeatureVector> int_gaussian(size_t n, size_t m, uint64_t seed, double mu = 120,
                                        double sigma = 25, double clamp_hi = 255) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d(mu, sigma);
    std::vector<FeatureVector> X(n, FeatureVector(m));
    for (auto& x : X)
        for (auto& v : x) v = std::clamp(std::round(d(rng)), 0.0, clamp_hi);
    return X;
}

// Distilled forest over integer features with a trained teacher, small enough
// to compile into a grid quickly.
DistilledForest small_distilled(size_t m, uint32_t t, uint64_t seed,
                                Combiner comb = Combiner::product) {
    auto X = int_gaussian(600, m, seed);
    IForestModel forest = train_iforest(X, int_schema(m), t, 128, seed + 1);
    TrainOptions opts;
    opts.epochs = 25;
    Ensemble teacher = train_ensemble(X, X, 1, opts, 0.02, seed + 2);
    return embed_leaves(forest, teacher, X, 30, seed + 3, comb, 0.55);
}

uint8_t cube_list_label(const std::vector<LabeledCube>& cubes, const FeatureVector& x) {
    for (const auto& c : cubes) {
        bool inside = true;
        for (size_t f = 0; f < c.bounds.size() && inside; ++f) {
            int64_t v = int64_t(x[f]);
            inside = v > c.bounds[f].first && v <= c.bounds[f].second;
        }
        if (inside) return c.label;
    }
    throw std::logic_error("point not covered by any cube");
}

}  // namespace

TEST_CASE("branch sets collect thresholds per feature across trees") {
    IForestModel m;
    m.schema = int_schema(2);
    m.trees.push_back(stump(0, 2.5));
    m.trees.push_back(stump(0, 5.7));

    SECTION("two stumps on f0") {
        auto sets = extract_branch_sets(m);
        CHECK(sets[0] == std::vector<double>{2.5, 5.7});
        CHECK(sets[1].empty());  // f1 never split: whole axis one interval
    }
    SECTION("duplicate thresholds collapse") {
        m.trees.push_back(stump(0, 2.5));
        auto sets = extract_branch_sets(m);
        CHECK(sets[0] == std::vector<double>{2.5, 5.7});
    }
    SECTION("single-leaf forest has empty branch sets") {
        IForestModel empty;
        empty.schema = int_schema(2);
        ITree leaf;
        leaf.nodes.resize(1);
        leaf.nodes[0].n_samples = 4;
        leaf.nodes[0].leaf_id = 0;
        leaf.leaf_count = 1;
        empty.trees.push_back(leaf);
        auto sets = extract_branch_sets(empty);
        CHECK(sets[0].empty());
        CHECK(sets[1].empty());
    }
}

TEST_CASE("integer shifting floors boundaries and preserves integer membership") {
    auto schema = int_schema(1);

    SECTION("worked example {2.5, 5.7} -> {2, 5}") {
        IntBranchSets shifted = shift_integer_boundaries({{2.5, 5.7}}, schema);
        CHECK(shifted[0] == std::vector<int64_t>{2, 5});
        int alpha = 3;
        CHECK((alpha > 2.5 && alpha <= 5.7));
        CHECK((alpha > 2 && alpha <= 5));
    }
    SECTION("already-integer thresholds are unchanged") {
        IntBranchSets shifted = shift_integer_boundaries({{2.0, 5.0}}, schema);
        CHECK(shifted[0] == std::vector<int64_t>{2, 5});
    }
    SECTION("collapsing {2.2, 2.9} -> {2} keeps membership for alpha in [0,10]") {
        std::vector<double> orig{2.2, 2.9};
        IntBranchSets shifted = shift_integer_boundaries({orig}, schema);
        CHECK(shifted[0] == std::vector<int64_t>{2});
        auto interval_of = [](const std::vector<double>& bs, double v) {
            size_t i = 0;
            while (i < bs.size() && v > bs[i]) ++i;
            return i;
        };
        for (int alpha = 0; alpha <= 10; ++alpha) {
            // Original intervals: (-inf,2.2], (2.2,2.9], (2.9,inf); the middle
            // one holds no integer, so collapsing cannot move any alpha.
            size_t io = interval_of(orig, alpha);
            std::vector<double> floored{2.0};
            size_t is = interval_of(floored, alpha);
            CHECK((io == 0 ? is == 0 : is == 1));
        }
    }
    SECTION("non-integer features are refused unless opted in") {
        FeatureSchema mixed = int_schema(2);
        mixed.features[1].integer = false;
        CHECK_THROWS_AS(shift_integer_boundaries({{1.5}, {2.5}}, mixed), std::invalid_argument);
        IntBranchSets ok = shift_integer_boundaries({{1.5}, {2.5}}, mixed, {"f1"});
        CHECK(ok[1] == std::vector<int64_t>{2});
    }
}

TEST_CASE("theorem-2 property: flooring never moves an integer point between cells") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> bd(0.0, 1000.0);
    for (int rep = 0; rep < 10'000; ++rep) {
        std::vector<double> branches;
        int nb = 1 + int(rng() % 6);
        for (int i = 0; i < nb; ++i) branches.push_back(bd(rng));
        std::sort(branches.begin(), branches.end());
        branches.erase(std::unique(branches.begin(), branches.end()), branches.end());
        std::vector<int64_t> floored;
        for (double b : branches) floored.push_back(int64_t(std::floor(b)));
        floored.erase(std::unique(floored.begin(), floored.end()), floored.end());

        int64_t alpha = int64_t(rng() % 1001);
        size_t i_orig = 0;
        while (i_orig < branches.size() && double(alpha) > branches[i_orig]) ++i_orig;
        size_t i_floor = 0;
        while (i_floor < floored.size() && alpha > floored[i_floor]) ++i_floor;

        // Compare via interval endpoints: the floored cell must contain alpha
        // exactly when the original cell does (position can shift only when
        // boundaries collapse, which removes integer-free cells).
        double lo_o = i_orig == 0 ? -1e18 : branches[i_orig - 1];
        double hi_o = i_orig == branches.size() ? 1e18 : branches[i_orig];
        int64_t lo_f = i_floor == 0 ? INT64_MIN / 2 : floored[i_floor - 1];
        int64_t hi_f = i_floor == floored.size() ? INT64_MAX / 2 : floored[i_floor];
        CHECK((double(alpha) > lo_o && double(alpha) <= hi_o));
        CHECK((alpha > lo_f && alpha <= hi_f));
        // Every integer in the floored cell belongs to the original cell's
        // closure under flooring: floor(lo_o) == lo_f boundary alignment.
        if (i_orig > 0) CHECK(int64_t(std::floor(branches[i_orig - 1])) >= lo_f);
    }
}

TEST_CASE("the cartesian grid tiles the clamped domain") {
    auto schema1 = int_schema(1);

    SECTION("branch set {2,5} on an 8-bit axis") {
        HypercubeGrid grid = build_hypercube_grid({{2, 5}}, schema1);
        REQUIRE(grid.edges[0] == std::vector<int64_t>{-1, 2, 5, 255});
        CHECK(grid.cube_count() == 3);
        // Closed integer ranges: [0,2], [3,5], [6,255].
        auto cubes = [&] {
            HypercubeGrid g = grid;
            g.labels.assign(3, 0);
            return grid_to_cubes(g);
        }();
        CHECK(cubes[0].bounds[0] == std::make_pair(int64_t(-1), int64_t(2)));
        CHECK(cubes[1].bounds[0] == std::make_pair(int64_t(2), int64_t(5)));
        CHECK(cubes[2].bounds[0] == std::make_pair(int64_t(5), int64_t(255)));
    }
    SECTION("cube count is the product of cells per axis") {
        HypercubeGrid grid = build_hypercube_grid({{7}, {3, 9}}, int_schema(2));
        CHECK(grid.cube_count() == 6);
    }
    SECTION("no boundaries leaves one full-domain cube") {
        HypercubeGrid grid = build_hypercube_grid({{}}, schema1);
        CHECK(grid.cube_count() == 1);
        CHECK(grid.representative(0)[0] == 255.0);
    }
    SECTION("boundaries outside the domain are dropped") {
        HypercubeGrid grid = build_hypercube_grid({{-3, 7, 255, 400}}, schema1);
        CHECK(grid.edges[0] == std::vector<int64_t>{-1, 7, 255});
    }
    SECTION("the cube cap aborts with a diagnostic") {
        IntBranchSets big(3);
        for (auto& s : big)
            for (int64_t b = 1; b < 255; ++b) s.push_back(b);
        CHECK_THROWS_WITH(build_hypercube_grid(big, int_schema(3), 1000),
                          Catch::Matchers::ContainsSubstring("reduce"));
    }
    SECTION("integer point counts over all cubes equal the domain cardinality") {
        std::mt19937_64 rng(11);
        for (int rep = 0; rep < 20; ++rep) {
            FeatureSchema schema = int_schema(2, 10);
            IntBranchSets sets(2);
            for (auto& s : sets) {
                int nb = int(rng() % 5);
                for (int i = 0; i < nb; ++i) s.push_back(int64_t(rng() % 1023));
                std::sort(s.begin(), s.end());
                s.erase(std::unique(s.begin(), s.end()), s.end());
            }
            HypercubeGrid grid = build_hypercube_grid(sets, schema);
            grid.labels.assign(grid.cube_count(), 0);
            uint64_t total = 0;
            for (const auto& cube : grid_to_cubes(grid)) {
                uint64_t pts = 1;
                for (auto [lo, hi] : cube.bounds) pts *= uint64_t(hi - lo);
                total += pts;
            }
            CHECK(total == uint64_t(1024) * 1024);
        }
    }
}

TEST_CASE("grid labeling consults the combined predictor") {
    SECTION("a constant-benign predictor labels every cube 0") {
        DistilledForest df = small_distilled(2, 5, 13, Combiner::distilled_only);
        for (auto& tree_embs : df.embeddings)
            for (auto& e : tree_embs) e.label = 0;
        HypercubeGrid grid = build_hypercube_grid(
            shift_integer_boundaries(extract_branch_sets(df.forest), df.forest.schema),
            df.forest.schema);
        label_hypercubes(grid, df);
        for (uint8_t l : grid.labels) CHECK(l == 0);
    }
    SECTION("a single-cube grid is labeled at the domain corner") {
        DistilledForest df = small_distilled(2, 5, 17);
        HypercubeGrid grid = build_hypercube_grid({{}, {}}, df.forest.schema);
        label_hypercubes(grid, df);
        REQUIRE(grid.labels.size() == 1);
        CHECK(grid.labels[0] == predict_combined(df, {255.0, 255.0}));
    }
}

TEST_CASE("theorem-1 property: interior points share the cube's label") {
    DistilledForest df = small_distilled(2, 12, 19);
    HypercubeGrid grid = build_hypercube_grid(
        shift_integer_boundaries(extract_branch_sets(df.forest), df.forest.schema),
        df.forest.schema);
    label_hypercubes(grid, df);

    std::mt19937_64 rng(23);
    size_t checked = 0;
    for (int rep = 0; rep < 50; ++rep) {
        size_t ci = rng() % grid.cube_count();
        auto cell = grid.decode(ci);
        FeatureVector x(2);
        for (int k = 0; k < 100; ++k) {
            for (size_t f = 0; f < 2; ++f) {
                int64_t lo = grid.edges[f][cell[f]], hi = grid.edges[f][cell[f] + 1];
                x[f] = double(lo + 1 + int64_t(rng() % uint64_t(hi - lo)));
            }
            CHECK(predict_combined(df, x) == int(grid.labels[ci]));
            ++checked;
        }
    }
    CHECK(checked == 5000);
}

TEST_CASE("adjacent merging coalesces equal-label abutting cubes") {
    SECTION("abutting pair merges along one axis") {
        std::vector<LabeledCube> cubes{
            {{{-1, 2}, {-1, 9}}, 0},
            {{{2, 5}, {-1, 9}}, 0},
        };
        auto merged = merge_adjacent(cubes);
        REQUIRE(merged.size() == 1);
        CHECK(merged[0].bounds[0] == std::make_pair(int64_t(-1), int64_t(5)));
        CHECK(merged[0].bounds[1] == std::make_pair(int64_t(-1), int64_t(9)));
    }
    SECTION("alternating labels never merge") {
        std::vector<LabeledCube> cubes{
            {{{-1, 2}}, 0},
            {{{2, 5}}, 1},
            {{{5, 9}}, 0},
        };
        CHECK(merge_adjacent(cubes).size() == 3);
    }
    SECTION("merging preserves point membership on a random 3-feature grid") {
        std::mt19937_64 rng(29);
        FeatureSchema schema = int_schema(3, 6);  // domain [0,63]
        IntBranchSets sets(3);
        for (auto& s : sets) {
            for (int i = 0; i < 4; ++i) s.push_back(int64_t(rng() % 62));
            std::sort(s.begin(), s.end());
            s.erase(std::unique(s.begin(), s.end()), s.end());
        }
        HypercubeGrid grid = build_hypercube_grid(sets, schema);
        grid.labels.resize(grid.cube_count());
        for (auto& l : grid.labels) l = uint8_t(rng() % 2);
        auto cubes = grid_to_cubes(grid);
        auto merged = merge_adjacent(cubes);
        CHECK(merged.size() <= cubes.size());
        for (int i = 0; i < 10'000; ++i) {
            FeatureVector x{double(rng() % 64), double(rng() % 64), double(rng() % 64)};
            CHECK(cube_list_label(merged, x) == grid.labels[grid.locate(x)]);
        }
    }
}

TEST_CASE("whitelist emission keeps only benign cubes as closed ranges") {
    SECTION("no benign cubes: empty set flags everything") {
        std::vector<LabeledCube> cubes{{{{-1, 255}}, 1}};
        WhitelistRuleSet rs = emit_whitelist(cubes, int_schema(1));
        CHECK(rs.rules.empty());
        CHECK(match_rules(rs, {7.0}) == 1);
    }
    SECTION("full-domain benign cube matches everything") {
        std::vector<LabeledCube> cubes{{{{-1, 255}}, 0}};
        WhitelistRuleSet rs = emit_whitelist(cubes, int_schema(1));
        REQUIRE(rs.rules.size() == 1);
        CHECK(rs.rules[0].bounds[0] == std::make_pair(int64_t(0), int64_t(255)));
        for (double v : {0.0, 100.0, 255.0}) CHECK(match_rules(rs, {v}) == 0);
    }
    SECTION("the middle cube of {2,5} becomes the closed range [3,5]") {
        std::vector<LabeledCube> cubes{
            {{{-1, 2}}, 1}, {{{2, 5}}, 0}, {{{5, 255}}, 1}};
        WhitelistRuleSet rs = emit_whitelist(cubes, int_schema(1));
        REQUIRE(rs.rules.size() == 1);
        CHECK(rs.rules[0].bounds[0] == std::make_pair(int64_t(3), int64_t(5)));
        CHECK(match_rules(rs, {3.0}) == 0);
        CHECK(match_rules(rs, {5.0}) == 0);
        CHECK(match_rules(rs, {2.0}) == 1);
        CHECK(match_rules(rs, {6.0}) == 1);
    }
}

TEST_CASE("compiled rules agree with the model that labeled them") {
    DistilledForest df = small_distilled(2, 10, 31);
    WhitelistRuleSet rules = compile_whitelist(df);

    std::mt19937_64 rng(37);
    size_t disagreements = 0;
    for (int i = 0; i < 10'000; ++i) {
        FeatureVector x{double(rng() % 256), double(rng() % 256)};
        if (match_rules(rules, x) != predict_combined(df, x)) ++disagreements;
    }
    CHECK(disagreements == 0);
}

TEST_CASE("rule consistency is exact at representatives and drops when corrupted") {
    DistilledForest df = small_distilled(2, 8, 41);
    BranchSets branches = extract_branch_sets(df.forest);
    IntBranchSets shifted = shift_integer_boundaries(branches, df.forest.schema);
    HypercubeGrid grid = build_hypercube_grid(shifted, df.forest.schema);
    label_hypercubes(grid, df);
    WhitelistRuleSet rules = emit_whitelist(merge_adjacent(grid_to_cubes(grid)),
                                            df.forest.schema);

    std::vector<FeatureVector> reps;
    for (size_t i = 0; i < grid.cube_count(); ++i) reps.push_back(grid.representative(i));
    CHECK(rules_consistency(rules, df, reps) == 1.0);

    // Dropping one rule must show up, as long as some benign rule existed.
    if (!rules.rules.empty()) {
        WhitelistRuleSet corrupted = rules;
        corrupted.rules.pop_back();
        std::vector<FeatureVector> probe;
        const auto& gone = rules.rules.back();
        FeatureVector x(2);
        for (size_t f = 0; f < 2; ++f) x[f] = double(gone.bounds[f].first);
        probe.push_back(x);
        CHECK(rules_consistency(corrupted, df, probe) < 1.0);
    }
    CHECK_THROWS_AS(rules_consistency(rules, df, {}), std::invalid_argument);
}

TEST_CASE("rule sets merge only with disjoint or declared-shared schemas") {
    WhitelistRuleSet bl;
    bl.schema = FeatureSchema{{{"pkt_count", FeatureKind::BL, true, 8},
                               {"dst_port", FeatureKind::PL, true, 16}}};
    WhitelistRuleSet pl;
    pl.schema = FeatureSchema{{{"dst_port", FeatureKind::PL, true, 16}}};

    CombinedRuleSet crs = merge_rule_sets(bl, pl);
    CHECK(crs.pl_rules.rules.empty());

    WhitelistRuleSet clash;
    clash.schema = FeatureSchema{{{"pkt_count", FeatureKind::BL, true, 8}}};
    CHECK_THROWS_AS(merge_rule_sets(bl, clash, {}), std::invalid_argument);

    // A single port rule admits matching early packets.
    pl.rules.push_back(WhitelistRule{{{80, 80}}});
    CombinedRuleSet crs2 = merge_rule_sets(bl, pl);
    CHECK(match_rules(crs2.pl_rules, {80.0}) == 0);
    CHECK(match_rules(crs2.pl_rules, {81.0}) == 1);
}

TEST_CASE("rule files round-trip including the TSV export") {
    DistilledForest df = small_distilled(2, 6, 43);
    WhitelistRuleSet rules = compile_whitelist(df, "abc123");
    std::string bytes = rules_to_json(rules).dump();
    WhitelistRuleSet back = rules_from_json(json::parse(bytes));
    CHECK(rules_to_json(back).dump() == bytes);
    CHECK(back.model_hash == "abc123");

    std::string tsv = rules_to_tsv(rules);
    CHECK(tsv.find("# features: f0 f1") == 0);
    size_t lines = std::count(tsv.begin(), tsv.end(), '\n');
    CHECK(lines == rules.rules.size() + 1);
}

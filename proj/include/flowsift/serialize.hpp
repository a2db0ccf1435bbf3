#pragma once

// JSON artifact files for every model stage, plus content hashing and run
// manifests. All files carry a format tag and round-trip exactly (nlohmann
// emits shortest round-trip doubles and sorted keys).

#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "autoencoder.hpp"
#include "distill.hpp"
#include "iforest.hpp"
#include "rulegen.hpp"

namespace flowsift {

using nlohmann::json;

inline uint64_t fnv1a64(const std::string& bytes) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(uint64_t v) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << v;
    return os.str();
}

inline std::string content_hash(const std::string& bytes) { return hex64(fnv1a64(bytes)); }

// --- schema ---------------------------------------------------------------

inline json schema_to_json(const FeatureSchema& schema) {
    json arr = json::array();
    for (const auto& f : schema.features)
        arr.push_back({{"name", f.name},
                       {"kind", f.kind == FeatureKind::BL ? "BL" : "PL"},
                       {"integer", f.integer},
                       {"bit_width", f.bit_width}});
    return arr;
}

inline FeatureSchema schema_from_json(const json& arr) {
    FeatureSchema schema;
    for (const auto& j : arr) {
        FeatureSpec f;
        f.name = j.at("name").get<std::string>();
        f.kind = j.at("kind").get<std::string>() == "BL" ? FeatureKind::BL : FeatureKind::PL;
        f.integer = j.at("integer").get<bool>();
        f.bit_width = j.at("bit_width").get<int>();
        schema.features.push_back(std::move(f));
    }
    schema.validate();
    return schema;
}

inline std::string schema_hash(const FeatureSchema& schema) {
    return content_hash(schema_to_json(schema).dump());
}

// --- isolation forest -----------------------------------------------------

namespace detail {

inline json node_to_json(const ITree& tree, int idx) {
    const ITreeNode& n = tree.nodes[idx];
    if (n.is_leaf()) return json{{"n", n.n_samples}, {"id", n.leaf_id}};
    return json{{"f", n.split_feature},
                {"thr", n.split_threshold},
                {"l", node_to_json(tree, n.left)},
                {"r", node_to_json(tree, n.right)}};
}

inline int node_from_json(const json& j, ITree& tree) {
    int idx = int(tree.nodes.size());
    tree.nodes.emplace_back();
    if (j.contains("id")) {
        tree.nodes[idx].n_samples = j.at("n").get<uint32_t>();
        tree.nodes[idx].leaf_id = j.at("id").get<int>();
        tree.leaf_count = std::max(tree.leaf_count, tree.nodes[idx].leaf_id + 1);
        return idx;
    }
    int left = node_from_json(j.at("l"), tree);
    int right = node_from_json(j.at("r"), tree);
    tree.nodes[idx].split_feature = j.at("f").get<int>();
    tree.nodes[idx].split_threshold = j.at("thr").get<double>();
    tree.nodes[idx].left = left;
    tree.nodes[idx].right = right;
    return idx;
}

}  // namespace detail

inline json iforest_to_json(const IForestModel& model) {
    json trees = json::array();
    for (const auto& t : model.trees) trees.push_back(detail::node_to_json(t, 0));
    return json{{"format", "iforest-v1"},
                {"schema", schema_to_json(model.schema)},
                {"psi", model.psi},
                {"n_train", model.n_train},
                {"seed", model.seed},
                {"trees", trees}};
}

inline IForestModel iforest_from_json(const json& j) {
    if (j.at("format") != "iforest-v1") throw std::runtime_error("not an iforest-v1 file");
    IForestModel model;
    model.schema = schema_from_json(j.at("schema"));
    model.psi = j.at("psi").get<uint32_t>();
    model.n_train = j.at("n_train").get<uint64_t>();
    model.seed = j.at("seed").get<uint64_t>();
    for (const auto& tj : j.at("trees")) {
        ITree tree;
        detail::node_from_json(tj, tree);
        model.trees.push_back(std::move(tree));
    }
    return model;
}

// --- autoencoder ------------------------------------------------------------

inline json autoencoder_to_json(const AutoencoderModel& m) {
    json layers = json::array();
    for (const auto& l : m.layers)
        layers.push_back({{"in", l.in}, {"out", l.out}, {"w", l.weights}, {"b", l.biases}});
    return json{{"format", "autoencoder-v1"},
                {"layer_sizes", m.layer_sizes},
                {"layers", layers},
                {"activation", m.activation},
                {"norm_min", m.norm_min},
                {"norm_max", m.norm_max},
                {"rmse_threshold", m.rmse_threshold}};
}

inline AutoencoderModel autoencoder_from_json(const json& j) {
    if (j.at("format") != "autoencoder-v1") throw std::runtime_error("not an autoencoder-v1 file");
    AutoencoderModel m;
    m.layer_sizes = j.at("layer_sizes").get<std::vector<size_t>>();
    for (const auto& lj : j.at("layers")) {
        DenseLayer l;
        l.in = lj.at("in").get<size_t>();
        l.out = lj.at("out").get<size_t>();
        l.weights = lj.at("w").get<std::vector<double>>();
        l.biases = lj.at("b").get<std::vector<double>>();
        m.layers.push_back(std::move(l));
    }
    m.activation = j.at("activation").get<std::string>();
    m.norm_min = j.at("norm_min").get<std::vector<double>>();
    m.norm_max = j.at("norm_max").get<std::vector<double>>();
    m.rmse_threshold = j.at("rmse_threshold").get<double>();
    return m;
}

inline json ensemble_to_json(const Ensemble& e) {
    json members = json::array();
    for (const auto& m : e.members) members.push_back(autoencoder_to_json(m));
    return json{{"format", "ensemble-v1"}, {"members", members}, {"weights", e.weights}};
}

inline Ensemble ensemble_from_json(const json& j) {
    if (j.at("format") != "ensemble-v1") throw std::runtime_error("not an ensemble-v1 file");
    Ensemble e;
    for (const auto& mj : j.at("members")) e.members.push_back(autoencoder_from_json(mj));
    e.weights = j.at("weights").get<std::vector<double>>();
    e.validate();
    return e;
}

// --- distilled forest -------------------------------------------------------

inline json distilled_to_json(const DistilledForest& df) {
    json embeddings = json::array();
    for (const auto& tree_embs : df.embeddings) {
        json per_tree = json::array();
        for (const auto& e : tree_embs)
            per_tree.push_back({{"mean_res", e.mean_res},
                                {"l", e.indicator_l},
                                {"label", e.label},
                                {"mapped", e.mapped_count},
                                {"augmented", e.augmented_count}});
        embeddings.push_back(std::move(per_tree));
    }
    return json{{"format", "distilled-iforest-v1"},
                {"forest", iforest_to_json(df.forest)},
                {"embeddings", embeddings},
                {"combiner", to_string(df.combiner)},
                {"theta_if", df.theta_if}};
}

inline DistilledForest distilled_from_json(const json& j) {
    if (j.at("format") != "distilled-iforest-v1")
        throw std::runtime_error("not a distilled-iforest-v1 file");
    DistilledForest df;
    df.forest = iforest_from_json(j.at("forest"));
    for (const auto& tj : j.at("embeddings")) {
        std::vector<LeafEmbedding> per_tree;
        for (const auto& ej : tj) {
            LeafEmbedding e;
            e.mean_res = ej.at("mean_res").get<std::vector<double>>();
            e.indicator_l = ej.at("l").get<std::vector<int>>();
            e.label = ej.at("label").get<int>();
            e.mapped_count = ej.at("mapped").get<uint32_t>();
            e.augmented_count = ej.at("augmented").get<uint32_t>();
            per_tree.push_back(std::move(e));
        }
        df.embeddings.push_back(std::move(per_tree));
    }
    std::string comb = j.at("combiner").get<std::string>();
    df.combiner = comb == "product"          ? Combiner::product
                  : comb == "distilled_only" ? Combiner::distilled_only
                                             : Combiner::iforest_only;
    df.theta_if = j.at("theta_if").get<double>();
    return df;
}

// --- whitelist rules --------------------------------------------------------

inline json rules_to_json(const WhitelistRuleSet& rs) {
    json rules = json::array();
    for (const auto& r : rs.rules) {
        json bounds = json::array();
        for (auto [lo, hi] : r.bounds) bounds.push_back({lo, hi});
        rules.push_back({{"bounds", bounds}});
    }
    return json{{"format", "whitelist-v1"},
                {"schema", schema_to_json(rs.schema)},
                {"rules", rules},
                {"model_hash", rs.model_hash}};
}

inline WhitelistRuleSet rules_from_json(const json& j) {
    if (j.at("format") != "whitelist-v1") throw std::runtime_error("not a whitelist-v1 file");
    WhitelistRuleSet rs;
    rs.schema = schema_from_json(j.at("schema"));
    rs.model_hash = j.at("model_hash").get<std::string>();
    for (const auto& rj : j.at("rules")) {
        WhitelistRule rule;
        for (const auto& b : rj.at("bounds"))
            rule.bounds.emplace_back(b.at(0).get<int64_t>(), b.at(1).get<int64_t>());
        rs.rules.push_back(std::move(rule));
    }
    return rs;
}

inline json combined_rules_to_json(const CombinedRuleSet& crs) {
    return json{{"format", "ruleset-v1"},
                {"bl_rules", rules_to_json(crs.bl_rules)},
                {"pl_rules", rules_to_json(crs.pl_rules)}};
}

inline CombinedRuleSet combined_rules_from_json(const json& j) {
    if (j.at("format") != "ruleset-v1") throw std::runtime_error("not a ruleset-v1 file");
    return CombinedRuleSet{rules_from_json(j.at("bl_rules")), rules_from_json(j.at("pl_rules"))};
}

// One rule per line: per-feature "lo:hi" columns, tab separated.
inline std::string rules_to_tsv(const WhitelistRuleSet& rs) {
    std::ostringstream os;
    os << "# features:";
    for (const auto& f : rs.schema.features) os << ' ' << f.name;
    os << '\n';
    for (const auto& r : rs.rules) {
        for (size_t f = 0; f < r.bounds.size(); ++f) {
            if (f) os << '\t';
            os << r.bounds[f].first << ':' << r.bounds[f].second;
        }
        os << '\n';
    }
    return os.str();
}

// --- files ------------------------------------------------------------------

inline void save_json(const std::string& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << j.dump(2) << '\n';
}

inline json load_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path);
    json j = json::parse(in, nullptr, true);
    return j;
}

inline std::string file_hash(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return content_hash(ss.str());
}

}  // namespace flowsift

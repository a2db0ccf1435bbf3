// flowsift: distill autoencoder ensembles into an isolation forest, compile
// whitelist range rules, and replay traces through the data-plane simulator.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include <flowsift/config.hpp>
#include <flowsift/controller.hpp>
#include <flowsift/metrics.hpp>
#include <flowsift/pipeline.hpp>
#include <flowsift/serialize.hpp>
#include <flowsift/synthetic.hpp>

using namespace flowsift;

namespace {

constexpr const char* kVersion = "flowsift 0.1.0";
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitConsistency = 4;

struct CliError : std::runtime_error {
    int code;
    CliError(int c, const std::string& msg) : std::runtime_error(msg), code(c) {}
};

Config load_config_opt(const std::string& path) {
    if (path.empty()) return Config{};
    try {
        return Config::load(path);
    } catch (const std::exception& e) {
        throw CliError(kExitConfig, e.what());
    }
}

TraceFormat format_of(const std::string& path, const Config& cfg) {
    std::string fmt = cfg.get("traffic.format", "");
    if (fmt.empty()) fmt = path.size() > 4 && path.substr(path.size() - 4) == ".csv" ? "csv" : "jsonl";
    if (fmt == "csv") return TraceFormat::csv;
    if (fmt == "jsonl") return TraceFormat::jsonl;
    throw CliError(kExitConfig, "unknown trace format: " + fmt);
}

std::vector<PacketRecord> load_trace(const std::string& path, const Config& cfg) {
    try {
        ParseResult res = parse_trace(path, format_of(path, cfg));
        for (const auto& d : res.diagnostics)
            std::cerr << path << ":" << d.line << ": " << d.message << "\n";
        for (const auto& w : res.warnings) std::cerr << path << ": " << w << "\n";
        return std::move(res.records);
    } catch (const std::exception& e) {
        throw CliError(kExitData, e.what());
    }
}

// Burst features of the benign portion of a trace (unlabeled packets count as
// benign for training purposes).
std::vector<FeatureVector> benign_burst_features(const std::vector<PacketRecord>& trace,
                                                 const FeatureSchema& schema,
                                                 const Config& cfg) {
    std::vector<PacketRecord> benign;
    for (const auto& p : trace)
        if (!p.ground_truth || !is_malicious_label(*p.ground_truth)) benign.push_back(p);
    auto features = extract_burst_features(benign, schema, bihash_config_from(cfg),
                                           burst_config_from(cfg));
    if (features.empty()) throw CliError(kExitData, "no benign bursts in trace");
    return features;
}

void write_manifest(const std::string& out_path, const std::string& command,
                    const std::map<std::string, std::string>& inputs, uint64_t seed,
                    const json& extra = json::object()) {
    json manifest{{"command", command}, {"version", kVersion}, {"seed", seed},
                  {"extra", extra}};
    json in = json::object();
    for (const auto& [name, path] : inputs)
        if (!path.empty()) in[name] = {{"path", path}, {"fnv1a64", file_hash(path)}};
    manifest["inputs"] = in;
    save_json(out_path + ".manifest.json", manifest);
}

json stats_to_json(const PipelineStats& s) {
    return json{{"packets_in", s.packets_in},
                {"resubmissions", s.resubmissions},
                {"mirrors_to_loopback", s.mirrors_to_loopback},
                {"mirrors_to_cpu", s.mirrors_to_cpu},
                {"collisions", s.collisions},
                {"blacklist_hits", s.blacklist_hits},
                {"digests_normal", s.digests_normal},
                {"digests_malicious", s.digests_malicious},
                {"bursts_closed", s.bursts_closed},
                {"outcome_forwarded", s.outcome_forwarded},
                {"outcome_dropped_blacklist", s.outcome_dropped_blacklist},
                {"outcome_dropped_pl", s.outcome_dropped_pl},
                {"outcome_flagged", s.outcome_flagged},
                {"register_discipline_violations", s.register_discipline_violations}};
}

json tag_metrics_to_json(const TagMetrics& m) {
    return json{{"tp", m.tp},   {"fp", m.fp},   {"tn", m.tn},   {"fn", m.fn},
                {"tpr", m.tpr}, {"tnr", m.tnr}, {"fpr", m.fpr}, {"fnr", m.fnr},
                {"pr_auc", m.pr_auc}};
}

WhitelistRuleSet universal_pl_rules() {
    WhitelistRuleSet pl;
    pl.schema = pl_port_schema();
    WhitelistRule rule;
    for (size_t f = 0; f < pl.schema.size(); ++f)
        rule.bounds.emplace_back(0, int64_t(pl.schema.domain_max(f)));
    pl.rules.push_back(rule);
    return pl;
}

DistilledForest load_model_any(const std::string& path, const Config& cfg) {
    json j = load_json(path);
    std::string fmt = j.value("format", "");
    if (fmt == "distilled-iforest-v1") return distilled_from_json(j);
    if (fmt == "iforest-v1") {
        DistilledForest df;
        df.forest = iforest_from_json(j);
        df.combiner = Combiner::iforest_only;
        df.theta_if = cfg.get_double("distill.theta_if", 0.5);
        return df;
    }
    throw CliError(kExitData, path + ": expected an iforest or distilled model file");
}

// ---------------------------------------------------------------------------

struct CommonArgs {
    std::string config_path;
    uint64_t seed = 1;
};

int cmd_gen_synth(const std::string& out, const CommonArgs& common, size_t benign_flows,
                  size_t attack_flows, size_t bursts, uint32_t uniform_pkts) {
    std::vector<PacketRecord> trace;
    if (uniform_pkts > 0) {
        trace = generate_uniform_burst_trace(benign_flows, bursts, uniform_pkts, common.seed);
    } else {
        TraceGenConfig tcfg;
        tcfg.seed = common.seed;
        tcfg.benign_flows = benign_flows;
        tcfg.attack_flows = attack_flows;
        tcfg.bursts_per_flow = bursts;
        trace = generate_trace(tcfg);
    }
    write_trace_jsonl(out, trace);
    write_manifest(out, "gen-synth", {}, common.seed,
                   json{{"packets", trace.size()},
                        {"benign_flows", benign_flows},
                        {"attack_flows", attack_flows},
                        {"uniform_pkts", uniform_pkts}});
    std::cout << "wrote " << trace.size() << " packets to " << out << "\n";
    return 0;
}

int cmd_train_ae(const std::string& trace_path, const std::string& out,
                 const CommonArgs& common) {
    Config cfg = load_config_opt(common.config_path);
    FeatureSchema schema = schema_from_config(cfg);
    auto trace = load_trace(trace_path, cfg);
    auto features = benign_burst_features(trace, schema, cfg);

    size_t split = features.size() * 8 / 10;
    if (split < 10 || features.size() - split < 1)
        throw CliError(kExitData, "too few bursts to split into train/validation");
    std::vector<FeatureVector> train(features.begin(), features.begin() + split);
    std::vector<FeatureVector> val(features.begin() + split, features.end());

    TrainOptions opts;
    opts.epochs = uint32_t(cfg.get_u64("autoencoder.epochs", 400));
    opts.learning_rate = cfg.get_double("autoencoder.learning_rate", 0.05);
    opts.momentum = cfg.get_double("autoencoder.momentum", 0.9);
    opts.batch_size = uint32_t(cfg.get_u64("autoencoder.batch_size", 16));
    opts.restarts = uint32_t(cfg.get_u64("autoencoder.restarts", 8));
    size_t members = cfg.get_u64("autoencoder.members", 1);
    double target_fpr = cfg.get_double("autoencoder.target_fpr", 2e-3);

    Ensemble ens = train_ensemble(train, val, members, opts, target_fpr, common.seed);
    json j = ensemble_to_json(ens);
    j["schema"] = schema_to_json(schema);
    save_json(out, j);
    write_manifest(out, "train-ae", {{"trace", trace_path}}, common.seed,
                   json{{"members", members},
                        {"target_fpr", target_fpr},
                        {"train_bursts", train.size()},
                        {"val_bursts", val.size()},
                        {"schema_hash", schema_hash(schema)}});
    std::cout << "trained " << members << "-member teacher on " << train.size()
              << " bursts -> " << out << "\n";
    return 0;
}

int cmd_train_iforest(const std::string& trace_path, const std::string& out,
                      const CommonArgs& common, bool pl_only) {
    Config cfg = load_config_opt(common.config_path);
    auto trace = load_trace(trace_path, cfg);
    std::vector<FeatureVector> features;
    FeatureSchema schema;
    if (pl_only) {
        schema = pl_port_schema();
        for (const auto& p : trace)
            if (!p.ground_truth || !is_malicious_label(*p.ground_truth))
                features.push_back(packet_to_features(p, schema));
        if (features.empty()) throw CliError(kExitData, "no benign packets in trace");
    } else {
        schema = schema_from_config(cfg);
        features = benign_burst_features(trace, schema, cfg);
    }

    uint32_t t = uint32_t(cfg.get_u64("iforest.trees", 50));
    uint32_t psi = uint32_t(cfg.get_u64("iforest.psi", 256));
    psi = std::min<uint32_t>(psi, uint32_t(features.size()));
    IForestModel model;
    try {
        model = train_iforest(features, schema, t, psi, common.seed);
    } catch (const std::exception& e) {
        throw CliError(kExitData, e.what());
    }
    save_json(out, iforest_to_json(model));
    write_manifest(out, "train-iforest", {{"trace", trace_path}}, common.seed,
                   json{{"trees", t}, {"psi", psi}, {"samples", features.size()},
                        {"pl_only", pl_only}, {"schema_hash", schema_hash(schema)}});
    std::cout << "trained iforest (t=" << t << ", psi=" << psi << ") on "
              << features.size() << " samples -> " << out << "\n";
    return 0;
}

int cmd_distill(const std::string& model_path, const std::string& teacher_path,
                const std::string& trace_path, const std::string& out,
                const CommonArgs& common) {
    Config cfg = load_config_opt(common.config_path);
    json forest_json = load_json(model_path);
    if (forest_json.value("format", "") != "iforest-v1")
        throw CliError(kExitData, model_path + " is not an iforest-v1 file");
    IForestModel forest = iforest_from_json(forest_json);

    json teacher_json = load_json(teacher_path);
    if (teacher_json.value("format", "") != "ensemble-v1")
        throw CliError(kExitData, teacher_path + " is not an ensemble-v1 file");
    if (!teacher_json.contains("schema"))
        throw CliError(kExitData, teacher_path + " carries no schema");
    FeatureSchema teacher_schema = schema_from_json(teacher_json.at("schema"));
    if (schema_hash(teacher_schema) != schema_hash(forest.schema))
        throw CliError(kExitConsistency,
                       "schema hash mismatch between forest (" + schema_hash(forest.schema) +
                           ") and teacher (" + schema_hash(teacher_schema) + ")");
    Ensemble teacher = ensemble_from_json(teacher_json);

    auto trace = load_trace(trace_path, cfg);
    auto features = benign_burst_features(trace, forest.schema, cfg);

    uint32_t k = uint32_t(cfg.get_u64("distill.k", 50));
    DistilledForest df = embed_leaves(forest, teacher, features, k, common.seed,
                                      combiner_from(cfg), cfg.get_double("distill.theta_if", 0.5));
    save_json(out, distilled_to_json(df));
    write_manifest(out, "distill",
                   {{"model", model_path}, {"teacher", teacher_path}, {"trace", trace_path}},
                   common.seed, json{{"k", k}, {"combiner", to_string(df.combiner)}});
    std::cout << "embedded " << df.forest.trees.size() << " trees with k=" << k << " -> "
              << out << "\n";
    return 0;
}

int cmd_compile_rules(const std::string& model_path, const std::string& pl_model_path,
                      const std::string& out, const std::string& tsv_out,
                      const CommonArgs& common) {
    Config cfg = load_config_opt(common.config_path);
    DistilledForest df = load_model_any(model_path, cfg);
    size_t cube_cap = cfg.get_u64("rulegen.cube_cap", 10'000'000);

    WhitelistRuleSet bl;
    try {
        bl = compile_whitelist(df, file_hash(model_path), cube_cap);
    } catch (const std::exception& e) {
        throw CliError(kExitData, e.what());
    }

    WhitelistRuleSet pl;
    if (!pl_model_path.empty()) {
        DistilledForest pl_df = load_model_any(pl_model_path, cfg);
        try {
            pl = compile_whitelist(pl_df, file_hash(pl_model_path), cube_cap);
        } catch (const std::exception& e) {
            throw CliError(kExitData, e.what());
        }
    } else {
        pl = universal_pl_rules();
    }

    CombinedRuleSet combined;
    try {
        combined = merge_rule_sets(bl, pl);
    } catch (const std::exception& e) {
        throw CliError(kExitConsistency, e.what());
    }
    save_json(out, combined_rules_to_json(combined));
    if (!tsv_out.empty()) {
        std::ofstream tsv(tsv_out);
        tsv << rules_to_tsv(combined.bl_rules);
    }
    write_manifest(out, "compile-rules",
                   {{"model", model_path}, {"pl_model", pl_model_path}}, common.seed,
                   json{{"bl_rules", combined.bl_rules.rules.size()},
                        {"pl_rules", combined.pl_rules.rules.size()}});
    std::cout << "compiled " << combined.bl_rules.rules.size() << " BL rules and "
              << combined.pl_rules.rules.size() << " PL rules -> " << out << "\n";
    return 0;
}

PipelineConfig pipeline_config_from(const Config& cfg, CombinedRuleSet rules) {
    PipelineConfig pc;
    pc.hash = bihash_config_from(cfg);
    pc.burst = burst_config_from(cfg);
    pc.rules = std::move(rules);
    pc.blacklist_capacity = cfg.get_u64("pipeline.blacklist_capacity", 1024);
    std::string strat = cfg.get("pipeline.strategy", "atomic");
    pc.strategy = strat == "resubmit_all" ? RegisterStrategy::resubmit_all
                                          : RegisterStrategy::atomic;
    std::string arith = cfg.get("pipeline.arithmetic", "exact");
    pc.arithmetic = arith == "shift"    ? ArithmeticMode::shift
                    : arith == "logexp" ? ArithmeticMode::logexp
                                        : ArithmeticMode::exact;
    pc.logexp_scaling = unsigned(cfg.get_u64("pipeline.logexp_scaling", 1));
    pc.suppress_normal_digests = cfg.get_bool("pipeline.suppress_normal_digests", false);
    return pc;
}

int cmd_replay(const std::string& trace_path, const std::string& rules_path,
               const std::string& model_path, const std::string& out,
               const std::string& stats_out, const std::string& strategy,
               bool closed_loop, const CommonArgs& common) {
    Config cfg = load_config_opt(common.config_path);
    auto trace = load_trace(trace_path, cfg);
    json rules_json = load_json(rules_path);
    CombinedRuleSet rules = combined_rules_from_json(rules_json);
    PipelineConfig pc = pipeline_config_from(cfg, rules);

    if (strategy == "both") {
        StrategyReport report = compare_strategies(trace, pc);
        json j{{"resubmit_fraction", report.resubmit_fraction},
               {"mirror_fraction", report.mirror_fraction},
               {"reduction", report.reduction},
               {"resubmit_stats", stats_to_json(report.resubmit_stats)},
               {"atomic_stats", stats_to_json(report.atomic_stats)}};
        save_json(out, j);
        write_manifest(out, "replay",
                       {{"trace", trace_path}, {"rules", rules_path}}, common.seed,
                       json{{"strategy", "both"}});
        std::cout << "strategy comparison: resubmit " << report.resubmit_fraction
                  << ", mirror " << report.mirror_fraction << ", reduction "
                  << report.reduction << " -> " << out << "\n";
        return 0;
    }
    if (strategy == "resubmit_all") pc.strategy = RegisterStrategy::resubmit_all;
    if (strategy == "atomic") pc.strategy = RegisterStrategy::atomic;

    std::optional<DistilledForest> scorer_model;
    if (!model_path.empty()) scorer_model = load_model_any(model_path, cfg);

    std::optional<Controller> controller;
    DigestHook hook = nullptr;
    if (closed_loop) {
        double tau = cfg.get_double("controller.tau", 0.5);
        EvictionPolicy policy = cfg.get("controller.eviction", "fifo") == "lru"
                                    ? EvictionPolicy::LRU
                                    : EvictionPolicy::FIFO;
        controller.emplace(tau, policy);
        hook = [&](const Digest& d, Pipeline& pipe) { controller->on_digest(d, pipe); };
    }

    ReplayResult result = replay_trace(trace, pc, hook);

    std::function<double(const FeatureVector&)> bl_scorer = nullptr;
    if (scorer_model)
        bl_scorer = [&](const FeatureVector& v) { return combined_score(*scorer_model, v); };

    bool have_truth = std::all_of(trace.begin(), trace.end(),
                                  [](const PacketRecord& p) { return bool(p.ground_truth); });
    std::vector<EvalSample> evals;
    if (have_truth) evals = assemble_packet_evals(result, trace, bl_scorer);

    std::ofstream vout(out);
    if (!vout) throw CliError(kExitData, "cannot write " + out);
    for (size_t i = 0; i < result.packets.size(); ++i) {
        const auto& pv = result.packets[i];
        json line{{"ts_ns", pv.ts_ns},
                  {"flow", packet_to_json(trace[pv.index])["src_ip"]},
                  {"outcome", to_string(pv.outcome)},
                  {"collision", pv.collision}};
        json flow{{"src_ip", ip_to_string(pv.flow.src_ip)},
                  {"dst_ip", ip_to_string(pv.flow.dst_ip)},
                  {"src_port", pv.flow.src_port},
                  {"dst_port", pv.flow.dst_port},
                  {"protocol", pv.flow.protocol}};
        line["flow"] = flow;
        if (pv.ground_truth) line["ground_truth"] = *pv.ground_truth;
        if (have_truth) {
            line["predicted"] = evals[i].predicted;
            line["score"] = evals[i].score;
        }
        vout << line.dump() << '\n';
    }

    if (!stats_out.empty()) {
        json sj = stats_to_json(result.stats);
        if (controller) sj["blacklist_flows"] = controller->flow_stats().size();
        save_json(stats_out, sj);
    }
    write_manifest(out, "replay",
                   {{"trace", trace_path}, {"rules", rules_path}, {"model", model_path}},
                   common.seed,
                   json{{"strategy", strategy}, {"closed_loop", closed_loop},
                        {"packets", result.packets.size()},
                        {"bursts", result.stats.bursts_closed}});
    std::cout << "replayed " << result.packets.size() << " packets, "
              << result.stats.bursts_closed << " bursts -> " << out << "\n";
    return 0;
}

int cmd_evaluate(const std::string& verdicts_path, const std::string& out) {
    std::ifstream in(verdicts_path);
    if (!in) throw CliError(kExitData, "cannot read " + verdicts_path);
    std::vector<EvalSample> samples;
    std::string line;
    size_t line_no = 0, collisions = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded())
            throw CliError(kExitData, verdicts_path + ":" + std::to_string(line_no) +
                                          ": bad JSON");
        if (!j.contains("ground_truth"))
            throw CliError(kExitData, verdicts_path + ":" + std::to_string(line_no) +
                                          ": missing ground truth");
        if (!j.contains("predicted"))
            throw CliError(kExitData, verdicts_path + ":" + std::to_string(line_no) +
                                          ": missing predicted label (replay without labels?)");
        EvalSample s;
        s.tag = j.at("ground_truth").get<std::string>();
        s.truth_malicious = is_malicious_label(s.tag);
        s.predicted = j.at("predicted").get<int>();
        s.score = j.value("score", double(s.predicted));
        if (j.value("collision", false)) ++collisions;
        samples.push_back(std::move(s));
    }
    MetricsReport report;
    try {
        report = evaluate(samples);
    } catch (const std::exception& e) {
        throw CliError(kExitData, e.what());
    }
    report.collisions = collisions;

    json j{{"packets", report.packets},
           {"collisions", report.collisions},
           {"macro", tag_metrics_to_json(report.macro)}};
    json tags = json::object();
    for (const auto& [tag, m] : report.per_tag) tags[tag] = tag_metrics_to_json(m);
    j["per_tag"] = tags;
    save_json(out, j);
    std::cout << "macro TPR " << report.macro.tpr << ", TNR " << report.macro.tnr
              << ", PR_AUC " << report.macro.pr_auc << " -> " << out << "\n";
    return 0;
}

int cmd_compare_strategies(const std::string& trace_path, const std::string& rules_path,
                           const std::string& out, const CommonArgs& common) {
    Config cfg = load_config_opt(common.config_path);
    auto trace = load_trace(trace_path, cfg);
    CombinedRuleSet rules = combined_rules_from_json(load_json(rules_path));
    StrategyReport report = compare_strategies(trace, pipeline_config_from(cfg, rules));
    json j{{"resubmit_fraction", report.resubmit_fraction},
           {"mirror_fraction", report.mirror_fraction},
           {"reduction", report.reduction},
           {"resubmit_stats", stats_to_json(report.resubmit_stats)},
           {"atomic_stats", stats_to_json(report.atomic_stats)}};
    save_json(out, j);
    write_manifest(out, "compare-strategies",
                   {{"trace", trace_path}, {"rules", rules_path}}, common.seed, {});
    std::cout << "resubmit " << report.resubmit_fraction << " vs mirror "
              << report.mirror_fraction << " (reduction " << report.reduction << ") -> "
              << out << "\n";
    return 0;
}

int cmd_profile(const std::string& train_path, const std::string& val_path,
                const std::string& out, const CommonArgs& common) {
    Config cfg = load_config_opt(common.config_path);
    FeatureSchema schema = schema_from_config(cfg);
    auto train_trace = load_trace(train_path, cfg);
    auto val_trace = load_trace(val_path, cfg);
    for (const auto& p : val_trace)
        if (!p.ground_truth)
            throw CliError(kExitData, "validation trace must carry ground truth labels");

    double alpha = cfg.get_double("profiler.alpha", 0.5);
    auto trees_list = cfg.get_list<uint32_t>("profiler.trees", {25, 50});
    auto psi_list = cfg.get_list<uint32_t>("profiler.psi", {128, 256});
    auto k_list = cfg.get_list<uint32_t>("profiler.k", {20});
    auto fpr_list = cfg.get_list<double>("profiler.target_fpr", {2e-3});
    auto nthr_list = cfg.get_list<uint32_t>("profiler.n_threshold", {15});
    auto bits_list = cfg.get_list<int>("profiler.index_bits", {16});
    size_t rule_capacity = cfg.get_u64("profiler.rule_capacity", 4096);
    uint64_t reg_capacity = cfg.get_u64("profiler.register_capacity_bits", 1ULL << 26);

    std::vector<ProfilerCandidate> grid;
    for (auto t : trees_list)
        for (auto psi : psi_list)
            for (auto k : k_list)
                for (auto fpr : fpr_list)
                    for (auto nthr : nthr_list)
                        for (auto bits : bits_list) {
                            ProfilerCandidate c;
                            c.trees = t;
                            c.psi = psi;
                            c.k = k;
                            c.target_fpr = fpr;
                            c.n_threshold = nthr;
                            c.index_bits1 = c.index_bits2 = bits;
                            c.rule_capacity = rule_capacity;
                            c.register_capacity_bits = reg_capacity;
                            grid.push_back(c);
                        }

    TrainOptions topts;
    topts.epochs = uint32_t(cfg.get_u64("autoencoder.epochs", 400));
    topts.learning_rate = cfg.get_double("autoencoder.learning_rate", 0.05);
    size_t members = cfg.get_u64("autoencoder.members", 1);
    size_t cube_cap = cfg.get_u64("rulegen.cube_cap", 10'000'000);

    ProfilerEvaluator evaluator = [&](const ProfilerCandidate& cand) -> CandidateMetrics {
        Config local = cfg;
        local.set("burst.n_threshold", std::to_string(cand.n_threshold));
        local.set("hash.a1", std::to_string(cand.index_bits1));
        local.set("hash.a2", std::to_string(cand.index_bits2));

        auto features = benign_burst_features(train_trace, schema, local);
        size_t split = features.size() * 8 / 10;
        std::vector<FeatureVector> ftrain(features.begin(), features.begin() + split);
        std::vector<FeatureVector> fval(features.begin() + split, features.end());
        Ensemble teacher =
            train_ensemble(ftrain, fval, members, topts, cand.target_fpr, common.seed);
        uint32_t psi = std::min<uint32_t>(cand.psi, uint32_t(ftrain.size()));
        IForestModel forest = train_iforest(ftrain, schema, cand.trees, psi, common.seed);
        DistilledForest df = embed_leaves(forest, teacher, ftrain, cand.k, common.seed,
                                          combiner_from(local),
                                          local.get_double("distill.theta_if", 0.5));
        WhitelistRuleSet bl = compile_whitelist(df, "", cube_cap);
        CombinedRuleSet rules = merge_rule_sets(bl, universal_pl_rules());

        PipelineConfig pc = pipeline_config_from(local, rules);
        auto result = replay_trace(val_trace, pc);
        auto evals = assemble_packet_evals(result, val_trace, [&](const FeatureVector& v) {
            return combined_score(df, v);
        });
        MetricsReport report = evaluate(evals);

        CandidateMetrics m;
        m.tpr = report.macro.tpr;
        m.tnr = report.macro.tnr;
        m.pr_auc = report.macro.pr_auc;
        uint64_t reg_bits = ((uint64_t(1) << cand.index_bits1) + (uint64_t(1) << cand.index_bits2)) *
                            slot_register_bits(schema);
        m.rho = resource_fraction(rules.bl_rules.rules.size() + rules.pl_rules.rules.size(),
                                  cand.rule_capacity, reg_bits, cand.register_capacity_bits);
        return m;
    };

    ProfilerResult result;
    try {
        result = profile(grid, alpha, evaluator);
    } catch (const std::exception& e) {
        throw CliError(kExitData, e.what());
    }

    std::ofstream tsv(out);
    if (!tsv) throw CliError(kExitData, "cannot write " + out);
    tsv << "trees\tpsi\tk\ttarget_fpr\tn_threshold\tindex_bits\tTPR\tTNR\tPR_AUC\trho\treward\tbest\n";
    for (size_t i = 0; i < result.table.size(); ++i) {
        const auto& e = result.table[i];
        tsv << e.candidate.trees << '\t' << e.candidate.psi << '\t' << e.candidate.k << '\t'
            << e.candidate.target_fpr << '\t' << e.candidate.n_threshold << '\t'
            << e.candidate.index_bits1 << '\t' << e.metrics.tpr << '\t' << e.metrics.tnr
            << '\t' << e.metrics.pr_auc << '\t' << e.metrics.rho << '\t' << e.reward << '\t'
            << (i == result.best_index ? 1 : 0) << '\n';
    }
    write_manifest(out, "profile", {{"train", train_path}, {"val", val_path}}, common.seed,
                   json{{"grid_size", grid.size()}, {"alpha", alpha},
                        {"best_index", result.best_index},
                        {"best_reward", result.table[result.best_index].reward}});
    const auto& best = result.table[result.best_index];
    std::cout << "best: trees=" << best.candidate.trees << " psi=" << best.candidate.psi
              << " k=" << best.candidate.k << " reward=" << best.reward << " -> " << out
              << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Burst-level anomaly whitelisting: distillation, rule compilation and "
                 "data-plane replay"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);

    CommonArgs common;

    // gen-synth
    auto* gen = app.add_subcommand("gen-synth", "generate a synthetic labeled trace");
    std::string gen_out = "trace.jsonl";
    size_t gen_benign = 40, gen_attack = 8, gen_bursts = 6;
    uint32_t gen_uniform = 0;
    gen->add_option("--out", gen_out, "output trace path");
    gen->add_option("--seed", common.seed, "generator seed");
    gen->add_option("--benign-flows", gen_benign, "benign flow count");
    gen->add_option("--attack-flows", gen_attack, "attack flow count");
    gen->add_option("--bursts", gen_bursts, "bursts per flow");
    gen->add_option("--uniform", gen_uniform,
                    "emit uniform back-to-back bursts of exactly this many packets");

    // train-ae
    auto* tae = app.add_subcommand("train-ae", "train the autoencoder teacher ensemble");
    std::string tae_trace, tae_out = "teacher.json";
    tae->add_option("--trace", tae_trace, "benign training trace")->required();
    tae->add_option("--out", tae_out, "output model path");
    tae->add_option("--config", common.config_path, "config file");
    tae->add_option("--seed", common.seed, "training seed");

    // train-iforest
    auto* tif = app.add_subcommand("train-iforest", "train the isolation forest");
    std::string tif_trace, tif_out = "forest.json";
    bool tif_pl = false;
    tif->add_option("--trace", tif_trace, "benign training trace")->required();
    tif->add_option("--out", tif_out, "output model path");
    tif->add_option("--config", common.config_path, "config file");
    tif->add_option("--seed", common.seed, "training seed");
    tif->add_flag("--pl", tif_pl, "train on packet-level features (early-packet model)");

    // distill
    auto* dis = app.add_subcommand("distill", "embed teacher errors into the forest leaves");
    std::string dis_model, dis_teacher, dis_trace, dis_out = "distilled.json";
    dis->add_option("--model", dis_model, "iforest model file")->required();
    dis->add_option("--teacher", dis_teacher, "teacher ensemble file")->required();
    dis->add_option("--trace", dis_trace, "benign training trace")->required();
    dis->add_option("--out", dis_out, "output model path");
    dis->add_option("--config", common.config_path, "config file");
    dis->add_option("--seed", common.seed, "augmentation seed");

    // compile-rules
    auto* cr = app.add_subcommand("compile-rules", "compile whitelist range rules");
    std::string cr_model, cr_pl_model, cr_out = "rules.json", cr_tsv;
    cr->add_option("--model", cr_model, "distilled model file")->required();
    cr->add_option("--pl-model", cr_pl_model, "packet-level model for early packets");
    cr->add_option("--out", cr_out, "output rules path");
    cr->add_option("--tsv", cr_tsv, "also write a flat TSV export");
    cr->add_option("--config", common.config_path, "config file");
    cr->add_option("--seed", common.seed, "seed recorded in the manifest");

    // replay
    auto* rp = app.add_subcommand("replay", "replay a trace through the pipeline simulator");
    std::string rp_trace, rp_rules, rp_model, rp_out = "verdicts.jsonl", rp_stats;
    std::string rp_strategy = "atomic";
    bool rp_closed_loop = false;
    rp->add_option("--trace", rp_trace, "input trace")->required();
    rp->add_option("--rules", rp_rules, "compiled rule set")->required();
    rp->add_option("--model", rp_model, "distilled model for continuous scores");
    rp->add_option("--out", rp_out, "verdict log (JSONL)");
    rp->add_option("--stats", rp_stats, "stats report (JSON)");
    rp->add_option("--strategy", rp_strategy, "atomic | resubmit_all | both");
    rp->add_flag("--closed-loop", rp_closed_loop, "run the blacklist controller inline");
    rp->add_option("--config", common.config_path, "config file");
    rp->add_option("--seed", common.seed, "seed recorded in the manifest");

    // evaluate
    auto* ev = app.add_subcommand("evaluate", "compute metrics from a verdict log");
    std::string ev_verdicts, ev_out = "metrics.json";
    ev->add_option("--verdicts", ev_verdicts, "verdict log from replay")->required();
    ev->add_option("--out", ev_out, "metrics report path");

    // profile
    auto* pf = app.add_subcommand("profile", "grid-search configurations by reward");
    std::string pf_train, pf_val, pf_out = "profile.tsv";
    pf->add_option("--trace", pf_train, "benign training trace")->required();
    pf->add_option("--val-trace", pf_val, "labeled validation trace")->required();
    pf->add_option("--out", pf_out, "report TSV path");
    pf->add_option("--config", common.config_path, "config file");
    pf->add_option("--seed", common.seed, "training seed");

    // compare-strategies
    auto* cs = app.add_subcommand("compare-strategies",
                                  "resubmission vs loopback-mirror accounting");
    std::string cs_trace, cs_rules, cs_out = "strategies.json";
    cs->add_option("--trace", cs_trace, "input trace")->required();
    cs->add_option("--rules", cs_rules, "compiled rule set")->required();
    cs->add_option("--out", cs_out, "report path");
    cs->add_option("--config", common.config_path, "config file");
    cs->add_option("--seed", common.seed, "seed recorded in the manifest");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed())
            return cmd_gen_synth(gen_out, common, gen_benign, gen_attack, gen_bursts,
                                 gen_uniform);
        if (tae->parsed()) return cmd_train_ae(tae_trace, tae_out, common);
        if (tif->parsed()) return cmd_train_iforest(tif_trace, tif_out, common, tif_pl);
        if (dis->parsed())
            return cmd_distill(dis_model, dis_teacher, dis_trace, dis_out, common);
        if (cr->parsed())
            return cmd_compile_rules(cr_model, cr_pl_model, cr_out, cr_tsv, common);
        if (rp->parsed())
            return cmd_replay(rp_trace, rp_rules, rp_model, rp_out, rp_stats, rp_strategy,
                              rp_closed_loop, common);
        if (ev->parsed()) return cmd_evaluate(ev_verdicts, ev_out);
        if (pf->parsed()) return cmd_profile(pf_train, pf_val, pf_out, common);
        if (cs->parsed()) return cmd_compare_strategies(cs_trace, cs_rules, cs_out, common);
    } catch (const CliError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.code;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
    return 0;
}

#include <catch2/catch_amalgamated.hpp>

#include <set>

#include <flowsift/metrics.hpp>
#include <flowsift/pipeline.hpp>
#include <flowsift/synthetic.hpp>

using namespace flowsift;

namespace {

WhitelistRuleSet accept_all(const FeatureSchema& schema) {
    WhitelistRuleSet rs;
    rs.schema = schema;
    WhitelistRule rule;
    for (size_t f = 0; f < schema.size(); ++f)
        rule.bounds.emplace_back(0, int64_t(schema.domain_max(f)));
    rs.rules.push_back(std::move(rule));
    return rs;
}

WhitelistRuleSet reject_all(const FeatureSchema& schema) {
    WhitelistRuleSet rs;
    rs.schema = schema;
    return rs;
}

PipelineConfig base_config(WhitelistRuleSet bl, WhitelistRuleSet pl) {
    PipelineConfig cfg;
    cfg.rules = CombinedRuleSet{std::move(bl), std::move(pl)};
    return cfg;
}

PacketRecord pkt(const FiveTuple& t, uint64_t ts, uint16_t len = 100,
                 const std::string& label = "benign") {
    return PacketRecord{ts, t, len, label};
}

}  // namespace

TEST_CASE("blacklisted packets drop before any register access") {
    auto cfg = base_config(accept_all(small_bl_schema()), accept_all(pl_port_schema()));
    Pipeline pipe(cfg);
    FiveTuple t{1, 2, 3, 80, 6};
    pipe.install_blacklist(t, 0);

    auto res = pipe.process_packet(pkt(t, 100), 0);
    CHECK(res.outcome == PacketOutcome::dropped_blacklist);
    CHECK(pipe.stats().blacklist_hits == 1);
    // No slot was opened: nothing to flush.
    CHECK(pipe.flush(1000).empty());
    CHECK(pipe.stats().bursts_closed == 0);
}

TEST_CASE("a 15-packet whitelisted burst: one normal digest, one cpu mirror, one loopback") {
    auto cfg = base_config(accept_all(small_bl_schema()), accept_all(pl_port_schema()));
    Pipeline pipe(cfg);
    std::vector<Digest> digests;
    pipe.set_digest_hook([&](const Digest& d, Pipeline&) { digests.push_back(d); });

    FiveTuple t{10, 20, 1234, 80, 6};
    for (int i = 0; i < 15; ++i) {
        auto res = pipe.process_packet(pkt(t, uint64_t(i) * 1'000'000), size_t(i));
        if (i < 14) CHECK(res.closed.empty());
    }
    REQUIRE(digests.size() == 1);
    CHECK(digests[0].verdict == Verdict::normal);
    CHECK(pipe.stats().mirrors_to_cpu == 1);
    CHECK(pipe.stats().mirrors_to_loopback == 1);
    CHECK(pipe.stats().digests_normal == 1);
    CHECK(pipe.stats().digests_malicious == 0);
    CHECK(pipe.stats().register_discipline_violations == 0);
}

TEST_CASE("a burst missing the whitelist sends a malicious digest and no cpu mirror") {
    auto cfg = base_config(reject_all(small_bl_schema()), accept_all(pl_port_schema()));
    Pipeline pipe(cfg);
    std::vector<Digest> digests;
    pipe.set_digest_hook([&](const Digest& d, Pipeline&) { digests.push_back(d); });

    FiveTuple t{10, 20, 1234, 80, 6};
    for (int i = 0; i < 15; ++i) pipe.process_packet(pkt(t, uint64_t(i) * 1'000'000), size_t(i));
    REQUIRE(digests.size() == 1);
    CHECK(digests[0].verdict == Verdict::malicious);
    CHECK(pipe.stats().mirrors_to_cpu == 0);
    CHECK(pipe.stats().digests_malicious == 1);
}

TEST_CASE("normal digests can be suppressed while cpu mirrors continue") {
    auto cfg = base_config(accept_all(small_bl_schema()), accept_all(pl_port_schema()));
    cfg.suppress_normal_digests = true;
    Pipeline pipe(cfg);
    std::vector<Digest> digests;
    pipe.set_digest_hook([&](const Digest& d, Pipeline&) { digests.push_back(d); });
    FiveTuple t{10, 20, 1234, 80, 6};
    for (int i = 0; i < 15; ++i) pipe.process_packet(pkt(t, uint64_t(i) * 1'000'000), size_t(i));
    CHECK(digests.empty());
    CHECK(pipe.stats().mirrors_to_cpu == 1);
}

TEST_CASE("an empty trace replays to empty outputs and zero stats") {
    auto cfg = base_config(accept_all(small_bl_schema()), accept_all(pl_port_schema()));
    auto result = replay_trace({}, cfg);
    CHECK(result.packets.empty());
    CHECK(result.bursts.empty());
    CHECK(result.digests.empty());
    CHECK(result.stats.packets_in == 0);
    CHECK(result.stats.bursts_closed == 0);
}

TEST_CASE("benign-only traffic with a universal whitelist yields no malicious digests") {
    TraceGenConfig tcfg;
    tcfg.attack_flows = 0;
    tcfg.benign_flows = 20;
    auto trace = generate_trace(tcfg);
    auto cfg = base_config(accept_all(small_bl_schema()), accept_all(pl_port_schema()));
    auto result = replay_trace(trace, cfg);
    CHECK(result.stats.digests_malicious == 0);
    CHECK(result.stats.bursts_closed > 0);
    for (const auto& d : result.digests) CHECK(d.verdict == Verdict::normal);
    CHECK(result.stats.register_discipline_violations == 0);
}

TEST_CASE("digest accounting: one digest per closed burst") {
    TraceGenConfig tcfg;
    tcfg.benign_flows = 15;
    tcfg.attack_flows = 5;
    auto trace = generate_trace(tcfg);
    auto cfg = base_config(accept_all(small_bl_schema()), accept_all(pl_port_schema()));
    auto result = replay_trace(trace, cfg);
    CHECK(result.stats.digests_normal + result.stats.digests_malicious ==
          result.stats.bursts_closed);
    CHECK(result.digests.size() == result.stats.bursts_closed);
    CHECK(result.bursts.size() == result.stats.bursts_closed);
}

TEST_CASE("per-burst packet indices partition the placed packets") {
    TraceGenConfig tcfg;
    tcfg.benign_flows = 10;
    tcfg.attack_flows = 3;
    auto trace = generate_trace(tcfg);
    auto cfg = base_config(accept_all(small_bl_schema()), accept_all(pl_port_schema()));
    auto result = replay_trace(trace, cfg);

    std::set<size_t> collided;
    for (const auto& pv : result.packets)
        if (pv.collision) collided.insert(pv.index);
    std::set<size_t> covered;
    for (const auto& bv : result.bursts)
        for (size_t idx : bv.packet_indices) {
            CHECK_FALSE(covered.count(idx));
            covered.insert(idx);
        }
    CHECK(covered.size() + collided.size() == trace.size());
}

TEST_CASE("pipeline burst verdicts equal offline extraction plus rule matching") {
    TraceGenConfig tcfg;
    tcfg.benign_flows = 25;
    tcfg.attack_flows = 6;
    tcfg.seed = 77;
    auto trace = generate_trace(tcfg);

    // Arbitrary nontrivial rules: both routes must agree whatever they say.
    WhitelistRuleSet bl;
    bl.schema = small_bl_schema();
    bl.rules.push_back(WhitelistRule{{{0, 12}, {0, 2500}, {0, 9000}}});
    auto cfg = base_config(bl, accept_all(pl_port_schema()));
    auto online = replay_trace(trace, cfg);

    BurstEngine engine(cfg.hash, cfg.burst);
    struct OfflineBurst {
        FeatureVector features;
        int verdict;
    };
    std::vector<OfflineBurst> offline;
    size_t offline_collisions = 0;
    auto handle = [&](const BurstEvent& ev) {
        if (ev.kind == BurstEvent::Kind::collision_fallback) ++offline_collisions;
        if (ev.kind != BurstEvent::Kind::closed) return;
        FeatureVector v = burst_to_features(*ev.features, bl.schema);
        offline.push_back({v, match_rules(bl, v)});
    };
    for (const auto& p : trace)
        for (const auto& ev : engine.ingest_packet(p)) handle(ev);
    for (const auto& ev : engine.flush()) handle(ev);

    REQUIRE(online.stats.collisions == offline_collisions);
    REQUIRE(online.stats.collisions == 0);  // tables sized far above flow count
    REQUIRE(offline.size() == online.bursts.size());
    for (size_t i = 0; i < offline.size(); ++i) {
        CHECK(offline[i].features == online.bursts[i].features);
        int online_verdict = online.bursts[i].verdict == Verdict::malicious ? 1 : 0;
        CHECK(offline[i].verdict == online_verdict);
    }
}

TEST_CASE("atomic strategy never touches a register twice per traversal") {
    TraceGenConfig tcfg;
    tcfg.benign_flows = 20;
    tcfg.attack_flows = 5;
    auto trace = generate_trace(tcfg);
    auto cfg = base_config(accept_all(small_bl_schema()), accept_all(pl_port_schema()));
    cfg.strategy = RegisterStrategy::atomic;
    auto result = replay_trace(trace, cfg);
    CHECK(result.stats.register_discipline_violations == 0);
}

TEST_CASE("strategy comparison: resubmissions versus loopback mirrors") {
    SECTION("resubmit_all resubmits every original packet") {
        TraceGenConfig tcfg;
        tcfg.benign_flows = 10;
        tcfg.attack_flows = 0;
        auto trace = generate_trace(tcfg);
        auto cfg = base_config(accept_all(small_bl_schema()), accept_all(pl_port_schema()));
        cfg.strategy = RegisterStrategy::resubmit_all;
        auto result = replay_trace(trace, cfg);
        CHECK(result.stats.resubmissions == result.stats.packets_in);
    }
    SECTION("uniform 15-packet bursts mirror exactly one packet in fifteen") {
        auto trace = generate_uniform_burst_trace(10, 6, 15, 3);
        auto cfg = base_config(accept_all(small_bl_schema()), accept_all(pl_port_schema()));
        auto report = compare_strategies(trace, cfg);
        CHECK(report.resubmit_fraction == 1.0);
        CHECK(report.mirror_fraction == Catch::Approx(1.0 / 15.0).epsilon(1e-12));
        CHECK(report.reduction >= 0.8);
    }
    SECTION("reduction at least 80% on the bundled bursty trace") {
        TraceGenConfig tcfg;
        tcfg.benign_flows = 25;
        tcfg.attack_flows = 8;
        auto trace = generate_trace(tcfg);
        auto cfg = base_config(accept_all(small_bl_schema()), accept_all(pl_port_schema()));
        auto report = compare_strategies(trace, cfg);
        CHECK(report.reduction >= 0.8);
    }
}

TEST_CASE("arithmetic modes change feature values, never burst boundaries") {
    TraceGenConfig tcfg;
    tcfg.benign_flows = 15;
    tcfg.attack_flows = 5;
    tcfg.seed = 99;
    auto trace = generate_trace(tcfg);
    FeatureSchema schema = default_bl_schema();
    WhitelistRuleSet bl;
    bl.schema = schema;
    // Bounds generous enough that benign bursts survive the approximation
    // noise bands while attack bursts stay far outside them.
    bl.rules.push_back(WhitelistRule{{{0, 12}, {0, 2500}, {0, 31}, {64, 224},
                                      {0, 63}, {0, 4095}, {0, 1023}, {0, 9000}}});
    auto cfg = base_config(bl, accept_all(pl_port_schema()));

    cfg.arithmetic = ArithmeticMode::exact;
    auto exact = replay_trace(trace, cfg);
    cfg.arithmetic = ArithmeticMode::shift;
    auto shifted = replay_trace(trace, cfg);
    cfg.arithmetic = ArithmeticMode::logexp;
    cfg.logexp_scaling = 8;
    auto logexp = replay_trace(trace, cfg);

    REQUIRE(shifted.bursts.size() == exact.bursts.size());
    REQUIRE(logexp.bursts.size() == exact.bursts.size());
    size_t shift_diffs = 0, logexp_diffs = 0;
    for (size_t i = 0; i < exact.bursts.size(); ++i) {
        CHECK(shifted.bursts[i].packet_indices == exact.bursts[i].packet_indices);
        CHECK(logexp.bursts[i].packet_indices == exact.bursts[i].packet_indices);
        if (shifted.bursts[i].verdict != exact.bursts[i].verdict) {
            ++shift_diffs;
            CHECK(shifted.bursts[i].features != exact.bursts[i].features);
        }
        if (logexp.bursts[i].verdict != exact.bursts[i].verdict) {
            ++logexp_diffs;
            CHECK(logexp.bursts[i].features != exact.bursts[i].features);
        }
    }
    // A flipped verdict must be explained by a feature value crossing a rule
    // boundary (checked above), and flips stay the exception.
    INFO("shift diffs " << shift_diffs << ", logexp diffs " << logexp_diffs << " of "
                        << exact.bursts.size());
    CHECK(shift_diffs <= exact.bursts.size() / 4);
    CHECK(logexp_diffs <= exact.bursts.size() / 4);
}

TEST_CASE("collision fallback classifies by PL rules alone") {
    // One-slot tables force the third distinct flow into collision.
    auto cfg = base_config(reject_all(small_bl_schema()), accept_all(pl_port_schema()));
    cfg.hash.a1 = 1;
    cfg.hash.a2 = 1;
    Pipeline pipe(cfg);

    std::mt19937_64 rng(5);
    size_t collisions = 0;
    uint64_t ts = 0;
    for (int i = 0; i < 64 && collisions == 0; ++i) {
        FiveTuple t{uint32_t(rng()), uint32_t(rng()), uint16_t(rng()), 80, 6};
        auto res = pipe.process_packet(pkt(t, ts), size_t(i));
        ts += 1000;
        if (res.collision) {
            ++collisions;
            CHECK(res.pl_label == 0);  // port 80 matches the universal PL rule
            CHECK(res.outcome == PacketOutcome::forwarded);
        }
    }
    CHECK(collisions > 0);
    CHECK(pipe.stats().collisions == collisions);
}

TEST_CASE("out-of-order packets are rejected") {
    auto cfg = base_config(accept_all(small_bl_schema()), accept_all(pl_port_schema()));
    Pipeline pipe(cfg);
    FiveTuple t{1, 2, 3, 80, 6};
    pipe.process_packet(pkt(t, 1000), 0);
    CHECK_THROWS_AS(pipe.process_packet(pkt(t, 999), 1), std::runtime_error);
}

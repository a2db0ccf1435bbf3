#include <catch2/catch_amalgamated.hpp>

#include <map>
#include <random>

#include <flowsift/burst.hpp>

using namespace flowsift;

namespace {

FiveTuple random_tuple(std::mt19937_64& rng) {
    return FiveTuple{uint32_t(rng()), uint32_t(rng()), uint16_t(rng()), uint16_t(rng()),
                     uint8_t(rng() % 2 ? 6 : 17)};
}

PacketRecord pkt(const FiveTuple& t, uint64_t ts_ns, uint16_t len = 100) {
    return PacketRecord{ts_ns, t, len, std::nullopt};
}

}  // namespace

TEST_CASE("bi-hash is invariant under direction reversal") {
    BiHashConfig cfg;
    std::mt19937_64 rng(1);
    for (int i = 0; i < 20'000; ++i) {
        FiveTuple t = random_tuple(rng);
        FiveTuple r = reverse_five_tuple(t);
        for (BiHashKind k : {BiHashKind::H, BiHashKind::H1, BiHashKind::H2})
            CHECK(bi_hash(t, cfg, k) == bi_hash(r, cfg, k));
    }
}

TEST_CASE("bi-hash is deterministic and seed-sensitive") {
    BiHashConfig cfg;
    std::mt19937_64 rng(2);
    FiveTuple t = random_tuple(rng);
    CHECK(bi_hash(t, cfg, BiHashKind::H1) == bi_hash(t, cfg, BiHashKind::H1));
    BiHashConfig other = cfg;
    other.seed1 ^= 0xdeadbeef;
    CHECK(bi_hash(t, cfg, BiHashKind::H1) != bi_hash(t, other, BiHashKind::H1));
}

TEST_CASE("bi-hash 16-bit index collision rate sits near the birthday estimate") {
    BiHashConfig cfg;
    std::mt19937_64 rng(3);
    const int pairs = 100'000;
    int collisions = 0;
    for (int i = 0; i < pairs; ++i) {
        FiveTuple a = random_tuple(rng);
        FiveTuple b = random_tuple(rng);
        if (a == b || a == reverse_five_tuple(b)) continue;
        uint32_t ha = bi_hash(a, cfg, BiHashKind::H1) & 0xffff;
        uint32_t hb = bi_hash(b, cfg, BiHashKind::H1) & 0xffff;
        if (ha == hb) ++collisions;
    }
    double rate = double(collisions) / pairs;
    double expected = 1.0 / 65536.0;
    CHECK(rate <= expected * 2.0);
    // Zero collisions over 1e5 pairs would itself be suspicious (p ~ 0.2).
    CHECK(rate >= expected / 4.0);
}

TEST_CASE("table placement prefers table 1, falls back, then collides") {
    BiHashConfig cfg;
    cfg.a1 = cfg.a2 = 8;
    std::vector<BurstSlot> t1(cfg.table1_size()), t2(cfg.table2_size());
    std::mt19937_64 rng(4);

    FiveTuple f1 = random_tuple(rng);
    auto p1 = table_place(f1, flow_id_of(f1, cfg), t1, t2, cfg);
    CHECK(p1.kind == PlaceResult::Kind::placed1);
    CHECK(p1.was_free);

    // Same flow again: still table 1, slot no longer free.
    auto p1b = table_place(f1, flow_id_of(f1, cfg), t1, t2, cfg);
    CHECK(p1b.kind == PlaceResult::Kind::placed1);
    CHECK_FALSE(p1b.was_free);

    // Search a second flow whose table-1 index matches but whose id differs.
    size_t idx1 = bi_hash(f1, cfg, BiHashKind::H1) & (cfg.table1_size() - 1);
    FiveTuple f2;
    for (;;) {
        f2 = random_tuple(rng);
        if ((bi_hash(f2, cfg, BiHashKind::H1) & (cfg.table1_size() - 1)) == idx1 &&
            flow_id_of(f2, cfg) != flow_id_of(f1, cfg))
            break;
    }
    auto p2 = table_place(f2, flow_id_of(f2, cfg), t1, t2, cfg);
    CHECK(p2.kind == PlaceResult::Kind::placed2);

    // Third flow hitting f1's table-1 slot and f2's table-2 slot: collision.
    size_t idx2 = bi_hash(f2, cfg, BiHashKind::H2) & (cfg.table2_size() - 1);
    FiveTuple f3;
    for (;;) {
        f3 = random_tuple(rng);
        if ((bi_hash(f3, cfg, BiHashKind::H1) & (cfg.table1_size() - 1)) != idx1) continue;
        if ((bi_hash(f3, cfg, BiHashKind::H2) & (cfg.table2_size() - 1)) != idx2) continue;
        if (flow_id_of(f3, cfg) == flow_id_of(f1, cfg)) continue;
        if (flow_id_of(f3, cfg) == flow_id_of(f2, cfg)) continue;
        break;
    }
    auto p3 = table_place(f3, flow_id_of(f3, cfg), t1, t2, cfg);
    CHECK(p3.kind == PlaceResult::Kind::collision);
}

TEST_CASE("timeout checks in exact mode") {
    BurstConfig cfg;  // idle 1 s, active 15 s
    BurstSlot slot;
    slot.seed_with(pkt(FiveTuple{1, 2, 3, 4, 6}, 0));

    CHECK_FALSE(check_timeouts(slot, 0, cfg).idle);  // zero gap

    slot.last_ts = 0;
    auto f = check_timeouts(slot, 2'000'000'000, cfg);
    CHECK(f.idle);
    CHECK_FALSE(f.active);

    slot.first_ts = 0;
    slot.last_ts = 16'000'000'000;
    CHECK(check_timeouts(slot, 16'000'000'001, cfg).active);
}

TEST_CASE("timeout checks reproduce the 32-bit msb subtraction trick") {
    BurstConfig cfg;
    cfg.time_mode = TimeMode::truncated32;
    cfg.unit_ns = uint64_t(1) << 16;

    // Spec fixture: threshold 15258 units (~1 s), elapsed 30518 units.
    uint64_t unit = cfg.unit_ns;
    BurstSlot slot;
    slot.seed_with(pkt(FiveTuple{1, 2, 3, 4, 6}, 0));
    slot.first_ts = slot.last_ts = 0;
    uint64_t now = 30518 * unit;
    auto f = check_timeouts(slot, now, cfg);

    // Independent 32-bit modular oracle.
    uint32_t thr = uint32_t(cfg.delta_idle_ns / unit);
    REQUIRE(thr == 15258);
    uint64_t diff = (uint64_t(thr) + (uint64_t(1) << 32) - 30518) & 0xffffffffULL;
    bool oracle_idle = (diff >> 31) != 0;
    CHECK(oracle_idle);
    CHECK(f.idle == oracle_idle);
}

TEST_CASE("truncated32 agrees with exact64 on unit-aligned timestamps") {
    BurstConfig exact_cfg;
    BurstConfig trunc_cfg;
    trunc_cfg.time_mode = TimeMode::truncated32;
    uint64_t unit = trunc_cfg.unit_ns;

    std::mt19937_64 rng(5);
    for (int i = 0; i < 5000; ++i) {
        uint64_t first = (rng() % 100'000) * unit;
        uint64_t last = first + (rng() % 400'000) * unit;   // up to ~26 s active
        uint64_t now = last + (rng() % 60'000) * unit;      // up to ~4 s idle
        BurstSlot slot;
        slot.stored_flow_id = 1;
        slot.first_ts = first;
        slot.last_ts = last;
        auto fe = check_timeouts(slot, now, exact_cfg);
        auto ft = check_timeouts(slot, now, trunc_cfg);
        CHECK(fe.idle == ft.idle);
        CHECK(fe.active == ft.active);
    }
}

TEST_CASE("idle gap closes a burst and the trigger packet starts the next") {
    BiHashConfig hcfg;
    BurstConfig bcfg;  // idle 1 s
    BurstEngine engine(hcfg, bcfg);
    FiveTuple t{10, 20, 30, 40, 6};

    auto e1 = engine.ingest_packet(pkt(t, 0));
    REQUIRE(e1.size() == 1);
    CHECK(e1[0].kind == BurstEvent::Kind::started);

    auto e2 = engine.ingest_packet(pkt(t, 500'000'000));
    REQUIRE(e2.size() == 1);
    CHECK(e2[0].kind == BurstEvent::Kind::continued);

    auto e3 = engine.ingest_packet(pkt(t, 2'000'000'000));
    REQUIRE(e3.size() == 2);
    CHECK(e3[0].kind == BurstEvent::Kind::closed);
    CHECK(e3[0].reason == BurstCloseReason::idle);
    REQUIRE(e3[0].features.has_value());
    CHECK(e3[0].features->pkt_count == 2);
    CHECK(e3[1].kind == BurstEvent::Kind::started);
}

TEST_CASE("packet-count threshold closes the burst with the closing packet inside") {
    BiHashConfig hcfg;
    BurstConfig bcfg;  // n_threshold 15
    BurstEngine engine(hcfg, bcfg);
    FiveTuple t{11, 22, 33, 44, 17};

    std::vector<BurstEvent> last;
    for (int i = 0; i < 15; ++i) last = engine.ingest_packet(pkt(t, uint64_t(i) * 1'000'000));
    REQUIRE(last.size() == 1);
    CHECK(last[0].kind == BurstEvent::Kind::closed);
    CHECK(last[0].reason == BurstCloseReason::count);
    REQUIRE(last[0].features.has_value());
    CHECK(last[0].features->pkt_count == 15);

    // Slot was cleared; the 16th packet starts a fresh burst.
    auto next = engine.ingest_packet(pkt(t, 16'000'000));
    REQUIRE(next.size() == 1);
    CHECK(next[0].kind == BurstEvent::Kind::started);
}

TEST_CASE("flush closes a single-packet burst") {
    BurstEngine engine(BiHashConfig{}, BurstConfig{});
    FiveTuple t{1, 2, 3, 4, 6};
    engine.ingest_packet(pkt(t, 123));
    auto events = engine.flush();
    REQUIRE(events.size() == 1);
    CHECK(events[0].kind == BurstEvent::Kind::closed);
    CHECK(events[0].features->pkt_count == 1);
    CHECK(engine.flush().empty());
}

TEST_CASE("segmentation partitions a flow's packets across bursts") {
    BiHashConfig hcfg;
    BurstConfig bcfg;
    bcfg.n_threshold = 5;
    BurstEngine engine(hcfg, bcfg);
    FiveTuple t{99, 98, 97, 96, 6};

    std::mt19937_64 rng(6);
    uint64_t ts = 0;
    const int n_packets = 500;
    uint64_t total_closed_pkts = 0;
    for (int i = 0; i < n_packets; ++i) {
        ts += rng() % 2 ? 10'000'000 : 1'600'000'000;  // mixes gaps above/below idle
        for (auto& ev : engine.ingest_packet(pkt(t, ts)))
            if (ev.kind == BurstEvent::Kind::closed) total_closed_pkts += ev.features->pkt_count;
    }
    for (auto& ev : engine.flush())
        if (ev.kind == BurstEvent::Kind::closed) total_closed_pkts += ev.features->pkt_count;
    CHECK(total_closed_pkts == n_packets);
}

TEST_CASE("non-monotone packet timestamps are rejected") {
    BurstEngine engine(BiHashConfig{}, BurstConfig{});
    FiveTuple t{1, 2, 3, 4, 6};
    engine.ingest_packet(pkt(t, 1000));
    CHECK_THROWS_AS(engine.ingest_packet(pkt(t, 999)), std::runtime_error);
}

TEST_CASE("burst feature finalization") {
    FiveTuple t{1, 2, 3, 4, 6};

    SECTION("single 100 B packet") {
        BurstSlot slot;
        slot.seed_with(pkt(t, 42, 100));
        BurstFeatures f = finalize_burst_features(slot);
        CHECK(f.pkt_count == 1);
        CHECK(f.mean_pkt_size == 100.0);
        CHECK(f.std_pkt_size == 0.0);
        CHECK(f.duration_ns == 0);
        CHECK(f.mean_ipd_ns == 0.0);
        CHECK(f.std_ipd_ns == 0.0);
    }

    SECTION("sizes 100 and 300") {
        BurstSlot slot;
        slot.seed_with(pkt(t, 0, 100));
        slot.accumulate(pkt(t, 10, 300));
        BurstFeatures f = finalize_burst_features(slot);
        CHECK(f.mean_pkt_size == 200.0);
        CHECK(f.var_pkt_size == 10'000.0);
        CHECK(f.std_pkt_size == 100.0);
    }

    SECTION("eight constant 150 B packets") {
        BurstSlot slot;
        slot.seed_with(pkt(t, 0, 150));
        for (int i = 1; i < 8; ++i) slot.accumulate(pkt(t, uint64_t(i) * 1000, 150));
        BurstFeatures f = finalize_burst_features(slot);
        CHECK(f.burst_size == 1200);
        CHECK(f.mean_pkt_size == 150.0);
        CHECK(f.std_pkt_size == 0.0);
    }
}

TEST_CASE("finalized variance matches a two-pass reference") {
    FiveTuple t{5, 6, 7, 8, 17};
    std::mt19937_64 rng(9);
    for (int rep = 0; rep < 200; ++rep) {
        int n = 1 + int(rng() % 14);
        std::vector<uint16_t> sizes;
        std::vector<uint64_t> times;
        uint64_t ts = rng() % 1000;
        BurstSlot slot;
        for (int i = 0; i < n; ++i) {
            uint16_t len = uint16_t(40 + rng() % 1400);
            sizes.push_back(len);
            times.push_back(ts);
            if (i == 0)
                slot.seed_with(pkt(t, ts, len));
            else
                slot.accumulate(pkt(t, ts, len));
            ts += 1 + rng() % 1'000'000;
        }
        BurstFeatures f = finalize_burst_features(slot);

        double mean = 0;
        for (auto s : sizes) mean += s;
        mean /= n;
        double var = 0;
        for (auto s : sizes) var += (s - mean) * (s - mean);
        var /= n;
        CHECK(f.var_pkt_size >= 0.0);
        CHECK(f.mean_pkt_size == Catch::Approx(mean).epsilon(1e-12));
        CHECK(f.var_pkt_size == Catch::Approx(var).margin(1e-6));
        if (n > 1) {
            double mg = 0;
            for (size_t i = 1; i < times.size(); ++i) mg += double(times[i] - times[i - 1]);
            mg /= (n - 1);
            CHECK(f.mean_ipd_ns == Catch::Approx(mg).epsilon(1e-12));
        }
    }
}

TEST_CASE("schema projection floors integer features and honors widths") {
    FiveTuple t{1, 2, 3, 443, 6};
    BurstSlot slot;
    slot.seed_with(pkt(t, 0, 100));
    slot.accumulate(pkt(t, 1'500'000, 301));
    BurstFeatures bf = finalize_burst_features(slot);
    FeatureSchema schema = default_bl_schema();
    FeatureVector v = burst_to_features(bf, schema);
    REQUIRE(v.size() == 8);
    CHECK(v[schema.index_of("pkt_count")] == 2.0);
    CHECK(v[schema.index_of("burst_size")] == 401.0);
    CHECK(v[schema.index_of("mean_pkt_size")] == 200.0);  // floor(200.5)
    CHECK(v[schema.index_of("std_pkt_size")] == 63.0);    // floor(100.5) clamps to 2^6-1
    CHECK(v[schema.index_of("duration_ms")] == 1.0);      // floor(1.5 ms)
    CHECK(v[schema.index_of("dst_port")] == 443.0);
    for (size_t i = 0; i < v.size(); ++i) CHECK(v[i] == std::floor(v[i]));
}

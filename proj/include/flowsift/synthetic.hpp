#pragma once

// Seed-deterministic synthetic data: Gaussian benign bursts with shifted
// anomalies, both as feature vectors (model-level work) and as packet traces
// (pipeline replay). The paper's datasets are external captures; this stands
// in for them at desk scale.

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "burst.hpp"
#include "traffic.hpp"

namespace flowsift {

struct FeatureProfile {
    std::map<std::string, std::pair<double, double>> gaussians;  // name -> (mean, sigma)
    std::vector<double> port_pool;  // used for a "dst_port" feature if present
};

// Benign cluster, keyed by feature name so any schema subset works. Spreads
// cover a healthy fraction of the default schema's integer domains.
inline FeatureProfile benign_profile() {
    FeatureProfile p;
    p.gaussians = {
        {"pkt_count", {8, 2}},      {"burst_size", {1200, 350}},
        {"duration_ms", {14, 3}},   {"duration_us", {14'000, 3000}},
        {"mean_pkt_size", {150, 25}}, {"std_pkt_size", {14, 5}},
        {"mean_ipd_us", {2000, 400}}, {"std_ipd_us", {300, 100}},
    };
    p.port_pool = {80, 443, 8080, 53};
    return p;
}

// Anomalies: compressed bursts of outsized packets on unusual ports, outside
// the benign support on several axes at once.
inline FeatureProfile anomaly_profile() {
    FeatureProfile p;
    p.gaussians = {
        {"pkt_count", {6, 1}},      {"burst_size", {3600, 200}},
        {"duration_ms", {1, 1}},    {"duration_us", {700, 150}},
        {"mean_pkt_size", {240, 10}}, {"std_pkt_size", {3, 1}},
        {"mean_ipd_us", {60, 15}},  {"std_ipd_us", {8, 3}},
    };
    p.port_pool = {6667, 23, 31'337};
    return p;
}

inline std::vector<FeatureVector> sample_features(const FeatureProfile& profile,
                                                  const FeatureSchema& schema, size_t n,
                                                  std::mt19937_64& rng) {
    std::vector<FeatureVector> X(n, FeatureVector(schema.size()));
    for (auto& x : X) {
        for (size_t f = 0; f < schema.size(); ++f) {
            const auto& name = schema.at(f).name;
            double v;
            if (name == "dst_port" && !profile.port_pool.empty()) {
                v = profile.port_pool[rng() % profile.port_pool.size()];
            } else {
                auto it = profile.gaussians.find(name);
                if (it == profile.gaussians.end())
                    throw std::invalid_argument("feature profile has no entry for " + name);
                std::normal_distribution<double> d(it->second.first, it->second.second);
                v = d(rng);
            }
            v = std::clamp(v, 0.0, schema.domain_max(f));
            if (schema.at(f).integer) v = std::round(v);
            x[f] = v;
        }
    }
    return X;
}

struct FeatureDataset {
    std::vector<FeatureVector> X;
    std::vector<int> y;  // 1 = anomaly
};

// Mixed evaluation set at the given contamination ratio.
inline FeatureDataset sample_mixed_features(const FeatureSchema& schema, size_t n,
                                            double contamination, uint64_t seed) {
    std::mt19937_64 rng(seed);
    size_t n_anom = size_t(std::round(contamination * double(n)));
    FeatureDataset ds;
    auto benign = sample_features(benign_profile(), schema, n - n_anom, rng);
    auto anom = sample_features(anomaly_profile(), schema, n_anom, rng);
    for (auto& x : benign) {
        ds.X.push_back(std::move(x));
        ds.y.push_back(0);
    }
    for (auto& x : anom) {
        ds.X.push_back(std::move(x));
        ds.y.push_back(1);
    }
    // Deterministic shuffle so labels are not positional.
    std::vector<size_t> order(ds.X.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    FeatureDataset shuffled;
    for (size_t i : order) {
        shuffled.X.push_back(std::move(ds.X[i]));
        shuffled.y.push_back(ds.y[i]);
    }
    return shuffled;
}

// ---------------------------------------------------------------------------
// Packet traces

struct TraceGenConfig {
    uint64_t seed = 1;
    size_t benign_flows = 40;
    size_t attack_flows = 8;
    size_t bursts_per_flow = 6;
    uint64_t start_gap_ns = 3'000'000;  // stagger between flow starts

    // Benign bursts: modest size, idle-gap separated.
    uint32_t benign_pkts_lo = 3, benign_pkts_hi = 12;
    double benign_size_mean = 150, benign_size_sigma = 15;
    uint64_t benign_ipd_ns = 2'000'000;      // ~2 ms
    uint64_t benign_gap_ns = 1'500'000'000;  // > idle timeout

    // Attack bursts: few but huge packets at machine-gun pacing on distinct
    // ports. The shape (low count, outsized bytes) stays visible even after
    // min-max clamping squashes single-axis excursions.
    uint32_t attack_pkts_lo = 4, attack_pkts_hi = 8;
    double attack_size_mean = 1000, attack_size_sigma = 40;
    uint64_t attack_ipd_ns = 50'000;  // 50 us
    uint64_t attack_gap_ns = 1'200'000'000;

    std::vector<uint16_t> benign_ports{80, 443, 8080, 53};
    std::vector<uint16_t> attack_ports{6667, 23, 31'337};
};

inline std::vector<PacketRecord> generate_trace(const TraceGenConfig& cfg) {
    std::mt19937_64 rng(cfg.seed);
    std::vector<PacketRecord> packets;

    auto emit_flow = [&](const FiveTuple& flow, const std::string& label, bool attack,
                         uint64_t start_ts) {
        std::normal_distribution<double> size_d(
            attack ? cfg.attack_size_mean : cfg.benign_size_mean,
            attack ? cfg.attack_size_sigma : cfg.benign_size_sigma);
        uint64_t ts = start_ts;
        for (size_t b = 0; b < cfg.bursts_per_flow; ++b) {
            uint32_t lo = attack ? cfg.attack_pkts_lo : cfg.benign_pkts_lo;
            uint32_t hi = attack ? cfg.attack_pkts_hi : cfg.benign_pkts_hi;
            uint32_t n = lo + uint32_t(rng() % (hi - lo + 1));
            uint64_t ipd = attack ? cfg.attack_ipd_ns : cfg.benign_ipd_ns;
            for (uint32_t i = 0; i < n; ++i) {
                double len = std::clamp(size_d(rng), 40.0, 1500.0);
                packets.push_back({ts, flow, uint16_t(len), label});
                ts += ipd + rng() % (ipd / 2 + 1);
            }
            ts += attack ? cfg.attack_gap_ns : cfg.benign_gap_ns;
            ts += rng() % 200'000'000;
        }
    };

    uint64_t start = 0;
    for (size_t i = 0; i < cfg.benign_flows; ++i) {
        FiveTuple flow{0x0a000000u | uint32_t(rng() % 65536),
                       0xc0a80000u | uint32_t(rng() % 65536),
                       uint16_t(20'000 + rng() % 20'000),
                       cfg.benign_ports[rng() % cfg.benign_ports.size()],
                       uint8_t(rng() % 2 ? 6 : 17)};
        emit_flow(flow, "benign", false, start);
        start += cfg.start_gap_ns;
    }
    for (size_t i = 0; i < cfg.attack_flows; ++i) {
        FiveTuple flow{0xac100000u | uint32_t(rng() % 65536),
                       0xc0a80000u | uint32_t(rng() % 65536),
                       uint16_t(40'000 + rng() % 20'000),
                       cfg.attack_ports[rng() % cfg.attack_ports.size()],
                       6};
        emit_flow(flow, "malicious", true, start);
        start += cfg.start_gap_ns;
    }

    std::stable_sort(packets.begin(), packets.end(),
                     [](const PacketRecord& a, const PacketRecord& b) {
                         return a.ts_ns < b.ts_ns;
                     });
    return packets;
}

// Flows made of exact n-packet back-to-back bursts (resubmission accounting).
inline std::vector<PacketRecord> generate_uniform_burst_trace(size_t flows, size_t bursts,
                                                              uint32_t pkts_per_burst,
                                                              uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<PacketRecord> packets;
    uint64_t ts = 0;
    for (size_t f = 0; f < flows; ++f) {
        FiveTuple flow{0x0a000000u | uint32_t(rng() % 65536),
                       0xc0a80000u | uint32_t(rng() % 65536),
                       uint16_t(20'000 + rng() % 20'000), 80, 6};
        for (size_t b = 0; b < bursts; ++b) {
            for (uint32_t i = 0; i < pkts_per_burst; ++i) {
                packets.push_back({ts, flow, 100, "benign"});
                ts += 1'000'000;  // 1 ms, well under the idle timeout
            }
            ts += 2'000'000'000;  // bursts separated by idle gaps
        }
    }
    std::stable_sort(packets.begin(), packets.end(),
                     [](const PacketRecord& a, const PacketRecord& b) {
                         return a.ts_ns < b.ts_ns;
                     });
    return packets;
}

// Burst feature vectors harvested from a trace with the offline engine.
inline std::vector<FeatureVector> extract_burst_features(const std::vector<PacketRecord>& trace,
                                                         const FeatureSchema& schema,
                                                         const BiHashConfig& hash_cfg,
                                                         const BurstConfig& burst_cfg) {
    BurstEngine engine(hash_cfg, burst_cfg);
    std::vector<FeatureVector> out;
    auto handle = [&](const BurstEvent& ev) {
        if (ev.kind == BurstEvent::Kind::closed)
            out.push_back(burst_to_features(*ev.features, schema));
    };
    for (const auto& p : trace)
        for (const auto& ev : engine.ingest_packet(p)) handle(ev);
    for (const auto& ev : engine.flush()) handle(ev);
    return out;
}

}  // namespace flowsift

#pragma once

// Bi-hash addressing, double hash table placement, burst segmentation and
// burst-level feature computation.

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "approx_math.hpp"
#include "traffic.hpp"

namespace flowsift {

struct BiHashConfig {
    uint64_t seed1 = 0x243f6a8885a308d3ULL;   // H1, first table
    uint64_t seed2 = 0x13198a2e03707344ULL;   // H2, second table
    uint64_t seed_id = 0xa4093822299f31d0ULL; // H, flow id
    int a1 = 16;  // index bits, first table
    int a2 = 16;  // index bits, second table

    void validate() const {
        if (a1 < 1 || a1 > 24 || a2 < 1 || a2 > 24)
            throw std::invalid_argument("index bit widths must lie in [1,24]");
    }
    size_t table1_size() const { return size_t(1) << a1; }
    size_t table2_size() const { return size_t(1) << a2; }
};

enum class BiHashKind { H, H1, H2 };

namespace detail {

inline uint32_t keyed_half_hash(uint32_t ip, uint16_t port, uint8_t proto, uint64_t seed) {
    uint64_t key = (uint64_t(ip) << 24) | (uint64_t(port) << 8) | proto;
    return uint32_t(mix64(key ^ seed));
}

}  // namespace detail

// hash(dst side) XOR hash(src side) under one seed; using the same keyed hash
// on both sides makes the value invariant under direction reversal.
inline uint32_t bi_hash(const FiveTuple& t, const BiHashConfig& cfg, BiHashKind which) {
    uint64_t seed = which == BiHashKind::H1   ? cfg.seed1
                    : which == BiHashKind::H2 ? cfg.seed2
                                              : cfg.seed_id;
    uint32_t hd = detail::keyed_half_hash(t.dst_ip, t.dst_port, t.protocol, seed);
    uint32_t hs = detail::keyed_half_hash(t.src_ip, t.src_port, t.protocol, seed);
    return hd ^ hs;
}

// H masked to a1+a2 bits; 0 is reserved as the free-slot marker.
inline uint32_t flow_id_of(const FiveTuple& t, const BiHashConfig& cfg) {
    int bits = cfg.a1 + cfg.a2;
    uint32_t mask = bits >= 32 ? 0xffffffffu : ((uint32_t(1) << bits) - 1);
    uint32_t id = bi_hash(t, cfg, BiHashKind::H) & mask;
    return id == 0 ? 1 : id;
}

enum class TimeMode { exact64, truncated32 };

struct BurstConfig {
    uint64_t delta_idle_ns = 1'000'000'000ULL;
    uint64_t delta_active_ns = 15'000'000'000ULL;
    uint32_t n_threshold = 15;
    TimeMode time_mode = TimeMode::exact64;
    uint64_t unit_ns = uint64_t(1) << 16;  // truncated32 timestamp unit

    void validate() const {
        if (n_threshold < 2) throw std::invalid_argument("n_threshold must be >= 2");
        if (time_mode == TimeMode::truncated32) {
            if (delta_idle_ns / unit_ns > 0xffffffffULL ||
                delta_active_ns / unit_ns > 0xffffffffULL)
                throw std::invalid_argument("timeout thresholds do not fit 32 bits in unit_ns");
        }
    }
};

struct BurstSlot {
    uint32_t stored_flow_id = 0;  // 0 <=> free
    uint64_t first_ts = 0;
    uint64_t last_ts = 0;
    uint32_t pkt_count = 0;
    uint64_t burst_size = 0;    // sum of ip_len
    uint64_t sum_sz_sq = 0;
    uint16_t min_sz = 0;
    uint16_t max_sz = 0;
    uint64_t sum_ipd = 0;       // over the pkt_count-1 gaps, ns
    uint64_t sum_ipd_sq = 0;
    uint64_t min_ipd = 0;
    uint64_t max_ipd = 0;
    uint16_t dst_port = 0;      // from the first packet of the burst
    uint8_t protocol = 0;

    void reset() { *this = BurstSlot{}; }

    void seed_with(const PacketRecord& p) {
        first_ts = last_ts = p.ts_ns;
        pkt_count = 1;
        burst_size = p.ip_len;
        sum_sz_sq = uint64_t(p.ip_len) * p.ip_len;
        min_sz = max_sz = p.ip_len;
        sum_ipd = sum_ipd_sq = 0;
        min_ipd = std::numeric_limits<uint64_t>::max();
        max_ipd = 0;
        dst_port = p.five_tuple.dst_port;
        protocol = p.five_tuple.protocol;
    }

    void accumulate(const PacketRecord& p) {
        uint64_t gap = p.ts_ns - last_ts;
        sum_ipd += gap;
        sum_ipd_sq += gap * gap;
        min_ipd = std::min(min_ipd, gap);
        max_ipd = std::max(max_ipd, gap);
        last_ts = p.ts_ns;
        ++pkt_count;
        burst_size += p.ip_len;
        sum_sz_sq += uint64_t(p.ip_len) * p.ip_len;
        min_sz = std::min(min_sz, p.ip_len);
        max_sz = std::max(max_sz, p.ip_len);
    }
};

struct TimeoutFlags {
    bool idle = false;
    bool active = false;
    bool any() const { return idle || active; }
};

namespace detail {

// (threshold - duration) on 32-bit registers; msb set <=> duration > threshold.
inline bool msb_exceeds(uint32_t threshold_units, uint32_t duration_units) {
    uint32_t diff = threshold_units - duration_units;
    return (diff >> 31) != 0;
}

inline uint32_t trunc_ts(uint64_t ts_ns, uint64_t unit_ns) {
    return uint32_t((ts_ns / unit_ns) & 0xffffffffULL);
}

}  // namespace detail

inline TimeoutFlags check_timeouts(const BurstSlot& slot, uint64_t now_ns,
                                   const BurstConfig& cfg) {
    TimeoutFlags f;
    if (cfg.time_mode == TimeMode::exact64) {
        f.idle = now_ns - slot.last_ts > cfg.delta_idle_ns;
        f.active = slot.last_ts - slot.first_ts > cfg.delta_active_ns;
    } else {
        uint32_t now = detail::trunc_ts(now_ns, cfg.unit_ns);
        uint32_t first = detail::trunc_ts(slot.first_ts, cfg.unit_ns);
        uint32_t last = detail::trunc_ts(slot.last_ts, cfg.unit_ns);
        uint32_t idle_thr = uint32_t(cfg.delta_idle_ns / cfg.unit_ns);
        uint32_t active_thr = uint32_t(cfg.delta_active_ns / cfg.unit_ns);
        f.idle = detail::msb_exceeds(idle_thr, now - last);
        f.active = detail::msb_exceeds(active_thr, last - first);
    }
    return f;
}

struct BurstFeatures {
    uint32_t pkt_count = 0;
    uint64_t burst_size = 0;
    uint64_t duration_ns = 0;
    double mean_pkt_size = 0;
    double var_pkt_size = 0;
    double std_pkt_size = 0;
    uint16_t min_pkt_size = 0;
    uint16_t max_pkt_size = 0;
    double mean_ipd_ns = 0;
    double var_ipd_ns = 0;
    double std_ipd_ns = 0;
    uint64_t min_ipd_ns = 0;
    uint64_t max_ipd_ns = 0;
    uint16_t dst_port = 0;
    uint8_t protocol = 0;
};

// Exact-mode statistics from slot accumulators. Jitter features are defined
// over the pkt_count-1 gaps and are zero for a single-packet burst.
inline BurstFeatures finalize_burst_features(const BurstSlot& slot) {
    if (slot.pkt_count < 1) throw std::invalid_argument("empty burst slot");
    BurstFeatures f;
    f.pkt_count = slot.pkt_count;
    f.burst_size = slot.burst_size;
    f.duration_ns = slot.last_ts - slot.first_ts;
    double n = double(slot.pkt_count);
    f.mean_pkt_size = double(slot.burst_size) / n;
    f.var_pkt_size = double(slot.sum_sz_sq) / n - f.mean_pkt_size * f.mean_pkt_size;
    if (f.var_pkt_size < 0) f.var_pkt_size = 0;
    f.std_pkt_size = std::sqrt(f.var_pkt_size);
    f.min_pkt_size = slot.min_sz;
    f.max_pkt_size = slot.max_sz;
    if (slot.pkt_count > 1) {
        double g = double(slot.pkt_count - 1);
        f.mean_ipd_ns = double(slot.sum_ipd) / g;
        f.var_ipd_ns = double(slot.sum_ipd_sq) / g - f.mean_ipd_ns * f.mean_ipd_ns;
        if (f.var_ipd_ns < 0) f.var_ipd_ns = 0;
        f.std_ipd_ns = std::sqrt(f.var_ipd_ns);
        f.min_ipd_ns = slot.min_ipd;
        f.max_ipd_ns = slot.max_ipd;
    }
    f.dst_port = slot.dst_port;
    f.protocol = slot.protocol;
    return f;
}

enum class ArithmeticMode { exact, shift, logexp };

// Projects burst statistics onto a schema by feature name. Integer features
// are floored. In shift/logexp modes the division-based size statistics are
// recomputed with data-plane arithmetic; features the approximation cannot
// produce (ipd statistics) fall back to exact values.
inline FeatureVector burst_to_features(const BurstFeatures& bf, const FeatureSchema& schema,
                                       ArithmeticMode mode = ArithmeticMode::exact,
                                       unsigned logexp_scaling = 1,
                                       const LogExpDivider* divider = nullptr) {
    double mean_sz = bf.mean_pkt_size, var_sz = bf.var_pkt_size, std_sz = bf.std_pkt_size;
    if (mode == ArithmeticMode::shift &&
        (bf.pkt_count == 2 || bf.pkt_count == 4 || bf.pkt_count == 8 || bf.pkt_count == 16)) {
        uint64_t sum_sq = uint64_t(std::llround(
            (var_sz + mean_sz * mean_sz) * double(bf.pkt_count)));
        ShiftStats s = approx_stats_shift(bf.burst_size, sum_sq, bf.pkt_count);
        mean_sz = double(s.avg);
        var_sz = double(s.var);
        std_sz = double(s.std);
    } else if (mode == ArithmeticMode::logexp && bf.pkt_count >= 1) {
        LogExpDivider local(logexp_scaling);
        const LogExpDivider& div = divider ? *divider : local;
        uint64_t sum_sq = uint64_t(std::llround(
            (bf.var_pkt_size + bf.mean_pkt_size * bf.mean_pkt_size) * double(bf.pkt_count)));
        if (bf.burst_size >= 1) mean_sz = div.divide(bf.burst_size, bf.pkt_count);
        double avg_sq = sum_sq >= 1 ? div.divide(sum_sq, bf.pkt_count) : 0.0;
        uint64_t m = uint64_t(mean_sz);
        uint64_t sq = mathunit_square(m);
        var_sz = avg_sq > double(sq) ? avg_sq - double(sq) : 0.0;
        std_sz = double(mathunit_isqrt(uint64_t(var_sz)));
    }

    FeatureVector v(schema.size(), 0.0);
    for (size_t i = 0; i < schema.size(); ++i) {
        const auto& spec = schema.at(i);
        double val = 0;
        if (spec.name == "pkt_count") val = bf.pkt_count;
        else if (spec.name == "burst_size") val = double(bf.burst_size);
        else if (spec.name == "duration_ms") val = double(bf.duration_ns) / 1'000'000.0;
        else if (spec.name == "duration_us") val = double(bf.duration_ns) / 1000.0;
        else if (spec.name == "duration_ns") val = double(bf.duration_ns);
        else if (spec.name == "mean_pkt_size") val = mean_sz;
        else if (spec.name == "var_pkt_size") val = var_sz;
        else if (spec.name == "std_pkt_size") val = std_sz;
        else if (spec.name == "min_pkt_size") val = bf.min_pkt_size;
        else if (spec.name == "max_pkt_size") val = bf.max_pkt_size;
        else if (spec.name == "mean_ipd_us") val = bf.mean_ipd_ns / 1000.0;
        else if (spec.name == "std_ipd_us") val = bf.std_ipd_ns / 1000.0;
        else if (spec.name == "min_ipd_us") val = double(bf.min_ipd_ns) / 1000.0;
        else if (spec.name == "max_ipd_us") val = double(bf.max_ipd_ns) / 1000.0;
        else if (spec.name == "dst_port") val = bf.dst_port;
        else if (spec.name == "protocol") val = bf.protocol;
        else throw std::invalid_argument("schema feature not computable from a burst: " +
                                         spec.name);
        if (spec.integer) val = std::floor(val);
        val = std::min(std::max(val, 0.0), schema.domain_max(i));
        v[i] = val;
    }
    return v;
}

// Default 8-feature schema: 7 burst-level statistics plus dstPort. Bit widths
// are sized to the observed feature ranges (profiler-style), so the integer
// domains stay comparable to real value spreads.
inline FeatureSchema default_bl_schema() {
    return FeatureSchema{{
        {"pkt_count", FeatureKind::BL, true, 4},
        {"burst_size", FeatureKind::BL, true, 12},
        {"duration_ms", FeatureKind::BL, true, 5},
        {"mean_pkt_size", FeatureKind::BL, true, 8},
        {"std_pkt_size", FeatureKind::BL, true, 6},
        {"mean_ipd_us", FeatureKind::BL, true, 12},
        {"std_ipd_us", FeatureKind::BL, true, 10},
        {"dst_port", FeatureKind::PL, true, 16},
    }};
}

// Reduced schema used for hardware-style end-to-end runs. The packet-count
// domain matches the default segmentation threshold.
inline FeatureSchema small_bl_schema() {
    return FeatureSchema{{
        {"pkt_count", FeatureKind::BL, true, 4},
        {"burst_size", FeatureKind::BL, true, 12},
        {"dst_port", FeatureKind::PL, true, 16},
    }};
}

inline FeatureSchema pl_port_schema() {
    return FeatureSchema{{{"dst_port", FeatureKind::PL, true, 16}}};
}

// ---------------------------------------------------------------------------
// Offline burst engine

struct PlaceResult {
    enum class Kind { placed1, placed2, collision } kind;
    size_t index = 0;
    bool was_free = false;
};

// Double-table probe: first table wins when its slot is free or already owned
// by this flow; otherwise the second table; otherwise collision.
inline PlaceResult table_place(const FiveTuple& t, uint32_t flow_id,
                               std::vector<BurstSlot>& table1, std::vector<BurstSlot>& table2,
                               const BiHashConfig& cfg) {
    size_t idx1 = bi_hash(t, cfg, BiHashKind::H1) & (cfg.table1_size() - 1);
    BurstSlot& s1 = table1[idx1];
    if (s1.stored_flow_id == 0 || s1.stored_flow_id == flow_id) {
        bool free = s1.stored_flow_id == 0;
        s1.stored_flow_id = flow_id;
        return {PlaceResult::Kind::placed1, idx1, free};
    }
    size_t idx2 = bi_hash(t, cfg, BiHashKind::H2) & (cfg.table2_size() - 1);
    BurstSlot& s2 = table2[idx2];
    if (s2.stored_flow_id == 0 || s2.stored_flow_id == flow_id) {
        bool free = s2.stored_flow_id == 0;
        s2.stored_flow_id = flow_id;
        return {PlaceResult::Kind::placed2, idx2, free};
    }
    return {PlaceResult::Kind::collision, 0, false};
}

enum class BurstCloseReason { idle, active, count };

inline const char* to_string(BurstCloseReason r) {
    switch (r) {
        case BurstCloseReason::idle: return "idle";
        case BurstCloseReason::active: return "active";
        default: return "count";
    }
}

struct BurstEvent {
    enum class Kind { started, continued, closed, collision_fallback } kind;
    FiveTuple flow;
    std::optional<BurstFeatures> features;  // set for closed
    BurstCloseReason reason = BurstCloseReason::idle;
};

class BurstEngine {
public:
    BurstEngine(BiHashConfig hash_cfg, BurstConfig burst_cfg)
        : hash_cfg_(hash_cfg), burst_cfg_(burst_cfg),
          table1_(hash_cfg.table1_size()), table2_(hash_cfg.table2_size()),
          flows1_(hash_cfg.table1_size()), flows2_(hash_cfg.table2_size()) {
        hash_cfg_.validate();
        burst_cfg_.validate();
    }

    std::vector<BurstEvent> ingest_packet(const PacketRecord& p) {
        if (p.ts_ns < last_seen_ts_)
            throw std::runtime_error("ingest_packet: timestamps must be non-decreasing");
        last_seen_ts_ = p.ts_ns;

        std::vector<BurstEvent> events;
        uint32_t id = flow_id_of(p.five_tuple, hash_cfg_);
        PlaceResult placed = table_place(p.five_tuple, id, table1_, table2_, hash_cfg_);
        if (placed.kind == PlaceResult::Kind::collision) {
            events.push_back({BurstEvent::Kind::collision_fallback, p.five_tuple, {}, {}});
            return events;
        }
        bool first_table = placed.kind == PlaceResult::Kind::placed1;
        BurstSlot& slot = first_table ? table1_[placed.index] : table2_[placed.index];
        (first_table ? flows1_ : flows2_)[placed.index] = p.five_tuple;
        if (placed.was_free) {
            slot.seed_with(p);
            events.push_back({BurstEvent::Kind::started, p.five_tuple, {}, {}});
            return events;
        }

        TimeoutFlags to = check_timeouts(slot, p.ts_ns, burst_cfg_);
        if (to.any()) {
            // The timed-out burst closes; this packet seeds the next one.
            BurstEvent closed{BurstEvent::Kind::closed, p.five_tuple,
                              finalize_burst_features(slot),
                              to.idle ? BurstCloseReason::idle : BurstCloseReason::active};
            slot.seed_with(p);
            events.push_back(std::move(closed));
            events.push_back({BurstEvent::Kind::started, p.five_tuple, {}, {}});
            return events;
        }

        slot.accumulate(p);
        if (slot.pkt_count >= burst_cfg_.n_threshold) {
            BurstEvent closed{BurstEvent::Kind::closed, p.five_tuple,
                              finalize_burst_features(slot), BurstCloseReason::count};
            slot.reset();  // hardware clears id/timestamps via the loopback mirror
            events.push_back(std::move(closed));
        } else {
            events.push_back({BurstEvent::Kind::continued, p.five_tuple, {}, {}});
        }
        return events;
    }

    // Closes every open burst (end-of-trace); reason is idle.
    std::vector<BurstEvent> flush() {
        std::vector<BurstEvent> events;
        auto drain = [&](std::vector<BurstSlot>& table, const std::vector<FiveTuple>& flows) {
            for (size_t i = 0; i < table.size(); ++i) {
                BurstSlot& slot = table[i];
                if (slot.stored_flow_id == 0) continue;
                events.push_back({BurstEvent::Kind::closed, flows[i],
                                  finalize_burst_features(slot), BurstCloseReason::idle});
                slot.reset();
            }
        };
        drain(table1_, flows1_);
        drain(table2_, flows2_);
        return events;
    }

    const BiHashConfig& hash_config() const { return hash_cfg_; }
    const BurstConfig& burst_config() const { return burst_cfg_; }

private:
    BiHashConfig hash_cfg_;
    BurstConfig burst_cfg_;
    std::vector<BurstSlot> table1_, table2_;
    std::vector<FiveTuple> flows1_, flows2_;  // offline-side slot annotations
    uint64_t last_seen_ts_ = 0;
};

}  // namespace flowsift

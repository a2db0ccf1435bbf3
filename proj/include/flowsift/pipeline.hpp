#pragma once

// Software model of the match-action data plane: blacklist table, double-hash
// placement, per-register atomic actions with an access audit, burst-close
// whitelist matching, digests, and loopback/resubmission accounting.

#include <array>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <optional>
#include <unordered_map>
#include <vector>

#include "burst.hpp"
#include "rulegen.hpp"

namespace flowsift {

enum class RegisterStrategy { resubmit_all, atomic };

struct PipelineConfig {
    BiHashConfig hash;
    BurstConfig burst;
    CombinedRuleSet rules;
    size_t blacklist_capacity = 1024;
    RegisterStrategy strategy = RegisterStrategy::atomic;
    ArithmeticMode arithmetic = ArithmeticMode::exact;
    unsigned logexp_scaling = 1;
    bool suppress_normal_digests = false;
};

enum class PacketOutcome { forwarded, dropped_blacklist, dropped_pl, flagged };

inline const char* to_string(PacketOutcome o) {
    switch (o) {
        case PacketOutcome::forwarded: return "forwarded";
        case PacketOutcome::dropped_blacklist: return "dropped_blacklist";
        case PacketOutcome::dropped_pl: return "dropped_pl";
        default: return "flagged";
    }
}

enum class Verdict { normal, malicious };

struct Digest {
    FiveTuple five_tuple;
    Verdict verdict = Verdict::normal;
    uint64_t ts_ns = 0;
    BurstFeatures burst_features;
};

struct PipelineStats {
    uint64_t packets_in = 0;
    uint64_t resubmissions = 0;
    uint64_t mirrors_to_loopback = 0;
    uint64_t mirrors_to_cpu = 0;
    uint64_t collisions = 0;
    uint64_t blacklist_hits = 0;
    uint64_t digests_normal = 0;
    uint64_t digests_malicious = 0;
    uint64_t bursts_closed = 0;
    uint64_t outcome_forwarded = 0;
    uint64_t outcome_dropped_blacklist = 0;
    uint64_t outcome_dropped_pl = 0;
    uint64_t outcome_flagged = 0;
    uint64_t register_discipline_violations = 0;  // atomic mode: >1 access/traversal
};

// PL features computable from a single packet.
inline FeatureVector packet_to_features(const PacketRecord& p, const FeatureSchema& schema) {
    FeatureVector v(schema.size());
    for (size_t i = 0; i < schema.size(); ++i) {
        const auto& name = schema.at(i).name;
        double val;
        if (name == "dst_port") val = p.five_tuple.dst_port;
        else if (name == "src_port") val = p.five_tuple.src_port;
        else if (name == "protocol") val = p.five_tuple.protocol;
        else if (name == "ip_len") val = p.ip_len;
        else throw std::invalid_argument("PL schema feature not available on a packet: " + name);
        v[i] = std::min(val, schema.domain_max(i));
    }
    return v;
}

struct BurstVerdict {
    FiveTuple flow;
    uint64_t close_ts = 0;
    BurstCloseReason reason = BurstCloseReason::idle;
    FeatureVector features;        // BL schema projection used for matching
    BurstFeatures raw;
    Verdict verdict = Verdict::normal;
    std::vector<size_t> packet_indices;  // trace positions of member packets
};

struct PacketVerdict {
    size_t index = 0;
    uint64_t ts_ns = 0;
    FiveTuple flow;
    PacketOutcome outcome = PacketOutcome::forwarded;
    std::optional<std::string> ground_truth;
    bool collision = false;
    int pl_label = 0;  // PL whitelist verdict for this packet
};

class Pipeline;
using DigestHook = std::function<void(const Digest&, Pipeline&)>;
using CpuMirrorHook = std::function<void(const FeatureVector&, Pipeline&)>;

class Pipeline {
public:
    explicit Pipeline(PipelineConfig cfg) : cfg_(std::move(cfg)) {
        cfg_.hash.validate();
        cfg_.burst.validate();
        size_t n1 = cfg_.hash.table1_size(), n2 = cfg_.hash.table2_size();
        for (Reg r : {Reg::id, Reg::first_ts, Reg::last_ts, Reg::count, Reg::bl}) {
            regs_[0][size_t(r)].assign(n1, 0);
            regs_[1][size_t(r)].assign(n2, 0);
        }
        bl_state_[0].assign(n1, BurstSlot{});
        bl_state_[1].assign(n2, BurstSlot{});
        open_packets_[0].assign(n1, {});
        open_packets_[1].assign(n2, {});
        open_flow_[0].assign(n1, FiveTuple{});
        open_flow_[1].assign(n2, FiveTuple{});
        if (cfg_.arithmetic == ArithmeticMode::logexp)
            divider_.emplace(cfg_.logexp_scaling, uint64_t(1) << 32);
    }

    struct PacketResult {
        PacketOutcome outcome = PacketOutcome::forwarded;
        bool collision = false;
        int pl_label = 0;
        std::vector<BurstVerdict> closed;
    };

    PacketResult process_packet(const PacketRecord& p, size_t trace_index = 0) {
        if (p.ts_ns < last_ts_)
            throw std::runtime_error("pipeline: packets must arrive in timestamp order");
        last_ts_ = p.ts_ns;
        ++stats_.packets_in;
        begin_traversal();

        PacketResult res;

        // Blacklist exact match precedes any register access.
        if (auto it = blacklist_.find(p.five_tuple); it != blacklist_.end()) {
            it->second.last_hit_ts = p.ts_ns;
            ++it->second.hits;
            ++stats_.blacklist_hits;
            ++stats_.outcome_dropped_blacklist;
            res.outcome = PacketOutcome::dropped_blacklist;
            return res;
        }

        if (cfg_.strategy == RegisterStrategy::resubmit_all) ++stats_.resubmissions;

        uint32_t pkt_id = flow_id_of(p.five_tuple, cfg_.hash);
        size_t s1 = bi_hash(p.five_tuple, cfg_.hash, BiHashKind::H1) & (cfg_.hash.table1_size() - 1);
        size_t s2 = bi_hash(p.five_tuple, cfg_.hash, BiHashKind::H2) & (cfg_.hash.table2_size() - 1);

        // Claim-or-read on the flow-id registers.
        int table = -1;
        size_t sid = 0;
        uint64_t old_id = reg_access(0, Reg::id, s1, [&](uint64_t v) {
            return v == 0 ? uint64_t(pkt_id) : v;
        });
        if (old_id == 0 || old_id == pkt_id) {
            table = 0;
            sid = s1;
        } else {
            uint64_t old_id2 = reg_access(1, Reg::id, s2, [&](uint64_t v) {
                return v == 0 ? uint64_t(pkt_id) : v;
            });
            if (old_id2 == 0 || old_id2 == pkt_id) {
                table = 1;
                sid = s2;
                old_id = old_id2;
            }
        }

        res.pl_label = match_rules(cfg_.rules.pl_rules,
                                   packet_to_features(p, cfg_.rules.pl_rules.schema));

        if (table < 0) {
            // Collision in both tables: PL-only verdict for this packet.
            ++stats_.collisions;
            res.collision = true;
            res.outcome = res.pl_label == 1 ? PacketOutcome::dropped_pl
                                            : PacketOutcome::forwarded;
            bump_outcome(res.outcome);
            return res;
        }

        bool fresh = old_id == 0;

        // last_ts: read old, write now.
        uint64_t old_last = reg_access(table, Reg::last_ts, sid,
                                       [&](uint64_t) { return p.ts_ns; });

        // first_ts action: the timeout test compares the register's own value
        // and metadata (old_last, now), then claims the cell when fresh or on
        // timeout. One access, at most two conditions.
        TimeoutFlags to;
        reg_access(table, Reg::first_ts, sid, [&](uint64_t v) {
            if (!fresh) {
                BurstSlot probe;
                probe.last_ts = old_last;
                probe.first_ts = v;
                to = check_timeouts(probe, p.ts_ns, cfg_.burst);
            }
            return (fresh || to.any()) ? p.ts_ns : v;
        });

        // Packet count: timeout resets to 1; otherwise increment, clearing at
        // the segmentation threshold.
        uint64_t returned_count = 0;
        reg_access(table, Reg::count, sid, [&](uint64_t v) {
            if (fresh || to.any()) {
                returned_count = v;  // closing burst's count (unused when fresh)
                return uint64_t(1);
            }
            uint64_t next = v + 1;
            returned_count = next;
            return next == cfg_.burst.n_threshold ? uint64_t(0) : next;
        });
        bool count_close = !fresh && !to.any() && returned_count == cfg_.burst.n_threshold;

        // BL accumulators behave as one logical register bundle.
        BurstSlot closed_slot;
        bool have_closed = false;
        reg_access(table, Reg::bl, sid, [&](uint64_t gen) {
            BurstSlot& acc = bl_state_[table][sid];
            if (fresh) {
                acc.seed_with(p);
                open_flow_[table][sid] = p.five_tuple;
                open_packets_[table][sid] = {trace_index};
            } else if (to.any()) {
                closed_slot = acc;  // read out the closing burst, reseed
                have_closed = true;
                acc.seed_with(p);
            } else {
                acc.accumulate(p);
                if (count_close) {
                    closed_slot = acc;
                    have_closed = true;
                }
            }
            return gen + 1;
        });

        if (!fresh && !to.any()) open_packets_[table][sid].push_back(trace_index);

        std::vector<size_t> closed_packets;
        FiveTuple closed_flow = open_flow_[table][sid];
        if (have_closed) {
            closed_packets = std::move(open_packets_[table][sid]);
            if (to.any()) {
                // Trigger packet opens the next burst.
                open_flow_[table][sid] = p.five_tuple;
                open_packets_[table][sid] = {trace_index};
            } else {
                open_packets_[table][sid] = {};
            }
        }

        if (count_close) {
            // Mirror to the loopback port; the re-entrant traversal clears the
            // id and timestamp registers so the slot is free again. Under the
            // resubmission strategy the clear rides the mandatory resubmit.
            if (cfg_.strategy == RegisterStrategy::atomic) ++stats_.mirrors_to_loopback;
            begin_traversal();
            reg_access(table, Reg::id, sid, [](uint64_t) { return uint64_t(0); });
            reg_access(table, Reg::first_ts, sid, [](uint64_t) { return uint64_t(0); });
            reg_access(table, Reg::last_ts, sid, [](uint64_t) { return uint64_t(0); });
            bl_state_[table][sid] = BurstSlot{};
        }

        if (have_closed) {
            res.closed.push_back(close_burst(closed_slot, closed_flow, p.ts_ns,
                                             to.any() ? (to.idle ? BurstCloseReason::idle
                                                                 : BurstCloseReason::active)
                                                      : BurstCloseReason::count,
                                             std::move(closed_packets)));
        }

        bool flagged = !res.closed.empty() && res.closed.back().verdict == Verdict::malicious;
        res.outcome = res.pl_label == 1 ? PacketOutcome::dropped_pl
                      : flagged         ? PacketOutcome::flagged
                                        : PacketOutcome::forwarded;
        bump_outcome(res.outcome);
        return res;
    }

    // Closes every open burst (reason idle); end-of-trace epilogue.
    std::vector<BurstVerdict> flush(uint64_t now_ts) {
        std::vector<BurstVerdict> out;
        for (int table = 0; table < 2; ++table) {
            for (size_t i = 0; i < bl_state_[table].size(); ++i) {
                if (regs_[table][size_t(Reg::id)][i] == 0) continue;
                BurstSlot slot = bl_state_[table][i];
                out.push_back(close_burst(slot, open_flow_[table][i], now_ts,
                                          BurstCloseReason::idle,
                                          std::move(open_packets_[table][i])));
                regs_[table][size_t(Reg::id)][i] = 0;
                regs_[table][size_t(Reg::first_ts)][i] = 0;
                regs_[table][size_t(Reg::last_ts)][i] = 0;
                regs_[table][size_t(Reg::count)][i] = 0;
                bl_state_[table][i] = BurstSlot{};
                open_packets_[table][i] = {};
            }
        }
        return out;
    }

    struct BlacklistEntry {
        uint64_t installed_ts = 0;
        uint64_t last_hit_ts = 0;
        uint64_t hits = 0;
        uint64_t sequence = 0;  // install order, FIFO tie-break
    };

    bool install_blacklist(const FiveTuple& t, uint64_t now_ts) {
        if (blacklist_.count(t)) return false;  // idempotent per flow
        blacklist_[t] = BlacklistEntry{now_ts, now_ts, 0, next_sequence_++};
        return true;
    }
    bool erase_blacklist(const FiveTuple& t) { return blacklist_.erase(t) > 0; }
    const std::unordered_map<FiveTuple, BlacklistEntry, FiveTupleHash>& blacklist() const {
        return blacklist_;
    }
    size_t blacklist_capacity() const { return cfg_.blacklist_capacity; }

    // Atomic rule swap between packets.
    void set_rules(CombinedRuleSet rules) { cfg_.rules = std::move(rules); }
    const CombinedRuleSet& rules() const { return cfg_.rules; }

    const PipelineStats& stats() const { return stats_; }
    const PipelineConfig& config() const { return cfg_; }

    void set_digest_hook(DigestHook hook) { digest_hook_ = std::move(hook); }
    void set_cpu_mirror_hook(CpuMirrorHook hook) { cpu_mirror_hook_ = std::move(hook); }

private:
    enum class Reg { id, first_ts, last_ts, count, bl };
    static constexpr size_t kRegKinds = 5;

    void begin_traversal() {
        for (auto& t : access_counts_) t.fill(0);
    }

    uint64_t reg_access(int table, Reg r, size_t index,
                        const std::function<uint64_t(uint64_t)>& action) {
        int& count = access_counts_[table][size_t(r)];
        ++count;
        if (cfg_.strategy == RegisterStrategy::atomic && count > 1)
            ++stats_.register_discipline_violations;
        uint64_t& cell = regs_[table][size_t(r)][index];
        uint64_t old = cell;
        cell = action(old);
        return old;
    }

    void bump_outcome(PacketOutcome o) {
        switch (o) {
            case PacketOutcome::forwarded: ++stats_.outcome_forwarded; break;
            case PacketOutcome::dropped_blacklist: ++stats_.outcome_dropped_blacklist; break;
            case PacketOutcome::dropped_pl: ++stats_.outcome_dropped_pl; break;
            case PacketOutcome::flagged: ++stats_.outcome_flagged; break;
        }
    }

    BurstVerdict close_burst(const BurstSlot& slot, const FiveTuple& flow, uint64_t now_ts,
                             BurstCloseReason reason, std::vector<size_t> packets) {
        ++stats_.bursts_closed;
        BurstVerdict bv;
        bv.flow = flow;
        bv.close_ts = now_ts;
        bv.reason = reason;
        bv.raw = finalize_burst_features(slot);
        bv.features = burst_to_features(bv.raw, cfg_.rules.bl_rules.schema, cfg_.arithmetic,
                                        cfg_.logexp_scaling,
                                        divider_ ? &*divider_ : nullptr);
        bv.verdict = match_rules(cfg_.rules.bl_rules, bv.features) == 0 ? Verdict::normal
                                                                        : Verdict::malicious;
        bv.packet_indices = std::move(packets);

        Digest digest{flow, bv.verdict, now_ts, bv.raw};
        if (bv.verdict == Verdict::malicious) {
            ++stats_.digests_malicious;
            if (digest_hook_) digest_hook_(digest, *this);
        } else {
            ++stats_.mirrors_to_cpu;
            if (cpu_mirror_hook_) cpu_mirror_hook_(bv.features, *this);
            if (!cfg_.suppress_normal_digests) {
                ++stats_.digests_normal;
                if (digest_hook_) digest_hook_(digest, *this);
            }
        }
        return bv;
    }

    PipelineConfig cfg_;
    std::array<std::array<std::vector<uint64_t>, kRegKinds>, 2> regs_;
    std::array<std::vector<BurstSlot>, 2> bl_state_;
    std::array<std::vector<FiveTuple>, 2> open_flow_;
    std::array<std::vector<std::vector<size_t>>, 2> open_packets_;
    std::array<std::array<int, kRegKinds>, 2> access_counts_{};
    std::unordered_map<FiveTuple, BlacklistEntry, FiveTupleHash> blacklist_;
    uint64_t next_sequence_ = 0;
    uint64_t last_ts_ = 0;
    PipelineStats stats_;
    DigestHook digest_hook_;
    CpuMirrorHook cpu_mirror_hook_;
    std::optional<LogExpDivider> divider_;
};

struct ReplayResult {
    std::vector<PacketVerdict> packets;
    std::vector<BurstVerdict> bursts;
    std::vector<Digest> digests;
    PipelineStats stats;
};

inline ReplayResult replay_trace(const std::vector<PacketRecord>& trace, PipelineConfig cfg,
                                 DigestHook controller_hook = nullptr,
                                 CpuMirrorHook mirror_hook = nullptr) {
    Pipeline pipe(std::move(cfg));
    ReplayResult result;
    pipe.set_digest_hook([&](const Digest& d, Pipeline& p) {
        result.digests.push_back(d);
        if (controller_hook) controller_hook(d, p);
    });
    if (mirror_hook) pipe.set_cpu_mirror_hook(mirror_hook);

    for (size_t i = 0; i < trace.size(); ++i) {
        auto res = pipe.process_packet(trace[i], i);
        result.packets.push_back({i, trace[i].ts_ns, trace[i].five_tuple, res.outcome,
                                  trace[i].ground_truth, res.collision, res.pl_label});
        for (auto& bv : res.closed) result.bursts.push_back(std::move(bv));
    }
    uint64_t end_ts = trace.empty() ? 0 : trace.back().ts_ns;
    for (auto& bv : pipe.flush(end_ts)) result.bursts.push_back(std::move(bv));
    result.stats = pipe.stats();
    return result;
}

struct StrategyReport {
    double resubmit_fraction = 0.0;  // resubmit_all strategy
    double mirror_fraction = 0.0;    // atomic strategy
    double reduction = 0.0;          // 1 - mirror/resubmit
    PipelineStats resubmit_stats;
    PipelineStats atomic_stats;
};

inline StrategyReport compare_strategies(const std::vector<PacketRecord>& trace,
                                         PipelineConfig cfg) {
    StrategyReport report;
    cfg.strategy = RegisterStrategy::resubmit_all;
    report.resubmit_stats = replay_trace(trace, cfg).stats;
    cfg.strategy = RegisterStrategy::atomic;
    report.atomic_stats = replay_trace(trace, cfg).stats;
    if (report.resubmit_stats.packets_in > 0) {
        report.resubmit_fraction = double(report.resubmit_stats.resubmissions) /
                                   double(report.resubmit_stats.packets_in);
        report.mirror_fraction = double(report.atomic_stats.mirrors_to_loopback) /
                                 double(report.atomic_stats.packets_in);
        if (report.resubmit_fraction > 0)
            report.reduction = 1.0 - report.mirror_fraction / report.resubmit_fraction;
    }
    return report;
}

}  // namespace flowsift

#pragma once

// Control-plane policies: abnormal-frequency blacklisting with FIFO/LRU
// eviction, online model refresh from mirrored benign bursts, and the
// exhaustive configuration profiler.

#include <algorithm>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <vector>

#include "distill.hpp"
#include "pipeline.hpp"
#include "rulegen.hpp"

namespace flowsift {

struct FlowStats {
    uint64_t bursts = 0;      // N_i
    uint64_t malicious = 0;
    uint64_t last_seen_ts = 0;

    double abnormal_frequency() const {
        return bursts ? double(malicious) / double(bursts) : 0.0;
    }
};

enum class EvictionPolicy { FIFO, LRU };

struct ControllerAction {
    bool installed = false;
    FiveTuple target;
    std::vector<FiveTuple> evicted;
};

// Online retrain settings; the teacher ensemble stays fixed.
struct OnlineUpdateConfig {
    uint32_t trees = 25;
    uint32_t psi = 64;
    uint32_t k = 20;
    uint64_t seed = 1;
    Combiner combiner = Combiner::product;
    double theta_if = 0.5;
    size_t retrain_batch = 10'000;
    size_t window = 50'000;
    size_t cube_cap = 10'000'000;
};

class Controller {
public:
    Controller(double tau, EvictionPolicy policy) : tau_(tau), policy_(policy) {
        if (tau_ < 0.0 || tau_ > 1.0) throw std::invalid_argument("tau must lie in [0,1]");
    }

    // Digest handler: updates per-flow stats and installs a blacklist rule
    // when F > tau with more than one burst seen.
    ControllerAction on_digest(const Digest& d, Pipeline& pipe) {
        ControllerAction action;
        FlowStats& fs = stats_[canonical_flow_key(d.five_tuple)];
        ++fs.bursts;
        if (d.verdict == Verdict::malicious) ++fs.malicious;
        fs.last_seen_ts = d.ts_ns;

        if (fs.abnormal_frequency() > tau_ && fs.bursts > 1) {
            if (pipe.blacklist().count(d.five_tuple)) return action;
            if (pipe.blacklist().size() >= pipe.blacklist_capacity())
                action.evicted = evict(pipe);
            if (pipe.install_blacklist(d.five_tuple, d.ts_ns)) {
                action.installed = true;
                action.target = d.five_tuple;
            }
        }
        return action;
    }

    // Drops one entry per call: FIFO by install order, LRU by last hit;
    // deterministic tie-break on the 5-tuple ordering.
    std::vector<FiveTuple> evict(Pipeline& pipe) {
        const auto& bl = pipe.blacklist();
        if (bl.empty()) return {};
        const FiveTuple* victim = nullptr;
        const Pipeline::BlacklistEntry* victim_entry = nullptr;
        for (const auto& [tuple, entry] : bl) {
            if (!victim) {
                victim = &tuple;
                victim_entry = &entry;
                continue;
            }
            bool better;
            if (policy_ == EvictionPolicy::FIFO) {
                better = entry.sequence < victim_entry->sequence ||
                         (entry.sequence == victim_entry->sequence && tuple < *victim);
            } else {
                better = entry.last_hit_ts < victim_entry->last_hit_ts ||
                         (entry.last_hit_ts == victim_entry->last_hit_ts && tuple < *victim);
            }
            if (better) {
                victim = &tuple;
                victim_entry = &entry;
            }
        }
        FiveTuple evicted = *victim;
        pipe.erase_blacklist(evicted);
        return {evicted};
    }

    // Buffers a mirrored benign burst; retrains when the batch fills.
    bool on_cpu_mirror(const FeatureVector& features, Pipeline& pipe) {
        window_.push_back(features);
        while (window_.size() > update_cfg_.window) window_.pop_front();
        if (window_.size() >= update_cfg_.retrain_batch && teacher_) {
            return online_update(pipe);
        }
        return false;
    }

    // Retrains the forest on the rolling window, re-embeds, recompiles rules
    // and swaps them into the pipeline. A failed retrain leaves the pipeline
    // rules untouched.
    bool online_update(Pipeline& pipe) {
        if (window_.empty() || !teacher_) return false;
        try {
            std::vector<FeatureVector> X(window_.begin(), window_.end());
            uint32_t psi = std::min<uint32_t>(update_cfg_.psi, uint32_t(X.size()));
            if (psi < 2) return false;
            IForestModel forest =
                train_iforest(X, schema_, update_cfg_.trees, psi, update_cfg_.seed);
            DistilledForest df = embed_leaves(forest, *teacher_, X, update_cfg_.k,
                                              update_cfg_.seed, update_cfg_.combiner,
                                              update_cfg_.theta_if);
            WhitelistRuleSet bl = compile_whitelist(df, "", update_cfg_.cube_cap);
            CombinedRuleSet next{bl, pipe.rules().pl_rules};
            pipe.set_rules(std::move(next));
            last_model_ = std::move(df);
            ++updates_applied_;
            window_.clear();
            return true;
        } catch (const std::exception&) {
            return false;  // old rules stay active
        }
    }

    void configure_online_update(FeatureSchema schema, Ensemble teacher,
                                 OnlineUpdateConfig cfg) {
        schema_ = std::move(schema);
        teacher_ = std::move(teacher);
        update_cfg_ = cfg;
    }

    const std::map<FiveTuple, FlowStats>& flow_stats() const { return stats_; }
    size_t window_size() const { return window_.size(); }
    size_t updates_applied() const { return updates_applied_; }
    const std::optional<DistilledForest>& last_model() const { return last_model_; }
    double tau() const { return tau_; }

private:
    double tau_;
    EvictionPolicy policy_;
    std::map<FiveTuple, FlowStats> stats_;
    std::deque<FeatureVector> window_;
    FeatureSchema schema_;
    std::optional<Ensemble> teacher_;
    OnlineUpdateConfig update_cfg_;
    std::optional<DistilledForest> last_model_;
    size_t updates_applied_ = 0;
};

// ---------------------------------------------------------------------------
// Profiler

struct ProfilerCandidate {
    // hyperparameters
    uint32_t trees = 50;
    uint32_t psi = 256;
    uint32_t n_threshold = 15;
    uint64_t delta_idle_ns = 1'000'000'000ULL;
    uint64_t delta_active_ns = 15'000'000'000ULL;
    double target_fpr = 2e-3;
    uint32_t k = 50;
    // hardware parameters
    int index_bits1 = 16;
    int index_bits2 = 16;
    size_t rule_capacity = 4096;
    uint64_t register_capacity_bits = 1ULL << 26;
};

struct CandidateMetrics {
    double tpr = 0, tnr = 0, pr_auc = 0, rho = 0;
};

struct ProfilerEntry {
    ProfilerCandidate candidate;
    CandidateMetrics metrics;
    double reward = 0;
};

struct ProfilerResult {
    size_t best_index = 0;
    std::vector<ProfilerEntry> table;
};

inline double profiler_reward(const CandidateMetrics& m, double alpha) {
    return alpha / 3.0 * (m.tpr + m.tnr + m.pr_auc) + (1.0 - alpha) * (1.0 - m.rho);
}

// Register bits one slot costs under this artifact's accounting: flow id,
// two timestamps, packet count, one 32-bit accumulator per BL feature.
inline uint64_t slot_register_bits(const FeatureSchema& schema) {
    uint64_t bl_features = 0;
    for (const auto& f : schema.features)
        if (f.kind == FeatureKind::BL) ++bl_features;
    return 32 + 32 + 32 + 16 + 32 * bl_features;
}

inline double resource_fraction(size_t rules_used, size_t rule_capacity,
                                uint64_t register_bits_used, uint64_t register_capacity_bits) {
    double r1 = rule_capacity ? double(rules_used) / double(rule_capacity) : 0.0;
    double r2 = register_capacity_bits ? double(register_bits_used) / double(register_capacity_bits)
                                       : 0.0;
    return (r1 + r2) / 2.0;
}

using ProfilerEvaluator = std::function<CandidateMetrics(const ProfilerCandidate&)>;

// Exhaustive sweep; argmax reward, ties to the smaller memory footprint.
inline ProfilerResult profile(const std::vector<ProfilerCandidate>& grid, double alpha,
                              const ProfilerEvaluator& evaluate_candidate) {
    if (grid.empty()) throw std::invalid_argument("profile: empty candidate grid");
    if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("profile: alpha outside [0,1]");
    ProfilerResult result;
    for (const auto& cand : grid) {
        CandidateMetrics m = evaluate_candidate(cand);
        result.table.push_back({cand, m, profiler_reward(m, alpha)});
    }
    for (size_t i = 1; i < result.table.size(); ++i) {
        const auto& best = result.table[result.best_index];
        const auto& cur = result.table[i];
        if (cur.reward > best.reward ||
            (cur.reward == best.reward && cur.metrics.rho < best.metrics.rho))
            result.best_index = i;
    }
    return result;
}

}  // namespace flowsift

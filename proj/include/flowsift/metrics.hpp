#pragma once

// Packet-level evaluation: confusion metrics per attack tag plus PR-AUC by
// trapezoidal integration over the recall-sorted precision-recall curve.

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "pipeline.hpp"

namespace flowsift {

struct EvalSample {
    bool truth_malicious = false;
    std::string tag;      // attack tag; "benign" for negatives
    int predicted = 0;    // 1 = malicious
    double score = 0.0;   // continuous ranking score
};

struct TagMetrics {
    uint64_t tp = 0, fp = 0, tn = 0, fn = 0;
    double tpr = 0, tnr = 0, fpr = 0, fnr = 0, pr_auc = 0;
};

struct MetricsReport {
    std::map<std::string, TagMetrics> per_tag;
    TagMetrics macro;
    uint64_t packets = 0;
    uint64_t collisions = 0;
};

// Area under the precision-recall curve: recall-sorted threshold sweep,
// trapezoids from the (0,1) anchor.
inline double pr_auc(std::vector<std::pair<double, bool>> scored) {
    uint64_t positives = 0;
    for (auto& [s, pos] : scored)
        if (pos) ++positives;
    if (positives == 0) return 0.0;
    std::sort(scored.begin(), scored.end(),
              [](const auto& a, const auto& b) { return a.first > b.first; });
    double auc = 0.0;
    double prev_recall = 0.0, prev_precision = 1.0;
    uint64_t tp = 0, fp = 0;
    size_t i = 0;
    while (i < scored.size()) {
        double s = scored[i].first;
        for (; i < scored.size() && scored[i].first == s; ++i)
            (scored[i].second ? tp : fp)++;
        double recall = double(tp) / double(positives);
        double precision = double(tp) / double(tp + fp);
        auc += (recall - prev_recall) * (precision + prev_precision) / 2.0;
        prev_recall = recall;
        prev_precision = precision;
    }
    return auc;
}

inline MetricsReport evaluate(const std::vector<EvalSample>& samples) {
    MetricsReport report;
    report.packets = samples.size();
    for (const auto& s : samples)
        if (!s.truth_malicious && s.tag != "benign")
            throw std::invalid_argument("benign sample carries an attack tag");

    std::map<std::string, std::vector<const EvalSample*>> by_tag;
    std::vector<const EvalSample*> benign;
    for (const auto& s : samples) {
        if (s.truth_malicious)
            by_tag[s.tag].push_back(&s);
        else
            benign.push_back(&s);
    }

    uint64_t tn = 0, fp = 0;
    for (const auto* s : benign) (s->predicted ? fp : tn)++;

    for (auto& [tag, list] : by_tag) {
        TagMetrics m;
        m.tn = tn;
        m.fp = fp;
        for (const auto* s : list) (s->predicted ? m.tp : m.fn)++;
        m.tpr = m.tp + m.fn ? double(m.tp) / double(m.tp + m.fn) : 0.0;
        m.tnr = m.tn + m.fp ? double(m.tn) / double(m.tn + m.fp) : 0.0;
        m.fpr = 1.0 - m.tnr;
        m.fnr = 1.0 - m.tpr;
        std::vector<std::pair<double, bool>> scored;
        for (const auto* s : list) scored.emplace_back(s->score, true);
        for (const auto* s : benign) scored.emplace_back(s->score, false);
        m.pr_auc = pr_auc(std::move(scored));
        report.per_tag[tag] = m;
    }

    if (by_tag.empty()) {
        // Benign-only evaluation still reports TNR.
        TagMetrics m;
        m.tn = tn;
        m.fp = fp;
        m.tnr = m.tn + m.fp ? double(m.tn) / double(m.tn + m.fp) : 0.0;
        m.fpr = 1.0 - m.tnr;
        report.macro = m;
        return report;
    }

    TagMetrics macro;
    for (const auto& [tag, m] : report.per_tag) {
        macro.tp += m.tp;
        macro.fn += m.fn;
        macro.tpr += m.tpr;
        macro.tnr += m.tnr;
        macro.pr_auc += m.pr_auc;
    }
    macro.tn = tn;
    macro.fp = fp;
    double n = double(report.per_tag.size());
    macro.tpr /= n;
    macro.tnr /= n;
    macro.pr_auc /= n;
    macro.fpr = 1.0 - macro.tnr;
    macro.fnr = 1.0 - macro.tpr;
    report.macro = macro;
    return report;
}

// Joins replay output with ground truth: burst verdicts apply to every packet
// of the burst, collision packets keep their PL verdict, blacklisted packets
// count as predicted-malicious.
inline std::vector<EvalSample> assemble_packet_evals(
    const ReplayResult& replay, const std::vector<PacketRecord>& trace,
    const std::function<double(const FeatureVector&)>& bl_scorer = nullptr,
    const std::function<double(const FeatureVector&)>& pl_scorer = nullptr,
    const FeatureSchema* pl_schema = nullptr) {
    std::vector<EvalSample> samples(trace.size());
    for (size_t i = 0; i < trace.size(); ++i) {
        if (!trace[i].ground_truth)
            throw std::invalid_argument("packet " + std::to_string(i) +
                                        " is missing ground truth");
        samples[i].tag = *trace[i].ground_truth;
        samples[i].truth_malicious = is_malicious_label(samples[i].tag);
    }
    for (const auto& pv : replay.packets) {
        EvalSample& s = samples[pv.index];
        if (pv.outcome == PacketOutcome::dropped_blacklist) {
            s.predicted = 1;
            s.score = 1.0;
        } else if (pv.collision) {
            s.predicted = pv.pl_label;
            s.score = pl_scorer && pl_schema
                          ? pl_scorer(packet_to_features(trace[pv.index], *pl_schema))
                          : double(pv.pl_label);
        }
    }
    for (const auto& bv : replay.bursts) {
        int pred = bv.verdict == Verdict::malicious ? 1 : 0;
        double score = bl_scorer ? bl_scorer(bv.features) : double(pred);
        for (size_t idx : bv.packet_indices) {
            samples[idx].predicted = pred;
            samples[idx].score = score;
        }
    }
    return samples;
}

}  // namespace flowsift

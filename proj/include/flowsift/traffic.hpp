#pragma once

// Packet records, 5-tuples, feature schemas and flat-trace ingestion.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

namespace flowsift {

struct FiveTuple {
    uint32_t src_ip = 0;
    uint32_t dst_ip = 0;
    uint16_t src_port = 0;
    uint16_t dst_port = 0;
    uint8_t protocol = 0;

    bool operator==(const FiveTuple&) const = default;

    auto as_tuple() const {
        return std::tie(src_ip, dst_ip, src_port, dst_port, protocol);
    }
    bool operator<(const FiveTuple& o) const { return as_tuple() < o.as_tuple(); }
};

inline FiveTuple reverse_five_tuple(const FiveTuple& t) {
    return FiveTuple{t.dst_ip, t.src_ip, t.dst_port, t.src_port, t.protocol};
}

// Direction-invariant key for per-flow bookkeeping outside the data plane.
inline FiveTuple canonical_flow_key(const FiveTuple& t) {
    FiveTuple r = reverse_five_tuple(t);
    return r < t ? r : t;
}

namespace detail {

inline uint64_t mix64(uint64_t v) {
    v ^= v >> 33;
    v *= 0xff51afd7ed558ccdULL;
    v ^= v >> 33;
    v *= 0xc4ceb9fe1a85ec53ULL;
    v ^= v >> 33;
    return v;
}

}  // namespace detail

struct FiveTupleHash {
    size_t operator()(const FiveTuple& k) const {
        uint64_t h = detail::mix64((uint64_t(k.src_ip) << 32) | k.dst_ip);
        h ^= detail::mix64((uint64_t(k.src_port) << 24) | (uint64_t(k.dst_port) << 8) |
                           k.protocol);
        return size_t(detail::mix64(h));
    }
};

struct PacketRecord {
    uint64_t ts_ns = 0;
    FiveTuple five_tuple;
    uint16_t ip_len = 20;
    std::optional<std::string> ground_truth;  // "benign" or an attack tag
};

inline bool is_malicious_label(const std::string& label) { return label != "benign"; }

enum class FeatureKind { PL, BL };

struct FeatureSpec {
    std::string name;
    FeatureKind kind = FeatureKind::BL;
    bool integer = true;
    int bit_width = 16;  // 1..64
};

struct FeatureSchema {
    std::vector<FeatureSpec> features;

    size_t size() const { return features.size(); }
    const FeatureSpec& at(size_t i) const { return features.at(i); }

    int index_of(const std::string& name) const {
        for (size_t i = 0; i < features.size(); ++i)
            if (features[i].name == name) return int(i);
        return -1;
    }
    bool all_integer() const {
        return std::all_of(features.begin(), features.end(),
                           [](const FeatureSpec& f) { return f.integer; });
    }
    // Inclusive upper end of the value domain for feature i.
    double domain_max(size_t i) const {
        int w = features[i].bit_width;
        return w >= 64 ? 18446744073709551615.0 : double((uint64_t(1) << w) - 1);
    }
    void validate() const {
        for (size_t i = 0; i < features.size(); ++i) {
            const auto& f = features[i];
            if (f.bit_width < 1 || f.bit_width > 64)
                throw std::invalid_argument("feature " + f.name + ": bit_width out of range");
            for (size_t j = i + 1; j < features.size(); ++j)
                if (features[j].name == f.name)
                    throw std::invalid_argument("duplicate feature name " + f.name);
        }
    }
};

using FeatureVector = std::vector<double>;

// ---------------------------------------------------------------------------
// Trace parsing

inline std::string ip_to_string(uint32_t ip) {
    std::ostringstream os;
    os << (ip >> 24) << '.' << ((ip >> 16) & 0xff) << '.' << ((ip >> 8) & 0xff) << '.'
       << (ip & 0xff);
    return os.str();
}

inline bool ip_from_string(const std::string& s, uint32_t& out) {
    unsigned a, b, c, d;
    char extra;
    if (std::sscanf(s.c_str(), "%u.%u.%u.%u%c", &a, &b, &c, &d, &extra) != 4) return false;
    if (a > 255 || b > 255 || c > 255 || d > 255) return false;
    out = (a << 24) | (b << 16) | (c << 8) | d;
    return true;
}

enum class TraceFormat { jsonl, csv };

struct ParseDiagnostic {
    size_t line = 0;
    std::string message;
};

struct ParseResult {
    std::vector<PacketRecord> records;
    std::vector<ParseDiagnostic> diagnostics;  // malformed lines, skipped
    std::vector<std::string> warnings;
};

namespace detail {

inline bool parse_jsonl_line(const std::string& line, PacketRecord& rec, std::string& err) {
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
        err = "invalid JSON object";
        return false;
    }
    for (const char* field : {"ts_ns", "src_ip", "dst_ip", "src_port", "dst_port", "protocol",
                              "ip_len"}) {
        if (!j.contains(field)) {
            err = std::string("missing required field ") + field;
            return false;
        }
    }
    try {
        rec.ts_ns = j.at("ts_ns").get<uint64_t>();
        if (!ip_from_string(j.at("src_ip").get<std::string>(), rec.five_tuple.src_ip) ||
            !ip_from_string(j.at("dst_ip").get<std::string>(), rec.five_tuple.dst_ip)) {
            err = "bad IP address";
            return false;
        }
        rec.five_tuple.src_port = j.at("src_port").get<uint16_t>();
        rec.five_tuple.dst_port = j.at("dst_port").get<uint16_t>();
        rec.five_tuple.protocol = j.at("protocol").get<uint8_t>();
        rec.ip_len = j.at("ip_len").get<uint16_t>();
        if (j.contains("label")) rec.ground_truth = j.at("label").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        err = e.what();
        return false;
    }
    if (rec.ip_len < 20) {
        err = "ip_len < 20";
        return false;
    }
    return true;
}

inline bool parse_csv_line(const std::string& line, PacketRecord& rec, std::string& err) {
    std::vector<std::string> cols;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            cols.push_back(cur);
            cur.clear();
        } else {
            cur += ch;
        }
    }
    cols.push_back(cur);
    if (cols.size() < 7) {
        err = "expected at least 7 columns";
        return false;
    }
    try {
        rec.ts_ns = std::stoull(cols[0]);
        if (!ip_from_string(cols[1], rec.five_tuple.src_ip) ||
            !ip_from_string(cols[2], rec.five_tuple.dst_ip)) {
            err = "bad IP address";
            return false;
        }
        rec.five_tuple.src_port = uint16_t(std::stoul(cols[3]));
        rec.five_tuple.dst_port = uint16_t(std::stoul(cols[4]));
        rec.five_tuple.protocol = uint8_t(std::stoul(cols[5]));
        rec.ip_len = uint16_t(std::stoul(cols[6]));
    } catch (const std::exception&) {
        err = "non-numeric field";
        return false;
    }
    if (cols.size() > 7 && !cols[7].empty()) rec.ground_truth = cols[7];
    if (rec.ip_len < 20) {
        err = "ip_len < 20";
        return false;
    }
    return true;
}

}  // namespace detail

// Parses a flat trace file. Malformed lines are skipped and reported with their
// line number. Timestamps out of order by at most 1 s are reordered with a
// warning; anything worse throws.
inline ParseResult parse_trace(const std::string& path, TraceFormat format) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open trace file: " + path);

    constexpr uint64_t kReorderWindowNs = 1'000'000'000ULL;
    ParseResult out;
    std::string line;
    size_t line_no = 0;
    uint64_t max_ts = 0;
    bool needs_reorder = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        if (format == TraceFormat::csv && line_no == 1 && line.rfind("ts_ns", 0) == 0)
            continue;  // header row
        PacketRecord rec;
        std::string err;
        bool ok = format == TraceFormat::jsonl ? detail::parse_jsonl_line(line, rec, err)
                                               : detail::parse_csv_line(line, rec, err);
        if (!ok) {
            out.diagnostics.push_back({line_no, err});
            continue;
        }
        if (rec.ts_ns < max_ts) {
            if (max_ts - rec.ts_ns > kReorderWindowNs)
                throw std::runtime_error("line " + std::to_string(line_no) +
                                         ": timestamp out of order by more than 1 s");
            needs_reorder = true;
        }
        max_ts = std::max(max_ts, rec.ts_ns);
        out.records.push_back(std::move(rec));
    }
    if (needs_reorder) {
        out.warnings.push_back("timestamps reordered within 1 s window");
        std::stable_sort(out.records.begin(), out.records.end(),
                         [](const PacketRecord& a, const PacketRecord& b) {
                             return a.ts_ns < b.ts_ns;
                         });
    }
    return out;
}

inline nlohmann::json packet_to_json(const PacketRecord& p) {
    nlohmann::json j{{"ts_ns", p.ts_ns},
                     {"src_ip", ip_to_string(p.five_tuple.src_ip)},
                     {"dst_ip", ip_to_string(p.five_tuple.dst_ip)},
                     {"src_port", p.five_tuple.src_port},
                     {"dst_port", p.five_tuple.dst_port},
                     {"protocol", p.five_tuple.protocol},
                     {"ip_len", p.ip_len}};
    if (p.ground_truth) j["label"] = *p.ground_truth;
    return j;
}

inline void write_trace_jsonl(const std::string& path, const std::vector<PacketRecord>& pkts) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write trace file: " + path);
    for (const auto& p : pkts) out << packet_to_json(p).dump() << '\n';
}

}  // namespace flowsift

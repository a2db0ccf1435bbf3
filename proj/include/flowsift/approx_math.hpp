#pragma once

// Integer-only arithmetic tricks available to the match-action pipeline:
// shift-based division at power-of-two packet counts, a 4-MSB math unit for
// square/sqrt, and range-match log / exact-match exp tables for general
// division.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace flowsift {

// Truncate x to its 4 leading significant bits (the hardware math unit only
// sees a 4-bit mantissa).
inline uint64_t truncate_to_4_msb(uint64_t x) {
    if (x < 16) return x;
    int msb = 63 - __builtin_clzll(x);
    int drop = msb - 3;
    return (x >> drop) << drop;
}

inline uint64_t mathunit_square(uint64_t x) {
    uint64_t t = truncate_to_4_msb(x);
    return t * t;
}

inline uint64_t mathunit_isqrt(uint64_t x) {
    uint64_t t = truncate_to_4_msb(x);
    uint64_t r = uint64_t(std::sqrt(double(t)));
    while (r * r > t) --r;
    while ((r + 1) * (r + 1) <= t) ++r;
    return r;
}

struct ShiftStats {
    uint64_t avg = 0;
    uint64_t avg_sq = 0;
    uint64_t var = 0;
    uint64_t std = 0;
};

// Average / variance / stddev via bit shifts, valid at packet counts 2,4,8,16.
inline ShiftStats approx_stats_shift(uint64_t burst_size, uint64_t sum_sq, uint32_t pkt_count) {
    int shift;
    switch (pkt_count) {
        case 2: shift = 1; break;
        case 4: shift = 2; break;
        case 8: shift = 3; break;
        case 16: shift = 4; break;
        default:
            throw std::invalid_argument("approx_stats_shift: pkt_count must be 2, 4, 8 or 16");
    }
    ShiftStats s;
    s.avg = burst_size >> shift;
    s.avg_sq = sum_sq >> shift;
    uint64_t sq = mathunit_square(s.avg);
    s.var = s.avg_sq > sq ? s.avg_sq - sq : 0;
    s.std = mathunit_isqrt(s.var);
    return s;
}

// log2 range-match table (value v matches entry floor(s*log2 v)) plus an
// exact-match exp table. The exp table stores round(2^(d/s)) for entries whose
// value reaches 1 and the exact dyadic value below that, so the quotient
// estimate stays within its guaranteed band for a << b as well.
class LogExpDivider {
public:
    explicit LogExpDivider(unsigned scaling = 1, uint64_t domain = uint64_t(1) << 16,
                           bool literal_floor_exponent = false)
        : s_(scaling), domain_(domain), literal_(literal_floor_exponent) {
        if (scaling < 1) throw std::invalid_argument("scaling factor must be >= 1");
        // Range boundaries: entry x covers [2^(x/s), 2^((x+1)/s)).
        int max_index = int(std::floor(double(s_) * std::log2(double(domain_))));
        boundaries_.reserve(max_index + 2);
        for (int x = 0; x <= max_index + 1; ++x)
            boundaries_.push_back(pow2_ceil_boundary(x));
        int lo = -max_index, hi = max_index;
        exp_lo_ = lo;
        exp_table_.reserve(hi - lo + 1);
        for (int d = lo; d <= hi; ++d) exp_table_.push_back(exp_entry(d));
    }

    int log_index(uint64_t v) const {
        if (v < 1 || v > domain_) throw std::out_of_range("value outside log table domain");
        // Largest x with boundary[x] <= v.
        int lo = 0, hi = int(boundaries_.size()) - 1;
        while (lo < hi) {
            int mid = (lo + hi + 1) / 2;
            if (boundaries_[mid] <= v)
                lo = mid;
            else
                hi = mid - 1;
        }
        return lo;
    }

    double divide(uint64_t a, uint64_t b) const {
        int i = log_index(a);
        int j = log_index(b);
        return exp_table_.at(size_t(i - j - exp_lo_));
    }

    unsigned scaling() const { return s_; }
    uint64_t domain() const { return domain_; }

private:
    // Smallest integer v with floor(s*log2 v) >= x, i.e. ceil(2^(x/s)).
    uint64_t pow2_ceil_boundary(int x) const {
        long double v = std::pow(2.0L, (long double)(x) / s_);
        uint64_t c = uint64_t(std::ceil(v - 1e-9L));
        // Nudge against floating error: boundary must be the first value whose
        // floor(s*log2) equals x.
        while (c > 1 && (long double)(s_)*std::log2((long double)(c - 1)) >= x) --c;
        while ((long double)(s_)*std::log2((long double)c) < x) ++c;
        return c;
    }

    double exp_entry(int d) const {
        long double v = std::pow(2.0L, (long double)(d) / s_);
        if (literal_) return double(std::pow(2.0L, std::floor((long double)(d) / s_)));
        if (v >= 1.0L) return double(std::round(v));
        return double(v);
    }

    unsigned s_;
    uint64_t domain_;
    bool literal_;
    std::vector<uint64_t> boundaries_;
    std::vector<double> exp_table_;
    int exp_lo_ = 0;
};

inline double approx_divide_logexp(uint64_t a, uint64_t b, unsigned scaling = 1,
                                   uint64_t domain = uint64_t(1) << 16) {
    if (a < 1 || b < 1) throw std::invalid_argument("approx_divide_logexp: operands must be >= 1");
    LogExpDivider div(scaling, domain);
    return div.divide(a, b);
}

}  // namespace flowsift

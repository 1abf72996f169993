#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "hjsafe/common.hpp"

namespace hjsafe {

// Pearson correlation; throws on fewer than two samples or zero variance.
inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw ShapeError("pearson: length mismatch");
    const size_t n = a.size();
    if (n < 2) throw Error("pearson: need at least two samples");
    double ma = 0, mb = 0;
    for (size_t i = 0; i < n; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double saa = 0, sbb = 0, sab = 0;
    for (size_t i = 0; i < n; ++i) {
        const double da = a[i] - ma, db = b[i] - mb;
        saa += da * da;
        sbb += db * db;
        sab += da * db;
    }
    if (saa <= 0 || sbb <= 0) throw Error("pearson: zero variance, correlation undefined");
    return sab / std::sqrt(saa * sbb);
}

// nearest-rank percentile, p in [0, 100]
inline double percentile(std::vector<double> v, double p) {
    if (v.empty()) throw Error("percentile of empty sample");
    std::sort(v.begin(), v.end());
    const double rank = p / 100.0 * (static_cast<double>(v.size()) - 1);
    const size_t lo = static_cast<size_t>(rank);
    const size_t hi = std::min(lo + 1, v.size() - 1);
    const double f = rank - static_cast<double>(lo);
    return v[lo] * (1 - f) + v[hi] * f;
}

inline double median(std::vector<double> v) { return percentile(std::move(v), 50.0); }

}  // namespace hjsafe

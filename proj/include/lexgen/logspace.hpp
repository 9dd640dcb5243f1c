#pragma once

// Log-space probability helpers. All probabilities in this codebase live in
// natural log; -infinity encodes an exact zero. Sums use the usual
// max-subtraction trick so that sequences of a few hundred factors do not
// underflow.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

namespace lexgen {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

inline double log_add(double a, double b) {
    if (a == kNegInf) return b;
    if (b == kNegInf) return a;
    if (a < b) std::swap(a, b);
    return a + std::log1p(std::exp(b - a));
}

inline double log_sum_exp(std::span<const double> xs) {
    double m = kNegInf;
    for (double x : xs) m = std::max(m, x);
    if (m == kNegInf) return kNegInf;
    double s = 0.0;
    for (double x : xs) s += std::exp(x - m);
    return m + std::log(s);
}

// y[i] = logsumexp_j(rows[i*n + j] + x[j]); `rows` is a dense row-major
// matrix combined with a vector, all in log space.
inline void log_matvec(std::span<const double> rows, std::span<const double> x,
                       std::span<double> y) {
    const size_t n = x.size();
    for (size_t i = 0; i < y.size(); ++i) {
        const double* row = rows.data() + i * n;
        double m = kNegInf;
        for (size_t j = 0; j < n; ++j) {
            double v = row[j] + x[j];
            if (v > m) m = v;
        }
        if (m == kNegInf) {
            y[i] = kNegInf;
            continue;
        }
        double s = 0.0;
        for (size_t j = 0; j < n; ++j) s += std::exp(row[j] + x[j] - m);
        y[i] = m + std::log(s);
    }
}

}  // namespace lexgen

#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "core/errors.hpp"

namespace altfl {

// Flat parameter / gradient / activation storage.  All in-memory numerics are
// double: several invariants are checked at tolerances (1e-10 .. 1e-8) that
// single precision cannot hold.  On-disk tensors and the communication cost
// model still use 4-byte floats, which is accounted for where bytes are
// counted, not here.
using Vec = std::vector<double>;

inline double dot(const Vec& a, const Vec& b) {
    if (a.size() != b.size()) throw invalid_argument_error("dot: size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double l2_norm(const Vec& a) {
    double s = 0.0;
    for (double v : a) s += v * v;
    return std::sqrt(s);
}

// y += alpha * x
inline void axpy(double alpha, const Vec& x, Vec& y) {
    if (x.size() != y.size()) throw invalid_argument_error("axpy: size mismatch");
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline void scale_inplace(Vec& a, double alpha) {
    for (double& v : a) v *= alpha;
}

inline Vec sub(const Vec& a, const Vec& b) {
    if (a.size() != b.size()) throw invalid_argument_error("sub: size mismatch");
    Vec out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
    return out;
}

inline bool all_finite(const Vec& a) {
    for (double v : a)
        if (!std::isfinite(v)) return false;
    return true;
}

}  // namespace altfl

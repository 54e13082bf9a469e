#pragma once

#include <cstdint>
#include <vector>

#include "core/model.hpp"
#include "core/rng.hpp"
#include "core/tensor.hpp"

namespace altfl {

// g * min(1, c / ||g||_2)
Vec clip_l2(const Vec& g, double c);

// One DP-SGD update direction for a batch:
//   u = (1/B) * (sum_i clip(g_i, C) + N(0, (sigma * C)^2 I))
// Per-sample gradients are clipped even when sigma == 0; noise is only drawn
// when sigma > 0, so the rng stream is untouched in the noise-free case.
// The caller applies params -= lr * u.  Returns the mean (unclipped) batch
// loss for monitoring.
double dp_sgd_update(const Model& model, const Vec& params,
                     const std::vector<Vec>& xs, const std::vector<int>& ys,
                     double clip_c, double sigma, Rng& rng, Vec& update);

// log(erfc(x)), stable for large positive x where erfc underflows.
double log_erfc(double x);

// Renyi differential privacy of the subsampled Gaussian mechanism at order
// alpha > 1, sampling rate q in [0, 1], noise multiplier sigma > 0.
// Subsampling is treated as Poisson sampling at rate q; shuffle-and-chunk
// batching is accounted at q = B/N as the customary approximation.
double rdp_subsampled_gaussian(double q, double sigma, double alpha);

// Order grid used for the epsilon conversion: 1.25, 1.5, ..., 64 in steps of
// 0.25, then the integers 65..256.
std::vector<double> default_rdp_orders();

struct EpsResult {
    double eps = 0.0;
    double order = 0.0;  // argmin order; 0 when no search happened
};

// (eps, delta)-DP after `steps` compositions:
//   eps = min_alpha [ steps * rdp(q, sigma, alpha) + log(1/delta) / (alpha-1) ].
// sigma == 0 yields eps = +inf; steps == 0 or q == 0 yields eps = 0.
EpsResult dp_epsilon(double q, double sigma, std::uint64_t steps, double delta);
EpsResult dp_epsilon(double q, double sigma, std::uint64_t steps, double delta,
                     const std::vector<double>& orders);

}  // namespace altfl

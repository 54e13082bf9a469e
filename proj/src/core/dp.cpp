#include "core/dp.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "core/errors.hpp"

namespace altfl {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// log(exp(a) + exp(b))
double log_add(double a, double b) {
    if (a == -kInf) return b;
    if (b == -kInf) return a;
    double m = a > b ? a : b;
    return m + std::log1p(std::exp(-std::abs(a - b)));
}

// log(exp(a) - exp(b)), requires a >= b
double log_sub(double a, double b) {
    if (b == -kInf) return a;
    if (a < b) throw diverged_error("rdp: negative intermediate in log-space sum");
    if (a == b) return -kInf;
    return a + std::log1p(-std::exp(b - a));
}

// RDP of the subsampled Gaussian at integer order alpha:
// log A = logsumexp_i [ log C(alpha,i) + i log q + (alpha-i) log(1-q)
//                       + (i^2 - i) / (2 sigma^2) ]
double log_a_int(double q, double sigma, int alpha) {
    double log_a = -kInf;
    double log_q = std::log(q);
    double log_1q = std::log1p(-q);
    for (int i = 0; i <= alpha; ++i) {
        double log_binom = std::lgamma(alpha + 1.0) - std::lgamma(i + 1.0) -
                           std::lgamma(alpha - i + 1.0);
        double t = log_binom + i * log_q + (alpha - i) * log_1q +
                   (static_cast<double>(i) * i - i) / (2.0 * sigma * sigma);
        log_a = log_add(log_a, t);
    }
    return log_a;
}

// Fractional orders use the two-half-line decomposition with erfc terms.
// Terms with alternating-sign generalized binomials are accumulated in log
// space with explicit add/sub.
double log_a_frac(double q, double sigma, double alpha) {
    double log_a0 = -kInf, log_a1 = -kInf;
    double log_q = std::log(q);
    double log_1q = std::log1p(-q);
    double z0 = sigma * sigma * std::log(1.0 / q - 1.0) + 0.5;
    double sq2s = std::numbers::sqrt2 * sigma;

    double log_abs_binom = 0.0;  // log |C(alpha, i)|, i = 0
    int sign = 1;
    constexpr int kMaxTerms = 10000;
    for (int i = 0;; ++i) {
        if (i > 0) {
            double factor = (alpha - i + 1.0) / i;
            log_abs_binom += std::log(std::abs(factor));
            if (factor < 0.0) sign = -sign;
        }
        double j = alpha - i;
        double log_t0 = log_abs_binom + i * log_q + j * log_1q;
        double log_t1 = log_abs_binom + j * log_q + i * log_1q;
        double log_e0 = std::log(0.5) + log_erfc((i - z0) / sq2s);
        double log_e1 = std::log(0.5) + log_erfc((z0 - j) / sq2s);
        double log_s0 =
            log_t0 + (static_cast<double>(i) * i - i) / (2.0 * sigma * sigma) + log_e0;
        double log_s1 = log_t1 + (j * j - j) / (2.0 * sigma * sigma) + log_e1;
        if (sign > 0) {
            log_a0 = log_add(log_a0, log_s0);
            log_a1 = log_add(log_a1, log_s1);
        } else {
            log_a0 = log_sub(log_a0, log_s0);
            log_a1 = log_sub(log_a1, log_s1);
        }
        if (i > alpha &&
            std::max(log_s0, log_s1) < log_add(log_a0, log_a1) - 40.0)
            break;
        if (i == kMaxTerms) throw diverged_error("rdp: series did not converge");
    }
    return log_add(log_a0, log_a1);
}

}  // namespace

double log_erfc(double x) {
    if (x <= 20.0) return std::log(std::erfc(x));
    // Asymptotic expansion; erfc(x) underflows past ~26.6 but log stays exact.
    double x2 = x * x;
    return -x2 - std::log(x * std::sqrt(std::numbers::pi)) +
           std::log1p(-0.5 / x2 + 0.75 / (x2 * x2));
}

Vec clip_l2(const Vec& g, double c) {
    if (c <= 0.0) throw invalid_argument_error("clip_l2: bound must be positive");
    double n = l2_norm(g);
    Vec out = g;
    if (n > c) scale_inplace(out, c / n);
    return out;
}

double dp_sgd_update(const Model& model, const Vec& params,
                     const std::vector<Vec>& xs, const std::vector<int>& ys,
                     double clip_c, double sigma, Rng& rng, Vec& update) {
    if (xs.empty() || xs.size() != ys.size())
        throw invalid_argument_error("dp_sgd_update: empty or mismatched batch");
    if (sigma < 0.0) throw invalid_argument_error("dp_sgd_update: sigma must be >= 0");
    update.assign(model.param_count(), 0.0);
    Vec g;
    double loss_sum = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        loss_sum += model.loss_grad(params, xs[i], ys[i], g);
        double n = l2_norm(g);
        axpy(n > clip_c ? clip_c / n : 1.0, g, update);
    }
    if (clip_c <= 0.0) throw invalid_argument_error("dp_sgd_update: clip bound must be positive");
    if (sigma > 0.0) {
        double noise_std = sigma * clip_c;
        for (double& u : update) u += noise_std * rng.normal();
    }
    scale_inplace(update, 1.0 / static_cast<double>(xs.size()));
    return loss_sum / static_cast<double>(xs.size());
}

double rdp_subsampled_gaussian(double q, double sigma, double alpha) {
    if (q < 0.0 || q > 1.0) throw invalid_argument_error("rdp: q must be in [0, 1]");
    if (alpha <= 1.0) throw invalid_argument_error("rdp: order must exceed 1");
    if (sigma < 0.0) throw invalid_argument_error("rdp: sigma must be >= 0");
    if (q == 0.0) return 0.0;
    if (sigma == 0.0) return kInf;
    if (q == 1.0) return alpha / (2.0 * sigma * sigma);  // plain Gaussian mechanism
    double log_a;
    if (std::abs(alpha - std::round(alpha)) < 1e-9)
        log_a = log_a_int(q, sigma, static_cast<int>(std::round(alpha)));
    else
        log_a = log_a_frac(q, sigma, alpha);
    return log_a / (alpha - 1.0);
}

std::vector<double> default_rdp_orders() {
    std::vector<double> orders;
    for (int i = 0; i <= (64 - 1) * 4 - 1; ++i) orders.push_back(1.25 + 0.25 * i);
    for (int a = 65; a <= 256; ++a) orders.push_back(a);
    return orders;
}

EpsResult dp_epsilon(double q, double sigma, std::uint64_t steps, double delta) {
    return dp_epsilon(q, sigma, steps, delta, default_rdp_orders());
}

EpsResult dp_epsilon(double q, double sigma, std::uint64_t steps, double delta,
                     const std::vector<double>& orders) {
    if (delta <= 0.0 || delta >= 1.0)
        throw invalid_argument_error("dp_epsilon: delta must be in (0, 1)");
    if (orders.empty()) throw invalid_argument_error("dp_epsilon: no orders");
    if (steps == 0 || q == 0.0) return {0.0, 0.0};
    if (sigma == 0.0) return {kInf, 0.0};
    double best = kInf, best_order = 0.0;
    double log_inv_delta = std::log(1.0 / delta);
    for (double a : orders) {
        double rdp = rdp_subsampled_gaussian(q, sigma, a);
        double eps = static_cast<double>(steps) * rdp + log_inv_delta / (a - 1.0);
        if (eps < best) {
            best = eps;
            best_order = a;
        }
    }
    return {best, best_order};
}

}  // namespace altfl

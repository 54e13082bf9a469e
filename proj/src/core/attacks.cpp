#include "core/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>

#include "core/dp.hpp"
#include "core/errors.hpp"

namespace altfl {

namespace {

// ---------------------------------------------------------------------------
// Dense-stack machinery for the passive attacks.  The gradient-matching loss
// is differentiated with respect to the dummy input and the dummy label
// logits by backpropagating *through* the per-sample gradient computation;
// ReLU gates are treated as locally constant (exact almost everywhere).
// ---------------------------------------------------------------------------

struct Stack {
    std::vector<DenseLayerRef> layers;
    const Vec* params = nullptr;
    std::size_t param_len = 0;
    int in_dim = 0;
    int n_classes = 0;

    static Stack from(const Model& m, const Vec& params) {
        Stack st;
        st.layers = m.dense_layers();
        st.params = &params;
        st.param_len = m.param_count();
        st.in_dim = m.input_shape().size();
        st.n_classes = m.n_classes();
        return st;
    }

    const double* W(std::size_t l) const { return params->data() + layers[l].w_off; }
    const double* b(std::size_t l) const { return params->data() + layers[l].b_off; }
};

struct StackTrace {
    std::vector<Vec> acts;  // acts[l] = input to layer l
    std::vector<Vec> pres;  // pres[l] = affine output of layer l
    Vec probs;              // softmax of the logits
};

Vec softmax(const Vec& z) {
    double lse = log_sum_exp(z);
    Vec p(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) p[i] = std::exp(z[i] - lse);
    return p;
}

void stack_forward(const Stack& st, const Vec& x, StackTrace& tr) {
    std::size_t L = st.layers.size();
    tr.acts.assign(L, Vec{});
    tr.pres.assign(L, Vec{});
    tr.acts[0] = x;
    for (std::size_t l = 0; l < L; ++l) {
        const auto& d = st.layers[l];
        const double* W = st.W(l);
        const double* b = st.b(l);
        Vec z(d.out);
        for (int r = 0; r < d.out; ++r) {
            double s = b[r];
            const double* wr = W + static_cast<std::size_t>(r) * d.in;
            for (int c = 0; c < d.in; ++c) s += wr[c] * tr.acts[l][c];
            z[r] = s;
        }
        tr.pres[l] = std::move(z);
        if (l + 1 < L) {
            Vec a = tr.pres[l];
            if (d.act == Act::relu)
                for (double& v : a) v = v > 0.0 ? v : 0.0;
            tr.acts[l + 1] = std::move(a);
        }
    }
    tr.probs = softmax(tr.pres.back());
}

// Per-sample CE gradient with a soft label distribution s; fills the flat
// parameter gradient (model layout) and the per-layer deltas.
void stack_param_grads(const Stack& st, const StackTrace& tr, const Vec& s,
                       Vec& G, std::vector<Vec>& deltas) {
    std::size_t L = st.layers.size();
    deltas.assign(L, Vec{});
    deltas[L - 1] = tr.probs;
    for (int c = 0; c < st.n_classes; ++c) deltas[L - 1][c] -= s[c];
    for (std::size_t l = L - 1; l-- > 0;) {
        const auto& up = st.layers[l + 1];
        const double* W = st.W(l + 1);
        Vec d(up.in, 0.0);
        for (int r = 0; r < up.out; ++r) {
            double g = deltas[l + 1][r];
            const double* wr = W + static_cast<std::size_t>(r) * up.in;
            for (int c = 0; c < up.in; ++c) d[c] += g * wr[c];
        }
        if (st.layers[l].act == Act::relu)
            for (int c = 0; c < st.layers[l].out; ++c)
                if (tr.pres[l][c] <= 0.0) d[c] = 0.0;
        deltas[l] = std::move(d);
    }
    G.assign(st.param_len, 0.0);
    for (std::size_t l = 0; l < L; ++l) {
        const auto& d = st.layers[l];
        for (int r = 0; r < d.out; ++r) {
            double g = deltas[l][r];
            double* gw = G.data() + d.w_off + static_cast<std::size_t>(r) * d.in;
            for (int c = 0; c < d.in; ++c) gw[c] = g * tr.acts[l][c];
            G[d.b_off + r] = g;
        }
    }
}

// Matching-loss adjoint: given the dummy gradient G, return the loss value
// and fill Gbar = dLoss/dG.
using LossAdjoint = std::function<double(const Vec& G, Vec& Gbar)>;

// Double backprop: returns the matching loss; fills xbar / vbar with the
// gradients w.r.t. the dummy input and the dummy label logits.
double stack_attack_grad(const Stack& st, const Vec& x, const Vec& v,
                         const LossAdjoint& loss, Vec& xbar, Vec& vbar) {
    std::size_t L = st.layers.size();
    StackTrace tr;
    stack_forward(st, x, tr);
    Vec s = softmax(v);

    Vec G;
    std::vector<Vec> deltas;
    stack_param_grads(st, tr, s, G, deltas);

    Vec Gbar;
    double D = loss(G, Gbar);

    auto gate = [&](std::size_t l, const Vec& in) {
        Vec out = in;
        if (st.layers[l].act == Act::relu)
            for (int c = 0; c < st.layers[l].out; ++c)
                if (tr.pres[l][c] <= 0.0) out[c] = 0.0;
        return out;
    };

    // Ascending pass: u[l] = dLoss/d delta_l, combining the direct G terms
    // with the dependence of delta_{l-1} on delta_l.
    std::vector<Vec> u(L);
    for (std::size_t l = 0; l < L; ++l) {
        const auto& d = st.layers[l];
        Vec ul(d.out, 0.0);
        for (int r = 0; r < d.out; ++r) {
            double acc = Gbar[d.b_off + r];
            const double* gw = Gbar.data() + d.w_off + static_cast<std::size_t>(r) * d.in;
            for (int c = 0; c < d.in; ++c) acc += gw[c] * tr.acts[l][c];
            ul[r] = acc;
        }
        if (l > 0) {
            Vec gated = gate(l - 1, u[l - 1]);
            const double* W = st.W(l);
            for (int r = 0; r < d.out; ++r) {
                const double* wr = W + static_cast<std::size_t>(r) * d.in;
                double acc = 0.0;
                for (int c = 0; c < d.in; ++c) acc += wr[c] * gated[c];
                ul[r] += acc;
            }
        }
        u[l] = std::move(ul);
    }

    // Through s = softmax(v): sbar = -u[L-1].
    const Vec& uL = u[L - 1];
    double sdot = 0.0;
    for (int c = 0; c < st.n_classes; ++c) sdot += s[c] * (-uL[c]);
    vbar.assign(st.n_classes, 0.0);
    for (int c = 0; c < st.n_classes; ++c) vbar[c] = s[c] * (-uL[c] - sdot);

    // Through p = softmax(z_L): pbar = u[L-1].
    const Vec& p = tr.probs;
    double pdot = 0.0;
    for (int c = 0; c < st.n_classes; ++c) pdot += p[c] * uL[c];
    Vec t(st.n_classes);
    for (int c = 0; c < st.n_classes; ++c) t[c] = p[c] * (uL[c] - pdot);

    // Descending pass through the forward chain plus the G_{W_l} terms:
    // abar_{l-1} = Gbar_{W_l}^T delta_l + W_l^T zbar_l.
    Vec abar;
    for (std::size_t l = L; l-- > 0;) {
        const auto& d = st.layers[l];
        const double* W = st.W(l);
        abar.assign(d.in, 0.0);
        for (int r = 0; r < d.out; ++r) {
            double dl = deltas[l][r];
            double tv = t[r];
            const double* gw = Gbar.data() + d.w_off + static_cast<std::size_t>(r) * d.in;
            const double* wr = W + static_cast<std::size_t>(r) * d.in;
            for (int c = 0; c < d.in; ++c) abar[c] += gw[c] * dl + wr[c] * tv;
        }
        if (l > 0) t = gate(l - 1, abar);
    }
    xbar = std::move(abar);
    return D;
}

// ---------------------------------------------------------------------------
// Optimizer and regularizer
// ---------------------------------------------------------------------------

struct Adam {
    Vec m, v;
    int t = 0;
    double b1 = 0.9, b2 = 0.999, eps = 1e-8;

    void step(Vec& x, const Vec& g, double lr, bool sign_mode) {
        if (m.empty()) {
            m.assign(x.size(), 0.0);
            v.assign(x.size(), 0.0);
        }
        ++t;
        double c1 = 1.0 - std::pow(b1, t), c2 = 1.0 - std::pow(b2, t);
        for (std::size_t i = 0; i < x.size(); ++i) {
            double gi =
                sign_mode ? (g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0)) : g[i];
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            x[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
        }
    }
};

// Smoothed isotropic total variation; accumulates the gradient into xbar.
double total_variation(const Vec& x, Shape3 shape, double weight, Vec& xbar) {
    constexpr double kEps = 1e-10;
    double tv = 0.0;
    for (int c = 0; c < shape.c; ++c)
        for (int i = 0; i < shape.h; ++i)
            for (int j = 0; j < shape.w; ++j) {
                int base = (c * shape.h + i) * shape.w + j;
                double dx = j + 1 < shape.w ? x[base + 1] - x[base] : 0.0;
                double dy = i + 1 < shape.h ? x[base + shape.w] - x[base] : 0.0;
                double v = std::sqrt(dx * dx + dy * dy + kEps);
                tv += v;
                if (j + 1 < shape.w) xbar[base + 1] += weight * dx / v;
                if (i + 1 < shape.h) xbar[base + shape.w] += weight * dy / v;
                xbar[base] -= weight * (dx + dy) / v;
            }
    return weight * tv;
}

// ---------------------------------------------------------------------------
// Matching losses over visible coordinates
// ---------------------------------------------------------------------------

LossAdjoint l2_matching(const ObservedGradient& obs) {
    return [&obs](const Vec& G, Vec& Gbar) {
        Gbar.assign(G.size(), 0.0);
        double d = 0.0;
        for (std::size_t j = 0; j < G.size(); ++j) {
            if (obs.hidden[j]) continue;
            double r = G[j] - obs.values[j];
            d += r * r;
            Gbar[j] = 2.0 * r;
        }
        return d;
    };
}

LossAdjoint cosine_matching(const ObservedGradient& obs) {
    return [&obs](const Vec& G, Vec& Gbar) {
        Gbar.assign(G.size(), 0.0);
        double gg = 0.0, oo = 0.0, go = 0.0;
        for (std::size_t j = 0; j < G.size(); ++j) {
            if (obs.hidden[j]) continue;
            gg += G[j] * G[j];
            oo += obs.values[j] * obs.values[j];
            go += G[j] * obs.values[j];
        }
        double ng = std::sqrt(gg), no = std::sqrt(oo);
        if (ng < 1e-12 || no < 1e-12) return 1.0;  // degenerate; no gradient signal
        for (std::size_t j = 0; j < G.size(); ++j) {
            if (obs.hidden[j]) continue;
            Gbar[j] = -(obs.values[j] / (ng * no) - go * G[j] / (gg * ng * no));
        }
        return 1.0 - go / (ng * no);
    };
}

// ---------------------------------------------------------------------------
// Passive attack driver
// ---------------------------------------------------------------------------

struct PassiveSettings {
    int iterations = 300;
    double lr = 0.1;
    bool sign_mode = false;
    bool cosine = false;
    double tv_weight = 0.0;
    bool optimize_label = true;
};

// For a single sample the true class is the only negative entry of the last
// layer's bias gradient.  Returns -1 when that block is not fully visible.
int infer_label(const ObservedGradient& obs, const DenseLayerRef& last) {
    int best = -1;
    double best_v = 0.0;
    for (int c = 0; c < last.out; ++c) {
        std::size_t j = last.b_off + c;
        if (obs.hidden[j]) return -1;
        if (obs.values[j] < best_v) {
            best_v = obs.values[j];
            best = c;
        }
    }
    return best;
}

AttackOutcome passive_stack_attack(const ObservedGradient& obs, const Model& model,
                                   const Vec& params, const PassiveSettings& ps,
                                   Rng& rng) {
    AttackOutcome out;
    Stack st = Stack::from(model, params);
    Shape3 shape = model.input_shape();

    Vec v(st.n_classes, 0.0);
    bool train_label = true;
    if (!ps.optimize_label) {
        int y = infer_label(obs, st.layers.back());
        if (y >= 0) {
            v[y] = 10.0;  // softmax(v) within 5e-5 of the one-hot label
            train_label = false;
        }
    }
    if (train_label && !ps.optimize_label) {
        // label block hidden; fall through to joint optimization
    }
    if (train_label)
        for (double& c : v) c = rng.normal(0.0, 0.5);

    Vec x(st.in_dim);
    for (double& c : x) c = rng.normal(0.5, 0.3);

    LossAdjoint match = ps.cosine ? cosine_matching(obs) : l2_matching(obs);
    Adam ax, av;
    Vec best_x = x;
    double best_loss = std::numeric_limits<double>::infinity();

    for (int it = 0; it < ps.iterations; ++it) {
        Vec xbar, vbar;
        double d = stack_attack_grad(st, x, v, match, xbar, vbar);
        if (ps.tv_weight > 0.0) total_variation(x, shape, ps.tv_weight, xbar);
        if (!std::isfinite(d) || !all_finite(xbar) || !all_finite(vbar)) {
            out.failed = true;
            break;
        }
        if (d < best_loss) {
            best_loss = d;
            best_x = x;
        }
        ax.step(x, xbar, ps.lr, ps.sign_mode);
        if (train_label) av.step(v, vbar, ps.lr, ps.sign_mode);
    }
    if (!out.failed) {
        Vec xbar, vbar;
        double d = stack_attack_grad(st, x, v, match, xbar, vbar);
        if (std::isfinite(d) && d < best_loss) {
            best_loss = d;
            best_x = x;
        }
    }
    out.reconstructions.push_back(std::move(best_x));
    out.final_loss = best_loss;
    return out;
}

// Finite-difference fallback for non-dense architectures: label fixed to the
// best-scoring class, input optimized with central differences.  Slow;
// intended for small test models only.
AttackOutcome passive_fd_attack(const ObservedGradient& obs, const Model& model,
                                const Vec& params, const PassiveSettings& ps,
                                Rng& rng) {
    AttackOutcome out;
    Shape3 shape = model.input_shape();
    int dim = shape.size();

    LossAdjoint match = ps.cosine ? cosine_matching(obs) : l2_matching(obs);
    Vec gbar_unused;
    auto eval = [&](const Vec& x, int y) {
        Vec G;
        model.loss_grad(params, x, y, G);
        return match(G, gbar_unused);
    };

    Vec x(dim);
    for (double& c : x) c = rng.normal(0.5, 0.3);
    int label = 0;
    double best_init = std::numeric_limits<double>::infinity();
    for (int c = 0; c < model.n_classes(); ++c) {
        double d = eval(x, c);
        if (d < best_init) {
            best_init = d;
            label = c;
        }
    }

    Adam ax;
    Vec best_x = x;
    double best_loss = best_init;
    constexpr double kStep = 1e-4;
    for (int it = 0; it < ps.iterations; ++it) {
        Vec xbar(dim, 0.0);
        for (int j = 0; j < dim; ++j) {
            Vec xp = x, xm = x;
            xp[j] += kStep;
            xm[j] -= kStep;
            xbar[j] = (eval(xp, label) - eval(xm, label)) / (2.0 * kStep);
        }
        double d = eval(x, label);
        if (ps.tv_weight > 0.0) total_variation(x, shape, ps.tv_weight, xbar);
        if (!std::isfinite(d) || !all_finite(xbar)) {
            out.failed = true;
            break;
        }
        if (d < best_loss) {
            best_loss = d;
            best_x = x;
        }
        ax.step(x, xbar, ps.lr, ps.sign_mode);
    }
    out.reconstructions.push_back(std::move(best_x));
    out.final_loss = best_loss;
    return out;
}

AttackOutcome passive_attack(const ObservedGradient& obs, const Model& model,
                             const Vec& params, const PassiveSettings& ps,
                             Rng& rng) {
    if (obs.visible_count() == 0) {
        AttackOutcome out;
        out.failed = true;  // total opacity: nothing to match against
        return out;
    }
    return model.dense_only() ? passive_stack_attack(obs, model, params, ps, rng)
                              : passive_fd_attack(obs, model, params, ps, rng);
}

// Nearest-rank empirical quantile (p in [0, 1]).
double quantile(Vec sorted_vals, double p) {
    if (sorted_vals.empty()) throw invalid_argument_error("quantile: empty sample");
    std::size_t idx = static_cast<std::size_t>(p * static_cast<double>(sorted_vals.size()));
    if (idx >= sorted_vals.size()) idx = sorted_vals.size() - 1;
    return sorted_vals[idx];
}

}  // namespace

std::size_t ObservedGradient::visible_count() const {
    std::size_t n = 0;
    for (std::uint8_t h : hidden) n += h ? 0 : 1;
    return n;
}

ObservedGradient infer_gradient(const Vec& w_prev, const Vec& w_next, double lr,
                                const EncryptionMask& mask) {
    if (lr == 0.0) throw invalid_argument_error("infer_gradient: lr must be nonzero");
    if (w_prev.size() != w_next.size() || w_prev.size() != mask.size())
        throw invalid_argument_error("infer_gradient: shape mismatch");
    ObservedGradient obs;
    obs.hidden = mask.bits;
    obs.values.assign(w_prev.size(), 0.0);
    for (std::size_t j = 0; j < w_prev.size(); ++j)
        if (!mask.bits[j]) obs.values[j] = (w_prev[j] - w_next[j]) / lr;
    return obs;
}

const char* attack_name(AttackKind k) {
    switch (k) {
        case AttackKind::dlg: return "DLG";
        case AttackKind::inverting: return "Inverting";
        case AttackKind::cah: return "CAH";
        case AttackKind::rtf: return "RTF";
    }
    throw invalid_argument_error("unknown attack kind");
}

AttackKind attack_from_name(const std::string& name) {
    if (name == "DLG") return AttackKind::dlg;
    if (name == "Inverting") return AttackKind::inverting;
    if (name == "CAH") return AttackKind::cah;
    if (name == "RTF") return AttackKind::rtf;
    throw parse_error("unknown attack name: " + name);
}

double iip_score(const std::vector<Vec>& reconstructions,
                 const std::vector<Vec>& pool,
                 const std::vector<std::size_t>& targets,
                 std::vector<std::uint8_t>* matched_out) {
    if (pool.empty()) throw invalid_argument_error("iip: empty candidate pool");
    if (targets.empty()) throw invalid_argument_error("iip: no targets");
    std::vector<std::uint8_t> matched(targets.size(), 0);
    for (const Vec& r : reconstructions) {
        if (r.size() != pool[0].size() || !all_finite(r)) continue;
        std::size_t best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < pool.size(); ++i) {
            double d = 0.0;
            for (std::size_t j = 0; j < r.size(); ++j) {
                double t = r[j] - pool[i][j];
                d += t * t;
            }
            if (d < best_d) {
                best_d = d;
                best = i;
            }
        }
        for (std::size_t k = 0; k < targets.size(); ++k)
            if (targets[k] == best && !matched[k]) {
                matched[k] = 1;
                break;
            }
    }
    double score = 0.0;
    for (std::uint8_t m : matched) score += m;
    score /= static_cast<double>(targets.size());
    if (matched_out) *matched_out = std::move(matched);
    return score;
}

AttackOutcome dlg_attack(const ObservedGradient& obs, const Model& model,
                         const Vec& params, const AttackConfig& cfg, Rng& rng) {
    PassiveSettings ps;
    ps.iterations = cfg.dlg_iterations;
    ps.lr = cfg.dlg_lr;
    ps.sign_mode = false;
    ps.cosine = false;
    ps.tv_weight = 0.0;
    ps.optimize_label = true;  // DLG optimizes input and label jointly
    return passive_attack(obs, model, params, ps, rng);
}

AttackOutcome inverting_attack(const ObservedGradient& obs, const Model& model,
                               const Vec& params, const AttackConfig& cfg,
                               Rng& rng) {
    PassiveSettings ps;
    ps.iterations = cfg.inverting_iterations;
    ps.lr = cfg.inverting_lr;
    ps.sign_mode = true;  // signed-gradient steps
    ps.cosine = true;
    ps.tv_weight = cfg.tv_weight;
    ps.optimize_label = false;  // label inferred from the bias-gradient sign
    return passive_attack(obs, model, params, ps, rng);
}

void install_trap_weights(const Model& model, Vec& params,
                          const std::vector<Vec>& prior, int batch, Rng& rng) {
    if (!std::holds_alternative<DenseSpec>(model.layers().front()))
        throw invalid_argument_error("trap weights: first layer must be dense");
    if (prior.empty()) throw invalid_argument_error("trap weights: empty prior");
    if (batch < 1) throw invalid_argument_error("trap weights: batch must be >= 1");
    DenseLayerRef first = model.dense_layers().front();
    double sd = 1.0 / std::sqrt(static_cast<double>(first.in));
    Vec responses(prior.size());
    for (int r = 0; r < first.out; ++r) {
        double* wr = params.data() + first.w_off + static_cast<std::size_t>(r) * first.in;
        for (int c = 0; c < first.in; ++c) wr[c] = rng.normal(0.0, sd);
        for (std::size_t i = 0; i < prior.size(); ++i) {
            double s = 0.0;
            for (int c = 0; c < first.in; ++c) s += wr[c] * prior[i][c];
            responses[i] = s;
        }
        std::sort(responses.begin(), responses.end());
        // Bias at the (1 - 1/batch) response quantile: each row then fires
        // for roughly one sample out of a batch.
        params[first.b_off + r] =
            -quantile(responses, 1.0 - 1.0 / static_cast<double>(batch));
    }
}

Model rtf_model(Shape3 input, int bins, int n_classes) {
    if (bins < 2) throw invalid_argument_error("rtf: need at least 2 bins");
    std::vector<LayerSpec> layers;
    layers.push_back(DenseSpec{input.size(), bins, Act::relu});
    layers.push_back(DenseSpec{bins, n_classes, Act::none});
    return Model(input, std::move(layers));
}

void install_imprint(const Model& model, Vec& params,
                     const std::vector<Vec>& prior, int bins, Rng& rng) {
    auto dls = model.dense_layers();
    if (dls.size() < 2 || dls.front().out != bins)
        throw invalid_argument_error("imprint: model shape does not match bin count");
    if (prior.empty()) throw invalid_argument_error("imprint: empty prior");
    DenseLayerRef first = dls.front();
    DenseLayerRef second = dls[1];

    // Measurement: mean pixel brightness.
    double inv_dim = 1.0 / static_cast<double>(first.in);
    Vec meas(prior.size());
    for (std::size_t i = 0; i < prior.size(); ++i) {
        double s = 0.0;
        for (int c = 0; c < first.in; ++c) s += prior[i][c];
        meas[i] = s * inv_dim;
    }
    std::sort(meas.begin(), meas.end());

    // Every row carries the measurement vector; biases step through the
    // prior's quantiles, so row r fires iff brightness(x) > threshold_r.
    for (int r = 0; r < bins; ++r) {
        double* wr = params.data() + first.w_off + static_cast<std::size_t>(r) * first.in;
        for (int c = 0; c < first.in; ++c) wr[c] = inv_dim;
        double thr = r == 0 ? -1e9 : quantile(meas, static_cast<double>(r) / bins);
        params[first.b_off + r] = -thr;
    }
    // Identical second-layer columns make the backpropagated error equal for
    // all active rows, so adjacent-row gradient differences isolate bins.
    for (int o = 0; o < second.out; ++o) {
        double col = rng.normal(0.0, 1.0 / std::sqrt(static_cast<double>(bins)));
        for (int r = 0; r < bins; ++r)
            params[second.w_off + static_cast<std::size_t>(o) * second.in + r] = col;
        params[second.b_off + o] = 0.0;
    }
}

std::vector<Vec> cah_recover(const ObservedGradient& obs, const Model& model,
                             double denom_tol) {
    DenseLayerRef first = model.dense_layers().front();
    std::vector<Vec> recons;
    for (int r = 0; r < first.out; ++r) {
        std::size_t bj = first.b_off + r;
        if (obs.hidden[bj]) continue;
        double gb = obs.values[bj];
        if (std::abs(gb) <= denom_tol) continue;
        Vec x(first.in, 0.0);
        for (int c = 0; c < first.in; ++c) {
            std::size_t wj = first.w_off + static_cast<std::size_t>(r) * first.in + c;
            if (!obs.hidden[wj]) x[c] = obs.values[wj] / gb;
        }
        recons.push_back(std::move(x));
    }
    return recons;
}

std::vector<Vec> rtf_recover(const ObservedGradient& obs, const Model& model,
                             double denom_tol) {
    DenseLayerRef first = model.dense_layers().front();
    std::vector<Vec> recons;
    for (int r = 0; r < first.out; ++r) {
        std::size_t bj = first.b_off + r;
        std::size_t bj_next = first.b_off + r + 1;
        if (obs.hidden[bj]) continue;
        bool has_next = r + 1 < first.out;
        if (has_next && obs.hidden[bj_next]) continue;
        // Rows past the last behave as all-zero: the top bin needs no
        // neighbour to difference against.
        double dgb = obs.values[bj] - (has_next ? obs.values[bj_next] : 0.0);
        if (std::abs(dgb) <= denom_tol) continue;
        Vec x(first.in, 0.0);
        for (int c = 0; c < first.in; ++c) {
            std::size_t wj = first.w_off + static_cast<std::size_t>(r) * first.in + c;
            std::size_t wj_next = wj + static_cast<std::size_t>(first.in);
            if (obs.hidden[wj] || (has_next && obs.hidden[wj_next])) continue;
            double dgw = obs.values[wj] - (has_next ? obs.values[wj_next] : 0.0);
            x[c] = dgw / dgb;
        }
        recons.push_back(std::move(x));
    }
    return recons;
}

AttackOutcome run_attack_trial(AttackKind kind, const Model& base,
                               const Dataset& pool, const AttackConfig& cfg,
                               const TrialProtection& prot, std::uint64_t seed,
                               std::uint64_t trial) {
    if (pool.size() == 0) throw invalid_argument_error("attack trial: empty pool");
    bool active = kind == AttackKind::cah || kind == AttackKind::rtf;
    int batch = active ? cfg.batch_size : 1;
    if (batch > static_cast<int>(pool.size()))
        throw invalid_argument_error("attack trial: batch exceeds pool");

    // Fresh model state per trial.
    Model work = kind == AttackKind::rtf
                     ? rtf_model(base.input_shape(), cfg.bins, base.n_classes())
                     : base;
    Rng init_rng = Rng::derive(seed, "trial-init", trial);
    Vec params = work.init_params(init_rng);

    // Targets drawn without replacement.
    Rng tgt_rng = Rng::derive(seed, "trial-target", trial);
    std::vector<std::size_t> targets;
    while (static_cast<int>(targets.size()) < batch) {
        std::size_t i = tgt_rng.below(pool.size());
        if (std::find(targets.begin(), targets.end(), i) == targets.end())
            targets.push_back(i);
    }

    // Active-attacker model surgery.
    if (kind == AttackKind::cah) {
        Rng trap_rng = Rng::derive(seed, "trial-trap", trial);
        install_trap_weights(work, params, pool.xs, batch, trap_rng);
    } else if (kind == AttackKind::rtf) {
        Rng imp_rng = Rng::derive(seed, "trial-imprint", trial);
        install_imprint(work, params, pool.xs, cfg.bins, imp_rng);
    }

    // Per-trial encryption mask from gradient-magnitude sensitivity on a
    // probe batch (the defense measures sensitivity on the model it is given,
    // including any attacker modification).
    EncryptionMask mask;
    mask.bits.assign(work.param_count(), 0);
    if (prot.eta >= 1.0) {
        mask.bits.assign(work.param_count(), 1);
    } else if (prot.eta > 0.0) {
        Rng probe_rng = Rng::derive(seed, "trial-probe", trial);
        std::vector<Vec> pxs;
        std::vector<int> pys;
        for (int i = 0; i < cfg.probe_batch; ++i) {
            std::size_t j = probe_rng.below(pool.size());
            pxs.push_back(pool.xs[j]);
            pys.push_back(pool.ys[j]);
        }
        Vec g;
        work.batch_loss_grad(params, pxs, pys, g);
        for (double& v : g) v = std::abs(v);
        mask = build_mask(g, prot.eta);
    }

    // Victim step: one local update on the target batch.
    std::vector<Vec> xs;
    std::vector<int> ys;
    for (std::size_t t : targets) {
        xs.push_back(pool.xs[t]);
        ys.push_back(pool.ys[t]);
    }
    Vec step;
    if (prot.sigma > 0.0) {
        Rng noise_rng = Rng::derive(seed, "trial-noise", trial);
        dp_sgd_update(work, params, xs, ys, prot.clip_c, prot.sigma, noise_rng, step);
    } else {
        work.batch_loss_grad(params, xs, ys, step);
    }
    Vec w_next = params;
    axpy(-cfg.victim_lr, step, w_next);
    ObservedGradient obs = infer_gradient(params, w_next, cfg.victim_lr, mask);

    // Attack + scoring.
    AttackOutcome out;
    Rng atk_rng = Rng::derive(seed, "trial-attack", trial);
    switch (kind) {
        case AttackKind::dlg: out = dlg_attack(obs, work, params, cfg, atk_rng); break;
        case AttackKind::inverting:
            out = inverting_attack(obs, work, params, cfg, atk_rng);
            break;
        case AttackKind::cah:
            out.reconstructions = cah_recover(obs, work, cfg.denom_tol);
            break;
        case AttackKind::rtf:
            out.reconstructions = rtf_recover(obs, work, cfg.denom_tol);
            break;
    }
    if (out.failed) {
        out.matched.assign(targets.size(), 0);
        out.success_rate = 0.0;
    } else {
        out.success_rate = iip_score(out.reconstructions, pool.xs, targets, &out.matched);
    }
    return out;
}

double success_rate(AttackKind kind, const Model& base, const Dataset& pool,
                    const AttackConfig& acfg, const SuccessConfig& scfg) {
    if (scfg.trials < 1) throw invalid_argument_error("success_rate: trials must be >= 1");
    // PI applies DP in round(trials * rho) trials and HE in the rest; SI
    // methods are attacked on authentic rounds only, so every trial carries
    // that method's authentic-round protection.
    std::int64_t dp_trials = 0;
    switch (scfg.method) {
        case Method::pi:
            dp_trials = std::llround(static_cast<double>(scfg.trials) * scfg.rho.value());
            break;
        case Method::dp_only:
        case Method::si_dp: dp_trials = scfg.trials; break;
        default: dp_trials = 0; break;
    }
    double sum = 0.0;
    for (int k = 0; k < scfg.trials; ++k) {
        TrialProtection prot;
        prot.clip_c = scfg.clip_c;
        switch (scfg.method) {
            case Method::mp:
                prot.sigma = scfg.sigma;
                prot.eta = scfg.eta;
                break;
            case Method::pi:
                if (k < dp_trials)
                    prot.sigma = scfg.sigma;
                else
                    prot.eta = scfg.eta;
                break;
            case Method::dp_only:
            case Method::si_dp: prot.sigma = scfg.sigma; break;
            case Method::he_only:
            case Method::si_he: prot.eta = scfg.eta; break;
        }
        sum += run_attack_trial(kind, base, pool, acfg, prot, scfg.seed,
                                static_cast<std::uint64_t>(k))
                   .success_rate;
    }
    return sum / static_cast<double>(scfg.trials);
}

}  // namespace altfl

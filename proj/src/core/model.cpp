#include "core/model.hpp"

#include <algorithm>
#include <cmath>

#include "core/errors.hpp"

namespace altfl {

namespace {

inline int idx3(int c, int y, int x, int h, int w) { return (c * h + y) * w + x; }

const char* kind_name(const LayerSpec& l) {
    if (std::holds_alternative<DenseSpec>(l)) return "dense";
    if (std::holds_alternative<Conv2dSpec>(l)) return "conv";
    return "pool";
}

}  // namespace

double log_sum_exp(const Vec& z) {
    double m = *std::max_element(z.begin(), z.end());
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double v : z) s += std::exp(v - m);
    return m + std::log(s);
}

Model::Model(Shape3 input, std::vector<LayerSpec> layers)
    : input_(input), layers_(std::move(layers)) {
    if (layers_.empty()) throw invalid_argument_error("model: no layers");
    if (input_.size() <= 0) throw invalid_argument_error("model: empty input shape");

    Shape3 cur = input_;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        shapes_.push_back(cur);
        offsets_.push_back(param_count_);
        std::size_t count = 0;
        const std::string where = "model layer " + std::to_string(i);
        if (const auto* d = std::get_if<DenseSpec>(&layers_[i])) {
            if (d->in != cur.size())
                throw invalid_argument_error(where + ": dense expects " +
                                             std::to_string(d->in) + " inputs, got " +
                                             std::to_string(cur.size()));
            if (d->out <= 0) throw invalid_argument_error(where + ": dense out <= 0");
            count = static_cast<std::size_t>(d->in) * d->out + d->out;
            cur = {d->out, 1, 1};
        } else if (const auto* c = std::get_if<Conv2dSpec>(&layers_[i])) {
            if (c->in_ch != cur.c)
                throw invalid_argument_error(where + ": conv channel mismatch");
            if (c->out_ch <= 0 || c->k <= 0 || c->stride <= 0 || c->pad < 0)
                throw invalid_argument_error(where + ": bad conv geometry");
            int oh = (cur.h + 2 * c->pad - c->k) / c->stride + 1;
            int ow = (cur.w + 2 * c->pad - c->k) / c->stride + 1;
            if (cur.h + 2 * c->pad - c->k < 0 || oh <= 0 || ow <= 0)
                throw invalid_argument_error(where + ": conv output is empty");
            count = static_cast<std::size_t>(c->out_ch) * c->in_ch * c->k * c->k +
                    c->out_ch;
            cur = {c->out_ch, oh, ow};
        } else {
            const auto& p = std::get<Pool2dSpec>(layers_[i]);
            if (p.k <= 0 || p.stride <= 0)
                throw invalid_argument_error(where + ": bad pool geometry");
            if (cur.h < p.k || cur.w < p.k || (cur.h - p.k) % p.stride != 0 ||
                (cur.w - p.k) % p.stride != 0)
                throw invalid_argument_error(where + ": pool does not tile the input");
            cur = {cur.c, (cur.h - p.k) / p.stride + 1, (cur.w - p.k) / p.stride + 1};
        }
        counts_.push_back(count);
        param_count_ += count;
    }

    const auto* last = std::get_if<DenseSpec>(&layers_.back());
    if (!last || last->act != Act::none)
        throw invalid_argument_error("model: final layer must be dense with no activation");
    n_classes_ = last->out;
    if (n_classes_ < 2) throw invalid_argument_error("model: need at least 2 classes");
}

Model Model::mlp(int in_dim, const std::vector<int>& hidden, int n_classes) {
    std::vector<LayerSpec> layers;
    int cur = in_dim;
    for (int h : hidden) {
        layers.push_back(DenseSpec{cur, h, Act::relu});
        cur = h;
    }
    layers.push_back(DenseSpec{cur, n_classes, Act::none});
    return Model({in_dim, 1, 1}, std::move(layers));
}

Model Model::lenet5(Shape3 input, int n_classes) {
    std::vector<LayerSpec> layers;
    layers.push_back(Conv2dSpec{input.c, 6, 5, 1, 0, Act::relu});
    layers.push_back(Pool2dSpec{2, 2, true});
    layers.push_back(Conv2dSpec{6, 16, 5, 1, 0, Act::relu});
    layers.push_back(Pool2dSpec{2, 2, true});
    int h = input.h, w = input.w;
    h = (h - 4) / 2;
    w = (w - 4) / 2;  // after conv5 + pool2
    h = (h - 4) / 2;
    w = (w - 4) / 2;  // after conv5 + pool2
    int flat = 16 * h * w;
    layers.push_back(DenseSpec{flat, 120, Act::relu});
    layers.push_back(DenseSpec{120, 84, Act::relu});
    layers.push_back(DenseSpec{84, n_classes, Act::none});
    return Model(input, std::move(layers));
}

bool Model::dense_only() const {
    return std::all_of(layers_.begin(), layers_.end(), [](const LayerSpec& l) {
        return std::holds_alternative<DenseSpec>(l);
    });
}

std::vector<DenseLayerRef> Model::dense_layers() const {
    std::vector<DenseLayerRef> out;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        if (const auto* d = std::get_if<DenseSpec>(&layers_[i])) {
            DenseLayerRef r;
            r.in = d->in;
            r.out = d->out;
            r.act = d->act;
            r.w_off = offsets_[i];
            r.b_off = offsets_[i] + static_cast<std::size_t>(d->in) * d->out;
            out.push_back(r);
        }
    }
    return out;
}

Vec Model::init_params(Rng& rng) const {
    Vec p(param_count_);
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        double fan_in = 0.0;
        if (const auto* d = std::get_if<DenseSpec>(&layers_[i]))
            fan_in = d->in;
        else if (const auto* c = std::get_if<Conv2dSpec>(&layers_[i]))
            fan_in = static_cast<double>(c->in_ch) * c->k * c->k;
        else
            continue;  // pool has no parameters
        double bound = 1.0 / std::sqrt(fan_in);
        for (std::size_t j = 0; j < counts_[i]; ++j)
            p[offsets_[i] + j] = rng.uniform(-bound, bound);
    }
    return p;
}

struct Model::Workspace {
    std::vector<Vec> acts;               // acts[i] = input to layer i; acts[L] = logits
    std::vector<Vec> pres;               // affine / pool output per layer
    std::vector<std::vector<int>> amax;  // argmax cache for max-pool layers
};

void Model::forward_impl(const Vec& params, const Vec& x, Workspace& ws) const {
    if (params.size() != param_count_)
        throw invalid_argument_error("model: parameter vector has wrong size");
    if (static_cast<int>(x.size()) != input_.size())
        throw invalid_argument_error("model: input has wrong size");

    const std::size_t L = layers_.size();
    ws.acts.assign(L + 1, Vec{});
    ws.pres.assign(L, Vec{});
    ws.amax.assign(L, {});
    ws.acts[0] = x;

    for (std::size_t i = 0; i < L; ++i) {
        const Vec& a = ws.acts[i];
        const Shape3 in = shapes_[i];
        Vec z;
        if (const auto* d = std::get_if<DenseSpec>(&layers_[i])) {
            const double* W = params.data() + offsets_[i];
            const double* b = W + static_cast<std::size_t>(d->in) * d->out;
            z.assign(d->out, 0.0);
            for (int r = 0; r < d->out; ++r) {
                double s = b[r];
                const double* wr = W + static_cast<std::size_t>(r) * d->in;
                for (int c = 0; c < d->in; ++c) s += wr[c] * a[c];
                z[r] = s;
            }
        } else if (const auto* cv = std::get_if<Conv2dSpec>(&layers_[i])) {
            const double* W = params.data() + offsets_[i];
            const double* b =
                W + static_cast<std::size_t>(cv->out_ch) * cv->in_ch * cv->k * cv->k;
            int oh = (in.h + 2 * cv->pad - cv->k) / cv->stride + 1;
            int ow = (in.w + 2 * cv->pad - cv->k) / cv->stride + 1;
            z.assign(static_cast<std::size_t>(cv->out_ch) * oh * ow, 0.0);
            for (int o = 0; o < cv->out_ch; ++o)
                for (int y = 0; y < oh; ++y)
                    for (int xo = 0; xo < ow; ++xo) {
                        double s = b[o];
                        for (int c = 0; c < cv->in_ch; ++c)
                            for (int ky = 0; ky < cv->k; ++ky) {
                                int iy = y * cv->stride - cv->pad + ky;
                                if (iy < 0 || iy >= in.h) continue;
                                for (int kx = 0; kx < cv->k; ++kx) {
                                    int ix = xo * cv->stride - cv->pad + kx;
                                    if (ix < 0 || ix >= in.w) continue;
                                    s += W[((static_cast<std::size_t>(o) * cv->in_ch + c) *
                                                cv->k +
                                            ky) *
                                               cv->k +
                                           kx] *
                                         a[idx3(c, iy, ix, in.h, in.w)];
                                }
                            }
                        z[idx3(o, y, xo, oh, ow)] = s;
                    }
        } else {
            const auto& p = std::get<Pool2dSpec>(layers_[i]);
            int oh = (in.h - p.k) / p.stride + 1;
            int ow = (in.w - p.k) / p.stride + 1;
            z.assign(static_cast<std::size_t>(in.c) * oh * ow, 0.0);
            if (!p.avg) ws.amax[i].assign(z.size(), 0);
            double inv = 1.0 / (static_cast<double>(p.k) * p.k);
            for (int c = 0; c < in.c; ++c)
                for (int y = 0; y < oh; ++y)
                    for (int xo = 0; xo < ow; ++xo) {
                        double best = -1e300, sum = 0.0;
                        int best_idx = -1;
                        for (int ky = 0; ky < p.k; ++ky)
                            for (int kx = 0; kx < p.k; ++kx) {
                                int ii = idx3(c, y * p.stride + ky, xo * p.stride + kx,
                                              in.h, in.w);
                                sum += a[ii];
                                if (a[ii] > best) {
                                    best = a[ii];
                                    best_idx = ii;
                                }
                            }
                        int oi = idx3(c, y, xo, oh, ow);
                        if (p.avg) {
                            z[oi] = sum * inv;
                        } else {
                            z[oi] = best;
                            ws.amax[i][oi] = best_idx;
                        }
                    }
        }
        if (!all_finite(z))
            throw diverged_error("non-finite activation in layer " + std::to_string(i) +
                                 " (" + kind_name(layers_[i]) + ")");
        ws.pres[i] = std::move(z);

        Act act = Act::none;
        if (const auto* d = std::get_if<DenseSpec>(&layers_[i]))
            act = d->act;
        else if (const auto* cv = std::get_if<Conv2dSpec>(&layers_[i]))
            act = cv->act;
        if (act == Act::relu) {
            Vec out = ws.pres[i];
            for (double& v : out) v = v > 0.0 ? v : 0.0;
            ws.acts[i + 1] = std::move(out);
        } else {
            ws.acts[i + 1] = ws.pres[i];
        }
    }
}

Vec Model::forward(const Vec& params, const Vec& x) const {
    Workspace ws;
    forward_impl(params, x, ws);
    return ws.acts.back();
}

double Model::loss(const Vec& params, const Vec& x, int label) const {
    if (label < 0 || label >= n_classes_)
        throw invalid_argument_error("model: label out of range");
    Vec z = forward(params, x);
    return log_sum_exp(z) - z[label];
}

double Model::loss_grad(const Vec& params, const Vec& x, int label, Vec& grad) const {
    return loss_grad_full(params, x, label, &grad, nullptr);
}

double Model::loss_grad_full(const Vec& params, const Vec& x, int label,
                             Vec* grad_params, Vec* grad_x) const {
    if (label < 0 || label >= n_classes_)
        throw invalid_argument_error("model: label out of range");
    Workspace ws;
    forward_impl(params, x, ws);

    const Vec& logits = ws.acts.back();
    double lse = log_sum_exp(logits);
    double loss = lse - logits[label];

    // dL/dz for the final affine output: softmax(z) - onehot(label).
    Vec dz(logits.size());
    for (std::size_t j = 0; j < logits.size(); ++j) dz[j] = std::exp(logits[j] - lse);
    dz[label] -= 1.0;

    if (grad_params) grad_params->assign(param_count_, 0.0);

    for (std::size_t ii = layers_.size(); ii-- > 0;) {
        const Vec& a = ws.acts[ii];
        const Shape3 in = shapes_[ii];
        Vec da(a.size(), 0.0);

        if (const auto* d = std::get_if<DenseSpec>(&layers_[ii])) {
            const double* W = params.data() + offsets_[ii];
            if (grad_params) {
                double* dW = grad_params->data() + offsets_[ii];
                double* db = dW + static_cast<std::size_t>(d->in) * d->out;
                for (int r = 0; r < d->out; ++r) {
                    double g = dz[r];
                    db[r] += g;
                    double* dwr = dW + static_cast<std::size_t>(r) * d->in;
                    for (int c = 0; c < d->in; ++c) dwr[c] += g * a[c];
                }
            }
            for (int r = 0; r < d->out; ++r) {
                double g = dz[r];
                const double* wr = W + static_cast<std::size_t>(r) * d->in;
                for (int c = 0; c < d->in; ++c) da[c] += g * wr[c];
            }
        } else if (const auto* cv = std::get_if<Conv2dSpec>(&layers_[ii])) {
            const double* W = params.data() + offsets_[ii];
            int oh = (in.h + 2 * cv->pad - cv->k) / cv->stride + 1;
            int ow = (in.w + 2 * cv->pad - cv->k) / cv->stride + 1;
            double* dW = nullptr;
            double* db = nullptr;
            if (grad_params) {
                dW = grad_params->data() + offsets_[ii];
                db = dW + static_cast<std::size_t>(cv->out_ch) * cv->in_ch * cv->k * cv->k;
            }
            for (int o = 0; o < cv->out_ch; ++o)
                for (int y = 0; y < oh; ++y)
                    for (int xo = 0; xo < ow; ++xo) {
                        double g = dz[idx3(o, y, xo, oh, ow)];
                        if (g == 0.0) continue;
                        if (db) db[o] += g;
                        for (int c = 0; c < cv->in_ch; ++c)
                            for (int ky = 0; ky < cv->k; ++ky) {
                                int iy = y * cv->stride - cv->pad + ky;
                                if (iy < 0 || iy >= in.h) continue;
                                for (int kx = 0; kx < cv->k; ++kx) {
                                    int ix = xo * cv->stride - cv->pad + kx;
                                    if (ix < 0 || ix >= in.w) continue;
                                    std::size_t wi =
                                        ((static_cast<std::size_t>(o) * cv->in_ch + c) *
                                             cv->k +
                                         ky) *
                                            cv->k +
                                        kx;
                                    int ai = idx3(c, iy, ix, in.h, in.w);
                                    if (dW) dW[wi] += g * a[ai];
                                    da[ai] += g * W[wi];
                                }
                            }
                    }
        } else {
            const auto& p = std::get<Pool2dSpec>(layers_[ii]);
            int oh = (in.h - p.k) / p.stride + 1;
            int ow = (in.w - p.k) / p.stride + 1;
            double inv = 1.0 / (static_cast<double>(p.k) * p.k);
            for (int c = 0; c < in.c; ++c)
                for (int y = 0; y < oh; ++y)
                    for (int xo = 0; xo < ow; ++xo) {
                        double g = dz[idx3(c, y, xo, oh, ow)];
                        if (g == 0.0) continue;
                        if (p.avg) {
                            for (int ky = 0; ky < p.k; ++ky)
                                for (int kx = 0; kx < p.k; ++kx)
                                    da[idx3(c, y * p.stride + ky, xo * p.stride + kx,
                                            in.h, in.w)] += g * inv;
                        } else {
                            da[ws.amax[ii][idx3(c, y, xo, oh, ow)]] += g;
                        }
                    }
        }

        if (ii == 0) {
            if (grad_x) *grad_x = std::move(da);
            break;
        }
        // Convert gradient w.r.t. acts[ii] into gradient w.r.t. pres[ii-1].
        Act prev_act = Act::none;
        if (const auto* d = std::get_if<DenseSpec>(&layers_[ii - 1]))
            prev_act = d->act;
        else if (const auto* cv = std::get_if<Conv2dSpec>(&layers_[ii - 1]))
            prev_act = cv->act;
        if (prev_act == Act::relu) {
            const Vec& pre = ws.pres[ii - 1];
            for (std::size_t j = 0; j < da.size(); ++j)
                if (pre[j] <= 0.0) da[j] = 0.0;
        }
        dz = std::move(da);
    }
    return loss;
}

double Model::batch_loss_grad(const Vec& params, const std::vector<Vec>& xs,
                              const std::vector<int>& ys, Vec& grad) const {
    if (xs.empty() || xs.size() != ys.size())
        throw invalid_argument_error("model: empty or mismatched batch");
    grad.assign(param_count_, 0.0);
    Vec g;
    double loss_sum = 0.0;
    double inv = 1.0 / static_cast<double>(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        loss_sum += loss_grad(params, xs[i], ys[i], g);
        axpy(inv, g, grad);
    }
    return loss_sum * inv;
}

Model::EvalResult Model::evaluate(const Vec& params, const std::vector<Vec>& xs,
                                  const std::vector<int>& ys) const {
    if (xs.empty() || xs.size() != ys.size())
        throw invalid_argument_error("model: empty or mismatched eval set");
    std::size_t correct = 0;
    double loss_sum = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        Vec z = forward(params, xs[i]);
        int pred = static_cast<int>(
            std::max_element(z.begin(), z.end()) - z.begin());
        if (pred == ys[i]) ++correct;
        loss_sum += log_sum_exp(z) - z[ys[i]];
    }
    return {static_cast<double>(correct) / static_cast<double>(xs.size()),
            loss_sum / static_cast<double>(xs.size())};
}

}  // namespace altfl

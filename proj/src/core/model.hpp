#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "core/rng.hpp"
#include "core/tensor.hpp"

namespace altfl {

enum class Act { none, relu };

struct Shape3 {
    int c = 1, h = 1, w = 1;
    int size() const { return c * h * w; }
    bool operator==(const Shape3&) const = default;
};

struct DenseSpec {
    int in = 0, out = 0;
    Act act = Act::none;
};

struct Conv2dSpec {
    int in_ch = 0, out_ch = 0, k = 0;
    int stride = 1, pad = 0;
    Act act = Act::relu;
};

struct Pool2dSpec {
    int k = 2, stride = 2;
    bool avg = true;  // false -> max pooling
};

using LayerSpec = std::variant<DenseSpec, Conv2dSpec, Pool2dSpec>;

// Location of one dense layer's parameters inside the flat parameter vector.
// Weights are row-major (out x in) at w_off, biases (out) at b_off.
struct DenseLayerRef {
    int in = 0, out = 0;
    Act act = Act::none;
    std::size_t w_off = 0, b_off = 0;
};

// Feed-forward classifier over flat parameter vectors.  The model itself is
// stateless: parameters live in a caller-owned Vec so that protocols can
// clone, aggregate and perturb them freely.
class Model {
public:
    Model(Shape3 input, std::vector<LayerSpec> layers);

    // Fully connected ReLU stack: in_dim -> hidden... -> n_classes.
    static Model mlp(int in_dim, const std::vector<int>& hidden, int n_classes);

    // LeNet-5-style CNN for c x 32 x 32 inputs:
    // conv(->6,5x5) pool2 conv(->16,5x5) pool2 fc(400->120) fc(120->84) fc(84->n).
    // 62,006 parameters for 3-channel input and 10 classes.
    static Model lenet5(Shape3 input = {3, 32, 32}, int n_classes = 10);

    std::size_t param_count() const { return param_count_; }
    int n_classes() const { return n_classes_; }
    Shape3 input_shape() const { return input_; }
    const std::vector<LayerSpec>& layers() const { return layers_; }
    std::size_t layer_param_offset(std::size_t i) const { return offsets_[i]; }
    std::size_t layer_param_count(std::size_t i) const { return counts_[i]; }

    // True when every layer is dense (no conv/pool); attack code has a fast
    // analytic path for this case.
    bool dense_only() const;
    std::vector<DenseLayerRef> dense_layers() const;

    // Per-layer uniform init in +-1/sqrt(fan_in), deterministic given the Rng.
    Vec init_params(Rng& rng) const;

    // Logits for one flattened sample.
    Vec forward(const Vec& params, const Vec& x) const;

    // Softmax cross-entropy (natural log).
    double loss(const Vec& params, const Vec& x, int label) const;

    // Per-sample loss and gradient.  grad is resized and overwritten.
    double loss_grad(const Vec& params, const Vec& x, int label, Vec& grad) const;

    // As loss_grad, optionally also producing the gradient w.r.t. the input
    // (grad_x may be null; grad_params may be null when only grad_x is
    // wanted).
    double loss_grad_full(const Vec& params, const Vec& x, int label,
                          Vec* grad_params, Vec* grad_x) const;

    // Mean loss and gradient over a batch.  grad is resized and overwritten.
    double batch_loss_grad(const Vec& params, const std::vector<Vec>& xs,
                           const std::vector<int>& ys, Vec& grad) const;

    struct EvalResult {
        double accuracy = 0.0;
        double mean_loss = 0.0;
    };
    EvalResult evaluate(const Vec& params, const std::vector<Vec>& xs,
                        const std::vector<int>& ys) const;

private:
    struct Workspace;
    void forward_impl(const Vec& params, const Vec& x, Workspace& ws) const;

    Shape3 input_;
    std::vector<LayerSpec> layers_;
    std::vector<Shape3> shapes_;        // shapes_[i] = input shape of layer i
    std::vector<std::size_t> offsets_;  // param offset per layer
    std::vector<std::size_t> counts_;   // param count per layer
    std::size_t param_count_ = 0;
    int n_classes_ = 0;
};

// Numerically stable log(sum(exp(z))) helper shared with the DP accountant.
double log_sum_exp(const Vec& z);

}  // namespace altfl

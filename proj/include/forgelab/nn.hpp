#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "forgelab/common.hpp"
#include "forgelab/data.hpp"
#include "forgelab/prng.hpp"

namespace forgelab::nn {

enum class Activation { Relu, Tanh };

const char* to_string(Activation a);
Activation activation_from_string(const std::string& s);

enum class ModelKind { Mlp, Cnn };

// Small deterministic model zoo. Mlp covers logistic regression (no hidden
// layers) and dense nets; Cnn is one fixed small shape for 28x28 inputs
// (8 valid 3x3 filters, relu, 2x2 average pooling, dense readout).
// Loss is softmax cross-entropy in both cases.
//
// Parameter flattening is layer-major, weights before bias, row-major
// within each weight matrix; this order fixes the checkpoint byte layout.
struct ModelSpec {
    ModelKind kind = ModelKind::Mlp;
    int input_dim = 0;
    std::vector<int> hidden;  // empty for logistic regression
    int output_dim = 0;       // class count c
    Activation activation = Activation::Relu;

    // Dense layer dimensions including input and output.
    std::vector<int> layer_dims() const;
    size_t param_count() const;
    void validate() const;
};

// Fixed CNN geometry (kind == Cnn, input_dim must be 28*28).
struct CnnShape {
    static constexpr int kImage = 28;
    static constexpr int kFilters = 8;
    static constexpr int kKernel = 3;
    static constexpr int kConvOut = kImage - kKernel + 1;  // 26, valid conv
    static constexpr int kPooled = kConvOut / 2;           // 13, 2x2 avg pool
    static constexpr int kFlat = kPooled * kPooled * kFilters;
};

struct UpdateRule {
    double learning_rate = 0.01;
    uint32_t batch_size = 1;
    void validate(size_t dataset_size) const;
};

Params init_params(const ModelSpec& spec, Xoshiro256& rng, FloatWidth width);

// Pre-softmax class scores. Deterministic in (spec, w, x).
std::vector<double> forward(const ModelSpec& spec, const Params& w,
                            const std::vector<double>& x);

// Softmax cross-entropy loss for a single labeled example; label in {1..c}.
double loss(const ModelSpec& spec, const Params& w,
            const std::vector<double>& x, int label);

// Exact backprop gradient of the loss at (x, label).
Params gradient(const ModelSpec& spec, const Params& w,
                const std::vector<double>& x, int label);

// w - eta * gradient, rounded through the run's float width.
Params example_update(const ModelSpec& spec, const Params& w,
                      const UpdateRule& rule, const data::Example& ex,
                      FloatWidth width = FloatWidth::F64);

// Mean-sampler update over a minibatch: w - eta * mean(per-example grads).
// Gradients are accumulated in batch index order, so the result is
// bit-stable within a build.
Params batch_update(const ModelSpec& spec, const Params& w,
                    const UpdateRule& rule, const data::Minibatch& batch,
                    const data::Dataset& ds, FloatWidth width = FloatWidth::F64);

// Central-difference estimate of the loss gradient, componentwise.
Params finite_diff_grad(const ModelSpec& spec, const Params& w,
                        const data::Example& ex, double h);

// Per-layer rank-1 factorization of a dense-net example gradient:
// grad(W_l) = deltas[l] * acts[l]^T, grad(b_l) = deltas[l].
// Used by the factored forging kernel; Mlp only.
struct MlpFactors {
    std::vector<Eigen::VectorXd> acts;    // acts[l] = input of layer l
    std::vector<Eigen::VectorXd> deltas;  // pre-activation loss gradients
};

MlpFactors mlp_factors(const ModelSpec& spec, const Params& w,
                       const std::vector<double>& x, int label);

}  // namespace forgelab::nn

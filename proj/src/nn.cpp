#include "forgelab/nn.hpp"

#include <cmath>

namespace forgelab::nn {

using Eigen::VectorXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<const RowMatrix>;
using MapVec = Eigen::Map<const VectorXd>;

const char* to_string(Activation a) { return a == Activation::Relu ? "relu" : "tanh"; }

Activation activation_from_string(const std::string& s) {
    if (s == "relu") return Activation::Relu;
    if (s == "tanh") return Activation::Tanh;
    throw InvalidArgument("unknown activation: " + s);
}

std::vector<int> ModelSpec::layer_dims() const {
    std::vector<int> dims;
    dims.push_back(input_dim);
    for (int h : hidden) dims.push_back(h);
    dims.push_back(output_dim);
    return dims;
}

size_t ModelSpec::param_count() const {
    if (kind == ModelKind::Cnn) {
        return size_t(CnnShape::kFilters) * CnnShape::kKernel * CnnShape::kKernel +
               CnnShape::kFilters + size_t(output_dim) * CnnShape::kFlat + output_dim;
    }
    size_t n = 0;
    const auto dims = layer_dims();
    for (size_t l = 0; l + 1 < dims.size(); ++l)
        n += size_t(dims[l + 1]) * dims[l] + dims[l + 1];
    return n;
}

void ModelSpec::validate() const {
    if (input_dim <= 0) throw InvalidArgument("ModelSpec: input_dim <= 0");
    if (output_dim <= 1) throw InvalidArgument("ModelSpec: output_dim <= 1");
    for (int h : hidden)
        if (h <= 0) throw InvalidArgument("ModelSpec: hidden dim <= 0");
    if (kind == ModelKind::Cnn && input_dim != CnnShape::kImage * CnnShape::kImage)
        throw InvalidArgument("ModelSpec: Cnn requires 28x28 input");
}

void UpdateRule::validate(size_t dataset_size) const {
    if (!std::isfinite(learning_rate) || learning_rate < 0.0)
        throw InvalidArgument("UpdateRule: learning_rate must be finite and >= 0");
    if (batch_size < 1 || batch_size > dataset_size)
        throw InvalidArgument("UpdateRule: batch_size out of range");
}

Params init_params(const ModelSpec& spec, Xoshiro256& rng, FloatWidth width) {
    spec.validate();
    Params w(spec.param_count());
    size_t off = 0;
    auto fill = [&](size_t count, int fan_in) {
        const double s = 1.0 / std::sqrt(double(fan_in));
        for (size_t i = 0; i < count; ++i) w[off++] = rng.uniform(-s, s);
    };
    if (spec.kind == ModelKind::Cnn) {
        const int k2 = CnnShape::kKernel * CnnShape::kKernel;
        fill(size_t(CnnShape::kFilters) * k2, k2);
        fill(CnnShape::kFilters, k2);
        fill(size_t(spec.output_dim) * CnnShape::kFlat, CnnShape::kFlat);
        fill(spec.output_dim, CnnShape::kFlat);
    } else {
        const auto dims = spec.layer_dims();
        for (size_t l = 0; l + 1 < dims.size(); ++l) {
            fill(size_t(dims[l + 1]) * dims[l], dims[l]);
            fill(dims[l + 1], dims[l]);
        }
    }
    apply_width(w, width);
    return w;
}

namespace {

void check_params(const ModelSpec& spec, const Params& w) {
    if (w.size() != spec.param_count())
        throw InvalidArgument("parameter vector length does not match spec");
}

void check_input(const ModelSpec& spec, const std::vector<double>& x) {
    if (x.size() != size_t(spec.input_dim))
        throw InvalidArgument("input dimension mismatch: got " +
                              std::to_string(x.size()) + ", want " +
                              std::to_string(spec.input_dim));
}

inline double act_fn(Activation a, double z) {
    return a == Activation::Relu ? (z > 0.0 ? z : 0.0) : std::tanh(z);
}

// Derivative in terms of (pre-activation z, activation value a).
// relu subgradient at 0 is 0.
inline double act_deriv(Activation act, double z, double a) {
    return act == Activation::Relu ? (z > 0.0 ? 1.0 : 0.0) : 1.0 - a * a;
}

// Forward pass storing per-layer pre-activations and activations.
struct MlpTrace {
    std::vector<VectorXd> acts;  // acts[0] = x, acts[l] = input of layer l
    std::vector<VectorXd> zs;    // pre-activation of each layer
};

MlpTrace mlp_forward(const ModelSpec& spec, const Params& w,
                     const std::vector<double>& x) {
    const auto dims = spec.layer_dims();
    MlpTrace t;
    t.acts.emplace_back(MapVec(x.data(), x.size()));
    size_t off = 0;
    for (size_t l = 0; l + 1 < dims.size(); ++l) {
        MapMat W(w.data() + off, dims[l + 1], dims[l]);
        off += size_t(dims[l + 1]) * dims[l];
        MapVec b(w.data() + off, dims[l + 1]);
        off += dims[l + 1];
        VectorXd z = W * t.acts.back() + b;
        t.zs.push_back(z);
        if (l + 2 < dims.size()) {
            VectorXd a(z.size());
            for (int i = 0; i < z.size(); ++i) a[i] = act_fn(spec.activation, z[i]);
            t.acts.push_back(std::move(a));
        }
    }
    return t;
}

VectorXd softmax_stable(const VectorXd& z) {
    const double m = z.maxCoeff();
    VectorXd p = (z.array() - m).exp();
    p /= p.sum();
    return p;
}

struct CnnTrace {
    VectorXd conv_z;    // 8 x 26 x 26 pre-activations, filter-major
    VectorXd conv_a;    // activations
    VectorXd pooled;    // 8 x 13 x 13 flattened
    VectorXd logits;
};

CnnTrace cnn_forward(const ModelSpec& spec, const Params& w,
                     const std::vector<double>& x) {
    constexpr int F = CnnShape::kFilters, K = CnnShape::kKernel;
    constexpr int IM = CnnShape::kImage, CO = CnnShape::kConvOut, P = CnnShape::kPooled;
    CnnTrace t;
    const double* kw = w.data();
    const double* kb = kw + size_t(F) * K * K;
    const double* dw = kb + F;
    const double* db = dw + size_t(spec.output_dim) * CnnShape::kFlat;
    t.conv_z.resize(F * CO * CO);
    t.conv_a.resize(F * CO * CO);
    for (int f = 0; f < F; ++f) {
        const double* kf = kw + size_t(f) * K * K;
        for (int r = 0; r < CO; ++r)
            for (int c = 0; c < CO; ++c) {
                double s = kb[f];
                for (int kr = 0; kr < K; ++kr)
                    for (int kc = 0; kc < K; ++kc)
                        s += kf[kr * K + kc] * x[(r + kr) * IM + (c + kc)];
                const int idx = (f * CO + r) * CO + c;
                t.conv_z[idx] = s;
                t.conv_a[idx] = act_fn(spec.activation, s);
            }
    }
    t.pooled.resize(F * P * P);
    for (int f = 0; f < F; ++f)
        for (int r = 0; r < P; ++r)
            for (int c = 0; c < P; ++c) {
                double s = 0.0;
                for (int dr = 0; dr < 2; ++dr)
                    for (int dc = 0; dc < 2; ++dc)
                        s += t.conv_a[(f * CO + 2 * r + dr) * CO + 2 * c + dc];
                t.pooled[(f * P + r) * P + c] = 0.25 * s;
            }
    MapMat Wd(dw, spec.output_dim, CnnShape::kFlat);
    MapVec bd(db, spec.output_dim);
    t.logits = Wd * t.pooled + bd;
    return t;
}

void check_label(const ModelSpec& spec, int label) {
    if (label < 1 || label > spec.output_dim)
        throw InvalidArgument("label out of range: " + std::to_string(label));
}

}  // namespace

std::vector<double> forward(const ModelSpec& spec, const Params& w,
                            const std::vector<double>& x) {
    check_params(spec, w);
    check_input(spec, x);
    if (spec.kind == ModelKind::Cnn) {
        const auto t = cnn_forward(spec, w, x);
        return {t.logits.data(), t.logits.data() + t.logits.size()};
    }
    const auto t = mlp_forward(spec, w, x);
    const VectorXd& z = t.zs.back();
    return {z.data(), z.data() + z.size()};
}

double loss(const ModelSpec& spec, const Params& w, const std::vector<double>& x,
            int label) {
    check_label(spec, label);
    const auto scores = forward(spec, w, x);
    MapVec z(scores.data(), scores.size());
    const double m = z.maxCoeff();
    const double lse = m + std::log((z.array() - m).exp().sum());
    return lse - scores[label - 1];
}

Params gradient(const ModelSpec& spec, const Params& w, const std::vector<double>& x,
                int label) {
    check_params(spec, w);
    check_input(spec, x);
    check_label(spec, label);
    Params g(w.size(), 0.0);

    if (spec.kind == ModelKind::Cnn) {
        constexpr int F = CnnShape::kFilters, K = CnnShape::kKernel;
        constexpr int IM = CnnShape::kImage, CO = CnnShape::kConvOut, P = CnnShape::kPooled;
        const auto t = cnn_forward(spec, w, x);
        VectorXd dz = softmax_stable(t.logits);
        dz[label - 1] -= 1.0;
        const double* dw = w.data() + size_t(F) * K * K + F;
        double* gkw = g.data();
        double* gkb = gkw + size_t(F) * K * K;
        double* gdw = gkb + F;
        double* gdb = gdw + size_t(spec.output_dim) * CnnShape::kFlat;
        MapMat Wd(dw, spec.output_dim, CnnShape::kFlat);
        Eigen::Map<RowMatrix>(gdw, spec.output_dim, CnnShape::kFlat).noalias() =
            dz * t.pooled.transpose();
        Eigen::Map<VectorXd>(gdb, spec.output_dim) = dz;
        VectorXd dpool = Wd.transpose() * dz;
        for (int f = 0; f < F; ++f) {
            double* kf = gkw + size_t(f) * K * K;
            for (int r = 0; r < CO; ++r)
                for (int c = 0; c < CO; ++c) {
                    const int idx = (f * CO + r) * CO + c;
                    const double d =
                        0.25 * dpool[(f * P + r / 2) * P + c / 2] *
                        act_deriv(spec.activation, t.conv_z[idx], t.conv_a[idx]);
                    if (d == 0.0) continue;
                    gkb[f] += d;
                    for (int kr = 0; kr < K; ++kr)
                        for (int kc = 0; kc < K; ++kc)
                            kf[kr * K + kc] += d * x[(r + kr) * IM + (c + kc)];
                }
        }
    } else {
        const auto dims = spec.layer_dims();
        const auto t = mlp_forward(spec, w, x);
        VectorXd delta = softmax_stable(t.zs.back());
        delta[label - 1] -= 1.0;
        std::vector<size_t> w_off(dims.size() - 1);
        size_t off = 0;
        for (size_t l = 0; l + 1 < dims.size(); ++l) {
            w_off[l] = off;
            off += size_t(dims[l + 1]) * dims[l] + dims[l + 1];
        }
        for (size_t l = dims.size() - 2;; --l) {
            Eigen::Map<RowMatrix> gW(g.data() + w_off[l], dims[l + 1], dims[l]);
            gW.noalias() = delta * t.acts[l].transpose();
            Eigen::Map<VectorXd>(g.data() + w_off[l] + size_t(dims[l + 1]) * dims[l],
                                 dims[l + 1]) = delta;
            if (l == 0) break;
            MapMat W(w.data() + w_off[l], dims[l + 1], dims[l]);
            VectorXd da = W.transpose() * delta;
            delta.resize(dims[l]);
            for (int i = 0; i < dims[l]; ++i)
                delta[i] =
                    da[i] * act_deriv(spec.activation, t.zs[l - 1][i], t.acts[l][i]);
        }
    }

    for (size_t i = 0; i < g.size(); ++i)
        if (!std::isfinite(g[i]))
            throw NumericError("non-finite gradient at flat index " + std::to_string(i));
    return g;
}

Params example_update(const ModelSpec& spec, const Params& w, const UpdateRule& rule,
                      const data::Example& ex, FloatWidth width) {
    Params g = gradient(spec, w, ex.features, ex.label);
    Params out(w.size());
    for (size_t i = 0; i < w.size(); ++i) out[i] = w[i] - rule.learning_rate * g[i];
    apply_width(out, width);
    return out;
}

Params batch_update(const ModelSpec& spec, const Params& w, const UpdateRule& rule,
                    const data::Minibatch& batch, const data::Dataset& ds,
                    FloatWidth width) {
    if (batch.indices.empty()) throw InvalidArgument("batch_update: empty batch");
    Params acc(w.size(), 0.0);
    for (uint32_t idx : batch.indices) {
        const data::Example& ex = ds.at(idx);
        const Params g = gradient(spec, w, ex.features, ex.label);
        for (size_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
    }
    const double scale = rule.learning_rate / double(batch.indices.size());
    Params out(w.size());
    for (size_t i = 0; i < w.size(); ++i) out[i] = w[i] - scale * acc[i];
    apply_width(out, width);
    return out;
}

Params finite_diff_grad(const ModelSpec& spec, const Params& w,
                        const data::Example& ex, double h) {
    if (!(h > 0.0)) throw InvalidArgument("finite_diff_grad: h <= 0");
    check_params(spec, w);
    Params g(w.size());
#pragma omp parallel for schedule(static)
    for (long i = 0; i < long(w.size()); ++i) {
        Params wp = w;
        wp[i] = w[i] + h;
        const double lp = loss(spec, wp, ex.features, ex.label);
        wp[i] = w[i] - h;
        const double lm = loss(spec, wp, ex.features, ex.label);
        g[i] = (lp - lm) / (2.0 * h);
    }
    return g;
}

MlpFactors mlp_factors(const ModelSpec& spec, const Params& w,
                       const std::vector<double>& x, int label) {
    if (spec.kind != ModelKind::Mlp)
        throw InvalidArgument("mlp_factors: dense nets only");
    check_params(spec, w);
    check_input(spec, x);
    check_label(spec, label);
    const auto dims = spec.layer_dims();
    const auto t = mlp_forward(spec, w, x);
    MlpFactors f;
    f.acts = t.acts;
    f.deltas.resize(dims.size() - 1);
    VectorXd delta = softmax_stable(t.zs.back());
    delta[label - 1] -= 1.0;
    std::vector<size_t> w_off(dims.size() - 1);
    size_t off = 0;
    for (size_t l = 0; l + 1 < dims.size(); ++l) {
        w_off[l] = off;
        off += size_t(dims[l + 1]) * dims[l] + dims[l + 1];
    }
    for (size_t l = dims.size() - 2;; --l) {
        f.deltas[l] = delta;
        if (l == 0) break;
        MapMat W(w.data() + w_off[l], dims[l + 1], dims[l]);
        VectorXd da = W.transpose() * delta;
        delta.resize(dims[l]);
        for (int i = 0; i < dims[l]; ++i)
            delta[i] = da[i] * act_deriv(spec.activation, t.zs[l - 1][i], t.acts[l][i]);
    }
    return f;
}

}  // namespace forgelab::nn

#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "ops.hpp"

namespace fraglow::compute {

enum class Activation { Tanh, Relu };
enum class FinalLayer { Linear, Softmax };

struct MlpParams {
    struct Layer {
        Tensor weight;  // [out, in]
        Tensor bias;    // [out]
    };
    std::vector<Layer> layers;
    Activation activation = Activation::Tanh;
    FinalLayer final = FinalLayer::Linear;

    int64_t in_dim() const { return layers.front().weight.dim(1); }
    int64_t out_dim() const { return layers.front().weight.dim(0) == 0 ? 0 : layers.back().weight.dim(0); }
    int64_t param_count() const {
        int64_t n = 0;
        for (const auto& l : layers) n += l.weight.size() + l.bias.size();
        return n;
    }
};

// Seeded Xavier-uniform init; identical for identical (seed, dims).
MlpParams mlp_init(const std::vector<int64_t>& dims, Activation act, FinalLayer fin, uint64_t seed,
                   DType dtype = DType::F32);

struct MlpCache {
    Tensor input;
    std::vector<Tensor> pre;    // pre-activation per layer
    std::vector<Tensor> post;   // post-activation per layer (last = output)
};

Tensor mlp_forward(const MlpParams& p, const Tensor& x, MlpCache* cache = nullptr);

// Exact reverse-mode gradients; returns grads shaped like params.
MlpParams mlp_backward(const MlpParams& p, const MlpCache& cache, const Tensor& dy,
                       Tensor* dx = nullptr);

// Flat views used by the optimizer and gradient exchange.
std::vector<double> mlp_flatten(const MlpParams& p);
void mlp_unflatten(MlpParams& p, const std::vector<double>& flat);
void mlp_accumulate(MlpParams& into, const MlpParams& grads, double coef = 1.0);

struct AdamState {
    std::vector<double> m, v;
    int64_t t = 0;
    double lr = 1e-3, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

AdamState adam_init(int64_t n, double lr);
// In-place Adam update on a flat parameter vector.
void adam_step(std::vector<double>& params, const std::vector<double>& grads, AdamState& st,
               bool round_f32 = true);

struct GradCheckReport {
    double max_rel_err = 0.0;
    int64_t worst_coord = -1;
    int64_t coords_checked = 0;
    bool ok(double tol) const { return max_rel_err < tol; }
};

// Central-difference check of analytic_grad against f on sampled coordinates.
GradCheckReport grad_check(const std::function<double(const std::vector<double>&)>& f,
                           const std::vector<double>& params, const std::vector<double>& analytic_grad,
                           double h = 1e-6, int64_t max_coords = 256, uint64_t seed = 0);

}  // namespace fraglow::compute

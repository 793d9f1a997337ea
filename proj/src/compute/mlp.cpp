#include "mlp.hpp"

#include <cmath>

#include "../core/rng.hpp"

namespace fraglow::compute {

MlpParams mlp_init(const std::vector<int64_t>& dims, Activation act, FinalLayer fin, uint64_t seed,
                   DType dtype) {
    if (dims.size() < 2) fail(Errc::Config, "mlp needs at least [in, out] dims");
    MlpParams p;
    p.activation = act;
    p.final = fin;
    for (size_t l = 0; l + 1 < dims.size(); ++l) {
        int64_t in = dims[l], out = dims[l + 1];
        Tensor w({out, in}, dtype);
        double a = std::sqrt(6.0 / static_cast<double>(in + out));
        for (int64_t i = 0; i < w.size(); ++i)
            w.set(i, rng::uniform_range(rng::key(seed, 0x6d6c70, l, static_cast<uint64_t>(i)), -a, a));
        p.layers.push_back({std::move(w), Tensor({out}, dtype)});
    }
    return p;
}

namespace {

Tensor apply_act(const Tensor& z, Activation act) {
    return act == Activation::Tanh ? ops::tanh(z) : ops::relu(z);
}

}  // namespace

Tensor mlp_forward(const MlpParams& p, const Tensor& x, MlpCache* cache) {
    if (x.rank() != 2 || x.dim(1) != p.in_dim())
        fail(Errc::Shape, "mlp_forward: input " + shape_str(x.shape()) + " vs in_dim " +
                              std::to_string(p.in_dim()));
    if (cache) {
        cache->input = x;
        cache->pre.clear();
        cache->post.clear();
    }
    Tensor h = x;
    for (size_t l = 0; l < p.layers.size(); ++l) {
        // y = h . W^T + b, W stored [out, in]
        const Tensor& w = p.layers[l].weight;
        Tensor wt({w.dim(1), w.dim(0)}, w.dtype());
        for (int64_t i = 0; i < w.dim(0); ++i)
            for (int64_t j = 0; j < w.dim(1); ++j) wt.raw(j * w.dim(0) + i) = w.at(i * w.dim(1) + j);
        Tensor z = ops::add(ops::matmul(h, wt), p.layers[l].bias);
        bool last = l + 1 == p.layers.size();
        Tensor out = last ? (p.final == FinalLayer::Softmax ? ops::softmax(z) : z)
                          : apply_act(z, p.activation);
        if (cache) {
            cache->pre.push_back(z);
            cache->post.push_back(out);
        }
        h = std::move(out);
    }
    return h;
}

MlpParams mlp_backward(const MlpParams& p, const MlpCache& cache, const Tensor& dy, Tensor* dx) {
    MlpParams g = p;
    for (auto& l : g.layers) {
        l.weight = Tensor(l.weight.shape(), l.weight.dtype());
        l.bias = Tensor(l.bias.shape(), l.bias.dtype());
    }
    Tensor delta = dy;
    for (int64_t l = static_cast<int64_t>(p.layers.size()) - 1; l >= 0; --l) {
        bool last = l + 1 == static_cast<int64_t>(p.layers.size());
        if (last) {
            if (p.final == FinalLayer::Softmax) delta = ops::softmax_grad(delta, cache.post[l]);
        } else {
            delta = p.activation == Activation::Tanh ? ops::tanh_grad(delta, cache.post[l])
                                                     : ops::relu_grad(delta, cache.pre[l]);
        }
        const Tensor& h_in = l == 0 ? cache.input : cache.post[l - 1];
        // dW[o,i] = sum_b delta[b,o] * h_in[b,i]
        Tensor& dw = g.layers[l].weight;
        int64_t B = h_in.dim(0), in = h_in.dim(1), out = dw.dim(0);
        for (int64_t o = 0; o < out; ++o)
            for (int64_t i = 0; i < in; ++i) {
                double acc = 0.0;
                for (int64_t b = 0; b < B; ++b) acc += delta.at(b * out + o) * h_in.at(b * in + i);
                dw.set(o * in + i, acc);
            }
        Tensor& db = g.layers[l].bias;
        for (int64_t o = 0; o < out; ++o) {
            double acc = 0.0;
            for (int64_t b = 0; b < B; ++b) acc += delta.at(b * out + o);
            db.set(o, acc);
        }
        if (l > 0 || dx) {
            // d h_in[b,i] = sum_o delta[b,o] * W[o,i]
            const Tensor& w = p.layers[l].weight;
            Tensor dh({B, in}, h_in.dtype());
            for (int64_t b = 0; b < B; ++b)
                for (int64_t i = 0; i < in; ++i) {
                    double acc = 0.0;
                    for (int64_t o = 0; o < out; ++o) acc += delta.at(b * out + o) * w.at(o * in + i);
                    dh.set(b * in + i, acc);
                }
            if (l == 0 && dx) *dx = dh;
            delta = std::move(dh);
        }
    }
    return g;
}

std::vector<double> mlp_flatten(const MlpParams& p) {
    std::vector<double> flat;
    flat.reserve(p.param_count());
    for (const auto& l : p.layers) {
        for (int64_t i = 0; i < l.weight.size(); ++i) flat.push_back(l.weight.at(i));
        for (int64_t i = 0; i < l.bias.size(); ++i) flat.push_back(l.bias.at(i));
    }
    return flat;
}

void mlp_unflatten(MlpParams& p, const std::vector<double>& flat) {
    size_t k = 0;
    for (auto& l : p.layers) {
        for (int64_t i = 0; i < l.weight.size(); ++i) l.weight.set(i, flat[k++]);
        for (int64_t i = 0; i < l.bias.size(); ++i) l.bias.set(i, flat[k++]);
    }
}

void mlp_accumulate(MlpParams& into, const MlpParams& grads, double coef) {
    for (size_t l = 0; l < into.layers.size(); ++l) {
        for (int64_t i = 0; i < into.layers[l].weight.size(); ++i)
            into.layers[l].weight.set(i, into.layers[l].weight.at(i) + coef * grads.layers[l].weight.at(i));
        for (int64_t i = 0; i < into.layers[l].bias.size(); ++i)
            into.layers[l].bias.set(i, into.layers[l].bias.at(i) + coef * grads.layers[l].bias.at(i));
    }
}

AdamState adam_init(int64_t n, double lr) {
    AdamState st;
    st.m.assign(n, 0.0);
    st.v.assign(n, 0.0);
    st.lr = lr;
    return st;
}

void adam_step(std::vector<double>& params, const std::vector<double>& grads, AdamState& st,
               bool round_f32) {
    if (params.size() != grads.size() || params.size() != st.m.size())
        fail(Errc::Shape, "adam_step: size mismatch");
    st.t += 1;
    double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.t));
    double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.t));
    for (size_t i = 0; i < params.size(); ++i) {
        st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * grads[i];
        st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * grads[i] * grads[i];
        double mhat = st.m[i] / bc1;
        double vhat = st.v[i] / bc2;
        double next = params[i] - st.lr * mhat / (std::sqrt(vhat) + st.eps);
        params[i] = round_f32 ? static_cast<double>(static_cast<float>(next)) : next;
    }
}

GradCheckReport grad_check(const std::function<double(const std::vector<double>&)>& f,
                           const std::vector<double>& params, const std::vector<double>& analytic_grad,
                           double h, int64_t max_coords, uint64_t seed) {
    GradCheckReport rep;
    int64_t n = static_cast<int64_t>(params.size());
    std::vector<int64_t> coords;
    if (n <= max_coords) {
        coords.resize(n);
        for (int64_t i = 0; i < n; ++i) coords[i] = i;
    } else {
        for (int64_t i = 0; i < max_coords; ++i)
            coords.push_back(static_cast<int64_t>(rng::uniform(seed, 0x6763, i) * n));
    }
    std::vector<double> work = params;
    for (int64_t c : coords) {
        double orig = work[c];
        work[c] = orig + h;
        double fp = f(work);
        work[c] = orig - h;
        double fm = f(work);
        work[c] = orig;
        double numeric = (fp - fm) / (2.0 * h);
        double denom = std::max({std::abs(numeric), std::abs(analytic_grad[c]), 1e-8});
        double rel = std::abs(numeric - analytic_grad[c]) / denom;
        if (rel > rep.max_rel_err) {
            rep.max_rel_err = rel;
            rep.worst_coord = c;
        }
        rep.coords_checked++;
    }
    return rep;
}

}  // namespace fraglow::compute

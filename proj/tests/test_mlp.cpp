#include "compute/mlp.hpp"
#include "core/rng.hpp"
#include "doctest.h"

using namespace fraglow;
using namespace fraglow::compute;

namespace {

// Straightforward per-sample loop, independent of the batched path.
std::vector<double> forward_one(const MlpParams& p, const std::vector<double>& x) {
    std::vector<double> h = x;
    for (size_t l = 0; l < p.layers.size(); ++l) {
        const Tensor& w = p.layers[l].weight;
        int64_t out = w.dim(0), in = w.dim(1);
        std::vector<double> z(static_cast<size_t>(out));
        for (int64_t o = 0; o < out; ++o) {
            double acc = 0.0;
            for (int64_t i = 0; i < in; ++i) acc += h[static_cast<size_t>(i)] * w.at(o * in + i);
            acc += p.layers[l].bias.at(o);
            z[static_cast<size_t>(o)] = p.layers[l].weight.dtype() == DType::F32
                                            ? static_cast<double>(static_cast<float>(acc))
                                            : acc;
        }
        bool last = l + 1 == p.layers.size();
        if (!last)
            for (double& v : z) {
                double a = p.activation == Activation::Tanh ? std::tanh(v) : (v > 0 ? v : 0.0);
                v = p.layers[l].weight.dtype() == DType::F32
                        ? static_cast<double>(static_cast<float>(a))
                        : a;
            }
        h = std::move(z);
    }
    return h;
}

}  // namespace

TEST_CASE("zero weights and bias give zero output under tanh") {
    MlpParams p = mlp_init({3, 4, 2}, Activation::Tanh, FinalLayer::Linear, 1);
    for (auto& l : p.layers) {
        l.weight = Tensor(l.weight.shape(), l.weight.dtype());
        l.bias = Tensor(l.bias.shape(), l.bias.dtype());
    }
    Tensor x({2, 3}, DType::F32, {1, -1, 2, 0.5, 0.25, -2});
    Tensor y = mlp_forward(p, x);
    for (int64_t i = 0; i < y.size(); ++i) CHECK(y.at(i) == 0.0);
}

TEST_CASE("one linear layer matches x.W^T + b by hand") {
    MlpParams p;
    p.layers.push_back({Tensor({2, 2}, DType::F32, {1, 2, 3, 4}), Tensor({2}, DType::F32, {10, 20})});
    Tensor x({2, 2}, DType::F32, {1, 0, 0, 1});
    Tensor y = mlp_forward(p, x);
    // row0: [1*1+0*2+10, 1*3+0*4+20] = [11, 23]; row1: [2+10, 4+20] = [12, 24]
    CHECK(y.data() == std::vector<double>{11, 23, 12, 24});
}

TEST_CASE("batched forward equals the independent per-sample loop bit-exactly") {
    MlpParams p = mlp_init({5, 7, 3}, Activation::Tanh, FinalLayer::Linear, 33);
    Tensor x({3, 5}, DType::F32);
    for (int64_t i = 0; i < x.size(); ++i) x.set(i, rng::uniform_range(rng::key(2, i), -2, 2));
    Tensor y = mlp_forward(p, x);
    for (int64_t b = 0; b < 3; ++b) {
        std::vector<double> row(5);
        for (int64_t j = 0; j < 5; ++j) row[static_cast<size_t>(j)] = x.at(b * 5 + j);
        auto expect = forward_one(p, row);
        for (int64_t j = 0; j < 3; ++j) CHECK(y.at(b * 3 + j) == expect[static_cast<size_t>(j)]);
    }
}

TEST_CASE("backward: zero upstream gradient gives zero parameter gradients") {
    MlpParams p = mlp_init({4, 8, 2}, Activation::Tanh, FinalLayer::Linear, 5);
    Tensor x({3, 4}, DType::F32);
    MlpCache cache;
    mlp_forward(p, x, &cache);
    MlpParams g = mlp_backward(p, cache, Tensor({3, 2}, DType::F32));
    for (const auto& l : g.layers) {
        for (int64_t i = 0; i < l.weight.size(); ++i) CHECK(l.weight.at(i) == 0.0);
        for (int64_t i = 0; i < l.bias.size(); ++i) CHECK(l.bias.at(i) == 0.0);
    }
}

TEST_CASE("backward of a scalar linear layer: dW = dy^T . x") {
    MlpParams p;
    p.layers.push_back({Tensor({1, 2}, DType::F64, {0.5, -0.25}), Tensor({1}, DType::F64, {0})});
    Tensor x({1, 2}, DType::F64, {3, 4});
    MlpCache cache;
    mlp_forward(p, x, &cache);
    MlpParams g = mlp_backward(p, cache, Tensor({1, 1}, DType::F64, {2.0}));
    CHECK(g.layers[0].weight.at(0) == 6.0);
    CHECK(g.layers[0].weight.at(1) == 8.0);
    CHECK(g.layers[0].bias.at(0) == 2.0);
}

TEST_CASE("backward matches central differences on random nets up to [16,16,4]") {
    for (uint64_t seed = 0; seed < 3; ++seed) {
        MlpParams p = mlp_init({6, 16, 16, 4}, seed % 2 ? Activation::Tanh : Activation::Relu,
                               FinalLayer::Linear, seed + 100, DType::F64);
        Tensor x({4, 6}, DType::F64);
        for (int64_t i = 0; i < x.size(); ++i)
            x.set(i, rng::uniform_range(rng::key(seed, 3, i), -1, 1));
        // Loss: sum of outputs weighted by a fixed pattern.
        auto loss_of = [&](const MlpParams& net) {
            Tensor y = mlp_forward(net, x);
            double acc = 0.0;
            for (int64_t i = 0; i < y.size(); ++i) acc += y.at(i) * (0.1 * static_cast<double>(i % 7) - 0.3);
            return acc;
        };
        MlpCache cache;
        Tensor y = mlp_forward(p, x, &cache);
        Tensor dy(y.shape(), DType::F64);
        for (int64_t i = 0; i < dy.size(); ++i) dy.set(i, 0.1 * static_cast<double>(i % 7) - 0.3);
        MlpParams analytic = mlp_backward(p, cache, dy);
        auto f = [&](const std::vector<double>& flat) {
            MlpParams p2 = p;
            mlp_unflatten(p2, flat);
            return loss_of(p2);
        };
        auto rep = grad_check(f, mlp_flatten(p), mlp_flatten(analytic), 1e-6, 256, seed);
        CHECK(rep.max_rel_err < 1e-4);
    }
}

TEST_CASE("grad_check: analytic gradient of sum(params) is exactly one") {
    std::vector<double> params(20, 0.3);
    auto f = [](const std::vector<double>& p) {
        double s = 0;
        for (double v : p) s += v;
        return s;
    };
    std::vector<double> ones(20, 1.0);
    auto rep = grad_check(f, params, ones);
    CHECK(rep.max_rel_err < 1e-9);
    // Negative control: a dropped term is flagged.
    std::vector<double> bad = ones;
    bad[3] = 0.0;
    auto rep2 = grad_check(f, params, bad);
    CHECK(rep2.max_rel_err > 1e-4);
    CHECK(rep2.worst_coord == 3);
}

TEST_CASE("adam: zero gradients leave parameters unchanged") {
    std::vector<double> params{1.0, -2.0, 3.0};
    AdamState st = adam_init(3, 0.1);
    adam_step(params, {0, 0, 0}, st);
    CHECK(params == std::vector<double>{1.0, -2.0, 3.0});
    CHECK(st.t == 1);
}

TEST_CASE("adam first step moves by about lr for unit gradient") {
    std::vector<double> params{0.0};
    AdamState st = adam_init(1, 0.1);
    adam_step(params, {1.0}, st, false);
    CHECK(params[0] == doctest::Approx(-0.1).epsilon(1e-6));
}

TEST_CASE("adam converges on the quadratic bowl") {
    std::vector<double> w{1.0};
    AdamState st = adam_init(1, 0.05);
    for (int i = 0; i < 100; ++i) adam_step(w, {2.0 * w[0]}, st, false);
    CHECK(std::abs(w[0]) < 0.05);
}

TEST_CASE("adam with lr zero is the identity") {
    std::vector<double> params{0.5, -0.5};
    AdamState st = adam_init(2, 0.0);
    adam_step(params, {3.0, -1.0}, st);
    CHECK(params == std::vector<double>{0.5, -0.5});
}

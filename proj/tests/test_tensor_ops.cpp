#include "compute/op_eval.hpp"
#include "core/rng.hpp"
#include "doctest.h"

using namespace fraglow;

TEST_CASE("matmul matches hand arithmetic") {
    Tensor a({2, 2}, DType::F32, {1, 2, 3, 4});
    Tensor v({2}, DType::F32, {1, 1});
    Tensor y = ops::matmul(a, v);
    CHECK(y.shape() == Shape{2});
    CHECK(y.at(0) == 3.0);
    CHECK(y.at(1) == 7.0);

    Tensor b({2, 2}, DType::F32, {5, 6, 7, 8});
    Tensor m = ops::matmul(a, b);
    CHECK(m.data() == std::vector<double>{19, 22, 43, 50});
    CHECK_THROWS_AS(ops::matmul(a, Tensor({3}, DType::F32)), Error);
    CHECK_THROWS_AS(ops::matmul(a, Tensor({2, 2}, DType::F64)), Error);
}

TEST_CASE("softmax symmetry and normalization") {
    Tensor z({2}, DType::F32, {0, 0});
    Tensor p = ops::softmax(z);
    CHECK(p.at(0) == doctest::Approx(0.5));
    CHECK(p.at(1) == doctest::Approx(0.5));
    for (int trial = 0; trial < 50; ++trial) {
        Tensor logits({3, 5}, DType::F32);
        for (int64_t i = 0; i < logits.size(); ++i)
            logits.set(i, rng::uniform_range(rng::key(1, trial, i), -8, 8));
        Tensor sm = ops::softmax(logits);
        for (int64_t r = 0; r < 3; ++r) {
            double sum = 0;
            for (int64_t c = 0; c < 5; ++c) {
                double v = sm.at(r * 5 + c);
                CHECK(v > 0.0);
                CHECK(v < 1.0);
                sum += v;
            }
            CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
        }
    }
}

TEST_CASE("reduce_mean of 1000 random f32 values matches the f64 oracle") {
    Tensor x({1000}, DType::F32);
    double acc = 0.0;
    for (int64_t i = 0; i < 1000; ++i) {
        x.set(i, rng::uniform_range(rng::key(7, i), -3, 3));
        acc += x.at(i);  // storage is float-exact, so this is the F64 sum
    }
    double oracle = acc / 1000.0;
    double got = ops::reduce_mean(x).at(0);
    CHECK(std::abs(got - oracle) <= std::abs(oracle) * 1e-6 + 1e-9);
}

TEST_CASE("elementwise ops broadcast a trailing suffix") {
    Tensor x({2, 3}, DType::F32, {1, 2, 3, 4, 5, 6});
    Tensor bias({3}, DType::F32, {10, 20, 30});
    Tensor y = ops::add(x, bias);
    CHECK(y.data() == std::vector<double>{11, 22, 33, 14, 25, 36});
    CHECK_THROWS_AS(ops::add(Tensor({3}, DType::F32), Tensor({4}, DType::F32)), Error);
}

TEST_CASE("slice and concat are inverse along an axis") {
    Tensor x({4, 3}, DType::F32);
    for (int64_t i = 0; i < x.size(); ++i) x.set(i, static_cast<double>(i));
    Tensor top = ops::slice(x, 0, 0, 2, false);
    Tensor bottom = ops::slice(x, 0, 2, 4, false);
    Tensor back = ops::concat({&top, &bottom}, 0);
    CHECK(back.data() == x.data());

    Tensor col = ops::slice(x, 1, 1, 2, true);
    CHECK(col.shape() == Shape{4});
    CHECK(col.at(2) == 7.0);
}

TEST_CASE("tensor wire encoding round trips exactly") {
    for (int trial = 0; trial < 200; ++trial) {
        size_t rank = 1 + static_cast<size_t>(rng::uniform(9, trial) * 2);
        Shape shape;
        for (size_t d = 0; d < rank; ++d)
            shape.push_back(1 + static_cast<int64_t>(rng::uniform(10, trial, d) * 5));
        DType dt = trial % 2 ? DType::F64 : DType::F32;
        Tensor t(shape, dt);
        for (int64_t i = 0; i < t.size(); ++i)
            t.set(i, rng::uniform_range(rng::key(11, trial, i), -1e6, 1e6));
        auto bytes = t.encode();
        Tensor back = Tensor::decode(bytes.data(), bytes.size());
        CHECK(back.shape() == t.shape());
        CHECK(back.dtype() == t.dtype());
        CHECK(back.data() == t.data());
    }
    std::vector<uint8_t> junk = {0, 9};
    CHECK_THROWS_AS((void)Tensor::decode(junk.data(), junk.size()), Error);
}

TEST_CASE("f32 tensors stay float-exact through arithmetic") {
    Tensor a({2}, DType::F32, {0.1, 0.2});
    Tensor b = ops::mul(a, a);
    for (int64_t i = 0; i < b.size(); ++i)
        CHECK(b.at(i) == static_cast<double>(static_cast<float>(b.at(i))));
}

TEST_CASE("op_eval dispatches the tensor family and rejects the rest") {
    using fraglow::dfg::OpKind;
    Tensor a({2, 2}, DType::F32, {1, 2, 3, 4});
    Tensor v({2}, DType::F32, {1, 1});
    Tensor y = fraglow::compute::op_eval(OpKind::MatMul, {&a, &v}, {});
    CHECK(y.data() == std::vector<double>{3, 7});
    Tensor z({2}, DType::F32, {0, 0});
    Tensor p = fraglow::compute::op_eval(OpKind::Softmax, {&z}, {});
    CHECK(p.at(0) == doctest::Approx(0.5));
    CHECK_THROWS_AS((void)fraglow::compute::op_eval(OpKind::EnvStep, {&a}, {}), Error);
    CHECK_THROWS_AS((void)fraglow::compute::op_eval(OpKind::Add, {&a}, {}), Error);
}

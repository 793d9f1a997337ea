#include "ops.hpp"

#include <algorithm>

namespace fraglow::ops {

namespace {

void require(bool cond, Errc code, const std::string& msg) {
    if (!cond) fail(code, msg);
}

DType joint_dtype(const Tensor& a, const Tensor& b) {
    require(a.dtype() == b.dtype(), Errc::Dtype,
            std::string("dtype mismatch: ") + dtype_name(a.dtype()) + " vs " + dtype_name(b.dtype()));
    return a.dtype();
}

// True when b's shape equals the trailing axes of a's shape (bias-style broadcast).
bool suffix_broadcast(const Shape& a, const Shape& b) {
    if (b.size() > a.size()) return false;
    for (size_t i = 0; i < b.size(); ++i)
        if (b[b.size() - 1 - i] != a[a.size() - 1 - i]) return false;
    return true;
}

template <typename F>
Tensor binary(const Tensor& a, const Tensor& b, F f, const char* name) {
    DType dt = joint_dtype(a, b);
    if (a.same_shape(b)) {
        Tensor out(a.shape(), dt);
        for (int64_t i = 0; i < a.size(); ++i) out.set(i, f(a.at(i), b.at(i)));
        return out;
    }
    require(suffix_broadcast(a.shape(), b.shape()), Errc::Shape,
            std::string(name) + ": shapes " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor out(a.shape(), dt);
    int64_t bn = b.size();
    for (int64_t i = 0; i < a.size(); ++i) out.set(i, f(a.at(i), b.at(i % bn)));
    return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary(a, b, [](double x, double y) { return x + y; }, "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary(a, b, [](double x, double y) { return x - y; }, "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary(a, b, [](double x, double y) { return x * y; }, "mul");
}

Tensor scale(const Tensor& a, double s) {
    Tensor out(a.shape(), a.dtype());
    for (int64_t i = 0; i < a.size(); ++i) out.set(i, a.at(i) * s);
    return out;
}

Tensor tanh(const Tensor& a) {
    Tensor out(a.shape(), a.dtype());
    for (int64_t i = 0; i < a.size(); ++i) out.set(i, std::tanh(a.at(i)));
    return out;
}

Tensor relu(const Tensor& a) {
    Tensor out(a.shape(), a.dtype());
    for (int64_t i = 0; i < a.size(); ++i) out.set(i, a.at(i) > 0 ? a.at(i) : 0.0);
    return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    DType dt = joint_dtype(a, b);
    // [m,k]x[k,n] -> [m,n]; [m,k]x[k] -> [m]; [k]x[k,n] -> [n]
    int64_t m, k, n;
    bool a_vec = a.rank() == 1, b_vec = b.rank() == 1;
    require(a.rank() <= 2 && b.rank() <= 2 && a.rank() >= 1 && b.rank() >= 1, Errc::Shape,
            "matmul: rank must be 1 or 2");
    m = a_vec ? 1 : a.dim(0);
    k = a_vec ? a.dim(0) : a.dim(1);
    n = b_vec ? 1 : b.dim(1);
    int64_t bk = b_vec ? b.dim(0) : b.dim(0);
    require(k == bk, Errc::Shape,
            "matmul: inner dims " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    Shape out_shape;
    if (a_vec && b_vec)
        out_shape = {1};
    else if (a_vec)
        out_shape = {n};
    else if (b_vec)
        out_shape = {m};
    else
        out_shape = {m, n};
    Tensor out(out_shape, dt);
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int64_t t = 0; t < k; ++t) acc += a.at(i * k + t) * b.at(t * n + j);
            out.set(i * n + j, acc);
        }
    }
    return out;
}

Tensor softmax(const Tensor& a) {
    require(a.rank() >= 1, Errc::Shape, "softmax: needs rank >= 1");
    int64_t cols = a.dim(a.rank() - 1);
    int64_t rows = a.size() / cols;
    Tensor out(a.shape(), a.dtype());
    for (int64_t r = 0; r < rows; ++r) {
        const int64_t base = r * cols;
        double mx = a.at(base);
        for (int64_t c = 1; c < cols; ++c) mx = std::max(mx, a.at(base + c));
        double denom = 0.0;
        for (int64_t c = 0; c < cols; ++c) denom += std::exp(a.at(base + c) - mx);
        for (int64_t c = 0; c < cols; ++c) out.set(base + c, std::exp(a.at(base + c) - mx) / denom);
    }
    return out;
}

Tensor concat(const std::vector<const Tensor*>& parts, int64_t axis) {
    require(!parts.empty(), Errc::Shape, "concat: no inputs");
    const Tensor& first = *parts[0];
    require(axis >= 0 && axis < static_cast<int64_t>(first.rank()), Errc::Shape, "concat: bad axis");
    Shape out_shape = first.shape();
    int64_t axis_total = 0;
    for (const Tensor* p : parts) {
        require(p->rank() == first.rank(), Errc::Shape, "concat: rank mismatch");
        joint_dtype(first, *p);
        for (size_t d = 0; d < first.rank(); ++d)
            if (static_cast<int64_t>(d) != axis)
                require(p->dim(d) == first.dim(d), Errc::Shape, "concat: non-axis dim mismatch");
        axis_total += p->dim(axis);
    }
    out_shape[axis] = axis_total;
    Tensor out(out_shape, first.dtype());
    int64_t outer = 1, inner = 1;
    for (int64_t d = 0; d < axis; ++d) outer *= first.dim(d);
    for (size_t d = axis + 1; d < first.rank(); ++d) inner *= first.dim(d);
    int64_t out_stride = axis_total * inner;
    int64_t axis_off = 0;
    for (const Tensor* p : parts) {
        int64_t p_axis = p->dim(axis);
        for (int64_t o = 0; o < outer; ++o)
            for (int64_t x = 0; x < p_axis * inner; ++x)
                out.raw(o * out_stride + axis_off * inner + x) = p->at(o * p_axis * inner + x);
        axis_off += p_axis;
    }
    return out;
}

Tensor slice(const Tensor& a, int64_t axis, int64_t start, int64_t stop, bool squeeze) {
    require(axis >= 0 && axis < static_cast<int64_t>(a.rank()), Errc::Shape, "slice: bad axis");
    require(start >= 0 && stop > start && stop <= a.dim(axis), Errc::Shape,
            "slice: range [" + std::to_string(start) + "," + std::to_string(stop) + ") on dim " +
                std::to_string(a.dim(axis)));
    Shape out_shape = a.shape();
    out_shape[axis] = stop - start;
    int64_t outer = 1, inner = 1;
    for (int64_t d = 0; d < axis; ++d) outer *= a.dim(d);
    for (size_t d = axis + 1; d < a.rank(); ++d) inner *= a.dim(d);
    Tensor out(out_shape, a.dtype());
    int64_t w = stop - start;
    for (int64_t o = 0; o < outer; ++o)
        for (int64_t x = 0; x < w * inner; ++x)
            out.raw(o * w * inner + x) = a.at(o * a.dim(axis) * inner + start * inner + x);
    if (squeeze && w == 1) {
        Shape sq;
        for (size_t d = 0; d < out_shape.size(); ++d)
            if (static_cast<int64_t>(d) != axis) sq.push_back(out_shape[d]);
        if (sq.empty()) sq = {1};
        return Tensor(std::move(sq), a.dtype(), out.data());
    }
    return out;
}

Tensor reduce_sum(const Tensor& a) {
    double acc = 0.0;
    for (int64_t i = 0; i < a.size(); ++i) acc += a.at(i);
    return Tensor({1}, a.dtype(), {acc});
}

Tensor reduce_mean(const Tensor& a) {
    double acc = 0.0;
    for (int64_t i = 0; i < a.size(); ++i) acc += a.at(i);
    return Tensor({1}, a.dtype(), {acc / static_cast<double>(a.size())});
}

Tensor reduce_axis(const Tensor& a, int64_t axis, bool mean) {
    if (axis < 0) return mean ? reduce_mean(a) : reduce_sum(a);
    require(axis < static_cast<int64_t>(a.rank()), Errc::Shape, "reduce: bad axis");
    Shape out_shape;
    for (size_t d = 0; d < a.rank(); ++d)
        if (static_cast<int64_t>(d) != axis) out_shape.push_back(a.dim(d));
    if (out_shape.empty()) out_shape = {1};
    int64_t outer = 1, inner = 1;
    for (int64_t d = 0; d < axis; ++d) outer *= a.dim(d);
    for (size_t d = axis + 1; d < a.rank(); ++d) inner *= a.dim(d);
    Tensor out(out_shape, a.dtype());
    int64_t w = a.dim(axis);
    for (int64_t o = 0; o < outer; ++o)
        for (int64_t in = 0; in < inner; ++in) {
            double acc = 0.0;
            for (int64_t x = 0; x < w; ++x) acc += a.at(o * w * inner + x * inner + in);
            out.set(o * inner + in, mean ? acc / static_cast<double>(w) : acc);
        }
    return out;
}

Tensor matmul_grad_lhs(const Tensor& dy, const Tensor& a, const Tensor& b) {
    // dA = dY . B^T, handling the vector cases by lifting to 2-D.
    int64_t m = a.rank() == 1 ? 1 : a.dim(0);
    int64_t k = a.rank() == 1 ? a.dim(0) : a.dim(1);
    int64_t n = b.rank() == 1 ? 1 : b.dim(1);
    Tensor da(a.shape(), a.dtype());
    for (int64_t i = 0; i < m; ++i)
        for (int64_t t = 0; t < k; ++t) {
            double acc = 0.0;
            for (int64_t j = 0; j < n; ++j) acc += dy.at(i * n + j) * b.at(t * n + j);
            da.set(i * k + t, acc);
        }
    return da;
}

Tensor matmul_grad_rhs(const Tensor& dy, const Tensor& a, const Tensor& b) {
    int64_t m = a.rank() == 1 ? 1 : a.dim(0);
    int64_t k = a.rank() == 1 ? a.dim(0) : a.dim(1);
    int64_t n = b.rank() == 1 ? 1 : b.dim(1);
    Tensor db(b.shape(), b.dtype());
    for (int64_t t = 0; t < k; ++t)
        for (int64_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int64_t i = 0; i < m; ++i) acc += a.at(i * k + t) * dy.at(i * n + j);
            db.set(t * n + j, acc);
        }
    return db;
}

Tensor tanh_grad(const Tensor& dy, const Tensor& y) {
    Tensor dx(y.shape(), y.dtype());
    for (int64_t i = 0; i < y.size(); ++i) dx.set(i, dy.at(i) * (1.0 - y.at(i) * y.at(i)));
    return dx;
}

Tensor relu_grad(const Tensor& dy, const Tensor& x) {
    Tensor dx(x.shape(), x.dtype());
    for (int64_t i = 0; i < x.size(); ++i) dx.set(i, x.at(i) > 0 ? dy.at(i) : 0.0);
    return dx;
}

Tensor softmax_grad(const Tensor& dy, const Tensor& y) {
    int64_t cols = y.dim(y.rank() - 1);
    int64_t rows = y.size() / cols;
    Tensor dx(y.shape(), y.dtype());
    for (int64_t r = 0; r < rows; ++r) {
        int64_t base = r * cols;
        double dot = 0.0;
        for (int64_t c = 0; c < cols; ++c) dot += dy.at(base + c) * y.at(base + c);
        for (int64_t c = 0; c < cols; ++c) dx.set(base + c, y.at(base + c) * (dy.at(base + c) - dot));
    }
    return dx;
}

Tensor reduce_to_shape(const Tensor& dy, const Shape& target) {
    if (dy.shape() == target) return dy;
    int64_t tn = numel(target);
    Tensor out(target, dy.dtype());
    for (int64_t i = 0; i < tn; ++i) {
        double acc = 0.0;
        for (int64_t j = i; j < dy.size(); j += tn) acc += dy.at(j);
        out.set(i, acc);
    }
    return out;
}

bool all_finite(const Tensor& a) {
    for (int64_t i = 0; i < a.size(); ++i)
        if (!std::isfinite(a.at(i))) return false;
    return true;
}

}  // namespace fraglow::ops

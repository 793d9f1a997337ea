#include "op_eval.hpp"

#include <cassert>

namespace fraglow::compute {

using dfg::OpKind;

Tensor op_eval(OpKind kind, const std::vector<const Tensor*>& inputs, const dfg::Attrs& attrs) {
    auto attr_i = [&](const std::string& k, int64_t dflt) {
        auto it = attrs.find(k);
        if (it == attrs.end()) return dflt;
        if (const int64_t* v = std::get_if<int64_t>(&it->second)) return *v;
        if (const double* v = std::get_if<double>(&it->second)) return static_cast<int64_t>(*v);
        return dflt;
    };
    auto in = [&](size_t i) -> const Tensor& {
        if (i >= inputs.size()) fail(Errc::Shape, "op_eval: missing input");
        return *inputs[i];
    };
    Tensor out;
    switch (kind) {
        case OpKind::MatMul: out = ops::matmul(in(0), in(1)); break;
        case OpKind::Add: out = ops::add(in(0), in(1)); break;
        case OpKind::Mul: out = ops::mul(in(0), in(1)); break;
        case OpKind::Tanh: out = ops::tanh(in(0)); break;
        case OpKind::Relu: out = ops::relu(in(0)); break;
        case OpKind::Softmax: out = ops::softmax(in(0)); break;
        case OpKind::Concat: out = ops::concat(inputs, attr_i("axis", 0)); break;
        case OpKind::Slice:
            out = ops::slice(in(0), attr_i("axis", 0), attr_i("start", 0), attr_i("stop", 0),
                             attr_i("squeeze", 0) != 0);
            break;
        case OpKind::ReduceMean: out = ops::reduce_axis(in(0), attr_i("axis", -1), true); break;
        case OpKind::ReduceSum: out = ops::reduce_axis(in(0), attr_i("axis", -1), false); break;
        case OpKind::Output: out = in(0); break;
        default:
            fail(Errc::Shape, std::string("op_eval: ") + dfg::op_name(kind) +
                                  " is outside the tensor-compute family");
    }
#ifndef NDEBUG
    bool finite_in = true;
    for (const Tensor* t : inputs) finite_in &= ops::all_finite(*t);
    assert(!finite_in || ops::all_finite(out));
#endif
    return out;
}

}  // namespace fraglow::compute

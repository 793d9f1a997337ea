#pragma once

#include "../dfg/graph.hpp"
#include "ops.hpp"

namespace fraglow::compute {

// Dense evaluation of a tensor-family op kind. Deterministic; reductions
// accumulate in F64 and cast once. Debug builds verify that finite inputs
// produce finite outputs.
Tensor op_eval(dfg::OpKind kind, const std::vector<const Tensor*>& inputs, const dfg::Attrs& attrs);

}  // namespace fraglow::compute

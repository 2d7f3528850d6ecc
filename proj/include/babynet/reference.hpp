#pragma once

#include <vector>

#include "babynet/model.hpp"

namespace babynet::reference {

// Double-precision direct-loop evaluation of the full model, sharing the
// parameter tensors but none of the float32 execution paths (no im2col, no
// GEMM). It never mutates batch-norm state: train mode computes batch
// statistics locally, eval mode reads the stored running statistics.
//
// This is the probe function for whole-model finite-difference checks:
// float32 central differences cannot resolve the sharp loss landscape that
// batch normalization produces at desk scale, while double-precision
// differences at eps ~ 1e-5 can. It doubles as the second route of the
// direct-loop / im2col agreement check.
std::vector<double> forward(const Model& model, const Tensor& input, Mode mode);

// Mean squared error of forward() against targets [N,1], all in double.
double mse(const Model& model, const Tensor& input, const Tensor& target, Mode mode);

}  // namespace babynet::reference

#pragma once

#include <array>
#include <optional>
#include <vector>

#include "babynet/graph.hpp"
#include "babynet/tensor.hpp"

// Differentiable primitives. Every op takes the tape as its first argument;
// pass nullptr for a plain forward evaluation (eval mode, finite-difference
// probes). Ops record a node only when the tape is present and the output
// depends on a tensor that requires gradients.
namespace babynet::ops {

struct Conv3dSpec {
    std::array<int, 3> stride{1, 1, 1};
    std::array<int, 3> padding{0, 0, 0};
};

enum class BatchNormMode { Train, Eval };

// Running statistics of one batch-norm layer. Train mode updates them;
// eval mode requires at least one prior update.
struct BatchNormState {
    std::vector<float> running_mean;
    std::vector<float> running_var;
    bool initialized = false;
};

// input [N,Cin,T,H,W], weight [Cout,Cin,kT,kH,kW], bias [Cout] or nullptr.
// Cross-correlation with zero padding; output size floor((X+2p-k)/s)+1.
Tensor conv3d(Graph* g, Tensor input, Tensor weight, const Tensor* bias,
              const Conv3dSpec& spec);

// Plain nested-loop forward of the same cross-correlation, kept as the
// in-library validation path for the im2col implementation above.
Tensor conv3d_reference(Tensor input, Tensor weight, const Tensor* bias,
                        const Conv3dSpec& spec);

// input [N,C,T,H,W]; gamma/beta [C]. Train mode normalizes with batch
// statistics over (N,T,H,W) and folds them into `state` with the given
// momentum: new = (1-momentum)*old + momentum*batch.
Tensor batchnorm3d(Graph* g, Tensor input, Tensor gamma, Tensor beta,
                   BatchNormState& state, BatchNormMode mode, float momentum, float epsilon);

Tensor relu(Graph* g, Tensor x);

// x [N,F], weight [O,F], bias [O] -> [N,O].
Tensor linear(Graph* g, Tensor x, Tensor weight, Tensor bias);

// Softmax over the last axis, computed with max subtraction.
Tensor softmax_lastdim(Graph* g, Tensor x);

// a [...,M,K] x b [...,K,P] -> [...,M,P]; leading batch dims must be equal.
Tensor matmul_batched(Graph* g, Tensor a, Tensor b);

// [N,C,T,H,W] -> [N,C], mean over (T,H,W).
Tensor global_avg_pool(Graph* g, Tensor x);

// Elementwise, identical shapes.
Tensor add(Graph* g, Tensor a, Tensor b);
Tensor sub(Graph* g, Tensor a, Tensor b);
Tensor mul(Graph* g, Tensor a, Tensor b);
Tensor scale(Graph* g, Tensor x, float c);

// Numpy-style broadcasting over equal-rank shapes (each axis equal or 1).
Tensor broadcast_add(Graph* g, Tensor a, Tensor b);
Tensor broadcast_to(Graph* g, Tensor x, std::vector<int> shape);

Tensor reshape(Graph* g, Tensor x, std::vector<int> shape);
Tensor permute(Graph* g, Tensor x, std::vector<int> axes);

// Full reductions to a [1] scalar.
Tensor sum_all(Graph* g, Tensor x);
Tensor mean_all(Graph* g, Tensor x);

// ---- raw GEMM kernels (row-major, accumulate into c) ----
// c[M,N] += a[M,K] * b[K,N]
void gemm_nn(const float* a, const float* b, float* c, int m, int k, int n);
// c[M,N] += a[M,K] * b[N,K]^T
void gemm_nt(const float* a, const float* b, float* c, int m, int k, int n);
// c[M,N] += a[K,M]^T * b[K,N]
void gemm_tn(const float* a, const float* b, float* c, int m, int k, int n);

}  // namespace babynet::ops

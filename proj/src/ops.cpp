#include "babynet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace babynet::ops {

namespace {

bool wants_grad(std::initializer_list<const Tensor*> ts) {
    for (const Tensor* t : ts)
        if (t && t->defined() && t->requires_grad()) return true;
    return false;
}

void check_same_shape(const char* op, Tensor a, Tensor b) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shapes differ, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

std::vector<int64_t> row_major_strides(const std::vector<int>& shape) {
    std::vector<int64_t> s(shape.size());
    int64_t acc = 1;
    for (int i = static_cast<int>(shape.size()) - 1; i >= 0; --i) {
        s[static_cast<std::size_t>(i)] = acc;
        acc *= shape[static_cast<std::size_t>(i)];
    }
    return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// GEMM kernels. Single-threaded; the j-inner loops autovectorize. All conv,
// linear and attention math funnels through these three.
// ---------------------------------------------------------------------------

void gemm_nn(const float* a, const float* b, float* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const float* arow = a + static_cast<std::size_t>(i) * k;
        float* crow = c + static_cast<std::size_t>(i) * n;
        for (int l = 0; l < k; ++l) {
            float av = arow[l];
            const float* brow = b + static_cast<std::size_t>(l) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void gemm_nt(const float* a, const float* b, float* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const float* arow = a + static_cast<std::size_t>(i) * k;
        float* crow = c + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const float* brow = b + static_cast<std::size_t>(j) * k;
            float s0 = 0.0f, s1 = 0.0f, s2 = 0.0f, s3 = 0.0f;
            int l = 0;
            for (; l + 4 <= k; l += 4) {
                s0 += arow[l] * brow[l];
                s1 += arow[l + 1] * brow[l + 1];
                s2 += arow[l + 2] * brow[l + 2];
                s3 += arow[l + 3] * brow[l + 3];
            }
            float s = (s0 + s1) + (s2 + s3);
            for (; l < k; ++l) s += arow[l] * brow[l];
            crow[j] += s;
        }
    }
}

void gemm_tn(const float* a, const float* b, float* c, int m, int k, int n) {
    for (int l = 0; l < k; ++l) {
        const float* arow = a + static_cast<std::size_t>(l) * m;
        const float* brow = b + static_cast<std::size_t>(l) * n;
        for (int i = 0; i < m; ++i) {
            float av = arow[i];
            float* crow = c + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

Tensor add(Graph* g, Tensor a, Tensor b) {
    check_same_shape("add", a, b);
    bool rg = wants_grad({&a, &b});
    Tensor out = Tensor::zeros(a.shape(), rg);
    auto ad = a.data(), bd = b.data();
    auto od = out.data();
    for (std::size_t i = 0; i < od.size(); ++i) od[i] = ad[i] + bd[i];
    if (g && rg) {
        g->record("add", {a, b}, out, [a, b, out]() mutable {
            auto og = out.grad();
            if (a.requires_grad()) {
                auto ga = a.grad();
                for (std::size_t i = 0; i < og.size(); ++i) ga[i] += og[i];
            }
            if (b.requires_grad()) {
                auto gb = b.grad();
                for (std::size_t i = 0; i < og.size(); ++i) gb[i] += og[i];
            }
        });
    }
    return out;
}

Tensor sub(Graph* g, Tensor a, Tensor b) {
    check_same_shape("sub", a, b);
    bool rg = wants_grad({&a, &b});
    Tensor out = Tensor::zeros(a.shape(), rg);
    auto ad = a.data(), bd = b.data();
    auto od = out.data();
    for (std::size_t i = 0; i < od.size(); ++i) od[i] = ad[i] - bd[i];
    if (g && rg) {
        g->record("sub", {a, b}, out, [a, b, out]() mutable {
            auto og = out.grad();
            if (a.requires_grad()) {
                auto ga = a.grad();
                for (std::size_t i = 0; i < og.size(); ++i) ga[i] += og[i];
            }
            if (b.requires_grad()) {
                auto gb = b.grad();
                for (std::size_t i = 0; i < og.size(); ++i) gb[i] -= og[i];
            }
        });
    }
    return out;
}

Tensor mul(Graph* g, Tensor a, Tensor b) {
    check_same_shape("mul", a, b);
    bool rg = wants_grad({&a, &b});
    Tensor out = Tensor::zeros(a.shape(), rg);
    auto ad = a.data(), bd = b.data();
    auto od = out.data();
    for (std::size_t i = 0; i < od.size(); ++i) od[i] = ad[i] * bd[i];
    if (g && rg) {
        g->record("mul", {a, b}, out, [a, b, out]() mutable {
            auto og = out.grad();
            auto ad = a.data(), bd = b.data();
            if (a.requires_grad()) {
                auto ga = a.grad();
                for (std::size_t i = 0; i < og.size(); ++i) ga[i] += og[i] * bd[i];
            }
            if (b.requires_grad()) {
                auto gb = b.grad();
                for (std::size_t i = 0; i < og.size(); ++i) gb[i] += og[i] * ad[i];
            }
        });
    }
    return out;
}

Tensor scale(Graph* g, Tensor x, float c) {
    bool rg = x.requires_grad();
    Tensor out = Tensor::zeros(x.shape(), rg);
    auto xd = x.data();
    auto od = out.data();
    for (std::size_t i = 0; i < od.size(); ++i) od[i] = c * xd[i];
    if (g && rg) {
        g->record("scale", {x}, out, [x, out, c]() mutable {
            auto og = out.grad();
            auto gx = x.grad();
            for (std::size_t i = 0; i < og.size(); ++i) gx[i] += c * og[i];
        });
    }
    return out;
}

Tensor relu(Graph* g, Tensor x) {
    bool rg = x.requires_grad();
    Tensor out = Tensor::zeros(x.shape(), rg);
    auto xd = x.data();
    auto od = out.data();
    for (std::size_t i = 0; i < od.size(); ++i) od[i] = xd[i] > 0.0f ? xd[i] : 0.0f;
    if (g && rg) {
        // Subgradient at exactly 0 is 0.
        g->record("relu", {x}, out, [x, out]() mutable {
            auto og = out.grad();
            auto xd = x.data();
            auto gx = x.grad();
            for (std::size_t i = 0; i < og.size(); ++i)
                if (xd[i] > 0.0f) gx[i] += og[i];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

Tensor sum_all(Graph* g, Tensor x) {
    bool rg = x.requires_grad();
    double acc = 0.0;
    for (float v : x.data()) acc += v;
    Tensor out = Tensor::from_data({1}, {static_cast<float>(acc)}, rg);
    if (g && rg) {
        g->record("sum", {x}, out, [x, out]() mutable {
            float go = out.grad()[0];
            auto gx = x.grad();
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go;
        });
    }
    return out;
}

Tensor mean_all(Graph* g, Tensor x) {
    bool rg = x.requires_grad();
    double acc = 0.0;
    for (float v : x.data()) acc += v;
    double n = static_cast<double>(x.numel());
    Tensor out = Tensor::from_data({1}, {static_cast<float>(acc / n)}, rg);
    if (g && rg) {
        g->record("mean", {x}, out, [x, out, n]() mutable {
            float go = out.grad()[0];
            float inv = static_cast<float>(1.0 / n);
            auto gx = x.grad();
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go * inv;
        });
    }
    return out;
}

Tensor global_avg_pool(Graph* g, Tensor x) {
    if (x.rank() != 5)
        throw ShapeError("global_avg_pool: expected rank-5 input, got " + shape_str(x.shape()));
    int N = x.dim(0), C = x.dim(1);
    int64_t S = static_cast<int64_t>(x.dim(2)) * x.dim(3) * x.dim(4);
    bool rg = x.requires_grad();
    Tensor out = Tensor::zeros({N, C}, rg);
    auto xd = x.data();
    auto od = out.data();
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const float* p = xd.data() + (static_cast<int64_t>(n) * C + c) * S;
            double acc = 0.0;
            for (int64_t i = 0; i < S; ++i) acc += p[i];
            od[static_cast<std::size_t>(n) * C + c] = static_cast<float>(acc / static_cast<double>(S));
        }
    if (g && rg) {
        g->record("global_avg_pool", {x}, out, [x, out, N, C, S]() mutable {
            auto og = out.grad();
            auto gx = x.grad();
            float inv = static_cast<float>(1.0 / static_cast<double>(S));
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c) {
                    float go = og[static_cast<std::size_t>(n) * C + c] * inv;
                    float* p = gx.data() + (static_cast<int64_t>(n) * C + c) * S;
                    for (int64_t i = 0; i < S; ++i) p[i] += go;
                }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Softmax
// ---------------------------------------------------------------------------

Tensor softmax_lastdim(Graph* g, Tensor x) {
    int L = x.dim(x.rank() - 1);
    int64_t rows = x.numel() / L;
    bool rg = x.requires_grad();
    Tensor out = Tensor::zeros(x.shape(), rg);
    auto xd = x.data();
    auto od = out.data();
    for (int64_t r = 0; r < rows; ++r) {
        const float* xi = xd.data() + r * L;
        float* yi = od.data() + r * L;
        float mx = xi[0];
        for (int i = 1; i < L; ++i) mx = std::max(mx, xi[i]);
        double s = 0.0;
        for (int i = 0; i < L; ++i) {
            yi[i] = std::exp(xi[i] - mx);
            s += yi[i];
        }
        float inv = static_cast<float>(1.0 / s);
        for (int i = 0; i < L; ++i) yi[i] *= inv;
    }
    if (g && rg) {
        g->record("softmax", {x}, out, [x, out, rows, L]() mutable {
            auto og = out.grad();
            auto yd = out.data();
            auto gx = x.grad();
            for (int64_t r = 0; r < rows; ++r) {
                const float* go = og.data() + r * L;
                const float* y = yd.data() + r * L;
                float* gi = gx.data() + r * L;
                double dot = 0.0;
                for (int i = 0; i < L; ++i) dot += static_cast<double>(go[i]) * y[i];
                float d = static_cast<float>(dot);
                for (int i = 0; i < L; ++i) gi[i] += y[i] * (go[i] - d);
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------

Tensor linear(Graph* g, Tensor x, Tensor weight, Tensor bias) {
    if (x.rank() != 2 || weight.rank() != 2 || bias.rank() != 1)
        throw ShapeError("linear: expected x[N,F], weight[O,F], bias[O]");
    int N = x.dim(0), F = x.dim(1), O = weight.dim(0);
    if (weight.dim(1) != F)
        throw ShapeError("linear: input features " + shape_str(x.shape()) +
                         " do not match weight " + shape_str(weight.shape()));
    if (bias.dim(0) != O)
        throw ShapeError("linear: bias " + shape_str(bias.shape()) + " does not match weight " +
                         shape_str(weight.shape()));
    bool rg = wants_grad({&x, &weight, &bias});
    Tensor out = Tensor::zeros({N, O}, rg);
    auto od = out.data();
    for (int n = 0; n < N; ++n)
        std::memcpy(od.data() + static_cast<std::size_t>(n) * O, bias.data().data(),
                    sizeof(float) * static_cast<std::size_t>(O));
    gemm_nt(x.data().data(), weight.data().data(), od.data(), N, F, O);
    if (g && rg) {
        g->record("linear", {x, weight, bias}, out, [x, weight, bias, out, N, F, O]() mutable {
            auto og = out.grad();
            if (x.requires_grad())
                gemm_nn(og.data(), weight.data().data(), x.grad().data(), N, O, F);
            if (weight.requires_grad())
                gemm_tn(og.data(), x.data().data(), weight.grad().data(), O, N, F);
            if (bias.requires_grad()) {
                auto gb = bias.grad();
                for (int n = 0; n < N; ++n)
                    for (int o = 0; o < O; ++o) gb[o] += og[static_cast<std::size_t>(n) * O + o];
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Batched matmul
// ---------------------------------------------------------------------------

Tensor matmul_batched(Graph* g, Tensor a, Tensor b) {
    if (a.rank() < 2 || b.rank() < 2 || a.rank() != b.rank())
        throw ShapeError("matmul_batched: ranks must match and be >= 2, got " +
                         shape_str(a.shape()) + " and " + shape_str(b.shape()));
    int r = a.rank();
    int64_t batch = 1;
    for (int i = 0; i < r - 2; ++i) {
        if (a.dim(i) != b.dim(i))
            throw ShapeError("matmul_batched: batch dims differ, " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
        batch *= a.dim(i);
    }
    int M = a.dim(r - 2), K = a.dim(r - 1), P = b.dim(r - 1);
    if (b.dim(r - 2) != K)
        throw ShapeError("matmul_batched: inner dims differ, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    std::vector<int> out_shape(a.shape().begin(), a.shape().end() - 1);
    out_shape.push_back(P);
    bool rg = wants_grad({&a, &b});
    Tensor out = Tensor::zeros(out_shape, rg);
    auto ad = a.data(), bd = b.data();
    auto od = out.data();
    for (int64_t i = 0; i < batch; ++i)
        gemm_nn(ad.data() + i * M * K, bd.data() + i * K * P, od.data() + i * M * P, M, K, P);
    if (g && rg) {
        g->record("matmul_batched", {a, b}, out, [a, b, out, batch, M, K, P]() mutable {
            auto og = out.grad();
            auto ad = a.data(), bd = b.data();
            for (int64_t i = 0; i < batch; ++i) {
                const float* go = og.data() + i * M * P;
                if (a.requires_grad())
                    gemm_nt(go, bd.data() + i * K * P, a.grad().data() + i * M * K, M, P, K);
                if (b.requires_grad())
                    gemm_tn(ad.data() + i * M * K, go, b.grad().data() + i * K * P, K, M, P);
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// conv3d (im2col + GEMM) and the nested-loop reference
// ---------------------------------------------------------------------------

namespace {

struct ConvDims {
    int N, Cin, T, H, W;
    int Cout, kT, kH, kW;
    int To, Ho, Wo;
    int64_t K;    // Cin*kT*kH*kW
    int64_t P;    // To*Ho*Wo
};

ConvDims conv_dims(Tensor input, Tensor weight, const Conv3dSpec& spec) {
    if (input.rank() != 5 || weight.rank() != 5)
        throw ShapeError("conv3d: expected input[N,Cin,T,H,W] and weight[Cout,Cin,kT,kH,kW], got " +
                         shape_str(input.shape()) + " and " + shape_str(weight.shape()));
    ConvDims d;
    d.N = input.dim(0);
    d.Cin = input.dim(1);
    d.T = input.dim(2);
    d.H = input.dim(3);
    d.W = input.dim(4);
    d.Cout = weight.dim(0);
    d.kT = weight.dim(2);
    d.kH = weight.dim(3);
    d.kW = weight.dim(4);
    if (weight.dim(1) != d.Cin)
        throw ShapeError("conv3d: input channels mismatch, input " + shape_str(input.shape()) +
                         " vs weight " + shape_str(weight.shape()));
    for (int i = 0; i < 3; ++i) {
        if (spec.stride[static_cast<std::size_t>(i)] < 1)
            throw ValueError("conv3d: strides must be >= 1");
        if (spec.padding[static_cast<std::size_t>(i)] < 0)
            throw ValueError("conv3d: padding must be >= 0");
    }
    int sT = spec.stride[0], sH = spec.stride[1], sW = spec.stride[2];
    int pT = spec.padding[0], pH = spec.padding[1], pW = spec.padding[2];
    if (d.T + 2 * pT < d.kT || d.H + 2 * pH < d.kH || d.W + 2 * pW < d.kW)
        throw ShapeError("conv3d: kernel " + shape_str(weight.shape()) +
                         " does not fit padded input " + shape_str(input.shape()));
    d.To = (d.T + 2 * pT - d.kT) / sT + 1;
    d.Ho = (d.H + 2 * pH - d.kH) / sH + 1;
    d.Wo = (d.W + 2 * pW - d.kW) / sW + 1;
    d.K = static_cast<int64_t>(d.Cin) * d.kT * d.kH * d.kW;
    d.P = static_cast<int64_t>(d.To) * d.Ho * d.Wo;
    return d;
}

// Expand one sample into a [K x P] patch matrix.
void im2col(const float* x, const ConvDims& d, const Conv3dSpec& spec, float* col) {
    int sT = spec.stride[0], sH = spec.stride[1], sW = spec.stride[2];
    int pT = spec.padding[0], pH = spec.padding[1], pW = spec.padding[2];
    int64_t row = 0;
    for (int ci = 0; ci < d.Cin; ++ci)
        for (int kt = 0; kt < d.kT; ++kt)
            for (int kh = 0; kh < d.kH; ++kh)
                for (int kw = 0; kw < d.kW; ++kw, ++row) {
                    float* out = col + row * d.P;
                    const float* plane = x + static_cast<int64_t>(ci) * d.T * d.H * d.W;
                    int64_t p = 0;
                    for (int to = 0; to < d.To; ++to) {
                        int ti = to * sT - pT + kt;
                        if (ti < 0 || ti >= d.T) {
                            std::memset(out + p, 0,
                                        sizeof(float) * static_cast<std::size_t>(d.Ho) * d.Wo);
                            p += static_cast<int64_t>(d.Ho) * d.Wo;
                            continue;
                        }
                        for (int ho = 0; ho < d.Ho; ++ho) {
                            int hi = ho * sH - pH + kh;
                            if (hi < 0 || hi >= d.H) {
                                std::memset(out + p, 0, sizeof(float) * static_cast<std::size_t>(d.Wo));
                                p += d.Wo;
                                continue;
                            }
                            const float* src = plane + (static_cast<int64_t>(ti) * d.H + hi) * d.W;
                            for (int wo = 0; wo < d.Wo; ++wo, ++p) {
                                int wi = wo * sW - pW + kw;
                                out[p] = (wi < 0 || wi >= d.W) ? 0.0f : src[wi];
                            }
                        }
                    }
                }
}

// Scatter-add of a [K x P] patch-gradient matrix back onto one sample.
void col2im_add(const float* col, const ConvDims& d, const Conv3dSpec& spec, float* gx) {
    int sT = spec.stride[0], sH = spec.stride[1], sW = spec.stride[2];
    int pT = spec.padding[0], pH = spec.padding[1], pW = spec.padding[2];
    int64_t row = 0;
    for (int ci = 0; ci < d.Cin; ++ci)
        for (int kt = 0; kt < d.kT; ++kt)
            for (int kh = 0; kh < d.kH; ++kh)
                for (int kw = 0; kw < d.kW; ++kw, ++row) {
                    const float* src = col + row * d.P;
                    float* plane = gx + static_cast<int64_t>(ci) * d.T * d.H * d.W;
                    int64_t p = 0;
                    for (int to = 0; to < d.To; ++to) {
                        int ti = to * sT - pT + kt;
                        if (ti < 0 || ti >= d.T) {
                            p += static_cast<int64_t>(d.Ho) * d.Wo;
                            continue;
                        }
                        for (int ho = 0; ho < d.Ho; ++ho) {
                            int hi = ho * sH - pH + kh;
                            if (hi < 0 || hi >= d.H) {
                                p += d.Wo;
                                continue;
                            }
                            float* dst = plane + (static_cast<int64_t>(ti) * d.H + hi) * d.W;
                            for (int wo = 0; wo < d.Wo; ++wo, ++p) {
                                int wi = wo * sW - pW + kw;
                                if (wi >= 0 && wi < d.W) dst[wi] += src[p];
                            }
                        }
                    }
                }
}

}  // namespace

Tensor conv3d(Graph* g, Tensor input, Tensor weight, const Tensor* bias,
              const Conv3dSpec& spec) {
    ConvDims d = conv_dims(input, weight, spec);
    if (bias && (bias->rank() != 1 || bias->dim(0) != d.Cout))
        throw ShapeError("conv3d: bias " + shape_str(bias->shape()) + " does not match Cout " +
                         std::to_string(d.Cout));
    bool has_bias = bias != nullptr;
    bool rg = wants_grad({&input, &weight, bias});
    Tensor out = Tensor::zeros({d.N, d.Cout, d.To, d.Ho, d.Wo}, rg);

    std::vector<float> col(static_cast<std::size_t>(d.K * d.P));
    auto xd = input.data();
    auto od = out.data();
    for (int n = 0; n < d.N; ++n) {
        im2col(xd.data() + static_cast<int64_t>(n) * d.Cin * d.T * d.H * d.W, d, spec, col.data());
        float* y = od.data() + static_cast<int64_t>(n) * d.Cout * d.P;
        if (has_bias) {
            auto bd = bias->data();
            for (int co = 0; co < d.Cout; ++co)
                std::fill(y + static_cast<int64_t>(co) * d.P, y + static_cast<int64_t>(co + 1) * d.P,
                          bd[static_cast<std::size_t>(co)]);
        }
        gemm_nn(weight.data().data(), col.data(), y, d.Cout, static_cast<int>(d.K),
                static_cast<int>(d.P));
    }

    if (g && rg) {
        Tensor bias_t = has_bias ? *bias : Tensor();
        std::vector<Tensor> ins = has_bias ? std::vector<Tensor>{input, weight, bias_t}
                                           : std::vector<Tensor>{input, weight};
        g->record("conv3d", std::move(ins), out, [input, weight, bias_t, out, d, spec]() mutable {
            auto og = out.grad();
            std::vector<float> col(static_cast<std::size_t>(d.K * d.P));
            std::vector<float> dcol;
            if (input.requires_grad()) dcol.resize(static_cast<std::size_t>(d.K * d.P));
            auto xd = input.data();
            for (int n = 0; n < d.N; ++n) {
                const float* go = og.data() + static_cast<int64_t>(n) * d.Cout * d.P;
                if (weight.requires_grad()) {
                    im2col(xd.data() + static_cast<int64_t>(n) * d.Cin * d.T * d.H * d.W, d, spec,
                           col.data());
                    gemm_nt(go, col.data(), weight.grad().data(), d.Cout, static_cast<int>(d.P),
                            static_cast<int>(d.K));
                }
                if (input.requires_grad()) {
                    std::fill(dcol.begin(), dcol.end(), 0.0f);
                    gemm_tn(weight.data().data(), go, dcol.data(), static_cast<int>(d.K), d.Cout,
                            static_cast<int>(d.P));
                    col2im_add(dcol.data(), d, spec,
                               input.grad().data() + static_cast<int64_t>(n) * d.Cin * d.T * d.H * d.W);
                }
                if (bias_t.defined() && bias_t.requires_grad()) {
                    auto gb = bias_t.grad();
                    for (int co = 0; co < d.Cout; ++co) {
                        const float* row = go + static_cast<int64_t>(co) * d.P;
                        double acc = 0.0;
                        for (int64_t p = 0; p < d.P; ++p) acc += row[p];
                        gb[static_cast<std::size_t>(co)] += static_cast<float>(acc);
                    }
                }
            }
        });
    }
    return out;
}

Tensor conv3d_reference(Tensor input, Tensor weight, const Tensor* bias,
                        const Conv3dSpec& spec) {
    ConvDims d = conv_dims(input, weight, spec);
    Tensor out = Tensor::zeros({d.N, d.Cout, d.To, d.Ho, d.Wo});
    int sT = spec.stride[0], sH = spec.stride[1], sW = spec.stride[2];
    int pT = spec.padding[0], pH = spec.padding[1], pW = spec.padding[2];
    auto xd = input.data();
    auto wd = weight.data();
    auto od = out.data();
    for (int n = 0; n < d.N; ++n)
        for (int co = 0; co < d.Cout; ++co)
            for (int to = 0; to < d.To; ++to)
                for (int ho = 0; ho < d.Ho; ++ho)
                    for (int wo = 0; wo < d.Wo; ++wo) {
                        float acc = bias ? bias->data()[static_cast<std::size_t>(co)] : 0.0f;
                        for (int ci = 0; ci < d.Cin; ++ci)
                            for (int kt = 0; kt < d.kT; ++kt)
                                for (int kh = 0; kh < d.kH; ++kh)
                                    for (int kw = 0; kw < d.kW; ++kw) {
                                        int ti = to * sT - pT + kt;
                                        int hi = ho * sH - pH + kh;
                                        int wi = wo * sW - pW + kw;
                                        if (ti < 0 || ti >= d.T || hi < 0 || hi >= d.H || wi < 0 ||
                                            wi >= d.W)
                                            continue;
                                        acc += xd[((static_cast<int64_t>(n) * d.Cin + ci) * d.T + ti) *
                                                      d.H * d.W +
                                                  static_cast<int64_t>(hi) * d.W + wi] *
                                               wd[(((static_cast<int64_t>(co) * d.Cin + ci) * d.kT +
                                                    kt) *
                                                       d.kH +
                                                   kh) *
                                                      d.kW +
                                                  kw];
                                    }
                        od[((static_cast<int64_t>(n) * d.Cout + co) * d.To + to) * d.Ho * d.Wo +
                           static_cast<int64_t>(ho) * d.Wo + wo] = acc;
                    }
    return out;
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

Tensor batchnorm3d(Graph* g, Tensor input, Tensor gamma, Tensor beta,
                   BatchNormState& state, BatchNormMode mode, float momentum, float epsilon) {
    if (input.rank() != 5)
        throw ShapeError("batchnorm3d: expected rank-5 input, got " + shape_str(input.shape()));
    int N = input.dim(0), C = input.dim(1);
    int64_t S = static_cast<int64_t>(input.dim(2)) * input.dim(3) * input.dim(4);
    int64_t M = static_cast<int64_t>(N) * S;
    if (gamma.rank() != 1 || gamma.dim(0) != C || beta.rank() != 1 || beta.dim(0) != C)
        throw ShapeError("batchnorm3d: gamma/beta must be [C] with C=" + std::to_string(C));
    if (epsilon <= 0.0f) throw ValueError("batchnorm3d: epsilon must be positive");
    if (momentum < 0.0f || momentum > 1.0f)
        throw ValueError("batchnorm3d: momentum must be in [0,1]");

    std::vector<float> mean(static_cast<std::size_t>(C)), invstd(static_cast<std::size_t>(C));
    auto xd = input.data();

    if (mode == BatchNormMode::Train) {
        if (state.running_mean.empty()) {
            // Conventional starting point: zero mean, unit variance.
            state.running_mean.assign(static_cast<std::size_t>(C), 0.0f);
            state.running_var.assign(static_cast<std::size_t>(C), 1.0f);
        }
        for (int c = 0; c < C; ++c) {
            double acc = 0.0;
            for (int n = 0; n < N; ++n) {
                const float* p = xd.data() + (static_cast<int64_t>(n) * C + c) * S;
                for (int64_t i = 0; i < S; ++i) acc += p[i];
            }
            double mu = acc / static_cast<double>(M);
            double vacc = 0.0;
            for (int n = 0; n < N; ++n) {
                const float* p = xd.data() + (static_cast<int64_t>(n) * C + c) * S;
                for (int64_t i = 0; i < S; ++i) {
                    double dlt = p[i] - mu;
                    vacc += dlt * dlt;
                }
            }
            double var = vacc / static_cast<double>(M);
            mean[static_cast<std::size_t>(c)] = static_cast<float>(mu);
            invstd[static_cast<std::size_t>(c)] =
                static_cast<float>(1.0 / std::sqrt(var + static_cast<double>(epsilon)));
            state.running_mean[static_cast<std::size_t>(c)] = static_cast<float>(
                (1.0 - momentum) * state.running_mean[static_cast<std::size_t>(c)] + momentum * mu);
            state.running_var[static_cast<std::size_t>(c)] = static_cast<float>(
                (1.0 - momentum) * state.running_var[static_cast<std::size_t>(c)] + momentum * var);
        }
        state.initialized = true;
    } else {
        if (!state.initialized)
            throw ValueError(
                "batchnorm3d: eval mode requested before any running-statistics update");
        if (static_cast<int>(state.running_mean.size()) != C)
            throw ShapeError("batchnorm3d: running statistics have wrong channel count");
        for (int c = 0; c < C; ++c) {
            mean[static_cast<std::size_t>(c)] = state.running_mean[static_cast<std::size_t>(c)];
            invstd[static_cast<std::size_t>(c)] = static_cast<float>(
                1.0 / std::sqrt(static_cast<double>(state.running_var[static_cast<std::size_t>(c)]) +
                                static_cast<double>(epsilon)));
        }
    }

    bool rg = wants_grad({&input, &gamma, &beta});
    Tensor out = Tensor::zeros(input.shape(), rg);
    auto od = out.data();
    auto gd = gamma.data();
    auto bd = beta.data();
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const float* p = xd.data() + (static_cast<int64_t>(n) * C + c) * S;
            float* q = od.data() + (static_cast<int64_t>(n) * C + c) * S;
            float mu = mean[static_cast<std::size_t>(c)];
            float is = invstd[static_cast<std::size_t>(c)];
            float gm = gd[static_cast<std::size_t>(c)];
            float bt = bd[static_cast<std::size_t>(c)];
            for (int64_t i = 0; i < S; ++i) q[i] = gm * (p[i] - mu) * is + bt;
        }

    if (g && rg) {
        bool train = mode == BatchNormMode::Train;
        g->record("batchnorm3d", {input, gamma, beta}, out,
                  [input, gamma, beta, out, mean, invstd, N, C, S, M, train]() mutable {
                      auto og = out.grad();
                      auto xd = input.data();
                      auto gd = gamma.data();
                      for (int c = 0; c < C; ++c) {
                          float mu = mean[static_cast<std::size_t>(c)];
                          float is = invstd[static_cast<std::size_t>(c)];
                          float gm = gd[static_cast<std::size_t>(c)];
                          // Channel-wise sums of dy and dy*xhat.
                          double s_dy = 0.0, s_dyx = 0.0;
                          for (int n = 0; n < N; ++n) {
                              const float* go = og.data() + (static_cast<int64_t>(n) * C + c) * S;
                              const float* p = xd.data() + (static_cast<int64_t>(n) * C + c) * S;
                              for (int64_t i = 0; i < S; ++i) {
                                  double xhat = (p[i] - mu) * is;
                                  s_dy += go[i];
                                  s_dyx += go[i] * xhat;
                              }
                          }
                          if (gamma.requires_grad())
                              gamma.grad()[static_cast<std::size_t>(c)] += static_cast<float>(s_dyx);
                          if (beta.requires_grad())
                              beta.grad()[static_cast<std::size_t>(c)] += static_cast<float>(s_dy);
                          if (input.requires_grad()) {
                              auto gx = input.grad();
                              if (train) {
                                  float m1 = static_cast<float>(s_dy / static_cast<double>(M));
                                  float m2 = static_cast<float>(s_dyx / static_cast<double>(M));
                                  for (int n = 0; n < N; ++n) {
                                      const float* go =
                                          og.data() + (static_cast<int64_t>(n) * C + c) * S;
                                      const float* p =
                                          xd.data() + (static_cast<int64_t>(n) * C + c) * S;
                                      float* gi = gx.data() + (static_cast<int64_t>(n) * C + c) * S;
                                      for (int64_t i = 0; i < S; ++i) {
                                          float xhat = (p[i] - mu) * is;
                                          gi[i] += gm * is * (go[i] - m1 - xhat * m2);
                                      }
                                  }
                              } else {
                                  for (int n = 0; n < N; ++n) {
                                      const float* go =
                                          og.data() + (static_cast<int64_t>(n) * C + c) * S;
                                      float* gi = gx.data() + (static_cast<int64_t>(n) * C + c) * S;
                                      for (int64_t i = 0; i < S; ++i) gi[i] += gm * is * go[i];
                                  }
                              }
                          }
                      }
                  });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Broadcasting, reshape, permute
// ---------------------------------------------------------------------------

namespace {

// Strides with zeros on broadcast axes; iterating the output flat index and
// decoding through these gives the source offset.
std::vector<int64_t> broadcast_strides(const std::vector<int>& from,
                                       const std::vector<int>& to) {
    auto strides = row_major_strides(from);
    for (std::size_t i = 0; i < from.size(); ++i)
        if (from[i] == 1 && to[i] != 1) strides[i] = 0;
    return strides;
}

int64_t apply_strides(int64_t flat, const std::vector<int>& shape,
                      const std::vector<int64_t>& strides) {
    int64_t off = 0;
    for (int i = static_cast<int>(shape.size()) - 1; i >= 0; --i) {
        auto ui = static_cast<std::size_t>(i);
        int64_t idx = flat % shape[ui];
        flat /= shape[ui];
        off += idx * strides[ui];
    }
    return off;
}

std::vector<int> broadcast_result_shape(const char* op, Tensor a, Tensor b) {
    if (a.rank() != b.rank())
        throw ShapeError(std::string(op) + ": ranks must match, got " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
    std::vector<int> out(static_cast<std::size_t>(a.rank()));
    for (int i = 0; i < a.rank(); ++i) {
        int ad = a.dim(i), bd = b.dim(i);
        if (ad != bd && ad != 1 && bd != 1)
            throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) +
                             " and " + shape_str(b.shape()));
        out[static_cast<std::size_t>(i)] = std::max(ad, bd);
    }
    return out;
}

}  // namespace

Tensor broadcast_add(Graph* g, Tensor a, Tensor b) {
    if (a.shape() == b.shape()) return add(g, a, b);
    std::vector<int> oshape = broadcast_result_shape("broadcast_add", a, b);
    bool rg = wants_grad({&a, &b});
    Tensor out = Tensor::zeros(oshape, rg);
    auto sa = broadcast_strides(a.shape(), oshape);
    auto sb = broadcast_strides(b.shape(), oshape);
    auto ad = a.data(), bd = b.data();
    auto od = out.data();
    int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i)
        od[static_cast<std::size_t>(i)] =
            ad[static_cast<std::size_t>(apply_strides(i, oshape, sa))] +
            bd[static_cast<std::size_t>(apply_strides(i, oshape, sb))];
    if (g && rg) {
        g->record("broadcast_add", {a, b}, out, [a, b, out, oshape, sa, sb, n]() mutable {
            auto og = out.grad();
            if (a.requires_grad()) {
                auto ga = a.grad();
                for (int64_t i = 0; i < n; ++i)
                    ga[static_cast<std::size_t>(apply_strides(i, oshape, sa))] +=
                        og[static_cast<std::size_t>(i)];
            }
            if (b.requires_grad()) {
                auto gb = b.grad();
                for (int64_t i = 0; i < n; ++i)
                    gb[static_cast<std::size_t>(apply_strides(i, oshape, sb))] +=
                        og[static_cast<std::size_t>(i)];
            }
        });
    }
    return out;
}

Tensor broadcast_to(Graph* g, Tensor x, std::vector<int> shape) {
    if (x.shape() == shape) return scale(g, x, 1.0f);
    if (static_cast<int>(shape.size()) != x.rank())
        throw ShapeError("broadcast_to: rank mismatch, " + shape_str(x.shape()) + " to " +
                         shape_str(shape));
    for (int i = 0; i < x.rank(); ++i)
        if (x.dim(i) != shape[static_cast<std::size_t>(i)] && x.dim(i) != 1)
            throw ShapeError("broadcast_to: cannot broadcast " + shape_str(x.shape()) + " to " +
                             shape_str(shape));
    bool rg = x.requires_grad();
    Tensor out = Tensor::zeros(shape, rg);
    auto sx = broadcast_strides(x.shape(), shape);
    auto xd = x.data();
    auto od = out.data();
    int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i)
        od[static_cast<std::size_t>(i)] = xd[static_cast<std::size_t>(apply_strides(i, shape, sx))];
    if (g && rg) {
        g->record("broadcast_to", {x}, out, [x, out, shape, sx, n]() mutable {
            auto og = out.grad();
            auto gx = x.grad();
            for (int64_t i = 0; i < n; ++i)
                gx[static_cast<std::size_t>(apply_strides(i, shape, sx))] +=
                    og[static_cast<std::size_t>(i)];
        });
    }
    return out;
}

Tensor reshape(Graph* g, Tensor x, std::vector<int> shape) {
    if (shape_numel(shape) != x.numel())
        throw ShapeError("reshape: cannot reshape " + shape_str(x.shape()) + " to " +
                         shape_str(shape));
    bool rg = x.requires_grad();
    Tensor out = Tensor::from_data(shape, std::vector<float>(x.data().begin(), x.data().end()), rg);
    if (g && rg) {
        g->record("reshape", {x}, out, [x, out]() mutable {
            auto og = out.grad();
            auto gx = x.grad();
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += og[i];
        });
    }
    return out;
}

Tensor permute(Graph* g, Tensor x, std::vector<int> axes) {
    int r = x.rank();
    if (static_cast<int>(axes.size()) != r)
        throw ShapeError("permute: axes length must equal rank " + std::to_string(r));
    std::vector<bool> seen(static_cast<std::size_t>(r), false);
    for (int a : axes) {
        if (a < 0 || a >= r || seen[static_cast<std::size_t>(a)])
            throw ShapeError("permute: axes must be a permutation of 0.." + std::to_string(r - 1));
        seen[static_cast<std::size_t>(a)] = true;
    }
    std::vector<int> oshape(static_cast<std::size_t>(r));
    for (int i = 0; i < r; ++i)
        oshape[static_cast<std::size_t>(i)] = x.dim(axes[static_cast<std::size_t>(i)]);
    // Source offset of output flat index i: decode i in oshape, gather with
    // the source strides of the permuted axes.
    auto xstrides = row_major_strides(x.shape());
    std::vector<int64_t> gather(static_cast<std::size_t>(r));
    for (int i = 0; i < r; ++i)
        gather[static_cast<std::size_t>(i)] = xstrides[static_cast<std::size_t>(axes[static_cast<std::size_t>(i)])];
    bool rg = x.requires_grad();
    Tensor out = Tensor::zeros(oshape, rg);
    auto xd = x.data();
    auto od = out.data();
    int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i)
        od[static_cast<std::size_t>(i)] =
            xd[static_cast<std::size_t>(apply_strides(i, oshape, gather))];
    if (g && rg) {
        g->record("permute", {x}, out, [x, out, oshape, gather, n]() mutable {
            auto og = out.grad();
            auto gx = x.grad();
            for (int64_t i = 0; i < n; ++i)
                gx[static_cast<std::size_t>(apply_strides(i, oshape, gather))] +=
                    og[static_cast<std::size_t>(i)];
        });
    }
    return out;
}

}  // namespace babynet::ops

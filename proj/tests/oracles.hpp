#pragma once

// Independent reference implementations used as oracles by the test suites.
// These are deliberately written as plain scalar loops, separate from the
// library's execution paths, and stay in test code only.

#include <cmath>
#include <vector>

#include "babynet/tensor.hpp"

namespace oracle {

using babynet::Tensor;

// Cross-correlation by direct nested loops.
inline Tensor conv3d_loop(const Tensor& x, const Tensor& w, const Tensor* bias, int sT, int sH,
                          int sW, int pT, int pH, int pW) {
    int N = x.dim(0), Cin = x.dim(1), T = x.dim(2), H = x.dim(3), W = x.dim(4);
    int Cout = w.dim(0), kT = w.dim(2), kH = w.dim(3), kW = w.dim(4);
    int To = (T + 2 * pT - kT) / sT + 1;
    int Ho = (H + 2 * pH - kH) / sH + 1;
    int Wo = (W + 2 * pW - kW) / sW + 1;
    Tensor y = Tensor::zeros({N, Cout, To, Ho, Wo});
    for (int n = 0; n < N; ++n)
        for (int co = 0; co < Cout; ++co)
            for (int to = 0; to < To; ++to)
                for (int ho = 0; ho < Ho; ++ho)
                    for (int wo = 0; wo < Wo; ++wo) {
                        double acc = bias ? bias->at({co}) : 0.0;
                        for (int ci = 0; ci < Cin; ++ci)
                            for (int kt = 0; kt < kT; ++kt)
                                for (int kh = 0; kh < kH; ++kh)
                                    for (int kw = 0; kw < kW; ++kw) {
                                        int ti = to * sT - pT + kt;
                                        int hi = ho * sH - pH + kh;
                                        int wi = wo * sW - pW + kw;
                                        if (ti < 0 || ti >= T || hi < 0 || hi >= H || wi < 0 ||
                                            wi >= W)
                                            continue;
                                        acc += static_cast<double>(x.at({n, ci, ti, hi, wi})) *
                                               static_cast<double>(w.at({co, ci, kt, kh, kw}));
                                    }
                        y.at({n, co, to, ho, wo}) = static_cast<float>(acc);
                    }
    return y;
}

// Batch normalization over (N,T,H,W) per channel, straight from the formula.
inline Tensor batchnorm_loop(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                             double eps) {
    int N = x.dim(0), C = x.dim(1), T = x.dim(2), H = x.dim(3), W = x.dim(4);
    Tensor y = Tensor::zeros(x.shape());
    double m = static_cast<double>(N) * T * H * W;
    for (int c = 0; c < C; ++c) {
        double mean = 0.0;
        for (int n = 0; n < N; ++n)
            for (int t = 0; t < T; ++t)
                for (int h = 0; h < H; ++h)
                    for (int w = 0; w < W; ++w) mean += x.at({n, c, t, h, w});
        mean /= m;
        double var = 0.0;
        for (int n = 0; n < N; ++n)
            for (int t = 0; t < T; ++t)
                for (int h = 0; h < H; ++h)
                    for (int w = 0; w < W; ++w) {
                        double d = x.at({n, c, t, h, w}) - mean;
                        var += d * d;
                    }
        var /= m;
        double inv = 1.0 / std::sqrt(var + eps);
        for (int n = 0; n < N; ++n)
            for (int t = 0; t < T; ++t)
                for (int h = 0; h < H; ++h)
                    for (int w = 0; w < W; ++w)
                        y.at({n, c, t, h, w}) = static_cast<float>(
                            gamma.at({c}) * (x.at({n, c, t, h, w}) - mean) * inv + beta.at({c}));
    }
    return y;
}

// x [N,F] * w[O,F]^T + b[O] by dot-product loops.
inline Tensor linear_loop(const Tensor& x, const Tensor& w, const Tensor& b) {
    int N = x.dim(0), F = x.dim(1), O = w.dim(0);
    Tensor y = Tensor::zeros({N, O});
    for (int n = 0; n < N; ++n)
        for (int o = 0; o < O; ++o) {
            double acc = b.at({o});
            for (int f = 0; f < F; ++f)
                acc += static_cast<double>(x.at({n, f})) * static_cast<double>(w.at({o, f}));
            y.at({n, o}) = static_cast<float>(acc);
        }
    return y;
}

// Triple-loop matrix product of one batch element.
inline void matmul_loop(const float* a, const float* b, float* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int l = 0; l < k; ++l)
                acc += static_cast<double>(a[i * k + l]) * static_cast<double>(b[l * n + j]);
            c[i * n + j] = static_cast<float>(acc);
        }
}

inline std::vector<double> softmax_row(const std::vector<double>& row) {
    double mx = row[0];
    for (double v : row) mx = std::max(mx, v);
    std::vector<double> e(row.size());
    double s = 0.0;
    for (std::size_t i = 0; i < row.size(); ++i) {
        e[i] = std::exp(row[i] - mx);
        s += e[i];
    }
    for (double& v : e) v /= s;
    return e;
}

// Direct evaluation of multi-head self-attention over flattened positions:
// per head i, out = softmax(Q_i (K_i + r)^T / sqrt(d)) V_i, heads
// concatenated along channels. Everything is scalar loops in double.
inline Tensor mhsa_loop(const Tensor& x, const Tensor& wq, const Tensor& wk, const Tensor& wv,
                        const Tensor& r_h, const Tensor& r_w, const Tensor* r_t, int heads) {
    int N = x.dim(0), D = x.dim(1), T = x.dim(2), H = x.dim(3), W = x.dim(4);
    int d = D / heads;
    int npos = T * H * W;

    // 1x1x1 convolution = per-position channel mixing.
    auto project = [&](const Tensor& wm, int n, int pos, int c) {
        int t = pos / (H * W), h = (pos / W) % H, w = pos % W;
        double acc = 0.0;
        for (int ci = 0; ci < D; ++ci)
            acc += static_cast<double>(wm.at({c, ci, 0, 0, 0})) * x.at({n, ci, t, h, w});
        return acc;
    };
    auto r_at = [&](int pos, int c) {
        int t = pos / (H * W), h = (pos / W) % H, w = pos % W;
        double v = static_cast<double>(r_h.at({0, c, h, 0})) + r_w.at({0, c, 0, w});
        if (r_t) v += r_t->at({t, c, 0, 0});
        return v;
    };

    Tensor out = Tensor::zeros(x.shape());
    for (int n = 0; n < N; ++n) {
        std::vector<double> q(static_cast<std::size_t>(npos) * D), k(q.size()), v(q.size());
        for (int pos = 0; pos < npos; ++pos)
            for (int c = 0; c < D; ++c) {
                q[static_cast<std::size_t>(pos) * D + c] = project(wq, n, pos, c);
                k[static_cast<std::size_t>(pos) * D + c] = project(wk, n, pos, c);
                v[static_cast<std::size_t>(pos) * D + c] = project(wv, n, pos, c);
            }
        for (int head = 0; head < heads; ++head) {
            int c0 = head * d;
            for (int p = 0; p < npos; ++p) {
                std::vector<double> logits(static_cast<std::size_t>(npos));
                for (int pk = 0; pk < npos; ++pk) {
                    double acc = 0.0;
                    for (int c = c0; c < c0 + d; ++c)
                        acc += q[static_cast<std::size_t>(p) * D + c] *
                               (k[static_cast<std::size_t>(pk) * D + c] + r_at(pk, c));
                    logits[static_cast<std::size_t>(pk)] = acc / std::sqrt(static_cast<double>(d));
                }
                std::vector<double> att = softmax_row(logits);
                for (int c = c0; c < c0 + d; ++c) {
                    double acc = 0.0;
                    for (int pk = 0; pk < npos; ++pk)
                        acc += att[static_cast<std::size_t>(pk)] *
                               v[static_cast<std::size_t>(pk) * D + c];
                    int t = p / (H * W), h = (p / W) % H, w = p % W;
                    out.at({n, c, t, h, w}) = static_cast<float>(acc);
                }
            }
        }
    }
    return out;
}

}  // namespace oracle

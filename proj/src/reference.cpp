#include "babynet/reference.hpp"

#include <cmath>

namespace babynet::reference {

namespace {

// Dense double activation map of one mini-batch.
struct Map {
    int n = 0, c = 0, t = 0, h = 0, w = 0;
    std::vector<double> v;

    Map() = default;
    Map(int n_, int c_, int t_, int h_, int w_)
        : n(n_), c(c_), t(t_), h(h_), w(w_),
          v(static_cast<std::size_t>(n_) * c_ * t_ * h_ * w_, 0.0) {}

    double& at(int ni, int ci, int ti, int hi, int wi) {
        return v[((((static_cast<std::size_t>(ni) * c + ci) * t + ti) * h + hi) * w) + wi];
    }
    double at(int ni, int ci, int ti, int hi, int wi) const {
        return v[((((static_cast<std::size_t>(ni) * c + ci) * t + ti) * h + hi) * w) + wi];
    }
};

Map conv3d(const Map& x, const Conv3dLayer& layer) {
    const Tensor& wt = layer.weight;
    int cout = wt.dim(0), cin = wt.dim(1), kt = wt.dim(2), kh = wt.dim(3), kw = wt.dim(4);
    int st = layer.spec.stride[0], sh = layer.spec.stride[1], sw = layer.spec.stride[2];
    int pt = layer.spec.padding[0], ph = layer.spec.padding[1], pw = layer.spec.padding[2];
    Map y(x.n, cout, (x.t + 2 * pt - kt) / st + 1, (x.h + 2 * ph - kh) / sh + 1,
          (x.w + 2 * pw - kw) / sw + 1);
    auto wd = wt.data();
    auto widx = [&](int co, int ci, int a, int b, int c2) {
        return ((((static_cast<std::size_t>(co) * cin + ci) * kt + a) * kh + b) * kw) + c2;
    };
    for (int ni = 0; ni < y.n; ++ni)
        for (int co = 0; co < cout; ++co)
            for (int to = 0; to < y.t; ++to)
                for (int ho = 0; ho < y.h; ++ho)
                    for (int wo = 0; wo < y.w; ++wo) {
                        double acc = 0.0;
                        for (int ci = 0; ci < cin; ++ci)
                            for (int a = 0; a < kt; ++a) {
                                int ti = to * st - pt + a;
                                if (ti < 0 || ti >= x.t) continue;
                                for (int b = 0; b < kh; ++b) {
                                    int hi = ho * sh - ph + b;
                                    if (hi < 0 || hi >= x.h) continue;
                                    for (int c2 = 0; c2 < kw; ++c2) {
                                        int wi = wo * sw - pw + c2;
                                        if (wi < 0 || wi >= x.w) continue;
                                        acc += static_cast<double>(wd[widx(co, ci, a, b, c2)]) *
                                               x.at(ni, ci, ti, hi, wi);
                                    }
                                }
                            }
                        y.at(ni, co, to, ho, wo) = acc;
                    }
    return y;
}

Map batchnorm(const Map& x, const BatchNorm3dLayer& layer, Mode mode) {
    Map y(x.n, x.c, x.t, x.h, x.w);
    double m = static_cast<double>(x.n) * x.t * x.h * x.w;
    auto gd = layer.gamma.data();
    auto bd = layer.beta.data();
    for (int ci = 0; ci < x.c; ++ci) {
        double mean, var;
        if (mode == Mode::Train) {
            mean = 0.0;
            for (int ni = 0; ni < x.n; ++ni)
                for (int ti = 0; ti < x.t; ++ti)
                    for (int hi = 0; hi < x.h; ++hi)
                        for (int wi = 0; wi < x.w; ++wi) mean += x.at(ni, ci, ti, hi, wi);
            mean /= m;
            var = 0.0;
            for (int ni = 0; ni < x.n; ++ni)
                for (int ti = 0; ti < x.t; ++ti)
                    for (int hi = 0; hi < x.h; ++hi)
                        for (int wi = 0; wi < x.w; ++wi) {
                            double d = x.at(ni, ci, ti, hi, wi) - mean;
                            var += d * d;
                        }
            var /= m;
        } else {
            if (!layer.state.initialized)
                throw ValueError("reference: eval before running statistics exist");
            mean = layer.state.running_mean[static_cast<std::size_t>(ci)];
            var = layer.state.running_var[static_cast<std::size_t>(ci)];
        }
        double inv = 1.0 / std::sqrt(var + static_cast<double>(layer.epsilon));
        double g = gd[static_cast<std::size_t>(ci)];
        double b = bd[static_cast<std::size_t>(ci)];
        for (int ni = 0; ni < x.n; ++ni)
            for (int ti = 0; ti < x.t; ++ti)
                for (int hi = 0; hi < x.h; ++hi)
                    for (int wi = 0; wi < x.w; ++wi)
                        y.at(ni, ci, ti, hi, wi) = g * (x.at(ni, ci, ti, hi, wi) - mean) * inv + b;
    }
    return y;
}

void relu_inplace(Map& x) {
    for (double& v : x.v) v = v > 0.0 ? v : 0.0;
}

Map add(const Map& a, const Map& b) {
    Map y = a;
    for (std::size_t i = 0; i < y.v.size(); ++i) y.v[i] += b.v[i];
    return y;
}

Map mhsa(const Map& x, const Mhsa3dLayer& layer) {
    int d_model = x.c;
    int heads = layer.heads;
    int dh = d_model / heads;
    int npos = x.t * x.h * x.w;

    auto project = [&](const Tensor& wt, const Map& in) {
        Map out(in.n, d_model, in.t, in.h, in.w);
        auto wd = wt.data();
        for (int ni = 0; ni < in.n; ++ni)
            for (int co = 0; co < d_model; ++co)
                for (int ti = 0; ti < in.t; ++ti)
                    for (int hi = 0; hi < in.h; ++hi)
                        for (int wi = 0; wi < in.w; ++wi) {
                            double acc = 0.0;
                            for (int ci = 0; ci < d_model; ++ci)
                                acc += static_cast<double>(
                                           wd[static_cast<std::size_t>(co) * d_model + ci]) *
                                       in.at(ni, ci, ti, hi, wi);
                            out.at(ni, co, ti, hi, wi) = acc;
                        }
        return out;
    };
    Map q = project(layer.wq.weight, x);
    Map k = project(layer.wk.weight, x);
    Map v = project(layer.wv.weight, x);

    auto rh = layer.r_h.data();
    auto rw = layer.r_w.data();
    bool tpe = layer.r_t.defined();
    auto rt = tpe ? layer.r_t.data() : std::span<const float>{};
    auto r_at = [&](int pos, int ci) {
        int ti = pos / (x.h * x.w), hi = (pos / x.w) % x.h, wi = pos % x.w;
        double val = static_cast<double>(rh[static_cast<std::size_t>(ci) * x.h + hi]) +
                     rw[static_cast<std::size_t>(ci) * x.w + wi];
        if (tpe) val += rt[static_cast<std::size_t>(ti) * x.c + ci];
        return val;
    };
    auto map_at_pos = [&](const Map& mapv, int ni, int pos, int ci) {
        int ti = pos / (x.h * x.w), hi = (pos / x.w) % x.h, wi = pos % x.w;
        return mapv.at(ni, ci, ti, hi, wi);
    };

    Map out(x.n, x.c, x.t, x.h, x.w);
    double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<double> logits(static_cast<std::size_t>(npos));
    for (int ni = 0; ni < x.n; ++ni)
        for (int head = 0; head < heads; ++head) {
            int c0 = head * dh;
            for (int p = 0; p < npos; ++p) {
                for (int pk = 0; pk < npos; ++pk) {
                    double acc = 0.0;
                    for (int ci = c0; ci < c0 + dh; ++ci)
                        acc += map_at_pos(q, ni, p, ci) *
                               (map_at_pos(k, ni, pk, ci) + r_at(pk, ci));
                    logits[static_cast<std::size_t>(pk)] = acc * scale;
                }
                double mx = logits[0];
                for (double l : logits) mx = std::max(mx, l);
                double sum = 0.0;
                for (double& l : logits) {
                    l = std::exp(l - mx);
                    sum += l;
                }
                for (int ci = c0; ci < c0 + dh; ++ci) {
                    double acc = 0.0;
                    for (int pk = 0; pk < npos; ++pk)
                        acc += logits[static_cast<std::size_t>(pk)] * map_at_pos(v, ni, pk, ci);
                    int ti = p / (x.h * x.w), hi = (p / x.w) % x.h, wi = p % x.w;
                    out.at(ni, ci, ti, hi, wi) = acc / sum;
                }
            }
        }
    return out;
}

Map residual_block(const Map& x, const ResidualBlock& block, Mode mode) {
    Map h = conv3d(x, block.conv1);
    h = batchnorm(h, block.bn1, mode);
    relu_inplace(h);
    h = conv3d(h, block.conv2);
    h = batchnorm(h, block.bn2, mode);
    Map skip = x;
    if (block.proj) {
        skip = conv3d(x, *block.proj);
        skip = batchnorm(skip, *block.proj_bn, mode);
    }
    Map y = add(h, skip);
    relu_inplace(y);
    return y;
}

Map rtm_block(const Map& x, const RtmBlock& block, Mode mode) {
    Map h = conv3d(x, block.conv);
    h = batchnorm(h, block.bn1, mode);
    relu_inplace(h);
    h = mhsa(h, block.mhsa);
    h = batchnorm(h, block.bn2, mode);
    Map skip = x;
    if (block.proj) {
        skip = conv3d(x, *block.proj);
        skip = batchnorm(skip, *block.proj_bn, mode);
    }
    return add(h, skip);
}

}  // namespace

std::vector<double> forward(const Model& model, const Tensor& input, Mode mode) {
    if (input.rank() != 5 || input.dim(1) != 1)
        throw ShapeError("reference: expected input [N,1,T,H,W], got " +
                         shape_str(input.shape()));
    Map x(input.dim(0), 1, input.dim(2), input.dim(3), input.dim(4));
    auto xd = input.data();
    for (std::size_t i = 0; i < x.v.size(); ++i) x.v[i] = xd[i];

    x = conv3d(x, model.stem);
    x = batchnorm(x, model.stem_bn, mode);
    relu_inplace(x);
    for (const auto& stage : model.stages)
        for (const auto& block : stage)
            x = std::visit(
                [&](const auto& b) -> Map {
                    using T = std::decay_t<decltype(b)>;
                    if constexpr (std::is_same_v<T, ResidualBlock>)
                        return residual_block(x, b, mode);
                    else
                        return rtm_block(x, b, mode);
                },
                block);

    // global average pool + fully connected head
    std::vector<double> out(static_cast<std::size_t>(x.n));
    auto fw = model.fc.weight.data();
    double bias = model.fc.bias.data()[0];
    double spatial = static_cast<double>(x.t) * x.h * x.w;
    for (int ni = 0; ni < x.n; ++ni) {
        double acc = bias;
        for (int ci = 0; ci < x.c; ++ci) {
            double pooled = 0.0;
            for (int ti = 0; ti < x.t; ++ti)
                for (int hi = 0; hi < x.h; ++hi)
                    for (int wi = 0; wi < x.w; ++wi) pooled += x.at(ni, ci, ti, hi, wi);
            acc += static_cast<double>(fw[static_cast<std::size_t>(ci)]) * (pooled / spatial);
        }
        out[static_cast<std::size_t>(ni)] = acc;
    }
    return out;
}

double mse(const Model& model, const Tensor& input, const Tensor& target, Mode mode) {
    std::vector<double> preds = forward(model, input, mode);
    if (target.numel() != static_cast<int64_t>(preds.size()))
        throw ShapeError("reference: target shape does not match batch");
    auto td = target.data();
    double acc = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        double d = preds[i] - static_cast<double>(td[i]);
        acc += d * d;
    }
    return acc / static_cast<double>(preds.size());
}

}  // namespace babynet::reference

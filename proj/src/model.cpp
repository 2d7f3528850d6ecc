#include "babynet/model.hpp"

#include <cmath>

#include "babynet/common.hpp"

namespace babynet {

const char* variant_name(Variant v) {
    switch (v) {
        case Variant::Base: return "base";
        case Variant::Rtm: return "rtm";
        case Variant::RtmTpe: return "rtm_tpe";
    }
    return "?";
}

Variant variant_from_name(const std::string& name) {
    if (name == "base") return Variant::Base;
    if (name == "rtm") return Variant::Rtm;
    if (name == "rtm_tpe") return Variant::RtmTpe;
    throw ValueError("unknown variant '" + name + "' (expected base|rtm|rtm_tpe)");
}

int ModelConfig::stage_channels(int stage) const {
    if (stage < 0 || stage >= 5) throw ValueError("stage index out of range");
    double scaled = base_widths[static_cast<std::size_t>(stage)] * width_multiplier;
    int c = static_cast<int>(std::ceil(scaled / num_heads)) * num_heads;
    return std::max(c, num_heads);
}

void ModelConfig::validate() const {
    if (in_frames <= 0 || in_height <= 0 || in_width <= 0)
        throw ValueError("model config: input dimensions must be positive");
    if (in_frames % 8 != 0)
        throw ValueError("model config: in_frames must be divisible by 8, got " +
                         std::to_string(in_frames));
    if (in_height % 16 != 0 || in_width % 16 != 0)
        throw ValueError("model config: in_height and in_width must be divisible by 16, got " +
                         std::to_string(in_height) + "x" + std::to_string(in_width));
    if (num_heads <= 0) throw ValueError("model config: num_heads must be positive");
    if (!(width_multiplier > 0.0))
        throw ValueError("model config: width_multiplier must be positive");
    for (int s = 0; s < 5; ++s)
        if (base_widths[static_cast<std::size_t>(s)] <= 0)
            throw ValueError("model config: base widths must be positive");
    if (stage_channels(4) % num_heads != 0)
        throw ValueError("model config: stage-5 channels not divisible by num_heads");
}

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

namespace {

Tensor uniform_tensor(Rng& rng, std::vector<int> shape, double bound) {
    Tensor t = Tensor::zeros(std::move(shape), true);
    for (float& v : t.data()) v = static_cast<float>(rng.uniform(-bound, bound));
    return t;
}

Conv3dLayer make_conv(Rng& rng, int cin, int cout, std::array<int, 3> kernel,
                      std::array<int, 3> stride, std::array<int, 3> padding) {
    double fan_in = static_cast<double>(cin) * kernel[0] * kernel[1] * kernel[2];
    double bound = 1.0 / std::sqrt(fan_in);
    Conv3dLayer layer;
    layer.weight = uniform_tensor(rng, {cout, cin, kernel[0], kernel[1], kernel[2]}, bound);
    layer.spec.stride = stride;
    layer.spec.padding = padding;
    return layer;
}

BatchNorm3dLayer make_bn(int channels) {
    BatchNorm3dLayer bn;
    bn.gamma = Tensor::full({channels}, 1.0f, true);
    bn.beta = Tensor::zeros({channels}, true);
    return bn;
}

Tensor positional_tensor(Rng& rng, std::vector<int> shape) {
    Tensor t = Tensor::zeros(std::move(shape), true);
    for (float& v : t.data()) v = static_cast<float>(rng.normal(0.0, 0.02));
    return t;
}

ResidualBlock make_residual_block(Rng& rng, int cin, int cout, int stride) {
    ResidualBlock b;
    b.conv1 = make_conv(rng, cin, cout, {3, 3, 3}, {stride, stride, stride}, {1, 1, 1});
    b.bn1 = make_bn(cout);
    b.conv2 = make_conv(rng, cout, cout, {3, 3, 3}, {1, 1, 1}, {1, 1, 1});
    b.bn2 = make_bn(cout);
    if (stride != 1 || cin != cout) {
        b.proj = make_conv(rng, cin, cout, {1, 1, 1}, {stride, stride, stride}, {0, 0, 0});
        b.proj_bn = make_bn(cout);
    }
    return b;
}

RtmBlock make_rtm_block(Rng& rng, int cin, int cout, int stride, int heads, int t, int h, int w,
                        bool temporal_encoding) {
    RtmBlock b;
    b.conv = make_conv(rng, cin, cout, {3, 3, 3}, {stride, stride, stride}, {1, 1, 1});
    b.bn1 = make_bn(cout);
    b.mhsa.wq = make_conv(rng, cout, cout, {1, 1, 1}, {1, 1, 1}, {0, 0, 0});
    b.mhsa.wk = make_conv(rng, cout, cout, {1, 1, 1}, {1, 1, 1}, {0, 0, 0});
    b.mhsa.wv = make_conv(rng, cout, cout, {1, 1, 1}, {1, 1, 1}, {0, 0, 0});
    b.mhsa.r_h = positional_tensor(rng, {1, cout, h, 1});
    b.mhsa.r_w = positional_tensor(rng, {1, cout, 1, w});
    if (temporal_encoding) b.mhsa.r_t = positional_tensor(rng, {t, cout, 1, 1});
    b.mhsa.heads = heads;
    if (cout % heads != 0)
        throw ValueError("mhsa: channel count " + std::to_string(cout) +
                         " not divisible by heads " + std::to_string(heads));
    b.bn2 = make_bn(cout);
    if (stride != 1 || cin != cout) {
        b.proj = make_conv(rng, cin, cout, {1, 1, 1}, {stride, stride, stride}, {0, 0, 0});
        b.proj_bn = make_bn(cout);
    }
    return b;
}

}  // namespace

Model build_model(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng(mix_seed({seed, 0x6d6f64656cULL}));
    Model m;
    m.config = config;

    int c0 = config.stage_channels(0);
    m.stem = make_conv(rng, 1, c0, {3, 7, 7}, {1, 2, 2}, {1, 3, 3});
    m.stem_bn = make_bn(c0);

    // Feature map size entering stage 5 (after the stride-2 conv of the
    // first block): T0/8, H0/16, W0/16.
    int t5 = config.in_frames / 8;
    int h5 = config.in_height / 16;
    int w5 = config.in_width / 16;

    m.stages.resize(4);
    for (int stage = 1; stage <= 4; ++stage) {
        int cin = config.stage_channels(stage - 1);
        int cout = config.stage_channels(stage);
        int stride = stage == 1 ? 1 : 2;
        auto& blocks = m.stages[static_cast<std::size_t>(stage - 1)];
        bool rtm_stage = stage == 4 && config.variant != Variant::Base;
        if (rtm_stage) {
            bool tpe = config.variant == Variant::RtmTpe;
            blocks.emplace_back(
                make_rtm_block(rng, cin, cout, stride, config.num_heads, t5, h5, w5, tpe));
            blocks.emplace_back(
                make_rtm_block(rng, cout, cout, 1, config.num_heads, t5, h5, w5, tpe));
        } else {
            blocks.emplace_back(make_residual_block(rng, cin, cout, stride));
            blocks.emplace_back(make_residual_block(rng, cout, cout, 1));
        }
    }

    int c4 = config.stage_channels(4);
    double bound = 1.0 / std::sqrt(static_cast<double>(c4));
    m.fc.weight = uniform_tensor(rng, {1, c4}, bound);
    m.fc.bias = uniform_tensor(rng, {1}, bound);
    return m;
}

// ---------------------------------------------------------------------------
// Forward passes
// ---------------------------------------------------------------------------

Tensor positional_sum(Graph* g, const Tensor& r_h, const Tensor& r_w, const Tensor* r_t,
                      int frames) {
    if (r_h.rank() != 4 || r_h.dim(0) != 1 || r_h.dim(3) != 1)
        throw ShapeError("positional_sum: r_h must be [1,D,H,1], got " + shape_str(r_h.shape()));
    if (r_w.rank() != 4 || r_w.dim(0) != 1 || r_w.dim(2) != 1)
        throw ShapeError("positional_sum: r_w must be [1,D,1,W], got " + shape_str(r_w.shape()));
    if (r_h.dim(1) != r_w.dim(1))
        throw ShapeError("positional_sum: channel dims of r_h and r_w differ");
    Tensor hw = ops::broadcast_add(g, r_h, r_w);  // [1,D,H,W]
    if (r_t) {
        if (r_t->rank() != 4 || r_t->dim(2) != 1 || r_t->dim(3) != 1)
            throw ShapeError("positional_sum: r_t must be [T,D,1,1], got " +
                             shape_str(r_t->shape()));
        if (r_t->dim(1) != r_h.dim(1))
            throw ShapeError("positional_sum: channel dim of r_t differs");
        if (r_t->dim(0) != frames)
            throw ShapeError("positional_sum: r_t frames " + std::to_string(r_t->dim(0)) +
                             " do not match input frames " + std::to_string(frames));
        return ops::broadcast_add(g, hw, *r_t);  // [T,D,H,W]
    }
    return ops::broadcast_to(g, hw, {frames, r_h.dim(1), r_h.dim(2), r_w.dim(3)});
}

Tensor Mhsa3dLayer::forward(Graph* g, const Tensor& x) const {
    if (x.rank() != 5)
        throw ShapeError("mhsa3d: expected rank-5 input, got " + shape_str(x.shape()));
    int N = x.dim(0), D = x.dim(1), T = x.dim(2), H = x.dim(3), W = x.dim(4);
    if (D % heads != 0)
        throw ShapeError("mhsa3d: channels " + std::to_string(D) + " not divisible by heads " +
                         std::to_string(heads));
    if (wq.weight.dim(1) != D)
        throw ShapeError("mhsa3d: input channels " + std::to_string(D) +
                         " do not match projection weight " + shape_str(wq.weight.shape()));
    if (r_h.dim(2) != H || r_w.dim(3) != W)
        throw ShapeError("mhsa3d: positional encodings sized for " +
                         std::to_string(r_h.dim(2)) + "x" + std::to_string(r_w.dim(3)) +
                         " but input is " + std::to_string(H) + "x" + std::to_string(W));
    int d = D / heads;
    int npos = T * H * W;

    Tensor q = wq.forward(g, x);
    Tensor k = wk.forward(g, x);
    Tensor v = wv.forward(g, x);

    // [N,D,T,H,W] -> [N,heads,Npos,d]; the channel axis factors into
    // (head, d) in place, so this is a pure reshape plus one transpose.
    auto to_heads = [&](const Tensor& t) {
        Tensor r = ops::reshape(g, t, {N, heads, d, npos});
        return ops::permute(g, r, {0, 1, 3, 2});
    };
    Tensor qh = to_heads(q);
    Tensor kh = to_heads(k);
    Tensor vh = to_heads(v);

    // r: [T,D,H,W] -> [1,heads,Npos,d], sliced per head along channels.
    Tensor r = positional_sum(g, r_h, r_w, r_t.defined() ? &r_t : nullptr, T);
    Tensor rp = ops::permute(g, r, {1, 0, 2, 3});            // [D,T,H,W]
    rp = ops::reshape(g, rp, {heads, d, npos});
    rp = ops::permute(g, rp, {0, 2, 1});                     // [heads,Npos,d]
    rp = ops::reshape(g, rp, {1, heads, npos, d});

    Tensor keys = ops::broadcast_add(g, kh, rp);             // K_i + r_i
    Tensor keys_t = ops::permute(g, keys, {0, 1, 3, 2});     // [N,heads,d,Npos]
    Tensor logits = ops::matmul_batched(g, qh, keys_t);      // [N,heads,Npos,Npos]
    logits = ops::scale(g, logits, static_cast<float>(1.0 / std::sqrt(static_cast<double>(d))));
    Tensor att = ops::softmax_lastdim(g, logits);
    Tensor out = ops::matmul_batched(g, att, vh);            // [N,heads,Npos,d]

    out = ops::permute(g, out, {0, 1, 3, 2});                // [N,heads,d,Npos]
    return ops::reshape(g, out, {N, D, T, H, W});
}

Tensor ResidualBlock::forward(Graph* g, const Tensor& x, Mode mode) {
    Tensor h = conv1.forward(g, x);
    h = bn1.forward(g, h, mode);
    h = ops::relu(g, h);
    h = conv2.forward(g, h);
    h = bn2.forward(g, h, mode);
    Tensor skip = x;
    if (proj) {
        skip = proj->forward(g, x);
        skip = proj_bn->forward(g, skip, mode);
    }
    return ops::relu(g, ops::add(g, h, skip));
}

Tensor RtmBlock::forward(Graph* g, const Tensor& x, Mode mode) {
    Tensor h = conv.forward(g, x);
    h = bn1.forward(g, h, mode);
    h = ops::relu(g, h);
    h = mhsa.forward(g, h);
    h = bn2.forward(g, h, mode);
    Tensor skip = x;
    if (proj) {
        skip = proj->forward(g, x);
        skip = proj_bn->forward(g, skip, mode);
    }
    // No activation after the residual add.
    return ops::add(g, h, skip);
}

std::vector<Tensor> Model::forward_stages(Graph* g, const Tensor& input, Mode mode) {
    if (input.rank() != 5 || input.dim(1) != 1 || input.dim(2) != config.in_frames ||
        input.dim(3) != config.in_height || input.dim(4) != config.in_width)
        throw ShapeError("model forward: expected input [N,1," + std::to_string(config.in_frames) +
                         "," + std::to_string(config.in_height) + "," +
                         std::to_string(config.in_width) + "], got " + shape_str(input.shape()));
    std::vector<Tensor> outs;
    outs.reserve(5);
    Tensor h = stem.forward(g, input);
    h = stem_bn.forward(g, h, mode);
    h = ops::relu(g, h);
    outs.push_back(h);
    for (auto& stage : stages) {
        for (auto& block : stage)
            h = std::visit([&](auto& b) { return b.forward(g, h, mode); }, block);
        outs.push_back(h);
    }
    return outs;
}

Tensor Model::forward(Graph* g, const Tensor& input, Mode mode) {
    Tensor h = forward_stages(g, input, mode).back();
    Tensor pooled = ops::global_avg_pool(g, h);
    return fc.forward(g, pooled);
}

// ---------------------------------------------------------------------------
// Parameter traversal
// ---------------------------------------------------------------------------

namespace {

const char* stage_label(std::size_t stage_idx) {
    static const char* names[] = {"conv2", "conv3", "conv4", "conv5"};
    return names[stage_idx];
}

}  // namespace

void visit_parameters(Model& model, const std::function<void(const std::string&, Tensor&)>& fn) {
    fn("stem.weight", model.stem.weight);
    fn("stem_bn.gamma", model.stem_bn.gamma);
    fn("stem_bn.beta", model.stem_bn.beta);
    for (std::size_t s = 0; s < model.stages.size(); ++s) {
        for (std::size_t b = 0; b < model.stages[s].size(); ++b) {
            std::string prefix = std::string(stage_label(s)) + "." + std::to_string(b) + ".";
            std::visit(
                [&](auto& block) {
                    using T = std::decay_t<decltype(block)>;
                    if constexpr (std::is_same_v<T, ResidualBlock>) {
                        fn(prefix + "conv1.weight", block.conv1.weight);
                        fn(prefix + "bn1.gamma", block.bn1.gamma);
                        fn(prefix + "bn1.beta", block.bn1.beta);
                        fn(prefix + "conv2.weight", block.conv2.weight);
                        fn(prefix + "bn2.gamma", block.bn2.gamma);
                        fn(prefix + "bn2.beta", block.bn2.beta);
                    } else {
                        fn(prefix + "conv.weight", block.conv.weight);
                        fn(prefix + "bn1.gamma", block.bn1.gamma);
                        fn(prefix + "bn1.beta", block.bn1.beta);
                        fn(prefix + "mhsa.wq.weight", block.mhsa.wq.weight);
                        fn(prefix + "mhsa.wk.weight", block.mhsa.wk.weight);
                        fn(prefix + "mhsa.wv.weight", block.mhsa.wv.weight);
                        fn(prefix + "mhsa.r_h", block.mhsa.r_h);
                        fn(prefix + "mhsa.r_w", block.mhsa.r_w);
                        if (block.mhsa.r_t.defined()) fn(prefix + "mhsa.r_t", block.mhsa.r_t);
                        fn(prefix + "bn2.gamma", block.bn2.gamma);
                        fn(prefix + "bn2.beta", block.bn2.beta);
                    }
                    if (block.proj) {
                        fn(prefix + "proj.weight", block.proj->weight);
                        fn(prefix + "proj_bn.gamma", block.proj_bn->gamma);
                        fn(prefix + "proj_bn.beta", block.proj_bn->beta);
                    }
                },
                model.stages[s][b]);
        }
    }
    fn("fc.weight", model.fc.weight);
    fn("fc.bias", model.fc.bias);
}

void visit_bn_states(Model& model,
                     const std::function<void(const std::string&, ops::BatchNormState&)>& fn) {
    fn("stem_bn", model.stem_bn.state);
    for (std::size_t s = 0; s < model.stages.size(); ++s) {
        for (std::size_t b = 0; b < model.stages[s].size(); ++b) {
            std::string prefix = std::string(stage_label(s)) + "." + std::to_string(b) + ".";
            std::visit(
                [&](auto& block) {
                    fn(prefix + "bn1", block.bn1.state);
                    fn(prefix + "bn2", block.bn2.state);
                    if (block.proj_bn) fn(prefix + "proj_bn", block.proj_bn->state);
                },
                model.stages[s][b]);
        }
    }
}

std::vector<std::pair<std::string, Tensor>> named_parameters(Model& model) {
    std::vector<std::pair<std::string, Tensor>> out;
    visit_parameters(model, [&](const std::string& name, Tensor& t) { out.emplace_back(name, t); });
    return out;
}

int64_t count_parameters(Model& model) {
    int64_t n = 0;
    visit_parameters(model, [&](const std::string&, Tensor& t) { n += t.numel(); });
    return n;
}

}  // namespace babynet

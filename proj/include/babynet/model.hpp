#pragma once

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "babynet/ops.hpp"

namespace babynet {

enum class Variant { Base, Rtm, RtmTpe };

const char* variant_name(Variant v);
Variant variant_from_name(const std::string& name);

enum class Mode { Train, Eval };

// Architecture description. Width multiplier scales the channel ladder,
// rounding up to a multiple of num_heads so the attention head dimension
// stays integral at any width.
struct ModelConfig {
    Variant variant = Variant::RtmTpe;
    int in_frames = 16;
    int in_height = 64;
    int in_width = 64;
    int num_heads = 4;
    double width_multiplier = 1.0;
    std::array<int, 5> base_widths{64, 64, 128, 256, 512};

    int stage_channels(int stage) const;  // stage in [0,5)
    void validate() const;                // throws ValueError on bad config
};

struct Conv3dLayer {
    Tensor weight;  // [Cout,Cin,kT,kH,kW], no bias (a BN always follows)
    ops::Conv3dSpec spec;
    Tensor forward(Graph* g, const Tensor& x) const {
        return ops::conv3d(g, x, weight, nullptr, spec);
    }
};

struct BatchNorm3dLayer {
    Tensor gamma;
    Tensor beta;
    ops::BatchNormState state;
    float momentum = 0.1f;
    float epsilon = 1e-5f;
    Tensor forward(Graph* g, const Tensor& x, Mode mode) {
        return ops::batchnorm3d(g, x, gamma, beta, state,
                                mode == Mode::Train ? ops::BatchNormMode::Train
                                                    : ops::BatchNormMode::Eval,
                                momentum, epsilon);
    }
};

struct LinearLayer {
    Tensor weight;  // [O,F]
    Tensor bias;    // [O]
    Tensor forward(Graph* g, const Tensor& x) const { return ops::linear(g, x, weight, bias); }
};

// Sum of the decomposed positional encodings, broadcast to [T,D,H,W].
// r_t may be null (no temporal encoding); the T axis is then tiled.
Tensor positional_sum(Graph* g, const Tensor& r_h, const Tensor& r_w, const Tensor* r_t,
                      int frames);

// 3D multi-head self-attention over flattened spatio-temporal positions.
// Queries/keys/values come from 1x1x1 convolutions; the positional sum is
// added to the keys; heads are concatenated along channels with no output
// projection.
struct Mhsa3dLayer {
    Conv3dLayer wq, wk, wv;
    Tensor r_h;  // [1,D,H,1]
    Tensor r_w;  // [1,D,1,W]
    Tensor r_t;  // [T,D,1,1]; undefined unless the variant has TPE
    int heads = 4;

    Tensor forward(Graph* g, const Tensor& x) const;
};

struct ResidualBlock {
    Conv3dLayer conv1;
    BatchNorm3dLayer bn1;
    Conv3dLayer conv2;
    BatchNorm3dLayer bn2;
    std::optional<Conv3dLayer> proj;
    std::optional<BatchNorm3dLayer> proj_bn;

    Tensor forward(Graph* g, const Tensor& x, Mode mode);
};

// Residual Transformer Module: y = BN(MHSA(ReLU(BN(Conv(x))))) + skip(x).
struct RtmBlock {
    Conv3dLayer conv;
    BatchNorm3dLayer bn1;
    Mhsa3dLayer mhsa;
    BatchNorm3dLayer bn2;
    std::optional<Conv3dLayer> proj;
    std::optional<BatchNorm3dLayer> proj_bn;

    Tensor forward(Graph* g, const Tensor& x, Mode mode);
};

using Block = std::variant<ResidualBlock, RtmBlock>;

struct Model {
    ModelConfig config;
    Conv3dLayer stem;
    BatchNorm3dLayer stem_bn;
    std::vector<std::vector<Block>> stages;  // conv2..conv5, two blocks each
    LinearLayer fc;

    // One output per stage: conv1 (stem), conv2, conv3, conv4, conv5.
    std::vector<Tensor> forward_stages(Graph* g, const Tensor& input, Mode mode);
    // [N,1,T0,H0,W0] -> [N,1]
    Tensor forward(Graph* g, const Tensor& input, Mode mode);
};

Model build_model(const ModelConfig& config, std::uint64_t seed);

int64_t count_parameters(Model& model);

// Stable, name-ordered traversal of trainable parameters.
void visit_parameters(Model& model, const std::function<void(const std::string&, Tensor&)>& fn);
// Non-trainable buffers (batch-norm running statistics).
void visit_bn_states(Model& model,
                     const std::function<void(const std::string&, ops::BatchNormState&)>& fn);

std::vector<std::pair<std::string, Tensor>> named_parameters(Model& model);

}  // namespace babynet

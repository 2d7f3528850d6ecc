#pragma once

#include <filesystem>

#include "babynet/model.hpp"

namespace babynet {

// Affine normalization of regression targets, fit on the training fold.
struct TargetScaler {
    double mean = 0.0;
    double stddev = 1.0;

    static TargetScaler identity() { return {0.0, 1.0}; }
    static TargetScaler fit(const std::vector<double>& values);

    double transform(double x) const { return (x - mean) / stddev; }
    double inverse(double y) const { return y * stddev + mean; }
};

// A checkpoint is a directory of tensor files plus manifest.json recording
// the model configuration, the target scaler, and the name -> file map for
// parameters and batch-norm running statistics.
void save_checkpoint(const std::filesystem::path& dir, Model& model, const TargetScaler& scaler);

struct Checkpoint {
    Model model;
    TargetScaler scaler;
};
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace babynet

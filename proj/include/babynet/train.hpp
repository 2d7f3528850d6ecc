#pragma once

#include <string>
#include <vector>

#include "babynet/checkpoint.hpp"
#include "babynet/data.hpp"
#include "babynet/model.hpp"

namespace babynet {

// Mean squared error over equal-shaped prediction/target tensors.
Tensor mse_loss(Graph* g, const Tensor& pred, const Tensor& target);

struct AdamConfig {
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float epsilon = 1e-8f;
    float weight_decay = 1e-4f;  // coupled L2: g <- g + wd * theta
};

// Standard ADAM with bias correction. Weight decay is added to the raw
// gradient before the moment updates; parameter gradients themselves are
// left untouched.
class AdamOptimizer {
public:
    AdamOptimizer(std::vector<std::pair<std::string, Tensor>> params, AdamConfig config);

    void step(double lr);
    void zero_grad();
    int step_count() const { return step_; }

private:
    std::vector<std::pair<std::string, Tensor>> params_;
    std::vector<std::vector<float>> m_;
    std::vector<std::vector<float>> v_;
    AdamConfig config_;
    int step_ = 0;
};

struct LrSchedule {
    double initial_lr = 1e-4;
    double decay_factor = 0.1;
    int step_epochs = 160;
    int total_epochs = 200;

    double lr_at_epoch(int epoch) const;
};

struct TrainConfig {
    int epochs = 200;
    int batch_size = 2;
    LrSchedule schedule;
    AdamConfig adam;
    AugmentPolicy augment;
    bool raw_targets = false;  // train on grams directly instead of z-scores
    std::uint64_t seed = 0;
};

struct EpochStat {
    int epoch = 0;
    double lr = 0.0;
    double train_mse = 0.0;
};

struct TrainResult {
    std::vector<EpochStat> curve;
    TargetScaler scaler;
};

// Trains in place on all segments of the given patients. Deterministic for
// a fixed seed. Throws ValueError if no segments exist and NumericError if
// the loss stops being finite.
TrainResult train_model(Model& model, const std::vector<PatientRecord>& patients,
                        const TrainConfig& config);

// Mean of all segment predictions across the patient's videos, mapped back
// to grams. Throws ValueError when the patient yields no segments.
double predict_patient(Model& model, const PatientRecord& patient, const TargetScaler& scaler);

void write_loss_csv(const std::filesystem::path& path, const std::vector<EpochStat>& curve);

}  // namespace babynet

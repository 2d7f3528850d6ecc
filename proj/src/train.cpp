#include "babynet/train.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

namespace babynet {

Tensor mse_loss(Graph* g, const Tensor& pred, const Tensor& target) {
    if (pred.shape() != target.shape())
        throw ShapeError("mse_loss: prediction " + shape_str(pred.shape()) +
                         " does not match target " + shape_str(target.shape()));
    Tensor diff = ops::sub(g, pred, target);
    return ops::mean_all(g, ops::mul(g, diff, diff));
}

// ---------------------------------------------------------------------------
// ADAM
// ---------------------------------------------------------------------------

AdamOptimizer::AdamOptimizer(std::vector<std::pair<std::string, Tensor>> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& [name, t] : params_) {
        m_.emplace_back(static_cast<std::size_t>(t.numel()), 0.0f);
        v_.emplace_back(static_cast<std::size_t>(t.numel()), 0.0f);
    }
}

void AdamOptimizer::step(double lr) {
    for (const auto& [name, t] : params_)
        if (!t.has_grad())
            throw ValueError("adam step: parameter '" + name + "' has no gradient");
    ++step_;
    double bc1 = 1.0 - std::pow(static_cast<double>(config_.beta1), step_);
    double bc2 = 1.0 - std::pow(static_cast<double>(config_.beta2), step_);
    for (std::size_t p = 0; p < params_.size(); ++p) {
        Tensor t = params_[p].second;
        auto theta = t.data();
        auto grad = t.grad();
        auto& m = m_[p];
        auto& v = v_[p];
        for (std::size_t i = 0; i < theta.size(); ++i) {
            float gi = grad[i] + config_.weight_decay * theta[i];
            m[i] = config_.beta1 * m[i] + (1.0f - config_.beta1) * gi;
            v[i] = config_.beta2 * v[i] + (1.0f - config_.beta2) * gi * gi;
            double mhat = m[i] / bc1;
            double vhat = v[i] / bc2;
            theta[i] -= static_cast<float>(lr * mhat / (std::sqrt(vhat) + config_.epsilon));
        }
    }
}

void AdamOptimizer::zero_grad() {
    for (auto& [name, t] : params_) t.zero_grad();
}

// ---------------------------------------------------------------------------
// LR schedule
// ---------------------------------------------------------------------------

double LrSchedule::lr_at_epoch(int epoch) const {
    if (epoch < 0) throw ValueError("lr_at_epoch: negative epoch");
    return initial_lr * std::pow(decay_factor, epoch / step_epochs);
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

TrainResult train_model(Model& model, const std::vector<PatientRecord>& patients,
                        const TrainConfig& config) {
    if (patients.empty()) throw ValueError("train: empty training fold");
    if (config.batch_size < 1) throw ValueError("train: batch_size must be >= 1");

    int t0 = model.config.in_frames;
    int h0 = model.config.in_height;
    int w0 = model.config.in_width;

    struct Item {
        Segment segment;
        double weight_g;
        int patient_index;
    };
    std::vector<Item> items;
    std::vector<double> weights;
    for (std::size_t p = 0; p < patients.size(); ++p) {
        weights.push_back(patients[p].birth_weight_g);
        auto segs = patient_segments(patients[p], t0, h0, w0);
        for (auto& s : segs)
            items.push_back(Item{std::move(s), patients[p].birth_weight_g, static_cast<int>(p)});
    }
    if (items.empty())
        throw ValueError("train: training fold yields no segments (videos shorter than " +
                         std::to_string(t0) + " frames?)");

    TargetScaler scaler = config.raw_targets ? TargetScaler::identity() : TargetScaler::fit(weights);

    AdamOptimizer opt(named_parameters(model), config.adam);

    TrainResult result;
    result.scaler = scaler;
    int64_t frame_elems = static_cast<int64_t>(t0) * h0 * w0;

    std::vector<std::size_t> order(items.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        double lr = config.schedule.lr_at_epoch(epoch);
        Rng shuffle_rng(mix_seed({config.seed, 0x73687566ULL, static_cast<std::uint64_t>(epoch)}));
        shuffle_rng.shuffle(order);

        double epoch_sse = 0.0;  // sum over segments of squared error
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
            std::size_t bsz = std::min(static_cast<std::size_t>(config.batch_size),
                                       order.size() - start);
            Tensor batch = Tensor::zeros({static_cast<int>(bsz), 1, t0, h0, w0});
            Tensor target = Tensor::zeros({static_cast<int>(bsz), 1});
            for (std::size_t b = 0; b < bsz; ++b) {
                const Item& item = items[order[start + b]];
                std::uint64_t aug_seed = mix_seed(
                    {config.seed, 0x617567ULL, static_cast<std::uint64_t>(epoch),
                     static_cast<std::uint64_t>(item.patient_index),
                     static_cast<std::uint64_t>(item.segment.video_index),
                     static_cast<std::uint64_t>(item.segment.segment_index)});
                Segment aug = augment(item.segment, aug_seed, config.augment);
                std::memcpy(batch.data().data() + static_cast<int64_t>(b) * frame_elems,
                            aug.frames.data().data(),
                            sizeof(float) * static_cast<std::size_t>(frame_elems));
                target.at({static_cast<int>(b), 0}) =
                    static_cast<float>(scaler.transform(item.weight_g));
            }

            Graph graph;
            Tensor pred = model.forward(&graph, batch, Mode::Train);
            Tensor loss = mse_loss(&graph, pred, target);
            double loss_value = static_cast<double>(loss.data()[0]);
            if (!std::isfinite(loss_value))
                throw NumericError("train: loss is not finite at epoch " + std::to_string(epoch));
            opt.zero_grad();
            graph.backward(loss);
            opt.step(lr);
            epoch_sse += loss_value * static_cast<double>(bsz);
        }
        result.curve.push_back(
            EpochStat{epoch, lr, epoch_sse / static_cast<double>(items.size())});
    }
    return result;
}

double predict_patient(Model& model, const PatientRecord& patient, const TargetScaler& scaler) {
    int t0 = model.config.in_frames;
    int h0 = model.config.in_height;
    int w0 = model.config.in_width;
    auto segs = patient_segments(patient, t0, h0, w0);
    if (segs.empty())
        throw ValueError("predict: patient '" + patient.patient_id + "' yields no segments");

    int64_t frame_elems = static_cast<int64_t>(t0) * h0 * w0;
    double acc = 0.0;
    constexpr std::size_t kChunk = 8;
    for (std::size_t start = 0; start < segs.size(); start += kChunk) {
        std::size_t bsz = std::min(kChunk, segs.size() - start);
        Tensor batch = Tensor::zeros({static_cast<int>(bsz), 1, t0, h0, w0});
        for (std::size_t b = 0; b < bsz; ++b)
            std::memcpy(batch.data().data() + static_cast<int64_t>(b) * frame_elems,
                        segs[start + b].frames.data().data(),
                        sizeof(float) * static_cast<std::size_t>(frame_elems));
        Tensor pred = model.forward(nullptr, batch, Mode::Eval);
        for (std::size_t b = 0; b < bsz; ++b)
            acc += static_cast<double>(pred.data()[b]);
    }
    return scaler.inverse(acc / static_cast<double>(segs.size()));
}

void write_loss_csv(const std::filesystem::path& path, const std::vector<EpochStat>& curve) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write loss curve: " + path.string());
    out << "epoch,lr,train_mse\n";
    char buf[64];
    auto fmt = [&](double v) {
        auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
        if (ec != std::errc{}) throw IoError("failed to format number");
        return std::string(buf, ptr);
    };
    for (const auto& s : curve) out << s.epoch << ',' << fmt(s.lr) << ',' << fmt(s.train_mse) << '\n';
}

}  // namespace babynet

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "babynet/data.hpp"
#include "babynet/train.hpp"

using namespace babynet;
namespace op = babynet::ops;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// mse_loss
// ---------------------------------------------------------------------------

TEST_CASE("mse of identical tensors is zero") {
    Tensor p = Tensor::from_data({2, 1}, {3.0f, 4.0f});
    CHECK(mse_loss(nullptr, p, p).data()[0] == 0.0f);
}

TEST_CASE("mse arithmetic") {
    Tensor p = Tensor::from_data({2, 1}, {2.0f, 4.0f});
    Tensor t = Tensor::from_data({2, 1}, {3.0f, 3.0f});
    CHECK(mse_loss(nullptr, p, t).data()[0] == doctest::Approx(1.0f));
    CHECK_THROWS_AS(mse_loss(nullptr, p, Tensor::zeros({3, 1})), ShapeError);
}

// ---------------------------------------------------------------------------
// ADAM
// ---------------------------------------------------------------------------

TEST_CASE("first adam step moves each parameter by about lr") {
    Tensor w = Tensor::full({4}, 1.0f, true);
    for (auto& g : w.grad()) g = 1.0f;
    AdamConfig cfg;
    cfg.weight_decay = 0.0f;
    AdamOptimizer opt({{"w", w}}, cfg);
    opt.step(1e-4);
    for (float v : w.data()) CHECK(v == doctest::Approx(1.0f - 1e-4).epsilon(1e-3));
}

TEST_CASE("zero gradient and zero decay leave parameters unchanged") {
    Tensor w = Tensor::full({4}, 2.5f, true);
    w.zero_grad();
    AdamConfig cfg;
    cfg.weight_decay = 0.0f;
    AdamOptimizer opt({{"w", w}}, cfg);
    opt.step(0.1);
    for (float v : w.data()) CHECK(v == 2.5f);
}

TEST_CASE("adam converges on a scalar quadratic") {
    Tensor theta = Tensor::full({1}, 1.0f, true);
    AdamConfig cfg;
    cfg.weight_decay = 0.0f;
    AdamOptimizer opt({{"theta", theta}}, cfg);
    for (int step = 0; step < 200; ++step) {
        theta.zero_grad();
        theta.grad()[0] = 2.0f * theta.data()[0];  // d/dx x^2
        opt.step(0.1);
    }
    CHECK(std::abs(theta.data()[0]) < 0.01f);
}

TEST_CASE("adam rejects stepping before any backward") {
    Tensor w = Tensor::full({2}, 1.0f, true);
    AdamOptimizer opt({{"w", w}}, AdamConfig{});
    CHECK_THROWS_AS(opt.step(1e-3), ValueError);
}

TEST_CASE("weight decay pulls parameters toward zero") {
    Tensor w = Tensor::full({1}, 1.0f, true);
    w.zero_grad();
    AdamConfig cfg;
    cfg.weight_decay = 1e-4f;
    AdamOptimizer opt({{"w", w}}, cfg);
    opt.step(1e-2);
    CHECK(w.data()[0] < 1.0f);
}

// ---------------------------------------------------------------------------
// LR schedule
// ---------------------------------------------------------------------------

TEST_CASE("step decay schedule") {
    LrSchedule s;  // 1e-4, x0.1 every 160, 200 epochs
    CHECK(s.lr_at_epoch(0) == doctest::Approx(1e-4));
    CHECK(s.lr_at_epoch(159) == doctest::Approx(1e-4));
    CHECK(s.lr_at_epoch(160) == doctest::Approx(1e-5));
    CHECK(s.lr_at_epoch(199) == doctest::Approx(1e-5));
}

// ---------------------------------------------------------------------------
// Target scaler
// ---------------------------------------------------------------------------

TEST_CASE("target scaling round trips over the weight range") {
    TargetScaler s = TargetScaler::fit({2085.0, 3454.0, 4995.0});
    for (double w = 2085.0; w <= 4995.0; w += 97.0)
        CHECK(s.inverse(s.transform(w)) == doctest::Approx(w).epsilon(1e-4));
    TargetScaler one = TargetScaler::fit({3000.0});
    CHECK(one.stddev == 1.0);  // degenerate fold falls back to unit scale
    CHECK(one.transform(3000.0) == 0.0);
    CHECK_THROWS_AS(TargetScaler::fit({}), ValueError);
}

// ---------------------------------------------------------------------------
// train loop
// ---------------------------------------------------------------------------

namespace {

std::vector<PatientRecord> tiny_dataset(int patients, int frames, std::uint64_t seed) {
    SyntheticConfig cfg;
    cfg.num_patients = patients;
    cfg.videos_per_patient = 1;
    cfg.frames_per_video = frames;
    cfg.frame_height = 16;
    cfg.frame_width = 16;
    cfg.radius_min_px = 2.0;
    cfg.radius_max_px = 5.0;
    cfg.jitter_px = 1.0;
    cfg.seed = seed;
    return generate_synthetic_dataset(cfg);
}

ModelConfig desk_config() {
    ModelConfig cfg;
    cfg.variant = Variant::RtmTpe;
    cfg.in_frames = 8;
    cfg.in_height = 16;
    cfg.in_width = 16;
    cfg.width_multiplier = 0.125;
    return cfg;
}

TrainConfig fast_train(int epochs, std::uint64_t seed) {
    TrainConfig tc;
    tc.epochs = epochs;
    tc.schedule.initial_lr = 1e-3;
    tc.seed = seed;
    return tc;
}

}  // namespace

TEST_CASE("training produces one loss row per epoch and is seed deterministic") {
    auto data = tiny_dataset(2, 16, 3);
    Model m1 = build_model(desk_config(), 7);
    Model m2 = build_model(desk_config(), 7);
    TrainConfig tc = fast_train(3, 11);
    TrainResult r1 = train_model(m1, data, tc);
    TrainResult r2 = train_model(m2, data, tc);
    REQUIRE(r1.curve.size() == 3);
    for (std::size_t e = 0; e < r1.curve.size(); ++e) {
        CHECK(r1.curve[e].epoch == static_cast<int>(e));
        CHECK(r1.curve[e].train_mse == r2.curve[e].train_mse);  // bitwise
    }
    // and the trained parameters agree bitwise
    auto p1 = named_parameters(m1);
    auto p2 = named_parameters(m2);
    for (std::size_t i = 0; i < p1.size(); ++i)
        for (int64_t j = 0; j < p1[i].second.numel(); ++j)
            CHECK(p1[i].second.data()[static_cast<std::size_t>(j)] ==
                  p2[i].second.data()[static_cast<std::size_t>(j)]);
}

TEST_CASE("training rejects an empty fold and too-short videos") {
    Model m = build_model(desk_config(), 7);
    CHECK_THROWS_AS(train_model(m, {}, fast_train(1, 0)), ValueError);
    auto data = tiny_dataset(1, 4, 3);  // 4 frames < 8 per segment
    CHECK_THROWS_AS(train_model(m, data, fast_train(1, 0)), ValueError);
}

TEST_CASE("loss csv has a header and one row per epoch") {
    auto data = tiny_dataset(1, 16, 4);
    Model m = build_model(desk_config(), 8);
    TrainResult r = train_model(m, data, fast_train(4, 2));
    fs::path path = fs::temp_directory_path() / "babynet_loss_test.csv";
    write_loss_csv(path, r.curve);
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    CHECK(line == "epoch,lr,train_mse");
    int rows = 0;
    while (std::getline(in, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 4);
    fs::remove(path);
}

TEST_CASE("patient prediction is the mean of segment predictions") {
    auto data = tiny_dataset(1, 33, 5);  // 4 segments of 8, 1 frame dropped
    Model m = build_model(desk_config(), 9);
    TrainConfig tc = fast_train(1, 6);
    TrainResult r = train_model(m, data, tc);

    const PatientRecord& patient = data[0];
    double got = predict_patient(m, patient, r.scaler);

    // brute-force average over per-segment eval predictions
    auto segs = patient_segments(patient, 8, 16, 16);
    REQUIRE(segs.size() == 4);
    double acc = 0.0;
    for (const auto& s : segs) {
        Tensor x = Tensor::zeros({1, 1, 8, 16, 16});
        std::copy(s.frames.data().begin(), s.frames.data().end(), x.data().begin());
        acc += static_cast<double>(m.forward(nullptr, x, Mode::Eval).data()[0]);
    }
    double want = r.scaler.inverse(acc / 4.0);
    CHECK(got == doctest::Approx(want).epsilon(1e-5));

    PatientRecord empty_patient;
    empty_patient.patient_id = "none";
    empty_patient.birth_weight_g = 3000.0;
    empty_patient.videos.push_back(VideoTensor{Tensor::zeros({4, 1, 16, 16}), ""});
    CHECK_THROWS_AS(predict_patient(m, empty_patient, r.scaler), ValueError);
}

TEST_CASE("segment predictions pool across all of a patient's videos") {
    SyntheticConfig cfg;
    cfg.num_patients = 1;
    cfg.videos_per_patient = 3;
    cfg.frames_per_video = 24;  // 3 segments of 8 each
    cfg.frame_height = 16;
    cfg.frame_width = 16;
    cfg.radius_min_px = 2.0;
    cfg.radius_max_px = 5.0;
    cfg.seed = 12;
    auto data = generate_synthetic_dataset(cfg);
    auto segs = patient_segments(data[0], 8, 16, 16);
    CHECK(segs.size() == 9);
}

TEST_CASE("three 852-frame videos give 159 segments and predict by their mean") {
    SyntheticConfig scfg;
    scfg.num_patients = 1;
    scfg.videos_per_patient = 3;
    scfg.frames_per_video = 852;  // floor(852/16) = 53 segments per video
    scfg.frame_height = 16;
    scfg.frame_width = 16;
    scfg.radius_min_px = 2.0;
    scfg.radius_max_px = 5.0;
    scfg.seed = 21;
    auto data = generate_synthetic_dataset(scfg);

    ModelConfig mcfg;
    mcfg.variant = Variant::RtmTpe;
    mcfg.in_frames = 16;
    mcfg.in_height = 16;
    mcfg.in_width = 16;
    mcfg.width_multiplier = 0.125;
    Model m = build_model(mcfg, 22);
    Rng warm_rng(23);
    Tensor warm = Tensor::zeros({2, 1, 16, 16, 16});
    for (float& v : warm.data()) v = static_cast<float>(warm_rng.uniform(0.0, 1.0));
    m.forward(nullptr, warm, Mode::Train);  // populate running statistics

    auto segs = patient_segments(data[0], 16, 16, 16);
    REQUIRE(segs.size() == 159);

    TargetScaler scaler{3454.0, 612.0};
    double got = predict_patient(m, data[0], scaler);

    double acc = 0.0;
    for (const auto& s : segs) {
        Tensor x = Tensor::zeros({1, 1, 16, 16, 16});
        std::copy(s.frames.data().begin(), s.frames.data().end(), x.data().begin());
        acc += static_cast<double>(m.forward(nullptr, x, Mode::Eval).data()[0]);
    }
    double want = scaler.inverse(acc / 159.0);
    CHECK(got == doctest::Approx(want).epsilon(1e-5));
}

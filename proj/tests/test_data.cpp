#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "babynet/common.hpp"
#include "babynet/data.hpp"
#include "babynet/tensor_io.hpp"

using namespace babynet;
namespace fs = std::filesystem;

namespace {

bool bitwise_equal(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) return false;
    for (int64_t i = 0; i < a.numel(); ++i)
        if (a.data()[static_cast<std::size_t>(i)] != b.data()[static_cast<std::size_t>(i)])
            return false;
    return true;
}

Segment make_segment(Rng& rng, int len, int h, int w) {
    Segment s;
    s.frames = Tensor::zeros({len, 1, h, w});
    for (float& v : s.frames.data()) v = static_cast<float>(rng.uniform(0.0, 1.0));
    s.patient_id = "p";
    return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// resize_with_padding
// ---------------------------------------------------------------------------

TEST_CASE("resize to the same size is the identity") {
    Rng rng(50);
    Tensor f = Tensor::zeros({1, 64, 64});
    for (float& v : f.data()) v = static_cast<float>(rng.uniform(0.0, 1.0));
    Tensor out = resize_with_padding(f, 64, 64);
    CHECK(bitwise_equal(out, f));
}

TEST_CASE("720x960 to 64x64 scales to 48x64 content with 8-row pads") {
    Tensor f = Tensor::full({1, 720, 960}, 1.0f);
    Tensor out = resize_with_padding(f, 64, 64);
    CHECK(out.shape() == std::vector<int>{1, 64, 64});
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 64; ++x) {
            CHECK(out.at({0, y, x}) == 0.0f);          // top pad
            CHECK(out.at({0, 63 - y, x}) == 0.0f);     // bottom pad
        }
    for (int y = 8; y < 56; ++y)
        for (int x = 0; x < 64; ++x) CHECK(out.at({0, y, x}) == 1.0f);
}

TEST_CASE("resize of an all-zero frame is all zero") {
    Tensor f = Tensor::zeros({1, 37, 91});
    Tensor out = resize_with_padding(f, 64, 64);
    for (float v : out.data()) CHECK(v == 0.0f);
}

TEST_CASE("resize never crops: scaled content always fits the canvas") {
    Rng rng(51);
    for (int trial = 0; trial < 30; ++trial) {
        int h = 1 + rng.uniform_int(300);
        int w = 1 + rng.uniform_int(300);
        int th = 8 + rng.uniform_int(120);
        int tw = 8 + rng.uniform_int(120);
        Tensor f = Tensor::full({1, h, w}, 1.0f);
        Tensor out = resize_with_padding(f, th, tw);
        CHECK(out.shape() == std::vector<int>{1, th, tw});
        // an all-ones source maps onto a fully interior block, so the frame
        // border rows/cols beyond the pad stay zero without wraparound
        for (float v : out.data()) CHECK(v >= 0.0f);
        double scale = std::min(static_cast<double>(th) / h, static_cast<double>(tw) / w);
        CHECK(std::lround(h * scale) <= th);
        CHECK(std::lround(w * scale) <= tw);
    }
}

TEST_CASE("odd padding puts the extra pixel on the bottom/right") {
    Tensor f = Tensor::full({1, 30, 64}, 1.0f);
    Tensor out = resize_with_padding(f, 64, 64);  // content 30x64 -> pad 17 top, 17+... 64-30=34
    // pad_top = 17, pad_bottom = 17
    CHECK(out.at({0, 16, 32}) == 0.0f);
    CHECK(out.at({0, 17, 32}) > 0.0f);
    Tensor g = Tensor::full({1, 31, 64}, 1.0f);
    out = resize_with_padding(g, 64, 64);  // 64-31=33: pad_top 16, pad_bottom 17
    CHECK(out.at({0, 15, 32}) == 0.0f);
    CHECK(out.at({0, 16, 32}) > 0.0f);
    CHECK(out.at({0, 46, 32}) > 0.0f);
    CHECK(out.at({0, 47, 32}) == 0.0f);
}

// ---------------------------------------------------------------------------
// segment_video
// ---------------------------------------------------------------------------

TEST_CASE("segmentation counts and boundaries") {
    VideoTensor v;
    v.frames = Tensor::zeros({852, 1, 2, 2});
    CHECK(segment_video(v, "p", 0, 16).size() == 53);  // 4 trailing frames dropped
    v.frames = Tensor::zeros({16, 1, 2, 2});
    CHECK(segment_video(v, "p", 0, 16).size() == 1);
    v.frames = Tensor::zeros({15, 1, 2, 2});
    CHECK(segment_video(v, "p", 0, 16).empty());
}

TEST_CASE("segments partition the leading frames exactly once") {
    Rng rng(52);
    VideoTensor v;
    v.frames = Tensor::zeros({37, 1, 3, 3});
    for (float& x : v.frames.data()) x = static_cast<float>(rng.uniform(0.0, 1.0));
    auto segs = segment_video(v, "p7", 2, 8);
    REQUIRE(segs.size() == 4);
    for (std::size_t s = 0; s < segs.size(); ++s) {
        CHECK(segs[s].patient_id == "p7");
        CHECK(segs[s].video_index == 2);
        CHECK(segs[s].segment_index == static_cast<int>(s));
        CHECK(segs[s].frames.shape() == std::vector<int>{8, 1, 3, 3});
        for (int f = 0; f < 8; ++f)
            for (int y = 0; y < 3; ++y)
                for (int x = 0; x < 3; ++x)
                    CHECK(segs[s].frames.at({f, 0, y, x}) ==
                          v.frames.at({static_cast<int>(s) * 8 + f, 0, y, x}));
    }
}

// ---------------------------------------------------------------------------
// augment
// ---------------------------------------------------------------------------

TEST_CASE("disabled augmentation is a bitwise copy") {
    Rng rng(53);
    Segment s = make_segment(rng, 4, 8, 8);
    AugmentPolicy off;
    off.enabled = false;
    Segment out = augment(s, 123, off);
    CHECK(bitwise_equal(out.frames, s.frames));
}

TEST_CASE("augmentation is deterministic in the seed") {
    Rng rng(54);
    Segment s = make_segment(rng, 4, 12, 12);
    AugmentPolicy policy;
    Segment a = augment(s, 999, policy);
    Segment b = augment(s, 999, policy);
    CHECK(bitwise_equal(a.frames, b.frames));
    Segment c = augment(s, 1000, policy);
    CHECK(!bitwise_equal(a.frames, c.frames));
}

TEST_CASE("forced horizontal flip is an involution") {
    Rng rng(55);
    Segment s = make_segment(rng, 3, 9, 7);
    AugmentPolicy policy;
    policy.rotate = false;
    policy.brightness_contrast = false;
    policy.quantize = false;
    policy.blur = false;
    policy.flip_probability = 1.0f;
    Segment once = augment(s, 5, policy);
    CHECK(!bitwise_equal(once.frames, s.frames));
    Segment twice = augment(once, 5, policy);
    CHECK(bitwise_equal(twice.frames, s.frames));
}

TEST_CASE("augmentation preserves shape and the unit interval") {
    Rng rng(56);
    AugmentPolicy policy;
    for (int trial = 0; trial < 10; ++trial) {
        Segment s = make_segment(rng, 4, 16, 16);
        Segment out = augment(s, 1000 + static_cast<std::uint64_t>(trial), policy);
        CHECK(out.frames.shape() == s.frames.shape());
        for (float v : out.frames.data()) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
    }
}

TEST_CASE("rotation uses one angle for the whole segment") {
    // A segment with identical frames stays identical across frames after
    // augmentation; per-frame angles would break this.
    Rng rng(57);
    Tensor frame = Tensor::zeros({1, 1, 10, 10});
    for (float& v : frame.data()) v = static_cast<float>(rng.uniform(0.0, 1.0));
    Segment s;
    s.frames = Tensor::zeros({4, 1, 10, 10});
    for (int f = 0; f < 4; ++f)
        for (int y = 0; y < 10; ++y)
            for (int x = 0; x < 10; ++x) s.frames.at({f, 0, y, x}) = frame.at({0, 0, y, x});
    AugmentPolicy policy;  // everything on
    Segment out = augment(s, 77, policy);
    for (int f = 1; f < 4; ++f)
        for (int y = 0; y < 10; ++y)
            for (int x = 0; x < 10; ++x)
                CHECK(out.frames.at({f, 0, y, x}) == out.frames.at({0, 0, y, x}));
}

// ---------------------------------------------------------------------------
// synthetic dataset
// ---------------------------------------------------------------------------

TEST_CASE("radius map hits the documented midpoint exactly") {
    SyntheticConfig cfg;
    double mid = (cfg.weight_min_g + cfg.weight_max_g) / 2.0;
    CHECK(ellipse_radius_for_weight(cfg, mid) ==
          doctest::Approx((cfg.radius_min_px + cfg.radius_max_px) / 2.0).epsilon(1e-12));
    CHECK(ellipse_radius_for_weight(cfg, cfg.weight_min_g) == cfg.radius_min_px);
    CHECK(ellipse_radius_for_weight(cfg, cfg.weight_max_g) == cfg.radius_max_px);
}

TEST_CASE("synthetic generation is a pure function of the seed") {
    SyntheticConfig cfg;
    cfg.num_patients = 3;
    cfg.videos_per_patient = 2;
    cfg.frames_per_video = 6;
    cfg.frame_height = 32;
    cfg.frame_width = 32;
    cfg.seed = 77;
    auto a = generate_synthetic_dataset(cfg);
    auto b = generate_synthetic_dataset(cfg);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].patient_id == b[i].patient_id);
        CHECK(a[i].birth_weight_g == b[i].birth_weight_g);
        REQUIRE(a[i].videos.size() == b[i].videos.size());
        for (std::size_t v = 0; v < a[i].videos.size(); ++v)
            CHECK(bitwise_equal(a[i].videos[v].frames, b[i].videos[v].frames));
    }
    cfg.seed = 78;
    auto c = generate_synthetic_dataset(cfg);
    CHECK(a[0].birth_weight_g != c[0].birth_weight_g);
}

TEST_CASE("a least-squares fit recovers the planted area relation") {
    SyntheticConfig cfg;
    cfg.num_patients = 50;
    cfg.videos_per_patient = 1;
    cfg.frames_per_video = 24;
    cfg.frame_height = 64;
    cfg.frame_width = 64;
    cfg.noise_sigma = 0.01;
    cfg.seed = 99;
    auto records = generate_synthetic_dataset(cfg);

    std::vector<double> weights, areas;
    for (const auto& rec : records) {
        double area = 0.0;
        int64_t frames = 0;
        for (const auto& video : rec.videos) {
            int t = video.frames.dim(0);
            frames += t;
            for (float v : video.frames.data())
                if (v > 0.5f) area += 1.0;
        }
        weights.push_back(rec.birth_weight_g);
        areas.push_back(area / static_cast<double>(frames));
    }

    // Ordinary least squares of area on weight.
    double n = static_cast<double>(weights.size());
    double sw = 0, sa = 0, sww = 0, swa = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        sw += weights[i];
        sa += areas[i];
        sww += weights[i] * weights[i];
        swa += weights[i] * areas[i];
    }
    double slope = (n * swa - sw * sa) / (n * sww - sw * sw);
    double intercept = (sa - slope * sw) / n;
    double ss_res = 0, ss_tot = 0;
    double mean_a = sa / n;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        double fit = intercept + slope * weights[i];
        ss_res += (areas[i] - fit) * (areas[i] - fit);
        ss_tot += (areas[i] - mean_a) * (areas[i] - mean_a);
    }
    double r2 = 1.0 - ss_res / ss_tot;
    CHECK(r2 > 0.99);
    CHECK(slope > 0.0);
}

// ---------------------------------------------------------------------------
// dataset I/O
// ---------------------------------------------------------------------------

TEST_CASE("dataset round trip is bitwise exact") {
    SyntheticConfig cfg;
    cfg.num_patients = 2;
    cfg.videos_per_patient = 2;
    cfg.frames_per_video = 8;
    cfg.frame_height = 16;
    cfg.frame_width = 16;
    cfg.seed = 5;
    auto records = generate_synthetic_dataset(cfg);
    fs::path dir = fs::temp_directory_path() / "babynet_dataset_test";
    fs::remove_all(dir);
    write_dataset(dir, records);
    auto loaded = read_dataset(dir);
    REQUIRE(loaded.size() == records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        CHECK(loaded[i].patient_id == records[i].patient_id);
        CHECK(loaded[i].birth_weight_g == records[i].birth_weight_g);
        REQUIRE(loaded[i].videos.size() == records[i].videos.size());
        for (std::size_t v = 0; v < records[i].videos.size(); ++v)
            CHECK(bitwise_equal(loaded[i].videos[v].frames, records[i].videos[v].frames));
    }
    fs::remove_all(dir);
}

TEST_CASE("truncated video file is a parse error naming the file") {
    SyntheticConfig cfg;
    cfg.num_patients = 1;
    cfg.videos_per_patient = 1;
    cfg.frames_per_video = 4;
    cfg.frame_height = 8;
    cfg.frame_width = 8;
    auto records = generate_synthetic_dataset(cfg);
    fs::path dir = fs::temp_directory_path() / "babynet_dataset_trunc";
    fs::remove_all(dir);
    write_dataset(dir, records);
    fs::path video = dir / "synth_0001_v0.bnt";
    fs::resize_file(video, fs::file_size(video) - 5);
    try {
        read_dataset(dir);
        CHECK(false);
    } catch (const IoError& e) {
        CHECK(std::string(e.what()).find("synth_0001_v0.bnt") != std::string::npos);
    }
    fs::remove_all(dir);
}

TEST_CASE("non-positive weight in the manifest is a validation error") {
    SyntheticConfig cfg;
    cfg.num_patients = 1;
    cfg.videos_per_patient = 1;
    cfg.frames_per_video = 4;
    cfg.frame_height = 8;
    cfg.frame_width = 8;
    auto records = generate_synthetic_dataset(cfg);
    fs::path dir = fs::temp_directory_path() / "babynet_dataset_badw";
    fs::remove_all(dir);
    write_dataset(dir, records);
    {
        std::ofstream m(dir / "manifest.txt");
        m << "synth_0001,-10,synth_0001_v0.bnt\n";
    }
    CHECK_THROWS_AS(read_dataset(dir), ValueError);
    fs::remove_all(dir);
}

TEST_CASE("records with no videos or empty weight are rejected on write") {
    PatientRecord rec;
    rec.patient_id = "p1";
    rec.birth_weight_g = 3000.0;
    fs::path dir = fs::temp_directory_path() / "babynet_dataset_novid";
    CHECK_THROWS_AS(write_dataset(dir, {rec}), ValueError);
    fs::remove_all(dir);
}

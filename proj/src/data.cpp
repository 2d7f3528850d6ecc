#include "babynet/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "babynet/tensor_io.hpp"

namespace babynet {

// ---------------------------------------------------------------------------
// Resize
// ---------------------------------------------------------------------------

Tensor resize_with_padding(const Tensor& frame, int target_h, int target_w) {
    if (frame.rank() != 3 || frame.dim(0) != 1)
        throw ShapeError("resize_with_padding: expected frame [1,H,W], got " +
                         shape_str(frame.shape()));
    if (target_h < 1 || target_w < 1)
        throw ValueError("resize_with_padding: target size must be positive");
    int h = frame.dim(1), w = frame.dim(2);
    if (h == target_h && w == target_w) return frame.clone();

    double scale = std::min(static_cast<double>(target_h) / h, static_cast<double>(target_w) / w);
    int ch = std::min(target_h, std::max(1, static_cast<int>(std::lround(h * scale))));
    int cw = std::min(target_w, std::max(1, static_cast<int>(std::lround(w * scale))));
    int pad_top = (target_h - ch) / 2;
    int pad_left = (target_w - cw) / 2;

    Tensor out = Tensor::zeros({1, target_h, target_w});
    auto src = frame.data();
    auto dst = out.data();
    double ry = static_cast<double>(h) / ch;
    double rx = static_cast<double>(w) / cw;
    for (int oy = 0; oy < ch; ++oy) {
        double sy = (oy + 0.5) * ry - 0.5;
        sy = std::clamp(sy, 0.0, static_cast<double>(h - 1));
        int y0 = static_cast<int>(sy);
        int y1 = std::min(y0 + 1, h - 1);
        float fy = static_cast<float>(sy - y0);
        for (int ox = 0; ox < cw; ++ox) {
            double sx = (ox + 0.5) * rx - 0.5;
            sx = std::clamp(sx, 0.0, static_cast<double>(w - 1));
            int x0 = static_cast<int>(sx);
            int x1 = std::min(x0 + 1, w - 1);
            float fx = static_cast<float>(sx - x0);
            float v00 = src[static_cast<std::size_t>(y0) * w + x0];
            float v01 = src[static_cast<std::size_t>(y0) * w + x1];
            float v10 = src[static_cast<std::size_t>(y1) * w + x0];
            float v11 = src[static_cast<std::size_t>(y1) * w + x1];
            float top = v00 + (v01 - v00) * fx;
            float bot = v10 + (v11 - v10) * fx;
            dst[static_cast<std::size_t>(pad_top + oy) * target_w + pad_left + ox] =
                top + (bot - top) * fy;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Segmentation
// ---------------------------------------------------------------------------

std::vector<Segment> segment_video(const VideoTensor& video, const std::string& patient_id,
                                   int video_index, int seg_len) {
    if (seg_len < 1) throw ValueError("segment_video: seg_len must be >= 1");
    const Tensor& f = video.frames;
    if (f.rank() != 4 || f.dim(1) != 1)
        throw ShapeError("segment_video: expected frames [T,1,H,W], got " + shape_str(f.shape()));
    int t = f.dim(0), h = f.dim(2), w = f.dim(3);
    int count = t / seg_len;
    std::vector<Segment> segments;
    segments.reserve(static_cast<std::size_t>(count));
    int64_t frame_elems = static_cast<int64_t>(h) * w;
    auto src = f.data();
    for (int s = 0; s < count; ++s) {
        Tensor clip = Tensor::zeros({seg_len, 1, h, w});
        std::memcpy(clip.data().data(), src.data() + static_cast<int64_t>(s) * seg_len * frame_elems,
                    sizeof(float) * static_cast<std::size_t>(seg_len * frame_elems));
        segments.push_back(Segment{std::move(clip), patient_id, video_index, s});
    }
    return segments;
}

std::vector<Segment> patient_segments(const PatientRecord& patient, int seg_len, int target_h,
                                      int target_w) {
    std::vector<Segment> all;
    for (std::size_t v = 0; v < patient.videos.size(); ++v) {
        const Tensor& frames = patient.videos[v].frames;
        int t = frames.dim(0), h = frames.dim(2), w = frames.dim(3);
        VideoTensor resized;
        resized.plane = patient.videos[v].plane;
        if (h == target_h && w == target_w) {
            resized.frames = frames;
        } else {
            resized.frames = Tensor::zeros({t, 1, target_h, target_w});
            int64_t in_elems = static_cast<int64_t>(h) * w;
            int64_t out_elems = static_cast<int64_t>(target_h) * target_w;
            for (int i = 0; i < t; ++i) {
                Tensor frame = Tensor::zeros({1, h, w});
                std::memcpy(frame.data().data(), frames.data().data() + i * in_elems,
                            sizeof(float) * static_cast<std::size_t>(in_elems));
                Tensor r = resize_with_padding(frame, target_h, target_w);
                std::memcpy(resized.frames.data().data() + i * out_elems, r.data().data(),
                            sizeof(float) * static_cast<std::size_t>(out_elems));
            }
        }
        auto segs = segment_video(resized, patient.patient_id, static_cast<int>(v), seg_len);
        for (auto& s : segs) all.push_back(std::move(s));
    }
    return all;
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

namespace {

void rotate_frame(const float* src, float* dst, int h, int w, float theta_rad) {
    float c = std::cos(theta_rad);
    float s = std::sin(theta_rad);
    float cy = static_cast<float>(h - 1) / 2.0f;
    float cx = static_cast<float>(w - 1) / 2.0f;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            float dx = static_cast<float>(x) - cx;
            float dy = static_cast<float>(y) - cy;
            float sx = cx + c * dx + s * dy;
            float sy = cy - s * dx + c * dy;
            float v = 0.0f;  // zero fill outside the source
            if (sx >= 0.0f && sx <= static_cast<float>(w - 1) && sy >= 0.0f &&
                sy <= static_cast<float>(h - 1)) {
                int x0 = static_cast<int>(sx);
                int y0 = static_cast<int>(sy);
                int x1 = std::min(x0 + 1, w - 1);
                int y1 = std::min(y0 + 1, h - 1);
                float fx = sx - static_cast<float>(x0);
                float fy = sy - static_cast<float>(y0);
                float top = src[y0 * w + x0] + (src[y0 * w + x1] - src[y0 * w + x0]) * fx;
                float bot = src[y1 * w + x0] + (src[y1 * w + x1] - src[y1 * w + x0]) * fx;
                v = top + (bot - top) * fy;
            }
            dst[y * w + x] = v;
        }
}

void blur_frame(float* data, int h, int w, double sigma, std::vector<float>& tmp) {
    int hw = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<float> kernel(static_cast<std::size_t>(2 * hw + 1));
    double sum = 0.0;
    for (int i = -hw; i <= hw; ++i) {
        double v = std::exp(-(static_cast<double>(i) * i) / (2.0 * sigma * sigma));
        kernel[static_cast<std::size_t>(i + hw)] = static_cast<float>(v);
        sum += v;
    }
    for (float& v : kernel) v = static_cast<float>(v / sum);

    tmp.resize(static_cast<std::size_t>(h) * w);
    // Horizontal pass with edge replication, then vertical.
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            float acc = 0.0f;
            for (int i = -hw; i <= hw; ++i) {
                int xx = std::clamp(x + i, 0, w - 1);
                acc += kernel[static_cast<std::size_t>(i + hw)] * data[y * w + xx];
            }
            tmp[static_cast<std::size_t>(y) * w + x] = acc;
        }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            float acc = 0.0f;
            for (int i = -hw; i <= hw; ++i) {
                int yy = std::clamp(y + i, 0, h - 1);
                acc += kernel[static_cast<std::size_t>(i + hw)] * tmp[static_cast<std::size_t>(yy) * w + x];
            }
            data[y * w + x] = acc;
        }
}

}  // namespace

Segment augment(const Segment& segment, std::uint64_t seed, const AugmentPolicy& policy) {
    Segment out;
    out.patient_id = segment.patient_id;
    out.video_index = segment.video_index;
    out.segment_index = segment.segment_index;
    out.frames = segment.frames.clone();
    if (!policy.enabled) return out;

    // All parameters are drawn up front in a fixed order so the random
    // stream does not depend on which transforms are switched on.
    Rng rng(seed);
    float theta = static_cast<float>(
        rng.uniform(-policy.max_rotation_deg, policy.max_rotation_deg) * M_PI / 180.0);
    float brightness = static_cast<float>(rng.uniform(-0.2, 0.2));
    float contrast = static_cast<float>(rng.uniform(0.8, 1.2));
    bool flip = rng.uniform() < policy.flip_probability;
    int levels_choice[3] = {32, 64, 128};
    int levels = levels_choice[rng.uniform_int(3)];
    bool do_blur = rng.uniform() < policy.blur_probability;
    double blur_sigma = rng.uniform(0.0, 1.0);

    int t = out.frames.dim(0), h = out.frames.dim(2), w = out.frames.dim(3);
    int64_t frame_elems = static_cast<int64_t>(h) * w;
    auto data = out.frames.data();
    std::vector<float> scratch(static_cast<std::size_t>(frame_elems));
    std::vector<float> blur_tmp;

    for (int f = 0; f < t; ++f) {
        float* frame = data.data() + f * frame_elems;
        if (policy.rotate) {
            rotate_frame(frame, scratch.data(), h, w, theta);
            std::memcpy(frame, scratch.data(), sizeof(float) * static_cast<std::size_t>(frame_elems));
        }
        if (policy.brightness_contrast) {
            for (int64_t i = 0; i < frame_elems; ++i) {
                float v = contrast * (frame[i] - 0.5f) + 0.5f + brightness;
                frame[i] = std::clamp(v, 0.0f, 1.0f);
            }
        }
        if (policy.horizontal_flip && flip) {
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w / 2; ++x)
                    std::swap(frame[y * w + x], frame[y * w + (w - 1 - x)]);
        }
        if (policy.quantize) {
            float q = static_cast<float>(levels - 1);
            for (int64_t i = 0; i < frame_elems; ++i)
                frame[i] = std::round(frame[i] * q) / q;
        }
        if (policy.blur && do_blur && blur_sigma > 1e-3) {
            blur_frame(frame, h, w, blur_sigma, blur_tmp);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic dataset
// ---------------------------------------------------------------------------

double ellipse_radius_for_weight(const SyntheticConfig& config, double weight_g) {
    double t = (weight_g - config.weight_min_g) / (config.weight_max_g - config.weight_min_g);
    return config.radius_min_px + t * (config.radius_max_px - config.radius_min_px);
}

std::vector<PatientRecord> generate_synthetic_dataset(const SyntheticConfig& config) {
    if (config.num_patients < 1 || config.videos_per_patient < 1 || config.frames_per_video < 1)
        throw ValueError("synthetic config: counts must be positive");
    if (!(config.weight_max_g > config.weight_min_g))
        throw ValueError("synthetic config: weight range is empty");

    std::vector<PatientRecord> records;
    records.reserve(static_cast<std::size_t>(config.num_patients));
    const char* planes[3] = {"head", "abdomen", "femur"};

    for (int p = 0; p < config.num_patients; ++p) {
        PatientRecord rec;
        {
            std::ostringstream id;
            id << "synth_" << std::setw(4) << std::setfill('0') << (p + 1);
            rec.patient_id = id.str();
        }
        Rng wrng(mix_seed({config.seed, 0x77656967687473ULL, static_cast<std::uint64_t>(p)}));
        rec.birth_weight_g = wrng.uniform(config.weight_min_g, config.weight_max_g);
        double radius = ellipse_radius_for_weight(config, rec.birth_weight_g);
        double axis_a = radius * config.ellipse_aspect;
        double axis_b = radius / config.ellipse_aspect;

        int hh = config.frame_height, ww = config.frame_width;
        for (int v = 0; v < config.videos_per_patient; ++v) {
            Rng rng(mix_seed({config.seed, 0x766964656fULL, static_cast<std::uint64_t>(p),
                              static_cast<std::uint64_t>(v)}));
            VideoTensor video;
            video.plane = planes[v % 3];
            video.frames = Tensor::zeros({config.frames_per_video, 1, hh, ww});
            auto data = video.frames.data();
            for (int f = 0; f < config.frames_per_video; ++f) {
                double cx = ww / 2.0 + rng.uniform(-config.jitter_px, config.jitter_px);
                double cy = hh / 2.0 + rng.uniform(-config.jitter_px, config.jitter_px);
                float* frame = data.data() + static_cast<int64_t>(f) * hh * ww;
                for (int y = 0; y < hh; ++y)
                    for (int x = 0; x < ww; ++x) {
                        double dx = (x - cx) / axis_a;
                        double dy = (y - cy) / axis_b;
                        float base = (dx * dx + dy * dy <= 1.0) ? config.foreground
                                                                : config.background;
                        double noise =
                            config.noise_sigma > 0.0 ? rng.normal(0.0, config.noise_sigma) : 0.0;
                        frame[y * ww + x] =
                            std::clamp(base + static_cast<float>(noise), 0.0f, 1.0f);
                    }
            }
            rec.videos.push_back(std::move(video));
        }
        records.push_back(std::move(rec));
    }
    return records;
}

// ---------------------------------------------------------------------------
// Dataset directory I/O
// ---------------------------------------------------------------------------

namespace {

std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc{}) throw IoError("failed to format number");
    return std::string(buf, ptr);
}

void validate_record(const PatientRecord& rec, const std::string& context) {
    if (rec.patient_id.empty()) throw ValueError(context + ": empty patient id");
    if (!(rec.birth_weight_g > 0.0))
        throw ValueError(context + ": patient '" + rec.patient_id +
                         "' has non-positive birth weight");
    if (rec.videos.empty())
        throw ValueError(context + ": patient '" + rec.patient_id + "' has no videos");
    for (const auto& v : rec.videos) {
        if (v.frames.rank() != 4 || v.frames.dim(1) != 1)
            throw ShapeError(context + ": patient '" + rec.patient_id +
                             "' video frames must be [T,1,H,W], got " +
                             shape_str(v.frames.shape()));
        for (float x : v.frames.data())
            if (!(x >= 0.0f && x <= 1.0f))
                throw ValueError(context + ": patient '" + rec.patient_id +
                                 "' video intensities outside [0,1]");
    }
}

}  // namespace

void write_dataset(const std::filesystem::path& dir, const std::vector<PatientRecord>& records) {
    std::filesystem::create_directories(dir);
    std::ofstream manifest(dir / "manifest.txt");
    if (!manifest) throw IoError("cannot write dataset manifest in " + dir.string());
    for (const auto& rec : records) {
        validate_record(rec, "write_dataset");
        manifest << rec.patient_id << ',' << format_double(rec.birth_weight_g);
        for (std::size_t v = 0; v < rec.videos.size(); ++v) {
            std::string file = rec.patient_id + "_v" + std::to_string(v) + ".bnt";
            write_tensor_file(dir / file, rec.videos[v].frames);
            manifest << ',' << file;
        }
        manifest << '\n';
    }
}

std::vector<PatientRecord> read_dataset(const std::filesystem::path& dir) {
    std::ifstream manifest(dir / "manifest.txt");
    if (!manifest) throw IoError("cannot open dataset manifest: " + (dir / "manifest.txt").string());
    std::vector<PatientRecord> records;
    std::string line;
    int lineno = 0;
    while (std::getline(manifest, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, ',')) fields.push_back(field);
        if (fields.size() < 3)
            throw IoError("dataset manifest line " + std::to_string(lineno) +
                          ": expected patient_id,weight_g,video files");
        PatientRecord rec;
        rec.patient_id = fields[0];
        try {
            rec.birth_weight_g = std::stod(fields[1]);
        } catch (const std::exception&) {
            throw IoError("dataset manifest line " + std::to_string(lineno) +
                          ": cannot parse weight '" + fields[1] + "'");
        }
        for (std::size_t i = 2; i < fields.size(); ++i) {
            VideoTensor v;
            v.frames = read_tensor_file(dir / fields[i]);
            rec.videos.push_back(std::move(v));
        }
        validate_record(rec, "read_dataset");
        records.push_back(std::move(rec));
    }
    if (records.empty()) throw IoError("dataset manifest is empty: " + dir.string());
    return records;
}

}  // namespace babynet

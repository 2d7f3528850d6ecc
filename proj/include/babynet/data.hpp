#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "babynet/tensor.hpp"

namespace babynet {

// One video plane: frames [T,1,H,W], grayscale in [0,1].
struct VideoTensor {
    Tensor frames;
    std::string plane;
};

struct PatientRecord {
    std::string patient_id;
    double birth_weight_g = 0.0;
    std::vector<VideoTensor> videos;
};

// A fixed-length clip, the model's atomic input.
struct Segment {
    Tensor frames;  // [L,1,h,w]
    std::string patient_id;
    int video_index = 0;
    int segment_index = 0;
};

// Aspect-preserving bilinear resize of one frame [1,H,W] to [1,h,w], with
// symmetric zero padding (extra pixel on the bottom/right when odd).
Tensor resize_with_padding(const Tensor& frame, int target_h, int target_w);

// Non-overlapping fixed-length clips; a trailing remainder shorter than
// seg_len is dropped. T < seg_len yields an empty list.
std::vector<Segment> segment_video(const VideoTensor& video, const std::string& patient_id,
                                   int video_index, int seg_len);

// Resize every frame, then cut non-overlapping segments, for all videos of
// one patient.
std::vector<Segment> patient_segments(const PatientRecord& patient, int seg_len, int target_h,
                                      int target_w);

struct AugmentPolicy {
    bool enabled = true;
    bool rotate = true;
    bool brightness_contrast = true;
    bool horizontal_flip = true;
    bool quantize = true;
    bool blur = true;
    float max_rotation_deg = 25.0f;
    float flip_probability = 0.5f;
    float blur_probability = 0.5f;
};

// Training-time augmentation, applied in fixed order: rotation (one angle
// shared by all frames), brightness/contrast, horizontal flip, intensity
// quantization, Gaussian blur. Deterministic for a fixed seed; output stays
// in [0,1] and keeps the input shape.
Segment augment(const Segment& segment, std::uint64_t seed, const AugmentPolicy& policy);

struct SyntheticConfig {
    int num_patients = 15;
    int videos_per_patient = 3;
    int frames_per_video = 64;
    int frame_height = 64;
    int frame_width = 64;
    double noise_sigma = 0.01;
    std::uint64_t seed = 7;
    double weight_min_g = 2085.0;
    double weight_max_g = 4995.0;
    // Planted signal: mean ellipse radius is affine in birth weight.
    double radius_min_px = 8.0;
    double radius_max_px = 16.0;
    double ellipse_aspect = 1.25;
    double jitter_px = 2.0;
    float foreground = 0.9f;
    float background = 0.05f;
};

// The documented weight -> radius map of the synthetic generator.
double ellipse_radius_for_weight(const SyntheticConfig& config, double weight_g);

// Renders per-frame jittered filled ellipses with Gaussian pixel noise.
// Pure function of the config (bitwise reproducible for a fixed seed).
std::vector<PatientRecord> generate_synthetic_dataset(const SyntheticConfig& config);

// Dataset directory layout: manifest.txt with one line per patient
// (patient_id,weight_g,video files...) plus one tensor file per video.
void write_dataset(const std::filesystem::path& dir, const std::vector<PatientRecord>& records);
std::vector<PatientRecord> read_dataset(const std::filesystem::path& dir);

}  // namespace babynet

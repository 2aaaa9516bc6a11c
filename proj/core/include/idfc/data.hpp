// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "idfc/mask.hpp"
#include "idfc/tensor.hpp"

namespace idfc {

/// One data sample. Tensors are stored with a leading batch dimension of 1
/// so they feed the network ops directly.
struct Frame {
    Tensor rgb;             // 1x3xHxW, values in [0,1]
    Tensor depth_gt;        // 1x1xHxW, meters
    ObservationMask valid_gt; // which ground-truth pixels are real
    std::string id;

    int height() const { return rgb.dim(2); }
    int width() const { return rgb.dim(3); }
};

enum class SampleMode { Uniform, Band };

struct SamplerConfig {
    int64_t samples = 200;
    uint64_t seed = 0;
    SampleMode mode = SampleMode::Uniform;
    int band_top = 0;    // band mode: first row kept
    int band_bottom = 0; // band mode: one past the last row kept
};

/// Procedural scene: a ground plane with linearly varying depth plus 2-6
/// flat-colored rectangles/ellipses at distinct depths. Object albedos are
/// random while brightness is shaded by a fixed function of depth, so image
/// context constrains depth without fully determining it. Deterministic in
/// the seed; depth lies in [0.5, 10] meters; valid_gt is all ones.
Frame synth_scene(uint64_t seed, int height, int width, int difficulty = 1);

/// Draws exactly cfg.samples distinct pixels uniformly from the valid set
/// (seeded, without replacement). Returns the sparse depth image (zero at
/// unsampled pixels) and the matching mask. Requires mode == Uniform.
std::pair<Tensor, ObservationMask> uniform_sample(const Frame& frame, const SamplerConfig& cfg);

/// Zeroes valid_gt outside rows [band_top, band_bottom). Requires mode == Band.
Frame band_crop(const Frame& frame, const SamplerConfig& cfg);

struct AugmentParams {
    double scale = 1.0;           // in [1.0, 1.5]; depth is divided by this
    bool flip = false;            // horizontal
    double rotation_deg = 0.0;    // in [-5, 5], nearest-neighbor
    std::array<double, 3> channel_gain{1.0, 1.0, 1.0};
};

AugmentParams draw_augment_params(uint64_t seed);
/// Applies scale (center crop back to size), flip, rotation, then the RGB
/// channel gains. rgb, depth and valid undergo identical geometric
/// transforms; rotated-in border pixels are marked invalid.
Frame augment_with(const Frame& frame, const AugmentParams& params);
Frame augment(const Frame& frame, uint64_t seed);

struct ManifestEntry {
    std::string id;
    std::string rgb_path;   // relative to the dataset directory
    std::string depth_path;
    std::string split;      // train | val | test
};

inline const char* kManifestName = "manifest.tsv";

/// Parses <dir>/manifest.tsv (tab-separated id, rgb, depth, split) and
/// validates that every referenced file exists and the image dims agree.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& dir);

Frame load_frame(const std::filesystem::path& dir, const ManifestEntry& entry);
std::vector<Frame> load_split(const std::filesystem::path& dir, const std::string& split);

/// Writes n synthetic frames (PPM + PFM) plus the manifest, split
/// 80/10/10 into train/val/test by index.
void generate_dataset(const std::filesystem::path& dir, int n_frames, int height, int width,
                      uint64_t seed, int difficulty = 1);

} // namespace idfc

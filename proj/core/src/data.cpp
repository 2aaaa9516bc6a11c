// SPDX-License-Identifier: Apache-2.0
#include "idfc/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "idfc/image_io.hpp"
#include "idfc/rng.hpp"

namespace idfc {

namespace {

constexpr double kMinDepth = 0.5;
constexpr double kMaxDepth = 10.0;

// Brightness as a fixed function of depth. Monotone and gentle: with random
// per-object albedo the image constrains depth without fully determining it,
// so sparse observations genuinely add information.
double shade(double depth) { return 0.30 + 0.32 * (1.0 - depth / 10.5); }

struct SceneObject {
    bool ellipse = false;
    double cy = 0.0, cx = 0.0;  // center, pixels
    double ry = 0.0, rx = 0.0;  // half extents
    double depth = 0.0;
    std::array<double, 3> albedo{};

    bool contains(int i, int j) const {
        const double dy = (i - cy) / ry;
        const double dx = (j - cx) / rx;
        if (ellipse) return dy * dy + dx * dx <= 1.0;
        return std::abs(dy) <= 1.0 && std::abs(dx) <= 1.0;
    }
};

// Per-channel distance between two shaded colors.
double product_gap(const std::array<double, 3>& a, double da, const std::array<double, 3>& b,
                   double db) {
    double gap = 0.0;
    for (int c = 0; c < 3; ++c) {
        gap = std::max(gap, std::abs(a[static_cast<size_t>(c)] * shade(da) -
                                     b[static_cast<size_t>(c)] * shade(db)));
    }
    return gap;
}

// Distance from an object's shaded color to the ground's shaded color range.
double ground_gap(const std::array<double, 3>& albedo, double depth,
                  const std::array<double, 3>& ground_albedo, double near, double far) {
    double gap = 0.0;
    for (int c = 0; c < 3; ++c) {
        const double p = albedo[static_cast<size_t>(c)] * shade(depth);
        const double lo = ground_albedo[static_cast<size_t>(c)] * shade(far);
        const double hi = ground_albedo[static_cast<size_t>(c)] * shade(near);
        double d = 0.0;
        if (p < lo) d = lo - p;
        else if (p > hi) d = p - hi;
        gap = std::max(gap, d);
    }
    return gap;
}

} // namespace

Frame synth_scene(uint64_t seed, int height, int width, int difficulty) {
    if (height % 8 != 0 || width % 8 != 0) {
        raise(Error::Kind::InvalidArgument, "scene dims must be divisible by 8");
    }
    SplitMix64 rng(mix_seed(seed, "synth-scene"));

    const double near = rng.uniform(1.0, 2.2);
    const double far = rng.uniform(6.0, 9.5);
    std::array<double, 3> ground_albedo{};
    for (double& a : ground_albedo) a = rng.uniform(0.25, 0.9);

    auto ground_depth = [&](int row) {
        return near + (far - near) * static_cast<double>(height - 1 - row) /
                          static_cast<double>(height - 1);
    };

    int n_objects = 2;
    if (difficulty <= 0) n_objects = 2;
    else if (difficulty == 1) n_objects = 2 + static_cast<int>(rng.below(5)); // 2..6
    else n_objects = 6;

    // Objects keep a depth gap of at least 0.5 m from the ground under their
    // footprint and from each other, and a shaded-color gap from every
    // surface they may abut, so all object boundaries are simultaneously
    // depth and color discontinuities.
    std::vector<SceneObject> objects;
    for (int oi = 0; oi < n_objects; ++oi) {
        const int tries = objects.size() < 2 ? 200 : 60;
        for (int t = 0; t < tries; ++t) {
            SceneObject obj;
            obj.ellipse = rng.coin();
            obj.ry = rng.uniform(height / 10.0, height / 4.0);
            obj.rx = rng.uniform(width / 10.0, width / 4.0);
            obj.cy = rng.uniform(0.12 * height, 0.88 * height);
            obj.cx = rng.uniform(0.12 * width, 0.88 * width);
            const int bottom_row =
                std::min(height - 1, static_cast<int>(std::floor(obj.cy + obj.ry)));
            const double max_depth = ground_depth(bottom_row) - 0.5;
            if (max_depth < kMinDepth + 0.05) continue;
            obj.depth = rng.uniform(kMinDepth, max_depth);
            for (double& a : obj.albedo) a = rng.uniform(0.15, 0.95);

            bool ok = true;
            for (const auto& other : objects) {
                if (std::abs(other.depth - obj.depth) < 0.5) ok = false;
                if (product_gap(obj.albedo, obj.depth, other.albedo, other.depth) < 0.05) ok = false;
            }
            if (ground_gap(obj.albedo, obj.depth, ground_albedo, near, far) < 0.05) ok = false;
            if (ok) {
                objects.push_back(obj);
                break;
            }
        }
    }
    // Far to near, so nearer objects overwrite correctly.
    std::sort(objects.begin(), objects.end(),
              [](const SceneObject& a, const SceneObject& b) { return a.depth > b.depth; });

    Frame frame;
    frame.rgb = Tensor::zeros({1, 3, height, width});
    frame.depth_gt = Tensor::zeros({1, 1, height, width});
    frame.valid_gt = ObservationMask::ones(1, height, width);
    frame.id = "synth-" + std::to_string(seed);

    for (int i = 0; i < height; ++i) {
        for (int j = 0; j < width; ++j) {
            double d = ground_depth(i);
            const double* albedo = ground_albedo.data();
            for (const auto& obj : objects) {
                if (obj.contains(i, j)) {
                    d = obj.depth;
                    albedo = obj.albedo.data();
                }
            }
            d = std::clamp(d, kMinDepth, kMaxDepth);
            frame.depth_gt.at(0, 0, i, j) = d;
            const double s = shade(d);
            for (int c = 0; c < 3; ++c) {
                frame.rgb.at(0, c, i, j) = std::clamp(albedo[c] * s, 0.0, 1.0);
            }
        }
    }
    return frame;
}

std::pair<Tensor, ObservationMask> uniform_sample(const Frame& frame, const SamplerConfig& cfg) {
    if (cfg.mode != SampleMode::Uniform) {
        raise(Error::Kind::InvalidArgument, "uniform_sample requires mode == uniform");
    }
    const int h = frame.height(), w = frame.width();
    std::vector<int64_t> valid_indices;
    const auto vd = frame.valid_gt.data();
    for (int64_t i = 0; i < static_cast<int64_t>(h) * w; ++i) {
        if (vd[static_cast<size_t>(i)] != 0.0) valid_indices.push_back(i);
    }
    if (cfg.samples < 0 || cfg.samples > static_cast<int64_t>(valid_indices.size())) {
        raise(Error::Kind::InvalidArgument,
              "sample count " + std::to_string(cfg.samples) + " exceeds the " +
                  std::to_string(valid_indices.size()) + " valid pixels");
    }
    // Partial Fisher-Yates: the first cfg.samples entries are a uniform
    // draw without replacement.
    SplitMix64 rng(mix_seed(cfg.seed, "uniform-sample"));
    const int64_t n = static_cast<int64_t>(valid_indices.size());
    for (int64_t i = 0; i < cfg.samples; ++i) {
        const int64_t j = i + static_cast<int64_t>(rng.below(static_cast<uint64_t>(n - i)));
        std::swap(valid_indices[static_cast<size_t>(i)], valid_indices[static_cast<size_t>(j)]);
    }

    Tensor sparse = Tensor::zeros({1, 1, h, w});
    ObservationMask mask = ObservationMask::zeros(1, h, w);
    Tensor mask_t = mask.tensor();
    for (int64_t i = 0; i < cfg.samples; ++i) {
        const int64_t idx = valid_indices[static_cast<size_t>(i)];
        sparse.data()[static_cast<size_t>(idx)] = frame.depth_gt.data()[static_cast<size_t>(idx)];
        mask_t.data()[static_cast<size_t>(idx)] = 1.0;
    }
    return {std::move(sparse), std::move(mask)};
}

Frame band_crop(const Frame& frame, const SamplerConfig& cfg) {
    if (cfg.mode != SampleMode::Band) {
        raise(Error::Kind::InvalidArgument, "band_crop requires mode == band");
    }
    const int h = frame.height(), w = frame.width();
    if (cfg.band_top < 0 || cfg.band_bottom > h || cfg.band_top >= cfg.band_bottom) {
        raise(Error::Kind::InvalidArgument,
              "empty or out-of-range band [" + std::to_string(cfg.band_top) + "," +
                  std::to_string(cfg.band_bottom) + ") for " + std::to_string(h) + " rows");
    }
    Frame out;
    out.rgb = frame.rgb.clone();
    out.depth_gt = frame.depth_gt.clone();
    out.id = frame.id;
    Tensor v = frame.valid_gt.tensor().clone();
    for (int i = 0; i < h; ++i) {
        if (i >= cfg.band_top && i < cfg.band_bottom) continue;
        for (int j = 0; j < w; ++j) v.at(0, 0, i, j) = 0.0;
    }
    out.valid_gt = ObservationMask::from_tensor(std::move(v));
    return out;
}

AugmentParams draw_augment_params(uint64_t seed) {
    SplitMix64 rng(mix_seed(seed, "augment"));
    AugmentParams p;
    p.scale = rng.uniform(1.0, 1.5);
    p.flip = rng.coin();
    p.rotation_deg = rng.uniform(-5.0, 5.0);
    for (double& g : p.channel_gain) g = rng.uniform(0.8, 1.2);
    return p;
}

Frame augment_with(const Frame& frame, const AugmentParams& params) {
    const int h = frame.height(), w = frame.width();
    Tensor rgb = frame.rgb.clone();
    Tensor depth = frame.depth_gt.clone();
    Tensor valid = frame.valid_gt.tensor().clone();

    // Scale up and center-crop back; depth shrinks by the same factor.
    if (params.scale != 1.0) {
        if (params.scale < 1.0) {
            raise(Error::Kind::InvalidArgument, "augment scale must be >= 1");
        }
        const int hs = static_cast<int>(std::lround(h * params.scale));
        const int ws = static_cast<int>(std::lround(w * params.scale));
        const int oy = (hs - h) / 2, ox = (ws - w) / 2;
        Tensor rgb2 = Tensor::zeros({1, 3, h, w});
        Tensor depth2 = Tensor::zeros({1, 1, h, w});
        Tensor valid2 = Tensor::zeros({1, 1, h, w});
        for (int i = 0; i < h; ++i) {
            const int iy = std::clamp(
                static_cast<int>(std::floor((i + oy + 0.5) / params.scale)), 0, h - 1);
            for (int j = 0; j < w; ++j) {
                const int ix = std::clamp(
                    static_cast<int>(std::floor((j + ox + 0.5) / params.scale)), 0, w - 1);
                for (int c = 0; c < 3; ++c) rgb2.at(0, c, i, j) = rgb.at(0, c, iy, ix);
                depth2.at(0, 0, i, j) = depth.at(0, 0, iy, ix) / params.scale;
                valid2.at(0, 0, i, j) = valid.at(0, 0, iy, ix);
            }
        }
        rgb = std::move(rgb2);
        depth = std::move(depth2);
        valid = std::move(valid2);
    }

    if (params.flip) {
        Tensor rgb2 = Tensor::zeros({1, 3, h, w});
        Tensor depth2 = Tensor::zeros({1, 1, h, w});
        Tensor valid2 = Tensor::zeros({1, 1, h, w});
        for (int i = 0; i < h; ++i) {
            for (int j = 0; j < w; ++j) {
                for (int c = 0; c < 3; ++c) rgb2.at(0, c, i, j) = rgb.at(0, c, i, w - 1 - j);
                depth2.at(0, 0, i, j) = depth.at(0, 0, i, w - 1 - j);
                valid2.at(0, 0, i, j) = valid.at(0, 0, i, w - 1 - j);
            }
        }
        rgb = std::move(rgb2);
        depth = std::move(depth2);
        valid = std::move(valid2);
    }

    // Nearest-neighbor rotation; depth is never interpolated across object
    // edges, and pixels rotated in from outside the frame become invalid.
    if (params.rotation_deg != 0.0) {
        const double rad = params.rotation_deg * std::numbers::pi / 180.0;
        const double cs = std::cos(rad), sn = std::sin(rad);
        const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
        Tensor rgb2 = Tensor::zeros({1, 3, h, w});
        Tensor depth2 = Tensor::zeros({1, 1, h, w});
        Tensor valid2 = Tensor::zeros({1, 1, h, w});
        for (int i = 0; i < h; ++i) {
            for (int j = 0; j < w; ++j) {
                const double dy = i - cy, dx = j - cx;
                const int iy = static_cast<int>(std::lround(cy + cs * dy - sn * dx));
                const int ix = static_cast<int>(std::lround(cx + sn * dy + cs * dx));
                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue; // stays invalid
                for (int c = 0; c < 3; ++c) rgb2.at(0, c, i, j) = rgb.at(0, c, iy, ix);
                depth2.at(0, 0, i, j) = depth.at(0, 0, iy, ix);
                valid2.at(0, 0, i, j) = valid.at(0, 0, iy, ix);
            }
        }
        rgb = std::move(rgb2);
        depth = std::move(depth2);
        valid = std::move(valid2);
    }

    for (int c = 0; c < 3; ++c) {
        const double g = params.channel_gain[static_cast<size_t>(c)];
        if (g == 1.0) continue;
        for (int i = 0; i < h; ++i) {
            for (int j = 0; j < w; ++j) {
                rgb.at(0, c, i, j) = std::clamp(rgb.at(0, c, i, j) * g, 0.0, 1.0);
            }
        }
    }

    Frame out;
    out.rgb = std::move(rgb);
    out.depth_gt = std::move(depth);
    out.valid_gt = ObservationMask::from_tensor(std::move(valid));
    out.id = frame.id;
    return out;
}

Frame augment(const Frame& frame, uint64_t seed) {
    return augment_with(frame, draw_augment_params(seed));
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& dir) {
    const auto path = dir / kManifestName;
    std::ifstream in(path);
    if (!in) raise(Error::Kind::Io, "cannot open manifest " + path.string());
    std::vector<ManifestEntry> entries;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        ManifestEntry e;
        std::istringstream ss(line);
        std::string extra;
        if (!std::getline(ss, e.id, '\t') || !std::getline(ss, e.rgb_path, '\t') ||
            !std::getline(ss, e.depth_path, '\t') || !std::getline(ss, e.split, '\t') ||
            std::getline(ss, extra, '\t') || e.id.empty() || e.rgb_path.empty() ||
            e.depth_path.empty()) {
            raise(Error::Kind::Parse,
                  "manifest line " + std::to_string(line_no) + ": expected 4 tab-separated fields");
        }
        if (e.split != "train" && e.split != "val" && e.split != "test") {
            raise(Error::Kind::Parse, "manifest line " + std::to_string(line_no) +
                                          ": unknown split '" + e.split + "'");
        }
        for (const auto& prev : entries) {
            if (prev.id == e.id) {
                raise(Error::Kind::Parse, "manifest line " + std::to_string(line_no) +
                                              ": duplicate id '" + e.id + "'");
            }
        }
        if (!std::filesystem::exists(dir / e.rgb_path)) {
            raise(Error::Kind::Io, "manifest line " + std::to_string(line_no) + ": missing file " +
                                       (dir / e.rgb_path).string());
        }
        if (!std::filesystem::exists(dir / e.depth_path)) {
            raise(Error::Kind::Io, "manifest line " + std::to_string(line_no) + ": missing file " +
                                       (dir / e.depth_path).string());
        }
        const auto [rh, rw] = ppm_dims(dir / e.rgb_path);
        const auto [dh, dw] = pfm_dims(dir / e.depth_path);
        if (rh != dh || rw != dw) {
            raise(Error::Kind::ShapeMismatch,
                  "manifest id '" + e.id + "': rgb is " + std::to_string(rh) + "x" +
                      std::to_string(rw) + " but depth is " + std::to_string(dh) + "x" +
                      std::to_string(dw));
        }
        entries.push_back(std::move(e));
    }
    return entries;
}

Frame load_frame(const std::filesystem::path& dir, const ManifestEntry& entry) {
    Frame f;
    f.rgb = read_ppm(dir / entry.rgb_path);
    f.depth_gt = read_pfm(dir / entry.depth_path);
    if (f.rgb.dim(2) != f.depth_gt.dim(2) || f.rgb.dim(3) != f.depth_gt.dim(3)) {
        raise(Error::Kind::ShapeMismatch, "frame '" + entry.id + "': rgb/depth dims disagree");
    }
    f.valid_gt = ObservationMask::ones(1, f.rgb.dim(2), f.rgb.dim(3));
    f.id = entry.id;
    return f;
}

std::vector<Frame> load_split(const std::filesystem::path& dir, const std::string& split) {
    std::vector<Frame> frames;
    for (const auto& e : read_manifest(dir)) {
        if (e.split == split) frames.push_back(load_frame(dir, e));
    }
    return frames;
}

void generate_dataset(const std::filesystem::path& dir, int n_frames, int height, int width,
                      uint64_t seed, int difficulty) {
    if (n_frames <= 0) raise(Error::Kind::InvalidArgument, "need a positive frame count");
    std::filesystem::create_directories(dir);
    const int n_train = n_frames * 8 / 10;
    const int n_val = (n_frames - n_train) / 2;
    std::ofstream manifest(dir / kManifestName);
    if (!manifest) raise(Error::Kind::Io, "cannot write manifest in " + dir.string());
    for (int i = 0; i < n_frames; ++i) {
        Frame f = synth_scene(mix_seed(seed, "dataset-frame", static_cast<uint64_t>(i)), height,
                              width, difficulty);
        char base[32];
        std::snprintf(base, sizeof(base), "frame_%04d", i);
        const std::string rgb_name = std::string(base) + ".ppm";
        const std::string depth_name = std::string(base) + ".pfm";
        write_ppm(dir / rgb_name, f.rgb);
        write_pfm(dir / depth_name, f.depth_gt);
        const char* split = i < n_train ? "train" : (i < n_train + n_val ? "val" : "test");
        manifest << base << '\t' << rgb_name << '\t' << depth_name << '\t' << split << '\n';
    }
}

} // namespace idfc

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "idfc/data.hpp"
#include "idfc/mask.hpp"
#include "idfc/tensor.hpp"

namespace idfc {

/// sqrt(mean squared error) over valid pixels, in meters.
double rmse(const Tensor& pred, const Tensor& gt, const ObservationMask& valid);

/// Mean absolute relative error over valid pixels; every valid ground-truth
/// pixel must be positive.
double rel(const Tensor& pred, const Tensor& gt, const ObservationMask& valid);

/// Percentage of valid pixels with max(pred/gt, gt/pred) <= 1.25^j
/// (inclusive). Pixels with a nonpositive prediction count as failures.
double delta(const Tensor& pred, const Tensor& gt, const ObservationMask& valid, int j);

struct MetricsReport {
    double rmse = 0.0;
    double rel = 0.0;
    double delta1 = 0.0, delta2 = 0.0, delta3 = 0.0; // percentages
    int64_t pixel_count = 0;
    int64_t frame_count = 0;
};

struct FrameMetrics {
    std::string frame_id;
    double rmse = 0.0, rel = 0.0, d1 = 0.0, d2 = 0.0, d3 = 0.0;
    int64_t pixels = 0;
};

struct EvalResult {
    MetricsReport pooled; // pixel-pooled across all frames
    std::vector<FrameMetrics> frames;
};

using ForwardFn =
    std::function<Tensor(const Frame&, const Tensor& sparse_depth, const ObservationMask& mask)>;

/// Runs the forward function per frame with a fixed per-frame-id sampling
/// seed (derived from cfg.seed and the id), applies band cropping when
/// cfg.mode == Band, and accumulates pixel-pooled metrics plus per-frame
/// rows. Deterministic across runs.
EvalResult evaluate(const std::vector<Frame>& frames, const SamplerConfig& cfg,
                    const ForwardFn& forward_fn);

/// Newline-delimited records: frame_id, rmse, rel, d1, d2, d3, n_pixels;
/// the final line carries the pooled totals.
void write_report(const std::filesystem::path& path, const EvalResult& result);
std::string format_report_table(const EvalResult& result);

} // namespace idfc

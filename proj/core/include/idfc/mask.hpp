// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

#include "idfc/tensor.hpp"

namespace idfc {

/// Binary per-pixel validity map, shape Bx1xHxW, stored as doubles that are
/// exactly 0.0 or 1.0. Masks never carry gradients: they are observation
/// indicators, not learned quantities.
class ObservationMask {
public:
    ObservationMask() = default;

    /// Validates binarity and shape (rank 4, one channel).
    static ObservationMask from_tensor(Tensor t);
    static ObservationMask zeros(int batch, int height, int width);
    static ObservationMask ones(int batch, int height, int width);

    const Tensor& tensor() const { return t_; }
    std::span<const double> data() const { return t_.data(); }
    bool defined() const { return t_.defined(); }

    int batch() const { return t_.dim(0); }
    int height() const { return t_.dim(2); }
    int width() const { return t_.dim(3); }

    double at(int b, int h, int w) const { return t_.at(b, 0, h, w); }
    void set(int b, int h, int w, bool on);

    int64_t popcount() const;
    bool empty() const { return popcount() == 0; }
    bool all_set() const { return popcount() == t_.numel(); }

private:
    explicit ObservationMask(Tensor t) : t_(std::move(t)) {}
    Tensor t_;
};

/// 1 where any input pixel in the k x k window is 1. Output stays binary.
ObservationMask mask_maxpool(const ObservationMask& mask, int k, int stride, int pad);

} // namespace idfc

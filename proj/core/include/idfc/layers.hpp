// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <utility>

#include "idfc/mask.hpp"
#include "idfc/tensor.hpp"

namespace idfc {

struct Conv2dParams {
    Tensor weight; // O x C x K x K
    Tensor bias;   // O
};

struct SparseConvParams {
    Tensor weight; // O x C x K x K
    Tensor bias;   // O
    double epsilon = 1e-8;
};

/// Sparsity-invariant convolution: each output is the mask-weighted window
/// sum divided by the count of observed pixels in the window (plus epsilon),
/// plus bias. The mask is carried forward by max-pooling over the same
/// window. Output values never depend on feature values at mask == 0 pixels;
/// an all-empty window yields exactly bias. Gradients flow to features and
/// weights, never to the mask.
std::pair<Tensor, ObservationMask> sparse_conv(const Tensor& features,
                                               const ObservationMask& mask,
                                               const SparseConvParams& params,
                                               int stride, int pad);

/// Average of observed feature values over non-overlapping window x window
/// tiles (window == 0 means one global tile), divided by max(count, 1) and
/// broadcast back to every pixel of the tile. Within a tile the observed
/// values are summed in numerically sorted order, so the result is bitwise
/// invariant to which pixel carries which value. Gradient flows to features
/// only.
Tensor masked_avg_pool(const Tensor& features, const ObservationMask& mask, int window);

struct ResidualBlockParams {
    Conv2dParams conv1; // 3x3, pad 1
    Conv2dParams conv2; // 3x3, pad 1
};

/// relu(x + conv2(relu(conv1(x)))); channel count is preserved.
Tensor residual_block(const Tensor& x, const ResidualBlockParams& params);

struct ResidualDownBlockParams {
    Conv2dParams conv1;    // 3x3, stride 2
    Conv2dParams conv2;    // 3x3, stride 1
    Conv2dParams shortcut; // 1x1, stride 2
};

/// Strided residual stage: relu(conv2(relu(conv1(x))) + shortcut(x)).
/// Halves the spatial dims, may change the channel count.
Tensor residual_down_block(const Tensor& x, const ResidualDownBlockParams& params);

struct UpProjectionParams {
    Conv2dParams conv5_main; // 5x5, C -> C/2
    Conv2dParams conv3_main; // 3x3, C/2 -> C/2
    Conv2dParams conv5_proj; // 5x5, C -> C/2
};

/// Residual up-projection: nearest-upsample 2x, then
/// relu(conv3(relu(conv5_main(u))) + conv5_proj(u)). Doubles the spatial
/// dims and halves the channels; C must be even.
Tensor residual_up_projection(const Tensor& x, const UpProjectionParams& params);

} // namespace idfc

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "idfc/layers.hpp"
#include "idfc/mask.hpp"
#include "idfc/tensor.hpp"

namespace idfc {

enum class ModelVariant { Inductive, Vanilla, ContextOnly };

std::string to_string(ModelVariant v);
ModelVariant variant_from_string(const std::string& s);

struct ModelConfig {
    int stem_channels = 16;
    std::array<int, 3> encoder_channels{16, 32, 64};
    int context_channels = 16; // per-pixel context feature width
    int depth_channels = 16;   // per-pixel depth feature width
    int fusion_channels = 32;  // demonstration feature width
    int depth_encoder_layers = 3; // 3 or 5 sparse conv layers
    int aggregation_window = 0;   // 0 = one global window
    ModelVariant variant = ModelVariant::Inductive;

    /// Small widths for gradient checking; same structure as the default.
    static ModelConfig tiny();

    void validate() const;
    int prediction_input_channels() const;
};

struct ContextEncoderParams {
    Conv2dParams stem;
    ResidualDownBlockParams enc1, enc2, enc3;
    ResidualBlockParams bottleneck;
    UpProjectionParams dec1, dec2, dec3;
    Conv2dParams head;
    Conv2dParams pretrain_head; // undefined for the context-only variant
};

struct DepthEncoderParams {
    std::vector<SparseConvParams> layers;
    Conv2dParams pretrain_head;
};

struct DemonstrationParams {
    Conv2dParams fuse; // 1x1, (C_x + C_d) -> C_r
    std::array<ResidualBlockParams, 4> blocks;
};

struct PredictionParams {
    std::vector<ResidualBlockParams> blocks; // 5 blocks
    Conv2dParams head;                       // 1x1 -> 1
};

/// Full parameter set, partitioned into the four trainable groups. The
/// structured params share storage with the groups; updating one updates
/// the other.
struct Model {
    ModelConfig config;
    ParamGroup context_encoder;
    ParamGroup depth_encoder;
    ParamGroup demonstration;
    ParamGroup prediction;

    ContextEncoderParams ctx;
    DepthEncoderParams depth;
    DemonstrationParams demo;
    PredictionParams pred;

    static Model init(const ModelConfig& config, uint64_t seed);

    int64_t param_count() const;
    /// All groups merged, insertion order preserved (ctx, depth, demo, pred).
    ParamGroup all_params() const;
    /// The parameters updated during the joint phase (everything except the
    /// pretraining heads, which are absent from the joint graph).
    ParamGroup joint_params() const;
};

// ---- Forward passes ----

/// RGB Bx3xHxW -> context features BxC_xxHxW. H and W divisible by 8.
Tensor context_encoder_forward(const Model& m, const Tensor& rgb);

/// Sparse depth Bx1xHxW plus its mask -> (depth features BxC_dxHxW,
/// propagated mask). Errors when depth is nonzero at a masked-out pixel.
std::pair<Tensor, ObservationMask> depth_encoder_forward(const Model& m,
                                                         const Tensor& sparse_depth,
                                                         const ObservationMask& mask);

/// Per-pixel fusion of context and depth features into demonstration
/// features BxC_rxHxW. Computed densely; values at unobserved pixels are
/// excluded downstream by the masked aggregation.
Tensor demonstrate(const Model& m, const Tensor& context_features, const Tensor& depth_features);

/// Masked average of demonstration features over aggregation windows.
Tensor aggregate(const Tensor& demonstrations, const ObservationMask& mask, int window);

/// Context features plus aggregated demonstrations -> nonnegative depth map.
Tensor predict(const Model& m, const Tensor& context_features, const Tensor& aggregated);

/// The full inductive pipeline: context encoder, depth encoder,
/// demonstrate, aggregate, predict.
Tensor forward(const Model& m, const Tensor& rgb, const Tensor& sparse_depth,
               const ObservationMask& mask);

/// Ablation baseline: identical encoders and fusion stack, but the masked
/// aggregation is dropped and the dense demonstration features feed the
/// prediction network directly.
Tensor forward_vanilla(const Model& m, const Tensor& rgb, const Tensor& sparse_depth,
                       const ObservationMask& mask);

/// Monocular baseline: context encoder and prediction head only.
Tensor forward_context_only(const Model& m, const Tensor& rgb);

/// Dispatch on config.variant; context-only ignores depth inputs.
Tensor forward_any(const Model& m, const Tensor& rgb, const Tensor& sparse_depth,
                   const ObservationMask& mask);

// Pretraining heads (1x1 conv + relu on top of one encoder).
Tensor context_pretrain_forward(const Model& m, const Tensor& rgb);
Tensor depth_pretrain_forward(const Model& m, const Tensor& sparse_depth,
                              const ObservationMask& mask);

/// Receptive-field radius of the context encoder in input pixels, computed
/// from the fixed layer structure.
int context_receptive_field_radius();

/// Receptive-field radius of the demonstration stack with respect to its
/// feature inputs.
int demonstration_receptive_field_radius();

} // namespace idfc

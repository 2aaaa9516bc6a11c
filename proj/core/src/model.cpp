// SPDX-License-Identifier: Apache-2.0
#include "idfc/model.hpp"

#include <cmath>

#include "idfc/rng.hpp"

namespace idfc {

std::string to_string(ModelVariant v) {
    switch (v) {
        case ModelVariant::Inductive: return "inductive";
        case ModelVariant::Vanilla: return "vanilla";
        case ModelVariant::ContextOnly: return "context_only";
    }
    return "inductive";
}

ModelVariant variant_from_string(const std::string& s) {
    if (s == "inductive") return ModelVariant::Inductive;
    if (s == "vanilla") return ModelVariant::Vanilla;
    if (s == "context_only") return ModelVariant::ContextOnly;
    raise(Error::Kind::Parse, "unknown model variant '" + s + "'");
}

ModelConfig ModelConfig::tiny() {
    ModelConfig c;
    c.stem_channels = 4;
    c.encoder_channels = {4, 4, 8};
    c.context_channels = 4;
    c.depth_channels = 4;
    c.fusion_channels = 6;
    return c;
}

void ModelConfig::validate() const {
    if (depth_encoder_layers != 3 && depth_encoder_layers != 5) {
        raise(Error::Kind::InvalidArgument,
              "depth_encoder_layers must be 3 or 5, got " + std::to_string(depth_encoder_layers));
    }
    if (aggregation_window < 0) {
        raise(Error::Kind::InvalidArgument, "aggregation_window must be >= 0");
    }
    const int e3 = encoder_channels[2];
    if (e3 % 2 != 0) {
        raise(Error::Kind::InvalidArgument, "third encoder stage width must be even");
    }
    const int c1 = e3 / 2 + encoder_channels[1];
    if (c1 % 2 != 0) {
        raise(Error::Kind::InvalidArgument, "decoder stage 2 input width must be even");
    }
    const int c2 = c1 / 2 + encoder_channels[0];
    if (c2 % 2 != 0) {
        raise(Error::Kind::InvalidArgument, "decoder stage 3 input width must be even");
    }
    for (int v : {stem_channels, encoder_channels[0], encoder_channels[1], encoder_channels[2],
                  context_channels, depth_channels, fusion_channels}) {
        if (v <= 0) raise(Error::Kind::InvalidArgument, "channel widths must be positive");
    }
}

int ModelConfig::prediction_input_channels() const {
    return variant == ModelVariant::ContextOnly ? context_channels
                                                : context_channels + fusion_channels;
}

namespace {

constexpr double kHeadBiasInit = 3.0; // start predictions near a typical scene depth

Tensor make_weight(ParamGroup& group, const std::string& name, int out_c, int in_c, int k,
                   SplitMix64& rng) {
    const double stddev = std::sqrt(2.0 / (static_cast<double>(in_c) * k * k));
    std::vector<double> data(static_cast<size_t>(out_c) * in_c * k * k);
    for (double& v : data) v = stddev * rng.normal();
    Tensor t = Tensor::from_data({out_c, in_c, k, k}, std::move(data));
    group.add(name, t);
    return group.at(name);
}

Tensor make_bias(ParamGroup& group, const std::string& name, int out_c, double value = 0.0) {
    Tensor t = Tensor::full({out_c}, value);
    group.add(name, t);
    return group.at(name);
}

Tensor make_zero_weight(ParamGroup& group, const std::string& name, int out_c, int in_c, int k) {
    Tensor t = Tensor::zeros({out_c, in_c, k, k});
    group.add(name, t);
    return group.at(name);
}

Conv2dParams make_conv(ParamGroup& g, const std::string& prefix, int out_c, int in_c, int k,
                       SplitMix64& rng, double bias_init = 0.0) {
    Conv2dParams p;
    p.weight = make_weight(g, prefix + ".w", out_c, in_c, k, rng);
    p.bias = make_bias(g, prefix + ".b", out_c, bias_init);
    return p;
}

// Residual branches close with a zero-initialized conv so every block starts
// as an identity; activation magnitudes then stay bounded through the deep
// fusion stacks and the ReLU heads start alive.
Conv2dParams make_closing_conv(ParamGroup& g, const std::string& prefix, int out_c, int in_c,
                               int k) {
    Conv2dParams p;
    p.weight = make_zero_weight(g, prefix + ".w", out_c, in_c, k);
    p.bias = make_bias(g, prefix + ".b", out_c);
    return p;
}

ResidualBlockParams make_residual_block(ParamGroup& g, const std::string& prefix, int c,
                                        SplitMix64& rng) {
    ResidualBlockParams p;
    p.conv1 = make_conv(g, prefix + ".conv1", c, c, 3, rng);
    p.conv2 = make_closing_conv(g, prefix + ".conv2", c, c, 3);
    return p;
}

ResidualDownBlockParams make_down_block(ParamGroup& g, const std::string& prefix, int out_c,
                                        int in_c, SplitMix64& rng) {
    ResidualDownBlockParams p;
    p.conv1 = make_conv(g, prefix + ".conv1", out_c, in_c, 3, rng);
    p.conv2 = make_closing_conv(g, prefix + ".conv2", out_c, out_c, 3);
    p.shortcut = make_conv(g, prefix + ".short", out_c, in_c, 1, rng);
    return p;
}

UpProjectionParams make_up_projection(ParamGroup& g, const std::string& prefix, int in_c,
                                      SplitMix64& rng) {
    UpProjectionParams p;
    p.conv5_main = make_conv(g, prefix + ".main5", in_c / 2, in_c, 5, rng);
    p.conv3_main = make_closing_conv(g, prefix + ".main3", in_c / 2, in_c / 2, 3);
    p.conv5_proj = make_conv(g, prefix + ".proj5", in_c / 2, in_c, 5, rng);
    return p;
}

constexpr int kScnKernels[5] = {11, 7, 5, 3, 3};

} // namespace

Model Model::init(const ModelConfig& config, uint64_t seed) {
    config.validate();
    Model m;
    m.config = config;
    SplitMix64 rng(mix_seed(seed, "model-init"));
    const bool fused = config.variant != ModelVariant::ContextOnly;

    // Context feature extraction network.
    {
        ParamGroup& g = m.context_encoder;
        const auto& e = config.encoder_channels;
        m.ctx.stem = make_conv(g, "ctx.stem", config.stem_channels, 3, 3, rng);
        m.ctx.enc1 = make_down_block(g, "ctx.enc1", e[0], config.stem_channels, rng);
        m.ctx.enc2 = make_down_block(g, "ctx.enc2", e[1], e[0], rng);
        m.ctx.enc3 = make_down_block(g, "ctx.enc3", e[2], e[1], rng);
        m.ctx.bottleneck = make_residual_block(g, "ctx.bottleneck", e[2], rng);
        const int c1 = e[2] / 2 + e[1];
        const int c2 = c1 / 2 + e[0];
        const int c3 = c2 / 2 + config.stem_channels;
        m.ctx.dec1 = make_up_projection(g, "ctx.dec1", e[2], rng);
        m.ctx.dec2 = make_up_projection(g, "ctx.dec2", c1, rng);
        m.ctx.dec3 = make_up_projection(g, "ctx.dec3", c2, rng);
        m.ctx.head = make_conv(g, "ctx.head", config.context_channels, c3, 3, rng);
        if (fused) {
            m.ctx.pretrain_head =
                make_conv(g, "ctx.pretrain_head", 1, config.context_channels, 1, rng, kHeadBiasInit);
        }
    }

    // Depth feature extraction network (sparse convolutions).
    if (fused) {
        ParamGroup& g = m.depth_encoder;
        int in_c = 1;
        for (int i = 0; i < config.depth_encoder_layers; ++i) {
            SparseConvParams p;
            const std::string prefix = "depth.scn" + std::to_string(i + 1);
            p.weight = make_weight(g, prefix + ".w", config.depth_channels, in_c, kScnKernels[i], rng);
            p.bias = make_bias(g, prefix + ".b", config.depth_channels);
            m.depth.layers.push_back(p);
            in_c = config.depth_channels;
        }
        m.depth.pretrain_head =
            make_conv(g, "depth.pretrain_head", 1, config.depth_channels, 1, rng, kHeadBiasInit);
    }

    // Demonstration network.
    if (fused) {
        ParamGroup& g = m.demonstration;
        m.demo.fuse = make_conv(g, "demo.fuse", config.fusion_channels,
                                config.context_channels + config.depth_channels, 1, rng);
        for (int i = 0; i < 4; ++i) {
            m.demo.blocks[static_cast<size_t>(i)] = make_residual_block(
                g, "demo.rb" + std::to_string(i + 1), config.fusion_channels, rng);
        }
    }

    // Prediction network.
    {
        ParamGroup& g = m.prediction;
        const int c = config.prediction_input_channels();
        for (int i = 0; i < 5; ++i) {
            m.pred.blocks.push_back(make_residual_block(g, "pred.rb" + std::to_string(i + 1), c, rng));
        }
        m.pred.head = make_conv(g, "pred.head", 1, c, 1, rng, kHeadBiasInit);
    }

    return m;
}

int64_t Model::param_count() const {
    return context_encoder.param_count() + depth_encoder.param_count() +
           demonstration.param_count() + prediction.param_count();
}

ParamGroup Model::all_params() const {
    ParamGroup g;
    g.merge_from(context_encoder);
    g.merge_from(depth_encoder);
    g.merge_from(demonstration);
    g.merge_from(prediction);
    return g;
}

ParamGroup Model::joint_params() const {
    ParamGroup g = all_params();
    return g.filtered([](const std::string& name) {
        return name.find("pretrain_head") == std::string::npos;
    });
}

Tensor context_encoder_forward(const Model& m, const Tensor& rgb) {
    if (rgb.rank() != 4 || rgb.dim(1) != 3) {
        raise(Error::Kind::ShapeMismatch, "context encoder expects Bx3xHxW input");
    }
    if (rgb.dim(2) % 8 != 0 || rgb.dim(3) % 8 != 0) {
        raise(Error::Kind::InvalidArgument,
              "context encoder needs H and W divisible by 8, got " + std::to_string(rgb.dim(2)) +
                  "x" + std::to_string(rgb.dim(3)));
    }
    Tensor s0 = relu(conv2d(rgb, m.ctx.stem.weight, m.ctx.stem.bias, 1, 1));
    Tensor e1 = residual_down_block(s0, m.ctx.enc1);
    Tensor e2 = residual_down_block(e1, m.ctx.enc2);
    Tensor e3 = residual_down_block(e2, m.ctx.enc3);
    Tensor b = residual_block(e3, m.ctx.bottleneck);
    Tensor d = residual_up_projection(b, m.ctx.dec1);
    d = concat_channels(d, e2);
    d = residual_up_projection(d, m.ctx.dec2);
    d = concat_channels(d, e1);
    d = residual_up_projection(d, m.ctx.dec3);
    d = concat_channels(d, s0);
    return relu(conv2d(d, m.ctx.head.weight, m.ctx.head.bias, 1, 1));
}

std::pair<Tensor, ObservationMask> depth_encoder_forward(const Model& m,
                                                         const Tensor& sparse_depth,
                                                         const ObservationMask& mask) {
    if (sparse_depth.rank() != 4 || sparse_depth.dim(1) != 1) {
        raise(Error::Kind::ShapeMismatch, "depth encoder expects Bx1xHxW input");
    }
    if (mask.batch() != sparse_depth.dim(0) || mask.height() != sparse_depth.dim(2) ||
        mask.width() != sparse_depth.dim(3)) {
        raise(Error::Kind::ShapeMismatch, "depth encoder mask does not match input dims");
    }
    const auto md = mask.data();
    const auto dd = sparse_depth.data();
    for (int64_t i = 0; i < sparse_depth.numel(); ++i) {
        if (md[static_cast<size_t>(i)] == 0.0 && dd[static_cast<size_t>(i)] != 0.0) {
            raise(Error::Kind::InvalidArgument,
                  "sparse depth carries a nonzero value at an unobserved pixel");
        }
    }
    if (m.depth.layers.empty()) {
        raise(Error::Kind::InvalidArgument, "model variant has no depth encoder");
    }
    Tensor f = sparse_depth;
    ObservationMask cur = mask;
    for (const auto& layer : m.depth.layers) {
        const int k = layer.weight.dim(2);
        auto [out, next] = sparse_conv(f, cur, layer, 1, k / 2);
        f = relu(out);
        cur = next;
    }
    return {f, cur};
}

Tensor demonstrate(const Model& m, const Tensor& context_features, const Tensor& depth_features) {
    Tensor z = concat_channels(context_features, depth_features);
    z = conv2d(z, m.demo.fuse.weight, m.demo.fuse.bias, 1, 0);
    for (const auto& block : m.demo.blocks) z = residual_block(z, block);
    return z;
}

Tensor aggregate(const Tensor& demonstrations, const ObservationMask& mask, int window) {
    return masked_avg_pool(demonstrations, mask, window);
}

Tensor predict(const Model& m, const Tensor& context_features, const Tensor& aggregated) {
    Tensor z = concat_channels(context_features, aggregated);
    for (const auto& block : m.pred.blocks) z = residual_block(z, block);
    return relu(conv2d(z, m.pred.head.weight, m.pred.head.bias, 1, 0));
}

Tensor forward(const Model& m, const Tensor& rgb, const Tensor& sparse_depth,
               const ObservationMask& mask) {
    Tensor x = context_encoder_forward(m, rgb);
    auto [y, propagated] = depth_encoder_forward(m, sparse_depth, mask);
    Tensor r = demonstrate(m, x, y);
    Tensor r_agg = aggregate(r, propagated, m.config.aggregation_window);
    return predict(m, x, r_agg);
}

Tensor forward_vanilla(const Model& m, const Tensor& rgb, const Tensor& sparse_depth,
                       const ObservationMask& mask) {
    Tensor x = context_encoder_forward(m, rgb);
    auto [y, propagated] = depth_encoder_forward(m, sparse_depth, mask);
    (void)propagated; // no aggregation: demonstrations feed prediction densely
    Tensor r = demonstrate(m, x, y);
    return predict(m, x, r);
}

Tensor forward_context_only(const Model& m, const Tensor& rgb) {
    Tensor z = context_encoder_forward(m, rgb);
    for (const auto& block : m.pred.blocks) z = residual_block(z, block);
    return relu(conv2d(z, m.pred.head.weight, m.pred.head.bias, 1, 0));
}

Tensor forward_any(const Model& m, const Tensor& rgb, const Tensor& sparse_depth,
                   const ObservationMask& mask) {
    switch (m.config.variant) {
        case ModelVariant::Inductive: return forward(m, rgb, sparse_depth, mask);
        case ModelVariant::Vanilla: return forward_vanilla(m, rgb, sparse_depth, mask);
        case ModelVariant::ContextOnly: return forward_context_only(m, rgb);
    }
    raise(Error::Kind::InvalidArgument, "unknown model variant");
}

Tensor context_pretrain_forward(const Model& m, const Tensor& rgb) {
    if (!m.ctx.pretrain_head.weight.defined()) {
        raise(Error::Kind::InvalidArgument, "model variant has no context pretraining head");
    }
    Tensor x = context_encoder_forward(m, rgb);
    return relu(conv2d(x, m.ctx.pretrain_head.weight, m.ctx.pretrain_head.bias, 1, 0));
}

Tensor depth_pretrain_forward(const Model& m, const Tensor& sparse_depth,
                              const ObservationMask& mask) {
    auto [y, propagated] = depth_encoder_forward(m, sparse_depth, mask);
    (void)propagated;
    return relu(conv2d(y, m.depth.pretrain_head.weight, m.depth.pretrain_head.bias, 1, 0));
}

namespace {

struct RfTracker {
    double radius = 0.0;
    double scale = 1.0; // input pixels per current-grid pixel
    void conv(int k, int stride = 1) {
        radius += (k / 2) * scale;
        scale *= stride;
    }
    void upsample2x() { scale /= 2.0; }
};

} // namespace

int context_receptive_field_radius() {
    RfTracker t;
    t.conv(3);            // stem
    for (int i = 0; i < 3; ++i) { // three downsampling stages
        t.conv(3, 2);
        t.conv(3);
    }
    t.conv(3); // bottleneck
    t.conv(3);
    for (int i = 0; i < 3; ++i) { // three up-projection stages (main path)
        t.upsample2x();
        t.conv(5);
        t.conv(3);
    }
    t.conv(3); // head
    return static_cast<int>(t.radius + 0.5);
}

int demonstration_receptive_field_radius() {
    RfTracker t;
    t.conv(1); // fusion conv
    for (int i = 0; i < 4; ++i) {
        t.conv(3);
        t.conv(3);
    }
    return static_cast<int>(t.radius + 0.5);
}

} // namespace idfc

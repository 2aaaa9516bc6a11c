// SPDX-License-Identifier: Apache-2.0
#include "idfc/gradcheck.hpp"

#include <cmath>

#include "idfc/data.hpp"
#include "idfc/layers.hpp"
#include "idfc/model.hpp"
#include "idfc/rng.hpp"

namespace idfc {

double max_grad_rel_err(const std::function<Tensor()>& forward, const std::vector<Tensor>& wrt,
                        double step) {
    for (const auto& t : wrt) {
        Tensor mut = t;
        mut.zero_grad();
    }
    Tensor loss = forward();
    backward(loss);
    std::vector<std::vector<double>> analytic;
    analytic.reserve(wrt.size());
    for (const auto& t : wrt) {
        auto g = t.grad();
        analytic.emplace_back(g.begin(), g.end());
    }

    double worst = 0.0;
    for (size_t ti = 0; ti < wrt.size(); ++ti) {
        Tensor t = wrt[ti];
        auto data = t.data();
        for (int64_t i = 0; i < t.numel(); ++i) {
            const size_t idx = static_cast<size_t>(i);
            const double saved = data[idx];
            data[idx] = saved + step;
            const double f_plus = forward().value();
            data[idx] = saved - step;
            const double f_minus = forward().value();
            data[idx] = saved;
            const double numeric = (f_plus - f_minus) / (2.0 * step);
            const double a = analytic[ti][idx];
            const double rel = std::abs(a - numeric) /
                               std::max({std::abs(a), std::abs(numeric), 0.01});
            if (rel > worst) worst = rel;
        }
    }
    for (const auto& t : wrt) {
        Tensor mut = t;
        mut.zero_grad();
    }
    return worst;
}

namespace {

constexpr double kThreshold = 1e-4;

Tensor random_tensor(std::vector<int> shape, SplitMix64& rng, double lo = -1.0, double hi = 1.0,
                     bool requires_grad = true) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    std::vector<double> data(static_cast<size_t>(n));
    for (double& v : data) v = rng.uniform(lo, hi);
    return Tensor::from_data(std::move(shape), std::move(data), requires_grad);
}

ObservationMask random_mask(int b, int h, int w, SplitMix64& rng, double density = 0.4) {
    ObservationMask m = ObservationMask::zeros(b, h, w);
    Tensor t = m.tensor();
    bool any = false;
    for (double& v : t.data()) {
        if (rng.next_double() < density) {
            v = 1.0;
            any = true;
        }
    }
    if (!any) t.data()[0] = 1.0;
    return m;
}

// L1 against a fixed random target: every output element of the checked op
// gets a random +/- weight in the loss gradient.
std::function<Tensor()> against_target(std::function<Tensor()> op, std::vector<int> out_shape,
                                       SplitMix64& rng) {
    Tensor target = random_tensor(out_shape, rng, 2.5, 6.0, false);
    ObservationMask ones = ObservationMask::ones(out_shape[0], out_shape[2], out_shape[3]);
    return [op = std::move(op), target, ones] { return l1_loss(op(), target, ones); };
}

// Re-initializes a model so that every preactivation in a forward pass on
// nonnegative inputs is strictly positive: nonnegative weights scaled by
// fan-in, biases well above zero. Composite finite-difference checks need
// this smooth regime, otherwise some ReLU always sits within the step of
// its kink and corrupts the numeric side. The per-layer checks keep the
// signed regime, so the 0/1 gating itself stays covered.
void make_smooth(Model& m, uint64_t seed) {
    SplitMix64 rng(seed);
    ParamGroup all = m.all_params();
    for (const auto& name : all.names()) {
        Tensor t = all.at(name);
        if (t.rank() == 4) {
            const double fan =
                static_cast<double>(t.dim(1)) * t.dim(2) * t.dim(3);
            for (double& v : t.data()) v = rng.uniform(0.25, 0.75) / fan;
        } else {
            for (double& v : t.data()) v = rng.uniform(0.3, 0.7);
        }
    }
}

struct Check {
    std::string name;
    std::string module;
    std::function<double()> run;
};

std::vector<Check> build_checks() {
    std::vector<Check> checks;

    checks.push_back({"conv2d k3 pad1", "tensor", [] {
        SplitMix64 rng(11);
        Tensor x = random_tensor({2, 3, 4, 4}, rng);
        Tensor w = random_tensor({4, 3, 3, 3}, rng, -0.6, 0.6);
        Tensor b = random_tensor({4}, rng, -0.3, 0.3);
        auto fwd = against_target([=] { return conv2d(x, w, b, 1, 1); }, {2, 4, 4, 4}, rng);
        return max_grad_rel_err(fwd, {x, w, b});
    }});
    checks.push_back({"conv2d k3 stride2", "tensor", [] {
        SplitMix64 rng(21);
        Tensor x = random_tensor({1, 2, 5, 5}, rng);
        Tensor w = random_tensor({3, 2, 3, 3}, rng, -0.6, 0.6);
        Tensor b = random_tensor({3}, rng, -0.3, 0.3);
        auto fwd = against_target([=] { return conv2d(x, w, b, 2, 1); }, {1, 3, 3, 3}, rng);
        return max_grad_rel_err(fwd, {x, w, b});
    }});
    checks.push_back({"conv2d k1", "tensor", [] {
        SplitMix64 rng(31);
        Tensor x = random_tensor({1, 4, 3, 3}, rng);
        Tensor w = random_tensor({2, 4, 1, 1}, rng, -0.6, 0.6);
        Tensor b = random_tensor({2}, rng, -0.3, 0.3);
        auto fwd = against_target([=] { return conv2d(x, w, b, 1, 0); }, {1, 2, 3, 3}, rng);
        return max_grad_rel_err(fwd, {x, w, b});
    }});
    checks.push_back({"relu", "tensor", [] {
        SplitMix64 rng(41);
        Tensor x = random_tensor({1, 2, 4, 4}, rng, -1.0, 1.0);
        auto fwd = against_target([=] { return relu(x); }, {1, 2, 4, 4}, rng);
        return max_grad_rel_err(fwd, {x});
    }});
    checks.push_back({"concat+slice", "tensor", [] {
        SplitMix64 rng(51);
        Tensor a = random_tensor({1, 2, 3, 3}, rng);
        Tensor b = random_tensor({1, 3, 3, 3}, rng);
        auto fwd = against_target([=] { return slice_channels(concat_channels(a, b), 1, 4); },
                                  {1, 3, 3, 3}, rng);
        return max_grad_rel_err(fwd, {a, b});
    }});
    checks.push_back({"nearest_upsample2x", "tensor", [] {
        SplitMix64 rng(61);
        Tensor x = random_tensor({1, 3, 3, 4}, rng);
        auto fwd = against_target([=] { return nearest_upsample2x(x); }, {1, 3, 6, 8}, rng);
        return max_grad_rel_err(fwd, {x});
    }});
    checks.push_back({"add+sum", "tensor", [] {
        SplitMix64 rng(71);
        Tensor a = random_tensor({1, 2, 3, 3}, rng);
        Tensor b = random_tensor({1, 2, 3, 3}, rng);
        auto fwd = [=] { return sum(add(a, b)); };
        return max_grad_rel_err(fwd, {a, b});
    }});
    checks.push_back({"l1_loss", "tensor", [] {
        SplitMix64 rng(81);
        Tensor pred = random_tensor({1, 1, 4, 4}, rng, 0.5, 3.0);
        Tensor target = random_tensor({1, 1, 4, 4}, rng, -2.0, -0.5);
        ObservationMask mask = random_mask(1, 4, 4, rng);
        auto fwd = [=] { return l1_loss(pred, target, mask); };
        return max_grad_rel_err(fwd, {pred, target});
    }});

    checks.push_back({"sparse_conv k3", "layers", [] {
        SplitMix64 rng(91);
        Tensor x = random_tensor({1, 2, 4, 4}, rng);
        SparseConvParams p;
        p.weight = random_tensor({3, 2, 3, 3}, rng, -0.6, 0.6);
        p.bias = random_tensor({3}, rng, -0.3, 0.3);
        ObservationMask mask = random_mask(1, 4, 4, rng);
        auto fwd = against_target([=] { return sparse_conv(x, mask, p, 1, 1).first; },
                                  {1, 3, 4, 4}, rng);
        return max_grad_rel_err(fwd, {x, p.weight, p.bias});
    }});
    checks.push_back({"sparse_conv k5 sparse-mask", "layers", [] {
        SplitMix64 rng(101);
        Tensor x = random_tensor({1, 1, 6, 6}, rng);
        SparseConvParams p;
        p.weight = random_tensor({2, 1, 5, 5}, rng, -0.5, 0.5);
        p.bias = random_tensor({2}, rng, -0.3, 0.3);
        ObservationMask mask = random_mask(1, 6, 6, rng, 0.12);
        auto fwd = against_target([=] { return sparse_conv(x, mask, p, 1, 2).first; },
                                  {1, 2, 6, 6}, rng);
        return max_grad_rel_err(fwd, {x, p.weight, p.bias});
    }});
    checks.push_back({"masked_avg_pool global", "layers", [] {
        SplitMix64 rng(111);
        Tensor x = random_tensor({1, 3, 4, 4}, rng);
        ObservationMask mask = random_mask(1, 4, 4, rng);
        auto fwd = against_target([=] { return masked_avg_pool(x, mask, 0); }, {1, 3, 4, 4}, rng);
        return max_grad_rel_err(fwd, {x});
    }});
    checks.push_back({"masked_avg_pool window2", "layers", [] {
        SplitMix64 rng(121);
        Tensor x = random_tensor({2, 2, 4, 4}, rng);
        ObservationMask mask = random_mask(2, 4, 4, rng);
        auto fwd = against_target([=] { return masked_avg_pool(x, mask, 2); }, {2, 2, 4, 4}, rng);
        return max_grad_rel_err(fwd, {x});
    }});
    checks.push_back({"residual_block", "layers", [] {
        SplitMix64 rng(131);
        Tensor x = random_tensor({1, 3, 4, 4}, rng);
        ResidualBlockParams p;
        p.conv1 = {random_tensor({3, 3, 3, 3}, rng, -0.4, 0.4), random_tensor({3}, rng, -0.2, 0.2)};
        p.conv2 = {random_tensor({3, 3, 3, 3}, rng, -0.4, 0.4), random_tensor({3}, rng, -0.2, 0.2)};
        auto fwd = against_target([=] { return residual_block(x, p); }, {1, 3, 4, 4}, rng);
        return max_grad_rel_err(
            fwd, {x, p.conv1.weight, p.conv1.bias, p.conv2.weight, p.conv2.bias});
    }});
    checks.push_back({"residual_down_block", "layers", [] {
        SplitMix64 rng(141);
        Tensor x = random_tensor({1, 2, 4, 4}, rng);
        ResidualDownBlockParams p;
        p.conv1 = {random_tensor({4, 2, 3, 3}, rng, -0.4, 0.4), random_tensor({4}, rng, -0.2, 0.2)};
        p.conv2 = {random_tensor({4, 4, 3, 3}, rng, -0.4, 0.4), random_tensor({4}, rng, -0.2, 0.2)};
        p.shortcut = {random_tensor({4, 2, 1, 1}, rng, -0.4, 0.4), random_tensor({4}, rng, -0.2, 0.2)};
        auto fwd = against_target([=] { return residual_down_block(x, p); }, {1, 4, 2, 2}, rng);
        return max_grad_rel_err(fwd, {x, p.conv1.weight, p.conv2.weight, p.shortcut.weight,
                                      p.conv1.bias, p.conv2.bias, p.shortcut.bias});
    }});
    checks.push_back({"residual_up_projection", "layers", [] {
        SplitMix64 rng(151);
        Tensor x = random_tensor({1, 4, 3, 3}, rng);
        UpProjectionParams p;
        p.conv5_main = {random_tensor({2, 4, 5, 5}, rng, -0.2, 0.2), random_tensor({2}, rng, -0.2, 0.2)};
        p.conv3_main = {random_tensor({2, 2, 3, 3}, rng, -0.4, 0.4), random_tensor({2}, rng, -0.2, 0.2)};
        p.conv5_proj = {random_tensor({2, 4, 5, 5}, rng, -0.2, 0.2), random_tensor({2}, rng, -0.2, 0.2)};
        auto fwd = against_target([=] { return residual_up_projection(x, p); }, {1, 2, 6, 6}, rng);
        return max_grad_rel_err(fwd, {x, p.conv5_main.weight, p.conv3_main.weight,
                                      p.conv5_proj.weight, p.conv5_main.bias, p.conv3_main.bias,
                                      p.conv5_proj.bias});
    }});

    checks.push_back({"context_encoder 16x16", "model", [] {
        Model m = Model::init(ModelConfig::tiny(), 7001);
        make_smooth(m, 7101);
        SplitMix64 rng(161);
        Tensor rgb = random_tensor({1, 3, 16, 16}, rng, 0.0, 1.0, false);
        std::vector<Tensor> wrt;
        for (const auto& n : m.context_encoder.names()) {
            if (n.find("pretrain") == std::string::npos) wrt.push_back(m.context_encoder.at(n));
        }
        Tensor target = random_tensor({1, m.config.context_channels, 16, 16}, rng, -6.0, -3.0, false);
        ObservationMask ones = ObservationMask::ones(1, 16, 16);
        auto fwd = [&m, rgb, target, ones] {
            return l1_loss(context_encoder_forward(m, rgb), target, ones);
        };
        return max_grad_rel_err(fwd, wrt);
    }});
    checks.push_back({"demonstrate", "model", [] {
        Model m = Model::init(ModelConfig::tiny(), 7002);
        SplitMix64 rng(171);
        // Fill the zero-initialized closing convs too, away from any kink.
        for (const auto& n : m.demonstration.names()) {
            for (double& v : m.demonstration.at(n).data()) v = rng.uniform(-0.25, 0.25);
        }
        const auto& c = m.config;
        Tensor x = random_tensor({1, c.context_channels, 8, 8}, rng);
        Tensor y = random_tensor({1, c.depth_channels, 8, 8}, rng);
        std::vector<Tensor> wrt{x, y};
        for (const auto& n : m.demonstration.names()) wrt.push_back(m.demonstration.at(n));
        auto fwd = against_target([&m, x, y] { return demonstrate(m, x, y); },
                                  {1, c.fusion_channels, 8, 8}, rng);
        return max_grad_rel_err(fwd, wrt);
    }});
    checks.push_back({"predict", "model", [] {
        Model m = Model::init(ModelConfig::tiny(), 7003);
        SplitMix64 rng(181);
        for (const auto& n : m.prediction.names()) {
            for (double& v : m.prediction.at(n).data()) v = rng.uniform(-0.25, 0.25);
        }
        const auto& c = m.config;
        Tensor x = random_tensor({1, c.context_channels, 8, 8}, rng);
        Tensor r = random_tensor({1, c.fusion_channels, 8, 8}, rng);
        std::vector<Tensor> wrt{x, r};
        for (const auto& n : m.prediction.names()) wrt.push_back(m.prediction.at(n));
        auto fwd = against_target([&m, x, r] { return predict(m, x, r); }, {1, 1, 8, 8}, rng);
        return max_grad_rel_err(fwd, wrt);
    }});
    checks.push_back({"end-to-end 8x8, 4 observations", "model", [] {
        Model m = Model::init(ModelConfig::tiny(), 7004);
        make_smooth(m, 7104);
        Frame f = synth_scene(4242, 8, 8);
        SamplerConfig sc;
        sc.samples = 4;
        sc.seed = 99;
        auto [sparse, mask] = uniform_sample(f, sc);
        ParamGroup all = m.all_params();
        std::vector<Tensor> wrt;
        for (const auto& n : all.names()) {
            if (n.find("pretrain") == std::string::npos) wrt.push_back(all.at(n));
        }
        // Target far below any reachable prediction keeps the loss smooth.
        Tensor rgb = f.rgb;
        Tensor target = Tensor::full(f.depth_gt.shape(), -4.0);
        ObservationMask valid = f.valid_gt;
        auto fwd = [&m, rgb, sparse, mask, target, valid] {
            return l1_loss(forward(m, rgb, sparse, mask), target, valid);
        };
        return max_grad_rel_err(fwd, wrt);
    }});

    return checks;
}

} // namespace

std::vector<GradCheckReport> run_gradcheck(const std::string& filter) {
    std::vector<GradCheckReport> reports;
    for (const auto& check : build_checks()) {
        if (filter != "all" && filter != check.module) continue;
        GradCheckReport r;
        r.name = check.module + "/" + check.name;
        r.max_rel_err = check.run();
        r.pass = r.max_rel_err < kThreshold;
        reports.push_back(std::move(r));
    }
    if (reports.empty()) {
        raise(Error::Kind::InvalidArgument,
              "unknown gradcheck module '" + filter + "' (use tensor, layers, model or all)");
    }
    return reports;
}

} // namespace idfc

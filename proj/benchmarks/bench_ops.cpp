// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include "idfc/data.hpp"
#include "idfc/layers.hpp"
#include "idfc/model.hpp"
#include "idfc/rng.hpp"
#include "idfc/train.hpp"

namespace {

using namespace idfc;

Tensor rand_tensor(std::vector<int> shape, SplitMix64& rng) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    std::vector<double> data(static_cast<size_t>(n));
    for (double& v : data) v = rng.uniform(-1.0, 1.0);
    return Tensor::from_data(std::move(shape), std::move(data));
}

void BM_Conv2dForward(benchmark::State& state) {
    const int size = static_cast<int>(state.range(0));
    SplitMix64 rng(1);
    Tensor x = rand_tensor({1, 16, size, size}, rng);
    Tensor w = rand_tensor({16, 16, 3, 3}, rng);
    Tensor b = rand_tensor({16}, rng);
    for (auto _ : state) {
        Tensor y = conv2d(x, w, b, 1, 1);
        benchmark::DoNotOptimize(y.data().data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(size) * size);
}
BENCHMARK(BM_Conv2dForward)->Arg(32)->Arg(64);

void BM_Conv2dBackward(benchmark::State& state) {
    const int size = static_cast<int>(state.range(0));
    SplitMix64 rng(2);
    Tensor x = rand_tensor({1, 16, size, size}, rng);
    x.set_requires_grad(true);
    Tensor w = rand_tensor({16, 16, 3, 3}, rng);
    w.set_requires_grad(true);
    Tensor b = rand_tensor({16}, rng);
    for (auto _ : state) {
        Tensor loss = sum(conv2d(x, w, b, 1, 1));
        backward(loss);
        x.zero_grad();
        w.zero_grad();
    }
}
BENCHMARK(BM_Conv2dBackward)->Arg(32)->Arg(64);

void BM_SparseConv(benchmark::State& state) {
    const int size = static_cast<int>(state.range(0));
    SplitMix64 rng(3);
    Tensor x = rand_tensor({1, 1, size, size}, rng);
    SparseConvParams p;
    p.weight = rand_tensor({16, 1, 11, 11}, rng);
    p.bias = rand_tensor({16}, rng);
    ObservationMask m = ObservationMask::zeros(1, size, size);
    Tensor mt = m.tensor();
    for (double& v : mt.data()) v = rng.next_double() < 0.05 ? 1.0 : 0.0;
    for (auto _ : state) {
        auto [out, next] = sparse_conv(x, m, p, 1, 5);
        benchmark::DoNotOptimize(out.data().data());
    }
}
BENCHMARK(BM_SparseConv)->Arg(32)->Arg(64);

void BM_ModelForward(benchmark::State& state) {
    const int size = static_cast<int>(state.range(0));
    Model model = Model::init(ModelConfig{}, 4);
    Frame f = synth_scene(5, size, size);
    SamplerConfig sc;
    sc.samples = 20;
    auto [sparse, mask] = uniform_sample(f, sc);
    for (auto _ : state) {
        Tensor pred = forward(model, f.rgb, sparse, mask);
        benchmark::DoNotOptimize(pred.data().data());
    }
}
BENCHMARK(BM_ModelForward)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
    const int size = static_cast<int>(state.range(0));
    Model model = Model::init(ModelConfig{}, 6);
    ParamGroup joint = model.joint_params();
    Frame f = synth_scene(7, size, size);
    SamplerConfig sc;
    sc.samples = 20;
    auto [sparse, mask] = uniform_sample(f, sc);
    for (auto _ : state) {
        Tensor loss = l1_loss(forward(model, f.rgb, sparse, mask), f.depth_gt, f.valid_gt);
        backward(loss);
        sgd_step(joint, 0.01, 0.9);
        benchmark::DoNotOptimize(loss.value());
    }
}
BENCHMARK(BM_TrainStep)->Arg(32)->Unit(benchmark::kMillisecond);

} // namespace

BENCHMARK_MAIN();

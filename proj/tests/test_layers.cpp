// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <vector>

#include "idfc/gradcheck.hpp"
#include "idfc/layers.hpp"
#include "idfc/rng.hpp"

using namespace idfc;

namespace {

Tensor rand_tensor(std::vector<int> shape, SplitMix64& rng, double lo = -1.0, double hi = 1.0) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    std::vector<double> data(static_cast<size_t>(n));
    for (double& v : data) v = rng.uniform(lo, hi);
    return Tensor::from_data(std::move(shape), std::move(data));
}

ObservationMask rand_mask(int b, int h, int w, SplitMix64& rng, double density) {
    ObservationMask m = ObservationMask::zeros(b, h, w);
    Tensor t = m.tensor();
    for (double& v : t.data()) v = rng.next_double() < density ? 1.0 : 0.0;
    return m;
}

bool value_equal(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) return false;
    for (int64_t i = 0; i < a.numel(); ++i) {
        if (a.data()[static_cast<size_t>(i)] != b.data()[static_cast<size_t>(i)]) return false;
    }
    return true;
}

// Independent dense oracle for sparse_conv: direct window loops over the
// masked features and the mask count, no im2col, no GEMM.
double sparse_conv_oracle_at(const Tensor& f, const ObservationMask& m, const Tensor& w,
                             double bias, double eps, int o, int oh, int ow, int pad) {
    const int c_in = f.dim(1), h = f.dim(2), wd = f.dim(3), k = w.dim(2);
    double num = 0.0, count = 0.0;
    for (int ki = 0; ki < k; ++ki) {
        const int ih = oh - pad + ki;
        if (ih < 0 || ih >= h) continue;
        for (int kj = 0; kj < k; ++kj) {
            const int iw = ow - pad + kj;
            if (iw < 0 || iw >= wd) continue;
            if (m.at(0, ih, iw) == 0.0) continue;
            count += 1.0;
            for (int c = 0; c < c_in; ++c) {
                num += f.at(0, c, ih, iw) * w.at(o, c, ki, kj);
            }
        }
    }
    if (count == 0.0) return bias;
    return num / (count + eps) + bias;
}

} // namespace

TEST_CASE("sparse_conv: single observed pixel normalizes to its value") {
    Tensor f = Tensor::zeros({1, 1, 3, 3});
    f.at(0, 0, 1, 1) = 5.0;
    ObservationMask m = ObservationMask::zeros(1, 3, 3);
    m.set(0, 1, 1, true);
    SparseConvParams p;
    p.weight = Tensor::full({1, 1, 3, 3}, 1.0);
    p.bias = Tensor::zeros({1});
    auto [out, out_mask] = sparse_conv(f, m, p, 1, 1);
    for (double v : out.data()) CHECK(v == doctest::Approx(5.0).epsilon(1e-6));
    CHECK(out_mask.all_set());
}

TEST_CASE("sparse_conv: empty mask yields bias everywhere and an empty mask") {
    SplitMix64 rng(7);
    Tensor f = rand_tensor({1, 2, 4, 4}, rng);
    ObservationMask m = ObservationMask::zeros(1, 4, 4);
    SparseConvParams p;
    p.weight = rand_tensor({3, 2, 3, 3}, rng);
    p.bias = Tensor::from_data({3}, {0.25, -1.0, 2.0});
    auto [out, out_mask] = sparse_conv(f, m, p, 1, 1);
    for (int c = 0; c < 3; ++c) {
        for (int i = 0; i < 4; ++i) {
            for (int j = 0; j < 4; ++j) {
                CHECK(out.at(0, c, i, j) == p.bias.data()[static_cast<size_t>(c)]);
            }
        }
    }
    CHECK(out_mask.empty());
}

TEST_CASE("sparse_conv: output is invariant to values at unobserved pixels") {
    SplitMix64 rng(8);
    for (int trial = 0; trial < 25; ++trial) {
        Tensor f = rand_tensor({1, 2, 5, 5}, rng);
        ObservationMask m = rand_mask(1, 5, 5, rng, 0.3);
        SparseConvParams p;
        p.weight = rand_tensor({2, 2, 3, 3}, rng);
        p.bias = rand_tensor({2}, rng);
        auto [out1, mask1] = sparse_conv(f, m, p, 1, 1);

        Tensor f2 = f.clone();
        for (int i = 0; i < 5; ++i) {
            for (int j = 0; j < 5; ++j) {
                if (m.at(0, i, j) == 0.0) {
                    for (int c = 0; c < 2; ++c) f2.at(0, c, i, j) = rng.uniform(-100, 100);
                }
            }
        }
        auto [out2, mask2] = sparse_conv(f2, m, p, 1, 1);
        CHECK(value_equal(out1, out2));
        CHECK(value_equal(mask1.tensor(), mask2.tensor()));
    }
}

TEST_CASE("sparse_conv matches the brute-force windowed oracle") {
    SplitMix64 rng(9);
    for (int trial = 0; trial < 10; ++trial) {
        Tensor f = rand_tensor({1, 2, 4, 4}, rng);
        ObservationMask m = rand_mask(1, 4, 4, rng, 0.5);
        SparseConvParams p;
        p.weight = rand_tensor({2, 2, 3, 3}, rng);
        p.bias = rand_tensor({2}, rng);
        auto [out, out_mask] = sparse_conv(f, m, p, 1, 1);
        for (int o = 0; o < 2; ++o) {
            for (int i = 0; i < 4; ++i) {
                for (int j = 0; j < 4; ++j) {
                    const double want = sparse_conv_oracle_at(
                        f, m, p.weight, p.bias.data()[static_cast<size_t>(o)], p.epsilon, o, i, j, 1);
                    CHECK(out.at(0, o, i, j) == doctest::Approx(want).epsilon(1e-12));
                }
            }
        }
    }
}

TEST_CASE("sparse_conv with an all-ones mask is a mean-filter convolution") {
    SplitMix64 rng(10);
    Tensor f = rand_tensor({1, 2, 4, 4}, rng);
    ObservationMask m = ObservationMask::ones(1, 4, 4);
    SparseConvParams p;
    p.weight = rand_tensor({3, 2, 3, 3}, rng);
    p.bias = rand_tensor({3}, rng);
    // pad 0: every window sees all K*K pixels, so the normalizer is K*K.
    auto [out, out_mask] = sparse_conv(f, m, p, 1, 0);
    Tensor zero_bias = Tensor::zeros({3});
    Tensor dense = conv2d(f, p.weight, zero_bias, 1, 0);
    for (int64_t i = 0; i < out.numel(); ++i) {
        const int o = static_cast<int>(i / 4); // 2x2 output plane
        const double want = dense.data()[static_cast<size_t>(i)] / (9.0 + p.epsilon) +
                            p.bias.data()[static_cast<size_t>(o)];
        CHECK(out.data()[static_cast<size_t>(i)] == doctest::Approx(want).epsilon(1e-12));
    }
    CHECK(out_mask.all_set());
}

TEST_CASE("sparse_conv rejects a non-binary mask") {
    Tensor bad = Tensor::full({1, 1, 2, 2}, 0.5);
    CHECK_THROWS_AS(ObservationMask::from_tensor(bad), Error);
}

TEST_CASE("mask_maxpool: single pixel dilates to its 3x3 neighborhood") {
    ObservationMask m = ObservationMask::zeros(1, 5, 5);
    m.set(0, 2, 2, true);
    ObservationMask out = mask_maxpool(m, 3, 1, 1);
    for (int i = 0; i < 5; ++i) {
        for (int j = 0; j < 5; ++j) {
            const bool inside = std::abs(i - 2) <= 1 && std::abs(j - 2) <= 1;
            CHECK(out.at(0, i, j) == (inside ? 1.0 : 0.0));
        }
    }

    ObservationMask ones = ObservationMask::ones(1, 4, 4);
    CHECK(mask_maxpool(ones, 3, 1, 1).all_set());
}

TEST_CASE("mask_maxpool: brute force over all 512 3x3 masks") {
    // Output density never decreases, and pooling is monotone under mask
    // inclusion: enumerating all masks and all submasks covers every case.
    auto density_of = [](const ObservationMask& m) { return m.popcount(); };
    std::vector<int64_t> pooled_bits(512);
    for (int bits = 0; bits < 512; ++bits) {
        ObservationMask m = ObservationMask::zeros(1, 3, 3);
        Tensor t = m.tensor();
        for (int i = 0; i < 9; ++i) t.data()[static_cast<size_t>(i)] = (bits >> i) & 1 ? 1.0 : 0.0;
        ObservationMask out = mask_maxpool(m, 3, 1, 1);
        CHECK(density_of(out) >= density_of(m));
        int64_t out_bits = 0;
        for (int i = 0; i < 9; ++i) {
            if (out.tensor().data()[static_cast<size_t>(i)] != 0.0) out_bits |= 1 << i;
        }
        pooled_bits[static_cast<size_t>(bits)] = out_bits;
    }
    // Submask enumeration: pool(A) is a subset of pool(B) whenever A ⊆ B.
    for (int b = 0; b < 512; ++b) {
        for (int a = b; ; a = (a - 1) & b) {
            const int64_t pa = pooled_bits[static_cast<size_t>(a)];
            const int64_t pb = pooled_bits[static_cast<size_t>(b)];
            CHECK((pa & pb) == pa);
            if (a == 0) break;
        }
    }
}

TEST_CASE("repeated dilation turns any nonempty mask all ones") {
    SplitMix64 rng(11);
    for (int trial = 0; trial < 10; ++trial) {
        const int h = 6, w = 5;
        ObservationMask m = rand_mask(1, h, w, rng, 0.08);
        if (m.empty()) m.set(0, static_cast<int>(rng.below(h)), static_cast<int>(rng.below(w)), true);
        int64_t last = m.popcount();
        const int layers = std::max(h, w); // ceil(max/(k/2)) with k=3
        for (int layer = 0; layer < layers; ++layer) {
            m = mask_maxpool(m, 3, 1, 1);
            CHECK(m.popcount() >= last); // weakly increasing density
            last = m.popcount();
        }
        CHECK(m.all_set());
    }
}

TEST_CASE("masked_avg_pool: two observed pixels average to 3 everywhere") {
    Tensor f = Tensor::zeros({1, 1, 2, 2});
    f.at(0, 0, 0, 0) = 2.0;
    f.at(0, 0, 1, 1) = 4.0;
    ObservationMask m = ObservationMask::zeros(1, 2, 2);
    m.set(0, 0, 0, true);
    m.set(0, 1, 1, true);
    Tensor out = masked_avg_pool(f, m, 0);
    for (double v : out.data()) CHECK(v == 3.0);
}

TEST_CASE("masked_avg_pool: permutation of observed values is bitwise neutral") {
    SplitMix64 rng(12);
    for (int trial = 0; trial < 30; ++trial) {
        const int h = 4, w = 4;
        Tensor f = rand_tensor({1, 2, h, w}, rng);
        ObservationMask m = rand_mask(1, h, w, rng, 0.5);
        Tensor base = masked_avg_pool(f, m, 0);

        // Collect observed positions, rotate which value sits where.
        std::vector<int> obs;
        for (int i = 0; i < h * w; ++i) {
            if (m.tensor().data()[static_cast<size_t>(i)] != 0.0) obs.push_back(i);
        }
        if (obs.size() < 2) continue;
        Tensor f2 = f.clone();
        for (int c = 0; c < 2; ++c) {
            for (size_t i = 0; i < obs.size(); ++i) {
                const size_t from = static_cast<size_t>(c * h * w + obs[i]);
                const size_t to =
                    static_cast<size_t>(c * h * w + obs[(i + 1) % obs.size()]);
                f2.data()[to] = f.data()[from];
            }
        }
        Tensor shuffled = masked_avg_pool(f2, m, 0);
        CHECK(value_equal(base, shuffled)); // exactly 0 difference
    }
}

TEST_CASE("masked_avg_pool: empty window contributes zero") {
    Tensor f = Tensor::full({1, 1, 4, 4}, 7.0);
    ObservationMask m = ObservationMask::zeros(1, 4, 4);
    m.set(0, 0, 0, true); // only the top-left 2x2 tile is inhabited
    Tensor out = masked_avg_pool(f, m, 2);
    CHECK(out.at(0, 0, 0, 0) == 7.0);
    CHECK(out.at(0, 0, 0, 1) == 7.0);
    CHECK(out.at(0, 0, 2, 2) == 0.0);
    CHECK(out.at(0, 0, 3, 3) == 0.0);

    CHECK_THROWS_AS(masked_avg_pool(f, m, 3), Error); // 3 does not divide 4
}

TEST_CASE("residual_block: zero weights reduce it to relu(x)") {
    SplitMix64 rng(13);
    Tensor x = rand_tensor({1, 3, 4, 4}, rng);
    ResidualBlockParams p;
    p.conv1 = {Tensor::zeros({3, 3, 3, 3}), Tensor::zeros({3})};
    p.conv2 = {Tensor::zeros({3, 3, 3, 3}), Tensor::zeros({3})};
    Tensor y = residual_block(x, p);
    CHECK(value_equal(y, relu(x)));
    CHECK(y.shape() == x.shape());

    ResidualBlockParams bad;
    bad.conv1 = {Tensor::zeros({2, 3, 3, 3}), Tensor::zeros({2})};
    bad.conv2 = {Tensor::zeros({3, 3, 3, 3}), Tensor::zeros({3})};
    CHECK_THROWS_AS(residual_block(x, bad), Error);
}

TEST_CASE("residual_up_projection: doubles spatial dims, halves channels") {
    SplitMix64 rng(14);
    Tensor x = rand_tensor({2, 4, 3, 5}, rng);
    UpProjectionParams p;
    p.conv5_main = {rand_tensor({2, 4, 5, 5}, rng), rand_tensor({2}, rng)};
    p.conv3_main = {rand_tensor({2, 2, 3, 3}, rng), rand_tensor({2}, rng)};
    p.conv5_proj = {rand_tensor({2, 4, 5, 5}, rng), rand_tensor({2}, rng)};
    Tensor y = residual_up_projection(x, p);
    CHECK(y.shape() == std::vector<int>{2, 2, 6, 10});

    UpProjectionParams zero;
    zero.conv5_main = {Tensor::zeros({2, 4, 5, 5}), Tensor::zeros({2})};
    zero.conv3_main = {Tensor::zeros({2, 2, 3, 3}), Tensor::zeros({2})};
    zero.conv5_proj = {Tensor::zeros({2, 4, 5, 5}), Tensor::zeros({2})};
    for (double v : residual_up_projection(x, zero).data()) CHECK(v == 0.0);

    Tensor odd = rand_tensor({1, 3, 4, 4}, rng);
    CHECK_THROWS_AS(residual_up_projection(odd, p), Error);
}

TEST_CASE("mask binarity survives every mask-emitting layer") {
    SplitMix64 rng(15);
    for (int trial = 0; trial < 10; ++trial) {
        ObservationMask m = rand_mask(1, 6, 6, rng, 0.3);
        SparseConvParams p;
        p.weight = rand_tensor({2, 1, 3, 3}, rng);
        p.bias = rand_tensor({2}, rng);
        Tensor f = rand_tensor({1, 1, 6, 6}, rng);
        auto [out, m2] = sparse_conv(f, m, p, 1, 1);
        for (double v : m2.data()) CHECK((v == 0.0 || v == 1.0));
        ObservationMask m3 = mask_maxpool(m2, 5, 1, 2);
        for (double v : m3.data()) CHECK((v == 0.0 || v == 1.0));
    }
}

TEST_CASE("finite differences agree with autodiff for every layer") {
    for (const auto& r : run_gradcheck("layers")) {
        INFO(r.name, " max rel err ", r.max_rel_err);
        CHECK(r.pass);
    }
}

// SPDX-License-Identifier: Apache-2.0
#include "idfc/layers.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "conv_detail.hpp"

namespace idfc {

Tensor make_op_result(std::vector<int> shape, std::vector<double> data,
                      std::vector<Tensor> parents,
                      std::function<void(detail::TensorNode&)> backward_fn);

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

// Window sums of the mask, same geometry as the convolution.
std::vector<double> window_mask_sums(const ObservationMask& mask, int b, int k, int stride,
                                     int pad, int out_h, int out_w) {
    std::vector<double> sums(static_cast<size_t>(out_h) * out_w, 0.0);
    const int h = mask.height(), w = mask.width();
    for (int oh = 0; oh < out_h; ++oh) {
        for (int ow = 0; ow < out_w; ++ow) {
            double s = 0.0;
            for (int ki = 0; ki < k; ++ki) {
                const int ih = oh * stride - pad + ki;
                if (ih < 0 || ih >= h) continue;
                for (int kj = 0; kj < k; ++kj) {
                    const int iw = ow * stride - pad + kj;
                    if (iw < 0 || iw >= w) continue;
                    s += mask.at(b, ih, iw);
                }
            }
            sums[static_cast<size_t>(oh) * out_w + ow] = s;
        }
    }
    return sums;
}

void multiply_by_mask(const Tensor& features, const Tensor& mask, int b,
                      std::vector<double>& out) {
    const int c = features.dim(1), h = features.dim(2), w = features.dim(3);
    const int64_t plane = static_cast<int64_t>(h) * w;
    out.resize(static_cast<size_t>(c) * plane);
    const double* m = mask.data().data() + static_cast<int64_t>(b) * plane;
    const double* f = features.data().data() + static_cast<int64_t>(b) * c * plane;
    for (int ci = 0; ci < c; ++ci) {
        for (int64_t i = 0; i < plane; ++i) {
            // Unobserved taps are dropped outright so the output is bitwise
            // independent of whatever values sit at mask == 0 pixels.
            out[static_cast<size_t>(ci) * plane + static_cast<size_t>(i)] =
                (m[i] != 0.0) ? f[static_cast<int64_t>(ci) * plane + i] : 0.0;
        }
    }
}

} // namespace

std::pair<Tensor, ObservationMask> sparse_conv(const Tensor& features,
                                               const ObservationMask& mask,
                                               const SparseConvParams& params,
                                               int stride, int pad) {
    if (features.rank() != 4) {
        raise(Error::Kind::ShapeMismatch, "sparse_conv features must be BxCxHxW");
    }
    const int batch = features.dim(0), in_c = features.dim(1);
    const int h = features.dim(2), w = features.dim(3);
    if (mask.batch() != batch || mask.height() != h || mask.width() != w) {
        raise(Error::Kind::ShapeMismatch, "sparse_conv mask does not match feature dims");
    }
    if (params.epsilon <= 0.0) {
        raise(Error::Kind::InvalidArgument, "sparse_conv epsilon must be positive");
    }
    const Tensor& weight = params.weight;
    const Tensor& bias = params.bias;
    if (weight.rank() != 4 || weight.dim(1) != in_c || weight.dim(2) != weight.dim(3) ||
        weight.dim(2) % 2 == 0) {
        raise(Error::Kind::ShapeMismatch, "sparse_conv weight must be OxCxKxK with odd K");
    }
    const int out_c = weight.dim(0), k = weight.dim(2);
    if (bias.rank() != 1 || bias.dim(0) != out_c) {
        raise(Error::Kind::ShapeMismatch, "sparse_conv bias must match output channels");
    }
    const int eh = h + 2 * pad - k;
    const int ew = w + 2 * pad - k;
    if (eh < 0 || ew < 0) {
        raise(Error::Kind::ShapeMismatch, "sparse_conv window exceeds input dims");
    }
    const int out_h = eh / stride + 1;
    const int out_w = ew / stride + 1;
    const int64_t plane = static_cast<int64_t>(out_h) * out_w;
    const int64_t ckk = static_cast<int64_t>(in_c) * k * k;
    const double eps = params.epsilon;

    std::vector<double> out(static_cast<size_t>(batch) * out_c * plane);
    std::vector<double> norms(static_cast<size_t>(batch) * plane);
    {
        ConstMatMap wm(weight.data().data(), out_c, ckk);
        Eigen::MatrixXd cols;
        std::vector<double> masked;
        for (int b = 0; b < batch; ++b) {
            multiply_by_mask(features, mask.tensor(), b, masked);
            detail::im2col(masked.data(), in_c, h, w, k, stride, pad, out_h, out_w, cols);
            MatMap om(out.data() + static_cast<int64_t>(b) * out_c * plane, out_c, plane);
            om.noalias() = wm * cols;
            auto ns = window_mask_sums(mask, b, k, stride, pad, out_h, out_w);
            std::copy(ns.begin(), ns.end(), norms.begin() + static_cast<int64_t>(b) * plane);
            for (int o = 0; o < out_c; ++o) {
                const double bv = bias.data()[static_cast<size_t>(o)];
                for (int64_t p = 0; p < plane; ++p) {
                    const double n = ns[static_cast<size_t>(p)];
                    // Empty window: the normalized term is defined as 0.
                    om(o, p) = (n == 0.0) ? bv : om(o, p) / (n + eps) + bv;
                }
            }
        }
    }

    ObservationMask out_mask = mask_maxpool(mask, k, stride, pad);

    Tensor f_t = features, w_t = weight, b_t = bias;
    Tensor mask_t = mask.tensor();
    Tensor result = make_op_result(
        {batch, out_c, out_h, out_w}, std::move(out), {features, weight, bias},
        [f_t, w_t, b_t, mask_t, norms, batch, in_c, h, w, out_c, k, stride, pad, out_h, out_w,
         plane, ckk, eps](detail::TensorNode& node) {
            auto fn = f_t.node_ptr();
            auto wn = w_t.node_ptr();
            auto bn = b_t.node_ptr();
            const bool need_df = fn->requires_grad;
            const bool need_dw = wn->requires_grad;
            const bool need_db = bn->requires_grad;
            if (need_df) fn->ensure_grad();
            if (need_dw) wn->ensure_grad();
            if (need_db) bn->ensure_grad();

            ConstMatMap wm(wn->data.data(), out_c, ckk);
            Eigen::MatrixXd cols, dnum, dcols;
            std::vector<double> masked;
            std::vector<double> dmasked(static_cast<size_t>(in_c) * h * w);
            for (int b = 0; b < batch; ++b) {
                ConstMatMap gout(node.grad.data() + static_cast<int64_t>(b) * out_c * plane,
                                 out_c, plane);
                if (need_db) {
                    for (int o = 0; o < out_c; ++o) {
                        bn->grad[static_cast<size_t>(o)] += gout.row(o).sum();
                    }
                }
                if (!need_df && !need_dw) continue;
                const double* ns = norms.data() + static_cast<int64_t>(b) * plane;
                dnum.resize(out_c, plane);
                for (int o = 0; o < out_c; ++o) {
                    for (int64_t p = 0; p < plane; ++p) {
                        dnum(o, p) = (ns[p] == 0.0) ? 0.0 : gout(o, p) / (ns[p] + eps);
                    }
                }
                if (need_dw) {
                    multiply_by_mask(f_t, mask_t, b, masked);
                    detail::im2col(masked.data(), in_c, h, w, k, stride, pad, out_h, out_w, cols);
                    MatMap dwm(wn->grad.data(), out_c, ckk);
                    dwm.noalias() += dnum * cols.transpose();
                }
                if (need_df) {
                    dcols.noalias() = wm.transpose() * dnum;
                    std::fill(dmasked.begin(), dmasked.end(), 0.0);
                    detail::col2im_accumulate(dcols, dmasked.data(), in_c, h, w, k, stride, pad,
                                              out_h, out_w);
                    const int64_t img_plane = static_cast<int64_t>(h) * w;
                    const double* mp = mask_t.data().data() + static_cast<int64_t>(b) * img_plane;
                    double* df = fn->grad.data() + static_cast<int64_t>(b) * in_c * img_plane;
                    for (int ci = 0; ci < in_c; ++ci) {
                        for (int64_t i = 0; i < img_plane; ++i) {
                            if (mp[i] != 0.0) {
                                df[static_cast<int64_t>(ci) * img_plane + i] +=
                                    dmasked[static_cast<size_t>(ci) * img_plane +
                                            static_cast<size_t>(i)];
                            }
                        }
                    }
                }
            }
        });
    return {std::move(result), std::move(out_mask)};
}

Tensor masked_avg_pool(const Tensor& features, const ObservationMask& mask, int window) {
    if (features.rank() != 4) {
        raise(Error::Kind::ShapeMismatch, "masked_avg_pool features must be BxCxHxW");
    }
    const int batch = features.dim(0), c = features.dim(1);
    const int h = features.dim(2), w = features.dim(3);
    if (mask.batch() != batch || mask.height() != h || mask.width() != w) {
        raise(Error::Kind::ShapeMismatch, "masked_avg_pool mask does not match feature dims");
    }
    int wh = window, ww = window;
    if (window == 0) {
        wh = h;
        ww = w;
    } else if (window < 0 || h % window != 0 || w % window != 0) {
        raise(Error::Kind::InvalidArgument,
              "aggregation window " + std::to_string(window) + " does not divide " +
                  std::to_string(h) + "x" + std::to_string(w));
    }
    const int tiles_h = h / wh, tiles_w = w / ww;
    const int64_t img_plane = static_cast<int64_t>(h) * w;

    std::vector<double> out(static_cast<size_t>(batch) * c * img_plane, 0.0);
    std::vector<double> inv_denoms(static_cast<size_t>(batch) * tiles_h * tiles_w, 0.0);
    std::vector<double> vals;
    for (int b = 0; b < batch; ++b) {
        const double* mp = mask.data().data() + static_cast<int64_t>(b) * img_plane;
        for (int th = 0; th < tiles_h; ++th) {
            for (int tw = 0; tw < tiles_w; ++tw) {
                int64_t count = 0;
                for (int i = th * wh; i < (th + 1) * wh; ++i) {
                    for (int j = tw * ww; j < (tw + 1) * ww; ++j) {
                        if (mp[static_cast<int64_t>(i) * w + j] != 0.0) ++count;
                    }
                }
                const double denom = static_cast<double>(std::max<int64_t>(count, 1));
                inv_denoms[(static_cast<size_t>(b) * tiles_h + th) * tiles_w + tw] = 1.0 / denom;
                for (int ci = 0; ci < c; ++ci) {
                    const double* f =
                        features.data().data() + (static_cast<int64_t>(b) * c + ci) * img_plane;
                    vals.clear();
                    for (int i = th * wh; i < (th + 1) * wh; ++i) {
                        for (int j = tw * ww; j < (tw + 1) * ww; ++j) {
                            if (mp[static_cast<int64_t>(i) * w + j] != 0.0) {
                                vals.push_back(f[static_cast<int64_t>(i) * w + j]);
                            }
                        }
                    }
                    // Canonical summation order: sort the observed values, so
                    // the aggregate is bitwise invariant to any relabeling of
                    // which pixel carries which value.
                    std::sort(vals.begin(), vals.end());
                    double s = 0.0;
                    for (double v : vals) s += v;
                    const double r = s / denom;
                    double* op = out.data() + (static_cast<int64_t>(b) * c + ci) * img_plane;
                    for (int i = th * wh; i < (th + 1) * wh; ++i) {
                        for (int j = tw * ww; j < (tw + 1) * ww; ++j) {
                            op[static_cast<int64_t>(i) * w + j] = r;
                        }
                    }
                }
            }
        }
    }

    Tensor f_t = features;
    Tensor mask_t = mask.tensor();
    return make_op_result(
        {batch, c, h, w}, std::move(out), {features},
        [f_t, mask_t, inv_denoms, batch, c, h, w, wh, ww, tiles_h, tiles_w,
         img_plane](detail::TensorNode& node) {
            auto fn = f_t.node_ptr();
            if (!fn->requires_grad) return;
            fn->ensure_grad();
            for (int b = 0; b < batch; ++b) {
                const double* mp = mask_t.data().data() + static_cast<int64_t>(b) * img_plane;
                for (int th = 0; th < tiles_h; ++th) {
                    for (int tw = 0; tw < tiles_w; ++tw) {
                        const double inv_denom =
                            inv_denoms[(static_cast<size_t>(b) * tiles_h + th) * tiles_w + tw];
                        for (int ci = 0; ci < c; ++ci) {
                            const double* g =
                                node.grad.data() + (static_cast<int64_t>(b) * c + ci) * img_plane;
                            double gsum = 0.0;
                            for (int i = th * wh; i < (th + 1) * wh; ++i) {
                                for (int j = tw * ww; j < (tw + 1) * ww; ++j) {
                                    gsum += g[static_cast<int64_t>(i) * w + j];
                                }
                            }
                            const double gv = gsum * inv_denom;
                            double* df =
                                fn->grad.data() + (static_cast<int64_t>(b) * c + ci) * img_plane;
                            for (int i = th * wh; i < (th + 1) * wh; ++i) {
                                for (int j = tw * ww; j < (tw + 1) * ww; ++j) {
                                    if (mp[static_cast<int64_t>(i) * w + j] != 0.0) {
                                        df[static_cast<int64_t>(i) * w + j] += gv;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
}

Tensor residual_block(const Tensor& x, const ResidualBlockParams& params) {
    if (params.conv1.weight.dim(0) != x.dim(1) || params.conv2.weight.dim(0) != x.dim(1)) {
        raise(Error::Kind::ShapeMismatch,
              "residual_block requires matching in/out channels, input has " +
                  std::to_string(x.dim(1)));
    }
    Tensor y = conv2d(x, params.conv1.weight, params.conv1.bias, 1, 1);
    y = relu(y);
    y = conv2d(y, params.conv2.weight, params.conv2.bias, 1, 1);
    return relu(add(x, y));
}

Tensor residual_down_block(const Tensor& x, const ResidualDownBlockParams& params) {
    Tensor y = conv2d(x, params.conv1.weight, params.conv1.bias, 2, 1);
    y = relu(y);
    y = conv2d(y, params.conv2.weight, params.conv2.bias, 1, 1);
    Tensor s = conv2d(x, params.shortcut.weight, params.shortcut.bias, 2, 0);
    return relu(add(y, s));
}

Tensor residual_up_projection(const Tensor& x, const UpProjectionParams& params) {
    if (x.dim(1) % 2 != 0) {
        raise(Error::Kind::InvalidArgument,
              "residual_up_projection requires an even channel count, got " +
                  std::to_string(x.dim(1)));
    }
    Tensor u = nearest_upsample2x(x);
    Tensor m = conv2d(u, params.conv5_main.weight, params.conv5_main.bias, 1, 2);
    m = relu(m);
    m = conv2d(m, params.conv3_main.weight, params.conv3_main.bias, 1, 1);
    Tensor p = conv2d(u, params.conv5_proj.weight, params.conv5_proj.bias, 1, 2);
    return relu(add(m, p));
}

} // namespace idfc

// SPDX-License-Identifier: Apache-2.0
#include "idfc/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "conv_detail.hpp"
#include "idfc/mask.hpp"

namespace idfc {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

int64_t shape_numel(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

void require_rank4(const Tensor& t, const char* what) {
    if (t.rank() != 4) {
        raise(Error::Kind::ShapeMismatch,
              std::string(what) + " must be rank-4 BxCxHxW, got " + shape_str(t.shape()));
    }
}

} // namespace

// ---- Tensor basics ----

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
    for (int d : shape) {
        if (d <= 0) raise(Error::Kind::ShapeMismatch, "non-positive dimension in shape " + shape_str(shape));
    }
    auto node = std::make_shared<detail::TensorNode>();
    node->data.assign(static_cast<size_t>(shape_numel(shape)), value);
    node->shape = std::move(shape);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<double> data, bool requires_grad) {
    if (shape_numel(shape) != static_cast<int64_t>(data.size())) {
        raise(Error::Kind::ShapeMismatch,
              "data length " + std::to_string(data.size()) + " does not match shape " + shape_str(shape));
    }
    auto node = std::make_shared<detail::TensorNode>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from_data({1}, {value}, requires_grad);
}

std::span<const double> Tensor::grad() const {
    if (!node_ || node_->grad.empty()) {
        raise(Error::Kind::InvalidArgument, "tensor has no gradient populated");
    }
    return node_->grad;
}

double Tensor::value() const {
    if (numel() != 1) {
        raise(Error::Kind::ShapeMismatch, "value() requires a scalar, got shape " + shape_str(shape()));
    }
    return node_->data[0];
}

Tensor Tensor::clone() const {
    return from_data(node_->shape, node_->data, node_->requires_grad);
}

Tensor Tensor::detach() const {
    auto node = std::make_shared<detail::TensorNode>();
    node->shape = node_->shape;
    node->data = node_->data;
    node->requires_grad = false;
    return Tensor(std::move(node));
}

double& Tensor::at(int b, int c, int h, int w) {
    const auto& s = node_->shape;
    return node_->data[static_cast<size_t>(((static_cast<int64_t>(b) * s[1] + c) * s[2] + h) * s[3] + w)];
}

double Tensor::at(int b, int c, int h, int w) const {
    const auto& s = node_->shape;
    return node_->data[static_cast<size_t>(((static_cast<int64_t>(b) * s[1] + c) * s[2] + h) * s[3] + w)];
}

// ---- Graph plumbing ----

Tensor make_op_result(std::vector<int> shape, std::vector<double> data,
                      std::vector<Tensor> parents,
                      std::function<void(detail::TensorNode&)> backward_fn) {
    Tensor out = Tensor::from_data(std::move(shape), std::move(data));
    bool needs_graph = false;
    for (const auto& p : parents) {
        if (p.requires_grad()) needs_graph = true;
    }
    if (needs_graph) {
        out.node()->requires_grad = true;
        auto* node = out.node();
        node->parents.reserve(parents.size());
        for (auto& p : parents) node->parents.push_back(p.node_ptr());
        node->backward_fn = std::move(backward_fn);
    }
    return out;
}

void backward(const Tensor& loss) {
    if (!loss.defined()) raise(Error::Kind::InvalidArgument, "backward on undefined tensor");
    if (loss.numel() != 1) {
        raise(Error::Kind::ShapeMismatch, "backward requires a scalar loss, got shape " + shape_str(loss.shape()));
    }
    auto* root = loss.node();
    if (root->consumed) {
        raise(Error::Kind::InvalidArgument, "backward called twice on an already-consumed graph");
    }
    if (!root->backward_fn && root->parents.empty()) {
        // Leaf scalar: nothing to propagate. Seed its own grad if tracked.
        if (root->requires_grad) {
            root->ensure_grad();
            root->grad[0] += 1.0;
        }
        return;
    }

    // Reverse post-order over the parent DAG: consumers before producers.
    // The order vector holds shared ownership so freeing one node's edges
    // cannot destroy a node that is still queued.
    std::vector<std::shared_ptr<detail::TensorNode>> order;
    std::unordered_set<detail::TensorNode*> visited;
    struct StackItem {
        std::shared_ptr<detail::TensorNode> node;
        size_t next_parent;
    };
    std::vector<StackItem> stack;
    stack.push_back({loss.node_ptr(), 0});
    visited.insert(root);
    while (!stack.empty()) {
        auto& top = stack.back();
        if (top.node->consumed) {
            raise(Error::Kind::InvalidArgument, "backward through an already-consumed graph region");
        }
        if (top.next_parent < top.node->parents.size()) {
            auto parent = top.node->parents[top.next_parent++];
            if (!visited.count(parent.get()) && parent->backward_fn) {
                visited.insert(parent.get());
                stack.push_back({std::move(parent), 0});
            }
        } else {
            order.push_back(top.node);
            stack.pop_back();
        }
    }

    root->ensure_grad();
    root->grad[0] += 1.0;

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::TensorNode* node = it->get();
        if (node->backward_fn) {
            node->ensure_grad();
            node->backward_fn(*node);
            node->consumed = true;
            node->backward_fn = nullptr;
            node->parents.clear();
            if (node != root || !node->requires_grad) {
                // Interior activations do not need to keep their grads.
                node->grad.clear();
                node->grad.shrink_to_fit();
            }
        }
    }
}

namespace {

bool wants_grad(const std::shared_ptr<detail::TensorNode>& n) { return n->requires_grad; }

void accumulate(detail::TensorNode& dst, const double* src, int64_t n) {
    dst.ensure_grad();
    for (int64_t i = 0; i < n; ++i) dst.grad[static_cast<size_t>(i)] += src[i];
}

} // namespace

namespace detail {

void im2col(const double* img, int channels, int height, int width, int k, int stride,
            int pad, int out_h, int out_w, Eigen::MatrixXd& cols) {
    cols.setZero(static_cast<int64_t>(channels) * k * k, static_cast<int64_t>(out_h) * out_w);
    for (int c = 0; c < channels; ++c) {
        for (int ki = 0; ki < k; ++ki) {
            for (int kj = 0; kj < k; ++kj) {
                const int row = (c * k + ki) * k + kj;
                for (int oh = 0; oh < out_h; ++oh) {
                    const int ih = oh * stride - pad + ki;
                    if (ih < 0 || ih >= height) continue;
                    const double* src = img + (static_cast<int64_t>(c) * height + ih) * width;
                    for (int ow = 0; ow < out_w; ++ow) {
                        const int iw = ow * stride - pad + kj;
                        if (iw < 0 || iw >= width) continue;
                        cols(row, oh * static_cast<int64_t>(out_w) + ow) = src[iw];
                    }
                }
            }
        }
    }
}

void col2im_accumulate(const Eigen::MatrixXd& cols, double* img, int channels, int height,
                       int width, int k, int stride, int pad, int out_h, int out_w) {
    for (int c = 0; c < channels; ++c) {
        for (int ki = 0; ki < k; ++ki) {
            for (int kj = 0; kj < k; ++kj) {
                const int row = (c * k + ki) * k + kj;
                for (int oh = 0; oh < out_h; ++oh) {
                    const int ih = oh * stride - pad + ki;
                    if (ih < 0 || ih >= height) continue;
                    for (int ow = 0; ow < out_w; ++ow) {
                        const int iw = ow * stride - pad + kj;
                        if (iw < 0 || iw >= width) continue;
                        img[(static_cast<int64_t>(c) * height + ih) * width + iw] +=
                            cols(row, oh * static_cast<int64_t>(out_w) + ow);
                    }
                }
            }
        }
    }
}

} // namespace detail

// ---- conv2d ----

namespace {

struct ConvDims {
    int batch, in_c, height, width, out_c, k, out_h, out_w;
};

ConvDims check_conv_shapes(const Tensor& input, const Tensor& weight, const Tensor& bias,
                           int stride, int pad) {
    require_rank4(input, "conv input");
    require_rank4(weight, "conv weight");
    if (bias.rank() != 1) {
        raise(Error::Kind::ShapeMismatch, "conv bias must be rank-1, got " + shape_str(bias.shape()));
    }
    ConvDims d;
    d.batch = input.dim(0);
    d.in_c = input.dim(1);
    d.height = input.dim(2);
    d.width = input.dim(3);
    d.out_c = weight.dim(0);
    d.k = weight.dim(2);
    if (weight.dim(2) != weight.dim(3)) {
        raise(Error::Kind::ShapeMismatch, "conv kernel must be square, got " + shape_str(weight.shape()));
    }
    if (d.k % 2 == 0) {
        raise(Error::Kind::InvalidArgument, "conv kernel size must be odd, got " + std::to_string(d.k));
    }
    if (weight.dim(1) != d.in_c) {
        raise(Error::Kind::ShapeMismatch,
              "conv weight channel dim " + std::to_string(weight.dim(1)) +
                  " does not match input channels " + std::to_string(d.in_c));
    }
    if (bias.dim(0) != d.out_c) {
        raise(Error::Kind::ShapeMismatch,
              "conv bias dim " + std::to_string(bias.dim(0)) + " does not match output channels " +
                  std::to_string(d.out_c));
    }
    if (pad < 0 || stride < 1) {
        raise(Error::Kind::InvalidArgument, "conv requires pad >= 0 and stride >= 1");
    }
    const int eh = d.height + 2 * pad - d.k;
    const int ew = d.width + 2 * pad - d.k;
    if (eh < 0 || ew < 0) {
        raise(Error::Kind::ShapeMismatch,
              "conv kernel k=" + std::to_string(d.k) + " with pad=" + std::to_string(pad) +
                  " exceeds input H=" + std::to_string(d.height) + " W=" + std::to_string(d.width));
    }
    // Floor semantics for strided windows, as in standard cross-correlation.
    d.out_h = eh / stride + 1;
    d.out_w = ew / stride + 1;
    return d;
}

} // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int pad) {
    const ConvDims d = check_conv_shapes(input, weight, bias, stride, pad);
    const int64_t plane = static_cast<int64_t>(d.out_h) * d.out_w;
    const int64_t ckk = static_cast<int64_t>(d.in_c) * d.k * d.k;

    std::vector<double> out(static_cast<size_t>(d.batch) * d.out_c * plane);
    ConstMatMap wm(weight.data().data(), d.out_c, ckk);
    Eigen::MatrixXd cols;
    for (int b = 0; b < d.batch; ++b) {
        detail::im2col(input.data().data() + static_cast<int64_t>(b) * d.in_c * d.height * d.width,
                       d.in_c, d.height, d.width, d.k, stride, pad, d.out_h, d.out_w, cols);
        MatMap om(out.data() + static_cast<int64_t>(b) * d.out_c * plane, d.out_c, plane);
        om.noalias() = wm * cols;
        for (int o = 0; o < d.out_c; ++o) om.row(o).array() += bias.data()[static_cast<size_t>(o)];
    }

    Tensor in_t = input, w_t = weight, b_t = bias;
    return make_op_result(
        {d.batch, d.out_c, d.out_h, d.out_w}, std::move(out), {input, weight, bias},
        [in_t, w_t, b_t, d, stride, pad, plane, ckk](detail::TensorNode& node) {
            auto in_node = in_t.node_ptr();
            auto w_node = w_t.node_ptr();
            auto b_node = b_t.node_ptr();
            const bool need_dx = wants_grad(in_node);
            const bool need_dw = wants_grad(w_node);
            const bool need_db = wants_grad(b_node);
            if (need_dx) in_node->ensure_grad();
            if (need_dw) w_node->ensure_grad();
            if (need_db) b_node->ensure_grad();

            ConstMatMap wm(w_node->data.data(), d.out_c, ckk);
            Eigen::MatrixXd cols, dcols;
            for (int b = 0; b < d.batch; ++b) {
                ConstMatMap gout(node.grad.data() + static_cast<int64_t>(b) * d.out_c * plane,
                                 d.out_c, plane);
                if (need_db) {
                    for (int o = 0; o < d.out_c; ++o) {
                        b_node->grad[static_cast<size_t>(o)] += gout.row(o).sum();
                    }
                }
                if (need_dw) {
                    detail::im2col(in_node->data.data() +
                                       static_cast<int64_t>(b) * d.in_c * d.height * d.width,
                                   d.in_c, d.height, d.width, d.k, stride, pad, d.out_h, d.out_w,
                                   cols);
                    MatMap dwm(w_node->grad.data(), d.out_c, ckk);
                    dwm.noalias() += gout * cols.transpose();
                }
                if (need_dx) {
                    dcols.noalias() = wm.transpose() * gout;
                    detail::col2im_accumulate(
                        dcols,
                        in_node->grad.data() + static_cast<int64_t>(b) * d.in_c * d.height * d.width,
                        d.in_c, d.height, d.width, d.k, stride, pad, d.out_h, d.out_w);
                }
            }
        });
}

// ---- elementwise and structural ops ----

Tensor relu(const Tensor& x) {
    std::vector<double> out(x.data().begin(), x.data().end());
    for (double& v : out) v = v > 0.0 ? v : 0.0;
    Tensor x_t = x;
    return make_op_result(x.shape(), std::move(out), {x}, [x_t](detail::TensorNode& node) {
        auto xn = x_t.node_ptr();
        if (!wants_grad(xn)) return;
        xn->ensure_grad();
        const int64_t n = xn->numel();
        for (int64_t i = 0; i < n; ++i) {
            // Subgradient at exactly 0 is 0.
            if (xn->data[static_cast<size_t>(i)] > 0.0) {
                xn->grad[static_cast<size_t>(i)] += node.grad[static_cast<size_t>(i)];
            }
        }
    });
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        raise(Error::Kind::ShapeMismatch,
              "add shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    std::vector<double> out(a.data().begin(), a.data().end());
    for (int64_t i = 0; i < b.numel(); ++i) out[static_cast<size_t>(i)] += b.data()[static_cast<size_t>(i)];
    Tensor a_t = a, b_t = b;
    return make_op_result(a.shape(), std::move(out), {a, b}, [a_t, b_t](detail::TensorNode& node) {
        auto an = a_t.node_ptr();
        auto bn = b_t.node_ptr();
        if (wants_grad(an)) accumulate(*an, node.grad.data(), node.numel());
        if (wants_grad(bn)) accumulate(*bn, node.grad.data(), node.numel());
    });
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    require_rank4(a, "concat lhs");
    require_rank4(b, "concat rhs");
    if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
        raise(Error::Kind::ShapeMismatch,
              "concat_channels spatial/batch mismatch " + shape_str(a.shape()) + " vs " +
                  shape_str(b.shape()));
    }
    const int batch = a.dim(0), ca = a.dim(1), cb = b.dim(1);
    const int64_t plane = static_cast<int64_t>(a.dim(2)) * a.dim(3);
    std::vector<double> out(static_cast<size_t>(batch) * (ca + cb) * plane);
    for (int bi = 0; bi < batch; ++bi) {
        std::copy_n(a.data().data() + static_cast<int64_t>(bi) * ca * plane, ca * plane,
                    out.data() + static_cast<int64_t>(bi) * (ca + cb) * plane);
        std::copy_n(b.data().data() + static_cast<int64_t>(bi) * cb * plane, cb * plane,
                    out.data() + static_cast<int64_t>(bi) * (ca + cb) * plane + ca * plane);
    }
    Tensor a_t = a, b_t = b;
    return make_op_result(
        {batch, ca + cb, a.dim(2), a.dim(3)}, std::move(out), {a, b},
        [a_t, b_t, batch, ca, cb, plane](detail::TensorNode& node) {
            auto an = a_t.node_ptr();
            auto bn = b_t.node_ptr();
            if (wants_grad(an)) {
                an->ensure_grad();
                for (int bi = 0; bi < batch; ++bi) {
                    const double* g = node.grad.data() + static_cast<int64_t>(bi) * (ca + cb) * plane;
                    double* dst = an->grad.data() + static_cast<int64_t>(bi) * ca * plane;
                    for (int64_t i = 0; i < ca * plane; ++i) dst[i] += g[i];
                }
            }
            if (wants_grad(bn)) {
                bn->ensure_grad();
                for (int bi = 0; bi < batch; ++bi) {
                    const double* g =
                        node.grad.data() + static_cast<int64_t>(bi) * (ca + cb) * plane + ca * plane;
                    double* dst = bn->grad.data() + static_cast<int64_t>(bi) * cb * plane;
                    for (int64_t i = 0; i < cb * plane; ++i) dst[i] += g[i];
                }
            }
        });
}

Tensor slice_channels(const Tensor& x, int c_begin, int c_end) {
    require_rank4(x, "slice input");
    if (c_begin < 0 || c_end > x.dim(1) || c_begin >= c_end) {
        raise(Error::Kind::InvalidArgument,
              "slice_channels range [" + std::to_string(c_begin) + "," + std::to_string(c_end) +
                  ") invalid for " + std::to_string(x.dim(1)) + " channels");
    }
    const int batch = x.dim(0), c_in = x.dim(1), c_out = c_end - c_begin;
    const int64_t plane = static_cast<int64_t>(x.dim(2)) * x.dim(3);
    std::vector<double> out(static_cast<size_t>(batch) * c_out * plane);
    for (int bi = 0; bi < batch; ++bi) {
        std::copy_n(x.data().data() + (static_cast<int64_t>(bi) * c_in + c_begin) * plane,
                    c_out * plane, out.data() + static_cast<int64_t>(bi) * c_out * plane);
    }
    Tensor x_t = x;
    return make_op_result(
        {batch, c_out, x.dim(2), x.dim(3)}, std::move(out), {x},
        [x_t, batch, c_in, c_begin, c_out, plane](detail::TensorNode& node) {
            auto xn = x_t.node_ptr();
            if (!wants_grad(xn)) return;
            xn->ensure_grad();
            for (int bi = 0; bi < batch; ++bi) {
                const double* g = node.grad.data() + static_cast<int64_t>(bi) * c_out * plane;
                double* dst = xn->grad.data() + (static_cast<int64_t>(bi) * c_in + c_begin) * plane;
                for (int64_t i = 0; i < c_out * plane; ++i) dst[i] += g[i];
            }
        });
}

Tensor nearest_upsample2x(const Tensor& x) {
    require_rank4(x, "upsample input");
    const int batch = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    std::vector<double> out(static_cast<size_t>(batch) * c * 4 * h * w);
    for (int bi = 0; bi < batch; ++bi) {
        for (int ci = 0; ci < c; ++ci) {
            const double* src = x.data().data() + (static_cast<int64_t>(bi) * c + ci) * h * w;
            double* dst = out.data() + (static_cast<int64_t>(bi) * c + ci) * 4 * h * w;
            for (int i = 0; i < h; ++i) {
                for (int j = 0; j < w; ++j) {
                    const double v = src[static_cast<int64_t>(i) * w + j];
                    const int64_t o = static_cast<int64_t>(2 * i) * (2 * w) + 2 * j;
                    dst[o] = v;
                    dst[o + 1] = v;
                    dst[o + 2 * w] = v;
                    dst[o + 2 * w + 1] = v;
                }
            }
        }
    }
    Tensor x_t = x;
    return make_op_result(
        {batch, c, 2 * h, 2 * w}, std::move(out), {x},
        [x_t, batch, c, h, w](detail::TensorNode& node) {
            auto xn = x_t.node_ptr();
            if (!wants_grad(xn)) return;
            xn->ensure_grad();
            for (int bi = 0; bi < batch; ++bi) {
                for (int ci = 0; ci < c; ++ci) {
                    const double* g = node.grad.data() + (static_cast<int64_t>(bi) * c + ci) * 4 * h * w;
                    double* dst = xn->grad.data() + (static_cast<int64_t>(bi) * c + ci) * h * w;
                    for (int i = 0; i < h; ++i) {
                        for (int j = 0; j < w; ++j) {
                            const int64_t o = static_cast<int64_t>(2 * i) * (2 * w) + 2 * j;
                            dst[static_cast<int64_t>(i) * w + j] +=
                                g[o] + g[o + 1] + g[o + 2 * w] + g[o + 2 * w + 1];
                        }
                    }
                }
            }
        });
}

Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (double v : x.data()) s += v;
    Tensor x_t = x;
    return make_op_result({1}, {s}, {x}, [x_t](detail::TensorNode& node) {
        auto xn = x_t.node_ptr();
        if (!wants_grad(xn)) return;
        xn->ensure_grad();
        const double g = node.grad[0];
        for (double& v : xn->grad) v += g;
    });
}

Tensor l1_loss(const Tensor& pred, const Tensor& target, const ObservationMask& valid) {
    if (pred.shape() != target.shape()) {
        raise(Error::Kind::ShapeMismatch,
              "l1_loss pred " + shape_str(pred.shape()) + " vs target " + shape_str(target.shape()));
    }
    require_rank4(pred, "l1_loss pred");
    const int batch = pred.dim(0), c = pred.dim(1), h = pred.dim(2), w = pred.dim(3);
    if (valid.batch() != batch || valid.height() != h || valid.width() != w) {
        raise(Error::Kind::ShapeMismatch, "l1_loss mask does not match prediction dims");
    }
    const int64_t n_valid = valid.popcount() * c;
    if (n_valid == 0) {
        raise(Error::Kind::InvalidArgument, "l1_loss over an empty valid set");
    }
    const int64_t plane = static_cast<int64_t>(h) * w;
    double s = 0.0;
    for (int bi = 0; bi < batch; ++bi) {
        const double* m = valid.data().data() + static_cast<int64_t>(bi) * plane;
        for (int ci = 0; ci < c; ++ci) {
            const double* p = pred.data().data() + (static_cast<int64_t>(bi) * c + ci) * plane;
            const double* t = target.data().data() + (static_cast<int64_t>(bi) * c + ci) * plane;
            for (int64_t i = 0; i < plane; ++i) {
                if (m[i] != 0.0) s += std::abs(p[i] - t[i]);
            }
        }
    }
    Tensor p_t = pred, t_t = target;
    Tensor mask_t = valid.tensor();
    const double inv_n = 1.0 / static_cast<double>(n_valid);
    return make_op_result(
        {1}, {s * inv_n}, {pred, target},
        [p_t, t_t, mask_t, batch, c, plane, inv_n](detail::TensorNode& node) {
            auto pn = p_t.node_ptr();
            auto tn = t_t.node_ptr();
            const double g = node.grad[0] * inv_n;
            const bool need_dp = wants_grad(pn);
            const bool need_dt = wants_grad(tn);
            if (need_dp) pn->ensure_grad();
            if (need_dt) tn->ensure_grad();
            for (int bi = 0; bi < batch; ++bi) {
                const double* m = mask_t.data().data() + static_cast<int64_t>(bi) * plane;
                for (int ci = 0; ci < c; ++ci) {
                    const int64_t off = (static_cast<int64_t>(bi) * c + ci) * plane;
                    for (int64_t i = 0; i < plane; ++i) {
                        if (m[i] == 0.0) continue;
                        const double diff = pn->data[static_cast<size_t>(off + i)] -
                                            tn->data[static_cast<size_t>(off + i)];
                        const double sg = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
                        if (need_dp) pn->grad[static_cast<size_t>(off + i)] += g * sg;
                        if (need_dt) tn->grad[static_cast<size_t>(off + i)] -= g * sg;
                    }
                }
            }
        });
}

// ---- ParamGroup ----

size_t ParamGroup::index_of(const std::string& name) const {
    for (size_t i = 0; i < order_.size(); ++i) {
        if (order_[i] == name) return i;
    }
    raise(Error::Kind::InvalidArgument, "unknown parameter '" + name + "'");
}

void ParamGroup::add(const std::string& name, Tensor param) {
    for (const auto& existing : order_) {
        if (existing == name) {
            raise(Error::Kind::InvalidArgument, "duplicate parameter name '" + name + "'");
        }
    }
    param.set_requires_grad(true);
    order_.push_back(name);
    momentum_.push_back(std::make_shared<std::vector<double>>(param.numel(), 0.0));
    params_.push_back(std::move(param));
}

bool ParamGroup::contains(const std::string& name) const {
    return std::find(order_.begin(), order_.end(), name) != order_.end();
}

Tensor& ParamGroup::at(const std::string& name) { return params_[index_of(name)]; }
const Tensor& ParamGroup::at(const std::string& name) const { return params_[index_of(name)]; }
std::vector<double>& ParamGroup::momentum(const std::string& name) { return *momentum_[index_of(name)]; }

int64_t ParamGroup::param_count() const {
    int64_t n = 0;
    for (const auto& p : params_) n += p.numel();
    return n;
}

ParamGroup ParamGroup::filtered(const std::function<bool(const std::string&)>& keep) const {
    ParamGroup out;
    for (size_t i = 0; i < order_.size(); ++i) {
        if (keep(order_[i])) {
            out.order_.push_back(order_[i]);
            out.params_.push_back(params_[i]);
            out.momentum_.push_back(momentum_[i]);
        }
    }
    return out;
}

void ParamGroup::merge_from(const ParamGroup& other) {
    for (size_t i = 0; i < other.order_.size(); ++i) {
        for (const auto& existing : order_) {
            if (existing == other.order_[i]) {
                raise(Error::Kind::InvalidArgument,
                      "duplicate parameter name '" + other.order_[i] + "' in merge");
            }
        }
        order_.push_back(other.order_[i]);
        params_.push_back(other.params_[i]);
        momentum_.push_back(other.momentum_[i]);
    }
}

void sgd_step(ParamGroup& params, double lr, double momentum) {
    for (const auto& name : params.names()) {
        Tensor& p = params.at(name);
        if (!p.has_grad()) {
            raise(Error::Kind::InvalidArgument, "sgd_step: parameter '" + name + "' has no gradient");
        }
        auto& v = params.momentum(name);
        auto g = p.grad();
        auto data = p.data();
        for (int64_t i = 0; i < p.numel(); ++i) {
            const size_t idx = static_cast<size_t>(i);
            v[idx] = momentum * v[idx] + g[idx];
            data[idx] -= lr * v[idx];
        }
        p.zero_grad();
    }
}

} // namespace idfc

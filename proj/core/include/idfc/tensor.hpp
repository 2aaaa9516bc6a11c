// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "idfc/error.hpp"

namespace idfc {

namespace detail {

struct TensorNode {
    std::vector<int> shape;
    std::vector<double> data;
    std::vector<double> grad; // empty until backward touches this node
    bool requires_grad = false;
    bool consumed = false; // backward already ran through this node
    std::vector<std::shared_ptr<TensorNode>> parents;
    // Receives this node's grad, accumulates into the parents' grads.
    std::function<void(TensorNode&)> backward_fn;

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    void ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), 0.0);
    }
};

} // namespace detail

/// Dense N-dimensional double tensor with optional reverse-mode gradient
/// tracking. Copies are shallow (shared storage); use clone() for a deep
/// copy. Image tensors are laid out batch x channels x height x width,
/// row-major.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
    static Tensor full(std::vector<int> shape, double value, bool requires_grad = false);
    static Tensor from_data(std::vector<int> shape, std::vector<double> data,
                            bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const std::vector<int>& shape() const { return node_->shape; }
    int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
    int rank() const { return static_cast<int>(node_->shape.size()); }
    int64_t numel() const { return node_->numel(); }

    std::span<double> data() { return node_->data; }
    std::span<const double> data() const { return node_->data; }
    std::span<const double> grad() const;
    bool has_grad() const { return node_ && !node_->grad.empty(); }
    void zero_grad() { if (node_) node_->grad.assign(node_->data.size(), 0.0); }
    void drop_grad() { if (node_) node_->grad.clear(); }

    bool requires_grad() const { return node_ && node_->requires_grad; }
    void set_requires_grad(bool rg) { node_->requires_grad = rg; }

    /// Scalar read; errors unless numel() == 1.
    double value() const;

    Tensor clone() const;
    Tensor detach() const; // same storage, no graph, no grad tracking

    // Convenience accessors for 4-d image tensors.
    double& at(int b, int c, int h, int w);
    double at(int b, int c, int h, int w) const;

    detail::TensorNode* node() const { return node_.get(); }
    std::shared_ptr<detail::TensorNode> node_ptr() const { return node_; }

    friend void backward(const Tensor& loss);
    friend Tensor make_op_result(std::vector<int> shape, std::vector<double> data,
                                 std::vector<Tensor> parents,
                                 std::function<void(detail::TensorNode&)> backward_fn);

private:
    explicit Tensor(std::shared_ptr<detail::TensorNode> node) : node_(std::move(node)) {}
    std::shared_ptr<detail::TensorNode> node_;
};

class ObservationMask; // mask.hpp

// ---- Forward ops (all build graph edges when an input requires grad) ----

/// Cross-correlation of input BxCxHxW with weight OxCxKxK plus bias O.
/// K odd, pad >= 0, (H + 2*pad - K) divisible by stride.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, int pad);

Tensor relu(const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);
Tensor concat_channels(const Tensor& a, const Tensor& b);
Tensor slice_channels(const Tensor& x, int c_begin, int c_end);
Tensor nearest_upsample2x(const Tensor& x);
Tensor sum(const Tensor& x); // scalar

/// Mean absolute error over pixels where valid == 1. valid is Bx1xHxW and is
/// broadcast over pred's channels. Errors when no pixel is valid.
Tensor l1_loss(const Tensor& pred, const Tensor& target, const ObservationMask& valid);

/// Reverse-mode accumulation from a scalar loss. Gradients add into any
/// existing .grad buffers. The graph is freed as it is traversed; a second
/// backward through the same nodes is an error.
void backward(const Tensor& loss);

// ---- Parameters ----

/// Ordered name -> parameter map with per-parameter SGD momentum buffers.
/// Iteration order is insertion order, which makes serialization and update
/// sweeps deterministic.
class ParamGroup {
public:
    void add(const std::string& name, Tensor param);
    bool contains(const std::string& name) const;
    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
    std::vector<double>& momentum(const std::string& name);

    const std::vector<std::string>& names() const { return order_; }
    size_t size() const { return order_.size(); }
    bool empty() const { return order_.empty(); }
    int64_t param_count() const;

    /// Shallow view containing only names accepted by the predicate.
    ParamGroup filtered(const std::function<bool(const std::string&)>& keep) const;
    void merge_from(const ParamGroup& other);

private:
    std::vector<std::string> order_;
    std::vector<Tensor> params_;
    std::vector<std::shared_ptr<std::vector<double>>> momentum_;
    size_t index_of(const std::string& name) const;
};

/// v <- momentum * v + g;  w <- w - lr * v;  grads are zeroed afterwards.
/// A parameter with no populated gradient is an error (catches stepping a
/// group that was not part of the loss graph).
void sgd_step(ParamGroup& params, double lr, double momentum);

} // namespace idfc

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "idfc/tensor.hpp"

namespace idfc {

/// Compares reverse-mode gradients of a scalar-valued forward closure
/// against central finite differences (64-bit, default step 1e-5). The
/// closure must recompute the loss from the current contents of the checked
/// tensors, which is what keeps the numeric side independent of the
/// autodiff path. Returns the worst guarded relative error
/// |a - n| / max(|a|, |n|, 0.01).
double max_grad_rel_err(const std::function<Tensor()>& forward,
                        const std::vector<Tensor>& wrt, double step = 1e-5);

struct GradCheckReport {
    std::string name;
    double max_rel_err = 0.0;
    bool pass = false;
};

/// Runs the per-layer and end-to-end gradient suites. Filter is one of
/// "tensor", "layers", "model" or "all". Threshold is 1e-4.
std::vector<GradCheckReport> run_gradcheck(const std::string& filter);

} // namespace idfc

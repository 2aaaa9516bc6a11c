// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>

namespace idfc::detail {

// Fills a (C*K*K) x (out_h*out_w) column-major matrix with the window
// patches of one batch item; out-of-bounds taps read as zero.
void im2col(const double* img, int channels, int height, int width, int k, int stride,
            int pad, int out_h, int out_w, Eigen::MatrixXd& cols);

// Scatter-adds an im2col-shaped gradient matrix back into image layout.
void col2im_accumulate(const Eigen::MatrixXd& cols, double* img, int channels, int height,
                       int width, int k, int stride, int pad, int out_h, int out_w);

} // namespace idfc::detail

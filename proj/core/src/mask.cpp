// SPDX-License-Identifier: Apache-2.0
#include "idfc/mask.hpp"

#include <string>

namespace idfc {

ObservationMask ObservationMask::from_tensor(Tensor t) {
    if (t.rank() != 4 || t.dim(1) != 1) {
        raise(Error::Kind::ShapeMismatch, "observation mask must be Bx1xHxW");
    }
    if (t.requires_grad()) {
        raise(Error::Kind::InvalidArgument, "observation mask must not track gradients");
    }
    for (double v : t.data()) {
        if (v != 0.0 && v != 1.0) {
            raise(Error::Kind::InvalidArgument,
                  "non-binary mask value " + std::to_string(v));
        }
    }
    return ObservationMask(std::move(t));
}

ObservationMask ObservationMask::zeros(int batch, int height, int width) {
    return ObservationMask(Tensor::zeros({batch, 1, height, width}));
}

ObservationMask ObservationMask::ones(int batch, int height, int width) {
    return ObservationMask(Tensor::full({batch, 1, height, width}, 1.0));
}

void ObservationMask::set(int b, int h, int w, bool on) {
    t_.at(b, 0, h, w) = on ? 1.0 : 0.0;
}

int64_t ObservationMask::popcount() const {
    int64_t n = 0;
    for (double v : t_.data()) n += (v != 0.0) ? 1 : 0;
    return n;
}

ObservationMask mask_maxpool(const ObservationMask& mask, int k, int stride, int pad) {
    const int batch = mask.batch(), h = mask.height(), w = mask.width();
    const int eh = h + 2 * pad - k;
    const int ew = w + 2 * pad - k;
    if (k < 1 || stride < 1 || pad < 0 || eh < 0 || ew < 0) {
        raise(Error::Kind::InvalidArgument, "mask_maxpool window exceeds input dims");
    }
    const int out_h = eh / stride + 1;
    const int out_w = ew / stride + 1;
    ObservationMask out = ObservationMask::zeros(batch, out_h, out_w);
    Tensor out_t = out.tensor();
    for (int b = 0; b < batch; ++b) {
        for (int oh = 0; oh < out_h; ++oh) {
            for (int ow = 0; ow < out_w; ++ow) {
                double v = 0.0;
                for (int ki = 0; ki < k && v == 0.0; ++ki) {
                    const int ih = oh * stride - pad + ki;
                    if (ih < 0 || ih >= h) continue;
                    for (int kj = 0; kj < k; ++kj) {
                        const int iw = ow * stride - pad + kj;
                        if (iw < 0 || iw >= w) continue;
                        if (mask.at(b, ih, iw) != 0.0) {
                            v = 1.0;
                            break;
                        }
                    }
                }
                out_t.at(b, 0, oh, ow) = v;
            }
        }
    }
    return out;
}

} // namespace idfc

// SPDX-License-Identifier: Apache-2.0
#include "idfc/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "idfc/rng.hpp"

namespace idfc {

namespace {

struct Accumulator {
    double sq_sum = 0.0;
    double rel_sum = 0.0;
    int64_t within[3] = {0, 0, 0};
    int64_t count = 0;

    void add(double pred, double gt) {
        const double diff = pred - gt;
        sq_sum += diff * diff;
        if (gt <= 0.0) {
            raise(Error::Kind::InvalidArgument,
                  "metrics require positive ground truth at valid pixels");
        }
        rel_sum += std::abs(diff) / gt;
        if (pred > 0.0) {
            const double ratio = pred > gt ? pred / gt : gt / pred;
            double bound = 1.25;
            for (int j = 0; j < 3; ++j) {
                if (ratio <= bound) ++within[j];
                bound *= 1.25;
            }
        }
        // Nonpositive predictions count as delta failures.
        ++count;
    }

    MetricsReport report(int64_t frames) const {
        if (count == 0) {
            raise(Error::Kind::InvalidArgument, "metrics over an empty valid set");
        }
        MetricsReport r;
        const double n = static_cast<double>(count);
        r.rmse = std::sqrt(sq_sum / n);
        r.rel = rel_sum / n;
        r.delta1 = 100.0 * static_cast<double>(within[0]) / n;
        r.delta2 = 100.0 * static_cast<double>(within[1]) / n;
        r.delta3 = 100.0 * static_cast<double>(within[2]) / n;
        r.pixel_count = count;
        r.frame_count = frames;
        return r;
    }
};

void accumulate_frame(Accumulator& acc, const Tensor& pred, const Tensor& gt,
                      const ObservationMask& valid) {
    if (pred.shape() != gt.shape()) {
        raise(Error::Kind::ShapeMismatch, "metrics: prediction and ground truth shapes differ");
    }
    if (pred.rank() != 4 || pred.dim(1) != 1) {
        raise(Error::Kind::ShapeMismatch, "metrics expect Bx1xHxW depth maps");
    }
    if (valid.batch() != pred.dim(0) || valid.height() != pred.dim(2) ||
        valid.width() != pred.dim(3)) {
        raise(Error::Kind::ShapeMismatch, "metrics: valid mask does not match prediction dims");
    }
    const auto p = pred.data();
    const auto g = gt.data();
    const auto m = valid.data();
    for (int64_t i = 0; i < pred.numel(); ++i) {
        if (m[static_cast<size_t>(i)] != 0.0) {
            acc.add(p[static_cast<size_t>(i)], g[static_cast<size_t>(i)]);
        }
    }
}

uint64_t fnv1a(const std::string& s) {
    uint64_t h = 0xCBF29CE484222325ull;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001B3ull;
    }
    return h;
}

std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

} // namespace

double rmse(const Tensor& pred, const Tensor& gt, const ObservationMask& valid) {
    Accumulator acc;
    accumulate_frame(acc, pred, gt, valid);
    return acc.report(1).rmse;
}

double rel(const Tensor& pred, const Tensor& gt, const ObservationMask& valid) {
    Accumulator acc;
    accumulate_frame(acc, pred, gt, valid);
    return acc.report(1).rel;
}

double delta(const Tensor& pred, const Tensor& gt, const ObservationMask& valid, int j) {
    if (j < 1 || j > 3) raise(Error::Kind::InvalidArgument, "delta index must be 1, 2 or 3");
    Accumulator acc;
    accumulate_frame(acc, pred, gt, valid);
    const MetricsReport r = acc.report(1);
    return j == 1 ? r.delta1 : (j == 2 ? r.delta2 : r.delta3);
}

EvalResult evaluate(const std::vector<Frame>& frames, const SamplerConfig& cfg,
                    const ForwardFn& forward_fn) {
    if (frames.empty()) {
        raise(Error::Kind::InvalidArgument, "evaluate needs at least one frame");
    }
    EvalResult result;
    Accumulator pooled;
    for (const auto& frame : frames) {
        const Frame* f = &frame;
        Frame banded;
        if (cfg.mode == SampleMode::Band) {
            banded = band_crop(frame, cfg);
            f = &banded;
        }
        SamplerConfig per_frame = cfg;
        per_frame.mode = SampleMode::Uniform;
        per_frame.seed = mix_seed(cfg.seed, "eval-frame", fnv1a(frame.id));
        auto [sparse, mask] = uniform_sample(*f, per_frame);
        Tensor pred = forward_fn(*f, sparse, mask);

        Accumulator acc;
        accumulate_frame(acc, pred, f->depth_gt, f->valid_gt);
        const MetricsReport r = acc.report(1);
        result.frames.push_back(
            {frame.id, r.rmse, r.rel, r.delta1, r.delta2, r.delta3, r.pixel_count});
        accumulate_frame(pooled, pred, f->depth_gt, f->valid_gt);
    }
    result.pooled = pooled.report(static_cast<int64_t>(frames.size()));
    return result;
}

void write_report(const std::filesystem::path& path, const EvalResult& result) {
    std::ofstream out(path);
    if (!out) raise(Error::Kind::Io, "cannot write report " + path.string());
    out << "#totals are pixel-pooled across frames, not frame-averaged\n";
    out << "#frame_id\trmse\trel\td1\td2\td3\tn_pixels\n";
    for (const auto& f : result.frames) {
        out << f.frame_id << '\t' << fmt_double(f.rmse) << '\t' << fmt_double(f.rel) << '\t'
            << fmt_double(f.d1) << '\t' << fmt_double(f.d2) << '\t' << fmt_double(f.d3) << '\t'
            << f.pixels << '\n';
    }
    const auto& p = result.pooled;
    out << "pooled\t" << fmt_double(p.rmse) << '\t' << fmt_double(p.rel) << '\t'
        << fmt_double(p.delta1) << '\t' << fmt_double(p.delta2) << '\t' << fmt_double(p.delta3)
        << '\t' << p.pixel_count << '\n';
}

std::string format_report_table(const EvalResult& result) {
    std::ostringstream os;
    char line[160];
    std::snprintf(line, sizeof(line), "%-18s %10s %8s %7s %7s %7s %10s\n", "frame", "rmse(m)",
                  "rel", "d1(%)", "d2(%)", "d3(%)", "pixels");
    os << line;
    auto row = [&](const std::string& id, double rm, double re, double d1, double d2, double d3,
                   int64_t px) {
        std::snprintf(line, sizeof(line), "%-18s %10.4f %8.4f %7.2f %7.2f %7.2f %10lld\n",
                      id.c_str(), rm, re, d1, d2, d3, static_cast<long long>(px));
        os << line;
    };
    for (const auto& f : result.frames) row(f.frame_id, f.rmse, f.rel, f.d1, f.d2, f.d3, f.pixels);
    const auto& p = result.pooled;
    row("pooled", p.rmse, p.rel, p.delta1, p.delta2, p.delta3, p.pixel_count);
    return os.str();
}

} // namespace idfc

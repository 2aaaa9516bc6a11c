// SPDX-License-Identifier: Apache-2.0
//
// Command-line driver: dataset synthesis, training, evaluation, single-image
// inference, gradient checking and the fusion-ablation sweep.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "idfc/data.hpp"
#include "idfc/gradcheck.hpp"
#include "idfc/image_io.hpp"
#include "idfc/metrics.hpp"
#include "idfc/model.hpp"
#include "idfc/rng.hpp"
#include "idfc/train.hpp"

namespace {

using namespace idfc;

std::pair<int, int> parse_band(const std::string& s) {
    const size_t c = s.find(':');
    if (c == std::string::npos) {
        raise(Error::Kind::Parse, "band must look like TOP:BOTTOM, got '" + s + "'");
    }
    return {std::stoi(s.substr(0, c)), std::stoi(s.substr(c + 1))};
}

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

int cmd_synth(const std::string& out_dir, int frames, const std::string& size, uint64_t seed,
              int difficulty) {
    const size_t x = size.find('x');
    if (x == std::string::npos) {
        raise(Error::Kind::Parse, "--size must look like HxW, e.g. 64x64");
    }
    const int h = std::stoi(size.substr(0, x));
    const int w = std::stoi(size.substr(x + 1));
    generate_dataset(out_dir, frames, h, w, seed, difficulty);
    std::cout << "wrote " << frames << " frames (" << h << "x" << w << ") to " << out_dir << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& overrides) {
    TrainConfig cfg = read_train_config(config_path);
    for (const auto& o : overrides) apply_override(cfg, o);
    Checkpoint ckpt = train(cfg);
    std::cout << "trained " << ckpt.iteration << " iterations ("
              << to_string(cfg.model.variant) << ", " << ckpt.model.param_count()
              << " parameters); checkpoint: " << cfg.checkpoint_path << "\n";
    return 0;
}

ForwardFn forward_fn_for(const Model& model) {
    return [&model](const Frame& frame, const Tensor& sparse, const ObservationMask& mask) {
        return forward_any(model, frame.rgb, sparse, mask);
    };
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir, int64_t samples,
             const std::string& band, const std::string& report_path, const std::string& split) {
    Checkpoint ckpt = load_checkpoint(ckpt_path);
    std::vector<Frame> frames = load_split(data_dir, split);
    if (frames.empty()) {
        raise(Error::Kind::InvalidArgument, "no '" + split + "' frames in " + data_dir);
    }
    SamplerConfig cfg;
    cfg.samples = samples;
    cfg.seed = ckpt.config.sampler.seed;
    if (!band.empty()) {
        const auto [top, bottom] = parse_band(band);
        cfg.mode = SampleMode::Band;
        cfg.band_top = top;
        cfg.band_bottom = bottom;
    }
    EvalResult result = evaluate(frames, cfg, forward_fn_for(ckpt.model));
    std::cout << format_report_table(result);
    if (!report_path.empty()) {
        write_report(report_path, result);
        std::cout << "report written to " << report_path << "\n";
    }
    return 0;
}

int cmd_infer(const std::string& ckpt_path, const std::string& rgb_path,
              const std::string& sparse_path, bool mask_from_nonzero, const std::string& out_path) {
    Checkpoint ckpt = load_checkpoint(ckpt_path);
    Tensor rgb = read_ppm(rgb_path);
    Tensor sparse = read_pfm(sparse_path);
    if (sparse.dim(2) != rgb.dim(2) || sparse.dim(3) != rgb.dim(3)) {
        raise(Error::Kind::ShapeMismatch, "rgb and sparse depth dims differ");
    }
    ObservationMask mask = ObservationMask::zeros(1, sparse.dim(2), sparse.dim(3));
    if (mask_from_nonzero) {
        Tensor mt = mask.tensor();
        auto sd = sparse.data();
        auto md = mt.data();
        for (int64_t i = 0; i < sparse.numel(); ++i) {
            if (sd[static_cast<size_t>(i)] != 0.0) md[static_cast<size_t>(i)] = 1.0;
        }
    }
    Tensor pred = forward_any(ckpt.model, rgb, sparse, mask);
    write_pfm(out_path, pred);
    std::cout << "prediction written to " << out_path << " (" << mask.popcount()
              << " observed pixels)\n";
    return 0;
}

int cmd_gradcheck(const std::string& module) {
    const auto reports = run_gradcheck(module);
    double worst = 0.0;
    bool all_pass = true;
    for (const auto& r : reports) {
        std::printf("%-44s max rel err %.3e  %s\n", r.name.c_str(), r.max_rel_err,
                    r.pass ? "ok" : "FAIL");
        worst = std::max(worst, r.max_rel_err);
        all_pass = all_pass && r.pass;
    }
    std::printf("worst relative error: %.3e (%s)\n", worst, all_pass ? "pass" : "fail");
    return all_pass ? 0 : 1;
}

int cmd_ablate(const std::string& data_dir, const std::string& densities_csv,
               const std::string& variants_csv, const std::string& report_path, int epochs,
               uint64_t seed, int64_t train_samples, const std::string& work_dir,
               const std::vector<std::string>& overrides) {
    std::vector<int64_t> densities;
    for (const auto& d : split_csv(densities_csv)) densities.push_back(std::stoll(d));
    std::sort(densities.begin(), densities.end());
    std::vector<std::string> variants = split_csv(variants_csv);
    if (densities.empty() || variants.empty()) {
        raise(Error::Kind::InvalidArgument, "ablate needs at least one density and one variant");
    }

    std::vector<Frame> eval_frames = load_split(data_dir, "test");
    if (eval_frames.empty()) {
        raise(Error::Kind::InvalidArgument, "no test frames in " + data_dir);
    }

    std::filesystem::create_directories(work_dir);
    std::ostringstream report;
    report << "#variant\tdensity\trmse\trel\td1\td2\td3\tn_pixels\n";
    std::printf("%-14s %8s %10s %8s %7s\n", "variant", "density", "rmse(m)", "rel", "d1(%)");
    for (const auto& variant : variants) {
        TrainConfig cfg;
        cfg.dataset_dir = data_dir;
        cfg.checkpoint_path = (std::filesystem::path(work_dir) /
                               ("ablate_" + variant + ".ckpt")).string();
        cfg.epochs = epochs;
        cfg.seed = seed;
        cfg.sampler.samples = train_samples;
        for (const auto& o : overrides) apply_override(cfg, o);
        cfg.model.variant = variant_from_string(variant);
        Checkpoint ckpt = train(cfg);
        for (int64_t density : densities) {
            SamplerConfig sc;
            sc.samples = density;
            sc.seed = seed;
            EvalResult r = evaluate(eval_frames, sc, forward_fn_for(ckpt.model));
            const auto& p = r.pooled;
            report << variant << '\t' << density << '\t' << p.rmse << '\t' << p.rel << '\t'
                   << p.delta1 << '\t' << p.delta2 << '\t' << p.delta3 << '\t' << p.pixel_count
                   << '\n';
            std::printf("%-14s %8lld %10.4f %8.4f %7.2f\n", variant.c_str(),
                        static_cast<long long>(density), p.rmse, p.rel, p.delta1);
        }
    }
    if (!report_path.empty()) {
        std::ofstream out(report_path);
        if (!out) raise(Error::Kind::Io, "cannot write report " + report_path);
        out << report.str();
        std::cout << "report written to " << report_path << "\n";
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Depth completion from sparse depth and RGB via sparsity-invariant "
                 "convolutions and an inductive late-fusion block"};
    app.require_subcommand(1);

    auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset with manifest");
    std::string synth_out, synth_size = "64x64";
    int synth_frames = 50, synth_difficulty = 1;
    uint64_t synth_seed = 0;
    synth->add_option("--out", synth_out, "Output directory")->required();
    synth->add_option("--frames", synth_frames, "Number of frames");
    synth->add_option("--size", synth_size, "Frame size HxW (divisible by 8)");
    synth->add_option("--seed", synth_seed, "Master seed");
    synth->add_option("--difficulty", synth_difficulty, "Scene complexity 0..2");

    auto* train_cmd = app.add_subcommand("train", "Train a model from a config file");
    std::string train_config;
    std::vector<std::string> train_overrides;
    train_cmd->add_option("--config", train_config, "key=value config file")->required();
    train_cmd->add_option("--override", train_overrides, "key=value override (repeatable)");

    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
    std::string eval_ckpt, eval_data, eval_band, eval_report, eval_split = "test";
    int64_t eval_samples = 200;
    eval_cmd->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();
    eval_cmd->add_option("--data", eval_data, "Dataset directory")->required();
    eval_cmd->add_option("--samples", eval_samples, "Sparse samples per frame");
    eval_cmd->add_option("--band", eval_band, "Band rows TOP:BOTTOM (band mode)");
    eval_cmd->add_option("--report", eval_report, "Write the per-frame record file here");
    eval_cmd->add_option("--split", eval_split, "Dataset split (default test)");

    auto* infer = app.add_subcommand("infer", "Complete one sparse depth image");
    std::string infer_ckpt, infer_rgb, infer_sparse, infer_out;
    bool infer_mask_nonzero = false;
    infer->add_option("--checkpoint", infer_ckpt, "Checkpoint file")->required();
    infer->add_option("--rgb", infer_rgb, "RGB input (.ppm)")->required();
    infer->add_option("--sparse", infer_sparse, "Sparse depth input (.pfm)")->required();
    infer->add_flag("--mask-from-nonzero", infer_mask_nonzero,
                    "Treat nonzero sparse pixels as observed");
    infer->add_option("--out", infer_out, "Output depth map (.pfm)")->required();

    auto* gradcheck_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient suites");
    std::string gradcheck_module = "all";
    gradcheck_cmd->add_option("--module", gradcheck_module, "tensor | layers | model | all");

    auto* ablate = app.add_subcommand("ablate", "Train all fusion variants, sweep densities");
    std::string ab_data, ab_densities = "5,20,50,200";
    std::string ab_variants = "inductive,vanilla,context_only";
    std::string ab_report, ab_work = "ablate_work";
    int ab_epochs = 8;
    uint64_t ab_seed = 0;
    int64_t ab_train_samples = 20;
    std::vector<std::string> ab_overrides;
    ablate->add_option("--data", ab_data, "Dataset directory")->required();
    ablate->add_option("--densities", ab_densities, "Comma-separated sample counts");
    ablate->add_option("--variants", ab_variants, "Comma-separated variants");
    ablate->add_option("--report", ab_report, "Write the sweep records here");
    ablate->add_option("--epochs", ab_epochs, "Training epochs per variant");
    ablate->add_option("--seed", ab_seed, "Training seed");
    ablate->add_option("--train-samples", ab_train_samples, "Sparse samples during training");
    ablate->add_option("--work-dir", ab_work, "Where checkpoints land");
    ablate->add_option("--override", ab_overrides, "key=value training override (repeatable)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e); // --help
        app.exit(e);
        return 2;
    }

    try {
        if (*synth) return cmd_synth(synth_out, synth_frames, synth_size, synth_seed, synth_difficulty);
        if (*train_cmd) return cmd_train(train_config, train_overrides);
        if (*eval_cmd)
            return cmd_eval(eval_ckpt, eval_data, eval_samples, eval_band, eval_report, eval_split);
        if (*infer)
            return cmd_infer(infer_ckpt, infer_rgb, infer_sparse, infer_mask_nonzero, infer_out);
        if (*gradcheck_cmd) return cmd_gradcheck(gradcheck_module);
        if (*ablate)
            return cmd_ablate(ab_data, ab_densities, ab_variants, ab_report, ab_epochs, ab_seed,
                              ab_train_samples, ab_work, ab_overrides);
    } catch (const idfc::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}

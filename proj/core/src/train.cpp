// SPDX-License-Identifier: Apache-2.0
#include "idfc/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "idfc/rng.hpp"

namespace idfc {

void TrainConfig::validate() const {
    // lr == 0 is allowed: a zero-rate run must leave parameters unchanged.
    if (lr < 0.0) raise(Error::Kind::InvalidArgument, "lr must be nonnegative");
    if (momentum < 0.0 || momentum >= 1.0) {
        raise(Error::Kind::InvalidArgument, "momentum must lie in [0, 1)");
    }
    if (epochs < 1) raise(Error::Kind::InvalidArgument, "epochs must be >= 1");
    if (batch_size < 1) raise(Error::Kind::InvalidArgument, "batch_size must be >= 1");
    if (dataset_dir.empty()) raise(Error::Kind::InvalidArgument, "dataset directory not set");
    if (checkpoint_path.empty()) raise(Error::Kind::InvalidArgument, "checkpoint path not set");
    model.validate();
}

std::filesystem::path TrainConfig::loss_log() const {
    if (!loss_log_path.empty()) return loss_log_path;
    return checkpoint_path + ".loss.tsv";
}

namespace {

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

uint64_t parse_u64(const std::string& v, const std::string& key) {
    try {
        size_t pos = 0;
        const uint64_t r = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        raise(Error::Kind::Parse, "bad unsigned value '" + v + "' for key " + key);
    }
}

int parse_int_value(const std::string& v, const std::string& key) {
    try {
        size_t pos = 0;
        const int r = std::stoi(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        raise(Error::Kind::Parse, "bad integer value '" + v + "' for key " + key);
    }
}

double parse_double_value(const std::string& v, const std::string& key) {
    try {
        size_t pos = 0;
        const double r = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        raise(Error::Kind::Parse, "bad numeric value '" + v + "' for key " + key);
    }
}

bool parse_bool_value(const std::string& v, const std::string& key) {
    if (v == "1" || v == "true" || v == "on") return true;
    if (v == "0" || v == "false" || v == "off") return false;
    raise(Error::Kind::Parse, "bad boolean value '" + v + "' for key " + key);
}

void set_key(TrainConfig& c, const std::string& key, const std::string& value) {
    if (key == "lr") c.lr = parse_double_value(value, key);
    else if (key == "momentum") c.momentum = parse_double_value(value, key);
    else if (key == "epochs") c.epochs = parse_int_value(value, key);
    else if (key == "batch_size") c.batch_size = parse_int_value(value, key);
    else if (key == "seed") c.seed = parse_u64(value, key);
    else if (key == "augmentation") c.augmentation = parse_bool_value(value, key);
    else if (key == "resume") c.resume = parse_bool_value(value, key);
    else if (key == "stop_after") c.stop_after_iterations = parse_u64(value, key);
    else if (key == "loss_include_observed") c.loss_include_observed = parse_bool_value(value, key);
    else if (key == "samples") c.sampler.samples = parse_int_value(value, key);
    else if (key == "sample_mode") {
        if (value == "uniform") c.sampler.mode = SampleMode::Uniform;
        else if (value == "band") c.sampler.mode = SampleMode::Band;
        else raise(Error::Kind::Parse, "bad sample_mode '" + value + "'");
    } else if (key == "sampler_seed") c.sampler.seed = parse_u64(value, key);
    else if (key == "band_top") c.sampler.band_top = parse_int_value(value, key);
    else if (key == "band_bottom") c.sampler.band_bottom = parse_int_value(value, key);
    else if (key == "dataset") c.dataset_dir = value;
    else if (key == "checkpoint") c.checkpoint_path = value;
    else if (key == "loss_log") c.loss_log_path = value;
    else if (key == "variant") c.model.variant = variant_from_string(value);
    else if (key == "depth_encoder_layers") c.model.depth_encoder_layers = parse_int_value(value, key);
    else if (key == "aggregation_window") c.model.aggregation_window = parse_int_value(value, key);
    else if (key == "stem_channels") c.model.stem_channels = parse_int_value(value, key);
    else if (key == "enc1_channels") c.model.encoder_channels[0] = parse_int_value(value, key);
    else if (key == "enc2_channels") c.model.encoder_channels[1] = parse_int_value(value, key);
    else if (key == "enc3_channels") c.model.encoder_channels[2] = parse_int_value(value, key);
    else if (key == "context_channels") c.model.context_channels = parse_int_value(value, key);
    else if (key == "depth_channels") c.model.depth_channels = parse_int_value(value, key);
    else if (key == "fusion_channels") c.model.fusion_channels = parse_int_value(value, key);
    else raise(Error::Kind::Parse, "unknown config key '" + key + "'");
}

} // namespace

TrainConfig parse_train_config_text(const std::string& text) {
    TrainConfig cfg;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        size_t begin = line.find_first_not_of(" \t\r");
        if (begin == std::string::npos) continue;
        size_t end = line.find_last_not_of(" \t\r");
        line = line.substr(begin, end - begin + 1);
        const size_t eq = line.find('=');
        if (eq == std::string::npos) {
            raise(Error::Kind::Parse,
                  "config line " + std::to_string(line_no) + ": expected key=value");
        }
        set_key(cfg, line.substr(0, eq), line.substr(eq + 1));
    }
    return cfg;
}

TrainConfig read_train_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) raise(Error::Kind::Io, "cannot open config " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_train_config_text(ss.str());
}

void apply_override(TrainConfig& cfg, const std::string& assignment) {
    const size_t eq = assignment.find('=');
    if (eq == std::string::npos) {
        raise(Error::Kind::Parse, "override '" + assignment + "' is not key=value");
    }
    set_key(cfg, assignment.substr(0, eq), assignment.substr(eq + 1));
}

std::string serialize_train_config(const TrainConfig& c) {
    std::ostringstream os;
    os << "lr=" << fmt_double(c.lr) << '\n';
    os << "momentum=" << fmt_double(c.momentum) << '\n';
    os << "epochs=" << c.epochs << '\n';
    os << "batch_size=" << c.batch_size << '\n';
    os << "seed=" << c.seed << '\n';
    os << "augmentation=" << (c.augmentation ? 1 : 0) << '\n';
    os << "resume=" << (c.resume ? 1 : 0) << '\n';
    os << "stop_after=" << c.stop_after_iterations << '\n';
    os << "loss_include_observed=" << (c.loss_include_observed ? 1 : 0) << '\n';
    os << "samples=" << c.sampler.samples << '\n';
    os << "sample_mode=" << (c.sampler.mode == SampleMode::Band ? "band" : "uniform") << '\n';
    os << "sampler_seed=" << c.sampler.seed << '\n';
    os << "band_top=" << c.sampler.band_top << '\n';
    os << "band_bottom=" << c.sampler.band_bottom << '\n';
    os << "dataset=" << c.dataset_dir << '\n';
    os << "checkpoint=" << c.checkpoint_path << '\n';
    os << "loss_log=" << c.loss_log_path << '\n';
    os << "variant=" << to_string(c.model.variant) << '\n';
    os << "depth_encoder_layers=" << c.model.depth_encoder_layers << '\n';
    os << "aggregation_window=" << c.model.aggregation_window << '\n';
    os << "stem_channels=" << c.model.stem_channels << '\n';
    os << "enc1_channels=" << c.model.encoder_channels[0] << '\n';
    os << "enc2_channels=" << c.model.encoder_channels[1] << '\n';
    os << "enc3_channels=" << c.model.encoder_channels[2] << '\n';
    os << "context_channels=" << c.model.context_channels << '\n';
    os << "depth_channels=" << c.model.depth_channels << '\n';
    os << "fusion_channels=" << c.model.fusion_channels << '\n';
    return os.str();
}

namespace {

enum class Phase { Context, Depth, Joint };

const char* phase_name(Phase p) {
    switch (p) {
        case Phase::Context: return "context";
        case Phase::Depth: return "depth";
        case Phase::Joint: return "joint";
    }
    return "joint";
}

Tensor stack_batch(const std::vector<Tensor>& items) {
    const int c = items[0].dim(1), h = items[0].dim(2), w = items[0].dim(3);
    const int64_t per = static_cast<int64_t>(c) * h * w;
    std::vector<double> data(static_cast<size_t>(items.size()) * per);
    for (size_t i = 0; i < items.size(); ++i) {
        std::copy_n(items[i].data().data(), per, data.data() + static_cast<int64_t>(i) * per);
    }
    return Tensor::from_data({static_cast<int>(items.size()), c, h, w}, std::move(data));
}

std::string max_magnitude_param(const Model& model) {
    ParamGroup all = model.all_params();
    std::string worst = "<none>";
    double best = -1.0;
    for (const auto& name : all.names()) {
        for (double v : all.at(name).data()) {
            if (std::abs(v) > best) {
                best = std::abs(v);
                worst = name;
            }
        }
    }
    return worst + " (|w|=" + fmt_double(best) + ")";
}

} // namespace

Checkpoint train(const TrainConfig& cfg) {
    cfg.validate();
    std::vector<Frame> frames = load_split(cfg.dataset_dir, "train");
    if (frames.empty()) {
        raise(Error::Kind::InvalidArgument, "no train-split frames in " + cfg.dataset_dir);
    }
    for (const auto& f : frames) {
        if (f.height() != frames[0].height() || f.width() != frames[0].width()) {
            raise(Error::Kind::ShapeMismatch, "training frames must share dimensions");
        }
    }

    Model model;
    uint64_t start_iter = 0;
    if (cfg.resume) {
        Checkpoint prev = load_checkpoint(cfg.checkpoint_path);
        model = std::move(prev.model);
        start_iter = prev.iteration;
    } else {
        model = Model::init(cfg.model, mix_seed(cfg.seed, "init"));
    }

    const int n = static_cast<int>(frames.size());
    const int iters_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
    const uint64_t total = static_cast<uint64_t>(cfg.epochs) * iters_per_epoch;
    const bool fused = cfg.model.variant != ModelVariant::ContextOnly;
    const uint64_t ctx_end = fused ? total * 20 / 100 : 0;
    const uint64_t depth_end = fused ? total * 40 / 100 : 0;

    ParamGroup joint_group = model.joint_params();

    std::ofstream log(cfg.loss_log(), cfg.resume ? std::ios::app : std::ios::trunc);
    if (!log) raise(Error::Kind::Io, "cannot open loss log " + cfg.loss_log().string());

    const uint64_t stop_at =
        cfg.stop_after_iterations == 0 ? total : std::min(total, cfg.stop_after_iterations);
    uint64_t iter = 0;
    for (int epoch = 0; epoch < cfg.epochs && iter < stop_at; ++epoch) {
        for (int start = 0; start < n && iter < stop_at; start += cfg.batch_size) {
            if (iter < start_iter) {
                ++iter;
                continue;
            }
            const int batch_end = std::min(start + cfg.batch_size, n);
            std::vector<Tensor> rgbs, gts, sparses, masks, loss_masks;
            for (int i = start; i < batch_end; ++i) {
                Frame f = frames[static_cast<size_t>(i)];
                if (cfg.augmentation) {
                    f = augment(f, mix_seed(cfg.seed, "augment", static_cast<uint64_t>(i),
                                            static_cast<uint64_t>(epoch)));
                }
                if (cfg.sampler.mode == SampleMode::Band) f = band_crop(f, cfg.sampler);
                SamplerConfig sc = cfg.sampler;
                sc.mode = SampleMode::Uniform;
                sc.seed = mix_seed(cfg.seed, "sample", static_cast<uint64_t>(i),
                                   static_cast<uint64_t>(epoch));
                auto [sparse, mask] = uniform_sample(f, sc);
                Tensor loss_mask = f.valid_gt.tensor();
                if (!cfg.loss_include_observed) {
                    loss_mask = loss_mask.clone();
                    auto lm = loss_mask.data();
                    auto mm = mask.data();
                    for (int64_t p = 0; p < loss_mask.numel(); ++p) {
                        if (mm[static_cast<size_t>(p)] != 0.0) lm[static_cast<size_t>(p)] = 0.0;
                    }
                }
                rgbs.push_back(f.rgb);
                gts.push_back(f.depth_gt);
                sparses.push_back(sparse);
                masks.push_back(mask.tensor());
                loss_masks.push_back(loss_mask);
            }
            Tensor rgb = stack_batch(rgbs);
            Tensor gt = stack_batch(gts);
            Tensor sparse = stack_batch(sparses);
            ObservationMask mask = ObservationMask::from_tensor(stack_batch(masks));
            ObservationMask loss_mask = ObservationMask::from_tensor(stack_batch(loss_masks));

            const Phase phase =
                iter < ctx_end ? Phase::Context : (iter < depth_end ? Phase::Depth : Phase::Joint);
            Tensor pred;
            switch (phase) {
                case Phase::Context: pred = context_pretrain_forward(model, rgb); break;
                case Phase::Depth: pred = depth_pretrain_forward(model, sparse, mask); break;
                case Phase::Joint: pred = forward_any(model, rgb, sparse, mask); break;
            }
            Tensor loss = l1_loss(pred, gt, loss_mask);
            const double loss_v = loss.value();
            if (!std::isfinite(loss_v)) {
                raise(Error::Kind::NumericFailure,
                      "non-finite loss at iteration " + std::to_string(iter) +
                          "; max-magnitude parameter: " + max_magnitude_param(model));
            }
            log << iter << '\t' << phase_name(phase) << '\t' << fmt_double(loss_v) << '\n';
            backward(loss);
            switch (phase) {
                case Phase::Context: sgd_step(model.context_encoder, cfg.lr, cfg.momentum); break;
                case Phase::Depth: sgd_step(model.depth_encoder, cfg.lr, cfg.momentum); break;
                case Phase::Joint: sgd_step(joint_group, cfg.lr, cfg.momentum); break;
            }
            ++iter;
        }
    }
    log.flush();

    Checkpoint ckpt;
    ckpt.version = 1;
    ckpt.config = cfg;
    ckpt.model = std::move(model);
    ckpt.iteration = iter;
    ckpt.rng_state = mix_seed(cfg.seed, "rng-state", iter);
    save_checkpoint(ckpt, cfg.checkpoint_path);
    return ckpt;
}

} // namespace idfc

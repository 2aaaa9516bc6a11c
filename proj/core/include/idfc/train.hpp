// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "idfc/data.hpp"
#include "idfc/model.hpp"

namespace idfc {

struct TrainConfig {
    double lr = 0.01;
    double momentum = 0.9;
    int epochs = 10;
    int batch_size = 1;
    uint64_t seed = 0;
    bool augmentation = true;
    bool resume = false;
    // Halt after this many iterations while keeping the full-run phase
    // schedule (0 = run to completion). Resuming such a checkpoint with the
    // same config reproduces the uninterrupted run bitwise.
    uint64_t stop_after_iterations = 0;
    // Loss is over all valid ground-truth pixels, observed inputs included;
    // set false to restrict it to unobserved pixels.
    bool loss_include_observed = true;
    SamplerConfig sampler;
    std::string dataset_dir;
    std::string checkpoint_path;
    std::string loss_log_path; // default: checkpoint_path + ".loss.tsv"
    ModelConfig model;

    void validate() const;
    std::filesystem::path loss_log() const;
};

/// Config file format: UTF-8 `key=value` lines, '#' starts a comment.
TrainConfig parse_train_config_text(const std::string& text);
TrainConfig read_train_config(const std::filesystem::path& path);
/// `key=value` override; later overrides win.
void apply_override(TrainConfig& cfg, const std::string& assignment);
/// Canonical serialization (fixed key order); parse(serialize(c)) == c.
std::string serialize_train_config(const TrainConfig& cfg);

struct Checkpoint {
    uint32_t version = 1;
    TrainConfig config;
    Model model; // parameters plus momentum buffers
    uint64_t iteration = 0;
    uint64_t rng_state = 0;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Runs the three-phase schedule (context pretrain 20%, depth pretrain 20%,
/// joint 60%; context-only trains in a single phase) minimizing masked L1
/// loss with SGD. Sparse input and augmentation are redrawn per frame per
/// epoch from counter-derived seeds, so runs are deterministic and
/// resume-from-checkpoint reproduces an uninterrupted run bitwise. Writes
/// the checkpoint and a `iter<TAB>phase<TAB>loss` log.
Checkpoint train(const TrainConfig& cfg);

} // namespace idfc

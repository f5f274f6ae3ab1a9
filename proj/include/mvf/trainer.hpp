#pragma once

#include <filesystem>
#include <vector>

#include "mvf/model.hpp"

namespace mvf {

struct TrainerConfig {
    double initial_lr = 1.33e-3;
    double peak_lr = 1.5e-3;
    std::int64_t warmup_epochs = 1;
    std::int64_t total_epochs = 100;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    std::int64_t batch_size = 1;
    std::uint64_t rng_seed = 0;
    double grad_clip_norm = 10.0;        // <= 0 disables
    std::int64_t checkpoint_interval = 0;  // steps; 0 = final checkpoint only

    void validate() const;
};

/// Linear ramp initial->peak across the first epoch, then cosine decay from
/// peak to zero at total_epochs. Continuous at the junction.
double lr_at(std::int64_t step, std::int64_t steps_per_epoch, const TrainerConfig& cfg);

/// Bias-corrected Adam over named parameters; gradients are read from the
/// tensors' grad buffers. state.step counts applied updates.
void adam_step(std::map<std::string, Tensor>& params, AdamState& state, double lr,
               const TrainerConfig& cfg);

double global_grad_norm(const std::map<std::string, Tensor>& params);
void clip_gradients(std::map<std::string, Tensor>& params, double max_norm);

struct TrainScene {
    PointCloud cloud;
    std::vector<GroundTruthBox> boxes;
};

struct StepLog {
    std::int64_t step = 0;
    double loss_cls = 0.0;
    double loss_reg = 0.0;
    double lr = 0.0;
};

struct TrainResult {
    std::vector<StepLog> curve;
    std::filesystem::path checkpoint_path;
    std::filesystem::path curve_path;
};

/// Runs (total_epochs - resumed) epochs over the scenes in order, one batch
/// of `batch_size` scenes per step. Writes `curves.csv`
/// (step,loss_cls,loss_reg,lr) and `checkpoint.ckpt` (plus
/// `checkpoint_step%06d.ckpt` at intervals) into out_dir. Resuming from the
/// adam step recorded in `state` reproduces the uninterrupted run bitwise.
/// Throws NonFiniteLossError when a step produces a non-finite loss.
TrainResult train(DetectionModel& model, const std::vector<TrainScene>& scenes,
                  const TrainerConfig& tcfg, const LossConfig& lcfg,
                  const std::filesystem::path& out_dir, AdamState& state);

}  // namespace mvf

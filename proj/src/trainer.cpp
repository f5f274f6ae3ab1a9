#include "mvf/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "mvf/ops.hpp"

namespace mvf {

void TrainerConfig::validate() const {
    if (!(initial_lr > 0.0 && initial_lr <= peak_lr)) {
        throw ConfigError("trainer: need 0 < initial_lr <= peak_lr");
    }
    if (warmup_epochs < 0 || total_epochs < 1 || warmup_epochs > total_epochs) {
        throw ConfigError("trainer: need 0 <= warmup_epochs <= total_epochs");
    }
    if (batch_size < 1) throw ConfigError("trainer: batch size must be >= 1");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
        throw ConfigError("trainer: adam betas must lie in [0,1)");
    }
    if (adam_epsilon <= 0.0) throw ConfigError("trainer: adam epsilon must be positive");
}

double lr_at(std::int64_t step, std::int64_t steps_per_epoch, const TrainerConfig& cfg) {
    cfg.validate();
    if (steps_per_epoch < 1) throw ConfigError("lr_at: steps_per_epoch must be >= 1");
    if (step < 0) throw ConfigError("lr_at: step must be >= 0");
    const std::int64_t warm = cfg.warmup_epochs * steps_per_epoch;
    const std::int64_t total = cfg.total_epochs * steps_per_epoch;
    if (step < warm) {
        const double t = static_cast<double>(step) / static_cast<double>(warm);
        return cfg.initial_lr + (cfg.peak_lr - cfg.initial_lr) * t;
    }
    const std::int64_t decay_len = std::max<std::int64_t>(total - warm, 1);
    double t = static_cast<double>(step - warm) / static_cast<double>(decay_len);
    t = std::min(t, 1.0);
    return cfg.peak_lr * 0.5 * (1.0 + std::cos(kPi * t));
}

double global_grad_norm(const std::map<std::string, Tensor>& params) {
    double sq = 0.0;
    for (const auto& [name, t] : params) {
        for (double g : t.grad()) sq += g * g;
    }
    return std::sqrt(sq);
}

void clip_gradients(std::map<std::string, Tensor>& params, double max_norm) {
    if (max_norm <= 0.0) return;
    const double norm = global_grad_norm(params);
    if (norm <= max_norm || norm == 0.0) return;
    const double scale = max_norm / norm;
    for (auto& [name, t] : params) {
        auto& node = *t.node();
        for (double& g : node.grad) g *= scale;
    }
}

void adam_step(std::map<std::string, Tensor>& params, AdamState& state, double lr,
               const TrainerConfig& cfg) {
    const std::int64_t t = state.step + 1;
    const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(t));
    for (auto& [name, tensor] : params) {
        const auto n = static_cast<std::size_t>(tensor.numel());
        auto& m = state.m[name];
        auto& v = state.v[name];
        if (m.size() != n) m.assign(n, 0.0);
        if (v.size() != n) v.assign(n, 0.0);
        const std::vector<double>& g = tensor.grad();
        if (g.size() != n) throw ShapeMismatchError("adam_step: gradient size mismatch for " + name);
        double* p = tensor.data();
        for (std::size_t i = 0; i < n; ++i) {
            m[i] = cfg.adam_beta1 * m[i] + (1.0 - cfg.adam_beta1) * g[i];
            v[i] = cfg.adam_beta2 * v[i] + (1.0 - cfg.adam_beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p[i] -= lr * mhat / (std::sqrt(vhat) + cfg.adam_epsilon);
        }
    }
    state.step = t;
}

TrainResult train(DetectionModel& model, const std::vector<TrainScene>& scenes,
                  const TrainerConfig& tcfg, const LossConfig& lcfg,
                  const std::filesystem::path& out_dir, AdamState& state) {
    tcfg.validate();
    lcfg.validate();
    if (scenes.empty()) throw ConfigError("train: no scenes");
    std::filesystem::create_directories(out_dir);

    const auto num_scenes = static_cast<std::int64_t>(scenes.size());
    const std::int64_t steps_per_epoch =
        (num_scenes + tcfg.batch_size - 1) / tcfg.batch_size;
    const std::int64_t total = tcfg.total_epochs * steps_per_epoch;

    // The scenes are fixed, so targets are precomputed once.
    std::vector<TargetAssignment> targets;
    targets.reserve(scenes.size());
    for (const TrainScene& scene : scenes) {
        targets.push_back(
            assign_targets(model.anchors(), scene.boxes, lcfg.match_iou_hi, lcfg.match_iou_lo));
    }

    std::map<std::string, Tensor> params = model.parameters();

    TrainResult result;
    result.checkpoint_path = out_dir / "checkpoint.ckpt";
    result.curve_path = out_dir / "curves.csv";

    auto save_interval_checkpoint = [&](std::int64_t step) {
        char name[64];
        std::snprintf(name, sizeof(name), "checkpoint_step%06lld.ckpt",
                      static_cast<long long>(step));
        save_model(out_dir / name, model, &state);
    };

    for (std::int64_t step = state.step; step < total; ++step) {
        model.zero_grads();
        double cls_total = 0.0;
        double reg_total = 0.0;
        const double batch_scale = 1.0 / static_cast<double>(tcfg.batch_size);
        for (std::int64_t k = 0; k < tcfg.batch_size; ++k) {
            const auto scene_idx =
                static_cast<std::size_t>((step * tcfg.batch_size + k) % num_scenes);
            const TrainScene& scene = scenes[scene_idx];
            DetectionModel::Output out = model.forward(scene.cloud, /*train=*/true);
            Tensor probs = sigmoid(out.score_logits);
            Tensor cls = focal_loss(probs, targets[scene_idx], lcfg.focal_alpha, lcfg.focal_gamma);
            RegressionLossResult reg =
                regression_loss(out.residuals, targets[scene_idx], lcfg.smooth_l1_beta);
            Tensor scene_loss = mul_scalar(
                add(mul_scalar(cls, lcfg.cls_weight), mul_scalar(reg.loss, lcfg.reg_weight)),
                batch_scale);
            const double loss_value = scene_loss.value();
            if (!std::isfinite(loss_value)) {
                throw NonFiniteLossError(
                    "train: non-finite loss at step " + std::to_string(step), step);
            }
            scene_loss.backward();
            cls_total += cls.value() * batch_scale;
            reg_total += reg.loss.value() * batch_scale;
        }
        clip_gradients(params, tcfg.grad_clip_norm);
        const double lr = lr_at(step, steps_per_epoch, tcfg);
        adam_step(params, state, lr, tcfg);

        result.curve.push_back({step, cls_total, reg_total, lr});
        if (tcfg.checkpoint_interval > 0 && (step + 1) % tcfg.checkpoint_interval == 0 &&
            step + 1 < total) {
            save_interval_checkpoint(step + 1);
        }
    }

    save_model(result.checkpoint_path, model, &state);

    std::ostringstream curve;
    curve << "step,loss_cls,loss_reg,lr\n";
    for (const StepLog& row : result.curve) {
        curve << row.step << ',' << format_double(row.loss_cls) << ','
              << format_double(row.loss_reg) << ',' << format_double(row.lr) << '\n';
    }
    atomic_write_text(result.curve_path, curve.str());
    return result;
}

}  // namespace mvf

#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "mvf/detection.hpp"
#include "mvf/net.hpp"

namespace mvf {

/// Everything needed to rebuild a detection model; round-trips through
/// checkpoint meta lines.
struct ModelSpec {
    MvfConfig net;
    AnchorGridSpec anchors;
    int class_id = 0;
    std::uint64_t init_seed = 0;
};

std::map<std::string, std::string> model_spec_to_meta(const ModelSpec& spec);
ModelSpec model_spec_from_meta(const std::map<std::string, std::string>& meta);

/// MVF fusion net + reduced backbone + 1x1 detection head over one anchor
/// class. Head channels per cell: orientations x (1 score + 7 residuals).
class DetectionModel {
public:
    explicit DetectionModel(ModelSpec spec);

    const ModelSpec& spec() const { return spec_; }
    MvfNet& net() { return net_; }
    Backbone& backbone() { return backbone_; }
    const std::vector<AnchorBox>& anchors() const { return anchors_; }

    /// Merged trainable parameters (fusion net + backbone + head).
    std::map<std::string, Tensor> parameters() const;
    /// Parameters plus running-stat buffers, for checkpoints.
    std::map<std::string, Tensor> state_tensors() const;
    void zero_grads();

    struct Output {
        MvfNet::Forward fusion;
        Tensor head_features;  // [H,W,sum(backbone channels)]
        Tensor score_logits;   // [M]
        Tensor residuals;      // [M,7]
    };

    Output forward(const PointCloud& pc, bool train, bool zero_perspective = false);

    /// Eval-mode forward, decode, NMS. Empty or fully out-of-range clouds
    /// yield no detections.
    std::vector<DetectionBox> detect(const PointCloud& pc, const NmsConfig& nms);

private:
    ModelSpec spec_;
    MvfNet net_;
    ParamStore extra_params_;
    ParamStore extra_buffers_;
    Backbone backbone_;
    HeadConv head_;
    std::vector<AnchorBox> anchors_;
};

struct AdamState {
    std::map<std::string, std::vector<double>> m;
    std::map<std::string, std::vector<double>> v;
    std::int64_t step = 0;
};

void save_model(const std::filesystem::path& path, const DetectionModel& model,
                const AdamState* adam = nullptr,
                std::map<std::string, std::string> extra_meta = {});

struct LoadedModel {
    DetectionModel model;
    AdamState adam;  // zero-step when the checkpoint carries no optimizer
    std::map<std::string, std::string> meta;
};

LoadedModel load_model(const std::filesystem::path& path);

}  // namespace mvf

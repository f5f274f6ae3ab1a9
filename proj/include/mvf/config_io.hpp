#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mvf/detection.hpp"
#include "mvf/evaluator.hpp"
#include "mvf/model.hpp"
#include "mvf/point_cloud.hpp"
#include "mvf/trainer.hpp"

namespace mvf {

/// `mvf train` configuration: model + anchors + loss + trainer + data.
struct TrainConfig {
    std::uint64_t seed = 0;
    std::string class_name = "vehicle";
    ModelSpec model;  // class_id/init_seed filled from seed + class_name
    LossConfig loss;
    TrainerConfig trainer;
    SyntheticSceneSpec scene;
    std::size_t scene_count = 1;
};

/// `mvf eval` / `mvf detect` configuration.
struct EvalRunConfig {
    EvalConfig eval;                 // thresholds indexed by class id
    std::vector<IouMode> modes = {IouMode::Bev, IouMode::Full3d};
    NmsConfig nms;
};

GridSpec parse_grid_json(const std::string& text);
SyntheticSceneSpec parse_scene_json(const std::string& text, const ClassTable& classes);
TrainConfig parse_train_json(const std::string& text, const ClassTable& classes);
EvalRunConfig parse_eval_json(const std::string& text, const ClassTable& classes);

std::string grid_to_json(const GridSpec& grid);
std::string train_config_to_json(const TrainConfig& cfg, const ClassTable& classes);

std::string read_text_file(const std::filesystem::path& path);

}  // namespace mvf

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mvf/ops.hpp"
#include "mvf/point_cloud.hpp"
#include "mvf/tensor.hpp"
#include "mvf/voxelizer.hpp"

namespace mvf {

/// Named trainable tensors (or running-stat buffers). std::map keeps
/// iteration order deterministic for optimizers and checkpoints.
struct ParamStore {
    std::map<std::string, Tensor> items;

    Tensor add(const std::string& name, Tensor t) {
        if (!items.emplace(name, t).second) {
            throw ConfigError("duplicate parameter name: " + name);
        }
        return t;
    }
    Tensor& at(const std::string& name) {
        auto it = items.find(name);
        if (it == items.end()) throw ConfigError("unknown parameter: " + name);
        return it->second;
    }
    void zero_grads() {
        for (auto& [name, t] : items) t.zero_grad();
    }
};

struct MvfConfig {
    std::int64_t point_embed_dim = 128;
    std::int64_t view_feature_dim = 64;
    std::int64_t fused_output_dim = 64;
    GridSpec bev_grid = GridSpec::bev(16.0, 0.5, -3.0, 3.0);        // 64 x 64 desk default
    GridSpec persp_grid = GridSpec::perspective(64, 16, 60.0);      // 64 x 16 desk default
    std::int64_t tower_depth = 2;
    std::vector<std::int64_t> backbone_channels = {64, 128};

    void validate() const;
};

struct BatchNormLayer {
    Tensor gamma, beta, running_mean, running_var;
    double momentum = 0.1;
    double eps = 1e-5;

    Tensor forward(const Tensor& x, bool train) const {
        return batch_norm(x, gamma, beta, running_mean, running_var, train, momentum, eps);
    }
};

/// "FC layer" of the fusion net: linear + BN + ReLU.
struct DenseLayer {
    Tensor w, b;
    BatchNormLayer bn;

    Tensor forward(const Tensor& x, bool train) const {
        return relu(bn.forward(linear(x, w, b), train));
    }
};

struct ConvLayer {
    Tensor w, b;
    std::int64_t stride = 1;
    BatchNormLayer bn;
    bool relu_after = true;

    Tensor forward(const Tensor& x, bool train) const {
        Tensor y = bn.forward(conv2d(x, w, b, stride), train);
        return relu_after ? relu(y) : y;
    }
};

/// Stride-2 residual unit: 3x3/s2 + 3x3/s1 with a 1x1/s2 projection
/// shortcut, ReLU after the sum.
struct ResidualBlock {
    ConvLayer conv1;     // relu
    ConvLayer conv2;     // no relu (applied after the add)
    ConvLayer shortcut;  // 1x1, no relu

    Tensor forward(const Tensor& x, bool train) const {
        Tensor main = conv2.forward(conv1.forward(x, train), train);
        Tensor skip = shortcut.forward(x, train);
        return relu(add(main, skip));
    }
};

/// Fig. 4 tower: downsample to 1/2 ... 1/2^depth with residual blocks,
/// upsample everything back, concat with the skip path, 1x1 back to the
/// view feature width. Output spatial dims equal input dims.
struct ConvTower {
    std::vector<ResidualBlock> stages;
    ConvLayer out_proj;  // 1x1, relu

    Tensor forward(const Tensor& canvas, bool train) const;
};

struct ViewBranch {
    DenseLayer fc;  // point_embed_dim -> view_feature_dim
    ConvTower tower;

    /// view_encode: FC, scatter-max onto the dense view canvas, conv tower,
    /// gather back per point. Unmapped points come back as zeros.
    Tensor encode(const Tensor& point_feats, const VoxelMapping& mapping, const GridSpec& grid,
                  bool train) const;
};

/// Reduced-width PointPillars-style backbone: serial stride-2 blocks whose
/// outputs are upsampled back to the input resolution and concatenated.
struct Backbone {
    struct Block {
        ConvLayer down;  // 3x3 stride 2
        ConvLayer keep;  // 3x3 stride 1
        std::int64_t up_factor = 2;
    };
    std::vector<Block> blocks;

    Tensor forward(const Tensor& x, bool train) const;
};

/// Per-point inputs: offsets from the BEV cell center (3), offsets from the
/// frustum cell center in spherical coordinates (3), intensity (1).
/// Points unmapped in the perspective view get zero frustum offsets.
Tensor build_point_inputs(const PointCloud& pc, const VoxelMapping& bev_map,
                          const GridSpec& bev_grid, const VoxelMapping& persp_map,
                          const GridSpec& persp_grid);

class MvfNet {
public:
    MvfNet(MvfConfig cfg, std::uint64_t seed);

    const MvfConfig& config() const { return cfg_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }
    ParamStore& buffers() { return buffers_; }
    const ParamStore& buffers() const { return buffers_; }

    DenseLayer& shared_fc() { return shared_fc_; }
    ViewBranch& bev_branch() { return bev_branch_; }
    ViewBranch& persp_branch() { return persp_branch_; }
    DenseLayer& reduce_fc() { return reduce_fc_; }

    struct Forward {
        std::vector<std::int64_t> kept_indices;  // into the input cloud
        VoxelMapping bev_mapping;
        VoxelMapping persp_mapping;
        Tensor raw_inputs;        // [N,7]
        Tensor shared_embedding;  // [N,embed]
        Tensor bev_context;       // [N,view]
        Tensor persp_context;     // [N,view]
        Tensor fused_concat;      // [N,embed+2*view]
        Tensor point_fused;       // [N,fused]
        Tensor pseudo_image;      // [H,W,fused]
    };

    /// Full Fig. 3 pipeline. Points outside the BEV grid are excluded up
    /// front; `zero_perspective` replaces the perspective context with
    /// zeros (single-view reduction).
    Forward forward(const PointCloud& pc, bool train, bool zero_perspective = false) const;

private:
    MvfConfig cfg_;
    DenseLayer shared_fc_;
    ViewBranch bev_branch_;
    ViewBranch persp_branch_;
    DenseLayer reduce_fc_;
    ParamStore params_;
    ParamStore buffers_;
};

Backbone make_backbone(std::int64_t in_channels, const std::vector<std::int64_t>& channels,
                       ParamStore& params, ParamStore& buffers, Rng& rng,
                       const std::string& prefix);

/// Plain 1x1 conv producing per-anchor raw head outputs (no BN/ReLU).
struct HeadConv {
    Tensor w, b;

    Tensor forward(const Tensor& x) const { return conv2d(x, w, b, 1); }
};

HeadConv make_head_conv(std::int64_t in_channels, std::int64_t out_channels, ParamStore& params,
                        Rng& rng, const std::string& prefix);

// ---- checkpoints: text header per tensor + raw little-endian float64 ----

struct Checkpoint {
    std::map<std::string, Tensor> tensors;
    std::map<std::string, std::string> meta;
};

void save_checkpoint(const std::filesystem::path& path,
                     const std::map<std::string, Tensor>& tensors,
                     const std::map<std::string, std::string>& meta);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies checkpoint tensors into an existing store by name; shapes must
/// match. Missing names throw.
void load_into_store(ParamStore& store, const Checkpoint& ckpt);

}  // namespace mvf

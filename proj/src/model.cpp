#include "mvf/model.hpp"

#include <sstream>

namespace mvf {

namespace {

std::string doubles_to_string(std::span<const double> vals) {
    std::string out;
    for (std::size_t i = 0; i < vals.size(); ++i) {
        if (i) out += ' ';
        out += format_double(vals[i]);
    }
    return out;
}

std::vector<double> doubles_from_string(const std::string& s) {
    std::istringstream in(s);
    std::vector<double> out;
    double v;
    while (in >> v) out.push_back(v);
    return out;
}

std::string grid_to_string(const GridSpec& g) {
    std::ostringstream out;
    out << (g.view == ViewKind::Cartesian ? "cartesian" : "spherical");
    for (int a = 0; a < 3; ++a) out << ' ' << format_double(g.lower[static_cast<std::size_t>(a)]);
    for (int a = 0; a < 3; ++a) out << ' ' << format_double(g.upper[static_cast<std::size_t>(a)]);
    for (int a = 0; a < 3; ++a) out << ' ' << format_double(g.cell[static_cast<std::size_t>(a)]);
    for (int a = 0; a < 3; ++a) out << ' ' << (g.collapse[static_cast<std::size_t>(a)] ? 1 : 0);
    return out.str();
}

GridSpec grid_from_string(const std::string& s) {
    std::istringstream in(s);
    std::string view;
    GridSpec g;
    if (!(in >> view)) throw IoError("bad grid meta: " + s);
    if (view == "cartesian") {
        g.view = ViewKind::Cartesian;
    } else if (view == "spherical") {
        g.view = ViewKind::Spherical;
    } else {
        throw IoError("bad grid view in meta: " + view);
    }
    int flags[3];
    for (int a = 0; a < 3; ++a) in >> g.lower[static_cast<std::size_t>(a)];
    for (int a = 0; a < 3; ++a) in >> g.upper[static_cast<std::size_t>(a)];
    for (int a = 0; a < 3; ++a) in >> g.cell[static_cast<std::size_t>(a)];
    for (int a = 0; a < 3; ++a) in >> flags[a];
    if (!in) throw IoError("bad grid meta: " + s);
    for (int a = 0; a < 3; ++a) g.collapse[static_cast<std::size_t>(a)] = flags[a] != 0;
    return g;
}

const std::string& meta_at(const std::map<std::string, std::string>& meta,
                           const std::string& key) {
    auto it = meta.find(key);
    if (it == meta.end()) throw IoError("checkpoint meta is missing key: " + key);
    return it->second;
}

}  // namespace

std::map<std::string, std::string> model_spec_to_meta(const ModelSpec& spec) {
    std::map<std::string, std::string> meta;
    meta["model.point_embed_dim"] = std::to_string(spec.net.point_embed_dim);
    meta["model.view_feature_dim"] = std::to_string(spec.net.view_feature_dim);
    meta["model.fused_output_dim"] = std::to_string(spec.net.fused_output_dim);
    meta["model.tower_depth"] = std::to_string(spec.net.tower_depth);
    std::string channels;
    for (std::size_t i = 0; i < spec.net.backbone_channels.size(); ++i) {
        if (i) channels += ' ';
        channels += std::to_string(spec.net.backbone_channels[i]);
    }
    meta["model.backbone_channels"] = channels;
    meta["model.bev_grid"] = grid_to_string(spec.net.bev_grid);
    meta["model.persp_grid"] = grid_to_string(spec.net.persp_grid);
    meta["model.anchor_size"] = doubles_to_string(std::array<double, 4>{
        spec.anchors.length, spec.anchors.width, spec.anchors.height, spec.anchors.z_center});
    meta["model.anchor_orientations"] = doubles_to_string(spec.anchors.orientations);
    meta["model.class_id"] = std::to_string(spec.class_id);
    meta["model.init_seed"] = std::to_string(spec.init_seed);
    meta["model.concat_order"] = "shared,bev,persp";
    return meta;
}

ModelSpec model_spec_from_meta(const std::map<std::string, std::string>& meta) {
    ModelSpec spec;
    spec.net.point_embed_dim = std::stoll(meta_at(meta, "model.point_embed_dim"));
    spec.net.view_feature_dim = std::stoll(meta_at(meta, "model.view_feature_dim"));
    spec.net.fused_output_dim = std::stoll(meta_at(meta, "model.fused_output_dim"));
    spec.net.tower_depth = std::stoll(meta_at(meta, "model.tower_depth"));
    spec.net.backbone_channels.clear();
    {
        std::istringstream in(meta_at(meta, "model.backbone_channels"));
        std::int64_t c;
        while (in >> c) spec.net.backbone_channels.push_back(c);
    }
    spec.net.bev_grid = grid_from_string(meta_at(meta, "model.bev_grid"));
    spec.net.persp_grid = grid_from_string(meta_at(meta, "model.persp_grid"));
    const auto size = doubles_from_string(meta_at(meta, "model.anchor_size"));
    if (size.size() != 4) throw IoError("bad anchor size meta");
    spec.anchors.length = size[0];
    spec.anchors.width = size[1];
    spec.anchors.height = size[2];
    spec.anchors.z_center = size[3];
    spec.anchors.orientations = doubles_from_string(meta_at(meta, "model.anchor_orientations"));
    spec.class_id = std::stoi(meta_at(meta, "model.class_id"));
    spec.init_seed = std::stoull(meta_at(meta, "model.init_seed"));
    return spec;
}

DetectionModel::DetectionModel(ModelSpec spec)
    : spec_(std::move(spec)), net_(spec_.net, spec_.init_seed) {
    spec_.anchors.validate();
    // Offset stream so backbone/head draws are independent of the fusion
    // net's parameter count.
    Rng rng(spec_.init_seed ^ 0x9e3779b97f4a7c15ULL);
    std::int64_t backbone_out = 0;
    for (std::int64_t c : spec_.net.backbone_channels) backbone_out += c;
    backbone_ = make_backbone(spec_.net.fused_output_dim, spec_.net.backbone_channels,
                              extra_params_, extra_buffers_, rng, "backbone");
    const auto per_anchor = static_cast<std::int64_t>(spec_.anchors.orientations.size());
    head_ = make_head_conv(backbone_out, per_anchor * 8, extra_params_, rng, "head");
    anchors_ = generate_anchors(spec_.net.bev_grid, spec_.anchors);
}

std::map<std::string, Tensor> DetectionModel::parameters() const {
    std::map<std::string, Tensor> all = net_.params().items;
    all.insert(extra_params_.items.begin(), extra_params_.items.end());
    return all;
}

std::map<std::string, Tensor> DetectionModel::state_tensors() const {
    std::map<std::string, Tensor> all = parameters();
    all.insert(net_.buffers().items.begin(), net_.buffers().items.end());
    all.insert(extra_buffers_.items.begin(), extra_buffers_.items.end());
    return all;
}

void DetectionModel::zero_grads() {
    for (auto& [name, t] : parameters()) t.zero_grad();
}

DetectionModel::Output DetectionModel::forward(const PointCloud& pc, bool train,
                                               bool zero_perspective) {
    Output out;
    out.fusion = net_.forward(pc, train, zero_perspective);
    out.head_features = backbone_.forward(out.fusion.pseudo_image, train);
    Tensor raw = head_.forward(out.head_features);  // [H,W,A*8]
    const std::int64_t cells = raw.dim(0) * raw.dim(1);
    const auto per_anchor = static_cast<std::int64_t>(spec_.anchors.orientations.size());
    Tensor rows = reshape(raw, {cells * per_anchor, 8});
    out.score_logits = reshape(slice_last(rows, 0, 1), {cells * per_anchor});
    out.residuals = slice_last(rows, 1, 7);
    return out;
}

std::vector<DetectionBox> DetectionModel::detect(const PointCloud& pc, const NmsConfig& nms) {
    if (pc.empty()) return {};
    Output out = forward(pc, /*train=*/false);
    if (out.fusion.kept_indices.empty()) return {};
    return decode_and_nms(out.score_logits.values(), out.residuals.values(), anchors_,
                          spec_.class_id, nms);
}

void save_model(const std::filesystem::path& path, const DetectionModel& model,
                const AdamState* adam, std::map<std::string, std::string> extra_meta) {
    std::map<std::string, Tensor> tensors = model.state_tensors();
    std::map<std::string, std::string> meta = model_spec_to_meta(model.spec());
    for (auto& [k, v] : extra_meta) meta[k] = v;
    if (adam) {
        meta["adam.step"] = std::to_string(adam->step);
        for (const auto& [name, m] : adam->m) {
            tensors.emplace("adam.m." + name,
                            Tensor::from_data({static_cast<std::int64_t>(m.size())}, m));
        }
        for (const auto& [name, v] : adam->v) {
            tensors.emplace("adam.v." + name,
                            Tensor::from_data({static_cast<std::int64_t>(v.size())}, v));
        }
    }
    save_checkpoint(path, tensors, meta);
}

LoadedModel load_model(const std::filesystem::path& path) {
    Checkpoint ckpt = load_checkpoint(path);
    ModelSpec spec = model_spec_from_meta(ckpt.meta);
    LoadedModel out{DetectionModel(std::move(spec)), AdamState{}, ckpt.meta};

    std::map<std::string, Tensor> state = out.model.state_tensors();
    for (auto& [name, tensor] : state) {
        auto it = ckpt.tensors.find(name);
        if (it == ckpt.tensors.end()) throw IoError("checkpoint is missing tensor: " + name);
        if (it->second.shape() != tensor.shape()) {
            throw ShapeMismatchError("checkpoint shape mismatch for " + name);
        }
        tensor.values() = it->second.values();
    }

    if (auto it = ckpt.meta.find("adam.step"); it != ckpt.meta.end()) {
        out.adam.step = std::stoll(it->second);
        for (const auto& [name, tensor] : out.model.parameters()) {
            auto mit = ckpt.tensors.find("adam.m." + name);
            auto vit = ckpt.tensors.find("adam.v." + name);
            if (mit == ckpt.tensors.end() || vit == ckpt.tensors.end()) {
                throw IoError("checkpoint is missing optimizer state for " + name);
            }
            out.adam.m[name] = mit->second.values();
            out.adam.v[name] = vit->second.values();
        }
    }
    return out;
}

}  // namespace mvf

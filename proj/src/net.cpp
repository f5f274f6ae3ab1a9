#include "mvf/net.hpp"

#include <cstring>
#include <sstream>

namespace mvf {

void MvfConfig::validate() const {
    if (point_embed_dim < 1 || view_feature_dim < 1 || fused_output_dim < 1) {
        throw ConfigError("mvf config: feature dims must be >= 1");
    }
    bev_grid.validate();
    persp_grid.validate();
    if (tower_depth < 1) throw ConfigError("mvf config: tower depth must be >= 1");
    if (backbone_channels.empty()) throw ConfigError("mvf config: backbone needs channels");
    const std::int64_t div = std::int64_t{1} << tower_depth;
    for (const GridSpec* g : {&bev_grid, &persp_grid}) {
        const auto counts = g->cell_counts();
        for (int a = 0; a < 3; ++a) {
            if (g->collapse[static_cast<std::size_t>(a)]) continue;
            if (counts[static_cast<std::size_t>(a)] % div != 0) {
                throw ConfigError("mvf config: grid axis not divisible by 2^tower_depth");
            }
        }
    }
    const std::int64_t bdiv = std::int64_t{1} << static_cast<std::int64_t>(backbone_channels.size());
    const auto bev_counts = bev_grid.cell_counts();
    if (bev_counts[0] % bdiv != 0 || bev_counts[1] % bdiv != 0) {
        throw ConfigError("mvf config: BEV grid not divisible by the backbone stride");
    }
}

namespace {

Tensor kaiming_tensor(Rng& rng, std::vector<std::int64_t> shape, std::int64_t fan_in) {
    std::int64_t n = 1;
    for (std::int64_t d : shape) n *= d;
    std::vector<double> data(static_cast<std::size_t>(n));
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (double& v : data) v = stddev * rng.normal();
    return Tensor::from_data(std::move(shape), std::move(data), /*requires_grad=*/true);
}

BatchNormLayer make_bn(std::int64_t c, ParamStore& params, ParamStore& buffers,
                       const std::string& prefix) {
    BatchNormLayer bn;
    bn.gamma = params.add(prefix + ".gamma", Tensor::full({c}, 1.0, true));
    bn.beta = params.add(prefix + ".beta", Tensor::zeros({c}, true));
    bn.running_mean = buffers.add(prefix + ".running_mean", Tensor::zeros({c}));
    bn.running_var = buffers.add(prefix + ".running_var", Tensor::full({c}, 1.0));
    return bn;
}

DenseLayer make_dense(std::int64_t din, std::int64_t dout, ParamStore& params,
                      ParamStore& buffers, Rng& rng, const std::string& prefix) {
    DenseLayer layer;
    layer.w = params.add(prefix + ".w", kaiming_tensor(rng, {din, dout}, din));
    layer.b = params.add(prefix + ".b", Tensor::zeros({dout}, true));
    layer.bn = make_bn(dout, params, buffers, prefix + ".bn");
    return layer;
}

ConvLayer make_conv(std::int64_t cin, std::int64_t cout, std::int64_t k, std::int64_t stride,
                    bool relu_after, ParamStore& params, ParamStore& buffers, Rng& rng,
                    const std::string& prefix) {
    ConvLayer layer;
    layer.w = params.add(prefix + ".w", kaiming_tensor(rng, {k, k, cin, cout}, k * k * cin));
    layer.b = params.add(prefix + ".b", Tensor::zeros({cout}, true));
    layer.stride = stride;
    layer.bn = make_bn(cout, params, buffers, prefix + ".bn");
    layer.relu_after = relu_after;
    return layer;
}

ResidualBlock make_residual_block(std::int64_t c, ParamStore& params, ParamStore& buffers,
                                  Rng& rng, const std::string& prefix) {
    ResidualBlock block;
    block.conv1 = make_conv(c, c, 3, 2, true, params, buffers, rng, prefix + ".conv1");
    block.conv2 = make_conv(c, c, 3, 1, false, params, buffers, rng, prefix + ".conv2");
    block.shortcut = make_conv(c, c, 1, 2, false, params, buffers, rng, prefix + ".shortcut");
    return block;
}

ConvTower make_tower(std::int64_t c, std::int64_t depth, ParamStore& params, ParamStore& buffers,
                     Rng& rng, const std::string& prefix) {
    ConvTower tower;
    for (std::int64_t s = 0; s < depth; ++s) {
        tower.stages.push_back(
            make_residual_block(c, params, buffers, rng, prefix + ".stage" + std::to_string(s)));
    }
    tower.out_proj = make_conv(c * (depth + 1), c, 1, 1, true, params, buffers, rng,
                               prefix + ".out_proj");
    return tower;
}

}  // namespace

Tensor ConvTower::forward(const Tensor& canvas, bool train) const {
    std::vector<Tensor> paths;
    paths.push_back(canvas);  // skip path
    Tensor cur = canvas;
    std::int64_t factor = 1;
    for (const ResidualBlock& stage : stages) {
        cur = stage.forward(cur, train);
        factor *= 2;
        paths.push_back(bilinear_upsample(cur, factor));
    }
    return out_proj.forward(concat_features(paths), train);
}

Tensor ViewBranch::encode(const Tensor& point_feats, const VoxelMapping& mapping,
                          const GridSpec& grid, bool train) const {
    Tensor feats = fc.forward(point_feats, train);
    Tensor pooled = max_pool_segments(feats, mapping);
    std::vector<std::int64_t> cells;
    const auto [h, w] = canvas_cells(grid, mapping, cells);
    Tensor canvas = scatter_rows_to_grid(pooled, cells, h, w);
    Tensor context = tower.forward(canvas, train);
    Tensor rows = extract_rows_from_grid(context, cells);
    return gather_segments(rows, mapping);
}

Tensor Backbone::forward(const Tensor& x, bool train) const {
    std::vector<Tensor> outs;
    Tensor cur = x;
    for (const Block& block : blocks) {
        cur = block.keep.forward(block.down.forward(cur, train), train);
        outs.push_back(bilinear_upsample(cur, block.up_factor));
    }
    return concat_features(outs);
}

Backbone make_backbone(std::int64_t in_channels, const std::vector<std::int64_t>& channels,
                       ParamStore& params, ParamStore& buffers, Rng& rng,
                       const std::string& prefix) {
    Backbone bb;
    std::int64_t cin = in_channels;
    std::int64_t factor = 2;
    for (std::size_t i = 0; i < channels.size(); ++i) {
        const std::string p = prefix + ".block" + std::to_string(i);
        Backbone::Block block;
        block.down = make_conv(cin, channels[i], 3, 2, true, params, buffers, rng, p + ".down");
        block.keep = make_conv(channels[i], channels[i], 3, 1, true, params, buffers, rng,
                               p + ".keep");
        block.up_factor = factor;
        bb.blocks.push_back(block);
        cin = channels[i];
        factor *= 2;
    }
    return bb;
}

HeadConv make_head_conv(std::int64_t in_channels, std::int64_t out_channels, ParamStore& params,
                        Rng& rng, const std::string& prefix) {
    HeadConv head;
    head.w = params.add(prefix + ".w", kaiming_tensor(rng, {1, 1, in_channels, out_channels},
                                                      in_channels));
    head.b = params.add(prefix + ".b", Tensor::zeros({out_channels}, true));
    return head;
}

Tensor build_point_inputs(const PointCloud& pc, const VoxelMapping& bev_map,
                          const GridSpec& bev_grid, const VoxelMapping& persp_map,
                          const GridSpec& persp_grid) {
    const std::size_t n = pc.size();
    if (bev_map.num_points() != n || persp_map.num_points() != n) {
        throw InconsistentMappingError("build_point_inputs: mappings cover a different cloud");
    }
    std::vector<double> data(n * 7, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const Point& p = pc.points[i];
        double* row = data.data() + i * 7;
        const std::int64_t bev_slot = bev_map.point_to_voxel[i];
        if (bev_slot == kNoVoxel) {
            throw InconsistentMappingError(
                "build_point_inputs: point outside the BEV grid; filter before encoding");
        }
        const VoxelCoord& bc = bev_map.voxel_coords[static_cast<std::size_t>(bev_slot)];
        const double coords[3] = {p.x, p.y, p.z};
        for (int a = 0; a < 3; ++a) {
            row[a] = coords[a] - bev_grid.cell_center(a, bc.idx[static_cast<std::size_t>(a)]);
        }
        const std::int64_t sph_slot = persp_map.point_to_voxel[i];
        if (sph_slot != kNoVoxel) {
            SphericalPoint s = to_spherical(p);
            if (s.phi >= kPi) s.phi -= 2.0 * kPi;  // same fold as the voxelizer
            const VoxelCoord& sc = persp_map.voxel_coords[static_cast<std::size_t>(sph_slot)];
            const double sph[3] = {s.phi, s.theta, s.d};
            for (int a = 0; a < 3; ++a) {
                row[3 + a] =
                    sph[a] - persp_grid.cell_center(a, sc.idx[static_cast<std::size_t>(a)]);
            }
        }
        row[6] = p.intensity;
    }
    return Tensor::from_data({static_cast<std::int64_t>(n), 7}, std::move(data));
}

MvfNet::MvfNet(MvfConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(seed);
    shared_fc_ = make_dense(7, cfg_.point_embed_dim, params_, buffers_, rng, "net.shared_fc");
    bev_branch_.fc = make_dense(cfg_.point_embed_dim, cfg_.view_feature_dim, params_, buffers_,
                                rng, "net.bev.fc");
    bev_branch_.tower = make_tower(cfg_.view_feature_dim, cfg_.tower_depth, params_, buffers_,
                                   rng, "net.bev.tower");
    persp_branch_.fc = make_dense(cfg_.point_embed_dim, cfg_.view_feature_dim, params_, buffers_,
                                  rng, "net.persp.fc");
    persp_branch_.tower = make_tower(cfg_.view_feature_dim, cfg_.tower_depth, params_, buffers_,
                                     rng, "net.persp.tower");
    reduce_fc_ = make_dense(cfg_.point_embed_dim + 2 * cfg_.view_feature_dim,
                            cfg_.fused_output_dim, params_, buffers_, rng, "net.reduce_fc");
}

MvfNet::Forward MvfNet::forward(const PointCloud& pc, bool train, bool zero_perspective) const {
    Forward out;
    PointCloud kept;
    kept.frame_id = pc.frame_id;
    for (std::size_t i = 0; i < pc.size(); ++i) {
        if (assign_voxel(pc.points[i], cfg_.bev_grid)) {
            out.kept_indices.push_back(static_cast<std::int64_t>(i));
            kept.points.push_back(pc.points[i]);
        }
    }
    out.bev_mapping = dynamic_voxelize(kept, cfg_.bev_grid);
    out.persp_mapping = dynamic_voxelize(kept, cfg_.persp_grid);

    out.raw_inputs =
        build_point_inputs(kept, out.bev_mapping, cfg_.bev_grid, out.persp_mapping, cfg_.persp_grid);
    out.shared_embedding = shared_fc_.forward(out.raw_inputs, train);
    out.bev_context =
        bev_branch_.encode(out.shared_embedding, out.bev_mapping, cfg_.bev_grid, train);
    if (zero_perspective) {
        out.persp_context = Tensor::zeros(
            {static_cast<std::int64_t>(kept.size()), cfg_.view_feature_dim});
    } else {
        out.persp_context =
            persp_branch_.encode(out.shared_embedding, out.persp_mapping, cfg_.persp_grid, train);
    }
    // Fusion concat order is fixed: (shared, BEV context, perspective
    // context); recorded in checkpoint meta.
    out.fused_concat =
        concat_features({out.shared_embedding, out.bev_context, out.persp_context});
    out.point_fused = reduce_fc_.forward(out.fused_concat, train);

    // Pool the point features one last time into the BEV pseudo-image.
    Tensor pooled = max_pool_segments(out.point_fused, out.bev_mapping);
    std::vector<std::int64_t> cells;
    const auto [h, w] = canvas_cells(cfg_.bev_grid, out.bev_mapping, cells);
    out.pseudo_image = scatter_rows_to_grid(pooled, cells, h, w);
    return out;
}

void save_checkpoint(const std::filesystem::path& path,
                     const std::map<std::string, Tensor>& tensors,
                     const std::map<std::string, std::string>& meta) {
    AtomicFileWriter w(path, /*binary=*/true);
    std::ofstream& out = w.stream();
    out << "MVF-CHECKPOINT 1\n";
    for (const auto& [key, value] : meta) {
        if (key.find_first_of(" \n") != std::string::npos ||
            value.find('\n') != std::string::npos) {
            throw IoError("checkpoint meta keys must be single tokens, values single lines");
        }
        out << "meta " << key << ' ' << value << '\n';
    }
    for (const auto& [name, tensor] : tensors) {
        if (name.find_first_of(" \n") != std::string::npos) {
            throw IoError("checkpoint tensor names cannot contain spaces");
        }
        out << "tensor " << name << ' ' << tensor.rank();
        for (std::int64_t d : tensor.shape()) out << ' ' << d;
        out << '\n';
        out.write(reinterpret_cast<const char*>(tensor.data()),
                  static_cast<std::streamsize>(sizeof(double) * tensor.values().size()));
    }
    out << "end\n";
    w.commit();
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != "MVF-CHECKPOINT 1") {
        throw IoError("not a checkpoint file: " + path.string());
    }
    Checkpoint ckpt;
    while (std::getline(in, line)) {
        if (line == "end") return ckpt;
        std::istringstream ls(line);
        std::string kind;
        ls >> kind;
        if (kind == "meta") {
            std::string key;
            ls >> key;
            std::string value;
            std::getline(ls, value);
            if (!value.empty() && value.front() == ' ') value.erase(value.begin());
            ckpt.meta[key] = value;
        } else if (kind == "tensor") {
            std::string name;
            std::size_t rank = 0;
            if (!(ls >> name >> rank)) throw IoError("malformed tensor header: " + line);
            std::vector<std::int64_t> shape(rank);
            std::int64_t numel = 1;
            for (std::size_t i = 0; i < rank; ++i) {
                if (!(ls >> shape[i])) throw IoError("malformed tensor shape: " + line);
                numel *= shape[i];
            }
            std::vector<double> data(static_cast<std::size_t>(numel));
            in.read(reinterpret_cast<char*>(data.data()),
                    static_cast<std::streamsize>(sizeof(double) * data.size()));
            if (!in) throw TruncatedFileError("checkpoint payload truncated: " + path.string());
            ckpt.tensors.emplace(name, Tensor::from_data(std::move(shape), std::move(data)));
        } else {
            throw IoError("unexpected checkpoint line: " + line);
        }
    }
    throw TruncatedFileError("checkpoint missing end marker: " + path.string());
}

void load_into_store(ParamStore& store, const Checkpoint& ckpt) {
    for (auto& [name, tensor] : store.items) {
        auto it = ckpt.tensors.find(name);
        if (it == ckpt.tensors.end()) {
            throw IoError("checkpoint is missing tensor: " + name);
        }
        if (it->second.shape() != tensor.shape()) {
            throw ShapeMismatchError("checkpoint shape mismatch for " + name);
        }
        tensor.values() = it->second.values();
    }
}

}  // namespace mvf

#pragma once

#include <vector>

#include "mvf/tensor.hpp"
#include "mvf/voxelizer.hpp"

namespace mvf {

// Elementwise; same-shape operands only (bias addition inside linear is the
// one broadcast in the library).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& x);
Tensor add_scalar(const Tensor& x, double s);
Tensor mul_scalar(const Tensor& x, double s);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sin(const Tensor& x);
/// x^e elementwise; gradient assumes x > 0 when e is non-integral.
Tensor pow_scalar(const Tensor& x, double e);
/// Pass-through gradient strictly inside (lo, hi), zero outside.
Tensor clamp(const Tensor& x, double lo, double hi);
/// Elementwise 0.5 x^2 / beta for |x| <= beta, |x| - 0.5 beta above.
Tensor smooth_l1(const Tensor& x, double beta = 1.0);

Tensor sum(const Tensor& x);  // scalar

Tensor reshape(const Tensor& x, std::vector<std::int64_t> shape);
/// Slice [start, start+len) of the last axis.
Tensor slice_last(const Tensor& x, std::int64_t start, std::int64_t len);
/// Concatenation along the last axis; leading dims must agree.
Tensor concat_features(const std::vector<Tensor>& xs);

/// y = x W + b for x [N,Din], W [Din,Dout], b [Dout].
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

/// Normalizes over all leading axes per channel (last axis). Train mode
/// uses batch statistics (population variance) and folds them into the
/// running buffers with `momentum`; eval mode reads the running buffers.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  Tensor running_mean, Tensor running_var, bool train, double momentum = 0.1,
                  double eps = 1e-5);

/// x [H,W,Cin], w [kh,kw,Cin,Cout], b [Cout]; symmetric zero padding of
/// (kh-1)/2 and ceil output dims, so stride 1 preserves H x W and stride 2
/// halves them (rounding up).
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, std::int64_t stride = 1);

/// x [H,W,C] -> [H*factor, W*factor, C], half-pixel-aligned bilinear.
Tensor bilinear_upsample(const Tensor& x, std::int64_t factor);

/// Per-channel max over each voxel's member points: [N,D] -> [V,D].
/// Gradient flows to the argmax element; ties take the lowest point index.
Tensor max_pool_segments(const Tensor& x, const VoxelMapping& mapping);
/// Broadcast voxel rows back to points: [V,D] -> [N,D]; unmapped points
/// (kNoVoxel) receive zeros.
Tensor gather_segments(const Tensor& v, const VoxelMapping& mapping);

/// Place voxel rows onto a dense zero canvas: [V,D] -> [H,W,D] using
/// per-voxel cell ids (iy*W+ix style, caller-computed, distinct).
Tensor scatter_rows_to_grid(const Tensor& v, const std::vector<std::int64_t>& cells,
                            std::int64_t h, std::int64_t w);
/// Read the voxel rows back out of a canvas: [H,W,D] -> [V,D].
Tensor extract_rows_from_grid(const Tensor& canvas, const std::vector<std::int64_t>& cells);

/// The two non-collapsed grid axes as a canvas: height axis first.
/// Returns {H, W} and fills `cells` with each voxel's flattened cell id.
std::pair<std::int64_t, std::int64_t> canvas_cells(const GridSpec& grid,
                                                   const VoxelMapping& mapping,
                                                   std::vector<std::int64_t>& cells);

}  // namespace mvf

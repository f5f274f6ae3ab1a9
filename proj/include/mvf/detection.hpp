#pragma once

#include <span>
#include <vector>

#include "mvf/box.hpp"
#include "mvf/evaluator.hpp"
#include "mvf/tensor.hpp"
#include "mvf/voxelizer.hpp"

namespace mvf {

/// Regression residuals between a ground-truth box and an anchor:
/// dx = (x_g - x_a)/d_a, dy likewise, dz = (z_g - z_a)/h_a,
/// dl = log(l_g/l_a) (dw, dh likewise), dtheta = yaw_g - yaw_a,
/// with d_a the anchor base diagonal sqrt(l_a^2 + w_a^2).
struct ResidualVector {
    double dx = 0.0, dy = 0.0, dz = 0.0;
    double dl = 0.0, dw = 0.0, dh = 0.0;
    double dtheta = 0.0;
};

ResidualVector encode_residual(const Box3& gt, const AnchorBox& anchor);
/// Exact algebraic inverse; the decoded yaw is normalized to (-pi, pi].
Box3 decode_residual(const ResidualVector& r, const AnchorBox& anchor);

/// One anchor set per BEV cell per orientation, centered on the cell.
struct AnchorGridSpec {
    double length = 4.5;
    double width = 2.0;
    double height = 1.6;
    double z_center = 0.0;
    std::vector<double> orientations = {0.0, kPi / 2.0};

    void validate() const;
};

/// Anchor order matches the head layout: axis0-major over cells, then
/// orientation. The feature-map stride in meters is the grid cell size.
std::vector<AnchorBox> generate_anchors(const GridSpec& bev_grid, const AnchorGridSpec& spec);

enum class AnchorLabel : std::int8_t { Negative = -1, Ignore = 0, Positive = 1 };

struct TargetAssignment {
    std::vector<AnchorLabel> labels;
    std::vector<std::int64_t> matched_gt;    // -1 unless positive
    std::vector<ResidualVector> residuals;   // valid where positive
    std::size_t num_positive = 0;
};

/// BEV rotated-IoU matching: IoU >= hi makes an anchor positive for its
/// argmax ground truth, IoU < lo negative, otherwise ignored; every ground
/// truth is additionally force-matched to its best anchor.
TargetAssignment assign_targets(std::span<const AnchorBox> anchors,
                                std::span<const GroundTruthBox> gts, double match_iou_hi,
                                double match_iou_lo);

struct LossConfig {
    double focal_alpha = 0.25;
    double focal_gamma = 2.0;
    double smooth_l1_beta = 1.0;
    double cls_weight = 1.0;
    double reg_weight = 2.0;
    double match_iou_hi = 0.6;
    double match_iou_lo = 0.45;

    void validate() const;
};

struct RegressionLossResult {
    Tensor loss;  // scalar
    bool empty_positives = false;
};

/// Eq.-style regression loss: smooth-L1 over the six geometric residual
/// differences plus smooth-L1 of sin(dtheta_pred - dtheta_target), averaged
/// over positive anchors (zero, flagged, when there are none).
RegressionLossResult regression_loss(const Tensor& pred, const TargetAssignment& assignment,
                                     double smooth_l1_beta = 1.0);

/// Focal loss on positive-anchor probabilities (clamped to
/// [1e-7, 1 - 1e-7]): -alpha (1-p)^gamma log p for positives and the
/// mirrored term for negatives, normalized by max(1, #positives).
/// `labels` uses +1 positive, -1 negative, 0 ignored.
Tensor focal_loss(const Tensor& probs, const std::vector<AnchorLabel>& labels, double alpha,
                  double gamma);
Tensor focal_loss(const Tensor& probs, const TargetAssignment& assignment, double alpha,
                  double gamma);

struct NmsConfig {
    double score_threshold = 0.05;
    double nms_iou = 0.5;
    std::size_t max_output = 200;

    void validate() const;
};

/// Sigmoid scores, threshold, decode against anchors, greedy BEV
/// rotated-IoU suppression; output sorted by descending score.
std::vector<DetectionBox> decode_and_nms(std::span<const double> score_logits,
                                         std::span<const double> residuals,
                                         std::span<const AnchorBox> anchors, int class_id,
                                         const NmsConfig& cfg);

/// Detections file: one `class score x y z l w h yaw` line per box.
void write_detections(std::ostream& out, std::span<const DetectionBox> dets,
                      const ClassTable& classes);
std::vector<DetectionBox> read_detections(std::istream& in, const ClassTable& classes);

}  // namespace mvf

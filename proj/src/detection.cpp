#include "mvf/detection.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "mvf/ops.hpp"

namespace mvf {

ResidualVector encode_residual(const Box3& gt, const AnchorBox& anchor) {
    const double diag = std::hypot(anchor.l, anchor.w);
    if (diag <= 0.0 || anchor.h <= 0.0) {
        throw DegenerateAnchorError("encode_residual: anchor has zero diagonal or height");
    }
    if (gt.l <= 0.0 || gt.w <= 0.0 || gt.h <= 0.0) {
        throw DegenerateAnchorError("encode_residual: ground truth has non-positive size");
    }
    ResidualVector r;
    r.dx = (gt.x - anchor.x) / diag;
    r.dy = (gt.y - anchor.y) / diag;
    r.dz = (gt.z - anchor.z) / anchor.h;
    r.dl = std::log(gt.l / anchor.l);
    r.dw = std::log(gt.w / anchor.w);
    r.dh = std::log(gt.h / anchor.h);
    r.dtheta = gt.yaw - anchor.yaw;
    return r;
}

Box3 decode_residual(const ResidualVector& r, const AnchorBox& anchor) {
    const double diag = std::hypot(anchor.l, anchor.w);
    Box3 b;
    b.x = r.dx * diag + anchor.x;
    b.y = r.dy * diag + anchor.y;
    b.z = r.dz * anchor.h + anchor.z;
    b.l = anchor.l * std::exp(r.dl);
    b.w = anchor.w * std::exp(r.dw);
    b.h = anchor.h * std::exp(r.dh);
    b.yaw = wrap_angle(r.dtheta + anchor.yaw);
    return b;
}

void AnchorGridSpec::validate() const {
    if (length <= 0.0 || width <= 0.0 || height <= 0.0) {
        throw ConfigError("anchor spec: sizes must be positive");
    }
    if (orientations.empty()) throw ConfigError("anchor spec: orientations must be non-empty");
}

std::vector<AnchorBox> generate_anchors(const GridSpec& bev_grid, const AnchorGridSpec& spec) {
    spec.validate();
    const auto counts = bev_grid.cell_counts();
    std::vector<AnchorBox> anchors;
    anchors.reserve(static_cast<std::size_t>(counts[0] * counts[1]) * spec.orientations.size());
    for (std::int64_t ix = 0; ix < counts[0]; ++ix) {
        for (std::int64_t iy = 0; iy < counts[1]; ++iy) {
            for (double yaw : spec.orientations) {
                AnchorBox a;
                a.x = bev_grid.cell_center(0, ix);
                a.y = bev_grid.cell_center(1, iy);
                a.z = spec.z_center;
                a.l = spec.length;
                a.w = spec.width;
                a.h = spec.height;
                a.yaw = wrap_angle(yaw);
                anchors.push_back(a);
            }
        }
    }
    return anchors;
}

TargetAssignment assign_targets(std::span<const AnchorBox> anchors,
                                std::span<const GroundTruthBox> gts, double match_iou_hi,
                                double match_iou_lo) {
    if (!(0.0 <= match_iou_lo && match_iou_lo <= match_iou_hi && match_iou_hi <= 1.0)) {
        throw ConfigError("assign_targets: need 0 <= lo <= hi <= 1");
    }
    const auto na = static_cast<std::int64_t>(anchors.size());
    const auto ng = static_cast<std::int64_t>(gts.size());

    TargetAssignment out;
    out.labels.assign(anchors.size(), AnchorLabel::Negative);
    out.matched_gt.assign(anchors.size(), -1);
    out.residuals.assign(anchors.size(), ResidualVector{});

    std::vector<double> iou(static_cast<std::size_t>(na * std::max<std::int64_t>(ng, 1)), 0.0);
#pragma omp parallel for schedule(static)
    for (std::int64_t a = 0; a < na; ++a) {
        for (std::int64_t g = 0; g < ng; ++g) {
            iou[static_cast<std::size_t>(a * ng + g)] =
                bev_iou(anchors[static_cast<std::size_t>(a)], gts[static_cast<std::size_t>(g)].box);
        }
    }

    for (std::int64_t a = 0; a < na; ++a) {
        double best = 0.0;
        std::int64_t best_gt = -1;
        for (std::int64_t g = 0; g < ng; ++g) {
            const double v = iou[static_cast<std::size_t>(a * ng + g)];
            if (v > best) {  // ties keep the lowest gt index
                best = v;
                best_gt = g;
            }
        }
        if (best_gt >= 0 && best >= match_iou_hi) {
            out.labels[static_cast<std::size_t>(a)] = AnchorLabel::Positive;
            out.matched_gt[static_cast<std::size_t>(a)] = best_gt;
        } else if (best >= match_iou_lo) {
            out.labels[static_cast<std::size_t>(a)] = AnchorLabel::Ignore;
        }
    }

    // Force-match every ground truth to its best anchor, overriding the
    // threshold pass; on a contested anchor the higher IoU wins (lowest gt
    // index on exact ties).
    std::vector<std::int64_t> force_gt(anchors.size(), -1);
    std::vector<double> force_iou(anchors.size(), -1.0);
    for (std::int64_t g = 0; g < ng; ++g) {
        double best = -1.0;
        std::int64_t best_anchor = -1;
        for (std::int64_t a = 0; a < na; ++a) {
            const double v = iou[static_cast<std::size_t>(a * ng + g)];
            if (v > best) {
                best = v;
                best_anchor = a;
            }
        }
        if (best_anchor >= 0 && best > 0.0) {
            const auto ai = static_cast<std::size_t>(best_anchor);
            if (best > force_iou[ai]) {
                force_iou[ai] = best;
                force_gt[ai] = g;
            }
        }
    }
    for (std::int64_t a = 0; a < na; ++a) {
        const auto ai = static_cast<std::size_t>(a);
        if (force_gt[ai] >= 0) {
            out.labels[ai] = AnchorLabel::Positive;
            out.matched_gt[ai] = force_gt[ai];
        }
    }

    for (std::size_t a = 0; a < anchors.size(); ++a) {
        if (out.labels[a] == AnchorLabel::Positive) {
            out.residuals[a] =
                encode_residual(gts[static_cast<std::size_t>(out.matched_gt[a])].box, anchors[a]);
            ++out.num_positive;
        }
    }
    return out;
}

void LossConfig::validate() const {
    if (!(focal_alpha > 0.0 && focal_alpha < 1.0)) {
        throw ConfigError("loss: focal alpha must be in (0,1)");
    }
    if (focal_gamma < 0.0) throw ConfigError("loss: focal gamma must be >= 0");
    if (smooth_l1_beta <= 0.0) throw ConfigError("loss: smooth-L1 beta must be positive");
}

RegressionLossResult regression_loss(const Tensor& pred, const TargetAssignment& assignment,
                                     double smooth_l1_beta) {
    if (pred.rank() != 2 || pred.dim(1) != 7) {
        throw ShapeMismatchError("regression_loss: expects predictions [M,7]");
    }
    const auto m = static_cast<std::size_t>(pred.dim(0));
    if (m != assignment.labels.size()) {
        throw ShapeMismatchError("regression_loss: assignment covers a different anchor count");
    }

    RegressionLossResult out;
    if (assignment.num_positive == 0) {
        out.loss = Tensor::scalar(0.0);
        out.empty_positives = true;
        return out;
    }

    std::vector<double> target(m * 7, 0.0);
    std::vector<double> mask(m * 7, 0.0);
    for (std::size_t a = 0; a < m; ++a) {
        if (assignment.labels[a] != AnchorLabel::Positive) continue;
        const ResidualVector& r = assignment.residuals[a];
        const double vals[7] = {r.dx, r.dy, r.dz, r.dl, r.dw, r.dh, r.dtheta};
        for (int k = 0; k < 7; ++k) {
            target[a * 7 + static_cast<std::size_t>(k)] = vals[k];
            mask[a * 7 + static_cast<std::size_t>(k)] = 1.0;
        }
    }
    const auto mi = static_cast<std::int64_t>(m);
    Tensor target_t = Tensor::from_data({mi, 7}, std::move(target));
    Tensor mask_t = Tensor::from_data({mi, 7}, std::move(mask));

    Tensor diff = sub(pred, target_t);
    // Geometric residuals take plain smooth-L1; the angle takes
    // smooth-L1(sin(diff)) so theta and theta+pi cost the same.
    Tensor geo = smooth_l1(slice_last(diff, 0, 6), smooth_l1_beta);
    Tensor ang = smooth_l1(sin(slice_last(diff, 6, 1)), smooth_l1_beta);
    Tensor per_term = concat_features({geo, ang});
    Tensor masked = mul(per_term, mask_t);
    out.loss = mul_scalar(sum(masked), 1.0 / static_cast<double>(assignment.num_positive));
    return out;
}

Tensor focal_loss(const Tensor& probs, const std::vector<AnchorLabel>& labels, double alpha,
                  double gamma) {
    if (probs.rank() != 1 || static_cast<std::size_t>(probs.dim(0)) != labels.size()) {
        throw ShapeMismatchError("focal_loss: probs [M] must match the label count");
    }
    const auto m = static_cast<std::int64_t>(labels.size());
    std::size_t num_positive = 0;
    std::vector<double> pos_mask(labels.size(), 0.0);
    std::vector<double> neg_mask(labels.size(), 0.0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == AnchorLabel::Positive) {
            pos_mask[i] = 1.0;
            ++num_positive;
        } else if (labels[i] == AnchorLabel::Negative) {
            neg_mask[i] = 1.0;
        }
    }
    Tensor pos_mask_t = Tensor::from_data({m}, std::move(pos_mask));
    Tensor neg_mask_t = Tensor::from_data({m}, std::move(neg_mask));

    Tensor p = clamp(probs, 1e-7, 1.0 - 1e-7);
    Tensor one_minus_p = add_scalar(neg(p), 1.0);
    // positives: -alpha (1-p)^gamma log p
    Tensor pos_term = mul_scalar(mul(pow_scalar(one_minus_p, gamma), log(p)), -alpha);
    // negatives: -(1-alpha) p^gamma log(1-p)
    Tensor neg_term =
        mul_scalar(mul(pow_scalar(p, gamma), log(one_minus_p)), -(1.0 - alpha));
    Tensor total = add(mul(pos_term, pos_mask_t), mul(neg_term, neg_mask_t));
    const double norm = 1.0 / static_cast<double>(std::max<std::size_t>(num_positive, 1));
    return mul_scalar(sum(total), norm);
}

Tensor focal_loss(const Tensor& probs, const TargetAssignment& assignment, double alpha,
                  double gamma) {
    return focal_loss(probs, assignment.labels, alpha, gamma);
}

void NmsConfig::validate() const {
    if (!(score_threshold >= 0.0 && score_threshold <= 1.0)) {
        throw ConfigError("nms: score threshold must be in [0,1]");
    }
    if (!(nms_iou >= 0.0 && nms_iou <= 1.0)) throw ConfigError("nms: IoU must be in [0,1]");
}

std::vector<DetectionBox> decode_and_nms(std::span<const double> score_logits,
                                         std::span<const double> residuals,
                                         std::span<const AnchorBox> anchors, int class_id,
                                         const NmsConfig& cfg) {
    cfg.validate();
    const std::size_t m = anchors.size();
    if (score_logits.size() != m || residuals.size() != m * 7) {
        throw ShapeMismatchError("decode_and_nms: head outputs disagree with the anchor count");
    }

    std::vector<DetectionBox> candidates;
    for (std::size_t a = 0; a < m; ++a) {
        const double score = 1.0 / (1.0 + std::exp(-score_logits[a]));
        if (score < cfg.score_threshold) continue;
        ResidualVector r;
        const double* rp = residuals.data() + a * 7;
        r.dx = rp[0];
        r.dy = rp[1];
        r.dz = rp[2];
        r.dl = rp[3];
        r.dw = rp[4];
        r.dh = rp[5];
        r.dtheta = rp[6];
        DetectionBox det;
        det.box = decode_residual(r, anchors[a]);
        det.class_id = class_id;
        det.score = score;
        candidates.push_back(det);
    }

    std::vector<std::size_t> order(candidates.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return candidates[a].score > candidates[b].score;
    });

    std::vector<DetectionBox> kept;
    std::vector<bool> suppressed(candidates.size(), false);
    for (std::size_t i = 0; i < order.size() && kept.size() < cfg.max_output; ++i) {
        const std::size_t a = order[i];
        if (suppressed[a]) continue;
        kept.push_back(candidates[a]);
        for (std::size_t j = i + 1; j < order.size(); ++j) {
            const std::size_t b = order[j];
            if (suppressed[b]) continue;
            if (bev_iou(candidates[a].box, candidates[b].box) > cfg.nms_iou) {
                suppressed[b] = true;
            }
        }
    }
    return kept;
}

void write_detections(std::ostream& out, std::span<const DetectionBox> dets,
                      const ClassTable& classes) {
    for (const DetectionBox& d : dets) {
        out << classes.at(static_cast<std::size_t>(d.class_id)) << ' '
            << format_double(d.score) << ' ' << format_double(d.box.x) << ' '
            << format_double(d.box.y) << ' ' << format_double(d.box.z) << ' '
            << format_double(d.box.l) << ' ' << format_double(d.box.w) << ' '
            << format_double(d.box.h) << ' ' << format_double(d.box.yaw) << '\n';
    }
}

std::vector<DetectionBox> read_detections(std::istream& in, const ClassTable& classes) {
    std::vector<DetectionBox> dets;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string name;
        DetectionBox d;
        if (!(ls >> name >> d.score >> d.box.x >> d.box.y >> d.box.z >> d.box.l >> d.box.w >>
              d.box.h >> d.box.yaw)) {
            throw IoError("malformed detection line: " + line);
        }
        d.class_id = class_id_for(classes, name);
        dets.push_back(d);
    }
    return dets;
}

}  // namespace mvf

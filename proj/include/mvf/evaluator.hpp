#pragma once

#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "mvf/box.hpp"

namespace mvf {

/// Rotated-rectangle intersection area (Sutherland-Hodgman clipping of the
/// two BEV footprints). Degenerate contact below 1e-12 counts as zero.
double bev_intersection_area(const Box3& a, const Box3& b);

/// 5-DOF BEV IoU of the yaw-rotated footprints.
double bev_iou(const Box3& a, const Box3& b);

/// 7-DOF IoU of upright boxes: BEV intersection times vertical overlap over
/// the volume union.
double iou_3d(const Box3& a, const Box3& b);

enum class IouMode { Bev, Full3d };

struct EvalConfig {
    // Per-class matching thresholds, indexed by class id.
    std::vector<double> iou_thresholds = {0.7, 0.5};
    // Range bucket lower edges; bucket i spans [edges[i], edges[i+1]) and the
    // last bucket is open-ended.
    std::vector<double> range_edges = {0.0, 30.0, 50.0};
    IouMode mode = IouMode::Bev;

    void validate() const;
    std::size_t num_buckets() const { return range_edges.size(); }
    std::string bucket_name(std::size_t i) const;
    /// Bucket index by center distance from the sensor origin, or nullopt
    /// when the range precedes the first edge.
    std::optional<std::size_t> bucket_of(double range) const;
};

struct EvalDetection {
    int frame = 0;
    DetectionBox det;
};

struct EvalGroundTruth {
    int frame = 0;
    GroundTruthBox gt;
};

struct PrPoint {
    double score = 0.0;
    std::size_t tp = 0;
    std::size_t fp = 0;
    double precision = 0.0;
    double recall = 0.0;
};

struct BucketReport {
    std::string name;
    std::size_t gt_count = 0;
    std::size_t det_count = 0;
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;
    // Absent (not zero) when the bucket holds no ground truth.
    std::optional<double> ap;
    std::vector<PrPoint> pr;
};

struct ClassReport {
    int class_id = 0;
    BucketReport overall;  // all ranges pooled, not an average of buckets
    std::vector<BucketReport> buckets;
};

struct EvalReport {
    IouMode mode = IouMode::Bev;
    std::vector<ClassReport> classes;
};

/// Average precision with score-descending greedy matching (each ground
/// truth used at most once, within the same frame) and all-point
/// interpolation. Buckets match detections by their own center range
/// against ground truths in the same bucket.
EvalReport compute_ap(std::span<const EvalDetection> dets,
                      std::span<const EvalGroundTruth> gts, const EvalConfig& cfg);

/// Flat machine-readable lines, e.g. `vehicle.bev.ap.30-50 0.75`.
void write_metrics(std::ostream& out, const EvalReport& report, const ClassTable& classes);
/// Human-oriented structured text with counts and the PR sweep.
void write_report(std::ostream& out, const EvalReport& report, const ClassTable& classes);

}  // namespace mvf

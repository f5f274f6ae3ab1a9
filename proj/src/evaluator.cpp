#include "mvf/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace mvf {

namespace {

struct Vec2 {
    double x, y;
};

double polygon_area(const std::vector<Vec2>& poly) {
    double acc = 0.0;
    const std::size_t n = poly.size();
    for (std::size_t i = 0; i < n; ++i) {
        const Vec2& p = poly[i];
        const Vec2& q = poly[(i + 1) % n];
        acc += p.x * q.y - q.x * p.y;
    }
    return 0.5 * acc;
}

// Clip a convex polygon against the half-plane left of edge a->b.
std::vector<Vec2> clip_halfplane(const std::vector<Vec2>& poly, const Vec2& a, const Vec2& b) {
    std::vector<Vec2> out;
    const std::size_t n = poly.size();
    out.reserve(n + 2);
    auto side = [&](const Vec2& p) {
        return (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
    };
    for (std::size_t i = 0; i < n; ++i) {
        const Vec2& cur = poly[i];
        const Vec2& nxt = poly[(i + 1) % n];
        const double sc = side(cur);
        const double sn = side(nxt);
        if (sc >= 0.0) out.push_back(cur);
        if ((sc > 0.0 && sn < 0.0) || (sc < 0.0 && sn > 0.0)) {
            const double t = sc / (sc - sn);
            out.push_back({cur.x + t * (nxt.x - cur.x), cur.y + t * (nxt.y - cur.y)});
        }
    }
    return out;
}

std::vector<Vec2> box_polygon(const Box3& b) {
    const auto corners = b.bev_corners();
    return {{corners[0][0], corners[0][1]},
            {corners[1][0], corners[1][1]},
            {corners[2][0], corners[2][1]},
            {corners[3][0], corners[3][1]}};
}

}  // namespace

namespace {

bool box_before(const Box3& a, const Box3& b) {
    const double ka[5] = {a.x, a.y, a.l, a.w, a.yaw};
    const double kb[5] = {b.x, b.y, b.l, b.w, b.yaw};
    for (int i = 0; i < 5; ++i) {
        if (ka[i] != kb[i]) return ka[i] < kb[i];
    }
    return false;
}

}  // namespace

double bev_intersection_area(const Box3& a, const Box3& b) {
    // Canonical operand order keeps the clip bit-exactly symmetric.
    const Box3& first = box_before(b, a) ? b : a;
    const Box3& second = box_before(b, a) ? a : b;
    std::vector<Vec2> poly = box_polygon(first);
    const std::vector<Vec2> clip = box_polygon(second);
    for (std::size_t i = 0; i < clip.size() && !poly.empty(); ++i) {
        poly = clip_halfplane(poly, clip[i], clip[(i + 1) % clip.size()]);
    }
    if (poly.size() < 3) return 0.0;
    const double area = polygon_area(poly);
    return area > 1e-12 ? area : 0.0;
}

double bev_iou(const Box3& a, const Box3& b) {
    const double inter = bev_intersection_area(a, b);
    if (inter <= 0.0) return 0.0;
    const double uni = a.bev_area() + b.bev_area() - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

double iou_3d(const Box3& a, const Box3& b) {
    const double inter_area = bev_intersection_area(a, b);
    if (inter_area <= 0.0) return 0.0;
    const double z_lo = std::max(a.z - 0.5 * a.h, b.z - 0.5 * b.h);
    const double z_hi = std::min(a.z + 0.5 * a.h, b.z + 0.5 * b.h);
    const double overlap = z_hi - z_lo;
    if (overlap <= 0.0) return 0.0;
    const double inter = inter_area * overlap;
    const double uni = a.volume() + b.volume() - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

void EvalConfig::validate() const {
    for (double t : iou_thresholds) {
        if (!(t > 0.0 && t <= 1.0)) throw ConfigError("eval: IoU threshold must be in (0,1]");
    }
    if (range_edges.empty()) throw ConfigError("eval: at least one range bucket required");
    for (std::size_t i = 1; i < range_edges.size(); ++i) {
        if (range_edges[i] <= range_edges[i - 1]) {
            throw ConfigError("eval: range edges must be strictly increasing");
        }
    }
}

std::string EvalConfig::bucket_name(std::size_t i) const {
    auto fmt = [](double v) {
        const auto n = static_cast<long long>(v);
        if (static_cast<double>(n) == v) return std::to_string(n);
        return format_double(v);
    };
    if (i + 1 < range_edges.size()) {
        return fmt(range_edges[i]) + "-" + fmt(range_edges[i + 1]);
    }
    return fmt(range_edges[i]) + "-inf";
}

std::optional<std::size_t> EvalConfig::bucket_of(double range) const {
    if (range < range_edges.front()) return std::nullopt;
    for (std::size_t i = range_edges.size(); i-- > 0;) {
        if (range >= range_edges[i]) return i;
    }
    return std::nullopt;
}

namespace {

double iou_for_mode(const Box3& a, const Box3& b, IouMode mode) {
    return mode == IouMode::Bev ? bev_iou(a, b) : iou_3d(a, b);
}

// Greedy PR sweep over one detection/ground-truth pool.
BucketReport evaluate_pool(std::string name, const std::vector<const EvalDetection*>& dets,
                           const std::vector<const EvalGroundTruth*>& gts, double threshold,
                           IouMode mode) {
    BucketReport out;
    out.name = std::move(name);
    out.gt_count = gts.size();
    out.det_count = dets.size();

    // Descending score; index breaks exact ties deterministically.
    std::vector<std::size_t> order(dets.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return dets[a]->det.score > dets[b]->det.score;
    });

    std::vector<bool> gt_used(gts.size(), false);
    std::size_t tp = 0, fp = 0;
    for (std::size_t rank = 0; rank < order.size(); ++rank) {
        const EvalDetection* det = dets[order[rank]];
        double best_iou = 0.0;
        std::size_t best_gt = gts.size();
        for (std::size_t g = 0; g < gts.size(); ++g) {
            if (gt_used[g]) continue;
            if (gts[g]->frame != det->frame) continue;
            if (gts[g]->gt.class_id != det->det.class_id) continue;
            const double iou = iou_for_mode(det->det.box, gts[g]->gt.box, mode);
            if (iou >= threshold && iou > best_iou) {
                best_iou = iou;
                best_gt = g;
            }
        }
        if (best_gt < gts.size()) {
            gt_used[best_gt] = true;
            ++tp;
        } else {
            ++fp;
        }
        PrPoint pt;
        pt.score = det->det.score;
        pt.tp = tp;
        pt.fp = fp;
        pt.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
        pt.recall = gts.empty() ? 0.0 : static_cast<double>(tp) / static_cast<double>(gts.size());
        out.pr.push_back(pt);
    }
    out.tp = tp;
    out.fp = fp;
    out.fn = out.gt_count - tp;

    if (gts.empty()) {
        out.ap = std::nullopt;  // undefined, reported as absent
        return out;
    }
    // All-point interpolation: integrate recall increments against the
    // running max precision from the right.
    double ap = 0.0;
    double max_prec = 0.0;
    for (std::size_t i = out.pr.size(); i-- > 0;) {
        max_prec = std::max(max_prec, out.pr[i].precision);
        const double r_lo = i == 0 ? 0.0 : out.pr[i - 1].recall;
        ap += (out.pr[i].recall - r_lo) * max_prec;
    }
    out.ap = ap;
    return out;
}

}  // namespace

EvalReport compute_ap(std::span<const EvalDetection> dets, std::span<const EvalGroundTruth> gts,
                      const EvalConfig& cfg) {
    cfg.validate();
    EvalReport report;
    report.mode = cfg.mode;

    std::map<int, bool> class_ids;
    for (const auto& g : gts) class_ids[g.gt.class_id] = true;
    for (const auto& d : dets) class_ids[d.det.class_id] = true;

    for (const auto& [class_id, unused] : class_ids) {
        if (class_id < 0 || static_cast<std::size_t>(class_id) >= cfg.iou_thresholds.size()) {
            throw ConfigError("compute_ap: no IoU threshold for class id " +
                              std::to_string(class_id));
        }
        const double threshold = cfg.iou_thresholds[static_cast<std::size_t>(class_id)];
        ClassReport cls;
        cls.class_id = class_id;

        std::vector<const EvalDetection*> class_dets;
        std::vector<const EvalGroundTruth*> class_gts;
        for (const auto& d : dets) {
            if (d.det.class_id == class_id) class_dets.push_back(&d);
        }
        for (const auto& g : gts) {
            if (g.gt.class_id == class_id) class_gts.push_back(&g);
        }

        cls.overall = evaluate_pool("overall", class_dets, class_gts, threshold, cfg.mode);

        for (std::size_t b = 0; b < cfg.num_buckets(); ++b) {
            std::vector<const EvalDetection*> bucket_dets;
            std::vector<const EvalGroundTruth*> bucket_gts;
            for (const EvalDetection* d : class_dets) {
                if (cfg.bucket_of(d->det.box.range()) == b) bucket_dets.push_back(d);
            }
            for (const EvalGroundTruth* g : class_gts) {
                if (cfg.bucket_of(g->gt.box.range()) == b) bucket_gts.push_back(g);
            }
            cls.buckets.push_back(
                evaluate_pool(cfg.bucket_name(b), bucket_dets, bucket_gts, threshold, cfg.mode));
        }
        report.classes.push_back(std::move(cls));
    }
    return report;
}

namespace {

const char* mode_name(IouMode mode) { return mode == IouMode::Bev ? "bev" : "3d"; }

void write_bucket_metrics(std::ostream& out, const std::string& prefix,
                          const BucketReport& bucket) {
    if (bucket.ap.has_value()) {
        out << prefix << ".ap." << bucket.name << ' ' << format_double(*bucket.ap) << '\n';
    }
    out << prefix << ".tp." << bucket.name << ' ' << bucket.tp << '\n';
    out << prefix << ".fp." << bucket.name << ' ' << bucket.fp << '\n';
    out << prefix << ".fn." << bucket.name << ' ' << bucket.fn << '\n';
}

}  // namespace

void write_metrics(std::ostream& out, const EvalReport& report, const ClassTable& classes) {
    for (const ClassReport& cls : report.classes) {
        const std::string prefix =
            classes.at(static_cast<std::size_t>(cls.class_id)) + "." + mode_name(report.mode);
        write_bucket_metrics(out, prefix, cls.overall);
        for (const BucketReport& bucket : cls.buckets) {
            write_bucket_metrics(out, prefix, bucket);
        }
    }
}

void write_report(std::ostream& out, const EvalReport& report, const ClassTable& classes) {
    out << "mode " << mode_name(report.mode) << '\n';
    for (const ClassReport& cls : report.classes) {
        const std::string& name = classes.at(static_cast<std::size_t>(cls.class_id));
        auto write_bucket = [&](const BucketReport& b) {
            out << "class " << name << " bucket " << b.name << " gts " << b.gt_count << " dets "
                << b.det_count << " tp " << b.tp << " fp " << b.fp << " fn " << b.fn << " ap ";
            if (b.ap.has_value()) {
                out << format_double(*b.ap);
            } else {
                out << "absent";
            }
            out << '\n';
            for (const PrPoint& p : b.pr) {
                out << "  pr score " << format_double(p.score) << " precision "
                    << format_double(p.precision) << " recall " << format_double(p.recall)
                    << '\n';
            }
        };
        write_bucket(cls.overall);
        for (const BucketReport& b : cls.buckets) write_bucket(b);
    }
}

}  // namespace mvf

#include "mvf/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "mvf/kernels.hpp"

namespace mvf {

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeMismatchError(std::string(op) + ": operand shapes differ");
    }
}

// Elementwise unary op with value-dependent derivative.
template <typename Fwd, typename Bwd>
Tensor unary_elementwise(const Tensor& x, Fwd fwd, Bwd dfdx) {
    const auto n = static_cast<std::int64_t>(x.numel());
    std::vector<double> out(static_cast<std::size_t>(n));
    const double* xp = x.data();
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = fwd(xp[i]);

    auto xnode = x.node();
    return make_op_output(x.shape(), std::move(out), {x},
                          [xnode, dfdx](detail::TensorNode& node) {
                              if (!xnode->requires_grad && xnode->parents.empty()) return;
                              xnode->ensure_grad();
                              const auto n = node.numel();
                              const double* g = node.grad.data();
                              const double* xv = xnode->data.data();
                              double* xg = xnode->grad.data();
#pragma omp parallel for schedule(static)
                              for (std::int64_t i = 0; i < n; ++i) xg[i] += g[i] * dfdx(xv[i]);
                          });
}

struct SegmentIndex {
    std::vector<std::int64_t> offsets;
    std::vector<std::int64_t> members;
    std::vector<std::int64_t> row_of;  // per point, segment slot or -1
};

SegmentIndex make_segment_index(const VoxelMapping& mapping) {
    SegmentIndex idx;
    idx.offsets.reserve(mapping.num_voxels() + 1);
    idx.offsets.push_back(0);
    idx.members.reserve(mapping.mapped_points());
    for (const auto& list : mapping.voxel_to_points) {
        idx.members.insert(idx.members.end(), list.begin(), list.end());
        idx.offsets.push_back(static_cast<std::int64_t>(idx.members.size()));
    }
    idx.row_of = mapping.point_to_voxel;
    return idx;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    const auto n = a.numel();
    std::vector<double> out(static_cast<std::size_t>(n));
    const double* ap = a.data();
    const double* bp = b.data();
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = ap[i] + bp[i];
    auto an = a.node();
    auto bn = b.node();
    return make_op_output(a.shape(), std::move(out), {a, b}, [an, bn](detail::TensorNode& node) {
        const auto n = node.numel();
        const double* g = node.grad.data();
        an->ensure_grad();
        bn->ensure_grad();
        double* ag = an->grad.data();
        double* bg = bn->grad.data();
        for (std::int64_t i = 0; i < n; ++i) {
            ag[i] += g[i];
            bg[i] += g[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    const auto n = a.numel();
    std::vector<double> out(static_cast<std::size_t>(n));
    const double* ap = a.data();
    const double* bp = b.data();
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = ap[i] - bp[i];
    auto an = a.node();
    auto bn = b.node();
    return make_op_output(a.shape(), std::move(out), {a, b}, [an, bn](detail::TensorNode& node) {
        const auto n = node.numel();
        const double* g = node.grad.data();
        an->ensure_grad();
        bn->ensure_grad();
        double* ag = an->grad.data();
        double* bg = bn->grad.data();
        for (std::int64_t i = 0; i < n; ++i) {
            ag[i] += g[i];
            bg[i] -= g[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    const auto n = a.numel();
    std::vector<double> out(static_cast<std::size_t>(n));
    const double* ap = a.data();
    const double* bp = b.data();
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = ap[i] * bp[i];
    auto an = a.node();
    auto bn = b.node();
    return make_op_output(a.shape(), std::move(out), {a, b}, [an, bn](detail::TensorNode& node) {
        const auto n = node.numel();
        const double* g = node.grad.data();
        an->ensure_grad();
        bn->ensure_grad();
        double* ag = an->grad.data();
        double* bg = bn->grad.data();
        const double* av = an->data.data();
        const double* bv = bn->data.data();
        for (std::int64_t i = 0; i < n; ++i) {
            ag[i] += g[i] * bv[i];
            bg[i] += g[i] * av[i];
        }
    });
}

Tensor neg(const Tensor& x) {
    return unary_elementwise(
        x, [](double v) { return -v; }, [](double) { return -1.0; });
}

Tensor add_scalar(const Tensor& x, double s) {
    return unary_elementwise(
        x, [s](double v) { return v + s; }, [](double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& x, double s) {
    return unary_elementwise(
        x, [s](double v) { return v * s; }, [s](double) { return s; });
}

Tensor relu(const Tensor& x) {
    return unary_elementwise(
        x, [](double v) { return v > 0.0 ? v : 0.0; },
        [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
    return unary_elementwise(
        x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
        [](double v) {
            const double s = 1.0 / (1.0 + std::exp(-v));
            return s * (1.0 - s);
        });
}

Tensor log(const Tensor& x) {
    return unary_elementwise(
        x, [](double v) { return std::log(v); }, [](double v) { return 1.0 / v; });
}

Tensor sin(const Tensor& x) {
    return unary_elementwise(
        x, [](double v) { return std::sin(v); }, [](double v) { return std::cos(v); });
}

Tensor pow_scalar(const Tensor& x, double e) {
    return unary_elementwise(
        x, [e](double v) { return std::pow(v, e); },
        [e](double v) { return e == 0.0 ? 0.0 : e * std::pow(v, e - 1.0); });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
    return unary_elementwise(
        x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
        [lo, hi](double v) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

Tensor smooth_l1(const Tensor& x, double beta) {
    if (beta <= 0.0) throw ConfigError("smooth_l1: beta must be positive");
    return unary_elementwise(
        x,
        [beta](double v) {
            const double a = std::abs(v);
            return a <= beta ? 0.5 * v * v / beta : a - 0.5 * beta;
        },
        [beta](double v) {
            const double a = std::abs(v);
            return a <= beta ? v / beta : (v > 0.0 ? 1.0 : -1.0);
        });
}

Tensor sum(const Tensor& x) {
    const auto n = x.numel();
    double total = 0.0;
    const double* xp = x.data();
    for (std::int64_t i = 0; i < n; ++i) total += xp[i];
    auto xn = x.node();
    return make_op_output({1}, {total}, {x}, [xn](detail::TensorNode& node) {
        xn->ensure_grad();
        const double g = node.grad[0];
        double* xg = xn->grad.data();
        const auto n = xn->numel();
        for (std::int64_t i = 0; i < n; ++i) xg[i] += g;
    });
}

Tensor reshape(const Tensor& x, std::vector<std::int64_t> shape) {
    std::int64_t n = 1;
    for (std::int64_t d : shape) n *= d;
    if (n != x.numel()) throw ShapeMismatchError("reshape: element count mismatch");
    auto xn = x.node();
    return make_op_output(std::move(shape), x.values(), {x}, [xn](detail::TensorNode& node) {
        xn->ensure_grad();
        const auto n = node.numel();
        const double* g = node.grad.data();
        double* xg = xn->grad.data();
        for (std::int64_t i = 0; i < n; ++i) xg[i] += g[i];
    });
}

Tensor slice_last(const Tensor& x, std::int64_t start, std::int64_t len) {
    const auto& shape = x.shape();
    if (shape.empty()) throw ShapeMismatchError("slice_last: rank-0 tensor");
    const std::int64_t last = shape.back();
    if (start < 0 || len < 0 || start + len > last) {
        throw ShapeMismatchError("slice_last: range out of bounds");
    }
    const std::int64_t rows = x.numel() / last;
    std::vector<double> out(static_cast<std::size_t>(rows * len));
    const double* xp = x.data();
#pragma omp parallel for schedule(static)
    for (std::int64_t r = 0; r < rows; ++r) {
        std::memcpy(out.data() + r * len, xp + r * last + start,
                    static_cast<std::size_t>(len) * sizeof(double));
    }
    std::vector<std::int64_t> out_shape = shape;
    out_shape.back() = len;
    auto xn = x.node();
    return make_op_output(std::move(out_shape), std::move(out), {x},
                          [xn, start, len, last, rows](detail::TensorNode& node) {
                              xn->ensure_grad();
                              const double* g = node.grad.data();
                              double* xg = xn->grad.data();
                              for (std::int64_t r = 0; r < rows; ++r) {
                                  for (std::int64_t c = 0; c < len; ++c) {
                                      xg[r * last + start + c] += g[r * len + c];
                                  }
                              }
                          });
}

Tensor concat_features(const std::vector<Tensor>& xs) {
    if (xs.empty()) throw ShapeMismatchError("concat_features: no inputs");
    const auto& lead = xs.front().shape();
    std::int64_t total_last = 0;
    for (const Tensor& t : xs) {
        const auto& s = t.shape();
        if (s.size() != lead.size() ||
            !std::equal(s.begin(), s.end() - 1, lead.begin(), lead.end() - 1)) {
            throw ShapeMismatchError("concat_features: leading dimensions differ");
        }
        total_last += s.back();
    }
    const std::int64_t rows = xs.front().numel() / std::max<std::int64_t>(lead.back(), 1);

    std::vector<double> out(static_cast<std::size_t>(rows * total_last));
    std::vector<std::int64_t> widths(xs.size());
    std::vector<std::int64_t> starts(xs.size());
    std::int64_t at = 0;
    for (std::size_t k = 0; k < xs.size(); ++k) {
        widths[k] = xs[k].shape().back();
        starts[k] = at;
        at += widths[k];
    }
    for (std::size_t k = 0; k < xs.size(); ++k) {
        const double* src = xs[k].data();
        const std::int64_t wk = widths[k];
        const std::int64_t sk = starts[k];
#pragma omp parallel for schedule(static)
        for (std::int64_t r = 0; r < rows; ++r) {
            std::memcpy(out.data() + r * total_last + sk, src + r * wk,
                        static_cast<std::size_t>(wk) * sizeof(double));
        }
    }

    std::vector<std::int64_t> out_shape = lead;
    out_shape.back() = total_last;
    std::vector<std::shared_ptr<detail::TensorNode>> nodes;
    nodes.reserve(xs.size());
    for (const Tensor& t : xs) nodes.push_back(t.node());
    return make_op_output(
        std::move(out_shape), std::move(out), xs,
        [nodes, widths, starts, rows, total_last](detail::TensorNode& node) {
            const double* g = node.grad.data();
            for (std::size_t k = 0; k < nodes.size(); ++k) {
                nodes[k]->ensure_grad();
                double* xg = nodes[k]->grad.data();
                const std::int64_t wk = widths[k];
                const std::int64_t sk = starts[k];
                for (std::int64_t r = 0; r < rows; ++r) {
                    const double* gr = g + r * total_last + sk;
                    double* xr = xg + r * wk;
                    for (std::int64_t c = 0; c < wk; ++c) xr[c] += gr[c];
                }
            }
        });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (x.rank() != 2 || w.rank() != 2 || b.rank() != 1) {
        throw ShapeMismatchError("linear: expects x [N,Din], w [Din,Dout], b [Dout]");
    }
    const std::int64_t n = x.dim(0);
    const std::int64_t din = x.dim(1);
    const std::int64_t dout = w.dim(1);
    if (w.dim(0) != din || b.dim(0) != dout) {
        throw ShapeMismatchError("linear: weight/bias shapes disagree with input");
    }
    std::vector<double> out(static_cast<std::size_t>(n * dout));
    kernels::linear_forward(x.data(), w.data(), b.data(), out.data(), n, din, dout);

    auto xn = x.node();
    auto wn = w.node();
    auto bn = b.node();
    return make_op_output(
        {n, dout}, std::move(out), {x, w, b},
        [xn, wn, bn, n, din, dout](detail::TensorNode& node) {
            const double* dy = node.grad.data();
            if (xn->requires_grad || !xn->parents.empty()) {
                xn->ensure_grad();
                kernels::linear_backward_input(dy, wn->data.data(), xn->grad.data(), n, din, dout);
            }
            wn->ensure_grad();
            kernels::linear_backward_weight(xn->data.data(), dy, wn->grad.data(), n, din, dout);
            bn->ensure_grad();
            kernels::linear_backward_bias(dy, bn->grad.data(), n, dout);
        });
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  Tensor running_mean, Tensor running_var, bool train, double momentum,
                  double eps) {
    if (x.rank() < 2) throw ShapeMismatchError("batch_norm: input must have a channel axis");
    const std::int64_t c = x.shape().back();
    const std::int64_t n = x.numel() / c;
    if (gamma.numel() != c || beta.numel() != c || running_mean.numel() != c ||
        running_var.numel() != c) {
        throw ShapeMismatchError("batch_norm: parameter size must equal channel count");
    }
    if (train && n < 1) throw ShapeMismatchError("batch_norm: empty batch in train mode");

    std::vector<double> mean(static_cast<std::size_t>(c));
    std::vector<double> var(static_cast<std::size_t>(c));
    if (train) {
        kernels::bn_stats(x.data(), n, c, mean.data(), var.data());
        double* rm = running_mean.data();
        double* rv = running_var.data();
        for (std::int64_t j = 0; j < c; ++j) {
            rm[j] = (1.0 - momentum) * rm[j] + momentum * mean[static_cast<std::size_t>(j)];
            rv[j] = (1.0 - momentum) * rv[j] + momentum * var[static_cast<std::size_t>(j)];
        }
    } else {
        std::memcpy(mean.data(), running_mean.data(), static_cast<std::size_t>(c) * sizeof(double));
        std::memcpy(var.data(), running_var.data(), static_cast<std::size_t>(c) * sizeof(double));
    }

    auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(c));
    for (std::int64_t j = 0; j < c; ++j) {
        (*inv_std)[static_cast<std::size_t>(j)] =
            1.0 / std::sqrt(var[static_cast<std::size_t>(j)] + eps);
    }
    auto saved_mean = std::make_shared<std::vector<double>>(std::move(mean));

    std::vector<double> out(static_cast<std::size_t>(n * c));
    const double* xp = x.data();
    const double* gp = gamma.data();
    const double* bp = beta.data();
#pragma omp parallel for schedule(static)
    for (std::int64_t r = 0; r < n; ++r) {
        const double* xr = xp + r * c;
        double* yr = out.data() + r * c;
        for (std::int64_t j = 0; j < c; ++j) {
            const double xhat = (xr[j] - (*saved_mean)[static_cast<std::size_t>(j)]) *
                                (*inv_std)[static_cast<std::size_t>(j)];
            yr[j] = gp[j] * xhat + bp[j];
        }
    }

    auto xn = x.node();
    auto gn = gamma.node();
    auto btn = beta.node();
    return make_op_output(
        x.shape(), std::move(out), {x, gamma, beta},
        [xn, gn, btn, saved_mean, inv_std, n, c, train](detail::TensorNode& node) {
            const double* dy = node.grad.data();
            const double* xp = xn->data.data();
            const double* gp = gn->data.data();
            xn->ensure_grad();
            gn->ensure_grad();
            btn->ensure_grad();
            double* dx = xn->grad.data();
            double* dg = gn->grad.data();
            double* db = btn->grad.data();
#pragma omp parallel for schedule(static)
            for (std::int64_t j = 0; j < c; ++j) {
                const double mu = (*saved_mean)[static_cast<std::size_t>(j)];
                const double istd = (*inv_std)[static_cast<std::size_t>(j)];
                double sum_dy = 0.0;
                double sum_dy_xhat = 0.0;
                for (std::int64_t r = 0; r < n; ++r) {
                    const double xhat = (xp[r * c + j] - mu) * istd;
                    sum_dy += dy[r * c + j];
                    sum_dy_xhat += dy[r * c + j] * xhat;
                }
                dg[j] += sum_dy_xhat;
                db[j] += sum_dy;
                if (train) {
                    // d/dx of batch-statistics normalization
                    const double inv_n = 1.0 / static_cast<double>(n);
                    for (std::int64_t r = 0; r < n; ++r) {
                        const double xhat = (xp[r * c + j] - mu) * istd;
                        dx[r * c + j] += gp[j] * istd *
                                         (dy[r * c + j] - inv_n * sum_dy -
                                          inv_n * xhat * sum_dy_xhat);
                    }
                } else {
                    for (std::int64_t r = 0; r < n; ++r) {
                        dx[r * c + j] += gp[j] * istd * dy[r * c + j];
                    }
                }
            }
        });
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, std::int64_t stride) {
    if (x.rank() != 3 || w.rank() != 4 || b.rank() != 1) {
        throw ShapeMismatchError("conv2d: expects x [H,W,Cin], w [kh,kw,Cin,Cout], b [Cout]");
    }
    const std::int64_t h = x.dim(0), wd = x.dim(1), cin = x.dim(2);
    const std::int64_t kh = w.dim(0), kw = w.dim(1), cout = w.dim(3);
    if (w.dim(2) != cin || b.dim(0) != cout) {
        throw ShapeMismatchError("conv2d: weight/bias channels disagree with input");
    }
    if (kh % 2 == 0 || kw % 2 == 0) throw ShapeMismatchError("conv2d: kernel must be odd");
    if (stride < 1) throw ShapeMismatchError("conv2d: stride must be >= 1");
    const std::int64_t pad = (kh - 1) / 2;
    const std::int64_t oh = (h + 2 * pad - kh) / stride + 1;
    const std::int64_t ow = (wd + 2 * pad - kw) / stride + 1;

    std::vector<double> out(static_cast<std::size_t>(oh * ow * cout));
    kernels::conv2d_forward(x.data(), w.data(), b.data(), out.data(), h, wd, cin, cout, kh, kw,
                            stride, pad, oh, ow);

    auto xn = x.node();
    auto wn = w.node();
    auto bn = b.node();
    return make_op_output(
        {oh, ow, cout}, std::move(out), {x, w, b},
        [xn, wn, bn, h, wd, cin, cout, kh, kw, stride, pad, oh, ow](detail::TensorNode& node) {
            const double* dy = node.grad.data();
            if (xn->requires_grad || !xn->parents.empty()) {
                xn->ensure_grad();
                kernels::conv2d_backward_input(dy, wn->data.data(), xn->grad.data(), h, wd, cin,
                                               cout, kh, kw, stride, pad, oh, ow);
            }
            wn->ensure_grad();
            kernels::conv2d_backward_weight(xn->data.data(), dy, wn->grad.data(), h, wd, cin,
                                            cout, kh, kw, stride, pad, oh, ow);
            bn->ensure_grad();
            kernels::conv2d_backward_bias(dy, bn->grad.data(), oh, ow, cout);
        });
}

Tensor bilinear_upsample(const Tensor& x, std::int64_t factor) {
    if (x.rank() != 3) throw ShapeMismatchError("bilinear_upsample: expects [H,W,C]");
    if (factor < 1) throw ShapeMismatchError("bilinear_upsample: factor must be >= 1");
    const std::int64_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
    const std::int64_t oh = h * factor, ow = w * factor;

    // Half-pixel sample positions, clamped at the borders.
    auto src_setup = [factor](std::int64_t o, std::int64_t limit, std::int64_t& i0,
                              std::int64_t& i1, double& w1) {
        double s = (static_cast<double>(o) + 0.5) / static_cast<double>(factor) - 0.5;
        s = std::clamp(s, 0.0, static_cast<double>(limit - 1));
        i0 = static_cast<std::int64_t>(std::floor(s));
        i1 = std::min(i0 + 1, limit - 1);
        w1 = s - static_cast<double>(i0);
    };

    std::vector<double> out(static_cast<std::size_t>(oh * ow * c));
    const double* xp = x.data();
#pragma omp parallel for schedule(static)
    for (std::int64_t o = 0; o < oh * ow; ++o) {
        const std::int64_t oy = o / ow;
        const std::int64_t ox = o % ow;
        std::int64_t y0, y1, x0, x1;
        double wy1, wx1;
        src_setup(oy, h, y0, y1, wy1);
        src_setup(ox, w, x0, x1, wx1);
        const double w00 = (1.0 - wy1) * (1.0 - wx1);
        const double w01 = (1.0 - wy1) * wx1;
        const double w10 = wy1 * (1.0 - wx1);
        const double w11 = wy1 * wx1;
        const double* p00 = xp + (y0 * w + x0) * c;
        const double* p01 = xp + (y0 * w + x1) * c;
        const double* p10 = xp + (y1 * w + x0) * c;
        const double* p11 = xp + (y1 * w + x1) * c;
        double* op = out.data() + o * c;
        for (std::int64_t j = 0; j < c; ++j) {
            op[j] = w00 * p00[j] + w01 * p01[j] + w10 * p10[j] + w11 * p11[j];
        }
    }

    auto xn = x.node();
    return make_op_output(
        {oh, ow, c}, std::move(out), {x},
        [xn, h, w, c, oh, ow, src_setup](detail::TensorNode& node) {
            xn->ensure_grad();
            const double* g = node.grad.data();
            double* xg = xn->grad.data();
            // Serial scatter: cheap relative to the convolutions around it.
            for (std::int64_t o = 0; o < oh * ow; ++o) {
                const std::int64_t oy = o / ow;
                const std::int64_t ox = o % ow;
                std::int64_t y0, y1, x0, x1;
                double wy1, wx1;
                src_setup(oy, h, y0, y1, wy1);
                src_setup(ox, w, x0, x1, wx1);
                const double w00 = (1.0 - wy1) * (1.0 - wx1);
                const double w01 = (1.0 - wy1) * wx1;
                const double w10 = wy1 * (1.0 - wx1);
                const double w11 = wy1 * wx1;
                const double* gp = g + o * c;
                for (std::int64_t j = 0; j < c; ++j) {
                    xg[(y0 * w + x0) * c + j] += w00 * gp[j];
                    xg[(y0 * w + x1) * c + j] += w01 * gp[j];
                    xg[(y1 * w + x0) * c + j] += w10 * gp[j];
                    xg[(y1 * w + x1) * c + j] += w11 * gp[j];
                }
            }
        });
}

Tensor max_pool_segments(const Tensor& x, const VoxelMapping& mapping) {
    if (x.rank() != 2) throw ShapeMismatchError("max_pool_segments: expects [N,D]");
    if (static_cast<std::size_t>(x.dim(0)) != mapping.num_points()) {
        throw InconsistentMappingError("max_pool_segments: mapping covers a different point count");
    }
    const std::int64_t d = x.dim(1);
    const auto v = static_cast<std::int64_t>(mapping.num_voxels());
    auto idx = std::make_shared<SegmentIndex>(make_segment_index(mapping));

    std::vector<double> out(static_cast<std::size_t>(v * d));
    auto argmax = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(v * d));
    kernels::segment_max_forward(x.data(), idx->offsets.data(), idx->members.data(), v, d,
                                 out.data(), argmax->data());

    auto xn = x.node();
    return make_op_output({v, d}, std::move(out), {x},
                          [xn, argmax, v, d](detail::TensorNode& node) {
                              xn->ensure_grad();
                              kernels::segment_max_backward(node.grad.data(), argmax->data(), v,
                                                            d, xn->grad.data());
                          });
}

Tensor gather_segments(const Tensor& v, const VoxelMapping& mapping) {
    if (v.rank() != 2) throw ShapeMismatchError("gather_segments: expects [V,D]");
    if (static_cast<std::size_t>(v.dim(0)) != mapping.num_voxels()) {
        throw InconsistentMappingError("gather_segments: mapping holds a different voxel count");
    }
    const std::int64_t d = v.dim(1);
    const auto n = static_cast<std::int64_t>(mapping.num_points());
    auto idx = std::make_shared<SegmentIndex>(make_segment_index(mapping));

    std::vector<double> out(static_cast<std::size_t>(n * d));
    kernels::gather_rows_forward(v.data(), idx->row_of.data(), n, d, out.data());

    auto vn = v.node();
    const auto nv = static_cast<std::int64_t>(mapping.num_voxels());
    return make_op_output({n, d}, std::move(out), {v},
                          [vn, idx, nv, d](detail::TensorNode& node) {
                              vn->ensure_grad();
                              kernels::gather_rows_backward(node.grad.data(), idx->offsets.data(),
                                                            idx->members.data(), nv, d,
                                                            vn->grad.data());
                          });
}

Tensor scatter_rows_to_grid(const Tensor& v, const std::vector<std::int64_t>& cells,
                            std::int64_t h, std::int64_t w) {
    if (v.rank() != 2) throw ShapeMismatchError("scatter_rows_to_grid: expects [V,D]");
    if (static_cast<std::size_t>(v.dim(0)) != cells.size()) {
        throw InconsistentMappingError("scatter_rows_to_grid: one cell id per voxel required");
    }
    const std::int64_t d = v.dim(1);
    const auto nv = static_cast<std::int64_t>(cells.size());
    for (std::int64_t cell : cells) {
        if (cell < 0 || cell >= h * w) {
            throw InconsistentMappingError("scatter_rows_to_grid: cell id outside canvas");
        }
    }
    std::vector<double> out(static_cast<std::size_t>(h * w * d), 0.0);
    auto cells_copy = std::make_shared<std::vector<std::int64_t>>(cells);
    kernels::scatter_rows_forward(v.data(), cells_copy->data(), nv, d, out.data());

    auto vn = v.node();
    return make_op_output({h, w, d}, std::move(out), {v},
                          [vn, cells_copy, nv, d](detail::TensorNode& node) {
                              vn->ensure_grad();
                              kernels::scatter_rows_backward(node.grad.data(), cells_copy->data(),
                                                             nv, d, vn->grad.data());
                          });
}

Tensor extract_rows_from_grid(const Tensor& canvas, const std::vector<std::int64_t>& cells) {
    if (canvas.rank() != 3) throw ShapeMismatchError("extract_rows_from_grid: expects [H,W,D]");
    const std::int64_t d = canvas.dim(2);
    const std::int64_t hw = canvas.dim(0) * canvas.dim(1);
    const auto nv = static_cast<std::int64_t>(cells.size());
    for (std::int64_t cell : cells) {
        if (cell < 0 || cell >= hw) {
            throw InconsistentMappingError("extract_rows_from_grid: cell id outside canvas");
        }
    }
    std::vector<double> out(static_cast<std::size_t>(nv * d));
    auto cells_copy = std::make_shared<std::vector<std::int64_t>>(cells);
    kernels::gather_rows_forward(canvas.data(), cells_copy->data(), nv, d, out.data());

    auto cn = canvas.node();
    return make_op_output({nv, d}, std::move(out), {canvas},
                          [cn, cells_copy, nv, d](detail::TensorNode& node) {
                              cn->ensure_grad();
                              const double* g = node.grad.data();
                              double* cg = cn->grad.data();
                              // Cells are distinct, one row each.
                              for (std::int64_t v = 0; v < nv; ++v) {
                                  const std::int64_t cell = (*cells_copy)[static_cast<std::size_t>(v)];
                                  for (std::int64_t j = 0; j < d; ++j) {
                                      cg[cell * d + j] += g[v * d + j];
                                  }
                              }
                          });
}

std::pair<std::int64_t, std::int64_t> canvas_cells(const GridSpec& grid,
                                                   const VoxelMapping& mapping,
                                                   std::vector<std::int64_t>& cells) {
    int axis_a = -1, axis_b = -1;
    for (int a = 0; a < 3; ++a) {
        if (grid.collapse[static_cast<std::size_t>(a)]) continue;
        if (axis_a < 0) {
            axis_a = a;
        } else if (axis_b < 0) {
            axis_b = a;
        } else {
            throw ConfigError("canvas_cells: grid must collapse one axis for a 2D canvas");
        }
    }
    if (axis_b < 0) throw ConfigError("canvas_cells: grid needs two indexed axes");
    const auto counts = grid.cell_counts();
    const std::int64_t h = counts[static_cast<std::size_t>(axis_a)];
    const std::int64_t w = counts[static_cast<std::size_t>(axis_b)];
    cells.resize(mapping.num_voxels());
    for (std::size_t j = 0; j < mapping.num_voxels(); ++j) {
        const VoxelCoord& vc = mapping.voxel_coords[j];
        cells[j] = static_cast<std::int64_t>(vc.idx[static_cast<std::size_t>(axis_a)]) * w +
                   vc.idx[static_cast<std::size_t>(axis_b)];
    }
    return {h, w};
}

}  // namespace mvf

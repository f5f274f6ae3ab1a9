#include "mvf/kernels.hpp"

#include <algorithm>
#include <cstring>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mvf::kernels {

bool openmp_enabled() {
#ifdef _OPENMP
    return true;
#else
    return false;
#endif
}

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

namespace {

inline void linear_row(const double* xr, const double* w, const double* b, double* yr,
                       std::int64_t din, std::int64_t dout) {
    std::memcpy(yr, b, static_cast<std::size_t>(dout) * sizeof(double));
    for (std::int64_t i = 0; i < din; ++i) {
        const double xv = xr[i];
        const double* wr = w + i * dout;
        for (std::int64_t j = 0; j < dout; ++j) yr[j] += xv * wr[j];
    }
}

}  // namespace

void linear_forward_serial(const double* x, const double* w, const double* b, double* y,
                           std::int64_t n, std::int64_t din, std::int64_t dout) {
    for (std::int64_t r = 0; r < n; ++r) {
        linear_row(x + r * din, w, b, y + r * dout, din, dout);
    }
}

void linear_forward(const double* x, const double* w, const double* b, double* y,
                    std::int64_t n, std::int64_t din, std::int64_t dout) {
#pragma omp parallel for schedule(static)
    for (std::int64_t r = 0; r < n; ++r) {
        linear_row(x + r * din, w, b, y + r * dout, din, dout);
    }
}

void linear_backward_input(const double* dy, const double* w, double* dx, std::int64_t n,
                           std::int64_t din, std::int64_t dout) {
#pragma omp parallel for schedule(static)
    for (std::int64_t r = 0; r < n; ++r) {
        const double* dyr = dy + r * dout;
        double* dxr = dx + r * din;
        for (std::int64_t i = 0; i < din; ++i) {
            const double* wr = w + i * dout;
            double acc = 0.0;
            for (std::int64_t j = 0; j < dout; ++j) acc += dyr[j] * wr[j];
            dxr[i] += acc;
        }
    }
}

void linear_backward_weight(const double* x, const double* dy, double* dw, std::int64_t n,
                            std::int64_t din, std::int64_t dout) {
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < din; ++i) {
        double* dwr = dw + i * dout;
        for (std::int64_t r = 0; r < n; ++r) {
            const double xv = x[r * din + i];
            const double* dyr = dy + r * dout;
            for (std::int64_t j = 0; j < dout; ++j) dwr[j] += xv * dyr[j];
        }
    }
}

void linear_backward_bias(const double* dy, double* db, std::int64_t n, std::int64_t dout) {
    for (std::int64_t r = 0; r < n; ++r) {
        const double* dyr = dy + r * dout;
        for (std::int64_t j = 0; j < dout; ++j) db[j] += dyr[j];
    }
}

namespace {

inline void conv_pixel(const double* x, const double* w, const double* b, double* yp,
                       std::int64_t oy, std::int64_t ox, std::int64_t h, std::int64_t wd,
                       std::int64_t cin, std::int64_t cout, std::int64_t kh, std::int64_t kw,
                       std::int64_t stride, std::int64_t pad) {
    std::memcpy(yp, b, static_cast<std::size_t>(cout) * sizeof(double));
    for (std::int64_t ky = 0; ky < kh; ++ky) {
        const std::int64_t iy = oy * stride + ky - pad;
        if (iy < 0 || iy >= h) continue;
        for (std::int64_t kx = 0; kx < kw; ++kx) {
            const std::int64_t ix = ox * stride + kx - pad;
            if (ix < 0 || ix >= wd) continue;
            const double* xp = x + (iy * wd + ix) * cin;
            const double* wp = w + (ky * kw + kx) * cin * cout;
            for (std::int64_t ci = 0; ci < cin; ++ci) {
                const double xv = xp[ci];
                const double* wr = wp + ci * cout;
                for (std::int64_t co = 0; co < cout; ++co) yp[co] += xv * wr[co];
            }
        }
    }
}

}  // namespace

void conv2d_forward_serial(const double* x, const double* w, const double* b, double* y,
                           std::int64_t h, std::int64_t wd, std::int64_t cin, std::int64_t cout,
                           std::int64_t kh, std::int64_t kw, std::int64_t stride,
                           std::int64_t pad, std::int64_t oh, std::int64_t ow) {
    for (std::int64_t o = 0; o < oh * ow; ++o) {
        conv_pixel(x, w, b, y + o * cout, o / ow, o % ow, h, wd, cin, cout, kh, kw, stride, pad);
    }
}

void conv2d_forward(const double* x, const double* w, const double* b, double* y, std::int64_t h,
                    std::int64_t wd, std::int64_t cin, std::int64_t cout, std::int64_t kh,
                    std::int64_t kw, std::int64_t stride, std::int64_t pad, std::int64_t oh,
                    std::int64_t ow) {
#pragma omp parallel for schedule(static)
    for (std::int64_t o = 0; o < oh * ow; ++o) {
        conv_pixel(x, w, b, y + o * cout, o / ow, o % ow, h, wd, cin, cout, kh, kw, stride, pad);
    }
}

void conv2d_backward_input(const double* dy, const double* w, double* dx, std::int64_t h,
                           std::int64_t wd, std::int64_t cin, std::int64_t cout, std::int64_t kh,
                           std::int64_t kw, std::int64_t stride, std::int64_t pad,
                           std::int64_t oh, std::int64_t ow) {
    // Gather form: each input pixel sums the output positions that read it.
#pragma omp parallel for schedule(static)
    for (std::int64_t ip = 0; ip < h * wd; ++ip) {
        const std::int64_t iy = ip / wd;
        const std::int64_t ix = ip % wd;
        double* dxp = dx + ip * cin;
        for (std::int64_t ky = 0; ky < kh; ++ky) {
            const std::int64_t num_y = iy + pad - ky;
            if (num_y < 0 || num_y % stride != 0) continue;
            const std::int64_t oy = num_y / stride;
            if (oy >= oh) continue;
            for (std::int64_t kx = 0; kx < kw; ++kx) {
                const std::int64_t num_x = ix + pad - kx;
                if (num_x < 0 || num_x % stride != 0) continue;
                const std::int64_t ox = num_x / stride;
                if (ox >= ow) continue;
                const double* dyp = dy + (oy * ow + ox) * cout;
                const double* wp = w + (ky * kw + kx) * cin * cout;
                for (std::int64_t ci = 0; ci < cin; ++ci) {
                    const double* wr = wp + ci * cout;
                    double acc = 0.0;
                    for (std::int64_t co = 0; co < cout; ++co) acc += dyp[co] * wr[co];
                    dxp[ci] += acc;
                }
            }
        }
    }
}

void conv2d_backward_weight(const double* x, const double* dy, double* dw, std::int64_t h,
                            std::int64_t wd, std::int64_t cin, std::int64_t cout, std::int64_t kh,
                            std::int64_t kw, std::int64_t stride, std::int64_t pad,
                            std::int64_t oh, std::int64_t ow) {
    // Each (ky,kx) weight slice is owned by one iteration.
#pragma omp parallel for schedule(static) collapse(2)
    for (std::int64_t ky = 0; ky < kh; ++ky) {
        for (std::int64_t kx = 0; kx < kw; ++kx) {
            double* dwp = dw + (ky * kw + kx) * cin * cout;
            for (std::int64_t oy = 0; oy < oh; ++oy) {
                const std::int64_t iy = oy * stride + ky - pad;
                if (iy < 0 || iy >= h) continue;
                for (std::int64_t ox = 0; ox < ow; ++ox) {
                    const std::int64_t ix = ox * stride + kx - pad;
                    if (ix < 0 || ix >= wd) continue;
                    const double* xp = x + (iy * wd + ix) * cin;
                    const double* dyp = dy + (oy * ow + ox) * cout;
                    for (std::int64_t ci = 0; ci < cin; ++ci) {
                        const double xv = xp[ci];
                        double* dwr = dwp + ci * cout;
                        for (std::int64_t co = 0; co < cout; ++co) dwr[co] += xv * dyp[co];
                    }
                }
            }
        }
    }
}

void conv2d_backward_bias(const double* dy, double* db, std::int64_t oh, std::int64_t ow,
                          std::int64_t cout) {
    for (std::int64_t o = 0; o < oh * ow; ++o) {
        const double* dyp = dy + o * cout;
        for (std::int64_t co = 0; co < cout; ++co) db[co] += dyp[co];
    }
}

namespace {

inline void segment_max_one(const double* x, const std::int64_t* offsets,
                            const std::int64_t* members, std::int64_t v, std::int64_t d,
                            double* out, std::int64_t* argmax) {
    double* ov = out + v * d;
    std::int64_t* av = argmax + v * d;
    const std::int64_t begin = offsets[v];
    const std::int64_t end = offsets[v + 1];
    const std::int64_t first = members[begin];
    const double* xr = x + first * d;
    for (std::int64_t c = 0; c < d; ++c) {
        ov[c] = xr[c];
        av[c] = first;
    }
    for (std::int64_t k = begin + 1; k < end; ++k) {
        const std::int64_t row = members[k];
        const double* xk = x + row * d;
        for (std::int64_t c = 0; c < d; ++c) {
            if (xk[c] > ov[c]) {  // strict: ties keep the lowest point index
                ov[c] = xk[c];
                av[c] = row;
            }
        }
    }
}

}  // namespace

void segment_max_forward_serial(const double* x, const std::int64_t* offsets,
                                const std::int64_t* members, std::int64_t num_segments,
                                std::int64_t d, double* out, std::int64_t* argmax) {
    for (std::int64_t v = 0; v < num_segments; ++v) {
        segment_max_one(x, offsets, members, v, d, out, argmax);
    }
}

void segment_max_forward(const double* x, const std::int64_t* offsets,
                         const std::int64_t* members, std::int64_t num_segments, std::int64_t d,
                         double* out, std::int64_t* argmax) {
#pragma omp parallel for schedule(static)
    for (std::int64_t v = 0; v < num_segments; ++v) {
        segment_max_one(x, offsets, members, v, d, out, argmax);
    }
}

void segment_max_backward(const double* dout, const std::int64_t* argmax,
                          std::int64_t num_segments, std::int64_t d, double* dx) {
    // Segments own disjoint point rows, so scattering per segment is safe.
#pragma omp parallel for schedule(static)
    for (std::int64_t v = 0; v < num_segments; ++v) {
        const double* dov = dout + v * d;
        const std::int64_t* av = argmax + v * d;
        for (std::int64_t c = 0; c < d; ++c) {
            dx[av[c] * d + c] += dov[c];
        }
    }
}

void gather_rows_forward_serial(const double* src, const std::int64_t* row_of, std::int64_t n,
                                std::int64_t d, double* out) {
    for (std::int64_t i = 0; i < n; ++i) {
        double* dst = out + i * d;
        if (row_of[i] < 0) {
            std::memset(dst, 0, static_cast<std::size_t>(d) * sizeof(double));
        } else {
            std::memcpy(dst, src + row_of[i] * d, static_cast<std::size_t>(d) * sizeof(double));
        }
    }
}

void gather_rows_forward(const double* src, const std::int64_t* row_of, std::int64_t n,
                         std::int64_t d, double* out) {
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) {
        double* dst = out + i * d;
        if (row_of[i] < 0) {
            std::memset(dst, 0, static_cast<std::size_t>(d) * sizeof(double));
        } else {
            std::memcpy(dst, src + row_of[i] * d, static_cast<std::size_t>(d) * sizeof(double));
        }
    }
}

void gather_rows_backward(const double* dout, const std::int64_t* offsets,
                          const std::int64_t* members, std::int64_t num_segments, std::int64_t d,
                          double* dsrc) {
#pragma omp parallel for schedule(static)
    for (std::int64_t v = 0; v < num_segments; ++v) {
        double* dv = dsrc + v * d;
        for (std::int64_t k = offsets[v]; k < offsets[v + 1]; ++k) {
            const double* dr = dout + members[k] * d;
            for (std::int64_t c = 0; c < d; ++c) dv[c] += dr[c];
        }
    }
}

void scatter_rows_forward(const double* rows, const std::int64_t* cell_of,
                          std::int64_t num_segments, std::int64_t d, double* canvas) {
#pragma omp parallel for schedule(static)
    for (std::int64_t v = 0; v < num_segments; ++v) {
        std::memcpy(canvas + cell_of[v] * d, rows + v * d,
                    static_cast<std::size_t>(d) * sizeof(double));
    }
}

void scatter_rows_backward(const double* dcanvas, const std::int64_t* cell_of,
                           std::int64_t num_segments, std::int64_t d, double* drows) {
#pragma omp parallel for schedule(static)
    for (std::int64_t v = 0; v < num_segments; ++v) {
        const double* src = dcanvas + cell_of[v] * d;
        double* dst = drows + v * d;
        for (std::int64_t c = 0; c < d; ++c) dst[c] += src[c];
    }
}

void bn_stats_serial(const double* x, std::int64_t n, std::int64_t c, double* mean, double* var) {
    for (std::int64_t j = 0; j < c; ++j) {
        double sum = 0.0;
        for (std::int64_t r = 0; r < n; ++r) sum += x[r * c + j];
        const double m = sum / static_cast<double>(n);
        double sq = 0.0;
        for (std::int64_t r = 0; r < n; ++r) {
            const double dv = x[r * c + j] - m;
            sq += dv * dv;
        }
        mean[j] = m;
        var[j] = sq / static_cast<double>(n);
    }
}

void bn_stats(const double* x, std::int64_t n, std::int64_t c, double* mean, double* var) {
#pragma omp parallel for schedule(static)
    for (std::int64_t j = 0; j < c; ++j) {
        double sum = 0.0;
        for (std::int64_t r = 0; r < n; ++r) sum += x[r * c + j];
        const double m = sum / static_cast<double>(n);
        double sq = 0.0;
        for (std::int64_t r = 0; r < n; ++r) {
            const double dv = x[r * c + j] - m;
            sq += dv * dv;
        }
        mean[j] = m;
        var[j] = sq / static_cast<double>(n);
    }
}

}  // namespace mvf::kernels

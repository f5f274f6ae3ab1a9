#pragma once

#include <cstdint>
#include <vector>

namespace mvf::kernels {

/// True when the library was built with OpenMP.
bool openmp_enabled();
int max_threads();

// Every parallel kernel computes each output element entirely inside one
// loop iteration (gather form, fixed inner order), so results are
// bit-identical to the serial twin for any thread count.

// ---- dense linear: y[n,dout] = x[n,din] @ w[din,dout] + b[dout] ----
void linear_forward_serial(const double* x, const double* w, const double* b, double* y,
                           std::int64_t n, std::int64_t din, std::int64_t dout);
void linear_forward(const double* x, const double* w, const double* b, double* y,
                    std::int64_t n, std::int64_t din, std::int64_t dout);
void linear_backward_input(const double* dy, const double* w, double* dx, std::int64_t n,
                           std::int64_t din, std::int64_t dout);
// accumulates into dw / db
void linear_backward_weight(const double* x, const double* dy, double* dw, std::int64_t n,
                            std::int64_t din, std::int64_t dout);
void linear_backward_bias(const double* dy, double* db, std::int64_t n, std::int64_t dout);

// ---- conv2d, NHWC activations, [kh,kw,cin,cout] weights, zero padding ----
void conv2d_forward_serial(const double* x, const double* w, const double* b, double* y,
                           std::int64_t h, std::int64_t wd, std::int64_t cin, std::int64_t cout,
                           std::int64_t kh, std::int64_t kw, std::int64_t stride,
                           std::int64_t pad, std::int64_t oh, std::int64_t ow);
void conv2d_forward(const double* x, const double* w, const double* b, double* y,
                    std::int64_t h, std::int64_t wd, std::int64_t cin, std::int64_t cout,
                    std::int64_t kh, std::int64_t kw, std::int64_t stride, std::int64_t pad,
                    std::int64_t oh, std::int64_t ow);
void conv2d_backward_input(const double* dy, const double* w, double* dx, std::int64_t h,
                           std::int64_t wd, std::int64_t cin, std::int64_t cout, std::int64_t kh,
                           std::int64_t kw, std::int64_t stride, std::int64_t pad,
                           std::int64_t oh, std::int64_t ow);
// accumulates into dw / db
void conv2d_backward_weight(const double* x, const double* dy, double* dw, std::int64_t h,
                            std::int64_t wd, std::int64_t cin, std::int64_t cout, std::int64_t kh,
                            std::int64_t kw, std::int64_t stride, std::int64_t pad,
                            std::int64_t oh, std::int64_t ow);
void conv2d_backward_bias(const double* dy, double* db, std::int64_t oh, std::int64_t ow,
                          std::int64_t cout);

// ---- segment (voxel) reductions over CSR membership lists ----
// out[v,:] = per-channel max over member rows of x; argmax records the
// winning row, ties resolved to the lowest point index (members ascend).
void segment_max_forward_serial(const double* x, const std::int64_t* offsets,
                                const std::int64_t* members, std::int64_t num_segments,
                                std::int64_t d, double* out, std::int64_t* argmax);
void segment_max_forward(const double* x, const std::int64_t* offsets,
                         const std::int64_t* members, std::int64_t num_segments, std::int64_t d,
                         double* out, std::int64_t* argmax);
void segment_max_backward(const double* dout, const std::int64_t* argmax,
                          std::int64_t num_segments, std::int64_t d, double* dx);

// out[i,:] = src[row_of[i],:], zero row when row_of[i] < 0
void gather_rows_forward_serial(const double* src, const std::int64_t* row_of, std::int64_t n,
                                std::int64_t d, double* out);
void gather_rows_forward(const double* src, const std::int64_t* row_of, std::int64_t n,
                         std::int64_t d, double* out);
// dsrc[v,:] += sum of dout rows of v's members
void gather_rows_backward(const double* dout, const std::int64_t* offsets,
                          const std::int64_t* members, std::int64_t num_segments, std::int64_t d,
                          double* dsrc);

// canvas[cell_of[v],:] = rows[v,:] over a zeroed canvas; cells are distinct
void scatter_rows_forward(const double* rows, const std::int64_t* cell_of,
                          std::int64_t num_segments, std::int64_t d, double* canvas);
void scatter_rows_backward(const double* dcanvas, const std::int64_t* cell_of,
                           std::int64_t num_segments, std::int64_t d, double* drows);

// ---- batch norm helper: per-channel mean/population variance ----
void bn_stats_serial(const double* x, std::int64_t n, std::int64_t c, double* mean, double* var);
void bn_stats(const double* x, std::int64_t n, std::int64_t c, double* mean, double* var);

}  // namespace mvf::kernels

#include <doctest.h>

#include <cmath>

#include "fixtures.hpp"
#include "mvf/kernels.hpp"
#include "mvf/ops.hpp"
#include "mvf/tensor.hpp"

using namespace mvf;

namespace {

Tensor random_tensor(std::vector<std::int64_t> shape, std::uint64_t seed, double lo = -1.0,
                     double hi = 1.0) {
    Rng rng(seed);
    std::int64_t n = 1;
    for (std::int64_t d : shape) n *= d;
    std::vector<double> data(static_cast<std::size_t>(n));
    for (double& v : data) v = rng.uniform(lo, hi);
    return Tensor::from_data(std::move(shape), std::move(data));
}

// Project a non-scalar op output to a scalar with fixed random weights so
// finite differences can probe every output element.
Tensor project(const Tensor& y, std::uint64_t seed) {
    return sum(mul(y, random_tensor(y.shape(), seed)));
}

VoxelMapping small_mapping() {
    PointCloud pc;
    // 6 points in 3 voxels of the 4x4 demo grid: sizes 3, 2, 1.
    pc.points.push_back({0.2, 0.2, 0.0, 0.0});
    pc.points.push_back({0.4, 0.6, 0.0, 0.0});
    pc.points.push_back({0.7, 0.3, 0.0, 0.0});
    pc.points.push_back({2.5, 1.5, 0.0, 0.0});
    pc.points.push_back({2.2, 1.8, 0.0, 0.0});
    pc.points.push_back({3.5, 3.5, 0.0, 0.0});
    return dynamic_voxelize(pc, fixtures::fig2_grid());
}

}  // namespace

TEST_SUITE("tensor") {

TEST_CASE("linear with identity weights") {
    const Tensor x = Tensor::from_data({1, 2}, {1.0, 2.0});
    const Tensor w = Tensor::from_data({2, 2}, {1.0, 0.0, 0.0, 1.0});
    const Tensor b = Tensor::zeros({2});
    const Tensor y = linear(x, w, b);
    CHECK(y.values() == std::vector<double>{1.0, 2.0});
}

TEST_CASE("linear hand-computed case") {
    // [[1,1]] @ [[2,0],[0,3]] + [1,1] = [[3,4]]
    const Tensor x = Tensor::from_data({1, 2}, {1.0, 1.0});
    const Tensor w = Tensor::from_data({2, 2}, {2.0, 0.0, 0.0, 3.0});
    const Tensor b = Tensor::from_data({2}, {1.0, 1.0});
    const Tensor y = linear(x, w, b);
    CHECK(y.values() == std::vector<double>{3.0, 4.0});

    CHECK_THROWS_AS(linear(x, Tensor::zeros({3, 2}), b), ShapeMismatchError);
}

TEST_CASE("gradient of sum(xW+b) wrt W is the replicated input") {
    const Tensor x = Tensor::from_data({1, 2}, {1.0, 2.0});
    Tensor w = Tensor::from_data({2, 2}, {0.3, -0.4, 0.1, 0.7}, /*requires_grad=*/true);
    const Tensor b = Tensor::zeros({2});
    sum(linear(x, w, b)).backward();
    CHECK(w.grad() == std::vector<double>{1.0, 1.0, 2.0, 2.0});

    const auto report = grad_check(
        [&](const Tensor& probe) { return sum(linear(x, probe, b)); }, w, 1e-5, 1e-6);
    CHECK(report.pass);
}

TEST_CASE("batch_norm normalizes a two-row batch") {
    // mean 2, population var 1 -> roughly [-1, 1] at eps 1e-5
    const Tensor x = Tensor::from_data({2, 1}, {1.0, 3.0});
    const Tensor gamma = Tensor::full({1}, 1.0);
    const Tensor beta = Tensor::zeros({1});
    Tensor rm = Tensor::zeros({1});
    Tensor rv = Tensor::full({1}, 1.0);
    const Tensor y = batch_norm(x, gamma, beta, rm, rv, /*train=*/true, 0.1, 1e-5);
    CHECK(y.values()[0] == doctest::Approx(-1.0).epsilon(1e-3));
    CHECK(y.values()[1] == doctest::Approx(1.0).epsilon(1e-3));
    // Running stats fold in the batch statistics with momentum 0.1.
    CHECK(rm.values()[0] == doctest::Approx(0.2));
    CHECK(rv.values()[0] == doctest::Approx(0.9 + 0.1 * 1.0));
}

TEST_CASE("batch_norm zero-variance batch maps to beta") {
    const Tensor x = Tensor::from_data({3, 1}, {5.0, 5.0, 5.0});
    const Tensor gamma = Tensor::full({1}, 1.0);
    const Tensor beta = Tensor::zeros({1});
    Tensor rm = Tensor::zeros({1});
    Tensor rv = Tensor::full({1}, 1.0);
    const Tensor y = batch_norm(x, gamma, beta, rm, rv, true, 0.1, 1e-5);
    for (double v : y.values()) CHECK(v == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("batch_norm eval mode with unit running stats is near identity") {
    const Tensor x = random_tensor({4, 3}, 17);
    const Tensor gamma = Tensor::full({3}, 1.0);
    const Tensor beta = Tensor::zeros({3});
    Tensor rm = Tensor::zeros({3});
    Tensor rv = Tensor::full({3}, 1.0);
    const Tensor y = batch_norm(x, gamma, beta, rm, rv, /*train=*/false, 0.1, 1e-5);
    for (std::size_t i = 0; i < y.values().size(); ++i) {
        CHECK(y.values()[i] == doctest::Approx(x.values()[i]).epsilon(1e-4));
    }
    // Eval mode must not touch the running stats.
    CHECK(rm.values() == std::vector<double>{0.0, 0.0, 0.0});
}

TEST_CASE("segment max pooling and gather follow the mapping") {
    PointCloud pc;
    pc.points.push_back({0.2, 0.2, 0.0, 0.0});
    pc.points.push_back({0.4, 0.6, 0.0, 0.0});
    pc.points.push_back({0.7, 0.3, 0.0, 0.0});
    const VoxelMapping m = dynamic_voxelize(pc, fixtures::fig2_grid());
    REQUIRE(m.num_voxels() == 1);

    const Tensor x = Tensor::from_data({3, 1}, {1.0, 5.0, 3.0});
    const Tensor pooled = max_pool_segments(x, m);
    CHECK(pooled.values() == std::vector<double>{5.0});
    const Tensor back = gather_segments(pooled, m);
    CHECK(back.values() == std::vector<double>{5.0, 5.0, 5.0});
}

TEST_CASE("max pooling is permutation invariant within segments") {
    const VoxelMapping m = small_mapping();
    Tensor x = random_tensor({6, 4}, 3);
    const Tensor pooled = max_pool_segments(x, m);

    // Swap two points of the first voxel (indices 0 and 2 share a cell),
    // leaving the mapping itself unchanged.
    std::vector<double> swapped = x.values();
    for (int c = 0; c < 4; ++c) std::swap(swapped[0 * 4 + c], swapped[2 * 4 + c]);
    const Tensor pooled2 = max_pool_segments(Tensor::from_data({6, 4}, swapped), m);
    CHECK(pooled.values() == pooled2.values());
}

TEST_CASE("pooling the gathered tensor reproduces the voxel tensor exactly") {
    const VoxelMapping m = small_mapping();
    const Tensor x = random_tensor({6, 4}, 5);
    const Tensor pooled = max_pool_segments(x, m);
    const Tensor repooled = max_pool_segments(gather_segments(pooled, m), m);
    CHECK(pooled.values() == repooled.values());
}

TEST_CASE("conv2d stride-2 output shape uses ceil semantics") {
    const Tensor x = Tensor::zeros({468, 468, 1});
    const Tensor w = Tensor::zeros({3, 3, 1, 1});
    const Tensor b = Tensor::zeros({1});
    const Tensor y = conv2d(x, w, b, 2);
    CHECK(y.shape() == std::vector<std::int64_t>{234, 234, 1});

    const Tensor odd = conv2d(Tensor::zeros({7, 5, 1}), w, b, 2);
    CHECK(odd.shape() == std::vector<std::int64_t>{4, 3, 1});
}

TEST_CASE("conv2d with a center-one kernel is the identity") {
    const Tensor x = random_tensor({6, 5, 3}, 11);
    std::vector<double> wdata(3 * 3 * 3 * 3, 0.0);
    for (int c = 0; c < 3; ++c) {
        // kernel position (1,1), in-channel c, out-channel c
        wdata[static_cast<std::size_t>(((1 * 3 + 1) * 3 + c) * 3 + c)] = 1.0;
    }
    const Tensor w = Tensor::from_data({3, 3, 3, 3}, wdata);
    const Tensor y = conv2d(x, w, Tensor::zeros({3}), 1);
    CHECK(y.values() == x.values());
}

TEST_CASE("upsample after stride-2 conv restores spatial dims") {
    const Tensor x = random_tensor({8, 8, 2}, 13);
    const Tensor w = random_tensor({3, 3, 2, 2}, 14);
    const Tensor down = conv2d(x, w, Tensor::zeros({2}), 2);
    CHECK(down.shape() == std::vector<std::int64_t>{4, 4, 2});
    const Tensor up = bilinear_upsample(down, 2);
    CHECK(up.shape() == std::vector<std::int64_t>{8, 8, 2});
}

TEST_CASE("gradients match central finite differences per op") {
    // Jittered away from relu/max kinks; step 1e-5, tolerance 1e-4.
    const Tensor x = random_tensor({4, 3}, 21, 0.1, 1.2);

    auto check_unary = [&](const std::function<Tensor(const Tensor&)>& f) {
        const auto report = grad_check(f, x, 1e-5, 1e-4);
        CAPTURE(report.max_rel_error);
        CHECK(report.pass);
    };
    check_unary([](const Tensor& t) { return sum(relu(t)); });
    check_unary([](const Tensor& t) { return project(sigmoid(t), 1); });
    check_unary([](const Tensor& t) { return project(log(t), 2); });
    check_unary([](const Tensor& t) { return project(sin(t), 3); });
    check_unary([](const Tensor& t) { return project(pow_scalar(t, 2.5), 4); });
    check_unary([](const Tensor& t) { return project(clamp(t, -0.5, 0.9), 5); });
    check_unary([](const Tensor& t) { return project(smooth_l1(t, 0.6), 6); });
    check_unary([](const Tensor& t) { return project(neg(t), 7); });
    check_unary([](const Tensor& t) { return project(mul_scalar(add_scalar(t, 0.3), -1.7), 8); });
    check_unary([](const Tensor& t) { return project(reshape(t, {3, 4}), 9); });
    check_unary([](const Tensor& t) { return project(slice_last(t, 1, 2), 10); });

    const Tensor other = random_tensor({4, 3}, 22, 0.2, 0.8);
    check_unary([&](const Tensor& t) { return project(add(t, other), 11); });
    check_unary([&](const Tensor& t) { return project(sub(other, t), 12); });
    check_unary([&](const Tensor& t) { return project(mul(t, other), 13); });
    check_unary([&](const Tensor& t) { return project(concat_features({t, other}), 14); });
}

TEST_CASE("gradients match finite differences for the dense layers") {
    const Tensor x = random_tensor({5, 4}, 31);
    const Tensor w = random_tensor({4, 3}, 32);
    const Tensor b = random_tensor({3}, 33);

    CHECK(grad_check([&](const Tensor& t) { return project(linear(t, w, b), 1); }, x).pass);
    CHECK(grad_check([&](const Tensor& t) { return project(linear(x, t, b), 2); }, w).pass);
    CHECK(grad_check([&](const Tensor& t) { return project(linear(x, w, t), 3); }, b).pass);

    const Tensor gamma = random_tensor({4}, 34, 0.5, 1.5);
    const Tensor beta = random_tensor({4}, 35);
    auto bn_train = [&](const Tensor& t) {
        Tensor rm = Tensor::zeros({4});
        Tensor rv = Tensor::full({4}, 1.0);
        return project(batch_norm(t, gamma, beta, rm, rv, true), 4);
    };
    CHECK(grad_check(bn_train, x).pass);
    auto bn_gamma = [&](const Tensor& t) {
        Tensor rm = Tensor::zeros({4});
        Tensor rv = Tensor::full({4}, 1.0);
        return project(batch_norm(x, t, beta, rm, rv, true), 5);
    };
    CHECK(grad_check(bn_gamma, gamma).pass);
    auto bn_eval = [&](const Tensor& t) {
        Tensor rm = Tensor::from_data({4}, {0.1, -0.2, 0.3, 0.0});
        Tensor rv = Tensor::from_data({4}, {1.1, 0.9, 1.3, 0.7});
        return project(batch_norm(t, gamma, beta, rm, rv, false), 6);
    };
    CHECK(grad_check(bn_eval, x).pass);
}

TEST_CASE("gradients match finite differences for conv and upsample") {
    const Tensor x = random_tensor({5, 6, 2}, 41);
    const Tensor w = random_tensor({3, 3, 2, 3}, 42);
    const Tensor b = random_tensor({3}, 43);
    for (std::int64_t stride : {1, 2}) {
        CHECK(grad_check([&](const Tensor& t) { return project(conv2d(t, w, b, stride), 1); }, x)
                  .pass);
        CHECK(grad_check([&](const Tensor& t) { return project(conv2d(x, t, b, stride), 2); }, w)
                  .pass);
        CHECK(grad_check([&](const Tensor& t) { return project(conv2d(x, w, t, stride), 3); }, b)
                  .pass);
    }
    CHECK(grad_check([&](const Tensor& t) { return project(bilinear_upsample(t, 2), 4); }, x)
              .pass);
}

TEST_CASE("gradients match finite differences for segment ops") {
    const VoxelMapping m = small_mapping();
    const Tensor x = random_tensor({6, 3}, 51);
    CHECK(grad_check([&](const Tensor& t) { return project(max_pool_segments(t, m), 1); }, x)
              .pass);
    const Tensor v = random_tensor({3, 3}, 52);
    CHECK(grad_check([&](const Tensor& t) { return project(gather_segments(t, m), 2); }, v).pass);

    std::vector<std::int64_t> cells;
    const auto [h, w] = canvas_cells(fixtures::fig2_grid(), m, cells);
    CHECK(grad_check(
              [&](const Tensor& t) {
                  return project(scatter_rows_to_grid(t, cells, h, w), 3);
              },
              v)
              .pass);
    const Tensor canvas = random_tensor({h, w, 3}, 53);
    CHECK(grad_check(
              [&](const Tensor& t) { return project(extract_rows_from_grid(t, cells), 4); },
              canvas)
              .pass);
}

TEST_CASE("grad_check on relu away from kinks is tight") {
    const Tensor x = random_tensor({3, 3}, 61, 0.2, 1.0);
    const auto report =
        grad_check([](const Tensor& t) { return sum(relu(t)); }, x, 1e-5, 1e-6);
    CHECK(report.pass);  // analytic gradient is an indicator
}

TEST_CASE("grad_check of a constant function reports exactly zero") {
    const Tensor x = random_tensor({2, 2}, 62);
    const auto report =
        grad_check([](const Tensor& t) { return mul_scalar(sum(mul_scalar(t, 0.0)), 1.0); }, x);
    CHECK(report.max_rel_error == 0.0);
    CHECK(report.pass);
}

TEST_CASE("serial and parallel kernels agree bitwise") {
    Rng rng(71);
    const std::int64_t n = 37, din = 15, dout = 9;
    std::vector<double> x(static_cast<std::size_t>(n * din)), w(static_cast<std::size_t>(din * dout)),
        b(static_cast<std::size_t>(dout));
    for (double& v : x) v = rng.uniform(-2.0, 2.0);
    for (double& v : w) v = rng.uniform(-2.0, 2.0);
    for (double& v : b) v = rng.uniform(-2.0, 2.0);
    std::vector<double> y1(static_cast<std::size_t>(n * dout)), y2(y1);
    kernels::linear_forward_serial(x.data(), w.data(), b.data(), y1.data(), n, din, dout);
    kernels::linear_forward(x.data(), w.data(), b.data(), y2.data(), n, din, dout);
    CHECK(y1 == y2);

    const std::int64_t h = 13, wd = 11, cin = 3, cout = 5;
    std::vector<double> cx(static_cast<std::size_t>(h * wd * cin)),
        cw(static_cast<std::size_t>(3 * 3 * cin * cout)), cb(static_cast<std::size_t>(cout));
    for (double& v : cx) v = rng.uniform(-2.0, 2.0);
    for (double& v : cw) v = rng.uniform(-2.0, 2.0);
    for (double& v : cb) v = rng.uniform(-2.0, 2.0);
    const std::int64_t oh = 7, ow = 6;  // ceil(13/2), ceil(11/2)
    std::vector<double> cy1(static_cast<std::size_t>(oh * ow * cout)), cy2(cy1);
    kernels::conv2d_forward_serial(cx.data(), cw.data(), cb.data(), cy1.data(), h, wd, cin, cout,
                                   3, 3, 2, 1, oh, ow);
    kernels::conv2d_forward(cx.data(), cw.data(), cb.data(), cy2.data(), h, wd, cin, cout, 3, 3,
                            2, 1, oh, ow);
    CHECK(cy1 == cy2);

    const VoxelMapping m = small_mapping();
    std::vector<std::int64_t> offsets = {0};
    std::vector<std::int64_t> members;
    for (const auto& list : m.voxel_to_points) {
        members.insert(members.end(), list.begin(), list.end());
        offsets.push_back(static_cast<std::int64_t>(members.size()));
    }
    const std::int64_t nv = static_cast<std::int64_t>(m.num_voxels()), d = 4;
    std::vector<double> feats(static_cast<std::size_t>(6 * d));
    for (double& v : feats) v = rng.uniform(-1.0, 1.0);
    std::vector<double> out1(static_cast<std::size_t>(nv * d)), out2(out1);
    std::vector<std::int64_t> arg1(static_cast<std::size_t>(nv * d)), arg2(arg1);
    kernels::segment_max_forward_serial(feats.data(), offsets.data(), members.data(), nv, d,
                                        out1.data(), arg1.data());
    kernels::segment_max_forward(feats.data(), offsets.data(), members.data(), nv, d, out2.data(),
                                 arg2.data());
    CHECK(out1 == out2);
    CHECK(arg1 == arg2);

    std::vector<double> g1(static_cast<std::size_t>(6 * d)), g2(g1);
    kernels::gather_rows_forward_serial(out1.data(), m.point_to_voxel.data(), 6, d, g1.data());
    kernels::gather_rows_forward(out1.data(), m.point_to_voxel.data(), 6, d, g2.data());
    CHECK(g1 == g2);

    std::vector<double> mean1(4), var1(4), mean2(4), var2(4);
    kernels::bn_stats_serial(x.data(), n * din / 4, 4, mean1.data(), var1.data());
    kernels::bn_stats(x.data(), n * din / 4, 4, mean2.data(), var2.data());
    CHECK(mean1 == mean2);
    CHECK(var1 == var2);
}

TEST_CASE("ops refuse mismatched shapes") {
    const Tensor a = Tensor::zeros({2, 3});
    const Tensor b = Tensor::zeros({3, 2});
    CHECK_THROWS_AS(add(a, b), ShapeMismatchError);
    CHECK_THROWS_AS(mul(a, b), ShapeMismatchError);
    CHECK_THROWS_AS(concat_features({a, b}), ShapeMismatchError);
    CHECK_THROWS_AS(reshape(a, {7}), ShapeMismatchError);
    CHECK_THROWS_AS(slice_last(a, 2, 2), ShapeMismatchError);
    const VoxelMapping m = small_mapping();
    CHECK_THROWS_AS(max_pool_segments(Tensor::zeros({4, 2}), m), InconsistentMappingError);
    CHECK_THROWS_AS(gather_segments(Tensor::zeros({4, 2}), m), InconsistentMappingError);
}

}  // TEST_SUITE

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "mvf/common.hpp"

namespace mvf {

namespace detail {

/// One recorded node of the gradient tape. `backward_fn` pulls this node's
/// grad into its parents' grads; replaying nodes in reverse topological
/// order visits each recorded operation exactly once.
struct TensorNode {
    std::vector<std::int64_t> shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backward_fn;

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
};

}  // namespace detail

/// Dense row-major float64 tensor with value semantics over a shared node.
/// Operations in ops.hpp record the tape when any input requires gradients.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<std::int64_t> shape, bool requires_grad = false);
    static Tensor full(std::vector<std::int64_t> shape, double value, bool requires_grad = false);
    static Tensor from_data(std::vector<std::int64_t> shape, std::vector<double> data,
                            bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const std::vector<std::int64_t>& shape() const { return node_->shape; }
    std::int64_t numel() const { return node_->numel(); }
    std::int64_t dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t rank() const { return node_->shape.size(); }

    double* data() { return node_->data.data(); }
    const double* data() const { return node_->data.data(); }
    std::vector<double>& values() { return node_->data; }
    const std::vector<double>& values() const { return node_->data; }

    /// Scalar extraction; tensor must hold exactly one element.
    double value() const;

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool v) { node_->requires_grad = v; }

    const std::vector<double>& grad() const;
    void zero_grad() {
        if (node_) node_->grad.assign(node_->data.size(), 0.0);
    }

    /// Reverse-mode sweep from this scalar: seeds d(self)=1 and replays the
    /// tape once in reverse topological order.
    void backward() const;

    std::shared_ptr<detail::TensorNode> node() const { return node_; }
    explicit Tensor(std::shared_ptr<detail::TensorNode> node) : node_(std::move(node)) {}

private:
    std::shared_ptr<detail::TensorNode> node_;
};

/// Builds an op output node; `backward_fn` runs during the reverse sweep
/// only when some input requires gradients.
Tensor make_op_output(std::vector<std::int64_t> shape, std::vector<double> data,
                      std::vector<Tensor> inputs,
                      std::function<void(detail::TensorNode&)> backward_fn);

struct GradCheckReport {
    double max_rel_error = 0.0;
    bool pass = false;
};

/// Compares the reverse-mode gradient of the scalar function `f` at `x`
/// against central finite differences. The finite-difference side uses
/// forward evaluations only, independent of the tape.
GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                           double step = 1e-5, double tolerance = 1e-4);

}  // namespace mvf

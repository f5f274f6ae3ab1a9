#include "mvf/tensor.hpp"

#include <algorithm>
#include <unordered_set>

namespace mvf {

namespace {

std::int64_t shape_numel(const std::vector<std::int64_t>& shape) {
    std::int64_t n = 1;
    for (std::int64_t d : shape) {
        if (d < 0) throw ShapeMismatchError("negative dimension");
        n *= d;
    }
    return n;
}

}  // namespace

Tensor Tensor::zeros(std::vector<std::int64_t> shape, bool requires_grad) {
    const auto n = static_cast<std::size_t>(shape_numel(shape));
    return from_data(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(std::vector<std::int64_t> shape, double value, bool requires_grad) {
    const auto n = static_cast<std::size_t>(shape_numel(shape));
    return from_data(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from_data(std::vector<std::int64_t> shape, std::vector<double> data,
                         bool requires_grad) {
    if (static_cast<std::int64_t>(data.size()) != shape_numel(shape)) {
        throw ShapeMismatchError("data length does not match shape");
    }
    auto node = std::make_shared<detail::TensorNode>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from_data({1}, {value}, requires_grad);
}

double Tensor::value() const {
    if (!node_ || node_->numel() != 1) {
        throw ShapeMismatchError("value() requires a single-element tensor");
    }
    return node_->data[0];
}

const std::vector<double>& Tensor::grad() const {
    node_->ensure_grad();
    return node_->grad;
}

void Tensor::backward() const {
    if (!node_ || node_->numel() != 1) {
        throw ShapeMismatchError("backward() requires a scalar root");
    }
    // Post-order DFS gives a topological order of the recorded subgraph;
    // replaying it reversed visits each node once, parents after children.
    std::vector<detail::TensorNode*> order;
    std::unordered_set<detail::TensorNode*> seen;
    struct Frame {
        detail::TensorNode* node;
        std::size_t next_parent;
    };
    std::vector<Frame> stack;
    stack.push_back({node_.get(), 0});
    seen.insert(node_.get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_parent < f.node->parents.size()) {
            detail::TensorNode* p = f.node->parents[f.next_parent++].get();
            if (seen.insert(p).second) {
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(f.node);
            stack.pop_back();
        }
    }

    for (detail::TensorNode* n : order) n->ensure_grad();
    node_->grad.assign(node_->data.size(), 1.0);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::TensorNode* n = *it;
        if (n->backward_fn) n->backward_fn(*n);
    }
}

Tensor make_op_output(std::vector<std::int64_t> shape, std::vector<double> data,
                      std::vector<Tensor> inputs,
                      std::function<void(detail::TensorNode&)> backward_fn) {
    bool needs_grad = false;
    for (const Tensor& t : inputs) {
        if (t.defined() && t.requires_grad()) {
            needs_grad = true;
            break;
        }
    }
    Tensor out = Tensor::from_data(std::move(shape), std::move(data), needs_grad);
    if (needs_grad) {
        auto node = out.node();
        node->parents.reserve(inputs.size());
        for (const Tensor& t : inputs) {
            if (t.defined()) node->parents.push_back(t.node());
        }
        node->backward_fn = std::move(backward_fn);
    }
    return out;
}

GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                           double step, double tolerance) {
    Tensor probe = Tensor::from_data(x.shape(), x.values(), /*requires_grad=*/true);
    Tensor y = f(probe);
    if (y.numel() != 1) {
        throw ShapeMismatchError("grad_check requires a scalar-valued function");
    }
    y.backward();
    const std::vector<double> analytic = probe.grad();

    Tensor fd_point = Tensor::from_data(x.shape(), x.values(), /*requires_grad=*/false);
    GradCheckReport report;
    for (std::size_t i = 0; i < fd_point.values().size(); ++i) {
        const double saved = fd_point.values()[i];
        fd_point.values()[i] = saved + step;
        const double hi = f(fd_point).value();
        fd_point.values()[i] = saved - step;
        const double lo = f(fd_point).value();
        fd_point.values()[i] = saved;
        const double fd = (hi - lo) / (2.0 * step);
        const double a = analytic[i];
        const double denom = std::max({std::abs(a), std::abs(fd), 1e-6});
        const double rel = std::abs(a - fd) / denom;
        report.max_rel_error = std::max(report.max_rel_error, rel);
    }
    report.pass = report.max_rel_error < tolerance;
    return report;
}

}  // namespace mvf

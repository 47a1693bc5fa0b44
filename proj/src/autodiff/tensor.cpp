#include "sfa/autodiff/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace sfa::ad {

namespace {

std::atomic<std::uint64_t> g_next_seq{1};
thread_local bool t_grad_enabled = true;

const std::shared_ptr<TensorImpl>& checked(const std::shared_ptr<TensorImpl>& impl) {
    if (!impl) {
        throw GraphError("use of an undefined tensor");
    }
    return impl;
}

}  // namespace

std::size_t numel_of(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) {
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        out << (i ? "," : "") << shape[i];
    }
    out << ']';
    return out.str();
}

Tensor::Tensor(Shape shape, std::vector<float> data, bool requires_grad)
    : impl_(std::make_shared<TensorImpl>()) {
    if (numel_of(shape) != data.size()) {
        throw ShapeError("tensor shape " + shape_str(shape) + " holds " +
                         std::to_string(numel_of(shape)) + " values, got " +
                         std::to_string(data.size()));
    }
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
    impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), 0.0f, requires_grad);
}

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
    const auto n = numel_of(shape);
    return Tensor(std::move(shape), std::vector<float>(n, value), requires_grad);
}

Tensor Tensor::scalar(float value, bool requires_grad) {
    return Tensor({}, {value}, requires_grad);
}

Tensor Tensor::from_impl(std::shared_ptr<TensorImpl> impl) {
    Tensor t;
    t.impl_ = std::move(impl);
    return t;
}

const Shape& Tensor::shape() const { return checked(impl_)->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
    const auto& s = shape();
    if (axis >= s.size()) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(s));
    }
    return s[axis];
}

std::size_t Tensor::numel() const { return checked(impl_)->data.size(); }

std::span<const float> Tensor::data() const { return checked(impl_)->data; }

std::span<float> Tensor::mutable_data() {
    if (checked(impl_)->node) {
        throw GraphError("in-place write to a non-leaf tensor");
    }
    return impl_->data;
}

float Tensor::item() const {
    if (numel() != 1) {
        throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    }
    return impl_->data[0];
}

bool Tensor::requires_grad() const { return checked(impl_)->requires_grad; }

void Tensor::set_requires_grad(bool on) {
    if (checked(impl_)->node) {
        throw GraphError("requires_grad can only be toggled on leaves");
    }
    impl_->requires_grad = on;
}

bool Tensor::is_leaf() const { return checked(impl_)->node == nullptr; }

bool Tensor::has_grad() const { return checked(impl_)->grad.has_value(); }

std::span<const float> Tensor::grad() const {
    if (!has_grad()) {
        throw GraphError("tensor has no gradient; run backward first");
    }
    return *impl_->grad;
}

void Tensor::zero_grad() { checked(impl_)->grad.reset(); }

Tensor Tensor::detach() const { return Tensor(shape(), std::vector<float>(data().begin(), data().end())); }

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

namespace {

template <typename Range>
Tensor make_result_impl(Shape shape, std::vector<float> data, const Range& inputs, BackwardFn backward) {
    Tensor out(std::move(shape), std::move(data));
    if (!t_grad_enabled) {
        return out;
    }
    bool needs = false;
    for (const auto& in : inputs) {
        needs = needs || in.requires_grad();
    }
    if (!needs) {
        return out;
    }
    auto node = std::make_shared<Node>();
    node->seq = g_next_seq.fetch_add(1, std::memory_order_relaxed);
    for (const auto& in : inputs) {
        node->inputs.push_back(in.impl());
    }
    node->backward = std::move(backward);
    out.impl()->requires_grad = true;
    out.impl()->node = std::move(node);
    return out;
}

}  // namespace

Tensor make_result(Shape shape, std::vector<float> data, std::initializer_list<Tensor> inputs,
                   BackwardFn backward) {
    return make_result_impl(std::move(shape), std::move(data), inputs, std::move(backward));
}

Tensor make_result(Shape shape, std::vector<float> data, const std::vector<Tensor>& inputs,
                   BackwardFn backward) {
    return make_result_impl(std::move(shape), std::move(data), inputs, std::move(backward));
}

void backward(const Tensor& loss) {
    const auto& root = checked(loss.impl());
    if (root->data.size() != 1) {
        throw GraphError("backward needs a scalar loss, got shape " + shape_str(root->shape));
    }
    if (!root->requires_grad) {
        throw GraphError("loss does not depend on any tensor that requires grad");
    }

    std::vector<TensorImpl*> interior;
    std::vector<TensorImpl*> leaves;
    std::unordered_set<TensorImpl*> seen;
    std::vector<TensorImpl*> stack{root.get()};
    seen.insert(root.get());
    while (!stack.empty()) {
        auto* cur = stack.back();
        stack.pop_back();
        if (!cur->node) {
            if (cur->requires_grad) {
                leaves.push_back(cur);
            }
            continue;
        }
        interior.push_back(cur);
        for (const auto& in : cur->node->inputs) {
            if (in->requires_grad && seen.insert(in.get()).second) {
                stack.push_back(in.get());
            }
        }
    }

    for (auto* leaf : leaves) {
        if (leaf->grad) {
            throw GraphError("backward called again without zero_grad on a leaf of shape " +
                             shape_str(leaf->shape));
        }
    }
    for (auto* leaf : leaves) {
        leaf->grad.emplace(leaf->data.size(), 0.0f);
    }

    std::sort(interior.begin(), interior.end(),
              [](const TensorImpl* a, const TensorImpl* b) { return a->node->seq > b->node->seq; });

    std::unordered_map<TensorImpl*, std::vector<float>> pending;
    if (root->node) {
        pending[root.get()] = std::vector<float>(1, 1.0f);
    } else {
        (*root->grad)[0] += 1.0f;
    }

    std::vector<std::vector<float>*> sinks;
    for (auto* cur : interior) {
        auto it = pending.find(cur);
        if (it == pending.end()) {
            continue;
        }
        std::vector<float> grad_out = std::move(it->second);
        pending.erase(it);

        const auto& inputs = cur->node->inputs;
        sinks.assign(inputs.size(), nullptr);
        for (std::size_t i = 0; i < inputs.size(); ++i) {
            auto* in = inputs[i].get();
            if (!in->requires_grad) {
                continue;
            }
            if (!in->node) {
                sinks[i] = &*in->grad;
            } else {
                auto& buf = pending[in];
                if (buf.empty()) {
                    buf.assign(in->data.size(), 0.0f);
                }
                sinks[i] = &buf;
            }
        }
        cur->node->backward(grad_out, GradSinks(sinks.data(), sinks.size()));
    }
}

}  // namespace sfa::ad

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sfa::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Misuse of the tape: backward without zero_grad, non-scalar loss, missing grads.
class GraphError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

struct TensorImpl;

// Gradient sinks handed to a node's backward function, one per input. A null
// entry means that input does not need a gradient.
using GradSinks = std::span<std::vector<float>* const>;
using BackwardFn = std::function<void(std::span<const float> grad_out, GradSinks grad_in)>;

struct Node {
    std::uint64_t seq = 0;
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    BackwardFn backward;
};

struct TensorImpl {
    Shape shape;
    std::vector<float> data;
    bool requires_grad = false;
    std::optional<std::vector<float>> grad;
    std::shared_ptr<Node> node;
};

// Handle to a float32 row-major array that may take part in a reverse-mode graph.
// Copies share storage. Values of non-leaf tensors are immutable.
class Tensor {
public:
    Tensor() = default;
    Tensor(Shape shape, std::vector<float> data, bool requires_grad = false);

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, float value, bool requires_grad = false);
    static Tensor scalar(float value, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const;
    std::size_t dim(std::size_t axis) const;
    std::size_t rank() const { return shape().size(); }
    std::size_t numel() const;

    std::span<const float> data() const;
    // Only leaves may be written in place (parameters, inputs).
    std::span<float> mutable_data();
    float item() const;
    float at(std::size_t flat_index) const { return data()[flat_index]; }

    bool requires_grad() const;
    void set_requires_grad(bool on);
    bool is_leaf() const;
    bool has_grad() const;
    std::span<const float> grad() const;
    void zero_grad();

    // Fresh leaf with copied values and no history.
    Tensor detach() const;

    const std::shared_ptr<TensorImpl>& impl() const { return impl_; }
    static Tensor from_impl(std::shared_ptr<TensorImpl> impl);

private:
    std::shared_ptr<TensorImpl> impl_;
};

// Builds the output of a differentiable op. A node is attached only when grad
// mode is on and at least one input requires a gradient.
Tensor make_result(Shape shape, std::vector<float> data, std::initializer_list<Tensor> inputs,
                   BackwardFn backward);
Tensor make_result(Shape shape, std::vector<float> data, const std::vector<Tensor>& inputs,
                   BackwardFn backward);

// Reverse-mode sweep from a scalar loss. Nodes are visited in reverse creation
// order. Every reachable leaf that requires grad ends up with a grad buffer.
// Throws GraphError if a reachable leaf still holds a grad from a previous call.
void backward(const Tensor& loss);

bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

}  // namespace sfa::ad

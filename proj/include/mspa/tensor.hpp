#pragma once

// Dense float32 tensors with define-by-run reverse-mode differentiation.
//
// A Tensor is a shared handle: copies alias the same storage, the way
// framework tensors behave. Every differentiable op executed while grad
// mode is on, with at least one input that requires grad, appends a node
// to the calling thread's tape. backward() replays the tape in reverse and
// then clears it.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mspa/grid.hpp"

namespace mspa {

using Shape = std::vector<int>;

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

namespace detail {
struct Storage {
    Shape shape;
    std::vector<float> data;
    std::vector<float> grad;  // empty until something flows into it
    bool requires_grad = false;
};
}  // namespace detail

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, float value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<float> values, bool requires_grad = false);
    static Tensor scalar(float value, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    int rank() const { return static_cast<int>(impl_->shape.size()); }
    int dim(int axis) const { return impl_->shape.at(static_cast<std::size_t>(axis)); }
    std::size_t numel() const { return impl_->data.size(); }

    std::span<const float> data() const { return impl_->data; }
    // Writable view. Only meaningful on leaves (parameters, inputs); mutating
    // a tensor that a recorded op still references corrupts its backward.
    std::span<float> mutable_data() { return impl_->data; }
    float item() const;
    float operator[](std::size_t i) const { return impl_->data[i]; }

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool on) { impl_->requires_grad = on; }
    bool has_grad() const { return !impl_->grad.empty(); }
    std::span<const float> grad() const { return impl_->grad; }
    std::span<float> mutable_grad() { return impl_->grad; }
    void zero_grad() { impl_->grad.clear(); }

    // Deep copy of data (and flag), detached from any tape.
    Tensor clone() const;
    Tensor detach() const;

    bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

private:
    explicit Tensor(std::shared_ptr<detail::Storage> impl) : impl_(std::move(impl)) {}
    std::shared_ptr<detail::Storage> impl_;

    friend struct TensorAccess;
};

namespace autograd {

using BackwardFn = std::function<void(std::span<const float> grad_out)>;

// Creates the result of a custom op. When grad mode is on and any input
// requires grad, the result requires grad and `backward` is taped; it must
// accumulate into inputs through grad_sink().
Tensor record(Shape shape, std::vector<float> values, const std::vector<Tensor>& inputs, BackwardFn backward);

// Lazily allocated gradient accumulator; empty span when t needs no grad.
std::span<float> grad_sink(const Tensor& t);

void backward(const Tensor& scalar_loss);
void clear();
std::size_t tape_size();
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

}  // namespace autograd

// ---- elementwise --------------------------------------------------------
// Binary ops require equal shapes, or one operand with a single element.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor relu(const Tensor& x);
Tensor exp(const Tensor& x);
// log(max(x, 1e-12)); the clamp blocks gradient below the floor.
Tensor log(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor square(const Tensor& x);
Tensor scale(const Tensor& x, float factor);

inline constexpr float kLogFloor = 1e-12f;

// ---- reductions ---------------------------------------------------------
Tensor sum(const Tensor& x);
Tensor sum(const Tensor& x, int axis);
Tensor mean(const Tensor& x);
Tensor mean(const Tensor& x, int axis);
// Per-pixel argmax over axis 0 of a C x H x W tensor; first max wins ties.
LabelMap argmax_channels(const Tensor& x);

// ---- structural ---------------------------------------------------------
Tensor reshape(const Tensor& x, Shape shape);
// Concatenate C_i x H x W tensors along the channel axis.
Tensor concat_channels(const std::vector<Tensor>& parts);
// Stack equally shaped tensors along a new leading axis.
Tensor stack(const std::vector<Tensor>& parts);
// Slice index `i` of the leading axis (rank drops by one).
Tensor select(const Tensor& x, int i);

// ---- image ops ----------------------------------------------------------
Tensor channel_softmax(const Tensor& x);
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, int stride = 1, int padding = 0);
// 2x2 window, stride 2; backward routes to the first maximum in row-major order.
Tensor max_pool2x2(const Tensor& x);
Tensor upsample_nearest2x(const Tensor& x);

}  // namespace mspa

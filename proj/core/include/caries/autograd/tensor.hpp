#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace caries::ag {

using Shape = std::vector<std::size_t>;

std::size_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorImpl;

/// Backward closure attached to a non-leaf tensor. `inputs` keeps the
/// producing tensors alive; `apply` reads the output gradient and
/// accumulates into the inputs that require gradients.
struct Node {
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    std::function<void(const TensorImpl& out)> apply;
};

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::shared_ptr<Node> node;

    void ensure_grad();
};

/// Shared handle to a dense row-major array of doubles. Copies alias the same
/// storage; use clone() for a deep copy.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const;
    std::size_t dim(std::size_t axis) const;
    std::size_t rank() const { return shape().size(); }
    std::size_t numel() const;

    std::span<const double> data() const;
    std::span<double> mutable_data();
    double item() const;
    double at(std::size_t flat) const { return data()[flat]; }

    bool requires_grad() const;
    Tensor& set_requires_grad(bool flag);
    bool is_leaf() const;

    bool has_grad() const;
    std::span<const double> grad() const;
    std::span<double> mutable_grad();
    void zero_grad();

    /// Reverse-mode sweep from a scalar tensor.
    void backward();

    Tensor detach() const;
    Tensor clone() const;

    /// True when data or grad contain NaN or Inf.
    bool has_nonfinite() const;

    TensorImpl* impl() const { return impl_.get(); }
    const std::shared_ptr<TensorImpl>& impl_ptr() const { return impl_; }

private:
    std::shared_ptr<TensorImpl> impl_;
};

/// Thread-local switch; graph construction is skipped while disabled.
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

namespace detail {
/// Creates the result tensor of an operation and wires a backward node when
/// any input requires a gradient and grad mode is on.
Tensor make_result(Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
                   std::function<void(const TensorImpl& out)> apply);
}  // namespace detail

}  // namespace caries::ag

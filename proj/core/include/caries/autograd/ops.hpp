#pragma once

#include <cstddef>
#include <vector>

#include "caries/autograd/tensor.hpp"

namespace caries::ag {

// Elementwise binary ops broadcast over trailing dimensions (numpy rules).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor maximum(const Tensor& a, const Tensor& b);  // ties route the gradient to `a`
Tensor minimum(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, double b);
Tensor mul(const Tensor& a, double b);
Tensor rsub(double a, const Tensor& b);  // a - b

Shape broadcast_shape(const Shape& a, const Shape& b);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator+(const Tensor& a, double b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, double b) { return add(a, -b); }
inline Tensor operator*(const Tensor& a, double b) { return mul(a, b); }
inline Tensor operator*(double a, const Tensor& b) { return mul(b, a); }
inline Tensor operator-(double a, const Tensor& b) { return rsub(a, b); }
inline Tensor operator-(const Tensor& a) { return mul(a, -1.0); }

// Unary.
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor square(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor softplus(const Tensor& x);  // log(1 + e^x), overflow-safe
Tensor pow(const Tensor& x, double exponent);
Tensor clamp(const Tensor& x, double lo, double hi);

// Shape manipulation.
Tensor reshape(const Tensor& x, Shape shape);
Tensor transpose(const Tensor& x);  // rank 2
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor narrow(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);
/// Selects entries along `axis`; differentiable w.r.t. the source.
Tensor gather(const Tensor& x, std::size_t axis, const std::vector<std::size_t>& indices);

// Reductions.
Tensor sum(const Tensor& x);
Tensor sum(const Tensor& x, std::size_t axis, bool keepdim = false);
Tensor mean(const Tensor& x);
Tensor mean(const Tensor& x, std::size_t axis, bool keepdim = false);
/// Max along an axis; the gradient goes to the first maximal entry.
Tensor max_over_axis(const Tensor& x, std::size_t axis, bool keepdim = false);

Tensor softmax(const Tensor& x, std::size_t axis);

/// [m,k] x [k,n] -> [m,n]
Tensor matmul(const Tensor& a, const Tensor& b);

enum class PadMode { Zero, Replicate };

/// Pads the two trailing dimensions of a [C,H,W] tensor by `pad` on every side.
Tensor pad2d(const Tensor& x, std::size_t pad, PadMode mode);

/// Direct cross-correlation. x: [C_in,H,W], w: [C_out,C_in,kh,kw].
Tensor conv2d(const Tensor& x, const Tensor& w, std::size_t stride = 1, std::size_t padding = 0,
              PadMode mode = PadMode::Zero);
/// Same with a per-output-channel bias of shape [C_out].
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride, std::size_t padding,
              PadMode mode = PadMode::Zero);

/// Normalizes the last axis, then applies gamma/beta of shape [D].
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

/// Indices of the K largest entries of a flattened tensor, descending by value;
/// equal values are ordered by ascending index. Not differentiable.
std::vector<std::size_t> topk_indices(const Tensor& x, std::size_t k);

}  // namespace caries::ag

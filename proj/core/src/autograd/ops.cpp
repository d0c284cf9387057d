#include "caries/autograd/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

#include "caries/error.hpp"

namespace caries::ag {

namespace {

using detail::make_result;

// Maps every output element of a broadcast to its source offsets in `a` and `b`.
struct Broadcast {
    Shape out;
    std::vector<std::size_t> stride_a, stride_b;
    std::size_t n = 0;
    bool same = false;

    Broadcast(const Shape& a, const Shape& b) : out(broadcast_shape(a, b)) {
        n = numel_of(out);
        same = (a == b);
        const std::size_t rank = out.size();
        stride_a = aligned_strides(a, rank);
        stride_b = aligned_strides(b, rank);
    }

    static std::vector<std::size_t> aligned_strides(const Shape& s, std::size_t rank) {
        std::vector<std::size_t> st(rank, 0);
        std::size_t running = 1;
        for (std::size_t i = 0; i < s.size(); ++i) {
            std::size_t src = s.size() - 1 - i;
            std::size_t dst = rank - 1 - i;
            st[dst] = (s[src] == 1) ? 0 : running;
            running *= s[src];
        }
        return st;
    }

    template <class F>
    void for_each(F&& f) const {
        if (n == 0) return;
        if (same) {
            for (std::size_t i = 0; i < n; ++i) f(i, i, i);
            return;
        }
        const std::size_t rank = out.size();
        if (rank == 0) {
            f(0, 0, 0);
            return;
        }
        const std::size_t inner = out[rank - 1];
        const std::size_t sa = stride_a[rank - 1], sb = stride_b[rank - 1];
        std::vector<std::size_t> idx(rank, 0);
        std::size_t ai = 0, bi = 0, oi = 0;
        const std::size_t outer = n / inner;
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t j = 0; j < inner; ++j) f(oi++, ai + j * sa, bi + j * sb);
            for (std::size_t d = rank - 1; d-- > 0;) {
                ++idx[d];
                ai += stride_a[d];
                bi += stride_b[d];
                if (idx[d] < out[d]) break;
                ai -= stride_a[d] * out[d];
                bi -= stride_b[d] * out[d];
                idx[d] = 0;
            }
        }
    }
};

template <class Fwd, class Da, class Db>
Tensor binary(const Tensor& a, const Tensor& b, Fwd fwd, Da da, Db db) {
    Broadcast plan(a.shape(), b.shape());
    std::vector<double> out(plan.n);
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    plan.for_each([&](std::size_t o, std::size_t i, std::size_t j) { out[o] = fwd(pa[i], pb[j]); });
    auto ia = a.impl_ptr();
    auto ib = b.impl_ptr();
    Shape shape = plan.out;
    return make_result(std::move(shape), std::move(out), {a, b}, [ia, ib, plan, da, db](const TensorImpl& r) {
        const double* pa = ia->data.data();
        const double* pb = ib->data.data();
        const double* g = r.grad.data();
        const double* y = r.data.data();
        if (ia->requires_grad) {
            ia->ensure_grad();
            double* ga = ia->grad.data();
            plan.for_each([&](std::size_t o, std::size_t i, std::size_t j) { ga[i] += g[o] * da(pa[i], pb[j], y[o]); });
        }
        if (ib->requires_grad) {
            ib->ensure_grad();
            double* gb = ib->grad.data();
            plan.for_each([&](std::size_t o, std::size_t i, std::size_t j) { gb[j] += g[o] * db(pa[i], pb[j], y[o]); });
        }
    });
}

template <class Fwd, class Dx>
Tensor unary(const Tensor& x, Fwd fwd, Dx dx) {
    const auto in = x.data();
    std::vector<double> out(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
    auto ix = x.impl_ptr();
    return make_result(x.shape(), std::move(out), {x}, [ix, dx](const TensorImpl& r) {
        ix->ensure_grad();
        const std::size_t n = r.data.size();
        for (std::size_t i = 0; i < n; ++i) ix->grad[i] += r.grad[i] * dx(ix->data[i], r.data[i]);
    });
}

double stable_sigmoid(double v) {
    if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
}

// Splits a shape around `axis` into (outer, axis length, inner).
struct AxisSplit {
    std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis, const char* op) {
    if (axis >= s.size()) {
        throw ValueError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str(s));
    }
    AxisSplit r;
    for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
    r.len = s[axis];
    for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
    return r;
}

Shape reduced_shape(const Shape& s, std::size_t axis, bool keepdim) {
    Shape out = s;
    if (keepdim) {
        out[axis] = 1;
    } else {
        out.erase(out.begin() + static_cast<std::ptrdiff_t>(axis));
    }
    return out;
}

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
    const std::size_t rank = std::max(a.size(), b.size());
    Shape out(rank, 1);
    for (std::size_t i = 0; i < rank; ++i) {
        std::size_t da = i < a.size() ? a[a.size() - 1 - i] : 1;
        std::size_t db = i < b.size() ? b[b.size() - 1 - i] : 1;
        if (da != db && da != 1 && db != 1) {
            throw ShapeError("shapes " + shape_str(a) + " and " + shape_str(b) + " are not broadcast-compatible");
        }
        out[rank - 1 - i] = (da == 1) ? db : da;
    }
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    return binary(
        a, b, [](double x, double y) { return x + y; }, [](double, double, double) { return 1.0; },
        [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary(
        a, b, [](double x, double y) { return x - y; }, [](double, double, double) { return 1.0; },
        [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary(
        a, b, [](double x, double y) { return x * y; }, [](double, double y, double) { return y; },
        [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
    return binary(
        a, b, [](double x, double y) { return x / y; }, [](double, double y, double) { return 1.0 / y; },
        [](double x, double y, double) { return -x / (y * y); });
}

Tensor maximum(const Tensor& a, const Tensor& b) {
    return binary(
        a, b, [](double x, double y) { return x >= y ? x : y; },
        [](double x, double y, double) { return x >= y ? 1.0 : 0.0; },
        [](double x, double y, double) { return x >= y ? 0.0 : 1.0; });
}

Tensor minimum(const Tensor& a, const Tensor& b) {
    return binary(
        a, b, [](double x, double y) { return x <= y ? x : y; },
        [](double x, double y, double) { return x <= y ? 1.0 : 0.0; },
        [](double x, double y, double) { return x <= y ? 0.0 : 1.0; });
}

Tensor add(const Tensor& a, double b) {
    return unary(a, [b](double x) { return x + b; }, [](double, double) { return 1.0; });
}

Tensor mul(const Tensor& a, double b) {
    return unary(a, [b](double x) { return x * b; }, [b](double, double) { return b; });
}

Tensor rsub(double a, const Tensor& b) {
    return unary(b, [a](double x) { return a - x; }, [](double, double) { return -1.0; });
}

Tensor exp(const Tensor& x) {
    return unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
    return unary(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor sqrt(const Tensor& x) {
    return unary(x, [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; });
}

Tensor square(const Tensor& x) {
    return unary(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor abs(const Tensor& x) {
    return unary(
        x, [](double v) { return std::fabs(v); },
        [](double v, double) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
}

Tensor sigmoid(const Tensor& x) {
    return unary(x, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& x) {
    return unary(x, [](double v) { return v > 0 ? v : 0.0; }, [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Tensor softplus(const Tensor& x) {
    return unary(
        x, [](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::fabs(v))); },
        [](double v, double) { return stable_sigmoid(v); });
}

Tensor pow(const Tensor& x, double exponent) {
    return unary(
        x, [exponent](double v) { return std::pow(v, exponent); },
        [exponent](double v, double) {
            if (exponent == 0.0) return 0.0;
            if (v == 0.0 && exponent < 1.0) return 0.0;
            return exponent * std::pow(v, exponent - 1.0);
        });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
    return unary(
        x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
        [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (numel_of(shape) != x.numel()) {
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    }
    auto ix = x.impl_ptr();
    std::vector<double> data(x.data().begin(), x.data().end());
    return make_result(std::move(shape), std::move(data), {x}, [ix](const TensorImpl& r) {
        ix->ensure_grad();
        for (std::size_t i = 0; i < r.grad.size(); ++i) ix->grad[i] += r.grad[i];
    });
}

Tensor transpose(const Tensor& x) {
    if (x.rank() != 2) throw ShapeError("transpose: expected rank 2, got " + shape_str(x.shape()));
    const std::size_t m = x.dim(0), n = x.dim(1);
    std::vector<double> out(m * n);
    const auto in = x.data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = in[i * n + j];
    auto ix = x.impl_ptr();
    return make_result({n, m}, std::move(out), {x}, [ix, m, n](const TensorImpl& r) {
        ix->ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) ix->grad[i * n + j] += r.grad[j * m + i];
    });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw ValueError("concat: no inputs");
    const Shape& first = parts[0].shape();
    if (axis >= first.size()) throw ValueError("concat: axis out of range for shape " + shape_str(first));
    Shape out_shape = first;
    out_shape[axis] = 0;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        bool ok = s.size() == first.size();
        for (std::size_t d = 0; ok && d < s.size(); ++d) ok = (d == axis) || s[d] == first[d];
        if (!ok) throw ShapeError("concat: shape " + shape_str(s) + " incompatible with " + shape_str(first));
        out_shape[axis] += s[axis];
    }
    AxisSplit split = split_axis(out_shape, axis, "concat");
    std::vector<double> out(numel_of(out_shape));
    std::vector<std::size_t> offsets;
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const std::size_t len = p.dim(axis);
        offsets.push_back(offset);
        const auto in = p.data();
        for (std::size_t o = 0; o < split.outer; ++o) {
            std::copy_n(in.begin() + static_cast<std::ptrdiff_t>(o * len * split.inner), len * split.inner,
                        out.begin() + static_cast<std::ptrdiff_t>((o * split.len + offset) * split.inner));
        }
        offset += len;
    }
    std::vector<std::shared_ptr<TensorImpl>> impls;
    for (const auto& p : parts) impls.push_back(p.impl_ptr());
    return make_result(std::move(out_shape), std::move(out), parts, [impls, offsets, split, axis](const TensorImpl& r) {
        for (std::size_t k = 0; k < impls.size(); ++k) {
            auto& t = *impls[k];
            if (!t.requires_grad) continue;
            t.ensure_grad();
            const std::size_t len = t.shape[axis];
            for (std::size_t o = 0; o < split.outer; ++o) {
                const double* src = r.grad.data() + (o * split.len + offsets[k]) * split.inner;
                double* dst = t.grad.data() + o * len * split.inner;
                for (std::size_t i = 0; i < len * split.inner; ++i) dst[i] += src[i];
            }
        }
    });
}

Tensor narrow(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
    AxisSplit split = split_axis(x.shape(), axis, "narrow");
    if (start + length > split.len) {
        throw ValueError("narrow: range [" + std::to_string(start) + "," + std::to_string(start + length) +
                         ") exceeds axis length " + std::to_string(split.len));
    }
    std::vector<std::size_t> idx(length);
    std::iota(idx.begin(), idx.end(), start);
    return gather(x, axis, idx);
}

Tensor gather(const Tensor& x, std::size_t axis, const std::vector<std::size_t>& indices) {
    AxisSplit split = split_axis(x.shape(), axis, "gather");
    for (auto i : indices) {
        if (i >= split.len) {
            throw ValueError("gather: index " + std::to_string(i) + " out of range for axis length " +
                             std::to_string(split.len));
        }
    }
    Shape out_shape = x.shape();
    out_shape[axis] = indices.size();
    const std::size_t k = indices.size();
    std::vector<double> out(split.outer * k * split.inner);
    const auto in = x.data();
    for (std::size_t o = 0; o < split.outer; ++o)
        for (std::size_t j = 0; j < k; ++j)
            for (std::size_t i = 0; i < split.inner; ++i)
                out[(o * k + j) * split.inner + i] = in[(o * split.len + indices[j]) * split.inner + i];
    auto ix = x.impl_ptr();
    return make_result(std::move(out_shape), std::move(out), {x}, [ix, indices, split, k](const TensorImpl& r) {
        ix->ensure_grad();
        for (std::size_t o = 0; o < split.outer; ++o)
            for (std::size_t j = 0; j < k; ++j)
                for (std::size_t i = 0; i < split.inner; ++i)
                    ix->grad[(o * split.len + indices[j]) * split.inner + i] += r.grad[(o * k + j) * split.inner + i];
    });
}

Tensor sum(const Tensor& x) {
    const auto in = x.data();
    double s = 0.0;
    for (double v : in) s += v;
    auto ix = x.impl_ptr();
    return make_result({}, {s}, {x}, [ix](const TensorImpl& r) {
        ix->ensure_grad();
        const double g = r.grad[0];
        for (auto& v : ix->grad) v += g;
    });
}

Tensor sum(const Tensor& x, std::size_t axis, bool keepdim) {
    AxisSplit split = split_axis(x.shape(), axis, "sum");
    std::vector<double> out(split.outer * split.inner, 0.0);
    const auto in = x.data();
    for (std::size_t o = 0; o < split.outer; ++o)
        for (std::size_t j = 0; j < split.len; ++j)
            for (std::size_t i = 0; i < split.inner; ++i)
                out[o * split.inner + i] += in[(o * split.len + j) * split.inner + i];
    auto ix = x.impl_ptr();
    return make_result(reduced_shape(x.shape(), axis, keepdim), std::move(out), {x}, [ix, split](const TensorImpl& r) {
        ix->ensure_grad();
        for (std::size_t o = 0; o < split.outer; ++o)
            for (std::size_t j = 0; j < split.len; ++j)
                for (std::size_t i = 0; i < split.inner; ++i)
                    ix->grad[(o * split.len + j) * split.inner + i] += r.grad[o * split.inner + i];
    });
}

Tensor mean(const Tensor& x) {
    if (x.numel() == 0) throw ShapeError("mean of an empty tensor");
    return mul(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor mean(const Tensor& x, std::size_t axis, bool keepdim) {
    const std::size_t len = x.dim(axis);
    if (len == 0) throw ShapeError("mean over an empty axis");
    return mul(sum(x, axis, keepdim), 1.0 / static_cast<double>(len));
}

Tensor max_over_axis(const Tensor& x, std::size_t axis, bool keepdim) {
    AxisSplit split = split_axis(x.shape(), axis, "max_over_axis");
    if (split.len == 0) throw ShapeError("max_over_axis over an empty axis");
    std::vector<double> out(split.outer * split.inner);
    std::vector<std::size_t> arg(out.size());
    const auto in = x.data();
    for (std::size_t o = 0; o < split.outer; ++o)
        for (std::size_t i = 0; i < split.inner; ++i) {
            std::size_t best = 0;
            double bv = in[o * split.len * split.inner + i];
            for (std::size_t j = 1; j < split.len; ++j) {
                double v = in[(o * split.len + j) * split.inner + i];
                if (v > bv) {
                    bv = v;
                    best = j;
                }
            }
            out[o * split.inner + i] = bv;
            arg[o * split.inner + i] = best;
        }
    auto ix = x.impl_ptr();
    return make_result(reduced_shape(x.shape(), axis, keepdim), std::move(out), {x},
                       [ix, split, arg](const TensorImpl& r) {
                           ix->ensure_grad();
                           for (std::size_t o = 0; o < split.outer; ++o)
                               for (std::size_t i = 0; i < split.inner; ++i) {
                                   const std::size_t q = o * split.inner + i;
                                   ix->grad[(o * split.len + arg[q]) * split.inner + i] += r.grad[q];
                               }
                       });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
    AxisSplit split = split_axis(x.shape(), axis, "softmax");
    std::vector<double> out(x.numel());
    const auto in = x.data();
    for (std::size_t o = 0; o < split.outer; ++o)
        for (std::size_t i = 0; i < split.inner; ++i) {
            auto at = [&](std::size_t j) { return (o * split.len + j) * split.inner + i; };
            double mx = in[at(0)];
            for (std::size_t j = 1; j < split.len; ++j) mx = std::max(mx, in[at(j)]);
            double s = 0.0;
            for (std::size_t j = 0; j < split.len; ++j) s += (out[at(j)] = std::exp(in[at(j)] - mx));
            for (std::size_t j = 0; j < split.len; ++j) out[at(j)] /= s;
        }
    auto ix = x.impl_ptr();
    return make_result(x.shape(), std::move(out), {x}, [ix, split](const TensorImpl& r) {
        ix->ensure_grad();
        for (std::size_t o = 0; o < split.outer; ++o)
            for (std::size_t i = 0; i < split.inner; ++i) {
                auto at = [&](std::size_t j) { return (o * split.len + j) * split.inner + i; };
                double dot = 0.0;
                for (std::size_t j = 0; j < split.len; ++j) dot += r.grad[at(j)] * r.data[at(j)];
                for (std::size_t j = 0; j < split.len; ++j) ix->grad[at(j)] += r.data[at(j)] * (r.grad[at(j)] - dot);
            }
    });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    }
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<double> out(m * n, 0.0);
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    for (std::size_t i = 0; i < m; ++i) {
        double* row = out.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = pa[i * k + p];
            const double* brow = pb + p * n;
            for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
        }
    }
    auto ia = a.impl_ptr();
    auto ib = b.impl_ptr();
    return make_result({m, n}, std::move(out), {a, b}, [ia, ib, m, k, n](const TensorImpl& r) {
        const double* g = r.grad.data();
        if (ia->requires_grad) {
            // dA = dC * B^T
            ia->ensure_grad();
            const double* pb = ib->data.data();
            std::vector<double> bt(n * k);
            for (std::size_t p = 0; p < k; ++p)
                for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = pb[p * n + j];
            for (std::size_t i = 0; i < m; ++i) {
                double* ga = ia->grad.data() + i * k;
                for (std::size_t j = 0; j < n; ++j) {
                    const double gv = g[i * n + j];
                    const double* brow = bt.data() + j * k;
                    for (std::size_t p = 0; p < k; ++p) ga[p] += gv * brow[p];
                }
            }
        }
        if (ib->requires_grad) {
            // dB = A^T * dC
            ib->ensure_grad();
            const double* pa = ia->data.data();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    const double av = pa[i * k + p];
                    double* gb = ib->grad.data() + p * n;
                    const double* grow = g + i * n;
                    for (std::size_t j = 0; j < n; ++j) gb[j] += av * grow[j];
                }
        }
    });
}

Tensor pad2d(const Tensor& x, std::size_t pad, PadMode mode) {
    if (x.rank() != 3) throw ShapeError("pad2d: expected [C,H,W], got " + shape_str(x.shape()));
    const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (pad == 0) return x;
    if (h == 0 || w == 0) throw ShapeError("pad2d: empty spatial dims");
    const std::size_t hp = h + 2 * pad, wp = w + 2 * pad;
    // Source index per padded position; SIZE_MAX marks a zero.
    std::vector<std::size_t> src(hp * wp);
    for (std::size_t y = 0; y < hp; ++y)
        for (std::size_t xx = 0; xx < wp; ++xx) {
            const auto sy = static_cast<std::ptrdiff_t>(y) - static_cast<std::ptrdiff_t>(pad);
            const auto sx = static_cast<std::ptrdiff_t>(xx) - static_cast<std::ptrdiff_t>(pad);
            const bool inside = sy >= 0 && sx >= 0 && sy < static_cast<std::ptrdiff_t>(h) &&
                                sx < static_cast<std::ptrdiff_t>(w);
            if (inside) {
                src[y * wp + xx] = static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx);
            } else if (mode == PadMode::Replicate) {
                const auto cy = std::clamp<std::ptrdiff_t>(sy, 0, static_cast<std::ptrdiff_t>(h) - 1);
                const auto cx = std::clamp<std::ptrdiff_t>(sx, 0, static_cast<std::ptrdiff_t>(w) - 1);
                src[y * wp + xx] = static_cast<std::size_t>(cy) * w + static_cast<std::size_t>(cx);
            } else {
                src[y * wp + xx] = SIZE_MAX;
            }
        }
    std::vector<double> out(c * hp * wp, 0.0);
    const auto in = x.data();
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < hp * wp; ++i)
            if (src[i] != SIZE_MAX) out[ch * hp * wp + i] = in[ch * h * w + src[i]];
    auto ix = x.impl_ptr();
    return make_result({c, hp, wp}, std::move(out), {x}, [ix, src, c, h, w, hp, wp](const TensorImpl& r) {
        ix->ensure_grad();
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t i = 0; i < hp * wp; ++i)
                if (src[i] != SIZE_MAX) ix->grad[ch * h * w + src[i]] += r.grad[ch * hp * wp + i];
    });
}

namespace {

// Valid (unpadded) strided cross-correlation.
// Patch matrix [N = ho*wo, P = cin*kh*kw]; row n holds the receptive field of
// output pixel n. Every hot loop below runs along a contiguous axis so it
// vectorizes without reassociating any sum.
std::vector<double> im2row(const double* px, std::size_t cin, std::size_t h, std::size_t wd, std::size_t kh,
                           std::size_t kw, std::size_t ho, std::size_t wo, std::size_t stride) {
    const std::size_t np = cin * kh * kw;
    std::vector<double> rows(ho * wo * np);
    for (std::size_t oy = 0; oy < ho; ++oy)
        for (std::size_t ox = 0; ox < wo; ++ox) {
            double* dst = rows.data() + (oy * wo + ox) * np;
            for (std::size_t ci = 0; ci < cin; ++ci)
                for (std::size_t ky = 0; ky < kh; ++ky) {
                    const double* src = px + (ci * h + oy * stride + ky) * wd + ox * stride;
                    for (std::size_t kx = 0; kx < kw; ++kx) *dst++ = src[kx];
                }
        }
    return rows;
}

Tensor conv2d_valid(const Tensor& x, const Tensor& w, std::size_t stride) {
    const std::size_t cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
    const std::size_t cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    const std::size_t ho = (h - kh) / stride + 1, wo = (wd - kw) / stride + 1;
    const std::size_t np = cin * kh * kw, n = ho * wo;
    auto rows = std::make_shared<std::vector<double>>(im2row(x.data().data(), cin, h, wd, kh, kw, ho, wo, stride));
    // Transposed patches [P, N] so the forward product is an axpy over output pixels.
    std::vector<double> cols(np * n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < np; ++p) cols[p * n + i] = (*rows)[i * np + p];
    std::vector<double> out(cout * n, 0.0);
    const double* pw = w.data().data();
    for (std::size_t co = 0; co < cout; ++co) {
        double* orow = out.data() + co * n;
        for (std::size_t p = 0; p < np; ++p) {
            const double wv = pw[co * np + p];
            const double* crow = cols.data() + p * n;
            for (std::size_t i = 0; i < n; ++i) orow[i] += wv * crow[i];
        }
    }
    auto ix = x.impl_ptr();
    auto iw = w.impl_ptr();
    return make_result({cout, ho, wo}, std::move(out), {x, w},
                       [ix, iw, rows, cin, h, wd, cout, kh, kw, ho, wo, stride, np, n](const TensorImpl& r) {
                           const double* g = r.grad.data();
                           if (iw->requires_grad) {
                               // dW[co,:] += g[co,i] * rows[i,:]
                               iw->ensure_grad();
                               for (std::size_t co = 0; co < cout; ++co) {
                                   double* gw = iw->grad.data() + co * np;
                                   for (std::size_t i = 0; i < n; ++i) {
                                       const double gv = g[co * n + i];
                                       const double* row = rows->data() + i * np;
                                       for (std::size_t p = 0; p < np; ++p) gw[p] += gv * row[p];
                                   }
                               }
                           }
                           if (ix->requires_grad) {
                               // dcols[p,:] += W[co,p] * g[co,:], then scatter back to the input.
                               ix->ensure_grad();
                               const double* pw = iw->data.data();
                               std::vector<double> dcols(np * n, 0.0);
                               for (std::size_t co = 0; co < cout; ++co) {
                                   const double* grow = g + co * n;
                                   for (std::size_t p = 0; p < np; ++p) {
                                       const double wv = pw[co * np + p];
                                       double* drow = dcols.data() + p * n;
                                       for (std::size_t i = 0; i < n; ++i) drow[i] += wv * grow[i];
                                   }
                               }
                               double* gx = ix->grad.data();
                               for (std::size_t ci = 0; ci < cin; ++ci)
                                   for (std::size_t ky = 0; ky < kh; ++ky)
                                       for (std::size_t kx = 0; kx < kw; ++kx) {
                                           const double* drow = dcols.data() + ((ci * kh + ky) * kw + kx) * n;
                                           for (std::size_t oy = 0; oy < ho; ++oy) {
                                               double* xrow = gx + (ci * h + oy * stride + ky) * wd + kx;
                                               for (std::size_t ox = 0; ox < wo; ++ox)
                                                   xrow[ox * stride] += drow[oy * wo + ox];
                                           }
                                       }
                           }
                       });
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, std::size_t stride, std::size_t padding, PadMode mode) {
    if (x.rank() != 3) throw ShapeError("conv2d: input must be [C,H,W], got " + shape_str(x.shape()));
    if (w.rank() != 4) throw ShapeError("conv2d: weight must be [C_out,C_in,kh,kw], got " + shape_str(w.shape()));
    if (w.dim(1) != x.dim(0)) {
        throw ShapeError("conv2d: input channels of " + shape_str(x.shape()) + " do not match weight " +
                         shape_str(w.shape()));
    }
    if (stride == 0) throw ValueError("conv2d: stride must be positive");
    const std::size_t hp = x.dim(1) + 2 * padding, wp = x.dim(2) + 2 * padding;
    if (w.dim(2) > hp || w.dim(3) > wp) {
        throw ShapeError("conv2d: kernel " + shape_str(w.shape()) + " larger than padded input " +
                         std::to_string(hp) + "x" + std::to_string(wp));
    }
    return conv2d_valid(pad2d(x, padding, mode), w, stride);
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride, std::size_t padding,
              PadMode mode) {
    if (bias.rank() != 1 || bias.dim(0) != w.dim(0)) {
        throw ShapeError("conv2d: bias " + shape_str(bias.shape()) + " does not match weight " + shape_str(w.shape()));
    }
    return add(conv2d(x, w, stride, padding, mode), reshape(bias, {bias.dim(0), 1, 1}));
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    const std::size_t axis = x.rank() - 1;
    Tensor centered = sub(x, mean(x, axis, true));
    Tensor var = mean(square(centered), axis, true);
    Tensor normed = mul(centered, pow(add(var, eps), -0.5));
    return add(mul(normed, gamma), beta);
}

std::vector<std::size_t> topk_indices(const Tensor& x, std::size_t k) {
    const auto v = x.data();
    if (k > v.size()) {
        throw ValueError("topk: K=" + std::to_string(k) + " exceeds " + std::to_string(v.size()) + " entries");
    }
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    auto better = [&](std::size_t a, std::size_t b) { return v[a] > v[b] || (v[a] == v[b] && a < b); };
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), better);
    idx.resize(k);
    return idx;
}

}  // namespace caries::ag

#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "caries/autograd/tensor.hpp"

namespace caries::ag {

struct Parameter {
    std::string name;
    Tensor tensor;
};

/// Ordered, name-unique collection of learnable tensors. Insertion order is
/// the serialization order.
class ParameterStore {
public:
    Tensor& add(const std::string& name, Tensor tensor);
    bool contains(const std::string& name) const;
    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;

    const std::vector<Parameter>& items() const { return items_; }
    std::vector<Parameter>& items() { return items_; }
    std::size_t size() const { return items_.size(); }

    /// Parameters whose name starts with `prefix`.
    std::vector<Parameter> with_prefix(const std::string& prefix) const;

    void zero_grad();
    std::size_t scalar_count() const;

private:
    std::vector<Parameter> items_;
};

struct AdamWConfig {
    double lr = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
};

/// AdamW with decoupled weight decay:
///   p <- p - lr*wd*p
///   m <- b1*m + (1-b1)*g,  v <- b2*v + (1-b2)*g^2
///   p <- p - lr * m_hat / (sqrt(v_hat) + eps)
class AdamW {
public:
    AdamW(std::vector<Parameter> params, AdamWConfig config);

    /// Applies one update. Every parameter must hold a gradient; gradients are
    /// left in place (call zero_grad() explicitly).
    void step();
    void zero_grad();

    std::size_t step_count() const { return step_; }
    const AdamWConfig& config() const { return config_; }
    void set_lr(double lr) { config_.lr = lr; }
    const std::vector<Parameter>& params() const { return params_; }
    std::span<const double> first_moment(std::size_t i) const { return m_[i]; }
    std::span<const double> second_moment(std::size_t i) const { return v_[i]; }

private:
    std::vector<Parameter> params_;
    AdamWConfig config_;
    std::size_t step_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

}  // namespace caries::ag

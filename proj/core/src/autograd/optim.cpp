#include "caries/autograd/optim.hpp"

#include <cmath>

#include "caries/error.hpp"

namespace caries::ag {

Tensor& ParameterStore::add(const std::string& name, Tensor tensor) {
    if (contains(name)) throw ValueError("duplicate parameter name '" + name + "'");
    tensor.set_requires_grad(true);
    items_.push_back({name, std::move(tensor)});
    return items_.back().tensor;
}

bool ParameterStore::contains(const std::string& name) const {
    for (const auto& p : items_)
        if (p.name == name) return true;
    return false;
}

Tensor& ParameterStore::at(const std::string& name) {
    for (auto& p : items_)
        if (p.name == name) return p.tensor;
    throw ValueError("unknown parameter '" + name + "'");
}

const Tensor& ParameterStore::at(const std::string& name) const {
    for (const auto& p : items_)
        if (p.name == name) return p.tensor;
    throw ValueError("unknown parameter '" + name + "'");
}

std::vector<Parameter> ParameterStore::with_prefix(const std::string& prefix) const {
    std::vector<Parameter> out;
    for (const auto& p : items_)
        if (p.name.rfind(prefix, 0) == 0) out.push_back(p);
    return out;
}

void ParameterStore::zero_grad() {
    for (auto& p : items_) p.tensor.zero_grad();
}

std::size_t ParameterStore::scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : items_) n += p.tensor.numel();
    return n;
}

AdamW::AdamW(std::vector<Parameter> params, AdamWConfig config) : params_(std::move(params)), config_(config) {
    for (const auto& p : params_) {
        m_.emplace_back(p.tensor.numel(), 0.0);
        v_.emplace_back(p.tensor.numel(), 0.0);
    }
}

void AdamW::step() {
    for (const auto& p : params_) {
        if (!p.tensor.has_grad()) throw ValueError("AdamW: parameter '" + p.name + "' has no gradient");
    }
    ++step_;
    const double t = static_cast<double>(step_);
    const double bc1 = 1.0 - std::pow(config_.beta1, t);
    const double bc2 = 1.0 - std::pow(config_.beta2, t);
    for (std::size_t k = 0; k < params_.size(); ++k) {
        Tensor& param = params_[k].tensor;
        auto data = param.mutable_data();
        const auto grad = param.grad();
        auto& m = m_[k];
        auto& v = v_[k];
        for (std::size_t i = 0; i < data.size(); ++i) {
            data[i] -= config_.lr * config_.weight_decay * data[i];
            m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * grad[i];
            v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * grad[i] * grad[i];
            const double m_hat = m[i] / bc1;
            const double v_hat = v[i] / bc2;
            data[i] -= config_.lr * m_hat / (std::sqrt(v_hat) + config_.eps);
        }
    }
}

void AdamW::zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
}

}  // namespace caries::ag

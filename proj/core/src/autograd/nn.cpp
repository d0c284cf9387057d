#include "caries/autograd/nn.hpp"

#include <cmath>

namespace caries::ag {

Tensor uniform(Shape shape, double bound, Rng& rng) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> values(numel_of(shape));
    for (auto& v : values) v = dist(rng);
    return Tensor::from(std::move(shape), std::move(values));
}

Linear::Linear(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    weight = store.add(name + ".weight", uniform({in, out}, bound, rng));
    bias = store.add(name + ".bias", uniform({out}, bound, rng));
}

Tensor Linear::operator()(const Tensor& x) const { return add(matmul(x, weight), bias); }

Conv2d::Conv2d(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, std::size_t kernel,
               std::size_t stride_, std::size_t padding_, Rng& rng)
    : stride(stride_), padding(padding_) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in * kernel * kernel));
    weight = store.add(name + ".weight", uniform({out, in, kernel, kernel}, bound, rng));
    bias = store.add(name + ".bias", uniform({out}, bound, rng));
}

Tensor Conv2d::operator()(const Tensor& x) const { return conv2d(x, weight, bias, stride, padding, mode); }

LayerNorm::LayerNorm(ParameterStore& store, const std::string& name, std::size_t width) {
    gamma = store.add(name + ".gamma", Tensor::full({width}, 1.0));
    beta = store.add(name + ".beta", Tensor::zeros({width}));
}

}  // namespace caries::ag

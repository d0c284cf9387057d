#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "caries/autograd/ops.hpp"
#include "caries/autograd/optim.hpp"

namespace caries::ag {

using Rng = std::mt19937_64;

/// Uniform(-bound, bound) tensor drawn from `rng`.
Tensor uniform(Shape shape, double bound, Rng& rng);

/// Fully connected layer, y = x W + b with W: [in,out].
struct Linear {
    Tensor weight;
    Tensor bias;

    Linear() = default;
    Linear(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng);
    Tensor operator()(const Tensor& x) const;  // x: [N,in]
};

struct Conv2d {
    Tensor weight;
    Tensor bias;
    std::size_t stride = 1;
    std::size_t padding = 0;
    PadMode mode = PadMode::Zero;

    Conv2d() = default;
    Conv2d(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, std::size_t kernel,
           std::size_t stride, std::size_t padding, Rng& rng);
    Tensor operator()(const Tensor& x) const;  // x: [C,H,W]
};

struct LayerNorm {
    Tensor gamma;
    Tensor beta;

    LayerNorm() = default;
    LayerNorm(ParameterStore& store, const std::string& name, std::size_t width);
    Tensor operator()(const Tensor& x) const { return layer_norm(x, gamma, beta); }
};

}  // namespace caries::ag

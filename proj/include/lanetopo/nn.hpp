#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "lanetopo/matrix.hpp"
#include "lanetopo/rng.hpp"

namespace lanetopo {

/// Fills `m` with uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
inline void init_uniform(DenseMatrix& m, std::size_t fan_in, CounterRng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (double& v : m.values()) v = rng.uniform(-bound, bound);
}

/// Adds `bias` (1 x cols) to every row of `m`.
inline void add_row_bias(DenseMatrix& m, const DenseMatrix& bias) {
  require_shape(bias, 1, m.cols(), "row bias");
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) m(r, c) += bias(0, c);
}

/// y = x W + b with W stored in x out.
struct Linear {
  DenseMatrix weight;
  DenseMatrix bias;  // 1 x out, or empty when the layer has no bias

  static Linear make(std::size_t in, std::size_t out, CounterRng& rng, bool with_bias = true) {
    Linear l{DenseMatrix(in, out), with_bias ? DenseMatrix(1, out) : DenseMatrix()};
    init_uniform(l.weight, in, rng);
    if (with_bias) init_uniform(l.bias, in, rng);
    return l;
  }

  std::size_t in() const noexcept { return weight.rows(); }
  std::size_t out() const noexcept { return weight.cols(); }
  bool has_bias() const noexcept { return !bias.empty(); }

  DenseMatrix forward(const DenseMatrix& x) const {
    DenseMatrix y = matmul(x, weight);
    if (has_bias()) add_row_bias(y, bias);
    return y;
  }

  /// Accumulates parameter gradients into `grad` and returns dL/dx.
  DenseMatrix backward(const DenseMatrix& x, const DenseMatrix& dy, Linear& grad) const {
    grad.weight += matmul_tn(x, dy);
    if (has_bias()) {
      const auto sums = column_sums(dy);
      for (std::size_t c = 0; c < sums.size(); ++c) grad.bias(0, c) += sums[c];
    }
    return matmul_nt(dy, weight);
  }

  Linear zeros_like() const {
    return {DenseMatrix(weight.rows(), weight.cols()), DenseMatrix(bias.rows(), bias.cols())};
  }

  template <typename Self, typename Fn>
  static void visit(Self& self, const std::string& prefix, Fn&& fn) {
    fn(prefix + ".weight", self.weight);
    if (!self.bias.empty()) fn(prefix + ".bias", self.bias);
  }
};

/// Per-row layer normalization with learnable gain and bias.
struct LayerNorm {
  DenseMatrix gain;  // 1 x dim
  DenseMatrix bias;  // 1 x dim
  double eps = 1e-5;

  static LayerNorm make(std::size_t dim) {
    return {DenseMatrix(1, dim, 1.0), DenseMatrix(1, dim, 0.0)};
  }

  struct Cache {
    DenseMatrix normalized;
    std::vector<double> inv_std;
  };

  DenseMatrix forward(const DenseMatrix& x, Cache* cache = nullptr) const {
    require_shape(gain, 1, x.cols(), "LayerNorm gain");
    const std::size_t n = x.cols();
    DenseMatrix xhat(x.rows(), n), y(x.rows(), n);
    std::vector<double> inv_std(x.rows());
    for (std::size_t r = 0; r < x.rows(); ++r) {
      double mean = 0.0;
      for (double v : x.row(r)) mean += v;
      mean /= static_cast<double>(n);
      double var = 0.0;
      for (double v : x.row(r)) var += (v - mean) * (v - mean);
      var /= static_cast<double>(n);
      inv_std[r] = 1.0 / std::sqrt(var + eps);
      for (std::size_t c = 0; c < n; ++c) {
        xhat(r, c) = (x(r, c) - mean) * inv_std[r];
        y(r, c) = xhat(r, c) * gain(0, c) + bias(0, c);
      }
    }
    if (cache) *cache = {std::move(xhat), std::move(inv_std)};
    return y;
  }

  DenseMatrix backward(const Cache& cache, const DenseMatrix& dy, LayerNorm& grad) const {
    const std::size_t n = dy.cols();
    DenseMatrix dx(dy.rows(), n);
    for (std::size_t r = 0; r < dy.rows(); ++r) {
      double sum_g = 0.0, sum_gx = 0.0;
      for (std::size_t c = 0; c < n; ++c) {
        const double g = dy(r, c) * gain(0, c);
        sum_g += g;
        sum_gx += g * cache.normalized(r, c);
        grad.gain(0, c) += dy(r, c) * cache.normalized(r, c);
        grad.bias(0, c) += dy(r, c);
      }
      const double inv_n = 1.0 / static_cast<double>(n);
      for (std::size_t c = 0; c < n; ++c) {
        const double g = dy(r, c) * gain(0, c);
        dx(r, c) = cache.inv_std[r] * (g - inv_n * sum_g - cache.normalized(r, c) * inv_n * sum_gx);
      }
    }
    return dx;
  }

  LayerNorm zeros_like() const {
    return {DenseMatrix(1, gain.cols()), DenseMatrix(1, bias.cols()), eps};
  }

  template <typename Self, typename Fn>
  static void visit(Self& self, const std::string& prefix, Fn&& fn) {
    fn(prefix + ".gain", self.gain);
    fn(prefix + ".bias", self.bias);
  }
};

/// Linear layers with ReLU in between (optionally LayerNorm before each
/// ReLU). No activation after the last layer.
struct Mlp {
  std::vector<Linear> layers;
  std::vector<LayerNorm> norms;  // empty, or one per hidden layer

  /// widths = {in, hidden..., out}
  static Mlp make(const std::vector<std::size_t>& widths, CounterRng& rng,
                  bool layer_norm = false) {
    Mlp m;
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
      m.layers.push_back(Linear::make(widths[i], widths[i + 1], rng));
      if (layer_norm && i + 2 < widths.size()) m.norms.push_back(LayerNorm::make(widths[i + 1]));
    }
    return m;
  }

  std::size_t in() const { return layers.front().in(); }
  std::size_t out() const { return layers.back().out(); }

  struct Cache {
    std::vector<DenseMatrix> inputs;  // input to each linear layer
    std::vector<DenseMatrix> pre;     // pre-activation of each hidden layer
    std::vector<LayerNorm::Cache> norm;
  };

  DenseMatrix forward(const DenseMatrix& x, Cache* cache = nullptr) const {
    if (cache) *cache = {};
    DenseMatrix h = x;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (cache) cache->inputs.push_back(h);
      DenseMatrix z = layers[i].forward(h);
      if (i + 1 == layers.size()) return z;
      if (!norms.empty()) {
        LayerNorm::Cache nc;
        z = norms[i].forward(z, cache ? &nc : nullptr);
        if (cache) cache->norm.push_back(std::move(nc));
      }
      if (cache) cache->pre.push_back(z);
      h = relu(std::move(z));
    }
    return h;
  }

  DenseMatrix backward(const Cache& cache, DenseMatrix dy, Mlp& grad) const {
    for (std::size_t k = layers.size(); k-- > 0;) {
      if (k + 1 < layers.size()) {
        dy = relu_backward(std::move(dy), cache.pre[k]);
        if (!norms.empty()) dy = norms[k].backward(cache.norm[k], dy, grad.norms[k]);
      }
      dy = layers[k].backward(cache.inputs[k], dy, grad.layers[k]);
    }
    return dy;
  }

  Mlp zeros_like() const {
    Mlp m;
    for (const auto& l : layers) m.layers.push_back(l.zeros_like());
    for (const auto& n : norms) m.norms.push_back(n.zeros_like());
    return m;
  }

  template <typename Self, typename Fn>
  static void visit(Self& self, const std::string& prefix, Fn&& fn) {
    for (std::size_t i = 0; i < self.layers.size(); ++i)
      Linear::visit(self.layers[i], prefix + ".layers." + std::to_string(i), fn);
    for (std::size_t i = 0; i < self.norms.size(); ++i)
      LayerNorm::visit(self.norms[i], prefix + ".norms." + std::to_string(i), fn);
  }
};

}  // namespace lanetopo

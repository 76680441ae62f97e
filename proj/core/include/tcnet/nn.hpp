#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "tcnet/tensor.hpp"

namespace tcnet {

// Named parameter registry shared by the optimizer and checkpoint writer.
// Order is insertion order and must be deterministic across runs.
struct ParamMap {
  std::vector<std::pair<std::string, Tensor>> items;

  void add(const std::string& name, const Tensor& t) { items.emplace_back(name, t); }
  void extend(const std::string& prefix, const ParamMap& other) {
    for (const auto& [name, t] : other.items) items.emplace_back(prefix + name, t);
  }
  std::size_t total_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : items) n += t.size();
    return n;
  }
};

inline Tensor uniform_param(Shape shape, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> vals(shape_numel(shape));
  for (auto& v : vals) v = dist(rng);
  return Tensor::param(std::move(shape), std::move(vals));
}

struct Linear {
  Tensor w, b;

  static Linear init(std::size_t in, std::size_t out, std::mt19937_64& rng) {
    double bound = 1.0 / std::sqrt(double(in));
    return {uniform_param({in, out}, bound, rng), uniform_param({out}, bound, rng)};
  }
  Tensor apply(const Tensor& x) const { return add(matmul(x, w), b); }
  void collect(ParamMap& pm, const std::string& prefix) const {
    pm.add(prefix + ".w", w);
    pm.add(prefix + ".b", b);
  }
};

// linear -> tanh -> linear
struct Mlp2 {
  Linear l1, l2;

  static Mlp2 init(std::size_t in, std::size_t hidden, std::size_t out, std::mt19937_64& rng) {
    return {Linear::init(in, hidden, rng), Linear::init(hidden, out, rng)};
  }
  Tensor apply(const Tensor& x) const { return l2.apply(tanh_op(l1.apply(x))); }
  void collect(ParamMap& pm, const std::string& prefix) const {
    l1.collect(pm, prefix + ".l1");
    l2.collect(pm, prefix + ".l2");
  }
};

}  // namespace tcnet

#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "kbeta/error.hpp"

namespace kbeta {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>{});
}

/// Dense row-major tensor over a flat buffer.
template <class Real>
class Tensor {
 public:
  using value_type = Real;

  Tensor() = default;

  explicit Tensor(Shape shape, Real fill = Real(0))
      : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {
    check_shape();
  }

  Tensor(Shape shape, std::vector<Real> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape();
    if (shape_numel(shape_) != data_.size()) {
      throw ConfigError("tensor data length does not match shape");
    }
  }

  static Tensor vector(std::vector<Real> data) {
    Shape s{data.size()};
    return Tensor(std::move(s), std::move(data));
  }

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }

  std::span<Real> span() { return data_; }
  std::span<const Real> span() const { return data_; }
  std::vector<Real>& data() { return data_; }
  const std::vector<Real>& data() const { return data_; }

  Real& operator[](std::size_t i) { return data_[i]; }
  const Real& operator[](std::size_t i) const { return data_[i]; }

  auto begin() { return data_.begin(); }
  auto end() { return data_.end(); }
  auto begin() const { return data_.begin(); }
  auto end() const { return data_.end(); }

  bool all_finite() const {
    for (Real x : data_) {
      if (!std::isfinite(x)) return false;
    }
    return true;
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  void check_shape() const {
    for (std::size_t d : shape_) {
      if (d == 0) throw ConfigError("tensor dimensions must be positive");
    }
  }

  Shape shape_;
  std::vector<Real> data_;
};

/// Named tensors keyed by '/'-joined paths. std::map gives the lexicographic
/// iteration order every consumer relies on.
template <class Real>
using ParamTree = std::map<std::string, Tensor<Real>>;

template <class Real>
bool same_structure(const ParamTree<Real>& a, const ParamTree<Real>& b) {
  if (a.size() != b.size()) return false;
  for (auto ia = a.begin(), ib = b.begin(); ia != a.end(); ++ia, ++ib) {
    if (ia->first != ib->first || ia->second.shape() != ib->second.shape()) {
      return false;
    }
  }
  return true;
}

template <class Real>
ParamTree<Real> zeros_like(const ParamTree<Real>& tree) {
  ParamTree<Real> out;
  for (const auto& [path, t] : tree) out.emplace(path, Tensor<Real>::zeros_like(t));
  return out;
}

template <class Real>
std::size_t tree_numel(const ParamTree<Real>& tree) {
  std::size_t n = 0;
  for (const auto& [_, t] : tree) n += t.size();
  return n;
}

/// sqrt of the sum of squares over every element of every tensor.
/// Accumulates in double regardless of storage precision.
template <class Real>
double pooled_l2_norm(const std::vector<const Tensor<Real>*>& tensors) {
  if (tensors.empty()) throw ConfigError("pooled_l2_norm: no tensors");
  double acc = 0.0;
  for (const Tensor<Real>* t : tensors) {
    for (Real x : *t) {
      if (!std::isfinite(x)) throw NonFiniteError("non-finite gradient");
      acc += static_cast<double>(x) * static_cast<double>(x);
    }
  }
  return std::sqrt(acc);
}

template <class Real>
double pooled_l2_norm(const std::vector<Tensor<Real>>& tensors) {
  std::vector<const Tensor<Real>*> ptrs;
  ptrs.reserve(tensors.size());
  for (const auto& t : tensors) ptrs.push_back(&t);
  return pooled_l2_norm(ptrs);
}

template <class Real>
double pooled_l2_norm(const ParamTree<Real>& tree) {
  std::vector<const Tensor<Real>*> ptrs;
  for (const auto& [_, t] : tree) ptrs.push_back(&t);
  return pooled_l2_norm(ptrs);
}

template <class Real>
double max_abs_diff(const ParamTree<Real>& a, const ParamTree<Real>& b) {
  if (!same_structure(a, b)) throw ConfigError("max_abs_diff: tree mismatch");
  double worst = 0.0;
  for (auto ia = a.begin(), ib = b.begin(); ia != a.end(); ++ia, ++ib) {
    for (std::size_t i = 0; i < ia->second.size(); ++i) {
      double d = std::abs(static_cast<double>(ia->second[i]) -
                          static_cast<double>(ib->second[i]));
      worst = std::max(worst, d);
    }
  }
  return worst;
}

/// Central-difference gradient of `loss_fn` at `params`, one coordinate at a time.
template <class Real>
ParamTree<Real> finite_diff_grad(
    const std::function<double(const ParamTree<Real>&)>& loss_fn,
    const ParamTree<Real>& params, double h = 1e-5) {
  if (!(h > 0.0)) throw ConfigError("finite_diff_grad: h must be positive");
  ParamTree<Real> probe = params;
  ParamTree<Real> grad = zeros_like(params);
  for (auto& [path, tensor] : probe) {
    Tensor<Real>& g = grad.at(path);
    for (std::size_t i = 0; i < tensor.size(); ++i) {
      const Real saved = tensor[i];
      tensor[i] = static_cast<Real>(saved + h);
      const double f_plus = loss_fn(probe);
      tensor[i] = static_cast<Real>(saved - h);
      const double f_minus = loss_fn(probe);
      tensor[i] = saved;
      if (!std::isfinite(f_plus) || !std::isfinite(f_minus)) {
        throw NonFiniteError("finite_diff_grad: loss is non-finite near " + path);
      }
      g[i] = static_cast<Real>((f_plus - f_minus) / (2.0 * h));
    }
  }
  return grad;
}

}  // namespace kbeta

#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "mtrc/common.hpp"

namespace mtrc {

// Dense row-major double tensor. Compute kernels index raw data directly;
// the shape is carried for validation and serialization.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<size_t>(count(shape_)), 0.0);
  }

  static int64_t count(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) {
      if (d <= 0) throw DimensionError("tensor dimension must be positive");
      n *= d;
    }
    return n;
  }

  const std::vector<int>& shape() const { return shape_; }
  int64_t size() const { return static_cast<int64_t>(data_.size()); }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

 private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Ordered collection of named tensors; one per parameter partition.
struct ParamSet {
  std::vector<NamedTensor> items;

  Tensor& add(const std::string& name, std::vector<int> shape) {
    items.push_back({name, Tensor(std::move(shape))});
    return items.back().tensor;
  }

  Tensor& at(const std::string& name) {
    for (auto& it : items)
      if (it.name == name) return it.tensor;
    throw DimensionError("no tensor named '" + name + "'");
  }
  const Tensor& at(const std::string& name) const {
    for (const auto& it : items)
      if (it.name == name) return it.tensor;
    throw DimensionError("no tensor named '" + name + "'");
  }

  int64_t total_size() const {
    int64_t n = 0;
    for (const auto& it : items) n += it.tensor.size();
    return n;
  }

  double squared_norm() const {
    double s = 0.0;
    for (const auto& it : items)
      for (int64_t i = 0; i < it.tensor.size(); ++i) s += it.tensor[i] * it.tensor[i];
    return s;
  }
};

}  // namespace mtrc

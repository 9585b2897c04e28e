#pragma once

#include <cstdint>
#include <initializer_list>
#include <vector>

#include "picnet/common.hpp"

namespace picnet {

/// Dense row-major array of doubles. Rank is dynamic but in practice <= 3.
/// Every public operation in the library keeps elements finite; NaN/Inf is an
/// error state surfaced via check_finite().
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape);  // zero-filled
  Tensor(std::vector<int> shape, std::vector<double> data);

  static Tensor scalar(double v);
  static Tensor row(std::initializer_list<double> values);  // shape [n]
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor zeros_like(const Tensor& other);

  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  const std::vector<int>& shape() const { return shape_; }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  // Rank-checked element access.
  double& at(int i);
  double at(int i) const;
  double& at(int i, int j);
  double at(int i, int j) const;
  double& at(int i, int j, int k);
  double at(int i, int j, int k) const;

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  std::string shape_str() const;

  void fill(double v);
  bool all_finite() const;
  void check_finite(const char* what) const;  // throws NumericError

  bool operator==(const Tensor& other) const {
    return shape_ == other.shape_ && data_ == other.data_;
  }

 private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

int64_t shape_numel(const std::vector<int>& shape);

}  // namespace picnet

#include "picnet/tensor.hpp"

#include <cmath>
#include <sstream>

namespace picnet {

int64_t shape_numel(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw DimensionError("tensor dimensions must be positive");
    n *= d;
  }
  return n;
}

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
  data_.assign(static_cast<size_t>(shape_numel(shape_)), 0.0);
}

Tensor::Tensor(std::vector<int> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != static_cast<int64_t>(data_.size()))
    throw DimensionError("tensor data length does not match shape");
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

Tensor Tensor::row(std::initializer_list<double> values) {
  return Tensor({static_cast<int>(values.size())}, std::vector<double>(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const int r = static_cast<int>(rows.size());
  const int c = r > 0 ? static_cast<int>(rows.begin()->size()) : 0;
  std::vector<double> data;
  data.reserve(static_cast<size_t>(r) * static_cast<size_t>(c));
  for (const auto& row : rows) {
    if (static_cast<int>(row.size()) != c)
      throw DimensionError("matrix rows must have equal length");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(data));
}

Tensor Tensor::zeros_like(const Tensor& other) { return Tensor(other.shape_); }

double& Tensor::at(int i) {
  if (rank() != 1) throw DimensionError("at(i) requires rank-1, got " + shape_str());
  return data_[static_cast<size_t>(i)];
}
double Tensor::at(int i) const { return const_cast<Tensor*>(this)->at(i); }

double& Tensor::at(int i, int j) {
  if (rank() != 2) throw DimensionError("at(i,j) requires rank-2, got " + shape_str());
  return data_[static_cast<size_t>(i) * shape_[1] + j];
}
double Tensor::at(int i, int j) const { return const_cast<Tensor*>(this)->at(i, j); }

double& Tensor::at(int i, int j, int k) {
  if (rank() != 3) throw DimensionError("at(i,j,k) requires rank-3, got " + shape_str());
  return data_[(static_cast<size_t>(i) * shape_[1] + j) * shape_[2] + k];
}
double Tensor::at(int i, int j, int k) const {
  return const_cast<Tensor*>(this)->at(i, j, k);
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape_.size(); ++i) {
    if (i) os << 'x';
    os << shape_[i];
  }
  os << ']';
  return os.str();
}

void Tensor::fill(double v) {
  for (double& x : data_) x = v;
}

bool Tensor::all_finite() const {
  for (double x : data_)
    if (!std::isfinite(x)) return false;
  return true;
}

void Tensor::check_finite(const char* what) const {
  if (!all_finite())
    throw NumericError(std::string(what) + ": tensor contains NaN or Inf");
}

}  // namespace picnet

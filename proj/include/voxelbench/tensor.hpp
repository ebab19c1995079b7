#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "voxelbench/error.hpp"
#include "voxelbench/memtrack.hpp"

namespace voxelbench {

// Dense n-d array, row-major with the batch axis outermost. Storage lives in
// a tracked buffer so resource accounting sees every tensor; math goes
// through Eigen maps over that buffer.
template <typename Scalar>
class Tensor {
 public:
  using Buffer = std::vector<Scalar, memtrack::Allocator<Scalar>>;

  Tensor() = default;

  explicit Tensor(std::vector<std::int64_t> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<std::size_t>(count(shape_)), Scalar(0));
  }

  static Tensor zeros(std::vector<std::int64_t> shape) { return Tensor(std::move(shape)); }

  const std::vector<std::int64_t>& shape() const { return shape_; }
  std::int64_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t ndim() const { return shape_.size(); }
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }

  Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>> array() {
    return {data_.data(), static_cast<Eigen::Index>(data_.size())};
  }
  Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>> array() const {
    return {data_.data(), static_cast<Eigen::Index>(data_.size())};
  }

  Scalar& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  const Scalar& operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  static std::int64_t count(const std::vector<std::int64_t>& shape) {
    std::int64_t n = 1;
    for (std::int64_t d : shape) {
      if (d < 0) throw data_error("negative tensor extent");
      n *= d;
    }
    return n;
  }

  std::string shape_string() const {
    std::string s = "(";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += ", ";
      s += std::to_string(shape_[i]);
    }
    return s + ")";
  }

 private:
  std::vector<std::int64_t> shape_;
  Buffer data_;
};

}  // namespace voxelbench

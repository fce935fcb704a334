#pragma once

#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace cwss {

// Error hierarchy. The CLI maps these onto distinct exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class ShapeError : public Error {
 public:
  using Error::Error;
};
class ValueError : public Error {
 public:
  using Error::Error;
};
class DataError : public Error {
 public:
  using Error::Error;
};
class NumericError : public Error {
 public:
  using Error::Error;
};
class IoError : public Error {
 public:
  using Error::Error;
};
class ChecksumError : public IoError {
 public:
  using IoError::IoError;
};
class TruncatedFileError : public IoError {
 public:
  using IoError::IoError;
};
class VersionError : public IoError {
 public:
  using IoError::IoError;
};

using Shape = std::vector<int>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major float32 tensor. The one value carrier for images,
/// feature maps, capsule poses and masks.
struct Tensor {
  Shape shape;
  std::vector<float> data;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)), data(shape_numel(shape), 0.0f) {}
  Tensor(Shape s, std::vector<float> d);

  static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
  static Tensor full(Shape s, float v);
  static Tensor ones(Shape s) { return full(std::move(s), 1.0f); }
  static Tensor scalar(float v) { return Tensor({}, {v}); }

  std::size_t size() const { return data.size(); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int axis) const;

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  bool all_finite() const;

  float scalar_value() const;

  // Row-major indexing helpers for up to 4 axes; bounds assumed valid.
  float& at(int i) { return data[static_cast<std::size_t>(i)]; }
  float at(int i) const { return data[static_cast<std::size_t>(i)]; }
  float& at(int i, int j) { return data[static_cast<std::size_t>(i) * shape[1] + j]; }
  float at(int i, int j) const { return data[static_cast<std::size_t>(i) * shape[1] + j]; }
  float& at(int i, int j, int k) {
    return data[(static_cast<std::size_t>(i) * shape[1] + j) * shape[2] + k];
  }
  float at(int i, int j, int k) const {
    return data[(static_cast<std::size_t>(i) * shape[1] + j) * shape[2] + k];
  }
  float& at(int i, int j, int k, int l) {
    return data[((static_cast<std::size_t>(i) * shape[1] + j) * shape[2] + k) * shape[3] + l];
  }
  float at(int i, int j, int k, int l) const {
    return data[((static_cast<std::size_t>(i) * shape[1] + j) * shape[2] + k) * shape[3] + l];
  }
};

void require_same_shape(const Tensor& a, const Tensor& b, const char* op);
void require_finite(const Tensor& t, const char* op);

}  // namespace cwss

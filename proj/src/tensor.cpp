#include "cwss/tensor.hpp"

#include <cmath>
#include <sstream>

namespace cwss {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int e : shape) {
    if (e < 0) throw ShapeError("negative extent in shape " + shape_str(shape));
    n *= static_cast<std::size_t>(e);
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

Tensor::Tensor(Shape s, std::vector<float> d) : shape(std::move(s)), data(std::move(d)) {
  if (data.size() != shape_numel(shape)) {
    throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
                     shape_str(shape));
  }
}

Tensor Tensor::full(Shape s, float v) {
  Tensor t(std::move(s));
  for (float& x : t.data) x = v;
  return t;
}

int Tensor::dim(int axis) const {
  if (axis < 0 || axis >= rank()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                     shape_str(shape));
  }
  return shape[axis];
}

bool Tensor::all_finite() const {
  for (float x : data) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

float Tensor::scalar_value() const {
  if (data.size() != 1) {
    throw ShapeError("scalar_value on tensor of shape " + shape_str(shape));
  }
  return data[0];
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape) + " vs " +
                     shape_str(b.shape));
  }
}

void require_finite(const Tensor& t, const char* op) {
  if (!t.all_finite()) {
    throw NumericError(std::string(op) + ": non-finite values in tensor " + shape_str(t.shape));
  }
}

}  // namespace cwss

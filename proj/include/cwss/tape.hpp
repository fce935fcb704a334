#pragma once

#include <functional>
#include <vector>

#include "cwss/tensor.hpp"

namespace cwss {

// Handle into a Tape. Only meaningful for the tape that produced it.
struct Var {
  int id = -1;
};

// Reverse-mode gradient tape. One tape records one forward pass; it is not
// thread-safe, but independent tapes may run concurrently. Coupling
// coefficients entering caps_weighted_sum are plain tensors, so routing
// iterations are never differentiated through.
class Tape {
 public:
  Var leaf(Tensor value);          // gradient-tracked input (parameter, image)
  Var constant(Tensor value);      // recorded value without gradient

  const Tensor& value(Var v) const;
  const Tensor& grad(Var v) const;  // valid after backward()

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var hadamard(Var a, Var b);
  Var scale(Var x, float s);
  Var relu(Var x);
  Var sigmoid(Var x);
  Var reshape(Var x, Shape shape);
  Var conv2d(Var input, Var kernel, int stride, int padding);
  Var transposed_conv2d(Var input, Var kernel, int stride, int padding);
  Var bias_add_channel(Var x, Var bias);
  Var matvec(Var w, Var x);
  Var gaussian_blur2d(Var x, float sigma);
  Var reduce_sum(Var x);                       // scalar
  Var sse(Var a, Var b);                       // sum((a-b)^2), scalar
  Var select_row(Var m, int row);              // m [N,D] -> [D]
  Var row_l2_norm(Var m, int row);             // scalar ||m[row]||
  Var l2_norm_rows(Var m);                     // m [N,D] -> [N]
  Var squash_rows(Var s);                      // rowwise squash on [N,D]
  // Rearranges primary-caps features [types*dim, g, g] into capsule rows
  // [types*g*g, dim]; capsule (t,y,x) maps to row (t*g + y)*g + x.
  Var caps_arrange(Var x, int types, int dim);
  // uhat[i,j,d] = sum_p u[i,p] * W[i,j,p,d]; u [N,P], W [N,J,P,D]
  Var caps_predict(Var u, Var w);
  // s[j,d] = sum_i c[i,j] * uhat[i,j,d]; c is a constant of the pass
  Var caps_weighted_sum(Var uhat, const Tensor& c);
  // Eq-7 style hinge-squared loss on rows of v [J,D]; targets in {0,1}^J
  Var margin_loss(Var v, const Tensor& targets, float m_plus, float m_minus,
                  float lambda_down);

  // Seeds d(loss)/d(loss) = 1 and propagates to every leaf. Rejects
  // non-scalar losses and ids this tape never recorded.
  void backward(Var loss);

  int size() const { return static_cast<int>(nodes_.size()); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool needs_grad = false;
    std::function<void()> backprop;  // empty for leaves/constants
  };

  Var push(Tensor value, bool needs_grad, std::function<void()> backprop = {});
  Node& at(Var v);
  const Node& at(Var v) const;

  std::vector<Node> nodes_;
};

}  // namespace cwss

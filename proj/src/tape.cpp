#include "cwss/tape.hpp"

#include <cmath>

#include "cwss/ops.hpp"

namespace cwss {

namespace {
constexpr double kNormEps = 1e-12;
}

Var Tape::push(Tensor value, bool needs_grad, std::function<void()> backprop) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  n.backprop = std::move(backprop);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Tape::Node& Tape::at(Var v) {
  if (v.id < 0 || v.id >= static_cast<int>(nodes_.size()))
    throw ValueError("variable was not recorded on this tape");
  return nodes_[static_cast<size_t>(v.id)];
}

const Tape::Node& Tape::at(Var v) const {
  if (v.id < 0 || v.id >= static_cast<int>(nodes_.size()))
    throw ValueError("variable was not recorded on this tape");
  return nodes_[static_cast<size_t>(v.id)];
}

Var Tape::leaf(Tensor value) { return push(std::move(value), true); }
Var Tape::constant(Tensor value) { return push(std::move(value), false); }

const Tensor& Tape::value(Var v) const { return at(v).value; }

const Tensor& Tape::grad(Var v) const {
  const Node& n = at(v);
  if (n.grad.shape != n.value.shape)
    throw ValueError("gradient not computed for this variable; run backward() first");
  return n.grad;
}

namespace {
void accumulate(Tensor& g, const Tensor& delta) {
  for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += delta.data[i];
}
}  // namespace

Var Tape::add(Var a, Var b) {
  Tensor out = ops::add(at(a).value, at(b).value);
  bool ng = at(a).needs_grad || at(b).needs_grad;
  Var o = push(std::move(out), ng);
  at(o).backprop = [this, a, b, o] {
    const Tensor& g = nodes_[static_cast<size_t>(o.id)].grad;
    if (at(a).needs_grad) accumulate(at(a).grad, g);
    if (at(b).needs_grad) accumulate(at(b).grad, g);
  };
  return o;
}

Var Tape::sub(Var a, Var b) {
  Tensor out = ops::sub(at(a).value, at(b).value);
  bool ng = at(a).needs_grad || at(b).needs_grad;
  Var o = push(std::move(out), ng);
  at(o).backprop = [this, a, b, o] {
    const Tensor& g = nodes_[static_cast<size_t>(o.id)].grad;
    if (at(a).needs_grad) accumulate(at(a).grad, g);
    if (at(b).needs_grad)
      for (size_t i = 0; i < g.data.size(); ++i) at(b).grad.data[i] -= g.data[i];
  };
  return o;
}

Var Tape::hadamard(Var a, Var b) {
  Tensor out = ops::hadamard(at(a).value, at(b).value);
  bool ng = at(a).needs_grad || at(b).needs_grad;
  Var o = push(std::move(out), ng);
  at(o).backprop = [this, a, b, o] {
    const Tensor& g = nodes_[static_cast<size_t>(o.id)].grad;
    if (at(a).needs_grad) {
      const Tensor& bv = at(b).value;
      Tensor& ga = at(a).grad;
      for (size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i] * bv.data[i];
    }
    if (at(b).needs_grad) {
      const Tensor& av = at(a).value;
      Tensor& gb = at(b).grad;
      for (size_t i = 0; i < g.data.size(); ++i) gb.data[i] += g.data[i] * av.data[i];
    }
  };
  return o;
}

Var Tape::scale(Var x, float s) {
  Var o = push(ops::scale(at(x).value, s), at(x).needs_grad);
  at(o).backprop = [this, x, s, o] {
    if (!at(x).needs_grad) return;
    const Tensor& g = nodes_[static_cast<size_t>(o.id)].grad;
    Tensor& gx = at(x).grad;
    for (size_t i = 0; i < g.data.size(); ++i) gx.data[i] += g.data[i] * s;
  };
  return o;
}

Var Tape::relu(Var x) {
  Var o = push(ops::relu(at(x).value), at(x).needs_grad);
  at(o).backprop = [this, x, o] {
    if (!at(x).needs_grad) return;
    const Tensor& g = nodes_[static_cast<size_t>(o.id)].grad;
    const Tensor& xv = at(x).value;
    Tensor& gx = at(x).grad;
    for (size_t i = 0; i < g.data.size(); ++i)
      if (xv.data[i] > 0.0f) gx.data[i] += g.data[i];
  };
  return o;
}

Var Tape::sigmoid(Var x) {
  Var o = push(ops::sigmoid(at(x).value), at(x).needs_grad);
  at(o).backprop = [this, x, o] {
    if (!at(x).needs_grad) return;
    const Node& on = nodes_[static_cast<size_t>(o.id)];
    Tensor& gx = at(x).grad;
    for (size_t i = 0; i < on.grad.data.size(); ++i) {
      float y = on.value.data[i];
      gx.data[i] += on.grad.data[i] * y * (1.0f - y);
    }
  };
  return o;
}

Var Tape::reshape(Var x, Shape shape) {
  const Tensor& xv = at(x).value;
  if (shape_numel(shape) != xv.size())
    throw ShapeError("reshape from " + shape_str(xv.shape) + " to " + shape_str(shape) +
                     " changes element count");
  Tensor out(shape, xv.data);
  Var o = push(std::move(out), at(x).needs_grad);
  at(o).backprop = [this, x, o] {
    if (!at(x).needs_grad) return;
    const Tensor& g = nodes_[static_cast<size_t>(o.id)].grad;
    accumulate(at(x).grad, g);
  };
  return o;
}

Var Tape::conv2d(Var input, Var kernel, int stride, int padding) {
  const Tensor& x = at(input).value;
  const Tensor& k = at(kernel).value;
  Tensor out = ops::conv2d(x, k, stride, padding);
  bool ng = at(input).needs_grad || at(kernel).needs_grad;
  int h = x.dim(1), w = x.dim(2), kh = k.dim(2), kw = k.dim(3);
  Var o = push(std::move(out), ng);
  at(o).backprop = [this, input, kernel, stride, padding, h, w, kh, kw, o] {
    const Tensor& g = nodes_[static_cast<size_t>(o.id)].grad;
    if (at(input).needs_grad)
      accumulate(at(input).grad,
                 ops::conv2d_input_grad(g, at(kernel).value, stride, padding, h, w));
    if (at(kernel).needs_grad)
      accumulate(at(kernel).grad,
                 ops::conv2d_kernel_grad(at(input).value, g, stride, padding, kh, kw));
  };
  return o;
}

Var Tape::transposed_conv2d(Var input, Var kernel, int stride, int padding) {
  const Tensor& x = at(input).value;
  const Tensor& k = at(kernel).value;
  Tensor out = ops::transposed_conv2d(x, k, stride, padding);
  bool ng = at(input).needs_grad || at(kernel).needs_grad;
  int kh = k.dim(2), kw = k.dim(3);
  Var o = push(std::move(out), ng);
  at(o).backprop = [this, input, kernel, stride, padding, kh, kw, o] {
    const Tensor& g = nodes_[static_cast<size_t>(o.id)].grad;
    if (at(input).needs_grad)
      accumulate(at(input).grad, ops::transposed_conv2d_input_grad(g, at(kernel).value,
                                                                   stride, padding));
    if (at(kernel).needs_grad)
      accumulate(at(kernel).grad, ops::transposed_conv2d_kernel_grad(
                                      at(input).value, g, stride, padding, kh, kw));
  };
  return o;
}

Var Tape::bias_add_channel(Var x, Var bias) {
  Tensor out = ops::bias_add_channel(at(x).value, at(bias).value);
  bool ng = at(x).needs_grad || at(bias).needs_grad;
  Var o = push(std::move(out), ng);
  at(o).backprop = [this, x, bias, o] {
    const Tensor& g = nodes_[static_cast<size_t>(o.id)].grad;
    if (at(x).needs_grad) accumulate(at(x).grad, g);
    if (at(bias).needs_grad) {
      Tensor& gb = at(bias).grad;
      size_t plane = static_cast<size_t>(g.dim(1)) * g.dim(2);
      for (int c = 0; c < g.dim(0); ++c) {
        double acc = 0.0;
        const float* src = g.data.data() + c * plane;
        for (size_t i = 0; i < plane; ++i) acc += src[i];
        gb.data[static_cast<size_t>(c)] += static_cast<float>(acc);
      }
    }
  };
  return o;
}

Var Tape::matvec(Var w, Var x) {
  Tensor out = ops::matvec(at(w).value, at(x).value);
  bool ng = at(w).needs_grad || at(x).needs_grad;
  Var o = push(std::move(out), ng);
  at(o).backprop = [this, w, x, o] {
    const Tensor& g = nodes_[static_cast<size_t>(o.id)].grad;
    const Tensor& wv = at(w).value;
    const Tensor& xv = at(x).value;
    int rows = wv.dim(0), cols = wv.dim(1);
    if (at(w).needs_grad) {
      Tensor& gw = at(w).grad;
      for (int r = 0; r < rows; ++r) {
        float gr = g.data[static_cast<size_t>(r)];
        float* dst = gw.data.data() + static_cast<size_t>(r) * cols;
        const float* src = xv.data.data();
        for (int c = 0; c < cols; ++c) dst[c] += gr * src[c];
      }
    }
    if (at(x).needs_grad) {
      Tensor& gx = at(x).grad;
      for (int r = 0; r < rows; ++r) {
        float gr = g.data[static_cast<size_t>(r)];
        const float* src = wv.data.data() + static_cast<size_t>(r) * cols;
        for (int c = 0; c < cols; ++c) gx.data[static_cast<size_t>(c)] += gr * src[c];
      }
    }
  };
  return o;
}

Var Tape::gaussian_blur2d(Var x, float sigma) {
  Var o = push(ops::gaussian_blur2d(at(x).value, sigma), at(x).needs_grad);
  at(o).backprop = [this, x, sigma, o] {
    if (!at(x).needs_grad) return;
    const Tensor& g = nodes_[static_cast<size_t>(o.id)].grad;
    accumulate(at(x).grad, ops::gaussian_blur2d_adjoint(g, sigma));
  };
  return o;
}

Var Tape::reduce_sum(Var x) {
  Var o = push(Tensor::scalar(ops::sum_all(at(x).value)), at(x).needs_grad);
  at(o).backprop = [this, x, o] {
    if (!at(x).needs_grad) return;
    float g = nodes_[static_cast<size_t>(o.id)].grad.data[0];
    Tensor& gx = at(x).grad;
    for (float& v : gx.data) v += g;
  };
  return o;
}

Var Tape::sse(Var a, Var b) {
  const Tensor& av = at(a).value;
  const Tensor& bv = at(b).value;
  require_same_shape(av, bv, "sse");
  double acc = 0.0;
  for (size_t i = 0; i < av.data.size(); ++i) {
    double d = static_cast<double>(av.data[i]) - bv.data[i];
    acc += d * d;
  }
  bool ng = at(a).needs_grad || at(b).needs_grad;
  Var o = push(Tensor::scalar(static_cast<float>(acc)), ng);
  at(o).backprop = [this, a, b, o] {
    float g = nodes_[static_cast<size_t>(o.id)].grad.data[0];
    const Tensor& av2 = at(a).value;
    const Tensor& bv2 = at(b).value;
    if (at(a).needs_grad) {
      Tensor& ga = at(a).grad;
      for (size_t i = 0; i < av2.data.size(); ++i)
        ga.data[i] += 2.0f * g * (av2.data[i] - bv2.data[i]);
    }
    if (at(b).needs_grad) {
      Tensor& gb = at(b).grad;
      for (size_t i = 0; i < av2.data.size(); ++i)
        gb.data[i] -= 2.0f * g * (av2.data[i] - bv2.data[i]);
    }
  };
  return o;
}

Var Tape::select_row(Var m, int row) {
  const Tensor& mv = at(m).value;
  if (mv.rank() != 2) throw ShapeError("select_row expects [N,D], got " + shape_str(mv.shape));
  if (row < 0 || row >= mv.dim(0)) throw ValueError("select_row: row out of range");
  int d = mv.dim(1);
  Tensor out({d});
  for (int i = 0; i < d; ++i) out.data[static_cast<size_t>(i)] = mv.at(row, i);
  Var o = push(std::move(out), at(m).needs_grad);
  at(o).backprop = [this, m, row, d, o] {
    if (!at(m).needs_grad) return;
    const Tensor& g = nodes_[static_cast<size_t>(o.id)].grad;
    Tensor& gm = at(m).grad;
    for (int i = 0; i < d; ++i) gm.at(row, i) += g.data[static_cast<size_t>(i)];
  };
  return o;
}

Var Tape::row_l2_norm(Var m, int row) {
  const Tensor& mv = at(m).value;
  if (mv.rank() != 2) throw ShapeError("row_l2_norm expects [N,D]");
  if (row < 0 || row >= mv.dim(0)) throw ValueError("row_l2_norm: row out of range");
  int d = mv.dim(1);
  double q = 0.0;
  for (int i = 0; i < d; ++i) {
    double v = mv.at(row, i);
    q += v * v;
  }
  Var o = push(Tensor::scalar(static_cast<float>(std::sqrt(q))), at(m).needs_grad);
  at(o).backprop = [this, m, row, d, q, o] {
    if (!at(m).needs_grad) return;
    float g = nodes_[static_cast<size_t>(o.id)].grad.data[0];
    double inv = 1.0 / std::sqrt(q + kNormEps);
    const Tensor& mv2 = at(m).value;
    Tensor& gm = at(m).grad;
    for (int i = 0; i < d; ++i)
      gm.at(row, i) += static_cast<float>(g * mv2.at(row, i) * inv);
  };
  return o;
}

Var Tape::l2_norm_rows(Var m) {
  const Tensor& mv = at(m).value;
  if (mv.rank() != 2) throw ShapeError("l2_norm_rows expects [N,D]");
  int n = mv.dim(0), d = mv.dim(1);
  Tensor out({n});
  for (int r = 0; r < n; ++r) {
    double q = 0.0;
    for (int i = 0; i < d; ++i) {
      double v = mv.at(r, i);
      q += v * v;
    }
    out.data[static_cast<size_t>(r)] = static_cast<float>(std::sqrt(q));
  }
  Var o = push(std::move(out), at(m).needs_grad);
  at(o).backprop = [this, m, n, d, o] {
    if (!at(m).needs_grad) return;
    const Tensor& g = nodes_[static_cast<size_t>(o.id)].grad;
    const Tensor& mv2 = at(m).value;
    const Tensor& ov = nodes_[static_cast<size_t>(o.id)].value;
    Tensor& gm = at(m).grad;
    for (int r = 0; r < n; ++r) {
      double inv = 1.0 / std::sqrt(static_cast<double>(ov.data[static_cast<size_t>(r)]) *
                                       ov.data[static_cast<size_t>(r)] +
                                   kNormEps);
      for (int i = 0; i < d; ++i)
        gm.at(r, i) += static_cast<float>(g.data[static_cast<size_t>(r)] * mv2.at(r, i) * inv);
    }
  };
  return o;
}

Var Tape::squash_rows(Var s) {
  const Tensor& sv = at(s).value;
  if (sv.rank() != 2) throw ShapeError("squash_rows expects [N,D], got " + shape_str(sv.shape));
  int n = sv.dim(0), d = sv.dim(1);
  Tensor out({n, d});
  for (int r = 0; r < n; ++r) {
    double q = 0.0;
    for (int i = 0; i < d; ++i) {
      double v = sv.at(r, i);
      q += v * v;
    }
    double f = q / ((1.0 + q) * std::sqrt(q + kNormEps));
    for (int i = 0; i < d; ++i) out.at(r, i) = static_cast<float>(f * sv.at(r, i));
  }
  Var o = push(std::move(out), at(s).needs_grad);
  at(o).backprop = [this, s, n, d, o] {
    if (!at(s).needs_grad) return;
    const Tensor& g = nodes_[static_cast<size_t>(o.id)].grad;
    const Tensor& sv2 = at(s).value;
    Tensor& gs = at(s).grad;
    for (int r = 0; r < n; ++r) {
      double q = 0.0, gdots = 0.0;
      for (int i = 0; i < d; ++i) {
        double v = sv2.at(r, i);
        q += v * v;
        gdots += static_cast<double>(g.at(r, i)) * v;
      }
      double root = std::sqrt(q + kNormEps);
      double f = q / ((1.0 + q) * root);
      // df/dq for f(q) = q (1+q)^-1 (q+eps)^-1/2
      double dfdq = 1.0 / ((1.0 + q) * (1.0 + q) * root) -
                    0.5 * q / ((1.0 + q) * root * (q + kNormEps));
      for (int i = 0; i < d; ++i)
        gs.at(r, i) += static_cast<float>(f * g.at(r, i) + 2.0 * dfdq * gdots * sv2.at(r, i));
    }
  };
  return o;
}

Var Tape::caps_arrange(Var x, int types, int dim) {
  const Tensor& xv = at(x).value;
  if (xv.rank() != 3 || xv.dim(0) != types * dim || xv.dim(1) != xv.dim(2))
    throw ShapeError("caps_arrange expects [types*dim, g, g], got " + shape_str(xv.shape) +
                     " for types=" + std::to_string(types) + " dim=" + std::to_string(dim));
  int g = xv.dim(1);
  Tensor out({types * g * g, dim});
  for (int t = 0; t < types; ++t)
    for (int y = 0; y < g; ++y)
      for (int xx = 0; xx < g; ++xx) {
        int row = (t * g + y) * g + xx;
        for (int p = 0; p < dim; ++p) out.at(row, p) = xv.at(t * dim + p, y, xx);
      }
  Var o = push(std::move(out), at(x).needs_grad);
  at(o).backprop = [this, x, types, dim, g, o] {
    if (!at(x).needs_grad) return;
    const Tensor& gr = nodes_[static_cast<size_t>(o.id)].grad;
    Tensor& gx = at(x).grad;
    for (int t = 0; t < types; ++t)
      for (int y = 0; y < g; ++y)
        for (int xx = 0; xx < g; ++xx) {
          int row = (t * g + y) * g + xx;
          for (int p = 0; p < dim; ++p) gx.at(t * dim + p, y, xx) += gr.at(row, p);
        }
  };
  return o;
}

Var Tape::caps_predict(Var u, Var w) {
  const Tensor& uv = at(u).value;
  const Tensor& wv = at(w).value;
  if (uv.rank() != 2 || wv.rank() != 4)
    throw ShapeError("caps_predict expects u [N,P] and W [N,J,P,D]");
  int n = uv.dim(0), p = uv.dim(1);
  if (wv.dim(0) != n || wv.dim(2) != p)
    throw ShapeError("caps_predict: u " + shape_str(uv.shape) + " vs W " + shape_str(wv.shape));
  int j = wv.dim(1), d = wv.dim(3);
  Tensor out({n, j, d});
  const float* up = uv.data.data();
  const float* wp = wv.data.data();
  float* op = out.data.data();
  for (int i = 0; i < n; ++i) {
    for (int jj = 0; jj < j; ++jj) {
      float* dst = op + (static_cast<size_t>(i) * j + jj) * d;
      const float* wblock = wp + ((static_cast<size_t>(i) * j + jj) * p) * d;
      for (int pp = 0; pp < p; ++pp) {
        float uval = up[static_cast<size_t>(i) * p + pp];
        const float* wrow = wblock + static_cast<size_t>(pp) * d;
        for (int dd = 0; dd < d; ++dd) dst[dd] += uval * wrow[dd];
      }
    }
  }
  bool ng = at(u).needs_grad || at(w).needs_grad;
  Var o = push(std::move(out), ng);
  at(o).backprop = [this, u, w, n, j, p, d, o] {
    const Tensor& g = nodes_[static_cast<size_t>(o.id)].grad;
    const Tensor& uv2 = at(u).value;
    const Tensor& wv2 = at(w).value;
    if (at(u).needs_grad) {
      Tensor& gu = at(u).grad;
      for (int i = 0; i < n; ++i)
        for (int jj = 0; jj < j; ++jj) {
          const float* grow = g.data.data() + (static_cast<size_t>(i) * j + jj) * d;
          const float* wblock = wv2.data.data() + ((static_cast<size_t>(i) * j + jj) * p) * d;
          for (int pp = 0; pp < p; ++pp) {
            const float* wrow = wblock + static_cast<size_t>(pp) * d;
            double acc = 0.0;
            for (int dd = 0; dd < d; ++dd) acc += static_cast<double>(grow[dd]) * wrow[dd];
            gu.data[static_cast<size_t>(i) * p + pp] += static_cast<float>(acc);
          }
        }
    }
    if (at(w).needs_grad) {
      Tensor& gw = at(w).grad;
      for (int i = 0; i < n; ++i)
        for (int jj = 0; jj < j; ++jj) {
          const float* grow = g.data.data() + (static_cast<size_t>(i) * j + jj) * d;
          float* wgblock = gw.data.data() + ((static_cast<size_t>(i) * j + jj) * p) * d;
          for (int pp = 0; pp < p; ++pp) {
            float uval = uv2.data[static_cast<size_t>(i) * p + pp];
            float* wgrow = wgblock + static_cast<size_t>(pp) * d;
            for (int dd = 0; dd < d; ++dd) wgrow[dd] += uval * grow[dd];
          }
        }
    }
  };
  return o;
}

Var Tape::caps_weighted_sum(Var uhat, const Tensor& c) {
  const Tensor& uv = at(uhat).value;
  if (uv.rank() != 3) throw ShapeError("caps_weighted_sum expects uhat [N,J,D]");
  int n = uv.dim(0), j = uv.dim(1), d = uv.dim(2);
  if (c.rank() != 2 || c.dim(0) != n || c.dim(1) != j)
    throw ShapeError("caps_weighted_sum: coupling " + shape_str(c.shape) + " vs uhat " +
                     shape_str(uv.shape));
  Tensor out({j, d});
  for (int i = 0; i < n; ++i)
    for (int jj = 0; jj < j; ++jj) {
      float cij = c.at(i, jj);
      const float* src = uv.data.data() + (static_cast<size_t>(i) * j + jj) * d;
      float* dst = out.data.data() + static_cast<size_t>(jj) * d;
      for (int dd = 0; dd < d; ++dd) dst[dd] += cij * src[dd];
    }
  Tensor c_copy = c;
  Var o = push(std::move(out), at(uhat).needs_grad);
  at(o).backprop = [this, uhat, c_copy, n, j, d, o] {
    if (!at(uhat).needs_grad) return;
    const Tensor& g = nodes_[static_cast<size_t>(o.id)].grad;
    Tensor& gu = at(uhat).grad;
    for (int i = 0; i < n; ++i)
      for (int jj = 0; jj < j; ++jj) {
        float cij = c_copy.at(i, jj);
        const float* src = g.data.data() + static_cast<size_t>(jj) * d;
        float* dst = gu.data.data() + (static_cast<size_t>(i) * j + jj) * d;
        for (int dd = 0; dd < d; ++dd) dst[dd] += cij * src[dd];
      }
  };
  return o;
}

Var Tape::margin_loss(Var v, const Tensor& targets, float m_plus, float m_minus,
                      float lambda_down) {
  const Tensor& vv = at(v).value;
  if (vv.rank() != 2) throw ShapeError("margin_loss expects v [J,D]");
  int j = vv.dim(0), d = vv.dim(1);
  if (targets.rank() != 1 || targets.dim(0) != j)
    throw ShapeError("margin_loss: targets " + shape_str(targets.shape) + " vs v " +
                     shape_str(vv.shape));
  for (float t : targets.data)
    if (t != 0.0f && t != 1.0f) throw ValueError("margin_loss targets must be 0/1");

  std::vector<double> norms(static_cast<size_t>(j));
  double loss = 0.0;
  for (int jj = 0; jj < j; ++jj) {
    double q = 0.0;
    for (int dd = 0; dd < d; ++dd) {
      double x = vv.at(jj, dd);
      q += x * x;
    }
    double norm = std::sqrt(q);
    norms[static_cast<size_t>(jj)] = norm;
    double t = targets.data[static_cast<size_t>(jj)];
    double pos = std::max(0.0, static_cast<double>(m_plus) - norm);
    double neg = std::max(0.0, norm - static_cast<double>(m_minus));
    loss += t * pos * pos + static_cast<double>(lambda_down) * (1.0 - t) * neg * neg;
  }
  Tensor tcopy = targets;
  Var o = push(Tensor::scalar(static_cast<float>(loss)), at(v).needs_grad);
  at(o).backprop = [this, v, tcopy, norms, m_plus, m_minus, lambda_down, j, d, o] {
    if (!at(v).needs_grad) return;
    float g = nodes_[static_cast<size_t>(o.id)].grad.data[0];
    const Tensor& vv2 = at(v).value;
    Tensor& gv = at(v).grad;
    for (int jj = 0; jj < j; ++jj) {
      double norm = norms[static_cast<size_t>(jj)];
      double t = tcopy.data[static_cast<size_t>(jj)];
      double dnorm = 0.0;
      if (t > 0.5) {
        double pos = static_cast<double>(m_plus) - norm;
        if (pos > 0.0) dnorm -= 2.0 * pos;
      } else {
        double neg = norm - static_cast<double>(m_minus);
        if (neg > 0.0) dnorm += 2.0 * lambda_down * neg;
      }
      if (dnorm == 0.0) continue;
      double inv = 1.0 / std::sqrt(norm * norm + kNormEps);
      for (int dd = 0; dd < d; ++dd)
        gv.at(jj, dd) += static_cast<float>(g * dnorm * vv2.at(jj, dd) * inv);
    }
  };
  return o;
}

void Tape::backward(Var loss) {
  Node& ln = at(loss);
  if (ln.value.size() != 1)
    throw ValueError("backward requires a scalar loss, got shape " + shape_str(ln.value.shape));
  if (!ln.needs_grad)
    throw ValueError("backward target does not depend on any gradient-tracked leaf");
  for (int i = 0; i <= loss.id; ++i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (n.needs_grad)
      n.grad = Tensor(n.value.shape);
  }
  ln.grad.data[0] = 1.0f;
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (n.needs_grad && n.backprop) n.backprop();
  }
}

}  // namespace cwss

#include "batmil/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "batmil/fft.hpp"
#include "batmil/simd.hpp"

namespace batmil::ops {
namespace {

const simd::KernelTable& K() { return simd::kernels(); }

Tensor& gout(Tape& t, std::size_t self) { return t.grad(self); }

void check_row(const Tensor& x, const Tensor& row, const char* what) {
  if (row.rows != 1 || row.cols != x.cols) throw ShapeError(std::string(what) + ": expected 1x" + std::to_string(x.cols) + " row, got " + shape_str(row));
}

// GELU, tanh approximation.
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

}  // namespace

Var matmul(Tape& t, Var x, Var w) {
  const Tensor& xv = t.value(x);
  const Tensor& wv = t.value(w);
  if (xv.cols != wv.rows) throw ShapeError("matmul: " + shape_str(xv) + " · " + shape_str(wv));
  Tensor y(xv.rows, wv.cols);
  for (std::size_t r = 0; r < xv.rows; ++r) {
    double* yr = y.data.data() + r * y.cols;
    for (std::size_t i = 0; i < xv.cols; ++i) {
      const double a = xv(r, i);
      if (a != 0.0) K().axpy(a, wv.data.data() + i * wv.cols, yr, wv.cols);
    }
  }
  return t.record(std::move(y), {x, w}, [x, w](Tape& tp, std::size_t self) {
    const Tensor& g = gout(tp, self);
    const Tensor& xv = tp.value(x);
    const Tensor& wv = tp.value(w);
    if (Tensor* gx = tp.grad_if(x)) {
      for (std::size_t r = 0; r < xv.rows; ++r)
        for (std::size_t i = 0; i < xv.cols; ++i)
          (*gx)(r, i) += K().dot(g.data.data() + r * g.cols, wv.data.data() + i * wv.cols, wv.cols);
    }
    if (Tensor* gw = tp.grad_if(w)) {
      for (std::size_t r = 0; r < xv.rows; ++r)
        for (std::size_t i = 0; i < xv.cols; ++i) {
          const double a = xv(r, i);
          if (a != 0.0) K().axpy(a, g.data.data() + r * g.cols, gw->data.data() + i * gw->cols, gw->cols);
        }
    }
  }, "matmul");
}

Var add(Tape& t, Var a, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  require_same_shape(av, bv, "add");
  Tensor y = av;
  for (std::size_t i = 0; i < y.size(); ++i) y.data[i] += bv.data[i];
  return t.record(std::move(y), {a, b}, [a, b](Tape& tp, std::size_t self) {
    const Tensor& g = gout(tp, self);
    for (Var v : {a, b})
      if (Tensor* gv = tp.grad_if(v))
        for (std::size_t i = 0; i < g.size(); ++i) gv->data[i] += g.data[i];
  }, "add");
}

Var sub(Tape& t, Var a, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  require_same_shape(av, bv, "sub");
  Tensor y = av;
  for (std::size_t i = 0; i < y.size(); ++i) y.data[i] -= bv.data[i];
  return t.record(std::move(y), {a, b}, [a, b](Tape& tp, std::size_t self) {
    const Tensor& g = gout(tp, self);
    if (Tensor* ga = tp.grad_if(a))
      for (std::size_t i = 0; i < g.size(); ++i) ga->data[i] += g.data[i];
    if (Tensor* gb = tp.grad_if(b))
      for (std::size_t i = 0; i < g.size(); ++i) gb->data[i] -= g.data[i];
  }, "sub");
}

Var mul(Tape& t, Var a, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  require_same_shape(av, bv, "mul");
  Tensor y = av;
  for (std::size_t i = 0; i < y.size(); ++i) y.data[i] *= bv.data[i];
  return t.record(std::move(y), {a, b}, [a, b](Tape& tp, std::size_t self) {
    const Tensor& g = gout(tp, self);
    const Tensor& av = tp.value(a);
    const Tensor& bv = tp.value(b);
    if (Tensor* ga = tp.grad_if(a))
      for (std::size_t i = 0; i < g.size(); ++i) ga->data[i] += g.data[i] * bv.data[i];
    if (Tensor* gb = tp.grad_if(b))
      for (std::size_t i = 0; i < g.size(); ++i) gb->data[i] += g.data[i] * av.data[i];
  }, "mul");
}

Var add_row(Tape& t, Var x, Var row) {
  const Tensor& xv = t.value(x);
  const Tensor& rv = t.value(row);
  check_row(xv, rv, "add_row");
  Tensor y = xv;
  for (std::size_t r = 0; r < y.rows; ++r)
    for (std::size_t c = 0; c < y.cols; ++c) y(r, c) += rv.data[c];
  return t.record(std::move(y), {x, row}, [x, row](Tape& tp, std::size_t self) {
    const Tensor& g = gout(tp, self);
    if (Tensor* gx = tp.grad_if(x))
      for (std::size_t i = 0; i < g.size(); ++i) gx->data[i] += g.data[i];
    if (Tensor* gr = tp.grad_if(row))
      for (std::size_t r = 0; r < g.rows; ++r)
        for (std::size_t c = 0; c < g.cols; ++c) gr->data[c] += g(r, c);
  }, "add_row");
}

Var mul_row(Tape& t, Var x, Var row) {
  const Tensor& xv = t.value(x);
  const Tensor& rv = t.value(row);
  check_row(xv, rv, "mul_row");
  Tensor y = xv;
  for (std::size_t r = 0; r < y.rows; ++r)
    for (std::size_t c = 0; c < y.cols; ++c) y(r, c) *= rv.data[c];
  return t.record(std::move(y), {x, row}, [x, row](Tape& tp, std::size_t self) {
    const Tensor& g = gout(tp, self);
    const Tensor& xv = tp.value(x);
    const Tensor& rv = tp.value(row);
    if (Tensor* gx = tp.grad_if(x))
      for (std::size_t r = 0; r < g.rows; ++r)
        for (std::size_t c = 0; c < g.cols; ++c) (*gx)(r, c) += g(r, c) * rv.data[c];
    if (Tensor* gr = tp.grad_if(row))
      for (std::size_t r = 0; r < g.rows; ++r)
        for (std::size_t c = 0; c < g.cols; ++c) gr->data[c] += g(r, c) * xv(r, c);
  }, "mul_row");
}

Var scale_rows(Tape& t, Var x, Var s) {
  const Tensor& xv = t.value(x);
  const Tensor& sv = t.value(s);
  if (sv.rows != xv.rows || sv.cols != 1) throw ShapeError("scale_rows: expected " + std::to_string(xv.rows) + "x1 scale, got " + shape_str(sv));
  Tensor y = xv;
  for (std::size_t r = 0; r < y.rows; ++r)
    for (std::size_t c = 0; c < y.cols; ++c) y(r, c) *= sv.data[r];
  return t.record(std::move(y), {x, s}, [x, s](Tape& tp, std::size_t self) {
    const Tensor& g = gout(tp, self);
    const Tensor& xv = tp.value(x);
    const Tensor& sv = tp.value(s);
    if (Tensor* gx = tp.grad_if(x))
      for (std::size_t r = 0; r < g.rows; ++r)
        for (std::size_t c = 0; c < g.cols; ++c) (*gx)(r, c) += g(r, c) * sv.data[r];
    if (Tensor* gs = tp.grad_if(s))
      for (std::size_t r = 0; r < g.rows; ++r) gs->data[r] += K().dot(g.row(r).data(), xv.row(r).data(), g.cols);
  }, "scale_rows");
}

Var mul_scalar(Tape& t, Var x, Var s) {
  const Tensor& xv = t.value(x);
  const Tensor& sv = t.value(s);
  if (sv.size() != 1) throw ShapeError("mul_scalar: scale must be 1x1");
  Tensor y = xv;
  for (double& v : y.data) v *= sv.data[0];
  return t.record(std::move(y), {x, s}, [x, s](Tape& tp, std::size_t self) {
    const Tensor& g = gout(tp, self);
    const Tensor& xv = tp.value(x);
    const double sv = tp.value(s).data[0];
    if (Tensor* gx = tp.grad_if(x))
      for (std::size_t i = 0; i < g.size(); ++i) gx->data[i] += g.data[i] * sv;
    if (Tensor* gs = tp.grad_if(s)) gs->data[0] += K().dot(g.data.data(), xv.data.data(), g.size());
  }, "mul_scalar");
}

Var affine(Tape& t, Var x, double a, double b) {
  Tensor y = t.value(x);
  for (double& v : y.data) v = a * v + b;
  return t.record(std::move(y), {x}, [x, a](Tape& tp, std::size_t self) {
    const Tensor& g = gout(tp, self);
    Tensor& gx = tp.grad(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx.data[i] += a * g.data[i];
  }, "affine");
}

Var linear(Tape& t, Var x, Var w, Var bias) { return add_row(t, matmul(t, x, w), bias); }

Var gelu(Tape& t, Var x) {
  Tensor y = t.value(x);
  for (double& v : y.data) v = 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v)));
  return t.record(std::move(y), {x}, [x](Tape& tp, std::size_t self) {
    const Tensor& g = gout(tp, self);
    const Tensor& xv = tp.value(x);
    Tensor& gx = tp.grad(x);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = xv.data[i];
      const double th = std::tanh(kGeluC * (v + kGeluA * v * v * v));
      const double d = 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * kGeluA * v * v);
      gx.data[i] += g.data[i] * d;
    }
  }, "gelu");
}

Var sigmoid(Tape& t, Var x) {
  Tensor y = t.value(x);
  for (double& v : y.data) v = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  return t.record(std::move(y), {x}, [x](Tape& tp, std::size_t self) {
    const Tensor& g = gout(tp, self);
    const Tensor& yv = tp.value(Var{self});
    Tensor& gx = tp.grad(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx.data[i] += g.data[i] * yv.data[i] * (1.0 - yv.data[i]);
  }, "sigmoid");
}

Var tanh(Tape& t, Var x) {
  Tensor y = t.value(x);
  for (double& v : y.data) v = std::tanh(v);
  return t.record(std::move(y), {x}, [x](Tape& tp, std::size_t self) {
    const Tensor& g = gout(tp, self);
    const Tensor& yv = tp.value(Var{self});
    Tensor& gx = tp.grad(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx.data[i] += g.data[i] * (1.0 - yv.data[i] * yv.data[i]);
  }, "tanh");
}

Var softmax_rows(Tape& t, Var x) {
  Tensor y = t.value(x);
  for (std::size_t r = 0; r < y.rows; ++r) {
    auto row = y.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double s = 0.0;
    for (double& v : row) {
      v = std::exp(v - mx);
      s += v;
    }
    for (double& v : row) v /= s;
  }
  return t.record(std::move(y), {x}, [x](Tape& tp, std::size_t self) {
    const Tensor& g = gout(tp, self);
    const Tensor& p = tp.value(Var{self});
    Tensor& gx = tp.grad(x);
    for (std::size_t r = 0; r < g.rows; ++r) {
      const double gp = K().dot(g.row(r).data(), p.row(r).data(), g.cols);
      for (std::size_t c = 0; c < g.cols; ++c) gx(r, c) += p(r, c) * (g(r, c) - gp);
    }
  }, "softmax");
}

Var layer_norm(Tape& t, Var x, Var gamma, Var beta, double eps) {
  const Tensor& xv = t.value(x);
  check_row(xv, t.value(gamma), "layer_norm gamma");
  check_row(xv, t.value(beta), "layer_norm beta");
  const std::size_t n = xv.rows, m = xv.cols;
  Tensor xhat(n, m);
  std::vector<double> inv_std(n);
  for (std::size_t r = 0; r < n; ++r) {
    double mean = 0.0;
    for (double v : xv.row(r)) mean += v;
    mean /= static_cast<double>(m);
    double var = 0.0;
    for (double v : xv.row(r)) var += (v - mean) * (v - mean);
    var /= static_cast<double>(m);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < m; ++c) xhat(r, c) = (xv(r, c) - mean) * inv_std[r];
  }
  const Tensor& gv = t.value(gamma);
  const Tensor& bv = t.value(beta);
  Tensor y(n, m);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < m; ++c) y(r, c) = xhat(r, c) * gv.data[c] + bv.data[c];
  return t.record(std::move(y), {x, gamma, beta},
                  [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& tp, std::size_t self) {
    const Tensor& g = gout(tp, self);
    const Tensor& gv = tp.value(gamma);
    const std::size_t n = g.rows, m = g.cols;
    if (Tensor* gg = tp.grad_if(gamma))
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < m; ++c) gg->data[c] += g(r, c) * xhat(r, c);
    if (Tensor* gb = tp.grad_if(beta))
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < m; ++c) gb->data[c] += g(r, c);
    if (Tensor* gx = tp.grad_if(x)) {
      std::vector<double> dxhat(m);
      for (std::size_t r = 0; r < n; ++r) {
        double mean_d = 0.0, mean_dx = 0.0;
        for (std::size_t c = 0; c < m; ++c) {
          dxhat[c] = g(r, c) * gv.data[c];
          mean_d += dxhat[c];
          mean_dx += dxhat[c] * xhat(r, c);
        }
        mean_d /= static_cast<double>(m);
        mean_dx /= static_cast<double>(m);
        for (std::size_t c = 0; c < m; ++c) (*gx)(r, c) += inv_std[r] * (dxhat[c] - mean_d - xhat(r, c) * mean_dx);
      }
    }
  }, "layer_norm");
}

Var sum_all(Tape& t, Var x) {
  double s = 0.0;
  for (double v : t.value(x).data) s += v;
  return t.record(Tensor(1, 1, s), {x}, [x](Tape& tp, std::size_t self) {
    const double g = gout(tp, self).data[0];
    for (double& v : tp.grad(x).data) v += g;
  }, "sum");
}

Var mean_rows(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  if (xv.rows == 0) throw DomainError("mean_rows: empty input");
  Tensor y(1, xv.cols);
  for (std::size_t r = 0; r < xv.rows; ++r)
    for (std::size_t c = 0; c < xv.cols; ++c) y.data[c] += xv(r, c);
  for (double& v : y.data) v /= static_cast<double>(xv.rows);
  return t.record(std::move(y), {x}, [x](Tape& tp, std::size_t self) {
    const Tensor& g = gout(tp, self);
    Tensor& gx = tp.grad(x);
    const double inv = 1.0 / static_cast<double>(gx.rows);
    for (std::size_t r = 0; r < gx.rows; ++r)
      for (std::size_t c = 0; c < gx.cols; ++c) gx(r, c) += g.data[c] * inv;
  }, "mean_rows");
}

Var dot_const(Tape& t, Var x, const Tensor& weights) {
  const Tensor& xv = t.value(x);
  if (xv.size() != weights.size()) throw ShapeError("dot_const: size mismatch");
  const double s = K().dot(xv.data.data(), weights.data.data(), xv.size());
  return t.record(Tensor(1, 1, s), {x}, [x, weights](Tape& tp, std::size_t self) {
    const double g = gout(tp, self).data[0];
    K().axpy(g, weights.data.data(), tp.grad(x).data.data(), weights.size());
  }, "dot_const");
}

Var concat_cols(Tape& t, Var a, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  if (av.rows != bv.rows) throw ShapeError("concat_cols: row counts differ");
  Tensor y(av.rows, av.cols + bv.cols);
  for (std::size_t r = 0; r < av.rows; ++r) {
    std::copy(av.row(r).begin(), av.row(r).end(), y.row(r).begin());
    std::copy(bv.row(r).begin(), bv.row(r).end(), y.row(r).begin() + static_cast<std::ptrdiff_t>(av.cols));
  }
  return t.record(std::move(y), {a, b}, [a, b](Tape& tp, std::size_t self) {
    const Tensor& g = gout(tp, self);
    const std::size_t p = tp.value(a).cols;
    if (Tensor* ga = tp.grad_if(a))
      for (std::size_t r = 0; r < g.rows; ++r)
        for (std::size_t c = 0; c < p; ++c) (*ga)(r, c) += g(r, c);
    if (Tensor* gb = tp.grad_if(b))
      for (std::size_t r = 0; r < g.rows; ++r)
        for (std::size_t c = p; c < g.cols; ++c) (*gb)(r, c - p) += g(r, c);
  }, "concat_cols");
}

Var gather_rows(Tape& t, Var x, std::vector<std::size_t> rows) {
  const Tensor& xv = t.value(x);
  Tensor y(rows.size(), xv.cols);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= xv.rows) throw ShapeError("gather_rows: index out of range");
    std::copy(xv.row(rows[i]).begin(), xv.row(rows[i]).end(), y.row(i).begin());
  }
  return t.record(std::move(y), {x}, [x, rows = std::move(rows)](Tape& tp, std::size_t self) {
    const Tensor& g = gout(tp, self);
    Tensor& gx = tp.grad(x);
    for (std::size_t i = 0; i < rows.size(); ++i) K().axpy(1.0, g.row(i).data(), gx.row(rows[i]).data(), g.cols);
  }, "gather_rows");
}

Var scatter_add_rows(Tape& t, const std::vector<std::pair<Var, std::vector<std::size_t>>>& parts, std::size_t n_rows,
                     std::size_t cols) {
  Tensor y(n_rows, cols);
  std::vector<Var> inputs;
  for (const auto& [v, rows] : parts) {
    const Tensor& pv = t.value(v);
    if (pv.rows != rows.size() || pv.cols != cols) throw ShapeError("scatter_add_rows: part shape mismatch");
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i] >= n_rows) throw ShapeError("scatter_add_rows: index out of range");
      K().axpy(1.0, pv.row(i).data(), y.row(rows[i]).data(), cols);
    }
    inputs.push_back(v);
  }
  return t.record(std::move(y), inputs, [parts](Tape& tp, std::size_t self) {
    const Tensor& g = gout(tp, self);
    for (const auto& [v, rows] : parts) {
      Tensor* gv = tp.grad_if(v);
      if (gv == nullptr) continue;
      for (std::size_t i = 0; i < rows.size(); ++i) K().axpy(1.0, g.row(rows[i]).data(), gv->row(i).data(), g.cols);
    }
  }, "scatter_add_rows");
}

Var gather_entries(Tape& t, Var x, std::vector<std::pair<std::size_t, std::size_t>> entries) {
  const Tensor& xv = t.value(x);
  Tensor y(entries.size(), 1);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto [r, c] = entries[i];
    if (r >= xv.rows || c >= xv.cols) throw ShapeError("gather_entries: index out of range");
    y.data[i] = xv(r, c);
  }
  return t.record(std::move(y), {x}, [x, entries = std::move(entries)](Tape& tp, std::size_t self) {
    const Tensor& g = gout(tp, self);
    Tensor& gx = tp.grad(x);
    for (std::size_t i = 0; i < entries.size(); ++i) gx(entries[i].first, entries[i].second) += g.data[i];
  }, "gather_entries");
}

Var max_pool_rows(Tape& t, Var x, std::vector<std::size_t>* argmax) {
  const Tensor& xv = t.value(x);
  if (xv.rows == 0) throw DomainError("max_pool: empty sequence");
  Tensor y(1, xv.cols);
  std::vector<std::size_t> arg(xv.cols, 0);
  for (std::size_t c = 0; c < xv.cols; ++c) {
    double best = xv(0, c);
    for (std::size_t r = 1; r < xv.rows; ++r) {
      if (xv(r, c) > best) {
        best = xv(r, c);
        arg[c] = r;
      }
    }
    y.data[c] = best;
  }
  if (argmax != nullptr) *argmax = arg;
  return t.record(std::move(y), {x}, [x, arg = std::move(arg)](Tape& tp, std::size_t self) {
    const Tensor& g = gout(tp, self);
    Tensor& gx = tp.grad(x);
    for (std::size_t c = 0; c < arg.size(); ++c) gx(arg[c], c) += g.data[c];
  }, "max_pool");
}

Var topk_weights(Tape& t, Var probs, const std::vector<std::vector<std::size_t>>& idx) {
  const Tensor& pv = t.value(probs);
  if (idx.size() != pv.rows) throw ShapeError("topk_weights: one index list per row required");
  const std::size_t k = idx.empty() ? 0 : idx.front().size();
  Tensor w(pv.rows, k);
  std::vector<double> sums(pv.rows);
  for (std::size_t r = 0; r < pv.rows; ++r) {
    if (idx[r].size() != k) throw ShapeError("topk_weights: ragged index lists");
    double s = 0.0;
    for (std::size_t j : idx[r]) s += pv(r, j);
    sums[r] = s;
    for (std::size_t j = 0; j < k; ++j) w(r, j) = pv(r, idx[r][j]) / s;
  }
  return t.record(std::move(w), {probs}, [probs, idx, sums = std::move(sums)](Tape& tp, std::size_t self) {
    const Tensor& g = gout(tp, self);
    const Tensor& w = tp.value(Var{self});
    Tensor& gp = tp.grad(probs);
    for (std::size_t r = 0; r < g.rows; ++r) {
      const double gw = K().dot(g.row(r).data(), w.row(r).data(), g.cols);
      for (std::size_t j = 0; j < g.cols; ++j) gp(r, idx[r][j]) += (g(r, j) - gw) / sums[r];
    }
  }, "topk_weights");
}

Var dropout(Tape& t, Var x, double rate, bool training, Rng& rng) {
  if (!training || rate <= 0.0) return x;
  if (rate >= 1.0) throw ConfigError("dropout: rate must be < 1");
  const Tensor& xv = t.value(x);
  Tensor mask(xv.rows, xv.cols);
  std::bernoulli_distribution keep(1.0 - rate);
  const double scale = 1.0 / (1.0 - rate);
  for (double& m : mask.data) m = keep(rng) ? scale : 0.0;
  Var mv = t.constant(std::move(mask));
  return mul(t, x, mv);
}

Var drop_path(Tape& t, Var x, double rate, bool training, Rng& rng) {
  if (!training || rate <= 0.0) return x;
  if (rate >= 1.0) throw ConfigError("drop_path: rate must be < 1");
  std::bernoulli_distribution keep(1.0 - rate);
  const double factor = keep(rng) ? 1.0 / (1.0 - rate) : 0.0;
  return affine(t, x, factor, 0.0);
}

Var cross_entropy(Tape& t, Var logits, std::size_t label) {
  const Tensor& z = t.value(logits);
  if (z.rows != 1) throw ShapeError("cross_entropy: logits must be a single row");
  if (label >= z.cols) throw DomainError("cross_entropy: label " + std::to_string(label) + " out of range");
  const double mx = *std::max_element(z.data.begin(), z.data.end());
  double s = 0.0;
  for (double v : z.data) s += std::exp(v - mx);
  const double lse = mx + std::log(s);
  return t.record(Tensor(1, 1, lse - z.data[label]), {logits}, [logits, label, lse](Tape& tp, std::size_t self) {
    const double g = gout(tp, self).data[0];
    const Tensor& z = tp.value(logits);
    Tensor& gz = tp.grad(logits);
    for (std::size_t c = 0; c < z.cols; ++c) gz.data[c] += g * (std::exp(z.data[c] - lse) - (c == label ? 1.0 : 0.0));
  }, "cross_entropy");
}

Var ssm_kernels(Tape& t, Var c_re, Var c_im, const std::vector<ssm::DiscretePair>& dynamics, std::size_t length) {
  const Tensor& cr = t.value(c_re);
  const Tensor& ci = t.value(c_im);
  require_same_shape(cr, ci, "ssm_kernels");
  if (dynamics.size() != cr.rows) throw ShapeError("ssm_kernels: one discretization per channel required");
  const std::size_t d = cr.rows, m = cr.cols;
  Tensor kern(d, length);
  std::vector<ssm::cplx> w(m);
  for (std::size_t ch = 0; ch < d; ++ch) {
    for (std::size_t k = 0; k < m; ++k) w[k] = ssm::cplx(cr(ch, k), ci(ch, k)) * dynamics[ch].b_bar[k];
    K().vandermonde(w.data(), dynamics[ch].a_bar.data(), m, kern.row(ch).data(), length);
  }
  return t.record(std::move(kern), {c_re, c_im}, [c_re, c_im, dynamics, length](Tape& tp, std::size_t self) {
    const Tensor& g = gout(tp, self);
    Tensor* gr = tp.grad_if(c_re);
    Tensor* gi = tp.grad_if(c_im);
    const std::size_t m = tp.value(c_re).cols;
    for (std::size_t ch = 0; ch < dynamics.size(); ++ch) {
      const auto& dyn = dynamics[ch];
      for (std::size_t k = 0; k < m; ++k) {
        // d K[l] / d c_re = 2 Re(b_bar a_bar^l), d K[l] / d c_im = -2 Im(b_bar a_bar^l)
        ssm::cplx p = dyn.b_bar[k];
        double sr = 0.0, si = 0.0;
        for (std::size_t l = 0; l < length; ++l) {
          sr += g(ch, l) * p.real();
          si += g(ch, l) * p.imag();
          p *= dyn.a_bar[k];
        }
        if (gr != nullptr) (*gr)(ch, k) += 2.0 * sr;
        if (gi != nullptr) (*gi)(ch, k) -= 2.0 * si;
      }
    }
  }, "ssm_kernels");
}

Var causal_conv_channels(Tape& t, Var x, Var kernels, const Tensor& skip) {
  const Tensor& xv = t.value(x);
  const Tensor& kv = t.value(kernels);
  const std::size_t n = xv.rows, d = xv.cols;
  if (kv.rows != d || kv.cols < n) throw ShapeError("causal_conv_channels: kernels " + shape_str(kv) + " for input " + shape_str(xv));
  if (skip.size() != d) throw ShapeError("causal_conv_channels: skip size mismatch");
  Tensor y(n, d);
  std::vector<double> col(n);
  for (std::size_t ch = 0; ch < d; ++ch) {
    for (std::size_t r = 0; r < n; ++r) col[r] = xv(r, ch);
    std::vector<double> out = ssm::conv_apply<double>(col, std::span<const double>(kv.row(ch).data(), n), skip.data[ch]);
    for (std::size_t r = 0; r < n; ++r) y(r, ch) = out[r];
  }
  return t.record(std::move(y), {x, kernels}, [x, kernels, skip](Tape& tp, std::size_t self) {
    const Tensor& g = gout(tp, self);
    const Tensor& xv = tp.value(x);
    const Tensor& kv = tp.value(kernels);
    const std::size_t n = g.rows, d = g.cols;
    Tensor* gx = tp.grad_if(x);
    Tensor* gk = tp.grad_if(kernels);
    std::vector<double> gcol(n), xcol(n);
    for (std::size_t ch = 0; ch < d; ++ch) {
      for (std::size_t r = 0; r < n; ++r) gcol[r] = g(r, ch);
      if (gx != nullptr) {
        std::vector<double> dx = causal_corr_fft<double>(gcol, std::span<const double>(kv.row(ch).data(), n), n);
        for (std::size_t r = 0; r < n; ++r) (*gx)(r, ch) += dx[r] + skip.data[ch] * gcol[r];
      }
      if (gk != nullptr) {
        for (std::size_t r = 0; r < n; ++r) xcol[r] = xv(r, ch);
        std::vector<double> dk = causal_corr_fft<double>(gcol, xcol, n);
        for (std::size_t l = 0; l < n; ++l) (*gk)(ch, l) += dk[l];
      }
    }
  }, "causal_conv");
}

// --- geometry ------------------------------------------------------------

namespace {

// exp map scale g(s) = tanh(s)/s and (g'(r)/r) / c as functions of s = sqrt(c) r.
void exp_scale(double s, double& g, double& dg_over_r_c) {
  if (s < 1e-3) {
    const double s2 = s * s;
    g = 1.0 - s2 / 3.0 + 2.0 * s2 * s2 / 15.0;
    dg_over_r_c = -2.0 / 3.0 + 8.0 * s2 / 15.0;
    return;
  }
  const double th = std::tanh(s);
  g = th / s;
  dg_over_r_c = (s * (1.0 - th * th) - th) / (s * s * s);
}

void log_scale(double s, double& h, double& dh_over_r_c) {
  if (s < 1e-3) {
    const double s2 = s * s;
    h = 1.0 + s2 / 3.0 + s2 * s2 / 5.0;
    dh_over_r_c = 2.0 / 3.0 + 4.0 * s2 / 5.0;
    return;
  }
  const double at = std::atanh(s);
  h = at / s;
  dh_over_r_c = (s / (1.0 - s * s) - at) / (s * s * s);
}

}  // namespace

Var exp_map0(Tape& t, Var v, geometry::Curvature c) {
  const Tensor& vv = t.value(v);
  geometry::raw::require_finite(vv.data, "exp_map0");
  Tensor y(vv.rows, vv.cols);
  for (std::size_t r = 0; r < vv.rows; ++r) geometry::raw::exp_map0(vv.row(r), c, y.row(r));
  return t.record(std::move(y), {v}, [v, c](Tape& tp, std::size_t self) {
    const Tensor& g = gout(tp, self);
    const Tensor& vv = tp.value(v);
    Tensor& gv = tp.grad(v);
    for (std::size_t r = 0; r < vv.rows; ++r) {
      const double rn = geometry::raw::norm(vv.row(r));
      double sc, dsc;
      exp_scale(c.sqrt_c() * rn, sc, dsc);
      const double coef = c.value() * dsc * geometry::raw::dot(vv.row(r), g.row(r));
      for (std::size_t j = 0; j < vv.cols; ++j) gv(r, j) += sc * g(r, j) + coef * vv(r, j);
    }
  }, "exp_map0");
}

Var log_map0(Tape& t, Var y, geometry::Curvature c) {
  const Tensor& yv = t.value(y);
  Tensor out(yv.rows, yv.cols);
  for (std::size_t r = 0; r < yv.rows; ++r) {
    geometry::raw::require_interior(yv.row(r), c, "log_map0");
    geometry::raw::log_map0(yv.row(r), c, out.row(r));
  }
  return t.record(std::move(out), {y}, [y, c](Tape& tp, std::size_t self) {
    const Tensor& g = gout(tp, self);
    const Tensor& yv = tp.value(y);
    Tensor& gy = tp.grad(y);
    for (std::size_t r = 0; r < yv.rows; ++r) {
      const double rn = geometry::raw::norm(yv.row(r));
      double sc, dsc;
      log_scale(c.sqrt_c() * rn, sc, dsc);
      const double coef = c.value() * dsc * geometry::raw::dot(yv.row(r), g.row(r));
      for (std::size_t j = 0; j < yv.cols; ++j) gy(r, j) += sc * g(r, j) + coef * yv(r, j);
    }
  }, "log_map0");
}

Var mobius_add(Tape& t, Var x, Var y, geometry::Curvature c) {
  const Tensor& xv = t.value(x);
  const Tensor& yv = t.value(y);
  require_same_shape(xv, yv, "mobius_add");
  Tensor out(xv.rows, xv.cols);
  for (std::size_t r = 0; r < xv.rows; ++r) {
    geometry::raw::require_interior(xv.row(r), c, "mobius_add");
    geometry::raw::require_interior(yv.row(r), c, "mobius_add");
    geometry::raw::mobius_add(xv.row(r), yv.row(r), c, out.row(r));
  }
  return t.record(std::move(out), {x, y}, [x, y, c](Tape& tp, std::size_t self) {
    const Tensor& g = gout(tp, self);
    const Tensor& xv = tp.value(x);
    const Tensor& yv = tp.value(y);
    const Tensor& ov = tp.value(Var{self});
    Tensor* gx = tp.grad_if(x);
    Tensor* gy = tp.grad_if(y);
    const double cv = c.value();
    for (std::size_t r = 0; r < xv.rows; ++r) {
      auto xr = xv.row(r);
      auto yr = yv.row(r);
      auto orow = ov.row(r);
      auto gr = g.row(r);
      const double xy = geometry::raw::dot(xr, yr);
      const double x2 = geometry::raw::dot(xr, xr);
      const double y2 = geometry::raw::dot(yr, yr);
      const double a = 1.0 + 2.0 * cv * xy + cv * y2;
      const double b = 1.0 - cv * x2;
      const double den = 1.0 + 2.0 * cv * xy + cv * cv * x2 * y2;
      // gamma = g / den, delta = -<g, out> / den
      const double gx_dot = geometry::raw::dot(gr, xr) / den;
      const double gy_dot = geometry::raw::dot(gr, yr) / den;
      const double delta = -geometry::raw::dot(gr, orow) / den;
      for (std::size_t j = 0; j < xr.size(); ++j) {
        const double gam = gr[j] / den;
        if (gx != nullptr) {
          (*gx)(r, j) += a * gam + gx_dot * 2.0 * cv * yr[j] - gy_dot * 2.0 * cv * xr[j] +
                         delta * (2.0 * cv * yr[j] + 2.0 * cv * cv * y2 * xr[j]);
        }
        if (gy != nullptr) {
          (*gy)(r, j) += b * gam + gx_dot * 2.0 * cv * (xr[j] + yr[j]) + delta * (2.0 * cv * xr[j] + 2.0 * cv * cv * x2 * yr[j]);
        }
      }
    }
  }, "mobius_add");
}

Var project_to_ball(Tape& t, Var y, geometry::Curvature c, double eps, std::vector<std::size_t>* clamped) {
  const Tensor& yv = t.value(y);
  geometry::raw::require_finite(yv.data, "project_to_ball");
  Tensor out(yv.rows, yv.cols);
  std::vector<double> scales(yv.rows);
  for (std::size_t r = 0; r < yv.rows; ++r) {
    scales[r] = geometry::raw::project_to_ball(yv.row(r), c, eps, out.row(r));
    if (clamped != nullptr) clamped->push_back(scales[r] < 1.0 ? 1 : 0);
  }
  return t.record(std::move(out), {y}, [y, scales = std::move(scales)](Tape& tp, std::size_t self) {
    const Tensor& g = gout(tp, self);
    const Tensor& yv = tp.value(y);
    Tensor& gy = tp.grad(y);
    for (std::size_t r = 0; r < yv.rows; ++r) {
      const double s = scales[r];
      if (s >= 1.0) {
        for (std::size_t j = 0; j < yv.cols; ++j) gy(r, j) += g(r, j);
        continue;
      }
      // out = max * y / |y|  =>  J = s (I - y y^T / |y|^2)
      const double n2 = geometry::raw::dot(yv.row(r), yv.row(r));
      const double proj = geometry::raw::dot(yv.row(r), g.row(r)) / n2;
      for (std::size_t j = 0; j < yv.cols; ++j) gy(r, j) += s * (g(r, j) - proj * yv(r, j));
    }
  }, "project_to_ball");
}

Var ball_norm_distance(Tape& t, Var y, geometry::Curvature c) {
  const Tensor& yv = t.value(y);
  Tensor out(yv.rows, 1);
  for (std::size_t r = 0; r < yv.rows; ++r) {
    geometry::raw::require_interior(yv.row(r), c, "ball_norm_distance");
    out.data[r] = 2.0 / c.sqrt_c() * std::atanh(c.sqrt_c() * geometry::raw::norm(yv.row(r)));
  }
  return t.record(std::move(out), {y}, [y, c](Tape& tp, std::size_t self) {
    const Tensor& g = gout(tp, self);
    const Tensor& yv = tp.value(y);
    Tensor& gy = tp.grad(y);
    for (std::size_t r = 0; r < yv.rows; ++r) {
      const double rn = geometry::raw::norm(yv.row(r));
      if (rn == 0.0) continue;  // subgradient 0 at the origin
      const double s = c.sqrt_c() * rn;
      const double coef = g.data[r] * 2.0 / (1.0 - s * s) / rn;
      for (std::size_t j = 0; j < yv.cols; ++j) gy(r, j) += coef * yv(r, j);
    }
  }, "ball_norm_distance");
}

Var hyp_distance(Tape& t, Var x, Var y, geometry::Curvature c) {
  return ball_norm_distance(t, mobius_add(t, affine(t, x, -1.0, 0.0), y, c), c);
}

}  // namespace batmil::ops

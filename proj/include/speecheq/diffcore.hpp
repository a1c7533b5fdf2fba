// diffcore.hpp  -- minimal reverse-mode autodiff over dense 2-D tensors.
//
// A Graph owns a tape of nodes appended in topological order; backward() is
// a single reverse sweep seeded at a scalar loss. Matrix products run on
// BLAS. The CTC, focal, and concordance losses are fused nodes with
// hand-derived backward rules. Any non-finite forward value or gradient
// raises a numeric error.
//
// Copyright 2026 The speecheq authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef SPEECHEQ_DIFFCORE_HPP
#define SPEECHEQ_DIFFCORE_HPP

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "speecheq/common.hpp"

namespace speecheq::diff {

struct Tensor {
  int rows = 0, cols = 0;
  std::vector<real> v;

  Tensor() = default;
  Tensor(int r, int c, real fill = 0.0)
      : rows(r), cols(c), v(static_cast<size_t>(r) * static_cast<size_t>(c), fill) {}

  static Tensor from(int r, int c, std::vector<real> data) {
    Tensor t;
    t.rows = r;
    t.cols = c;
    if (data.size() != static_cast<size_t>(r) * static_cast<size_t>(c))
      throw ShapeError("tensor data size does not match " + std::to_string(r) + "x" + std::to_string(c));
    t.v = std::move(data);
    return t;
  }

  real& at(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
  real at(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }
  size_t size() const { return v.size(); }
  bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }
};

inline void check_finite(const Tensor& t, const char* context) {
  for (real x : t.v)
    if (!std::isfinite(x)) throw NumericError(std::string(context) + ": non-finite value");
}

inline std::string shape_str(const Tensor& t) {
  return std::to_string(t.rows) + "x" + std::to_string(t.cols);
}

/// C = alpha * op(A) op(B) + beta * C, row-major.
inline void gemm(bool ta, bool tb, int m, int n, int k, real alpha, const real* a, int lda,
                 const real* b, int ldb, real beta, real* c, int ldc) {
  cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, m, n,
              k, alpha, a, lda, b, ldb, beta, c, ldc);
}

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

class Graph {
 public:
  Var leaf(Tensor value, bool needs_grad = true) {
    check_finite(value, "leaf");
    return push(std::move(value), {}, nullptr, needs_grad);
  }

  Var constant(Tensor value) { return leaf(std::move(value), false); }

  const Tensor& value(Var x) const { return node(x).val; }
  const Tensor& gradient(Var x) const {
    if (!backward_done_) throw Error("state-error", "gradient read before backward");
    return node(x).grad;
  }

  // -- elementwise ---------------------------------------------------------

  Var add(Var a, Var b) {
    const Tensor &ta = node(a).val, &tb = node(b).val;
    require_same_shape("add", ta, tb);
    Tensor out = ta;
    for (size_t i = 0; i < out.size(); ++i) out.v[i] += tb.v[i];
    return push(std::move(out), {a, b}, [this](int id) {
      Node& n = nodes_[static_cast<size_t>(id)];
      accumulate(n.parents[0], n.grad.v.data(), n.grad.size());
      accumulate(n.parents[1], n.grad.v.data(), n.grad.size());
    });
  }

  Var sub(Var a, Var b) {
    const Tensor &ta = node(a).val, &tb = node(b).val;
    require_same_shape("sub", ta, tb);
    Tensor out = ta;
    for (size_t i = 0; i < out.size(); ++i) out.v[i] -= tb.v[i];
    return push(std::move(out), {a, b}, [this](int id) {
      Node& n = nodes_[static_cast<size_t>(id)];
      accumulate(n.parents[0], n.grad.v.data(), n.grad.size());
      Node& p = nodes_[static_cast<size_t>(n.parents[1])];
      if (!p.needs_grad) return;
      ensure_grad(p);
      for (size_t i = 0; i < n.grad.size(); ++i) p.grad.v[i] -= n.grad.v[i];
    });
  }

  Var mul(Var a, Var b) {
    const Tensor &ta = node(a).val, &tb = node(b).val;
    require_same_shape("mul", ta, tb);
    Tensor out = ta;
    for (size_t i = 0; i < out.size(); ++i) out.v[i] *= tb.v[i];
    return push(std::move(out), {a, b}, [this](int id) {
      Node& n = nodes_[static_cast<size_t>(id)];
      Node& pa = nodes_[static_cast<size_t>(n.parents[0])];
      Node& pb = nodes_[static_cast<size_t>(n.parents[1])];
      if (pa.needs_grad) {
        ensure_grad(pa);
        for (size_t i = 0; i < n.grad.size(); ++i) pa.grad.v[i] += n.grad.v[i] * pb.val.v[i];
      }
      if (pb.needs_grad) {
        ensure_grad(pb);
        for (size_t i = 0; i < n.grad.size(); ++i) pb.grad.v[i] += n.grad.v[i] * pa.val.v[i];
      }
    });
  }

  Var scale(Var a, real c) {
    Tensor out = node(a).val;
    for (real& x : out.v) x *= c;
    return push(std::move(out), {a}, [this, c](int id) {
      Node& n = nodes_[static_cast<size_t>(id)];
      Node& p = nodes_[static_cast<size_t>(n.parents[0])];
      if (!p.needs_grad) return;
      ensure_grad(p);
      for (size_t i = 0; i < n.grad.size(); ++i) p.grad.v[i] += c * n.grad.v[i];
    });
  }

  Var tanh_(Var a) {
    Tensor out = node(a).val;
    for (real& x : out.v) x = std::tanh(x);
    return push(std::move(out), {a}, [this](int id) {
      Node& n = nodes_[static_cast<size_t>(id)];
      Node& p = nodes_[static_cast<size_t>(n.parents[0])];
      if (!p.needs_grad) return;
      ensure_grad(p);
      for (size_t i = 0; i < n.grad.size(); ++i)
        p.grad.v[i] += n.grad.v[i] * (1.0 - n.val.v[i] * n.val.v[i]);
    });
  }

  Var sigmoid_(Var a) {
    Tensor out = node(a).val;
    for (real& x : out.v) x = 1.0 / (1.0 + std::exp(-x));
    return push(std::move(out), {a}, [this](int id) {
      Node& n = nodes_[static_cast<size_t>(id)];
      Node& p = nodes_[static_cast<size_t>(n.parents[0])];
      if (!p.needs_grad) return;
      ensure_grad(p);
      for (size_t i = 0; i < n.grad.size(); ++i)
        p.grad.v[i] += n.grad.v[i] * n.val.v[i] * (1.0 - n.val.v[i]);
    });
  }

  Var relu_(Var a) {
    Tensor out = node(a).val;
    for (real& x : out.v) x = std::max(x, real(0.0));
    return push(std::move(out), {a}, [this](int id) {
      Node& n = nodes_[static_cast<size_t>(id)];
      Node& p = nodes_[static_cast<size_t>(n.parents[0])];
      if (!p.needs_grad) return;
      ensure_grad(p);
      for (size_t i = 0; i < n.grad.size(); ++i)
        if (p.val.v[i] > 0.0) p.grad.v[i] += n.grad.v[i];
    });
  }

  /// sqrt(x + eps), defined for x >= 0.
  Var sqrt_eps(Var a, real eps = 1e-8) {
    Tensor out = node(a).val;
    for (real& x : out.v) x = std::sqrt(x + eps);
    return push(std::move(out), {a}, [this](int id) {
      Node& n = nodes_[static_cast<size_t>(id)];
      Node& p = nodes_[static_cast<size_t>(n.parents[0])];
      if (!p.needs_grad) return;
      ensure_grad(p);
      for (size_t i = 0; i < n.grad.size(); ++i)
        p.grad.v[i] += n.grad.v[i] * 0.5 / n.val.v[i];
    });
  }

  // -- broadcasting --------------------------------------------------------

  /// x (T x C) + b (1 x C), broadcast over rows.
  Var add_bias(Var x, Var b) {
    const Tensor &tx = node(x).val, &tb = node(b).val;
    if (tb.rows != 1 || tb.cols != tx.cols)
      throw ShapeError("add_bias: bias must be 1x" + std::to_string(tx.cols) + ", got " +
                       shape_str(tb) + " for input " + shape_str(tx));
    Tensor out = tx;
    for (int r = 0; r < out.rows; ++r)
      for (int c = 0; c < out.cols; ++c) out.at(r, c) += tb.at(0, c);
    return push(std::move(out), {x, b}, [this](int id) {
      Node& n = nodes_[static_cast<size_t>(id)];
      accumulate(n.parents[0], n.grad.v.data(), n.grad.size());
      Node& pb = nodes_[static_cast<size_t>(n.parents[1])];
      if (!pb.needs_grad) return;
      ensure_grad(pb);
      for (int r = 0; r < n.grad.rows; ++r)
        for (int c = 0; c < n.grad.cols; ++c) pb.grad.at(0, c) += n.grad.at(r, c);
    });
  }

  /// x (T x C) * s (1 x C), broadcast over rows.
  Var mul_row(Var x, Var s) {
    const Tensor &tx = node(x).val, &ts = node(s).val;
    if (ts.rows != 1 || ts.cols != tx.cols)
      throw ShapeError("mul_row: scale must be 1x" + std::to_string(tx.cols) + ", got " +
                       shape_str(ts) + " for input " + shape_str(tx));
    Tensor out = tx;
    for (int r = 0; r < out.rows; ++r)
      for (int c = 0; c < out.cols; ++c) out.at(r, c) *= ts.at(0, c);
    return push(std::move(out), {x, s}, [this](int id) {
      Node& n = nodes_[static_cast<size_t>(id)];
      Node& px = nodes_[static_cast<size_t>(n.parents[0])];
      Node& ps = nodes_[static_cast<size_t>(n.parents[1])];
      if (px.needs_grad) {
        ensure_grad(px);
        for (int r = 0; r < n.grad.rows; ++r)
          for (int c = 0; c < n.grad.cols; ++c) px.grad.at(r, c) += n.grad.at(r, c) * ps.val.at(0, c);
      }
      if (ps.needs_grad) {
        ensure_grad(ps);
        for (int r = 0; r < n.grad.rows; ++r)
          for (int c = 0; c < n.grad.cols; ++c) ps.grad.at(0, c) += n.grad.at(r, c) * px.val.at(r, c);
      }
    });
  }

  // -- linear algebra ------------------------------------------------------

  Var matmul(Var a, Var b, bool ta = false, bool tb = false) {
    const Tensor &va = node(a).val, &vb = node(b).val;
    const int m = ta ? va.cols : va.rows;
    const int k = ta ? va.rows : va.cols;
    const int kb = tb ? vb.cols : vb.rows;
    const int n = tb ? vb.rows : vb.cols;
    if (k != kb)
      throw ShapeError("matmul: inner dimensions differ, " + shape_str(va) + (ta ? "^T" : "") +
                       " * " + shape_str(vb) + (tb ? "^T" : ""));
    Tensor out(m, n);
    gemm(ta, tb, m, n, k, 1.0, va.v.data(), va.cols, vb.v.data(), vb.cols, 0.0, out.v.data(), n);
    return push(std::move(out), {a, b}, [this, ta, tb, m, n, k](int id) {
      Node& nd = nodes_[static_cast<size_t>(id)];
      Node& pa = nodes_[static_cast<size_t>(nd.parents[0])];
      Node& pb = nodes_[static_cast<size_t>(nd.parents[1])];
      const Tensor& g = nd.grad;
      if (pa.needs_grad) {
        ensure_grad(pa);
        if (!ta)  // dA += g op(B)^T
          gemm(false, !tb, m, k, n, 1.0, g.v.data(), g.cols, pb.val.v.data(), pb.val.cols, 1.0,
               pa.grad.v.data(), pa.grad.cols);
        else  // dA += op(B) g^T
          gemm(tb, true, k, m, n, 1.0, pb.val.v.data(), pb.val.cols, g.v.data(), g.cols, 1.0,
               pa.grad.v.data(), pa.grad.cols);
      }
      if (pb.needs_grad) {
        ensure_grad(pb);
        if (!tb)  // dB += op(A)^T g
          gemm(!ta, false, k, n, m, 1.0, pa.val.v.data(), pa.val.cols, g.v.data(), g.cols, 1.0,
               pb.grad.v.data(), pb.grad.cols);
        else  // dB += g^T op(A)
          gemm(true, ta, n, k, m, 1.0, g.v.data(), g.cols, pa.val.v.data(), pa.val.cols, 1.0,
               pb.grad.v.data(), pb.grad.cols);
      }
    });
  }

  /// Dilated 1-D convolution over time with same padding.
  /// x: T x Cin, kernel: Cout x (Cin*ksize) laid out [c*ksize + j], bias: 1 x Cout.
  Var conv1d(Var x, Var kernel, Var bias, int ksize, int dilation = 1) {
    const Tensor& tx = node(x).val;
    const Tensor& tk = node(kernel).val;
    const Tensor& tb = node(bias).val;
    require(ksize >= 1 && ksize % 2 == 1, "conv1d: kernel size must be odd");
    require(dilation >= 1, "conv1d: dilation must be >= 1");
    const int t_len = tx.rows, cin = tx.cols, cout = tk.rows;
    require(tk.cols == cin * ksize, "conv1d: kernel shape mismatch");
    require(tb.rows == 1 && tb.cols == cout, "conv1d: bias shape mismatch");

    const int half = (ksize - 1) / 2;
    Tensor cols(t_len, cin * ksize);
    for (int t = 0; t < t_len; ++t)
      for (int c = 0; c < cin; ++c)
        for (int j = 0; j < ksize; ++j) {
          const int src = t + (j - half) * dilation;
          cols.at(t, c * ksize + j) = (src >= 0 && src < t_len) ? tx.at(src, c) : 0.0;
        }

    Tensor out(t_len, cout);
    gemm(false, true, t_len, cout, cin * ksize, 1.0, cols.v.data(), cols.cols, tk.v.data(), tk.cols,
         0.0, out.v.data(), out.cols);
    for (int t = 0; t < t_len; ++t)
      for (int o = 0; o < cout; ++o) out.at(t, o) += tb.at(0, o);

    auto cols_keep = std::make_shared<Tensor>(std::move(cols));
    return push(std::move(out), {x, kernel, bias},
                [this, cols_keep, ksize, dilation, half, cin, cout, t_len](int id) {
      Node& n = nodes_[static_cast<size_t>(id)];
      Node& px = nodes_[static_cast<size_t>(n.parents[0])];
      Node& pk = nodes_[static_cast<size_t>(n.parents[1])];
      Node& pb = nodes_[static_cast<size_t>(n.parents[2])];
      const Tensor& g = n.grad;
      if (pk.needs_grad) {
        ensure_grad(pk);
        gemm(true, false, cout, cin * ksize, t_len, 1.0, g.v.data(), g.cols, cols_keep->v.data(),
             cols_keep->cols, 1.0, pk.grad.v.data(), pk.grad.cols);
      }
      if (pb.needs_grad) {
        ensure_grad(pb);
        for (int t = 0; t < t_len; ++t)
          for (int o = 0; o < cout; ++o) pb.grad.at(0, o) += g.at(t, o);
      }
      if (px.needs_grad) {
        ensure_grad(px);
        Tensor dcols(t_len, cin * ksize);
        gemm(false, false, t_len, cin * ksize, cout, 1.0, g.v.data(), g.cols, pk.val.v.data(),
             pk.val.cols, 0.0, dcols.v.data(), dcols.cols);
        for (int t = 0; t < t_len; ++t)
          for (int c = 0; c < cin; ++c)
            for (int j = 0; j < ksize; ++j) {
              const int src = t + (j - half) * dilation;
              if (src >= 0 && src < t_len) px.grad.at(src, c) += dcols.at(t, c * ksize + j);
            }
      }
    });
  }

  // -- shape ops -----------------------------------------------------------

  Var slice_cols(Var x, int start, int len) {
    const Tensor& tx = node(x).val;
    require(start >= 0 && len > 0 && start + len <= tx.cols, "slice_cols: out of range");
    Tensor out(tx.rows, len);
    for (int r = 0; r < tx.rows; ++r)
      for (int c = 0; c < len; ++c) out.at(r, c) = tx.at(r, start + c);
    return push(std::move(out), {x}, [this, start, len](int id) {
      Node& n = nodes_[static_cast<size_t>(id)];
      Node& p = nodes_[static_cast<size_t>(n.parents[0])];
      if (!p.needs_grad) return;
      ensure_grad(p);
      for (int r = 0; r < n.grad.rows; ++r)
        for (int c = 0; c < len; ++c) p.grad.at(r, start + c) += n.grad.at(r, c);
    });
  }

  Var concat_cols(const std::vector<Var>& parts) {
    require(!parts.empty(), "concat_cols: no inputs");
    const int rows = node(parts[0]).val.rows;
    int cols = 0;
    for (Var p : parts) {
      require(node(p).val.rows == rows, "concat_cols: row mismatch");
      cols += node(p).val.cols;
    }
    Tensor out(rows, cols);
    int off = 0;
    for (Var p : parts) {
      const Tensor& t = node(p).val;
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < t.cols; ++c) out.at(r, off + c) = t.at(r, c);
      off += t.cols;
    }
    return push(std::move(out), parts, [this](int id) {
      Node& n = nodes_[static_cast<size_t>(id)];
      int off2 = 0;
      for (int pid : n.parents) {
        Node& p = nodes_[static_cast<size_t>(pid)];
        if (p.needs_grad) {
          ensure_grad(p);
          for (int r = 0; r < p.val.rows; ++r)
            for (int c = 0; c < p.val.cols; ++c) p.grad.at(r, c) += n.grad.at(r, off2 + c);
        }
        off2 += p.val.cols;
      }
    });
  }

  Var row(Var x, int r) {
    const Tensor& tx = node(x).val;
    require(r >= 0 && r < tx.rows, "row: index out of range");
    Tensor out(1, tx.cols);
    for (int c = 0; c < tx.cols; ++c) out.at(0, c) = tx.at(r, c);
    return push(std::move(out), {x}, [this, r](int id) {
      Node& n = nodes_[static_cast<size_t>(id)];
      Node& p = nodes_[static_cast<size_t>(n.parents[0])];
      if (!p.needs_grad) return;
      ensure_grad(p);
      for (int c = 0; c < n.grad.cols; ++c) p.grad.at(r, c) += n.grad.at(0, c);
    });
  }

  /// Stack 1 x C rows into a T x C matrix.
  Var stack_rows(const std::vector<Var>& rows_in) {
    require(!rows_in.empty(), "stack_rows: no inputs");
    const int cols = node(rows_in[0]).val.cols;
    for (Var p : rows_in)
      require(node(p).val.rows == 1 && node(p).val.cols == cols, "stack_rows: each input must be 1 x C");
    Tensor out(static_cast<int>(rows_in.size()), cols);
    for (size_t r = 0; r < rows_in.size(); ++r)
      for (int c = 0; c < cols; ++c) out.at(static_cast<int>(r), c) = node(rows_in[r]).val.at(0, c);
    return push(std::move(out), rows_in, [this](int id) {
      Node& n = nodes_[static_cast<size_t>(id)];
      for (size_t r = 0; r < n.parents.size(); ++r) {
        Node& p = nodes_[static_cast<size_t>(n.parents[r])];
        if (!p.needs_grad) continue;
        ensure_grad(p);
        for (int c = 0; c < n.grad.cols; ++c) p.grad.at(0, c) += n.grad.at(static_cast<int>(r), c);
      }
    });
  }

  Var reverse_rows(Var x) {
    const Tensor& tx = node(x).val;
    Tensor out(tx.rows, tx.cols);
    for (int r = 0; r < tx.rows; ++r)
      for (int c = 0; c < tx.cols; ++c) out.at(r, c) = tx.at(tx.rows - 1 - r, c);
    return push(std::move(out), {x}, [this](int id) {
      Node& n = nodes_[static_cast<size_t>(id)];
      Node& p = nodes_[static_cast<size_t>(n.parents[0])];
      if (!p.needs_grad) return;
      ensure_grad(p);
      for (int r = 0; r < n.grad.rows; ++r)
        for (int c = 0; c < n.grad.cols; ++c)
          p.grad.at(n.grad.rows - 1 - r, c) += n.grad.at(r, c);
    });
  }

  // -- reductions and normalizations ---------------------------------------

  Var mean_rows(Var x) {
    const Tensor& tx = node(x).val;
    require(tx.rows > 0, "mean_rows: empty input");
    Tensor out(1, tx.cols);
    for (int r = 0; r < tx.rows; ++r)
      for (int c = 0; c < tx.cols; ++c) out.at(0, c) += tx.at(r, c);
    for (int c = 0; c < tx.cols; ++c) out.at(0, c) /= tx.rows;
    const real inv = 1.0 / tx.rows;
    return push(std::move(out), {x}, [this, inv](int id) {
      Node& n = nodes_[static_cast<size_t>(id)];
      Node& p = nodes_[static_cast<size_t>(n.parents[0])];
      if (!p.needs_grad) return;
      ensure_grad(p);
      for (int r = 0; r < p.grad.rows; ++r)
        for (int c = 0; c < p.grad.cols; ++c) p.grad.at(r, c) += inv * n.grad.at(0, c);
    });
  }

  Var sum_all(Var x) {
    const Tensor& tx = node(x).val;
    Tensor out(1, 1);
    for (real v : tx.v) out.v[0] += v;
    return push(std::move(out), {x}, [this](int id) {
      Node& n = nodes_[static_cast<size_t>(id)];
      Node& p = nodes_[static_cast<size_t>(n.parents[0])];
      if (!p.needs_grad) return;
      ensure_grad(p);
      for (real& g : p.grad.v) g += n.grad.v[0];
    });
  }

  Var mean_all(Var x) {
    const Tensor& tx = node(x).val;
    require(tx.size() > 0, "mean_all: empty input");
    return scale(sum_all(x), 1.0 / static_cast<real>(tx.size()));
  }

  Var log_softmax_rows(Var x) {
    Tensor out = node(x).val;
    for (int r = 0; r < out.rows; ++r) {
      real mx = -std::numeric_limits<real>::infinity();
      for (int c = 0; c < out.cols; ++c) mx = std::max(mx, out.at(r, c));
      real lse = 0.0;
      for (int c = 0; c < out.cols; ++c) lse += std::exp(out.at(r, c) - mx);
      lse = mx + std::log(lse);
      for (int c = 0; c < out.cols; ++c) out.at(r, c) -= lse;
    }
    return push(std::move(out), {x}, [this](int id) {
      Node& n = nodes_[static_cast<size_t>(id)];
      Node& p = nodes_[static_cast<size_t>(n.parents[0])];
      if (!p.needs_grad) return;
      ensure_grad(p);
      for (int r = 0; r < n.grad.rows; ++r) {
        real gsum = 0.0;
        for (int c = 0; c < n.grad.cols; ++c) gsum += n.grad.at(r, c);
        for (int c = 0; c < n.grad.cols; ++c)
          p.grad.at(r, c) += n.grad.at(r, c) - std::exp(n.val.at(r, c)) * gsum;
      }
    });
  }

  /// Softmax along the row dimension of a T x 1 column.
  Var softmax_col(Var x) {
    const Tensor& tx = node(x).val;
    require(tx.cols == 1, "softmax_col: input must be T x 1");
    Tensor out = tx;
    real mx = -std::numeric_limits<real>::infinity();
    for (real v : out.v) mx = std::max(mx, v);
    real sum = 0.0;
    for (real& v : out.v) {
      v = std::exp(v - mx);
      sum += v;
    }
    for (real& v : out.v) v /= sum;
    return push(std::move(out), {x}, [this](int id) {
      Node& n = nodes_[static_cast<size_t>(id)];
      Node& p = nodes_[static_cast<size_t>(n.parents[0])];
      if (!p.needs_grad) return;
      ensure_grad(p);
      real dot = 0.0;
      for (size_t i = 0; i < n.grad.size(); ++i) dot += n.grad.v[i] * n.val.v[i];
      for (size_t i = 0; i < n.grad.size(); ++i)
        p.grad.v[i] += n.val.v[i] * (n.grad.v[i] - dot);
    });
  }

  // -- fused losses ----------------------------------------------------------

  /// Connectionist temporal classification negative log-likelihood for one
  /// utterance. logits: T x K with the blank at column `blank`; labels are
  /// non-blank ids in [0, K-1]. Throws InfeasibleError when T is too short
  /// to emit the label.
  Var ctc_loss(Var logits, const std::vector<int>& labels, int blank) {
    const Tensor& lg = node(logits).val;
    const int t_len = lg.rows, k = lg.cols;
    require(blank >= 0 && blank < k, "ctc_loss: blank out of range");
    for (int l : labels)
      require(l >= 0 && l < k && l != blank, "ctc_loss: label id out of range");

    int repeats = 0;
    for (size_t i = 1; i < labels.size(); ++i)
      if (labels[i] == labels[i - 1]) ++repeats;
    if (t_len < static_cast<int>(labels.size()) + repeats)
      throw InfeasibleError("ctc_loss: " + std::to_string(t_len) + " frames cannot emit " +
                            std::to_string(labels.size()) + " labels with " +
                            std::to_string(repeats) + " repeats");

    const int s_len = 2 * static_cast<int>(labels.size()) + 1;
    std::vector<int> ext(static_cast<size_t>(s_len), blank);
    for (size_t i = 0; i < labels.size(); ++i) ext[2 * i + 1] = labels[i];

    // log softmax per frame
    Tensor lp(t_len, k);
    for (int t = 0; t < t_len; ++t) {
      real mx = -std::numeric_limits<real>::infinity();
      for (int c = 0; c < k; ++c) mx = std::max(mx, lg.at(t, c));
      real lse = 0.0;
      for (int c = 0; c < k; ++c) lse += std::exp(lg.at(t, c) - mx);
      lse = mx + std::log(lse);
      for (int c = 0; c < k; ++c) lp.at(t, c) = lg.at(t, c) - lse;
    }

    const real neg_inf = -std::numeric_limits<real>::infinity();
    auto lse2 = [](real a, real b) {
      if (a == -std::numeric_limits<real>::infinity()) return b;
      if (b == -std::numeric_limits<real>::infinity()) return a;
      const real m = std::max(a, b);
      return m + std::log(std::exp(a - m) + std::exp(b - m));
    };

    auto can_skip = [&](int s) { return s >= 2 && ext[static_cast<size_t>(s)] != blank &&
                                        ext[static_cast<size_t>(s)] != ext[static_cast<size_t>(s) - 2]; };

    Tensor alpha(t_len, s_len, neg_inf), beta(t_len, s_len, neg_inf);
    alpha.at(0, 0) = lp.at(0, ext[0]);
    if (s_len > 1) alpha.at(0, 1) = lp.at(0, ext[1]);
    for (int t = 1; t < t_len; ++t)
      for (int s = 0; s < s_len; ++s) {
        real acc = alpha.at(t - 1, s);
        if (s >= 1) acc = lse2(acc, alpha.at(t - 1, s - 1));
        if (can_skip(s)) acc = lse2(acc, alpha.at(t - 1, s - 2));
        if (acc != neg_inf) alpha.at(t, s) = acc + lp.at(t, ext[static_cast<size_t>(s)]);
      }

    real log_p = alpha.at(t_len - 1, s_len - 1);
    if (s_len > 1) log_p = lse2(log_p, alpha.at(t_len - 1, s_len - 2));
    if (log_p == neg_inf) throw NumericError("ctc_loss: zero-probability label");

    beta.at(t_len - 1, s_len - 1) = lp.at(t_len - 1, ext[static_cast<size_t>(s_len) - 1]);
    if (s_len > 1) beta.at(t_len - 1, s_len - 2) = lp.at(t_len - 1, ext[static_cast<size_t>(s_len) - 2]);
    for (int t = t_len - 2; t >= 0; --t)
      for (int s = s_len - 1; s >= 0; --s) {
        real acc = beta.at(t + 1, s);
        if (s + 1 < s_len) acc = lse2(acc, beta.at(t + 1, s + 1));
        if (s + 2 < s_len && can_skip(s + 2)) acc = lse2(acc, beta.at(t + 1, s + 2));
        if (acc != neg_inf) beta.at(t, s) = acc + lp.at(t, ext[static_cast<size_t>(s)]);
      }

    Tensor out(1, 1);
    out.v[0] = -log_p;

    auto keep_lp = std::make_shared<Tensor>(std::move(lp));
    auto keep_a = std::make_shared<Tensor>(std::move(alpha));
    auto keep_b = std::make_shared<Tensor>(std::move(beta));
    auto keep_ext = std::make_shared<std::vector<int>>(std::move(ext));
    return push(std::move(out), {logits},
                [this, keep_lp, keep_a, keep_b, keep_ext, log_p, t_len, k, s_len, lse2](int id) {
      Node& n = nodes_[static_cast<size_t>(id)];
      Node& p = nodes_[static_cast<size_t>(n.parents[0])];
      if (!p.needs_grad) return;
      ensure_grad(p);
      const real g = n.grad.v[0];
      const real neg_inf2 = -std::numeric_limits<real>::infinity();
      for (int t = 0; t < t_len; ++t) {
        // log sum of path posteriors per symbol at frame t
        std::vector<real> lsum(static_cast<size_t>(k), neg_inf2);
        for (int s = 0; s < s_len; ++s) {
          const real a = keep_a->at(t, s), b = keep_b->at(t, s);
          if (a == neg_inf2 || b == neg_inf2) continue;
          const int sym = (*keep_ext)[static_cast<size_t>(s)];
          lsum[static_cast<size_t>(sym)] =
              lse2(lsum[static_cast<size_t>(sym)], a + b - keep_lp->at(t, sym));
        }
        for (int c = 0; c < k; ++c) {
          const real softmax = std::exp(keep_lp->at(t, c));
          const real post = lsum[static_cast<size_t>(c)] == neg_inf2
                                ? 0.0
                                : std::exp(lsum[static_cast<size_t>(c)] - log_p);
          p.grad.at(t, c) += g * (softmax - post);
        }
      }
    });
  }

  /// Mean focal loss over rows. logits: N x K, labels[i] in [0, K-1].
  /// gamma == 0 reduces to cross-entropy.
  Var focal_loss(Var logits, const std::vector<int>& labels, real gamma) {
    const Tensor& lg = node(logits).val;
    require(gamma >= 0.0, "focal_loss: gamma must be >= 0");
    require(static_cast<int>(labels.size()) == lg.rows, "focal_loss: one label per row");
    const int n_rows = lg.rows, k = lg.cols;
    for (int l : labels) require(l >= 0 && l < k, "focal_loss: label out of range");

    Tensor prob(n_rows, k);
    real total = 0.0;
    for (int r = 0; r < n_rows; ++r) {
      real mx = -std::numeric_limits<real>::infinity();
      for (int c = 0; c < k; ++c) mx = std::max(mx, lg.at(r, c));
      real sum = 0.0;
      for (int c = 0; c < k; ++c) {
        prob.at(r, c) = std::exp(lg.at(r, c) - mx);
        sum += prob.at(r, c);
      }
      for (int c = 0; c < k; ++c) prob.at(r, c) /= sum;
      const real pt = std::clamp(prob.at(r, labels[static_cast<size_t>(r)]), real(1e-12), real(1.0 - 1e-12));
      total += -std::pow(1.0 - pt, gamma) * std::log(pt);
    }
    Tensor out(1, 1);
    out.v[0] = total / n_rows;

    auto keep_prob = std::make_shared<Tensor>(std::move(prob));
    auto keep_labels = std::make_shared<std::vector<int>>(labels);
    return push(std::move(out), {logits}, [this, keep_prob, keep_labels, gamma, n_rows, k](int id) {
      Node& n = nodes_[static_cast<size_t>(id)];
      Node& p = nodes_[static_cast<size_t>(n.parents[0])];
      if (!p.needs_grad) return;
      ensure_grad(p);
      const real g = n.grad.v[0] / n_rows;
      for (int r = 0; r < n_rows; ++r) {
        const int y = (*keep_labels)[static_cast<size_t>(r)];
        const real pt = std::clamp(keep_prob->at(r, y), real(1e-12), real(1.0 - 1e-12));
        const real one_m = 1.0 - pt;
        const real dl_dpt =
            (gamma == 0.0 ? 0.0 : gamma * std::pow(one_m, gamma - 1.0) * std::log(pt)) -
            std::pow(one_m, gamma) / pt;
        for (int c = 0; c < k; ++c) {
          const real dpt = pt * ((c == y ? 1.0 : 0.0) - keep_prob->at(r, c));
          p.grad.at(r, c) += g * dl_dpt * dpt;
        }
      }
    });
  }

  /// Concordance-correlation loss 1 - CCC over the rows of pred (B x 1)
  /// selected by `use`, against fixed golds. Fewer than two selected rows
  /// yield a constant zero (no error signal, no gradient); `skipped` reports
  /// that when non-null.
  Var ccc_loss(Var pred, const std::vector<real>& golds, const std::vector<bool>& use,
               bool* skipped = nullptr) {
    const Tensor& tp = node(pred).val;
    require(tp.cols == 1, "ccc_loss: pred must be B x 1");
    require(golds.size() == static_cast<size_t>(tp.rows) && use.size() == golds.size(),
            "ccc_loss: golds/use must match pred rows");
    std::vector<int> idx;
    for (size_t i = 0; i < use.size(); ++i)
      if (use[i]) idx.push_back(static_cast<int>(i));
    const int m = static_cast<int>(idx.size());
    if (skipped) *skipped = m < 2;
    if (m < 2) {
      Tensor zero(1, 1);
      return push(std::move(zero), {pred}, [](int) {});
    }

    real mean_x = 0.0, mean_g = 0.0;
    for (int i : idx) {
      mean_x += tp.at(i, 0);
      mean_g += golds[static_cast<size_t>(i)];
    }
    mean_x /= m;
    mean_g /= m;
    real var_x = 0.0, var_g = 0.0, cov = 0.0;
    for (int i : idx) {
      const real dx = tp.at(i, 0) - mean_x;
      const real dg = golds[static_cast<size_t>(i)] - mean_g;
      var_x += dx * dx;
      var_g += dg * dg;
      cov += dx * dg;
    }
    var_x /= m;
    var_g /= m;
    cov /= m;
    const real bias_sq = (mean_x - mean_g) * (mean_x - mean_g);
    const real denom = var_x + var_g + bias_sq + 1e-12;
    const real ccc = 2.0 * cov / denom;

    Tensor out(1, 1);
    out.v[0] = 1.0 - ccc;
    auto keep_idx = std::make_shared<std::vector<int>>(std::move(idx));
    auto keep_golds = std::make_shared<std::vector<real>>(golds);
    return push(std::move(out), {pred},
                [this, keep_idx, keep_golds, mean_x, mean_g, cov, denom, m](int id) {
      Node& n = nodes_[static_cast<size_t>(id)];
      Node& p = nodes_[static_cast<size_t>(n.parents[0])];
      if (!p.needs_grad) return;
      ensure_grad(p);
      const real g = n.grad.v[0];
      for (int i : *keep_idx) {
        const real dx = p.val.at(i, 0) - mean_x;
        const real dg = (*keep_golds)[static_cast<size_t>(i)] - mean_g;
        const real dcov = dg / m;
        const real ddenom = (2.0 * dx + 2.0 * (mean_x - mean_g)) / m;
        const real dccc = 2.0 * (dcov * denom - cov * ddenom) / (denom * denom);
        p.grad.at(i, 0) += g * (-dccc);
      }
    });
  }

  // -- backward --------------------------------------------------------------

  /// Reverse sweep from a scalar loss; `seed` scales every gradient, which
  /// realizes weighted loss sums without extra nodes. One sweep per graph.
  void backward(Var loss, real seed = 1.0) {
    if (backward_done_) throw Error("state-error", "backward already ran on this graph");
    Node& l = node(loss);
    require(l.val.rows == 1 && l.val.cols == 1, "backward: loss must be a scalar");
    ensure_grad(l);
    l.grad.v[0] = seed;
    for (int id = loss.id; id >= 0; --id) {
      Node& n = nodes_[static_cast<size_t>(id)];
      if (!n.needs_grad || n.grad.v.empty() || !n.back) continue;
      n.back(id);
    }
    for (const Node& n : nodes_)
      if (!n.grad.v.empty()) check_finite(n.grad, "backward");
    backward_done_ = true;
  }

  size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor val;
    Tensor grad;  // allocated on demand
    std::vector<int> parents;
    std::function<void(int)> back;
    bool needs_grad = false;
  };

  static void require(bool ok, const char* msg) {
    if (!ok) throw ShapeError(msg);
  }

  static void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b))
      throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
  }

  Node& node(Var x) {
    if (!x.valid() || x.id >= static_cast<int>(nodes_.size()))
      throw Error("state-error", "invalid graph variable");
    return nodes_[static_cast<size_t>(x.id)];
  }
  const Node& node(Var x) const {
    if (!x.valid() || x.id >= static_cast<int>(nodes_.size()))
      throw Error("state-error", "invalid graph variable");
    return nodes_[static_cast<size_t>(x.id)];
  }

  void ensure_grad(Node& n) {
    if (n.grad.v.empty()) n.grad = Tensor(n.val.rows, n.val.cols);
  }

  void accumulate(int parent, const real* g, size_t count) {
    Node& p = nodes_[static_cast<size_t>(parent)];
    if (!p.needs_grad) return;
    ensure_grad(p);
    for (size_t i = 0; i < count; ++i) p.grad.v[i] += g[i];
  }

  Var push(Tensor val, std::vector<Var> parents, std::function<void(int)> back,
           bool force_needs_grad = false) {
    check_finite(val, "forward");
    Node n;
    n.val = std::move(val);
    n.back = std::move(back);
    n.needs_grad = force_needs_grad;
    for (Var p : parents) {
      node(p);  // bounds check
      n.parents.push_back(p.id);
      if (nodes_[static_cast<size_t>(p.id)].needs_grad) n.needs_grad = true;
    }
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

// ---------------------------------------------------------------------------
// Finite-difference gradient checking.
// ---------------------------------------------------------------------------

struct GradCheckReport {
  real max_rel_err = 0.0;
  int worst_index = -1;
  real analytic_at_worst = 0.0;
  real numeric_at_worst = 0.0;
  int checked = 0;
};

/// Central differences against an analytic gradient. `f` must be a pure
/// function of the parameter vector. Relative error uses a floored
/// denominator so near-zero gradients do not blow up the ratio.
inline GradCheckReport grad_check(const std::function<real(const std::vector<real>&)>& f,
                                  const std::vector<real>& theta,
                                  const std::vector<real>& analytic_grad, real h = 1e-4) {
  if (theta.size() != analytic_grad.size())
    throw ShapeError("grad_check: gradient size does not match parameters");
  GradCheckReport rep;
  std::vector<real> probe = theta;
  for (size_t i = 0; i < theta.size(); ++i) {
    probe[i] = theta[i] + h;
    const real fp = f(probe);
    probe[i] = theta[i] - h;
    const real fm = f(probe);
    probe[i] = theta[i];
    const real numeric = (fp - fm) / (2.0 * h);
    const real analytic = analytic_grad[i];
    const real rel = std::abs(analytic - numeric) /
                     std::max({std::abs(analytic), std::abs(numeric), real(1e-6)});
    if (rel > rep.max_rel_err) {
      rep.max_rel_err = rel;
      rep.worst_index = static_cast<int>(i);
      rep.analytic_at_worst = analytic;
      rep.numeric_at_worst = numeric;
    }
    ++rep.checked;
  }
  return rep;
}

}  // namespace speecheq::diff

#endif  // SPEECHEQ_DIFFCORE_HPP

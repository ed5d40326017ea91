#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cstring>
#include <cmath>
#include <string>
#include <vector>

#include "fieldgen/ad/tensor.hpp"

// Differentiable op library. Every vjp is itself built from these ops, so
// gradients are graph tensors and can be differentiated again (needed for
// the R1 penalty path).

namespace fieldgen::ad {

template <class T>
using MatMap =
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <class T>
using ConstMatMap = Eigen::Map<
    const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

template <class T>
Tensor<T> cos_op(const Tensor<T>& x);
template <class T>
Tensor<T> sum_nhw(const Tensor<T>& x);

template <class T>
inline void require_same_shape(const Tensor<T>& a, const Tensor<T>& b,
                               const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " +
                                      shape_str(a.shape()) + " vs " +
                                      shape_str(b.shape()));
}

// ---------------------------------------------------------------------------
// elementwise binary
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  Buf<T> v = a.value() + b.value();
  return Tensor<T>::make_op("add", a.shape(), std::move(v), {a, b},
                            [](const Tensor<T>& g) {
                              return std::vector<Tensor<T>>{g, g};
                            });
}

template <class T>
Tensor<T> scale(const Tensor<T>& x, double c);

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  Buf<T> v = a.value() - b.value();
  return Tensor<T>::make_op("sub", a.shape(), std::move(v), {a, b},
                            [](const Tensor<T>& g) {
                              return std::vector<Tensor<T>>{g, scale(g, -1.0)};
                            });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  Buf<T> v = a.value() * b.value();
  return Tensor<T>::make_op(
      "mul", a.shape(), std::move(v), {a, b}, [a, b](const Tensor<T>& g) {
        return std::vector<Tensor<T>>{
            grad_wanted(a) ? mul(g, b) : Tensor<T>(),
            grad_wanted(b) ? mul(g, a) : Tensor<T>()};
      });
}

// ---------------------------------------------------------------------------
// scalar-constant ops
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> scale(const Tensor<T>& x, double c) {
  Buf<T> v = x.value() * static_cast<T>(c);
  return Tensor<T>::make_op("scale", x.shape(), std::move(v), {x},
                            [c](const Tensor<T>& g) {
                              return std::vector<Tensor<T>>{scale(g, c)};
                            });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& x, double c) {
  Buf<T> v = x.value() + static_cast<T>(c);
  return Tensor<T>::make_op("add_scalar", x.shape(), std::move(v), {x},
                            [](const Tensor<T>& g) {
                              return std::vector<Tensor<T>>{g};
                            });
}

template <class T>
Tensor<T> neg(const Tensor<T>& x) {
  return scale(x, -1.0);
}

// ---------------------------------------------------------------------------
// elementwise unary
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  Buf<T> v = x.value().max(T(0));
  return Tensor<T>::make_op(
      "relu", x.shape(), std::move(v), {x}, [x](const Tensor<T>& g) {
        Buf<T> m = (x.value() > T(0)).template cast<T>();
        Tensor<T> mask = Tensor<T>::from_buf(x.shape(), std::move(m));
        return std::vector<Tensor<T>>{mul(g, mask)};
      });
}

template <class T>
Tensor<T> leaky_relu(const Tensor<T>& x, double slope = 0.2) {
  const T s = static_cast<T>(slope);
  Buf<T> v = (x.value() > T(0)).select(x.value(), x.value() * s);
  return Tensor<T>::make_op(
      "leaky_relu", x.shape(), std::move(v), {x}, [x, s](const Tensor<T>& g) {
        Buf<T> m = (x.value() > T(0)).select(Buf<T>::Constant(x.numel(), T(1)),
                                             Buf<T>::Constant(x.numel(), s));
        Tensor<T> mask = Tensor<T>::from_buf(x.shape(), std::move(m));
        return std::vector<Tensor<T>>{mul(g, mask)};
      });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  Buf<T> v(x.numel());
  const Buf<T>& in = x.value();
  for (long i = 0; i < in.size(); ++i) {
    const T z = in[i];
    if (z >= T(0)) {
      v[i] = T(1) / (T(1) + std::exp(-z));
    } else {
      const T e = std::exp(z);
      v[i] = e / (T(1) + e);
    }
  }
  return Tensor<T>::make_op(
      "sigmoid", x.shape(), std::move(v), {x}, [x](const Tensor<T>& g) {
        Tensor<T> s = sigmoid(x);
        return std::vector<Tensor<T>>{
            mul(g, mul(s, add_scalar(neg(s), 1.0)))};
      });
}

template <class T>
Tensor<T> tanh_op(const Tensor<T>& x) {
  Buf<T> v = x.value().tanh();
  return Tensor<T>::make_op(
      "tanh", x.shape(), std::move(v), {x}, [x](const Tensor<T>& g) {
        Tensor<T> t = tanh_op(x);
        return std::vector<Tensor<T>>{mul(g, add_scalar(neg(mul(t, t)), 1.0))};
      });
}

template <class T>
Tensor<T> sin_op(const Tensor<T>& x) {
  Buf<T> v = x.value().sin();
  return Tensor<T>::make_op("sin", x.shape(), std::move(v), {x},
                            [x](const Tensor<T>& g) {
                              return std::vector<Tensor<T>>{mul(g, cos_op(x))};
                            });
}

template <class T>
Tensor<T> cos_op(const Tensor<T>& x) {
  Buf<T> v = x.value().cos();
  return Tensor<T>::make_op(
      "cos", x.shape(), std::move(v), {x}, [x](const Tensor<T>& g) {
        return std::vector<Tensor<T>>{mul(g, neg(sin_op(x)))};
      });
}

template <class T>
Tensor<T> exp_op(const Tensor<T>& x) {
  Buf<T> v = x.value().exp();
  return Tensor<T>::make_op("exp", x.shape(), std::move(v), {x},
                            [x](const Tensor<T>& g) {
                              return std::vector<Tensor<T>>{mul(g, exp_op(x))};
                            });
}

template <class T>
Tensor<T> softplus(const Tensor<T>& x) {
  Buf<T> v(x.numel());
  const Buf<T>& in = x.value();
  for (long i = 0; i < in.size(); ++i) {
    const T z = in[i];
    v[i] = std::max(z, T(0)) + std::log1p(std::exp(-std::abs(z)));
  }
  return Tensor<T>::make_op(
      "softplus", x.shape(), std::move(v), {x}, [x](const Tensor<T>& g) {
        return std::vector<Tensor<T>>{mul(g, sigmoid(x))};
      });
}

template <class T>
Tensor<T> square(const Tensor<T>& x) {
  Buf<T> v = x.value().square();
  return Tensor<T>::make_op(
      "square", x.shape(), std::move(v), {x}, [x](const Tensor<T>& g) {
        return std::vector<Tensor<T>>{mul(g, scale(x, 2.0))};
      });
}

template <class T>
Tensor<T> reciprocal(const Tensor<T>& x) {
  Buf<T> v = x.value().inverse();
  return Tensor<T>::make_op(
      "reciprocal", x.shape(), std::move(v), {x}, [x](const Tensor<T>& g) {
        Tensor<T> r = reciprocal(x);
        return std::vector<Tensor<T>>{neg(mul(g, mul(r, r)))};
      });
}

template <class T>
Tensor<T> sqrt_op(const Tensor<T>& x) {
  Buf<T> v = x.value().sqrt();
  return Tensor<T>::make_op(
      "sqrt", x.shape(), std::move(v), {x}, [x](const Tensor<T>& g) {
        return std::vector<Tensor<T>>{
            scale(mul(g, reciprocal(sqrt_op(x))), 0.5)};
      });
}

// ---------------------------------------------------------------------------
// reductions and broadcasts
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> broadcast_scalar(const Tensor<T>& s, const Shape& shape);

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  Buf<T> v(1);
  v[0] = x.value().sum();
  return Tensor<T>::make_op(
      "sum", {1}, std::move(v), {x}, [x](const Tensor<T>& g) {
        return std::vector<Tensor<T>>{broadcast_scalar(g, x.shape())};
      });
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
  const double inv_n = 1.0 / static_cast<double>(x.numel());
  Buf<T> v(1);
  v[0] = x.value().sum() * static_cast<T>(inv_n);
  return Tensor<T>::make_op(
      "mean", {1}, std::move(v), {x}, [x, inv_n](const Tensor<T>& g) {
        return std::vector<Tensor<T>>{
            broadcast_scalar(scale(g, inv_n), x.shape())};
      });
}

template <class T>
Tensor<T> broadcast_scalar(const Tensor<T>& s, const Shape& shape) {
  require(s.is_scalar(), "broadcast_scalar: source not scalar");
  Buf<T> v = Buf<T>::Constant(numel(shape), s.value()[0]);
  return Tensor<T>::make_op("broadcast_scalar", shape, std::move(v), {s},
                            [](const Tensor<T>& g) {
                              return std::vector<Tensor<T>>{sum(g)};
                            });
}

template <class T>
Tensor<T> broadcast_rows(const Tensor<T>& row, long n_rows);

// [N,D] -> [1,D]
template <class T>
Tensor<T> sum_rows(const Tensor<T>& x) {
  require(x.rank() == 2, "sum_rows: rank-2 tensor required, got " +
                             shape_str(x.shape()));
  const long n = x.dim(0), d = x.dim(1);
  Buf<T> v(d);
  ConstMatMap<T> m(x.value().data(), n, d);
  Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(v.data(), d) =
      m.colwise().sum();
  return Tensor<T>::make_op("sum_rows", {1, d}, std::move(v), {x},
                            [n](const Tensor<T>& g) {
                              return std::vector<Tensor<T>>{
                                  broadcast_rows(g, n)};
                            });
}

template <class T>
Tensor<T> broadcast_cols(const Tensor<T>& col, long n_cols);

// [N,D] -> [N,1]
template <class T>
Tensor<T> sum_cols(const Tensor<T>& x) {
  require(x.rank() == 2, "sum_cols: rank-2 tensor required, got " +
                             shape_str(x.shape()));
  const long n = x.dim(0), d = x.dim(1);
  Buf<T> v(n);
  ConstMatMap<T> m(x.value().data(), n, d);
  Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>(v.data(), n) =
      m.rowwise().sum();
  return Tensor<T>::make_op("sum_cols", {n, 1}, std::move(v), {x},
                            [d](const Tensor<T>& g) {
                              return std::vector<Tensor<T>>{
                                  broadcast_cols(g, d)};
                            });
}

// [1,D] replicated to [N,D]
template <class T>
Tensor<T> broadcast_rows(const Tensor<T>& row, long n_rows) {
  require(row.rank() == 2 && row.dim(0) == 1,
          "broadcast_rows: [1,D] tensor required, got " +
              shape_str(row.shape()));
  const long d = row.dim(1);
  Buf<T> v(n_rows * d);
  MatMap<T> out(v.data(), n_rows, d);
  ConstMatMap<T> in(row.value().data(), 1, d);
  out = in.replicate(n_rows, 1);
  return Tensor<T>::make_op("broadcast_rows", {n_rows, d}, std::move(v), {row},
                            [](const Tensor<T>& g) {
                              return std::vector<Tensor<T>>{sum_rows(g)};
                            });
}

// [N,1] replicated to [N,D]
template <class T>
Tensor<T> broadcast_cols(const Tensor<T>& col, long n_cols) {
  require(col.rank() == 2 && col.dim(1) == 1,
          "broadcast_cols: [N,1] tensor required, got " +
              shape_str(col.shape()));
  const long n = col.dim(0);
  Buf<T> v(n * n_cols);
  MatMap<T> out(v.data(), n, n_cols);
  out = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(
            col.value().data(), n)
            .replicate(1, n_cols);
  return Tensor<T>::make_op("broadcast_cols", {n, n_cols}, std::move(v), {col},
                            [](const Tensor<T>& g) {
                              return std::vector<Tensor<T>>{sum_cols(g)};
                            });
}

template <class T>
Tensor<T> repeat_rows_grouped(const Tensor<T>& x, long reps);

// [G*S, M] -> [G, M], summing each group of S consecutive rows.
template <class T>
Tensor<T> group_sum_rows(const Tensor<T>& x, long group) {
  require(x.rank() == 2 && x.dim(0) % group == 0,
          "group_sum_rows: rows of " + shape_str(x.shape()) +
              " not divisible by group " + std::to_string(group));
  const long g_count = x.dim(0) / group, m = x.dim(1);
  Buf<T> v = Buf<T>::Zero(g_count * m);
  MatMap<T> out(v.data(), g_count, m);
  ConstMatMap<T> in(x.value().data(), x.dim(0), m);
  for (long g = 0; g < g_count; ++g)
    out.row(g) = in.middleRows(g * group, group).colwise().sum();
  return Tensor<T>::make_op("group_sum_rows", {g_count, m}, std::move(v), {x},
                            [group](const Tensor<T>& g) {
                              return std::vector<Tensor<T>>{
                                  repeat_rows_grouped(g, group)};
                            });
}

// [G, M] -> [G*S, M], each row repeated S times consecutively.
template <class T>
Tensor<T> repeat_rows_grouped(const Tensor<T>& x, long reps) {
  require(x.rank() == 2, "repeat_rows_grouped: rank-2 tensor required");
  const long g_count = x.dim(0), m = x.dim(1);
  Buf<T> v(g_count * reps * m);
  MatMap<T> out(v.data(), g_count * reps, m);
  ConstMatMap<T> in(x.value().data(), g_count, m);
  for (long g = 0; g < g_count; ++g)
    out.middleRows(g * reps, reps) = in.row(g).replicate(reps, 1);
  return Tensor<T>::make_op("repeat_rows_grouped", {g_count * reps, m},
                            std::move(v), {x},
                            [reps](const Tensor<T>& g) {
                              return std::vector<Tensor<T>>{
                                  group_sum_rows(g, reps)};
                            });
}

// Scale row i of x by s[i]; x:[N,M], s:[N,1].
template <class T>
Tensor<T> mul_colvec(const Tensor<T>& x, const Tensor<T>& s) {
  require(x.rank() == 2 && s.rank() == 2 && s.dim(1) == 1 &&
              s.dim(0) == x.dim(0),
          "mul_colvec: incompatible shapes " + shape_str(x.shape()) + " and " +
              shape_str(s.shape()));
  const long n = x.dim(0), m = x.dim(1);
  Buf<T> v(n * m);
  MatMap<T> out(v.data(), n, m);
  ConstMatMap<T> in(x.value().data(), n, m);
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> sv(s.value().data(),
                                                           n);
  out = in.array().colwise() * sv.array();
  return Tensor<T>::make_op(
      "mul_colvec", x.shape(), std::move(v), {x, s},
      [x, s](const Tensor<T>& g) {
        return std::vector<Tensor<T>>{
            grad_wanted(x) ? mul_colvec(g, s) : Tensor<T>(),
            grad_wanted(s) ? sum_cols(mul(g, x)) : Tensor<T>()};
      });
}

// ---------------------------------------------------------------------------
// structural ops
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  require(numel(shape) == x.numel(),
          "reshape: cannot view " + shape_str(x.shape()) + " as " +
              shape_str(shape));
  Shape orig = x.shape();
  Buf<T> v = x.value();
  return Tensor<T>::make_op("reshape", std::move(shape), std::move(v), {x},
                            [orig](const Tensor<T>& g) {
                              return std::vector<Tensor<T>>{reshape(g, orig)};
                            });
}

template <class T>
Tensor<T> transpose2d(const Tensor<T>& x) {
  require(x.rank() == 2, "transpose2d: rank-2 tensor required");
  const long n = x.dim(0), m = x.dim(1);
  Buf<T> v(n * m);
  MatMap<T> out(v.data(), m, n);
  ConstMatMap<T> in(x.value().data(), n, m);
  out = in.transpose();
  return Tensor<T>::make_op("transpose2d", {m, n}, std::move(v), {x},
                            [](const Tensor<T>& g) {
                              return std::vector<Tensor<T>>{transpose2d(g)};
                            });
}

template <class T>
Tensor<T> slice_cols(const Tensor<T>& x, long start, long len);

// Column concatenation of rank-2 tensors with equal row counts.
template <class T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  const long n = parts[0].dim(0);
  long total = 0;
  for (const auto& p : parts) {
    require(p.rank() == 2 && p.dim(0) == n,
            "concat_cols: shape mismatch at " + shape_str(p.shape()));
    total += p.dim(1);
  }
  Buf<T> v(n * total);
  MatMap<T> out(v.data(), n, total);
  long off = 0;
  std::vector<long> widths;
  for (const auto& p : parts) {
    ConstMatMap<T> in(p.value().data(), n, p.dim(1));
    out.middleCols(off, p.dim(1)) = in;
    widths.push_back(p.dim(1));
    off += p.dim(1);
  }
  return Tensor<T>::make_op(
      "concat_cols", {n, total}, std::move(v), parts,
      [widths](const Tensor<T>& g) {
        std::vector<Tensor<T>> grads;
        long o = 0;
        for (long w : widths) {
          grads.push_back(slice_cols(g, o, w));
          o += w;
        }
        return grads;
      });
}

template <class T>
Tensor<T> slice_cols(const Tensor<T>& x, long start, long len) {
  require(x.rank() == 2 && start >= 0 && start + len <= x.dim(1),
          "slice_cols: window [" + std::to_string(start) + "," +
              std::to_string(start + len) + ") out of " +
              shape_str(x.shape()));
  const long n = x.dim(0), m = x.dim(1);
  Buf<T> v(n * len);
  MatMap<T> out(v.data(), n, len);
  ConstMatMap<T> in(x.value().data(), n, m);
  out = in.middleCols(start, len);
  return Tensor<T>::make_op(
      "slice_cols", {n, len}, std::move(v), {x},
      [start, len, m, n](const Tensor<T>& g) {
        std::vector<Tensor<T>> parts;
        if (start > 0) parts.push_back(Tensor<T>::zeros({n, start}));
        parts.push_back(g);
        if (start + len < m)
          parts.push_back(Tensor<T>::zeros({n, m - start - len}));
        return std::vector<Tensor<T>>{concat_cols(parts)};
      });
}

template <class T>
Tensor<T> slice_rows(const Tensor<T>& x, long start, long len);

// Row concatenation of rank-2 tensors with equal column counts.
template <class T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  const long m = parts[0].dim(1);
  long total = 0;
  for (const auto& p : parts) {
    require(p.rank() == 2 && p.dim(1) == m,
            "concat_rows: shape mismatch at " + shape_str(p.shape()));
    total += p.dim(0);
  }
  Buf<T> v(total * m);
  MatMap<T> out(v.data(), total, m);
  long off = 0;
  std::vector<long> heights;
  for (const auto& p : parts) {
    ConstMatMap<T> in(p.value().data(), p.dim(0), m);
    out.middleRows(off, p.dim(0)) = in;
    heights.push_back(p.dim(0));
    off += p.dim(0);
  }
  return Tensor<T>::make_op(
      "concat_rows", {total, m}, std::move(v), parts,
      [heights](const Tensor<T>& g) {
        std::vector<Tensor<T>> grads;
        long o = 0;
        for (long h : heights) {
          grads.push_back(slice_rows(g, o, h));
          o += h;
        }
        return grads;
      });
}

template <class T>
Tensor<T> slice_rows(const Tensor<T>& x, long start, long len) {
  require(x.rank() == 2 && start >= 0 && start + len <= x.dim(0),
          "slice_rows: window [" + std::to_string(start) + "," +
              std::to_string(start + len) + ") out of " +
              shape_str(x.shape()));
  const long n = x.dim(0), m = x.dim(1);
  Buf<T> v(len * m);
  MatMap<T> out(v.data(), len, m);
  ConstMatMap<T> in(x.value().data(), n, m);
  out = in.middleRows(start, len);
  return Tensor<T>::make_op(
      "slice_rows", {len, m}, std::move(v), {x},
      [start, len, m, n](const Tensor<T>& g) {
        std::vector<Tensor<T>> parts;
        if (start > 0) parts.push_back(Tensor<T>::zeros({start, m}));
        parts.push_back(g);
        if (start + len < n)
          parts.push_back(Tensor<T>::zeros({n - start - len, m}));
        return std::vector<Tensor<T>>{concat_rows(parts)};
      });
}

// ---------------------------------------------------------------------------
// prefix sums along rows (quadrature transmittance)
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> suffix_sum_excl(const Tensor<T>& x);

// y[:,j] = sum_{k<j} x[:,k]
template <class T>
Tensor<T> cumsum_excl(const Tensor<T>& x) {
  require(x.rank() == 2, "cumsum_excl: rank-2 tensor required");
  const long n = x.dim(0), s = x.dim(1);
  Buf<T> v(n * s);
  const T* in = x.value().data();
  T* out = v.data();
  for (long r = 0; r < n; ++r) {
    T acc = T(0);
    for (long j = 0; j < s; ++j) {
      out[r * s + j] = acc;
      acc += in[r * s + j];
    }
  }
  return Tensor<T>::make_op("cumsum_excl", x.shape(), std::move(v), {x},
                            [](const Tensor<T>& g) {
                              return std::vector<Tensor<T>>{suffix_sum_excl(g)};
                            });
}

// y[:,j] = sum_{k>j} x[:,k]
template <class T>
Tensor<T> suffix_sum_excl(const Tensor<T>& x) {
  require(x.rank() == 2, "suffix_sum_excl: rank-2 tensor required");
  const long n = x.dim(0), s = x.dim(1);
  Buf<T> v(n * s);
  const T* in = x.value().data();
  T* out = v.data();
  for (long r = 0; r < n; ++r) {
    T acc = T(0);
    for (long j = s - 1; j >= 0; --j) {
      out[r * s + j] = acc;
      acc += in[r * s + j];
    }
  }
  return Tensor<T>::make_op("suffix_sum_excl", x.shape(), std::move(v), {x},
                            [](const Tensor<T>& g) {
                              return std::vector<Tensor<T>>{cumsum_excl(g)};
                            });
}

// ---------------------------------------------------------------------------
// matmul / linear
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool ta = false,
                 bool tb = false) {
  require(a.rank() == 2 && b.rank() == 2,
          "matmul: rank-2 tensors required, got " + shape_str(a.shape()) +
              " and " + shape_str(b.shape()));
  const long n = ta ? a.dim(1) : a.dim(0);
  const long ka = ta ? a.dim(0) : a.dim(1);
  const long kb = tb ? b.dim(1) : b.dim(0);
  const long m = tb ? b.dim(0) : b.dim(1);
  require(ka == kb, "matmul: inner dimension mismatch " +
                        shape_str(a.shape()) + (ta ? "^T" : "") + " x " +
                        shape_str(b.shape()) + (tb ? "^T" : ""));
  Buf<T> v(n * m);
  MatMap<T> out(v.data(), n, m);
  ConstMatMap<T> ma(a.value().data(), a.dim(0), a.dim(1));
  ConstMatMap<T> mb(b.value().data(), b.dim(0), b.dim(1));
  if (!ta && !tb)
    out.noalias() = ma * mb;
  else if (ta && !tb)
    out.noalias() = ma.transpose() * mb;
  else if (!ta && tb)
    out.noalias() = ma * mb.transpose();
  else
    out.noalias() = ma.transpose() * mb.transpose();
  return Tensor<T>::make_op(
      "matmul", {n, m}, std::move(v), {a, b},
      [a, b, ta, tb](const Tensor<T>& g) {
        Tensor<T> ga, gb;
        if (grad_wanted(a))
          ga = ta ? matmul(b, g, tb, true) : matmul(g, b, false, !tb);
        if (grad_wanted(b))
          gb = tb ? matmul(g, a, true, ta) : matmul(a, g, !ta, false);
        return std::vector<Tensor<T>>{ga, gb};
      });
}

// y = x * w^T + bias; x:[N,in], w:[out,in], bias:[out].
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w,
                 const Tensor<T>& bias) {
  require(x.rank() == 2 && w.rank() == 2 && x.dim(1) == w.dim(1),
          "linear: input " + shape_str(x.shape()) + " incompatible with " +
              shape_str(w.shape()));
  require(bias.rank() == 1 && bias.dim(0) == w.dim(0),
          "linear: bias " + shape_str(bias.shape()) + " incompatible with " +
              shape_str(w.shape()));
  const long n = x.dim(0), out_dim = w.dim(0);
  Buf<T> v(n * out_dim);
  MatMap<T> out(v.data(), n, out_dim);
  ConstMatMap<T> mx(x.value().data(), n, x.dim(1));
  ConstMatMap<T> mw(w.value().data(), out_dim, w.dim(1));
  out.noalias() = mx * mw.transpose();
  out.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(
      bias.value().data(), out_dim);
  return Tensor<T>::make_op(
      "linear", {n, out_dim}, std::move(v), {x, w, bias},
      [x, w, bias, out_dim](const Tensor<T>& g) {
        Tensor<T> gx, gw, gb;
        if (grad_wanted(x)) gx = matmul(g, w);
        if (grad_wanted(w)) gw = matmul(g, x, true, false);
        if (grad_wanted(bias)) gb = reshape(sum_rows(g), {out_dim});
        return std::vector<Tensor<T>>{gx, gw, gb};
      });
}

// Elementwise sum of equally shaped tensors, accumulated per element in
// ascending value order. The canonical order makes the result exactly
// invariant to the order of the inputs (plain left-to-right float addition
// is not, for three or more addends).
template <class T>
Tensor<T> sum_stack(const std::vector<Tensor<T>>& parts) {
  require(!parts.empty(), "sum_stack: no inputs");
  if (parts.size() == 1) return parts[0];
  const Shape shape = parts[0].shape();
  for (const auto& p : parts)
    require(p.shape() == shape, "sum_stack: shape mismatch " +
                                    shape_str(p.shape()) + " vs " +
                                    shape_str(shape));
  const long n = parts[0].numel();
  const std::size_t k = parts.size();
  Buf<T> v(n);
  std::vector<T> vals(k);
  for (long i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) vals[j] = parts[j].value()[i];
    std::sort(vals.begin(), vals.end());
    T acc = T(0);
    for (std::size_t j = 0; j < k; ++j) acc += vals[j];
    v[i] = acc;
  }
  return Tensor<T>::make_op("sum_stack", shape, std::move(v), parts,
                            [k](const Tensor<T>& g) {
                              return std::vector<Tensor<T>>(k, g);
                            });
}

// Fused affine layer for field MLPs:
//   y = [x_0 | x_1 | ... | z-block] * w^T + bias, then optional relu,
// where the z rows ([G, kz]) broadcast over G equal blocks of rows instead
// of being materialized. Column order of w matches [xs..., z]. One output
// allocation and a single elementwise pass replace the broadcast/concat/
// linear/relu chain.
template <class T>
Tensor<T> block_linear(const std::vector<Tensor<T>>& xs, const Tensor<T>& z,
                       long block_rows, const Tensor<T>& w,
                       const Tensor<T>& bias, bool relu_act) {
  require(!xs.empty(), "block_linear: at least one dense input required");
  const long n = xs[0].dim(0);
  long dense_cols = 0;
  for (const auto& x : xs) {
    require(x.rank() == 2 && x.dim(0) == n,
            "block_linear: inputs disagree on rows: " +
                shape_str(x.shape()));
    dense_cols += x.dim(1);
  }
  const bool with_z = z.defined();
  long g_count = 0, kz = 0;
  if (with_z) {
    require(z.rank() == 2, "block_linear: z must be [G,kz]");
    g_count = z.dim(0);
    kz = z.dim(1);
    require(block_rows > 0 && g_count * block_rows == n,
            "block_linear: z blocks " + std::to_string(g_count) + "x" +
                std::to_string(block_rows) + " do not cover " +
                std::to_string(n) + " rows");
  }
  require(w.rank() == 2 && w.dim(1) == dense_cols + kz,
          "block_linear: weight " + shape_str(w.shape()) +
              " does not match input columns " +
              std::to_string(dense_cols + kz));
  const long out_dim = w.dim(0);
  require(bias.rank() == 1 && bias.dim(0) == out_dim,
          "block_linear: bias " + shape_str(bias.shape()) +
              " does not match weight " + shape_str(w.shape()));

  Buf<T> v(n * out_dim);
  MatMap<T> out(v.data(), n, out_dim);
  ConstMatMap<T> wm(w.value().data(), out_dim, dense_cols + kz);
  long off = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const long ki = xs[i].dim(1);
    ConstMatMap<T> mx(xs[i].value().data(), n, ki);
    if (i == 0)
      out.noalias() = mx * wm.middleCols(off, ki).transpose();
    else
      out.noalias() += mx * wm.middleCols(off, ki).transpose();
    off += ki;
  }
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> bv(bias.value().data(),
                                                           out_dim);
  if (with_z) {
    ConstMatMap<T> zm(z.value().data(), g_count, kz);
    Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rowvecs =
        zm * wm.middleCols(dense_cols, kz).transpose();
    rowvecs.rowwise() += bv.transpose();
    for (long g = 0; g < g_count; ++g) {
      auto blockv = out.middleRows(g * block_rows, block_rows);
      if (relu_act)
        blockv = (blockv.rowwise() + rowvecs.row(g)).cwiseMax(T(0));
      else
        blockv.rowwise() += rowvecs.row(g);
    }
  } else {
    if (relu_act)
      out = (out.rowwise() + bv.transpose()).cwiseMax(T(0));
    else
      out.rowwise() += bv.transpose();
  }

  Tensor<T> mask;
  if (relu_act) {
    Buf<T> m = (v > T(0)).template cast<T>();
    mask = Tensor<T>::from_buf({n, out_dim}, std::move(m));
  }

  std::vector<Tensor<T>> parents = xs;
  if (with_z) parents.push_back(z);
  parents.push_back(w);
  parents.push_back(bias);
  const std::size_t n_dense = xs.size();
  std::vector<long> widths;
  for (const auto& x : xs) widths.push_back(x.dim(1));
  return Tensor<T>::make_op(
      "block_linear", {n, out_dim}, std::move(v), std::move(parents),
      [xs, z, w, bias, mask, relu_act, widths, n_dense, with_z, dense_cols,
       kz, block_rows, out_dim](const Tensor<T>& g) {
        Tensor<T> gpre = relu_act ? mul(g, mask) : g;
        std::vector<Tensor<T>> grads;
        long off = 0;
        for (std::size_t i = 0; i < n_dense; ++i) {
          grads.push_back(grad_wanted(xs[i])
                              ? matmul(gpre, slice_cols(w, off, widths[i]))
                              : Tensor<T>());
          off += widths[i];
        }
        Tensor<T> gsum;  // per-block row sums, reused by the z-side grads
        auto block_sums = [&]() {
          if (!gsum.defined()) gsum = group_sum_rows(gpre, block_rows);
          return gsum;
        };
        if (with_z)
          grads.push_back(grad_wanted(z)
                              ? matmul(block_sums(),
                                       slice_cols(w, dense_cols, kz))
                              : Tensor<T>());
        if (grad_wanted(w)) {
          std::vector<Tensor<T>> parts;
          for (std::size_t i = 0; i < n_dense; ++i)
            parts.push_back(matmul(gpre, xs[i], true, false));
          if (with_z) parts.push_back(matmul(block_sums(), z, true, false));
          grads.push_back(parts.size() == 1 ? parts[0] : concat_cols(parts));
        } else {
          grads.push_back(Tensor<T>());
        }
        grads.push_back(grad_wanted(bias)
                            ? reshape(sum_rows(gpre), {out_dim})
                            : Tensor<T>());
        return grads;
      });
}

// ---------------------------------------------------------------------------
// conv2d family ([N,C,H,W], odd square kernels, stride 1)
// ---------------------------------------------------------------------------

namespace detail {

template <class T>
using ColsMat =
    Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// im2col for one image: cols(c*k*k + a*k + b, i*wo + j) = x[c, i+a-p, j+b-p].
// cols is row-major, so each (row, i) pair owns a contiguous run of wo
// entries whose in-bounds span is a straight copy from the image row.
template <class T>
void fill_cols(const T* img, long c_in, long h, long w, long k, long pad,
               long ho, long wo, ColsMat<T>& cols) {
  for (long c = 0; c < c_in; ++c) {
    for (long a = 0; a < k; ++a) {
      for (long b = 0; b < k; ++b) {
        const long row = (c * k + a) * k + b;
        // j + b - pad in [0, w)  =>  j in [pad - b, w + pad - b)
        const long j_lo = std::max<long>(0, pad - b);
        const long j_hi = std::min<long>(wo, w + pad - b);
        T* row_base = cols.data() + row * ho * wo;
        for (long i = 0; i < ho; ++i) {
          const long y = i + a - pad;
          T* dst = row_base + i * wo;
          if (y < 0 || y >= h) {
            std::fill(dst, dst + wo, T(0));
            continue;
          }
          const T* src = img + (c * h + y) * w + (j_lo + b - pad);
          std::fill(dst, dst + j_lo, T(0));
          if (j_hi > j_lo)
            std::memcpy(dst + j_lo, src, sizeof(T) * (j_hi - j_lo));
          std::fill(dst + j_hi, dst + wo, T(0));
        }
      }
    }
  }
}

}  // namespace detail

template <class T>
Tensor<T> kernel_transpose_flip(const Tensor<T>& w);

template <class T>
Tensor<T> conv2d_weight_grad(const Tensor<T>& x, const Tensor<T>& g, long k,
                             long pad);

// 2D convolution, stride 1, zero padding `pad`; bias optional (undefined
// Tensor to skip). Output spatial size is H + 2*pad - k + 1.
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                 long pad) {
  require(x.rank() == 4, "conv2d: input must be [N,C,H,W], got " +
                             shape_str(x.shape()));
  require(w.rank() == 4 && w.dim(2) == w.dim(3) && w.dim(2) % 2 == 1,
          "conv2d: weight must be [O,C,k,k] with odd k, got " +
              shape_str(w.shape()));
  require(x.dim(1) == w.dim(1), "conv2d: channel mismatch, input " +
                                    shape_str(x.shape()) + " vs weight " +
                                    shape_str(w.shape()));
  const long n = x.dim(0), c_in = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const long o = w.dim(0), k = w.dim(2);
  const long ho = h + 2 * pad - k + 1, wo = wd + 2 * pad - k + 1;
  require(ho >= 1 && wo >= 1, "conv2d: kernel " + std::to_string(k) +
                                  " with pad " + std::to_string(pad) +
                                  " larger than input " +
                                  shape_str(x.shape()));
  const bool with_bias = bias.defined();
  if (with_bias)
    require(bias.rank() == 1 && bias.dim(0) == o,
            "conv2d: bias " + shape_str(bias.shape()) +
                " incompatible with weight " + shape_str(w.shape()));
  Buf<T> v(n * o * ho * wo);
  detail::ColsMat<T> cols(c_in * k * k, ho * wo);
  ConstMatMap<T> wm(w.value().data(), o, c_in * k * k);
  for (long img = 0; img < n; ++img) {
    detail::fill_cols(x.value().data() + img * c_in * h * wd, c_in, h, wd, k,
                      pad, ho, wo, cols);
    MatMap<T> out(v.data() + img * o * ho * wo, o, ho * wo);
    out.noalias() = wm * cols;
    if (with_bias)
      out.colwise() += Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(
          bias.value().data(), o);
  }
  std::vector<Tensor<T>> parents =
      with_bias ? std::vector<Tensor<T>>{x, w, bias}
                : std::vector<Tensor<T>>{x, w};
  return Tensor<T>::make_op(
      "conv2d", {n, o, ho, wo}, std::move(v), std::move(parents),
      [x, w, k, pad, with_bias](const Tensor<T>& g) {
        Tensor<T> gx, gw;
        if (grad_wanted(x))
          gx = conv2d(g, kernel_transpose_flip(w), Tensor<T>(), k - 1 - pad);
        if (grad_wanted(w)) gw = conv2d_weight_grad(x, g, k, pad);
        std::vector<Tensor<T>> grads{gx, gw};
        if (with_bias) grads.push_back(sum_nhw(g));
        return grads;
      });
}

// [O,C,k,k] -> [C,O,k,k] with both spatial axes flipped (an involution).
template <class T>
Tensor<T> kernel_transpose_flip(const Tensor<T>& w) {
  require(w.rank() == 4 && w.dim(2) == w.dim(3),
          "kernel_transpose_flip: [O,C,k,k] required, got " +
              shape_str(w.shape()));
  const long o = w.dim(0), c = w.dim(1), k = w.dim(2);
  Buf<T> v(w.numel());
  const T* in = w.value().data();
  T* out = v.data();
  for (long oo = 0; oo < o; ++oo)
    for (long cc = 0; cc < c; ++cc)
      for (long a = 0; a < k; ++a)
        for (long b = 0; b < k; ++b)
          out[((cc * o + oo) * k + (k - 1 - a)) * k + (k - 1 - b)] =
              in[((oo * c + cc) * k + a) * k + b];
  return Tensor<T>::make_op("kernel_transpose_flip", {c, o, k, k},
                            std::move(v), {w}, [](const Tensor<T>& g) {
                              return std::vector<Tensor<T>>{
                                  kernel_transpose_flip(g)};
                            });
}

// Gradient of conv2d w.r.t. its weight: correlate input with output-grad.
// Bilinear in (x, g); both vjps are conv2d calls, so this op is twice
// differentiable.
template <class T>
Tensor<T> conv2d_weight_grad(const Tensor<T>& x, const Tensor<T>& g, long k,
                             long pad) {
  require(x.rank() == 4 && g.rank() == 4 && x.dim(0) == g.dim(0),
          "conv2d_weight_grad: batch mismatch " + shape_str(x.shape()) +
              " vs " + shape_str(g.shape()));
  const long n = x.dim(0), c_in = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const long o = g.dim(1), ho = g.dim(2), wo = g.dim(3);
  require(ho == h + 2 * pad - k + 1 && wo == wd + 2 * pad - k + 1,
          "conv2d_weight_grad: grad spatial size inconsistent");
  Buf<T> v = Buf<T>::Zero(o * c_in * k * k);
  detail::ColsMat<T> cols(c_in * k * k, ho * wo);
  MatMap<T> acc(v.data(), o, c_in * k * k);
  for (long img = 0; img < n; ++img) {
    detail::fill_cols(x.value().data() + img * c_in * h * wd, c_in, h, wd, k,
                      pad, ho, wo, cols);
    ConstMatMap<T> gm(g.value().data() + img * o * ho * wo, o, ho * wo);
    acc.noalias() += gm * cols.transpose();
  }
  return Tensor<T>::make_op(
      "conv2d_weight_grad", {o, c_in, k, k}, std::move(v), {x, g},
      [x, g, k, pad](const Tensor<T>& gw) {
        Tensor<T> vx, vg;
        if (grad_wanted(x))
          vx = conv2d(g, kernel_transpose_flip(gw), Tensor<T>(), k - 1 - pad);
        if (grad_wanted(g)) vg = conv2d(x, gw, Tensor<T>(), pad);
        return std::vector<Tensor<T>>{vx, vg};
      });
}

template <class T>
Tensor<T> broadcast_chan(const Tensor<T>& b, long n, long h, long w);

// [N,C,H,W] -> [C]
template <class T>
Tensor<T> sum_nhw(const Tensor<T>& x) {
  require(x.rank() == 4, "sum_nhw: [N,C,H,W] required");
  const long n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Buf<T> v = Buf<T>::Zero(c);
  const T* in = x.value().data();
  for (long img = 0; img < n; ++img)
    for (long cc = 0; cc < c; ++cc) {
      T acc = T(0);
      const T* p = in + (img * c + cc) * hw;
      for (long i = 0; i < hw; ++i) acc += p[i];
      v[cc] += acc;
    }
  const long h = x.dim(2), w = x.dim(3);
  return Tensor<T>::make_op("sum_nhw", {c}, std::move(v), {x},
                            [n, h, w](const Tensor<T>& g) {
                              return std::vector<Tensor<T>>{
                                  broadcast_chan(g, n, h, w)};
                            });
}

// [C] -> [N,C,H,W]
template <class T>
Tensor<T> broadcast_chan(const Tensor<T>& b, long n, long h, long w) {
  require(b.rank() == 1, "broadcast_chan: rank-1 tensor required");
  const long c = b.dim(0), hw = h * w;
  Buf<T> v(n * c * hw);
  T* out = v.data();
  for (long img = 0; img < n; ++img)
    for (long cc = 0; cc < c; ++cc) {
      const T val = b.value()[cc];
      T* p = out + (img * c + cc) * hw;
      for (long i = 0; i < hw; ++i) p[i] = val;
    }
  return Tensor<T>::make_op("broadcast_chan", {n, c, h, w}, std::move(v), {b},
                            [](const Tensor<T>& g) {
                              return std::vector<Tensor<T>>{sum_nhw(g)};
                            });
}

// ---------------------------------------------------------------------------
// resampling ops ([N,C,H,W])
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> upsample_nearest2x(const Tensor<T>& x);

template <class T>
Tensor<T> avg_pool2x(const Tensor<T>& x) {
  require(x.rank() == 4 && x.dim(2) % 2 == 0 && x.dim(3) % 2 == 0,
          "avg_pool2x: even spatial dims required, got " +
              shape_str(x.shape()));
  const long n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const long ho = h / 2, wo = w / 2;
  Buf<T> v(n * c * ho * wo);
  const T* in = x.value().data();
  T* out = v.data();
  for (long p = 0; p < n * c; ++p) {
    const T* src = in + p * h * w;
    T* dst = out + p * ho * wo;
    for (long i = 0; i < ho; ++i)
      for (long j = 0; j < wo; ++j)
        dst[i * wo + j] =
            (src[(2 * i) * w + 2 * j] + src[(2 * i) * w + 2 * j + 1] +
             src[(2 * i + 1) * w + 2 * j] + src[(2 * i + 1) * w + 2 * j + 1]) *
            T(0.25);
  }
  return Tensor<T>::make_op("avg_pool2x", {n, c, ho, wo}, std::move(v), {x},
                            [](const Tensor<T>& g) {
                              return std::vector<Tensor<T>>{
                                  scale(upsample_nearest2x(g), 0.25)};
                            });
}

template <class T>
Tensor<T> upsample_nearest2x(const Tensor<T>& x) {
  require(x.rank() == 4, "upsample_nearest2x: [N,C,H,W] required");
  const long n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Buf<T> v(n * c * 4 * h * w);
  const T* in = x.value().data();
  T* out = v.data();
  const long wo = 2 * w;
  for (long p = 0; p < n * c; ++p) {
    const T* src = in + p * h * w;
    T* dst = out + p * 4 * h * w;
    for (long i = 0; i < h; ++i)
      for (long j = 0; j < w; ++j) {
        const T val = src[i * w + j];
        dst[(2 * i) * wo + 2 * j] = val;
        dst[(2 * i) * wo + 2 * j + 1] = val;
        dst[(2 * i + 1) * wo + 2 * j] = val;
        dst[(2 * i + 1) * wo + 2 * j + 1] = val;
      }
  }
  return Tensor<T>::make_op("upsample_nearest2x", {n, c, 2 * h, 2 * w},
                            std::move(v), {x}, [](const Tensor<T>& g) {
                              return std::vector<Tensor<T>>{
                                  scale(avg_pool2x(g), 4.0)};
                            });
}

namespace detail {

// 1D 2x bilinear interpolation (half-pixel centers, clamped borders):
// out[2j]   = 0.25*in[j-1] + 0.75*in[j]
// out[2j+1] = 0.75*in[j]   + 0.25*in[j+1]
template <class T>
void bilinear_axis_fwd(const T* in, T* out, long len) {
  for (long j = 0; j < len; ++j) {
    const T left = in[std::max<long>(j - 1, 0)];
    const T right = in[std::min<long>(j + 1, len - 1)];
    out[2 * j] = T(0.25) * left + T(0.75) * in[j];
    out[2 * j + 1] = T(0.75) * in[j] + T(0.25) * right;
  }
}

template <class T>
void bilinear_axis_adj(const T* gout, T* gin, long len) {
  for (long j = 0; j < len; ++j) gin[j] = T(0);
  for (long j = 0; j < len; ++j) {
    gin[std::max<long>(j - 1, 0)] += T(0.25) * gout[2 * j];
    gin[j] += T(0.75) * gout[2 * j];
    gin[j] += T(0.75) * gout[2 * j + 1];
    gin[std::min<long>(j + 1, len - 1)] += T(0.25) * gout[2 * j + 1];
  }
}

}  // namespace detail

template <class T>
Tensor<T> upsample_bilinear2x_adjoint(const Tensor<T>& x);

template <class T>
Tensor<T> upsample_bilinear2x(const Tensor<T>& x) {
  require(x.rank() == 4, "upsample_bilinear2x: [N,C,H,W] required");
  const long n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Buf<T> v(n * c * 4 * h * w);
  std::vector<T> rowbuf(2 * w), colsrc(h), coldst(2 * h);
  Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic> tmp(h, 2 * w);
  for (long p = 0; p < n * c; ++p) {
    const T* src = x.value().data() + p * h * w;
    T* dst = v.data() + p * 4 * h * w;
    for (long i = 0; i < h; ++i) {
      detail::bilinear_axis_fwd(src + i * w, rowbuf.data(), w);
      for (long j = 0; j < 2 * w; ++j) tmp(i, j) = rowbuf[j];
    }
    for (long j = 0; j < 2 * w; ++j) {
      for (long i = 0; i < h; ++i) colsrc[static_cast<std::size_t>(i)] = tmp(i, j);
      detail::bilinear_axis_fwd(colsrc.data(), coldst.data(), h);
      for (long i = 0; i < 2 * h; ++i) dst[i * 2 * w + j] = coldst[static_cast<std::size_t>(i)];
    }
  }
  return Tensor<T>::make_op("upsample_bilinear2x", {n, c, 2 * h, 2 * w},
                            std::move(v), {x}, [](const Tensor<T>& g) {
                              return std::vector<Tensor<T>>{
                                  upsample_bilinear2x_adjoint(g)};
                            });
}

// Exact adjoint of upsample_bilinear2x; maps [N,C,2H,2W] -> [N,C,H,W].
template <class T>
Tensor<T> upsample_bilinear2x_adjoint(const Tensor<T>& x) {
  require(x.rank() == 4 && x.dim(2) % 2 == 0 && x.dim(3) % 2 == 0,
          "upsample_bilinear2x_adjoint: even spatial dims required");
  const long n = x.dim(0), c = x.dim(1), h2 = x.dim(2), w2 = x.dim(3);
  const long h = h2 / 2, w = w2 / 2;
  Buf<T> v(n * c * h * w);
  std::vector<T> colsrc(h2), coldst(h), rowdst(w);
  Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic> tmp(h, w2);
  for (long p = 0; p < n * c; ++p) {
    const T* src = x.value().data() + p * h2 * w2;
    T* dst = v.data() + p * h * w;
    for (long j = 0; j < w2; ++j) {
      for (long i = 0; i < h2; ++i) colsrc[static_cast<std::size_t>(i)] = src[i * w2 + j];
      detail::bilinear_axis_adj(colsrc.data(), coldst.data(), h);
      for (long i = 0; i < h; ++i) tmp(i, j) = coldst[static_cast<std::size_t>(i)];
    }
    std::vector<T> rowsrc(static_cast<std::size_t>(w2));
    for (long i = 0; i < h; ++i) {
      for (long j = 0; j < w2; ++j) rowsrc[static_cast<std::size_t>(j)] = tmp(i, j);
      detail::bilinear_axis_adj(rowsrc.data(), rowdst.data(), w);
      for (long j = 0; j < w; ++j) dst[i * w + j] = rowdst[static_cast<std::size_t>(j)];
    }
  }
  return Tensor<T>::make_op("upsample_bilinear2x_adjoint", {n, c, h, w},
                            std::move(v), {x}, [](const Tensor<T>& g) {
                              return std::vector<Tensor<T>>{
                                  upsample_bilinear2x(g)};
                            });
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

// Mean absolute difference, reduced to a scalar.
template <class T>
Tensor<T> l1(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "l1");
  const long n = a.numel();
  Buf<T> v(1);
  v[0] = (a.value() - b.value()).abs().sum() / static_cast<T>(n);
  return Tensor<T>::make_op(
      "l1", {1}, std::move(v), {a, b}, [a, b, n](const Tensor<T>& g) {
        Buf<T> s = (a.value() - b.value());
        for (long i = 0; i < s.size(); ++i)
          s[i] = s[i] > T(0) ? T(1) : (s[i] < T(0) ? T(-1) : T(0));
        Tensor<T> sign = Tensor<T>::from_buf(a.shape(), std::move(s));
        Tensor<T> ga =
            mul(broadcast_scalar(scale(g, 1.0 / static_cast<double>(n)),
                                 a.shape()),
                sign);
        return std::vector<Tensor<T>>{ga, neg(ga)};
      });
}

// ---------------------------------------------------------------------------
// operator sugar
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) {
  return add(a, b);
}
template <class T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) {
  return sub(a, b);
}
template <class T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) {
  return mul(a, b);
}

// max(x, c) elementwise against a constant, built from relu.
template <class T>
Tensor<T> clamp_min(const Tensor<T>& x, double c) {
  return add_scalar(relu(add_scalar(x, -c)), c);
}

// ---------------------------------------------------------------------------
// public dispatcher over the named op set
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> forward_op(const std::string& tag,
                     const std::vector<Tensor<T>>& inputs) {
  auto want = [&](std::size_t k) {
    require(inputs.size() == k, "forward_op(" + tag + "): expected " +
                                    std::to_string(k) + " inputs, got " +
                                    std::to_string(inputs.size()));
  };
  if (tag == "add") {
    want(2);
    return add(inputs[0], inputs[1]);
  }
  if (tag == "mul") {
    want(2);
    return mul(inputs[0], inputs[1]);
  }
  if (tag == "matmul") {
    want(2);
    return matmul(inputs[0], inputs[1]);
  }
  if (tag == "conv2d") {
    require(inputs.size() == 2 || inputs.size() == 3,
            "forward_op(conv2d): expected (x, w[, bias])");
    require(inputs[1].rank() == 4 && inputs[1].dim(2) == 3 &&
                inputs[1].dim(3) == 3,
            "forward_op(conv2d): 3x3 kernel required, got " +
                shape_str(inputs[1].shape()));
    return conv2d(inputs[0], inputs[1],
                  inputs.size() == 3 ? inputs[2] : Tensor<T>(), 1);
  }
  if (tag == "relu") {
    want(1);
    return relu(inputs[0]);
  }
  if (tag == "leaky_relu") {
    want(1);
    return leaky_relu(inputs[0], 0.2);
  }
  if (tag == "sigmoid") {
    want(1);
    return sigmoid(inputs[0]);
  }
  if (tag == "sin") {
    want(1);
    return sin_op(inputs[0]);
  }
  if (tag == "cos") {
    want(1);
    return cos_op(inputs[0]);
  }
  if (tag == "exp") {
    want(1);
    return exp_op(inputs[0]);
  }
  if (tag == "sum") {
    want(1);
    return sum(inputs[0]);
  }
  if (tag == "mean") {
    want(1);
    return mean(inputs[0]);
  }
  if (tag == "upsample_nearest") {
    want(1);
    return upsample_nearest2x(inputs[0]);
  }
  if (tag == "upsample_bilinear") {
    want(1);
    return upsample_bilinear2x(inputs[0]);
  }
  if (tag == "avg_pool") {
    want(1);
    return avg_pool2x(inputs[0]);
  }
  if (tag == "concat") {
    require(inputs.size() >= 2, "forward_op(concat): >=2 inputs required");
    return concat_cols(inputs);
  }
  if (tag == "reshape") {
    want(1);
    return reshape(inputs[0], {inputs[0].numel()});
  }
  if (tag == "softplus") {
    want(1);
    return softplus(inputs[0]);
  }
  if (tag == "l1") {
    want(2);
    return l1(inputs[0], inputs[1]);
  }
  if (tag == "square") {
    want(1);
    return square(inputs[0]);
  }
  throw shape_error("forward_op: unknown op tag '" + tag + "'");
}

}  // namespace fieldgen::ad

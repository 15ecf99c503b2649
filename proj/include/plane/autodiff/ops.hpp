#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include "plane/autodiff/tensor.hpp"

namespace plane::ad {

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

inline const std::vector<double>& data_of(const Node& n) { return n.data; }

/// Index plan for numpy-style broadcasting of two operands.
struct Broadcast {
  Shape out;
  std::vector<std::size_t> sa, sb;  // operand strides aligned to `out`, 0 on broadcast dims
  bool same = false;

  Broadcast(const Shape& a, const Shape& b) {
    same = a == b;
    const std::size_t nd = std::max(a.size(), b.size());
    out.assign(nd, 1);
    sa.assign(nd, 0);
    sb.assign(nd, 0);
    std::size_t stride_a = 1, stride_b = 1;
    for (std::size_t k = 0; k < nd; ++k) {
      const std::size_t d = nd - 1 - k;
      const std::size_t da = k < a.size() ? a[a.size() - 1 - k] : 1;
      const std::size_t db = k < b.size() ? b[b.size() - 1 - k] : 1;
      if (da != db && da != 1 && db != 1)
        throw Error("shape mismatch: " + shape_str(a) + " vs " + shape_str(b));
      out[d] = std::max(da, db);
      sa[d] = da == 1 ? 0 : stride_a;
      sb[d] = db == 1 ? 0 : stride_b;
      stride_a *= da;
      stride_b *= db;
    }
  }

  template <typename F>
  void for_each(F&& f) const {
    const std::size_t n = shape_numel(out);
    if (same) {
      for (std::size_t i = 0; i < n; ++i) f(i, i, i);
      return;
    }
    const std::size_t nd = out.size();
    // fast path: innermost dim contiguous/broadcast pattern, outer dims generic
    std::vector<std::size_t> idx(nd, 0);
    std::size_t oa = 0, ob = 0;
    for (std::size_t i = 0; i < n; ++i) {
      f(i, oa, ob);
      for (std::size_t d = nd; d-- > 0;) {
        ++idx[d];
        oa += sa[d];
        ob += sb[d];
        if (idx[d] < out[d]) break;
        oa -= sa[d] * out[d];
        ob -= sb[d] * out[d];
        idx[d] = 0;
      }
    }
  }
};

/// Splits a shape around `axis` into (outer, axis length, inner).
struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
  AxisSplit(const Shape& s, std::size_t axis) {
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    len = s[axis];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  }
};

template <typename Fwd, typename Bwd>
Tensor binary(const Tensor& a, const Tensor& b, Fwd fwd, Bwd bwd) {
  Broadcast plan(a.shape(), b.shape());
  std::vector<double> out(shape_numel(plan.out));
  const auto& ad = a.node()->data;
  const auto& bd = b.node()->data;
  plan.for_each([&](std::size_t i, std::size_t ia, std::size_t ib) { out[i] = fwd(ad[ia], bd[ib]); });
  Shape shape = plan.out;
  return make_result(std::move(shape), std::move(out), {a, b}, [plan, bwd](Node& self) {
    Node& na = *self.parents[0];
    Node& nb = *self.parents[1];
    const auto& g = self.grad;
    double* ga = na.requires_grad ? na.ensure_grad().data() : nullptr;
    double* gb = nb.requires_grad ? nb.ensure_grad().data() : nullptr;
    const auto& xa = na.data;
    const auto& xb = nb.data;
    const auto& y = self.data;
    plan.for_each([&](std::size_t i, std::size_t ia, std::size_t ib) {
      double da = 0.0, db = 0.0;
      bwd(xa[ia], xb[ib], y[i], g[i], da, db);
      if (ga) ga[ia] += da;
      if (gb) gb[ib] += db;
    });
  });
}

/// Elementwise map; `deriv(x, y)` is dy/dx.
template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& x, Fwd fwd, Deriv deriv) {
  const auto& xd = x.node()->data;
  std::vector<double> out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) out[i] = fwd(xd[i]);
  return make_result(x.shape(), std::move(out), {x}, [deriv](Node& self) {
    Node& nx = *self.parents[0];
    auto& gx = nx.ensure_grad();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * deriv(nx.data[i], self.data[i]);
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic (broadcasting)

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary(
      a, b, [](double x, double y) { return x + y; },
      [](double, double, double, double g, double& da, double& db) {
        da = g;
        db = g;
      });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary(
      a, b, [](double x, double y) { return x - y; },
      [](double, double, double, double g, double& da, double& db) {
        da = g;
        db = -g;
      });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary(
      a, b, [](double x, double y) { return x * y; },
      [](double x, double y, double, double g, double& da, double& db) {
        da = g * y;
        db = g * x;
      });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
  return detail::binary(
      a, b, [](double x, double y) { return x / y; },
      [](double x, double y, double, double g, double& da, double& db) {
        da = g / y;
        db = -g * x / (y * y);
      });
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }

inline Tensor scale(const Tensor& x, double c) {
  return detail::unary(
      x, [c](double v) { return c * v; }, [c](double, double) { return c; });
}

inline Tensor add_scalar(const Tensor& x, double c) {
  return detail::unary(
      x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

inline Tensor neg(const Tensor& x) { return scale(x, -1.0); }

/// c - x
inline Tensor rsub_scalar(double c, const Tensor& x) { return add_scalar(neg(x), c); }

// ---------------------------------------------------------------------------
// Elementwise nonlinearities

inline Tensor relu(const Tensor& x) {
  return detail::unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

/// Exact (erf) GELU.
inline Tensor gelu(const Tensor& x) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  constexpr double inv_sqrt2pi = 0.39894228040143267794;
  return detail::unary(
      x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
      [](double v, double) {
        return 0.5 * (1.0 + std::erf(v * inv_sqrt2)) + v * inv_sqrt2pi * std::exp(-0.5 * v * v);
      });
}

inline Tensor exp(const Tensor& x) {
  return detail::unary(
      x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

inline Tensor log(const Tensor& x) {
  return detail::unary(
      x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

inline Tensor sqrt(const Tensor& x) {
  return detail::unary(
      x, [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; });
}

inline Tensor pow(const Tensor& x, double p) {
  return detail::unary(
      x, [p](double v) { return std::pow(v, p); },
      [p](double v, double) { return p == 0.0 ? 0.0 : p * std::pow(v, p - 1.0); });
}

inline Tensor sigmoid(const Tensor& x) {
  return detail::unary(
      x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); }, [](double, double y) { return y * (1.0 - y); });
}

/// Clamp to [lo, hi]; gradient passes only where the input is inside.
inline Tensor clamp(const Tensor& x, double lo, double hi) {
  return detail::unary(
      x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// Linear algebra and layout

/// [m,k] x [k,n] -> [m,n]
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.shape()[1] != b.shape()[0])
    throw Error("matmul shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const auto m = static_cast<Eigen::Index>(a.shape()[0]);
  const auto k = static_cast<Eigen::Index>(a.shape()[1]);
  const auto n = static_cast<Eigen::Index>(b.shape()[1]);
  std::vector<double> out(static_cast<std::size_t>(m * n));
  detail::MapMat(out.data(), m, n).noalias() =
      detail::CMapMat(a.node()->data.data(), m, k) * detail::CMapMat(b.node()->data.data(), k, n);
  return detail::make_result({a.shape()[0], b.shape()[1]}, std::move(out), {a, b}, [m, k, n](detail::Node& self) {
    detail::Node& na = *self.parents[0];
    detail::Node& nb = *self.parents[1];
    detail::CMapMat g(self.grad.data(), m, n);
    if (na.requires_grad)
      detail::MapMat(na.ensure_grad().data(), m, k).noalias() += g * detail::CMapMat(nb.data.data(), k, n).transpose();
    if (nb.requires_grad)
      detail::MapMat(nb.ensure_grad().data(), k, n).noalias() += detail::CMapMat(na.data.data(), m, k).transpose() * g;
  });
}

/// 2-D transpose.
inline Tensor transpose(const Tensor& x) {
  if (x.ndim() != 2) throw Error("transpose expects a 2-D tensor, got " + shape_str(x.shape()));
  const std::size_t r = x.shape()[0], c = x.shape()[1];
  std::vector<double> out(r * c);
  const auto& d = x.node()->data;
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = d[i * c + j];
  return detail::make_result({c, r}, std::move(out), {x}, [r, c](detail::Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
  });
}

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw Error("reshape shape mismatch: " + shape_str(x.shape()) + " vs " + shape_str(shape));
  return detail::make_result(std::move(shape), x.node()->data, {x}, [](detail::Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

inline Tensor concat(const std::vector<Tensor>& xs, int axis) {
  if (xs.empty()) throw Error("concat of empty list");
  const std::size_t ax = xs[0].normalize_axis(axis);
  Shape shape = xs[0].shape();
  shape[ax] = 0;
  for (const auto& t : xs) {
    Shape s = t.shape(), ref = xs[0].shape();
    if (s.size() != ref.size()) throw Error("concat shape mismatch: " + shape_str(ref) + " vs " + shape_str(s));
    s[ax] = ref[ax] = 0;
    if (s != ref) throw Error("concat shape mismatch: " + shape_str(xs[0].shape()) + " vs " + shape_str(t.shape()));
    shape[ax] += t.shape()[ax];
  }
  const detail::AxisSplit out_split(shape, ax);
  std::vector<double> out(shape_numel(shape));
  std::vector<std::size_t> chunk;  // per input: len * inner
  for (const auto& t : xs) chunk.push_back(t.shape()[ax] * out_split.inner);
  const std::size_t row = out_split.len * out_split.inner;
  std::size_t offset = 0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const auto& d = xs[k].node()->data;
    for (std::size_t o = 0; o < out_split.outer; ++o)
      std::copy_n(d.begin() + static_cast<std::ptrdiff_t>(o * chunk[k]), chunk[k],
                  out.begin() + static_cast<std::ptrdiff_t>(o * row + offset));
    offset += chunk[k];
  }
  return detail::make_result(shape, std::move(out), xs, [chunk, row, outer = out_split.outer](detail::Node& self) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      auto& p = *self.parents[k];
      if (p.requires_grad) {
        auto& g = p.ensure_grad();
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t i = 0; i < chunk[k]; ++i) g[o * chunk[k] + i] += self.grad[o * row + offset + i];
      }
      offset += chunk[k];
    }
  });
}

/// Elements [begin, end) along `axis`.
inline Tensor slice(const Tensor& x, int axis, std::size_t begin, std::size_t end) {
  const std::size_t ax = x.normalize_axis(axis);
  if (begin > end || end > x.shape()[ax])
    throw Error("slice [" + std::to_string(begin) + "," + std::to_string(end) + ") out of range for " +
                shape_str(x.shape()));
  const detail::AxisSplit sp(x.shape(), ax);
  Shape shape = x.shape();
  shape[ax] = end - begin;
  const std::size_t chunk = (end - begin) * sp.inner, row = sp.len * sp.inner, off = begin * sp.inner;
  std::vector<double> out(sp.outer * chunk);
  const auto& d = x.node()->data;
  for (std::size_t o = 0; o < sp.outer; ++o)
    std::copy_n(d.begin() + static_cast<std::ptrdiff_t>(o * row + off), chunk,
                out.begin() + static_cast<std::ptrdiff_t>(o * chunk));
  return detail::make_result(std::move(shape), std::move(out), {x}, [=, outer = sp.outer](detail::Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t i = 0; i < chunk; ++i) g[o * row + off + i] += self.grad[o * chunk + i];
  });
}

/// Rows of a 2-D table selected by index (embedding lookup).
inline Tensor index_rows(const Tensor& table, const std::vector<std::size_t>& rows) {
  if (table.ndim() != 2) throw Error("index_rows expects a 2-D table, got " + shape_str(table.shape()));
  const std::size_t width = table.shape()[1];
  std::vector<double> out(rows.size() * width);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= table.shape()[0]) throw Error("index_rows: row index out of range");
    std::copy_n(table.node()->data.begin() + static_cast<std::ptrdiff_t>(rows[r] * width), width,
                out.begin() + static_cast<std::ptrdiff_t>(r * width));
  }
  return detail::make_result({rows.size(), width}, std::move(out), {table}, [rows, width](detail::Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (std::size_t c = 0; c < width; ++c) g[rows[r] * width + c] += self.grad[r * width + c];
  });
}

// ---------------------------------------------------------------------------
// Reductions

inline Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return detail::make_result({}, {s}, {x}, [](detail::Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (auto& v : g) v += self.grad[0];
  });
}

inline Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

inline Tensor sum(const Tensor& x, int axis, bool keepdim = false) {
  const std::size_t ax = x.normalize_axis(axis);
  const detail::AxisSplit sp(x.shape(), ax);
  Shape shape = x.shape();
  if (keepdim) shape[ax] = 1;
  else shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(ax));
  std::vector<double> out(sp.outer * sp.inner, 0.0);
  const auto& d = x.node()->data;
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t l = 0; l < sp.len; ++l)
      for (std::size_t i = 0; i < sp.inner; ++i) out[o * sp.inner + i] += d[(o * sp.len + l) * sp.inner + i];
  return detail::make_result(std::move(shape), std::move(out), {x}, [sp](detail::Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t l = 0; l < sp.len; ++l)
        for (std::size_t i = 0; i < sp.inner; ++i) g[(o * sp.len + l) * sp.inner + i] += self.grad[o * sp.inner + i];
  });
}

inline Tensor mean(const Tensor& x, int axis, bool keepdim = false) {
  return scale(sum(x, axis, keepdim), 1.0 / static_cast<double>(x.dim(axis)));
}

/// Maximum along `axis`; the gradient goes to the first maximal element.
inline Tensor max(const Tensor& x, int axis, bool keepdim = false) {
  const std::size_t ax = x.normalize_axis(axis);
  const detail::AxisSplit sp(x.shape(), ax);
  if (sp.len == 0) throw Error("max over empty axis");
  Shape shape = x.shape();
  if (keepdim) shape[ax] = 1;
  else shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(ax));
  std::vector<double> out(sp.outer * sp.inner);
  std::vector<std::size_t> arg(out.size());
  const auto& d = x.node()->data;
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.inner; ++i) {
      std::size_t best = o * sp.len * sp.inner + i;
      for (std::size_t l = 1; l < sp.len; ++l) {
        const std::size_t j = (o * sp.len + l) * sp.inner + i;
        if (d[j] > d[best]) best = j;
      }
      out[o * sp.inner + i] = d[best];
      arg[o * sp.inner + i] = best;
    }
  return detail::make_result(std::move(shape), std::move(out), {x}, [arg = std::move(arg)](detail::Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t k = 0; k < arg.size(); ++k) g[arg[k]] += self.grad[k];
  });
}

inline Tensor max(const Tensor& x) { return max(reshape(x, {x.numel()}), 0); }

// ---------------------------------------------------------------------------
// Normalization

/// Max-subtracted softmax along `axis`.
inline Tensor softmax(const Tensor& x, int axis) {
  const std::size_t ax = x.normalize_axis(axis);
  const detail::AxisSplit sp(x.shape(), ax);
  std::vector<double> out(x.numel());
  const auto& d = x.node()->data;
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.inner; ++i) {
      auto at = [&](std::size_t l) { return (o * sp.len + l) * sp.inner + i; };
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t l = 0; l < sp.len; ++l) m = std::max(m, d[at(l)]);
      double z = 0.0;
      for (std::size_t l = 0; l < sp.len; ++l) z += (out[at(l)] = std::exp(d[at(l)] - m));
      for (std::size_t l = 0; l < sp.len; ++l) out[at(l)] /= z;
    }
  return detail::make_result(x.shape(), std::move(out), {x}, [sp](detail::Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    const auto& y = self.data;
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t i = 0; i < sp.inner; ++i) {
        auto at = [&](std::size_t l) { return (o * sp.len + l) * sp.inner + i; };
        double dot = 0.0;
        for (std::size_t l = 0; l < sp.len; ++l) dot += self.grad[at(l)] * y[at(l)];
        for (std::size_t l = 0; l < sp.len; ++l) g[at(l)] += y[at(l)] * (self.grad[at(l)] - dot);
      }
  });
}

/// Zero-mean, unit-variance over the last axis (no affine part).
inline Tensor layernorm(const Tensor& x, double eps = 1e-5) {
  const std::size_t width = x.shape().back();
  const std::size_t rows = x.numel() / width;
  std::vector<double> out(x.numel());
  std::vector<double> inv_std(rows);
  const auto& d = x.node()->data;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = d.data() + r * width;
    double mu = 0.0;
    for (std::size_t c = 0; c < width; ++c) mu += row[c];
    mu /= static_cast<double>(width);
    double var = 0.0;
    for (std::size_t c = 0; c < width; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= static_cast<double>(width);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < width; ++c) out[r * width + c] = (row[c] - mu) * inv_std[r];
  }
  return detail::make_result(x.shape(), std::move(out), {x}, [width, rows, inv_std](detail::Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    const auto& y = self.data;
    const double w = static_cast<double>(width);
    for (std::size_t r = 0; r < rows; ++r) {
      double mg = 0.0, mgy = 0.0;
      for (std::size_t c = 0; c < width; ++c) {
        mg += self.grad[r * width + c];
        mgy += self.grad[r * width + c] * y[r * width + c];
      }
      mg /= w;
      mgy /= w;
      for (std::size_t c = 0; c < width; ++c)
        g[r * width + c] += inv_std[r] * (self.grad[r * width + c] - mg - y[r * width + c] * mgy);
    }
  });
}

/// a.b / (|a||b| + eps) along `axis` (reduced away); operands broadcast.
inline Tensor cosine_similarity(const Tensor& a, const Tensor& b, int axis = -1, double eps = 1e-8) {
  const Tensor dot = sum(mul(a, b), axis);
  const Tensor na = sqrt(sum(mul(a, a), axis));
  const Tensor nb = sqrt(sum(mul(b, b), axis));
  return div(dot, add_scalar(mul(na, nb), eps));
}

/// x / |x| along `axis`.
inline Tensor l2_normalize(const Tensor& x, int axis = -1, double eps = 1e-12) {
  return div(x, add_scalar(sqrt(sum(mul(x, x), axis, true)), eps));
}

/// x W + b for row-major activations.
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) { return add(matmul(x, w), b); }

}  // namespace plane::ad

// Copyright 2026 DCIM-AVSR Authors
// Forward kernels and gradients for every primitive
//
// Licensed under the Apache License, Version 2.0

#include "dcim/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace dcim {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(std::min(a, b) - m));
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

// Reduce a gradient of `big_shape` down to `small_shape` (a suffix) by
// summing the leading tile repetitions.
Tensor reduce_to_suffix(const Tensor& g, const Shape& small_shape) {
  if (g.shape() == small_shape) return g;
  const int64_t small_n = shape_numel(small_shape);
  std::vector<double> out(static_cast<size_t>(small_n), 0.0);
  const double* src = g.data();
  const int64_t big_n = g.numel();
  for (int64_t i = 0; i < big_n; ++i) out[static_cast<size_t>(i % small_n)] += src[i];
  return Tensor::from(small_shape, std::move(out));
}

struct AxisView {
  int64_t outer = 1, n = 1, inner = 1;
};

AxisView axis_view(const Shape& s, int axis) {
  if (axis < 0) axis += static_cast<int>(s.size());
  if (axis < 0 || axis >= static_cast<int>(s.size())) {
    throw std::invalid_argument("op: axis out of range for shape " + shape_str(s));
  }
  AxisView v;
  for (int i = 0; i < axis; ++i) v.outer *= s[static_cast<size_t>(i)];
  v.n = s[static_cast<size_t>(axis)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) v.inner *= s[i];
  return v;
}

int normalize_axis(int axis, int rank) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw std::invalid_argument("op: axis out of range");
  return axis;
}

Tensor binary_elementwise(const Tensor& a, const Tensor& b, const char* name, double (*fwd)(double, double),
                          std::function<std::vector<Tensor>(const Tensor&, const Tensor&, const Tensor&)> vjp) {
  const Tensor *big = &a, *small = &b;
  if (a.shape() != b.shape()) {
    if (is_suffix(b.shape(), a.shape())) {
      big = &a;
      small = &b;
    } else if (is_suffix(a.shape(), b.shape())) {
      big = &b;
      small = &a;
    } else {
      throw std::invalid_argument(std::string(name) + ": incompatible shapes " + shape_str(a.shape()) + " and " +
                                  shape_str(b.shape()));
    }
  }
  const int64_t n = big->numel();
  const int64_t sn = small->numel();
  std::vector<double> out(static_cast<size_t>(n));
  const double* pa = a.data();
  const double* pb = b.data();
  const int64_t an = a.numel();
  const int64_t bn = b.numel();
  for (int64_t i = 0; i < n; ++i) {
    out[static_cast<size_t>(i)] = fwd(pa[i % an], pb[i % bn]);
  }
  (void)sn;
  Tensor value = Tensor::make(big->shape(), std::move(out));
  Tensor av = a.detached(), bv = b.detached();
  return detail::record(std::move(value), {&a, &b}, [vjp = std::move(vjp), av, bv](const Tensor& g) {
    return vjp(g, av, bv);
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_elementwise(a, b, "add", [](double x, double y) { return x + y; },
                            [](const Tensor& g, const Tensor& av, const Tensor& bv) {
                              std::vector<Tensor> out(2);
                              out[0] = reduce_to_suffix(g, av.shape());
                              out[1] = reduce_to_suffix(g, bv.shape());
                              return out;
                            });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_elementwise(a, b, "sub", [](double x, double y) { return x - y; },
                            [](const Tensor& g, const Tensor& av, const Tensor& bv) {
                              std::vector<Tensor> out(2);
                              out[0] = reduce_to_suffix(g, av.shape());
                              std::vector<double> neg(static_cast<size_t>(g.numel()));
                              const double* pg = g.data();
                              for (size_t i = 0; i < neg.size(); ++i) neg[i] = -pg[i];
                              out[1] = reduce_to_suffix(Tensor::from(g.shape(), std::move(neg)), bv.shape());
                              return out;
                            });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_elementwise(a, b, "mul", [](double x, double y) { return x * y; },
                            [](const Tensor& g, const Tensor& av, const Tensor& bv) {
                              const int64_t n = g.numel();
                              const double* pg = g.data();
                              const double* pa = av.data();
                              const double* pb = bv.data();
                              const int64_t an = av.numel(), bn = bv.numel();
                              std::vector<double> da(static_cast<size_t>(n)), db(static_cast<size_t>(n));
                              for (int64_t i = 0; i < n; ++i) {
                                da[static_cast<size_t>(i)] = pg[i] * pb[i % bn];
                                db[static_cast<size_t>(i)] = pg[i] * pa[i % an];
                              }
                              std::vector<Tensor> out(2);
                              out[0] = reduce_to_suffix(Tensor::from(g.shape(), std::move(da)), av.shape());
                              out[1] = reduce_to_suffix(Tensor::from(g.shape(), std::move(db)), bv.shape());
                              return out;
                            });
}

Tensor scale(const Tensor& a, double c) {
  const int64_t n = a.numel();
  std::vector<double> out(static_cast<size_t>(n));
  const double* p = a.data();
  for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(i)] = p[i] * c;
  Tensor value = Tensor::make(a.shape(), std::move(out));
  return detail::record(std::move(value), {&a}, [c](const Tensor& g) {
    std::vector<double> d(static_cast<size_t>(g.numel()));
    const double* pg = g.data();
    for (size_t i = 0; i < d.size(); ++i) d[i] = pg[i] * c;
    return std::vector<Tensor>{Tensor::from(g.shape(), std::move(d))};
  });
}

Tensor sigmoid(const Tensor& x) {
  const int64_t n = x.numel();
  std::vector<double> out(static_cast<size_t>(n));
  const double* p = x.data();
  for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(i)] = stable_sigmoid(p[i]);
  Tensor value = Tensor::make(x.shape(), std::move(out));
  Tensor yv = value.detached();
  return detail::record(std::move(value), {&x}, [yv](const Tensor& g) {
    std::vector<double> d(static_cast<size_t>(g.numel()));
    const double* pg = g.data();
    const double* py = yv.data();
    for (size_t i = 0; i < d.size(); ++i) d[i] = pg[i] * py[i] * (1.0 - py[i]);
    return std::vector<Tensor>{Tensor::from(g.shape(), std::move(d))};
  });
}

Tensor swish(const Tensor& x) {
  const int64_t n = x.numel();
  std::vector<double> out(static_cast<size_t>(n));
  const double* p = x.data();
  for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(i)] = p[i] * stable_sigmoid(p[i]);
  Tensor value = Tensor::make(x.shape(), std::move(out));
  Tensor xv = x.detached();
  return detail::record(std::move(value), {&x}, [xv](const Tensor& g) {
    std::vector<double> d(static_cast<size_t>(g.numel()));
    const double* pg = g.data();
    const double* px = xv.data();
    for (size_t i = 0; i < d.size(); ++i) {
      const double s = stable_sigmoid(px[i]);
      d[i] = pg[i] * s * (1.0 + px[i] * (1.0 - s));
    }
    return std::vector<Tensor>{Tensor::from(g.shape(), std::move(d))};
  });
}

Tensor relu(const Tensor& x) {
  const int64_t n = x.numel();
  std::vector<double> out(static_cast<size_t>(n));
  const double* p = x.data();
  for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(i)] = p[i] > 0.0 ? p[i] : 0.0;
  Tensor value = Tensor::make(x.shape(), std::move(out));
  Tensor xv = x.detached();
  return detail::record(std::move(value), {&x}, [xv](const Tensor& g) {
    std::vector<double> d(static_cast<size_t>(g.numel()));
    const double* pg = g.data();
    const double* px = xv.data();
    for (size_t i = 0; i < d.size(); ++i) d[i] = px[i] > 0.0 ? pg[i] : 0.0;
    return std::vector<Tensor>{Tensor::from(g.shape(), std::move(d))};
  });
}

Tensor dropout(const Tensor& x, double rate, bool train, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) {
    throw std::invalid_argument("dropout: rate must lie in [0,1), got " + std::to_string(rate));
  }
  if (!train || rate == 0.0) return x;
  const int64_t n = x.numel();
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(static_cast<size_t>(n));
  for (double& m : mask) m = rng.uniform() < rate ? 0.0 : keep_scale;
  std::vector<double> out(static_cast<size_t>(n));
  const double* p = x.data();
  for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(i)] = p[i] * mask[static_cast<size_t>(i)];
  Tensor value = Tensor::make(x.shape(), std::move(out));
  return detail::record(std::move(value), {&x}, [mask = std::move(mask)](const Tensor& g) {
    std::vector<double> d(static_cast<size_t>(g.numel()));
    const double* pg = g.data();
    for (size_t i = 0; i < d.size(); ++i) d[i] = pg[i] * mask[i];
    return std::vector<Tensor>{Tensor::from(g.shape(), std::move(d))};
  });
}

namespace {

struct MatShape {
  Shape batch;
  int64_t rows = 0, cols = 0;
};

MatShape mat_split(const Shape& s, const char* name) {
  if (s.size() < 2) throw std::invalid_argument(std::string(name) + ": operand must have rank >= 2");
  MatShape m;
  m.batch.assign(s.begin(), s.end() - 2);
  m.rows = s[s.size() - 2];
  m.cols = s[s.size() - 1];
  return m;
}

// Plain batched product: a [batchA|m,k] x b [batchB|k,n] with suffix-rule
// batch broadcasting. No recording; used by both forward and vjp.
Tensor matmul_value(const Tensor& a, const Tensor& b) {
  const MatShape ma = mat_split(a.shape(), "matmul");
  const MatShape mb = mat_split(b.shape(), "matmul");
  if (ma.cols != mb.rows) {
    throw std::invalid_argument("matmul: inner extents disagree, " + shape_str(a.shape()) + " x " +
                                shape_str(b.shape()));
  }
  Shape out_batch;
  if (ma.batch == mb.batch) {
    out_batch = ma.batch;
  } else if (is_suffix(ma.batch, mb.batch)) {
    out_batch = mb.batch;
  } else if (is_suffix(mb.batch, ma.batch)) {
    out_batch = ma.batch;
  } else {
    throw std::invalid_argument("matmul: batch extents incompatible, " + shape_str(a.shape()) + " x " +
                                shape_str(b.shape()));
  }
  const int64_t nb = shape_numel(out_batch);
  const int64_t nba = shape_numel(ma.batch);
  const int64_t nbb = shape_numel(mb.batch);
  const int64_t m = ma.rows, k = ma.cols, n = mb.cols;

  Shape out_shape = out_batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  std::vector<double> out(static_cast<size_t>(nb * m * n), 0.0);
  const double* pa = a.data();
  const double* pb = b.data();
  for (int64_t bi = 0; bi < nb; ++bi) {
    const double* A = pa + (nba ? (bi % nba) : 0) * m * k;
    const double* B = pb + (nbb ? (bi % nbb) : 0) * k * n;
    double* C = out.data() + bi * m * n;
    for (int64_t i = 0; i < m; ++i) {
      for (int64_t kk = 0; kk < k; ++kk) {
        const double av = A[i * k + kk];
        if (av == 0.0) continue;
        const double* Brow = B + kk * n;
        double* Crow = C + i * n;
        for (int64_t j = 0; j < n; ++j) Crow[j] += av * Brow[j];
      }
    }
  }
  return Tensor::make(std::move(out_shape), std::move(out));
}

Tensor transpose_last2_value(const Tensor& x) {
  const MatShape m = mat_split(x.shape(), "transpose");
  Shape out_shape = m.batch;
  out_shape.push_back(m.cols);
  out_shape.push_back(m.rows);
  const int64_t nb = shape_numel(m.batch);
  std::vector<double> out(static_cast<size_t>(x.numel()));
  const double* p = x.data();
  for (int64_t bi = 0; bi < nb; ++bi) {
    const double* src = p + bi * m.rows * m.cols;
    double* dst = out.data() + bi * m.rows * m.cols;
    for (int64_t i = 0; i < m.rows; ++i)
      for (int64_t j = 0; j < m.cols; ++j) dst[j * m.rows + i] = src[i * m.cols + j];
  }
  return Tensor::make(std::move(out_shape), std::move(out));
}

Tensor reduce_batch_to(const Tensor& g, const Shape& target) {
  if (g.shape() == target) return g;
  const int64_t tn = shape_numel(target);
  std::vector<double> out(static_cast<size_t>(tn), 0.0);
  const double* src = g.data();
  const int64_t n = g.numel();
  for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(i % tn)] += src[i];
  return Tensor::from(target, std::move(out));
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  Tensor value = matmul_value(a, b);
  Tensor av = a.detached(), bv = b.detached();
  return detail::record(std::move(value), {&a, &b}, [av, bv](const Tensor& g) {
    Tensor da = matmul_value(g, transpose_last2_value(bv));
    Tensor db = matmul_value(transpose_last2_value(av), g);
    std::vector<Tensor> out(2);
    out[0] = reduce_batch_to(da, av.shape());
    out[1] = reduce_batch_to(db, bv.shape());
    return out;
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) { return add(matmul(x, w), b); }

Tensor transpose(const Tensor& x, int axis_a, int axis_b) {
  const int r = x.rank();
  axis_a = normalize_axis(axis_a, r);
  axis_b = normalize_axis(axis_b, r);
  if (axis_a == axis_b) return x;

  Shape out_shape = x.shape();
  std::swap(out_shape[static_cast<size_t>(axis_a)], out_shape[static_cast<size_t>(axis_b)]);

  std::vector<int64_t> in_strides(static_cast<size_t>(r), 1);
  for (int i = r - 2; i >= 0; --i)
    in_strides[static_cast<size_t>(i)] = in_strides[static_cast<size_t>(i + 1)] * x.shape()[static_cast<size_t>(i + 1)];
  std::vector<int64_t> perm_strides(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) perm_strides[static_cast<size_t>(i)] = in_strides[static_cast<size_t>(i)];
  std::swap(perm_strides[static_cast<size_t>(axis_a)], perm_strides[static_cast<size_t>(axis_b)]);

  const int64_t n = x.numel();
  std::vector<double> out(static_cast<size_t>(n));
  const double* p = x.data();
  std::vector<int64_t> idx(static_cast<size_t>(r), 0);
  for (int64_t flat = 0; flat < n; ++flat) {
    int64_t src = 0;
    for (int i = 0; i < r; ++i) src += idx[static_cast<size_t>(i)] * perm_strides[static_cast<size_t>(i)];
    out[static_cast<size_t>(flat)] = p[src];
    for (int i = r - 1; i >= 0; --i) {
      if (++idx[static_cast<size_t>(i)] < out_shape[static_cast<size_t>(i)]) break;
      idx[static_cast<size_t>(i)] = 0;
    }
  }
  Tensor value = Tensor::make(std::move(out_shape), std::move(out));
  return detail::record(std::move(value), {&x}, [axis_a, axis_b](const Tensor& g) {
    return std::vector<Tensor>{transpose(g.detached(), axis_a, axis_b)};
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw std::invalid_argument("reshape: element count mismatch, " + shape_str(x.shape()) + " -> " +
                                shape_str(shape));
  }
  Tensor value = Tensor::from(std::move(shape), x.to_vector());
  Shape orig = x.shape();
  return detail::record(std::move(value), {&x}, [orig = std::move(orig)](const Tensor& g) {
    return std::vector<Tensor>{Tensor::from(orig, g.to_vector())};
  });
}

Tensor concat(const std::vector<Tensor>& xs, int axis) {
  if (xs.empty()) throw std::invalid_argument("concat: no inputs");
  const int r = xs[0].rank();
  axis = normalize_axis(axis, r);
  Shape out_shape = xs[0].shape();
  int64_t total = 0;
  for (const Tensor& t : xs) {
    if (t.rank() != r) throw std::invalid_argument("concat: rank mismatch");
    for (int i = 0; i < r; ++i) {
      if (i != axis && t.shape()[static_cast<size_t>(i)] != out_shape[static_cast<size_t>(i)]) {
        throw std::invalid_argument("concat: shape mismatch off the concat axis");
      }
    }
    total += t.shape()[static_cast<size_t>(axis)];
  }
  out_shape[static_cast<size_t>(axis)] = total;

  const AxisView v = axis_view(out_shape, axis);
  std::vector<double> out(static_cast<size_t>(shape_numel(out_shape)));
  int64_t offset = 0;
  for (const Tensor& t : xs) {
    const int64_t tn = t.shape()[static_cast<size_t>(axis)];
    const double* p = t.data();
    for (int64_t o = 0; o < v.outer; ++o) {
      std::copy(p + o * tn * v.inner, p + (o + 1) * tn * v.inner,
                out.begin() + (o * total + offset) * v.inner);
    }
    offset += tn;
  }
  Tensor value = Tensor::make(out_shape, std::move(out));

  std::vector<const Tensor*> inputs;
  std::vector<int64_t> extents;
  inputs.reserve(xs.size());
  for (const Tensor& t : xs) {
    inputs.push_back(&t);
    extents.push_back(t.shape()[static_cast<size_t>(axis)]);
  }
  return detail::record(std::move(value), inputs, [axis, extents](const Tensor& g) {
    std::vector<Tensor> out;
    out.reserve(extents.size());
    int64_t start = 0;
    for (int64_t e : extents) {
      out.push_back(slice(g.detached(), axis, start, e));
      start += e;
    }
    return out;
  });
}

Tensor slice(const Tensor& x, int axis, int64_t start, int64_t len) {
  const int r = x.rank();
  axis = normalize_axis(axis, r);
  const int64_t extent = x.shape()[static_cast<size_t>(axis)];
  if (start < 0 || len < 0 || start + len > extent) {
    throw std::invalid_argument("slice: range [" + std::to_string(start) + "," + std::to_string(start + len) +
                                ") out of bounds for extent " + std::to_string(extent));
  }
  Shape out_shape = x.shape();
  out_shape[static_cast<size_t>(axis)] = len;
  const AxisView v = axis_view(x.shape(), axis);
  std::vector<double> out(static_cast<size_t>(shape_numel(out_shape)));
  const double* p = x.data();
  for (int64_t o = 0; o < v.outer; ++o) {
    std::copy(p + (o * extent + start) * v.inner, p + (o * extent + start + len) * v.inner,
              out.begin() + o * len * v.inner);
  }
  Tensor value = Tensor::make(std::move(out_shape), std::move(out));
  Shape orig = x.shape();
  return detail::record(std::move(value), {&x}, [axis, start, len, extent, v, orig](const Tensor& g) {
    std::vector<double> d(static_cast<size_t>(shape_numel(orig)), 0.0);
    const double* pg = g.data();
    for (int64_t o = 0; o < v.outer; ++o) {
      std::copy(pg + o * len * v.inner, pg + (o + 1) * len * v.inner,
                d.begin() + (o * extent + start) * v.inner);
    }
    return std::vector<Tensor>{Tensor::from(orig, std::move(d))};
  });
}

Tensor masked_fill(const Tensor& x, const Tensor& mask, double value) {
  if (mask.shape() != x.shape()) {
    throw std::invalid_argument("masked_fill: mask shape " + shape_str(mask.shape()) + " must equal input shape " +
                                shape_str(x.shape()));
  }
  const int64_t n = x.numel();
  std::vector<double> out(static_cast<size_t>(n));
  const double* p = x.data();
  const double* pm = mask.data();
  for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(i)] = pm[i] != 0.0 ? value : p[i];
  Tensor v = Tensor::make(x.shape(), std::move(out));
  Tensor mv = mask.detached();
  return detail::record(std::move(v), {&x}, [mv](const Tensor& g) {
    std::vector<double> d(static_cast<size_t>(g.numel()));
    const double* pg = g.data();
    const double* pm = mv.data();
    for (size_t i = 0; i < d.size(); ++i) d[i] = pm[i] != 0.0 ? 0.0 : pg[i];
    return std::vector<Tensor>{Tensor::from(g.shape(), std::move(d))};
  });
}

Tensor rel_shift(const Tensor& x) {
  const MatShape m = mat_split(x.shape(), "rel_shift");
  const int64_t T = m.rows;
  if (m.cols != 2 * T - 1) {
    throw std::invalid_argument("rel_shift: expected last axes [T, 2T-1], got " + shape_str(x.shape()));
  }
  Shape out_shape = m.batch;
  out_shape.push_back(T);
  out_shape.push_back(T);
  const int64_t nb = shape_numel(m.batch);
  std::vector<double> out(static_cast<size_t>(nb * T * T));
  const double* p = x.data();
  for (int64_t bi = 0; bi < nb; ++bi) {
    const double* src = p + bi * T * (2 * T - 1);
    double* dst = out.data() + bi * T * T;
    for (int64_t i = 0; i < T; ++i)
      for (int64_t j = 0; j < T; ++j) dst[i * T + j] = src[i * (2 * T - 1) + (T - 1 + i - j)];
  }
  Tensor value = Tensor::make(std::move(out_shape), std::move(out));
  Shape orig = x.shape();
  return detail::record(std::move(value), {&x}, [T, nb, orig](const Tensor& g) {
    std::vector<double> d(static_cast<size_t>(shape_numel(orig)), 0.0);
    const double* pg = g.data();
    for (int64_t bi = 0; bi < nb; ++bi) {
      const double* gsrc = pg + bi * T * T;
      double* dst = d.data() + bi * T * (2 * T - 1);
      for (int64_t i = 0; i < T; ++i)
        for (int64_t j = 0; j < T; ++j) dst[i * (2 * T - 1) + (T - 1 + i - j)] += gsrc[i * T + j];
    }
    return std::vector<Tensor>{Tensor::from(orig, std::move(d))};
  });
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  const double* p = x.data();
  for (int64_t i = 0; i < x.numel(); ++i) acc += p[i];
  Tensor value = Tensor::make({}, {acc});
  Shape orig = x.shape();
  return detail::record(std::move(value), {&x}, [orig](const Tensor& g) {
    return std::vector<Tensor>{Tensor::full(orig, g.flat(0))};
  });
}

Tensor sum_axis(const Tensor& x, int axis, bool keepdim) {
  const int r = x.rank();
  axis = normalize_axis(axis, r);
  const AxisView v = axis_view(x.shape(), axis);
  Shape out_shape;
  for (int i = 0; i < r; ++i) {
    if (i == axis) {
      if (keepdim) out_shape.push_back(1);
    } else {
      out_shape.push_back(x.shape()[static_cast<size_t>(i)]);
    }
  }
  std::vector<double> out(static_cast<size_t>(v.outer * v.inner), 0.0);
  const double* p = x.data();
  for (int64_t o = 0; o < v.outer; ++o)
    for (int64_t a = 0; a < v.n; ++a)
      for (int64_t i = 0; i < v.inner; ++i) out[static_cast<size_t>(o * v.inner + i)] += p[(o * v.n + a) * v.inner + i];
  Tensor value = Tensor::make(std::move(out_shape), std::move(out));
  Shape orig = x.shape();
  return detail::record(std::move(value), {&x}, [v, orig](const Tensor& g) {
    std::vector<double> d(static_cast<size_t>(shape_numel(orig)));
    const double* pg = g.data();
    for (int64_t o = 0; o < v.outer; ++o)
      for (int64_t a = 0; a < v.n; ++a)
        for (int64_t i = 0; i < v.inner; ++i) d[static_cast<size_t>((o * v.n + a) * v.inner + i)] = pg[o * v.inner + i];
    return std::vector<Tensor>{Tensor::from(orig, std::move(d))};
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor mean_axis(const Tensor& x, int axis, bool keepdim) {
  const int64_t n = x.extent(axis);
  return scale(sum_axis(x, axis, keepdim), 1.0 / static_cast<double>(n));
}

Tensor softmax(const Tensor& x, int axis) {
  const AxisView v = axis_view(x.shape(), axis);
  std::vector<double> out(static_cast<size_t>(x.numel()));
  const double* p = x.data();
  for (int64_t o = 0; o < v.outer; ++o) {
    for (int64_t i = 0; i < v.inner; ++i) {
      double mx = kNegInf;
      for (int64_t a = 0; a < v.n; ++a) mx = std::max(mx, p[(o * v.n + a) * v.inner + i]);
      double denom = 0.0;
      for (int64_t a = 0; a < v.n; ++a) denom += std::exp(p[(o * v.n + a) * v.inner + i] - mx);
      for (int64_t a = 0; a < v.n; ++a) {
        out[static_cast<size_t>((o * v.n + a) * v.inner + i)] = std::exp(p[(o * v.n + a) * v.inner + i] - mx) / denom;
      }
    }
  }
  Tensor value = Tensor::make(x.shape(), std::move(out));
  Tensor yv = value.detached();
  return detail::record(std::move(value), {&x}, [yv, v](const Tensor& g) {
    std::vector<double> d(static_cast<size_t>(g.numel()));
    const double* pg = g.data();
    const double* py = yv.data();
    for (int64_t o = 0; o < v.outer; ++o) {
      for (int64_t i = 0; i < v.inner; ++i) {
        double dot = 0.0;
        for (int64_t a = 0; a < v.n; ++a) {
          const int64_t k = (o * v.n + a) * v.inner + i;
          dot += pg[k] * py[k];
        }
        for (int64_t a = 0; a < v.n; ++a) {
          const int64_t k = (o * v.n + a) * v.inner + i;
          d[static_cast<size_t>(k)] = py[k] * (pg[k] - dot);
        }
      }
    }
    return std::vector<Tensor>{Tensor::from(g.shape(), std::move(d))};
  });
}

Tensor log_softmax(const Tensor& x, int axis) {
  const AxisView v = axis_view(x.shape(), axis);
  std::vector<double> out(static_cast<size_t>(x.numel()));
  const double* p = x.data();
  for (int64_t o = 0; o < v.outer; ++o) {
    for (int64_t i = 0; i < v.inner; ++i) {
      double mx = kNegInf;
      for (int64_t a = 0; a < v.n; ++a) mx = std::max(mx, p[(o * v.n + a) * v.inner + i]);
      double denom = 0.0;
      for (int64_t a = 0; a < v.n; ++a) denom += std::exp(p[(o * v.n + a) * v.inner + i] - mx);
      const double lse = mx + std::log(denom);
      for (int64_t a = 0; a < v.n; ++a) {
        const int64_t k = (o * v.n + a) * v.inner + i;
        out[static_cast<size_t>(k)] = p[k] - lse;
      }
    }
  }
  Tensor value = Tensor::make(x.shape(), std::move(out));
  Tensor yv = value.detached();
  return detail::record(std::move(value), {&x}, [yv, v](const Tensor& g) {
    std::vector<double> d(static_cast<size_t>(g.numel()));
    const double* pg = g.data();
    const double* py = yv.data();
    for (int64_t o = 0; o < v.outer; ++o) {
      for (int64_t i = 0; i < v.inner; ++i) {
        double gsum = 0.0;
        for (int64_t a = 0; a < v.n; ++a) gsum += pg[(o * v.n + a) * v.inner + i];
        for (int64_t a = 0; a < v.n; ++a) {
          const int64_t k = (o * v.n + a) * v.inner + i;
          d[static_cast<size_t>(k)] = pg[k] - std::exp(py[k]) * gsum;
        }
      }
    }
    return std::vector<Tensor>{Tensor::from(g.shape(), std::move(d))};
  });
}

Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (eps <= 0.0) throw std::invalid_argument("layernorm: eps must be positive");
  const int64_t d = x.shape().back();
  if (gain.numel() != d || bias.numel() != d) {
    throw std::invalid_argument("layernorm: gain/bias must match the feature extent " + std::to_string(d));
  }
  const int64_t rows = x.numel() / d;
  std::vector<double> out(static_cast<size_t>(x.numel()));
  std::vector<double> xhat(static_cast<size_t>(x.numel()));
  std::vector<double> inv_std(static_cast<size_t>(rows));
  const double* p = x.data();
  const double* pg = gain.data();
  const double* pb = bias.data();
  for (int64_t r = 0; r < rows; ++r) {
    const double* row = p + r * d;
    double mu = 0.0;
    for (int64_t i = 0; i < d; ++i) mu += row[i];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (int64_t i = 0; i < d; ++i) {
      const double c = row[i] - mu;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<size_t>(r)] = is;
    for (int64_t i = 0; i < d; ++i) {
      const double h = (row[i] - mu) * is;
      xhat[static_cast<size_t>(r * d + i)] = h;
      out[static_cast<size_t>(r * d + i)] = h * pg[i] + pb[i];
    }
  }
  Tensor value = Tensor::make(x.shape(), std::move(out));
  Tensor gv = gain.detached();
  Shape xshape = x.shape();
  Shape gshape = gain.shape();
  Shape bshape = bias.shape();
  return detail::record(
      std::move(value), {&x, &gain, &bias},
      [xhat = std::move(xhat), inv_std = std::move(inv_std), gv, rows, d, xshape, gshape, bshape](const Tensor& g) {
        const double* pg = g.data();
        const double* pgain = gv.data();
        std::vector<double> dx(static_cast<size_t>(rows * d));
        std::vector<double> dgain(static_cast<size_t>(d), 0.0);
        std::vector<double> dbias(static_cast<size_t>(d), 0.0);
        for (int64_t r = 0; r < rows; ++r) {
          const double* grow = pg + r * d;
          const double* hrow = xhat.data() + r * d;
          double m1 = 0.0, m2 = 0.0;
          for (int64_t i = 0; i < d; ++i) {
            const double dh = grow[i] * pgain[i];
            m1 += dh;
            m2 += dh * hrow[i];
            dgain[static_cast<size_t>(i)] += grow[i] * hrow[i];
            dbias[static_cast<size_t>(i)] += grow[i];
          }
          m1 /= static_cast<double>(d);
          m2 /= static_cast<double>(d);
          const double is = inv_std[static_cast<size_t>(r)];
          for (int64_t i = 0; i < d; ++i) {
            const double dh = grow[i] * pgain[i];
            dx[static_cast<size_t>(r * d + i)] = (dh - m1 - hrow[i] * m2) * is;
          }
        }
        std::vector<Tensor> outg(3);
        outg[0] = Tensor::from(xshape, std::move(dx));
        outg[1] = Tensor::from(gshape, std::move(dgain));
        outg[2] = Tensor::from(bshape, std::move(dbias));
        return outg;
      });
}

Tensor glu(const Tensor& x) {
  const int64_t d2 = x.shape().back();
  if (d2 % 2 != 0) throw std::invalid_argument("glu: last axis extent must be even, got " + std::to_string(d2));
  const int64_t d = d2 / 2;
  const int64_t rows = x.numel() / d2;
  Shape out_shape = x.shape();
  out_shape.back() = d;
  std::vector<double> out(static_cast<size_t>(rows * d));
  const double* p = x.data();
  for (int64_t r = 0; r < rows; ++r) {
    for (int64_t i = 0; i < d; ++i) {
      out[static_cast<size_t>(r * d + i)] = p[r * d2 + i] * stable_sigmoid(p[r * d2 + d + i]);
    }
  }
  Tensor value = Tensor::make(std::move(out_shape), std::move(out));
  Tensor xv = x.detached();
  return detail::record(std::move(value), {&x}, [xv, rows, d, d2](const Tensor& g) {
    const double* pg = g.data();
    const double* px = xv.data();
    std::vector<double> dx(static_cast<size_t>(rows * d2));
    for (int64_t r = 0; r < rows; ++r) {
      for (int64_t i = 0; i < d; ++i) {
        const double s = stable_sigmoid(px[r * d2 + d + i]);
        const double gv = pg[r * d + i];
        dx[static_cast<size_t>(r * d2 + i)] = gv * s;
        dx[static_cast<size_t>(r * d2 + d + i)] = gv * px[r * d2 + i] * s * (1.0 - s);
      }
    }
    return std::vector<Tensor>{Tensor::from(xv.shape(), std::move(dx))};
  });
}

namespace {

struct SamePad {
  int64_t out_len = 0;
  int64_t pad_lo = 0;
};

SamePad same_pad(int64_t len, int64_t kernel, int64_t stride) {
  SamePad p;
  p.out_len = (len - 1) / stride + 1;
  const int64_t total = std::max<int64_t>(0, (p.out_len - 1) * stride + kernel - len);
  p.pad_lo = total / 2;
  return p;
}

}  // namespace

Tensor conv1d_depthwise(const Tensor& x, const Tensor& w, const Tensor& b, int stride) {
  if (x.rank() != 2 || w.rank() != 2) throw std::invalid_argument("conv1d_depthwise: expected x [T,C], w [C,k]");
  const int64_t T = x.shape()[0], C = x.shape()[1];
  const int64_t k = w.shape()[1];
  if (w.shape()[0] != C || b.numel() != C) {
    throw std::invalid_argument("conv1d_depthwise: channel mismatch between x " + shape_str(x.shape()) + " and w " +
                                shape_str(w.shape()));
  }
  const SamePad pad = same_pad(T, k, stride);
  std::vector<double> out(static_cast<size_t>(pad.out_len * C));
  const double* px = x.data();
  const double* pw = w.data();
  const double* pb = b.data();
  for (int64_t t = 0; t < pad.out_len; ++t) {
    for (int64_t c = 0; c < C; ++c) {
      double acc = pb[c];
      for (int64_t j = 0; j < k; ++j) {
        const int64_t in = t * stride + j - pad.pad_lo;
        if (in >= 0 && in < T) acc += pw[c * k + j] * px[in * C + c];
      }
      out[static_cast<size_t>(t * C + c)] = acc;
    }
  }
  Tensor value = Tensor::make({pad.out_len, C}, std::move(out));
  Tensor xv = x.detached(), wv = w.detached();
  Shape bshape = b.shape();
  return detail::record(std::move(value), {&x, &w, &b}, [xv, wv, bshape, T, C, k, stride, pad](const Tensor& g) {
    const double* pg = g.data();
    const double* px = xv.data();
    const double* pw = wv.data();
    std::vector<double> dx(static_cast<size_t>(T * C), 0.0);
    std::vector<double> dw(static_cast<size_t>(C * k), 0.0);
    std::vector<double> db(static_cast<size_t>(C), 0.0);
    for (int64_t t = 0; t < pad.out_len; ++t) {
      for (int64_t c = 0; c < C; ++c) {
        const double gv = pg[t * C + c];
        db[static_cast<size_t>(c)] += gv;
        for (int64_t j = 0; j < k; ++j) {
          const int64_t in = t * stride + j - pad.pad_lo;
          if (in >= 0 && in < T) {
            dx[static_cast<size_t>(in * C + c)] += gv * pw[c * k + j];
            dw[static_cast<size_t>(c * k + j)] += gv * px[in * C + c];
          }
        }
      }
    }
    std::vector<Tensor> outg(3);
    outg[0] = Tensor::from(xv.shape(), std::move(dx));
    outg[1] = Tensor::from(wv.shape(), std::move(dw));
    outg[2] = Tensor::from(bshape, std::move(db));
    return outg;
  });
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride_h, int stride_w) {
  const bool batched = x.rank() == 4;
  if (x.rank() != 3 && x.rank() != 4) throw std::invalid_argument("conv2d: expected x [Cin,H,W] or [B,Cin,H,W]");
  if (w.rank() != 4) throw std::invalid_argument("conv2d: expected w [Cout,Cin,kh,kw]");
  const int64_t B = batched ? x.shape()[0] : 1;
  const int64_t Ci = x.shape()[batched ? 1 : 0];
  const int64_t H = x.shape()[batched ? 2 : 1];
  const int64_t W = x.shape()[batched ? 3 : 2];
  const int64_t Co = w.shape()[0], kh = w.shape()[2], kw = w.shape()[3];
  if (w.shape()[1] != Ci || b.numel() != Co) {
    throw std::invalid_argument("conv2d: channel mismatch between x " + shape_str(x.shape()) + " and w " +
                                shape_str(w.shape()));
  }
  const SamePad ph = same_pad(H, kh, stride_h);
  const SamePad pw_ = same_pad(W, kw, stride_w);
  const int64_t Ho = ph.out_len, Wo = pw_.out_len;

  Shape out_shape = batched ? Shape{B, Co, Ho, Wo} : Shape{Co, Ho, Wo};
  std::vector<double> out(static_cast<size_t>(B * Co * Ho * Wo));
  const double* px = x.data();
  const double* pwv = w.data();
  const double* pb = b.data();
  for (int64_t n = 0; n < B; ++n) {
    for (int64_t co = 0; co < Co; ++co) {
      for (int64_t ho = 0; ho < Ho; ++ho) {
        for (int64_t wo = 0; wo < Wo; ++wo) {
          double acc = pb[co];
          for (int64_t ci = 0; ci < Ci; ++ci) {
            for (int64_t i = 0; i < kh; ++i) {
              const int64_t hi = ho * stride_h + i - ph.pad_lo;
              if (hi < 0 || hi >= H) continue;
              const double* xrow = px + ((n * Ci + ci) * H + hi) * W;
              const double* wrow = pwv + ((co * Ci + ci) * kh + i) * kw;
              for (int64_t j = 0; j < kw; ++j) {
                const int64_t wi = wo * stride_w + j - pw_.pad_lo;
                if (wi >= 0 && wi < W) acc += wrow[j] * xrow[wi];
              }
            }
          }
          out[static_cast<size_t>(((n * Co + co) * Ho + ho) * Wo + wo)] = acc;
        }
      }
    }
  }
  Tensor value = Tensor::make(std::move(out_shape), std::move(out));
  Tensor xv = x.detached(), wv = w.detached();
  Shape bshape = b.shape();
  return detail::record(
      std::move(value), {&x, &w, &b},
      [xv, wv, bshape, B, Ci, H, W, Co, kh, kw, stride_h, stride_w, ph, pw_, Ho, Wo](const Tensor& g) {
        const double* pg = g.data();
        const double* px = xv.data();
        const double* pwv = wv.data();
        std::vector<double> dx(static_cast<size_t>(B * Ci * H * W), 0.0);
        std::vector<double> dw(static_cast<size_t>(Co * Ci * kh * kw), 0.0);
        std::vector<double> db(static_cast<size_t>(Co), 0.0);
        for (int64_t n = 0; n < B; ++n) {
          for (int64_t co = 0; co < Co; ++co) {
            for (int64_t ho = 0; ho < Ho; ++ho) {
              for (int64_t wo = 0; wo < Wo; ++wo) {
                const double gv = pg[((n * Co + co) * Ho + ho) * Wo + wo];
                if (gv == 0.0) continue;
                db[static_cast<size_t>(co)] += gv;
                for (int64_t ci = 0; ci < Ci; ++ci) {
                  for (int64_t i = 0; i < kh; ++i) {
                    const int64_t hi = ho * stride_h + i - ph.pad_lo;
                    if (hi < 0 || hi >= H) continue;
                    for (int64_t j = 0; j < kw; ++j) {
                      const int64_t wi = wo * stride_w + j - pw_.pad_lo;
                      if (wi < 0 || wi >= W) continue;
                      dx[static_cast<size_t>(((n * Ci + ci) * H + hi) * W + wi)] +=
                          gv * pwv[((co * Ci + ci) * kh + i) * kw + j];
                      dw[static_cast<size_t>(((co * Ci + ci) * kh + i) * kw + j)] +=
                          gv * px[((n * Ci + ci) * H + hi) * W + wi];
                    }
                  }
                }
              }
            }
          }
        }
        std::vector<Tensor> outg(3);
        outg[0] = Tensor::from(xv.shape(), std::move(dx));
        outg[1] = Tensor::from(wv.shape(), std::move(dw));
        outg[2] = Tensor::from(bshape, std::move(db));
        return outg;
      });
}

Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& b, int stride_t, int stride_h, int stride_w) {
  if (x.rank() != 4) throw std::invalid_argument("conv3d: expected x [Cin,T,H,W]");
  if (w.rank() != 5) throw std::invalid_argument("conv3d: expected w [Cout,Cin,kt,kh,kw]");
  const int64_t Ci = x.shape()[0], T = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  const int64_t Co = w.shape()[0], kt = w.shape()[2], kh = w.shape()[3], kw = w.shape()[4];
  if (w.shape()[1] != Ci || b.numel() != Co) throw std::invalid_argument("conv3d: channel mismatch");
  const SamePad pt = same_pad(T, kt, stride_t);
  const SamePad ph = same_pad(H, kh, stride_h);
  const SamePad pw_ = same_pad(W, kw, stride_w);
  const int64_t To = pt.out_len, Ho = ph.out_len, Wo = pw_.out_len;

  std::vector<double> out(static_cast<size_t>(Co * To * Ho * Wo));
  const double* px = x.data();
  const double* pwv = w.data();
  const double* pb = b.data();
  for (int64_t co = 0; co < Co; ++co) {
    for (int64_t to = 0; to < To; ++to) {
      for (int64_t ho = 0; ho < Ho; ++ho) {
        for (int64_t wo = 0; wo < Wo; ++wo) {
          double acc = pb[co];
          for (int64_t ci = 0; ci < Ci; ++ci) {
            for (int64_t a = 0; a < kt; ++a) {
              const int64_t ti = to * stride_t + a - pt.pad_lo;
              if (ti < 0 || ti >= T) continue;
              for (int64_t i = 0; i < kh; ++i) {
                const int64_t hi = ho * stride_h + i - ph.pad_lo;
                if (hi < 0 || hi >= H) continue;
                const double* xrow = px + (((ci * T + ti) * H + hi) * W);
                const double* wrow = pwv + ((((co * Ci + ci) * kt + a) * kh + i) * kw);
                for (int64_t j = 0; j < kw; ++j) {
                  const int64_t wi = wo * stride_w + j - pw_.pad_lo;
                  if (wi >= 0 && wi < W) acc += wrow[j] * xrow[wi];
                }
              }
            }
          }
          out[static_cast<size_t>(((co * To + to) * Ho + ho) * Wo + wo)] = acc;
        }
      }
    }
  }
  Tensor value = Tensor::make({Co, To, Ho, Wo}, std::move(out));
  Tensor xv = x.detached(), wv = w.detached();
  Shape bshape = b.shape();
  return detail::record(
      std::move(value), {&x, &w, &b},
      [xv, wv, bshape, Ci, T, H, W, Co, kt, kh, kw, stride_t, stride_h, stride_w, pt, ph, pw_, To, Ho,
       Wo](const Tensor& g) {
        const double* pg = g.data();
        const double* px = xv.data();
        const double* pwv = wv.data();
        std::vector<double> dx(static_cast<size_t>(Ci * T * H * W), 0.0);
        std::vector<double> dw(static_cast<size_t>(Co * Ci * kt * kh * kw), 0.0);
        std::vector<double> db(static_cast<size_t>(Co), 0.0);
        for (int64_t co = 0; co < Co; ++co) {
          for (int64_t to = 0; to < To; ++to) {
            for (int64_t ho = 0; ho < Ho; ++ho) {
              for (int64_t wo = 0; wo < Wo; ++wo) {
                const double gv = pg[((co * To + to) * Ho + ho) * Wo + wo];
                if (gv == 0.0) continue;
                db[static_cast<size_t>(co)] += gv;
                for (int64_t ci = 0; ci < Ci; ++ci) {
                  for (int64_t a = 0; a < kt; ++a) {
                    const int64_t ti = to * stride_t + a - pt.pad_lo;
                    if (ti < 0 || ti >= T) continue;
                    for (int64_t i = 0; i < kh; ++i) {
                      const int64_t hi = ho * stride_h + i - ph.pad_lo;
                      if (hi < 0 || hi >= H) continue;
                      for (int64_t j = 0; j < kw; ++j) {
                        const int64_t wi = wo * stride_w + j - pw_.pad_lo;
                        if (wi < 0 || wi >= W) continue;
                        dx[static_cast<size_t>(((ci * T + ti) * H + hi) * W + wi)] +=
                            gv * pwv[(((co * Ci + ci) * kt + a) * kh + i) * kw + j];
                        dw[static_cast<size_t>((((co * Ci + ci) * kt + a) * kh + i) * kw + j)] +=
                            gv * px[((ci * T + ti) * H + hi) * W + wi];
                      }
                    }
                  }
                }
              }
            }
          }
        }
        std::vector<Tensor> outg(3);
        outg[0] = Tensor::from(xv.shape(), std::move(dx));
        outg[1] = Tensor::from(wv.shape(), std::move(dw));
        outg[2] = Tensor::from(bshape, std::move(db));
        return outg;
      });
}

Tensor avg_pool_time(const Tensor& x, int stride) {
  if (x.rank() != 2) throw std::invalid_argument("avg_pool_time: expected x [T,D]");
  if (stride < 1) throw std::invalid_argument("avg_pool_time: stride must be >= 1");
  const int64_t T = x.shape()[0], D = x.shape()[1];
  const int64_t To = T / stride;
  if (To < 1) throw std::invalid_argument("avg_pool_time: input shorter than one window");
  std::vector<double> out(static_cast<size_t>(To * D), 0.0);
  const double* p = x.data();
  const double inv = 1.0 / static_cast<double>(stride);
  for (int64_t t = 0; t < To; ++t)
    for (int64_t s = 0; s < stride; ++s)
      for (int64_t i = 0; i < D; ++i) out[static_cast<size_t>(t * D + i)] += p[(t * stride + s) * D + i] * inv;
  Tensor value = Tensor::make({To, D}, std::move(out));
  Shape orig = x.shape();
  return detail::record(std::move(value), {&x}, [orig, To, D, stride, inv](const Tensor& g) {
    std::vector<double> d(static_cast<size_t>(shape_numel(orig)), 0.0);
    const double* pg = g.data();
    for (int64_t t = 0; t < To; ++t)
      for (int64_t s = 0; s < stride; ++s)
        for (int64_t i = 0; i < D; ++i) d[static_cast<size_t>((t * stride + s) * D + i)] = pg[t * D + i] * inv;
    return std::vector<Tensor>{Tensor::from(orig, std::move(d))};
  });
}

Tensor ctc_loss(const Tensor& logp, const std::vector<int>& labels) {
  if (logp.rank() != 2) throw std::invalid_argument("ctc_loss: expected logp [T,V]");
  const int64_t T = logp.shape()[0], V = logp.shape()[1];
  for (int l : labels) {
    if (l < 1 || l >= V) {
      throw std::invalid_argument("ctc_loss: label " + std::to_string(l) + " outside [1," + std::to_string(V - 1) +
                                  "]");
    }
  }
  const int64_t U = static_cast<int64_t>(labels.size());
  const int64_t S = 2 * U + 1;
  auto lab = [&](int64_t s) -> int64_t { return (s % 2 == 0) ? 0 : labels[static_cast<size_t>(s / 2)]; };

  const double* p = logp.data();
  // Forward variables in log space, alpha[t][s] including the emission at t.
  std::vector<double> alpha(static_cast<size_t>(T * S), kNegInf);
  alpha[0] = p[0 * V + 0];
  if (S > 1) alpha[1] = p[0 * V + lab(1)];
  for (int64_t t = 1; t < T; ++t) {
    for (int64_t s = 0; s < S; ++s) {
      double acc = alpha[static_cast<size_t>((t - 1) * S + s)];
      if (s >= 1) acc = log_add(acc, alpha[static_cast<size_t>((t - 1) * S + s - 1)]);
      if (s >= 2 && lab(s) != 0 && lab(s) != lab(s - 2)) {
        acc = log_add(acc, alpha[static_cast<size_t>((t - 1) * S + s - 2)]);
      }
      alpha[static_cast<size_t>(t * S + s)] = acc == kNegInf ? kNegInf : acc + p[t * V + lab(s)];
    }
  }
  double log_total = alpha[static_cast<size_t>((T - 1) * S + S - 1)];
  if (S > 1) log_total = log_add(log_total, alpha[static_cast<size_t>((T - 1) * S + S - 2)]);
  const double loss = -log_total;

  Tensor value = Tensor::make({}, {loss});
  Tensor lv = logp.detached();
  return detail::record(std::move(value), {&logp},
                        [lv, labels, alpha = std::move(alpha), log_total, T, V, S, loss](const Tensor& g) {
    auto lab2 = [&](int64_t s) -> int64_t { return (s % 2 == 0) ? 0 : labels[static_cast<size_t>(s / 2)]; };
    std::vector<double> d(static_cast<size_t>(T * V), 0.0);
    if (!std::isfinite(loss)) {
      // No collapsing path: the loss is flat at +inf, define the gradient 0.
      return std::vector<Tensor>{Tensor::from(lv.shape(), std::move(d))};
    }
    const double* p = lv.data();
    // beta[t][s] excludes the emission at t, so alpha_t + beta_t sums to the
    // total path mass at every t.
    std::vector<double> beta(static_cast<size_t>(T * S), kNegInf);
    beta[static_cast<size_t>((T - 1) * S + S - 1)] = 0.0;
    if (S > 1) beta[static_cast<size_t>((T - 1) * S + S - 2)] = 0.0;
    for (int64_t t = T - 2; t >= 0; --t) {
      for (int64_t s = 0; s < S; ++s) {
        double acc = beta[static_cast<size_t>((t + 1) * S + s)] + p[(t + 1) * V + lab2(s)];
        if (s + 1 < S) {
          acc = log_add(acc, beta[static_cast<size_t>((t + 1) * S + s + 1)] + p[(t + 1) * V + lab2(s + 1)]);
        }
        if (s + 2 < S && lab2(s + 2) != 0 && lab2(s + 2) != lab2(s)) {
          acc = log_add(acc, beta[static_cast<size_t>((t + 1) * S + s + 2)] + p[(t + 1) * V + lab2(s + 2)]);
        }
        beta[static_cast<size_t>(t * S + s)] = acc;
      }
    }
    const double gscale = g.flat(0);
    for (int64_t t = 0; t < T; ++t) {
      // loss gradient wrt logp[t,k]: -(sum of posteriors of states with label k)
      std::vector<double> by_label(static_cast<size_t>(V), kNegInf);
      for (int64_t s = 0; s < S; ++s) {
        const double lp = alpha[static_cast<size_t>(t * S + s)] + beta[static_cast<size_t>(t * S + s)];
        const int64_t k = lab2(s);
        by_label[static_cast<size_t>(k)] = log_add(by_label[static_cast<size_t>(k)], lp);
      }
      for (int64_t k = 0; k < V; ++k) {
        if (by_label[static_cast<size_t>(k)] == kNegInf) continue;
        d[static_cast<size_t>(t * V + k)] = -std::exp(by_label[static_cast<size_t>(k)] - log_total) * gscale;
      }
    }
    return std::vector<Tensor>{Tensor::from(lv.shape(), std::move(d))};
  });
}

}  // namespace dcim

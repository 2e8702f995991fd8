#include "alike/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Core>

namespace alike {

BilinearCell bilinear_cell(double x, double y, std::int64_t width, std::int64_t height) {
  BilinearCell c;
  auto axis = [](double v, std::int64_t n, std::int64_t& i0, std::int64_t& i1, double& f) {
    if (n <= 1) {
      i0 = i1 = 0;
      f = 0.0;
      return;
    }
    auto lo = static_cast<std::int64_t>(std::floor(v));
    lo = std::clamp<std::int64_t>(lo, 0, n - 2);
    i0 = lo;
    i1 = lo + 1;
    f = v - static_cast<double>(lo);
  };
  axis(x, width, c.x0, c.x1, c.fx);
  axis(y, height, c.y0, c.y1, c.fy);
  return c;
}

namespace ops {
namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using CMapR = Eigen::Map<const MatR<T>>;

constexpr double kNormEps = 1e-12;

template <typename T>
Graph<T>& graph_of(Var<T> a) {
  if (!a.valid()) throw UsageError("operation on an unset variable");
  return *a.graph;
}

template <typename T>
Graph<T>& graph_of(Var<T> a, Var<T> b) {
  if (!a.valid() || !b.valid() || a.graph != b.graph) {
    throw UsageError("operands belong to different graphs");
  }
  return *a.graph;
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ConfigError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                      shape_string(b.shape()));
  }
}

template <typename T>
void require_rank(const Tensor<T>& a, int rank, const char* op) {
  if (a.rank() != rank) {
    throw ConfigError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                      shape_string(a.shape()));
  }
}

// `f` maps x -> y, `df` maps x -> dy/dx.
template <typename T, typename F, typename DF>
Var<T> unary(Var<T> x, F f, DF df) {
  Graph<T>& g = graph_of(x);
  const Tensor<T>& xv = x.value();
  Tensor<T> y(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) y[i] = f(xv[i]);
  return g.record(std::move(y), {x}, [x, df](Graph<T>& g, const Tensor<T>& gy) {
    const Tensor<T>& xv = g.value(x);
    Tensor<T>& gx = g.grad_buffer(x);
    for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += gy[i] * df(xv[i]);
  });
}

std::int64_t rows_of(const Shape& s) { return s.empty() ? 1 : s[0]; }

std::int64_t cols_of(const Shape& s) {
  std::int64_t n = 1;
  for (std::size_t i = 1; i < s.size(); ++i) n *= s[i];
  return n;
}

}  // namespace

template <typename T>
Var<T> relu(Var<T> x) {
  return unary(x, [](T v) { return v > T(0) ? v : T(0); },
               [](T v) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> sigmoid(Var<T> x) {
  auto f = [](T v) { return T(1) / (T(1) + std::exp(-v)); };
  return unary(x, f, [f](T v) {
    T s = f(v);
    return s * (T(1) - s);
  });
}

template <typename T>
Var<T> exp(Var<T> x) {
  return unary(x, [](T v) { return std::exp(v); }, [](T v) { return std::exp(v); });
}

template <typename T>
Var<T> log(Var<T> x) {
  return unary(x, [](T v) { return std::log(v); }, [](T v) { return T(1) / v; });
}

template <typename T>
Var<T> sqrt(Var<T> x) {
  return unary(x, [](T v) { return std::sqrt(v); },
               [](T v) { return T(0.5) / std::sqrt(v); });
}

template <typename T>
Var<T> abs(Var<T> x) {
  return unary(x, [](T v) { return std::abs(v); },
               [](T v) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Var<T> add_scalar(Var<T> x, T c) {
  return unary(x, [c](T v) { return v + c; }, [](T) { return T(1); });
}

template <typename T>
Var<T> mul_scalar(Var<T> x, T c) {
  return unary(x, [c](T v) { return v * c; }, [c](T) { return c; });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  Graph<T>& g = graph_of(a, b);
  require_same_shape(a.value(), b.value(), "add");
  Tensor<T> y = a.value();
  const Tensor<T>& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
  return g.record(std::move(y), {a, b}, [a, b](Graph<T>& g, const Tensor<T>& gy) {
    for (Var<T> v : {a, b}) {
      if (!g.requires_grad(v)) continue;
      Tensor<T>& gv = g.grad_buffer(v);
      for (std::size_t i = 0; i < gy.size(); ++i) gv[i] += gy[i];
    }
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  Graph<T>& g = graph_of(a, b);
  require_same_shape(a.value(), b.value(), "sub");
  Tensor<T> y = a.value();
  const Tensor<T>& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= bv[i];
  return g.record(std::move(y), {a, b}, [a, b](Graph<T>& g, const Tensor<T>& gy) {
    if (g.requires_grad(a)) {
      Tensor<T>& ga = g.grad_buffer(a);
      for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
    }
    if (g.requires_grad(b)) {
      Tensor<T>& gb = g.grad_buffer(b);
      for (std::size_t i = 0; i < gy.size(); ++i) gb[i] -= gy[i];
    }
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  Graph<T>& g = graph_of(a, b);
  require_same_shape(a.value(), b.value(), "mul");
  Tensor<T> y = a.value();
  const Tensor<T>& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= bv[i];
  return g.record(std::move(y), {a, b}, [a, b](Graph<T>& g, const Tensor<T>& gy) {
    const Tensor<T>& av = g.value(a);
    const Tensor<T>& bv = g.value(b);
    if (g.requires_grad(a)) {
      Tensor<T>& ga = g.grad_buffer(a);
      for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * bv[i];
    }
    if (g.requires_grad(b)) {
      Tensor<T>& gb = g.grad_buffer(b);
      for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i] * av[i];
    }
  });
}

template <typename T>
Var<T> div(Var<T> a, Var<T> b) {
  Graph<T>& g = graph_of(a, b);
  require_same_shape(a.value(), b.value(), "div");
  Tensor<T> y = a.value();
  const Tensor<T>& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] /= bv[i];
  return g.record(std::move(y), {a, b}, [a, b](Graph<T>& g, const Tensor<T>& gy) {
    const Tensor<T>& av = g.value(a);
    const Tensor<T>& bv = g.value(b);
    if (g.requires_grad(a)) {
      Tensor<T>& ga = g.grad_buffer(a);
      for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] / bv[i];
    }
    if (g.requires_grad(b)) {
      Tensor<T>& gb = g.grad_buffer(b);
      for (std::size_t i = 0; i < gy.size(); ++i) gb[i] -= gy[i] * av[i] / (bv[i] * bv[i]);
    }
  });
}

template <typename T>
Var<T> scale(Var<T> x, Var<T> s) {
  Graph<T>& g = graph_of(x, s);
  if (s.value().size() != 1) throw ConfigError("scale: factor must have one element");
  const T sv = s.value()[0];
  Tensor<T> y = x.value();
  for (auto& v : y.storage()) v *= sv;
  return g.record(std::move(y), {x, s}, [x, s](Graph<T>& g, const Tensor<T>& gy) {
    const Tensor<T>& xv = g.value(x);
    const T sv = g.value(s)[0];
    if (g.requires_grad(x)) {
      Tensor<T>& gx = g.grad_buffer(x);
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * sv;
    }
    if (g.requires_grad(s)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < gy.size(); ++i) acc += double(gy[i]) * double(xv[i]);
      g.grad_buffer(s)[0] += T(acc);
    }
  });
}

template <typename T>
Var<T> divide(Var<T> x, Var<T> s) {
  Graph<T>& g = graph_of(x, s);
  if (s.value().size() != 1) throw ConfigError("divide: divisor must have one element");
  const T sv = s.value()[0];
  Tensor<T> y = x.value();
  for (auto& v : y.storage()) v /= sv;
  return g.record(std::move(y), {x, s}, [x, s](Graph<T>& g, const Tensor<T>& gy) {
    const Tensor<T>& xv = g.value(x);
    const T sv = g.value(s)[0];
    if (g.requires_grad(x)) {
      Tensor<T>& gx = g.grad_buffer(x);
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] / sv;
    }
    if (g.requires_grad(s)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < gy.size(); ++i) acc += double(gy[i]) * double(xv[i]);
      g.grad_buffer(s)[0] -= T(acc / (double(sv) * double(sv)));
    }
  });
}

template <typename T>
Var<T> sum(Var<T> x) {
  Graph<T>& g = graph_of(x);
  double acc = 0.0;
  for (T v : x.value().values()) acc += double(v);
  Tensor<T> y({1}, T(acc));
  return g.record(std::move(y), {x}, [x](Graph<T>& g, const Tensor<T>& gy) {
    Tensor<T>& gx = g.grad_buffer(x);
    for (auto& v : gx.storage()) v += gy[0];
  });
}

template <typename T>
Var<T> mean(Var<T> x) {
  const auto n = x.value().size();
  if (n == 0) throw UsageError("mean of an empty tensor");
  return mul_scalar(sum(x), T(1.0 / double(n)));
}

template <typename T>
Var<T> max(Var<T> x) {
  Graph<T>& g = graph_of(x);
  const Tensor<T>& xv = x.value();
  if (xv.empty()) throw UsageError("max of an empty tensor");
  std::size_t arg = 0;
  for (std::size_t i = 1; i < xv.size(); ++i) {
    if (xv[i] > xv[arg]) arg = i;
  }
  Tensor<T> y({1}, xv[arg]);
  return g.record(std::move(y), {x}, [x, arg](Graph<T>& g, const Tensor<T>& gy) {
    g.grad_buffer(x)[arg] += gy[0];
  });
}

template <typename T>
Var<T> sum_rows(Var<T> x) {
  Graph<T>& g = graph_of(x);
  const Tensor<T>& xv = x.value();
  require_rank(xv, 2, "sum_rows");
  const auto k = xv.dim(0), m = xv.dim(1);
  Tensor<T> y({k});
  for (std::int64_t r = 0; r < k; ++r) {
    double acc = 0.0;
    for (std::int64_t c = 0; c < m; ++c) acc += double(xv[r * m + c]);
    y[r] = T(acc);
  }
  return g.record(std::move(y), {x}, [x, k, m](Graph<T>& g, const Tensor<T>& gy) {
    Tensor<T>& gx = g.grad_buffer(x);
    for (std::int64_t r = 0; r < k; ++r)
      for (std::int64_t c = 0; c < m; ++c) gx[r * m + c] += gy[r];
  });
}

template <typename T>
Var<T> row_dot(Var<T> a, Var<T> b) {
  Graph<T>& g = graph_of(a, b);
  require_same_shape(a.value(), b.value(), "row_dot");
  require_rank(a.value(), 2, "row_dot");
  const auto k = a.dim(0), d = a.dim(1);
  Tensor<T> y({k});
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  for (std::int64_t r = 0; r < k; ++r) {
    double acc = 0.0;
    for (std::int64_t c = 0; c < d; ++c) acc += double(av[r * d + c]) * double(bv[r * d + c]);
    y[r] = T(acc);
  }
  return g.record(std::move(y), {a, b}, [a, b, k, d](Graph<T>& g, const Tensor<T>& gy) {
    const Tensor<T>& av = g.value(a);
    const Tensor<T>& bv = g.value(b);
    if (g.requires_grad(a)) {
      Tensor<T>& ga = g.grad_buffer(a);
      for (std::int64_t r = 0; r < k; ++r)
        for (std::int64_t c = 0; c < d; ++c) ga[r * d + c] += gy[r] * bv[r * d + c];
    }
    if (g.requires_grad(b)) {
      Tensor<T>& gb = g.grad_buffer(b);
      for (std::int64_t r = 0; r < k; ++r)
        for (std::int64_t c = 0; c < d; ++c) gb[r * d + c] += gy[r] * av[r * d + c];
    }
  });
}

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
  Graph<T>& g = graph_of(x);
  Tensor<T> y = x.value();
  y.reshape(std::move(shape));
  return g.record(std::move(y), {x}, [x](Graph<T>& g, const Tensor<T>& gy) {
    Tensor<T>& gx = g.grad_buffer(x);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
  });
}

template <typename T>
Var<T> gather_rows(Var<T> x, const std::vector<std::int64_t>& rows) {
  Graph<T>& g = graph_of(x);
  const Tensor<T>& xv = x.value();
  if (xv.rank() < 1) throw ConfigError("gather_rows: scalar input");
  const auto n = rows_of(xv.shape());
  const auto width = cols_of(xv.shape());
  Shape shape = xv.shape();
  shape[0] = static_cast<std::int64_t>(rows.size());
  Tensor<T> y(shape);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] < 0 || rows[r] >= n) throw DomainError("gather_rows: row index out of range");
    std::copy_n(xv.data() + rows[r] * width, width, y.data() + static_cast<std::int64_t>(r) * width);
  }
  return g.record(std::move(y), {x}, [x, rows, width](Graph<T>& g, const Tensor<T>& gy) {
    Tensor<T>& gx = g.grad_buffer(x);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const T* src = gy.data() + static_cast<std::int64_t>(r) * width;
      T* dst = gx.data() + rows[r] * width;
      for (std::int64_t c = 0; c < width; ++c) dst[c] += src[c];
    }
  });
}

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& xs) {
  if (xs.empty()) throw UsageError("concat_rows: no inputs");
  Graph<T>& g = graph_of(xs.front());
  const Shape& s0 = xs.front().shape();
  if (s0.size() != 2) throw ConfigError("concat_rows: expected rank-2 inputs");
  std::int64_t rows = 0;
  for (const auto& x : xs) {
    graph_of(xs.front(), x);
    const Shape& s = x.shape();
    if (s.size() != 2 || s[1] != s0[1]) {
      throw ConfigError("concat_rows: incompatible shape " + shape_string(s));
    }
    rows += s[0];
  }
  Tensor<T> y({rows, s0[1]});
  std::int64_t offset = 0;
  for (const auto& x : xs) {
    const Tensor<T>& xv = x.value();
    std::copy(xv.storage().begin(), xv.storage().end(), y.data() + offset);
    offset += static_cast<std::int64_t>(xv.size());
  }
  return g.record(std::move(y), xs, [xs](Graph<T>& g, const Tensor<T>& gy) {
    std::int64_t offset = 0;
    for (const auto& x : xs) {
      const auto n = static_cast<std::int64_t>(g.value(x).size());
      if (g.requires_grad(x)) {
        Tensor<T>& gx = g.grad_buffer(x);
        for (std::int64_t i = 0; i < n; ++i) gx[i] += gy[offset + i];
      }
      offset += n;
    }
  });
}

template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& xs) {
  if (xs.empty()) throw UsageError("concat_channels: no inputs");
  Graph<T>& g = graph_of(xs.front());
  const Shape& s0 = xs.front().shape();
  if (s0.size() != 4) throw ConfigError("concat_channels: expected rank-4 inputs");
  std::int64_t channels = 0;
  for (const auto& x : xs) {
    graph_of(xs.front(), x);
    const Shape& s = x.shape();
    if (s.size() != 4 || s[0] != s0[0] || s[2] != s0[2] || s[3] != s0[3]) {
      throw ConfigError("concat_channels: incompatible shape " + shape_string(s));
    }
    channels += s[1];
  }
  const auto n = s0[0], plane = s0[2] * s0[3];
  Tensor<T> y({n, channels, s0[2], s0[3]});
  std::int64_t offset = 0;
  for (const auto& x : xs) {
    const auto c = x.dim(1);
    const Tensor<T>& xv = x.value();
    for (std::int64_t b = 0; b < n; ++b) {
      std::copy_n(xv.data() + b * c * plane, c * plane,
                  y.data() + (b * channels + offset) * plane);
    }
    offset += c;
  }
  return g.record(std::move(y), xs, [xs, n, channels, plane](Graph<T>& g, const Tensor<T>& gy) {
    std::int64_t offset = 0;
    for (const auto& x : xs) {
      const auto c = g.value(x).dim(1);
      if (g.requires_grad(x)) {
        Tensor<T>& gx = g.grad_buffer(x);
        for (std::int64_t b = 0; b < n; ++b) {
          const T* src = gy.data() + (b * channels + offset) * plane;
          T* dst = gx.data() + b * c * plane;
          for (std::int64_t i = 0; i < c * plane; ++i) dst[i] += src[i];
        }
      }
      offset += c;
    }
  });
}

template <typename T>
Var<T> slice_channels(Var<T> x, std::int64_t begin, std::int64_t end) {
  Graph<T>& g = graph_of(x);
  const Tensor<T>& xv = x.value();
  require_rank(xv, 4, "slice_channels");
  const auto n = xv.dim(0), c = xv.dim(1), plane = xv.dim(2) * xv.dim(3);
  if (begin < 0 || end > c || begin >= end) throw ConfigError("slice_channels: bad range");
  const auto width = end - begin;
  Tensor<T> y({n, width, xv.dim(2), xv.dim(3)});
  for (std::int64_t b = 0; b < n; ++b) {
    std::copy_n(xv.data() + (b * c + begin) * plane, width * plane, y.data() + b * width * plane);
  }
  return g.record(std::move(y), {x}, [x, n, c, plane, begin, width](Graph<T>& g,
                                                                      const Tensor<T>& gy) {
    Tensor<T>& gx = g.grad_buffer(x);
    for (std::int64_t b = 0; b < n; ++b) {
      const T* src = gy.data() + b * width * plane;
      T* dst = gx.data() + (b * c + begin) * plane;
      for (std::int64_t i = 0; i < width * plane; ++i) dst[i] += src[i];
    }
  });
}

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b, bool transpose_a, bool transpose_b) {
  Graph<T>& g = graph_of(a, b);
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  require_rank(av, 2, "matmul");
  require_rank(bv, 2, "matmul");
  const auto m = transpose_a ? av.dim(1) : av.dim(0);
  const auto ka = transpose_a ? av.dim(0) : av.dim(1);
  const auto kb = transpose_b ? bv.dim(1) : bv.dim(0);
  const auto n = transpose_b ? bv.dim(0) : bv.dim(1);
  if (ka != kb) {
    throw ConfigError("matmul: inner extents differ " + shape_string(av.shape()) + " x " +
                      shape_string(bv.shape()));
  }
  CMapR<T> am(av.data(), av.dim(0), av.dim(1));
  CMapR<T> bm(bv.data(), bv.dim(0), bv.dim(1));
  Tensor<T> y({m, n});
  MapR<T> ym(y.data(), m, n);
  if (!transpose_a && !transpose_b) ym.noalias() = am * bm;
  else if (transpose_a && !transpose_b) ym.noalias() = am.transpose() * bm;
  else if (!transpose_a && transpose_b) ym.noalias() = am * bm.transpose();
  else ym.noalias() = am.transpose() * bm.transpose();
  return g.record(std::move(y), {a, b}, [a, b, m, n, transpose_a, transpose_b](
                                            Graph<T>& g, const Tensor<T>& gy) {
    const Tensor<T>& av = g.value(a);
    const Tensor<T>& bv = g.value(b);
    CMapR<T> am(av.data(), av.dim(0), av.dim(1));
    CMapR<T> bm(bv.data(), bv.dim(0), bv.dim(1));
    CMapR<T> gm(gy.data(), m, n);
    if (g.requires_grad(a)) {
      Tensor<T>& ga = g.grad_buffer(a);
      MapR<T> gam(ga.data(), av.dim(0), av.dim(1));
      // Y = op(A) op(B): dop(A) = dY op(B)^T.
      if (!transpose_a) {
        if (!transpose_b) gam.noalias() += gm * bm.transpose();
        else gam.noalias() += gm * bm;
      } else {
        if (!transpose_b) gam.noalias() += bm * gm.transpose();
        else gam.noalias() += bm.transpose() * gm.transpose();
      }
    }
    if (g.requires_grad(b)) {
      Tensor<T>& gb = g.grad_buffer(b);
      MapR<T> gbm(gb.data(), bv.dim(0), bv.dim(1));
      // dop(B) = op(A)^T dY.
      if (!transpose_b) {
        if (!transpose_a) gbm.noalias() += am.transpose() * gm;
        else gbm.noalias() += am * gm;
      } else {
        if (!transpose_a) gbm.noalias() += gm.transpose() * am;
        else gbm.noalias() += gm.transpose() * am.transpose();
      }
    }
  });
}

template <typename T>
Var<T> softmax_rows(Var<T> x) {
  Graph<T>& g = graph_of(x);
  const Tensor<T>& xv = x.value();
  if (xv.rank() < 1 || xv.rank() > 2) throw ConfigError("softmax_rows: expected rank 1 or 2");
  const auto m = xv.shape().back();
  const auto k = static_cast<std::int64_t>(xv.size()) / std::max<std::int64_t>(m, 1);
  Tensor<T> y(xv.shape());
  for (std::int64_t r = 0; r < k; ++r) {
    const T* in = xv.data() + r * m;
    T* out = y.data() + r * m;
    const T mx = *std::max_element(in, in + m);
    double z = 0.0;
    for (std::int64_t c = 0; c < m; ++c) {
      out[c] = std::exp(in[c] - mx);
      z += double(out[c]);
    }
    for (std::int64_t c = 0; c < m; ++c) out[c] = T(double(out[c]) / z);
  }
  Tensor<T> ycopy = y;
  return g.record(std::move(y), {x}, [x, k, m, ys = std::move(ycopy)](Graph<T>& g,
                                                                     const Tensor<T>& gy) {
    Tensor<T>& gx = g.grad_buffer(x);
    for (std::int64_t r = 0; r < k; ++r) {
      const T* s = ys.data() + r * m;
      const T* gr = gy.data() + r * m;
      double dot = 0.0;
      for (std::int64_t c = 0; c < m; ++c) dot += double(s[c]) * double(gr[c]);
      for (std::int64_t c = 0; c < m; ++c) gx[r * m + c] += T(double(s[c]) * (double(gr[c]) - dot));
    }
  });
}

template <typename T>
Var<T> log_softmax_rows(Var<T> x) {
  Graph<T>& g = graph_of(x);
  const Tensor<T>& xv = x.value();
  if (xv.rank() < 1 || xv.rank() > 2) throw ConfigError("log_softmax_rows: expected rank 1 or 2");
  const auto m = xv.shape().back();
  const auto k = static_cast<std::int64_t>(xv.size()) / std::max<std::int64_t>(m, 1);
  Tensor<T> y(xv.shape());
  for (std::int64_t r = 0; r < k; ++r) {
    const T* in = xv.data() + r * m;
    const T mx = *std::max_element(in, in + m);
    double z = 0.0;
    for (std::int64_t c = 0; c < m; ++c) z += std::exp(double(in[c] - mx));
    const double lse = double(mx) + std::log(z);
    for (std::int64_t c = 0; c < m; ++c) y[r * m + c] = T(double(in[c]) - lse);
  }
  Tensor<T> ycopy = y;
  return g.record(std::move(y), {x}, [x, k, m, ys = std::move(ycopy)](Graph<T>& g,
                                                                     const Tensor<T>& gy) {
    Tensor<T>& gx = g.grad_buffer(x);
    for (std::int64_t r = 0; r < k; ++r) {
      double gsum = 0.0;
      for (std::int64_t c = 0; c < m; ++c) gsum += double(gy[r * m + c]);
      for (std::int64_t c = 0; c < m; ++c) {
        gx[r * m + c] += T(double(gy[r * m + c]) - std::exp(double(ys[r * m + c])) * gsum);
      }
    }
  });
}

template <typename T>
Var<T> l2_normalize_rows(Var<T> x) {
  Graph<T>& g = graph_of(x);
  const Tensor<T>& xv = x.value();
  require_rank(xv, 2, "l2_normalize_rows");
  const auto k = xv.dim(0), d = xv.dim(1);
  Tensor<T> y(xv.shape());
  std::vector<double> norms(static_cast<std::size_t>(k));
  for (std::int64_t r = 0; r < k; ++r) {
    double acc = 0.0;
    for (std::int64_t c = 0; c < d; ++c) acc += double(xv[r * d + c]) * double(xv[r * d + c]);
    const double nrm = std::max(std::sqrt(acc), kNormEps);
    norms[static_cast<std::size_t>(r)] = nrm;
    for (std::int64_t c = 0; c < d; ++c) y[r * d + c] = T(double(xv[r * d + c]) / nrm);
  }
  return g.record(std::move(y), {x}, [x, k, d, norms = std::move(norms)](Graph<T>& g,
                                                                        const Tensor<T>& gy) {
    const Tensor<T>& xv = g.value(x);
    Tensor<T>& gx = g.grad_buffer(x);
    for (std::int64_t r = 0; r < k; ++r) {
      const double nrm = norms[static_cast<std::size_t>(r)];
      if (nrm <= kNormEps) {
        for (std::int64_t c = 0; c < d; ++c) gx[r * d + c] += T(double(gy[r * d + c]) / nrm);
        continue;
      }
      double dot = 0.0;
      for (std::int64_t c = 0; c < d; ++c) dot += double(xv[r * d + c]) * double(gy[r * d + c]);
      const double inv = 1.0 / nrm;
      for (std::int64_t c = 0; c < d; ++c) {
        const double yc = double(xv[r * d + c]) * inv;
        gx[r * d + c] += T((double(gy[r * d + c]) - yc * dot * inv) * inv);
      }
    }
  });
}

template <typename T>
Var<T> l2_normalize_channels(Var<T> x) {
  Graph<T>& g = graph_of(x);
  const Tensor<T>& xv = x.value();
  require_rank(xv, 4, "l2_normalize_channels");
  const auto n = xv.dim(0), c = xv.dim(1), plane = xv.dim(2) * xv.dim(3);
  Tensor<T> y(xv.shape());
  std::vector<double> norms(static_cast<std::size_t>(n * plane));
  for (std::int64_t b = 0; b < n; ++b) {
    const T* in = xv.data() + b * c * plane;
    T* out = y.data() + b * c * plane;
    double* nb = norms.data() + b * plane;
    for (std::int64_t p = 0; p < plane; ++p) nb[p] = 0.0;
    for (std::int64_t ch = 0; ch < c; ++ch)
      for (std::int64_t p = 0; p < plane; ++p) {
        const double v = in[ch * plane + p];
        nb[p] += v * v;
      }
    for (std::int64_t p = 0; p < plane; ++p) nb[p] = std::max(std::sqrt(nb[p]), kNormEps);
    for (std::int64_t ch = 0; ch < c; ++ch)
      for (std::int64_t p = 0; p < plane; ++p) out[ch * plane + p] = T(in[ch * plane + p] / nb[p]);
  }
  return g.record(std::move(y), {x}, [x, n, c, plane, norms = std::move(norms)](
                                         Graph<T>& g, const Tensor<T>& gy) {
    const Tensor<T>& xv = g.value(x);
    Tensor<T>& gx = g.grad_buffer(x);
    std::vector<double> dot(static_cast<std::size_t>(plane));
    for (std::int64_t b = 0; b < n; ++b) {
      const T* in = xv.data() + b * c * plane;
      const T* go = gy.data() + b * c * plane;
      T* gi = gx.data() + b * c * plane;
      const double* nb = norms.data() + b * plane;
      std::fill(dot.begin(), dot.end(), 0.0);
      for (std::int64_t ch = 0; ch < c; ++ch)
        for (std::int64_t p = 0; p < plane; ++p) dot[p] += double(in[ch * plane + p]) * go[ch * plane + p];
      for (std::int64_t ch = 0; ch < c; ++ch)
        for (std::int64_t p = 0; p < plane; ++p) {
          const double inv = 1.0 / nb[p];
          if (nb[p] <= kNormEps) {
            gi[ch * plane + p] += T(go[ch * plane + p] * inv);
          } else {
            gi[ch * plane + p] +=
                T((go[ch * plane + p] - double(in[ch * plane + p]) * dot[p] * inv * inv) * inv);
          }
        }
    }
  });
}

template <typename T>
Var<T> lp_norm_rows(Var<T> x, double p) {
  Graph<T>& g = graph_of(x);
  if (!(p >= 1.0)) throw ConfigError("lp_norm_rows: p must be >= 1");
  const Tensor<T>& xv = x.value();
  require_rank(xv, 2, "lp_norm_rows");
  const auto k = xv.dim(0), d = xv.dim(1);
  Tensor<T> y({k});
  for (std::int64_t r = 0; r < k; ++r) {
    double acc = 0.0;
    for (std::int64_t c = 0; c < d; ++c) acc += std::pow(std::abs(double(xv[r * d + c])), p);
    y[r] = T(p == 1.0 ? acc : std::pow(acc, 1.0 / p));
  }
  Tensor<T> ycopy = y;
  return g.record(std::move(y), {x}, [x, k, d, p, ys = std::move(ycopy)](Graph<T>& g,
                                                                        const Tensor<T>& gy) {
    const Tensor<T>& xv = g.value(x);
    Tensor<T>& gx = g.grad_buffer(x);
    for (std::int64_t r = 0; r < k; ++r) {
      const double nrm = ys[r];
      for (std::int64_t c = 0; c < d; ++c) {
        const double v = xv[r * d + c];
        const double sgn = v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0);
        double dv = 0.0;
        if (p == 1.0) dv = sgn;
        else if (nrm > 0.0) dv = sgn * std::pow(std::abs(v) / nrm, p - 1.0);
        gx[r * d + c] += T(double(gy[r]) * dv);
      }
    }
  });
}

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> weight, Var<T> bias, int stride, int padding) {
  Graph<T>& g = graph_of(x, weight);
  const bool has_bias = bias.valid();
  if (has_bias) graph_of(x, bias);
  const Tensor<T>& xv = x.value();
  const Tensor<T>& wv = weight.value();
  require_rank(xv, 4, "conv2d input");
  require_rank(wv, 4, "conv2d weight");
  const auto n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const auto o = wv.dim(0), k = wv.dim(2);
  if (wv.dim(1) != c) {
    throw ConfigError("conv2d: input has " + std::to_string(c) + " channels, weight expects " +
                      std::to_string(wv.dim(1)));
  }
  if (wv.dim(3) != k) throw ConfigError("conv2d: non-square kernel");
  if (stride < 1 || padding < 0) throw ConfigError("conv2d: invalid stride/padding");
  if (has_bias && (bias.value().rank() != 1 || bias.value().dim(0) != o)) {
    throw ConfigError("conv2d: bias extent mismatch");
  }
  const auto ho = (h + 2 * padding - k) / stride + 1;
  const auto wo = (w + 2 * padding - k) / stride + 1;
  if (ho <= 0 || wo <= 0) throw ConfigError("conv2d: kernel larger than padded input");
  const auto ck = c * k * k, plane_out = ho * wo;
  const bool direct = (k == 1 && stride == 1 && padding == 0);

  auto im2col = [=](const T* in, std::vector<T>& cols) {
    cols.assign(static_cast<std::size_t>(ck * plane_out), T(0));
    for (std::int64_t ch = 0; ch < c; ++ch)
      for (std::int64_t ky = 0; ky < k; ++ky)
        for (std::int64_t kx = 0; kx < k; ++kx) {
          T* row = cols.data() + ((ch * k + ky) * k + kx) * plane_out;
          const T* src = in + ch * h * w;
          for (std::int64_t oy = 0; oy < ho; ++oy) {
            const auto iy = oy * stride - padding + ky;
            if (iy < 0 || iy >= h) continue;
            for (std::int64_t ox = 0; ox < wo; ++ox) {
              const auto ix = ox * stride - padding + kx;
              if (ix < 0 || ix >= w) continue;
              row[oy * wo + ox] = src[iy * w + ix];
            }
          }
        }
  };

  Tensor<T> y({n, o, ho, wo});
  CMapR<T> wm(wv.data(), o, ck);
  std::vector<T> cols;
  for (std::int64_t b = 0; b < n; ++b) {
    const T* in = xv.data() + b * c * h * w;
    MapR<T> ym(y.data() + b * o * plane_out, o, plane_out);
    if (direct) {
      ym.noalias() = wm * CMapR<T>(in, c, plane_out);
    } else {
      im2col(in, cols);
      ym.noalias() = wm * CMapR<T>(cols.data(), ck, plane_out);
    }
    if (has_bias) {
      const Tensor<T>& bv = bias.value();
      for (std::int64_t oc = 0; oc < o; ++oc) ym.row(oc).array() += bv[oc];
    }
  }
  std::vector<Var<T>> parents{x, weight};
  if (has_bias) parents.push_back(bias);
  return g.record(std::move(y), parents, [=](Graph<T>& g, const Tensor<T>& gy) {
    const Tensor<T>& xv = g.value(x);
    const Tensor<T>& wv = g.value(weight);
    CMapR<T> wm(wv.data(), o, ck);
    const bool need_x = g.requires_grad(x);
    const bool need_w = g.requires_grad(weight);
    const bool need_b = has_bias && g.requires_grad(bias);
    std::vector<T> cols;
    std::vector<T> dcols;
    for (std::int64_t b = 0; b < n; ++b) {
      CMapR<T> gm(gy.data() + b * o * plane_out, o, plane_out);
      const T* in = xv.data() + b * c * h * w;
      if (need_b) {
        Tensor<T>& gb = g.grad_buffer(bias);
        for (std::int64_t oc = 0; oc < o; ++oc) gb[oc] += gm.row(oc).sum();
      }
      if (need_w) {
        Tensor<T>& gw = g.grad_buffer(weight);
        MapR<T> gwm(gw.data(), o, ck);
        if (direct) {
          gwm.noalias() += gm * CMapR<T>(in, c, plane_out).transpose();
        } else {
          im2col(in, cols);
          gwm.noalias() += gm * CMapR<T>(cols.data(), ck, plane_out).transpose();
        }
      }
      if (need_x) {
        Tensor<T>& gx = g.grad_buffer(x);
        T* gin = gx.data() + b * c * h * w;
        if (direct) {
          MapR<T>(gin, c, plane_out).noalias() += wm.transpose() * gm;
        } else {
          dcols.resize(static_cast<std::size_t>(ck * plane_out));
          MapR<T>(dcols.data(), ck, plane_out).noalias() = wm.transpose() * gm;
          for (std::int64_t ch = 0; ch < c; ++ch)
            for (std::int64_t ky = 0; ky < k; ++ky)
              for (std::int64_t kx = 0; kx < k; ++kx) {
                const T* row = dcols.data() + ((ch * k + ky) * k + kx) * plane_out;
                T* dst = gin + ch * h * w;
                for (std::int64_t oy = 0; oy < ho; ++oy) {
                  const auto iy = oy * stride - padding + ky;
                  if (iy < 0 || iy >= h) continue;
                  for (std::int64_t ox = 0; ox < wo; ++ox) {
                    const auto ix = ox * stride - padding + kx;
                    if (ix < 0 || ix >= w) continue;
                    dst[iy * w + ix] += row[oy * wo + ox];
                  }
                }
              }
        }
      }
    }
  });
}

template <typename T>
Var<T> maxpool2d(Var<T> x, int kernel) {
  Graph<T>& g = graph_of(x);
  const Tensor<T>& xv = x.value();
  require_rank(xv, 4, "maxpool2d");
  if (kernel < 1) throw ConfigError("maxpool2d: kernel must be positive");
  const auto n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const auto ho = h / kernel, wo = w / kernel;
  if (ho == 0 || wo == 0) throw ConfigError("maxpool2d: input smaller than kernel");
  Tensor<T> y({n, c, ho, wo});
  std::vector<std::int64_t> arg(y.size());
  for (std::int64_t plane = 0; plane < n * c; ++plane) {
    const T* in = xv.data() + plane * h * w;
    for (std::int64_t oy = 0; oy < ho; ++oy)
      for (std::int64_t ox = 0; ox < wo; ++ox) {
        std::int64_t best = (oy * kernel) * w + ox * kernel;
        for (std::int64_t ky = 0; ky < kernel; ++ky)
          for (std::int64_t kx = 0; kx < kernel; ++kx) {
            const auto idx = (oy * kernel + ky) * w + ox * kernel + kx;
            if (in[idx] > in[best]) best = idx;
          }
        const auto out = plane * ho * wo + oy * wo + ox;
        y[static_cast<std::size_t>(out)] = in[best];
        arg[static_cast<std::size_t>(out)] = plane * h * w + best;
      }
  }
  return g.record(std::move(y), {x}, [x, arg = std::move(arg)](Graph<T>& g, const Tensor<T>& gy) {
    Tensor<T>& gx = g.grad_buffer(x);
    for (std::size_t i = 0; i < arg.size(); ++i) gx[static_cast<std::size_t>(arg[i])] += gy[i];
  });
}

namespace {

struct ResizeTap {
  std::int64_t i0, i1;
  double f;
};

std::vector<ResizeTap> resize_taps(std::int64_t in, std::int64_t out) {
  std::vector<ResizeTap> taps(static_cast<std::size_t>(out));
  const double ratio = double(in) / double(out);
  for (std::int64_t o = 0; o < out; ++o) {
    double src = (double(o) + 0.5) * ratio - 0.5;
    src = std::clamp(src, 0.0, double(in - 1));
    auto i0 = static_cast<std::int64_t>(std::floor(src));
    i0 = std::min(i0, in - 1);
    const auto i1 = std::min(i0 + 1, in - 1);
    taps[static_cast<std::size_t>(o)] = {i0, i1, src - double(i0)};
  }
  return taps;
}

}  // namespace

template <typename T>
Var<T> upsample_bilinear(Var<T> x, std::int64_t out_h, std::int64_t out_w) {
  Graph<T>& g = graph_of(x);
  const Tensor<T>& xv = x.value();
  require_rank(xv, 4, "upsample_bilinear");
  const auto n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  auto ty = resize_taps(h, out_h);
  auto tx = resize_taps(w, out_w);
  Tensor<T> y({n, c, out_h, out_w});
  for (std::int64_t plane = 0; plane < n * c; ++plane) {
    const T* in = xv.data() + plane * h * w;
    T* out = y.data() + plane * out_h * out_w;
    for (std::int64_t oy = 0; oy < out_h; ++oy) {
      const auto& a = ty[static_cast<std::size_t>(oy)];
      for (std::int64_t ox = 0; ox < out_w; ++ox) {
        const auto& b = tx[static_cast<std::size_t>(ox)];
        const double top = (1 - b.f) * in[a.i0 * w + b.i0] + b.f * in[a.i0 * w + b.i1];
        const double bot = (1 - b.f) * in[a.i1 * w + b.i0] + b.f * in[a.i1 * w + b.i1];
        out[oy * out_w + ox] = T((1 - a.f) * top + a.f * bot);
      }
    }
  }
  return g.record(std::move(y), {x}, [=](Graph<T>& g, const Tensor<T>& gy) {
    Tensor<T>& gx = g.grad_buffer(x);
    for (std::int64_t plane = 0; plane < n * c; ++plane) {
      T* gin = gx.data() + plane * h * w;
      const T* go = gy.data() + plane * out_h * out_w;
      for (std::int64_t oy = 0; oy < out_h; ++oy) {
        const auto& a = ty[static_cast<std::size_t>(oy)];
        for (std::int64_t ox = 0; ox < out_w; ++ox) {
          const auto& b = tx[static_cast<std::size_t>(ox)];
          const double v = go[oy * out_w + ox];
          gin[a.i0 * w + b.i0] += T(v * (1 - a.f) * (1 - b.f));
          gin[a.i0 * w + b.i1] += T(v * (1 - a.f) * b.f);
          gin[a.i1 * w + b.i0] += T(v * a.f * (1 - b.f));
          gin[a.i1 * w + b.i1] += T(v * a.f * b.f);
        }
      }
    }
  });
}

template <typename T>
Var<T> bilinear_sample(Var<T> map, Var<T> coords) {
  Graph<T>& g = graph_of(map, coords);
  const Tensor<T>& mv = map.value();
  const Tensor<T>& cv = coords.value();
  require_rank(mv, 3, "bilinear_sample map");
  require_rank(cv, 2, "bilinear_sample coords");
  if (cv.dim(1) != 2) throw ConfigError("bilinear_sample: coordinates must be [K,2]");
  const auto c = mv.dim(0), h = mv.dim(1), w = mv.dim(2), k = cv.dim(0), plane = h * w;
  std::vector<BilinearCell> cells(static_cast<std::size_t>(k));
  for (std::int64_t r = 0; r < k; ++r) {
    const double x = cv[r * 2], y = cv[r * 2 + 1];
    if (!(x >= 0.0 && x <= double(w - 1) && y >= 0.0 && y <= double(h - 1))) {
      throw DomainError("bilinear_sample: coordinate (" + std::to_string(x) + ", " +
                        std::to_string(y) + ") outside the " + std::to_string(w) + "x" +
                        std::to_string(h) + " map");
    }
    cells[static_cast<std::size_t>(r)] = bilinear_cell(x, y, w, h);
  }
  Tensor<T> y({k, c});
  for (std::int64_t r = 0; r < k; ++r) {
    const auto& q = cells[static_cast<std::size_t>(r)];
    const double w00 = (1 - q.fx) * (1 - q.fy), w01 = (1 - q.fx) * q.fy;
    const double w10 = q.fx * (1 - q.fy), w11 = q.fx * q.fy;
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const T* m = mv.data() + ch * plane;
      y[r * c + ch] = T(w00 * m[q.y0 * w + q.x0] + w01 * m[q.y1 * w + q.x0] +
                        w10 * m[q.y0 * w + q.x1] + w11 * m[q.y1 * w + q.x1]);
    }
  }
  return g.record(std::move(y), {map, coords}, [=](Graph<T>& g, const Tensor<T>& gy) {
    const Tensor<T>& mv = g.value(map);
    const bool need_map = g.requires_grad(map);
    const bool need_xy = g.requires_grad(coords);
    for (std::int64_t r = 0; r < k; ++r) {
      const auto& q = cells[static_cast<std::size_t>(r)];
      const double w00 = (1 - q.fx) * (1 - q.fy), w01 = (1 - q.fx) * q.fy;
      const double w10 = q.fx * (1 - q.fy), w11 = q.fx * q.fy;
      double dx = 0.0, dy = 0.0;
      for (std::int64_t ch = 0; ch < c; ++ch) {
        const double go = gy[r * c + ch];
        const T* m = mv.data() + ch * plane;
        const double v00 = m[q.y0 * w + q.x0], v01 = m[q.y1 * w + q.x0];
        const double v10 = m[q.y0 * w + q.x1], v11 = m[q.y1 * w + q.x1];
        if (need_map) {
          T* gm = g.grad_buffer(map).data() + ch * plane;
          gm[q.y0 * w + q.x0] += T(go * w00);
          gm[q.y1 * w + q.x0] += T(go * w01);
          gm[q.y0 * w + q.x1] += T(go * w10);
          gm[q.y1 * w + q.x1] += T(go * w11);
        }
        if (need_xy) {
          if (q.x1 != q.x0) dx += go * ((1 - q.fy) * (v10 - v00) + q.fy * (v11 - v01));
          if (q.y1 != q.y0) dy += go * ((1 - q.fx) * (v01 - v00) + q.fx * (v11 - v10));
        }
      }
      if (need_xy) {
        Tensor<T>& gc = g.grad_buffer(coords);
        gc[r * 2] += T(dx);
        gc[r * 2 + 1] += T(dy);
      }
    }
  });
}

template <typename T>
Var<T> gather_windows(Var<T> map, const std::vector<PixelPos>& centers, int window) {
  Graph<T>& g = graph_of(map);
  const Tensor<T>& mv = map.value();
  require_rank(mv, 2, "gather_windows");
  if (window < 1 || window % 2 == 0) throw ConfigError("gather_windows: window must be odd");
  const auto h = mv.dim(0), w = mv.dim(1);
  const int r = window / 2;
  const auto k = static_cast<std::int64_t>(centers.size());
  const std::int64_t nn = std::int64_t(window) * window;
  for (const auto& p : centers) {
    if (p.x - r < 0 || p.y - r < 0 || p.x + r >= w || p.y + r >= h) {
      throw DomainError("gather_windows: window around (" + std::to_string(p.x) + ", " +
                        std::to_string(p.y) + ") leaves the map");
    }
  }
  Tensor<T> y({k, nn});
  for (std::int64_t i = 0; i < k; ++i) {
    const auto& p = centers[static_cast<std::size_t>(i)];
    for (int dy = -r; dy <= r; ++dy)
      for (int dx = -r; dx <= r; ++dx)
        y[i * nn + (dy + r) * window + (dx + r)] = mv[(p.y + dy) * w + (p.x + dx)];
  }
  return g.record(std::move(y), {map}, [=](Graph<T>& g, const Tensor<T>& gy) {
    Tensor<T>& gm = g.grad_buffer(map);
    for (std::int64_t i = 0; i < k; ++i) {
      const auto& p = centers[static_cast<std::size_t>(i)];
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx)
          gm[(p.y + dy) * w + (p.x + dx)] += gy[i * nn + (dy + r) * window + (dx + r)];
    }
  });
}

template <typename T>
Var<T> bilinear_weights(Var<T> coords, std::int64_t height, std::int64_t width) {
  Graph<T>& g = graph_of(coords);
  const Tensor<T>& cv = coords.value();
  require_rank(cv, 2, "bilinear_weights");
  const auto k = cv.dim(0);
  std::vector<BilinearCell> cells(static_cast<std::size_t>(k));
  Tensor<T> y({k, 4});
  for (std::int64_t r = 0; r < k; ++r) {
    const auto q = bilinear_cell(cv[r * 2], cv[r * 2 + 1], width, height);
    cells[static_cast<std::size_t>(r)] = q;
    y[r * 4 + 0] = T((1 - q.fx) * (1 - q.fy));
    y[r * 4 + 1] = T((1 - q.fx) * q.fy);
    y[r * 4 + 2] = T(q.fx * (1 - q.fy));
    y[r * 4 + 3] = T(q.fx * q.fy);
  }
  return g.record(std::move(y), {coords}, [coords, k, cells = std::move(cells)](
                                              Graph<T>& g, const Tensor<T>& gy) {
    Tensor<T>& gc = g.grad_buffer(coords);
    for (std::int64_t r = 0; r < k; ++r) {
      const auto& q = cells[static_cast<std::size_t>(r)];
      const double g00 = gy[r * 4], g01 = gy[r * 4 + 1], g10 = gy[r * 4 + 2], g11 = gy[r * 4 + 3];
      if (q.x1 != q.x0) {
        gc[r * 2] += T(-(1 - q.fy) * g00 - q.fy * g01 + (1 - q.fy) * g10 + q.fy * g11);
      }
      if (q.y1 != q.y0) {
        gc[r * 2 + 1] += T(-(1 - q.fx) * g00 + (1 - q.fx) * g01 - q.fx * g10 + q.fx * g11);
      }
    }
  });
}

template <typename T>
Var<T> gather_corners(Var<T> maps, const std::vector<std::array<double, 2>>& coords,
                      std::int64_t height, std::int64_t width) {
  Graph<T>& g = graph_of(maps);
  const Tensor<T>& mv = maps.value();
  require_rank(mv, 2, "gather_corners");
  const auto k = mv.dim(0), m = mv.dim(1);
  if (m != height * width || static_cast<std::int64_t>(coords.size()) != k) {
    throw ConfigError("gather_corners: extents do not match coordinates");
  }
  std::vector<std::int64_t> index(static_cast<std::size_t>(k * 4));
  Tensor<T> y({k, 4});
  for (std::int64_t r = 0; r < k; ++r) {
    const auto q = bilinear_cell(coords[r][0], coords[r][1], width, height);
    const std::int64_t idx[4] = {q.y0 * width + q.x0, q.y1 * width + q.x0, q.y0 * width + q.x1,
                                 q.y1 * width + q.x1};
    for (int j = 0; j < 4; ++j) {
      index[static_cast<std::size_t>(r * 4 + j)] = idx[j];
      y[r * 4 + j] = mv[r * m + idx[j]];
    }
  }
  return g.record(std::move(y), {maps}, [maps, k, m, index = std::move(index)](
                                            Graph<T>& g, const Tensor<T>& gy) {
    Tensor<T>& gm = g.grad_buffer(maps);
    for (std::int64_t r = 0; r < k; ++r)
      for (int j = 0; j < 4; ++j) gm[r * m + index[static_cast<std::size_t>(r * 4 + j)]] += gy[r * 4 + j];
  });
}

template <typename T>
Var<T> window_distance(Var<T> offsets, int window, double p) {
  Graph<T>& g = graph_of(offsets);
  const Tensor<T>& ov = offsets.value();
  require_rank(ov, 2, "window_distance");
  if (ov.dim(1) != 2) throw ConfigError("window_distance: offsets must be [K,2]");
  if (!(p >= 1.0)) throw ConfigError("window_distance: p must be >= 1");
  const auto k = ov.dim(0);
  const int r = window / 2;
  const std::int64_t nn = std::int64_t(window) * window;
  Tensor<T> y({k, nn});
  auto norm = [p](double a, double b) {
    if (p == 1.0) return std::abs(a) + std::abs(b);
    if (p == 2.0) return std::sqrt(a * a + b * b);
    return std::pow(std::pow(std::abs(a), p) + std::pow(std::abs(b), p), 1.0 / p);
  };
  for (std::int64_t i = 0; i < k; ++i)
    for (int dy = -r; dy <= r; ++dy)
      for (int dx = -r; dx <= r; ++dx)
        y[i * nn + (dy + r) * window + (dx + r)] =
            T(norm(dx - double(ov[i * 2]), dy - double(ov[i * 2 + 1])));
  Tensor<T> ycopy = y;
  return g.record(std::move(y), {offsets}, [=, ys = std::move(ycopy)](Graph<T>& g,
                                                                     const Tensor<T>& gy) {
    const Tensor<T>& ov = g.value(offsets);
    Tensor<T>& go = g.grad_buffer(offsets);
    auto dnorm = [p](double a, double n) {
      const double sgn = a > 0 ? 1.0 : (a < 0 ? -1.0 : 0.0);
      if (p == 1.0) return sgn;
      if (n <= 0.0) return 0.0;
      return sgn * std::pow(std::abs(a) / n, p - 1.0);
    };
    for (std::int64_t i = 0; i < k; ++i) {
      double gx = 0.0, gyy = 0.0;
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
          const auto idx = i * nn + (dy + r) * window + (dx + r);
          const double a = dx - double(ov[i * 2]);
          const double b = dy - double(ov[i * 2 + 1]);
          const double n = ys[idx];
          gx -= double(gy[idx]) * dnorm(a, n);
          gyy -= double(gy[idx]) * dnorm(b, n);
        }
      go[i * 2] += T(gx);
      go[i * 2 + 1] += T(gyy);
    }
  });
}

#define ALIKE_INSTANTIATE_OPS(T)                                                              \
  template Var<T> relu(Var<T>);                                                               \
  template Var<T> sigmoid(Var<T>);                                                            \
  template Var<T> exp(Var<T>);                                                                \
  template Var<T> log(Var<T>);                                                                \
  template Var<T> sqrt(Var<T>);                                                               \
  template Var<T> abs(Var<T>);                                                                \
  template Var<T> add(Var<T>, Var<T>);                                                        \
  template Var<T> sub(Var<T>, Var<T>);                                                        \
  template Var<T> mul(Var<T>, Var<T>);                                                        \
  template Var<T> div(Var<T>, Var<T>);                                                        \
  template Var<T> add_scalar(Var<T>, T);                                                      \
  template Var<T> mul_scalar(Var<T>, T);                                                      \
  template Var<T> scale(Var<T>, Var<T>);                                                      \
  template Var<T> divide(Var<T>, Var<T>);                                                     \
  template Var<T> sum(Var<T>);                                                                \
  template Var<T> mean(Var<T>);                                                               \
  template Var<T> max(Var<T>);                                                                \
  template Var<T> sum_rows(Var<T>);                                                           \
  template Var<T> row_dot(Var<T>, Var<T>);                                                    \
  template Var<T> reshape(Var<T>, Shape);                                                     \
  template Var<T> gather_rows(Var<T>, const std::vector<std::int64_t>&);                      \
  template Var<T> concat_rows(const std::vector<Var<T>>&);                                    \
  template Var<T> concat_channels(const std::vector<Var<T>>&);                                \
  template Var<T> slice_channels(Var<T>, std::int64_t, std::int64_t);                         \
  template Var<T> matmul(Var<T>, Var<T>, bool, bool);                                         \
  template Var<T> softmax_rows(Var<T>);                                                       \
  template Var<T> log_softmax_rows(Var<T>);                                                   \
  template Var<T> l2_normalize_rows(Var<T>);                                                  \
  template Var<T> l2_normalize_channels(Var<T>);                                              \
  template Var<T> lp_norm_rows(Var<T>, double);                                               \
  template Var<T> conv2d(Var<T>, Var<T>, Var<T>, int, int);                                   \
  template Var<T> maxpool2d(Var<T>, int);                                                     \
  template Var<T> upsample_bilinear(Var<T>, std::int64_t, std::int64_t);                     \
  template Var<T> bilinear_sample(Var<T>, Var<T>);                                            \
  template Var<T> gather_windows(Var<T>, const std::vector<PixelPos>&, int);                  \
  template Var<T> bilinear_weights(Var<T>, std::int64_t, std::int64_t);                       \
  template Var<T> gather_corners(Var<T>, const std::vector<std::array<double, 2>>&,           \
                                 std::int64_t, std::int64_t);                                 \
  template Var<T> window_distance(Var<T>, int, double);

ALIKE_INSTANTIATE_OPS(float)
ALIKE_INSTANTIATE_OPS(double)

}  // namespace ops
}  // namespace alike

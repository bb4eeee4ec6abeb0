#include "v2e/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace v2e::ag {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

// Grad buffer of parent i, or nullptr when it does not take a gradient.
double* parent_grad(Node& self, size_t i) {
  Node& p = *self.parents[i];
  if (!p.requires_grad) return nullptr;
  return p.grad_buffer().data();
}

const double* parent_value(Node& self, size_t i) {
  return self.parents[i]->value.data();
}

int norm_axis(int axis, int rank) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw std::out_of_range("axis out of range");
  return axis;
}

// View of a shape as [outer, n, inner] around `axis`.
struct AxisSplit {
  int64_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, int axis) {
  AxisSplit r;
  for (int i = 0; i < axis; ++i) r.outer *= s[static_cast<size_t>(i)];
  r.n = s[static_cast<size_t>(axis)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

struct Broadcast {
  Shape out;
  std::vector<int64_t> stride_a, stride_b;  // per output axis, 0 if broadcast
  bool same = false;
};

Broadcast broadcast_shapes(const Shape& a, const Shape& b) {
  Broadcast r;
  if (a == b) {
    r.out = a;
    r.same = true;
    return r;
  }
  const size_t rank = std::max(a.size(), b.size());
  r.out.assign(rank, 1);
  std::vector<int64_t> da(rank, 1), db(rank, 1);
  for (size_t i = 0; i < a.size(); ++i) da[rank - a.size() + i] = a[i];
  for (size_t i = 0; i < b.size(); ++i) db[rank - b.size() + i] = b[i];
  for (size_t i = 0; i < rank; ++i) {
    if (da[i] != db[i] && da[i] != 1 && db[i] != 1) {
      throw std::invalid_argument("cannot broadcast " + shape_str(a) + " with " +
                                  shape_str(b));
    }
    r.out[i] = std::max(da[i], db[i]);
  }
  r.stride_a.assign(rank, 0);
  r.stride_b.assign(rank, 0);
  int64_t sa = 1, sb = 1;
  for (size_t i = rank; i-- > 0;) {
    r.stride_a[i] = da[i] == 1 ? 0 : sa;
    r.stride_b[i] = db[i] == 1 ? 0 : sb;
    sa *= da[i];
    sb *= db[i];
  }
  return r;
}

template <class F>
void for_each_broadcast(const Broadcast& bc, F&& f) {
  const int64_t total = numel_of(bc.out);
  if (bc.same) {
    for (int64_t i = 0; i < total; ++i) f(i, i, i);
    return;
  }
  const size_t rank = bc.out.size();
  std::vector<int64_t> idx(rank, 0);
  int64_t ia = 0, ib = 0;
  for (int64_t o = 0; o < total; ++o) {
    f(o, ia, ib);
    for (size_t d = rank; d-- > 0;) {
      ++idx[d];
      ia += bc.stride_a[d];
      ib += bc.stride_b[d];
      if (idx[d] < bc.out[d]) break;
      ia -= bc.stride_a[d] * idx[d];
      ib -= bc.stride_b[d] * idx[d];
      idx[d] = 0;
    }
  }
}

// Binary op with local partial derivatives da(a,b,out), db(a,b,out).
template <class Fwd, class Da, class Db>
Tensor binary_op(const Tensor& a, const Tensor& b, Fwd fwd, Da da, Db db) {
  Broadcast bc = broadcast_shapes(a.shape(), b.shape());
  std::vector<double> out(static_cast<size_t>(numel_of(bc.out)));
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  for_each_broadcast(bc, [&](int64_t o, int64_t ia, int64_t ib) {
    out[static_cast<size_t>(o)] = fwd(pa[ia], pb[ib]);
  });
  Shape shape = bc.out;
  return make_result(std::move(shape), std::move(out), {a, b},
                     [bc, da, db](Node& self) {
                       const double* va = parent_value(self, 0);
                       const double* vb = parent_value(self, 1);
                       double* ga = parent_grad(self, 0);
                       double* gb = parent_grad(self, 1);
                       const double* g = self.grad.data();
                       const double* y = self.value.data();
                       for_each_broadcast(bc, [&](int64_t o, int64_t ia, int64_t ib) {
                         if (ga) ga[ia] += g[o] * da(va[ia], vb[ib], y[o]);
                         if (gb) gb[ib] += g[o] * db(va[ia], vb[ib], y[o]);
                       });
                     });
}

// Unary op with derivative dx(x, y).
template <class Fwd, class Dx>
Tensor unary_op(const Tensor& x, Fwd fwd, Dx dx) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (auto& v : out) v = fwd(v);
  return make_result(x.shape(), std::move(out), {x}, [dx](Node& self) {
    double* gx = parent_grad(self, 0);
    if (!gx) return;
    const double* vx = parent_value(self, 0);
    const size_t n = self.value.size();
    for (size_t i = 0; i < n; ++i) gx[i] += self.grad[i] * dx(vx[i], self.value[i]);
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, [](double x, double y) { return x + y; },
      [](double, double, double) { return 1.0; },
      [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, [](double x, double y) { return x - y; },
      [](double, double, double) { return 1.0; },
      [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, [](double x, double y) { return x * y; },
      [](double, double y, double) { return y; },
      [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, [](double x, double y) { return x / y; },
      [](double, double y, double) { return 1.0 / y; },
      [](double x, double y, double) { return -x / (y * y); });
}

Tensor minimum(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, [](double x, double y) { return std::min(x, y); },
      [](double x, double y, double) { return x <= y ? 1.0 : 0.0; },
      [](double x, double y, double) { return x <= y ? 0.0 : 1.0; });
}

Tensor maximum(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, [](double x, double y) { return std::max(x, y); },
      [](double x, double y, double) { return x >= y ? 1.0 : 0.0; },
      [](double x, double y, double) { return x >= y ? 0.0 : 1.0; });
}

Tensor add_scalar(const Tensor& x, double c) {
  return unary_op(
      x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& x, double c) {
  return unary_op(
      x, [c](double v) { return v * c; }, [c](double, double) { return c; });
}

Tensor exp(const Tensor& x) {
  return unary_op(
      x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary_op(
      x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor safe_sqrt(const Tensor& x, double floor) {
  return unary_op(
      x, [floor](double v) { return std::sqrt(std::max(v, floor)); },
      [floor](double v, double y) { return v < floor ? 0.0 : 0.5 / y; });
}

Tensor abs(const Tensor& x) {
  return unary_op(
      x, [](double v) { return std::fabs(v); },
      [](double v, double) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
}

Tensor relu(const Tensor& x) {
  return unary_op(
      x, [](double v) { return v > 0 ? v : 0.0; },
      [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary_op(
      x,
      [](double v) {
        return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor gelu(const Tensor& x) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  return unary_op(
      x,
      [](double v) { return 0.5 * v * (1.0 + std::tanh(kC * (v + kA * v * v * v))); },
      [](double v, double) {
        const double u = kC * (v + kA * v * v * v);
        const double t = std::tanh(u);
        const double du = kC * (1.0 + 3.0 * kA * v * v);
        return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
      });
}

Tensor pow_scalar(const Tensor& x, double e) {
  return unary_op(
      x, [e](double v) { return std::pow(v, e); },
      [e](double v, double) { return e * std::pow(v, e - 1.0); });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  return unary_op(
      x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

Tensor sum(const Tensor& x) {
  double s = 0;
  for (double v : x.data()) s += v;
  return make_result({1}, {s}, {x}, [](Node& self) {
    double* gx = parent_grad(self, 0);
    if (!gx) return;
    const size_t n = self.parents[0]->value.size();
    for (size_t i = 0; i < n; ++i) gx[i] += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  return mul_scalar(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor sum(const Tensor& x, int axis, bool keepdim) {
  axis = norm_axis(axis, x.rank());
  const AxisSplit s = split_at(x.shape(), axis);
  Shape shape = x.shape();
  if (keepdim) {
    shape[static_cast<size_t>(axis)] = 1;
  } else {
    shape.erase(shape.begin() + axis);
    if (shape.empty()) shape = {1};
  }
  std::vector<double> out(static_cast<size_t>(s.outer * s.inner), 0.0);
  const double* px = x.data().data();
  for (int64_t o = 0; o < s.outer; ++o)
    for (int64_t k = 0; k < s.n; ++k)
      for (int64_t i = 0; i < s.inner; ++i)
        out[static_cast<size_t>(o * s.inner + i)] += px[(o * s.n + k) * s.inner + i];
  return make_result(std::move(shape), std::move(out), {x}, [s](Node& self) {
    double* gx = parent_grad(self, 0);
    if (!gx) return;
    for (int64_t o = 0; o < s.outer; ++o)
      for (int64_t k = 0; k < s.n; ++k)
        for (int64_t i = 0; i < s.inner; ++i)
          gx[(o * s.n + k) * s.inner + i] += self.grad[static_cast<size_t>(o * s.inner + i)];
  });
}

Tensor mean(const Tensor& x, int axis, bool keepdim) {
  const int a = norm_axis(axis, x.rank());
  return mul_scalar(sum(x, a, keepdim), 1.0 / static_cast<double>(x.dim(a)));
}

Tensor max(const Tensor& x, int axis, bool keepdim) {
  axis = norm_axis(axis, x.rank());
  const AxisSplit s = split_at(x.shape(), axis);
  Shape shape = x.shape();
  if (keepdim) {
    shape[static_cast<size_t>(axis)] = 1;
  } else {
    shape.erase(shape.begin() + axis);
    if (shape.empty()) shape = {1};
  }
  std::vector<double> out(static_cast<size_t>(s.outer * s.inner));
  std::vector<int64_t> arg(out.size(), 0);
  const double* px = x.data().data();
  for (int64_t o = 0; o < s.outer; ++o) {
    for (int64_t i = 0; i < s.inner; ++i) {
      int64_t best = 0;
      double bv = px[o * s.n * s.inner + i];
      for (int64_t k = 1; k < s.n; ++k) {
        const double v = px[(o * s.n + k) * s.inner + i];
        if (v > bv) {
          bv = v;
          best = k;
        }
      }
      out[static_cast<size_t>(o * s.inner + i)] = bv;
      arg[static_cast<size_t>(o * s.inner + i)] = best;
    }
  }
  return make_result(std::move(shape), std::move(out), {x},
                     [s, arg = std::move(arg)](Node& self) {
                       double* gx = parent_grad(self, 0);
                       if (!gx) return;
                       for (int64_t o = 0; o < s.outer; ++o)
                         for (int64_t i = 0; i < s.inner; ++i) {
                           const auto j = static_cast<size_t>(o * s.inner + i);
                           gx[(o * s.n + arg[j]) * s.inner + i] += self.grad[j];
                         }
                     });
}

Tensor reshape(const Tensor& x, Shape shape) {
  int64_t known = 1;
  int infer = -1;
  for (size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == -1) {
      infer = static_cast<int>(i);
    } else {
      known *= shape[i];
    }
  }
  if (infer >= 0) shape[static_cast<size_t>(infer)] = x.numel() / std::max<int64_t>(known, 1);
  if (numel_of(shape) != x.numel()) {
    throw std::invalid_argument("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result(std::move(shape), std::move(out), {x}, [](Node& self) {
    double* gx = parent_grad(self, 0);
    if (!gx) return;
    for (size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
  });
}

Tensor permute(const Tensor& x, const std::vector<int>& axes) {
  const int r = x.rank();
  if (static_cast<int>(axes.size()) != r) throw std::invalid_argument("permute: rank mismatch");
  const Shape& in = x.shape();
  std::vector<int64_t> in_stride(static_cast<size_t>(r), 1);
  for (int i = r - 2; i >= 0; --i)
    in_stride[static_cast<size_t>(i)] = in_stride[static_cast<size_t>(i + 1)] * in[static_cast<size_t>(i + 1)];
  Shape out_shape(static_cast<size_t>(r));
  std::vector<int64_t> src_stride(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) {
    const int a = norm_axis(axes[static_cast<size_t>(i)], r);
    out_shape[static_cast<size_t>(i)] = in[static_cast<size_t>(a)];
    src_stride[static_cast<size_t>(i)] = in_stride[static_cast<size_t>(a)];
  }
  // map[o] = source flat index for output flat index o
  const int64_t total = x.numel();
  std::vector<int64_t> map(static_cast<size_t>(total));
  std::vector<int64_t> idx(static_cast<size_t>(r), 0);
  int64_t src = 0;
  for (int64_t o = 0; o < total; ++o) {
    map[static_cast<size_t>(o)] = src;
    for (int d = r - 1; d >= 0; --d) {
      const auto du = static_cast<size_t>(d);
      ++idx[du];
      src += src_stride[du];
      if (idx[du] < out_shape[du]) break;
      src -= src_stride[du] * idx[du];
      idx[du] = 0;
    }
  }
  std::vector<double> out(static_cast<size_t>(total));
  const double* px = x.data().data();
  for (int64_t o = 0; o < total; ++o) out[static_cast<size_t>(o)] = px[map[static_cast<size_t>(o)]];
  return make_result(std::move(out_shape), std::move(out), {x},
                     [map = std::move(map)](Node& self) {
                       double* gx = parent_grad(self, 0);
                       if (!gx) return;
                       for (size_t o = 0; o < map.size(); ++o) gx[map[o]] += self.grad[o];
                     });
}

Tensor transpose(const Tensor& x, int a, int b) {
  std::vector<int> axes(static_cast<size_t>(x.rank()));
  for (int i = 0; i < x.rank(); ++i) axes[static_cast<size_t>(i)] = i;
  a = norm_axis(a, x.rank());
  b = norm_axis(b, x.rank());
  std::swap(axes[static_cast<size_t>(a)], axes[static_cast<size_t>(b)]);
  return permute(x, axes);
}

Tensor slice(const Tensor& x, int axis, int64_t start, int64_t length) {
  axis = norm_axis(axis, x.rank());
  const AxisSplit s = split_at(x.shape(), axis);
  if (start < 0 || length < 0 || start + length > s.n) {
    throw std::out_of_range("slice out of range on " + shape_str(x.shape()));
  }
  Shape shape = x.shape();
  shape[static_cast<size_t>(axis)] = length;
  std::vector<double> out(static_cast<size_t>(s.outer * length * s.inner));
  const double* px = x.data().data();
  for (int64_t o = 0; o < s.outer; ++o)
    std::copy_n(px + (o * s.n + start) * s.inner, length * s.inner,
                out.begin() + o * length * s.inner);
  return make_result(std::move(shape), std::move(out), {x},
                     [s, start, length](Node& self) {
                       double* gx = parent_grad(self, 0);
                       if (!gx) return;
                       for (int64_t o = 0; o < s.outer; ++o)
                         for (int64_t j = 0; j < length * s.inner; ++j)
                           gx[(o * s.n + start) * s.inner + j] +=
                               self.grad[static_cast<size_t>(o * length * s.inner + j)];
                     });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat of nothing");
  axis = norm_axis(axis, parts[0].rank());
  Shape shape = parts[0].shape();
  int64_t total_n = 0;
  std::vector<int64_t> widths;
  for (const auto& p : parts) {
    Shape ps = p.shape();
    if (ps.size() != shape.size()) throw std::invalid_argument("concat: rank mismatch");
    for (size_t d = 0; d < ps.size(); ++d)
      if (static_cast<int>(d) != axis && ps[d] != shape[d])
        throw std::invalid_argument("concat: shape mismatch " + shape_str(ps) + " vs " + shape_str(shape));
    widths.push_back(ps[static_cast<size_t>(axis)]);
    total_n += ps[static_cast<size_t>(axis)];
  }
  shape[static_cast<size_t>(axis)] = total_n;
  const AxisSplit s = split_at(shape, axis);
  std::vector<double> out(static_cast<size_t>(numel_of(shape)));
  int64_t offset = 0;
  for (size_t k = 0; k < parts.size(); ++k) {
    const double* pp = parts[k].data().data();
    const int64_t w = widths[k];
    for (int64_t o = 0; o < s.outer; ++o)
      std::copy_n(pp + o * w * s.inner, w * s.inner, out.begin() + (o * s.n + offset) * s.inner);
    offset += w;
  }
  return make_result(std::move(shape), std::move(out), parts,
                     [s, widths](Node& self) {
                       int64_t off = 0;
                       for (size_t k = 0; k < widths.size(); ++k) {
                         const int64_t w = widths[k];
                         if (double* g = parent_grad(self, k)) {
                           for (int64_t o = 0; o < s.outer; ++o)
                             for (int64_t j = 0; j < w * s.inner; ++j)
                               g[o * w * s.inner + j] +=
                                   self.grad[static_cast<size_t>((o * s.n + off) * s.inner + j)];
                         }
                         off += w;
                       }
                     });
}

Tensor index_select(const Tensor& x, const std::vector<int64_t>& indices) {
  const int64_t rows = x.dim(0);
  const int64_t row = x.numel() / std::max<int64_t>(rows, 1);
  Shape shape = x.shape();
  shape[0] = static_cast<int64_t>(indices.size());
  std::vector<double> out(static_cast<size_t>(numel_of(shape)));
  const double* px = x.data().data();
  for (size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || indices[i] >= rows) throw std::out_of_range("index_select");
    std::copy_n(px + indices[i] * row, row, out.begin() + static_cast<int64_t>(i) * row);
  }
  return make_result(std::move(shape), std::move(out), {x},
                     [indices, row](Node& self) {
                       double* gx = parent_grad(self, 0);
                       if (!gx) return;
                       for (size_t i = 0; i < indices.size(); ++i)
                         for (int64_t j = 0; j < row; ++j)
                           gx[indices[i] * row + j] += self.grad[i * static_cast<size_t>(row) + static_cast<size_t>(j)];
                     });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() == 3 && b.rank() == 2) {
    const int64_t bt = a.dim(0), m = a.dim(1), k = a.dim(2);
    Tensor flat = reshape(a, {bt * m, k});
    return reshape(matmul(flat, b), {bt, m, b.dim(1)});
  }
  int64_t batch = 1;
  int64_t m, k, n;
  if (a.rank() == 2 && b.rank() == 2) {
    m = a.dim(0);
    k = a.dim(1);
    n = b.dim(1);
    if (b.dim(0) != k) throw std::invalid_argument("matmul " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  } else if (a.rank() == 3 && b.rank() == 3) {
    batch = a.dim(0);
    m = a.dim(1);
    k = a.dim(2);
    n = b.dim(2);
    if (b.dim(0) != batch || b.dim(1) != k)
      throw std::invalid_argument("matmul " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  } else {
    throw std::invalid_argument("matmul: unsupported ranks");
  }
  std::vector<double> out(static_cast<size_t>(batch * m * n));
  for (int64_t t = 0; t < batch; ++t) {
    ConstMapMat A(a.data().data() + t * m * k, m, k);
    ConstMapMat B(b.data().data() + t * k * n, k, n);
    MapMat C(out.data() + t * m * n, m, n);
    C.noalias() = A * B;
  }
  Shape shape = a.rank() == 2 ? Shape{m, n} : Shape{batch, m, n};
  return make_result(std::move(shape), std::move(out), {a, b},
                     [batch, m, k, n](Node& self) {
                       double* ga = parent_grad(self, 0);
                       double* gb = parent_grad(self, 1);
                       for (int64_t t = 0; t < batch; ++t) {
                         ConstMapMat G(self.grad.data() + t * m * n, m, n);
                         if (ga) {
                           ConstMapMat B(parent_value(self, 1) + t * k * n, k, n);
                           MapMat GA(ga + t * m * k, m, k);
                           GA.noalias() += G * B.transpose();
                         }
                         if (gb) {
                           ConstMapMat A(parent_value(self, 0) + t * m * k, m, k);
                           MapMat GB(gb + t * k * n, k, n);
                           GB.noalias() += A.transpose() * G;
                         }
                       }
                     });
}

Tensor softmax(const Tensor& x, int axis) {
  axis = norm_axis(axis, x.rank());
  const AxisSplit s = split_at(x.shape(), axis);
  std::vector<double> out(x.data().begin(), x.data().end());
  for (int64_t o = 0; o < s.outer; ++o)
    for (int64_t i = 0; i < s.inner; ++i) {
      double mx = -INFINITY;
      for (int64_t k = 0; k < s.n; ++k) mx = std::max(mx, out[static_cast<size_t>((o * s.n + k) * s.inner + i)]);
      double z = 0;
      for (int64_t k = 0; k < s.n; ++k) {
        auto& v = out[static_cast<size_t>((o * s.n + k) * s.inner + i)];
        v = std::exp(v - mx);
        z += v;
      }
      for (int64_t k = 0; k < s.n; ++k) out[static_cast<size_t>((o * s.n + k) * s.inner + i)] /= z;
    }
  return make_result(x.shape(), std::move(out), {x}, [s](Node& self) {
    double* gx = parent_grad(self, 0);
    if (!gx) return;
    for (int64_t o = 0; o < s.outer; ++o)
      for (int64_t i = 0; i < s.inner; ++i) {
        double dot = 0;
        for (int64_t k = 0; k < s.n; ++k) {
          const auto j = static_cast<size_t>((o * s.n + k) * s.inner + i);
          dot += self.grad[j] * self.value[j];
        }
        for (int64_t k = 0; k < s.n; ++k) {
          const auto j = static_cast<size_t>((o * s.n + k) * s.inner + i);
          gx[j] += self.value[j] * (self.grad[j] - dot);
        }
      }
  });
}

Tensor log_softmax(const Tensor& x, int axis) {
  axis = norm_axis(axis, x.rank());
  const AxisSplit s = split_at(x.shape(), axis);
  std::vector<double> out(x.data().begin(), x.data().end());
  for (int64_t o = 0; o < s.outer; ++o)
    for (int64_t i = 0; i < s.inner; ++i) {
      double mx = -INFINITY;
      for (int64_t k = 0; k < s.n; ++k) mx = std::max(mx, out[static_cast<size_t>((o * s.n + k) * s.inner + i)]);
      double z = 0;
      for (int64_t k = 0; k < s.n; ++k) z += std::exp(out[static_cast<size_t>((o * s.n + k) * s.inner + i)] - mx);
      const double lz = mx + std::log(z);
      for (int64_t k = 0; k < s.n; ++k) out[static_cast<size_t>((o * s.n + k) * s.inner + i)] -= lz;
    }
  return make_result(x.shape(), std::move(out), {x}, [s](Node& self) {
    double* gx = parent_grad(self, 0);
    if (!gx) return;
    for (int64_t o = 0; o < s.outer; ++o)
      for (int64_t i = 0; i < s.inner; ++i) {
        double gsum = 0;
        for (int64_t k = 0; k < s.n; ++k) gsum += self.grad[static_cast<size_t>((o * s.n + k) * s.inner + i)];
        for (int64_t k = 0; k < s.n; ++k) {
          const auto j = static_cast<size_t>((o * s.n + k) * s.inner + i);
          gx[j] += self.grad[j] - std::exp(self.value[j]) * gsum;
        }
      }
  });
}

Tensor l2_normalize(const Tensor& x, int axis, double eps) {
  Tensor norm = safe_sqrt(sum(x * x, axis, true), eps);
  return x / norm;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  Tensor mu = mean(x, -1, true);
  Tensor centered = x - mu;
  Tensor var = mean(centered * centered, -1, true);
  Tensor normed = centered / safe_sqrt(var + eps, 0.0);
  return normed * gamma + beta;
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int padding) {
  if (x.rank() != 4 || w.rank() != 4) throw std::invalid_argument("conv2d expects rank-4 input and weight");
  const int64_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int64_t co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != ci) {
    throw std::invalid_argument("conv2d: input has " + std::to_string(ci) +
                                " channels, weight expects " + std::to_string(w.dim(1)));
  }
  const int64_t ho = (h + 2 * padding - kh) / stride + 1;
  const int64_t wo = (wd + 2 * padding - kw) / stride + 1;
  if (ho <= 0 || wo <= 0) throw std::invalid_argument("conv2d: empty output");
  const int64_t kdim = ci * kh * kw;
  const int64_t pix = ho * wo;
  // cols[img][kdim x pix]; a -1 entry in `src` marks zero padding.
  std::vector<int64_t> src(static_cast<size_t>(kdim * pix));
  for (int64_t c = 0; c < ci; ++c)
    for (int64_t a = 0; a < kh; ++a)
      for (int64_t b = 0; b < kw; ++b) {
        const int64_t row = (c * kh + a) * kw + b;
        for (int64_t oy = 0; oy < ho; ++oy)
          for (int64_t ox = 0; ox < wo; ++ox) {
            const int64_t iy = oy * stride - padding + a;
            const int64_t ix = ox * stride - padding + b;
            src[static_cast<size_t>(row * pix + oy * wo + ox)] =
                (iy < 0 || iy >= h || ix < 0 || ix >= wd) ? -1 : (c * h + iy) * wd + ix;
          }
      }
  std::vector<double> cols(static_cast<size_t>(n * kdim * pix));
  const double* px = x.data().data();
  for (int64_t img = 0; img < n; ++img) {
    const double* base = px + img * ci * h * wd;
    double* dst = cols.data() + img * kdim * pix;
    for (size_t j = 0; j < src.size(); ++j) dst[j] = src[j] < 0 ? 0.0 : base[src[j]];
  }
  std::vector<double> out(static_cast<size_t>(n * co * pix));
  ConstMapMat W(w.data().data(), co, kdim);
  for (int64_t img = 0; img < n; ++img) {
    ConstMapMat C(cols.data() + img * kdim * pix, kdim, pix);
    MapMat O(out.data() + img * co * pix, co, pix);
    O.noalias() = W * C;
    if (bias.defined()) {
      for (int64_t c = 0; c < co; ++c) O.row(c).array() += bias.data()[static_cast<size_t>(c)];
    }
  }
  std::vector<Tensor> parents{x, w};
  if (bias.defined()) parents.push_back(bias);
  const bool has_bias = bias.defined();
  return make_result(
      {n, co, ho, wo}, std::move(out), parents,
      [=, cols = std::move(cols), src = std::move(src)](Node& self) {
        double* gx = parent_grad(self, 0);
        double* gw = parent_grad(self, 1);
        double* gb = has_bias ? parent_grad(self, 2) : nullptr;
        ConstMapMat Wv(parent_value(self, 1), co, kdim);
        std::vector<double> dcols(gx ? static_cast<size_t>(kdim * pix) : 0);
        for (int64_t img = 0; img < n; ++img) {
          ConstMapMat G(self.grad.data() + img * co * pix, co, pix);
          if (gw) {
            ConstMapMat C(cols.data() + img * kdim * pix, kdim, pix);
            MapMat GW(gw, co, kdim);
            GW.noalias() += G * C.transpose();
          }
          if (gb) {
            for (int64_t c = 0; c < co; ++c) gb[c] += G.row(c).sum();
          }
          if (gx) {
            MapMat D(dcols.data(), kdim, pix);
            D.noalias() = Wv.transpose() * G;
            double* base = gx + img * ci * h * wd;
            for (size_t j = 0; j < src.size(); ++j)
              if (src[j] >= 0) base[src[j]] += dcols[j];
          }
        }
      });
}

Tensor affine_grid_sample(const Tensor& src, const Tensor& params, int64_t out_h, int64_t out_w) {
  if (src.rank() != 4) throw std::invalid_argument("affine_grid_sample: src must be [N,C,H,W]");
  const int64_t n = src.dim(0), c = src.dim(1), h = src.dim(2), w = src.dim(3);
  if (params.rank() != 2 || params.dim(0) != n || params.dim(1) != 4) {
    throw std::invalid_argument("affine_grid_sample: params must be [N,4], got " + shape_str(params.shape()));
  }
  auto target = [](int64_t i, int64_t len) {
    return len == 1 ? 0.0 : -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(len - 1);
  };
  std::vector<double> out(static_cast<size_t>(n * c * out_h * out_w), 0.0);
  const double* ps = src.data().data();
  const double* pp = params.data().data();
  const double half_w = 0.5 * static_cast<double>(w - 1);
  const double half_h = 0.5 * static_cast<double>(h - 1);
  auto read = [&](const double* plane, int64_t y, int64_t x) {
    return (y < 0 || y >= h || x < 0 || x >= w) ? 0.0 : plane[y * w + x];
  };
  for (int64_t b = 0; b < n; ++b) {
    const double sx = pp[b * 4 + 0], sy = pp[b * 4 + 1], tx = pp[b * 4 + 2], ty = pp[b * 4 + 3];
    for (int64_t oy = 0; oy < out_h; ++oy) {
      const double py = (sy * target(oy, out_h) + ty + 1.0) * half_h;
      const auto y0 = static_cast<int64_t>(std::floor(py));
      const double fy = py - static_cast<double>(y0);
      for (int64_t ox = 0; ox < out_w; ++ox) {
        const double pxc = (sx * target(ox, out_w) + tx + 1.0) * half_w;
        const auto x0 = static_cast<int64_t>(std::floor(pxc));
        const double fx = pxc - static_cast<double>(x0);
        for (int64_t ch = 0; ch < c; ++ch) {
          const double* plane = ps + (b * c + ch) * h * w;
          const double v = (1 - fy) * ((1 - fx) * read(plane, y0, x0) + fx * read(plane, y0, x0 + 1)) +
                           fy * ((1 - fx) * read(plane, y0 + 1, x0) + fx * read(plane, y0 + 1, x0 + 1));
          out[static_cast<size_t>(((b * c + ch) * out_h + oy) * out_w + ox)] = v;
        }
      }
    }
  }
  return make_result(
      {n, c, out_h, out_w}, std::move(out), {src, params},
      [=](Node& self) {
        double* gs = parent_grad(self, 0);
        double* gp = parent_grad(self, 1);
        const double* vs = parent_value(self, 0);
        const double* vp = parent_value(self, 1);
        auto rd = [&](const double* plane, int64_t y, int64_t x) {
          return (y < 0 || y >= h || x < 0 || x >= w) ? 0.0 : plane[y * w + x];
        };
        auto wr = [&](double* plane, int64_t y, int64_t x, double g) {
          if (y >= 0 && y < h && x >= 0 && x < w) plane[y * w + x] += g;
        };
        for (int64_t b = 0; b < n; ++b) {
          const double sx = vp[b * 4 + 0], sy = vp[b * 4 + 1], tx = vp[b * 4 + 2], ty = vp[b * 4 + 3];
          double dsx = 0, dsy = 0, dtx = 0, dty = 0;
          for (int64_t oy = 0; oy < out_h; ++oy) {
            const double yt = target(oy, out_h);
            const double py = (sy * yt + ty + 1.0) * half_h;
            const auto y0 = static_cast<int64_t>(std::floor(py));
            const double fy = py - static_cast<double>(y0);
            for (int64_t ox = 0; ox < out_w; ++ox) {
              const double xt = target(ox, out_w);
              const double pxc = (sx * xt + tx + 1.0) * half_w;
              const auto x0 = static_cast<int64_t>(std::floor(pxc));
              const double fx = pxc - static_cast<double>(x0);
              double gpx = 0, gpy = 0;
              for (int64_t ch = 0; ch < c; ++ch) {
                const double g = self.grad[static_cast<size_t>(((b * c + ch) * out_h + oy) * out_w + ox)];
                if (g == 0.0) continue;
                if (gs) {
                  double* plane = gs + (b * c + ch) * h * w;
                  wr(plane, y0, x0, g * (1 - fy) * (1 - fx));
                  wr(plane, y0, x0 + 1, g * (1 - fy) * fx);
                  wr(plane, y0 + 1, x0, g * fy * (1 - fx));
                  wr(plane, y0 + 1, x0 + 1, g * fy * fx);
                }
                if (gp) {
                  const double* plane = vs + (b * c + ch) * h * w;
                  const double v00 = rd(plane, y0, x0), v01 = rd(plane, y0, x0 + 1);
                  const double v10 = rd(plane, y0 + 1, x0), v11 = rd(plane, y0 + 1, x0 + 1);
                  gpx += g * ((1 - fy) * (v01 - v00) + fy * (v11 - v10));
                  gpy += g * ((1 - fx) * (v10 - v00) + fx * (v11 - v01));
                }
              }
              dsx += gpx * half_w * xt;
              dtx += gpx * half_w;
              dsy += gpy * half_h * yt;
              dty += gpy * half_h;
            }
          }
          if (gp) {
            gp[b * 4 + 0] += dsx;
            gp[b * 4 + 1] += dsy;
            gp[b * 4 + 2] += dtx;
            gp[b * 4 + 3] += dty;
          }
        }
      });
}

Tensor gem(const Tensor& x, const Tensor& p, double eps) {
  if (p.numel() != 1) throw std::invalid_argument("gem: p must be a scalar tensor");
  const double pv = p.item();
  if (!(pv > 0.0)) throw std::invalid_argument("gem: p must be positive, got " + std::to_string(pv));
  const int64_t s = x.dim(-1);
  const int64_t rows = x.numel() / s;
  Shape shape = x.shape();
  shape.pop_back();
  if (shape.empty()) shape = {1};
  std::vector<double> out(static_cast<size_t>(rows));
  std::vector<double> means(static_cast<size_t>(rows));
  const double* px = x.data().data();
  for (int64_t r = 0; r < rows; ++r) {
    double acc = 0;
    for (int64_t i = 0; i < s; ++i) acc += std::pow(std::max(px[r * s + i], eps), pv);
    const double m = acc / static_cast<double>(s);
    means[static_cast<size_t>(r)] = m;
    out[static_cast<size_t>(r)] = std::pow(m, 1.0 / pv);
  }
  return make_result(std::move(shape), std::move(out), {x, p},
                     [s, rows, eps, means = std::move(means)](Node& self) {
                       double* gx = parent_grad(self, 0);
                       double* gp = parent_grad(self, 1);
                       const double* vx = parent_value(self, 0);
                       const double pv = parent_value(self, 1)[0];
                       const double inv_s = 1.0 / static_cast<double>(s);
                       double dp = 0;
                       for (int64_t r = 0; r < rows; ++r) {
                         const double g = self.grad[static_cast<size_t>(r)];
                         const double y = self.value[static_cast<size_t>(r)];
                         const double m = means[static_cast<size_t>(r)];
                         double mlog = 0;  // mean(z^p ln z)
                         for (int64_t i = 0; i < s; ++i) {
                           const double v = vx[r * s + i];
                           const double z = std::max(v, eps);
                           const double zp = std::pow(z, pv);
                           if (gx && v >= eps) gx[r * s + i] += g * y / m * (zp / z) * inv_s;
                           mlog += zp * std::log(z);
                         }
                         mlog *= inv_s;
                         dp += g * y * (-std::log(m) / (pv * pv) + mlog / (pv * m));
                       }
                       if (gp) gp[0] += dp;
                     });
}

Tensor attention_gem(const Tensor& map, const Tensor& att, const Tensor& p, double eps) {
  if (p.numel() != 1) throw std::invalid_argument("attention_gem: p must be a scalar tensor");
  const double pv = p.item();
  if (!(pv > 0.0)) throw std::invalid_argument("attention_gem: p must be positive, got " + std::to_string(pv));
  if (map.rank() != 3 || att.rank() != 3 || map.dim(0) != att.dim(0) || map.dim(2) != att.dim(2))
    throw std::invalid_argument("attention_gem " + shape_str(map.shape()) + " vs " + shape_str(att.shape()));
  const int64_t n = map.dim(0), c = map.dim(1), m = att.dim(1), s = map.dim(2);
  const double eps_p = std::pow(eps, pv);

  // Powers with non-positive bases zeroed; such products are always clamped.
  auto powers = [](const double* x, int64_t count, double e, std::vector<double>& out) {
    out.resize(static_cast<size_t>(count));
    for (int64_t i = 0; i < count; ++i) out[static_cast<size_t>(i)] = x[i] > 0 ? std::pow(x[i], e) : 0.0;
  };
  // Calls fn(ci, si, mi) for every product F*A that falls below eps.
  auto for_each_clamped = [c, m, s, eps](const double* f, const double* a, auto&& fn) {
    for (int64_t si = 0; si < s; ++si) {
      double amin = a[si];
      for (int64_t mi = 1; mi < m; ++mi) amin = std::min(amin, a[mi * s + si]);
      for (int64_t ci = 0; ci < c; ++ci) {
        const double fv = f[ci * s + si];
        if (fv > 0 && fv * amin >= eps) continue;
        for (int64_t mi = 0; mi < m; ++mi)
          if (fv * a[mi * s + si] < eps) fn(ci, si, mi);
      }
    }
  };

  std::vector<double> sums(static_cast<size_t>(n * m * c));
  std::vector<double> out(sums.size());
  std::vector<double> fp, ap;
  for (int64_t b = 0; b < n; ++b) {
    const double* f = map.data().data() + b * c * s;
    const double* a = att.data().data() + b * m * s;
    powers(f, c * s, pv, fp);
    powers(a, m * s, pv, ap);
    MapMat S(sums.data() + b * m * c, m, c);
    S.noalias() = ConstMapMat(ap.data(), m, s) * ConstMapMat(fp.data(), c, s).transpose();
    for_each_clamped(f, a, [&](int64_t ci, int64_t si, int64_t mi) {
      S(mi, ci) += eps_p - ap[static_cast<size_t>(mi * s + si)] * fp[static_cast<size_t>(ci * s + si)];
    });
  }
  const double inv_s = 1.0 / static_cast<double>(s);
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::pow(sums[i] * inv_s, 1.0 / pv);

  return make_result({n, m, c}, std::move(out), {map, att, p},
                     [n, c, m, s, eps, sums = std::move(sums), powers, for_each_clamped](Node& self) {
                       double* gf = parent_grad(self, 0);
                       double* ga = parent_grad(self, 1);
                       double* gp = parent_grad(self, 2);
                       const double pv = parent_value(self, 2)[0];
                       const double log_s = std::log(static_cast<double>(s));
                       const double eps_p = std::pow(eps, pv), log_eps = std::log(eps);
                       std::vector<double> fp, ap, fp1, ap1, flog, alog;
                       RowMat G(m, c), T(m, c);
                       double dp = 0;
                       for (int64_t b = 0; b < n; ++b) {
                         const double* f = parent_value(self, 0) + b * c * s;
                         const double* a = parent_value(self, 1) + b * m * s;
                         powers(f, c * s, pv, fp);
                         powers(a, m * s, pv, ap);
                         const double* y = self.value.data() + b * m * c;
                         const double* g = self.grad.data() + b * m * c;
                         const double* sm = sums.data() + b * m * c;
                         for (int64_t i = 0; i < m * c; ++i) G.data()[i] = g[i] * y[i] / (pv * sm[i]);
                         ConstMapMat Ap(ap.data(), m, s), Fp(fp.data(), c, s);
                         if (gf) {
                           powers(f, c * s, pv - 1.0, fp1);
                           RowMat GA = G.transpose() * Ap;  // [c,s]
                           for_each_clamped(f, a, [&](int64_t ci, int64_t si, int64_t mi) {
                             GA(ci, si) -= G(mi, ci) * ap[static_cast<size_t>(mi * s + si)];
                           });
                           double* out = gf + b * c * s;
                           for (int64_t i = 0; i < c * s; ++i) out[i] += pv * fp1[static_cast<size_t>(i)] * GA.data()[i];
                         }
                         if (ga) {
                           powers(a, m * s, pv - 1.0, ap1);
                           RowMat GF = G * Fp;  // [m,s]
                           for_each_clamped(f, a, [&](int64_t ci, int64_t si, int64_t mi) {
                             GF(mi, si) -= G(mi, ci) * fp[static_cast<size_t>(ci * s + si)];
                           });
                           double* out = ga + b * m * s;
                           for (int64_t i = 0; i < m * s; ++i) out[i] += pv * ap1[static_cast<size_t>(i)] * GF.data()[i];
                         }
                         if (gp) {
                           flog.resize(fp.size());
                           alog.resize(ap.size());
                           for (size_t i = 0; i < fp.size(); ++i) flog[i] = f[i] > 0 ? fp[i] * std::log(f[i]) : 0.0;
                           for (size_t i = 0; i < ap.size(); ++i) alog[i] = a[i] > 0 ? ap[i] * std::log(a[i]) : 0.0;
                           T.noalias() = Ap * ConstMapMat(flog.data(), c, s).transpose() +
                                         ConstMapMat(alog.data(), m, s) * Fp.transpose();
                           for_each_clamped(f, a, [&](int64_t ci, int64_t si, int64_t mi) {
                             const double fv = f[ci * s + si], av = a[mi * s + si];
                             const double z = fv * av;
                             const double unclamped = (fv > 0 && av > 0) ? std::pow(z, pv) * std::log(z) : 0.0;
                             T(mi, ci) += eps_p * log_eps - unclamped;
                           });
                           for (int64_t i = 0; i < m * c; ++i) {
                             const double log_mean = std::log(sm[i]) - log_s;
                             dp += g[i] * y[i] * (-log_mean / (pv * pv) + T.data()[i] / (pv * sm[i]));
                           }
                         }
                       }
                       if (gp) gp[0] += dp;
                     });
}

Tensor delta_activation(const Tensor& x, double k, double t) {
  return unary_op(
      x,
      [k, t](double v) { return v > 0 ? k * std::pow(v + 1.0, t) : k * std::exp(v); },
      [k, t](double v, double y) { return v > 0 ? k * t * std::pow(v + 1.0, t - 1.0) : y; });
}

}  // namespace v2e::ag

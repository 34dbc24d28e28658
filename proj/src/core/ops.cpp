#include "ibakit/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "ibakit/error.hpp"
#include "ibakit/kernels.hpp"

namespace ibakit {
namespace {

const kernels::KernelTable& K() { return kernels::active(); }

bool wants_grad(std::initializer_list<const Tensor*> inputs) {
  if (current_tape() == nullptr) return false;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

Tensor result(Shape shape, std::vector<double> values, bool tracked) {
  Tensor out(std::move(shape), std::move(values));
  if (tracked) out.set_requires_grad(true);
  return out;
}

void record(std::initializer_list<Tensor> inputs, const Tensor& out, Tape::BackwardFn fn) {
  std::vector<Tensor> in(inputs);
  current_tape()->record(in, out, std::move(fn));
}

[[noreturn]] void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " +
                   shape_str(b));
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.begin(), small.end(), big.end() - static_cast<std::ptrdiff_t>(small.size()));
}

// Broadcast layout: `big` is repeated outer times over blocks of `inner`.
struct Broadcast {
  Shape shape;
  std::size_t outer = 1;
  std::size_t inner = 0;
  bool a_small = false;
  bool b_small = false;
};

Broadcast broadcast(const char* op, const Tensor& a, const Tensor& b) {
  Broadcast bc;
  if (a.shape() == b.shape()) {
    bc.shape = a.shape();
    bc.inner = a.numel();
  } else if (is_suffix(b.shape(), a.shape())) {
    bc.shape = a.shape();
    bc.inner = b.numel();
    bc.outer = bc.inner == 0 ? 0 : a.numel() / bc.inner;
    bc.b_small = true;
  } else if (is_suffix(a.shape(), b.shape())) {
    bc.shape = b.shape();
    bc.inner = a.numel();
    bc.outer = bc.inner == 0 ? 0 : b.numel() / bc.inner;
    bc.a_small = true;
  } else {
    shape_mismatch(op, a.shape(), b.shape());
  }
  return bc;
}

// Reduce a full-size gradient onto a possibly broadcast operand.
void reduce_into(const Broadcast& bc, bool small, std::span<const double> full,
                 std::vector<double>& dst) {
  if (!small) {
    K().add(full.size(), dst.data(), full.data(), dst.data());
    return;
  }
  for (std::size_t o = 0; o < bc.outer; ++o) {
    K().add(bc.inner, dst.data(), full.data() + o * bc.inner, dst.data());
  }
}

using BinaryKernel = void (*)(std::size_t, const double*, const double*, double*);

std::vector<double> apply_binary(const Broadcast& bc, const Tensor& a, const Tensor& b,
                                 BinaryKernel kern) {
  std::vector<double> out(shape_numel(bc.shape));
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  for (std::size_t o = 0; o < std::max<std::size_t>(bc.outer, 1); ++o) {
    const std::size_t off = o * bc.inner;
    kern(bc.inner, bc.a_small ? pa : pa + off, bc.b_small ? pb : pb + off, out.data() + off);
  }
  return out;
}

// Strides for reducing/slicing along one axis: [outer, n, inner].
struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.n = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

void require_axis(const char* op, const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw RangeError(std::string(op) + ": axis " + std::to_string(axis) +
                     " out of range for shape " + shape_str(x.shape()));
  }
}

std::size_t last_dim(const char* op, const Tensor& x) {
  if (x.rank() == 0) throw ShapeError(std::string(op) + ": needs rank >= 1, got scalar");
  return x.shape().back();
}

template <typename Forward, typename Derivative>
Tensor unary(const Tensor& x, Forward f, Derivative dfdx) {
  const auto xs = x.data();
  std::vector<double> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = f(xs[i]);
  const bool tracked = wants_grad({&x});
  Tensor y = result(x.shape(), std::move(out), tracked);
  if (tracked) {
    record({x}, y, [x, y, dfdx] {
      if (!x.requires_grad()) return;
      auto& gx = detail::grad_buffer(x);
      const auto gy = y.grad();
      const auto xs = x.data();
      const auto ys = y.data();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * dfdx(xs[i], ys[i]);
    });
  }
  return y;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  const Broadcast bc = broadcast("add", a, b);
  const bool tracked = wants_grad({&a, &b});
  Tensor out = result(bc.shape, apply_binary(bc, a, b, K().add), tracked);
  if (tracked) {
    record({a, b}, out, [a, b, out, bc] {
      const auto g = out.grad();
      if (a.requires_grad()) reduce_into(bc, bc.a_small, g, detail::grad_buffer(a));
      if (b.requires_grad()) reduce_into(bc, bc.b_small, g, detail::grad_buffer(b));
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  const Broadcast bc = broadcast("sub", a, b);
  const bool tracked = wants_grad({&a, &b});
  Tensor out = result(bc.shape, apply_binary(bc, a, b, K().sub), tracked);
  if (tracked) {
    record({a, b}, out, [a, b, out, bc] {
      const auto g = out.grad();
      if (a.requires_grad()) reduce_into(bc, bc.a_small, g, detail::grad_buffer(a));
      if (b.requires_grad()) {
        std::vector<double> ng(g.size());
        K().scale(g.size(), -1.0, g.data(), ng.data());
        reduce_into(bc, bc.b_small, ng, detail::grad_buffer(b));
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  const Broadcast bc = broadcast("mul", a, b);
  const bool tracked = wants_grad({&a, &b});
  Tensor out = result(bc.shape, apply_binary(bc, a, b, K().mul), tracked);
  if (tracked) {
    record({a, b}, out, [a, b, out, bc] {
      const auto g = out.grad();
      Tensor gt(out.shape(), std::vector<double>(g.begin(), g.end()));
      Broadcast layout = bc;
      layout.a_small = false;
      if (a.requires_grad()) {
        layout.b_small = bc.b_small;
        reduce_into(bc, bc.a_small, apply_binary(layout, gt, b, K().mul), detail::grad_buffer(a));
      }
      if (b.requires_grad()) {
        layout.b_small = bc.a_small;
        reduce_into(bc, bc.b_small, apply_binary(layout, gt, a, K().mul), detail::grad_buffer(b));
      }
    });
  }
  return out;
}

Tensor div(const Tensor& a, const Tensor& b) {
  const Broadcast bc = broadcast("div", a, b);
  std::vector<double> vals(shape_numel(bc.shape));
  {
    const auto pa = a.data();
    const auto pb = b.data();
    for (std::size_t o = 0; o < std::max<std::size_t>(bc.outer, 1); ++o) {
      for (std::size_t i = 0; i < bc.inner; ++i) {
        const std::size_t k = o * bc.inner + i;
        vals[k] = pa[bc.a_small ? i : k] / pb[bc.b_small ? i : k];
      }
    }
  }
  const bool tracked = wants_grad({&a, &b});
  Tensor out = result(bc.shape, std::move(vals), tracked);
  if (tracked) {
    record({a, b}, out, [a, b, out, bc] {
      const auto g = out.grad();
      const auto pa = a.data();
      const auto pb = b.data();
      std::vector<double> ga(g.size()), gb(g.size());
      for (std::size_t o = 0; o < std::max<std::size_t>(bc.outer, 1); ++o) {
        for (std::size_t i = 0; i < bc.inner; ++i) {
          const std::size_t k = o * bc.inner + i;
          const double av = pa[bc.a_small ? i : k];
          const double bv = pb[bc.b_small ? i : k];
          ga[k] = g[k] / bv;
          gb[k] = -g[k] * av / (bv * bv);
        }
      }
      if (a.requires_grad()) reduce_into(bc, bc.a_small, ga, detail::grad_buffer(a));
      if (b.requires_grad()) reduce_into(bc, bc.b_small, gb, detail::grad_buffer(b));
    });
  }
  return out;
}

Tensor add_scalar(const Tensor& x, double c) {
  return unary(x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& x, double c) {
  std::vector<double> out(x.numel());
  K().scale(out.size(), c, x.data().data(), out.data());
  const bool tracked = wants_grad({&x});
  Tensor y = result(x.shape(), std::move(out), tracked);
  if (tracked) {
    record({x}, y, [x, y, c] {
      if (!x.requires_grad()) return;
      auto& gx = detail::grad_buffer(x);
      K().axpy(gx.size(), c, y.grad().data(), gx.data());
    });
  }
  return y;
}

Tensor neg(const Tensor& x) { return mul_scalar(x, -1.0); }

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
    shape_mismatch("matmul", a.shape(), b.shape());
  }
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  std::vector<double> c(m * n, 0.0);
  K().gemm_acc(m, n, k, a.data().data(), b.data().data(), c.data());
  const bool tracked = wants_grad({&a, &b});
  Tensor out = result({m, n}, std::move(c), tracked);
  if (tracked) {
    record({a, b}, out, [a, b, out, m, k, n] {
      const double* g = out.grad().data();
      if (a.requires_grad()) {
        // dA = dC B^T
        std::vector<double> bt(n * k);
        const auto pb = b.data();
        for (std::size_t p = 0; p < k; ++p)
          for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = pb[p * n + j];
        K().gemm_acc(m, k, n, g, bt.data(), detail::grad_buffer(a).data());
      }
      if (b.requires_grad()) {
        // dB = A^T dC
        std::vector<double> at(k * m);
        const auto pa = a.data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) at[p * m + i] = pa[i * k + p];
        K().gemm_acc(k, n, m, at.data(), g, detail::grad_buffer(b).data());
      }
    });
  }
  return out;
}

Tensor transpose(const Tensor& x) {
  if (x.rank() != 2) throw ShapeError("transpose: needs rank 2, got " + shape_str(x.shape()));
  const std::size_t r = x.shape()[0], c = x.shape()[1];
  std::vector<double> out(r * c);
  const auto px = x.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = px[i * c + j];
  const bool tracked = wants_grad({&x});
  Tensor y = result({c, r}, std::move(out), tracked);
  if (tracked) {
    record({x}, y, [x, y, r, c] {
      if (!x.requires_grad()) return;
      auto& gx = detail::grad_buffer(x);
      const auto gy = y.grad();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += gy[j * r + i];
    });
  }
  return y;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) shape_mismatch("reshape", x.shape(), shape);
  const auto px = x.data();
  const bool tracked = wants_grad({&x});
  Tensor y = result(std::move(shape), std::vector<double>(px.begin(), px.end()), tracked);
  if (tracked) {
    record({x}, y, [x, y] {
      if (!x.requires_grad()) return;
      auto& gx = detail::grad_buffer(x);
      K().add(gx.size(), gx.data(), y.grad().data(), gx.data());
    });
  }
  return y;
}

Tensor exp(const Tensor& x) {
  return unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  for (double v : x.data()) {
    if (!(v > 0.0)) {
      std::ostringstream os;
      os << "log: non-positive input " << v;
      throw InvalidValueError(os.str());
    }
  }
  return unary(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor pow(const Tensor& x, double p) {
  return unary(x, [p](double v) { return std::pow(v, p); },
               [p](double v, double) { return p * std::pow(v, p - 1.0); });
}

Tensor sigmoid(const Tensor& x) {
  for (double v : x.data()) {
    if (std::isnan(v)) throw InvalidValueError("sigmoid: NaN input");
  }
  const double kLo = std::numeric_limits<double>::denorm_min();
  const double kHi = std::nextafter(1.0, 0.0);
  return unary(
      x,
      [kLo, kHi](double v) {
        double y;
        if (v >= 0.0) {
          y = 1.0 / (1.0 + std::exp(-v));
        } else {
          const double e = std::exp(v);
          y = e / (1.0 + e);
        }
        return std::clamp(y, kLo, kHi);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor gelu(const Tensor& x) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  return unary(
      x,
      [](double v) { return 0.5 * v * (1.0 + std::tanh(kC * (v + kA * v * v * v))); },
      [](double v, double) {
        const double t = std::tanh(kC * (v + kA * v * v * v));
        return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * kC * (1.0 + 3.0 * kA * v * v);
      });
}

Tensor relu(const Tensor& x) {
  return unary(x, [](double v) { return v > 0.0 ? v : 0.0; },
               [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor clamp_min(const Tensor& x, double lo) {
  return unary(x, [lo](double v) { return v < lo ? lo : v; },
               [lo](double v, double) { return v < lo ? 0.0 : 1.0; });
}

Tensor sum(const Tensor& x, std::size_t axis) {
  require_axis("sum", x, axis);
  const AxisSplit s = split_at(x.shape(), axis);
  Shape shape = x.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  std::vector<double> out(s.outer * s.inner, 0.0);
  const auto px = x.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t r = 0; r < s.n; ++r)
      K().add(s.inner, out.data() + o * s.inner, px.data() + (o * s.n + r) * s.inner,
              out.data() + o * s.inner);
  const bool tracked = wants_grad({&x});
  Tensor y = result(std::move(shape), std::move(out), tracked);
  if (tracked) {
    record({x}, y, [x, y, s] {
      if (!x.requires_grad()) return;
      auto& gx = detail::grad_buffer(x);
      const auto gy = y.grad();
      for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t r = 0; r < s.n; ++r)
          K().add(s.inner, gx.data() + (o * s.n + r) * s.inner, gy.data() + o * s.inner,
                  gx.data() + (o * s.n + r) * s.inner);
    });
  }
  return y;
}

Tensor mean(const Tensor& x, std::size_t axis) {
  require_axis("mean", x, axis);
  return mul_scalar(sum(x, axis), 1.0 / static_cast<double>(x.shape()[axis]));
}

Tensor sum_all(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  const bool tracked = wants_grad({&x});
  Tensor y = result({}, {total}, tracked);
  if (tracked) {
    record({x}, y, [x, y] {
      if (!x.requires_grad()) return;
      const double g = y.grad()[0];
      for (double& v : detail::grad_buffer(x)) v += g;
    });
  }
  return y;
}

Tensor mean_all(const Tensor& x) {
  return mul_scalar(sum_all(x), 1.0 / static_cast<double>(x.numel()));
}

namespace {

// Shared by softmax and masked_softmax; keep may be empty (no mask).
Tensor softmax_impl(const char* op, const Tensor& x, std::span<const std::uint8_t> keep) {
  const std::size_t n = last_dim(op, x);
  if (!keep.empty() && keep.size() != n) {
    throw ShapeError(std::string(op) + ": mask length " + std::to_string(keep.size()) +
                     " does not match last dim of " + shape_str(x.shape()));
  }
  const std::size_t rows = n == 0 ? 0 : x.numel() / n;
  const auto px = x.data();
  std::vector<double> out(x.numel(), 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = px.data() + r * n;
    double* o = out.data() + r * n;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (keep.empty() || keep[j]) mx = std::max(mx, in[j]);
    if (!std::isfinite(mx)) {
      throw InvalidValueError(std::string(op) + ": row has no finite unmasked entries");
    }
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (keep.empty() || keep[j]) {
        o[j] = std::exp(in[j] - mx);
        z += o[j];
      }
    }
    for (std::size_t j = 0; j < n; ++j) o[j] /= z;
  }
  const bool tracked = wants_grad({&x});
  Tensor y = result(x.shape(), std::move(out), tracked);
  if (tracked) {
    record({x}, y, [x, y, n, rows] {
      if (!x.requires_grad()) return;
      auto& gx = detail::grad_buffer(x);
      const auto gy = y.grad();
      const auto py = y.data();
      for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += gy[r * n + j] * py[r * n + j];
        for (std::size_t j = 0; j < n; ++j)
          gx[r * n + j] += py[r * n + j] * (gy[r * n + j] - dot);
      }
    });
  }
  return y;
}

}  // namespace

Tensor softmax(const Tensor& x) { return softmax_impl("softmax", x, {}); }

Tensor masked_softmax(const Tensor& x, std::span<const std::uint8_t> keep) {
  return softmax_impl("masked_softmax", x, keep);
}

Tensor log_softmax(const Tensor& x) {
  const std::size_t n = last_dim("log_softmax", x);
  const std::size_t rows = n == 0 ? 0 : x.numel() / n;
  const auto px = x.data();
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = px.data() + r * n;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, in[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(in[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = in[j] - lse;
  }
  const bool tracked = wants_grad({&x});
  Tensor y = result(x.shape(), std::move(out), tracked);
  if (tracked) {
    record({x}, y, [x, y, n, rows] {
      if (!x.requires_grad()) return;
      auto& gx = detail::grad_buffer(x);
      const auto gy = y.grad();
      const auto py = y.data();
      for (std::size_t r = 0; r < rows; ++r) {
        double gsum = 0.0;
        for (std::size_t j = 0; j < n; ++j) gsum += gy[r * n + j];
        for (std::size_t j = 0; j < n; ++j)
          gx[r * n + j] += gy[r * n + j] - std::exp(py[r * n + j]) * gsum;
      }
    });
  }
  return y;
}

Tensor gather_rows(const Tensor& table, std::span<const int> ids) {
  if (table.rank() != 2) {
    throw ShapeError("gather_rows: table must be rank 2, got " + shape_str(table.shape()));
  }
  const std::size_t v = table.shape()[0], d = table.shape()[1];
  std::vector<double> out(ids.size() * d);
  const auto pt = table.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= v) {
      throw RangeError("gather_rows: id " + std::to_string(ids[i]) + " outside table of " +
                       std::to_string(v) + " rows");
    }
    std::copy_n(pt.data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
  }
  const bool tracked = wants_grad({&table});
  Tensor y = result({ids.size(), d}, std::move(out), tracked);
  if (tracked) {
    std::vector<int> idx(ids.begin(), ids.end());
    record({table}, y, [table, y, idx = std::move(idx), d] {
      if (!table.requires_grad()) return;
      auto& gt = detail::grad_buffer(table);
      const auto gy = y.grad();
      for (std::size_t i = 0; i < idx.size(); ++i) {
        double* dst = gt.data() + static_cast<std::size_t>(idx[i]) * d;
        K().add(d, dst, gy.data() + i * d, dst);
      }
    });
  }
  return y;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const std::size_t n = last_dim("layer_norm", x);
  if (gain.shape() != Shape{n}) shape_mismatch("layer_norm gain", x.shape(), gain.shape());
  if (bias.shape() != Shape{n}) shape_mismatch("layer_norm bias", x.shape(), bias.shape());
  const std::size_t rows = n == 0 ? 0 : x.numel() / n;
  const auto px = x.data();
  const auto pg = gain.data();
  const auto pb = bias.data();
  std::vector<double> out(x.numel()), xhat(x.numel()), inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = px.data() + r * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += in[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[r * n + j] = (in[j] - mu) * inv_std[r];
      out[r * n + j] = pg[j] * xhat[r * n + j] + pb[j];
    }
  }
  const bool tracked = wants_grad({&x, &gain, &bias});
  Tensor y = result(x.shape(), std::move(out), tracked);
  if (tracked) {
    record({x, gain, bias}, y,
           [x, gain, bias, y, n, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)] {
             const auto gy = y.grad();
             const auto pg = gain.data();
             if (gain.requires_grad()) {
               auto& gg = detail::grad_buffer(gain);
               for (std::size_t r = 0; r < rows; ++r)
                 K().mul_acc(n, gy.data() + r * n, xhat.data() + r * n, gg.data());
             }
             if (bias.requires_grad()) {
               auto& gb = detail::grad_buffer(bias);
               for (std::size_t r = 0; r < rows; ++r)
                 K().add(n, gb.data(), gy.data() + r * n, gb.data());
             }
             if (x.requires_grad()) {
               auto& gx = detail::grad_buffer(x);
               std::vector<double> dxhat(n);
               const double inv_n = 1.0 / static_cast<double>(n);
               for (std::size_t r = 0; r < rows; ++r) {
                 double m1 = 0.0, m2 = 0.0;
                 for (std::size_t j = 0; j < n; ++j) {
                   dxhat[j] = gy[r * n + j] * pg[j];
                   m1 += dxhat[j];
                   m2 += dxhat[j] * xhat[r * n + j];
                 }
                 m1 *= inv_n;
                 m2 *= inv_n;
                 for (std::size_t j = 0; j < n; ++j)
                   gx[r * n + j] += inv_std[r] * (dxhat[j] - m1 - xhat[r * n + j] * m2);
               }
             }
           });
  }
  return y;
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  require_axis("concat", parts[0], axis);
  Shape shape = parts[0].shape();
  shape[axis] = 0;
  for (const Tensor& p : parts) {
    Shape a = p.shape(), b = parts[0].shape();
    if (a.size() != b.size()) shape_mismatch("concat", b, a);
    a[axis] = b[axis] = 0;
    if (a != b) shape_mismatch("concat", parts[0].shape(), p.shape());
    shape[axis] += p.shape()[axis];
  }
  const AxisSplit total = split_at(shape, axis);
  std::vector<double> out(shape_numel(shape));
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    const std::size_t w = p.shape()[axis] * total.inner;
    const auto pp = p.data();
    for (std::size_t o = 0; o < total.outer; ++o)
      std::copy_n(pp.data() + o * w, w, out.data() + o * total.n * total.inner + offset);
    offset += w;
  }
  bool tracked = false;
  if (current_tape() != nullptr) {
    for (const Tensor& p : parts) tracked = tracked || p.requires_grad();
  }
  Tensor y = result(std::move(shape), std::move(out), tracked);
  if (tracked) {
    std::vector<Tensor> in(parts.begin(), parts.end());
    current_tape()->record(in, y, [in, y, total, axis] {
      const auto gy = y.grad();
      std::size_t offset = 0;
      for (const Tensor& p : in) {
        const std::size_t w = p.shape()[axis] * total.inner;
        if (p.requires_grad()) {
          auto& gp = detail::grad_buffer(p);
          for (std::size_t o = 0; o < total.outer; ++o)
            K().add(w, gp.data() + o * w, gy.data() + o * total.n * total.inner + offset,
                    gp.data() + o * w);
        }
        offset += w;
      }
    });
  }
  return y;
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  require_axis("slice", x, axis);
  if (begin > end || end > x.shape()[axis]) {
    throw RangeError("slice: [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") invalid for axis " + std::to_string(axis) + " of " + shape_str(x.shape()));
  }
  const AxisSplit s = split_at(x.shape(), axis);
  Shape shape = x.shape();
  shape[axis] = end - begin;
  const std::size_t w = (end - begin) * s.inner;
  std::vector<double> out(s.outer * w);
  const auto px = x.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy_n(px.data() + o * s.n * s.inner + begin * s.inner, w, out.data() + o * w);
  const bool tracked = wants_grad({&x});
  Tensor y = result(std::move(shape), std::move(out), tracked);
  if (tracked) {
    record({x}, y, [x, y, s, begin, w] {
      if (!x.requires_grad()) return;
      auto& gx = detail::grad_buffer(x);
      const auto gy = y.grad();
      for (std::size_t o = 0; o < s.outer; ++o) {
        double* dst = gx.data() + o * s.n * s.inner + begin * s.inner;
        K().add(w, dst, gy.data() + o * w, dst);
      }
    });
  }
  return y;
}

Tensor select(const Tensor& x, std::size_t flat_index) {
  if (flat_index >= x.numel()) {
    throw RangeError("select: index " + std::to_string(flat_index) + " outside tensor of " +
                     std::to_string(x.numel()) + " elements");
  }
  const bool tracked = wants_grad({&x});
  Tensor y = result({}, {x.data()[flat_index]}, tracked);
  if (tracked) {
    record({x}, y, [x, y, flat_index] {
      if (x.requires_grad()) detail::grad_buffer(x)[flat_index] += y.grad()[0];
    });
  }
  return y;
}

}  // namespace ibakit

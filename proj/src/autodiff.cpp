#include "agsa/autodiff.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <sstream>

#include "agsa/error.hpp"

namespace agsa::ad {

namespace {

thread_local Tape* g_active_tape = nullptr;

thread_local std::array<double, static_cast<std::size_t>(Op::kCount)> g_backward_scale = [] {
  std::array<double, static_cast<std::size_t>(Op::kCount)> a{};
  a.fill(1.0);
  return a;
}();

// C(m,n) += op(A)(m,k) * op(B)(k,n), row-major. A is stored (k,m) when ta,
// B is stored (n,k) when tb.
void gemm_acc(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, const double* A,
              const double* B, double* C) {
  if (!tb) {
    for (std::size_t i = 0; i < m; ++i) {
      double* crow = C + i * n;
      for (std::size_t p = 0; p < k; ++p) {
        const double a = ta ? A[p * m + i] : A[i * k + p];
        if (a == 0.0) continue;
        const double* brow = B + p * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += a * brow[j];
      }
    }
    return;
  }
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double* bcol = B + j * k;
      double acc = 0.0;
      if (!ta) {
        const double* arow = A + i * k;
        for (std::size_t p = 0; p < k; ++p) acc += arow[p] * bcol[p];
      } else {
        for (std::size_t p = 0; p < k; ++p) acc += A[p * m + i] * bcol[p];
      }
      C[i * n + j] += acc;
    }
  }
}

std::vector<double>& grad_buffer(const Tensor& t) {
  auto& impl = t.impl();
  if (impl.grad.empty()) impl.grad.assign(impl.data.size(), 0.0);
  return impl.grad;
}

bool needs(const Tensor& t) { return t.requires_grad(); }

void require(bool cond, Op op, const std::string& msg) {
  if (!cond) throw ShapeError(std::string(op_name(op)) + ": " + msg);
}

std::size_t outer_size(const Shape& s, std::size_t axis) {
  std::size_t n = 1;
  for (std::size_t i = 0; i < axis; ++i) n *= s[i];
  return n;
}
std::size_t inner_size(const Shape& s, std::size_t axis) {
  std::size_t n = 1;
  for (std::size_t i = axis + 1; i < s.size(); ++i) n *= s[i];
  return n;
}

struct ConvGeometry {
  std::size_t batch, in_ch, h, w, out_ch, k, stride, pad, out_h, out_w;
};

ConvGeometry conv_geometry(const Tensor& x, const Tensor& weight, const OpAttrs& attrs) {
  require(x.rank() == 4, Op::kConv2d, "input must be (B,C,H,W), got " + to_string(x.shape()));
  require(weight.rank() == 4, Op::kConv2d, "weight must be (O,C,k,k), got " + to_string(weight.shape()));
  require(weight.dim(1) == x.dim(1), Op::kConv2d,
          "channel mismatch: input " + to_string(x.shape()) + ", weight " + to_string(weight.shape()));
  require(weight.dim(2) == weight.dim(3), Op::kConv2d, "kernel must be square");
  require(attrs.stride >= 1, Op::kConv2d, "stride must be >= 1");
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), weight.dim(0), weight.dim(2), attrs.stride,
                 attrs.padding, 0, 0};
  require(g.h + 2 * g.pad >= g.k && g.w + 2 * g.pad >= g.k, Op::kConv2d,
          "kernel " + std::to_string(g.k) + " does not fit padded input " + to_string(x.shape()));
  g.out_h = (g.h + 2 * g.pad - g.k) / g.stride + 1;
  g.out_w = (g.w + 2 * g.pad - g.k) / g.stride + 1;
  return g;
}

// col is (C*k*k, out_h*out_w) for one batch element.
void im2col(const ConvGeometry& g, const double* img, double* col) {
  const std::size_t cols = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.in_ch; ++c) {
    for (std::size_t ki = 0; ki < g.k; ++ki) {
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        double* dst = col + ((c * g.k + ki) * g.k + kj) * cols;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.pad);
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.pad);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(g.h) && ix < static_cast<long>(g.w);
            dst[oy * g.out_w + ox] = inside ? img[(c * g.h + iy) * g.w + ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_acc(const ConvGeometry& g, const double* col, double* img) {
  const std::size_t cols = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.in_ch; ++c) {
    for (std::size_t ki = 0; ki < g.k; ++ki) {
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        const double* src = col + ((c * g.k + ki) * g.k + kj) * cols;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.pad);
            if (ix < 0 || ix >= static_cast<long>(g.w)) continue;
            img[(c * g.h + iy) * g.w + ix] += src[oy * g.out_w + ox];
          }
        }
      }
    }
  }
}

struct BmmGeometry {
  std::size_t batch, m, n, k;
};

BmmGeometry bmm_geometry(const Tensor& a, const Tensor& b, const OpAttrs& attrs) {
  require(a.rank() == 3 && b.rank() == 3, Op::kBatchMatMul,
          "operands must be rank 3, got " + to_string(a.shape()) + " and " + to_string(b.shape()));
  require(a.dim(0) == b.dim(0), Op::kBatchMatMul,
          "batch mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  const std::size_t m = attrs.transpose_a ? a.dim(2) : a.dim(1);
  const std::size_t ka = attrs.transpose_a ? a.dim(1) : a.dim(2);
  const std::size_t kb = attrs.transpose_b ? b.dim(2) : b.dim(1);
  const std::size_t n = attrs.transpose_b ? b.dim(1) : b.dim(2);
  require(ka == kb, Op::kBatchMatMul,
          "inner dimension mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  return {a.dim(0), m, n, ka};
}

void check_same_shape(Op op, const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), op, "shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
}

Tensor forward(Op op, std::span<const Tensor> in, const OpAttrs& attrs) {
  auto arity = [&](std::size_t n) {
    if (in.size() != n) {
      throw ContractError(std::string(op_name(op)) + ": expected " + std::to_string(n) + " inputs, got " +
                          std::to_string(in.size()));
    }
  };
  auto unary = [&](auto fn) {
    arity(1);
    std::vector<double> out(in[0].size());
    const auto x = in[0].data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fn(x[i]);
    return Tensor(in[0].shape(), std::move(out));
  };

  switch (op) {
    case Op::kMatMul: {
      arity(2);
      const Tensor& a = in[0];
      const Tensor& b = in[1];
      require(a.rank() == 2 && b.rank() == 2, op,
              "operands must be rank 2, got " + to_string(a.shape()) + " and " + to_string(b.shape()));
      require(a.dim(1) == b.dim(0), op, "inner dimension mismatch " + to_string(a.shape()) + " x " + to_string(b.shape()));
      std::vector<double> out(a.dim(0) * b.dim(1), 0.0);
      gemm_acc(false, false, a.dim(0), b.dim(1), a.dim(1), a.data().data(), b.data().data(), out.data());
      return Tensor({a.dim(0), b.dim(1)}, std::move(out));
    }
    case Op::kBatchMatMul: {
      arity(2);
      const auto g = bmm_geometry(in[0], in[1], attrs);
      std::vector<double> out(g.batch * g.m * g.n, 0.0);
      const std::size_t sa = in[0].size() / g.batch;
      const std::size_t sb = in[1].size() / g.batch;
      for (std::size_t i = 0; i < g.batch; ++i) {
        gemm_acc(attrs.transpose_a, attrs.transpose_b, g.m, g.n, g.k, in[0].data().data() + i * sa,
                 in[1].data().data() + i * sb, out.data() + i * g.m * g.n);
      }
      return Tensor({g.batch, g.m, g.n}, std::move(out));
    }
    case Op::kConv2d: {
      arity(2);
      const auto g = conv_geometry(in[0], in[1], attrs);
      const std::size_t ckk = g.in_ch * g.k * g.k;
      const std::size_t cols = g.out_h * g.out_w;
      std::vector<double> col(ckk * cols);
      std::vector<double> out(g.batch * g.out_ch * cols, 0.0);
      for (std::size_t b = 0; b < g.batch; ++b) {
        im2col(g, in[0].data().data() + b * g.in_ch * g.h * g.w, col.data());
        gemm_acc(false, false, g.out_ch, cols, ckk, in[1].data().data(), col.data(), out.data() + b * g.out_ch * cols);
      }
      return Tensor({g.batch, g.out_ch, g.out_h, g.out_w}, std::move(out));
    }
    case Op::kRelu:
      return unary([](double v) { return v > 0.0 ? v : 0.0; });
    case Op::kSigmoid:
      return unary([](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      });
    case Op::kTanh:
      return unary([](double v) { return std::tanh(v); });
    case Op::kExp:
      return unary([](double v) { return std::exp(v); });
    case Op::kLog:
      return unary([](double v) { return std::log(v); });
    case Op::kScale:
      return unary([s = attrs.scale](double v) { return v * s; });
    case Op::kClamp:
      return unary([lo = attrs.lo, hi = attrs.hi](double v) { return std::clamp(v, lo, hi); });
    case Op::kSoftmax:
    case Op::kLogSoftmax: {
      arity(1);
      require(in[0].rank() >= 1 && in[0].shape().back() > 0, op, "needs a non-empty last axis");
      const std::size_t n = in[0].shape().back();
      const std::size_t rows = in[0].size() / n;
      std::vector<double> out(in[0].size());
      const auto x = in[0].data();
      for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x.data() + r * n;
        double* yr = out.data() + r * n;
        const double mx = *std::max_element(xr, xr + n);
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) z += std::exp(xr[j] - mx);
        if (op == Op::kSoftmax) {
          for (std::size_t j = 0; j < n; ++j) yr[j] = std::exp(xr[j] - mx) / z;
        } else {
          const double lz = mx + std::log(z);
          for (std::size_t j = 0; j < n; ++j) yr[j] = xr[j] - lz;
        }
      }
      return Tensor(in[0].shape(), std::move(out));
    }
    case Op::kAdd:
    case Op::kSub:
    case Op::kMul:
    case Op::kMinimum: {
      arity(2);
      check_same_shape(op, in[0], in[1]);
      std::vector<double> out(in[0].size());
      const auto a = in[0].data();
      const auto b = in[1].data();
      for (std::size_t i = 0; i < out.size(); ++i) {
        switch (op) {
          case Op::kAdd: out[i] = a[i] + b[i]; break;
          case Op::kSub: out[i] = a[i] - b[i]; break;
          case Op::kMul: out[i] = a[i] * b[i]; break;
          default: out[i] = a[i] <= b[i] ? a[i] : b[i]; break;
        }
      }
      return Tensor(in[0].shape(), std::move(out));
    }
    case Op::kBiasAdd: {
      arity(2);
      const Tensor& x = in[0];
      require(attrs.axis < x.rank(), op, "axis out of range for " + to_string(x.shape()));
      require(in[1].rank() == 1 && in[1].dim(0) == x.dim(attrs.axis), op,
              "bias " + to_string(in[1].shape()) + " does not match axis " + std::to_string(attrs.axis) + " of " +
                  to_string(x.shape()));
      const std::size_t outer = outer_size(x.shape(), attrs.axis);
      const std::size_t n = x.dim(attrs.axis);
      const std::size_t inner = inner_size(x.shape(), attrs.axis);
      std::vector<double> out(x.data().begin(), x.data().end());
      const auto bias = in[1].data();
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t c = 0; c < n; ++c)
          for (std::size_t i = 0; i < inner; ++i) out[(o * n + c) * inner + i] += bias[c];
      return Tensor(x.shape(), std::move(out));
    }
    case Op::kSum:
    case Op::kMean: {
      arity(1);
      double s = 0.0;
      for (double v : in[0].data()) s += v;
      if (op == Op::kMean) {
        require(in[0].size() > 0, op, "mean of empty tensor");
        s /= static_cast<double>(in[0].size());
      }
      return Tensor(Shape{}, {s});
    }
    case Op::kSumLastAxis: {
      arity(1);
      require(in[0].rank() >= 1, op, "needs rank >= 1");
      const std::size_t n = in[0].shape().back();
      Shape out_shape(in[0].shape().begin(), in[0].shape().end() - 1);
      std::vector<double> out(numel(out_shape), 0.0);
      const auto x = in[0].data();
      for (std::size_t r = 0; r < out.size(); ++r)
        for (std::size_t j = 0; j < n; ++j) out[r] += x[r * n + j];
      return Tensor(std::move(out_shape), std::move(out));
    }
    case Op::kReshape: {
      arity(1);
      require(numel(attrs.shape) == in[0].size(), op,
              "cannot reshape " + to_string(in[0].shape()) + " to " + to_string(attrs.shape));
      return Tensor(attrs.shape, std::vector<double>(in[0].data().begin(), in[0].data().end()));
    }
    case Op::kSlice: {
      arity(1);
      const Tensor& x = in[0];
      require(attrs.axis < x.rank(), op, "axis out of range for " + to_string(x.shape()));
      require(attrs.offset + attrs.length <= x.dim(attrs.axis), op,
              "range [" + std::to_string(attrs.offset) + ", " + std::to_string(attrs.offset + attrs.length) +
                  ") exceeds " + to_string(x.shape()));
      const std::size_t outer = outer_size(x.shape(), attrs.axis);
      const std::size_t inner = inner_size(x.shape(), attrs.axis);
      const std::size_t n = x.dim(attrs.axis);
      Shape out_shape = x.shape();
      out_shape[attrs.axis] = attrs.length;
      std::vector<double> out(outer * attrs.length * inner);
      const auto src = x.data();
      for (std::size_t o = 0; o < outer; ++o) {
        std::copy_n(src.data() + (o * n + attrs.offset) * inner, attrs.length * inner,
                    out.data() + o * attrs.length * inner);
      }
      return Tensor(std::move(out_shape), std::move(out));
    }
    case Op::kConcat: {
      require(!in.empty(), op, "needs at least one input");
      const Shape& first = in[0].shape();
      require(attrs.axis < first.size(), op, "axis out of range for " + to_string(first));
      std::size_t total = 0;
      for (const auto& t : in) {
        bool ok = t.rank() == first.size();
        for (std::size_t d = 0; ok && d < first.size(); ++d)
          if (d != attrs.axis && t.dim(d) != first[d]) ok = false;
        require(ok, op, "incompatible part " + to_string(t.shape()) + " vs " + to_string(first));
        total += t.dim(attrs.axis);
      }
      const std::size_t outer = outer_size(first, attrs.axis);
      const std::size_t inner = inner_size(first, attrs.axis);
      Shape out_shape = first;
      out_shape[attrs.axis] = total;
      std::vector<double> out(outer * total * inner);
      for (std::size_t o = 0; o < outer; ++o) {
        std::size_t at = 0;
        for (const auto& t : in) {
          const std::size_t len = t.dim(attrs.axis) * inner;
          std::copy_n(t.data().data() + o * len, len, out.data() + o * total * inner + at);
          at += len;
        }
      }
      return Tensor(std::move(out_shape), std::move(out));
    }
    case Op::kCount:
      break;
  }
  throw UnsupportedOpError("unsupported primitive id " + std::to_string(static_cast<int>(op)));
}

void backward_node(const Node& node) {
  const Tensor& out = node.output;
  if (!out.has_grad()) return;
  std::vector<double> scaled;
  std::span<const double> g = out.impl().grad;
  const double factor = g_backward_scale[static_cast<std::size_t>(node.op)];
  if (factor != 1.0) {
    scaled.assign(g.begin(), g.end());
    for (double& v : scaled) v *= factor;
    g = scaled;
  }
  const auto& in = node.inputs;
  const auto y = out.data();

  auto elementwise = [&](const Tensor& x, auto dfn) {
    if (!needs(x)) return;
    auto& gx = grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += dfn(i) * g[i];
  };

  switch (node.op) {
    case Op::kMatMul: {
      const Tensor& a = in[0];
      const Tensor& b = in[1];
      const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
      if (needs(a)) gemm_acc(false, true, m, k, n, g.data(), b.data().data(), grad_buffer(a).data());
      if (needs(b)) gemm_acc(true, false, k, n, m, a.data().data(), g.data(), grad_buffer(b).data());
      break;
    }
    case Op::kBatchMatMul: {
      const Tensor& a = in[0];
      const Tensor& b = in[1];
      const auto geo = bmm_geometry(a, b, node.attrs);
      const bool ta = node.attrs.transpose_a, tb = node.attrs.transpose_b;
      const std::size_t sa = a.size() / geo.batch, sb = b.size() / geo.batch, sg = geo.m * geo.n;
      for (std::size_t i = 0; i < geo.batch; ++i) {
        const double* gi = g.data() + i * sg;
        const double* ai = a.data().data() + i * sa;
        const double* bi = b.data().data() + i * sb;
        if (needs(a)) {
          double* da = grad_buffer(a).data() + i * sa;
          if (!ta) gemm_acc(false, !tb, geo.m, geo.k, geo.n, gi, bi, da);
          else gemm_acc(tb, true, geo.k, geo.m, geo.n, bi, gi, da);
        }
        if (needs(b)) {
          double* db = grad_buffer(b).data() + i * sb;
          if (!tb) gemm_acc(!ta, false, geo.k, geo.n, geo.m, ai, gi, db);
          else gemm_acc(true, ta, geo.n, geo.k, geo.m, gi, ai, db);
        }
      }
      break;
    }
    case Op::kConv2d: {
      const Tensor& x = in[0];
      const Tensor& w = in[1];
      const auto geo = conv_geometry(x, w, node.attrs);
      const std::size_t ckk = geo.in_ch * geo.k * geo.k;
      const std::size_t cols = geo.out_h * geo.out_w;
      std::vector<double> col(ckk * cols);
      std::vector<double> dcol(ckk * cols);
      for (std::size_t b = 0; b < geo.batch; ++b) {
        const double* gb = g.data() + b * geo.out_ch * cols;
        if (needs(w)) {
          im2col(geo, x.data().data() + b * geo.in_ch * geo.h * geo.w, col.data());
          gemm_acc(false, true, geo.out_ch, ckk, cols, gb, col.data(), grad_buffer(w).data());
        }
        if (needs(x)) {
          std::fill(dcol.begin(), dcol.end(), 0.0);
          gemm_acc(true, false, ckk, cols, geo.out_ch, w.data().data(), gb, dcol.data());
          col2im_acc(geo, dcol.data(), grad_buffer(x).data() + b * geo.in_ch * geo.h * geo.w);
        }
      }
      break;
    }
    case Op::kRelu: {
      const auto x = in[0].data();
      elementwise(in[0], [&](std::size_t i) { return x[i] > 0.0 ? 1.0 : 0.0; });
      break;
    }
    case Op::kSigmoid:
      elementwise(in[0], [&](std::size_t i) { return y[i] * (1.0 - y[i]); });
      break;
    case Op::kTanh:
      elementwise(in[0], [&](std::size_t i) { return 1.0 - y[i] * y[i]; });
      break;
    case Op::kExp:
      elementwise(in[0], [&](std::size_t i) { return y[i]; });
      break;
    case Op::kLog: {
      const auto x = in[0].data();
      elementwise(in[0], [&](std::size_t i) { return 1.0 / x[i]; });
      break;
    }
    case Op::kScale:
      elementwise(in[0], [&](std::size_t) { return node.attrs.scale; });
      break;
    case Op::kClamp: {
      const auto x = in[0].data();
      elementwise(in[0], [&](std::size_t i) { return (x[i] >= node.attrs.lo && x[i] <= node.attrs.hi) ? 1.0 : 0.0; });
      break;
    }
    case Op::kSoftmax:
    case Op::kLogSoftmax: {
      if (!needs(in[0])) break;
      auto& gx = grad_buffer(in[0]);
      const std::size_t n = out.shape().back();
      const std::size_t rows = out.size() / n;
      for (std::size_t r = 0; r < rows; ++r) {
        const double* yr = y.data() + r * n;
        const double* gr = g.data() + r * n;
        double* dx = gx.data() + r * n;
        if (node.op == Op::kSoftmax) {
          double dot = 0.0;
          for (std::size_t j = 0; j < n; ++j) dot += gr[j] * yr[j];
          for (std::size_t j = 0; j < n; ++j) dx[j] += yr[j] * (gr[j] - dot);
        } else {
          double gs = 0.0;
          for (std::size_t j = 0; j < n; ++j) gs += gr[j];
          for (std::size_t j = 0; j < n; ++j) dx[j] += gr[j] - std::exp(yr[j]) * gs;
        }
      }
      break;
    }
    case Op::kAdd:
      elementwise(in[0], [](std::size_t) { return 1.0; });
      elementwise(in[1], [](std::size_t) { return 1.0; });
      break;
    case Op::kSub:
      elementwise(in[0], [](std::size_t) { return 1.0; });
      elementwise(in[1], [](std::size_t) { return -1.0; });
      break;
    case Op::kMul: {
      const auto a = in[0].data();
      const auto b = in[1].data();
      elementwise(in[0], [&](std::size_t i) { return b[i]; });
      elementwise(in[1], [&](std::size_t i) { return a[i]; });
      break;
    }
    case Op::kMinimum: {
      const auto a = in[0].data();
      const auto b = in[1].data();
      elementwise(in[0], [&](std::size_t i) { return a[i] <= b[i] ? 1.0 : 0.0; });
      elementwise(in[1], [&](std::size_t i) { return a[i] <= b[i] ? 0.0 : 1.0; });
      break;
    }
    case Op::kBiasAdd: {
      elementwise(in[0], [](std::size_t) { return 1.0; });
      if (!needs(in[1])) break;
      auto& gb = grad_buffer(in[1]);
      const Shape& s = out.shape();
      const std::size_t outer = outer_size(s, node.attrs.axis);
      const std::size_t n = s[node.attrs.axis];
      const std::size_t inner = inner_size(s, node.attrs.axis);
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t c = 0; c < n; ++c)
          for (std::size_t i = 0; i < inner; ++i) gb[c] += g[(o * n + c) * inner + i];
      break;
    }
    case Op::kSum:
    case Op::kMean: {
      if (!needs(in[0])) break;
      auto& gx = grad_buffer(in[0]);
      const double d = node.op == Op::kSum ? g[0] : g[0] / static_cast<double>(gx.size());
      for (double& v : gx) v += d;
      break;
    }
    case Op::kSumLastAxis: {
      if (!needs(in[0])) break;
      auto& gx = grad_buffer(in[0]);
      const std::size_t n = in[0].shape().back();
      for (std::size_t r = 0; r < g.size(); ++r)
        for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += g[r];
      break;
    }
    case Op::kReshape:
      elementwise(in[0], [](std::size_t) { return 1.0; });
      break;
    case Op::kSlice: {
      if (!needs(in[0])) break;
      auto& gx = grad_buffer(in[0]);
      const Shape& s = in[0].shape();
      const std::size_t outer = outer_size(s, node.attrs.axis);
      const std::size_t inner = inner_size(s, node.attrs.axis);
      const std::size_t n = s[node.attrs.axis];
      const std::size_t len = node.attrs.length * inner;
      for (std::size_t o = 0; o < outer; ++o) {
        double* dst = gx.data() + (o * n + node.attrs.offset) * inner;
        const double* src = g.data() + o * len;
        for (std::size_t i = 0; i < len; ++i) dst[i] += src[i];
      }
      break;
    }
    case Op::kConcat: {
      const Shape& s = out.shape();
      const std::size_t outer = outer_size(s, node.attrs.axis);
      const std::size_t inner = inner_size(s, node.attrs.axis);
      const std::size_t total = s[node.attrs.axis];
      std::size_t at = 0;
      for (const auto& t : in) {
        const std::size_t len = t.dim(node.attrs.axis) * inner;
        if (needs(t)) {
          auto& gt = grad_buffer(t);
          for (std::size_t o = 0; o < outer; ++o) {
            const double* src = g.data() + o * total * inner + at;
            double* dst = gt.data() + o * len;
            for (std::size_t i = 0; i < len; ++i) dst[i] += src[i];
          }
        }
        at += len;
      }
      break;
    }
    case Op::kCount:
      break;
  }
}

}  // namespace

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

const char* op_name(Op op) {
  switch (op) {
    case Op::kMatMul: return "matmul";
    case Op::kBatchMatMul: return "bmm";
    case Op::kConv2d: return "conv2d";
    case Op::kRelu: return "relu";
    case Op::kSigmoid: return "sigmoid";
    case Op::kTanh: return "tanh";
    case Op::kSoftmax: return "softmax";
    case Op::kLogSoftmax: return "log_softmax";
    case Op::kConcat: return "concat";
    case Op::kSlice: return "slice";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kScale: return "scale";
    case Op::kBiasAdd: return "bias_add";
    case Op::kSum: return "sum";
    case Op::kMean: return "mean";
    case Op::kSumLastAxis: return "sum_last_axis";
    case Op::kExp: return "exp";
    case Op::kLog: return "log";
    case Op::kReshape: return "reshape";
    case Op::kClamp: return "clamp";
    case Op::kMinimum: return "minimum";
    case Op::kCount: break;
  }
  return "unknown";
}

// Tensor -------------------------------------------------------------------

Tensor::Tensor() : impl_(std::make_shared<TensorImpl>()) { impl_->data.assign(1, 0.0); }

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) : impl_(std::make_shared<TensorImpl>()) {
  if (numel(shape) != data.size()) {
    throw ShapeError("tensor shape " + to_string(shape) + " holds " + std::to_string(numel(shape)) +
                     " values, got " + std::to_string(data.size()));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const std::size_t n = numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double value) {
  const std::size_t n = numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor(Shape{}, {value}, requires_grad); }

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor(Shape{values.size()}, std::vector<double>(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(data));
}

double Tensor::item() const {
  if (impl_->data.size() != 1) throw ShapeError("item() on tensor of shape " + to_string(impl_->shape));
  return impl_->data[0];
}

Tensor& Tensor::set_requires_grad(bool value) {
  impl_->requires_grad = value;
  return *this;
}

std::vector<double> Tensor::grad() const {
  if (impl_->grad.empty()) return std::vector<double>(impl_->data.size(), 0.0);
  return impl_->grad;
}

std::span<double> Tensor::mutable_grad() { return grad_buffer(*this); }

void Tensor::zero_grad() { std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0); }

Tensor Tensor::clone() const { return Tensor(impl_->shape, impl_->data); }

// Tape ---------------------------------------------------------------------

Tape::Tape() : previous_(g_active_tape) { g_active_tape = this; }

Tape::~Tape() {
  if (g_active_tape == this) g_active_tape = previous_;
}

Tape* Tape::active() { return g_active_tape; }

void Tape::record(Op op, std::vector<Tensor> inputs, const Tensor& output, const OpAttrs& attrs) {
  if (frozen_) throw StateError("cannot record on a tape after backward");
  output.impl().tape = this;
  output.impl().requires_grad = true;
  nodes_.push_back(Node{op, std::move(inputs), output, attrs});
}

void Tape::backward(const Tensor& output) {
  if (frozen_) throw StateError("backward called twice on the same tape");
  if (output.size() != 1) throw ContractError("backward needs a scalar output, got " + to_string(output.shape()));
  if (output.impl().tape != this) throw ContractError("backward output was not produced on this tape");
  frozen_ = true;
  grad_buffer(output)[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    backward_node(*it);
  }
}

// Primitive dispatch -------------------------------------------------------

Tensor eval_primitive(Op op, std::span<const Tensor> inputs, const OpAttrs& attrs) {
  if (static_cast<int>(op) < 0 || op >= Op::kCount) {
    throw UnsupportedOpError("unsupported primitive id " + std::to_string(static_cast<int>(op)));
  }
  Tensor out = forward(op, inputs, attrs);
#ifndef NDEBUG
  const auto finite = [](const Tensor& t) {
    return std::all_of(t.data().begin(), t.data().end(), [](double v) { return std::isfinite(v); });
  };
  if (std::all_of(inputs.begin(), inputs.end(), finite) && !finite(out)) {
    throw NumericError(std::string(op_name(op)) + " produced a non-finite value from finite inputs");
  }
#endif
  Tape* tape = Tape::active();
  if (tape != nullptr && std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); })) {
    tape->record(op, std::vector<Tensor>(inputs.begin(), inputs.end()), out, attrs);
  }
  return out;
}

namespace {
Tensor call(Op op, std::initializer_list<Tensor> inputs, const OpAttrs& attrs = {}) {
  return eval_primitive(op, std::span<const Tensor>(inputs.begin(), inputs.size()), attrs);
}
}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) { return call(Op::kMatMul, {a, b}); }

Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_a, bool transpose_b) {
  OpAttrs attrs;
  attrs.transpose_a = transpose_a;
  attrs.transpose_b = transpose_b;
  return call(Op::kBatchMatMul, {a, b}, attrs);
}

Tensor conv2d(const Tensor& x, const Tensor& weight, std::size_t stride, std::size_t padding) {
  OpAttrs attrs;
  attrs.stride = stride;
  attrs.padding = padding;
  return call(Op::kConv2d, {x, weight}, attrs);
}

Tensor conv_bias_add(const Tensor& x, const Tensor& bias) {
  OpAttrs attrs;
  attrs.axis = 1;
  return call(Op::kBiasAdd, {x, bias}, attrs);
}

Tensor relu(const Tensor& x) { return call(Op::kRelu, {x}); }
Tensor sigmoid(const Tensor& x) { return call(Op::kSigmoid, {x}); }
Tensor tanh(const Tensor& x) { return call(Op::kTanh, {x}); }
Tensor exp(const Tensor& x) { return call(Op::kExp, {x}); }
Tensor log(const Tensor& x) { return call(Op::kLog, {x}); }
Tensor softmax(const Tensor& x) { return call(Op::kSoftmax, {x}); }
Tensor log_softmax(const Tensor& x) { return call(Op::kLogSoftmax, {x}); }
Tensor add(const Tensor& a, const Tensor& b) { return call(Op::kAdd, {a, b}); }
Tensor sub(const Tensor& a, const Tensor& b) { return call(Op::kSub, {a, b}); }
Tensor mul(const Tensor& a, const Tensor& b) { return call(Op::kMul, {a, b}); }

Tensor scale(const Tensor& x, double factor) {
  OpAttrs attrs;
  attrs.scale = factor;
  return call(Op::kScale, {x}, attrs);
}

Tensor bias_add(const Tensor& x, const Tensor& bias) {
  if (x.rank() == 0) throw ShapeError("bias_add: needs rank >= 1");
  OpAttrs attrs;
  attrs.axis = x.rank() - 1;
  return call(Op::kBiasAdd, {x, bias}, attrs);
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  OpAttrs attrs;
  attrs.lo = lo;
  attrs.hi = hi;
  return call(Op::kClamp, {x}, attrs);
}

Tensor minimum(const Tensor& a, const Tensor& b) { return call(Op::kMinimum, {a, b}); }
Tensor sum(const Tensor& x) { return call(Op::kSum, {x}); }
Tensor mean(const Tensor& x) { return call(Op::kMean, {x}); }
Tensor sum_last_axis(const Tensor& x) { return call(Op::kSumLastAxis, {x}); }

Tensor reshape(const Tensor& x, Shape shape) {
  OpAttrs attrs;
  attrs.shape = std::move(shape);
  return call(Op::kReshape, {x}, attrs);
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  OpAttrs attrs;
  attrs.axis = axis;
  return eval_primitive(Op::kConcat, parts, attrs);
}

Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t offset, std::size_t length) {
  OpAttrs attrs;
  attrs.axis = axis;
  attrs.offset = offset;
  attrs.length = length;
  return call(Op::kSlice, {x}, attrs);
}

std::vector<Tensor> split(const Tensor& x, std::size_t axis, std::span<const std::size_t> sizes) {
  if (axis >= x.rank()) throw ShapeError("split: axis out of range for " + to_string(x.shape()));
  const std::size_t total = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
  if (total != x.dim(axis)) {
    throw ShapeError("split: sizes sum to " + std::to_string(total) + " but axis has " + std::to_string(x.dim(axis)));
  }
  std::vector<Tensor> parts;
  parts.reserve(sizes.size());
  std::size_t at = 0;
  for (std::size_t s : sizes) {
    parts.push_back(slice(x, axis, at, s));
    at += s;
  }
  return parts;
}

namespace testing {

BackwardScaleOverride::BackwardScaleOverride(Op op, double factor)
    : op_(op), previous_(g_backward_scale[static_cast<std::size_t>(op)]) {
  g_backward_scale[static_cast<std::size_t>(op)] = factor;
}

BackwardScaleOverride::~BackwardScaleOverride() { g_backward_scale[static_cast<std::size_t>(op_)] = previous_; }

}  // namespace testing

}  // namespace agsa::ad

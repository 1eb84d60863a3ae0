#include "stylesplit/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <cblas.h>

namespace stylesplit::ops {

using detail::Node;

namespace {

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " + shape_str(a) +
                              " and " + shape_str(b));
}

[[noreturn]] void shape_error(const char* op, const Shape& a, const std::string& why) {
  throw std::invalid_argument(std::string(op) + ": shape " + shape_str(a) + " " + why);
}

std::vector<std::size_t> strides_of(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

double* grad_of(const Node& self, std::size_t i) {
  auto& in = self.inputs[i];
  return in->requires_grad ? in->grad_buffer() : nullptr;
}

// Maps each output flat index onto flat indices of two broadcast operands.
struct Broadcast {
  Shape out;
  std::vector<std::size_t> ia, ib;
  bool same = false;
};

Broadcast plan_broadcast(const char* op, const Shape& a, const Shape& b) {
  Broadcast bc;
  if (a == b) {
    bc.out = a;
    bc.same = true;
    return bc;
  }
  std::size_t rank = std::max(a.size(), b.size());
  Shape pa(rank, 1), pb(rank, 1);
  std::copy(a.begin(), a.end(), pa.begin() + (rank - a.size()));
  std::copy(b.begin(), b.end(), pb.begin() + (rank - b.size()));
  bc.out.resize(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    if (pa[i] != pb[i] && pa[i] != 1 && pb[i] != 1) shape_error(op, a, b);
    bc.out[i] = std::max(pa[i], pb[i]);
  }
  auto sa = strides_of(pa), sb = strides_of(pb);
  for (std::size_t i = 0; i < rank; ++i) {
    if (pa[i] == 1) sa[i] = 0;
    if (pb[i] == 1) sb[i] = 0;
  }
  std::size_t n = shape_numel(bc.out);
  bc.ia.resize(n);
  bc.ib.resize(n);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t oa = 0, ob = 0;
  for (std::size_t f = 0; f < n; ++f) {
    bc.ia[f] = oa;
    bc.ib[f] = ob;
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      oa += sa[d];
      ob += sb[d];
      if (idx[d] < bc.out[d]) break;
      oa -= sa[d] * idx[d];
      ob -= sb[d] * idx[d];
      idx[d] = 0;
    }
  }
  return bc;
}

template <class F, class GA, class GB>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, F f, GA da, GB db) {
  auto bc = std::make_shared<Broadcast>(plan_broadcast(op, a.shape(), b.shape()));
  auto av = a.data(), bv = b.data();
  std::size_t n = shape_numel(bc->out);
  std::vector<double> out(n);
  if (bc->same) {
    for (std::size_t i = 0; i < n; ++i) out[i] = f(av[i], bv[i]);
  } else {
    for (std::size_t i = 0; i < n; ++i) out[i] = f(av[bc->ia[i]], bv[bc->ib[i]]);
  }
  return make_result(op, bc->out, std::move(out), {a, b}, [bc, da, db](const Node& self) {
    const auto& A = self.inputs[0]->value;
    const auto& B = self.inputs[1]->value;
    double* ga = grad_of(self, 0);
    double* gb = grad_of(self, 1);
    const auto& g = self.grad;
    for (std::size_t i = 0; i < g.size(); ++i) {
      std::size_t ia = bc->same ? i : bc->ia[i];
      std::size_t ib = bc->same ? i : bc->ib[i];
      if (ga) ga[ia] += g[i] * da(A[ia], B[ib]);
      if (gb) gb[ib] += g[i] * db(A[ia], B[ib]);
    }
  });
}

// y = f(x), dy/dx expressed through (x, y).
template <class F, class D>
Tensor unary(const char* op, const Tensor& a, F f, D d) {
  auto av = a.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  return make_result(op, a.shape(), std::move(out), {a}, [d](const Node& self) {
    double* ga = grad_of(self, 0);
    if (!ga) return;
    const auto& x = self.inputs[0]->value;
    for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i] * d(x[i], self.value[i]);
  });
}

// Row-major GEMM helper: C = alpha * op(A) * op(B) + beta * C.
void gemm(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, double alpha,
          const double* a, std::size_t lda, const double* b, std::size_t ldb, double beta,
          double* c, std::size_t ldc) {
  cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
              static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a,
              static_cast<int>(lda), b, static_cast<int>(ldb), beta, c, static_cast<int>(ldc));
}

std::pair<std::size_t, std::size_t> split_last(const Shape& s) {
  std::size_t inner = s.back();
  return {shape_numel(s) / inner, inner};
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double, double y) { return 1.0 / y; }, [](double x, double y) { return -x / (y * y); });
}

Tensor add_scalar(const Tensor& a, double c) {
  return unary("add_scalar", a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& a, double c) {
  return unary("mul_scalar", a, [c](double x) { return x * c; }, [c](double, double) { return c; });
}

Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

Tensor exp(const Tensor& a) {
  return unary("exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary("log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor sqrt(const Tensor& a) {
  return unary(
      "sqrt", a, [](double x) { return std::sqrt(x); },
      [](double, double y) { return y > 0 ? 0.5 / y : 0.0; });
}

Tensor abs(const Tensor& a) {
  return unary(
      "abs", a, [](double x) { return std::fabs(x); },
      [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

Tensor square(const Tensor& a) {
  return unary("square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      "sigmoid", a,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& a) {
  return unary(
      "tanh", a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor relu(const Tensor& a) {
  return unary(
      "relu", a, [](double x) { return x > 0 ? x : 0.0; }, [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& a, double slope) {
  return unary(
      "leaky_relu", a, [slope](double x) { return x > 0 ? x : slope * x; },
      [slope](double x, double) { return x > 0 ? 1.0 : slope; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.dim() != 2 || b.dim() != 2 || a.size(1) != b.size(0)) shape_error("matmul", a.shape(), b.shape());
  std::size_t m = a.size(0), k = a.size(1), n = b.size(1);
  std::vector<double> out(m * n, 0.0);
  gemm(false, false, m, n, k, 1.0, a.data().data(), k, b.data().data(), n, 0.0, out.data(), n);
  return make_result("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](const Node& self) {
    const double* g = self.grad.data();
    if (double* ga = grad_of(self, 0)) {
      gemm(false, true, m, k, n, 1.0, g, n, self.inputs[1]->value.data(), n, 1.0, ga, k);
    }
    if (double* gb = grad_of(self, 1)) {
      gemm(true, false, k, n, m, 1.0, self.inputs[0]->value.data(), k, g, n, 1.0, gb, n);
    }
  });
}

Tensor transpose(const Tensor& a) {
  if (a.dim() != 2) shape_error("transpose", a.shape(), "is not 2-D");
  return permute(a, {1, 0});
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.dim() != 2 || weight.dim() != 2 || x.size(1) != weight.size(1)) {
    shape_error("linear", x.shape(), weight.shape());
  }
  std::size_t n = x.size(0), in = x.size(1), out_dim = weight.size(0);
  bool has_bias = bias.defined();
  if (has_bias && (bias.dim() != 1 || bias.size(0) != out_dim)) shape_error("linear", weight.shape(), bias.shape());
  std::vector<double> out(n * out_dim, 0.0);
  if (has_bias) {
    auto bv = bias.data();
    for (std::size_t r = 0; r < n; ++r) std::copy(bv.begin(), bv.end(), out.begin() + r * out_dim);
  }
  gemm(false, true, n, out_dim, in, 1.0, x.data().data(), in, weight.data().data(), in,
       has_bias ? 1.0 : 0.0, out.data(), out_dim);
  std::vector<Tensor> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return make_result("linear", {n, out_dim}, std::move(out), std::move(inputs),
                     [n, in, out_dim, has_bias](const Node& self) {
                       const double* g = self.grad.data();
                       if (double* gx = grad_of(self, 0)) {
                         gemm(false, false, n, in, out_dim, 1.0, g, out_dim,
                              self.inputs[1]->value.data(), in, 1.0, gx, in);
                       }
                       if (double* gw = grad_of(self, 1)) {
                         gemm(true, false, out_dim, in, n, 1.0, g, out_dim,
                              self.inputs[0]->value.data(), in, 1.0, gw, in);
                       }
                       if (has_bias) {
                         if (double* gb = grad_of(self, 2)) {
                           for (std::size_t r = 0; r < n; ++r)
                             for (std::size_t o = 0; o < out_dim; ++o) gb[o] += g[r * out_dim + o];
                         }
                       }
                     });
}

namespace {

struct ConvGeom {
  std::size_t n, c, h, w, o, k, stride, pad, ho, wo;
};

// Valid output-column range [lo, hi) for kernel column kx.
std::pair<std::size_t, std::size_t> valid_cols(const ConvGeom& g, std::size_t kx) {
  std::size_t lo = 0;
  while (lo < g.wo && lo * g.stride + kx < g.pad) ++lo;
  std::size_t hi = lo;
  while (hi < g.wo && hi * g.stride + kx < g.pad + g.w) ++hi;
  return {lo, hi};
}

// Unfolds one sample into rows of a [C*k*k, ld] column matrix.
void im2col(const double* x, const ConvGeom& g, double* col, std::size_t ld) {
  for (std::size_t ci = 0; ci < g.c; ++ci) {
    const double* xc = x + ci * g.h * g.w;
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        auto [lo, hi] = valid_cols(g, kx);
        double* row = col + ((ci * g.k + ky) * g.k + kx) * ld;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          double* r = row + oy * g.wo;
          std::size_t iy = oy * g.stride + ky;
          if (iy < g.pad || iy >= g.pad + g.h || lo >= hi) {
            std::fill(r, r + g.wo, 0.0);
            continue;
          }
          const double* xr = xc + (iy - g.pad) * g.w + (lo * g.stride + kx - g.pad);
          std::fill(r, r + lo, 0.0);
          if (g.stride == 1) {
            std::copy(xr, xr + (hi - lo), r + lo);
          } else {
            for (std::size_t ox = lo; ox < hi; ++ox) r[ox] = xr[(ox - lo) * g.stride];
          }
          std::fill(r + hi, r + g.wo, 0.0);
        }
      }
    }
  }
}

void col2im(const double* col, const ConvGeom& g, double* x, std::size_t ld) {
  for (std::size_t ci = 0; ci < g.c; ++ci) {
    double* xc = x + ci * g.h * g.w;
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        auto [lo, hi] = valid_cols(g, kx);
        if (lo >= hi) continue;
        const double* row = col + ((ci * g.k + ky) * g.k + kx) * ld;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          std::size_t iy = oy * g.stride + ky;
          if (iy < g.pad || iy >= g.pad + g.h) continue;
          double* xr = xc + (iy - g.pad) * g.w + (lo * g.stride + kx - g.pad);
          const double* r = row + oy * g.wo;
          if (g.stride == 1) {
            for (std::size_t ox = lo; ox < hi; ++ox) xr[ox - lo] += r[ox];
          } else {
            for (std::size_t ox = lo; ox < hi; ++ox) xr[(ox - lo) * g.stride] += r[ox];
          }
        }
      }
    }
  }
}

// Column matrices above this many entries are rebuilt in the backward pass
// instead of being kept alive with the graph.
constexpr std::size_t kConvColCacheLimit = std::size_t{1} << 23;

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
  if (x.dim() != 4 || weight.dim() != 4 || weight.size(1) != x.size(1) || weight.size(2) != weight.size(3)) {
    shape_error("conv2d", x.shape(), weight.shape());
  }
  if (stride == 0) shape_error("conv2d", x.shape(), "with stride 0");
  ConvGeom g{x.size(0), x.size(1), x.size(2), x.size(3), weight.size(0), weight.size(2), stride, padding, 0, 0};
  if (g.h + 2 * g.pad < g.k || g.w + 2 * g.pad < g.k) shape_error("conv2d", x.shape(), weight.shape());
  g.ho = (g.h + 2 * g.pad - g.k) / g.stride + 1;
  g.wo = (g.w + 2 * g.pad - g.k) / g.stride + 1;
  bool has_bias = bias.defined();
  if (has_bias && (bias.dim() != 1 || bias.size(0) != g.o)) shape_error("conv2d", weight.shape(), bias.shape());

  std::size_t ckk = g.c * g.k * g.k, hw = g.ho * g.wo, cols = g.n * hw;
  // All samples share one GEMM: col is [ckk, N*hw], the product [O, N*hw].
  auto col = std::make_shared<std::vector<double>>(ckk * cols);
  const double* xv = x.data().data();
  const double* wv = weight.data().data();
  for (std::size_t s = 0; s < g.n; ++s) im2col(xv + s * g.c * g.h * g.w, g, col->data() + s * hw, cols);
  std::vector<double> prod(g.o * cols);
  gemm(false, false, g.o, cols, ckk, 1.0, wv, ckk, col->data(), cols, 0.0, prod.data(), cols);
  std::vector<double> out(g.n * g.o * hw);
  for (std::size_t s = 0; s < g.n; ++s) {
    for (std::size_t oc = 0; oc < g.o; ++oc) {
      const double* src = prod.data() + oc * cols + s * hw;
      double* dst = out.data() + (s * g.o + oc) * hw;
      double bv = has_bias ? bias.data()[oc] : 0.0;
      for (std::size_t p = 0; p < hw; ++p) dst[p] = src[p] + bv;
    }
  }
  if (col->size() > kConvColCacheLimit) col.reset();
  std::vector<Tensor> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return make_result("conv2d", {g.n, g.o, g.ho, g.wo}, std::move(out), std::move(inputs),
                     [g, has_bias, col](const Node& self) {
                       std::size_t ckk = g.c * g.k * g.k, hw = g.ho * g.wo, cols = g.n * hw;
                       double* gx = grad_of(self, 0);
                       double* gw = grad_of(self, 1);
                       double* gb = has_bias ? grad_of(self, 2) : nullptr;
                       const double* xv = self.inputs[0]->value.data();
                       const double* wv = self.inputs[1]->value.data();
                       std::vector<double> gy(g.o * cols);
                       for (std::size_t s = 0; s < g.n; ++s) {
                         for (std::size_t oc = 0; oc < g.o; ++oc) {
                           const double* src = self.grad.data() + (s * g.o + oc) * hw;
                           std::copy(src, src + hw, gy.data() + oc * cols + s * hw);
                         }
                       }
                       if (gw) {
                         std::vector<double> rebuilt;
                         const double* cv = col ? col->data() : nullptr;
                         if (!cv) {
                           rebuilt.resize(ckk * cols);
                           for (std::size_t s = 0; s < g.n; ++s)
                             im2col(xv + s * g.c * g.h * g.w, g, rebuilt.data() + s * hw, cols);
                           cv = rebuilt.data();
                         }
                         gemm(false, true, g.o, ckk, cols, 1.0, gy.data(), cols, cv, cols, 1.0, gw, ckk);
                       }
                       if (gx) {
                         std::vector<double> gcol(ckk * cols);
                         gemm(true, false, ckk, cols, g.o, 1.0, wv, ckk, gy.data(), cols, 0.0, gcol.data(), cols);
                         for (std::size_t s = 0; s < g.n; ++s)
                           col2im(gcol.data() + s * hw, g, gx + s * g.c * g.h * g.w, cols);
                       }
                       if (gb) {
                         for (std::size_t oc = 0; oc < g.o; ++oc) {
                           double acc = 0.0;
                           for (std::size_t p = 0; p < cols; ++p) acc += gy[oc * cols + p];
                           gb[oc] += acc;
                         }
                       }
                     });
}

Tensor upsample_nearest(const Tensor& x, std::size_t factor) {
  if (x.dim() != 4 || factor == 0) shape_error("upsample_nearest", x.shape(), "needs NCHW and factor > 0");
  return resize_nearest(x, x.size(2) * factor, x.size(3) * factor);
}

Tensor resize_nearest(const Tensor& x, std::size_t height, std::size_t width) {
  if (x.dim() != 4 || height == 0 || width == 0) shape_error("resize_nearest", x.shape(), "needs NCHW");
  std::size_t planes = x.size(0) * x.size(1), h = x.size(2), w = x.size(3);
  auto src = std::make_shared<std::vector<std::size_t>>(height * width);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t xx = 0; xx < width; ++xx) (*src)[y * width + xx] = (y * h / height) * w + (xx * w / width);
  auto xv = x.data();
  std::vector<double> out(planes * height * width);
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t i = 0; i < height * width; ++i) out[p * height * width + i] = xv[p * h * w + (*src)[i]];
  return make_result("resize_nearest", {x.size(0), x.size(1), height, width}, std::move(out), {x},
                     [src, planes, h, w, height, width](const Node& self) {
                       double* gx = grad_of(self, 0);
                       if (!gx) return;
                       for (std::size_t p = 0; p < planes; ++p)
                         for (std::size_t i = 0; i < height * width; ++i)
                           gx[p * h * w + (*src)[i]] += self.grad[p * height * width + i];
                     });
}

Tensor adaptive_avg_pool(const Tensor& x, std::size_t out_h, std::size_t out_w) {
  if (x.dim() != 4 || out_h == 0 || out_w == 0 || out_h > x.size(2) || out_w > x.size(3)) {
    shape_error("adaptive_avg_pool", x.shape(), "cannot pool to " + std::to_string(out_h) + "x" + std::to_string(out_w));
  }
  std::size_t planes = x.size(0) * x.size(1), h = x.size(2), w = x.size(3);
  auto bins = [](std::size_t i, std::size_t out, std::size_t in) {
    std::size_t lo = i * in / out;
    std::size_t hi = ((i + 1) * in + out - 1) / out;
    return std::pair{lo, hi};
  };
  auto xv = x.data();
  std::vector<double> out(planes * out_h * out_w, 0.0);
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      auto [y0, y1] = bins(oy, out_h, h);
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        auto [x0, x1] = bins(ox, out_w, w);
        double acc = 0.0;
        for (std::size_t y = y0; y < y1; ++y)
          for (std::size_t xx = x0; xx < x1; ++xx) acc += xv[p * h * w + y * w + xx];
        out[p * out_h * out_w + oy * out_w + ox] = acc / static_cast<double>((y1 - y0) * (x1 - x0));
      }
    }
  }
  return make_result("adaptive_avg_pool", {x.size(0), x.size(1), out_h, out_w}, std::move(out), {x},
                     [planes, h, w, out_h, out_w, bins](const Node& self) {
                       double* gx = grad_of(self, 0);
                       if (!gx) return;
                       for (std::size_t p = 0; p < planes; ++p) {
                         for (std::size_t oy = 0; oy < out_h; ++oy) {
                           auto [y0, y1] = bins(oy, out_h, h);
                           for (std::size_t ox = 0; ox < out_w; ++ox) {
                             auto [x0, x1] = bins(ox, out_w, w);
                             double g = self.grad[p * out_h * out_w + oy * out_w + ox] /
                                        static_cast<double>((y1 - y0) * (x1 - x0));
                             for (std::size_t y = y0; y < y1; ++y)
                               for (std::size_t xx = x0; xx < x1; ++xx) gx[p * h * w + y * w + xx] += g;
                           }
                         }
                       }
                     });
}

Tensor global_avg_pool(const Tensor& x) {
  if (x.dim() != 4) shape_error("global_avg_pool", x.shape(), "is not NCHW");
  return reshape(adaptive_avg_pool(x, 1, 1), {x.size(0), x.size(1)});
}

namespace {

// Standardizes consecutive groups of `len` values; shared by instance and
// layer normalization.
Tensor standardize_groups(const char* op, const Tensor& x, std::size_t groups, std::size_t len, double eps) {
  auto xv = x.data();
  std::vector<double> out(xv.size());
  auto inv_std = std::make_shared<std::vector<double>>(groups);
  for (std::size_t gi = 0; gi < groups; ++gi) {
    const double* p = xv.data() + gi * len;
    double m = 0.0;
    for (std::size_t i = 0; i < len; ++i) m += p[i];
    m /= static_cast<double>(len);
    double v = 0.0;
    for (std::size_t i = 0; i < len; ++i) v += (p[i] - m) * (p[i] - m);
    v /= static_cast<double>(len);
    double is = 1.0 / std::sqrt(v + eps);
    (*inv_std)[gi] = is;
    for (std::size_t i = 0; i < len; ++i) out[gi * len + i] = (p[i] - m) * is;
  }
  return make_result(op, x.shape(), std::move(out), {x}, [inv_std, groups, len](const Node& self) {
    double* gx = grad_of(self, 0);
    if (!gx) return;
    const double* y = self.value.data();
    const double* g = self.grad.data();
    double inv_len = 1.0 / static_cast<double>(len);
    for (std::size_t gi = 0; gi < groups; ++gi) {
      std::size_t off = gi * len;
      double mg = 0.0, mgy = 0.0;
      for (std::size_t i = 0; i < len; ++i) {
        mg += g[off + i];
        mgy += g[off + i] * y[off + i];
      }
      mg *= inv_len;
      mgy *= inv_len;
      double is = (*inv_std)[gi];
      for (std::size_t i = 0; i < len; ++i) gx[off + i] += is * (g[off + i] - mg - y[off + i] * mgy);
    }
  });
}

}  // namespace

Tensor instance_norm(const Tensor& x, double eps) {
  if (x.dim() != 4) shape_error("instance_norm", x.shape(), "is not NCHW");
  return standardize_groups("instance_norm", x, x.size(0) * x.size(1), x.size(2) * x.size(3), eps);
}

Tensor layer_norm(const Tensor& x, double eps) {
  auto [rows, len] = split_last(x.shape());
  return standardize_groups("layer_norm", x, rows, len, eps);
}

Tensor softmax(const Tensor& x) {
  auto [rows, len] = split_last(x.shape());
  auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* p = xv.data() + r * len;
    double mx = *std::max_element(p, p + len);
    double z = 0.0;
    for (std::size_t i = 0; i < len; ++i) z += (out[r * len + i] = std::exp(p[i] - mx));
    for (std::size_t i = 0; i < len; ++i) out[r * len + i] /= z;
  }
  return make_result("softmax", x.shape(), std::move(out), {x}, [rows, len](const Node& self) {
    double* gx = grad_of(self, 0);
    if (!gx) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * len;
      const double* g = self.grad.data() + r * len;
      double dot = 0.0;
      for (std::size_t i = 0; i < len; ++i) dot += g[i] * y[i];
      for (std::size_t i = 0; i < len; ++i) gx[r * len + i] += y[i] * (g[i] - dot);
    }
  });
}

Tensor log_softmax(const Tensor& x) {
  auto [rows, len] = split_last(x.shape());
  auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* p = xv.data() + r * len;
    double mx = *std::max_element(p, p + len);
    double z = 0.0;
    for (std::size_t i = 0; i < len; ++i) z += std::exp(p[i] - mx);
    double lse = mx + std::log(z);
    for (std::size_t i = 0; i < len; ++i) out[r * len + i] = p[i] - lse;
  }
  return make_result("log_softmax", x.shape(), std::move(out), {x}, [rows, len](const Node& self) {
    double* gx = grad_of(self, 0);
    if (!gx) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * len;
      const double* g = self.grad.data() + r * len;
      double gs = 0.0;
      for (std::size_t i = 0; i < len; ++i) gs += g[i];
      for (std::size_t i = 0; i < len; ++i) gx[r * len + i] += g[i] - std::exp(y[i]) * gs;
    }
  });
}

Tensor logsumexp(const Tensor& x) {
  auto [rows, len] = split_last(x.shape());
  auto xv = x.data();
  std::vector<double> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* p = xv.data() + r * len;
    double mx = *std::max_element(p, p + len);
    double z = 0.0;
    for (std::size_t i = 0; i < len; ++i) z += std::exp(p[i] - mx);
    out[r] = mx + std::log(z);
  }
  Shape shape(x.shape().begin(), x.shape().end() - 1);
  if (shape.empty()) shape = {1};
  return make_result("logsumexp", shape, std::move(out), {x}, [rows, len](const Node& self) {
    double* gx = grad_of(self, 0);
    if (!gx) return;
    const auto& xv = self.inputs[0]->value;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t i = 0; i < len; ++i)
        gx[r * len + i] += self.grad[r] * std::exp(xv[r * len + i] - self.value[r]);
  });
}

Tensor sum(const Tensor& x) {
  auto xv = x.data();
  double acc = std::accumulate(xv.begin(), xv.end(), 0.0);
  return make_result("sum", {1}, {acc}, {x}, [](const Node& self) {
    double* gx = grad_of(self, 0);
    if (!gx) return;
    for (std::size_t i = 0; i < self.inputs[0]->value.size(); ++i) gx[i] += self.grad[0];
  });
}

Tensor mean(const Tensor& x) { return mul_scalar(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor max(const Tensor& x) {
  auto xv = x.data();
  std::size_t arg = static_cast<std::size_t>(std::max_element(xv.begin(), xv.end()) - xv.begin());
  return make_result("max", {1}, {xv[arg]}, {x}, [arg](const Node& self) {
    if (double* gx = grad_of(self, 0)) gx[arg] += self.grad[0];
  });
}

Tensor sum_axis(const Tensor& x, std::size_t axis) {
  if (axis >= x.dim()) shape_error("sum_axis", x.shape(), "has no axis " + std::to_string(axis));
  const auto& s = x.shape();
  std::size_t outer = 1, inner = 1, len = s[axis];
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  auto xv = x.data();
  std::vector<double> out(outer * inner, 0.0);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t l = 0; l < len; ++l)
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += xv[(o * len + l) * inner + i];
  Shape shape;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (i != axis) shape.push_back(s[i]);
  if (shape.empty()) shape = {1};
  return make_result("sum_axis", shape, std::move(out), {x}, [outer, inner, len](const Node& self) {
    double* gx = grad_of(self, 0);
    if (!gx) return;
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t l = 0; l < len; ++l)
        for (std::size_t i = 0; i < inner; ++i) gx[(o * len + l) * inner + i] += self.grad[o * inner + i];
  });
}

Tensor mean_axis(const Tensor& x, std::size_t axis) {
  if (axis >= x.dim()) shape_error("mean_axis", x.shape(), "has no axis " + std::to_string(axis));
  return mul_scalar(sum_axis(x, axis), 1.0 / static_cast<double>(x.size(axis)));
}

Tensor sort_last(const Tensor& x) {
  auto [rows, len] = split_last(x.shape());
  auto xv = x.data();
  auto perm = std::make_shared<std::vector<std::size_t>>(rows * len);
  std::vector<double> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    auto* p = perm->data() + r * len;
    std::iota(p, p + len, std::size_t{0});
    const double* row = xv.data() + r * len;
    std::stable_sort(p, p + len, [row](std::size_t a, std::size_t b) { return row[a] < row[b]; });
    for (std::size_t i = 0; i < len; ++i) out[r * len + i] = row[p[i]];
  }
  return make_result("sort_last", x.shape(), std::move(out), {x}, [perm, rows, len](const Node& self) {
    double* gx = grad_of(self, 0);
    if (!gx) return;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t i = 0; i < len; ++i) gx[r * len + (*perm)[r * len + i]] += self.grad[r * len + i];
  });
}

namespace {

struct DftBasis {
  std::vector<double> cos_m, sin_m;
};

DftBasis dft_basis(std::size_t n) {
  DftBasis b{std::vector<double>(n * n), std::vector<double>(n * n)};
  const double two_pi = 2.0 * std::acos(-1.0);
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t j = 0; j < n; ++j) {
      // Reduce k*j mod n first so large products keep full precision.
      double angle = two_pi * static_cast<double>((k * j) % n) / static_cast<double>(n);
      b.cos_m[k * n + j] = std::cos(angle);
      b.sin_m[k * n + j] = std::sin(angle);
    }
  }
  return b;
}

// out = A * X * B for square row-major blocks (A: h x h, X: h x w, B: w x w).
void sandwich(const double* a, const double* x, const double* b, std::size_t h, std::size_t w,
              double alpha, double beta, double* out, std::vector<double>& tmp) {
  tmp.resize(h * w);
  gemm(false, false, h, w, h, 1.0, a, h, x, w, 0.0, tmp.data(), w);
  gemm(false, false, h, w, w, alpha, tmp.data(), w, b, w, beta, out, w);
}

}  // namespace

Tensor dft2_magnitude(const Tensor& x) {
  if (x.dim() < 2) shape_error("dft2_magnitude", x.shape(), "needs at least 2 axes");
  std::size_t h = x.size(x.dim() - 2), w = x.size(x.dim() - 1);
  std::size_t planes = x.numel() / (h * w);
  auto bh = std::make_shared<DftBasis>(dft_basis(h));
  auto bw = std::make_shared<DftBasis>(dft_basis(w));
  auto re = std::make_shared<std::vector<double>>(x.numel());
  auto im = std::make_shared<std::vector<double>>(x.numel());
  std::vector<double> out(x.numel()), tmp;
  const double* xv = x.data().data();
  for (std::size_t p = 0; p < planes; ++p) {
    const double* xp = xv + p * h * w;
    double* rp = re->data() + p * h * w;
    double* ip = im->data() + p * h * w;
    // Re = C X C - S X S ; Im = -(S X C + C X S)
    sandwich(bh->cos_m.data(), xp, bw->cos_m.data(), h, w, 1.0, 0.0, rp, tmp);
    sandwich(bh->sin_m.data(), xp, bw->sin_m.data(), h, w, -1.0, 1.0, rp, tmp);
    sandwich(bh->sin_m.data(), xp, bw->cos_m.data(), h, w, -1.0, 0.0, ip, tmp);
    sandwich(bh->cos_m.data(), xp, bw->sin_m.data(), h, w, -1.0, 1.0, ip, tmp);
    for (std::size_t i = 0; i < h * w; ++i) out[p * h * w + i] = std::hypot(rp[i], ip[i]);
  }
  return make_result("dft2_magnitude", x.shape(), std::move(out), {x},
                     [bh, bw, re, im, planes, h, w](const Node& self) {
                       double* gx = grad_of(self, 0);
                       if (!gx) return;
                       std::vector<double> gre(h * w), gim(h * w), tmp;
                       for (std::size_t p = 0; p < planes; ++p) {
                         std::size_t off = p * h * w;
                         for (std::size_t i = 0; i < h * w; ++i) {
                           double m = self.value[off + i];
                           double g = self.grad[off + i];
                           gre[i] = m > 0 ? g * (*re)[off + i] / m : 0.0;
                           gim[i] = m > 0 ? g * (*im)[off + i] / m : 0.0;
                         }
                         double* gp = gx + off;
                         sandwich(bh->cos_m.data(), gre.data(), bw->cos_m.data(), h, w, 1.0, 1.0, gp, tmp);
                         sandwich(bh->sin_m.data(), gre.data(), bw->sin_m.data(), h, w, -1.0, 1.0, gp, tmp);
                         sandwich(bh->sin_m.data(), gim.data(), bw->cos_m.data(), h, w, -1.0, 1.0, gp, tmp);
                         sandwich(bh->cos_m.data(), gim.data(), bw->sin_m.data(), h, w, -1.0, 1.0, gp, tmp);
                       }
                     });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const auto& s0 = parts[0].shape();
  if (axis >= s0.size()) shape_error("concat", s0, "has no axis " + std::to_string(axis));
  std::size_t outer = 1, inner = 1, total = 0;
  for (std::size_t i = 0; i < axis; ++i) outer *= s0[i];
  for (std::size_t i = axis + 1; i < s0.size(); ++i) inner *= s0[i];
  std::vector<std::size_t> lens;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    if (s.size() != s0.size()) shape_error("concat", s0, s);
    for (std::size_t i = 0; i < s.size(); ++i)
      if (i != axis && s[i] != s0[i]) shape_error("concat", s0, s);
    lens.push_back(s[axis]);
    total += s[axis];
  }
  std::vector<double> out(outer * total * inner);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto pv = parts[k].data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(pv.begin() + o * lens[k] * inner, lens[k] * inner,
                  out.begin() + (o * total + offset) * inner);
    offset += lens[k];
  }
  Shape shape = s0;
  shape[axis] = total;
  return make_result("concat", shape, std::move(out), parts, [lens, outer, inner, total](const Node& self) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < lens.size(); ++k) {
      if (double* gp = grad_of(self, k)) {
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t i = 0; i < lens[k] * inner; ++i)
            gp[o * lens[k] * inner + i] += self.grad[(o * total + offset) * inner + i];
      }
      offset += lens[k];
    }
  });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  if (axis >= x.dim() || begin >= end || end > x.size(axis)) {
    shape_error("slice", x.shape(), "cannot take [" + std::to_string(begin) + "," + std::to_string(end) +
                                        ") on axis " + std::to_string(axis));
  }
  std::vector<std::size_t> idx(end - begin);
  std::iota(idx.begin(), idx.end(), begin);
  return index_select(x, axis, idx);
}

Tensor index_select(const Tensor& x, std::size_t axis, std::span<const std::size_t> indices) {
  if (axis >= x.dim() || indices.empty()) shape_error("index_select", x.shape(), "bad axis or empty index");
  const auto& s = x.shape();
  std::size_t outer = 1, inner = 1, len = s[axis];
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  for (auto i : indices)
    if (i >= len) shape_error("index_select", s, "index " + std::to_string(i) + " out of range");
  auto idx = std::make_shared<std::vector<std::size_t>>(indices.begin(), indices.end());
  std::size_t k = idx->size();
  auto xv = x.data();
  std::vector<double> out(outer * k * inner);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t j = 0; j < k; ++j)
      std::copy_n(xv.begin() + (o * len + (*idx)[j]) * inner, inner, out.begin() + (o * k + j) * inner);
  Shape shape = s;
  shape[axis] = k;
  return make_result("index_select", shape, std::move(out), {x}, [idx, outer, inner, len, k](const Node& self) {
    double* gx = grad_of(self, 0);
    if (!gx) return;
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t j = 0; j < k; ++j)
        for (std::size_t i = 0; i < inner; ++i)
          gx[(o * len + (*idx)[j]) * inner + i] += self.grad[(o * k + j) * inner + i];
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) shape_error("reshape", x.shape(), shape);
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result("reshape", std::move(shape), std::move(out), {x}, [](const Node& self) {
    double* gx = grad_of(self, 0);
    if (!gx) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
  });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& order) {
  const auto& s = x.shape();
  if (order.size() != s.size()) shape_error("permute", s, "rank differs from permutation");
  std::vector<bool> seen(s.size(), false);
  for (auto o : order) {
    if (o >= s.size() || seen[o]) shape_error("permute", s, "invalid permutation");
    seen[o] = true;
  }
  Shape shape(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) shape[i] = s[order[i]];
  auto in_strides = strides_of(s);
  std::size_t n = x.numel();
  auto src = std::make_shared<std::vector<std::size_t>>(n);
  std::vector<std::size_t> idx(s.size(), 0);
  std::size_t off = 0;
  for (std::size_t f = 0; f < n; ++f) {
    (*src)[f] = off;
    for (std::size_t d = shape.size(); d-- > 0;) {
      ++idx[d];
      off += in_strides[order[d]];
      if (idx[d] < shape[d]) break;
      off -= in_strides[order[d]] * idx[d];
      idx[d] = 0;
    }
  }
  auto xv = x.data();
  std::vector<double> out(n);
  for (std::size_t f = 0; f < n; ++f) out[f] = xv[(*src)[f]];
  return make_result("permute", shape, std::move(out), {x}, [src](const Node& self) {
    double* gx = grad_of(self, 0);
    if (!gx) return;
    for (std::size_t f = 0; f < self.grad.size(); ++f) gx[(*src)[f]] += self.grad[f];
  });
}

Tensor l1_norm(const Tensor& x) { return sum(abs(x)); }

Tensor l2_norm(const Tensor& x) { return sqrt(sum(square(x))); }

Tensor l2_normalize_rows(const Tensor& x, double eps) {
  if (x.dim() != 2) shape_error("l2_normalize_rows", x.shape(), "is not 2-D");
  std::size_t rows = x.size(0), d = x.size(1);
  auto xv = x.data();
  auto norms = std::make_shared<std::vector<double>>(rows);
  std::vector<double> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) s += xv[r * d + i] * xv[r * d + i];
    double nrm = std::max(std::sqrt(s), eps);
    (*norms)[r] = nrm;
    for (std::size_t i = 0; i < d; ++i) out[r * d + i] = xv[r * d + i] / nrm;
  }
  return make_result("l2_normalize_rows", x.shape(), std::move(out), {x}, [norms, rows, d, eps](const Node& self) {
    double* gx = grad_of(self, 0);
    if (!gx) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * d;
      const double* g = self.grad.data() + r * d;
      double nrm = (*norms)[r];
      if (nrm <= eps) {
        for (std::size_t i = 0; i < d; ++i) gx[r * d + i] += g[i] / nrm;
        continue;
      }
      double dot = 0.0;
      for (std::size_t i = 0; i < d; ++i) dot += g[i] * y[i];
      for (std::size_t i = 0; i < d; ++i) gx[r * d + i] += (g[i] - y[i] * dot) / nrm;
    }
  });
}

}  // namespace stylesplit::ops

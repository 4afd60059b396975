// Copyright 2026 The wxpeft Authors
// SPDX-License-Identifier: Apache-2.0

#include "wxpeft/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "wxpeft/error.hpp"

namespace wxpeft {

double normal_pdf(double z) noexcept {
  return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
}

double normal_cdf(double z) noexcept { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

namespace {

[[noreturn]] void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_string(a) + " and " +
                       shape_string(b));
}

void require_rank(const char* op, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_string(t.shape()));
  }
}

// C[m x n] += A[m x k] * B[k x n]. Each C[i][j] accumulates over k in
// ascending order regardless of m and n, so a row's result does not depend on
// which other rows are present.
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// C[k x n] += A[m x k]^T * B[m x n].
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    const double* bi = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      double* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += av * bi[j];
    }
  }
}

std::vector<double> transposed(std::span<const double> x, std::size_t rows, std::size_t cols) {
  std::vector<double> t(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) t[c * rows + r] = x[r * cols + c];
  }
  return t;
}

struct BilinearTap {
  std::size_t i0, i1;
  double w0, w1;
};

// Half-pixel source coordinates, clamped at the borders.
std::vector<BilinearTap> bilinear_taps(std::size_t in, std::size_t out) {
  std::vector<BilinearTap> taps(out);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
    if (src < 0.0) src = 0.0;
    auto i0 = static_cast<std::size_t>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    const double w1 = src - static_cast<double>(i0);
    taps[o] = {i0, i1, 1.0 - w1, w1};
  }
  return taps;
}

void check_pool(const Shape& s, std::size_t fh, std::size_t fw) {
  if (s.size() != 3) throw DimensionError("avg_pool_2d expects C x H x W, got " + shape_string(s));
  if (fh == 0 || fw == 0 || s[1] % fh || s[2] % fw) {
    throw DimensionError("avg_pool_2d: grid " + shape_string(s) + " not divisible by factor " +
                         std::to_string(fh) + "x" + std::to_string(fw));
  }
}

}  // namespace

Tensor transpose_2d(const Tensor& x) {
  require_rank("transpose_2d", x, 2);
  return Tensor({x.dim(1), x.dim(0)}, transposed(x.data(), x.dim(0), x.dim(1)));
}

Tensor avg_pool_2d(const Tensor& x, std::size_t fh, std::size_t fw) {
  check_pool(x.shape(), fh, fw);
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t oh = h / fh, ow = w / fw;
  Tensor y({c, oh, ow});
  const double inv = 1.0 / static_cast<double>(fh * fw);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        double s = 0.0;
        for (std::size_t a = 0; a < fh; ++a) {
          for (std::size_t b = 0; b < fw; ++b) s += x[(ch * h + i * fh + a) * w + j * fw + b];
        }
        y[(ch * oh + i) * ow + j] = s * inv;
      }
    }
  }
  return y;
}

Tensor bilinear_upsample_2d(const Tensor& x, std::size_t out_h, std::size_t out_w) {
  require_rank("bilinear_upsample_2d", x, 3);
  if (out_h == 0 || out_w == 0) throw DimensionError("bilinear_upsample_2d: empty output grid");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const auto ty = bilinear_taps(h, out_h);
  const auto tx = bilinear_taps(w, out_w);
  Tensor y({c, out_h, out_w});
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* src = x.data().data() + ch * h * w;
    for (std::size_t i = 0; i < out_h; ++i) {
      const auto& r = ty[i];
      for (std::size_t j = 0; j < out_w; ++j) {
        const auto& q = tx[j];
        const double top = q.w0 * src[r.i0 * w + q.i0] + q.w1 * src[r.i0 * w + q.i1];
        const double bot = q.w0 * src[r.i1 * w + q.i0] + q.w1 * src[r.i1 * w + q.i1];
        y[(ch * out_h + i) * out_w + j] = r.w0 * top + r.w1 * bot;
      }
    }
  }
  return y;
}

}  // namespace wxpeft

namespace wxpeft::ad {

namespace {

void same_shape(const char* op, Var a, Var b) {
  if (a.shape() != b.shape()) shape_mismatch(op, a.shape(), b.shape());
}

void add_into(Tensor* sink, const Tensor& g, double factor = 1.0) {
  if (!sink) return;
  auto d = sink->data();
  auto s = g.data();
  if (factor == 1.0) {
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
  } else {
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += factor * s[i];
  }
}

template <class F, class D>
Var unary(const char* op, Var x, F f, D df) {
  const Tensor& xv = x.value();
  Tensor y(xv.shape());
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] = f(xv[i]);
  return x.graph().record(op, std::move(y), {x}, [x, df](Graph& g, const Tensor& gy) {
    Tensor* gx = g.grad_sink(x);
    if (!gx) return;
    const Tensor& xv = x.value();
    for (std::size_t i = 0; i < gy.numel(); ++i) (*gx)[i] += gy[i] * df(xv[i]);
  });
}

std::size_t last_dim(const Tensor& t) { return t.shape().back(); }

}  // namespace

Var add(Var a, Var b) {
  same_shape("add", a, b);
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] += b.value()[i];
  return a.graph().record("add", std::move(y), {a, b}, [a, b](Graph& g, const Tensor& gy) {
    add_into(g.grad_sink(a), gy);
    add_into(g.grad_sink(b), gy);
  });
}

Var sub(Var a, Var b) {
  same_shape("sub", a, b);
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] -= b.value()[i];
  return a.graph().record("sub", std::move(y), {a, b}, [a, b](Graph& g, const Tensor& gy) {
    add_into(g.grad_sink(a), gy);
    add_into(g.grad_sink(b), gy, -1.0);
  });
}

Var mul(Var a, Var b) {
  same_shape("mul", a, b);
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] *= b.value()[i];
  return a.graph().record("mul", std::move(y), {a, b}, [a, b](Graph& g, const Tensor& gy) {
    if (Tensor* ga = g.grad_sink(a)) {
      for (std::size_t i = 0; i < gy.numel(); ++i) (*ga)[i] += gy[i] * b.value()[i];
    }
    if (Tensor* gb = g.grad_sink(b)) {
      for (std::size_t i = 0; i < gy.numel(); ++i) (*gb)[i] += gy[i] * a.value()[i];
    }
  });
}

Var scale(Var x, double c) {
  Tensor y = x.value();
  for (auto& v : y.data()) v *= c;
  return x.graph().record("scale", std::move(y), {x}, [x, c](Graph& g, const Tensor& gy) {
    add_into(g.grad_sink(x), gy, c);
  });
}

Var add_scalar(Var x, double c) {
  Tensor y = x.value();
  for (auto& v : y.data()) v += c;
  return x.graph().record("add_scalar", std::move(y), {x}, [x](Graph& g, const Tensor& gy) {
    add_into(g.grad_sink(x), gy);
  });
}

Var scale_by(Var x, Var s) {
  if (s.numel() != 1) throw DimensionError("scale_by: factor must have one element, got " +
                                           shape_string(s.shape()));
  const double c = s.value()[0];
  Tensor y = x.value();
  for (auto& v : y.data()) v *= c;
  return x.graph().record("scale_by", std::move(y), {x, s}, [x, s](Graph& g, const Tensor& gy) {
    add_into(g.grad_sink(x), gy, s.value()[0]);
    if (Tensor* gs = g.grad_sink(s)) {
      double acc = 0.0;
      const Tensor& xv = x.value();
      for (std::size_t i = 0; i < gy.numel(); ++i) acc += gy[i] * xv[i];
      (*gs)[0] += acc;
    }
  });
}

Var square(Var x) {
  return unary("square", x, [](double v) { return v * v; }, [](double v) { return 2.0 * v; });
}

Var exp(Var x) {
  return unary("exp", x, [](double v) { return std::exp(v); },
               [](double v) { return std::exp(v); });
}

Var abs(Var x) {
  return unary("abs", x, [](double v) { return std::abs(v); },
               [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Var gelu(Var x) {
  return unary("gelu", x, [](double v) { return v * normal_cdf(v); },
               [](double v) { return normal_cdf(v) + v * normal_pdf(v); });
}

Var add_rowvec(Var x, Var v) {
  const std::size_t n = last_dim(x.value());
  if (v.numel() != n) shape_mismatch("add_rowvec", x.shape(), v.shape());
  Tensor y = x.value();
  const std::size_t rows = y.numel() / n;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < n; ++j) y[r * n + j] += v.value()[j];
  }
  return x.graph().record("add_rowvec", std::move(y), {x, v},
                          [x, v, n, rows](Graph& g, const Tensor& gy) {
                            add_into(g.grad_sink(x), gy);
                            if (Tensor* gv = g.grad_sink(v)) {
                              for (std::size_t r = 0; r < rows; ++r) {
                                for (std::size_t j = 0; j < n; ++j) (*gv)[j] += gy[r * n + j];
                              }
                            }
                          });
}

Var mul_rowvec(Var x, Var v) {
  const std::size_t n = last_dim(x.value());
  if (v.numel() != n) shape_mismatch("mul_rowvec", x.shape(), v.shape());
  Tensor y = x.value();
  const std::size_t rows = y.numel() / n;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < n; ++j) y[r * n + j] *= v.value()[j];
  }
  return x.graph().record(
      "mul_rowvec", std::move(y), {x, v}, [x, v, n, rows](Graph& g, const Tensor& gy) {
        if (Tensor* gx = g.grad_sink(x)) {
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < n; ++j) (*gx)[r * n + j] += gy[r * n + j] * v.value()[j];
          }
        }
        if (Tensor* gv = g.grad_sink(v)) {
          const Tensor& xv = x.value();
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < n; ++j) (*gv)[j] += gy[r * n + j] * xv[r * n + j];
          }
        }
      });
}

Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return x.graph().record("sum", Tensor::scalar(s), {x}, [x](Graph& g, const Tensor& gy) {
    if (Tensor* gx = g.grad_sink(x)) {
      for (auto& v : gx->data()) v += gy[0];
    }
  });
}

Var mean(Var x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  const double inv = 1.0 / static_cast<double>(x.numel());
  return x.graph().record("mean", Tensor::scalar(s * inv), {x},
                          [x, inv](Graph& g, const Tensor& gy) {
                            if (Tensor* gx = g.grad_sink(x)) {
                              for (auto& v : gx->data()) v += gy[0] * inv;
                            }
                          });
}

Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
    shape_mismatch("matmul", av.shape(), bv.shape());
  }
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor y({m, n});
  gemm_nn(av.data().data(), bv.data().data(), y.data().data(), m, k, n);
  return a.graph().record("matmul", std::move(y), {a, b}, [a, b, m, k, n](Graph& g,
                                                                         const Tensor& gy) {
    if (Tensor* ga = g.grad_sink(a)) {
      const auto bt = transposed(b.value().data(), k, n);
      gemm_nn(gy.data().data(), bt.data(), ga->data().data(), m, n, k);
    }
    if (Tensor* gb = g.grad_sink(b)) {
      gemm_tn(a.value().data().data(), gy.data().data(), gb->data().data(), m, k, n);
    }
  });
}

Var matmul_nt(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(1)) {
    shape_mismatch("matmul_nt", av.shape(), bv.shape());
  }
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(0);
  Tensor y({m, n});
  const auto bt = transposed(bv.data(), n, k);
  gemm_nn(av.data().data(), bt.data(), y.data().data(), m, k, n);
  return a.graph().record("matmul_nt", std::move(y), {a, b}, [a, b, m, k, n](Graph& g,
                                                                            const Tensor& gy) {
    if (Tensor* ga = g.grad_sink(a)) {
      gemm_nn(gy.data().data(), b.value().data().data(), ga->data().data(), m, n, k);
    }
    if (Tensor* gb = g.grad_sink(b)) {
      gemm_tn(gy.data().data(), a.value().data().data(), gb->data().data(), m, n, k);
    }
  });
}

namespace {

Var linear_impl(Var x, Var w, const Var* b) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  if (wv.rank() != 2 || xv.rank() < 1 || last_dim(xv) != wv.dim(1)) {
    shape_mismatch("linear", xv.shape(), wv.shape());
  }
  const std::size_t in = wv.dim(1), out = wv.dim(0);
  if (b && b->numel() != out) shape_mismatch("linear(bias)", wv.shape(), b->shape());
  const std::size_t rows = xv.numel() / in;
  Shape ys = xv.shape();
  ys.back() = out;
  Tensor y(ys);
  const auto wt = transposed(wv.data(), out, in);
  gemm_nn(xv.data().data(), wt.data(), y.data().data(), rows, in, out);
  if (b) {
    const Tensor& bv = b->value();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < out; ++j) y[r * out + j] += bv[j];
    }
  }
  auto backward = [x, w, bias = b ? *b : Var(), rows, in, out](Graph& g, const Tensor& gy) {
    if (Tensor* gx = g.grad_sink(x)) {
      gemm_nn(gy.data().data(), w.value().data().data(), gx->data().data(), rows, out, in);
    }
    if (Tensor* gw = g.grad_sink(w)) {
      gemm_tn(gy.data().data(), x.value().data().data(), gw->data().data(), rows, out, in);
    }
    if (bias.valid()) {
      if (Tensor* gb = g.grad_sink(bias)) {
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < out; ++j) (*gb)[j] += gy[r * out + j];
        }
      }
    }
  };
  if (b) return x.graph().record("linear", std::move(y), {x, w, *b}, std::move(backward));
  return x.graph().record("linear", std::move(y), {x, w}, std::move(backward));
}

}  // namespace

Var linear(Var x, Var w) { return linear_impl(x, w, nullptr); }

Var linear(Var x, Var w, Var b) { return linear_impl(x, w, &b); }

Var softmax_lastdim(Var x) {
  const Tensor& xv = x.value();
  const std::size_t n = last_dim(xv);
  const std::size_t rows = xv.numel() / n;
  Tensor y(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data().data() + r * n;
    double* yr = y.data().data() + r * n;
    const double mx = *std::max_element(xr, xr + n);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      s += yr[j];
    }
    const double inv = 1.0 / s;
    for (std::size_t j = 0; j < n; ++j) yr[j] *= inv;
  }
  // record() appends exactly one node, so the output id is known up front.
  Graph& graph = x.graph();
  const auto yid = static_cast<NodeId>(graph.size());
  return graph.record("softmax_lastdim", std::move(y), {x},
                      [x, yid, rows, n](Graph& g, const Tensor& gy) {
                        Tensor* gx = g.grad_sink(x);
                        if (!gx) return;
                        const Tensor& yv = g.value_of(yid);
                        for (std::size_t r = 0; r < rows; ++r) {
                          double dot = 0.0;
                          for (std::size_t j = 0; j < n; ++j) dot += gy[r * n + j] * yv[r * n + j];
                          for (std::size_t j = 0; j < n; ++j) {
                            (*gx)[r * n + j] += yv[r * n + j] * (gy[r * n + j] - dot);
                          }
                        }
                      });
}

Var layernorm_lastdim(Var x, Var gamma, Var beta, double eps) {
  const Tensor& xv = x.value();
  const std::size_t n = last_dim(xv);
  if (gamma.numel() != n || beta.numel() != n) {
    throw DimensionError("layernorm_lastdim: input " + shape_string(xv.shape()) + " with gamma " +
                         shape_string(gamma.shape()) + " and beta " + shape_string(beta.shape()));
  }
  if (!(eps > 0.0)) throw DomainError("layernorm eps must be positive");
  const std::size_t rows = xv.numel() / n;
  std::vector<double> xhat(xv.numel());
  std::vector<double> rstd(rows);
  Tensor y(xv.shape());
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  const double invn = 1.0 / static_cast<double>(n);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data().data() + r * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += xr[j];
    mu *= invn;
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var *= invn;
    const double rs = 1.0 / std::sqrt(var + eps);
    rstd[r] = rs;
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (xr[j] - mu) * rs;
      xhat[r * n + j] = h;
      y[r * n + j] = h * gv[j] + bv[j];
    }
  }
  return x.graph().record(
      "layernorm_lastdim", std::move(y), {x, gamma, beta},
      [x, gamma, beta, n, rows, invn, xhat = std::move(xhat), rstd = std::move(rstd)](
          Graph& g, const Tensor& gy) {
        if (Tensor* gg = g.grad_sink(gamma)) {
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < n; ++j) (*gg)[j] += gy[r * n + j] * xhat[r * n + j];
          }
        }
        if (Tensor* gb = g.grad_sink(beta)) {
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < n; ++j) (*gb)[j] += gy[r * n + j];
          }
        }
        if (Tensor* gx = g.grad_sink(x)) {
          const Tensor& gv = gamma.value();
          for (std::size_t r = 0; r < rows; ++r) {
            double mean_d = 0.0, mean_dx = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              const double d = gy[r * n + j] * gv[j];
              mean_d += d;
              mean_dx += d * xhat[r * n + j];
            }
            mean_d *= invn;
            mean_dx *= invn;
            for (std::size_t j = 0; j < n; ++j) {
              const double d = gy[r * n + j] * gv[j];
              (*gx)[r * n + j] += rstd[r] * (d - mean_d - xhat[r * n + j] * mean_dx);
            }
          }
        }
      });
}

Var pi_shift(Var x) {
  const Tensor& xv = x.value();
  if (xv.rank() < 2) {
    throw RankError("pi_shift needs rank >= 2, got " + shape_string(xv.shape()));
  }
  const std::size_t last = last_dim(xv);
  const std::size_t rows = xv.numel() / last;
  Shape ys;
  ys.reserve(xv.rank());
  ys.push_back(last);
  ys.insert(ys.end(), xv.shape().begin(), xv.shape().end() - 1);
  Tensor y(std::move(ys), transposed(xv.data(), rows, last));
  return x.graph().record("pi_shift", std::move(y), {x},
                          [x, rows, last](Graph& g, const Tensor& gy) {
                            Tensor* gx = g.grad_sink(x);
                            if (!gx) return;
                            // gy is last x rows; gx is rows x last.
                            for (std::size_t c = 0; c < last; ++c) {
                              for (std::size_t r = 0; r < rows; ++r) {
                                (*gx)[r * last + c] += gy[c * rows + r];
                              }
                            }
                          });
}

Var reshape(Var x, Shape shape) {
  Tensor y = x.value().reshaped(std::move(shape));
  return x.graph().record("reshape", std::move(y), {x}, [x](Graph& g, const Tensor& gy) {
    add_into(g.grad_sink(x), gy);
  });
}

Var concat_first(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != bv.rank() || av.rank() < 1 ||
      !std::equal(av.shape().begin() + 1, av.shape().end(), bv.shape().begin() + 1)) {
    shape_mismatch("concat_first", av.shape(), bv.shape());
  }
  Shape ys = av.shape();
  ys[0] += bv.dim(0);
  std::vector<double> data;
  data.reserve(av.numel() + bv.numel());
  data.insert(data.end(), av.data().begin(), av.data().end());
  data.insert(data.end(), bv.data().begin(), bv.data().end());
  const std::size_t na = av.numel();
  return a.graph().record("concat_first", Tensor(std::move(ys), std::move(data)), {a, b},
                          [a, b, na](Graph& g, const Tensor& gy) {
                            if (Tensor* ga = g.grad_sink(a)) {
                              for (std::size_t i = 0; i < ga->numel(); ++i) (*ga)[i] += gy[i];
                            }
                            if (Tensor* gb = g.grad_sink(b)) {
                              for (std::size_t i = 0; i < gb->numel(); ++i) (*gb)[i] += gy[na + i];
                            }
                          });
}

Var slice_first(Var x, std::size_t begin, std::size_t count) {
  const Tensor& xv = x.value();
  if (count == 0 || begin + count > xv.dim(0)) {
    throw DimensionError("slice_first [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") out of range for " +
                         shape_string(xv.shape()));
  }
  const std::size_t inner = xv.numel() / xv.dim(0);
  Shape ys = xv.shape();
  ys[0] = count;
  std::vector<double> data(xv.data().begin() + static_cast<std::ptrdiff_t>(begin * inner),
                           xv.data().begin() + static_cast<std::ptrdiff_t>((begin + count) * inner));
  return x.graph().record("slice_first", Tensor(std::move(ys), std::move(data)), {x},
                          [x, begin, inner](Graph& g, const Tensor& gy) {
                            Tensor* gx = g.grad_sink(x);
                            if (!gx) return;
                            for (std::size_t i = 0; i < gy.numel(); ++i) {
                              (*gx)[begin * inner + i] += gy[i];
                            }
                          });
}

Var slice_lastdim(Var x, std::size_t begin, std::size_t count) {
  const Tensor& xv = x.value();
  const std::size_t n = last_dim(xv);
  if (count == 0 || begin + count > n) {
    throw DimensionError("slice_lastdim [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") out of range for " +
                         shape_string(xv.shape()));
  }
  const std::size_t rows = xv.numel() / n;
  Shape ys = xv.shape();
  ys.back() = count;
  Tensor y(ys);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < count; ++j) y[r * count + j] = xv[r * n + begin + j];
  }
  return x.graph().record("slice_lastdim", std::move(y), {x},
                          [x, begin, count, n, rows](Graph& g, const Tensor& gy) {
                            Tensor* gx = g.grad_sink(x);
                            if (!gx) return;
                            for (std::size_t r = 0; r < rows; ++r) {
                              for (std::size_t j = 0; j < count; ++j) {
                                (*gx)[r * n + begin + j] += gy[r * count + j];
                              }
                            }
                          });
}

Var concat_lastdim(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_lastdim of zero parts");
  if (parts.size() > 8) throw ContractError("concat_lastdim supports at most 8 parts");
  const Tensor& first = parts[0].value();
  const std::size_t rows = first.numel() / last_dim(first);
  std::size_t total = 0;
  for (const Var& p : parts) {
    const Tensor& pv = p.value();
    if (pv.rank() != first.rank() ||
        !std::equal(pv.shape().begin(), pv.shape().end() - 1, first.shape().begin())) {
      shape_mismatch("concat_lastdim", first.shape(), pv.shape());
    }
    total += last_dim(pv);
  }
  Shape ys = first.shape();
  ys.back() = total;
  Tensor y(ys);
  std::vector<std::size_t> widths;
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Tensor& pv = p.value();
    const std::size_t w = last_dim(pv);
    widths.push_back(w);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < w; ++j) y[r * total + off + j] = pv[r * w + j];
    }
    off += w;
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  auto backward = [ps, widths, rows, total](Graph& g, const Tensor& gy) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < ps.size(); ++k) {
      const std::size_t w = widths[k];
      if (Tensor* gp = g.grad_sink(ps[k])) {
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < w; ++j) (*gp)[r * w + j] += gy[r * total + off + j];
        }
      }
      off += w;
    }
  };
  // record() takes an initializer_list; the participation check only needs
  // to see every operand, so pad with the first part.
  const Var p0 = ps[0];
  auto at = [&](std::size_t i) { return i < ps.size() ? ps[i] : p0; };
  return p0.graph().record("concat_lastdim", std::move(y),
                           {at(0), at(1), at(2), at(3), at(4), at(5), at(6), at(7)},
                           std::move(backward));
}

Var avg_pool_2d(Var x, std::size_t fh, std::size_t fw) {
  Tensor y = wxpeft::avg_pool_2d(x.value(), fh, fw);
  const Shape xs = x.shape();
  return x.graph().record("avg_pool_2d", std::move(y), {x},
                          [x, fh, fw, xs](Graph& g, const Tensor& gy) {
                            Tensor* gx = g.grad_sink(x);
                            if (!gx) return;
                            const std::size_t c = xs[0], h = xs[1], w = xs[2];
                            const std::size_t oh = h / fh, ow = w / fw;
                            const double inv = 1.0 / static_cast<double>(fh * fw);
                            for (std::size_t ch = 0; ch < c; ++ch) {
                              for (std::size_t i = 0; i < h; ++i) {
                                for (std::size_t j = 0; j < w; ++j) {
                                  (*gx)[(ch * h + i) * w + j] +=
                                      gy[(ch * oh + i / fh) * ow + j / fw] * inv;
                                }
                              }
                            }
                          });
}

Var bilinear_upsample_2d(Var x, std::size_t out_h, std::size_t out_w) {
  Tensor y = wxpeft::bilinear_upsample_2d(x.value(), out_h, out_w);
  const Shape xs = x.shape();
  return x.graph().record(
      "bilinear_upsample_2d", std::move(y), {x}, [x, out_h, out_w, xs](Graph& g, const Tensor& gy) {
        Tensor* gx = g.grad_sink(x);
        if (!gx) return;
        const std::size_t c = xs[0], h = xs[1], w = xs[2];
        const auto ty = bilinear_taps(h, out_h);
        const auto tx = bilinear_taps(w, out_w);
        for (std::size_t ch = 0; ch < c; ++ch) {
          double* dst = gx->data().data() + ch * h * w;
          for (std::size_t i = 0; i < out_h; ++i) {
            const auto& r = ty[i];
            for (std::size_t j = 0; j < out_w; ++j) {
              const auto& q = tx[j];
              const double gv = gy[(ch * out_h + i) * out_w + j];
              dst[r.i0 * w + q.i0] += gv * r.w0 * q.w0;
              dst[r.i0 * w + q.i1] += gv * r.w0 * q.w1;
              dst[r.i1 * w + q.i0] += gv * r.w1 * q.w0;
              dst[r.i1 * w + q.i1] += gv * r.w1 * q.w1;
            }
          }
        }
      });
}

namespace {

// Index map between a C x H x W field and its M x (C*ph*pw) token matrix.
std::vector<std::size_t> patch_index(std::size_t c, std::size_t h, std::size_t w, std::size_t ph,
                                     std::size_t pw) {
  const std::size_t gh = h / ph, gw = w / pw, feat = c * ph * pw;
  std::vector<std::size_t> idx(c * h * w);
  for (std::size_t ti = 0; ti < gh; ++ti) {
    for (std::size_t tj = 0; tj < gw; ++tj) {
      const std::size_t t = ti * gw + tj;
      for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t a = 0; a < ph; ++a) {
          for (std::size_t b = 0; b < pw; ++b) {
            const std::size_t f = (ch * ph + a) * pw + b;
            idx[t * feat + f] = (ch * h + ti * ph + a) * w + tj * pw + b;
          }
        }
      }
    }
  }
  return idx;
}

}  // namespace

Var patchify(Var x, std::size_t ph, std::size_t pw) {
  const Tensor& xv = x.value();
  require_rank("patchify", xv, 3);
  const std::size_t c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
  if (ph == 0 || pw == 0 || h % ph || w % pw) {
    throw DimensionError("patchify: grid " + shape_string(xv.shape()) + " not divisible by patch " +
                         std::to_string(ph) + "x" + std::to_string(pw));
  }
  auto idx = patch_index(c, h, w, ph, pw);
  Tensor y({(h / ph) * (w / pw), c * ph * pw});
  for (std::size_t i = 0; i < idx.size(); ++i) y[i] = xv[idx[i]];
  return x.graph().record("patchify", std::move(y), {x},
                          [x, idx = std::move(idx)](Graph& g, const Tensor& gy) {
                            Tensor* gx = g.grad_sink(x);
                            if (!gx) return;
                            for (std::size_t i = 0; i < idx.size(); ++i) (*gx)[idx[i]] += gy[i];
                          });
}

Var unpatchify(Var tokens, std::size_t channels, std::size_t height, std::size_t width,
               std::size_t ph, std::size_t pw) {
  const Tensor& tv = tokens.value();
  if (ph == 0 || pw == 0 || height % ph || width % pw || tv.rank() != 2 ||
      tv.dim(0) != (height / ph) * (width / pw) || tv.dim(1) != channels * ph * pw) {
    throw DimensionError("unpatchify: tokens " + shape_string(tv.shape()) + " do not tile " +
                         shape_string({channels, height, width}));
  }
  auto idx = patch_index(channels, height, width, ph, pw);
  Tensor y({channels, height, width});
  for (std::size_t i = 0; i < idx.size(); ++i) y[idx[i]] = tv[i];
  return tokens.graph().record("unpatchify", std::move(y), {tokens},
                               [tokens, idx = std::move(idx)](Graph& g, const Tensor& gy) {
                                 Tensor* gt = g.grad_sink(tokens);
                                 if (!gt) return;
                                 for (std::size_t i = 0; i < idx.size(); ++i) {
                                   (*gt)[i] += gy[idx[i]];
                                 }
                               });
}

Var mse(Var pred, const Tensor& target) {
  if (pred.shape() != target.shape()) shape_mismatch("mse", pred.shape(), target.shape());
  Graph& g = pred.graph();
  return mean(square(sub(pred, g.constant(target))));
}

Var mae(Var pred, const Tensor& target) {
  if (pred.shape() != target.shape()) shape_mismatch("mae", pred.shape(), target.shape());
  Graph& g = pred.graph();
  return mean(abs(sub(pred, g.constant(target))));
}

Var crps_gaussian_mean(Var mu, Var sigma, const Tensor& obs) {
  same_shape("crps_gaussian_mean", mu, sigma);
  if (mu.shape() != obs.shape()) shape_mismatch("crps_gaussian_mean", mu.shape(), obs.shape());
  const Tensor& mv = mu.value();
  const Tensor& sv = sigma.value();
  const std::size_t n = mv.numel();
  const double inv_sqrt_pi = 1.0 / std::sqrt(std::numbers::pi);
  std::vector<double> dmu(n), dsig(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double s = sv[i];
    if (!(s > 0.0)) throw DomainError("crps_gaussian_mean: sigma must be positive");
    const double z = (obs[i] - mv[i]) / s;
    const double pdf = normal_pdf(z);
    const double cdf = normal_cdf(z);
    total += s * (2.0 * pdf + z * (2.0 * cdf - 1.0) - inv_sqrt_pi);
    dmu[i] = 1.0 - 2.0 * cdf;
    dsig[i] = 2.0 * pdf - inv_sqrt_pi;
  }
  const double inv = 1.0 / static_cast<double>(n);
  return mu.graph().record(
      "crps_gaussian_mean", Tensor::scalar(total * inv), {mu, sigma},
      [mu, sigma, inv, dmu = std::move(dmu), dsig = std::move(dsig)](Graph& g, const Tensor& gy) {
        const double s = gy[0] * inv;
        if (Tensor* gm = g.grad_sink(mu)) {
          for (std::size_t i = 0; i < dmu.size(); ++i) (*gm)[i] += s * dmu[i];
        }
        if (Tensor* gs = g.grad_sink(sigma)) {
          for (std::size_t i = 0; i < dsig.size(); ++i) (*gs)[i] += s * dsig[i];
        }
      });
}

}  // namespace wxpeft::ad

// SPDX-License-Identifier: Apache-2.0
#include "vlmoe/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#ifdef VLMOE_USE_OPENBLAS
#include <cblas.h>
extern "C" void openblas_set_num_threads(int);
#endif

namespace vlmoe {

namespace {

#ifdef VLMOE_USE_OPENBLAS
// BLAS runs single-threaded; batching across examples supplies the
// parallelism and keeps results independent of the worker count.
struct BlasInit {
  BlasInit() { openblas_set_num_threads(1); }
};
const BlasInit g_blas_init;

// C += A.B for the row-major operands used below
void gemm_nn(const double* a, const double* b, double* c, int m, int n,
             int p) {
  cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, m, p, n, 1.0, a, n,
              b, p, 1.0, c, p);
}
// C += A.B^T
void gemm_nt(const double* a, const double* b, double* c, int m, int n,
             int p) {
  cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, m, p, n, 1.0, a, n, b,
              n, 1.0, c, p);
}
// C += A^T.B with A [n x m]
void gemm_tn(const double* a, const double* b, double* c, int m, int n,
             int p) {
  cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, m, p, n, 1.0, a, m, b,
              p, 1.0, c, p);
}
#endif

void record_node(Tensor& out, std::vector<Tensor> parents,
                 std::function<void(Tape&)> backward) {
  Tape* tape = Tape::active();
  if (!tape) return;
  bool need = false;
  for (const auto& p : parents) need = need || p.requires_grad();
  if (!need) return;
  out.set_requires_grad(true);
  Tape::Node node;
  node.out = out.impl_ptr();
  node.parents.reserve(parents.size());
  for (auto& p : parents) node.parents.push_back(p.impl_ptr());
  node.backward = std::move(backward);
  tape->record(std::move(node));
}

void check_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2)
    throw ShapeError(std::string(op) + ": expected rank-2 tensor, got " +
                     shape_str(t.shape()));
}

// four independent accumulator chains so the reduction vectorizes without
// reassociation; summation order is fixed, results stay deterministic
inline double dot4(const double* a, const double* b, int n) {
  double acc0 = 0.0, acc1 = 0.0, acc2 = 0.0, acc3 = 0.0;
  int k = 0;
  for (; k + 4 <= n; k += 4) {
    acc0 += a[k] * b[k];
    acc1 += a[k + 1] * b[k + 1];
    acc2 += a[k + 2] * b[k + 2];
    acc3 += a[k + 3] * b[k + 3];
  }
  double acc = (acc0 + acc1) + (acc2 + acc3);
  for (; k < n; ++k) acc += a[k] * b[k];
  return acc;
}

std::size_t usz(int v) { return static_cast<std::size_t>(v); }

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_rank2(a, "matmul");
  check_rank2(b, "matmul");
  const int m = a.dim(0), n = a.dim(1), p = b.dim(1);
  if (b.dim(0) != n)
    throw ShapeError("matmul: inner dimensions disagree, " +
                     shape_str(a.shape()) + " x " + shape_str(b.shape()));
  Tensor out = Tensor::zeros({m, p});
  {
    const double* A = a.data().data();
    const double* B = b.data().data();
    double* C = out.mutable_data().data();
#ifdef VLMOE_USE_OPENBLAS
    gemm_nn(A, B, C, m, n, p);
#else
    for (int i = 0; i < m; ++i) {
      double* c = C + usz(i) * usz(p);
      const double* arow = A + usz(i) * usz(n);
      for (int k = 0; k < n; ++k) {
        const double av = arow[k];
        const double* brow = B + usz(k) * usz(p);
        for (int j = 0; j < p; ++j) c[j] += av * brow[j];
      }
    }
#endif
  }
  require_finite(out.data(), "matmul");
  record_node(out, {a, b}, [a, b, out, m, n, p](Tape& t) {
    const auto& g = *t.grad_of(out.impl());
    if (a.requires_grad()) {
      auto& ga = t.grad_buffer(a.impl(), a.numel());
      const double* B = b.data().data();
#ifdef VLMOE_USE_OPENBLAS
      gemm_nt(g.data(), B, ga.data(), m, p, n);
#else
      for (int i = 0; i < m; ++i) {
        const double* grow = g.data() + usz(i) * usz(p);
        double* garow = ga.data() + usz(i) * usz(n);
        for (int k = 0; k < n; ++k)
          garow[k] += dot4(grow, B + usz(k) * usz(p), p);
      }
#endif
    }
    if (b.requires_grad()) {
      auto& gb = t.grad_buffer(b.impl(), b.numel());
      const double* A = a.data().data();
#ifdef VLMOE_USE_OPENBLAS
      gemm_tn(A, g.data(), gb.data(), n, m, p);
#else
      for (int k = 0; k < n; ++k) {
        double* gbrow = gb.data() + usz(k) * usz(p);
        for (int i = 0; i < m; ++i) {
          const double av = A[usz(i) * usz(n) + usz(k)];
          const double* grow = g.data() + usz(i) * usz(p);
          for (int j = 0; j < p; ++j) gbrow[j] += av * grow[j];
        }
      }
#endif
    }
  });
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  check_rank2(a, "matmul_nt");
  check_rank2(b, "matmul_nt");
  const int m = a.dim(0), n = a.dim(1), p = b.dim(0);
  if (b.dim(1) != n)
    throw ShapeError("matmul_nt: inner dimensions disagree, " +
                     shape_str(a.shape()) + " x " + shape_str(b.shape()) +
                     "^T");
  Tensor out = Tensor::zeros({m, p});
  {
    const double* A = a.data().data();
    const double* B = b.data().data();
    double* C = out.mutable_data().data();
#ifdef VLMOE_USE_OPENBLAS
    gemm_nt(A, B, C, m, n, p);
#else
    for (int i = 0; i < m; ++i) {
      const double* arow = A + usz(i) * usz(n);
      double* crow = C + usz(i) * usz(p);
      for (int j = 0; j < p; ++j)
        crow[j] = dot4(arow, B + usz(j) * usz(n), n);
    }
#endif
  }
  require_finite(out.data(), "matmul_nt");
  record_node(out, {a, b}, [a, b, out, m, n, p](Tape& t) {
    const auto& g = *t.grad_of(out.impl());
    if (a.requires_grad()) {
      auto& ga = t.grad_buffer(a.impl(), a.numel());
      const double* B = b.data().data();
#ifdef VLMOE_USE_OPENBLAS
      gemm_nn(g.data(), B, ga.data(), m, p, n);
#else
      for (int i = 0; i < m; ++i) {
        double* garow = ga.data() + usz(i) * usz(n);
        const double* grow = g.data() + usz(i) * usz(p);
        for (int j = 0; j < p; ++j) {
          const double gv = grow[j];
          const double* brow = B + usz(j) * usz(n);
          for (int k = 0; k < n; ++k) garow[k] += gv * brow[k];
        }
      }
#endif
    }
    if (b.requires_grad()) {
      auto& gb = t.grad_buffer(b.impl(), b.numel());
      const double* A = a.data().data();
#ifdef VLMOE_USE_OPENBLAS
      gemm_tn(g.data(), A, gb.data(), p, m, n);
#else
      for (int i = 0; i < m; ++i) {
        const double* arow = A + usz(i) * usz(n);
        const double* grow = g.data() + usz(i) * usz(p);
        for (int j = 0; j < p; ++j) {
          const double gv = grow[j];
          double* gbrow = gb.data() + usz(j) * usz(n);
          for (int k = 0; k < n; ++k) gbrow[k] += gv * arow[k];
        }
      }
#endif
    }
  });
  return out;
}

Tensor transpose(const Tensor& a) {
  check_rank2(a, "transpose");
  const int r = a.dim(0), c = a.dim(1);
  Tensor out = Tensor::zeros({c, r});
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j)
      out.mutable_data()[usz(j) * usz(r) + usz(i)] = a.at(i, j);
  record_node(out, {a}, [a, out, r, c](Tape& t) {
    const auto& g = *t.grad_of(out.impl());
    auto& ga = t.grad_buffer(a.impl(), a.numel());
    for (int j = 0; j < c; ++j)
      for (int i = 0; i < r; ++i)
        ga[usz(i) * usz(c) + usz(j)] += g[usz(j) * usz(r) + usz(i)];
  });
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError("add: shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  Tensor out = Tensor::zeros(a.shape());
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i)
    out.mutable_data()[i] = a.data()[i] + b.data()[i];
  require_finite(out.data(), "add");
  record_node(out, {a, b}, [a, b, out, n](Tape& t) {
    const auto& g = *t.grad_of(out.impl());
    if (a.requires_grad()) {
      auto& ga = t.grad_buffer(a.impl(), n);
      for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
    }
    if (b.requires_grad()) {
      auto& gb = t.grad_buffer(b.impl(), n);
      for (std::size_t i = 0; i < n; ++i) gb[i] += g[i];
    }
  });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError("mul: shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  Tensor out = Tensor::zeros(a.shape());
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i)
    out.mutable_data()[i] = a.data()[i] * b.data()[i];
  require_finite(out.data(), "mul");
  record_node(out, {a, b}, [a, b, out, n](Tape& t) {
    const auto& g = *t.grad_of(out.impl());
    if (a.requires_grad()) {
      auto& ga = t.grad_buffer(a.impl(), n);
      for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * b.data()[i];
    }
    if (b.requires_grad()) {
      auto& gb = t.grad_buffer(b.impl(), n);
      for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * a.data()[i];
    }
  });
  return out;
}

Tensor scale(const Tensor& a, double s) {
  Tensor out = Tensor::zeros(a.shape());
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) out.mutable_data()[i] = a.data()[i] * s;
  require_finite(out.data(), "scale");
  record_node(out, {a}, [a, out, s, n](Tape& t) {
    const auto& g = *t.grad_of(out.impl());
    auto& ga = t.grad_buffer(a.impl(), n);
    for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * s;
  });
  return out;
}

Tensor add_row_bias(const Tensor& x, const Tensor& bias) {
  check_rank2(x, "add_row_bias");
  if (bias.rank() != 1 || bias.dim(0) != x.dim(1))
    throw ShapeError("add_row_bias: bias shape " + shape_str(bias.shape()) +
                     " does not match columns of " + shape_str(x.shape()));
  const int r = x.dim(0), c = x.dim(1);
  Tensor out = Tensor::zeros({r, c});
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j)
      out.mutable_data()[usz(i) * usz(c) + usz(j)] = x.at(i, j) + bias.at(j);
  require_finite(out.data(), "add_row_bias");
  record_node(out, {x, bias}, [x, bias, out, r, c](Tape& t) {
    const auto& g = *t.grad_of(out.impl());
    if (x.requires_grad()) {
      auto& gx = t.grad_buffer(x.impl(), x.numel());
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
    }
    if (bias.requires_grad()) {
      auto& gb = t.grad_buffer(bias.impl(), usz(c));
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) gb[usz(j)] += g[usz(i) * usz(c) + usz(j)];
    }
  });
  return out;
}

Tensor gelu(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  const std::size_t n = out.numel();
  constexpr double kInvSqrt2 = 0.7071067811865475244;
  constexpr double kInvSqrt2Pi = 0.3989422804014326779;
  const bool want_grad = grad_enabled() && x.requires_grad();
  // the derivative cdf + v*pdf is assembled here so backward pays no
  // transcendental calls
  std::vector<double> deriv;
  if (want_grad) deriv.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double v = x.data()[i];
    const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
    out.mutable_data()[i] = v * cdf;
    if (want_grad)
      deriv[i] = cdf + v * kInvSqrt2Pi * std::exp(-0.5 * v * v);
  }
  require_finite(out.data(), "gelu");
  record_node(out, {x}, [x, out, n, deriv = std::move(deriv)](Tape& t) {
    const auto& g = *t.grad_of(out.impl());
    auto& gx = t.grad_buffer(x.impl(), n);
    for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * deriv[i];
  });
  return out;
}

Tensor softmax(const Tensor& x, int axis) {
  if (axis < 0 || axis >= x.rank())
    throw ShapeError("softmax: axis " + std::to_string(axis) +
                     " out of range for " + shape_str(x.shape()));
  const int n = x.dim(axis);
  std::size_t inner = 1, outer = 1;
  for (int i = 0; i < x.rank(); ++i) {
    if (i < axis) outer *= usz(x.dim(i));
    if (i > axis) inner *= usz(x.dim(i));
  }
  Tensor out = Tensor::zeros(x.shape());
  const double* in = x.data().data();
  double* o = out.mutable_data().data();
  for (std::size_t a = 0; a < outer; ++a) {
    for (std::size_t b = 0; b < inner; ++b) {
      const std::size_t base = a * usz(n) * inner + b;
      double mx = in[base];
      for (int i = 1; i < n; ++i) mx = std::max(mx, in[base + usz(i) * inner]);
      double s = 0.0;
      for (int i = 0; i < n; ++i) {
        const double e = std::exp(in[base + usz(i) * inner] - mx);
        o[base + usz(i) * inner] = e;
        s += e;
      }
      const double invs = 1.0 / s;
      for (int i = 0; i < n; ++i) o[base + usz(i) * inner] *= invs;
    }
  }
  require_finite(out.data(), "softmax");
  record_node(out, {x}, [x, out, n, inner, outer](Tape& t) {
    const auto& g = *t.grad_of(out.impl());
    auto& gx = t.grad_buffer(x.impl(), x.numel());
    const double* y = out.data().data();
    for (std::size_t a = 0; a < outer; ++a) {
      for (std::size_t b = 0; b < inner; ++b) {
        const std::size_t base = a * usz(n) * inner + b;
        double dot = 0.0;
        for (int i = 0; i < n; ++i) {
          const std::size_t idx = base + usz(i) * inner;
          dot += g[idx] * y[idx];
        }
        for (int i = 0; i < n; ++i) {
          const std::size_t idx = base + usz(i) * inner;
          gx[idx] += (g[idx] - dot) * y[idx];
        }
      }
    }
  });
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps) {
  if (x.rank() < 1) throw ShapeError("layer_norm: scalar input");
  const int d = x.dim(x.rank() - 1);
  if (gain.rank() != 1 || gain.dim(0) != d || bias.rank() != 1 ||
      bias.dim(0) != d)
    throw ShapeError("layer_norm: gain/bias must be rank-1 of length " +
                     std::to_string(d));
  const std::size_t rows = x.numel() / usz(d);
  Tensor out = Tensor::zeros(x.shape());
  std::vector<double> mu(rows), inv(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = x.data().data() + r * usz(d);
    double m = 0.0;
    for (int j = 0; j < d; ++j) m += row[j];
    m /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) {
      const double c = row[j] - m;
      var += c * c;
    }
    var /= d;
    const double is = 1.0 / std::sqrt(var + eps);
    mu[r] = m;
    inv[r] = is;
    double* orow = out.mutable_data().data() + r * usz(d);
    for (int j = 0; j < d; ++j)
      orow[j] = (row[j] - m) * is * gain.at(j) + bias.at(j);
  }
  require_finite(out.data(), "layer_norm");
  record_node(out, {x, gain, bias},
              [x, gain, bias, out, d, rows, mu = std::move(mu),
               inv = std::move(inv)](Tape& t) {
                const auto& g = *t.grad_of(out.impl());
                const double* in = x.data().data();
                for (std::size_t r = 0; r < rows; ++r) {
                  const double* row = in + r * usz(d);
                  const double* grow = g.data() + r * usz(d);
                  const double is = inv[r], m = mu[r];
                  if (x.requires_grad()) {
                    auto& gx = t.grad_buffer(x.impl(), x.numel());
                    double sum_dxhat = 0.0, sum_dxhat_xc = 0.0;
                    for (int j = 0; j < d; ++j) {
                      const double dxhat = grow[j] * gain.at(j);
                      sum_dxhat += dxhat;
                      sum_dxhat_xc += dxhat * (row[j] - m);
                    }
                    const double gvar = sum_dxhat_xc * (-0.5) * is * is * is;
                    double sum_xc = 0.0;
                    for (int j = 0; j < d; ++j) sum_xc += row[j] - m;
                    const double gmu =
                        -is * sum_dxhat + gvar * (-2.0 / d) * sum_xc;
                    double* gxrow = gx.data() + r * usz(d);
                    for (int j = 0; j < d; ++j) {
                      const double dxhat = grow[j] * gain.at(j);
                      gxrow[j] += dxhat * is + gvar * 2.0 * (row[j] - m) / d +
                                  gmu / d;
                    }
                  }
                  if (gain.requires_grad()) {
                    auto& gg = t.grad_buffer(gain.impl(), usz(d));
                    for (int j = 0; j < d; ++j)
                      gg[usz(j)] += grow[j] * (row[j] - m) * is;
                  }
                  if (bias.requires_grad()) {
                    auto& gb = t.grad_buffer(bias.impl(), usz(d));
                    for (int j = 0; j < d; ++j) gb[usz(j)] += grow[j];
                  }
                }
              });
  return out;
}

Tensor cross_entropy_logits(const Tensor& logits,
                            const std::vector<int>& targets,
                            const std::vector<uint8_t>& mask) {
  check_rank2(logits, "cross_entropy_logits");
  const int rows = logits.dim(0), v = logits.dim(1);
  if (targets.size() != usz(rows) || mask.size() != usz(rows))
    throw ShapeError("cross_entropy_logits: targets/mask length must equal " +
                     std::to_string(rows));
  int cnt = 0;
  for (int r = 0; r < rows; ++r) {
    if (!mask[usz(r)]) continue;
    ++cnt;
    if (targets[usz(r)] < 0 || targets[usz(r)] >= v)
      throw ValueError("cross_entropy_logits: target index out of vocabulary");
  }
  if (cnt == 0) throw ValueError("cross_entropy_logits: empty loss support");
  double total = 0.0;
  for (int r = 0; r < rows; ++r) {
    if (!mask[usz(r)]) continue;
    const double* row = logits.data().data() + usz(r) * usz(v);
    double mx = row[0];
    for (int j = 1; j < v; ++j) mx = std::max(mx, row[j]);
    double s = 0.0;
    for (int j = 0; j < v; ++j) s += std::exp(row[j] - mx);
    total += std::log(s) + mx - row[targets[usz(r)]];
  }
  Tensor out = Tensor::scalar(total / cnt);
  require_finite(out.data(), "cross_entropy_logits");
  record_node(out, {logits}, [logits, out, targets, mask, rows, v,
                              cnt](Tape& t) {
    const double go = (*t.grad_of(out.impl()))[0] / cnt;
    auto& gl = t.grad_buffer(logits.impl(), logits.numel());
    for (int r = 0; r < rows; ++r) {
      if (!mask[usz(r)]) continue;
      const double* row = logits.data().data() + usz(r) * usz(v);
      double mx = row[0];
      for (int j = 1; j < v; ++j) mx = std::max(mx, row[j]);
      double s = 0.0;
      for (int j = 0; j < v; ++j) s += std::exp(row[j] - mx);
      double* grow = gl.data() + usz(r) * usz(v);
      const double invs = 1.0 / s;
      for (int j = 0; j < v; ++j)
        grow[j] += go * std::exp(row[j] - mx) * invs;
      grow[targets[usz(r)]] -= go;
    }
  });
  return out;
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  Tensor out = Tensor::scalar(s);
  require_finite(out.data(), "sum");
  record_node(out, {x}, [x, out](Tape& t) {
    const double go = (*t.grad_of(out.impl()))[0];
    auto& gx = t.grad_buffer(x.impl(), x.numel());
    for (auto& v : gx) v += go;
  });
  return out;
}

Tensor mean_rows(const Tensor& x) {
  check_rank2(x, "mean_rows");
  const int r = x.dim(0), c = x.dim(1);
  Tensor out = Tensor::zeros({c});
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out.mutable_data()[usz(j)] += x.at(i, j);
  for (int j = 0; j < c; ++j) out.mutable_data()[usz(j)] /= r;
  require_finite(out.data(), "mean_rows");
  record_node(out, {x}, [x, out, r, c](Tape& t) {
    const auto& g = *t.grad_of(out.impl());
    auto& gx = t.grad_buffer(x.impl(), x.numel());
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j)
        gx[usz(i) * usz(c) + usz(j)] += g[usz(j)] / r;
  });
  return out;
}

Tensor gather_rows(const Tensor& x, const std::vector<int>& rows) {
  check_rank2(x, "gather_rows");
  const int r = x.dim(0), c = x.dim(1);
  const int n = static_cast<int>(rows.size());
  if (n == 0) throw ValueError("gather_rows: empty row list");
  for (int idx : rows)
    if (idx < 0 || idx >= r)
      throw ValueError("gather_rows: row index " + std::to_string(idx) +
                       " out of range");
  Tensor out = Tensor::zeros({n, c});
  for (int i = 0; i < n; ++i)
    std::copy_n(x.data().data() + usz(rows[usz(i)]) * usz(c), usz(c),
                out.mutable_data().data() + usz(i) * usz(c));
  record_node(out, {x}, [x, out, rows, c, n](Tape& t) {
    const auto& g = *t.grad_of(out.impl());
    auto& gx = t.grad_buffer(x.impl(), x.numel());
    for (int i = 0; i < n; ++i) {
      double* dst = gx.data() + usz(rows[usz(i)]) * usz(c);
      const double* src = g.data() + usz(i) * usz(c);
      for (int j = 0; j < c; ++j) dst[j] += src[j];
    }
  });
  return out;
}

Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids) {
  return gather_rows(table, ids);
}

Tensor gather_entries(const Tensor& x,
                      const std::vector<std::pair<int, int>>& coords) {
  check_rank2(x, "gather_entries");
  const int r = x.dim(0), c = x.dim(1);
  const int n = static_cast<int>(coords.size());
  if (n == 0) throw ValueError("gather_entries: empty coordinate list");
  Tensor out = Tensor::zeros({n});
  for (int i = 0; i < n; ++i) {
    auto [ri, ci] = coords[usz(i)];
    if (ri < 0 || ri >= r || ci < 0 || ci >= c)
      throw ValueError("gather_entries: coordinate out of range");
    out.mutable_data()[usz(i)] = x.at(ri, ci);
  }
  record_node(out, {x}, [x, out, coords, c, n](Tape& t) {
    const auto& g = *t.grad_of(out.impl());
    auto& gx = t.grad_buffer(x.impl(), x.numel());
    for (int i = 0; i < n; ++i) {
      auto [ri, ci] = coords[usz(i)];
      gx[usz(ri) * usz(c) + usz(ci)] += g[usz(i)];
    }
  });
  return out;
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ValueError("concat: no inputs");
  if (axis != 0 && axis != 1) throw ShapeError("concat: axis must be 0 or 1");
  for (const auto& p : parts) check_rank2(p, "concat");
  const int fixed = axis == 0 ? parts[0].dim(1) : parts[0].dim(0);
  int total = 0;
  for (const auto& p : parts) {
    if ((axis == 0 ? p.dim(1) : p.dim(0)) != fixed)
      throw ShapeError("concat: mismatched extents along fixed axis");
    total += p.dim(axis);
  }
  Tensor out = axis == 0 ? Tensor::zeros({total, fixed})
                         : Tensor::zeros({fixed, total});
  int offset = 0;
  for (const auto& p : parts) {
    const int pr = p.dim(0), pc = p.dim(1);
    if (axis == 0) {
      std::copy_n(p.data().data(), p.numel(),
                  out.mutable_data().data() + usz(offset) * usz(fixed));
    } else {
      for (int i = 0; i < pr; ++i)
        std::copy_n(p.data().data() + usz(i) * usz(pc), usz(pc),
                    out.mutable_data().data() + usz(i) * usz(total) +
                        usz(offset));
    }
    offset += p.dim(axis);
  }
  record_node(out, parts, [parts, out, axis, fixed, total](Tape& t) {
    const auto& g = *t.grad_of(out.impl());
    int offset = 0;
    for (const auto& p : parts) {
      const int pr = p.dim(0), pc = p.dim(1);
      if (p.requires_grad()) {
        auto& gp = t.grad_buffer(p.impl(), p.numel());
        if (axis == 0) {
          const double* src = g.data() + usz(offset) * usz(fixed);
          for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += src[i];
        } else {
          for (int i = 0; i < pr; ++i) {
            const double* src = g.data() + usz(i) * usz(total) + usz(offset);
            double* dst = gp.data() + usz(i) * usz(pc);
            for (int j = 0; j < pc; ++j) dst[j] += src[j];
          }
        }
      }
      offset += p.dim(axis);
    }
  });
  return out;
}

Tensor slice_rows(const Tensor& x, int r0, int r1) {
  check_rank2(x, "slice_rows");
  if (r0 < 0 || r1 > x.dim(0) || r0 >= r1)
    throw ShapeError("slice_rows: bad range [" + std::to_string(r0) + ", " +
                     std::to_string(r1) + ")");
  const int c = x.dim(1);
  Tensor out = Tensor::zeros({r1 - r0, c});
  std::copy_n(x.data().data() + usz(r0) * usz(c), out.numel(),
              out.mutable_data().data());
  record_node(out, {x}, [x, out, r0, c](Tape& t) {
    const auto& g = *t.grad_of(out.impl());
    auto& gx = t.grad_buffer(x.impl(), x.numel());
    double* dst = gx.data() + usz(r0) * usz(c);
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  });
  return out;
}

Tensor slice_cols(const Tensor& x, int c0, int c1) {
  check_rank2(x, "slice_cols");
  if (c0 < 0 || c1 > x.dim(1) || c0 >= c1)
    throw ShapeError("slice_cols: bad range [" + std::to_string(c0) + ", " +
                     std::to_string(c1) + ")");
  const int r = x.dim(0), c = x.dim(1), w = c1 - c0;
  Tensor out = Tensor::zeros({r, w});
  for (int i = 0; i < r; ++i)
    std::copy_n(x.data().data() + usz(i) * usz(c) + usz(c0), usz(w),
                out.mutable_data().data() + usz(i) * usz(w));
  record_node(out, {x}, [x, out, r, c, c0, w](Tape& t) {
    const auto& g = *t.grad_of(out.impl());
    auto& gx = t.grad_buffer(x.impl(), x.numel());
    for (int i = 0; i < r; ++i) {
      const double* src = g.data() + usz(i) * usz(w);
      double* dst = gx.data() + usz(i) * usz(c) + usz(c0);
      for (int j = 0; j < w; ++j) dst[j] += src[j];
    }
  });
  return out;
}

Tensor weighted_scatter_rows(int rows, int cols,
                             const std::vector<Tensor>& blocks,
                             const std::vector<std::vector<int>>& row_index,
                             const std::vector<Tensor>& weights) {
  if (blocks.size() != row_index.size() || blocks.size() != weights.size())
    throw ValueError("weighted_scatter_rows: list sizes disagree");
  for (std::size_t e = 0; e < blocks.size(); ++e) {
    check_rank2(blocks[e], "weighted_scatter_rows");
    if (blocks[e].dim(1) != cols || weights[e].rank() != 1 ||
        blocks[e].dim(0) != weights[e].dim(0) ||
        row_index[e].size() != usz(blocks[e].dim(0)))
      throw ShapeError("weighted_scatter_rows: block/weight/index mismatch");
    for (int ri : row_index[e])
      if (ri < 0 || ri >= rows)
        throw ValueError("weighted_scatter_rows: row index out of range");
  }
  Tensor out = Tensor::zeros({rows, cols});
  for (std::size_t e = 0; e < blocks.size(); ++e) {
    const int n = blocks[e].dim(0);
    for (int i = 0; i < n; ++i) {
      const double w = weights[e].at(i);
      const double* src = blocks[e].data().data() + usz(i) * usz(cols);
      double* dst = out.mutable_data().data() +
                    usz(row_index[e][usz(i)]) * usz(cols);
      for (int j = 0; j < cols; ++j) dst[j] += w * src[j];
    }
  }
  require_finite(out.data(), "weighted_scatter_rows");
  std::vector<Tensor> parents;
  parents.reserve(blocks.size() * 2);
  for (const auto& b : blocks) parents.push_back(b);
  for (const auto& w : weights) parents.push_back(w);
  record_node(out, parents, [blocks, row_index, weights, out, cols](Tape& t) {
    const auto& g = *t.grad_of(out.impl());
    for (std::size_t e = 0; e < blocks.size(); ++e) {
      const int n = blocks[e].dim(0);
      for (int i = 0; i < n; ++i) {
        const double* grow =
            g.data() + usz(row_index[e][usz(i)]) * usz(cols);
        if (blocks[e].requires_grad()) {
          auto& gb = t.grad_buffer(blocks[e].impl(), blocks[e].numel());
          const double w = weights[e].at(i);
          double* dst = gb.data() + usz(i) * usz(cols);
          for (int j = 0; j < cols; ++j) dst[j] += w * grow[j];
        }
        if (weights[e].requires_grad()) {
          auto& gw = t.grad_buffer(weights[e].impl(), weights[e].numel());
          const double* src = blocks[e].data().data() + usz(i) * usz(cols);
          double acc = 0.0;
          for (int j = 0; j < cols; ++j) acc += src[j] * grow[j];
          gw[usz(i)] += acc;
        }
      }
    }
  });
  return out;
}

std::vector<int> topk_indices(const double* v, int n, int k) {
  if (k < 1 || k > n)
    throw ValueError("topk_indices: k=" + std::to_string(k) +
                     " out of range for length " + std::to_string(n));
  std::vector<int> idx(usz(n));
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [v](int a, int b) { return v[a] > v[b]; });
  idx.resize(usz(k));
  return idx;
}

std::vector<int> topk_indices(const std::vector<double>& v, int k) {
  return topk_indices(v.data(), static_cast<int>(v.size()), k);
}

Tensor interpolate_grid_bilinear(const Tensor& grid, int g1, int g2) {
  check_rank2(grid, "interpolate_grid_bilinear");
  if (g1 < 2 || g2 < 2)
    throw ValueError("interpolate_grid_bilinear: grid sides must be >= 2");
  if (grid.dim(0) != g1 * g1)
    throw ShapeError("interpolate_grid_bilinear: grid rows != g1*g1");
  const int c = grid.dim(1);
  Tensor out = Tensor::zeros({g2 * g2, c});
  const double ratio = static_cast<double>(g1 - 1) / (g2 - 1);
  // (flat output row, flat source row, weight) triples; shared with backward
  struct Tap {
    int dst, src;
    double w;
  };
  std::vector<Tap> taps;
  taps.reserve(usz(g2) * usz(g2) * 4);
  for (int oy = 0; oy < g2; ++oy) {
    const double sy = oy * ratio;
    const int y0 = std::min(static_cast<int>(sy), g1 - 2);
    const double wy1 = sy - y0, wy0 = 1.0 - wy1;
    for (int ox = 0; ox < g2; ++ox) {
      const double sx = ox * ratio;
      const int x0 = std::min(static_cast<int>(sx), g1 - 2);
      const double wx1 = sx - x0, wx0 = 1.0 - wx1;
      const int dst = oy * g2 + ox;
      const double w[4] = {wy0 * wx0, wy0 * wx1, wy1 * wx0, wy1 * wx1};
      const int src[4] = {y0 * g1 + x0, y0 * g1 + x0 + 1, (y0 + 1) * g1 + x0,
                          (y0 + 1) * g1 + x0 + 1};
      for (int q = 0; q < 4; ++q) {
        if (w[q] == 0.0) continue;
        taps.push_back({dst, src[q], w[q]});
        double* drow = out.mutable_data().data() + usz(dst) * usz(c);
        const double* srow = grid.data().data() + usz(src[q]) * usz(c);
        for (int j = 0; j < c; ++j) drow[j] += w[q] * srow[j];
      }
    }
  }
  record_node(out, {grid}, [grid, out, taps = std::move(taps), c](Tape& t) {
    const auto& g = *t.grad_of(out.impl());
    auto& gg = t.grad_buffer(grid.impl(), grid.numel());
    for (const auto& tap : taps) {
      const double* grow = g.data() + usz(tap.dst) * usz(c);
      double* drow = gg.data() + usz(tap.src) * usz(c);
      for (int j = 0; j < c; ++j) drow[j] += tap.w * grow[j];
    }
  });
  return out;
}

}  // namespace vlmoe

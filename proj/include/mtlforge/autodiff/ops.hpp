#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mtlforge/autodiff/tape.hpp"
#include "mtlforge/autodiff/tensor.hpp"
#include "mtlforge/error.hpp"
#include "mtlforge/random.hpp"

namespace mtl {

enum class Mode { train, eval };

}  // namespace mtl

namespace mtl::ad {

namespace detail {

inline void expect_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2)
    throw UsageError(std::string(op) + ": expected a matrix, got shape " + shape_str(t.shape()));
}

// C[n,m] = A[n,k] * B[k,m]
inline Tensor mm(const Tensor& a, const Tensor& b) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  Tensor c = Tensor::matrix(n, m);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* pc = c.data().data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      if (av == 0.0) continue;
      const double* brow = pb + p * m;
      double* crow = pc + i * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  return c;
}

// C[k,m] = A[n,k]^T * B[n,m]
inline Tensor mm_tn(const Tensor& a, const Tensor& b) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  Tensor c = Tensor::matrix(k, m);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* pc = c.data().data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      if (av == 0.0) continue;
      const double* brow = pb + i * m;
      double* crow = pc + p * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  return c;
}

// C[n,m] = A[n,k] * B[m,k]^T
inline Tensor mm_nt(const Tensor& a, const Tensor& b) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
  Tensor c = Tensor::matrix(n, m);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* pc = c.data().data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      const double* arow = pa + i * k;
      const double* brow = pb + j * k;
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      pc[i * m + j] = s;
    }
  return c;
}

inline Tensor like(const Tensor& t, double fill = 0.0) { return Tensor(t.shape(), fill); }

}  // namespace detail

/// y = a * b for matrices.
inline Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  detail::expect_rank2(av, "matmul");
  detail::expect_rank2(bv, "matmul");
  if (av.cols() != bv.rows())
    throw UsageError("matmul: shape mismatch " + shape_str(av.shape()) + " x " + shape_str(bv.shape()));
  return a.tape->record("matmul", {a.id, b.id}, detail::mm(av, bv),
                        [ia = a.id, ib = b.id](Tape& t, std::size_t self) {
                          const Tensor g = t.grad(self);
                          if (t.requires_grad(ia)) t.accumulate(ia, detail::mm_nt(g, t.value(ib)));
                          if (t.requires_grad(ib)) t.accumulate(ib, detail::mm_tn(t.value(ia), g));
                        });
}

/// y = a * b^T, with b given as [out, in].
inline Var matmul_nt(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  detail::expect_rank2(av, "matmul_nt");
  detail::expect_rank2(bv, "matmul_nt");
  if (av.cols() != bv.cols())
    throw UsageError("matmul_nt: shape mismatch " + shape_str(av.shape()) + " x " +
                     shape_str(bv.shape()) + "^T");
  return a.tape->record("matmul_nt", {a.id, b.id}, detail::mm_nt(av, bv),
                        [ia = a.id, ib = b.id](Tape& t, std::size_t self) {
                          const Tensor g = t.grad(self);
                          if (t.requires_grad(ia)) t.accumulate(ia, detail::mm(g, t.value(ib)));
                          if (t.requires_grad(ib)) t.accumulate(ib, detail::mm_tn(g, t.value(ia)));
                        });
}

/// Dense layer y = x W + b.
inline Var linear(Var x, Var w, Var b) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = b.value();
  detail::expect_rank2(xv, "linear");
  detail::expect_rank2(wv, "linear");
  if (xv.cols() != wv.rows() || bv.size() != wv.cols())
    throw UsageError("linear: shape mismatch x" + shape_str(xv.shape()) + " W" +
                     shape_str(wv.shape()) + " b" + shape_str(bv.shape()));
  Tensor y = detail::mm(xv, wv);
  const std::size_t n = y.rows(), m = y.cols();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) y.at(i, j) += bv[j];
  return x.tape->record(
      "linear", {x.id, w.id, b.id}, std::move(y),
      [ix = x.id, iw = w.id, ib = b.id](Tape& t, std::size_t self) {
        const Tensor g = t.grad(self);
        if (t.requires_grad(ix)) t.accumulate(ix, detail::mm_nt(g, t.value(iw)));
        if (t.requires_grad(iw)) t.accumulate(iw, detail::mm_tn(t.value(ix), g));
        if (t.requires_grad(ib)) {
          Tensor gb = detail::like(t.value(ib));
          for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t j = 0; j < g.cols(); ++j) gb[j] += g.at(i, j);
          t.accumulate(ib, gb);
        }
      });
}

inline Var add(Var a, Var b) {
  if (!a.value().same_shape(b.value()))
    throw UsageError("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor y = a.value();
  y += b.value();
  return a.tape->record("add", {a.id, b.id}, std::move(y),
                        [ia = a.id, ib = b.id](Tape& t, std::size_t self) {
                          const Tensor g = t.grad(self);
                          t.accumulate(ia, g);
                          t.accumulate(ib, g);
                        });
}

/// Elementwise product.
inline Var mul(Var a, Var b) {
  if (!a.value().same_shape(b.value()))
    throw UsageError("mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= b.value()[i];
  return a.tape->record("mul", {a.id, b.id}, std::move(y),
                        [ia = a.id, ib = b.id](Tape& t, std::size_t self) {
                          const Tensor& g = t.grad(self);
                          if (t.requires_grad(ia)) {
                            Tensor ga = g;
                            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= t.value(ib)[i];
                            t.accumulate(ia, ga);
                          }
                          if (t.requires_grad(ib)) {
                            Tensor gb = g;
                            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] *= t.value(ia)[i];
                            t.accumulate(ib, gb);
                          }
                        });
}

inline Var scale(Var x, double c) {
  Tensor y = x.value();
  for (auto& v : y.data()) v *= c;
  return x.tape->record("scale", {x.id}, std::move(y), [ix = x.id, c](Tape& t, std::size_t self) {
    Tensor g = t.grad(self);
    for (auto& v : g.data()) v *= c;
    t.accumulate(ix, g);
  });
}

/// Sum of all elements, shape [1].
inline Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return x.tape->record("sum", {x.id}, Tensor::vector({s}), [ix = x.id](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    t.accumulate(ix, detail::like(t.value(ix), g));
  });
}

inline Var leaky_relu(Var x, double slope) {
  require(slope >= 0.0, "leaky_relu: slope must be non-negative");
  Tensor y = x.value();
  for (auto& v : y.data()) v = v > 0.0 ? v : slope * v;
  return x.tape->record("leaky_relu", {x.id}, std::move(y),
                        [ix = x.id, slope](Tape& t, std::size_t self) {
                          Tensor g = t.grad(self);
                          const Tensor& xv = t.value(ix);
                          for (std::size_t i = 0; i < g.size(); ++i)
                            if (!(xv[i] > 0.0)) g[i] *= slope;
                          t.accumulate(ix, g);
                        });
}

/// Per-feature batch statistics produced by a training-mode batch norm.
struct BatchStats {
  std::vector<double> mean;
  std::vector<double> var;  // biased (divides by B)
};

/// Training-mode batch normalisation over rows.
inline Var batch_norm_train(Var x, Var gamma, Var beta, double eps, BatchStats* stats = nullptr) {
  const Tensor& xv = x.value();
  detail::expect_rank2(xv, "batch_norm");
  const std::size_t n = xv.rows(), d = xv.cols();
  if (n < 2) throw UsageError("batch_norm: training mode needs at least 2 rows, got " + std::to_string(n));
  if (gamma.value().size() != d || beta.value().size() != d)
    throw UsageError("batch_norm: gamma/beta width mismatch");
  std::vector<double> mean(d, 0.0), var(d, 0.0), inv_std(d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) mean[j] += xv.at(i, j);
  for (auto& m : mean) m /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const double c = xv.at(i, j) - mean[j];
      var[j] += c * c;
    }
  for (std::size_t j = 0; j < d; ++j) {
    var[j] /= static_cast<double>(n);
    inv_std[j] = 1.0 / std::sqrt(var[j] + eps);
  }
  Tensor xhat = detail::like(xv);
  Tensor y = detail::like(xv);
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      xhat.at(i, j) = (xv.at(i, j) - mean[j]) * inv_std[j];
      y.at(i, j) = gv[j] * xhat.at(i, j) + bv[j];
    }
  if (stats != nullptr) *stats = {mean, var};
  return x.tape->record(
      "batch_norm", {x.id, gamma.id, beta.id}, std::move(y),
      [ix = x.id, ig = gamma.id, ib = beta.id, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](Tape& t, std::size_t self) {
        const Tensor g = t.grad(self);
        const std::size_t n = g.rows(), d = g.cols();
        const Tensor& gv = t.value(ig);
        std::vector<double> sum_g(d, 0.0), sum_gx(d, 0.0);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < d; ++j) {
            sum_g[j] += g.at(i, j);
            sum_gx[j] += g.at(i, j) * xhat.at(i, j);
          }
        if (t.requires_grad(ig)) t.accumulate(ig, Tensor(t.value(ig).shape(), sum_gx));
        if (t.requires_grad(ib)) t.accumulate(ib, Tensor(t.value(ib).shape(), sum_g));
        if (t.requires_grad(ix)) {
          Tensor gx = detail::like(g);
          const double bn = static_cast<double>(n);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j)
              gx.at(i, j) = gv[j] * inv_std[j] / bn *
                            (bn * g.at(i, j) - sum_g[j] - xhat.at(i, j) * sum_gx[j]);
          t.accumulate(ix, gx);
        }
      });
}

/// Inference-mode batch normalisation with fixed statistics.
inline Var batch_norm_eval(Var x, Var gamma, Var beta, const Tensor& running_mean,
                           const Tensor& running_var, double eps) {
  const Tensor& xv = x.value();
  detail::expect_rank2(xv, "batch_norm");
  const std::size_t n = xv.rows(), d = xv.cols();
  if (gamma.value().size() != d || beta.value().size() != d || running_mean.size() != d ||
      running_var.size() != d)
    throw UsageError("batch_norm: parameter width mismatch");
  std::vector<double> inv_std(d);
  for (std::size_t j = 0; j < d; ++j) inv_std[j] = 1.0 / std::sqrt(running_var[j] + eps);
  Tensor xhat = detail::like(xv);
  Tensor y = detail::like(xv);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      xhat.at(i, j) = (xv.at(i, j) - running_mean[j]) * inv_std[j];
      y.at(i, j) = gamma.value()[j] * xhat.at(i, j) + beta.value()[j];
    }
  return x.tape->record(
      "batch_norm_eval", {x.id, gamma.id, beta.id}, std::move(y),
      [ix = x.id, ig = gamma.id, ib = beta.id, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](Tape& t, std::size_t self) {
        const Tensor g = t.grad(self);
        const std::size_t n = g.rows(), d = g.cols();
        Tensor gg = detail::like(t.value(ig)), gb = detail::like(t.value(ib)), gx = detail::like(g);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < d; ++j) {
            gg[j] += g.at(i, j) * xhat.at(i, j);
            gb[j] += g.at(i, j);
            gx.at(i, j) = g.at(i, j) * t.value(ig)[j] * inv_std[j];
          }
        t.accumulate(ig, gg);
        t.accumulate(ib, gb);
        t.accumulate(ix, gx);
      });
}

/// Inverted dropout: zero with probability p, scale survivors by 1/(1-p).
inline Var dropout(Var x, double p, Rng& rng) {
  require(p >= 0.0 && p < 1.0, "dropout: p must lie in [0,1)");
  if (p == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - p);
  Tensor mask = detail::like(x.value());
  for (auto& m : mask.data()) m = rng.bernoulli(p) ? 0.0 : keep_scale;
  Tensor y = x.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= mask[i];
  return x.tape->record("dropout", {x.id}, std::move(y),
                        [ix = x.id, mask = std::move(mask)](Tape& t, std::size_t self) {
                          Tensor g = t.grad(self);
                          for (std::size_t i = 0; i < g.size(); ++i) g[i] *= mask[i];
                          t.accumulate(ix, g);
                        });
}

inline Var dropout(Var x, double p, Rng& rng, Mode mode) {
  require(p >= 0.0 && p < 1.0, "dropout: p must lie in [0,1)");
  return mode == Mode::train ? dropout(x, p, rng) : x;
}

/// Row gather from an embedding table [V,E]; the gradient scatters back.
inline Var embedding(Var table, std::span<const int> ids) {
  const Tensor& tv = table.value();
  detail::expect_rank2(tv, "embedding");
  const std::size_t vocab = tv.rows(), width = tv.cols();
  require(!ids.empty(), "embedding: empty id list");
  Tensor y = Tensor::matrix(ids.size(), width);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab)
      throw UsageError("embedding: id " + std::to_string(ids[i]) + " outside vocabulary of " +
                       std::to_string(vocab));
    const auto r = static_cast<std::size_t>(ids[i]);
    for (std::size_t j = 0; j < width; ++j) y.at(i, j) = tv.at(r, j);
  }
  return table.tape->record(
      "embedding", {table.id}, std::move(y),
      [it = table.id, ids = std::vector<int>(ids.begin(), ids.end())](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        Tensor gt = detail::like(t.value(it));
        const std::size_t width = gt.cols();
        for (std::size_t i = 0; i < ids.size(); ++i)
          for (std::size_t j = 0; j < width; ++j)
            gt.at(static_cast<std::size_t>(ids[i]), j) += g.at(i, j);
        t.accumulate(it, gt);
      });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  Tape* tape = parts.front().tape;
  const std::size_t n = parts.front().value().rows();
  std::size_t total = 0;
  std::vector<std::size_t> ids, widths;
  for (const auto& p : parts) {
    detail::expect_rank2(p.value(), "concat_cols");
    if (p.value().rows() != n) throw UsageError("concat_cols: row count mismatch");
    ids.push_back(p.id);
    widths.push_back(p.value().cols());
    total += p.value().cols();
  }
  Tensor y = Tensor::matrix(n, total);
  std::size_t off = 0;
  for (const auto& p : parts) {
    const Tensor& v = p.value();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < v.cols(); ++j) y.at(i, off + j) = v.at(i, j);
    off += v.cols();
  }
  auto in = ids;
  return tape->record("concat_cols", std::move(in), std::move(y),
                      [ids, widths](Tape& t, std::size_t self) {
                        const Tensor& g = t.grad(self);
                        std::size_t off = 0;
                        for (std::size_t k = 0; k < ids.size(); ++k) {
                          if (t.requires_grad(ids[k])) {
                            Tensor gk = Tensor::matrix(g.rows(), widths[k]);
                            for (std::size_t i = 0; i < g.rows(); ++i)
                              for (std::size_t j = 0; j < widths[k]; ++j)
                                gk.at(i, j) = g.at(i, off + j);
                            t.accumulate(ids[k], gk);
                          }
                          off += widths[k];
                        }
                      });
}

inline Var slice_cols(Var x, std::size_t start, std::size_t count) {
  const Tensor& xv = x.value();
  detail::expect_rank2(xv, "slice_cols");
  require(count > 0 && start + count <= xv.cols(), "slice_cols: range out of bounds");
  Tensor y = Tensor::matrix(xv.rows(), count);
  for (std::size_t i = 0; i < xv.rows(); ++i)
    for (std::size_t j = 0; j < count; ++j) y.at(i, j) = xv.at(i, start + j);
  return x.tape->record("slice_cols", {x.id}, std::move(y),
                        [ix = x.id, start, count](Tape& t, std::size_t self) {
                          const Tensor& g = t.grad(self);
                          Tensor gx = detail::like(t.value(ix));
                          for (std::size_t i = 0; i < g.rows(); ++i)
                            for (std::size_t j = 0; j < count; ++j) gx.at(i, start + j) = g.at(i, j);
                          t.accumulate(ix, gx);
                        });
}

inline Var slice_rows(Var x, std::size_t start, std::size_t count) {
  const Tensor& xv = x.value();
  detail::expect_rank2(xv, "slice_rows");
  require(count > 0 && start + count <= xv.rows(), "slice_rows: range out of bounds");
  const std::size_t c = xv.cols();
  std::vector<double> data(xv.data().begin() + static_cast<std::ptrdiff_t>(start * c),
                           xv.data().begin() + static_cast<std::ptrdiff_t>((start + count) * c));
  return x.tape->record("slice_rows", {x.id}, Tensor({count, c}, std::move(data)),
                        [ix = x.id, start](Tape& t, std::size_t self) {
                          const Tensor& g = t.grad(self);
                          Tensor gx = detail::like(t.value(ix));
                          std::copy(g.data().begin(), g.data().end(),
                                    gx.data().begin() + static_cast<std::ptrdiff_t>(start * g.cols()));
                          t.accumulate(ix, gx);
                        });
}

/// Chunk-granular mixing used by cross-stitch and sluice units.
///
/// `x` holds P contiguous chunks of `chunk` columns each. Output chunk p is
/// sum_q alpha[p,q] * chunk_q, applied position-wise inside the chunk.
inline Var chunk_mix(Var x, Var alpha, std::size_t chunk) {
  const Tensor& xv = x.value();
  const Tensor& av = alpha.value();
  detail::expect_rank2(xv, "chunk_mix");
  detail::expect_rank2(av, "chunk_mix");
  const std::size_t parts = av.rows();
  if (av.cols() != parts || chunk == 0 || xv.cols() != parts * chunk)
    throw UsageError("chunk_mix: " + shape_str(xv.shape()) + " does not split into " +
                     std::to_string(parts) + " chunks of " + std::to_string(chunk));
  const std::size_t n = xv.rows();
  Tensor y = detail::like(xv);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < parts; ++p)
      for (std::size_t q = 0; q < parts; ++q) {
        const double a = av.at(p, q);
        if (a == 0.0) continue;
        for (std::size_t k = 0; k < chunk; ++k) y.at(i, p * chunk + k) += a * xv.at(i, q * chunk + k);
      }
  return x.tape->record(
      "chunk_mix", {x.id, alpha.id}, std::move(y),
      [ix = x.id, ia = alpha.id, chunk, parts](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& xv = t.value(ix);
        const Tensor& av = t.value(ia);
        const std::size_t n = g.rows();
        if (t.requires_grad(ix)) {
          Tensor gx = detail::like(xv);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t p = 0; p < parts; ++p)
              for (std::size_t q = 0; q < parts; ++q) {
                const double a = av.at(p, q);
                for (std::size_t k = 0; k < chunk; ++k)
                  gx.at(i, q * chunk + k) += a * g.at(i, p * chunk + k);
              }
          t.accumulate(ix, gx);
        }
        if (t.requires_grad(ia)) {
          Tensor ga = detail::like(av);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t p = 0; p < parts; ++p)
              for (std::size_t q = 0; q < parts; ++q) {
                double s = 0.0;
                for (std::size_t k = 0; k < chunk; ++k) s += g.at(i, p * chunk + k) * xv.at(i, q * chunk + k);
                ga.at(p, q) += s;
              }
          t.accumulate(ia, ga);
        }
      });
}

/// Mean squared error, shape [1].
inline Var mse_loss(Var pred, Var target) {
  const Tensor& pv = pred.value();
  const Tensor& tv = target.value();
  if (!pv.same_shape(tv))
    throw UsageError("mse_loss: shape mismatch " + shape_str(pv.shape()) + " vs " + shape_str(tv.shape()));
  double s = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const double d = pv[i] - tv[i];
    s += d * d;
  }
  const double n = static_cast<double>(pv.size());
  return pred.tape->record("mse_loss", {pred.id, target.id}, Tensor::vector({s / n}),
                           [ip = pred.id, it = target.id, n](Tape& t, std::size_t self) {
                             const double g = t.grad(self)[0];
                             const Tensor& pv = t.value(ip);
                             const Tensor& tv = t.value(it);
                             Tensor gp = detail::like(pv);
                             for (std::size_t i = 0; i < gp.size(); ++i)
                               gp[i] = 2.0 * (pv[i] - tv[i]) / n * g;
                             if (t.requires_grad(ip)) t.accumulate(ip, gp);
                             if (t.requires_grad(it)) {
                               for (auto& v : gp.data()) v = -v;
                               t.accumulate(it, gp);
                             }
                           });
}

}  // namespace mtl::ad

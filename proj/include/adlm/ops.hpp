// Copyright 2026 The ADLM Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "adlm/tensor.hpp"

// The op set used by the model. Each op computes its forward value eagerly and
// registers a backward rule when any input requires grad. Ops are 2-D unless
// noted; 1-D vectors appear as parameters (biases, layer-norm gains).
namespace adlm {

namespace detail {

[[noreturn]] inline void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + to_string(a) + " and " + to_string(b));
}

inline void require_2d(const char* op, const Tensor& t) {
  if (t.dim() != 2) throw ShapeError(std::string(op) + ": expected a 2-D tensor, got " + to_string(t.shape()));
}

// c[m,n] += a[m,k] * b[k,n]
inline void gemm_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

inline std::vector<double> transposed(std::span<const double> x, std::size_t rows, std::size_t cols) {
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = x[r * cols + c];
  return out;
}

inline void accumulate(std::span<double> dst, std::span<const double> src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.dim() != 2 || b.dim() != 2 || a.cols() != b.rows()) detail::shape_mismatch("matmul", a.shape(), b.shape());
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<double> out(m * n, 0.0);
  detail::gemm_acc(a.data().data(), b.data().data(), out.data(), m, k, n);
  return detail::make_result({m, n}, std::move(out), {&a, &b}, [m, k, n](detail::Node& self) {
    detail::Node& A = *self.parents[0];
    detail::Node& B = *self.parents[1];
    if (A.requires_grad) {
      const auto bt = detail::transposed(B.value, k, n);
      detail::gemm_acc(self.grad.data(), bt.data(), A.grad_buffer().data(), m, n, k);
    }
    if (B.requires_grad) {
      const auto at = detail::transposed(A.value, m, k);
      detail::gemm_acc(at.data(), self.grad.data(), B.grad_buffer().data(), k, m, n);
    }
  });
}

inline Tensor transpose(const Tensor& x) {
  detail::require_2d("transpose", x);
  const std::size_t r = x.rows(), c = x.cols();
  return detail::make_result({c, r}, detail::transposed(x.data(), r, c), {&x}, [r, c](detail::Node& self) {
    detail::accumulate(self.parents[0]->grad_buffer(), detail::transposed(self.grad, c, r));
  });
}

/// Elementwise a + b. `b` may also be a row vector ([n] or [1,n]) broadcast
/// over the rows of a 2-D `a`.
inline Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) {
    std::vector<double> out(a.data().begin(), a.data().end());
    detail::accumulate(out, b.data());
    return detail::make_result(a.shape(), std::move(out), {&a, &b}, [](detail::Node& self) {
      for (auto& p : self.parents)
        if (p->requires_grad) detail::accumulate(p->grad_buffer(), self.grad);
    });
  }
  const bool row_vector = (b.dim() == 1 || (b.dim() == 2 && b.rows() == 1));
  if (a.dim() != 2 || !row_vector || b.cols() != a.cols()) detail::shape_mismatch("add", a.shape(), b.shape());
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(a.data().begin(), a.data().end());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += b[j];
  return detail::make_result(a.shape(), std::move(out), {&a, &b}, [m, n](detail::Node& self) {
    detail::Node& A = *self.parents[0];
    detail::Node& B = *self.parents[1];
    if (A.requires_grad) detail::accumulate(A.grad_buffer(), self.grad);
    if (B.requires_grad) {
      auto gb = B.grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[j] += self.grad[i * n + j];
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) detail::shape_mismatch("sub", a.shape(), b.shape());
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return detail::make_result(a.shape(), std::move(out), {&a, &b}, [](detail::Node& self) {
    detail::Node& A = *self.parents[0];
    detail::Node& B = *self.parents[1];
    if (A.requires_grad) detail::accumulate(A.grad_buffer(), self.grad);
    if (B.requires_grad) {
      auto gb = B.grad_buffer();
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= self.grad[i];
    }
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) detail::shape_mismatch("mul", a.shape(), b.shape());
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return detail::make_result(a.shape(), std::move(out), {&a, &b}, [](detail::Node& self) {
    detail::Node& A = *self.parents[0];
    detail::Node& B = *self.parents[1];
    if (A.requires_grad) {
      auto ga = A.grad_buffer();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] * B.value[i];
    }
    if (B.requires_grad) {
      auto gb = B.grad_buffer();
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += self.grad[i] * A.value[i];
    }
  });
}

inline Tensor scale(const Tensor& x, double s) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * s;
  return detail::make_result(x.shape(), std::move(out), {&x}, [s](detail::Node& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * s;
  });
}

/// Sum of all elements, as a scalar.
inline Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  return detail::make_result({}, {total}, {&x}, [](detail::Node& self) {
    auto g = self.parents[0]->grad_buffer();
    for (double& v : g) v += self.grad[0];
  });
}

/// Mean of a 2-D tensor over `axis` (0: over rows -> [1,n]; 1: over columns -> [m,1]).
inline Tensor mean(const Tensor& x, int axis) {
  detail::require_2d("mean", x);
  if (axis != 0 && axis != 1) throw ShapeError("mean: axis must be 0 or 1, got " + std::to_string(axis));
  const std::size_t m = x.rows(), n = x.cols();
  if (m == 0 || n == 0) throw ShapeError("mean: empty tensor " + to_string(x.shape()));
  if (axis == 0) {
    std::vector<double> out(n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) out[j] += x.at(i, j);
    for (double& v : out) v /= static_cast<double>(m);
    return detail::make_result({1, n}, std::move(out), {&x}, [m, n](detail::Node& self) {
      auto g = self.parents[0]->grad_buffer();
      const double inv = 1.0 / static_cast<double>(m);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[j] * inv;
    });
  }
  std::vector<double> out(m, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[i] += x.at(i, j);
    out[i] /= static_cast<double>(n);
  }
  return detail::make_result({m, 1}, std::move(out), {&x}, [m, n](detail::Node& self) {
    auto g = self.parents[0]->grad_buffer();
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[i] * inv;
  });
}

/// Row-wise layer normalization with learned gain and bias of length n.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5) {
  detail::require_2d("layer_norm", x);
  const std::size_t m = x.rows(), n = x.cols();
  if (gain.numel() != n) detail::shape_mismatch("layer_norm", x.shape(), gain.shape());
  if (bias.numel() != n) detail::shape_mismatch("layer_norm", x.shape(), bias.shape());
  std::vector<double> xhat(m * n), rstd(m), out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = x.data().data() + i * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(n);
    rstd[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[i * n + j] = (row[j] - mu) * rstd[i];
      out[i * n + j] = xhat[i * n + j] * gain[j] + bias[j];
    }
  }
  return detail::make_result(
      x.shape(), std::move(out), {&x, &gain, &bias},
      [m, n, xhat = std::move(xhat), rstd = std::move(rstd)](detail::Node& self) {
        detail::Node& X = *self.parents[0];
        detail::Node& G = *self.parents[1];
        detail::Node& B = *self.parents[2];
        const auto& dy = self.grad;
        if (G.requires_grad) {
          auto gg = G.grad_buffer();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gg[j] += dy[i * n + j] * xhat[i * n + j];
        }
        if (B.requires_grad) {
          auto gb = B.grad_buffer();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gb[j] += dy[i * n + j];
        }
        if (X.requires_grad) {
          auto gx = X.grad_buffer();
          const double inv_n = 1.0 / static_cast<double>(n);
          for (std::size_t i = 0; i < m; ++i) {
            double mean_d = 0.0, mean_dx = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              const double d = dy[i * n + j] * G.value[j];
              mean_d += d;
              mean_dx += d * xhat[i * n + j];
            }
            mean_d *= inv_n;
            mean_dx *= inv_n;
            for (std::size_t j = 0; j < n; ++j) {
              const double d = dy[i * n + j] * G.value[j];
              gx[i * n + j] += rstd[i] * (d - mean_d - xhat[i * n + j] * mean_dx);
            }
          }
        }
      });
}

/// GELU, tanh approximation.
inline Tensor gelu(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x[i];
    out[i] = 0.5 * v * (1.0 + std::tanh(detail::kGeluC * (v + detail::kGeluA * v * v * v)));
  }
  return detail::make_result(x.shape(), std::move(out), {&x}, [](detail::Node& self) {
    detail::Node& X = *self.parents[0];
    auto g = X.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = X.value[i];
      const double t = std::tanh(detail::kGeluC * (v + detail::kGeluA * v * v * v));
      const double dt = (1.0 - t * t) * detail::kGeluC * (1.0 + 3.0 * detail::kGeluA * v * v);
      g[i] += self.grad[i] * (0.5 * (1.0 + t) + 0.5 * v * dt);
    }
  });
}

/// Softmax over the last axis. With `causal`, entry (i, j) of a 2-D input is
/// masked out for j > i, so row i only distributes mass over columns <= i.
inline Tensor softmax(const Tensor& x, bool causal = false) {
  if (x.dim() == 0 || x.numel() == 0) throw ShapeError("softmax: expected a non-empty tensor, got " + to_string(x.shape()));
  if (causal) detail::require_2d("softmax", x);
  const std::size_t n = x.cols(), m = x.numel() / n;
  std::vector<double> out(x.numel(), 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t width = causal ? std::min(n, i + 1) : n;
    const double* row = x.data().data() + i * n;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < width; ++j) mx = std::max(mx, row[j]);
    double total = 0.0;
    for (std::size_t j = 0; j < width; ++j) {
      out[i * n + j] = std::exp(row[j] - mx);
      total += out[i * n + j];
    }
    for (std::size_t j = 0; j < width; ++j) out[i * n + j] /= total;
  }
  return detail::make_result(x.shape(), std::move(out), {&x}, [m, n](detail::Node& self) {
    auto g = self.parents[0]->grad_buffer();
    const auto& y = self.value;
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += self.grad[i * n + j] * y[i * n + j];
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += y[i * n + j] * (self.grad[i * n + j] - dot);
    }
  });
}

/// Rows of `table` ([V, d]) selected by `ids`, giving [ids.size(), d].
inline Tensor embedding(const Tensor& table, std::span<const int> ids) {
  detail::require_2d("embedding", table);
  const std::size_t vocab = table.rows(), d = table.cols();
  std::vector<double> out(ids.size() * d);
  std::vector<int> idx(ids.begin(), ids.end());
  for (std::size_t t = 0; t < idx.size(); ++t) {
    if (idx[t] < 0 || static_cast<std::size_t>(idx[t]) >= vocab) {
      throw Error("embedding: index " + std::to_string(idx[t]) + " out of range for table of " +
                  std::to_string(vocab) + " rows");
    }
    std::copy_n(table.data().begin() + static_cast<std::ptrdiff_t>(idx[t] * d), d, out.begin() + t * d);
  }
  Shape shape{idx.size(), d};
  return detail::make_result(std::move(shape), std::move(out), {&table}, [d, idx = std::move(idx)](detail::Node& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t t = 0; t < idx.size(); ++t)
      for (std::size_t j = 0; j < d; ++j) g[static_cast<std::size_t>(idx[t]) * d + j] += self.grad[t * d + j];
  });
}

/// Concatenates 2-D tensors along `axis` (0: stack rows, 1: join columns).
inline Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  if (axis != 0 && axis != 1) throw ShapeError("concat: axis must be 0 or 1, got " + std::to_string(axis));
  for (const auto& p : parts) detail::require_2d("concat", p);
  const std::size_t m0 = parts[0].rows(), n0 = parts[0].cols();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (axis == 0 && p.cols() != n0) detail::shape_mismatch("concat", parts[0].shape(), p.shape());
    if (axis == 1 && p.rows() != m0) detail::shape_mismatch("concat", parts[0].shape(), p.shape());
    total += axis == 0 ? p.rows() : p.cols();
  }
  const Shape shape = axis == 0 ? Shape{total, n0} : Shape{m0, total};
  std::vector<double> out(numel(shape));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    if (axis == 0) {
      std::copy(p.data().begin(), p.data().end(), out.begin() + static_cast<std::ptrdiff_t>(off * n0));
      off += p.rows();
    } else {
      for (std::size_t i = 0; i < m0; ++i)
        for (std::size_t j = 0; j < p.cols(); ++j) out[i * total + off + j] = p.at(i, j);
      off += p.cols();
    }
  }
  std::vector<const Tensor*> inputs;
  for (const auto& p : parts) inputs.push_back(&p);
  return detail::make_result(shape, std::move(out), inputs, [axis, n0, total, offsets](detail::Node& self) {
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      detail::Node& P = *self.parents[k];
      if (!P.requires_grad) continue;
      auto g = P.grad_buffer();
      if (axis == 0) {
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[offsets[k] * n0 + i];
      } else {
        const std::size_t m = P.shape[0], c = P.shape[1];
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[i * total + offsets[k] + j];
      }
    }
  });
}

inline Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t len) {
  detail::require_2d("slice_cols", x);
  const std::size_t m = x.rows(), n = x.cols();
  if (start + len > n) {
    throw ShapeError("slice_cols: columns [" + std::to_string(start) + ", " + std::to_string(start + len) +
                     ") out of range for " + to_string(x.shape()));
  }
  std::vector<double> out(m * len);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < len; ++j) out[i * len + j] = x.at(i, start + j);
  return detail::make_result({m, len}, std::move(out), {&x}, [m, n, start, len](detail::Node& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < len; ++j) g[i * n + start + j] += self.grad[i * len + j];
  });
}

inline Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t len) {
  detail::require_2d("slice_rows", x);
  const std::size_t n = x.cols();
  if (start + len > x.rows()) {
    throw ShapeError("slice_rows: rows [" + std::to_string(start) + ", " + std::to_string(start + len) +
                     ") out of range for " + to_string(x.shape()));
  }
  std::vector<double> out(x.data().begin() + static_cast<std::ptrdiff_t>(start * n),
                          x.data().begin() + static_cast<std::ptrdiff_t>((start + len) * n));
  return detail::make_result({len, n}, std::move(out), {&x}, [n, start](detail::Node& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[start * n + i] += self.grad[i];
  });
}

enum class Reduction { kSum, kMean };

/// Cross-entropy of row-wise logits against integer targets:
/// sum (or mean) over rows of -log softmax(logits[i])[targets[i]].
/// A 1-D logit vector is treated as a single row.
inline Tensor cross_entropy(const Tensor& logits, std::span<const int> targets, Reduction reduction = Reduction::kMean) {
  if (logits.dim() != 1 && logits.dim() != 2) {
    throw ShapeError("cross_entropy: expected 1-D or 2-D logits, got " + to_string(logits.shape()));
  }
  const std::size_t n = logits.cols(), m = logits.numel() / n;
  if (targets.size() != m) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for logits " +
                     to_string(logits.shape()));
  }
  std::vector<double> probs(m * n);
  std::vector<int> tgt(targets.begin(), targets.end());
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    if (tgt[i] < 0 || static_cast<std::size_t>(tgt[i]) >= n) {
      throw Error("cross_entropy: target " + std::to_string(tgt[i]) + " out of range for " + std::to_string(n) +
                  " classes");
    }
    const double* row = logits.data().data() + i * n;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      probs[i * n + j] = std::exp(row[j] - mx);
      z += probs[i * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) probs[i * n + j] /= z;
    total += (mx + std::log(z)) - row[tgt[i]];
  }
  const double factor = (reduction == Reduction::kMean && m > 0) ? 1.0 / static_cast<double>(m) : 1.0;
  return detail::make_result(
      {}, {total * factor}, {&logits},
      [m, n, factor, probs = std::move(probs), tgt = std::move(tgt)](detail::Node& self) {
        auto g = self.parents[0]->grad_buffer();
        const double up = self.grad[0] * factor;
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < n; ++j) g[i * n + j] += up * probs[i * n + j];
          g[i * n + static_cast<std::size_t>(tgt[i])] -= up;
        }
      });
}

/// Plain softmax of a logit vector, for sampling and scoring paths that do not
/// need a graph.
inline std::vector<double> softmax_values(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : logits) mx = std::max(mx, v);
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    total += out[i];
  }
  for (double& v : out) v /= total;
  return out;
}

}  // namespace adlm

#pragma once

#include <Eigen/Core>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "pasttense/rng.hpp"
#include "pasttense/tensor.hpp"

namespace pasttense {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using CMatMap = Eigen::Map<const RowMat>;

namespace detail {

inline CMatMap cmap(const Tensor& t, std::size_t r, std::size_t c) {
  return CMatMap(t.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}
inline MatMap map(Buffer& v, std::size_t r, std::size_t c) {
  return MatMap(v.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}
inline CMatMap cmap(const Buffer& v, std::size_t r, std::size_t c) {
  return CMatMap(v.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

inline void require_matrix(const Var& v, const char* op) {
  if (v.shape().size() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_str(v.shape()));
}

inline void require_same(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

inline void require_finite(const Tensor& t, const char* op) {
  for (double x : t.values())
    if (!std::isfinite(x)) throw NumericError(std::string(op) + ": non-finite input");
}

inline Buffer& pgrad(Node& self, std::size_t i) { return self.parents[i]->ensure_grad(); }
inline bool pneeds(const Node& self, std::size_t i) { return self.parents[i]->requires_grad; }
inline const Tensor& pval(const Node& self, std::size_t i) { return self.parents[i]->value; }

}  // namespace detail

// ---------------------------------------------------------------- linear algebra

inline Var matmul(const Var& a, const Var& b) {
  detail::require_matrix(a, "matmul");
  detail::require_matrix(b, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k)
    throw ShapeError("matmul: inner dimensions differ " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  Tensor out({m, n});
  detail::map(out.values(), m, n).noalias() = detail::cmap(a.value(), m, k) * detail::cmap(b.value(), k, n);
  return Var::make(std::move(out), {a, b}, [m, k, n](Node& self) {
    auto G = detail::cmap(self.grad, m, n);
    if (detail::pneeds(self, 0))
      detail::map(detail::pgrad(self, 0), m, k).noalias() += G * detail::cmap(detail::pval(self, 1), k, n).transpose();
    if (detail::pneeds(self, 1))
      detail::map(detail::pgrad(self, 1), k, n).noalias() += detail::cmap(detail::pval(self, 0), m, k).transpose() * G;
  });
}

// y = x W + b  with x [n x in], W [in x out], b [out].
inline Var linear(const Var& x, const Var& w, const Var& b) {
  detail::require_matrix(x, "linear");
  detail::require_matrix(w, "linear");
  const std::size_t n = x.shape()[0], in = x.shape()[1], out_dim = w.shape()[1];
  if (w.shape()[0] != in) throw ShapeError("linear: input width " + std::to_string(in) + " vs weight " + shape_str(w.shape()));
  if (b.size() != out_dim) throw ShapeError("linear: bias size " + std::to_string(b.size()));
  Tensor out({n, out_dim});
  auto Y = detail::map(out.values(), n, out_dim);
  Y.noalias() = detail::cmap(x.value(), n, in) * detail::cmap(w.value(), in, out_dim);
  Y.rowwise() += detail::cmap(b.value(), 1, out_dim).row(0);
  return Var::make(std::move(out), {x, w, b}, [n, in, out_dim](Node& self) {
    auto G = detail::cmap(self.grad, n, out_dim);
    if (detail::pneeds(self, 0))
      detail::map(detail::pgrad(self, 0), n, in).noalias() +=
          G * detail::cmap(detail::pval(self, 1), in, out_dim).transpose();
    if (detail::pneeds(self, 1))
      detail::map(detail::pgrad(self, 1), in, out_dim).noalias() +=
          detail::cmap(detail::pval(self, 0), n, in).transpose() * G;
    if (detail::pneeds(self, 2)) detail::map(detail::pgrad(self, 2), 1, out_dim) += G.colwise().sum();
  });
}

// ---------------------------------------------------------------- elementwise

inline Var add(const Var& a, const Var& b) {
  detail::require_same(a, b, "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return Var::make(std::move(out), {a, b}, [](Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (!detail::pneeds(self, p)) continue;
      auto& g = detail::pgrad(self, p);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

// a + c for a constant tensor c (no gradient into c).
inline Var add_const(const Var& a, const Tensor& c) {
  if (a.shape() != c.shape()) throw ShapeError("add_const: shape mismatch");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += c[i];
  return Var::make(std::move(out), {a}, [](Node& self) {
    auto& g = detail::pgrad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

inline Var mul(const Var& a, const Var& b) {
  detail::require_same(a, b, "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return Var::make(std::move(out), {a, b}, [](Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (!detail::pneeds(self, p)) continue;
      auto& g = detail::pgrad(self, p);
      const auto& other = detail::pval(self, 1 - p);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * other[i];
    }
  });
}

inline Var scale(const Var& a, double s) {
  Tensor out = a.value();
  for (auto& x : out.values()) x *= s;
  return Var::make(std::move(out), {a}, [s](Node& self) {
    auto& g = detail::pgrad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
  });
}

inline Var sum(const Var& a) {
  double s = 0.0;
  for (double x : a.value().values()) s += x;
  return Var::make(Tensor::scalar(s), {a}, [](Node& self) {
    auto& g = detail::pgrad(self, 0);
    for (auto& x : g) x += self.grad[0];
  });
}

inline Var relu(const Var& a) {
  Tensor out = a.value();
  for (auto& x : out.values()) x = x > 0.0 ? x : 0.0;
  return Var::make(std::move(out), {a}, [](Node& self) {
    auto& g = detail::pgrad(self, 0);
    const auto& x = detail::pval(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (x[i] > 0.0) g[i] += self.grad[i];
  });
}

inline Var sigmoid(const Var& a) {
  Tensor out = a.value();
  for (auto& x : out.values()) x = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  return Var::make(std::move(out), {a}, [](Node& self) {
    auto& g = detail::pgrad(self, 0);
    const auto& y = self.value;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * y[i] * (1.0 - y[i]);
  });
}

// Inverted dropout: kept units are scaled by 1/(1-p).
inline Var dropout(const Var& a, double p, Rng& rng) {
  if (p <= 0.0) return a;
  if (p >= 1.0) throw UsageError("dropout: rate must be < 1");
  const double keep_scale = 1.0 / (1.0 - p);
  Buffer mask(a.size());
  for (auto& m : mask) m = rng.uniform() < p ? 0.0 : keep_scale;
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return Var::make(std::move(out), {a}, [mask = std::move(mask)](Node& self) {
    auto& g = detail::pgrad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * mask[i];
  });
}

// Concatenates two matrices with equal row counts along columns.
inline Var concat_cols(const Var& a, const Var& b) {
  detail::require_matrix(a, "concat_cols");
  detail::require_matrix(b, "concat_cols");
  const std::size_t n = a.shape()[0], ca = a.shape()[1], cb = b.shape()[1];
  if (b.shape()[0] != n) throw ShapeError("concat_cols: row counts differ");
  Tensor out({n, ca + cb});
  for (std::size_t r = 0; r < n; ++r) {
    std::copy_n(a.value().data() + r * ca, ca, out.data() + r * (ca + cb));
    std::copy_n(b.value().data() + r * cb, cb, out.data() + r * (ca + cb) + ca);
  }
  return Var::make(std::move(out), {a, b}, [n, ca, cb](Node& self) {
    const std::size_t w = ca + cb;
    if (detail::pneeds(self, 0)) {
      auto& g = detail::pgrad(self, 0);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < ca; ++c) g[r * ca + c] += self.grad[r * w + c];
    }
    if (detail::pneeds(self, 1)) {
      auto& g = detail::pgrad(self, 1);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < cb; ++c) g[r * cb + c] += self.grad[r * w + ca + c];
    }
  });
}

// ---------------------------------------------------------------- normalisation

// Softmax along an arbitrary axis.  The maximum of each slice is subtracted
// before exponentiation.
inline Var softmax(const Var& x, std::size_t axis) {
  const Shape& s = x.shape();
  if (axis >= s.size()) throw ShapeError("softmax: axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  detail::require_finite(x.value(), "softmax");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  Tensor out(s);
  const auto& in = x.value();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t j = 0; j < inner; ++j) {
      const std::size_t base = o * len * inner + j;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t l = 0; l < len; ++l) mx = std::max(mx, in[base + l * inner]);
      double z = 0.0;
      for (std::size_t l = 0; l < len; ++l) z += (out[base + l * inner] = std::exp(in[base + l * inner] - mx));
      for (std::size_t l = 0; l < len; ++l) out[base + l * inner] /= z;
    }
  return Var::make(std::move(out), {x}, [outer, inner, len](Node& self) {
    auto& g = detail::pgrad(self, 0);
    const auto& y = self.value;
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t j = 0; j < inner; ++j) {
        const std::size_t base = o * len * inner + j;
        double dot = 0.0;
        for (std::size_t l = 0; l < len; ++l) dot += self.grad[base + l * inner] * y[base + l * inner];
        for (std::size_t l = 0; l < len; ++l)
          g[base + l * inner] += y[base + l * inner] * (self.grad[base + l * inner] - dot);
      }
  });
}

// Layer normalisation over the last dimension with biased variance.
inline Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5) {
  const std::size_t d = x.value().cols();
  if (d < 1) throw ShapeError("layer_norm: empty last dimension");
  if (gain.size() != d || bias.size() != d) throw ShapeError("layer_norm: gain/bias size mismatch");
  if (!(eps > 0.0)) throw UsageError("layer_norm: eps must be positive");
  const std::size_t n = x.value().rows();
  Tensor out(x.shape());
  Buffer xhat(n * d), rstd(n);
  const auto& in = x.value();
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = in.data() + r * d;
    double mean = 0.0;
    for (std::size_t c = 0; c < d; ++c) mean += row[c];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (row[c] - mean) * (row[c] - mean);
    var /= static_cast<double>(d);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) {
      xhat[r * d + c] = (row[c] - mean) * rstd[r];
      out[r * d + c] = xhat[r * d + c] * gain.value()[c] + bias.value()[c];
    }
  }
  return Var::make(std::move(out), {x, gain, bias}, [n, d, xhat = std::move(xhat), rstd = std::move(rstd)](Node& self) {
    const auto& gv = detail::pval(self, 1);
    if (detail::pneeds(self, 1)) {
      auto& gg = detail::pgrad(self, 1);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) gg[c] += self.grad[r * d + c] * xhat[r * d + c];
    }
    if (detail::pneeds(self, 2)) {
      auto& gb = detail::pgrad(self, 2);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) gb[c] += self.grad[r * d + c];
    }
    if (detail::pneeds(self, 0)) {
      auto& gx = detail::pgrad(self, 0);
      const double inv_d = 1.0 / static_cast<double>(d);
      for (std::size_t r = 0; r < n; ++r) {
        double s1 = 0.0, s2 = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
          const double dxh = self.grad[r * d + c] * gv[c];
          s1 += dxh;
          s2 += dxh * xhat[r * d + c];
        }
        for (std::size_t c = 0; c < d; ++c) {
          const double dxh = self.grad[r * d + c] * gv[c];
          gx[r * d + c] += rstd[r] * (dxh - inv_d * s1 - xhat[r * d + c] * inv_d * s2);
        }
      }
    }
  });
}

// ---------------------------------------------------------------- losses

// Mean negative log-likelihood of targets under softmax(logits), skipping
// positions whose target equals pad_id.
inline Var cross_entropy(const Var& logits, const std::vector<int>& targets, int pad_id) {
  detail::require_matrix(logits, "cross_entropy");
  const std::size_t T = logits.shape()[0], V = logits.shape()[1];
  if (targets.size() != T) throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " + std::to_string(T) + " rows");
  detail::require_finite(logits.value(), "cross_entropy");
  Buffer probs(T * V, 0.0);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t t = 0; t < T; ++t) {
    const int y = targets[t];
    if (y == pad_id) continue;
    if (y < 0 || static_cast<std::size_t>(y) >= V) throw DataError("cross_entropy: target id " + std::to_string(y) + " outside vocabulary");
    const double* row = logits.value().data() + t * V;
    double mx = row[0];
    for (std::size_t v = 1; v < V; ++v) mx = std::max(mx, row[v]);
    double z = 0.0;
    for (std::size_t v = 0; v < V; ++v) z += (probs[t * V + v] = std::exp(row[v] - mx));
    for (std::size_t v = 0; v < V; ++v) probs[t * V + v] /= z;
    total += -(row[y] - mx - std::log(z));
    ++count;
  }
  if (count == 0) throw NumericError("cross_entropy: every position is padding, loss undefined");
  const double inv = 1.0 / static_cast<double>(count);
  return Var::make(Tensor::scalar(total * inv), {logits}, [T, V, inv, targets, pad_id, probs = std::move(probs)](Node& self) {
    auto& g = detail::pgrad(self, 0);
    const double up = self.grad[0] * inv;
    for (std::size_t t = 0; t < T; ++t) {
      if (targets[t] == pad_id) continue;
      for (std::size_t v = 0; v < V; ++v) g[t * V + v] += up * probs[t * V + v];
      g[t * V + static_cast<std::size_t>(targets[t])] -= up;
    }
  });
}

// Mean of -log probs[t, target[t]] over non-pad rows of a probability matrix.
inline Var nll_from_probs(const Var& probs, const std::vector<int>& targets, int pad_id) {
  detail::require_matrix(probs, "nll_from_probs");
  const std::size_t T = probs.shape()[0], V = probs.shape()[1];
  if (targets.size() != T) throw ShapeError("nll_from_probs: target count mismatch");
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t t = 0; t < T; ++t) {
    if (targets[t] == pad_id) continue;
    if (targets[t] < 0 || static_cast<std::size_t>(targets[t]) >= V) throw DataError("nll_from_probs: target outside vocabulary");
    const double p = probs.value()[t * V + static_cast<std::size_t>(targets[t])];
    if (!(p > 0.0)) throw NumericError("nll_from_probs: zero probability on a target token");
    total -= std::log(p);
    ++count;
  }
  if (count == 0) throw NumericError("nll_from_probs: every position is padding, loss undefined");
  const double inv = 1.0 / static_cast<double>(count);
  return Var::make(Tensor::scalar(total * inv), {probs}, [V, inv, targets, pad_id](Node& self) {
    auto& g = detail::pgrad(self, 0);
    const auto& p = detail::pval(self, 0);
    for (std::size_t t = 0; t < targets.size(); ++t) {
      if (targets[t] == pad_id) continue;
      const std::size_t i = t * V + static_cast<std::size_t>(targets[t]);
      g[i] -= self.grad[0] * inv / p[i];
    }
  });
}

// ---------------------------------------------------------------- embeddings

inline Var embedding(const Var& table, const std::vector<int>& ids) {
  detail::require_matrix(table, "embedding");
  const std::size_t V = table.shape()[0], d = table.shape()[1];
  if (ids.empty()) throw ShapeError("embedding: empty id sequence");
  Tensor out({ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= V)
      throw DataError("embedding: token id " + std::to_string(ids[i]) + " outside vocabulary of " + std::to_string(V));
    std::copy_n(table.value().data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
  }
  return Var::make(std::move(out), {table}, [d, ids](Node& self) {
    auto& g = detail::pgrad(self, 0);
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (std::size_t c = 0; c < d; ++c) g[static_cast<std::size_t>(ids[i]) * d + c] += self.grad[i * d + c];
  });
}

// ---------------------------------------------------------------- attention on packed sequences

// Sequences are packed back to back without padding.  Segment s owns query
// rows [q_off, q_off + q_len) and key rows [k_off, k_off + k_len).  With
// causal masking query i of a segment sees keys 0..i of the same segment.
struct AttnSegment {
  std::size_t q_off, q_len, k_off, k_len;
};

struct AttnLayout {
  std::vector<AttnSegment> segs;
  bool causal = false;
  std::size_t nq = 0, nk = 0, kmax = 0;

  static AttnLayout build(const std::vector<std::size_t>& q_lens, const std::vector<std::size_t>& k_lens, bool causal) {
    if (q_lens.size() != k_lens.size()) throw ShapeError("attention layout: segment count mismatch");
    AttnLayout L;
    L.causal = causal;
    for (std::size_t s = 0; s < q_lens.size(); ++s) {
      if (causal && q_lens[s] != k_lens[s]) throw ShapeError("attention layout: causal segment needs equal lengths");
      L.segs.push_back({L.nq, q_lens[s], L.nk, k_lens[s]});
      L.nq += q_lens[s];
      L.nk += k_lens[s];
      L.kmax = std::max(L.kmax, k_lens[s]);
    }
    return L;
  }
  // Segments may share key rows (several queries attending to one source).
  static AttnLayout from_segments(std::vector<AttnSegment> segs, std::size_t nq, std::size_t nk, std::size_t kmax = 0) {
    AttnLayout L;
    L.segs = std::move(segs);
    L.nq = nq;
    L.nk = nk;
    L.kmax = kmax;
    for (const auto& s : L.segs) {
      if (s.q_off + s.q_len > nq || s.k_off + s.k_len > nk) throw ShapeError("attention layout: segment out of range");
      L.kmax = std::max(L.kmax, s.k_len);
    }
    return L;
  }
  std::size_t visible(const AttnSegment& s, std::size_t i) const { return causal ? i + 1 : s.k_len; }
};

// Attention weights P[h, q, j] = softmax_j(Q_h[q] . K_h[j] / sqrt(dh)) over the
// visible keys, zero elsewhere.  Output shape [H, nq, kmax].
inline Var attention_weights(const Var& q, const Var& k, const AttnLayout& L, std::size_t heads) {
  detail::require_matrix(q, "attention_weights");
  detail::require_matrix(k, "attention_weights");
  const std::size_t d = q.shape()[1];
  if (k.shape()[1] != d || d % heads) throw ShapeError("attention_weights: width mismatch");
  if (q.shape()[0] != L.nq || k.shape()[0] != L.nk) throw ShapeError("attention_weights: layout row mismatch");
  const std::size_t dh = d / heads, km = L.kmax, nq = L.nq;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor out({heads, nq, km});
  const double* Q = q.value().data();
  const double* K = k.value().data();
  Buffer row(km);
  for (const auto& s : L.segs)
    for (std::size_t i = 0; i < s.q_len; ++i) {
      const std::size_t qr = s.q_off + i, vis = L.visible(s, i);
      for (std::size_t h = 0; h < heads; ++h) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < vis; ++j) {
          const double* a = Q + qr * d + h * dh;
          const double* b = K + (s.k_off + j) * d + h * dh;
          double acc = 0.0;
          for (std::size_t c = 0; c < dh; ++c) acc += a[c] * b[c];
          row[j] = acc * sc;
          mx = std::max(mx, row[j]);
        }
        if (!std::isfinite(mx)) throw NumericError("attention_weights: non-finite score");
        double z = 0.0;
        for (std::size_t j = 0; j < vis; ++j) z += (row[j] = std::exp(row[j] - mx));
        double* o = out.data() + (h * nq + qr) * km;
        for (std::size_t j = 0; j < vis; ++j) o[j] = row[j] / z;
      }
    }
  return Var::make(std::move(out), {q, k}, [L, heads, d, dh, sc](Node& self) {
    const std::size_t km = L.kmax, nq = L.nq;
    const double* Q = detail::pval(self, 0).data();
    const double* K = detail::pval(self, 1).data();
    const bool gq = detail::pneeds(self, 0), gk = detail::pneeds(self, 1);
    double* dQ = gq ? detail::pgrad(self, 0).data() : nullptr;
    double* dK = gk ? detail::pgrad(self, 1).data() : nullptr;
    for (const auto& s : L.segs)
      for (std::size_t i = 0; i < s.q_len; ++i) {
        const std::size_t qr = s.q_off + i, vis = L.visible(s, i);
        for (std::size_t h = 0; h < heads; ++h) {
          const double* P = self.value.data() + (h * nq + qr) * km;
          const double* G = self.grad.data() + (h * nq + qr) * km;
          double dot = 0.0;
          for (std::size_t j = 0; j < vis; ++j) dot += P[j] * G[j];
          for (std::size_t j = 0; j < vis; ++j) {
            const double ds = P[j] * (G[j] - dot) * sc;
            if (ds == 0.0) continue;
            const std::size_t kr = s.k_off + j;
            for (std::size_t c = 0; c < dh; ++c) {
              if (gq) dQ[qr * d + h * dh + c] += ds * K[kr * d + h * dh + c];
              if (gk) dK[kr * d + h * dh + c] += ds * Q[qr * d + h * dh + c];
            }
          }
        }
      }
  });
}

// out[q, h*dh + c] = sum_j P[h, q, j] V[k_off + j, h*dh + c].  A weight tensor
// of rank 2 ([nq, kmax]) is treated as a single head spanning all columns.
inline Var attention_apply(const Var& p, const Var& v, const AttnLayout& L) {
  detail::require_matrix(v, "attention_apply");
  const std::size_t heads = p.shape().size() == 3 ? p.shape()[0] : 1;
  const std::size_t d = v.shape()[1], km = L.kmax, nq = L.nq;
  if (p.size() != heads * nq * km || v.shape()[0] != L.nk || d % heads)
    throw ShapeError("attention_apply: layout mismatch " + shape_str(p.shape()) + " / " + shape_str(v.shape()));
  const std::size_t dh = d / heads;
  Tensor out({nq, d});
  const double* P = p.value().data();
  const double* Vv = v.value().data();
  for (const auto& s : L.segs)
    for (std::size_t i = 0; i < s.q_len; ++i) {
      const std::size_t qr = s.q_off + i, vis = L.visible(s, i);
      for (std::size_t h = 0; h < heads; ++h) {
        double* o = out.data() + qr * d + h * dh;
        const double* w = P + (h * nq + qr) * km;
        for (std::size_t j = 0; j < vis; ++j) {
          const double* vr = Vv + (s.k_off + j) * d + h * dh;
          for (std::size_t c = 0; c < dh; ++c) o[c] += w[j] * vr[c];
        }
      }
    }
  return Var::make(std::move(out), {p, v}, [L, heads, d, dh](Node& self) {
    const std::size_t km = L.kmax, nq = L.nq;
    const double* P = detail::pval(self, 0).data();
    const double* Vv = detail::pval(self, 1).data();
    const bool gp = detail::pneeds(self, 0), gv = detail::pneeds(self, 1);
    double* dP = gp ? detail::pgrad(self, 0).data() : nullptr;
    double* dV = gv ? detail::pgrad(self, 1).data() : nullptr;
    for (const auto& s : L.segs)
      for (std::size_t i = 0; i < s.q_len; ++i) {
        const std::size_t qr = s.q_off + i, vis = L.visible(s, i);
        for (std::size_t h = 0; h < heads; ++h) {
          const double* G = self.grad.data() + qr * d + h * dh;
          for (std::size_t j = 0; j < vis; ++j) {
            const std::size_t kr = s.k_off + j;
            const std::size_t pi = (h * nq + qr) * km + j;
            if (gp) {
              double acc = 0.0;
              for (std::size_t c = 0; c < dh; ++c) acc += G[c] * Vv[kr * d + h * dh + c];
              dP[pi] += acc;
            }
            if (gv)
              for (std::size_t c = 0; c < dh; ++c) dV[kr * d + h * dh + c] += P[pi] * G[c];
          }
        }
      }
  });
}

// Mean over heads of a [H, nq, kmax] weight tensor, giving [nq, kmax].
inline Var head_mean(const Var& p) {
  if (p.shape().size() != 3) throw ShapeError("head_mean: expected rank 3");
  const std::size_t H = p.shape()[0], n = p.shape()[1] * p.shape()[2];
  Tensor out({p.shape()[1], p.shape()[2]});
  for (std::size_t h = 0; h < H; ++h)
    for (std::size_t i = 0; i < n; ++i) out[i] += p.value()[h * n + i];
  for (auto& x : out.values()) x /= static_cast<double>(H);
  return Var::make(std::move(out), {p}, [H, n](Node& self) {
    auto& g = detail::pgrad(self, 0);
    const double inv = 1.0 / static_cast<double>(H);
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t i = 0; i < n; ++i) g[h * n + i] += self.grad[i] * inv;
  });
}

// Scatters per-source-position weights [nq, kmax] onto the vocabulary:
// out[q, w] = sum_{j : src[k_off + j] = w} A[q, j].
inline Var copy_scatter(const Var& a, const AttnLayout& L, const std::vector<int>& src_ids, std::size_t vocab) {
  if (a.size() != L.nq * L.kmax) throw ShapeError("copy_scatter: weight shape mismatch");
  if (src_ids.size() != L.nk) throw ShapeError("copy_scatter: source id count mismatch");
  Tensor out({L.nq, vocab});
  const std::size_t km = L.kmax;
  for (const auto& s : L.segs)
    for (std::size_t i = 0; i < s.q_len; ++i) {
      const std::size_t qr = s.q_off + i;
      for (std::size_t j = 0; j < s.k_len; ++j)
        out[qr * vocab + static_cast<std::size_t>(src_ids[s.k_off + j])] += a.value()[qr * km + j];
    }
  return Var::make(std::move(out), {a}, [L, src_ids, vocab](Node& self) {
    auto& g = detail::pgrad(self, 0);
    for (const auto& s : L.segs)
      for (std::size_t i = 0; i < s.q_len; ++i) {
        const std::size_t qr = s.q_off + i;
        for (std::size_t j = 0; j < s.k_len; ++j)
          g[qr * L.kmax + j] += self.grad[qr * vocab + static_cast<std::size_t>(src_ids[s.k_off + j])];
      }
  });
}

// Row-wise convex mixture: out[r] = p[r] * a[r] + (1 - p[r]) * b[r], p of shape [n, 1].
inline Var gate_mix(const Var& p, const Var& a, const Var& b) {
  detail::require_same(a, b, "gate_mix");
  detail::require_matrix(a, "gate_mix");
  const std::size_t n = a.shape()[0], V = a.shape()[1];
  if (p.size() != n) throw ShapeError("gate_mix: gate size mismatch");
  Tensor out({n, V});
  for (std::size_t r = 0; r < n; ++r) {
    const double g = p.value()[r];
    for (std::size_t v = 0; v < V; ++v) out[r * V + v] = g * a.value()[r * V + v] + (1.0 - g) * b.value()[r * V + v];
  }
  return Var::make(std::move(out), {p, a, b}, [n, V](Node& self) {
    const auto& pv = detail::pval(self, 0);
    const auto& av = detail::pval(self, 1);
    const auto& bv = detail::pval(self, 2);
    for (std::size_t r = 0; r < n; ++r) {
      const double g = pv[r];
      const double* G = self.grad.data() + r * V;
      if (detail::pneeds(self, 0)) {
        double acc = 0.0;
        for (std::size_t v = 0; v < V; ++v) acc += G[v] * (av[r * V + v] - bv[r * V + v]);
        detail::pgrad(self, 0)[r] += acc;
      }
      if (detail::pneeds(self, 1)) {
        auto& ga = detail::pgrad(self, 1);
        for (std::size_t v = 0; v < V; ++v) ga[r * V + v] += g * G[v];
      }
      if (detail::pneeds(self, 2)) {
        auto& gb = detail::pgrad(self, 2);
        for (std::size_t v = 0; v < V; ++v) gb[r * V + v] += (1.0 - g) * G[v];
      }
    }
  });
}

// Selects a subset of rows of a matrix.
inline Var gather_rows(const Var& x, const std::vector<std::size_t>& rows) {
  detail::require_matrix(x, "gather_rows");
  const std::size_t d = x.shape()[1];
  Tensor out({rows.size(), d});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= x.shape()[0]) throw ShapeError("gather_rows: row index out of range");
    std::copy_n(x.value().data() + rows[i] * d, d, out.data() + i * d);
  }
  return Var::make(std::move(out), {x}, [rows, d](Node& self) {
    auto& g = detail::pgrad(self, 0);
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t c = 0; c < d; ++c) g[rows[i] * d + c] += self.grad[i * d + c];
  });
}

}  // namespace pasttense

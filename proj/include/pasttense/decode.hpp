#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "pasttense/lexicon.hpp"
#include "pasttense/model.hpp"
#include "pasttense/ops.hpp"

namespace pasttense {

struct DecodeConfig {
  int beam_size = 5;
  int k = 5;          // top-k sampling cutoff
  int n_samples = 5;  // sampled sequences per verb and seed
  int max_len = 0;    // total tokens including Start/End; 0 = model max_len

  void validate() const {
    if (beam_size < 1) throw ConfigError("decode: beam_size must be >= 1");
    if (k < 1) throw ConfigError("decode: k must be >= 1");
    if (n_samples < 1) throw ConfigError("decode: n_samples must be >= 1");
    if (max_len < 0 || max_len == 1) throw ConfigError("decode: max_len must be 0 or >= 2");
  }
  bool operator==(const DecodeConfig&) const = default;
};

// Default decoding length: Start + longest training target + End + margin.
inline int default_max_len(std::size_t longest_target_payload) { return static_cast<int>(longest_target_payload) + 2 + 4; }

struct Hypothesis {
  std::vector<int> tokens;  // Start ... End (or cut off at max_len)
  double log_prob = 0.0;
  bool truncated = false;
  std::size_t completed_step = 0;
};

// ---------------------------------------------------------------------------
// Incremental inference.  Encoder memory and cross-attention keys/values are
// computed once per source; each decoding state caches its per-layer
// self-attention keys and values, so one step costs one decoder row.  The
// arithmetic mirrors the graph kernels, and tests compare both paths.

class InferenceEngine {
 public:
  struct State {
    std::size_t src = 0;
    std::vector<int> tokens;
    std::size_t fed = 0;
    std::vector<std::vector<double>> k, v;  // per layer, fed x d
  };

  InferenceEngine(const ModelParams& p, const std::vector<std::vector<int>>& srcs) : p_(p) {
    NoGradGuard ng;
    d_ = static_cast<std::size_t>(p.cfg.d_model);
    H_ = static_cast<std::size_t>(p.cfg.n_heads);
    V_ = static_cast<std::size_t>(p.cfg.vocab_size);
    L_ = static_cast<std::size_t>(p.cfg.n_layers_dec);
    Encoded e = encode_batch(p, srcs, false, nullptr);
    src_ids_ = srcs;
    const auto& mem = e.memory.value();
    for (std::size_t s = 0; s < srcs.size(); ++s) {
      RowMat m = detail::cmap(mem, mem.rows(), d_).middleRows(static_cast<Eigen::Index>(e.src_off[s]),
                                                               static_cast<Eigen::Index>(e.src_len[s]));
      std::vector<RowMat> ck, cv;
      for (std::size_t l = 0; l < L_; ++l) {
        const std::string pre = "dec." + std::to_string(l) + ".cross";
        ck.push_back(affine(m, pre + ".wk", pre + ".bk"));
        cv.push_back(affine(m, pre + ".wv", pre + ".bv"));
      }
      memory_.push_back(std::move(m));
      cross_k_.push_back(std::move(ck));
      cross_v_.push_back(std::move(cv));
    }
  }

  std::size_t sources() const { return src_ids_.size(); }
  std::size_t vocab() const { return V_; }

  State start(std::size_t src, std::vector<int> prefix) const {
    if (src >= src_ids_.size()) throw UsageError("inference: source index out of range");
    if (prefix.empty() || prefix.front() != kStart) throw UsageError("inference: prefix must begin with Start");
    State s;
    s.src = src;
    s.tokens = std::move(prefix);
    s.k.assign(L_, {});
    s.v.assign(L_, {});
    return s;
  }

  // Feeds every not-yet-consumed token of each state and returns the
  // next-token distribution after its full prefix, one row per state.
  RowMat advance(std::vector<State*>& states) const {
    RowMat out(static_cast<Eigen::Index>(states.size()), static_cast<Eigen::Index>(V_));
    while (true) {
      std::vector<std::size_t> idx;
      for (std::size_t i = 0; i < states.size(); ++i)
        if (states[i]->fed < states[i]->tokens.size()) idx.push_back(i);
      if (idx.empty()) break;
      RowMat probs = feed(states, idx);
      for (std::size_t r = 0; r < idx.size(); ++r)
        if (states[idx[r]]->fed == states[idx[r]]->tokens.size()) out.row(static_cast<Eigen::Index>(idx[r])) = probs.row(static_cast<Eigen::Index>(r));
    }
    return out;
  }

 private:
  RowMat affine(const RowMat& x, const std::string& w, const std::string& b) const {
    const auto& W = p_[w].value();
    const auto& B = p_[b].value();
    RowMat y = x * detail::cmap(W, W.rows(), W.cols());
    y.rowwise() += detail::cmap(B, 1, B.size()).row(0);
    return y;
  }

  static void layer_norm_rows(RowMat& x, const Tensor& g, const Tensor& b) {
    const std::size_t d = static_cast<std::size_t>(x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      double* row = x.row(r).data();
      double mean = 0.0;
      for (std::size_t c = 0; c < d; ++c) mean += row[c];
      mean /= static_cast<double>(d);
      double var = 0.0;
      for (std::size_t c = 0; c < d; ++c) var += (row[c] - mean) * (row[c] - mean);
      var /= static_cast<double>(d);
      const double rstd = 1.0 / std::sqrt(var + 1e-5);
      for (std::size_t c = 0; c < d; ++c) row[c] = (row[c] - mean) * rstd * g[c] + b[c];
    }
  }

  // Scaled dot-product attention of one query row against n key rows;
  // writes the attended values into o and the weights into w (H x n).
  void attend(const double* q, const double* K, const double* Vv, std::size_t n, double* o, std::vector<double>& w) const {
    const std::size_t dh = d_ / H_;
    const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
    w.assign(H_ * n, 0.0);
    for (std::size_t h = 0; h < H_; ++h) {
      double mx = -std::numeric_limits<double>::infinity();
      double* wr = w.data() + h * n;
      for (std::size_t j = 0; j < n; ++j) {
        const double* a = q + h * dh;
        const double* b = K + j * d_ + h * dh;
        double acc = 0.0;
        for (std::size_t c = 0; c < dh; ++c) acc += a[c] * b[c];
        wr[j] = acc * sc;
        mx = std::max(mx, wr[j]);
      }
      if (!std::isfinite(mx)) throw NumericError("inference: non-finite attention score");
      double z = 0.0;
      for (std::size_t j = 0; j < n; ++j) z += (wr[j] = std::exp(wr[j] - mx));
      for (std::size_t j = 0; j < n; ++j) wr[j] /= z;
      double* oh = o + h * dh;
      for (std::size_t c = 0; c < dh; ++c) oh[c] = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double* vr = Vv + j * d_ + h * dh;
        for (std::size_t c = 0; c < dh; ++c) oh[c] += wr[j] * vr[c];
      }
    }
  }

  RowMat feed(std::vector<State*>& states, const std::vector<std::size_t>& idx) const {
    const auto N = static_cast<Eigen::Index>(idx.size());
    const auto d = static_cast<Eigen::Index>(d_);
    RowMat x(N, d);
    const auto& emb = p_["tgt_embed"].value();
    const double scale = std::sqrt(static_cast<double>(d_));
    for (Eigen::Index r = 0; r < N; ++r) {
      State& s = *states[idx[static_cast<std::size_t>(r)]];
      const int tok = s.tokens[s.fed];
      if (tok < 0 || static_cast<std::size_t>(tok) >= V_) throw DataError("inference: token id outside vocabulary");
      if (s.fed >= static_cast<std::size_t>(p_.cfg.max_len)) throw UsageError("inference: sequence longer than max_len");
      for (Eigen::Index c = 0; c < d; ++c)
        x(r, c) = emb[static_cast<std::size_t>(tok) * d_ + static_cast<std::size_t>(c)] * scale + p_.positions[s.fed * d_ + static_cast<std::size_t>(c)];
    }
    std::vector<double> w;
    std::vector<std::vector<double>> last_cross(idx.size());
    for (std::size_t l = 0; l < L_; ++l) {
      const std::string pre = "dec." + std::to_string(l);
      {
        RowMat q = affine(x, pre + ".self.wq", pre + ".self.bq");
        RowMat k = affine(x, pre + ".self.wk", pre + ".self.bk");
        RowMat v = affine(x, pre + ".self.wv", pre + ".self.bv");
        RowMat o(N, d);
        for (Eigen::Index r = 0; r < N; ++r) {
          State& s = *states[idx[static_cast<std::size_t>(r)]];
          s.k[l].insert(s.k[l].end(), k.row(r).data(), k.row(r).data() + d_);
          s.v[l].insert(s.v[l].end(), v.row(r).data(), v.row(r).data() + d_);
          attend(q.row(r).data(), s.k[l].data(), s.v[l].data(), s.k[l].size() / d_, o.row(r).data(), w);
        }
        x += affine(o, pre + ".self.wo", pre + ".self.bo");
        layer_norm_rows(x, p_[pre + ".ln1.g"].value(), p_[pre + ".ln1.b"].value());
      }
      {
        RowMat q = affine(x, pre + ".cross.wq", pre + ".cross.bq");
        RowMat o(N, d);
        for (Eigen::Index r = 0; r < N; ++r) {
          const std::size_t src = states[idx[static_cast<std::size_t>(r)]]->src;
          attend(q.row(r).data(), cross_k_[src][l].data(), cross_v_[src][l].data(), static_cast<std::size_t>(cross_k_[src][l].rows()),
                 o.row(r).data(), w);
          if (l + 1 == L_) last_cross[static_cast<std::size_t>(r)] = w;
        }
        x += affine(o, pre + ".cross.wo", pre + ".cross.bo");
        layer_norm_rows(x, p_[pre + ".ln2.g"].value(), p_[pre + ".ln2.b"].value());
      }
      {
        RowMat h = affine(x, pre + ".ff.w1", pre + ".ff.b1").cwiseMax(0.0);
        x += affine(h, pre + ".ff.w2", pre + ".ff.b2");
        layer_norm_rows(x, p_[pre + ".ln3.g"].value(), p_[pre + ".ln3.b"].value());
      }
    }
    layer_norm_rows(x, p_["dec.norm.g"].value(), p_["dec.norm.b"].value());
    RowMat logits = affine(x, "out.w", "out.b");
    RowMat probs(N, static_cast<Eigen::Index>(V_));
    for (Eigen::Index r = 0; r < N; ++r) {
      const double mx = logits.row(r).maxCoeff();
      if (!std::isfinite(mx)) throw NumericError("inference: non-finite logits");
      probs.row(r) = (logits.row(r).array() - mx).exp();
      probs.row(r) /= probs.row(r).sum();
    }
    if (p_.cfg.use_copy) {
      const auto& gw = p_["copy.w"].value();
      const double gb = p_["copy.b"].value()[0];
      for (Eigen::Index r = 0; r < N; ++r) {
        const std::size_t src = states[idx[static_cast<std::size_t>(r)]]->src;
        const auto& cw = last_cross[static_cast<std::size_t>(r)];
        const std::size_t n = cw.size() / H_;
        std::vector<double> avg(n, 0.0);
        for (std::size_t h = 0; h < H_; ++h)
          for (std::size_t j = 0; j < n; ++j) avg[j] += cw[h * n + j];
        for (auto& a : avg) a /= static_cast<double>(H_);
        std::vector<double> ctx(d_, 0.0);
        for (std::size_t j = 0; j < n; ++j)
          for (std::size_t c = 0; c < d_; ++c) ctx[c] += avg[j] * memory_[src](static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(c));
        double z = gb;
        for (std::size_t c = 0; c < d_; ++c) z += x(r, static_cast<Eigen::Index>(c)) * gw[c] + ctx[c] * gw[d_ + c];
        const double pg = 1.0 / (1.0 + std::exp(-z));
        std::vector<double> cp(V_, 0.0);
        for (std::size_t j = 0; j < n; ++j) cp[static_cast<std::size_t>(src_ids_[src][j])] += avg[j];
        for (std::size_t t = 0; t < V_; ++t)
          probs(r, static_cast<Eigen::Index>(t)) = pg * probs(r, static_cast<Eigen::Index>(t)) + (1.0 - pg) * cp[t];
      }
    }
    for (std::size_t i : idx) ++states[i]->fed;
    return probs;
  }

  const ModelParams& p_;
  std::size_t d_ = 0, H_ = 0, V_ = 0, L_ = 0;
  std::vector<std::vector<int>> src_ids_;
  std::vector<RowMat> memory_;
  std::vector<std::vector<RowMat>> cross_k_, cross_v_;
};

// ---------------------------------------------------------------------------

namespace detail {

inline int resolve_max_len(const ModelParams& p, const DecodeConfig& cfg) {
  const int m = cfg.max_len > 0 ? cfg.max_len : p.cfg.max_len;
  return std::min(m, p.cfg.max_len);
}

inline bool emittable(int tok) { return tok != kPad && tok != kStart; }

// Final ordering: log-probability descending, then earlier completion, then
// lexicographic token ids.
inline bool hyp_before(const Hypothesis& a, const Hypothesis& b) {
  if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
  if (a.completed_step != b.completed_step) return a.completed_step < b.completed_step;
  return a.tokens < b.tokens;
}

}  // namespace detail

// Length-unnormalized beam search over a batch of sources.  prefixes[i]
// (default: just Start) seeds source i with log-probability 0.  Each step
// keeps the beam_size best extensions of the live hypotheses; an extension
// ending in End is retired.  Hypotheses reaching max_len without End are
// retired with truncated = true.  Returns at most beam_size hypotheses per
// source in final order.
inline std::vector<std::vector<Hypothesis>> beam_search_batch(const ModelParams& p, const std::vector<std::vector<int>>& srcs,
                                                              const DecodeConfig& cfg,
                                                              const std::vector<std::vector<int>>& prefixes = {}) {
  cfg.validate();
  if (!prefixes.empty() && prefixes.size() != srcs.size()) throw UsageError("beam_search: prefix count mismatch");
  const std::size_t B = static_cast<std::size_t>(cfg.beam_size);
  const std::size_t max_len = static_cast<std::size_t>(detail::resolve_max_len(p, cfg));
  std::vector<std::vector<Hypothesis>> done(srcs.size());
  if (srcs.empty()) return done;
  InferenceEngine eng(p, srcs);
  const std::size_t V = eng.vocab();

  struct Live {
    InferenceEngine::State st;
    double logp;
  };
  std::vector<std::vector<Live>> live(srcs.size());
  for (std::size_t i = 0; i < srcs.size(); ++i) {
    std::vector<int> pre = prefixes.empty() ? std::vector<int>{kStart} : prefixes[i];
    if (pre.size() >= max_len) throw UsageError("beam_search: forced prefix reaches max_len");
    live[i].push_back({eng.start(i, pre), 0.0});
  }

  for (std::size_t step = 0;; ++step) {
    std::vector<InferenceEngine::State*> ptrs;
    std::vector<std::pair<std::size_t, std::size_t>> owner;
    for (std::size_t i = 0; i < srcs.size(); ++i)
      for (std::size_t j = 0; j < live[i].size(); ++j) {
        ptrs.push_back(&live[i][j].st);
        owner.emplace_back(i, j);
      }
    if (ptrs.empty()) break;
    const RowMat probs = eng.advance(ptrs);

    struct Cand {
      double score;
      std::size_t parent;
      int tok;
    };
    std::size_t row = 0;
    for (std::size_t i = 0; i < srcs.size(); ++i) {
      if (live[i].empty()) continue;
      std::vector<Cand> cands;
      for (std::size_t j = 0; j < live[i].size(); ++j, ++row)
        for (std::size_t t = 0; t < V; ++t) {
          const double pr = probs(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(t));
          if (!detail::emittable(static_cast<int>(t)) || !(pr > 0.0)) continue;
          cands.push_back({live[i][j].logp + std::log(pr), j, static_cast<int>(t)});
        }
      const auto& lv = live[i];
      auto better = [&lv](const Cand& a, const Cand& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.parent != b.parent) return lv[a.parent].st.tokens < lv[b.parent].st.tokens;
        return a.tok < b.tok;
      };
      const std::size_t keep = std::min(B, cands.size());
      std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(), better);
      std::vector<Live> next;
      for (std::size_t c = 0; c < keep; ++c) {
        const Cand& cd = cands[c];
        InferenceEngine::State st = lv[cd.parent].st;
        st.tokens.push_back(cd.tok);
        if (cd.tok == kEnd || st.tokens.size() >= max_len) {
          done[i].push_back({st.tokens, cd.score, cd.tok != kEnd, step});
        } else {
          next.push_back({std::move(st), cd.score});
        }
      }
      // Scores only decrease, so once beam_size retired hypotheses all score
      // at least the best live one, no live extension can enter the result.
      if (!next.empty() && done[i].size() >= B) {
        std::sort(done[i].begin(), done[i].end(), detail::hyp_before);
        double best_live = next[0].logp;
        for (auto& n : next) best_live = std::max(best_live, n.logp);
        if (best_live <= done[i][B - 1].log_prob) next.clear();
      }
      live[i] = std::move(next);
    }
  }
  for (auto& d : done) {
    std::sort(d.begin(), d.end(), detail::hyp_before);
    if (d.size() > B) d.resize(B);
  }
  return done;
}

inline std::vector<Hypothesis> beam_search(const ModelParams& p, const std::vector<int>& src, const DecodeConfig& cfg) {
  return beam_search_batch(p, {src}, cfg).front();
}

// Restricts a distribution to its k most probable emittable tokens (ties to
// the lower id) and renormalises.
inline std::vector<std::pair<int, double>> topk_support(const double* probs, std::size_t V, std::size_t k) {
  std::vector<std::pair<int, double>> c;
  for (std::size_t t = 0; t < V; ++t)
    if (detail::emittable(static_cast<int>(t)) && probs[t] > 0.0) c.emplace_back(static_cast<int>(t), probs[t]);
  const std::size_t keep = std::min(k, c.size());
  std::partial_sort(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(keep), c.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  c.resize(keep);
  double z = 0.0;
  for (auto& [t, pr] : c) z += pr;
  for (auto& [t, pr] : c) pr /= z;
  return c;
}

// Ancestral top-k sampling.  Sequence j of the batch draws from
// rngs[j], so results do not depend on how sequences are batched.
inline std::vector<Hypothesis> sample_topk_batch(const ModelParams& p, const std::vector<std::vector<int>>& srcs,
                                                 const std::vector<std::size_t>& src_of, const DecodeConfig& cfg,
                                                 std::vector<Rng>& rngs) {
  cfg.validate();
  if (src_of.size() != rngs.size()) throw UsageError("sample_topk: one rng per sample required");
  const std::size_t max_len = static_cast<std::size_t>(detail::resolve_max_len(p, cfg));
  std::vector<Hypothesis> out(src_of.size());
  if (src_of.empty()) return out;
  InferenceEngine eng(p, srcs);
  if (static_cast<std::size_t>(cfg.k) > eng.vocab()) throw UsageError("sample_topk: k exceeds vocabulary size");
  std::vector<InferenceEngine::State> states;
  for (std::size_t j = 0; j < src_of.size(); ++j) states.push_back(eng.start(src_of[j], {kStart}));
  std::vector<std::size_t> active(src_of.size());
  for (std::size_t j = 0; j < active.size(); ++j) active[j] = j;
  for (std::size_t step = 0; !active.empty(); ++step) {
    std::vector<InferenceEngine::State*> ptrs;
    for (std::size_t j : active) ptrs.push_back(&states[j]);
    const RowMat probs = eng.advance(ptrs);
    std::vector<std::size_t> still;
    for (std::size_t r = 0; r < active.size(); ++r) {
      const std::size_t j = active[r];
      auto sup = topk_support(probs.row(static_cast<Eigen::Index>(r)).data(), eng.vocab(), static_cast<std::size_t>(cfg.k));
      const double u = rngs[j].uniform();
      double acc = 0.0;
      std::size_t pick = sup.size() - 1;
      for (std::size_t c = 0; c < sup.size(); ++c) {
        acc += sup[c].second;
        if (u < acc) {
          pick = c;
          break;
        }
      }
      const int tok = sup[pick].first;
      states[j].tokens.push_back(tok);
      out[j].log_prob += std::log(probs(static_cast<Eigen::Index>(r), tok));
      if (tok == kEnd || states[j].tokens.size() >= max_len) {
        out[j].tokens = states[j].tokens;
        out[j].truncated = tok != kEnd;
        out[j].completed_step = step;
      } else {
        still.push_back(j);
      }
    }
    active = std::move(still);
  }
  return out;
}

inline Hypothesis sample_topk(const ModelParams& p, const std::vector<int>& src, const DecodeConfig& cfg, Rng& rng) {
  std::vector<Rng> r{rng};
  Hypothesis h = sample_topk_batch(p, {src}, {0}, cfg, r).front();
  rng = r.front();
  return h;
}

inline Hypothesis greedy_decode(const ModelParams& p, const std::vector<int>& src, const DecodeConfig& cfg) {
  DecodeConfig c = cfg;
  c.beam_size = 1;
  return beam_search(p, src, c).front();
}

// Beam search with the first post-Start positions clamped to the given
// label tokens (contributing log-probability 0).
inline std::vector<Hypothesis> force_label_decode_batch(const ModelParams& p, const std::vector<std::vector<int>>& srcs,
                                                        const std::vector<std::vector<int>>& labels, LabelScheme scheme,
                                                        const DecodeConfig& cfg) {
  const std::size_t n = scheme_label_count(scheme);
  if (n == 0) throw UsageError("force_label_decode: scheme " + to_string(scheme) + " emits no labels");
  if (labels.size() != srcs.size()) throw UsageError("force_label_decode: label count mismatch");
  std::vector<std::vector<int>> prefixes;
  for (auto& l : labels) {
    if (l.size() != n) throw UsageError("force_label_decode: scheme " + to_string(scheme) + " needs " + std::to_string(n) + " label(s)");
    std::vector<int> pre{kStart};
    pre.insert(pre.end(), l.begin(), l.end());
    prefixes.push_back(pre);
  }
  auto all = beam_search_batch(p, srcs, cfg, prefixes);
  std::vector<Hypothesis> out;
  for (auto& h : all) out.push_back(h.front());
  return out;
}

inline Hypothesis force_label_decode(const ModelParams& p, const std::vector<int>& src, const std::vector<int>& labels,
                                     LabelScheme scheme, const DecodeConfig& cfg) {
  return force_label_decode_batch(p, {src}, {labels}, scheme, cfg).front();
}

// ---------------------------------------------------------------------------

struct StrippedOutput {
  std::vector<std::string> labels;
  Phonemes phonemes;
  bool malformed = false;
  std::string problem;
};

// Separates the label tokens required by the scheme from the phoneme
// payload.  Misplaced or missing labels, a missing End, or stray special
// tokens yield a malformed record (scored as incorrect, not an error).
inline StrippedOutput strip_labels(const std::vector<int>& tokens, LabelScheme scheme, const Vocab& vocab) {
  StrippedOutput s;
  auto bad = [&s](std::string why) {
    s.malformed = true;
    if (s.problem.empty()) s.problem = std::move(why);
  };
  const auto regs = std::set<std::string>{regularity_token(Regularity::reg), regularity_token(Regularity::irreg)};
  std::set<std::string> classes;
  for (auto c : all_verb_classes()) classes.insert(class_token(c));
  std::size_t i = 0;
  if (tokens.empty() || tokens[0] != kStart) bad("missing Start");
  else i = 1;
  auto expect = [&](const std::set<std::string>& allowed, const char* what) {
    if (i < tokens.size() && tokens[i] != kEnd && allowed.count(vocab.token(tokens[i]))) {
      s.labels.push_back(vocab.token(tokens[i]));
      ++i;
    } else {
      bad(std::string("missing ") + what + " label");
    }
  };
  if (!s.malformed) {
    if (scheme_has_regularity(scheme)) expect(regs, "regularity");
    if (scheme_has_class(scheme) && !s.malformed) expect(classes, "verb-class");
  }
  bool ended = false;
  for (; i < tokens.size() && !s.malformed; ++i) {
    const int t = tokens[i];
    if (t == kEnd) {
      ended = true;
      if (i + 1 != tokens.size()) bad("tokens after End");
      break;
    }
    if (t == kStart || t == kPad) bad("special token in payload");
    else if (vocab.is_label(t)) bad("label token in payload");
    else s.phonemes.push_back(vocab.token(t));
  }
  if (!ended && !s.malformed) bad("no End token");
  return s;
}

// Prediction dump: lemma_orth, scheme, strategy, rank, labels, predicted IPA,
// log_prob.
struct PredictionRecord {
  std::string lemma;
  LabelScheme scheme = LabelScheme::base;
  std::string strategy;  // beam | forced | sample
  std::size_t rank = 0;
  std::vector<std::string> labels;
  Phonemes predicted;
  double log_prob = 0.0;
  bool malformed = false;
};

inline void write_predictions_tsv(std::ostream& os, const std::vector<PredictionRecord>& recs) {
  os << "lemma_orth\tscheme\tstrategy\trank\tlabels\tpredicted_ipa\tlog_prob\n";
  char buf[64];
  for (auto& r : recs) {
    std::snprintf(buf, sizeof buf, "%.17g", r.log_prob);
    os << r.lemma << '\t' << to_string(r.scheme) << '\t' << r.strategy << '\t' << r.rank << '\t' << join_ipa(r.labels) << '\t'
       << (r.malformed ? std::string("<malformed>") : join_ipa(r.predicted)) << '\t' << buf << '\n';
  }
}

}  // namespace pasttense

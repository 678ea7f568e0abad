#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pasttense/ops.hpp"
#include "pasttense/rng.hpp"
#include "pasttense/tensor.hpp"

namespace pasttense {

inline constexpr int kPad = 0;
inline constexpr int kStart = 1;
inline constexpr int kEnd = 2;

struct ModelConfig {
  int n_layers_enc = 2;
  int n_layers_dec = 2;
  int n_heads = 4;
  int d_model = 128;
  int d_ff = 512;
  double dropout = 0.1;
  bool use_copy = false;
  int vocab_size = 0;
  int max_len = 64;

  void validate() const {
    if (d_model < 1 || n_heads < 1 || d_model % n_heads)
      throw ConfigError("model: d_model (" + std::to_string(d_model) + ") must be divisible by n_heads (" +
                        std::to_string(n_heads) + ")");
    if (n_layers_enc < 1 || n_layers_dec < 1 || d_ff < 1) throw ConfigError("model: layer counts and d_ff must be >= 1");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model: dropout must lie in [0, 1)");
    if (vocab_size < 4) throw ConfigError("model: vocab_size must cover the reserved tokens");
    if (max_len < 2) throw ConfigError("model: max_len must be >= 2");
  }

  bool operator==(const ModelConfig&) const = default;
};

// Closed-form number of learnable scalars.  Encoder layer: self-attention
// (4 d^2 + 4 d), two layer norms (4 d), feed-forward (2 d f + f + d).  Decoder
// layer adds a cross-attention block and a third layer norm.  Plus untied
// source/target embeddings (2 V d), final encoder/decoder norms (4 d), output
// projection (d V + V) and, with copying, the gate (2 d + 1).
inline std::size_t parameter_count(const ModelConfig& c) {
  const std::size_t d = static_cast<std::size_t>(c.d_model), f = static_cast<std::size_t>(c.d_ff),
                    V = static_cast<std::size_t>(c.vocab_size);
  const std::size_t attn = 4 * d * d + 4 * d, ffn = 2 * d * f + f + d, ln = 2 * d;
  const std::size_t enc = attn + ffn + 2 * ln, dec = 2 * attn + ffn + 3 * ln;
  std::size_t n = static_cast<std::size_t>(c.n_layers_enc) * enc + static_cast<std::size_t>(c.n_layers_dec) * dec;
  n += 2 * V * d + 2 * ln + d * V + V;
  if (c.use_copy) n += 2 * d + 1;
  return n;
}

inline Tensor sinusoidal_positions(int max_len, int d_model) {
  Tensor pe({static_cast<std::size_t>(max_len), static_cast<std::size_t>(d_model)});
  for (int pos = 0; pos < max_len; ++pos)
    for (int i = 0; i < d_model; i += 2) {
      const double angle = pos / std::pow(10000.0, static_cast<double>(i) / d_model);
      pe.at(pos, i) = std::sin(angle);
      if (i + 1 < d_model) pe.at(pos, i + 1) = std::cos(angle);
    }
  return pe;
}

class ModelParams {
 public:
  ModelConfig cfg;
  Tensor positions;  // fixed sinusoidal table [max_len x d_model]

  const Var& operator[](const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw UsageError("model: no parameter named " + name);
    return vars_[it->second];
  }
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  void add(const std::string& name, Tensor t) {
    if (index_.count(name)) throw UsageError("model: duplicate parameter " + name);
    index_[name] = vars_.size();
    names_.push_back(name);
    vars_.emplace_back(std::move(t), true);
  }

  const std::vector<std::string>& names() const { return names_; }
  const std::vector<Var>& vars() const { return vars_; }
  std::size_t count() const {
    std::size_t n = 0;
    for (auto& v : vars_) n += v.size();
    return n;
  }

  // Deep copy (fresh graph leaves).
  ModelParams clone() const {
    ModelParams p;
    p.cfg = cfg;
    p.positions = positions;
    for (std::size_t i = 0; i < names_.size(); ++i) p.add(names_[i], vars_[i].value());
    return p;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Var> vars_;
  std::map<std::string, std::size_t> index_;
};

namespace detail {

inline Tensor xavier(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  Tensor t({fan_in, fan_out});
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (auto& x : t.values()) x = rng.uniform(-a, a);
  return t;
}

inline void add_attention(ModelParams& p, const std::string& pre, std::size_t d, Rng& rng) {
  for (const char* w : {"q", "k", "v", "o"}) {
    p.add(pre + ".w" + w, xavier(d, d, rng));
    p.add(pre + ".b" + w, Tensor({d}));
  }
}

inline void add_norm(ModelParams& p, const std::string& pre, std::size_t d) {
  p.add(pre + ".g", Tensor({d}, 1.0));
  p.add(pre + ".b", Tensor({d}));
}

inline void add_ffn(ModelParams& p, const std::string& pre, std::size_t d, std::size_t f, Rng& rng) {
  p.add(pre + ".w1", xavier(d, f, rng));
  p.add(pre + ".b1", Tensor({f}));
  p.add(pre + ".w2", xavier(f, d, rng));
  p.add(pre + ".b2", Tensor({d}));
}

}  // namespace detail

inline ModelParams init_params(const ModelConfig& cfg, const Rng& rng_in) {
  cfg.validate();
  Rng rng = rng_in.substream("init");
  const std::size_t d = static_cast<std::size_t>(cfg.d_model), f = static_cast<std::size_t>(cfg.d_ff),
                    V = static_cast<std::size_t>(cfg.vocab_size);
  ModelParams p;
  p.cfg = cfg;
  p.positions = sinusoidal_positions(cfg.max_len, cfg.d_model);
  p.add("src_embed", detail::xavier(V, d, rng));
  p.add("tgt_embed", detail::xavier(V, d, rng));
  for (int l = 0; l < cfg.n_layers_enc; ++l) {
    const std::string pre = "enc." + std::to_string(l);
    detail::add_attention(p, pre + ".self", d, rng);
    detail::add_norm(p, pre + ".ln1", d);
    detail::add_ffn(p, pre + ".ff", d, f, rng);
    detail::add_norm(p, pre + ".ln2", d);
  }
  detail::add_norm(p, "enc.norm", d);
  for (int l = 0; l < cfg.n_layers_dec; ++l) {
    const std::string pre = "dec." + std::to_string(l);
    detail::add_attention(p, pre + ".self", d, rng);
    detail::add_norm(p, pre + ".ln1", d);
    detail::add_attention(p, pre + ".cross", d, rng);
    detail::add_norm(p, pre + ".ln2", d);
    detail::add_ffn(p, pre + ".ff", d, f, rng);
    detail::add_norm(p, pre + ".ln3", d);
  }
  detail::add_norm(p, "dec.norm", d);
  p.add("out.w", detail::xavier(d, V, rng));
  p.add("out.b", Tensor({V}));
  if (cfg.use_copy) {
    p.add("copy.w", detail::xavier(2 * d, 1, rng));
    p.add("copy.b", Tensor({1}));
  }
  return p;
}

// ---------------------------------------------------------------------------
// Forward computation on packed batches.  Post-norm residual blocks:
//   x = LN(x + Dropout(Sublayer(x)))
// with dropout also applied to attention weights, the feed-forward hidden
// layer and the embedded inputs; final layer norms close both stacks.

struct Encoded {
  Var memory;                        // [total source tokens x d_model]
  std::vector<int> src_ids;          // packed source ids
  std::vector<std::size_t> src_off;  // row offset of each sequence
  std::vector<std::size_t> src_len;
};

struct DecoderOutput {
  Var dist;            // probabilities (copy) or logits (no copy), one row per selected position
  bool is_prob = false;
  Var cross_weights;   // final decoder layer cross-attention, [H x nq x kmax] over all decoder rows
  Var p_gen;           // [rows x 1] when copying
  std::vector<std::size_t> rows;       // selected decoder rows
  std::vector<std::size_t> row_seq;    // source sequence of each selected row
};

namespace detail {

struct Ctx {
  const ModelParams& p;
  bool train;
  Rng* rng;
  Var drop(const Var& x) const { return train && p.cfg.dropout > 0.0 ? dropout(x, p.cfg.dropout, *rng) : x; }
};

inline Var embed(const Ctx& c, const std::string& table, const std::vector<int>& ids, const std::vector<std::size_t>& pos) {
  const std::size_t d = static_cast<std::size_t>(c.p.cfg.d_model);
  const std::size_t V = static_cast<std::size_t>(c.p.cfg.vocab_size);
  for (int id : ids)
    if (id < 0 || static_cast<std::size_t>(id) >= V)
      throw DataError("model: token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(V));
  Tensor pe({ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (pos[i] >= static_cast<std::size_t>(c.p.cfg.max_len))
      throw UsageError("model: sequence longer than max_len " + std::to_string(c.p.cfg.max_len));
    std::copy_n(c.p.positions.data() + pos[i] * d, d, pe.data() + i * d);
  }
  Var x = scale(embedding(c.p[table], ids), std::sqrt(static_cast<double>(d)));
  return c.drop(add_const(x, pe));
}

inline Var mha(const Ctx& c, const std::string& pre, const Var& xq, const Var& xkv, const AttnLayout& L, Var* weights) {
  const auto& p = c.p;
  Var q = linear(xq, p[pre + ".wq"], p[pre + ".bq"]);
  Var k = linear(xkv, p[pre + ".wk"], p[pre + ".bk"]);
  Var v = linear(xkv, p[pre + ".wv"], p[pre + ".bv"]);
  Var w = attention_weights(q, k, L, static_cast<std::size_t>(p.cfg.n_heads));
  if (weights) *weights = w;
  Var o = attention_apply(c.drop(w), v, L);
  return linear(o, p[pre + ".wo"], p[pre + ".bo"]);
}

inline Var ffn(const Ctx& c, const std::string& pre, const Var& x) {
  const auto& p = c.p;
  Var h = c.drop(relu(linear(x, p[pre + ".w1"], p[pre + ".b1"])));
  return linear(h, p[pre + ".w2"], p[pre + ".b2"]);
}

inline Var norm(const Ctx& c, const std::string& pre, const Var& x) { return layer_norm(x, c.p[pre + ".g"], c.p[pre + ".b"]); }

}  // namespace detail

inline Encoded encode_batch(const ModelParams& p, const std::vector<std::vector<int>>& srcs, bool train, Rng* rng) {
  if (srcs.empty()) throw UsageError("encode: empty batch");
  if (train && !rng) throw UsageError("encode: training mode needs an rng");
  detail::Ctx c{p, train, rng};
  Encoded e;
  std::vector<std::size_t> pos;
  for (const auto& s : srcs) {
    if (s.empty()) throw UsageError("encode: empty source sequence");
    e.src_off.push_back(e.src_ids.size());
    e.src_len.push_back(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
      e.src_ids.push_back(s[i]);
      pos.push_back(i);
    }
  }
  const AttnLayout L = AttnLayout::build(e.src_len, e.src_len, false);
  Var x = detail::embed(c, "src_embed", e.src_ids, pos);
  for (int l = 0; l < p.cfg.n_layers_enc; ++l) {
    const std::string pre = "enc." + std::to_string(l);
    x = detail::norm(c, pre + ".ln1", add(x, c.drop(detail::mha(c, pre + ".self", x, x, L, nullptr))));
    x = detail::norm(c, pre + ".ln2", add(x, c.drop(detail::ffn(c, pre + ".ff", x))));
  }
  e.memory = detail::norm(c, "enc.norm", x);
  return e;
}

// Runs the decoder over prefixes[i], each attending to encoded sequence
// seq_of[i].  Output rows are either every position (last_only = false, in
// packed order) or the final position of each prefix.
inline DecoderOutput decode_batch(const ModelParams& p, const Encoded& enc, const std::vector<std::vector<int>>& prefixes,
                                  const std::vector<std::size_t>& seq_of, bool last_only, bool train, Rng* rng) {
  if (prefixes.empty()) throw UsageError("decode: empty batch");
  if (prefixes.size() != seq_of.size()) throw UsageError("decode: prefix/sequence count mismatch");
  if (train && !rng) throw UsageError("decode: training mode needs an rng");
  detail::Ctx c{p, train, rng};
  const std::size_t V = static_cast<std::size_t>(p.cfg.vocab_size);

  std::vector<int> ids;
  std::vector<std::size_t> pos, lens;
  std::vector<AttnSegment> cross_segs;
  DecoderOutput out;
  for (std::size_t i = 0; i < prefixes.size(); ++i) {
    const auto& pr = prefixes[i];
    if (pr.empty()) throw UsageError("decode: empty prefix");
    if (seq_of[i] >= enc.src_len.size()) throw UsageError("decode: sequence index out of range");
    cross_segs.push_back({ids.size(), pr.size(), enc.src_off[seq_of[i]], enc.src_len[seq_of[i]]});
    for (std::size_t t = 0; t < pr.size(); ++t) {
      ids.push_back(pr[t]);
      pos.push_back(t);
      if (!last_only || t + 1 == pr.size()) {
        out.rows.push_back(ids.size() - 1);
        out.row_seq.push_back(seq_of[i]);
      }
    }
    lens.push_back(pr.size());
  }
  const std::size_t nq = ids.size(), nk = enc.memory.shape()[0];
  const AttnLayout self_L = AttnLayout::build(lens, lens, true);
  const AttnLayout cross_L = AttnLayout::from_segments(cross_segs, nq, nk);

  Var x = detail::embed(c, "tgt_embed", ids, pos);
  Var cross_w;
  for (int l = 0; l < p.cfg.n_layers_dec; ++l) {
    const std::string pre = "dec." + std::to_string(l);
    x = detail::norm(c, pre + ".ln1", add(x, c.drop(detail::mha(c, pre + ".self", x, x, self_L, nullptr))));
    x = detail::norm(c, pre + ".ln2", add(x, c.drop(detail::mha(c, pre + ".cross", x, enc.memory, cross_L, &cross_w))));
    x = detail::norm(c, pre + ".ln3", add(x, c.drop(detail::ffn(c, pre + ".ff", x))));
  }
  Var h = detail::norm(c, "dec.norm", x);
  out.cross_weights = cross_w;
  const bool all_rows = out.rows.size() == nq;
  Var hs = all_rows ? h : gather_rows(h, out.rows);
  Var logits = linear(hs, p["out.w"], p["out.b"]);
  if (!p.cfg.use_copy) {
    out.dist = logits;
    return out;
  }
  // Pointer-generator head on the selected rows.
  Var avg = head_mean(cross_w);
  Var avg_s = all_rows ? avg : gather_rows(avg, out.rows);
  std::vector<AttnSegment> row_segs;
  for (std::size_t r = 0; r < out.rows.size(); ++r)
    row_segs.push_back({r, 1, enc.src_off[out.row_seq[r]], enc.src_len[out.row_seq[r]]});
  const AttnLayout row_L = AttnLayout::from_segments(row_segs, out.rows.size(), nk, cross_L.kmax);
  Var context = attention_apply(avg_s, enc.memory, row_L);
  out.p_gen = sigmoid(linear(concat_cols(hs, context), p["copy.w"], p["copy.b"]));
  Var gen = softmax(logits, 1);
  Var cp = copy_scatter(avg_s, row_L, enc.src_ids, V);
  out.dist = gate_mix(out.p_gen, gen, cp);
  out.is_prob = true;
  return out;
}

// ---------------------------------------------------------------------------
// Single-sequence interface.

struct StepDistribution {
  std::vector<double> probs;                   // [V]
  std::vector<std::vector<double>> attention;  // [heads][src_len], final decoder layer cross-attention
  std::optional<double> p_gen;
};

inline Tensor encode(const ModelParams& p, const std::vector<int>& src, bool train_mode, Rng* rng) {
  NoGradGuard ng;
  return encode_batch(p, {src}, train_mode, rng).memory.value();
}

// Extracts the step distribution of selected row r from a decoder output.
inline StepDistribution step_distribution(const ModelParams& p, const Encoded& enc, const DecoderOutput& o, std::size_t r) {
  const std::size_t V = static_cast<std::size_t>(p.cfg.vocab_size);
  StepDistribution s;
  s.probs.assign(o.dist.value().data() + r * V, o.dist.value().data() + (r + 1) * V);
  if (!o.is_prob) {
    double mx = s.probs[0];
    for (double v : s.probs) mx = std::max(mx, v);
    double z = 0.0;
    for (auto& v : s.probs) z += (v = std::exp(v - mx));
    for (auto& v : s.probs) v /= z;
  }
  const auto& w = o.cross_weights.value();
  const std::size_t H = w.shape()[0], nq = w.shape()[1], km = w.shape()[2];
  const std::size_t row = o.rows[r], len = enc.src_len[o.row_seq[r]];
  s.attention.assign(H, std::vector<double>(len));
  for (std::size_t h = 0; h < H; ++h)
    for (std::size_t j = 0; j < len; ++j) s.attention[h][j] = w[(h * nq + row) * km + j];
  if (o.p_gen.defined()) s.p_gen = o.p_gen.value()[r];
  return s;
}

inline StepDistribution decode_step(const ModelParams& p, const Tensor& memory, const std::vector<int>& src,
                                    const std::vector<int>& prefix, bool train_mode, Rng* rng) {
  if (prefix.empty()) throw UsageError("decode_step: empty prefix");
  if (memory.rank() != 2 || memory.shape()[0] != src.size())
    throw ShapeError("decode_step: memory rows must match the source length");
  NoGradGuard ng;
  Encoded enc;
  enc.memory = Var(memory);
  enc.src_ids = src;
  enc.src_off = {0};
  enc.src_len = {src.size()};
  DecoderOutput o = decode_batch(p, enc, {prefix}, {0}, true, train_mode, rng);
  return step_distribution(p, enc, o, 0);
}

// out[w] = p_gen * gen[w] + (1 - p_gen) * sum_{i : src[i] = w} attention[i]
inline std::vector<double> pointer_mix(const std::vector<double>& gen, const std::vector<double>& attention,
                                       const std::vector<int>& src, double p_gen) {
  if (attention.size() != src.size()) throw ShapeError("pointer_mix: attention/source length mismatch");
  if (!(p_gen >= 0.0 && p_gen <= 1.0)) throw UsageError("pointer_mix: p_gen outside [0, 1]");
  std::vector<double> out(gen.size());
  for (std::size_t w = 0; w < gen.size(); ++w) out[w] = p_gen * gen[w];
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (src[i] < 0 || static_cast<std::size_t>(src[i]) >= gen.size()) throw DataError("pointer_mix: source id outside vocabulary");
    out[static_cast<std::size_t>(src[i])] += (1.0 - p_gen) * attention[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Teacher-forced loss.

struct Example {
  std::vector<int> src;
  std::vector<int> tgt;  // Start ... End, optionally followed by Pad
};

// Mean token negative log-likelihood over all non-pad target positions in
// the batch.  Trailing padding is ignored, so pad-extending a batch does not
// change the loss.
inline Var forward_loss(const ModelParams& p, const std::vector<Example>& batch, Rng* rng, bool train = true) {
  if (batch.empty()) throw UsageError("forward_loss: empty batch");
  std::vector<std::vector<int>> srcs, prefixes;
  std::vector<int> targets;
  std::vector<std::size_t> seq_of;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    auto strip = [](std::vector<int> v) {
      while (!v.empty() && v.back() == kPad) v.pop_back();
      return v;
    };
    std::vector<int> src = strip(batch[i].src), tgt = strip(batch[i].tgt);
    if (tgt.size() < 2 || tgt.front() != kStart) throw UsageError("forward_loss: target must start with Start and hold a token");
    srcs.push_back(std::move(src));
    prefixes.emplace_back(tgt.begin(), tgt.end() - 1);
    targets.insert(targets.end(), tgt.begin() + 1, tgt.end());
    seq_of.push_back(i);
  }
  Encoded enc = encode_batch(p, srcs, train, rng);
  DecoderOutput o = decode_batch(p, enc, prefixes, seq_of, false, train, rng);
  return o.is_prob ? nll_from_probs(o.dist, targets, kPad) : cross_entropy(o.dist, targets, kPad);
}

}  // namespace pasttense

#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "pasttense/errors.hpp"
#include "pasttense/model.hpp"
#include "pasttense/phonology.hpp"
#include "pasttense/rng.hpp"

namespace pasttense {

enum class Regularity { reg, irreg };
enum class VerbClass { d, t, id, vc, vc_t, vc_d, ruck, weak, level, other };
enum class DatasetKind { type_reg, type_irr, token_both, token_irr };
enum class LabelScheme { base, label_reg, label_vc, label_2 };
enum class ResampleMethod { none, balance, reg_ds, irreg_ds };

inline constexpr double kParentsIrregularRatio = 0.726;
inline constexpr double kTokenBothIrregularRatio = 0.313;

inline const std::vector<VerbClass>& all_verb_classes() {
  static const std::vector<VerbClass> v{VerbClass::d,    VerbClass::t,    VerbClass::id,    VerbClass::vc,   VerbClass::vc_t,
                                        VerbClass::vc_d, VerbClass::ruck, VerbClass::weak, VerbClass::level, VerbClass::other};
  return v;
}

inline std::string to_string(Regularity r) { return r == Regularity::reg ? "reg" : "irreg"; }

inline std::string to_string(VerbClass c) {
  switch (c) {
    case VerbClass::d: return "d";
    case VerbClass::t: return "t";
    case VerbClass::id: return "id";
    case VerbClass::vc: return "vc";
    case VerbClass::vc_t: return "vc_t";
    case VerbClass::vc_d: return "vc_d";
    case VerbClass::ruck: return "ruck";
    case VerbClass::weak: return "weak";
    case VerbClass::level: return "level";
    case VerbClass::other: return "other";
  }
  return "?";
}

inline std::string to_string(DatasetKind k) {
  switch (k) {
    case DatasetKind::type_reg: return "type_reg";
    case DatasetKind::type_irr: return "type_irr";
    case DatasetKind::token_both: return "token_both";
    case DatasetKind::token_irr: return "token_irr";
  }
  return "?";
}

inline std::string to_string(LabelScheme s) {
  switch (s) {
    case LabelScheme::base: return "base";
    case LabelScheme::label_reg: return "label_reg";
    case LabelScheme::label_vc: return "label_vc";
    case LabelScheme::label_2: return "label_2";
  }
  return "?";
}

inline std::string to_string(ResampleMethod m) {
  switch (m) {
    case ResampleMethod::none: return "none";
    case ResampleMethod::balance: return "balance";
    case ResampleMethod::reg_ds: return "reg_ds";
    case ResampleMethod::irreg_ds: return "irreg_ds";
  }
  return "?";
}

template <class E>
E parse_enum(const std::string& s, const char* what);

template <>
inline Regularity parse_enum<Regularity>(const std::string& s, const char* what) {
  if (s == "reg") return Regularity::reg;
  if (s == "irreg") return Regularity::irreg;
  throw DataError(std::string("unknown ") + what + " '" + s + "'");
}
template <>
inline VerbClass parse_enum<VerbClass>(const std::string& s, const char* what) {
  for (auto c : all_verb_classes())
    if (to_string(c) == s) return c;
  throw DataError(std::string("unknown ") + what + " '" + s + "'");
}
template <>
inline DatasetKind parse_enum<DatasetKind>(const std::string& s, const char* what) {
  for (auto k : {DatasetKind::type_reg, DatasetKind::type_irr, DatasetKind::token_both, DatasetKind::token_irr})
    if (to_string(k) == s) return k;
  throw ConfigError(std::string("unknown ") + what + " '" + s + "'");
}
template <>
inline LabelScheme parse_enum<LabelScheme>(const std::string& s, const char* what) {
  for (auto k : {LabelScheme::base, LabelScheme::label_reg, LabelScheme::label_vc, LabelScheme::label_2})
    if (to_string(k) == s) return k;
  throw ConfigError(std::string("unknown ") + what + " '" + s + "'");
}
template <>
inline ResampleMethod parse_enum<ResampleMethod>(const std::string& s, const char* what) {
  for (auto k : {ResampleMethod::none, ResampleMethod::balance, ResampleMethod::reg_ds, ResampleMethod::irreg_ds})
    if (to_string(k) == s) return k;
  throw ConfigError(std::string("unknown ") + what + " '" + s + "'");
}

inline bool is_regular_class(VerbClass c) { return c == VerbClass::d || c == VerbClass::t || c == VerbClass::id; }

// Output label tokens as they appear in target sequences.
inline std::string class_token(VerbClass c) {
  switch (c) {
    case VerbClass::d: return "+d";
    case VerbClass::t: return "+t";
    case VerbClass::id: return "+ɪd";
    case VerbClass::vc_t: return "vc+t";
    case VerbClass::vc_d: return "vc+d";
    default: return to_string(c);
  }
}
inline std::string regularity_token(Regularity r) { return to_string(r); }

inline bool scheme_has_regularity(LabelScheme s) { return s == LabelScheme::label_reg || s == LabelScheme::label_2; }
inline bool scheme_has_class(LabelScheme s) { return s == LabelScheme::label_vc || s == LabelScheme::label_2; }
inline std::size_t scheme_label_count(LabelScheme s) {
  return static_cast<std::size_t>(scheme_has_regularity(s)) + static_cast<std::size_t>(scheme_has_class(s));
}

// ---------------------------------------------------------------------------

struct PastForm {
  Phonemes form;
  Regularity regularity = Regularity::reg;
  VerbClass verb_class = VerbClass::d;
  long long freq = 0;
};

struct VerbEntry {
  std::string lemma;
  Phonemes stem;
  std::vector<PastForm> pasts;

  bool ambiguous() const { return pasts.size() > 1; }
  long long celex_freq() const {
    long long f = 0;
    for (auto& p : pasts) f += p.freq;
    return f;
  }
  bool has(Regularity r) const {
    for (auto& p : pasts)
      if (p.regularity == r) return true;
    return false;
  }
  // Index of the first past with the given regularity, or 0.
  std::size_t past_index(Regularity r) const {
    for (std::size_t i = 0; i < pasts.size(); ++i)
      if (pasts[i].regularity == r) return i;
    return 0;
  }
  // Regularity used for reporting: ambiguous verbs count as irregular.
  Regularity report_regularity() const { return has(Regularity::irreg) ? Regularity::irreg : Regularity::reg; }
  const PastForm& report_past() const { return pasts[past_index(report_regularity())]; }
};

struct LexiconStats {
  std::size_t entries = 0, regular = 0, irregular = 0, ambiguous = 0;
  std::map<VerbClass, std::size_t> classes;  // ambiguous verbs counted under their irregular reading
};

inline LexiconStats lexicon_stats(const std::vector<VerbEntry>& entries) {
  LexiconStats s;
  s.entries = entries.size();
  for (auto& e : entries) {
    if (e.ambiguous()) ++s.ambiguous;
    else if (e.pasts[0].regularity == Regularity::reg) ++s.regular;
    else ++s.irregular;
    ++s.classes[e.report_past().verb_class];
  }
  return s;
}

namespace detail {
inline std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto tab = line.find('\t', start);
    out.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return out;
}

inline Phonemes checked_ipa(const std::string& s, const Inventory& inv, const std::string& where) {
  Phonemes p = split_ipa(s);
  for (auto& seg : p)
    if (!inv.contains(seg)) throw DataError(where + ": unknown phoneme '" + seg + "'");
  return p;
}

inline std::vector<std::string> read_lines(const std::string& path, const char* what) {
  std::ifstream in(path);
  if (!in) throw DataError(std::string("cannot open ") + what + " " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}
}  // namespace detail

inline std::vector<VerbEntry> parse_lexicon(const std::vector<std::string>& lines, const std::string& origin,
                                            const Inventory& inv = Inventory::standard()) {
  std::vector<VerbEntry> entries;
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string where = origin + ":" + std::to_string(i + 1);
    const std::string& line = lines[i];
    if (line.empty()) continue;
    auto f = detail::split_tabs(line);
    if (i == 0 && !f.empty() && f[0] == "lemma_orth") continue;
    if (f.size() != 6) throw DataError(where + ": expected 6 tab-separated fields, got " + std::to_string(f.size()));
    PastForm past;
    Phonemes stem = detail::checked_ipa(f[1], inv, where);
    past.form = detail::checked_ipa(f[2], inv, where);
    if (stem.empty() || past.form.empty()) throw DataError(where + ": empty stem or past form");
    past.regularity = parse_enum<Regularity>(f[3], "regularity");
    past.verb_class = parse_enum<VerbClass>(f[4], "verb class");
    try {
      std::size_t used = 0;
      past.freq = std::stoll(f[5], &used);
      if (used != f[5].size() || past.freq < 0) throw std::invalid_argument("freq");
    } catch (const std::exception&) {
      throw DataError(where + ": malformed frequency '" + f[5] + "'");
    }
    if (is_regular_class(past.verb_class) != (past.regularity == Regularity::reg))
      throw DataError(where + ": verb class " + f[4] + " inconsistent with regularity " + f[3]);
    if (past.regularity == Regularity::reg && past.form != regular_past(stem, inv))
      throw DataError(where + ": regular past of " + f[0] + " is not stem + conditioned suffix");
    auto it = index.find(f[0]);
    if (it == index.end()) {
      index[f[0]] = entries.size();
      entries.push_back({f[0], stem, {past}});
    } else {
      auto& e = entries[it->second];
      if (e.stem != stem) throw DataError(where + ": second row for " + f[0] + " has a different stem");
      if (e.pasts.size() >= 2) throw DataError(where + ": more than two past forms for " + f[0]);
      if (e.pasts[0].regularity == past.regularity) throw DataError(where + ": ambiguous verb " + f[0] + " needs one regular and one irregular row");
      e.pasts.push_back(past);
    }
  }
  return entries;
}

inline std::vector<VerbEntry> load_lexicon(const std::string& path, const Inventory& inv = Inventory::standard()) {
  return parse_lexicon(detail::read_lines(path, "lexicon"), path, inv);
}

inline std::vector<std::string> load_test_set(const std::string& path) {
  std::vector<std::string> out;
  for (auto& l : detail::read_lines(path, "test-set file")) {
    auto a = l.find_first_not_of(" \t"), b = l.find_last_not_of(" \t");
    if (a == std::string::npos || l[a] == '#') continue;
    out.push_back(l.substr(a, b - a + 1));
  }
  return out;
}

// Splits the lexicon into (test entries in file order, remaining entries).
inline std::pair<std::vector<VerbEntry>, std::vector<VerbEntry>> partition_test(const std::vector<VerbEntry>& entries,
                                                                                  const std::vector<std::string>& test_lemmas) {
  std::map<std::string, std::size_t> pos;
  for (std::size_t i = 0; i < entries.size(); ++i) pos[entries[i].lemma] = i;
  std::set<std::string> test;
  std::vector<VerbEntry> t, rest;
  for (auto& l : test_lemmas) {
    auto it = pos.find(l);
    if (it == pos.end()) throw DataError("test verb '" + l + "' not found in lexicon");
    if (!test.insert(l).second) throw DataError("test verb '" + l + "' listed twice");
    t.push_back(entries[it->second]);
  }
  for (auto& e : entries)
    if (!test.count(e.lemma)) rest.push_back(e);
  return {t, rest};
}

// ---------------------------------------------------------------------------

class Vocab {
 public:
  static constexpr const char* kPadToken = "<pad>";
  static constexpr const char* kStartToken = "<s>";
  static constexpr const char* kEndToken = "</s>";

  Vocab() { tokens_ = {kPadToken, kStartToken, kEndToken}; reindex(); }
  explicit Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    if (tokens_.size() < 3 || tokens_[0] != kPadToken || tokens_[1] != kStartToken || tokens_[2] != kEndToken)
      throw DataError("vocabulary must begin with the reserved pad/start/end tokens");
    reindex();
  }

  int id(const std::string& tok) const {
    auto it = ids_.find(tok);
    if (it == ids_.end()) throw DataError("token '" + tok + "' not in vocabulary");
    return it->second;
  }
  bool contains(const std::string& tok) const { return ids_.count(tok) > 0; }
  const std::string& token(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) throw DataError("token id " + std::to_string(id) + " out of range");
    return tokens_[static_cast<std::size_t>(id)];
  }
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::vector<int> encode(const Phonemes& p) const {
    std::vector<int> out;
    for (auto& s : p) out.push_back(id(s));
    return out;
  }
  Phonemes decode(const std::vector<int>& ids) const {
    Phonemes out;
    for (int i : ids) out.push_back(token(i));
    return out;
  }

  bool is_label(int id) const { return label_ids_.count(id) > 0; }
  void mark_labels(const std::set<std::string>& labels) {
    for (auto& l : labels)
      if (contains(l)) label_ids_.insert(id(l));
  }

  bool operator==(const Vocab& o) const { return tokens_ == o.tokens_; }

 private:
  void reindex() {
    ids_.clear();
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      if (!ids_.emplace(tokens_[i], static_cast<int>(i)).second) throw DataError("duplicate vocabulary token '" + tokens_[i] + "'");
    }
  }
  std::vector<std::string> tokens_;
  std::map<std::string, int> ids_;
  std::set<int> label_ids_;
};

inline std::set<std::string> all_label_tokens() {
  std::set<std::string> s{regularity_token(Regularity::reg), regularity_token(Regularity::irreg)};
  for (auto c : all_verb_classes()) s.insert(class_token(c));
  return s;
}

// Reserved tokens first, then every phoneme and requested label token in
// code-point order (UTF-8 byte order coincides with code-point order).
inline Vocab build_vocab(const std::vector<VerbEntry>& entries, const std::vector<LabelScheme>& schemes,
                         const std::vector<Phonemes>& extra = {}) {
  std::set<std::string> toks;
  for (auto& e : entries) {
    toks.insert(e.stem.begin(), e.stem.end());
    for (auto& p : e.pasts) toks.insert(p.form.begin(), p.form.end());
  }
  for (auto& p : extra) toks.insert(p.begin(), p.end());
  for (auto s : schemes) {
    if (scheme_has_regularity(s)) {
      toks.insert(regularity_token(Regularity::reg));
      toks.insert(regularity_token(Regularity::irreg));
    }
    if (scheme_has_class(s))
      for (auto c : all_verb_classes()) toks.insert(class_token(c));
  }
  std::vector<std::string> list{Vocab::kPadToken, Vocab::kStartToken, Vocab::kEndToken};
  list.insert(list.end(), toks.begin(), toks.end());
  Vocab v(list);
  v.mark_labels(all_label_tokens());
  return v;
}

inline std::vector<std::string> label_tokens_for(const PastForm& past, LabelScheme scheme) {
  std::vector<std::string> out;
  if (scheme_has_regularity(scheme)) out.push_back(regularity_token(past.regularity));
  if (scheme_has_class(scheme)) out.push_back(class_token(past.verb_class));
  return out;
}

inline std::vector<int> encode_source(const Phonemes& stem, const Vocab& v) {
  std::vector<int> in{kStart};
  for (int id : v.encode(stem)) in.push_back(id);
  in.push_back(kEnd);
  return in;
}

inline std::pair<std::vector<int>, std::vector<int>> encode_example(const VerbEntry& e, std::size_t past_index,
                                                                    LabelScheme scheme, const Vocab& v) {
  if (past_index >= e.pasts.size()) throw UsageError("encode_example: past index out of range for " + e.lemma);
  const PastForm& p = e.pasts[past_index];
  std::vector<int> out{kStart};
  for (auto& l : label_tokens_for(p, scheme)) out.push_back(v.id(l));
  for (int id : v.encode(p.form)) out.push_back(id);
  out.push_back(kEnd);
  return {encode_source(e.stem, v), out};
}

// ---------------------------------------------------------------------------

struct TrainItem {
  std::size_t entry = 0;  // index into the entry list the set was built from
  std::size_t past = 0;
  bool operator==(const TrainItem&) const = default;
};

struct TrainingSet {
  DatasetKind kind = DatasetKind::type_irr;
  std::vector<TrainItem> items;
};

struct SetStats {
  std::size_t total = 0, regular = 0, irregular = 0, types = 0;
  double irregular_pct() const { return total ? 100.0 * static_cast<double>(irregular) / static_cast<double>(total) : 0.0; }
  double regular_pct() const { return total ? 100.0 * static_cast<double>(regular) / static_cast<double>(total) : 0.0; }
};

inline SetStats set_stats(const TrainingSet& s, const std::vector<VerbEntry>& entries) {
  SetStats st;
  std::set<std::size_t> types;
  for (auto& it : s.items) {
    ++st.total;
    types.insert(it.entry);
    (entries[it.entry].pasts[it.past].regularity == Regularity::irreg ? st.irregular : st.regular)++;
  }
  st.types = types.size();
  return st;
}

// Builds a dataset from entries that already exclude the test verbs.
//   type_reg   - every verb once; ambiguous verbs take their regular past
//   type_irr   - every verb once; ambiguous verbs take their irregular past
//   token_both - every past form repeated by its corpus frequency
//   token_irr  - irregular pasts repeated by frequency, regular pasts once
inline TrainingSet build_training_set(const std::vector<VerbEntry>& entries, DatasetKind kind) {
  TrainingSet s;
  s.kind = kind;
  const bool token = kind == DatasetKind::token_both || kind == DatasetKind::token_irr;
  if (token) {
    bool any = false;
    for (auto& e : entries) any = any || e.celex_freq() > 0;
    if (!any && !entries.empty()) throw DataError(to_string(kind) + " needs corpus frequencies but every frequency is zero");
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    switch (kind) {
      case DatasetKind::type_reg:
        s.items.push_back({i, e.has(Regularity::reg) ? e.past_index(Regularity::reg) : 0});
        break;
      case DatasetKind::type_irr:
        s.items.push_back({i, e.has(Regularity::irreg) ? e.past_index(Regularity::irreg) : 0});
        break;
      case DatasetKind::token_both:
        for (std::size_t p = 0; p < e.pasts.size(); ++p)
          for (long long k = 0; k < e.pasts[p].freq; ++k) s.items.push_back({i, p});
        break;
      case DatasetKind::token_irr:
        for (std::size_t p = 0; p < e.pasts.size(); ++p) {
          const long long n = e.pasts[p].regularity == Regularity::irreg ? e.pasts[p].freq : 1;
          for (long long k = 0; k < n; ++k) s.items.push_back({i, p});
        }
        break;
    }
  }
  return s;
}

// Verb-type split, stratified by regularity (a verb with any irregular item
// in the set belongs to the irregular stratum).  Every stratum but the
// largest keeps floor(n * (1 - f)) types for training; the largest stratum
// receives the remainder of floor(N * (1 - f)) so the overall train count is
// floor(N * (1 - f)).
inline std::pair<TrainingSet, TrainingSet> split_train_dev(const TrainingSet& set, const std::vector<VerbEntry>& entries,
                                                           double dev_fraction, const Rng& rng_in) {
  if (!(dev_fraction > 0.0 && dev_fraction < 1.0)) throw SplitError("dev_fraction must lie strictly between 0 and 1");
  std::map<std::size_t, Regularity> stratum;
  for (auto& it : set.items) {
    auto r = entries[it.entry].pasts[it.past].regularity;
    auto [pos, fresh] = stratum.emplace(it.entry, r);
    if (!fresh && r == Regularity::irreg) pos->second = Regularity::irreg;
  }
  std::vector<std::size_t> groups[2];
  for (auto& [e, r] : stratum) groups[r == Regularity::irreg].push_back(e);
  const std::size_t N = stratum.size();
  const double keep = 1.0 - dev_fraction;
  // Guard against representation error (e.g. 0.9 * 3959 = 3563.0999...).
  auto floor_keep = [keep](std::size_t n) {
    return static_cast<std::size_t>(std::floor(static_cast<double>(n) * keep + 1e-9));
  };
  const std::size_t largest = groups[1].size() > groups[0].size() ? 1 : 0;
  std::size_t n_train[2];
  n_train[1 - largest] = floor_keep(groups[1 - largest].size());
  n_train[largest] = floor_keep(N) - n_train[1 - largest];
  std::set<std::size_t> train_entries;
  Rng rng = rng_in.substream("split");
  for (int g = 0; g < 2; ++g) {
    if (groups[g].empty()) continue;
    if (groups[g].size() < 2)
      throw SplitError("stratum '" + to_string(g ? Regularity::irreg : Regularity::reg) + "' has fewer than 2 verbs");
    if (n_train[g] == 0 || n_train[g] >= groups[g].size())
      throw SplitError("stratum '" + to_string(g ? Regularity::irreg : Regularity::reg) + "' leaves an empty side");
    auto v = groups[g];
    rng.shuffle(v);
    train_entries.insert(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(n_train[g]));
  }
  TrainingSet train{set.kind, {}}, dev{set.kind, {}};
  for (auto& it : set.items) (train_entries.count(it.entry) ? train : dev).items.push_back(it);
  return {train, dev};
}

// Regular-type count that realises a target irregular ratio for a fixed
// irregular count (printed 48 and 283 for 129 irregulars; the floor
// reproduces both).
inline std::size_t resample_regular_target(ResampleMethod m, std::size_t n_irr) {
  switch (m) {
    case ResampleMethod::balance: return n_irr;
    case ResampleMethod::reg_ds:
      return static_cast<std::size_t>(std::floor(static_cast<double>(n_irr) * (1.0 - kParentsIrregularRatio) / kParentsIrregularRatio));
    case ResampleMethod::irreg_ds:
      return static_cast<std::size_t>(std::floor(static_cast<double>(n_irr) * (1.0 - kTokenBothIrregularRatio) / kTokenBothIrregularRatio));
    case ResampleMethod::none: break;
  }
  throw UsageError("resample_regular_target: method 'none' has no target");
}

// One epoch of a resampled type-based training set: all irregular items plus
// a fresh sample (without replacement) of regular items.
inline std::vector<TrainItem> resample_epoch(const TrainingSet& train, const std::vector<VerbEntry>& entries,
                                             ResampleMethod method, const Rng& epoch_rng) {
  if (method == ResampleMethod::none) return train.items;
  if (train.kind != DatasetKind::type_irr && train.kind != DatasetKind::type_reg)
    throw ResampleError("resampling applies to type-based sets, got " + to_string(train.kind));
  std::vector<TrainItem> irr, reg;
  for (auto& it : train.items)
    (entries[it.entry].pasts[it.past].regularity == Regularity::irreg ? irr : reg).push_back(it);
  const std::size_t target = resample_regular_target(method, irr.size());
  if (target > reg.size())
    throw ResampleError("resample target " + std::to_string(target) + " exceeds " + std::to_string(reg.size()) + " available regulars");
  Rng rng = epoch_rng.substream("resample");
  // Partial Fisher-Yates: the first `target` positions form the sample.
  for (std::size_t i = 0; i < target; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(reg.size() - i));
    std::swap(reg[i], reg[j]);
  }
  std::vector<TrainItem> out = irr;
  out.insert(out.end(), reg.begin(), reg.begin() + static_cast<std::ptrdiff_t>(target));
  return out;
}

// ---------------------------------------------------------------------------

struct NonceVerb {
  Phonemes stem;
  Phonemes reg_form;
  std::vector<Phonemes> irr_forms;                 // 1 or 2
  std::vector<std::optional<double>> human_ppro;   // [reg, irr1, irr2]
  std::vector<std::optional<double>> human_rating; // [reg, irr1, irr2]
};

inline std::vector<NonceVerb> parse_nonce(const std::vector<std::string>& lines, const std::string& origin,
                                          const Inventory& inv = Inventory::standard(), std::ostream* warn = &std::cerr) {
  std::vector<NonceVerb> out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string where = origin + ":" + std::to_string(i + 1);
    if (lines[i].empty()) continue;
    auto f = detail::split_tabs(lines[i]);
    if (i == 0 && f[0] == "verb_ipa") continue;
    if (f.size() != 10) throw DataError(where + ": expected 10 tab-separated fields, got " + std::to_string(f.size()));
    NonceVerb v;
    v.stem = detail::checked_ipa(f[0], inv, where);
    v.reg_form = detail::checked_ipa(f[1], inv, where);
    if (v.stem.empty() || v.reg_form.empty()) throw DataError(where + ": empty stem or regular form");
    for (int k : {2, 3}) {
      Phonemes p = detail::checked_ipa(f[static_cast<std::size_t>(k)], inv, where);
      if (!p.empty()) v.irr_forms.push_back(p);
      else if (k == 2) throw DataError(where + ": missing first irregular form");
    }
    std::set<Phonemes> distinct{v.reg_form};
    for (auto& p : v.irr_forms)
      if (!distinct.insert(p).second) throw DataError(where + ": duplicate past forms");
    auto num = [&](const std::string& s, bool prob) -> std::optional<double> {
      if (s.empty()) return std::nullopt;
      try {
        std::size_t used = 0;
        double x = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        if (prob && (x < 0.0 || x > 1.0)) throw DataError(where + ": production probability outside [0,1]");
        return x;
      } catch (const DataError&) {
        throw;
      } catch (const std::exception&) {
        throw DataError(where + ": malformed number '" + s + "'");
      }
    };
    for (int k = 4; k < 7; ++k) v.human_ppro.push_back(num(f[static_cast<std::size_t>(k)], true));
    for (int k = 7; k < 10; ++k) v.human_rating.push_back(num(f[static_cast<std::size_t>(k)], false));
    out.push_back(std::move(v));
  }
  std::size_t two = 0;
  for (auto& v : out) two += v.irr_forms.size() == 2;
  if (warn && (out.size() != 58 || two != 16))
    *warn << "warning: nonce file " << origin << " has " << out.size() << " verbs (" << two
          << " with two irregular forms); the full set has 58 (16)\n";
  return out;
}

inline std::vector<NonceVerb> load_nonce(const std::string& path, const Inventory& inv = Inventory::standard(),
                                         std::ostream* warn = &std::cerr) {
  return parse_nonce(detail::read_lines(path, "nonce file"), path, inv, warn);
}

}  // namespace pasttense

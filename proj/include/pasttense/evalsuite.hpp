#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "pasttense/errors.hpp"
#include "pasttense/lexicon.hpp"
#include "pasttense/phonology.hpp"

namespace pasttense {

struct Prediction {
  const VerbEntry* verb = nullptr;
  Phonemes predicted;
  std::vector<std::string> labels;
  bool malformed = false;
  int seed = 0;
  std::string model_id;
};

inline bool is_correct(const VerbEntry& verb, const Phonemes& predicted) {
  for (auto& p : verb.pasts)
    if (p.form == predicted) return true;
  return false;
}

inline bool is_correct(const Prediction& p) {
  if (!p.verb) throw UsageError("is_correct: prediction without a verb");
  return !p.malformed && is_correct(*p.verb, p.predicted);
}

// ---------------------------------------------------------------------------
// Accuracy tables.

enum class GroupBy { regularity, verb_class };

struct AccuracyRow {
  std::string group;             // "reg"/"irreg" or a verb-class name
  std::vector<double> per_seed;  // accuracy percent, in seed order
  std::size_t items = 0;         // verbs in the group
  double mean() const {
    if (per_seed.empty()) return 0.0;
    double s = 0.0;
    for (double v : per_seed) s += v;
    return s / static_cast<double>(per_seed.size());
  }
};

struct AccuracyTable {
  std::string model_id;
  std::vector<int> seeds;
  std::vector<AccuracyRow> rows;

  const AccuracyRow& row(const std::string& group) const {
    for (auto& r : rows)
      if (r.group == group) return r;
    throw UsageError("accuracy table " + model_id + " has no row " + group);
  }
  bool has_row(const std::string& group) const {
    for (auto& r : rows)
      if (r.group == group) return true;
    return false;
  }
};

inline std::string group_key(const VerbEntry& v, GroupBy g) {
  return g == GroupBy::regularity ? to_string(v.report_regularity()) : to_string(v.report_past().verb_class);
}

// preds_by_seed: for each seed, one prediction per test verb.  Ambiguous
// verbs are reported under their irregular reading and accept either form.
inline AccuracyTable accuracy_table(const std::string& model_id, const std::map<int, std::vector<Prediction>>& preds_by_seed,
                                    const std::vector<VerbEntry>& test, GroupBy group_by) {
  AccuracyTable t;
  t.model_id = model_id;
  std::vector<std::string> order;
  std::map<std::string, std::size_t> sizes;
  if (group_by == GroupBy::regularity) order = {"reg", "irreg"};
  else
    for (auto c : all_verb_classes()) order.push_back(to_string(c));
  for (auto& v : test) ++sizes[group_key(v, group_by)];
  for (auto& g : order)
    if (sizes.count(g)) t.rows.push_back({g, {}, sizes[g]});
  for (auto& [seed, preds] : preds_by_seed) {
    t.seeds.push_back(seed);
    std::map<std::string, const Prediction*> by_lemma;
    for (auto& p : preds) {
      if (!p.verb) throw ScoringError("prediction without a verb");
      by_lemma[p.verb->lemma] = &p;
    }
    std::map<std::string, std::size_t> right;
    for (auto& v : test) {
      auto it = by_lemma.find(v.lemma);
      if (it == by_lemma.end()) throw ScoringError("missing prediction for verb '" + v.lemma + "' (seed " + std::to_string(seed) + ")");
      if (is_correct(*it->second)) ++right[group_key(v, group_by)];
    }
    for (auto& r : t.rows)
      r.per_seed.push_back(100.0 * static_cast<double>(right[r.group]) / static_cast<double>(r.items));
  }
  return t;
}

// ---------------------------------------------------------------------------
// Error taxonomy.

enum class ErrorClass { classification, inflection, copy, creative, double_suffix };

inline const std::vector<ErrorClass>& all_error_classes() {
  static const std::vector<ErrorClass> v{ErrorClass::classification, ErrorClass::inflection, ErrorClass::copy,
                                         ErrorClass::creative, ErrorClass::double_suffix};
  return v;
}

inline std::string to_string(ErrorClass e) {
  switch (e) {
    case ErrorClass::classification: return "classification";
    case ErrorClass::inflection: return "inflection";
    case ErrorClass::copy: return "copy";
    case ErrorClass::creative: return "creative";
    case ErrorClass::double_suffix: return "double_suffix";
  }
  return "?";
}

namespace detail {

// Number of vowel substitutions aligning x to stem, or -1 when the alignment
// needs anything else (length change or a consonant edit).
inline int vowel_changes(const Phonemes& stem, const Phonemes& x, const Inventory& inv) {
  if (x.size() != stem.size()) return -1;
  int n = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] == stem[i]) continue;
    if (!inv.contains(x[i]) || !inv.is_vowel(x[i]) || !inv.is_vowel(stem[i])) return -1;
    ++n;
  }
  return n;
}

inline bool stem_preserving(const Phonemes& stem, const Phonemes& x, const Inventory& inv) { return vowel_changes(stem, x, inv) >= 0; }

inline bool ends_with(const Phonemes& x, const Phonemes& suffix) {
  return x.size() >= suffix.size() && std::equal(suffix.begin(), suffix.end(), x.end() - static_cast<std::ptrdiff_t>(suffix.size()));
}

inline Phonemes drop_back(const Phonemes& x, std::size_t n) { return Phonemes(x.begin(), x.end() - static_cast<std::ptrdiff_t>(n)); }

inline const std::vector<Phonemes>& dental_suffixes() {
  static const std::vector<Phonemes> s{{"d"}, {"t"}, {"ɪ", "d"}};
  return s;
}

inline bool is_double_suffix(const Phonemes& stem, const Phonemes& pred, bool irregular, const Inventory& inv) {
  for (auto& s2 : dental_suffixes()) {
    if (!ends_with(pred, s2)) continue;
    const Phonemes a = drop_back(pred, s2.size());
    for (auto& s1 : dental_suffixes())
      if (ends_with(a, s1) && stem_preserving(stem, drop_back(a, s1.size()), inv)) return true;
  }
  // A d/t-final stem whose vowel-changed form carries /ɪd/: the stem-final
  // dental already realises one past marking (abide -> əbidɪd).
  if (irregular && !stem.empty() && (stem.back() == "d" || stem.back() == "t") && ends_with(pred, {"ɪ", "d"})) {
    const int vc = vowel_changes(stem, drop_back(pred, 2), inv);
    if (vc >= 1) return true;
  }
  return false;
}

// True when x is obtainable from stem by deleting at least one segment and
// substituting vowels for vowels, with nothing inserted.
inline bool truncation_of(const Phonemes& stem, const Phonemes& x, const Inventory& inv) {
  if (x.size() >= stem.size()) return false;
  auto ok = [&inv](const std::string& a, const std::string& b) {
    return a == b || (inv.contains(a) && inv.contains(b) && inv.is_vowel(a) && inv.is_vowel(b));
  };
  // reach[j]: x[0..j) aligned to a prefix of stem processed so far.
  std::vector<char> reach(x.size() + 1, 0);
  reach[0] = 1;
  for (std::size_t i = 0; i < stem.size(); ++i)
    for (std::size_t j = x.size(); j-- > 0;)
      if (reach[j] && ok(stem[i], x[j])) reach[j + 1] = 1;
  return reach[x.size()] != 0;
}

}  // namespace detail

// Deterministic stand-in for manual error annotation.  Precedence:
//  1. double_suffix: pred = X + s1 + s2, s1, s2 in {d, t, ɪd}, X stem-preserving
//     (and, for irregulars, a d/t-final vowel-changed stem + ɪd);
//  2. regular verb: inflection = stem + wrong allomorph; classification =
//     irregular-style output (stem-preserving, optionally vowel-changed + t/d);
//     copy otherwise;
//  3. irregular verb: classification = stem + correct allomorph; inflection =
//     a known irregular template (vowel change, vc+t, vc+d, level, weak);
//     copy = strict truncation of the stem; creative otherwise.
// "Stem-preserving" = same length, differing from the stem only by vowel
// substitutions.  Ambiguous verbs are treated as irregular.
inline ErrorClass classify_error(const VerbEntry& verb, const Phonemes& pred, const Inventory& inv = Inventory::standard()) {
  const Phonemes& stem = verb.stem;
  const bool irregular = verb.report_regularity() == Regularity::irreg;
  if (detail::is_double_suffix(stem, pred, irregular, inv)) return ErrorClass::double_suffix;
  const Phonemes correct = regular_past(stem, inv);
  auto stem_plus_any = [&]() {
    for (auto& s : detail::dental_suffixes()) {
      Phonemes f = stem;
      f.insert(f.end(), s.begin(), s.end());
      if (f == pred) return true;
    }
    return false;
  };
  auto vowel_changed_plus = [&](const std::string& dental, int min_changes) {
    if (pred.empty() || pred.back() != dental) return false;
    return detail::vowel_changes(stem, detail::drop_back(pred, 1), inv) >= min_changes;
  };
  if (!irregular) {
    if (pred != correct && stem_plus_any()) return ErrorClass::inflection;
    if (detail::stem_preserving(stem, pred, inv)) return ErrorClass::classification;
    if (vowel_changed_plus("t", 1) || vowel_changed_plus("d", 1)) return ErrorClass::classification;
    return ErrorClass::copy;
  }
  if (pred == correct) return ErrorClass::classification;
  Phonemes weak = stem;
  if (!weak.empty() && weak.back() == "d") weak.back() = "t";
  const bool vowel_change_or_level = detail::stem_preserving(stem, pred, inv);
  const bool dental = vowel_changed_plus("t", 0) || vowel_changed_plus("d", 0);
  const bool weak_match = stem.back() == "d" && pred == weak;
  if (vowel_change_or_level || dental || weak_match) return ErrorClass::inflection;
  if (detail::truncation_of(stem, pred, inv)) return ErrorClass::copy;
  return ErrorClass::creative;
}

struct ErrorRecord {
  std::string model_id;
  int seed = 0;
  std::string lemma;
  Regularity regularity = Regularity::reg;
  VerbClass verb_class = VerbClass::d;
  Phonemes predicted;
  bool malformed = false;
  ErrorClass error = ErrorClass::creative;
};

struct ErrorSummaryRow {
  Regularity regularity;
  ErrorClass error;
  std::size_t count = 0;
  double percent = 0.0;
};

// Counts per (regularity, class), with percentages of the regularity total;
// only classes that occur are listed.
inline std::vector<ErrorSummaryRow> error_summary(const std::vector<std::pair<Regularity, ErrorClass>>& errors) {
  std::map<std::pair<Regularity, ErrorClass>, std::size_t> counts;
  std::map<Regularity, std::size_t> totals;
  for (auto& e : errors) {
    ++counts[e];
    ++totals[e.first];
  }
  std::vector<ErrorSummaryRow> out;
  for (auto r : {Regularity::reg, Regularity::irreg})
    for (auto c : all_error_classes()) {
      auto it = counts.find({r, c});
      if (it == counts.end()) continue;
      out.push_back({r, c, it->second, 100.0 * static_cast<double>(it->second) / static_cast<double>(totals[r])});
    }
  return out;
}

// ---------------------------------------------------------------------------
// Label accuracy: share of predictions whose emitted regularity label
// matches the gold regularity (reported regularity of the verb).

struct LabelAccuracyRow {
  Regularity regularity;
  std::vector<double> per_seed;
  double mean() const {
    double s = 0.0;
    for (double v : per_seed) s += v;
    return per_seed.empty() ? 0.0 : s / static_cast<double>(per_seed.size());
  }
};

inline std::vector<LabelAccuracyRow> label_accuracy(const std::map<int, std::vector<Prediction>>& preds_by_seed, LabelScheme scheme) {
  if (!scheme_has_regularity(scheme)) throw UsageError("label_accuracy: scheme " + to_string(scheme) + " emits no regularity label");
  std::vector<LabelAccuracyRow> rows{{Regularity::reg, {}}, {Regularity::irreg, {}}};
  for (auto& [seed, preds] : preds_by_seed) {
    std::size_t n[2] = {0, 0}, ok[2] = {0, 0};
    for (auto& p : preds) {
      const int g = p.verb->report_regularity() == Regularity::irreg;
      ++n[g];
      if (!p.malformed && !p.labels.empty() && p.labels[0] == regularity_token(p.verb->report_regularity())) ++ok[g];
    }
    for (int g = 0; g < 2; ++g)
      if (n[g]) rows[static_cast<std::size_t>(g)].per_seed.push_back(100.0 * static_cast<double>(ok[g]) / static_cast<double>(n[g]));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Frequency effects: per-cell deltas between two aligned grids of tables.

struct EffectStats {
  std::vector<double> deltas;
  double mean = 0.0, std = 0.0, max_signed = 0.0;
};

inline EffectStats effect_stats(std::vector<double> deltas) {
  EffectStats e;
  e.deltas = std::move(deltas);
  if (e.deltas.empty()) return e;
  for (double d : e.deltas) e.mean += d;
  e.mean /= static_cast<double>(e.deltas.size());
  for (double d : e.deltas) e.std += (d - e.mean) * (d - e.mean);
  // Sample (n - 1) std: the only convention that reproduces published
  // effect tables from their printed accuracies.
  e.std = e.deltas.size() > 1 ? std::sqrt(e.std / static_cast<double>(e.deltas.size() - 1)) : 0.0;
  for (double d : e.deltas)
    if (std::abs(d) > std::abs(e.max_signed)) e.max_signed = d;
  return e;
}

struct EffectReport {
  std::map<std::string, EffectStats> by_group;  // group -> stats over model cells
};

// delta = A - B per (model, group) on unrounded per-seed means.  Grids are
// matched positionally; model ids may differ (they name different data).
inline EffectReport frequency_effect(const std::vector<AccuracyTable>& a, const std::vector<AccuracyTable>& b) {
  if (a.size() != b.size()) throw UsageError("frequency_effect: grids have different sizes");
  std::map<std::string, std::vector<double>> d;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].rows.size() != b[i].rows.size()) throw UsageError("frequency_effect: row mismatch in cell " + std::to_string(i));
    for (std::size_t r = 0; r < a[i].rows.size(); ++r) {
      if (a[i].rows[r].group != b[i].rows[r].group) throw UsageError("frequency_effect: group mismatch in cell " + std::to_string(i));
      d[a[i].rows[r].group].push_back(a[i].rows[r].mean() - b[i].rows[r].mean());
    }
  }
  EffectReport rep;
  for (auto& [g, v] : d) rep.by_group[g] = effect_stats(v);
  return rep;
}

// ---------------------------------------------------------------------------
// CSV emitters.

namespace detail {
inline std::string fmt(double v, int prec = 6) {
  if (std::isnan(v)) return "NaN";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}
}  // namespace detail

// model_id,group,items,seeds,mean,per_seed (semicolon-separated)
inline void write_accuracy_csv(std::ostream& os, const std::vector<AccuracyTable>& tables) {
  os << "model_id,group,items,seeds,mean,per_seed\n";
  for (auto& t : tables)
    for (auto& r : t.rows) {
      os << t.model_id << ',' << r.group << ',' << r.items << ',' << r.per_seed.size() << ',' << detail::fmt(r.mean()) << ',';
      for (std::size_t i = 0; i < r.per_seed.size(); ++i) os << (i ? ";" : "") << detail::fmt(r.per_seed[i]);
      os << '\n';
    }
}

inline void write_errors_csv(std::ostream& os, const std::vector<ErrorRecord>& errs) {
  os << "model_id,seed,lemma_orth,regularity,verb_class,predicted_ipa,malformed,error_class\n";
  for (auto& e : errs)
    os << e.model_id << ',' << e.seed << ',' << e.lemma << ',' << to_string(e.regularity) << ',' << to_string(e.verb_class) << ','
       << join_ipa(e.predicted) << ',' << (e.malformed ? 1 : 0) << ',' << to_string(e.error) << '\n';
}

inline void write_error_summary_csv(std::ostream& os, const std::vector<ErrorSummaryRow>& rows) {
  os << "regularity,error_class,count,percent\n";
  for (auto& r : rows) os << to_string(r.regularity) << ',' << to_string(r.error) << ',' << r.count << ',' << detail::fmt(r.percent) << '\n';
}

inline void write_label_accuracy_csv(std::ostream& os, const std::string& model_id, const std::vector<LabelAccuracyRow>& rows) {
  os << "model_id,regularity,seeds,mean,per_seed\n";
  for (auto& r : rows) {
    os << model_id << ',' << to_string(r.regularity) << ',' << r.per_seed.size() << ',' << detail::fmt(r.mean()) << ',';
    for (std::size_t i = 0; i < r.per_seed.size(); ++i) os << (i ? ";" : "") << detail::fmt(r.per_seed[i]);
    os << '\n';
  }
}

inline void write_effect_csv(std::ostream& os, const std::string& comparison, const EffectReport& rep) {
  os << "comparison,group,cells,mean,std,max\n";
  for (auto& [g, s] : rep.by_group)
    os << comparison << ',' << g << ',' << s.deltas.size() << ',' << detail::fmt(s.mean) << ',' << detail::fmt(s.std) << ','
       << detail::fmt(s.max_signed) << '\n';
}

}  // namespace pasttense

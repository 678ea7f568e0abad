#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "pasttense/errors.hpp"
#include "pasttense/lexicon.hpp"

namespace pasttense {

struct ProductionProfile {
  std::size_t n = 0;                  // outputs aggregated
  std::size_t reg = 0, other = 0;     // counts
  std::vector<std::size_t> irr;       // one count per irregular form
  std::vector<Phonemes> raw;          // every aggregated output

  double p_reg() const { return static_cast<double>(reg) / static_cast<double>(n); }
  double p_irr(std::size_t i) const { return i < irr.size() ? static_cast<double>(irr[i]) / static_cast<double>(n) : 0.0; }
  double p_other() const { return static_cast<double>(other) / static_cast<double>(n); }
};

// Exact-match counting of samples against the verb's candidate forms.
inline ProductionProfile production_profile(const std::vector<Phonemes>& samples, const NonceVerb& verb, std::size_t expected = 25) {
  if (samples.size() != expected)
    throw UsageError("production_profile: expected " + std::to_string(expected) + " samples, got " + std::to_string(samples.size()));
  ProductionProfile p;
  p.n = samples.size();
  p.irr.assign(verb.irr_forms.size(), 0);
  p.raw = samples;
  for (auto& s : samples) {
    if (s == verb.reg_form) {
      ++p.reg;
      continue;
    }
    bool hit = false;
    for (std::size_t i = 0; i < verb.irr_forms.size() && !hit; ++i)
      if (s == verb.irr_forms[i]) {
        ++p.irr[i];
        hit = true;
      }
    if (!hit) ++p.other;
  }
  return p;
}

// ---------------------------------------------------------------------------

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw UsageError("pearson: series lengths differ");
  if (x.size() < 2) throw UsageError("pearson: need at least 2 points");
  // Zero variance is decided exactly: a constant series can leave rounding
  // residue around its computed mean.
  auto constant = [](const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [&v](double a) { return a == v[0]; });
  };
  if (constant(x) || constant(y)) return std::numeric_limits<double>::quiet_NaN();
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::numeric_limits<double>::quiet_NaN();
  const double r = sxy / std::sqrt(sxx * syy);
  return std::clamp(r, -1.0, 1.0);
}

// Average ranks (1-based); ties share the mean of their rank span.
inline std::vector<double> average_ranks(const std::vector<double>& x) {
  std::vector<std::size_t> idx(x.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(), [&x](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw UsageError("spearman: series lengths differ");
  if (x.size() < 2) throw UsageError("spearman: need at least 2 points");
  return pearson(average_ranks(x), average_ranks(y));
}

// ---------------------------------------------------------------------------

struct CorrelationRow {
  std::string row;        // regular | irregular | irregular2
  double r = std::numeric_limits<double>::quiet_NaN();    // vs human production probability
  double rho = std::numeric_limits<double>::quiet_NaN();  // vs human rating
  std::size_t n_r = 0, n_rho = 0;                         // verbs with the human column present
  bool available = true;                                  // false when no human column at all
};

struct CorrelationReport {
  std::string model_id;
  std::vector<CorrelationRow> rows;
  const CorrelationRow& row(const std::string& name) const {
    for (auto& r : rows)
      if (r.row == name) return r;
    throw UsageError("correlation report has no row " + name);
  }
};

// Three rows: regular form over all verbs, first irregular form over all
// verbs, second irregular form over the verbs that have one.  Verbs missing
// a human value are dropped pairwise; a row without any human data is
// marked unavailable (strict = true raises instead).
inline CorrelationReport correlate_report(const std::string& model_id, const std::vector<ProductionProfile>& profiles,
                                          const std::vector<NonceVerb>& verbs, bool strict = false) {
  if (profiles.size() != verbs.size()) throw UsageError("correlate_report: profile/verb count mismatch");
  CorrelationReport rep;
  rep.model_id = model_id;
  const char* names[3] = {"regular", "irregular", "irregular2"};
  for (std::size_t form = 0; form < 3; ++form) {
    std::vector<double> mx_r, hy_r, mx_rho, hy_rho;
    for (std::size_t i = 0; i < verbs.size(); ++i) {
      const auto& v = verbs[i];
      if (form == 2 && v.irr_forms.size() < 2) continue;
      const double model_p = form == 0 ? profiles[i].p_reg() : profiles[i].p_irr(form - 1);
      if (form < v.human_ppro.size() && v.human_ppro[form]) {
        mx_r.push_back(model_p);
        hy_r.push_back(*v.human_ppro[form]);
      }
      if (form < v.human_rating.size() && v.human_rating[form]) {
        mx_rho.push_back(model_p);
        hy_rho.push_back(*v.human_rating[form]);
      }
    }
    CorrelationRow row;
    row.row = names[form];
    row.n_r = mx_r.size();
    row.n_rho = mx_rho.size();
    if (mx_r.empty() && mx_rho.empty()) {
      if (strict) throw UsageError(std::string("correlate_report: no human data for the ") + names[form] + " row");
      row.available = false;
    }
    if (mx_r.size() >= 2) row.r = pearson(mx_r, hy_r);
    if (mx_rho.size() >= 2) row.rho = spearman(mx_rho, hy_rho);
    rep.rows.push_back(row);
  }
  return rep;
}

// ---------------------------------------------------------------------------

struct SummaryStat {
  std::string row, statistic;  // statistic: r | rho
  double mean = std::numeric_limits<double>::quiet_NaN();
  double std = std::numeric_limits<double>::quiet_NaN();
  double min = std::numeric_limits<double>::quiet_NaN();
  double max = std::numeric_limits<double>::quiet_NaN();
  std::size_t used = 0, nan_excluded = 0;
};

// Mean, sample (n - 1) std and range of each (row, statistic) across reports;
// NaN values are excluded and counted.
inline std::vector<SummaryStat> summarize_runs(const std::vector<CorrelationReport>& reports) {
  std::vector<SummaryStat> out;
  if (reports.empty()) return out;
  for (std::size_t r = 0; r < reports.front().rows.size(); ++r)
    for (int which = 0; which < 2; ++which) {
      SummaryStat s;
      s.row = reports.front().rows[r].row;
      s.statistic = which == 0 ? "r" : "rho";
      std::vector<double> vals;
      for (auto& rep : reports) {
        const double v = which == 0 ? rep.row(s.row).r : rep.row(s.row).rho;
        if (std::isnan(v)) ++s.nan_excluded;
        else vals.push_back(v);
      }
      s.used = vals.size();
      if (!vals.empty()) {
        s.mean = 0.0;
        for (double v : vals) s.mean += v;
        s.mean /= static_cast<double>(vals.size());
        if (vals.size() > 1) {
          s.std = 0.0;
          for (double v : vals) s.std += (v - s.mean) * (v - s.mean);
          s.std = std::sqrt(s.std / static_cast<double>(vals.size() - 1));
        }
        s.min = *std::min_element(vals.begin(), vals.end());
        s.max = *std::max_element(vals.begin(), vals.end());
      }
      out.push_back(s);
    }
  return out;
}

// ---------------------------------------------------------------------------
// CSV emitters.

namespace detail {
inline std::string num(double v) {
  if (std::isnan(v)) return "NaN";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}
}  // namespace detail

struct FigureRow {
  std::string verb;
  double pct_regular, pct_irregular, pct_irregular2, pct_other;
};

inline std::vector<FigureRow> figure_export(const std::vector<ProductionProfile>& profiles, const std::vector<NonceVerb>& verbs) {
  if (profiles.size() != verbs.size()) throw UsageError("figure_export: profile/verb count mismatch");
  std::vector<FigureRow> rows;
  for (std::size_t i = 0; i < profiles.size(); ++i) {
    const auto& p = profiles[i];
    rows.push_back({join_ipa(verbs[i].stem, ""), 100.0 * p.p_reg(), 100.0 * p.p_irr(0), 100.0 * p.p_irr(1), 100.0 * p.p_other()});
  }
  return rows;
}

inline void write_figure_csv(std::ostream& os, const std::vector<FigureRow>& rows) {
  os << "verb,pct_regular,pct_irregular,pct_irregular2,pct_other\n";
  for (auto& r : rows)
    os << r.verb << ',' << detail::num(r.pct_regular) << ',' << detail::num(r.pct_irregular) << ',' << detail::num(r.pct_irregular2)
       << ',' << detail::num(r.pct_other) << '\n';
}

// row,statistic,value,n,nan_excluded
inline void write_correlation_csv(std::ostream& os, const std::vector<CorrelationReport>& reps) {
  os << "model_id,row,statistic,value,n,nan_excluded\n";
  for (auto& rep : reps)
    for (auto& r : rep.rows) {
      os << rep.model_id << ',' << r.row << ",r," << (r.available ? detail::num(r.r) : "unavailable") << ',' << r.n_r << ','
         << (std::isnan(r.r) ? 1 : 0) << '\n';
      os << rep.model_id << ',' << r.row << ",rho," << (r.available ? detail::num(r.rho) : "unavailable") << ',' << r.n_rho << ','
         << (std::isnan(r.rho) ? 1 : 0) << '\n';
    }
}

inline void write_summary_csv(std::ostream& os, const std::vector<SummaryStat>& s) {
  os << "row,statistic,mean,std,min,max,used,nan_excluded\n";
  for (auto& x : s)
    os << x.row << ',' << x.statistic << ',' << detail::num(x.mean) << ',' << detail::num(x.std) << ',' << detail::num(x.min) << ','
       << detail::num(x.max) << ',' << x.used << ',' << x.nan_excluded << '\n';
}

inline void write_profiles_csv(std::ostream& os, const std::vector<ProductionProfile>& profiles, const std::vector<NonceVerb>& verbs) {
  os << "verb,n,reg,irr1,irr2,other,outputs\n";
  for (std::size_t i = 0; i < profiles.size(); ++i) {
    const auto& p = profiles[i];
    os << join_ipa(verbs[i].stem, "") << ',' << p.n << ',' << p.reg << ',' << (p.irr.size() > 0 ? p.irr[0] : 0) << ','
       << (p.irr.size() > 1 ? std::to_string(p.irr[1]) : std::string("")) << ',' << p.other << ',';
    for (std::size_t k = 0; k < p.raw.size(); ++k) os << (k ? ";" : "") << join_ipa(p.raw[k], "");
    os << '\n';
  }
}

}  // namespace pasttense

#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "pasttense/rng.hpp"
#include "pasttense/tensor.hpp"

namespace pasttense {

struct GradCheckOptions {
  std::size_t min_coords = 200;  // coordinates sampled (all, if fewer exist)
  double h = 1e-4;               // central-difference step
  double tolerance = 1e-4;       // pass threshold on max relative error
  double abs_floor = 1e-6;       // denominators below this are clamped
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
  bool precondition_ok = true;
  bool passed = false;
  std::string message;
};

// Compares backward() gradients with central finite differences on a random
// subsample of parameter coordinates.  The forward function must be
// deterministic; a non-repeatable forward (e.g. dropout left on) is reported
// as a precondition violation instead of a gradient comparison.
inline GradCheckReport grad_check(const std::function<Var()>& forward, std::vector<Var> params,
                                  const GradCheckOptions& opt = {}) {
  GradCheckReport rep;
  const double f0 = forward().item();
  const double f0b = forward().item();
  if (f0 != f0b) {
    rep.precondition_ok = false;
    rep.message = "forward function is not deterministic (dropout or sampling active)";
    return rep;
  }
  for (auto& p : params) p.zero_grad();
  backward(forward());

  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t i = 0; i < params.size(); ++i)
    for (std::size_t j = 0; j < params[i].size(); ++j) coords.push_back({i, j});
  Rng rng = Rng(opt.seed).substream("grad_check");
  rng.shuffle(coords);
  if (coords.size() > opt.min_coords) coords.resize(opt.min_coords);

  for (auto [i, j] : coords) {
    double& x = params[i].mutable_value()[j];
    const double orig = x;
    x = orig + opt.h;
    const double fp = forward().item();
    x = orig - opt.h;
    const double fm = forward().item();
    x = orig;
    const double numeric = (fp - fm) / (2.0 * opt.h);
    const double analytic = params[i].has_grad() ? params[i].grad()[j] : 0.0;
    const double denom = std::max({std::abs(numeric), std::abs(analytic), opt.abs_floor});
    rep.max_rel_error = std::max(rep.max_rel_error, std::abs(numeric - analytic) / denom);
    ++rep.coords_checked;
  }
  rep.passed = rep.max_rel_error < opt.tolerance;
  rep.message = "max relative error " + std::to_string(rep.max_rel_error) + " over " +
                std::to_string(rep.coords_checked) + " coordinates";
  return rep;
}

}  // namespace pasttense

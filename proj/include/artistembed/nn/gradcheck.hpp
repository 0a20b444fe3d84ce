#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "artistembed/error.hpp"

namespace artistembed::nn {

/// Compares an analytic gradient of `f` at `x` against central differences
/// with step h. Returns max_i |a_i - n_i| / max(1, |a_i|, |n_i|).
/// Throws "numerical failure" if any evaluated quantity is non-finite.
inline double grad_check(const std::function<double(std::span<const double>)>& f,
                         std::span<const double> x, std::span<const double> analytic, double h = 1e-5) {
  if (x.size() != analytic.size()) throw Error("shape error", "gradient length");
  std::vector<double> probe(x.begin(), x.end());
  double worst = 0.0;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + h;
    const double up = f(probe);
    probe[i] = saved - h;
    const double down = f(probe);
    probe[i] = saved;
    const double numeric = (up - down) / (2.0 * h);
    if (!std::isfinite(numeric) || !std::isfinite(analytic[i])) throw Error("numerical failure");
    const double scale = std::max({1.0, std::abs(analytic[i]), std::abs(numeric)});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / scale);
  }
  return worst;
}

}  // namespace artistembed::nn

// Copyright 2026 The pathflow Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef PATHFLOW_NUMERICS_FINITE_DIFFERENCE_HPP
#define PATHFLOW_NUMERICS_FINITE_DIFFERENCE_HPP

#include <cmath>
#include <span>

#include <pathflow/error.hpp>
#include <pathflow/numerics/dense.hpp>

namespace pathflow {

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate.
template <class F>
[[nodiscard]] RealVector finite_difference_gradient(F&& f, std::span<const double> x, double step) {
  if (!(step > 0.0)) throw ConfigError("finite difference step must be positive");
  RealVector work(x.begin(), x.end());
  RealVector grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = work[i];
    work[i] = orig + step;
    const double fp = f(std::span<const double>(work));
    work[i] = orig - step;
    const double fm = f(std::span<const double>(work));
    work[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) throw OracleError(i, "non-finite function value");
    grad[i] = (fp - fm) / (2.0 * step);
  }
  return grad;
}

}  // namespace pathflow

#endif

#pragma once

#include <functional>

#include "reslab/graph.hpp"

namespace reslab {

/// Scalar-valued function recorded on a graph.
using RecordedFn = std::function<Tensor<double>(Graph<double>&, const Tensor<double>&)>;

struct GradCheckResult {
  double max_relative_error = 0;
  std::size_t worst_index = 0;
  std::vector<double> analytic;
  std::vector<double> numeric;
};

/// Compares the reverse-mode gradient of `f` at `x` against central
/// differences with step `eps`. Relative error per element is
/// |a - n| / max(|a|, |n|, 1e-12). Evaluations run with finite checking on,
/// so a NaN/Inf anywhere in `f` raises NonFiniteError naming the op.
GradCheckResult grad_check_detailed(const RecordedFn& f, const Tensor<double>& x, double eps);

double grad_check(const RecordedFn& f, const Tensor<double>& x, double eps = 1e-6);

/// Ridders' extrapolation of central differences of `phi` at 0, shrinking the
/// step by 1.4 per round. Starts from h0, then h0/10, h0/100 and h0/1000 until
/// a tableau is self-consistent to 1e-7; failing that, the tightest estimate
/// wins. Far less exposed to round-off than a single step, and a start that
/// straddles a ReLU kink is rejected by its own error estimate.
double extrapolated_derivative(const std::function<double(double)>& phi, double h0);

/// Extended-precision variant for oracles that need to resolve gradient
/// components far below the double round-off floor.
long double extrapolated_derivative(const std::function<long double(long double)>& phi,
                                    long double h0);

/// grad_check with each numeric entry from extrapolated_derivative.
GradCheckResult grad_check_extrapolated(const RecordedFn& f, const Tensor<double>& x,
                                        double h0 = 1e-3);

}  // namespace reslab

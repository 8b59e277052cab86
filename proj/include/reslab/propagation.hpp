#pragma once

#include <ostream>
#include <span>
#include <vector>

#include "reslab/network.hpp"

// Numerical checks of how signals move through stacked residual units:
// telescoping forward sums, the split of dE/dx_l into a shortcut term and a
// through-the-weights term, and the product of shortcut scales.
namespace reslab {

class SliceError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Units [begin, end) of one feature-map stage, none of them changing shape.
template <typename T>
struct StageSlice {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::vector<UnitTrace<T>> traces;
};

/// Throws SliceError if [l, L) crosses a stage or contains a dimension-changing unit.
template <typename T>
StageSlice<T> make_stage_slice(const Network<T>& net, std::span<const UnitTrace<T>> traces,
                               std::size_t l, std::size_t L);

/// ||x_L - (x_l + sum F_i)|| / ||x_L||, zero for an empty slice.
template <typename T>
double telescope_check(const Network<T>& net, const Tensor<T>& x, std::size_t l, std::size_t L,
                       Rng& rng, Mode mode = Mode::Train);

template <typename T>
struct GradDecomposition {
  Tensor<T> total;            // dE/dx_l
  Tensor<T> direct;           // through shortcuts only
  Tensor<T> through_weights;  // total - direct
  Tensor<T> grad_at_L;        // dE/dx_L
};

/// The direct term is the gradient obtained when every branch output in the
/// slice is treated as a constant during backward.
template <typename T>
GradDecomposition<T> gradient_decompose(const Network<T>& net, const Tensor<T>& x,
                                        std::span<const int> labels, std::size_t l, std::size_t L,
                                        Rng& rng, Mode mode = Mode::Train);

struct LambdaReport {
  double measured = 0;  // ||dE/dx_l|| / ||dE/dx_L||
  double expected = 0;  // lambda^(L-l)
  double lambda = 0;
  std::size_t span = 0;

  double relative_error() const;
};

/// Requires uniform ConstantScale shortcuts in the slice and branch outputs
/// that are exactly zero (e.g. after zero_last_branch_conv).
template <typename T>
LambdaReport lambda_product_check(const Network<T>& net, const Tensor<T>& x,
                                  std::span<const int> labels, std::size_t l, std::size_t L,
                                  Rng& rng, Mode mode = Mode::Train);

struct ProfileRow {
  std::size_t unit_index;
  double x_norm;
  double f_norm;
  double h_norm;
  double grad_norm;
};

template <typename T>
std::vector<ProfileRow> signal_magnitude_profile(const Network<T>& net, const Tensor<T>& x,
                                                 std::span<const int> labels, Rng& rng,
                                                 Mode mode = Mode::Train);

/// Columns unit_index,x_norm,F_norm,h_norm,grad_norm.
void write_profile_csv(std::ostream& os, std::span<const ProfileRow> rows);

}  // namespace reslab

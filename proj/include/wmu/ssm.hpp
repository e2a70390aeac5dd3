#pragma once

#include "wmu/ops.hpp"

namespace wmu {

/// Selective-scan state space recurrence, run independently per batch entry.
///
/// Shapes (batch dimension optional, L = sequence length):
///   x, delta : (N, L, D)      delta > 0
///   a        : (D, S)         negative for a stable recurrence
///   b, c     : (N, L, S)
///   d_skip   : (D)
/// With h_0 = 0, per channel d and state s:
///   h_t = exp(delta_t * a) * h_{t-1} + delta_t * b_t * x_t
///   y_t = <c_t, h_t> + d_skip * x_t
/// Throws NumericError on a negative or non-finite delta. delta == 0 is
/// accepted and yields y = d_skip * x.
template <typename T>
Var<T> selective_scan(const Var<T>& x, const Var<T>& delta, const Var<T>& a, const Var<T>& b, const Var<T>& c,
                      const Var<T>& d_skip);

} // namespace wmu

#pragma once

#include "dscale/core/ops.hpp"
#include "dscale/core/tape.hpp"

namespace dscale::train {

// Mean squared error over one [H, W] field.
template <class S>
Var<S> mse_loss(Tape<S>& t, Var<S> pred, Var<S> target) {
  if (t.val(pred).rank() != 2 || t.val(target).rank() != 2)
    throw DimensionError("mse_loss expects [H, W] fields");
  return ops::mean_sq_err(t, pred, target);
}

// Mean squared error over a channel stack [N, H, W]. Equals the arithmetic
// mean of the per-channel mse_loss values.
template <class S>
Var<S> joint_mse_loss(Tape<S>& t, Var<S> pred, Var<S> target) {
  if (t.val(pred).rank() != 3 || t.val(target).rank() != 3)
    throw DimensionError("joint_mse_loss expects [N, H, W] stacks");
  return ops::mean_sq_err(t, pred, target);
}

}  // namespace dscale::train

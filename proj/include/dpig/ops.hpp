#pragma once

#include "dpig/tape.hpp"

namespace dpig::ops {

// elementwise; operands must have identical shapes (no broadcasting)
ValueId add(Tape& t, ValueId a, ValueId b);
ValueId sub(Tape& t, ValueId a, ValueId b);
ValueId mul(Tape& t, ValueId a, ValueId b);
ValueId div(Tape& t, ValueId a, ValueId b);

// scale * x + shift
ValueId affine(Tape& t, ValueId x, double scale, double shift);
ValueId log(Tape& t, ValueId x);
ValueId exp(Tape& t, ValueId x);
ValueId clamp(Tape& t, ValueId x, double lo, double hi);
ValueId clamp_min(Tape& t, ValueId x, double lo);
ValueId relu(Tape& t, ValueId x);
ValueId leaky_relu(Tape& t, ValueId x, double slope);
ValueId sigmoid(Tape& t, ValueId x);

// reductions
ValueId sum_all(Tape& t, ValueId x);   // -> scalar [1]
ValueId mean_all(Tape& t, ValueId x);  // -> scalar [1]
ValueId sum_cols(Tape& t, ValueId x);  // [m,k] -> [m]

// shape
ValueId reshape(Tape& t, ValueId x, std::vector<int64_t> shape);
ValueId slice_cols(Tape& t, ValueId x, int64_t c0, int64_t c1);  // [m,k] -> [m,c1-c0]

// layers
ValueId dense(Tape& t, ValueId x, ValueId w, ValueId b);  // x[m,in] w[out,in] b[out]
ValueId conv2d(Tape& t, ValueId x, ValueId w, ValueId b, int64_t stride, int64_t pad);
ValueId tconv2d(Tape& t, ValueId x, ValueId w, ValueId b, int64_t stride, int64_t pad);

// Training mode normalizes with batch statistics (biased variance over
// N*H*W per channel) and updates the running buffers in place; eval mode
// uses the running buffers.
ValueId batch_norm2d(Tape& t, ValueId x, ValueId gamma, ValueId beta,
                     Tensor& running_mean, Tensor& running_var,
                     double eps, double momentum, bool training);

// per-row softmax cross entropy against a one-hot target: [m,k],[m,k] -> [m]
ValueId cross_entropy_logits(Tape& t, ValueId logits, ValueId target);

}  // namespace dpig::ops

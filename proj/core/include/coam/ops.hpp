#pragma once

#include <vector>

#include "coam/autodiff.hpp"

namespace coam {

// Elementwise
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_const(const Var& a, double c);
Var relu(const Var& a);
Var sigmoid(const Var& a);
Var abs_val(const Var& a);

// (n,m) x (m,k) -> (n,k)
Var matmul(const Var& a, const Var& b);
// Rows of a 2D tensor (or last axis generally) sum to 1.
Var softmax_last(const Var& a);

// Reductions to scalar (shape {1})
Var reduce_sum(const Var& a);
Var reduce_mean(const Var& a);
Var reduce_max(const Var& a);

// Shape ops
Var reshape(const Var& a, std::vector<int> shape);
Var transpose2d(const Var& a);
Var concat(const std::vector<Var>& xs, int axis);

// (C,H,W) spatial ops
Var conv2d(const Var& input, const Var& weight, const Var* bias, int stride, int pad);
Var max_pool2x2(const Var& input);
Var bilinear_resize(const Var& input, int out_h, int out_w);

// Per-channel normalization over spatial locations with learned affine
// (gamma, beta of shape {C}); well defined for a single instance.
Var instance_norm(const Var& input, const Var& gamma, const Var& beta, double eps = 1e-5);
// Pure learned per-channel affine on a (N,C) matrix; no statistics.
Var channel_affine(const Var& x, const Var& gamma, const Var& beta);

// L2-normalize over the channel axis. For (C,H,W): per spatial location.
// For (N,C): per row. Locations with norm < 1e-12 map to zero with zero grad.
Var l2_normalize_channel(const Var& x);

// rows (N,In) x weight (Out,In)^T + optional bias (Out) -> (N,Out)
Var linear(const Var& x, const Var& weight, const Var* bias);

// Gather per-pixel channel vectors from a (C,H,W) map at integer pixel
// locations -> (N,C). Backward scatter-adds.
Var gather_pixels(const Var& map, const std::vector<std::pair<int, int>>& xy);

// Finite-difference gradient verification. Rebuilds the graph through
// `forward` (must produce a scalar), compares the analytic gradient of each
// parameter against central differences of the given step.
struct GradCheckEntry {
    std::string name;
    double max_rel_error = 0.0;
    bool ok = true;
};
struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double max_rel_error = 0.0;
    bool ok = true;
};
GradCheckReport grad_check(const std::function<Var()>& forward, std::vector<Parameter*> params,
                           double step = 1e-5, double tolerance = 1e-5);

}  // namespace coam

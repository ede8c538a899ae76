#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "owapool/tensor.hpp"

// Every operation in this namespace is a pure function of its inputs and can
// run concurrently on distinct outputs.
namespace owapool::owa {

// Weight-sharing scope for learned pooling weights: one vector for the whole
// layer, or one per feature channel.
enum class Scope { Shared, PerChannel };

// How the simplex constraints (sum to one, nonnegative) are handled while
// the weights are learned:
//   Penalty       soft cost terms added to the training objective
//   Projected     hard clip-to-zero + renormalize after every optimizer step
//   Unconstrained no constraint at all ("nr" variants)
enum class Regime { Penalty, Projected, Unconstrained };

// Coefficients of the three penalty terms: c1 drives entries nonnegative,
// c2 drives the sum to one, c3 smooths consecutive weights.
struct RegularizationConfig {
    double c1 = 1.0;
    double c2 = 1.0;
    double c3 = 0.01;
};

// Learnable ordered-weight vector(s). values has one row when Shared, one
// row per channel when PerChannel; each row has length n = pooling-region
// size. Under Regime::Projected every row is kept on the probability simplex
// (sum 1 within 1e-9, entries >= 0) by project_weights.
struct OwaWeights {
    Matrix values;
    Scope scope = Scope::Shared;
    Regime regime = Regime::Unconstrained;

    int n() const { return values.cols(); }
    int rows() const { return values.rows(); }

    // Weight row used for a given feature channel.
    std::span<const double> row_for_channel(int channel) const {
        return values.row(scope == Scope::Shared ? 0 : channel);
    }
};

// All rows start uniform at 1/n.
OwaWeights init_weights(int n, int channels, Scope scope, Regime regime);

enum class PoolMode { Max, Avg, Owa };

// Pooling geometry. No padding; output spatial dims are
// floor((h-kh)/sh)+1 by floor((w-kw)/sw)+1 and must be >= 1.
struct PoolPlan {
    int kh = 2, kw = 2;
    int sh = 2, sw = 2;
    PoolMode mode = PoolMode::Owa;

    int window_size() const { return kh * kw; }
    // Throws std::invalid_argument when the plan does not fit (h, w).
    std::pair<int, int> output_dims(int h, int w) const;
};

// Everything the backward pass needs to route gradients through the sort:
// the per-window descending-order permutations recorded by the forward pass,
// plus the forward input itself (grad_w needs the sorted window values).
// perms holds window_size() entries per window for Owa, the argmax index for
// Max, and nothing for Avg.
struct PoolTrace {
    Tensor4 input;
    PoolPlan plan;
    int out_h = 0, out_w = 0;
    std::vector<std::int32_t> perms;

    std::size_t window_count() const {
        return static_cast<std::size_t>(input.n()) * input.c() * out_h * out_w;
    }
};

// Stable descending sort. perm[k] is the original index of the k-th largest
// value; ties keep ascending original index. sorted/perm must have
// values.size() elements.
void sort_desc(std::span<const double> values, std::span<double> sorted, std::span<std::int32_t> perm);
std::pair<std::vector<double>, std::vector<std::int32_t>> sort_desc(std::span<const double> values);

// Dot product of w with the descending-sorted values.
// w = (1,0,...,0) gives the maximum, uniform w the arithmetic mean.
double owa_aggregate(std::span<const double> values, std::span<const double> w);

// Windowed pooling over each (sample, channel) spatial map. weights is
// ignored for Max/Avg and required for Owa (row count must match channels
// under PerChannel; window_size() must equal weights->n()).
std::pair<Tensor4, PoolTrace> owa_pool_forward(const Tensor4& x, const PoolPlan& plan,
                                               const OwaWeights* weights = nullptr);

struct PoolGrads {
    Tensor4 input;    // d(sum of weighted outputs)/dx; overlapping windows accumulate
    Matrix weights;   // same shape as weights->values; empty for Max/Avg
};

// Backward through the recorded sort: grad_x[perm[k]] += w[k] * g and
// grad_w[k] += sorted_value[k] * g per window. Shared scope accumulates
// grad_w over all channels, PerChannel per row.
PoolGrads owa_pool_backward(const Tensor4& grad_y, const PoolTrace& trace,
                            const OwaWeights* weights = nullptr);

// Three-term constraint penalty, summed over rows:
//   c1 * sum_i max(0, -w_i) + c2 * ((sum_i w_i) - 1)^2
//   + c3 * sum_{i<n-1} (w_i - w_{i+1})^2
double penalty_cost(const OwaWeights& w, const RegularizationConfig& cfg);

// Exact gradient of penalty_cost (the c1 subgradient at w_i == 0 is taken
// as 0). Validated against finite differences in the test suite.
Matrix penalty_grad(const OwaWeights& w, const RegularizationConfig& cfg);

// Clip entries to >= 0 then renormalize each row to sum 1. A degenerate row
// (all entries <= 0) is reset to uniform 1/n and counted in *degenerate_rows
// when provided.
OwaWeights project_weights(const OwaWeights& w, int* degenerate_rows = nullptr);

// CSV exchange format: header "channel,k,weight", one row per entry.
void write_weights_csv(std::ostream& os, const OwaWeights& w);
void write_weights_csv(const std::string& path, const OwaWeights& w);
Matrix read_weights_csv(std::istream& is);

}  // namespace owapool::owa

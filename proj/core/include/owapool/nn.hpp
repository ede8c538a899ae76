#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "owapool/owa.hpp"
#include "owapool/rng.hpp"
#include "owapool/tensor.hpp"

namespace owapool::nn {

// Valid cross-correlation; the Conv2d layer below applies zero padding
// before calling this. kernel is (out_c, in_c, kh, kw).
Tensor4 conv2d_forward(const Tensor4& x, const Tensor4& kernel, std::span<const double> bias, int stride);

struct Conv2d {
    Tensor4 kernel;             // (out_c, in_c, kh, kw)
    std::vector<double> bias;   // out_c
    int stride = 1;
    int pad = 0;                // symmetric zero padding on both spatial dims

    Tensor4 kernel_grad;
    std::vector<double> bias_grad;
    Tensor4 kernel_vel;
    std::vector<double> bias_vel;
};

struct Relu {};

struct Pool {
    owa::PoolPlan plan;
    owa::OwaWeights weights;    // used only when plan.mode == Owa
    Matrix weight_grad;
    Matrix weight_vel;
    bool freeze = false;        // keep weights fixed during sgd_step
};

struct Dropout {
    double keep_prob = 0.5;     // active only when the network enables dropout
};

struct Flatten {};

struct Dense {
    Matrix weight;              // (out, in)
    std::vector<double> bias;
    Matrix weight_grad;
    Matrix weight_vel;
    std::vector<double> bias_grad;
    std::vector<double> bias_vel;
};

using Layer = std::variant<Conv2d, Relu, Pool, Dropout, Flatten, Dense>;

// Glorot-uniform initialized layers.
Conv2d make_conv2d(int in_c, int out_c, int kh, int kw, int stride, int pad, Rng& rng);
Dense make_dense(int in_dim, int out_dim, Rng& rng);
Pool make_pool(const owa::PoolPlan& plan);
Pool make_owa_pool(int kh, int kw, int sh, int sw, int channels, owa::Scope scope, owa::Regime regime);

// An ordered layer stack ending in channel logits; the loss is softmax
// cross-entropy. A Network is exclusively owned during forward/backward/step.
struct Network {
    std::vector<Layer> layers;
    bool dropout_enabled = false;   // off by default so desk-scale runs stay deterministic

    void add(Layer layer) { layers.push_back(std::move(layer)); }
};

struct LossGrad {
    double loss = 0.0;
    Matrix grad;    // (batch, classes), d(mean loss)/d(logit)
};

// Mean over the batch of -log softmax(logits)[label];
// grad = (softmax - onehot) / batch.
LossGrad softmax_cross_entropy(const Matrix& logits, std::span<const int> labels);

// Inference pass; dropout layers are identity. Returns (batch, classes) logits.
Matrix network_forward(const Network& net, const Tensor4& x);

struct ForwardBackwardResult {
    Matrix logits;
    double j_ce = 0.0;      // data term
    double penalty = 0.0;   // sum of Penalty-regime pooling penalties
    double total = 0.0;     // j_ce + penalty
};

// Forward + loss + full backward. Populates every layer's gradient buffers,
// including OWA pooling weights (sort-routed gradient plus, under the
// Penalty regime, the constraint-penalty gradient). Projected and
// Unconstrained pooling layers contribute no penalty term.
ForwardBackwardResult network_forward_backward(Network& net, const Tensor4& x, std::span<const int> labels,
                                               const owa::RegularizationConfig& reg, Rng* dropout_rng = nullptr);

// Forward + loss only (used by the finite-difference oracle).
double network_loss(const Network& net, const Tensor4& x, std::span<const int> labels,
                    const owa::RegularizationConfig& reg);

struct TrainConfig {
    double learning_rate = 0.01;
    double momentum = 0.9;
    int epochs = 1;
    int batch_size = 32;
    double weight_lr_multiplier = 1.0;  // extra factor on OWA pooling weights
    owa::RegularizationConfig reg;
    std::uint64_t seed = 0;
};

// Momentum SGD: v <- momentum*v + g, p <- p - lr*v. Pooling weights use
// lr * weight_lr_multiplier and, under the Projected regime, are projected
// back onto the simplex after the step. Returns the count of degenerate
// projection rows encountered (normally zero).
int sgd_step(Network& net, const TrainConfig& cfg);

// Handle on one parameter blob (conv kernel, bias, dense weight, pooling
// weights). Spans stay valid while the owning Network is alive and no
// layers are added or removed.
struct ParamBlob {
    double* value = nullptr;
    double* grad = nullptr;
    double* vel = nullptr;
    std::size_t size = 0;
    bool is_pool_weight = false;
    bool frozen = false;
    std::vector<std::uint64_t> dims;
};

std::vector<ParamBlob> parameters(Network& net);

// NiN pooling variants: Orig is the stock (max, avg, avg) assignment; OWAL*
// learn one shared weight vector per pooling layer, OWALC* one per channel;
// the *nr variants learn without constraints, the others under the penalty
// regime.
enum class NinVariant { Orig, Max, Avg, OWAL, OWALnr, OWALC, OWALCnr };

NinVariant nin_variant_from_string(const std::string& name);

// The three-pooling-site NiN stack for 32x32x3 inputs: conv blocks of
// (5x5,192)(1x1,160)(1x1,96), (5x5,192)(1x1,192)(1x1,192),
// (5x5,192)(1x1,192)(1x1,classes), pooling sites 3x3/s2, 3x3/s2 and a
// global 8x8, dropout 0.5 after the first two pools. The 5x5 convs carry
// pads (3,3,2) so the pooling inputs land on 34/18/8 and the weight-vector
// sizes come out 9, 9, 64.
Network build_nin(int num_classes, NinVariant variant, Rng& rng);

// Max relative error between analytic gradients and central finite
// differences (J(p+eps)-J(p-eps))/2eps over a random subsample of at most
// max_params_per_blob entries per parameter blob.
double finite_diff_grad_check(Network& net, const Tensor4& x, std::span<const int> labels,
                              const owa::RegularizationConfig& reg, double epsilon,
                              int max_params_per_blob, Rng& rng);

// Flat binary checkpoint: magic "OWANN1", u32 layer count, then per layer a
// u32 blob count and per blob u32 ndim + u64 dims + raw little-endian f64
// parameters. load_checkpoint requires an identically shaped network.
void save_checkpoint(const Network& net, const std::string& path);
void load_checkpoint(Network& net, const std::string& path);

std::vector<int> predict(const Network& net, const Tensor4& x);
double accuracy(const Network& net, const Tensor4& x, std::span<const int> labels, int eval_batch = 256);

}  // namespace owapool::nn

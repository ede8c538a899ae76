#include "owapool/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace owapool::nn {

namespace {

Tensor4 zero_pad(const Tensor4& x, int pad) {
    if (pad == 0) return x;
    Tensor4 out(x.n(), x.c(), x.h() + 2 * pad, x.w() + 2 * pad);
    for (int b = 0; b < x.n(); ++b)
        for (int c = 0; c < x.c(); ++c)
            for (int i = 0; i < x.h(); ++i)
                for (int j = 0; j < x.w(); ++j)
                    out.at(b, c, i + pad, j + pad) = x.at(b, c, i, j);
    return out;
}

Tensor4 crop_pad(const Tensor4& g, int pad) {
    if (pad == 0) return g;
    Tensor4 out(g.n(), g.c(), g.h() - 2 * pad, g.w() - 2 * pad);
    for (int b = 0; b < g.n(); ++b)
        for (int c = 0; c < g.c(); ++c)
            for (int i = 0; i < out.h(); ++i)
                for (int j = 0; j < out.w(); ++j)
                    out.at(b, c, i, j) = g.at(b, c, i + pad, j + pad);
    return out;
}

}  // namespace

Tensor4 conv2d_forward(const Tensor4& x, const Tensor4& kernel, std::span<const double> bias, int stride) {
    const int oc = kernel.n(), ic = kernel.c(), kh = kernel.h(), kw = kernel.w();
    if (x.c() != ic) {
        throw std::invalid_argument("conv2d_forward: input has " + std::to_string(x.c()) +
                                    " channels, kernel expects " + std::to_string(ic));
    }
    if (bias.size() != static_cast<std::size_t>(oc)) {
        throw std::invalid_argument("conv2d_forward: bias length must equal output channels");
    }
    if (stride < 1 || x.h() < kh || x.w() < kw) {
        throw std::invalid_argument("conv2d_forward: kernel does not fit input");
    }
    const int oh = (x.h() - kh) / stride + 1;
    const int ow = (x.w() - kw) / stride + 1;
    Tensor4 y(x.n(), oc, oh, ow);
    for (int b = 0; b < x.n(); ++b) {
        for (int o = 0; o < oc; ++o) {
            for (int i = 0; i < oh; ++i) {
                for (int j = 0; j < ow; ++j) {
                    double acc = bias[o];
                    for (int c = 0; c < ic; ++c)
                        for (int ki = 0; ki < kh; ++ki)
                            for (int kj = 0; kj < kw; ++kj)
                                acc += x.at(b, c, i * stride + ki, j * stride + kj) * kernel.at(o, c, ki, kj);
                    y.at(b, o, i, j) = acc;
                }
            }
        }
    }
    return y;
}

namespace {

// Gradients of the valid cross-correlation wrt its (already padded) input,
// kernel and bias. Accumulates into the provided buffers.
Tensor4 conv2d_backward(const Tensor4& x, const Tensor4& kernel, int stride, const Tensor4& grad_y,
                        Tensor4& kernel_grad, std::vector<double>& bias_grad) {
    const int oc = kernel.n(), ic = kernel.c(), kh = kernel.h(), kw = kernel.w();
    Tensor4 grad_x(x.n(), x.c(), x.h(), x.w());
    for (int b = 0; b < x.n(); ++b) {
        for (int o = 0; o < oc; ++o) {
            for (int i = 0; i < grad_y.h(); ++i) {
                for (int j = 0; j < grad_y.w(); ++j) {
                    const double g = grad_y.at(b, o, i, j);
                    if (g == 0.0) continue;
                    bias_grad[o] += g;
                    for (int c = 0; c < ic; ++c) {
                        for (int ki = 0; ki < kh; ++ki) {
                            for (int kj = 0; kj < kw; ++kj) {
                                const int ii = i * stride + ki, jj = j * stride + kj;
                                kernel_grad.at(o, c, ki, kj) += g * x.at(b, c, ii, jj);
                                grad_x.at(b, c, ii, jj) += g * kernel.at(o, c, ki, kj);
                            }
                        }
                    }
                }
            }
        }
    }
    return grad_x;
}

struct LayerCache {
    Tensor4 input;               // conv: padded input; relu/dense: raw input
    owa::PoolTrace trace;        // pool layers
    std::vector<double> mask;    // dropout keep/scale factors; empty = identity
    int in_c = 0, in_h = 0, in_w = 0;  // flatten restore shape
};

Matrix logits_from(const Tensor4& t) {
    if (t.h() != 1 || t.w() != 1) {
        throw std::invalid_argument("network: final layer output must be (batch, classes, 1, 1), got " +
                                    std::to_string(t.h()) + "x" + std::to_string(t.w()) + " spatial");
    }
    Matrix m(t.n(), t.c());
    std::copy(t.values().begin(), t.values().end(), m.values().begin());
    return m;
}

Tensor4 dense_forward(const Dense& d, const Tensor4& x) {
    const int in_dim = x.c() * x.h() * x.w();
    if (in_dim != d.weight.cols()) {
        throw std::invalid_argument("dense: input dim " + std::to_string(in_dim) + " != weight cols " +
                                    std::to_string(d.weight.cols()));
    }
    const int out_dim = d.weight.rows();
    Tensor4 y(x.n(), out_dim, 1, 1);
    const double* xd = x.data();
    for (int b = 0; b < x.n(); ++b) {
        const double* xb = xd + static_cast<std::size_t>(b) * in_dim;
        for (int o = 0; o < out_dim; ++o) {
            double acc = d.bias[o];
            const double* wrow = d.weight.data() + static_cast<std::size_t>(o) * in_dim;
            for (int k = 0; k < in_dim; ++k) acc += wrow[k] * xb[k];
            y.at(b, o, 0, 0) = acc;
        }
    }
    return y;
}

Tensor4 dense_backward(Dense& d, const Tensor4& x, const Tensor4& grad_y) {
    const int in_dim = x.c() * x.h() * x.w();
    const int out_dim = d.weight.rows();
    Tensor4 grad_x(x.n(), x.c(), x.h(), x.w());
    for (int b = 0; b < x.n(); ++b) {
        const double* xb = x.data() + static_cast<std::size_t>(b) * in_dim;
        double* gxb = grad_x.data() + static_cast<std::size_t>(b) * in_dim;
        for (int o = 0; o < out_dim; ++o) {
            const double g = grad_y.at(b, o, 0, 0);
            if (g == 0.0) continue;
            d.bias_grad[o] += g;
            double* wg = d.weight_grad.data() + static_cast<std::size_t>(o) * in_dim;
            const double* wrow = d.weight.data() + static_cast<std::size_t>(o) * in_dim;
            for (int k = 0; k < in_dim; ++k) {
                wg[k] += g * xb[k];
                gxb[k] += g * wrow[k];
            }
        }
    }
    return grad_x;
}

void zero_gradients(Network& net) {
    for (auto& blob : parameters(net)) std::fill(blob.grad, blob.grad + blob.size, 0.0);
}

}  // namespace

Conv2d make_conv2d(int in_c, int out_c, int kh, int kw, int stride, int pad, Rng& rng) {
    Conv2d layer;
    layer.kernel = Tensor4(out_c, in_c, kh, kw);
    const double fan_in = static_cast<double>(in_c) * kh * kw;
    const double fan_out = static_cast<double>(out_c) * kh * kw;
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    for (double& v : layer.kernel.values()) v = rng.uniform(-limit, limit);
    layer.bias.assign(out_c, 0.0);
    layer.stride = stride;
    layer.pad = pad;
    layer.kernel_grad = Tensor4(out_c, in_c, kh, kw);
    layer.kernel_vel = Tensor4(out_c, in_c, kh, kw);
    layer.bias_grad.assign(out_c, 0.0);
    layer.bias_vel.assign(out_c, 0.0);
    return layer;
}

Dense make_dense(int in_dim, int out_dim, Rng& rng) {
    Dense layer;
    layer.weight = Matrix(out_dim, in_dim);
    const double limit = std::sqrt(6.0 / (in_dim + out_dim));
    for (double& v : layer.weight.values()) v = rng.uniform(-limit, limit);
    layer.bias.assign(out_dim, 0.0);
    layer.weight_grad = Matrix(out_dim, in_dim);
    layer.weight_vel = Matrix(out_dim, in_dim);
    layer.bias_grad.assign(out_dim, 0.0);
    layer.bias_vel.assign(out_dim, 0.0);
    return layer;
}

Pool make_pool(const owa::PoolPlan& plan) {
    Pool p;
    p.plan = plan;
    return p;
}

Pool make_owa_pool(int kh, int kw, int sh, int sw, int channels, owa::Scope scope, owa::Regime regime) {
    Pool p;
    p.plan = {kh, kw, sh, sw, owa::PoolMode::Owa};
    p.weights = owa::init_weights(kh * kw, channels, scope, regime);
    p.weight_grad = Matrix(p.weights.rows(), p.weights.n());
    p.weight_vel = Matrix(p.weights.rows(), p.weights.n());
    return p;
}

LossGrad softmax_cross_entropy(const Matrix& logits, std::span<const int> labels) {
    const int m = logits.rows(), k = logits.cols();
    if (labels.size() != static_cast<std::size_t>(m)) {
        throw std::invalid_argument("softmax_cross_entropy: batch size mismatch");
    }
    LossGrad out;
    out.grad = Matrix(m, k);
    double loss = 0.0;
    std::vector<double> p(k);
    for (int i = 0; i < m; ++i) {
        const int label = labels[i];
        if (label < 0 || label >= k) throw std::invalid_argument("softmax_cross_entropy: label out of range");
        const auto row = logits.row(i);
        const double mx = *std::max_element(row.begin(), row.end());
        double z = 0.0;
        for (int j = 0; j < k; ++j) {
            p[j] = std::exp(row[j] - mx);
            z += p[j];
        }
        for (int j = 0; j < k; ++j) p[j] /= z;
        loss -= std::log(std::max(p[label], 1e-300));
        for (int j = 0; j < k; ++j) out.grad.at(i, j) = (p[j] - (j == label ? 1.0 : 0.0)) / m;
    }
    out.loss = loss / m;
    return out;
}

Matrix network_forward(const Network& net, const Tensor4& x) {
    Tensor4 t = x;
    for (const auto& layer : net.layers) {
        if (const auto* conv = std::get_if<Conv2d>(&layer)) {
            t = conv2d_forward(zero_pad(t, conv->pad), conv->kernel, conv->bias, conv->stride);
        } else if (std::get_if<Relu>(&layer)) {
            t = elementwise(t, [](double v) { return v > 0.0 ? v : 0.0; });
        } else if (const auto* pool = std::get_if<Pool>(&layer)) {
            const owa::OwaWeights* w = pool->plan.mode == owa::PoolMode::Owa ? &pool->weights : nullptr;
            t = owa_pool_forward(t, pool->plan, w).first;
        } else if (std::get_if<Dropout>(&layer)) {
            // identity at inference
        } else if (std::get_if<Flatten>(&layer)) {
            t = t.reshape(t.n(), t.c() * t.h() * t.w(), 1, 1);
        } else if (const auto* dense = std::get_if<Dense>(&layer)) {
            t = dense_forward(*dense, t);
        }
    }
    return logits_from(t);
}

ForwardBackwardResult network_forward_backward(Network& net, const Tensor4& x, std::span<const int> labels,
                                               const owa::RegularizationConfig& reg, Rng* dropout_rng) {
    zero_gradients(net);

    std::vector<LayerCache> caches(net.layers.size());
    Tensor4 t = x;
    for (std::size_t li = 0; li < net.layers.size(); ++li) {
        auto& layer = net.layers[li];
        auto& cache = caches[li];
        if (auto* conv = std::get_if<Conv2d>(&layer)) {
            cache.input = zero_pad(t, conv->pad);
            t = conv2d_forward(cache.input, conv->kernel, conv->bias, conv->stride);
        } else if (std::get_if<Relu>(&layer)) {
            cache.input = t;
            t = elementwise(t, [](double v) { return v > 0.0 ? v : 0.0; });
        } else if (auto* pool = std::get_if<Pool>(&layer)) {
            const owa::OwaWeights* w = pool->plan.mode == owa::PoolMode::Owa ? &pool->weights : nullptr;
            auto [y, trace] = owa_pool_forward(t, pool->plan, w);
            cache.trace = std::move(trace);
            t = std::move(y);
        } else if (auto* drop = std::get_if<Dropout>(&layer)) {
            if (net.dropout_enabled && dropout_rng != nullptr && drop->keep_prob < 1.0) {
                cache.mask.resize(t.size());
                const double scale = 1.0 / drop->keep_prob;
                auto vals = t.values();
                for (std::size_t i = 0; i < vals.size(); ++i) {
                    cache.mask[i] = dropout_rng->uniform() < drop->keep_prob ? scale : 0.0;
                    vals[i] *= cache.mask[i];
                }
            }
        } else if (std::get_if<Flatten>(&layer)) {
            cache.in_c = t.c();
            cache.in_h = t.h();
            cache.in_w = t.w();
            t = t.reshape(t.n(), t.c() * t.h() * t.w(), 1, 1);
        } else if (auto* dense = std::get_if<Dense>(&layer)) {
            cache.input = t;
            t = dense_forward(*dense, t);
        }
    }

    ForwardBackwardResult result;
    result.logits = logits_from(t);
    auto lg = softmax_cross_entropy(result.logits, labels);
    result.j_ce = lg.loss;

    Tensor4 g = Tensor4::from_data(t.n(), t.c(), 1, 1,
                                   {lg.grad.values().begin(), lg.grad.values().end()});
    for (std::size_t li = net.layers.size(); li-- > 0;) {
        auto& layer = net.layers[li];
        auto& cache = caches[li];
        if (auto* conv = std::get_if<Conv2d>(&layer)) {
            Tensor4 gp = conv2d_backward(cache.input, conv->kernel, conv->stride, g,
                                         conv->kernel_grad, conv->bias_grad);
            g = crop_pad(gp, conv->pad);
        } else if (std::get_if<Relu>(&layer)) {
            auto gv = g.values();
            auto xv = cache.input.values();
            for (std::size_t i = 0; i < gv.size(); ++i)
                if (xv[i] <= 0.0) gv[i] = 0.0;
        } else if (auto* pool = std::get_if<Pool>(&layer)) {
            const owa::OwaWeights* w = pool->plan.mode == owa::PoolMode::Owa ? &pool->weights : nullptr;
            auto grads = owa_pool_backward(g, cache.trace, w);
            g = std::move(grads.input);
            if (pool->plan.mode == owa::PoolMode::Owa) {
                for (std::size_t i = 0; i < grads.weights.size(); ++i)
                    pool->weight_grad.values()[i] += grads.weights.values()[i];
            }
        } else if (std::get_if<Dropout>(&layer)) {
            if (!cache.mask.empty()) {
                auto gv = g.values();
                for (std::size_t i = 0; i < gv.size(); ++i) gv[i] *= cache.mask[i];
            }
        } else if (std::get_if<Flatten>(&layer)) {
            g = g.reshape(g.n(), cache.in_c, cache.in_h, cache.in_w);
        } else if (auto* dense = std::get_if<Dense>(&layer)) {
            g = dense_backward(*dense, cache.input, g);
        }
    }

    double penalty = 0.0;
    for (auto& layer : net.layers) {
        auto* pool = std::get_if<Pool>(&layer);
        if (pool == nullptr || pool->plan.mode != owa::PoolMode::Owa) continue;
        if (pool->weights.regime != owa::Regime::Penalty) continue;
        penalty += owa::penalty_cost(pool->weights, reg);
        Matrix pg = owa::penalty_grad(pool->weights, reg);
        for (std::size_t i = 0; i < pg.size(); ++i) pool->weight_grad.values()[i] += pg.values()[i];
    }
    result.penalty = penalty;
    result.total = result.j_ce + penalty;
    return result;
}

double network_loss(const Network& net, const Tensor4& x, std::span<const int> labels,
                    const owa::RegularizationConfig& reg) {
    Matrix logits = network_forward(net, x);
    auto lg = softmax_cross_entropy(logits, labels);
    double penalty = 0.0;
    for (const auto& layer : net.layers) {
        const auto* pool = std::get_if<Pool>(&layer);
        if (pool != nullptr && pool->plan.mode == owa::PoolMode::Owa &&
            pool->weights.regime == owa::Regime::Penalty) {
            penalty += owa::penalty_cost(pool->weights, reg);
        }
    }
    return lg.loss + penalty;
}

namespace {

void collect_blobs(Layer& layer, std::vector<ParamBlob>& blobs) {
    if (auto* conv = std::get_if<Conv2d>(&layer)) {
        blobs.push_back({conv->kernel.data(), conv->kernel_grad.data(), conv->kernel_vel.data(),
                         conv->kernel.size(), false, false,
                         {static_cast<std::uint64_t>(conv->kernel.n()), static_cast<std::uint64_t>(conv->kernel.c()),
                          static_cast<std::uint64_t>(conv->kernel.h()), static_cast<std::uint64_t>(conv->kernel.w())}});
        blobs.push_back({conv->bias.data(), conv->bias_grad.data(), conv->bias_vel.data(),
                         conv->bias.size(), false, false, {conv->bias.size()}});
    } else if (auto* pool = std::get_if<Pool>(&layer)) {
        if (pool->plan.mode == owa::PoolMode::Owa) {
            blobs.push_back({pool->weights.values.data(), pool->weight_grad.data(), pool->weight_vel.data(),
                             pool->weights.values.size(), true, pool->freeze,
                             {static_cast<std::uint64_t>(pool->weights.rows()),
                              static_cast<std::uint64_t>(pool->weights.n())}});
        }
    } else if (auto* dense = std::get_if<Dense>(&layer)) {
        blobs.push_back({dense->weight.data(), dense->weight_grad.data(), dense->weight_vel.data(),
                         dense->weight.size(), false, false,
                         {static_cast<std::uint64_t>(dense->weight.rows()),
                          static_cast<std::uint64_t>(dense->weight.cols())}});
        blobs.push_back({dense->bias.data(), dense->bias_grad.data(), dense->bias_vel.data(),
                         dense->bias.size(), false, false, {dense->bias.size()}});
    }
}

}  // namespace

std::vector<ParamBlob> parameters(Network& net) {
    std::vector<ParamBlob> blobs;
    for (auto& layer : net.layers) collect_blobs(layer, blobs);
    return blobs;
}

int sgd_step(Network& net, const TrainConfig& cfg) {
    for (auto& blob : parameters(net)) {
        if (blob.frozen) continue;
        const double lr = cfg.learning_rate * (blob.is_pool_weight ? cfg.weight_lr_multiplier : 1.0);
        for (std::size_t i = 0; i < blob.size; ++i) {
            blob.vel[i] = cfg.momentum * blob.vel[i] + blob.grad[i];
            blob.value[i] -= lr * blob.vel[i];
        }
    }
    int degenerate = 0;
    for (auto& layer : net.layers) {
        auto* pool = std::get_if<Pool>(&layer);
        if (pool == nullptr || pool->plan.mode != owa::PoolMode::Owa || pool->freeze) continue;
        if (pool->weights.regime != owa::Regime::Projected) continue;
        int d = 0;
        pool->weights = owa::project_weights(pool->weights, &d);
        degenerate += d;
    }
    return degenerate;
}

NinVariant nin_variant_from_string(const std::string& name) {
    std::string s;
    for (char ch : name) s.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    if (s == "orig") return NinVariant::Orig;
    if (s == "max") return NinVariant::Max;
    if (s == "avg" || s == "ave") return NinVariant::Avg;
    if (s == "owal") return NinVariant::OWAL;
    if (s == "owalnr") return NinVariant::OWALnr;
    if (s == "owalc") return NinVariant::OWALC;
    if (s == "owalcnr") return NinVariant::OWALCnr;
    throw std::invalid_argument("unknown NiN variant: " + name);
}

Network build_nin(int num_classes, NinVariant variant, Rng& rng) {
    if (num_classes != 10 && num_classes != 100) {
        throw std::invalid_argument("build_nin: num_classes must be 10 or 100");
    }
    owa::PoolMode site_modes[3];
    switch (variant) {
        case NinVariant::Orig:
            site_modes[0] = owa::PoolMode::Max;
            site_modes[1] = owa::PoolMode::Avg;
            site_modes[2] = owa::PoolMode::Avg;
            break;
        case NinVariant::Max:
            site_modes[0] = site_modes[1] = site_modes[2] = owa::PoolMode::Max;
            break;
        case NinVariant::Avg:
            site_modes[0] = site_modes[1] = site_modes[2] = owa::PoolMode::Avg;
            break;
        default:
            site_modes[0] = site_modes[1] = site_modes[2] = owa::PoolMode::Owa;
            break;
    }
    const bool per_channel = variant == NinVariant::OWALC || variant == NinVariant::OWALCnr;
    const bool unconstrained = variant == NinVariant::OWALnr || variant == NinVariant::OWALCnr;
    const owa::Scope scope = per_channel ? owa::Scope::PerChannel : owa::Scope::Shared;
    const owa::Regime regime = unconstrained ? owa::Regime::Unconstrained : owa::Regime::Penalty;

    auto pool_site = [&](int kh, int sh, int channels, owa::PoolMode mode) -> Pool {
        if (mode == owa::PoolMode::Owa) return make_owa_pool(kh, kh, sh, sh, channels, scope, regime);
        return make_pool({kh, kh, sh, sh, mode});
    };

    Network net;
    net.add(make_conv2d(3, 192, 5, 5, 1, 3, rng));
    net.add(Relu{});
    net.add(make_conv2d(192, 160, 1, 1, 1, 0, rng));
    net.add(Relu{});
    net.add(make_conv2d(160, 96, 1, 1, 1, 0, rng));
    net.add(Relu{});
    net.add(pool_site(3, 2, 96, site_modes[0]));
    net.add(Dropout{0.5});
    net.add(make_conv2d(96, 192, 5, 5, 1, 3, rng));
    net.add(Relu{});
    net.add(make_conv2d(192, 192, 1, 1, 1, 0, rng));
    net.add(Relu{});
    net.add(make_conv2d(192, 192, 1, 1, 1, 0, rng));
    net.add(Relu{});
    net.add(pool_site(3, 2, 192, site_modes[1]));
    net.add(Dropout{0.5});
    net.add(make_conv2d(192, 192, 5, 5, 1, 2, rng));
    net.add(Relu{});
    net.add(make_conv2d(192, 192, 1, 1, 1, 0, rng));
    net.add(Relu{});
    net.add(make_conv2d(192, num_classes, 1, 1, 1, 0, rng));
    net.add(Relu{});
    net.add(pool_site(8, 1, num_classes, site_modes[2]));
    net.add(Flatten{});
    return net;
}

double finite_diff_grad_check(Network& net, const Tensor4& x, std::span<const int> labels,
                              const owa::RegularizationConfig& reg, double epsilon,
                              int max_params_per_blob, Rng& rng) {
    if (epsilon <= 0.0) throw std::invalid_argument("finite_diff_grad_check: epsilon must be > 0");
    network_forward_backward(net, x, labels, reg, nullptr);
    auto blobs = parameters(net);
    std::vector<std::vector<double>> analytic;
    analytic.reserve(blobs.size());
    for (const auto& blob : blobs) analytic.emplace_back(blob.grad, blob.grad + blob.size);

    double max_err = 0.0;
    for (std::size_t bi = 0; bi < blobs.size(); ++bi) {
        auto& blob = blobs[bi];
        std::vector<std::size_t> idx;
        if (blob.size <= static_cast<std::size_t>(max_params_per_blob)) {
            idx.resize(blob.size);
            for (std::size_t i = 0; i < blob.size; ++i) idx[i] = i;
        } else {
            for (int i = 0; i < max_params_per_blob; ++i)
                idx.push_back(static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(blob.size) - 1)));
        }
        for (std::size_t i : idx) {
            const double old = blob.value[i];
            blob.value[i] = old + epsilon;
            const double jp = network_loss(net, x, labels, reg);
            blob.value[i] = old - epsilon;
            const double jm = network_loss(net, x, labels, reg);
            blob.value[i] = old;
            const double fd = (jp - jm) / (2.0 * epsilon);
            const double a = analytic[bi][i];
            const double err = std::abs(fd - a) / std::max({std::abs(fd), std::abs(a), 1e-6});
            max_err = std::max(max_err, err);
        }
    }
    return max_err;
}

namespace {

constexpr char kCheckpointMagic[6] = {'O', 'W', 'A', 'N', 'N', '1'};

void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

void write_f64(std::ostream& os, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    write_u64(os, bits);
}

std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

std::uint64_t read_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

double read_f64(std::istream& is) {
    const std::uint64_t bits = read_u64(is);
    double v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
}

// Per-layer parameter views in checkpoint order.
std::vector<std::vector<ParamBlob>> layer_blobs(Network& net) {
    std::vector<std::vector<ParamBlob>> out(net.layers.size());
    for (std::size_t li = 0; li < net.layers.size(); ++li) collect_blobs(net.layers[li], out[li]);
    return out;
}

}  // namespace

void save_checkpoint(const Network& net, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path);
    f.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    auto& mutable_net = const_cast<Network&>(net);  // blob views only read here
    auto per_layer = layer_blobs(mutable_net);
    write_u32(f, static_cast<std::uint32_t>(per_layer.size()));
    for (const auto& blobs : per_layer) {
        write_u32(f, static_cast<std::uint32_t>(blobs.size()));
        for (const auto& blob : blobs) {
            write_u32(f, static_cast<std::uint32_t>(blob.dims.size()));
            for (auto d : blob.dims) write_u64(f, d);
            for (std::size_t i = 0; i < blob.size; ++i) write_f64(f, blob.value[i]);
        }
    }
    if (!f) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

void load_checkpoint(Network& net, const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path);
    char magic[6];
    f.read(magic, sizeof(magic));
    if (!f || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
        throw std::runtime_error("load_checkpoint: bad magic in " + path);
    }
    auto per_layer = layer_blobs(net);
    const std::uint32_t layer_count = read_u32(f);
    if (layer_count != per_layer.size()) {
        throw std::runtime_error("load_checkpoint: layer count mismatch (file " + std::to_string(layer_count) +
                                 ", network " + std::to_string(per_layer.size()) + ")");
    }
    for (auto& blobs : per_layer) {
        const std::uint32_t blob_count = read_u32(f);
        if (blob_count != blobs.size()) throw std::runtime_error("load_checkpoint: blob count mismatch");
        for (auto& blob : blobs) {
            const std::uint32_t ndim = read_u32(f);
            if (ndim != blob.dims.size()) throw std::runtime_error("load_checkpoint: rank mismatch");
            std::size_t count = 1;
            for (std::uint32_t d = 0; d < ndim; ++d) {
                const std::uint64_t dim = read_u64(f);
                if (dim != blob.dims[d]) throw std::runtime_error("load_checkpoint: shape mismatch");
                count *= dim;
            }
            for (std::size_t i = 0; i < count; ++i) blob.value[i] = read_f64(f);
        }
    }
}

std::vector<int> predict(const Network& net, const Tensor4& x) {
    Matrix logits = network_forward(net, x);
    std::vector<int> out(logits.rows());
    for (int i = 0; i < logits.rows(); ++i) {
        const auto row = logits.row(i);
        out[i] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    }
    return out;
}

double accuracy(const Network& net, const Tensor4& x, std::span<const int> labels, int eval_batch) {
    if (labels.size() != static_cast<std::size_t>(x.n())) {
        throw std::invalid_argument("accuracy: label count mismatch");
    }
    int correct = 0;
    const std::size_t sample = static_cast<std::size_t>(x.c()) * x.h() * x.w();
    for (int start = 0; start < x.n(); start += eval_batch) {
        const int count = std::min(eval_batch, x.n() - start);
        std::vector<double> chunk(x.data() + start * sample, x.data() + (start + count) * sample);
        Tensor4 batch = Tensor4::from_data(count, x.c(), x.h(), x.w(), std::move(chunk));
        auto preds = predict(net, batch);
        for (int i = 0; i < count; ++i)
            if (preds[i] == labels[start + i]) ++correct;
    }
    return static_cast<double>(correct) / x.n();
}

}  // namespace owapool::nn

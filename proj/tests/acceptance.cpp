// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Heavier, end-to-end counterpart to the unit suites.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "owapool/bow.hpp"
#include "owapool/harness.hpp"
#include "owapool/nn.hpp"
#include "owapool/owa.hpp"
#include "owapool/rng.hpp"

using namespace owapool;
namespace fs = std::filesystem;

namespace {

struct Criterion {
    bool ok = true;
    std::string detail;

    void expect(bool cond, const std::string& what) {
        if (!cond) {
            ok = false;
            if (!detail.empty()) detail += "; ";
            detail += what;
        }
    }
    void note(const std::string& what) {
        if (!detail.empty()) detail += "; ";
        detail += what;
    }
};

double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.4g", v);
    return buf;
}

// ---------------------------------------------------------------- criterion 1

Criterion degeneracy_suite() {
    Criterion c;
    Rng rng(1001);
    int done = 0;
    double worst_avg = 0.0;
    for (int it = 0; it < 1000; ++it) {
        const int kh = 1 + static_cast<int>(rng.uniform_int(0, 3));
        const int kw = 1 + static_cast<int>(rng.uniform_int(0, 3));
        const int h = kh + static_cast<int>(rng.uniform_int(0, 9));
        const int w = kw + static_cast<int>(rng.uniform_int(0, 9));
        const int n = 1 + static_cast<int>(rng.uniform_int(0, 1));
        const int ch = 1 + static_cast<int>(rng.uniform_int(0, 2));
        const int sh = 1 + static_cast<int>(rng.uniform_int(0, kh - 1));
        const int sw = 1 + static_cast<int>(rng.uniform_int(0, kw - 1));
        Tensor4 x(n, ch, h, w);
        for (double& v : x.values()) v = rng.uniform(-2.0, 2.0);

        owa::PoolPlan owa_plan{kh, kw, sh, sw, owa::PoolMode::Owa};
        owa::PoolPlan max_plan{kh, kw, sh, sw, owa::PoolMode::Max};
        owa::PoolPlan avg_plan{kh, kw, sh, sw, owa::PoolMode::Avg};

        owa::OwaWeights wmax = owa::init_weights(kh * kw, ch, owa::Scope::Shared, owa::Regime::Unconstrained);
        std::fill(wmax.values.values().begin(), wmax.values.values().end(), 0.0);
        wmax.values.at(0, 0) = 1.0;
        auto y_owa = owa_pool_forward(x, owa_plan, &wmax).first;
        auto y_max = owa_pool_forward(x, max_plan, nullptr).first;
        if (std::memcmp(y_owa.data(), y_max.data(), y_max.size() * sizeof(double)) != 0) {
            c.expect(false, "max degeneracy not bit-identical at iteration " + std::to_string(it));
            break;
        }
        owa::OwaWeights wuni = owa::init_weights(kh * kw, ch, owa::Scope::Shared, owa::Regime::Unconstrained);
        auto y_uni = owa_pool_forward(x, owa_plan, &wuni).first;
        auto y_avg = owa_pool_forward(x, avg_plan, nullptr).first;
        for (std::size_t i = 0; i < y_uni.size(); ++i)
            worst_avg = std::max(worst_avg, std::abs(y_uni.values()[i] - y_avg.values()[i]));
        ++done;
    }
    c.expect(done == 1000, "completed " + std::to_string(done) + "/1000 geometries");
    c.expect(worst_avg < 1e-12, "avg degeneracy max deviation " + fmt(worst_avg));
    c.note("1000 geometries, avg deviation " + fmt(worst_avg));
    return c;
}

// ---------------------------------------------------------------- criterion 2

double pool_backward_fd_err(Rng& rng) {
    const int ch = 1 + static_cast<int>(rng.uniform_int(0, 1));
    Tensor4 x(1 + static_cast<int>(rng.uniform_int(0, 1)), ch, 5, 6);
    for (double& v : x.values()) v = rng.uniform(-1.0, 1.0);
    owa::PoolPlan plan{2, 3, 1, 2, owa::PoolMode::Owa};
    const owa::Scope scope = rng.uniform() < 0.5 ? owa::Scope::Shared : owa::Scope::PerChannel;
    owa::OwaWeights weights = owa::init_weights(plan.window_size(), ch, scope, owa::Regime::Unconstrained);
    for (double& v : weights.values.values()) v = rng.uniform(-0.5, 1.0);

    const auto [oh, ow] = plan.output_dims(x.h(), x.w());
    Tensor4 r(x.n(), ch, oh, ow);
    for (double& v : r.values()) v = rng.uniform(-1.0, 1.0);

    auto [y, trace] = owa_pool_forward(x, plan, &weights);
    auto grads = owa_pool_backward(r, trace, &weights);

    auto scalarize = [&]() {
        auto yy = owa_pool_forward(x, plan, &weights).first;
        double s = 0.0;
        for (std::size_t i = 0; i < yy.size(); ++i) s += r.values()[i] * yy.values()[i];
        return s;
    };
    const double eps = 1e-5;
    double max_err = 0.0;
    for (int probe = 0; probe < 8; ++probe) {
        auto idx = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(x.size()) - 1));
        double& xi = x.values()[idx];
        const double old = xi;
        xi = old + eps;
        const double fp = scalarize();
        xi = old - eps;
        const double fm = scalarize();
        xi = old;
        max_err = std::max(max_err, rel_err(grads.input.values()[idx], (fp - fm) / (2 * eps)));
    }
    for (std::size_t wi = 0; wi < weights.values.size(); ++wi) {
        double& v = weights.values.values()[wi];
        const double old = v;
        v = old + eps;
        const double fp = scalarize();
        v = old - eps;
        const double fm = scalarize();
        v = old;
        max_err = std::max(max_err, rel_err(grads.weights.values()[wi], (fp - fm) / (2 * eps)));
    }
    return max_err;
}

double penalty_fd_err(Rng& rng) {
    const int n = 2 + static_cast<int>(rng.uniform_int(0, 6));
    owa::OwaWeights w = owa::init_weights(n, 2, rng.uniform() < 0.5 ? owa::Scope::Shared : owa::Scope::PerChannel,
                                          owa::Regime::Penalty);
    for (double& v : w.values.values()) {
        v = rng.uniform(-1.0, 1.5);
        if (std::abs(v) < 1e-3) v = 0.2;
    }
    owa::RegularizationConfig cfg{rng.uniform(0.1, 2.0), rng.uniform(0.1, 2.0), rng.uniform(0.0, 1.0)};
    Matrix g = owa::penalty_grad(w, cfg);
    const double eps = 1e-6;
    double max_err = 0.0;
    for (std::size_t i = 0; i < w.values.size(); ++i) {
        double& v = w.values.values()[i];
        const double old = v;
        v = old + eps;
        const double fp = owa::penalty_cost(w, cfg);
        v = old - eps;
        const double fm = owa::penalty_cost(w, cfg);
        v = old;
        max_err = std::max(max_err, rel_err(g.values()[i], (fp - fm) / (2 * eps)));
    }
    return max_err;
}

double network_fd_err(Rng& rng, Rng& check_rng) {
    nn::Network net;
    const int ch = 3;
    const owa::Scope scope = rng.uniform() < 0.5 ? owa::Scope::Shared : owa::Scope::PerChannel;
    const owa::Regime regime = rng.uniform() < 0.5 ? owa::Regime::Penalty : owa::Regime::Unconstrained;
    net.add(nn::make_conv2d(1, ch, 3, 3, 1, 0, rng));
    net.add(nn::Relu{});
    net.add(nn::make_owa_pool(2, 2, 2, 2, ch, scope, regime));
    net.add(nn::Flatten{});
    net.add(nn::make_dense(ch * 3 * 3, 2, rng));
    Tensor4 x(3, 1, 8, 8);
    for (double& v : x.values()) v = rng.uniform(-1.0, 1.0);
    std::vector<int> labels(3);
    for (int& l : labels) l = static_cast<int>(rng.uniform_int(0, 1));
    return nn::finite_diff_grad_check(net, x, labels, {1.0, 1.0, 0.01}, 1e-5, 6, check_rng);
}

double joint_grads_fd_err(Rng& rng) {
    const int m = 6, cells = 5, k = 4;
    std::vector<Matrix> sorted;
    std::vector<int> y;
    for (int i = 0; i < m; ++i) {
        Matrix codes(cells, k);
        for (double& v : codes.values()) v = rng.uniform(0.0, 2.0);
        sorted.push_back(bow::sort_codes_desc(codes));
        y.push_back(i % 2 == 0 ? 1 : -1);
    }
    std::vector<double> theta(k), w(cells), mu(cells);
    for (auto& v : theta) v = rng.uniform(-1.0, 1.0);
    for (auto& v : w) v = rng.uniform(0.01, 0.5);
    for (auto& v : mu) v = rng.uniform(0.0, 0.3);
    const double lambda = rng.uniform(-0.5, 0.5);
    bow::BowRegularization reg{rng.uniform(0.5, 3.0), rng.uniform(0.0, 0.5)};

    auto grads = bow::joint_grads(theta, w, sorted, y, reg, lambda, mu);
    auto lag = [&] { return bow::lagrangian(theta, w, sorted, y, reg, lambda, mu); };
    const double eps = 1e-6;
    double max_err = 0.0;
    auto probe = [&](double& v, double analytic) {
        const double old = v;
        v = old + eps;
        const double fp = lag();
        v = old - eps;
        const double fm = lag();
        v = old;
        max_err = std::max(max_err, rel_err(analytic, (fp - fm) / (2 * eps)));
    };
    for (int j = 0; j < k; ++j) probe(theta[j], grads.theta[j]);
    for (int r = 0; r < cells; ++r) probe(w[r], grads.w[r]);
    return max_err;
}

Criterion gradient_oracle_suite() {
    Criterion c;
    double worst_pool = 0, worst_pen = 0, worst_net = 0, worst_joint = 0;
    {
        Rng rng(2001);
        for (int i = 0; i < 100; ++i) worst_pool = std::max(worst_pool, pool_backward_fd_err(rng));
    }
    {
        Rng rng(2002);
        for (int i = 0; i < 100; ++i) worst_pen = std::max(worst_pen, penalty_fd_err(rng));
    }
    {
        Rng rng(2003), check_rng(2004);
        for (int i = 0; i < 100; ++i) worst_net = std::max(worst_net, network_fd_err(rng, check_rng));
    }
    {
        Rng rng(2005);
        for (int i = 0; i < 100; ++i) worst_joint = std::max(worst_joint, joint_grads_fd_err(rng));
    }
    c.expect(worst_pool < 1e-4, "pool backward fd err " + fmt(worst_pool));
    c.expect(worst_pen < 1e-4, "penalty grad fd err " + fmt(worst_pen));
    c.expect(worst_net < 1e-4, "network grad fd err " + fmt(worst_net));
    c.expect(worst_joint < 1e-4, "joint grads fd err " + fmt(worst_joint));
    c.note("max rel errs: pool " + fmt(worst_pool) + ", penalty " + fmt(worst_pen) + ", network " +
           fmt(worst_net) + ", joint " + fmt(worst_joint));
    return c;
}

// ---------------------------------------------------------------- criterion 3

Criterion constraint_suite() {
    Criterion c;

    // Projected regime: simplex invariants hold after every optimizer step.
    {
        Rng rng(3001);
        nn::Network net;
        net.add(nn::make_conv2d(1, 3, 3, 3, 1, 0, rng));
        net.add(nn::Relu{});
        net.add(nn::make_owa_pool(2, 2, 2, 2, 3, owa::Scope::PerChannel, owa::Regime::Projected));
        net.add(nn::Flatten{});
        net.add(nn::make_dense(3 * 3 * 3, 2, rng));
        Tensor4 x(10, 1, 8, 8);
        for (double& v : x.values()) v = rng.uniform(-1.0, 1.0);
        std::vector<int> labels(10);
        for (int& l : labels) l = static_cast<int>(rng.uniform_int(0, 1));
        nn::TrainConfig cfg;
        cfg.learning_rate = 0.05;
        cfg.momentum = 0.9;
        cfg.reg = {1.0, 1.0, 0.01};
        int violations = 0;
        for (int step = 0; step < 1000; ++step) {
            nn::network_forward_backward(net, x, labels, cfg.reg, nullptr);
            nn::sgd_step(net, cfg);
            const auto* pool = std::get_if<nn::Pool>(&net.layers[2]);
            for (int r = 0; r < pool->weights.rows(); ++r) {
                double sum = 0.0;
                bool nonneg = true;
                for (double v : pool->weights.values.row(r)) {
                    nonneg = nonneg && v >= 0.0;
                    sum += v;
                }
                if (!nonneg || std::abs(sum - 1.0) > 1e-9) ++violations;
            }
        }
        c.expect(violations == 0, std::to_string(violations) + " simplex violations over 1000 steps");
    }

    // Penalty regime: the penalty shrinks to <= 10% of its initial value
    // within 50 epochs from a deliberate non-simplex start.
    {
        harness::SynthSpec spec;
        spec.kind = harness::SynthSpec::Kind::SparseBlob;
        spec.n_samples = 100;
        spec.size = 12;
        harness::LabeledImages train = harness::synth_dataset(spec, 3002);
        Rng rng(3002);
        nn::Network net = harness::build_small_net(1, 12, 2, 4, 3, 2, 2, "owal", rng);
        auto* pool = std::get_if<nn::Pool>(&net.layers[2]);
        for (double& v : pool->weights.values.values()) v = 0.5;  // sums to 2
        const owa::RegularizationConfig reg{1.0, 1.0, 0.01};
        const double p0 = owa::penalty_cost(pool->weights, reg);
        nn::TrainConfig cfg;
        cfg.learning_rate = 0.01;
        cfg.momentum = 0.9;
        cfg.epochs = 50;
        cfg.batch_size = 20;
        cfg.weight_lr_multiplier = 0.2;
        cfg.seed = 3002;
        cfg.reg = reg;
        harness::train_network(net, train, {Tensor4(1, 1, 12, 12), {0}}, cfg);
        const double p50 = owa::penalty_cost(pool->weights, reg);
        c.expect(p50 <= 0.1 * p0, "penalty " + fmt(p50) + " vs initial " + fmt(p0));
        c.note("penalty " + fmt(p0) + " -> " + fmt(p50) + " after 50 epochs");
    }
    return c;
}

// ---------------------------------------------------------------- criterion 4

Criterion desk_cnn_comparison() {
    Criterion c;
    const std::uint64_t seed = 42;
    auto run_variant = [&](const harness::LabeledImages& train, const harness::LabeledImages& test,
                           const std::string& variant) {
        Rng rng(seed);
        nn::Network net = harness::build_small_net(1, 20, 2, 8, 3, 0, 0, variant, rng);
        nn::TrainConfig cfg;
        cfg.learning_rate = 0.008;
        cfg.momentum = 0.9;
        cfg.epochs = 100;
        cfg.batch_size = 50;
        cfg.weight_lr_multiplier = 0.2;
        cfg.seed = seed;
        cfg.reg = {1.0, 1.0, 0.01};
        auto stats = harness::train_network(net, train, test, cfg);
        return stats.back().test_acc;
    };

    for (const bool blob : {true, false}) {
        harness::SynthSpec spec;
        spec.kind = blob ? harness::SynthSpec::Kind::SparseBlob : harness::SynthSpec::Kind::Texture;
        spec.size = 20;
        spec.n_samples = 1000;
        harness::LabeledImages train = harness::synth_dataset(spec, seed);
        spec.n_samples = 500;
        harness::LabeledImages test = harness::synth_dataset(spec, seed + 1);

        const double acc_max = run_variant(train, test, "max");
        const double acc_avg = run_variant(train, test, "avg");
        const double acc_owal = run_variant(train, test, "owal");
        const char* name = blob ? "blob" : "texture";
        if (blob) {
            c.expect(acc_max >= acc_avg + 0.05,
                     std::string(name) + ": max " + fmt(acc_max) + " vs avg " + fmt(acc_avg));
        } else {
            c.expect(acc_avg >= acc_max + 0.05,
                     std::string(name) + ": avg " + fmt(acc_avg) + " vs max " + fmt(acc_max));
        }
        c.expect(acc_owal >= std::max(acc_max, acc_avg) - 0.02,
                 std::string(name) + ": owal " + fmt(acc_owal) + " vs best " +
                     fmt(std::max(acc_max, acc_avg)));
        c.note(std::string(name) + " max/avg/owal = " + fmt(acc_max) + "/" + fmt(acc_avg) + "/" +
               fmt(acc_owal));
    }
    return c;
}

// ---------------------------------------------------------------- criterion 5

Criterion desk_bow_run() {
    Criterion c;
    auto all = harness::make_bow_toy_codes(200, 16, 16, 77);
    std::vector<bow::CodedImage> train(all.begin(), all.begin() + 120);
    std::vector<bow::CodedImage> test(all.begin() + 120, all.end());

    bow::BowRegularization reg{10.0, 0.05};
    bow::TrainSchedule sched;
    sched.outer_max = 15;

    std::vector<double> wmax(16, 0.0);
    wmax[0] = 1.0;
    auto rmax = bow::alternating_train(train, 2, reg, sched, wmax, false);
    auto rowa = bow::alternating_train(train, 2, reg, sched, {}, true);

    const double acc_max = bow::accuracy(rmax.model, rmax.w, test);
    const double acc_owa = bow::accuracy(rowa.model, rowa.w, test);
    c.expect(acc_owa >= acc_max + 0.05, "owa " + fmt(acc_owa) + " vs max baseline " + fmt(acc_max));

    int violations = 0;
    for (const auto& rec : rowa.history)
        for (std::size_t i = 1; i < rec.step_costs.size(); ++i)
            if (rec.step_costs[i] > rec.step_costs[i - 1] + 1e-9) ++violations;
    c.expect(violations == 0, std::to_string(violations) + " non-monotone accepted steps");
    c.note("owa " + fmt(acc_owa) + " vs max " + fmt(acc_max) + ", monotone phases");
    return c;
}

// ---------------------------------------------------------------- criterion 6

Criterion nin_construction() {
    Criterion c;
    Rng rng(6001);
    nn::Network net = nn::build_nin(10, nn::NinVariant::OWAL, rng);
    std::vector<int> sizes;
    for (const auto& layer : net.layers)
        if (const auto* p = std::get_if<nn::Pool>(&layer)) sizes.push_back(p->weights.n());
    c.expect(sizes.size() == 3, "expected 3 pooling sites, got " + std::to_string(sizes.size()));
    c.expect(sizes == std::vector<int>{9, 9, 64},
             "weight sizes " + std::to_string(sizes.size() > 0 ? sizes[0] : -1) + "," +
                 std::to_string(sizes.size() > 1 ? sizes[1] : -1) + "," +
                 std::to_string(sizes.size() > 2 ? sizes[2] : -1));
    Tensor4 x(2, 3, 32, 32);
    for (double& v : x.values()) v = rng.uniform(0.0, 1.0);
    Matrix logits = nn::network_forward(net, x);
    c.expect(logits.rows() == 2 && logits.cols() == 10,
             "logits " + std::to_string(logits.rows()) + "x" + std::to_string(logits.cols()));
    c.note("weight sizes 9,9,64; forward 32x32x3 -> 10 logits");
    return c;
}

// ---------------------------------------------------------------- criterion 7

Criterion performance_bound() {
    Criterion c;
    const std::array<int, 4> shape{1, 32, 222, 222};
    const std::vector<std::string> variants{"max", "avg", "owa"};
    auto rows = harness::benchmark_pooling(std::span(&shape, 1), variants, 5, 2, 2);
    double ratio = 0.0;
    for (const auto& row : rows) {
        c.expect(row.window_ops == 394272,
                 row.variant + " window ops " + std::to_string(row.window_ops));
        if (row.variant == "owa") ratio = row.fwd_ratio_to_max;
    }
    c.expect(ratio > 0.0 && ratio < 10.0, "owa/max forward ratio " + fmt(ratio));
    c.note("394272 windows, owa/max forward ratio " + fmt(ratio) + "x");
    return c;
}

// ---------------------------------------------------------------- criterion 8

// CIFAR-format fixture data: class identity carried by the count of medium
// bumps, visible to max, avg and learned pooling alike.
void write_synth_cifar(const std::string& path, int n, std::uint64_t seed) {
    harness::SynthSpec spec;
    spec.kind = harness::SynthSpec::Kind::Texture;
    spec.n_samples = n;
    spec.size = 32;
    spec.bumps_class0 = 5;
    spec.bumps_class1 = 25;
    spec.bump_height = 1.0;
    spec.decoy_height = 1.0;
    spec.texture_noise_sigma = 0.06;
    harness::LabeledImages gray = harness::synth_dataset(spec, seed);
    Rng rng(seed ^ 0xabcdefull);
    Tensor4 rgb(n, 3, 32, 32);
    for (int s = 0; s < n; ++s)
        for (int ch = 0; ch < 3; ++ch)
            for (int i = 0; i < 32; ++i)
                for (int j = 0; j < 32; ++j) {
                    const double v = 0.25 + 0.5 * gray.images.at(s, 0, i, j) + rng.uniform(-0.02, 0.02);
                    rgb.at(s, ch, i, j) = std::clamp(v, 0.0, 1.0);
                }
    harness::write_cifar10_batch(path, rgb, gray.labels);
}

Criterion cifar_smoke() {
    Criterion c;
    std::string dir;
    std::vector<int> class_filter{0, 1};
    if (const char* env = std::getenv("OWAPOOL_CIFAR_DIR"); env != nullptr && fs::exists(env)) {
        dir = env;
        c.note("using CIFAR-10 batches from " + dir);
    } else if (fs::exists("data/cifar-10-batches-bin")) {
        dir = "data/cifar-10-batches-bin";
        c.note("using CIFAR-10 batches from " + dir);
    } else {
        dir = (fs::temp_directory_path() / "owapool_acceptance_cifar").string();
        fs::create_directories(dir);
        write_synth_cifar(dir + "/data_batch_1.bin", 1600, 8101);
        write_synth_cifar(dir + "/test_batch.bin", 400, 8102);
        c.note("no CIFAR-10 data found; using generated batches in the same binary format");
    }

    harness::CifarData train_raw = harness::load_cifar10(dir, 1600, class_filter);
    harness::CifarData test_raw =
        harness::load_cifar10(dir + "/test_batch.bin", 400, class_filter, train_raw.channel_means);
    harness::LabeledImages train{std::move(train_raw.images), std::move(train_raw.labels)};
    harness::LabeledImages test{std::move(test_raw.images), std::move(test_raw.labels)};

    const fs::path out_dir = fs::temp_directory_path() / "owapool_acceptance_out";
    fs::remove_all(out_dir);

    double acc_max = 0, acc_avg = 0, acc_owal = 0;
    for (const std::string variant : {"max", "avg", "owal"}) {
        Rng rng(8100);
        nn::Network net = harness::build_small_net(3, 32, 2, 8, 3, 3, 2, variant, rng);
        nn::TrainConfig cfg;
        cfg.learning_rate = 0.01;
        cfg.momentum = 0.9;
        cfg.epochs = 30;
        cfg.batch_size = 50;
        cfg.weight_lr_multiplier = 0.2;
        cfg.seed = 8100;
        cfg.reg = {1.0, 1.0, 0.01};
        const std::string weight_dir = (out_dir / variant).string();
        auto on_epoch = [&](int epoch, nn::Network& n) {
            for (const auto& layer : n.layers) {
                const auto* pool = std::get_if<nn::Pool>(&layer);
                if (pool == nullptr || pool->plan.mode != owa::PoolMode::Owa) continue;
                fs::create_directories(weight_dir);
                owa::write_weights_csv(weight_dir + "/weights_epoch" + std::to_string(epoch) + ".csv",
                                       pool->weights);
            }
        };
        auto stats = harness::train_network(net, train, test, cfg, on_epoch);
        const double acc = stats.back().test_acc;
        if (variant == "max") acc_max = acc;
        else if (variant == "avg") acc_avg = acc;
        else acc_owal = acc;
    }

    c.expect(acc_max >= 0.70, "max test acc " + fmt(acc_max));
    c.expect(acc_avg >= 0.70, "avg test acc " + fmt(acc_avg));
    c.expect(acc_owal >= 0.70, "owal test acc " + fmt(acc_owal));
    c.expect(acc_owal >= std::max(acc_max, acc_avg) - 0.03,
             "owal " + fmt(acc_owal) + " vs best " + fmt(std::max(acc_max, acc_avg)));

    // weight CSV per epoch, parseable, finite (Penalty-regime invariant)
    int missing = 0;
    double penalty_last = 0.0;
    for (int epoch = 0; epoch < 30; ++epoch) {
        const fs::path f = out_dir / "owal" / ("weights_epoch" + std::to_string(epoch) + ".csv");
        if (!fs::exists(f)) {
            ++missing;
            continue;
        }
        std::ifstream in(f);
        Matrix w = owa::read_weights_csv(in);
        owa::OwaWeights weights;
        weights.values = w;
        penalty_last = owa::penalty_cost(weights, {1.0, 1.0, 0.01});
        for (double v : w.values())
            if (!std::isfinite(v)) c.expect(false, "non-finite weight in " + f.string());
    }
    c.expect(missing == 0, std::to_string(missing) + " missing weight csv epochs");
    c.expect(std::isfinite(penalty_last), "final penalty not finite");
    c.note("max/avg/owal = " + fmt(acc_max) + "/" + fmt(acc_avg) + "/" + fmt(acc_owal) +
           ", 30 weight csvs, final penalty " + fmt(penalty_last));
    return c;
}

}  // namespace

int main() {
    struct Entry {
        const char* name;
        std::function<Criterion()> run;
    };
    const std::vector<Entry> entries = {
        {"1 degeneracy suite", degeneracy_suite},
        {"2 gradient oracle suite", gradient_oracle_suite},
        {"3 constraint suite", constraint_suite},
        {"4 desk-scale cnn comparison", desk_cnn_comparison},
        {"5 desk-scale bow run", desk_bow_run},
        {"6 nin construction check", nin_construction},
        {"7 performance bound", performance_bound},
        {"8 cifar-10 smoke", cifar_smoke},
    };

    int failures = 0;
    for (const auto& entry : entries) {
        const auto t0 = std::chrono::steady_clock::now();
        Criterion c;
        try {
            c = entry.run();
        } catch (const std::exception& e) {
            c.ok = false;
            c.detail = std::string("exception: ") + e.what();
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("[%s] criterion %s (%.1fs)%s%s\n", c.ok ? "PASS" : "FAIL", entry.name, secs,
                    c.detail.empty() ? "" : " -- ", c.detail.c_str());
        std::fflush(stdout);
        if (!c.ok) ++failures;
    }
    if (failures > 0) std::printf("%d criterion(s) failed\n", failures);
    return failures == 0 ? 0 : 1;
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstring>
#include <functional>
#include <sstream>
#include <vector>

#include "owapool/owa.hpp"
#include "owapool/rng.hpp"
#include "support/test_util.hpp"

using namespace owapool;
using namespace owapool::owa;
using testutil::random_tensor;
using testutil::rel_err;

namespace {

// Independent window oracle: gather, plain descending value sort, dot.
double window_oracle(const Tensor4& x, int b, int c, int i0, int j0, int kh, int kw,
                     std::span<const double> w) {
    std::vector<double> vals;
    for (int i = 0; i < kh; ++i)
        for (int j = 0; j < kw; ++j) vals.push_back(x.at(b, c, i0 + i, j0 + j));
    std::sort(vals.begin(), vals.end(), std::greater<double>());
    double acc = 0.0;
    for (std::size_t k = 0; k < vals.size(); ++k) acc += w[k] * vals[k];
    return acc;
}

Tensor4 pool_oracle(const Tensor4& x, const PoolPlan& plan, const OwaWeights& w) {
    const auto [oh, ow] = plan.output_dims(x.h(), x.w());
    Tensor4 y(x.n(), x.c(), oh, ow);
    for (int b = 0; b < x.n(); ++b)
        for (int c = 0; c < x.c(); ++c)
            for (int i = 0; i < oh; ++i)
                for (int j = 0; j < ow; ++j)
                    y.at(b, c, i, j) = window_oracle(x, b, c, i * plan.sh, j * plan.sw, plan.kh, plan.kw,
                                                     w.row_for_channel(c));
    return y;
}

OwaWeights weights_from(std::vector<double> vals, Scope scope = Scope::Shared,
                        Regime regime = Regime::Unconstrained) {
    OwaWeights w;
    const int n = static_cast<int>(vals.size());
    w.values = Matrix::from_data(1, n, std::move(vals));
    w.scope = scope;
    w.regime = regime;
    return w;
}

}  // namespace

TEST_CASE("sort_desc examples") {
    auto [s1, p1] = sort_desc(std::vector<double>{1, 3, 2});
    CHECK(s1 == std::vector<double>{3, 2, 1});
    CHECK(p1 == std::vector<std::int32_t>{1, 2, 0});

    auto [s2, p2] = sort_desc(std::vector<double>{5, 5, 1});
    CHECK(s2 == std::vector<double>{5, 5, 1});
    CHECK(p2 == std::vector<std::int32_t>{0, 1, 2});  // stable tie-break

    auto [s3, p3] = sort_desc(std::vector<double>{7});
    CHECK(s3 == std::vector<double>{7});
    CHECK(p3 == std::vector<std::int32_t>{0});
}

TEST_CASE("owa_aggregate special cases and hand oracle") {
    CHECK(owa_aggregate(std::vector<double>{0.5, 2.0, 1.0}, std::vector<double>{1, 0, 0}) == 2.0);
    CHECK(owa_aggregate(std::vector<double>{3, 1, 2}, std::vector<double>{1.0 / 3, 1.0 / 3, 1.0 / 3}) ==
          doctest::Approx(2.0).epsilon(1e-15));
    CHECK(owa_aggregate(std::vector<double>{4, 1, 3, 2}, std::vector<double>{0.4, 0.3, 0.2, 0.1}) ==
          doctest::Approx(3.0).epsilon(1e-15));
    CHECK_THROWS(owa_aggregate(std::vector<double>{1, 2}, std::vector<double>{1}));
}

TEST_CASE("owa_aggregate properties") {
    Rng rng(7);
    for (int it = 0; it < 50; ++it) {
        const int n = 1 + static_cast<int>(rng.uniform_int(0, 7));
        std::vector<double> vals(n), w(n);
        for (auto& v : vals) v = rng.uniform(-3, 3);
        double sum = 0;
        for (auto& v : w) { v = rng.uniform(0, 1); sum += v; }
        for (auto& v : w) v /= sum;  // simplex weights

        // permutation invariance (exact: same sorted array)
        std::vector<double> shuffled = vals;
        rng.shuffle(shuffled);
        CHECK(owa_aggregate(shuffled, w) == owa_aggregate(vals, w));

        // idempotence on constants
        const double c = rng.uniform(-2, 2);
        CHECK(owa_aggregate(std::vector<double>(n, c), w) == doctest::Approx(c).epsilon(1e-12));

        // shift invariance for simplex weights
        std::vector<double> shifted = vals;
        for (auto& v : shifted) v += c;
        CHECK(owa_aggregate(shifted, w) == doctest::Approx(owa_aggregate(vals, w) + c).epsilon(1e-12));
    }
}

TEST_CASE("pool forward examples") {
    const Tensor4 x = Tensor4::from_data(1, 1, 2, 2, {1, 4, 2, 3});
    PoolPlan plan{2, 2, 2, 2, PoolMode::Owa};

    auto wmax = weights_from({1, 0, 0, 0});
    CHECK(owa_pool_forward(x, plan, &wmax).first.at(0, 0, 0, 0) == 4.0);

    auto wavg = weights_from({0.25, 0.25, 0.25, 0.25});
    CHECK(owa_pool_forward(x, plan, &wavg).first.at(0, 0, 0, 0) == doctest::Approx(2.5).epsilon(1e-15));

    std::vector<double> iota(16);
    for (int i = 0; i < 16; ++i) iota[i] = i + 1;
    const Tensor4 x2 = Tensor4::from_data(1, 1, 4, 4, iota);
    auto w2 = weights_from({0.5, 0.5, 0, 0});
    auto y2 = owa_pool_forward(x2, plan, &w2).first;
    CHECK(y2.at(0, 0, 0, 0) == doctest::Approx(5.5));
    CHECK(y2.at(0, 0, 0, 1) == doctest::Approx(7.5));
    CHECK(y2.at(0, 0, 1, 0) == doctest::Approx(13.5));
    CHECK(y2.at(0, 0, 1, 1) == doctest::Approx(15.5));
    // same values from the independent oracle
    auto oracle = pool_oracle(x2, plan, w2);
    for (std::size_t i = 0; i < y2.size(); ++i)
        CHECK(y2.values()[i] == doctest::Approx(oracle.values()[i]).epsilon(1e-15));
}

TEST_CASE("pool forward matches brute-force oracle on random overlapping windows") {
    Rng rng(11);
    for (int it = 0; it < 30; ++it) {
        const int c = 1 + static_cast<int>(rng.uniform_int(0, 2));
        const int h = 4 + static_cast<int>(rng.uniform_int(0, 4));
        const int w = 4 + static_cast<int>(rng.uniform_int(0, 4));
        const Tensor4 x = random_tensor(2, c, h, w, rng);
        PoolPlan plan{3, 2, 1, 2, PoolMode::Owa};
        OwaWeights weights = init_weights(plan.window_size(), c,
                                          it % 2 == 0 ? Scope::Shared : Scope::PerChannel,
                                          Regime::Unconstrained);
        for (double& v : weights.values.values()) v = rng.uniform(-0.5, 1.0);
        auto y = owa_pool_forward(x, plan, &weights).first;
        auto oracle = pool_oracle(x, plan, weights);
        for (std::size_t i = 0; i < y.size(); ++i)
            CHECK(y.values()[i] == doctest::Approx(oracle.values()[i]).epsilon(1e-13));
    }
}

TEST_CASE("degeneracy: OWA recovers max bit-exactly and avg within 1e-12") {
    Rng rng(13);
    for (int it = 0; it < 100; ++it) {
        const int c = 1 + static_cast<int>(rng.uniform_int(0, 2));
        const int h = 3 + static_cast<int>(rng.uniform_int(0, 5));
        const int w = 3 + static_cast<int>(rng.uniform_int(0, 5));
        const int kh = 2 + static_cast<int>(rng.uniform_int(0, std::min(2, h - 2)));
        const int kw = 2 + static_cast<int>(rng.uniform_int(0, std::min(2, w - 2)));
        const Tensor4 x = random_tensor(1, c, h, w, rng);

        PoolPlan owa_plan{kh, kw, kh, kw, PoolMode::Owa};
        PoolPlan max_plan{kh, kw, kh, kw, PoolMode::Max};
        PoolPlan avg_plan{kh, kw, kh, kw, PoolMode::Avg};

        OwaWeights wmax = init_weights(kh * kw, c, Scope::Shared, Regime::Unconstrained);
        std::fill(wmax.values.values().begin(), wmax.values.values().end(), 0.0);
        wmax.values.at(0, 0) = 1.0;
        auto y_owa = owa_pool_forward(x, owa_plan, &wmax).first;
        auto y_max = owa_pool_forward(x, max_plan, nullptr).first;
        REQUIRE(y_owa.size() == y_max.size());
        CHECK(std::memcmp(y_owa.data(), y_max.data(), y_max.size() * sizeof(double)) == 0);

        OwaWeights wuni = init_weights(kh * kw, c, Scope::Shared, Regime::Unconstrained);
        auto y_uni = owa_pool_forward(x, owa_plan, &wuni).first;
        auto y_avg = owa_pool_forward(x, avg_plan, nullptr).first;
        for (std::size_t i = 0; i < y_uni.size(); ++i)
            CHECK(std::abs(y_uni.values()[i] - y_avg.values()[i]) < 1e-12);
    }
}

TEST_CASE("monotonicity for nonnegative weights") {
    Rng rng(17);
    const Tensor4 x = random_tensor(1, 1, 5, 5, rng);
    PoolPlan plan{3, 3, 1, 1, PoolMode::Owa};
    OwaWeights w = init_weights(9, 1, Scope::Shared, Regime::Unconstrained);
    for (double& v : w.values.values()) v = rng.uniform(0.0, 1.0);
    auto y0 = owa_pool_forward(x, plan, &w).first;
    for (int it = 0; it < 20; ++it) {
        Tensor4 x2 = x;
        const int i = static_cast<int>(rng.uniform_int(0, 4));
        const int j = static_cast<int>(rng.uniform_int(0, 4));
        x2.at(0, 0, i, j) += rng.uniform(0.0, 2.0);
        auto y1 = owa_pool_forward(x2, plan, &w).first;
        for (std::size_t k = 0; k < y0.size(); ++k) CHECK(y1.values()[k] >= y0.values()[k] - 1e-12);
    }
}

TEST_CASE("backward recovers max and avg routing") {
    const Tensor4 x = Tensor4::from_data(1, 1, 2, 2, {1, 4, 2, 3});
    PoolPlan plan{2, 2, 2, 2, PoolMode::Owa};
    const Tensor4 gy = Tensor4::from_data(1, 1, 1, 1, {1});

    auto wmax = weights_from({1, 0, 0, 0});
    auto [y, trace] = owa_pool_forward(x, plan, &wmax);
    auto grads = owa_pool_backward(gy, trace, &wmax);
    CHECK(grads.input.at(0, 0, 0, 0) == 0);
    CHECK(grads.input.at(0, 0, 0, 1) == 1);  // argmax position
    CHECK(grads.input.at(0, 0, 1, 0) == 0);
    CHECK(grads.input.at(0, 0, 1, 1) == 0);

    auto wuni = weights_from({0.25, 0.25, 0.25, 0.25});
    auto [y2, trace2] = owa_pool_forward(x, plan, &wuni);
    auto grads2 = owa_pool_backward(gy, trace2, &wuni);
    for (double v : grads2.input.values()) CHECK(v == doctest::Approx(0.25));
}

TEST_CASE("backward matches finite differences of a random scalarization") {
    Rng rng(23);
    for (int it = 0; it < 20; ++it) {
        const int c = 1 + static_cast<int>(rng.uniform_int(0, 1));
        const Tensor4 x = random_tensor(2, c, 5, 6, rng);
        PoolPlan plan{2, 3, 1, 2, PoolMode::Owa};  // overlapping rows
        const Scope scope = it % 2 == 0 ? Scope::Shared : Scope::PerChannel;
        OwaWeights weights = init_weights(plan.window_size(), c, scope, Regime::Unconstrained);
        for (double& v : weights.values.values()) v = rng.uniform(-0.5, 1.0);

        const auto [oh, ow] = plan.output_dims(x.h(), x.w());
        Tensor4 r = random_tensor(2, c, oh, ow, rng);  // scalarization S = sum r*y

        auto [y, trace] = owa_pool_forward(x, plan, &weights);
        auto grads = owa_pool_backward(r, trace, &weights);

        Tensor4 xm = x;
        auto scalarize = [&]() {
            auto yy = owa_pool_forward(xm, plan, &weights).first;
            double s = 0.0;
            for (std::size_t i = 0; i < yy.size(); ++i) s += r.values()[i] * yy.values()[i];
            return s;
        };
        // subsample of input coordinates
        for (int probe = 0; probe < 12; ++probe) {
            const auto idx = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(x.size()) - 1));
            const double fd = testutil::central_diff(scalarize, xm.values()[idx], 1e-5);
            CHECK(rel_err(grads.input.values()[idx], fd) < 1e-5);
        }
        // all weight coordinates
        for (std::size_t wi = 0; wi < weights.values.size(); ++wi) {
            const double fd = testutil::central_diff(scalarize, weights.values.values()[wi], 1e-5);
            CHECK(rel_err(grads.weights.values()[wi], fd) < 1e-5);
        }
    }
}

TEST_CASE("penalty cost examples") {
    RegularizationConfig cfg{1.0, 1.0, 1.0};
    CHECK(penalty_cost(weights_from({1, 0, 0, 0}), cfg) == doctest::Approx(1.0));
    CHECK(penalty_cost(weights_from({0.25, 0.25, 0.25, 0.25}), cfg) == 0.0);
    CHECK(penalty_cost(weights_from({0.5, 0.6}), cfg) == doctest::Approx(0.02));
    // c1 term alone
    RegularizationConfig only_c1{2.0, 0.0, 0.0};
    CHECK(penalty_cost(weights_from({-0.5, 1.5}), only_c1) == doctest::Approx(1.0));
}

TEST_CASE("penalty grad examples and finite differences") {
    RegularizationConfig cfg{1.0, 1.0, 1.0};
    Matrix g0 = penalty_grad(weights_from({0.25, 0.25, 0.25, 0.25}), cfg);
    for (double v : g0.values()) CHECK(v == 0.0);

    Matrix g1 = penalty_grad(weights_from({0.5, 0.6}), cfg);
    CHECK(g1.at(0, 0) == doctest::Approx(0.0));
    CHECK(g1.at(0, 1) == doctest::Approx(0.4));

    Rng rng(31);
    for (int it = 0; it < 50; ++it) {
        const int n = 2 + static_cast<int>(rng.uniform_int(0, 6));
        OwaWeights w = init_weights(n, 3, it % 2 == 0 ? Scope::Shared : Scope::PerChannel,
                                    Regime::Penalty);
        for (double& v : w.values.values()) {
            v = rng.uniform(-1.0, 1.5);
            if (std::abs(v) < 1e-3) v = 0.1;  // stay away from the c1 kink
        }
        RegularizationConfig rcfg{rng.uniform(0, 2), rng.uniform(0, 2), rng.uniform(0, 2)};
        Matrix g = penalty_grad(w, rcfg);
        for (std::size_t i = 0; i < w.values.size(); ++i) {
            const double fd = testutil::central_diff([&] { return penalty_cost(w, rcfg); },
                                                     w.values.values()[i], 1e-6);
            CHECK(std::abs(g.values()[i] - fd) < 1e-6);
        }
    }
}

TEST_CASE("project_weights") {
    int warn = 0;
    auto p1 = project_weights(weights_from({0.6, 0.6, -0.2}, Scope::Shared, Regime::Projected), &warn);
    CHECK(p1.values.at(0, 0) == doctest::Approx(0.5));
    CHECK(p1.values.at(0, 1) == doctest::Approx(0.5));
    CHECK(p1.values.at(0, 2) == 0.0);
    CHECK(warn == 0);

    auto fixed = project_weights(weights_from({0.25, 0.25, 0.25, 0.25}, Scope::Shared, Regime::Projected));
    for (double v : fixed.values.values()) CHECK(v == doctest::Approx(0.25));

    auto degen = project_weights(weights_from({-1, -2}, Scope::Shared, Regime::Projected), &warn);
    CHECK(warn == 1);
    CHECK(degen.values.at(0, 0) == doctest::Approx(0.5));
    CHECK(degen.values.at(0, 1) == doctest::Approx(0.5));

    // idempotence and simplex invariants on random rows
    Rng rng(37);
    for (int it = 0; it < 50; ++it) {
        OwaWeights w = init_weights(6, 4, Scope::PerChannel, Regime::Projected);
        for (double& v : w.values.values()) v = rng.uniform(-1, 2);
        auto p = project_weights(w);
        auto pp = project_weights(p);
        for (int r = 0; r < p.rows(); ++r) {
            double sum = 0;
            for (double v : p.values.row(r)) {
                CHECK(v >= 0.0);
                sum += v;
            }
            CHECK(std::abs(sum - 1.0) < 1e-9);
        }
        for (std::size_t i = 0; i < p.values.size(); ++i)
            CHECK(pp.values.values()[i] == doctest::Approx(p.values.values()[i]).epsilon(1e-15));
    }
}

TEST_CASE("init_weights") {
    auto w4 = init_weights(4, 1, Scope::Shared, Regime::Penalty);
    for (double v : w4.values.values()) CHECK(v == doctest::Approx(0.25));
    auto w1 = init_weights(1, 1, Scope::Shared, Regime::Unconstrained);
    CHECK(w1.values.at(0, 0) == 1.0);
    auto w9 = init_weights(9, 2, Scope::PerChannel, Regime::Projected);
    CHECK(w9.rows() == 2);
    for (int r = 0; r < 2; ++r)
        for (double v : w9.values.row(r)) CHECK(v == doctest::Approx(1.0 / 9));
}

TEST_CASE("pooling geometry and scope errors") {
    Tensor4 x(1, 2, 4, 4);
    CHECK_THROWS(PoolPlan{5, 5, 1, 1, PoolMode::Max}.output_dims(4, 4));
    OwaWeights bad_rows = init_weights(4, 3, Scope::PerChannel, Regime::Unconstrained);
    PoolPlan plan{2, 2, 2, 2, PoolMode::Owa};
    CHECK_THROWS(owa_pool_forward(x, plan, &bad_rows));
    OwaWeights bad_len = init_weights(9, 2, Scope::PerChannel, Regime::Unconstrained);
    CHECK_THROWS(owa_pool_forward(x, plan, &bad_len));
    CHECK_THROWS(owa_pool_forward(x, plan, nullptr));
}

TEST_CASE("weights csv round trip") {
    OwaWeights w = init_weights(3, 2, Scope::PerChannel, Regime::Penalty);
    w.values.at(0, 0) = 0.5;
    w.values.at(1, 2) = -0.125;
    std::stringstream ss;
    write_weights_csv(ss, w);
    std::string header;
    std::getline(ss, header);
    CHECK(header == "channel,k,weight");
    ss.seekg(0);
    Matrix m = read_weights_csv(ss);
    REQUIRE(m.rows() == 2);
    REQUIRE(m.cols() == 3);
    for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 3; ++c) CHECK(m.at(r, c) == w.values.at(r, c));

    std::stringstream bad("wrong,header\n");
    CHECK_THROWS(read_weights_csv(bad));
}

#include "owapool/owa.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace owapool::owa {

OwaWeights init_weights(int n, int channels, Scope scope, Regime regime) {
    if (n < 1) throw std::invalid_argument("init_weights: region size must be >= 1");
    if (channels < 1) throw std::invalid_argument("init_weights: channel count must be >= 1");
    const int rows = scope == Scope::Shared ? 1 : channels;
    OwaWeights w;
    w.values = Matrix(rows, n, 1.0 / n);
    w.scope = scope;
    w.regime = regime;
    return w;
}

std::pair<int, int> PoolPlan::output_dims(int h, int w) const {
    if (kh < 1 || kw < 1 || sh < 1 || sw < 1) {
        throw std::invalid_argument("PoolPlan: window and stride must be >= 1");
    }
    if (h < kh || w < kw) {
        throw std::invalid_argument("PoolPlan: window " + std::to_string(kh) + "x" + std::to_string(kw) +
                                    " does not fit input " + std::to_string(h) + "x" + std::to_string(w));
    }
    return {(h - kh) / sh + 1, (w - kw) / sw + 1};
}

void sort_desc(std::span<const double> values, std::span<double> sorted, std::span<std::int32_t> perm) {
    const std::size_t n = values.size();
    if (sorted.size() != n || perm.size() != n) {
        throw std::invalid_argument("sort_desc: output spans must match input length");
    }
    for (std::size_t i = 0; i < n; ++i) perm[i] = static_cast<std::int32_t>(i);
    std::stable_sort(perm.begin(), perm.end(),
                     [&](std::int32_t a, std::int32_t b) { return values[a] > values[b]; });
    for (std::size_t k = 0; k < n; ++k) sorted[k] = values[perm[k]];
}

std::pair<std::vector<double>, std::vector<std::int32_t>> sort_desc(std::span<const double> values) {
    std::vector<double> sorted(values.size());
    std::vector<std::int32_t> perm(values.size());
    sort_desc(values, sorted, perm);
    return {std::move(sorted), std::move(perm)};
}

double owa_aggregate(std::span<const double> values, std::span<const double> w) {
    if (values.size() != w.size()) {
        throw std::invalid_argument("owa_aggregate: values length " + std::to_string(values.size()) +
                                    " vs weight length " + std::to_string(w.size()));
    }
    auto [sorted, perm] = sort_desc(values);
    double acc = 0.0;
    for (std::size_t k = 0; k < sorted.size(); ++k) acc += w[k] * sorted[k];
    return acc;
}

namespace {

void check_owa_weights(const Tensor4& x, const PoolPlan& plan, const OwaWeights* weights) {
    if (plan.mode != PoolMode::Owa) return;
    if (weights == nullptr) throw std::invalid_argument("owa_pool_forward: Owa mode needs weights");
    if (weights->n() != plan.window_size()) {
        throw std::invalid_argument("owa_pool_forward: weight length " + std::to_string(weights->n()) +
                                    " != window size " + std::to_string(plan.window_size()));
    }
    if (weights->scope == Scope::PerChannel && weights->rows() != x.c()) {
        throw std::invalid_argument("owa_pool_forward: PerChannel weights have " +
                                    std::to_string(weights->rows()) + " rows for " +
                                    std::to_string(x.c()) + " channels");
    }
}

}  // namespace

std::pair<Tensor4, PoolTrace> owa_pool_forward(const Tensor4& x, const PoolPlan& plan,
                                               const OwaWeights* weights) {
    const auto [oh, ow] = plan.output_dims(x.h(), x.w());
    check_owa_weights(x, plan, weights);

    const int n = plan.window_size();
    Tensor4 y(x.n(), x.c(), oh, ow);
    PoolTrace trace;
    trace.input = x;
    trace.plan = plan;
    trace.out_h = oh;
    trace.out_w = ow;
    const std::size_t windows = static_cast<std::size_t>(x.n()) * x.c() * oh * ow;
    if (plan.mode == PoolMode::Owa) trace.perms.resize(windows * n);
    else if (plan.mode == PoolMode::Max) trace.perms.resize(windows);

    std::vector<double> vals(n);
    std::vector<double> sorted(n);
    std::size_t win = 0;
    for (int b = 0; b < x.n(); ++b) {
        for (int c = 0; c < x.c(); ++c) {
            const std::span<const double> wrow =
                plan.mode == PoolMode::Owa ? weights->row_for_channel(c) : std::span<const double>{};
            for (int oi = 0; oi < oh; ++oi) {
                for (int oj = 0; oj < ow; ++oj, ++win) {
                    const int i0 = oi * plan.sh;
                    const int j0 = oj * plan.sw;
                    switch (plan.mode) {
                        case PoolMode::Max: {
                            double best = x.at(b, c, i0, j0);
                            int best_k = 0;
                            for (int k = 0; k < n; ++k) {
                                const double v = x.at(b, c, i0 + k / plan.kw, j0 + k % plan.kw);
                                if (v > best) { best = v; best_k = k; }
                            }
                            y.at(b, c, oi, oj) = best;
                            trace.perms[win] = best_k;
                            break;
                        }
                        case PoolMode::Avg: {
                            double acc = 0.0;
                            for (int ki = 0; ki < plan.kh; ++ki)
                                for (int kj = 0; kj < plan.kw; ++kj)
                                    acc += x.at(b, c, i0 + ki, j0 + kj);
                            y.at(b, c, oi, oj) = acc / n;
                            break;
                        }
                        case PoolMode::Owa: {
                            for (int k = 0; k < n; ++k)
                                vals[k] = x.at(b, c, i0 + k / plan.kw, j0 + k % plan.kw);
                            std::span<std::int32_t> perm{trace.perms.data() + win * n,
                                                         static_cast<std::size_t>(n)};
                            sort_desc(vals, sorted, perm);
                            double acc = 0.0;
                            for (int k = 0; k < n; ++k) acc += wrow[k] * sorted[k];
                            y.at(b, c, oi, oj) = acc;
                            break;
                        }
                    }
                }
            }
        }
    }
    return {std::move(y), std::move(trace)};
}

PoolGrads owa_pool_backward(const Tensor4& grad_y, const PoolTrace& trace, const OwaWeights* weights) {
    const Tensor4& x = trace.input;
    const PoolPlan& plan = trace.plan;
    if (grad_y.n() != x.n() || grad_y.c() != x.c() || grad_y.h() != trace.out_h || grad_y.w() != trace.out_w) {
        throw std::invalid_argument("owa_pool_backward: grad_y shape does not match trace");
    }
    check_owa_weights(x, plan, weights);

    const int n = plan.window_size();
    PoolGrads grads;
    grads.input = Tensor4(x.n(), x.c(), x.h(), x.w());
    if (plan.mode == PoolMode::Owa) grads.weights = Matrix(weights->rows(), weights->n());

    std::size_t win = 0;
    for (int b = 0; b < x.n(); ++b) {
        for (int c = 0; c < x.c(); ++c) {
            const int wrow = plan.mode == PoolMode::Owa && weights->scope == Scope::PerChannel ? c : 0;
            const std::span<const double> wv =
                plan.mode == PoolMode::Owa ? weights->row_for_channel(c) : std::span<const double>{};
            for (int oi = 0; oi < trace.out_h; ++oi) {
                for (int oj = 0; oj < trace.out_w; ++oj, ++win) {
                    const double g = grad_y.at(b, c, oi, oj);
                    const int i0 = oi * plan.sh;
                    const int j0 = oj * plan.sw;
                    switch (plan.mode) {
                        case PoolMode::Max: {
                            const int k = trace.perms[win];
                            grads.input.at(b, c, i0 + k / plan.kw, j0 + k % plan.kw) += g;
                            break;
                        }
                        case PoolMode::Avg: {
                            const double share = g / n;
                            for (int ki = 0; ki < plan.kh; ++ki)
                                for (int kj = 0; kj < plan.kw; ++kj)
                                    grads.input.at(b, c, i0 + ki, j0 + kj) += share;
                            break;
                        }
                        case PoolMode::Owa: {
                            const std::int32_t* perm = trace.perms.data() + win * n;
                            for (int k = 0; k < n; ++k) {
                                const int p = perm[k];
                                const int ii = i0 + p / plan.kw;
                                const int jj = j0 + p % plan.kw;
                                grads.input.at(b, c, ii, jj) += wv[k] * g;
                                grads.weights.at(wrow, k) += x.at(b, c, ii, jj) * g;
                            }
                            break;
                        }
                    }
                }
            }
        }
    }
    return grads;
}

double penalty_cost(const OwaWeights& w, const RegularizationConfig& cfg) {
    double cost = 0.0;
    for (int r = 0; r < w.rows(); ++r) {
        const auto row = w.values.row(r);
        double neg = 0.0, sum = 0.0, smooth = 0.0;
        for (std::size_t i = 0; i < row.size(); ++i) {
            neg += std::max(0.0, -row[i]);
            sum += row[i];
            if (i + 1 < row.size()) {
                const double d = row[i] - row[i + 1];
                smooth += d * d;
            }
        }
        cost += cfg.c1 * neg + cfg.c2 * (sum - 1.0) * (sum - 1.0) + cfg.c3 * smooth;
    }
    return cost;
}

Matrix penalty_grad(const OwaWeights& w, const RegularizationConfig& cfg) {
    Matrix g(w.rows(), w.n());
    for (int r = 0; r < w.rows(); ++r) {
        const auto row = w.values.row(r);
        const int n = static_cast<int>(row.size());
        double sum = 0.0;
        for (double v : row) sum += v;
        const double sum_term = 2.0 * cfg.c2 * (sum - 1.0);
        for (int i = 0; i < n; ++i) {
            double gi = sum_term;
            if (row[i] < 0.0) gi -= cfg.c1;
            if (i + 1 < n) gi += 2.0 * cfg.c3 * (row[i] - row[i + 1]);
            if (i > 0) gi -= 2.0 * cfg.c3 * (row[i - 1] - row[i]);
            g.at(r, i) = gi;
        }
    }
    return g;
}

OwaWeights project_weights(const OwaWeights& w, int* degenerate_rows) {
    OwaWeights out = w;
    int degenerate = 0;
    for (int r = 0; r < out.rows(); ++r) {
        auto row = out.values.row(r);
        double sum = 0.0;
        for (double& v : row) {
            if (v < 0.0) v = 0.0;
            sum += v;
        }
        if (sum <= 0.0) {
            ++degenerate;
            const double u = 1.0 / static_cast<double>(row.size());
            for (double& v : row) v = u;
        } else {
            for (double& v : row) v /= sum;
        }
    }
    if (degenerate_rows != nullptr) *degenerate_rows = degenerate;
    return out;
}

void write_weights_csv(std::ostream& os, const OwaWeights& w) {
    os << "channel,k,weight\n";
    for (int r = 0; r < w.rows(); ++r) {
        for (int k = 0; k < w.n(); ++k) {
            std::ostringstream v;
            v.precision(17);
            v << w.values.at(r, k);
            os << r << ',' << k << ',' << v.str() << '\n';
        }
    }
}

void write_weights_csv(const std::string& path, const OwaWeights& w) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("write_weights_csv: cannot open " + path);
    write_weights_csv(f, w);
}

Matrix read_weights_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line) || line != "channel,k,weight") {
        throw std::runtime_error("read_weights_csv: missing 'channel,k,weight' header");
    }
    std::vector<double> vals;
    int max_row = -1, max_col = -1;
    std::vector<std::pair<std::pair<int, int>, double>> entries;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        int r = 0, k = 0;
        double v = 0.0;
        char comma1 = 0, comma2 = 0;
        if (!(ss >> r >> comma1 >> k >> comma2 >> v) || comma1 != ',' || comma2 != ',') {
            throw std::runtime_error("read_weights_csv: malformed row: " + line);
        }
        entries.push_back({{r, k}, v});
        max_row = std::max(max_row, r);
        max_col = std::max(max_col, k);
    }
    if (entries.empty()) throw std::runtime_error("read_weights_csv: no data rows");
    Matrix m(max_row + 1, max_col + 1);
    for (const auto& [rk, v] : entries) m.at(rk.first, rk.second) = v;
    return m;
}

}  // namespace owapool::owa

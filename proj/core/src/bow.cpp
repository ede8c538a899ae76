#include "owapool/bow.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "owapool/errors.hpp"
#include "owapool/rng.hpp"

namespace owapool::bow {

namespace {

double sq_dist(std::span<const double> a, std::span<const double> b) {
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double t = a[i] - b[i];
        d += t * t;
    }
    return d;
}

}  // namespace

Dictionary kmeans_fit(const Matrix& descriptors, int k, int iters, std::uint64_t seed) {
    const int m = descriptors.rows();
    const int d = descriptors.cols();
    if (k < 2) throw std::invalid_argument("kmeans_fit: k must be >= 2");
    if (k > m) {
        throw std::invalid_argument("kmeans_fit: k=" + std::to_string(k) + " exceeds sample count " +
                                    std::to_string(m));
    }
    Rng rng(seed);
    Matrix centers(k, d);

    // k-means++ seeding
    std::vector<double> min_d2(m, std::numeric_limits<double>::max());
    int first = static_cast<int>(rng.uniform_int(0, m - 1));
    std::copy(descriptors.row(first).begin(), descriptors.row(first).end(), centers.row(0).begin());
    for (int c = 1; c < k; ++c) {
        double total = 0.0;
        for (int i = 0; i < m; ++i) {
            min_d2[i] = std::min(min_d2[i], sq_dist(descriptors.row(i), centers.row(c - 1)));
            total += min_d2[i];
        }
        int pick = 0;
        if (total > 0.0) {
            const double target = rng.uniform() * total;
            double acc = 0.0;
            pick = m - 1;
            for (int i = 0; i < m; ++i) {
                acc += min_d2[i];
                if (acc >= target) { pick = i; break; }
            }
        } else {
            pick = static_cast<int>(rng.uniform_int(0, m - 1));
        }
        std::copy(descriptors.row(pick).begin(), descriptors.row(pick).end(), centers.row(c).begin());
    }

    std::vector<int> assign(m, 0);
    std::vector<int> counts(k, 0);
    for (int it = 0; it < iters; ++it) {
        bool changed = false;
        for (int i = 0; i < m; ++i) {
            double best = std::numeric_limits<double>::max();
            int arg = 0;
            for (int c = 0; c < k; ++c) {
                const double d2 = sq_dist(descriptors.row(i), centers.row(c));
                if (d2 < best) { best = d2; arg = c; }
            }
            if (assign[i] != arg) { assign[i] = arg; changed = true; }
        }
        std::fill(counts.begin(), counts.end(), 0);
        std::fill(centers.values().begin(), centers.values().end(), 0.0);
        for (int i = 0; i < m; ++i) {
            ++counts[assign[i]];
            auto row = centers.row(assign[i]);
            const auto src = descriptors.row(i);
            for (int j = 0; j < d; ++j) row[j] += src[j];
        }
        for (int c = 0; c < k; ++c) {
            if (counts[c] > 0) {
                auto row = centers.row(c);
                for (int j = 0; j < d; ++j) row[j] /= counts[c];
            } else {
                // reseed an empty cluster from the point farthest from its center
                double far_d = -1.0;
                int far_i = 0;
                for (int i = 0; i < m; ++i) {
                    if (counts[assign[i]] <= 1) continue;  // don't strand another cluster
                    const double d2 = sq_dist(descriptors.row(i), centers.row(assign[i]));
                    if (d2 > far_d) { far_d = d2; far_i = i; }
                }
                std::copy(descriptors.row(far_i).begin(), descriptors.row(far_i).end(), centers.row(c).begin());
                --counts[assign[far_i]];
                assign[far_i] = c;
                counts[c] = 1;
                changed = true;
            }
        }
        if (!changed && it > 0) break;
    }
    return {std::move(centers)};
}

std::vector<double> triangle_encode(std::span<const double> x, const Dictionary& dict) {
    if (x.size() != static_cast<std::size_t>(dict.dim())) {
        throw std::invalid_argument("triangle_encode: descriptor dim " + std::to_string(x.size()) +
                                    " != dictionary dim " + std::to_string(dict.dim()));
    }
    const int k = dict.k();
    std::vector<double> z(k);
    double mean = 0.0;
    for (int c = 0; c < k; ++c) {
        z[c] = std::sqrt(sq_dist(x, dict.centers.row(c)));
        mean += z[c];
    }
    mean /= k;
    for (int c = 0; c < k; ++c) z[c] = std::max(0.0, mean - z[c]);
    return z;
}

Matrix sort_codes_desc(const Matrix& codes) {
    Matrix sorted(codes.rows(), codes.cols());
    std::vector<double> col(codes.rows());
    for (int j = 0; j < codes.cols(); ++j) {
        for (int i = 0; i < codes.rows(); ++i) col[i] = codes.at(i, j);
        std::sort(col.begin(), col.end(), std::greater<double>());
        for (int i = 0; i < codes.rows(); ++i) sorted.at(i, j) = col[i];
    }
    return sorted;
}

std::vector<double> pool_sorted(const Matrix& sorted_codes, std::span<const double> w) {
    if (w.size() != static_cast<std::size_t>(sorted_codes.rows())) {
        throw std::invalid_argument("pool_sorted: weight length " + std::to_string(w.size()) +
                                    " != cell count " + std::to_string(sorted_codes.rows()));
    }
    std::vector<double> z(sorted_codes.cols(), 0.0);
    for (int i = 0; i < sorted_codes.rows(); ++i) {
        const double wi = w[i];
        const auto row = sorted_codes.row(i);
        for (int j = 0; j < sorted_codes.cols(); ++j) z[j] += wi * row[j];
    }
    return z;
}

std::vector<double> pool_image(const CodedImage& img, std::span<const double> w) {
    return pool_sorted(sort_codes_desc(img.codes), w);
}

double svm_cost(std::span<const double> theta, const Matrix& z, std::span<const int> y, double c1) {
    const int m = z.rows();
    if (y.size() != static_cast<std::size_t>(m)) throw std::invalid_argument("svm_cost: label count mismatch");
    if (theta.size() != static_cast<std::size_t>(z.cols())) {
        throw std::invalid_argument("svm_cost: theta length mismatch");
    }
    double slack = 0.0;
    for (int i = 0; i < m; ++i) {
        double score = 0.0;
        const auto row = z.row(i);
        for (std::size_t j = 0; j < theta.size(); ++j) score += theta[j] * row[j];
        const double h = std::max(0.0, 1.0 - score * y[i]);
        slack += h * h;
    }
    double reg = 0.0;
    for (double t : theta) reg += t * t;
    return c1 / m * slack + 0.5 * reg;
}

double smoothness_cost(std::span<const double> w, double c2) {
    double s = 0.0;
    for (std::size_t i = 0; i + 1 < w.size(); ++i) {
        const double d = w[i] - w[i + 1];
        s += d * d;
    }
    return c2 * s;
}

namespace {

Matrix pooled_features(const std::vector<Matrix>& sorted_codes, std::span<const double> w) {
    const int m = static_cast<int>(sorted_codes.size());
    const int k = sorted_codes[0].cols();
    Matrix z(m, k);
    for (int i = 0; i < m; ++i) {
        auto zi = pool_sorted(sorted_codes[i], w);
        std::copy(zi.begin(), zi.end(), z.row(i).begin());
    }
    return z;
}

// d(svm hinge term)/dtheta plus the theta regularizer.
std::vector<double> svm_grad_theta(std::span<const double> theta, const Matrix& z, std::span<const int> y,
                                   double c1) {
    const int m = z.rows();
    std::vector<double> g(theta.begin(), theta.end());  // from 0.5*|theta|^2
    for (int i = 0; i < m; ++i) {
        const auto row = z.row(i);
        double score = 0.0;
        for (std::size_t j = 0; j < theta.size(); ++j) score += theta[j] * row[j];
        const double h = std::max(0.0, 1.0 - score * y[i]);
        if (h <= 0.0) continue;
        const double f = -2.0 * c1 / m * h * y[i];
        for (std::size_t j = 0; j < theta.size(); ++j) g[j] += f * row[j];
    }
    return g;
}

// Accumulates the hinge part of d(svm cost)/dw for one binary problem.
void add_hinge_grad_w(std::span<const double> theta, std::span<const double> w,
                      const std::vector<Matrix>& sorted_codes, std::span<const int> y, double c1,
                      std::span<double> grad_w) {
    const int m = static_cast<int>(sorted_codes.size());
    const int n = static_cast<int>(w.size());
    for (int i = 0; i < m; ++i) {
        const Matrix& s = sorted_codes[i];
        double score = 0.0;
        std::vector<double> zrow(s.cols(), 0.0);
        for (int r = 0; r < n; ++r) {
            const auto srow = s.row(r);
            for (int j = 0; j < s.cols(); ++j) zrow[j] += w[r] * srow[j];
        }
        for (int j = 0; j < s.cols(); ++j) score += theta[j] * zrow[j];
        const double h = std::max(0.0, 1.0 - score * y[i]);
        if (h <= 0.0) continue;
        const double f = -2.0 * c1 / m * h * y[i];
        for (int r = 0; r < n; ++r) {
            const auto srow = s.row(r);
            double ts = 0.0;
            for (int j = 0; j < s.cols(); ++j) ts += theta[j] * srow[j];
            grad_w[r] += f * ts;
        }
    }
}

void add_smoothness_grad(std::span<const double> w, double c2, std::span<double> g) {
    const int n = static_cast<int>(w.size());
    for (int i = 0; i < n; ++i) {
        if (i + 1 < n) g[i] += 2.0 * c2 * (w[i] - w[i + 1]);
        if (i > 0) g[i] -= 2.0 * c2 * (w[i - 1] - w[i]);
    }
}

}  // namespace

double joint_cost(std::span<const double> theta, std::span<const double> w,
                  const std::vector<CodedImage>& images, std::span<const int> y,
                  const BowRegularization& reg) {
    const int m = static_cast<int>(images.size());
    Matrix z(m, images[0].k());
    for (int i = 0; i < m; ++i) {
        auto zi = pool_image(images[i], w);
        std::copy(zi.begin(), zi.end(), z.row(i).begin());
    }
    return svm_cost(theta, z, y, reg.c1) + smoothness_cost(w, reg.c2);
}

double lagrangian(std::span<const double> theta, std::span<const double> w,
                  const std::vector<Matrix>& sorted_codes, std::span<const int> y,
                  const BowRegularization& reg, double lambda, std::span<const double> mu) {
    Matrix z = pooled_features(sorted_codes, w);
    double l = svm_cost(theta, z, y, reg.c1) + smoothness_cost(w, reg.c2);
    double sum_w = 0.0;
    for (double v : w) sum_w += v;
    l += lambda * (sum_w - 1.0);
    for (std::size_t j = 0; j < w.size(); ++j) l -= mu[j] * w[j];
    return l;
}

JointGrads joint_grads(std::span<const double> theta, std::span<const double> w,
                       const std::vector<Matrix>& sorted_codes, std::span<const int> y,
                       const BowRegularization& reg, double lambda, std::span<const double> mu) {
    if (mu.size() != w.size()) throw std::invalid_argument("joint_grads: mu length must match w");
    JointGrads g;
    Matrix z = pooled_features(sorted_codes, w);
    g.theta = svm_grad_theta(theta, z, y, reg.c1);
    g.w.assign(w.size(), 0.0);
    add_hinge_grad_w(theta, w, sorted_codes, y, reg.c1, g.w);
    add_smoothness_grad(w, reg.c2, g.w);
    double sum_w = 0.0;
    for (std::size_t j = 0; j < w.size(); ++j) {
        g.w[j] += lambda - mu[j];
        sum_w += w[j];
    }
    g.lambda = sum_w - 1.0;
    g.mu.resize(w.size());
    for (std::size_t j = 0; j < w.size(); ++j) g.mu[j] = -w[j];
    return g;
}

namespace {

// Gradient descent with backtracking: each accepted step does not increase
// the objective. Returns the objective values after each accepted step.
std::vector<double> descend(std::vector<double>& params,
                            const std::function<double(std::span<const double>)>& objective,
                            const std::function<std::vector<double>(std::span<const double>)>& gradient,
                            double lr0, int max_steps, double tol, const char* what) {
    std::vector<double> costs;
    double cost = objective(params);
    if (!std::isfinite(cost)) throw TrainingAbort(std::string(what) + ": non-finite starting cost");
    double lr = lr0;
    std::vector<double> trial(params.size());
    for (int step = 0; step < max_steps; ++step) {
        const auto g = gradient(params);
        bool accepted = false;
        while (lr >= 1e-15) {
            for (std::size_t i = 0; i < params.size(); ++i) trial[i] = params[i] - lr * g[i];
            const double c = objective(trial);
            if (!std::isfinite(c)) throw TrainingAbort(std::string(what) + ": non-finite cost during descent");
            if (c <= cost) {
                params = trial;
                const double decrease = cost - c;
                cost = c;
                costs.push_back(c);
                accepted = true;
                lr = std::min(lr * 1.25, lr0 * 16.0);
                if (decrease < tol) return costs;
                break;
            }
            lr *= 0.5;
        }
        if (!accepted) break;  // gradient step can no longer decrease the objective
    }
    return costs;
}

std::vector<int> ovr_labels(const std::vector<CodedImage>& images, int cls) {
    std::vector<int> y(images.size());
    for (std::size_t i = 0; i < images.size(); ++i) y[i] = images[i].label == cls ? 1 : -1;
    return y;
}

double multiclass_joint_cost(const Matrix& theta, std::span<const double> w,
                             const std::vector<Matrix>& sorted_codes,
                             const std::vector<CodedImage>& images,
                             const BowRegularization& reg) {
    Matrix z = pooled_features(sorted_codes, w);
    double total = smoothness_cost(w, reg.c2);
    for (int c = 0; c < theta.rows(); ++c) {
        std::vector<int> y(images.size());
        for (std::size_t i = 0; i < images.size(); ++i) y[i] = images[i].label == c ? 1 : -1;
        total += svm_cost(theta.row(c), z, y, reg.c1);
    }
    return total;
}

}  // namespace

TrainResult alternating_train(const std::vector<CodedImage>& images, int num_classes,
                              const BowRegularization& reg, const TrainSchedule& sched,
                              std::span<const double> w_init, bool learn_w) {
    if (images.empty()) throw std::invalid_argument("alternating_train: empty dataset");
    const int cells = images[0].cells();
    const int k = images[0].k();
    for (const auto& img : images) {
        if (img.cells() != cells || img.k() != k) {
            throw std::invalid_argument("alternating_train: inconsistent code shapes");
        }
        if (img.label < 0 || img.label >= num_classes) {
            throw std::invalid_argument("alternating_train: label out of range");
        }
    }
    if (!w_init.empty() && w_init.size() != static_cast<std::size_t>(cells)) {
        throw std::invalid_argument("alternating_train: w_init length must equal cell count");
    }

    std::vector<Matrix> sorted;
    sorted.reserve(images.size());
    for (const auto& img : images) sorted.push_back(sort_codes_desc(img.codes));

    TrainResult result;
    result.w = w_init.empty() ? std::vector<double>(cells, 1.0 / cells)
                              : std::vector<double>(w_init.begin(), w_init.end());
    result.model.theta = Matrix(num_classes, k);
    result.model.lambda = 0.0;
    result.model.mu.assign(cells, 0.0);

    std::vector<double> prev_theta(result.model.theta.values().begin(), result.model.theta.values().end());
    std::vector<double> prev_w = result.w;

    for (int outer = 0; outer < sched.outer_max; ++outer) {
        result.outer_iters = outer + 1;
        Matrix z = pooled_features(sorted, result.w);

        for (int c = 0; c < num_classes; ++c) {
            const auto y = ovr_labels(images, c);
            std::vector<double> theta_c(result.model.theta.row(c).begin(), result.model.theta.row(c).end());
            PhaseRecord rec;
            rec.kind = PhaseRecord::Kind::Theta;
            rec.outer = outer;
            rec.cls = c;
            rec.step_costs = descend(
                theta_c,
                [&](std::span<const double> t) { return svm_cost(t, z, y, reg.c1); },
                [&](std::span<const double> t) { return svm_grad_theta(t, z, y, reg.c1); },
                sched.theta_lr, sched.theta_epochs, sched.phase_tol, "theta phase");
            std::copy(theta_c.begin(), theta_c.end(), result.model.theta.row(c).begin());
            rec.joint_after = multiclass_joint_cost(result.model.theta, result.w, sorted, images, reg);
            result.history.push_back(std::move(rec));
        }

        if (learn_w) {
            const double lambda = result.model.lambda;
            const std::vector<double> mu = result.model.mu;
            const double rho = sched.aug_rho;
            auto w_objective = [&](std::span<const double> w) {
                Matrix zz = pooled_features(sorted, w);
                double l = smoothness_cost(w, reg.c2);
                for (int c = 0; c < num_classes; ++c) {
                    const auto y = ovr_labels(images, c);
                    l += svm_cost(result.model.theta.row(c), zz, y, reg.c1);
                }
                double sum_w = 0.0;
                for (double v : w) sum_w += v;
                l += lambda * (sum_w - 1.0) + 0.5 * rho * (sum_w - 1.0) * (sum_w - 1.0);
                for (std::size_t j = 0; j < w.size(); ++j) {
                    l -= mu[j] * w[j];
                    const double neg = std::max(0.0, -w[j]);
                    l += 0.5 * rho * neg * neg;
                }
                return l;
            };
            auto w_gradient = [&](std::span<const double> w) {
                std::vector<double> g(w.size(), 0.0);
                for (int c = 0; c < num_classes; ++c) {
                    const auto y = ovr_labels(images, c);
                    add_hinge_grad_w(result.model.theta.row(c), w, sorted, y, reg.c1, g);
                }
                add_smoothness_grad(w, reg.c2, g);
                double sum_w = 0.0;
                for (double v : w) sum_w += v;
                for (std::size_t j = 0; j < w.size(); ++j) {
                    g[j] += lambda - mu[j] + rho * (sum_w - 1.0);
                    if (w[j] < 0.0) g[j] += rho * w[j];
                }
                return g;
            };
            PhaseRecord rec;
            rec.kind = PhaseRecord::Kind::W;
            rec.outer = outer;
            rec.step_costs = descend(result.w, w_objective, w_gradient, sched.w_lr, sched.w_epochs,
                                     sched.phase_tol, "w phase");
            rec.joint_after = multiclass_joint_cost(result.model.theta, result.w, sorted, images, reg);
            result.history.push_back(std::move(rec));

            // dual ascent, mu kept feasible
            double sum_w = 0.0;
            for (double v : result.w) sum_w += v;
            result.model.lambda += sched.dual_lr * (sum_w - 1.0);
            for (std::size_t j = 0; j < result.w.size(); ++j) {
                result.model.mu[j] = std::max(0.0, result.model.mu[j] - sched.dual_lr * result.w[j]);
            }
        }

        double d_theta = 0.0, d_w = 0.0;
        const auto tv = result.model.theta.values();
        for (std::size_t i = 0; i < tv.size(); ++i) d_theta = std::max(d_theta, std::abs(tv[i] - prev_theta[i]));
        for (std::size_t i = 0; i < result.w.size(); ++i) d_w = std::max(d_w, std::abs(result.w[i] - prev_w[i]));
        prev_theta.assign(tv.begin(), tv.end());
        prev_w = result.w;
        if (d_theta < sched.param_tol && d_w < sched.param_tol) {
            result.converged = true;
            break;
        }
    }
    return result;
}

int predict(const SvmModel& model, std::span<const double> w, const CodedImage& img) {
    const auto z = pool_image(img, w);
    int best = 0;
    double best_score = -std::numeric_limits<double>::max();
    for (int c = 0; c < model.theta.rows(); ++c) {
        double score = 0.0;
        const auto row = model.theta.row(c);
        for (std::size_t j = 0; j < z.size(); ++j) score += row[j] * z[j];
        if (score > best_score) { best_score = score; best = c; }
    }
    return best;
}

double accuracy(const SvmModel& model, std::span<const double> w, const std::vector<CodedImage>& images) {
    if (images.empty()) return 0.0;
    int correct = 0;
    for (const auto& img : images)
        if (predict(model, w, img) == img.label) ++correct;
    return static_cast<double>(correct) / images.size();
}

Matrix dense_descriptors(const Matrix& gray_image, int cell_size) {
    const int h = gray_image.rows(), w = gray_image.cols();
    if (cell_size < 4 || h % cell_size != 0 || w % cell_size != 0) {
        throw std::invalid_argument("dense_descriptors: image dims must be multiples of cell_size >= 4");
    }
    const int cells_y = h / cell_size, cells_x = w / cell_size;
    constexpr int kGrid = 4, kBins = 8, kDim = kGrid * kGrid * kBins;
    Matrix out(cells_y * cells_x, kDim);

    auto px = [&](int i, int j) {
        i = std::clamp(i, 0, h - 1);
        j = std::clamp(j, 0, w - 1);
        return gray_image.at(i, j);
    };
    for (int cy = 0; cy < cells_y; ++cy) {
        for (int cx = 0; cx < cells_x; ++cx) {
            auto desc = out.row(cy * cells_x + cx);
            for (int i = 0; i < cell_size; ++i) {
                for (int j = 0; j < cell_size; ++j) {
                    const int gi = cy * cell_size + i, gj = cx * cell_size + j;
                    const double dx = px(gi, gj + 1) - px(gi, gj - 1);
                    const double dy = px(gi + 1, gj) - px(gi - 1, gj);
                    const double mag = std::sqrt(dx * dx + dy * dy);
                    if (mag <= 0.0) continue;
                    double ang = std::atan2(dy, dx);  // [-pi, pi]
                    if (ang < 0.0) ang += 6.283185307179586476925286766559;
                    int bin = static_cast<int>(ang / 6.283185307179586476925286766559 * kBins);
                    bin = std::min(bin, kBins - 1);
                    const int sy = std::min(i * kGrid / cell_size, kGrid - 1);
                    const int sx = std::min(j * kGrid / cell_size, kGrid - 1);
                    desc[(sy * kGrid + sx) * kBins + bin] += mag;
                }
            }
            double norm = 0.0;
            for (double v : desc) norm += v * v;
            norm = std::sqrt(norm);
            if (norm > 1e-12)
                for (double& v : desc) v /= norm;
        }
    }
    return out;
}

DescriptorSet read_descriptors_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error("descriptor csv: empty file");
    std::vector<std::string> cols;
    {
        std::istringstream ss(line);
        std::string tok;
        while (std::getline(ss, tok, ',')) cols.push_back(tok);
    }
    if (cols.size() < 4 || cols[0] != "image_id" || cols[1] != "cell" || cols[2] != "label") {
        throw std::runtime_error("descriptor csv: header must start with image_id,cell,label,f0...");
    }
    const int dim = static_cast<int>(cols.size()) - 3;
    for (int j = 0; j < dim; ++j) {
        if (cols[3 + j] != "f" + std::to_string(j)) {
            throw std::runtime_error("descriptor csv: feature column " + std::to_string(j) + " must be f" +
                                     std::to_string(j));
        }
    }

    DescriptorSet set;
    std::vector<std::vector<double>> current;
    int current_id = -1, current_label = 0;
    auto flush = [&]() {
        if (current.empty()) return;
        Matrix m(static_cast<int>(current.size()), dim);
        for (std::size_t i = 0; i < current.size(); ++i)
            std::copy(current[i].begin(), current[i].end(), m.row(static_cast<int>(i)).begin());
        set.per_image.push_back(std::move(m));
        set.labels.push_back(current_label);
        current.clear();
    };
    int line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string tok;
        std::vector<double> fields;
        while (std::getline(ss, tok, ',')) {
            try {
                fields.push_back(std::stod(tok));
            } catch (const std::exception&) {
                throw std::runtime_error("descriptor csv: bad number at line " + std::to_string(line_no));
            }
        }
        if (fields.size() != cols.size()) {
            throw std::runtime_error("descriptor csv: line " + std::to_string(line_no) + " has " +
                                     std::to_string(fields.size()) + " fields, expected " +
                                     std::to_string(cols.size()));
        }
        const int id = static_cast<int>(fields[0]);
        const int cell = static_cast<int>(fields[1]);
        if (id != current_id) {
            flush();
            current_id = id;
            current_label = static_cast<int>(fields[2]);
        }
        if (cell != static_cast<int>(current.size())) {
            throw std::runtime_error("descriptor csv: line " + std::to_string(line_no) +
                                     ": cells must be contiguous from 0 per image");
        }
        current.emplace_back(fields.begin() + 3, fields.end());
    }
    flush();
    if (set.per_image.empty()) throw std::runtime_error("descriptor csv: no data rows");
    return set;
}

DescriptorSet read_descriptors_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("descriptor csv: cannot open " + path);
    return read_descriptors_csv(f);
}

void write_descriptors_csv(std::ostream& os, const DescriptorSet& set) {
    if (set.per_image.empty()) throw std::invalid_argument("write_descriptors_csv: empty set");
    const int dim = set.per_image[0].cols();
    os << "image_id,cell,label";
    for (int j = 0; j < dim; ++j) os << ",f" << j;
    os << '\n';
    os.precision(17);
    for (std::size_t img = 0; img < set.per_image.size(); ++img) {
        const Matrix& m = set.per_image[img];
        for (int cell = 0; cell < m.rows(); ++cell) {
            os << img << ',' << cell << ',' << set.labels[img];
            for (int j = 0; j < dim; ++j) os << ',' << m.at(cell, j);
            os << '\n';
        }
    }
}

void export_model_json(std::ostream& os, const Dictionary* dict, const SvmModel& model,
                       std::span<const double> w, const std::vector<PhaseRecord>& history) {
    nlohmann::json j;
    if (dict != nullptr) {
        auto& centers = j["dictionary"];
        for (int r = 0; r < dict->k(); ++r)
            centers.push_back(std::vector<double>(dict->centers.row(r).begin(), dict->centers.row(r).end()));
    }
    auto& theta = j["theta"];
    for (int c = 0; c < model.theta.rows(); ++c)
        theta.push_back(std::vector<double>(model.theta.row(c).begin(), model.theta.row(c).end()));
    j["lambda"] = model.lambda;
    j["mu"] = model.mu;
    j["w"] = std::vector<double>(w.begin(), w.end());
    auto& hist = j["history"];
    for (const auto& rec : history) {
        hist.push_back({{"kind", rec.kind == PhaseRecord::Kind::Theta ? "theta" : "w"},
                        {"outer", rec.outer},
                        {"class", rec.cls},
                        {"accepted_steps", rec.step_costs.size()},
                        {"joint_cost", rec.joint_after}});
    }
    os << j.dump(2) << '\n';
}

}  // namespace owapool::bow

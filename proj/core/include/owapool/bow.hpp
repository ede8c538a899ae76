#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "owapool/tensor.hpp"

namespace owapool::bow {

// K visual words of descriptor dimension d (K x d).
struct Dictionary {
    Matrix centers;
    int k() const { return centers.rows(); }
    int dim() const { return centers.cols(); }
};

// Coded descriptors for one image: cells x K, nonnegative by construction
// of the triangle coding.
struct CodedImage {
    Matrix codes;
    int label = 0;
    int cells() const { return codes.rows(); }
    int k() const { return codes.cols(); }
};

// c1: L2-SVM slack coefficient (> 0); c2: smoothness coefficient (>= 0) on
// consecutive pooling-weight differences.
struct BowRegularization {
    double c1 = 1.0;
    double c2 = 0.0;
};

// One-vs-rest classifier stack plus the Lagrange state of the constrained
// pooling-weight problem. mu entries stay >= 0 (clipped dual ascent).
struct SvmModel {
    Matrix theta;            // classes x K
    double lambda = 0.0;
    std::vector<double> mu;  // one per pooling position
};

// Lloyd iterations from k-means++ seeding; empty clusters are reseeded from
// the point farthest from its assigned center. Deterministic for a given
// seed. Throws when k exceeds the number of descriptors.
Dictionary kmeans_fit(const Matrix& descriptors, int k, int iters, std::uint64_t seed);

// Triangle coding: code_k = max(0, mean_j z_j - z_k) where z_k is the
// Euclidean distance from x to center k.
std::vector<double> triangle_encode(std::span<const double> x, const Dictionary& dict);

// Per-column descending sort of a codes matrix (row r of the result is the
// r-th largest activation of each feature). The ordering depends only on
// the codes, so it can be computed once per image and reused.
Matrix sort_codes_desc(const Matrix& codes);

// Image-level ordered pooling: for each feature column, dot the descending
// activations with w. w length must equal the cell count.
std::vector<double> pool_image(const CodedImage& img, std::span<const double> w);
std::vector<double> pool_sorted(const Matrix& sorted_codes, std::span<const double> w);

// L2-SVM cost for one binary problem:
// (c1/m) * sum_i max(0, 1 - theta.z_i y_i)^2 + 0.5 * |theta|^2, y in {-1,+1}.
double svm_cost(std::span<const double> theta, const Matrix& z, std::span<const int> y, double c1);

// c2 * sum_i (w_i - w_{i+1})^2
double smoothness_cost(std::span<const double> w, double c2);

// svm_cost on OWA-pooled features plus the smoothness term.
double joint_cost(std::span<const double> theta, std::span<const double> w,
                  const std::vector<CodedImage>& images, std::span<const int> y,
                  const BowRegularization& reg);

// joint_cost plus the Lagrange terms lambda*((sum w) - 1) - sum_j mu_j w_j.
double lagrangian(std::span<const double> theta, std::span<const double> w,
                  const std::vector<Matrix>& sorted_codes, std::span<const int> y,
                  const BowRegularization& reg, double lambda, std::span<const double> mu);

struct JointGrads {
    std::vector<double> theta;
    std::vector<double> w;
    double lambda = 0.0;         // = (sum w) - 1
    std::vector<double> mu;      // entries = -w_j
};

// Analytic derivatives of the Lagrangian in all four blocks, with the
// per-image code ordering held fixed (it depends only on the codes).
JointGrads joint_grads(std::span<const double> theta, std::span<const double> w,
                       const std::vector<Matrix>& sorted_codes, std::span<const int> y,
                       const BowRegularization& reg, double lambda, std::span<const double> mu);

struct TrainSchedule {
    int outer_max = 50;
    int theta_epochs = 200;      // cap on accepted steps per theta phase
    int w_epochs = 100;          // cap on accepted steps per w phase
    double theta_lr = 1.0;       // initial step sizes; each step backtracks from here
    double w_lr = 0.1;
    double dual_lr = 0.05;       // ascent rate on lambda and mu, applied once per outer iteration
    double aug_rho = 10.0;       // augmentation strength for the inner w minimization; the
                                 // frozen-multiplier Lagrangian alone is unbounded along the
                                 // joint rescaling of (theta, w), so each w phase descends the
                                 // augmented form (method of multipliers)
    double phase_tol = 1e-9;     // stop a phase when the objective decrease falls below this
    double param_tol = 1e-5;     // outer convergence on max parameter change
};

struct PhaseRecord {
    enum class Kind { Theta, W };
    Kind kind = Kind::Theta;
    int outer = 0;
    int cls = -1;                      // class index for theta phases
    std::vector<double> step_costs;    // phase objective after each accepted step
    double joint_after = 0.0;          // multiclass joint cost snapshot at phase end
};

struct TrainResult {
    SvmModel model;
    std::vector<double> w;
    std::vector<PhaseRecord> history;
    bool converged = false;
    int outer_iters = 0;
};

// Alternating optimization: train every one-vs-rest theta with w fixed,
// then w (under the Lagrangian, multipliers fixed) with the thetas fixed;
// dual ascent on lambda and mu >= 0 after each w phase; repeat until the
// parameters stop changing or outer_max is hit. learn_w=false freezes w,
// reducing to plain L2-SVM training on fixed-pooling features.
// Throws TrainingAbort when a cost goes non-finite.
TrainResult alternating_train(const std::vector<CodedImage>& images, int num_classes,
                              const BowRegularization& reg, const TrainSchedule& sched,
                              std::span<const double> w_init = {}, bool learn_w = true);

int predict(const SvmModel& model, std::span<const double> w, const CodedImage& img);
double accuracy(const SvmModel& model, std::span<const double> w, const std::vector<CodedImage>& images);

// Simplified dense descriptor: per cell of cell_size x cell_size pixels, an
// 8-bin gradient-orientation histogram over a 4x4 spatial grid (128-D).
// Image dims must be multiples of cell_size. Cells are row-major.
Matrix dense_descriptors(const Matrix& gray_image, int cell_size);

// CSV exchange: header "image_id,cell,label,f0..f{d-1}", one row per cell.
// Rows must arrive grouped by image_id with cells 0..N-1 in order.
struct DescriptorSet {
    std::vector<Matrix> per_image;    // cells x d each
    std::vector<int> labels;
};
DescriptorSet read_descriptors_csv(std::istream& is);
DescriptorSet read_descriptors_csv(const std::string& path);
void write_descriptors_csv(std::ostream& os, const DescriptorSet& set);

// JSON model export: dictionary centers, theta stack, w and the training
// history (joint cost per phase).
void export_model_json(std::ostream& os, const Dictionary* dict, const SvmModel& model,
                       std::span<const double> w, const std::vector<PhaseRecord>& history);

}  // namespace owapool::bow

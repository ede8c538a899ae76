#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "owapool/bow.hpp"
#include "owapool/nn.hpp"
#include "owapool/tensor.hpp"

namespace owapool::harness {

struct LabeledImages {
    Tensor4 images;
    std::vector<int> labels;
    int count() const { return images.n(); }
};

// ---- CIFAR-10 binary ingestion ---------------------------------------------

// Parses 3073-byte records (1 label byte, then 1024 R, 1024 G, 1024 B bytes
// row-major), scales pixels to [0,1] and subtracts per-channel means
// computed on the loaded subset (first overload) or provided (second).
// path may be a single batch file or a directory holding data_batch_1..5.bin.
// n_samples <= 0 loads everything; class_filter keeps the listed labels and
// remaps them to 0..filter.size()-1.
struct CifarData {
    Tensor4 images;
    std::vector<int> labels;
    std::array<double, 3> channel_means{};
};
CifarData load_cifar10(const std::string& path, int n_samples, const std::vector<int>& class_filter);
CifarData load_cifar10(const std::string& path, int n_samples, const std::vector<int>& class_filter,
                       const std::array<double, 3>& subtract_means);

// Writes images (values in [0,1], shape n x 3 x 32 x 32) in the same record
// format; used for loader fixtures and offline data preparation.
void write_cifar10_batch(const std::string& path, const Tensor4& images, std::span<const int> labels);

// ---- Synthetic desk-scale datasets ------------------------------------------

// Two class-conditional generators (single-channel images, labels 0/1,
// alternating):
//   SparseBlob  class 1 carries one small high-intensity blob; a per-image
//               global offset makes the raw mean uninformative, so max-like
//               pooling wins.
//   Texture     every image carries one tall decoy bump; classes differ in
//               the count of medium bumps, so mean-like pooling wins while
//               the max is decoy-dominated.
struct SynthSpec {
    enum class Kind { SparseBlob, Texture };
    Kind kind = Kind::SparseBlob;
    int n_samples = 0;
    int size = 16;

    double blob_height = 3.0;
    int blob_size = 2;
    double noise_sigma = 0.2;
    double offset_range = 0.45;
    int distractor_count = 2;       // medium blobs present in both classes
    double distractor_height = 1.0;

    int bumps_class0 = 4;
    int bumps_class1 = 24;
    double bump_height = 1.0;
    double decoy_height = 2.0;
    double texture_noise_sigma = 0.05;
};
SynthSpec::Kind synth_kind_from_string(const std::string& name);
LabeledImages synth_dataset(const SynthSpec& spec, std::uint64_t seed);

// Synthetic coded dataset for the BoW branch: positive images activate one
// feature moderately in many cells; negative images instead carry a single
// spurious high activation of the same feature, which fools max pooling.
std::vector<bow::CodedImage> make_bow_toy_codes(int n_images, int cells, int k, std::uint64_t seed,
                                                double moderate_value = 1.0, int moderate_cells = 10,
                                                double spurious_value = 1.0, double noise = 0.05);

// ---- Experiment configuration ------------------------------------------------

struct ExperimentConfig {
    enum class Task { Cnn, Bow, Bench, Robust };
    Task task = Task::Cnn;
    std::uint64_t seed = 42;
    std::string out_dir = "out";

    std::string data_source = "synth";       // synth | cifar | codes_csv
    std::string synth_kind = "sparse_blob";  // sparse_blob | texture
    std::string data_path;
    int train_samples = 1000;
    int test_samples = 500;
    std::vector<int> class_filter;
    int image_size = 16;

    std::string arch = "small";  // small | nin
    int conv_channels = 8;
    int conv_kernel = 3;
    int pool_window = 0;  // 0 = global
    int pool_stride = 0;  // 0 = window (non-overlapping)
    int num_classes = 2;

    nn::TrainConfig train;
    bool dropout = false;

    std::vector<std::string> variants;

    std::vector<int> dict_sizes;
    int bow_cells = 16;
    int descriptor_cell = 32;
    bow::BowRegularization bow_reg{100.0, 0.05};
    bow::TrainSchedule bow_sched;

    std::vector<std::array<int, 4>> bench_shapes{{1, 32, 222, 222}};
    int bench_window = 2;
    int bench_stride = 2;
    int bench_reps = 5;

    std::vector<double> angles{-8, -6, -4, -2, 0, 2, 4, 6, 8};

    std::map<std::string, std::string> echo;  // raw key/value pairs as parsed
};

// Flat key-value config with [section] headers, '#' comments and key = value
// lines. Unknown sections or keys are hard errors (ConfigError).
ExperimentConfig parse_config_text(std::istream& is);
ExperimentConfig parse_config_file(const std::string& path);

// ---- Training loop -----------------------------------------------------------

struct EpochStats {
    int epoch = 0;
    double train_acc = 0.0, test_acc = 0.0;
    double j = 0.0, j_ce = 0.0, penalty = 0.0;
    double seconds = 0.0;
};

// Momentum-SGD training with deterministic shuffling from cfg.seed.
// on_epoch runs after each epoch (weight exports, logging).
std::vector<EpochStats> train_network(nn::Network& net, const LabeledImages& train, const LabeledImages& test,
                                      const nn::TrainConfig& cfg,
                                      const std::function<void(int, nn::Network&)>& on_epoch = {});

// Small 3-layer testbed net: conv + relu + one pooling site + dense logits.
// pool_window 0 means global pooling. Variants: max, avg, owal, owalnr,
// owalc, owalcnr, owaco, owacco.
nn::Network build_small_net(int in_channels, int image_size, int num_classes, int conv_channels,
                            int conv_kernel, int pool_window, int pool_stride, const std::string& variant,
                            Rng& rng);

// ---- Reports -----------------------------------------------------------------

struct VariantResult {
    std::string variant;
    std::vector<EpochStats> epochs;
    double final_train_acc = 0.0, final_test_acc = 0.0, final_cost = 0.0;
    double epoch_seconds_median = 0.0;
    std::vector<Matrix> final_pool_weights;  // one per OWA pooling site
};

struct BenchRow {
    std::string variant;
    std::array<int, 4> shape{};
    std::uint64_t window_ops = 0;
    double fwd_ms = 0.0, fwd_bwd_ms = 0.0;
    double fwd_ratio_to_max = 0.0;
};

struct RobustnessCurve {
    std::string variant;
    std::vector<double> angles;
    std::vector<double> accuracy;
};

struct BowRow {
    int dict_size = 0;
    std::string variant;
    double train_acc = 0.0, test_acc = 0.0, final_cost = 0.0;
    int outer_iters = 0;
    bool converged = false;
};

struct Report {
    std::map<std::string, std::string> config_echo;
    std::vector<VariantResult> variants;
    std::vector<BenchRow> bench;
    std::vector<RobustnessCurve> robustness;
    std::vector<BowRow> bow;
};

std::string report_to_json(const Report& report);
Report report_from_json(const std::string& text);
// Equality with wall-clock fields (seconds, *_ms) zeroed out.
bool report_equal_ignoring_time(const Report& a, const Report& b);

// Writes report.json and metrics.csv (epoch,variant,train_acc,test_acc,J,J_CE,penalty).
void write_report_files(const Report& report, const std::string& out_dir);

// ---- Experiments -------------------------------------------------------------

Report run_cnn_experiment(const ExperimentConfig& cfg);
Report run_bow_experiment(const ExperimentConfig& cfg);
Report run_bench(const ExperimentConfig& cfg);
Report run_robustness_experiment(const ExperimentConfig& cfg);
Report run_experiment(const ExperimentConfig& cfg);  // dispatch on cfg.task

// ---- Rotation robustness ------------------------------------------------------

// Rotates each image about its center by the angle in degrees, bilinear
// interpolation with replicated edge pixels. Angle 0 reproduces the input
// exactly.
Tensor4 rotate_images(const Tensor4& images, double degrees);
std::vector<std::pair<double, double>> rotation_robustness(const nn::Network& net, const LabeledImages& test,
                                                           std::span<const double> angles);

// ---- Pooling micro-benchmark ---------------------------------------------------

// Wall-clock medians (forward, forward+backward) per variant and shape,
// with the forward ratio to the Max variant. window_ops counts pooling
// windows per forward pass: n * c * out_h * out_w.
std::vector<BenchRow> benchmark_pooling(std::span<const std::array<int, 4>> shapes,
                                        std::span<const std::string> variants, int repetitions,
                                        int window, int stride);

}  // namespace owapool::harness

#include "owapool/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "owapool/errors.hpp"
#include "owapool/rng.hpp"

namespace owapool::harness {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t mid = v.size() / 2;
    return v.size() % 2 == 1 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
}

Tensor4 gather_samples(const Tensor4& images, std::span<const int> idx) {
    const std::size_t sample = static_cast<std::size_t>(images.c()) * images.h() * images.w();
    std::vector<double> data(idx.size() * sample);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const double* src = images.data() + idx[i] * sample;
        std::copy(src, src + sample, data.begin() + i * sample);
    }
    return Tensor4::from_data(static_cast<int>(idx.size()), images.c(), images.h(), images.w(),
                              std::move(data));
}

}  // namespace

// ---- Synthetic datasets ------------------------------------------------------

SynthSpec::Kind synth_kind_from_string(const std::string& name) {
    std::string s;
    for (char c : name) s.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    if (s == "sparse_blob" || s == "blob") return SynthSpec::Kind::SparseBlob;
    if (s == "texture") return SynthSpec::Kind::Texture;
    throw ConfigError("unknown synthetic dataset kind: " + name);
}

LabeledImages synth_dataset(const SynthSpec& spec, std::uint64_t seed) {
    if (spec.n_samples < 1) throw std::invalid_argument("synth_dataset: n_samples must be >= 1");
    if (spec.size < 4) throw std::invalid_argument("synth_dataset: size must be >= 4");
    Rng rng(seed);
    LabeledImages out;
    out.images = Tensor4(spec.n_samples, 1, spec.size, spec.size);
    out.labels.resize(spec.n_samples);

    auto stamp = [&](int s, int i0, int j0, int extent, double height) {
        // bumps saturate rather than stack, so overlaps stay bounded
        for (int i = 0; i < extent; ++i)
            for (int j = 0; j < extent; ++j) {
                double& px = out.images.at(s, 0, std::min(i0 + i, spec.size - 1),
                                           std::min(j0 + j, spec.size - 1));
                px = std::max(px, height);
            }
    };

    for (int s = 0; s < spec.n_samples; ++s) {
        const int label = s % 2;
        out.labels[s] = label;
        if (spec.kind == SynthSpec::Kind::SparseBlob) {
            const double offset = rng.uniform(-spec.offset_range, spec.offset_range);
            for (int i = 0; i < spec.size; ++i)
                for (int j = 0; j < spec.size; ++j)
                    out.images.at(s, 0, i, j) = offset + rng.normal(0.0, spec.noise_sigma);
            auto add_square = [&](double height) {
                const int i0 = static_cast<int>(rng.uniform_int(0, spec.size - spec.blob_size));
                const int j0 = static_cast<int>(rng.uniform_int(0, spec.size - spec.blob_size));
                for (int i = 0; i < spec.blob_size; ++i)
                    for (int j = 0; j < spec.blob_size; ++j)
                        out.images.at(s, 0, i0 + i, j0 + j) += height;
            };
            // medium distractors in both classes blunt plain threshold detectors
            for (int d = 0; d < spec.distractor_count; ++d) add_square(spec.distractor_height);
            if (label == 1) add_square(spec.blob_height);
        } else {
            for (int i = 0; i < spec.size; ++i)
                for (int j = 0; j < spec.size; ++j)
                    out.images.at(s, 0, i, j) = rng.normal(0.0, spec.texture_noise_sigma);
            const int bumps = label == 0 ? spec.bumps_class0 : spec.bumps_class1;
            for (int b = 0; b < bumps; ++b) {
                const int i0 = static_cast<int>(rng.uniform_int(0, spec.size - 2));
                const int j0 = static_cast<int>(rng.uniform_int(0, spec.size - 2));
                stamp(s, i0, j0, 2, spec.bump_height);
            }
            // one tall decoy in every image keeps the max uninformative
            const int i0 = static_cast<int>(rng.uniform_int(0, spec.size - 2));
            const int j0 = static_cast<int>(rng.uniform_int(0, spec.size - 2));
            stamp(s, i0, j0, 2, spec.decoy_height);
        }
    }
    return out;
}

std::vector<bow::CodedImage> make_bow_toy_codes(int n_images, int cells, int k, std::uint64_t seed,
                                                double moderate_value, int moderate_cells,
                                                double spurious_value, double noise) {
    if (k < 2 || cells < 2 || moderate_cells > cells) {
        throw std::invalid_argument("make_bow_toy_codes: bad geometry");
    }
    Rng rng(seed);
    std::vector<bow::CodedImage> out;
    out.reserve(n_images);
    for (int s = 0; s < n_images; ++s) {
        bow::CodedImage img;
        img.label = s % 2;
        img.codes = Matrix(cells, k);
        for (auto& v : img.codes.values()) v = rng.uniform(0.0, noise);
        if (img.label == 1) {
            // frequent-but-moderate activations of feature 0
            const double amplitude = moderate_value + rng.uniform(-0.05, 0.05);
            std::vector<int> cell_ids(cells);
            std::iota(cell_ids.begin(), cell_ids.end(), 0);
            rng.shuffle(cell_ids);
            for (int i = 0; i < moderate_cells; ++i) {
                img.codes.at(cell_ids[i], 0) = amplitude + rng.uniform(-0.01, 0.01);
            }
        } else {
            // one spurious activation drawn from the same magnitude
            // distribution, so the per-feature maximum carries no label signal
            const double amplitude = spurious_value + rng.uniform(-0.05, 0.05);
            const int cell = static_cast<int>(rng.uniform_int(0, cells - 1));
            img.codes.at(cell, 0) = amplitude + rng.uniform(-0.01, 0.01);
        }
        out.push_back(std::move(img));
    }
    return out;
}

// ---- Small testbed network ---------------------------------------------------

namespace {

nn::Pool make_variant_pool(const std::string& variant, int kh, int kw, int sh, int sw, int channels) {
    using owa::Regime;
    using owa::Scope;
    if (variant == "max") return nn::make_pool({kh, kw, sh, sw, owa::PoolMode::Max});
    if (variant == "avg" || variant == "ave") return nn::make_pool({kh, kw, sh, sw, owa::PoolMode::Avg});
    Scope scope = Scope::Shared;
    Regime regime;
    if (variant == "owal") regime = Regime::Penalty;
    else if (variant == "owalnr") regime = Regime::Unconstrained;
    else if (variant == "owaco") regime = Regime::Projected;
    else if (variant == "owalc") { regime = Regime::Penalty; scope = Scope::PerChannel; }
    else if (variant == "owalcnr") { regime = Regime::Unconstrained; scope = Scope::PerChannel; }
    else if (variant == "owacco") { regime = Regime::Projected; scope = Scope::PerChannel; }
    else throw ConfigError("unknown pooling variant: " + variant);
    nn::Pool pool = nn::make_owa_pool(kh, kw, sh, sw, channels, scope, regime);
    return pool;
}

}  // namespace

nn::Network build_small_net(int in_channels, int image_size, int num_classes, int conv_channels,
                            int conv_kernel, int pool_window, int pool_stride, const std::string& variant,
                            Rng& rng) {
    const int conv_out = image_size - conv_kernel + 1;
    if (conv_out < 1) throw std::invalid_argument("build_small_net: kernel larger than image");
    int kh = pool_window > 0 ? pool_window : conv_out;
    int kw = pool_window > 0 ? pool_window : conv_out;
    int stride = pool_stride > 0 ? pool_stride : kh;
    nn::Network net;
    net.add(nn::make_conv2d(in_channels, conv_channels, conv_kernel, conv_kernel, 1, 0, rng));
    net.add(nn::Relu{});
    net.add(make_variant_pool(variant, kh, kw, stride, stride, conv_channels));
    net.add(nn::Flatten{});
    const int pool_oh = (conv_out - kh) / stride + 1;
    const int pool_ow = (conv_out - kw) / stride + 1;
    net.add(nn::make_dense(conv_channels * pool_oh * pool_ow, num_classes, rng));
    return net;
}

// ---- Training loop -----------------------------------------------------------

std::vector<EpochStats> train_network(nn::Network& net, const LabeledImages& train, const LabeledImages& test,
                                      const nn::TrainConfig& cfg,
                                      const std::function<void(int, nn::Network&)>& on_epoch) {
    if (train.count() < 1) throw std::invalid_argument("train_network: empty training set");
    Rng order_rng(cfg.seed);
    Rng dropout_rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
    std::vector<int> order(train.count());
    std::iota(order.begin(), order.end(), 0);

    std::vector<EpochStats> stats;
    stats.reserve(cfg.epochs);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto t0 = Clock::now();
        order_rng.shuffle(order);
        double j_sum = 0.0, j_ce_sum = 0.0;
        int batches = 0;
        double last_penalty = 0.0;
        for (int start = 0; start < train.count(); start += cfg.batch_size) {
            const int count = std::min(cfg.batch_size, train.count() - start);
            std::vector<int> idx(order.begin() + start, order.begin() + start + count);
            Tensor4 batch = gather_samples(train.images, idx);
            std::vector<int> labels(count);
            for (int i = 0; i < count; ++i) labels[i] = train.labels[idx[i]];
            auto res = nn::network_forward_backward(net, batch, labels, cfg.reg,
                                                    net.dropout_enabled ? &dropout_rng : nullptr);
            if (!std::isfinite(res.total)) {
                throw TrainingAbort("train_network: non-finite cost at epoch " + std::to_string(epoch));
            }
            nn::sgd_step(net, cfg);
            j_sum += res.total;
            j_ce_sum += res.j_ce;
            last_penalty = res.penalty;
            ++batches;
        }
        EpochStats es;
        es.epoch = epoch;
        es.j = j_sum / batches;
        es.j_ce = j_ce_sum / batches;
        es.penalty = last_penalty;
        es.train_acc = nn::accuracy(net, train.images, train.labels);
        es.test_acc = test.count() > 0 ? nn::accuracy(net, test.images, test.labels) : 0.0;
        es.seconds = seconds_since(t0);
        stats.push_back(es);
        if (on_epoch) on_epoch(epoch, net);
    }
    return stats;
}

// ---- Report serialization ----------------------------------------------------

namespace {

using nlohmann::json;

json matrix_to_json(const Matrix& m) {
    json rows = json::array();
    for (int r = 0; r < m.rows(); ++r) rows.push_back(std::vector<double>(m.row(r).begin(), m.row(r).end()));
    return rows;
}

Matrix matrix_from_json(const json& j) {
    const int rows = static_cast<int>(j.size());
    const int cols = static_cast<int>(j.at(0).size());
    Matrix m(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) m.at(r, c) = j.at(r).at(c).get<double>();
    return m;
}

json report_json(const Report& r) {
    json j;
    j["config"] = r.config_echo;
    j["variants"] = json::array();
    for (const auto& v : r.variants) {
        json jv;
        jv["variant"] = v.variant;
        jv["final_train_acc"] = v.final_train_acc;
        jv["final_test_acc"] = v.final_test_acc;
        jv["final_cost"] = v.final_cost;
        jv["epoch_seconds_median"] = v.epoch_seconds_median;
        jv["epochs"] = json::array();
        for (const auto& e : v.epochs) {
            jv["epochs"].push_back({{"epoch", e.epoch},
                                    {"train_acc", e.train_acc},
                                    {"test_acc", e.test_acc},
                                    {"j", e.j},
                                    {"j_ce", e.j_ce},
                                    {"penalty", e.penalty},
                                    {"seconds", e.seconds}});
        }
        jv["final_pool_weights"] = json::array();
        for (const auto& m : v.final_pool_weights) jv["final_pool_weights"].push_back(matrix_to_json(m));
        j["variants"].push_back(std::move(jv));
    }
    j["bench"] = json::array();
    for (const auto& b : r.bench) {
        j["bench"].push_back({{"variant", b.variant},
                              {"shape", b.shape},
                              {"window_ops", b.window_ops},
                              {"fwd_ms", b.fwd_ms},
                              {"fwd_bwd_ms", b.fwd_bwd_ms},
                              {"fwd_ratio_to_max", b.fwd_ratio_to_max}});
    }
    j["robustness"] = json::array();
    for (const auto& c : r.robustness) {
        j["robustness"].push_back({{"variant", c.variant}, {"angles", c.angles}, {"accuracy", c.accuracy}});
    }
    j["bow"] = json::array();
    for (const auto& b : r.bow) {
        j["bow"].push_back({{"dict_size", b.dict_size},
                            {"variant", b.variant},
                            {"train_acc", b.train_acc},
                            {"test_acc", b.test_acc},
                            {"final_cost", b.final_cost},
                            {"outer_iters", b.outer_iters},
                            {"converged", b.converged}});
    }
    return j;
}

Report report_from(const json& j) {
    Report r;
    for (auto it = j.at("config").begin(); it != j.at("config").end(); ++it) {
        r.config_echo[it.key()] = it.value().get<std::string>();
    }
    for (const auto& jv : j.at("variants")) {
        VariantResult v;
        v.variant = jv.at("variant").get<std::string>();
        v.final_train_acc = jv.at("final_train_acc").get<double>();
        v.final_test_acc = jv.at("final_test_acc").get<double>();
        v.final_cost = jv.at("final_cost").get<double>();
        v.epoch_seconds_median = jv.at("epoch_seconds_median").get<double>();
        for (const auto& je : jv.at("epochs")) {
            EpochStats e;
            e.epoch = je.at("epoch").get<int>();
            e.train_acc = je.at("train_acc").get<double>();
            e.test_acc = je.at("test_acc").get<double>();
            e.j = je.at("j").get<double>();
            e.j_ce = je.at("j_ce").get<double>();
            e.penalty = je.at("penalty").get<double>();
            e.seconds = je.at("seconds").get<double>();
            v.epochs.push_back(e);
        }
        for (const auto& jm : jv.at("final_pool_weights")) v.final_pool_weights.push_back(matrix_from_json(jm));
        r.variants.push_back(std::move(v));
    }
    for (const auto& jb : j.at("bench")) {
        BenchRow b;
        b.variant = jb.at("variant").get<std::string>();
        for (int i = 0; i < 4; ++i) b.shape[i] = jb.at("shape").at(i).get<int>();
        b.window_ops = jb.at("window_ops").get<std::uint64_t>();
        b.fwd_ms = jb.at("fwd_ms").get<double>();
        b.fwd_bwd_ms = jb.at("fwd_bwd_ms").get<double>();
        b.fwd_ratio_to_max = jb.at("fwd_ratio_to_max").get<double>();
        r.bench.push_back(b);
    }
    for (const auto& jc : j.at("robustness")) {
        RobustnessCurve c;
        c.variant = jc.at("variant").get<std::string>();
        c.angles = jc.at("angles").get<std::vector<double>>();
        c.accuracy = jc.at("accuracy").get<std::vector<double>>();
        r.robustness.push_back(std::move(c));
    }
    for (const auto& jb : j.at("bow")) {
        BowRow b;
        b.dict_size = jb.at("dict_size").get<int>();
        b.variant = jb.at("variant").get<std::string>();
        b.train_acc = jb.at("train_acc").get<double>();
        b.test_acc = jb.at("test_acc").get<double>();
        b.final_cost = jb.at("final_cost").get<double>();
        b.outer_iters = jb.at("outer_iters").get<int>();
        b.converged = jb.at("converged").get<bool>();
        r.bow.push_back(b);
    }
    return r;
}

Report strip_wallclock(Report r) {
    for (auto& v : r.variants) {
        v.epoch_seconds_median = 0.0;
        for (auto& e : v.epochs) e.seconds = 0.0;
    }
    for (auto& b : r.bench) {
        b.fwd_ms = 0.0;
        b.fwd_bwd_ms = 0.0;
        b.fwd_ratio_to_max = 0.0;
    }
    return r;
}

}  // namespace

std::string report_to_json(const Report& report) { return report_json(report).dump(2); }

Report report_from_json(const std::string& text) { return report_from(json::parse(text)); }

bool report_equal_ignoring_time(const Report& a, const Report& b) {
    return report_json(strip_wallclock(a)) == report_json(strip_wallclock(b));
}

void write_report_files(const Report& report, const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    {
        std::ofstream f(out_dir + "/report.json");
        if (!f) throw std::runtime_error("write_report_files: cannot open report.json in " + out_dir);
        f << report_to_json(report) << '\n';
    }
    {
        std::ofstream f(out_dir + "/metrics.csv");
        if (!f) throw std::runtime_error("write_report_files: cannot open metrics.csv in " + out_dir);
        f << "epoch,variant,train_acc,test_acc,J,J_CE,penalty\n";
        f.precision(12);
        for (const auto& v : report.variants) {
            for (const auto& e : v.epochs) {
                f << e.epoch << ',' << v.variant << ',' << e.train_acc << ',' << e.test_acc << ',' << e.j
                  << ',' << e.j_ce << ',' << e.penalty << '\n';
            }
        }
        for (const auto& b : report.bow) {
            f << b.outer_iters << ',' << b.variant << "_k" << b.dict_size << ',' << b.train_acc << ','
              << b.test_acc << ',' << b.final_cost << ",0,0\n";
        }
    }
}

// ---- Rotation robustness -----------------------------------------------------

Tensor4 rotate_images(const Tensor4& images, double degrees) {
    const double rad = degrees * 3.14159265358979323846 / 180.0;
    const double cs = std::cos(rad), sn = std::sin(rad);
    Tensor4 out(images.n(), images.c(), images.h(), images.w());
    const double cy = (images.h() - 1) / 2.0;
    const double cx = (images.w() - 1) / 2.0;
    for (int s = 0; s < images.n(); ++s) {
        for (int c = 0; c < images.c(); ++c) {
            for (int i = 0; i < images.h(); ++i) {
                for (int j = 0; j < images.w(); ++j) {
                    // inverse mapping; edge pixels replicate via clamping
                    const double ys = cy + cs * (i - cy) + sn * (j - cx);
                    const double xs = cx - sn * (i - cy) + cs * (j - cx);
                    const double yc = std::clamp(ys, 0.0, static_cast<double>(images.h() - 1));
                    const double xc = std::clamp(xs, 0.0, static_cast<double>(images.w() - 1));
                    const int y0 = static_cast<int>(std::floor(yc));
                    const int x0 = static_cast<int>(std::floor(xc));
                    const int y1 = std::min(y0 + 1, images.h() - 1);
                    const int x1 = std::min(x0 + 1, images.w() - 1);
                    const double fy = yc - y0, fx = xc - x0;
                    out.at(s, c, i, j) = (1 - fy) * ((1 - fx) * images.at(s, c, y0, x0) + fx * images.at(s, c, y0, x1)) +
                                         fy * ((1 - fx) * images.at(s, c, y1, x0) + fx * images.at(s, c, y1, x1));
                }
            }
        }
    }
    return out;
}

std::vector<std::pair<double, double>> rotation_robustness(const nn::Network& net, const LabeledImages& test,
                                                           std::span<const double> angles) {
    std::vector<std::pair<double, double>> out;
    out.reserve(angles.size());
    for (double angle : angles) {
        const Tensor4 rotated = angle == 0.0 ? test.images : rotate_images(test.images, angle);
        out.emplace_back(angle, nn::accuracy(net, rotated, test.labels));
    }
    return out;
}

// ---- Pooling micro-benchmark ---------------------------------------------------

namespace {

owa::PoolMode bench_mode(const std::string& variant) {
    if (variant == "max") return owa::PoolMode::Max;
    if (variant == "avg" || variant == "ave") return owa::PoolMode::Avg;
    if (variant == "owa") return owa::PoolMode::Owa;
    throw ConfigError("benchmark_pooling: unknown variant '" + variant + "' (use max, avg, owa)");
}

template <typename F>
double time_ms_median(int repetitions, F&& fn) {
    fn();  // warm up and measure once to calibrate inner iterations
    auto t0 = Clock::now();
    fn();
    double once = seconds_since(t0);
    const int inner = std::max(1, static_cast<int>(0.01 / std::max(once, 1e-9)));
    std::vector<double> times;
    times.reserve(repetitions);
    for (int r = 0; r < repetitions; ++r) {
        t0 = Clock::now();
        for (int i = 0; i < inner; ++i) fn();
        times.push_back(seconds_since(t0) / inner * 1000.0);
    }
    return median(std::move(times));
}

}  // namespace

std::vector<BenchRow> benchmark_pooling(std::span<const std::array<int, 4>> shapes,
                                        std::span<const std::string> variants, int repetitions,
                                        int window, int stride) {
    if (repetitions < 1) throw std::invalid_argument("benchmark_pooling: repetitions must be >= 1");
    std::vector<BenchRow> rows;
    for (const auto& shape : shapes) {
        Rng rng(12345);
        Tensor4 x(shape[0], shape[1], shape[2], shape[3]);
        for (double& v : x.values()) v = rng.uniform(-1.0, 1.0);

        double max_fwd_ms = 0.0;
        std::vector<BenchRow> shape_rows;
        for (const auto& variant : variants) {
            const owa::PoolMode mode = bench_mode(variant);
            owa::PoolPlan plan{window, window, stride, stride, mode};
            const auto [oh, ow] = plan.output_dims(shape[2], shape[3]);
            owa::OwaWeights weights =
                owa::init_weights(plan.window_size(), shape[1], owa::Scope::Shared, owa::Regime::Unconstrained);
            const owa::OwaWeights* wp = mode == owa::PoolMode::Owa ? &weights : nullptr;

            BenchRow row;
            row.variant = variant;
            row.shape = shape;
            row.window_ops = static_cast<std::uint64_t>(shape[0]) * shape[1] * oh * ow;
            row.fwd_ms = time_ms_median(repetitions, [&] {
                auto [y, trace] = owa_pool_forward(x, plan, wp);
                (void)y;
            });
            Tensor4 gy(shape[0], shape[1], oh, ow, 1.0);
            row.fwd_bwd_ms = time_ms_median(repetitions, [&] {
                auto [y, trace] = owa_pool_forward(x, plan, wp);
                auto grads = owa_pool_backward(gy, trace, wp);
                (void)y;
                (void)grads;
            });
            if (mode == owa::PoolMode::Max) max_fwd_ms = row.fwd_ms;
            shape_rows.push_back(std::move(row));
        }
        for (auto& row : shape_rows) {
            row.fwd_ratio_to_max = max_fwd_ms > 0.0 ? row.fwd_ms / max_fwd_ms : 0.0;
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

// ---- Experiments -------------------------------------------------------------

namespace {

struct SplitData {
    LabeledImages train, test;
};

SplitData load_cnn_data(const ExperimentConfig& cfg) {
    SplitData data;
    if (cfg.data_source == "synth") {
        SynthSpec spec;
        spec.kind = synth_kind_from_string(cfg.synth_kind);
        spec.size = cfg.image_size;
        spec.n_samples = cfg.train_samples;
        data.train = synth_dataset(spec, cfg.seed);
        spec.n_samples = cfg.test_samples;
        data.test = synth_dataset(spec, cfg.seed + 1);
        return data;
    }
    if (cfg.data_source == "cifar") {
        namespace fs = std::filesystem;
        if (cfg.data_path.empty()) throw ConfigError("cifar source needs data.path");
        if (!fs::exists(cfg.data_path)) throw ConfigError("data.path does not exist: " + cfg.data_path);
        if (fs::is_directory(cfg.data_path)) {
            CifarData train = load_cifar10(cfg.data_path, cfg.train_samples, cfg.class_filter);
            CifarData test = load_cifar10(cfg.data_path + "/test_batch.bin", cfg.test_samples,
                                          cfg.class_filter, train.channel_means);
            data.train = {std::move(train.images), std::move(train.labels)};
            data.test = {std::move(test.images), std::move(test.labels)};
        } else {
            // single file: leading samples train, following samples test
            CifarData all = load_cifar10(cfg.data_path, cfg.train_samples + cfg.test_samples, cfg.class_filter);
            std::vector<int> idx(cfg.train_samples);
            std::iota(idx.begin(), idx.end(), 0);
            data.train.images = gather_samples(all.images, idx);
            data.train.labels.assign(all.labels.begin(), all.labels.begin() + cfg.train_samples);
            idx.resize(cfg.test_samples);
            std::iota(idx.begin(), idx.end(), cfg.train_samples);
            data.test.images = gather_samples(all.images, idx);
            data.test.labels.assign(all.labels.begin() + cfg.train_samples, all.labels.end());
        }
        return data;
    }
    throw ConfigError("task cnn/robust supports data sources synth and cifar, got " + cfg.data_source);
}

int export_pool_weight_csvs(const nn::Network& net, const std::string& dir, int epoch) {
    namespace fs = std::filesystem;
    int site = 0;
    for (const auto& layer : net.layers) {
        const auto* pool = std::get_if<nn::Pool>(&layer);
        if (pool == nullptr || pool->plan.mode != owa::PoolMode::Owa) continue;
        fs::create_directories(dir);
        const std::string name = site == 0 ? dir + "/weights_epoch" + std::to_string(epoch) + ".csv"
                                           : dir + "/weights_site" + std::to_string(site) + "_epoch" +
                                                 std::to_string(epoch) + ".csv";
        owa::write_weights_csv(name, pool->weights);
        ++site;
    }
    return site;
}

std::vector<Matrix> snapshot_pool_weights(const nn::Network& net) {
    std::vector<Matrix> out;
    for (const auto& layer : net.layers) {
        const auto* pool = std::get_if<nn::Pool>(&layer);
        if (pool != nullptr && pool->plan.mode == owa::PoolMode::Owa) out.push_back(pool->weights.values);
    }
    return out;
}

nn::Network build_experiment_net(const ExperimentConfig& cfg, const LabeledImages& train,
                                 const std::string& variant, Rng& rng) {
    if (cfg.arch == "nin") {
        nn::Network net = nn::build_nin(cfg.num_classes, nn::nin_variant_from_string(variant), rng);
        net.dropout_enabled = cfg.dropout;
        return net;
    }
    nn::Network net = build_small_net(train.images.c(), train.images.h(), cfg.num_classes, cfg.conv_channels,
                                      cfg.conv_kernel, cfg.pool_window, cfg.pool_stride, variant, rng);
    net.dropout_enabled = cfg.dropout;
    return net;
}

VariantResult run_one_variant(const ExperimentConfig& cfg, const SplitData& data, const std::string& variant,
                              bool export_weights) {
    Rng rng(cfg.seed);
    nn::Network net = build_experiment_net(cfg, data.train, variant, rng);
    const std::string weight_dir = cfg.out_dir + "/" + variant;
    auto on_epoch = [&](int epoch, nn::Network& n) {
        if (export_weights) export_pool_weight_csvs(n, weight_dir, epoch);
    };
    VariantResult result;
    result.variant = variant;
    result.epochs = train_network(net, data.train, data.test, cfg.train, on_epoch);
    const auto& last = result.epochs.back();
    result.final_train_acc = last.train_acc;
    result.final_test_acc = last.test_acc;
    result.final_cost = last.j;
    std::vector<double> secs;
    for (const auto& e : result.epochs) secs.push_back(e.seconds);
    result.epoch_seconds_median = median(std::move(secs));
    result.final_pool_weights = snapshot_pool_weights(net);
    return result;
}

}  // namespace

Report run_cnn_experiment(const ExperimentConfig& cfg) {
    if (cfg.variants.empty()) throw ConfigError("cnn experiment needs cnn.variants");
    const SplitData data = load_cnn_data(cfg);
    Report report;
    report.config_echo = cfg.echo;
    for (const auto& variant : cfg.variants) {
        report.variants.push_back(run_one_variant(cfg, data, variant, true));
    }
    write_report_files(report, cfg.out_dir);
    return report;
}

Report run_robustness_experiment(const ExperimentConfig& cfg) {
    if (cfg.variants.empty()) throw ConfigError("robust experiment needs robust.variants");
    const SplitData data = load_cnn_data(cfg);
    Report report;
    report.config_echo = cfg.echo;
    for (const auto& variant : cfg.variants) {
        Rng rng(cfg.seed);
        nn::Network net = build_experiment_net(cfg, data.train, variant, rng);
        VariantResult result;
        result.variant = variant;
        result.epochs = train_network(net, data.train, data.test, cfg.train);
        const auto& last = result.epochs.back();
        result.final_train_acc = last.train_acc;
        result.final_test_acc = last.test_acc;
        result.final_cost = last.j;
        result.final_pool_weights = snapshot_pool_weights(net);
        report.variants.push_back(std::move(result));

        RobustnessCurve curve;
        curve.variant = variant;
        for (const auto& [angle, acc] : rotation_robustness(net, data.test, cfg.angles)) {
            curve.angles.push_back(angle);
            curve.accuracy.push_back(acc);
        }
        report.robustness.push_back(std::move(curve));
    }
    write_report_files(report, cfg.out_dir);
    return report;
}

Report run_bench(const ExperimentConfig& cfg) {
    std::vector<std::string> variants = cfg.variants;
    if (variants.empty()) variants = {"max", "avg", "owa"};
    Report report;
    report.config_echo = cfg.echo;
    report.bench = benchmark_pooling(cfg.bench_shapes, variants, cfg.bench_reps, cfg.bench_window,
                                     cfg.bench_stride);
    write_report_files(report, cfg.out_dir);
    return report;
}

namespace {

// Descriptor pipeline for the BoW experiment: images -> dense descriptors.
bow::DescriptorSet descriptors_from_images(const LabeledImages& images, int cell_size) {
    bow::DescriptorSet set;
    for (int s = 0; s < images.count(); ++s) {
        Matrix gray(images.images.h(), images.images.w());
        for (int i = 0; i < gray.rows(); ++i)
            for (int j = 0; j < gray.cols(); ++j) {
                double v = 0.0;
                for (int c = 0; c < images.images.c(); ++c) v += images.images.at(s, c, i, j);
                gray.at(i, j) = v / images.images.c();
            }
        set.per_image.push_back(bow::dense_descriptors(gray, cell_size));
        set.labels.push_back(images.labels[s]);
    }
    return set;
}

std::vector<bow::CodedImage> encode_set(const bow::DescriptorSet& set, const bow::Dictionary& dict) {
    std::vector<bow::CodedImage> out;
    out.reserve(set.per_image.size());
    for (std::size_t i = 0; i < set.per_image.size(); ++i) {
        const Matrix& desc = set.per_image[i];
        bow::CodedImage img;
        img.label = set.labels[i];
        img.codes = Matrix(desc.rows(), dict.k());
        for (int cell = 0; cell < desc.rows(); ++cell) {
            const auto code = bow::triangle_encode(desc.row(cell), dict);
            std::copy(code.begin(), code.end(), img.codes.row(cell).begin());
        }
        out.push_back(std::move(img));
    }
    return out;
}

}  // namespace

Report run_bow_experiment(const ExperimentConfig& cfg) {
    std::vector<std::string> variants = cfg.variants;
    if (variants.empty()) variants = {"max", "mean", "owa"};
    if (cfg.dict_sizes.empty()) throw ConfigError("bow experiment needs bow.dict_sizes");

    bow::DescriptorSet train_set, test_set;
    if (cfg.data_source == "codes_csv") {
        if (cfg.data_path.empty()) throw ConfigError("codes_csv source needs data.path");
        if (!std::filesystem::exists(cfg.data_path)) {
            throw ConfigError("data.path does not exist: " + cfg.data_path);
        }
        bow::DescriptorSet all = bow::read_descriptors_csv(cfg.data_path);
        const int total = static_cast<int>(all.per_image.size());
        if (cfg.train_samples + cfg.test_samples > total) {
            throw ConfigError("bow: requested more samples than the CSV provides");
        }
        for (int i = 0; i < cfg.train_samples; ++i) {
            train_set.per_image.push_back(all.per_image[i]);
            train_set.labels.push_back(all.labels[i]);
        }
        for (int i = cfg.train_samples; i < cfg.train_samples + cfg.test_samples; ++i) {
            test_set.per_image.push_back(all.per_image[i]);
            test_set.labels.push_back(all.labels[i]);
        }
    } else if (cfg.data_source == "synth") {
        SynthSpec spec;
        spec.kind = synth_kind_from_string(cfg.synth_kind);
        spec.size = cfg.image_size;
        spec.n_samples = cfg.train_samples;
        train_set = descriptors_from_images(synth_dataset(spec, cfg.seed), cfg.descriptor_cell);
        spec.n_samples = cfg.test_samples;
        test_set = descriptors_from_images(synth_dataset(spec, cfg.seed + 1), cfg.descriptor_cell);
    } else {
        throw ConfigError("task bow supports data sources synth and codes_csv, got " + cfg.data_source);
    }

    // stack training descriptors for dictionary learning
    int total_rows = 0;
    const int dim = train_set.per_image[0].cols();
    for (const auto& m : train_set.per_image) total_rows += m.rows();
    Matrix stacked(total_rows, dim);
    int row = 0;
    for (const auto& m : train_set.per_image)
        for (int r = 0; r < m.rows(); ++r, ++row)
            std::copy(m.row(r).begin(), m.row(r).end(), stacked.row(row).begin());

    const int num_classes = 1 + *std::max_element(train_set.labels.begin(), train_set.labels.end());

    Report report;
    report.config_echo = cfg.echo;
    namespace fs = std::filesystem;
    fs::create_directories(cfg.out_dir);

    for (int k : cfg.dict_sizes) {
        const bow::Dictionary dict = bow::kmeans_fit(stacked, k, 25, cfg.seed);
        const auto train_codes = encode_set(train_set, dict);
        const auto test_codes = encode_set(test_set, dict);
        const int cells = train_codes[0].cells();

        for (const auto& variant : variants) {
            std::vector<double> w_init;
            bool learn_w = false;
            if (variant == "max") {
                w_init.assign(cells, 0.0);
                w_init[0] = 1.0;
            } else if (variant == "mean") {
                w_init.assign(cells, 1.0 / cells);
            } else if (variant == "owa") {
                learn_w = true;
            } else {
                throw ConfigError("bow variants are max, mean, owa; got " + variant);
            }
            auto result = bow::alternating_train(train_codes, num_classes, cfg.bow_reg, cfg.bow_sched,
                                                 w_init, learn_w);
            BowRow brow;
            brow.dict_size = k;
            brow.variant = variant;
            brow.train_acc = bow::accuracy(result.model, result.w, train_codes);
            brow.test_acc = bow::accuracy(result.model, result.w, test_codes);
            brow.final_cost = result.history.empty() ? 0.0 : result.history.back().joint_after;
            brow.outer_iters = result.outer_iters;
            brow.converged = result.converged;
            report.bow.push_back(brow);

            if (variant == "owa") {
                owa::OwaWeights weights;
                weights.values = Matrix::from_data(1, cells, result.w);
                weights.scope = owa::Scope::Shared;
                weights.regime = owa::Regime::Unconstrained;
                owa::write_weights_csv(cfg.out_dir + "/bow_w_dict" + std::to_string(k) + ".csv", weights);
                std::ofstream mf(cfg.out_dir + "/bow_model_dict" + std::to_string(k) + ".json");
                bow::export_model_json(mf, &dict, result.model, result.w, result.history);
            }
        }
    }
    write_report_files(report, cfg.out_dir);
    return report;
}

Report run_experiment(const ExperimentConfig& cfg) {
    switch (cfg.task) {
        case ExperimentConfig::Task::Cnn: return run_cnn_experiment(cfg);
        case ExperimentConfig::Task::Bow: return run_bow_experiment(cfg);
        case ExperimentConfig::Task::Bench: return run_bench(cfg);
        case ExperimentConfig::Task::Robust: return run_robustness_experiment(cfg);
    }
    throw ConfigError("unknown task");
}

}  // namespace owapool::harness

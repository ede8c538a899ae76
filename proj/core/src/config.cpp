#include <array>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "owapool/errors.hpp"
#include "owapool/harness.hpp"

namespace owapool::harness {

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

std::string lower(std::string s) {
    for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing");
        return d;
    } catch (const std::exception&) {
        throw ConfigError("config: key '" + key + "' expects a number, got '" + v + "'");
    }
}

std::int64_t parse_int(const std::string& key, const std::string& v) {
    std::int64_t out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size()) {
        throw ConfigError("config: key '" + key + "' expects an integer, got '" + v + "'");
    }
    return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
    const std::string s = lower(v);
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw ConfigError("config: key '" + key + "' expects a boolean, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::istringstream ss(v);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        tok = trim(tok);
        if (!tok.empty()) out.push_back(tok);
    }
    return out;
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
    std::vector<int> out;
    for (const auto& tok : split_list(v)) out.push_back(static_cast<int>(parse_int(key, tok)));
    return out;
}

std::vector<double> parse_double_list(const std::string& key, const std::string& v) {
    std::vector<double> out;
    for (const auto& tok : split_list(v)) out.push_back(parse_double(key, tok));
    return out;
}

std::array<int, 4> parse_shape(const std::string& key, const std::string& v) {
    std::array<int, 4> shape{};
    std::istringstream ss(v);
    std::string tok;
    int i = 0;
    while (std::getline(ss, tok, 'x')) {
        if (i >= 4) throw ConfigError("config: key '" + key + "' expects NxCxHxW, got '" + v + "'");
        shape[i++] = static_cast<int>(parse_int(key, trim(tok)));
    }
    if (i != 4) throw ConfigError("config: key '" + key + "' expects NxCxHxW, got '" + v + "'");
    return shape;
}

}  // namespace

ExperimentConfig parse_config_text(std::istream& is) {
    ExperimentConfig cfg;

    // schema: full key -> setter
    const std::map<std::string, std::function<void(const std::string&, const std::string&)>> schema = {
        {"experiment.task",
         [&](const std::string& k, const std::string& v) {
             const std::string s = lower(v);
             if (s == "cnn") cfg.task = ExperimentConfig::Task::Cnn;
             else if (s == "bow") cfg.task = ExperimentConfig::Task::Bow;
             else if (s == "bench") cfg.task = ExperimentConfig::Task::Bench;
             else if (s == "robust") cfg.task = ExperimentConfig::Task::Robust;
             else throw ConfigError("config: key '" + k + "': unknown task '" + v + "'");
         }},
        {"experiment.seed",
         [&](const std::string& k, const std::string& v) { cfg.seed = static_cast<std::uint64_t>(parse_int(k, v)); }},
        {"experiment.out", [&](const std::string&, const std::string& v) { cfg.out_dir = v; }},
        {"data.source",
         [&](const std::string& k, const std::string& v) {
             const std::string s = lower(v);
             if (s != "synth" && s != "cifar" && s != "codes_csv") {
                 throw ConfigError("config: key '" + k + "': unknown source '" + v + "'");
             }
             cfg.data_source = s;
         }},
        {"data.kind",
         [&](const std::string& k, const std::string& v) {
             synth_kind_from_string(v);  // validates
             cfg.synth_kind = lower(v);
         }},
        {"data.path", [&](const std::string&, const std::string& v) { cfg.data_path = v; }},
        {"data.train",
         [&](const std::string& k, const std::string& v) { cfg.train_samples = static_cast<int>(parse_int(k, v)); }},
        {"data.test",
         [&](const std::string& k, const std::string& v) { cfg.test_samples = static_cast<int>(parse_int(k, v)); }},
        {"data.classes",
         [&](const std::string& k, const std::string& v) { cfg.class_filter = parse_int_list(k, v); }},
        {"data.size",
         [&](const std::string& k, const std::string& v) { cfg.image_size = static_cast<int>(parse_int(k, v)); }},
        {"net.arch",
         [&](const std::string& k, const std::string& v) {
             const std::string s = lower(v);
             if (s != "small" && s != "nin") throw ConfigError("config: key '" + k + "': unknown arch '" + v + "'");
             cfg.arch = s;
         }},
        {"net.channels",
         [&](const std::string& k, const std::string& v) { cfg.conv_channels = static_cast<int>(parse_int(k, v)); }},
        {"net.kernel",
         [&](const std::string& k, const std::string& v) { cfg.conv_kernel = static_cast<int>(parse_int(k, v)); }},
        {"net.pool_window",
         [&](const std::string& k, const std::string& v) { cfg.pool_window = static_cast<int>(parse_int(k, v)); }},
        {"net.pool_stride",
         [&](const std::string& k, const std::string& v) { cfg.pool_stride = static_cast<int>(parse_int(k, v)); }},
        {"net.num_classes",
         [&](const std::string& k, const std::string& v) { cfg.num_classes = static_cast<int>(parse_int(k, v)); }},
        {"train.lr",
         [&](const std::string& k, const std::string& v) { cfg.train.learning_rate = parse_double(k, v); }},
        {"train.momentum",
         [&](const std::string& k, const std::string& v) { cfg.train.momentum = parse_double(k, v); }},
        {"train.epochs",
         [&](const std::string& k, const std::string& v) { cfg.train.epochs = static_cast<int>(parse_int(k, v)); }},
        {"train.batch",
         [&](const std::string& k, const std::string& v) { cfg.train.batch_size = static_cast<int>(parse_int(k, v)); }},
        {"train.w_lr_mult",
         [&](const std::string& k, const std::string& v) { cfg.train.weight_lr_multiplier = parse_double(k, v); }},
        {"train.dropout",
         [&](const std::string& k, const std::string& v) { cfg.dropout = parse_bool(k, v); }},
        {"penalty.c1", [&](const std::string& k, const std::string& v) { cfg.train.reg.c1 = parse_double(k, v); }},
        {"penalty.c2", [&](const std::string& k, const std::string& v) { cfg.train.reg.c2 = parse_double(k, v); }},
        {"penalty.c3", [&](const std::string& k, const std::string& v) { cfg.train.reg.c3 = parse_double(k, v); }},
        {"cnn.variants",
         [&](const std::string&, const std::string& v) {
             cfg.variants.clear();
             for (auto& s : split_list(v)) cfg.variants.push_back(lower(s));
         }},
        {"bow.dict_sizes",
         [&](const std::string& k, const std::string& v) { cfg.dict_sizes = parse_int_list(k, v); }},
        {"bow.cells",
         [&](const std::string& k, const std::string& v) { cfg.bow_cells = static_cast<int>(parse_int(k, v)); }},
        {"bow.descriptor_cell",
         [&](const std::string& k, const std::string& v) { cfg.descriptor_cell = static_cast<int>(parse_int(k, v)); }},
        {"bow.c1", [&](const std::string& k, const std::string& v) { cfg.bow_reg.c1 = parse_double(k, v); }},
        {"bow.c2", [&](const std::string& k, const std::string& v) { cfg.bow_reg.c2 = parse_double(k, v); }},
        {"bow.outer_max",
         [&](const std::string& k, const std::string& v) { cfg.bow_sched.outer_max = static_cast<int>(parse_int(k, v)); }},
        {"bow.theta_epochs",
         [&](const std::string& k, const std::string& v) { cfg.bow_sched.theta_epochs = static_cast<int>(parse_int(k, v)); }},
        {"bow.w_epochs",
         [&](const std::string& k, const std::string& v) { cfg.bow_sched.w_epochs = static_cast<int>(parse_int(k, v)); }},
        {"bow.theta_lr",
         [&](const std::string& k, const std::string& v) { cfg.bow_sched.theta_lr = parse_double(k, v); }},
        {"bow.w_lr", [&](const std::string& k, const std::string& v) { cfg.bow_sched.w_lr = parse_double(k, v); }},
        {"bow.dual_lr",
         [&](const std::string& k, const std::string& v) { cfg.bow_sched.dual_lr = parse_double(k, v); }},
        {"bow.variants",
         [&](const std::string&, const std::string& v) {
             cfg.variants.clear();
             for (auto& s : split_list(v)) cfg.variants.push_back(lower(s));
         }},
        {"bench.shape",
         [&](const std::string& k, const std::string& v) {
             cfg.bench_shapes.clear();
             for (auto& s : split_list(v)) cfg.bench_shapes.push_back(parse_shape(k, s));
         }},
        {"bench.window",
         [&](const std::string& k, const std::string& v) { cfg.bench_window = static_cast<int>(parse_int(k, v)); }},
        {"bench.stride",
         [&](const std::string& k, const std::string& v) { cfg.bench_stride = static_cast<int>(parse_int(k, v)); }},
        {"bench.reps",
         [&](const std::string& k, const std::string& v) { cfg.bench_reps = static_cast<int>(parse_int(k, v)); }},
        {"bench.variants",
         [&](const std::string&, const std::string& v) {
             cfg.variants.clear();
             for (auto& s : split_list(v)) cfg.variants.push_back(lower(s));
         }},
        {"robust.angles",
         [&](const std::string& k, const std::string& v) { cfg.angles = parse_double_list(k, v); }},
        {"robust.variants",
         [&](const std::string&, const std::string& v) {
             cfg.variants.clear();
             for (auto& s : split_list(v)) cfg.variants.push_back(lower(s));
         }},
    };

    std::string line;
    std::string section;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError("config line " + std::to_string(line_no) + ": unterminated section header");
            section = lower(trim(line.substr(1, line.size() - 2)));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value, got '" + line + "'");
        }
        const std::string key = lower(trim(line.substr(0, eq)));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
        const std::string full = section.empty() ? key : section + "." + key;
        const auto it = schema.find(full);
        if (it == schema.end()) {
            throw ConfigError("config line " + std::to_string(line_no) + ": unknown key '" + full + "'");
        }
        it->second(full, value);
        cfg.echo[full] = value;
    }

    if (cfg.train.learning_rate <= 0.0) throw ConfigError("config: train.lr must be > 0");
    if (cfg.train.epochs < 1) throw ConfigError("config: train.epochs must be >= 1");
    if (cfg.bow_reg.c1 <= 0.0) throw ConfigError("config: bow.c1 must be > 0");
    if (cfg.bow_reg.c2 < 0.0) throw ConfigError("config: bow.c2 must be >= 0");
    if (cfg.train.reg.c1 < 0.0 || cfg.train.reg.c2 < 0.0 || cfg.train.reg.c3 < 0.0) {
        throw ConfigError("config: penalty coefficients must be >= 0");
    }
    return cfg;
}

ExperimentConfig parse_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("config: cannot open " + path);
    return parse_config_text(f);
}

}  // namespace owapool::harness

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "owapool/harness.hpp"

namespace owapool::harness {

namespace {

constexpr std::size_t kRecordBytes = 3073;  // 1 label byte + 3*1024 pixels
constexpr int kImageDim = 32;
constexpr int kPlane = kImageDim * kImageDim;

std::vector<std::string> batch_files(const std::string& path) {
    namespace fs = std::filesystem;
    if (!fs::exists(path)) throw std::runtime_error("load_cifar10: path does not exist: " + path);
    if (fs::is_regular_file(path)) return {path};
    std::vector<std::string> files;
    for (int i = 1; i <= 5; ++i) {
        const std::string f = path + "/data_batch_" + std::to_string(i) + ".bin";
        if (fs::exists(f)) files.push_back(f);
    }
    if (files.empty()) {
        throw std::runtime_error("load_cifar10: no data_batch_*.bin files under " + path);
    }
    return files;
}

struct RawRecords {
    std::vector<std::uint8_t> bytes;  // concatenated records
    std::size_t count = 0;
};

RawRecords read_records(const std::vector<std::string>& files) {
    RawRecords out;
    for (const auto& file : files) {
        std::ifstream f(file, std::ios::binary | std::ios::ate);
        if (!f) throw std::runtime_error("load_cifar10: cannot open " + file);
        const auto size = static_cast<std::size_t>(f.tellg());
        if (size % kRecordBytes != 0) {
            const std::size_t offset = (size / kRecordBytes) * kRecordBytes;
            throw std::runtime_error("load_cifar10: " + file + " has size " + std::to_string(size) +
                                     ", not a multiple of 3073; partial record begins at offset " +
                                     std::to_string(offset));
        }
        f.seekg(0);
        const std::size_t old = out.bytes.size();
        out.bytes.resize(old + size);
        f.read(reinterpret_cast<char*>(out.bytes.data() + old), static_cast<std::streamsize>(size));
        if (!f) throw std::runtime_error("load_cifar10: short read from " + file);
        out.count += size / kRecordBytes;
    }
    return out;
}

CifarData load_impl(const std::string& path, int n_samples, const std::vector<int>& class_filter,
                    const std::array<double, 3>* means_in) {
    const auto records = read_records(batch_files(path));

    std::vector<int> remap(10, -1);
    if (class_filter.empty()) {
        for (int i = 0; i < 10; ++i) remap[i] = i;
    } else {
        for (std::size_t i = 0; i < class_filter.size(); ++i) {
            const int cls = class_filter[i];
            if (cls < 0 || cls > 9) throw std::runtime_error("load_cifar10: class filter entry out of range");
            remap[cls] = static_cast<int>(i);
        }
    }

    std::vector<std::size_t> keep;
    for (std::size_t r = 0; r < records.count; ++r) {
        const std::uint8_t label = records.bytes[r * kRecordBytes];
        if (label > 9) {
            throw std::runtime_error("load_cifar10: invalid label byte " + std::to_string(label) +
                                     " in record " + std::to_string(r) + " (offset " +
                                     std::to_string(r * kRecordBytes) + ")");
        }
        if (remap[label] >= 0) keep.push_back(r);
        if (n_samples > 0 && keep.size() == static_cast<std::size_t>(n_samples)) break;
    }
    if (n_samples > 0 && keep.size() < static_cast<std::size_t>(n_samples)) {
        throw std::runtime_error("load_cifar10: requested " + std::to_string(n_samples) +
                                 " samples but only " + std::to_string(keep.size()) + " matched");
    }
    if (keep.empty()) throw std::runtime_error("load_cifar10: no records matched the class filter");

    CifarData data;
    data.images = Tensor4(static_cast<int>(keep.size()), 3, kImageDim, kImageDim);
    data.labels.resize(keep.size());
    for (std::size_t i = 0; i < keep.size(); ++i) {
        const std::uint8_t* rec = records.bytes.data() + keep[i] * kRecordBytes;
        data.labels[i] = remap[rec[0]];
        double* dst = data.images.data() + i * 3 * kPlane;
        for (int p = 0; p < 3 * kPlane; ++p) dst[p] = rec[1 + p] / 255.0;
    }

    if (means_in != nullptr) {
        data.channel_means = *means_in;
    } else {
        data.channel_means = {0.0, 0.0, 0.0};
        for (int i = 0; i < data.images.n(); ++i)
            for (int c = 0; c < 3; ++c) {
                const double* plane = data.images.data() + (static_cast<std::size_t>(i) * 3 + c) * kPlane;
                for (int p = 0; p < kPlane; ++p) data.channel_means[c] += plane[p];
            }
        for (auto& m : data.channel_means) m /= static_cast<double>(data.images.n()) * kPlane;
    }
    for (int i = 0; i < data.images.n(); ++i)
        for (int c = 0; c < 3; ++c) {
            double* plane = data.images.data() + (static_cast<std::size_t>(i) * 3 + c) * kPlane;
            for (int p = 0; p < kPlane; ++p) plane[p] -= data.channel_means[c];
        }
    return data;
}

}  // namespace

CifarData load_cifar10(const std::string& path, int n_samples, const std::vector<int>& class_filter) {
    return load_impl(path, n_samples, class_filter, nullptr);
}

CifarData load_cifar10(const std::string& path, int n_samples, const std::vector<int>& class_filter,
                       const std::array<double, 3>& subtract_means) {
    return load_impl(path, n_samples, class_filter, &subtract_means);
}

void write_cifar10_batch(const std::string& path, const Tensor4& images, std::span<const int> labels) {
    if (images.c() != 3 || images.h() != kImageDim || images.w() != kImageDim) {
        throw std::invalid_argument("write_cifar10_batch: images must be n x 3 x 32 x 32");
    }
    if (labels.size() != static_cast<std::size_t>(images.n())) {
        throw std::invalid_argument("write_cifar10_batch: label count mismatch");
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("write_cifar10_batch: cannot open " + path);
    std::vector<std::uint8_t> rec(kRecordBytes);
    for (int i = 0; i < images.n(); ++i) {
        if (labels[i] < 0 || labels[i] > 9) throw std::invalid_argument("write_cifar10_batch: label out of range");
        rec[0] = static_cast<std::uint8_t>(labels[i]);
        const double* src = images.data() + static_cast<std::size_t>(i) * 3 * kPlane;
        for (int p = 0; p < 3 * kPlane; ++p) {
            const double v = std::clamp(src[p], 0.0, 1.0);
            rec[1 + p] = static_cast<std::uint8_t>(v * 255.0 + 0.5);
        }
        f.write(reinterpret_cast<const char*>(rec.data()), static_cast<std::streamsize>(rec.size()));
    }
    if (!f) throw std::runtime_error("write_cifar10_batch: write failed for " + path);
}

}  // namespace owapool::harness

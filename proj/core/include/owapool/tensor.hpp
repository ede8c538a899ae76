#pragma once

#include <cassert>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace owapool {

// Dense rank-4 array of 64-bit floats, row-major in (n, c, h, w).
// Shapes are validated at construction; all element access derives from the
// stored shape, so no out-of-bounds index is reachable through this interface.
class Tensor4 {
public:
    Tensor4() = default;

    Tensor4(int n, int c, int h, int w, double fill = 0.0) : n_(n), c_(c), h_(h), w_(w) {
        validate_shape(n, c, h, w);
        data_.assign(static_cast<std::size_t>(n) * c * h * w, fill);
    }

    static Tensor4 from_data(int n, int c, int h, int w, std::vector<double> data) {
        validate_shape(n, c, h, w);
        const auto expect = static_cast<std::size_t>(n) * c * h * w;
        if (data.size() != expect) {
            throw std::invalid_argument("Tensor4::from_data: got " + std::to_string(data.size()) +
                                        " values for shape requiring " + std::to_string(expect));
        }
        Tensor4 t;
        t.n_ = n; t.c_ = c; t.h_ = h; t.w_ = w;
        t.data_ = std::move(data);
        return t;
    }

    int n() const { return n_; }
    int c() const { return c_; }
    int h() const { return h_; }
    int w() const { return w_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    bool same_shape(const Tensor4& o) const {
        return n_ == o.n_ && c_ == o.c_ && h_ == o.h_ && w_ == o.w_;
    }

    std::size_t index(int b, int ch, int i, int j) const {
        assert(b >= 0 && b < n_ && ch >= 0 && ch < c_ && i >= 0 && i < h_ && j >= 0 && j < w_);
        return ((static_cast<std::size_t>(b) * c_ + ch) * h_ + i) * w_ + j;
    }

    double& at(int b, int ch, int i, int j) { return data_[index(b, ch, i, j)]; }
    double at(int b, int ch, int i, int j) const { return data_[index(b, ch, i, j)]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::span<double> values() { return data_; }
    std::span<const double> values() const { return data_; }

    // Same data, new shape. Element counts must match.
    Tensor4 reshape(int n, int c, int h, int w) const {
        validate_shape(n, c, h, w);
        const auto expect = static_cast<std::size_t>(n) * c * h * w;
        if (expect != data_.size()) {
            throw std::invalid_argument("Tensor4::reshape: element count mismatch (" +
                                        std::to_string(data_.size()) + " vs " + std::to_string(expect) + ")");
        }
        Tensor4 t;
        t.n_ = n; t.c_ = c; t.h_ = h; t.w_ = w;
        t.data_ = data_;
        return t;
    }

private:
    static void validate_shape(int n, int c, int h, int w) {
        if (n < 1 || c < 1 || h < 1 || w < 1) {
            throw std::invalid_argument("Tensor4: all dims must be >= 1, got (" + std::to_string(n) + "," +
                                        std::to_string(c) + "," + std::to_string(h) + "," + std::to_string(w) + ")");
        }
    }

    std::vector<double> data_;
    int n_ = 0, c_ = 0, h_ = 0, w_ = 0;
};

template <typename F>
Tensor4 elementwise(const Tensor4& t, F&& f) {
    Tensor4 out = t;
    for (double& v : out.values()) v = f(v);
    return out;
}

// Dense 2-D matrix of 64-bit floats, row-major.
class Matrix {
public:
    Matrix() = default;

    Matrix(int rows, int cols, double fill = 0.0) : rows_(rows), cols_(cols) {
        validate_shape(rows, cols);
        data_.assign(static_cast<std::size_t>(rows) * cols, fill);
    }

    static Matrix from_data(int rows, int cols, std::vector<double> data) {
        validate_shape(rows, cols);
        const auto expect = static_cast<std::size_t>(rows) * cols;
        if (data.size() != expect) {
            throw std::invalid_argument("Matrix::from_data: got " + std::to_string(data.size()) +
                                        " values for shape requiring " + std::to_string(expect));
        }
        Matrix m;
        m.rows_ = rows; m.cols_ = cols;
        m.data_ = std::move(data);
        return m;
    }

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::size_t index(int r, int c) const {
        assert(r >= 0 && r < rows_ && c >= 0 && c < cols_);
        return static_cast<std::size_t>(r) * cols_ + c;
    }

    double& at(int r, int c) { return data_[index(r, c)]; }
    double at(int r, int c) const { return data_[index(r, c)]; }

    std::span<double> row(int r) { return {data_.data() + index(r, 0), static_cast<std::size_t>(cols_)}; }
    std::span<const double> row(int r) const { return {data_.data() + index(r, 0), static_cast<std::size_t>(cols_)}; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::span<double> values() { return data_; }
    std::span<const double> values() const { return data_; }

    bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

private:
    static void validate_shape(int rows, int cols) {
        if (rows < 1 || cols < 1) {
            throw std::invalid_argument("Matrix: dims must be >= 1, got (" + std::to_string(rows) + "," +
                                        std::to_string(cols) + ")");
        }
    }

    std::vector<double> data_;
    int rows_ = 0, cols_ = 0;
};

}  // namespace owapool

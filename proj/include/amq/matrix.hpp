#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <vector>

namespace amq {

// Dense row-major matrix. Vectors are 1xC or Nx1 matrices.
template <typename T>
class Matrix {
public:
    Matrix() = default;
    Matrix(int rows, int cols)
        : rows_(rows), cols_(cols), data_(static_cast<size_t>(rows) * cols, T(0)) {
        if (rows < 0 || cols < 0) throw std::invalid_argument("Matrix: negative dimension");
    }
    Matrix(int rows, int cols, std::initializer_list<T> values) : Matrix(rows, cols) {
        if (values.size() != data_.size())
            throw std::invalid_argument("Matrix: initializer size mismatch");
        size_t i = 0;
        for (T v : values) data_[i++] = v;
    }

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T& operator()(int r, int c) { return data_[static_cast<size_t>(r) * cols_ + c]; }
    T operator()(int r, int c) const { return data_[static_cast<size_t>(r) * cols_ + c]; }

    T* row(int r) { return data_.data() + static_cast<size_t>(r) * cols_; }
    const T* row(int r) const { return data_.data() + static_cast<size_t>(r) * cols_; }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }

    void fill(T v) { data_.assign(data_.size(), v); }

    bool all_finite() const {
        for (T v : data_)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

    bool operator==(const Matrix& o) const {
        return rows_ == o.rows_ && cols_ == o.cols_ && data_ == o.data_;
    }

    template <typename U>
    Matrix<U> cast() const {
        Matrix<U> out(rows_, cols_);
        for (size_t i = 0; i < data_.size(); ++i) out.data()[i] = static_cast<U>(data_[i]);
        return out;
    }

    Matrix transposed() const {
        Matrix out(cols_, rows_);
        for (int r = 0; r < rows_; ++r)
            for (int c = 0; c < cols_; ++c) out(c, r) = (*this)(r, c);
        return out;
    }

private:
    int rows_ = 0;
    int cols_ = 0;
    std::vector<T> data_;
};

// C = A * B with A: m x k, B: k x n. The k-major inner loop keeps B row
// accesses contiguous so the compiler can vectorize.
template <typename T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b) {
    if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimension mismatch");
    const int m = a.rows(), k = a.cols(), n = b.cols();
    Matrix<T> c(m, n);
    for (int i = 0; i < m; ++i) {
        const T* arow = a.row(i);
        T* crow = c.row(i);
        for (int p = 0; p < k; ++p) {
            const T aik = arow[p];
            const T* brow = b.row(p);
            for (int j = 0; j < n; ++j) crow[j] += aik * brow[j];
        }
    }
    return c;
}

// C += alpha * A^T * B with A: m x k, B: m x n, C: k x n.
template <typename T>
void matmul_tn_acc(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& c, T alpha = T(1)) {
    if (a.rows() != b.rows() || c.rows() != a.cols() || c.cols() != b.cols())
        throw std::invalid_argument("matmul_tn_acc: shape mismatch");
    const int m = a.rows(), k = a.cols(), n = b.cols();
    for (int i = 0; i < m; ++i) {
        const T* arow = a.row(i);
        const T* brow = b.row(i);
        for (int p = 0; p < k; ++p) {
            const T v = alpha * arow[p];
            T* crow = c.row(p);
            for (int j = 0; j < n; ++j) crow[j] += v * brow[j];
        }
    }
    (void)m;
}

// Integer GEMM with exact accumulation: C(int64) = A * B, A: m x k, B: k x n.
// Uses 32-bit accumulators when the worst-case dot product provably fits,
// which is the common case for desk-scale quantized layers.
inline Matrix<int64_t> imatmul(const Matrix<int32_t>& a, const Matrix<int32_t>& b,
                               int64_t max_abs_a, int64_t max_abs_b) {
    if (a.cols() != b.rows()) throw std::invalid_argument("imatmul: inner dimension mismatch");
    const int m = a.rows(), k = a.cols(), n = b.cols();
    Matrix<int64_t> c(m, n);
    const bool fits32 = max_abs_a * max_abs_b * (k > 0 ? k : 1) < (int64_t(1) << 31);
    if (fits32) {
        std::vector<int32_t> acc(n);
        for (int i = 0; i < m; ++i) {
            std::fill(acc.begin(), acc.end(), 0);
            const int32_t* arow = a.row(i);
            for (int p = 0; p < k; ++p) {
                const int32_t aik = arow[p];
                const int32_t* brow = b.row(p);
                for (int j = 0; j < n; ++j) acc[j] += aik * brow[j];
            }
            int64_t* crow = c.row(i);
            for (int j = 0; j < n; ++j) crow[j] = acc[j];
        }
    } else {
        for (int i = 0; i < m; ++i) {
            const int32_t* arow = a.row(i);
            int64_t* crow = c.row(i);
            for (int p = 0; p < k; ++p) {
                const int64_t aik = arow[p];
                const int32_t* brow = b.row(p);
                for (int j = 0; j < n; ++j) crow[j] += aik * brow[j];
            }
        }
    }
    return c;
}

// C = A * B^T, A: m x k, B: n x k.
template <typename T>
Matrix<T> matmul_nt(const Matrix<T>& a, const Matrix<T>& b) {
    if (a.cols() != b.cols()) throw std::invalid_argument("matmul_nt: inner dimension mismatch");
    const int m = a.rows(), k = a.cols(), n = b.rows();
    Matrix<T> c(m, n);
    for (int i = 0; i < m; ++i) {
        const T* arow = a.row(i);
        T* crow = c.row(i);
        for (int j = 0; j < n; ++j) {
            const T* brow = b.row(j);
            T acc = T(0);
            for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
            crow[j] = acc;
        }
    }
    return c;
}

// C(int64) = A * B^T, A: m x k, B: n x k. Row-by-row dot products keep both
// operands streaming in row-major order.
inline Matrix<int64_t> imatmul_nt(const Matrix<int32_t>& a, const Matrix<int32_t>& b,
                                  int64_t max_abs_a, int64_t max_abs_b) {
    if (a.cols() != b.cols()) throw std::invalid_argument("imatmul_nt: inner dimension mismatch");
    const int m = a.rows(), k = a.cols(), n = b.rows();
    Matrix<int64_t> c(m, n);
    const bool fits32 = max_abs_a * max_abs_b * (k > 0 ? k : 1) < (int64_t(1) << 31);
    if (fits32) {
        for (int i = 0; i < m; ++i) {
            const int32_t* arow = a.row(i);
            int64_t* crow = c.row(i);
            for (int j = 0; j < n; ++j) {
                const int32_t* brow = b.row(j);
                int32_t acc = 0;
                for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
                crow[j] = acc;
            }
        }
    } else {
        for (int i = 0; i < m; ++i) {
            const int32_t* arow = a.row(i);
            int64_t* crow = c.row(i);
            for (int j = 0; j < n; ++j) {
                const int32_t* brow = b.row(j);
                int64_t acc = 0;
                for (int p = 0; p < k; ++p) acc += int64_t(arow[p]) * brow[p];
                crow[j] = acc;
            }
        }
    }
    return c;
}

}  // namespace amq

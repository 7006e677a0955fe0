#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <initializer_list>
#include <new>
#include <numeric>
#include <vector>

#include "ginv/common.hpp"

namespace ginv {

// All tensor storage is pinned to one alignment so Eigen's vectorized kernels
// take the same code path (and the same reduction order) on every run; with
// malloc'd buffers the SIMD peel depends on the heap address and repeated
// runs in one process stop being bit-identical.
template <typename T>
struct AlignedAlloc {
    static constexpr std::align_val_t kAlign{64};
    using value_type = T;
    AlignedAlloc() = default;
    template <class U>
    AlignedAlloc(const AlignedAlloc<U>&) {}
    T* allocate(size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
    void deallocate(T* p, size_t) noexcept { ::operator delete(p, kAlign); }
    template <class U>
    struct rebind {
        using other = AlignedAlloc<U>;
    };
    friend bool operator==(const AlignedAlloc&, const AlignedAlloc&) { return true; }
    friend bool operator!=(const AlignedAlloc&, const AlignedAlloc&) { return false; }
};

// Dense row-major tensor. Deliberately minimal: flat storage plus a shape,
// with Eigen maps for the heavy lifting.
template <typename T>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int64_t> shape) { resize(std::move(shape)); }
    Tensor(std::initializer_list<int64_t> shape)
        : Tensor(std::vector<int64_t>(shape)) {}

    void resize(std::vector<int64_t> shape) {
        shape_ = std::move(shape);
        int64_t n = 1;
        for (int64_t d : shape_) {
            GINV_CHECK(d >= 0, "tensor dims must be non-negative");
            n *= d;
        }
        data_.assign(static_cast<size_t>(n), T(0));
    }

    // Reinterprets the flat buffer under a new shape with the same element count.
    void reshape(std::vector<int64_t> shape) {
        int64_t n = 1;
        for (int64_t d : shape) n *= d;
        GINV_CHECK(n == numel(), "reshape changes element count");
        shape_ = std::move(shape);
    }

    const std::vector<int64_t>& shape() const { return shape_; }
    int64_t dim(size_t i) const { return shape_.at(i); }
    size_t rank() const { return shape_.size(); }
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }
    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    T& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    const T& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
    void zero() { fill(T(0)); }

    // Flat Eigen views.
    using VecMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;
    using CVecMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;
    VecMap vec() { return VecMap(data(), numel()); }
    CVecMap vec() const { return CVecMap(data(), numel()); }

    Tensor<double> to_double() const {
        Tensor<double> out(shape_);
        for (int64_t i = 0; i < numel(); ++i) out[i] = static_cast<double>(data_[static_cast<size_t>(i)]);
        return out;
    }
    Tensor<float> to_float() const {
        Tensor<float> out(shape_);
        for (int64_t i = 0; i < numel(); ++i) out[i] = static_cast<float>(data_[static_cast<size_t>(i)]);
        return out;
    }

private:
    std::vector<int64_t> shape_;
    std::vector<T, AlignedAlloc<T>> data_;
};

// Row-major matrix views over flat buffers. Storage is row-major everywhere;
// Eigen's default column-major kernels see the transposed view, which is why
// the helpers below phrase products as C^T = B^T * A^T.
template <typename T>
using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using CMatMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

template <typename T>
MatMap<T> as_matrix(Tensor<T>& t, int64_t rows, int64_t cols) {
    GINV_CHECK(rows * cols == t.numel(), "as_matrix: element count mismatch");
    return MatMap<T>(t.data(), rows, cols);
}
template <typename T>
CMatMap<T> as_matrix(const Tensor<T>& t, int64_t rows, int64_t cols) {
    GINV_CHECK(rows * cols == t.numel(), "as_matrix: element count mismatch");
    return CMatMap<T>(t.data(), rows, cols);
}

// C (m x n) = alpha * op(A) * op(B) + beta * C, all row-major flat buffers.
template <typename T>
void gemm(const T* A, const T* B, T* C,
          int64_t m, int64_t k, int64_t n,
          bool trans_a = false, bool trans_b = false,
          T alpha = T(1), T beta = T(0)) {
    CMatMap<T> a(A, trans_a ? k : m, trans_a ? m : k);
    CMatMap<T> b(B, trans_b ? n : k, trans_b ? k : n);
    MatMap<T> c(C, m, n);
    if (beta == T(0)) {
        if (!trans_a && !trans_b)
            c.noalias() = alpha * (a * b);
        else if (trans_a && !trans_b)
            c.noalias() = alpha * (a.transpose() * b);
        else if (!trans_a && trans_b)
            c.noalias() = alpha * (a * b.transpose());
        else
            c.noalias() = alpha * (a.transpose() * b.transpose());
    } else {
        if (!trans_a && !trans_b)
            c = alpha * (a * b) + beta * c;
        else if (trans_a && !trans_b)
            c = alpha * (a.transpose() * b) + beta * c;
        else if (!trans_a && trans_b)
            c = alpha * (a * b.transpose()) + beta * c;
        else
            c = alpha * (a.transpose() * b.transpose()) + beta * c;
    }
}

}  // namespace ginv

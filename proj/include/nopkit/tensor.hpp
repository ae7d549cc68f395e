// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "nopkit/error.hpp"

#include <algorithm>
#include <complex>
#include <cstddef>
#include <initializer_list>
#include <limits>
#include <new>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace nopkit {

using cdouble = std::complex<double>;

/// Storage is 64-byte aligned so vectorized kernels take the same path (and
/// round the same way) no matter where the heap placed a buffer.
template <typename T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t alignment{64};

    AlignedAllocator() noexcept = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

    /// Value-less construction default-initializes: doubles stay indeterminate
    /// until written (see Tensor's uninitialized constructor).
    template <typename U>
    void construct(U* p) noexcept(noexcept(::new (static_cast<void*>(p)) U)) {
        ::new (static_cast<void*>(p)) U;
    }
    template <typename U, typename... Args>
    void construct(U* p, Args&&... args) {
        ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
    }

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, alignment); }

    template <typename U>
    bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

/// Extents of a dense row-major array. Every extent is at least one.
class Shape {
public:
    Shape() = default;
    Shape(std::initializer_list<std::size_t> dims) : dims_(dims) { validate(); }
    explicit Shape(std::vector<std::size_t> dims) : dims_(std::move(dims)) { validate(); }

    [[nodiscard]] std::size_t rank() const noexcept { return dims_.size(); }
    [[nodiscard]] std::size_t operator[](std::size_t axis) const { return dims_.at(axis); }
    [[nodiscard]] const std::vector<std::size_t>& dims() const noexcept { return dims_; }

    [[nodiscard]] std::size_t numel() const noexcept {
        std::size_t n = 1;
        for (auto d : dims_) n *= d;
        return n;
    }

    /// Row-major strides in elements.
    [[nodiscard]] std::vector<std::size_t> strides() const {
        std::vector<std::size_t> s(dims_.size(), 1);
        for (std::size_t i = dims_.size(); i-- > 1;) s[i - 1] = s[i] * dims_[i];
        return s;
    }

    [[nodiscard]] Shape with(std::size_t axis, std::size_t extent) const {
        auto d = dims_;
        d.at(axis) = extent;
        return Shape(std::move(d));
    }

    [[nodiscard]] std::string str() const {
        std::string s = "(";
        for (std::size_t i = 0; i < dims_.size(); ++i) {
            if (i) s += ", ";
            s += std::to_string(dims_[i]);
        }
        return s + ")";
    }

    friend bool operator==(const Shape&, const Shape&) = default;

private:
    void validate() const {
        std::size_t n = 1;
        for (auto d : dims_) {
            if (d == 0) throw ShapeError("extent must be positive in shape " + str());
            if (n > std::numeric_limits<std::size_t>::max() / d)
                throw ShapeError("element count overflows in shape " + str());
            n *= d;
        }
    }

    std::vector<std::size_t> dims_;
};

/// Tag for tensors whose every entry is written before it is read.
struct Uninitialized {};
inline constexpr Uninitialized uninitialized{};

/// Dense row-major tensor (last index fastest).
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_.numel(), T{}) {}
    /// Skips zero filling of real storage; the caller overwrites every entry.
    Tensor(Shape shape, Uninitialized) : shape_(std::move(shape)), data_(shape_.numel()) {}
    Tensor(Shape shape, const std::vector<T>& data) : shape_(std::move(shape)), data_(data.begin(), data.end()) {
        if (data_.size() != shape_.numel())
            throw ShapeError("data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_.str());
    }
    Tensor(Shape shape, T fill) : shape_(std::move(shape)), data_(shape_.numel(), fill) {}

    [[nodiscard]] const Shape& shape() const noexcept { return shape_; }
    [[nodiscard]] std::size_t rank() const noexcept { return shape_.rank(); }
    [[nodiscard]] std::size_t extent(std::size_t axis) const { return shape_[axis]; }
    [[nodiscard]] std::size_t numel() const noexcept { return data_.size(); }

    [[nodiscard]] T* data() noexcept { return data_.data(); }
    [[nodiscard]] const T* data() const noexcept { return data_.data(); }
    [[nodiscard]] std::span<T> values() noexcept { return data_; }
    [[nodiscard]] std::span<const T> values() const noexcept { return data_; }
    [[nodiscard]] AlignedVector<T>& storage() noexcept { return data_; }
    [[nodiscard]] const AlignedVector<T>& storage() const noexcept { return data_; }

    T& operator[](std::size_t i) noexcept { return data_[i]; }
    const T& operator[](std::size_t i) const noexcept { return data_[i]; }

    T& at(std::initializer_list<std::size_t> index) { return data_[offset(index)]; }
    const T& at(std::initializer_list<std::size_t> index) const { return data_[offset(index)]; }

    [[nodiscard]] Tensor reshaped(Shape shape) const& {
        if (shape.numel() != numel())
            throw ShapeError("cannot reshape " + shape_.str() + " to " + shape.str());
        Tensor t;
        t.shape_ = std::move(shape);
        t.data_ = data_;
        return t;
    }
    [[nodiscard]] Tensor reshaped(Shape shape) && {
        if (shape.numel() != numel())
            throw ShapeError("cannot reshape " + shape_.str() + " to " + shape.str());
        Tensor t;
        t.shape_ = std::move(shape);
        t.data_ = std::move(data_);
        return t;
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    std::size_t offset(std::initializer_list<std::size_t> index) const {
        if (index.size() != shape_.rank())
            throw ShapeError("index rank mismatch for shape " + shape_.str());
        std::size_t off = 0;
        std::size_t axis = 0;
        for (auto i : index) {
            if (i >= shape_[axis]) throw ShapeError("index out of range for shape " + shape_.str());
            off = off * shape_[axis] + i;
            ++axis;
        }
        return off;
    }

    Shape shape_;
    AlignedVector<T> data_;
};

using RTensor = Tensor<double>;
using CTensor = Tensor<cdouble>;

inline void require_same_shape(const Shape& a, const Shape& b, const char* what) {
    if (!(a == b)) throw ShapeError(std::string(what) + ": shape " + a.str() + " vs " + b.str());
}

} // namespace nopkit

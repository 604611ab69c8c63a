#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <vector>

#include "qislab/common.hpp"

namespace qislab::nn {

/// Row-major 2-D view with an explicit row pitch. Used for per-sample slices
/// of batch buffers and for column blocks of wider matrices.
template <typename Real>
struct MatRef {
    Real* data = nullptr;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t stride = 0;

    MatRef() = default;
    MatRef(Real* d, std::size_t r, std::size_t c) : data(d), rows(r), cols(c), stride(c) {}
    MatRef(Real* d, std::size_t r, std::size_t c, std::size_t s) : data(d), rows(r), cols(c), stride(s) {}

    /// Non-const to const conversion.
    template <typename U>
        requires std::is_same_v<const U, Real>
    MatRef(const MatRef<U>& o) : data(o.data), rows(o.rows), cols(o.cols), stride(o.stride) {}

    Real* row(std::size_t r) const { return data + r * stride; }
    Real& operator()(std::size_t r, std::size_t c) const { return data[r * stride + c]; }
    bool contiguous() const { return stride == cols; }
};

template <typename Real>
using ConstMatRef = MatRef<const Real>;

/// Dense row-major tensor of arbitrary rank.
template <typename Real>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape, Real fill = Real(0)) : shape_(std::move(shape)) {
        data_.assign(element_count(shape_), fill);
    }
    Tensor(std::vector<std::size_t> shape, std::vector<Real> data) : shape_(std::move(shape)), data_(std::move(data)) {
        require(element_count(shape_) == data_.size(), "tensor data does not match its shape");
    }

    const std::vector<std::size_t>& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const noexcept { return data_.size(); }

    Real* data() noexcept { return data_.data(); }
    const Real* data() const noexcept { return data_.data(); }
    std::span<Real> values() noexcept { return data_; }
    std::span<const Real> values() const noexcept { return data_; }
    std::vector<Real>& storage() noexcept { return data_; }
    const std::vector<Real>& storage() const noexcept { return data_; }

    Real& operator[](std::size_t i) { return data_[i]; }
    const Real& operator[](std::size_t i) const { return data_[i]; }

    /// 2-D view; rank-1 tensors view as a single row.
    MatRef<Real> view() {
        return rank() == 1 ? MatRef<Real>(data(), 1, shape_[0]) : MatRef<Real>(data(), shape_[0], size() / shape_[0]);
    }
    ConstMatRef<Real> view() const {
        return rank() == 1 ? ConstMatRef<Real>(data(), 1, shape_[0])
                           : ConstMatRef<Real>(data(), shape_[0], size() / shape_[0]);
    }

    void fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

    bool all_finite() const {
        for (Real v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    friend bool operator==(const Tensor&, const Tensor&) = default;

    static std::size_t element_count(const std::vector<std::size_t>& shape) {
        return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
    }

private:
    std::vector<std::size_t> shape_;
    std::vector<Real> data_;
};

}  // namespace qislab::nn

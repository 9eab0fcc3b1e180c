#pragma once

#include <Eigen/Core>

#include "gaitgs/core/tensor.hpp"

namespace gaitgs {

template <typename T>
using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

// Row-major view whose rows are spaced `outer` elements apart in memory —
// lets a GEMM write straight into a channel plane of a larger tensor.
template <typename T>
using StridedMatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>,
                                 0, Eigen::OuterStride<>>;
template <typename T>
using ConstStridedMatMap =
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>, 0,
               Eigen::OuterStride<>>;

template <typename T>
MatMap<T> as_matrix(Tensor<T>& t, std::int64_t rows, std::int64_t cols) {
    return MatMap<T>(t.data(), rows, cols);
}

template <typename T>
ConstMatMap<T> as_matrix(const Tensor<T>& t, std::int64_t rows, std::int64_t cols) {
    return ConstMatMap<T>(t.data(), rows, cols);
}

}  // namespace gaitgs

#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace gaitgs {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

/// Dense row-major n-dimensional array. Plain value type: copy copies data.
template <typename T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(check_numel(shape_)) {}

    Tensor(Shape shape, T fill) : shape_(std::move(shape)), data_(check_numel(shape_), fill) {}

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape), T(0)); }
    static Tensor full(Shape shape, T v) { return Tensor(std::move(shape), v); }

    static Tensor scalar(T v) {
        Tensor t(Shape{1});
        t.data_[0] = v;
        return t;
    }

    const Shape& shape() const { return shape_; }
    std::int64_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t rank() const { return shape_.size(); }
    std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }

    T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    const T& operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    T item() const {
        if (numel() != 1) throw std::logic_error("Tensor::item on non-scalar " + shape_str(shape_));
        return data_[0];
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    /// Flat index of a multi-index; bounds-checked, not for hot loops.
    std::int64_t index(std::initializer_list<std::int64_t> idx) const {
        if (idx.size() != shape_.size()) throw std::logic_error("Tensor::index rank mismatch");
        std::int64_t flat = 0;
        std::size_t k = 0;
        for (auto v : idx) {
            if (v < 0 || v >= shape_[k]) throw std::out_of_range("Tensor::index out of range");
            flat = flat * shape_[k] + v;
            ++k;
        }
        return flat;
    }

    T& at(std::initializer_list<std::int64_t> idx) { return data_[static_cast<std::size_t>(index(idx))]; }
    const T& at(std::initializer_list<std::int64_t> idx) const {
        return data_[static_cast<std::size_t>(index(idx))];
    }

    /// Same data, new shape; numel must match.
    Tensor reshaped(Shape s) const {
        if (shape_numel(s) != numel())
            throw std::logic_error("Tensor::reshaped numel mismatch " + shape_str(shape_) + " -> " + shape_str(s));
        Tensor out = *this;
        out.shape_ = std::move(s);
        return out;
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    typename std::vector<T>::iterator begin() { return data_.begin(); }
    typename std::vector<T>::iterator end() { return data_.end(); }
    typename std::vector<T>::const_iterator begin() const { return data_.begin(); }
    typename std::vector<T>::const_iterator end() const { return data_.end(); }

private:
    static std::size_t check_numel(const Shape& s) {
        for (auto d : s)
            if (d < 1) throw std::invalid_argument("Tensor: nonpositive dimension " + shape_str(s));
        return static_cast<std::size_t>(shape_numel(s));
    }

    Shape shape_;
    std::vector<T> data_;
};

template <typename T>
bool all_finite(const Tensor<T>& t) {
    for (auto v : t)
        if (!std::isfinite(v)) return false;
    return true;
}

}  // namespace gaitgs

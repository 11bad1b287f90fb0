#include "dcolor/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace dcolor {

std::size_t shapeSize(const Shape& shape) {
    std::size_t n = 1;
    for (auto s : shape) n *= s;
    return shape.empty() ? 0 : n;
}

std::string shapeString(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
    for (auto s : shape_) {
        if (s == 0) throw std::invalid_argument("tensor dimensions must be positive: " + shapeString(shape_));
    }
    data_.assign(shapeSize(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), data_(std::move(values)) {
    for (auto s : shape_) {
        if (s == 0) throw std::invalid_argument("tensor dimensions must be positive: " + shapeString(shape_));
    }
    if (shapeSize(shape_) != data_.size()) {
        throw std::invalid_argument("tensor shape " + shapeString(shape_) + " does not match " +
                                    std::to_string(data_.size()) + " elements");
    }
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values) {
    return Tensor({rows, cols}, std::vector<double>(values));
}

Tensor Tensor::identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
    return t;
}

std::size_t Tensor::rows() const {
    if (shape_.size() == 1) return 1;
    if (shape_.size() == 2) return shape_[0];
    throw std::logic_error("rows() requires a rank-1 or rank-2 tensor, got " + shapeString(shape_));
}

std::size_t Tensor::cols() const {
    if (shape_.size() == 1) return shape_[0];
    if (shape_.size() == 2) return shape_[1];
    throw std::logic_error("cols() requires a rank-1 or rank-2 tensor, got " + shapeString(shape_));
}

void Tensor::fill(double v) {
    std::fill(data_.begin(), data_.end(), v);
}

std::size_t Tensor::firstNonFinite() const {
    for (std::size_t i = 0; i < data_.size(); ++i) {
        if (!std::isfinite(data_[i])) return i;
    }
    return data_.size();
}

Tensor Tensor::rowSlice(std::size_t begin, std::size_t end) const {
    const std::size_t c = cols();
    if (begin >= end || end > rows()) throw std::out_of_range("row slice out of range");
    std::vector<double> v(data_.begin() + static_cast<std::ptrdiff_t>(begin * c),
                          data_.begin() + static_cast<std::ptrdiff_t>(end * c));
    return Tensor({end - begin, c}, std::move(v));
}

Tensor Tensor::transposed() const {
    const std::size_t r = rows(), c = cols();
    Tensor t({c, r});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) t.at(j, i) = at(i, j);
    return t;
}

} // namespace dcolor

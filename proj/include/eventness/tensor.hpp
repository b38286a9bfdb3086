#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

namespace eventness::ad {

// Dense row-major tensor of doubles. All arithmetic in this project runs in
// 64-bit so that training is bit-deterministic given a seed.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape)
        : shape_(std::move(shape)), values_(count(shape_), 0.0) {}

    Tensor(std::vector<std::size_t> shape, std::vector<double> values);

    static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }
    static Tensor scalar(double v);
    static Tensor full(std::vector<std::size_t> shape, double v);

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_[i]; }
    std::size_t size() const { return values_.size(); }

    double* data() { return values_.data(); }
    const double* data() const { return values_.data(); }
    std::vector<double>& values() { return values_; }
    const std::vector<double>& values() const { return values_; }

    double& operator[](std::size_t i) { return values_[i]; }
    double operator[](std::size_t i) const { return values_[i]; }

    double& at(std::size_t i, std::size_t j) { return values_[i * shape_[1] + j]; }
    double at(std::size_t i, std::size_t j) const { return values_[i * shape_[1] + j]; }
    double& at(std::size_t i, std::size_t j, std::size_t k) {
        return values_[(i * shape_[1] + j) * shape_[2] + k];
    }
    double at(std::size_t i, std::size_t j, std::size_t k) const {
        return values_[(i * shape_[1] + j) * shape_[2] + k];
    }
    double& at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
        return values_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
    }
    double at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
        return values_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
    }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    bool all_finite() const {
        for (double v : values_) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    void fill(double v) { values_.assign(values_.size(), v); }

    static std::size_t count(const std::vector<std::size_t>& shape) {
        std::size_t n = 1;
        for (std::size_t d : shape) n *= d;
        return n;
    }

private:
    std::vector<std::size_t> shape_;
    std::vector<double> values_;
};

}  // namespace eventness::ad

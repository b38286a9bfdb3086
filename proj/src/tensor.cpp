#include "eventness/tensor.hpp"

#include <stdexcept>

namespace eventness::ad {

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
    if (values_.size() != count(shape_)) {
        throw std::invalid_argument("tensor: value count does not match shape");
    }
}

Tensor Tensor::scalar(double v) {
    Tensor t({1});
    t.values_[0] = v;
    return t;
}

Tensor Tensor::full(std::vector<std::size_t> shape, double v) {
    Tensor t(std::move(shape));
    t.values_.assign(t.values_.size(), v);
    return t;
}

}  // namespace eventness::ad

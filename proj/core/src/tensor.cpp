#include "stateformer/tensor.hpp"

#include <sstream>
#include <stdexcept>

namespace stf {

static int64_t shape_numel(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
        if (d < 0) throw std::invalid_argument("tensor dimension must be non-negative");
        n *= d;
    }
    return n;
}

Tensor::Tensor(std::vector<int64_t> shape, double fill)
    : shape_(std::move(shape)), numel_(shape_numel(shape_)) {
    data_ = std::make_shared<std::vector<double>>(size_t(numel_), fill);
}

Tensor::Tensor(std::vector<int64_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), numel_(shape_numel(shape_)) {
    if (int64_t(values.size()) != numel_)
        throw std::invalid_argument("tensor data size " + std::to_string(values.size()) +
                                    " does not match shape " + shape_to_string(shape_));
    data_ = std::make_shared<std::vector<double>>(std::move(values));
}

int64_t Tensor::rows() const {
    if (ndim() != 2) throw std::invalid_argument("rows(): tensor is not 2-d, shape " + shape_str());
    return shape_[0];
}

int64_t Tensor::cols() const {
    if (ndim() != 2) throw std::invalid_argument("cols(): tensor is not 2-d, shape " + shape_str());
    return shape_[1];
}

Tensor Tensor::clone() const {
    if (!defined()) return Tensor();
    Tensor out(shape_, *data_);
    out.requires_grad = requires_grad;
    return out;
}

std::string Tensor::shape_str() const { return shape_to_string(shape_); }

std::string shape_to_string(const std::vector<int64_t>& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << ", ";
        os << s[i];
    }
    os << "]";
    return os.str();
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape_str() +
                                    " vs " + b.shape_str());
}

}  // namespace stf

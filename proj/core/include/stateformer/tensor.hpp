#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace stf {

class Tape;

// Dense row-major tensor of doubles. Copies are shallow (shared storage);
// clone() makes a deep copy. Gradients live on the tape, not here: `node`
// identifies this tensor's slot in the tape it was recorded on.
class Tensor {
public:
    Tensor() = default;
    Tensor(std::vector<int64_t> shape, double fill = 0.0);
    Tensor(std::vector<int64_t> shape, std::vector<double> values);

    static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

    const std::vector<int64_t>& shape() const { return shape_; }
    int64_t dim(size_t i) const { return shape_.at(i); }
    size_t ndim() const { return shape_.size(); }
    int64_t numel() const { return numel_; }

    double* data() { return data_->data(); }
    const double* data() const { return data_->data(); }
    double& at(int64_t i) { return (*data_)[size_t(i)]; }
    double at(int64_t i) const { return (*data_)[size_t(i)]; }
    double& at(int64_t r, int64_t c) { return (*data_)[size_t(r * cols() + c)]; }
    double at(int64_t r, int64_t c) const { return (*data_)[size_t(r * cols() + c)]; }

    // matrix helpers; contract error unless ndim()==2
    int64_t rows() const;
    int64_t cols() const;

    bool requires_grad = false;
    // tape bookkeeping, managed by Tape::record / Tape::leaf
    int node = -1;
    Tape* tape = nullptr;

    Tensor clone() const;
    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
    std::string shape_str() const;

    bool defined() const { return data_ != nullptr; }

private:
    std::vector<int64_t> shape_;
    int64_t numel_ = 0;
    std::shared_ptr<std::vector<double>> data_;
};

// throws std::invalid_argument naming both shapes when a binary op disagrees
void check_same_shape(const Tensor& a, const Tensor& b, const char* op);

std::string shape_to_string(const std::vector<int64_t>& s);

}  // namespace stf

#include "babynet/tensor.hpp"

#include <cmath>
#include <sstream>

namespace babynet {

int64_t shape_numel(std::span<const int> shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

std::string shape_str(std::span<const int> shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

struct Tensor::Impl {
    std::vector<int> shape;
    std::vector<float> data;
    std::vector<float> grad;  // empty until first use
    bool requires_grad = false;
};

Tensor::Impl& Tensor::impl() {
    if (!impl_) throw ValueError("operation on an undefined tensor");
    return *impl_;
}

const Tensor::Impl& Tensor::impl() const {
    if (!impl_) throw ValueError("operation on an undefined tensor");
    return *impl_;
}

static void validate_shape(const std::vector<int>& shape) {
    if (shape.empty()) throw ShapeError("tensor shape must have at least one dimension");
    for (int d : shape) {
        if (d <= 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
    }
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    validate_shape(shape);
    Tensor t;
    t.impl_ = std::make_shared<Impl>();
    t.impl_->data.assign(static_cast<std::size_t>(shape_numel(shape)), 0.0f);
    t.impl_->shape = std::move(shape);
    t.impl_->requires_grad = requires_grad;
    return t;
}

Tensor Tensor::full(std::vector<int> shape, float value, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (float& x : t.impl_->data) x = value;
    return t;
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<float> data, bool requires_grad) {
    validate_shape(shape);
    if (shape_numel(shape) != static_cast<int64_t>(data.size())) {
        throw ShapeError("data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
    }
    Tensor t;
    t.impl_ = std::make_shared<Impl>();
    t.impl_->shape = std::move(shape);
    t.impl_->data = std::move(data);
    t.impl_->requires_grad = requires_grad;
    return t;
}

const std::vector<int>& Tensor::shape() const { return impl().shape; }

int Tensor::rank() const { return static_cast<int>(impl().shape.size()); }

int Tensor::dim(int axis) const {
    const auto& s = impl().shape;
    if (axis < 0 || axis >= static_cast<int>(s.size()))
        throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
    return s[axis];
}

int64_t Tensor::numel() const { return static_cast<int64_t>(impl().data.size()); }

std::span<float> Tensor::data() { return impl().data; }
std::span<const float> Tensor::data() const { return impl().data; }

static std::size_t flat_offset(const std::vector<int>& shape, std::initializer_list<int> idx) {
    if (idx.size() != shape.size())
        throw ShapeError("index rank " + std::to_string(idx.size()) + " does not match tensor " +
                         shape_str(shape));
    std::size_t off = 0;
    std::size_t axis = 0;
    for (int i : idx) {
        if (i < 0 || i >= shape[axis])
            throw ShapeError("index " + std::to_string(i) + " out of range on axis " +
                             std::to_string(axis) + " of " + shape_str(shape));
        off = off * static_cast<std::size_t>(shape[axis]) + static_cast<std::size_t>(i);
        ++axis;
    }
    return off;
}

float& Tensor::at(std::initializer_list<int> idx) {
    return impl().data[flat_offset(impl().shape, idx)];
}

float Tensor::at(std::initializer_list<int> idx) const {
    return impl().data[flat_offset(impl().shape, idx)];
}

bool Tensor::requires_grad() const { return impl().requires_grad; }
void Tensor::set_requires_grad(bool value) { impl().requires_grad = value; }

bool Tensor::has_grad() const { return !impl().grad.empty(); }

std::span<float> Tensor::grad() {
    auto& im = impl();
    if (im.grad.empty()) im.grad.assign(im.data.size(), 0.0f);
    return im.grad;
}

std::span<const float> Tensor::grad() const {
    const auto& im = impl();
    if (im.grad.empty()) throw ValueError("tensor has no gradient buffer");
    return im.grad;
}

void Tensor::zero_grad() {
    auto& im = impl();
    im.grad.assign(im.data.size(), 0.0f);
}

bool Tensor::all_finite() const {
    for (float x : impl().data)
        if (!std::isfinite(x)) return false;
    return true;
}

Tensor Tensor::clone() const {
    const auto& im = impl();
    return Tensor::from_data(im.shape, im.data, im.requires_grad);
}

}  // namespace babynet

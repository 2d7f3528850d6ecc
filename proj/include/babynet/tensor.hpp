#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "babynet/common.hpp"

namespace babynet {

int64_t shape_numel(std::span<const int> shape);
std::string shape_str(std::span<const int> shape);

// Dense row-major float32 tensor with an optional gradient buffer.
//
// A Tensor is a cheap handle onto shared storage: copying it aliases the
// same buffers. Operations never mutate their input data; only gradient
// buffers (and optimizer updates on leaf parameters) are written in place.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
    static Tensor full(std::vector<int> shape, float value, bool requires_grad = false);
    static Tensor from_data(std::vector<int> shape, std::vector<float> data,
                            bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const std::vector<int>& shape() const;
    int rank() const;
    int dim(int axis) const;
    int64_t numel() const;

    std::span<float> data();
    std::span<const float> data() const;

    // Element access by multi-index; bounds-checked, for tests and setup code.
    float& at(std::initializer_list<int> idx);
    float at(std::initializer_list<int> idx) const;

    bool requires_grad() const;
    void set_requires_grad(bool value);

    bool has_grad() const;
    std::span<float> grad();              // allocates a zero buffer on first use
    std::span<const float> grad() const;  // throws if no gradient present
    void zero_grad();

    bool all_finite() const;

    // Deep copy of data (gradient buffer is not copied).
    Tensor clone() const;

    // Identity of the underlying storage, for graph bookkeeping.
    const void* id() const { return impl_.get(); }

private:
    struct Impl;
    std::shared_ptr<Impl> impl_;
    Impl& impl();
    const Impl& impl() const;
};

}  // namespace babynet

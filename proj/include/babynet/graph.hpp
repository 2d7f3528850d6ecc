#pragma once

#include <functional>
#include <vector>

#include "babynet/tensor.hpp"

namespace babynet {

// Reverse-mode tape. Operations append a node per call in execution order,
// so the node list is topologically ordered by construction.
//
// backward() re-seeds the gradients of every tensor produced on this tape
// (non-leaves) and replays the tape in reverse. Leaf gradients are never
// cleared by backward, so repeated calls accumulate: backward twice on the
// same tape doubles every leaf gradient. Use Tensor::zero_grad (or an
// optimizer's zero_grad) to reset leaves between steps.
class Graph {
public:
    using BackwardFn = std::function<void()>;

    void record(const char* op, std::vector<Tensor> inputs, Tensor output, BackwardFn backward);

    // loss must be a scalar (numel == 1). Throws ValueError otherwise.
    void backward(const Tensor& loss);

    void clear() { nodes_.clear(); }
    std::size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        const char* op;
        std::vector<Tensor> inputs;
        Tensor output;
        BackwardFn backward;
    };
    std::vector<Node> nodes_;
};

}  // namespace babynet

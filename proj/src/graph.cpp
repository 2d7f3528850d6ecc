#include "babynet/graph.hpp"

namespace babynet {

void Graph::record(const char* op, std::vector<Tensor> inputs, Tensor output,
                   BackwardFn backward) {
    nodes_.push_back(Node{op, std::move(inputs), std::move(output), std::move(backward)});
}

void Graph::backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1)
        throw ValueError("backward: loss must be a defined scalar tensor");

    // Gradients of tensors produced on this tape restart from zero each
    // traversal; leaves (parameters, inputs) keep accumulating.
    for (auto& n : nodes_)
        if (n.output.requires_grad()) n.output.zero_grad();

    Tensor seed = loss;
    seed.grad()[0] += 1.0f;

    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it)
        if (it->backward) it->backward();
}

}  // namespace babynet

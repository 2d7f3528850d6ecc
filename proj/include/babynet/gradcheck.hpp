#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "babynet/graph.hpp"
#include "babynet/tensor.hpp"

namespace babynet {

struct GradCheckEntry {
    std::string param;
    int64_t index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_error = 0.0;
};

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::string worst_param;
    int64_t worst_index = 0;
    std::vector<GradCheckEntry> entries;
    bool passed(double tol) const { return max_rel_error < tol; }
};

struct GradCheckOptions {
    // Central differences on a float32 forward path carry noise of about
    // ulp(loss)/(2*eps); the defaults keep that term near 1e-5 for losses
    // of order one.
    double eps = 5e-3;
    // Relative error denominator is max(|analytic|, |numeric|, denom_floor),
    // so near-zero gradient pairs are compared on an absolute scale instead
    // of dividing noise by noise.
    double denom_floor = 1e-2;
    // > 0: check that many (tensor, index) pairs sampled across all
    // parameters; <= 0: check every element of every parameter.
    int total_samples = 0;
    std::uint64_t seed = 0;
};

// Central-difference verification of reverse-mode gradients.
//
// `f` must deterministically evaluate the scalar loss; it is called with a
// tape to obtain analytic gradients and with nullptr for the perturbed
// forward-only evaluations.
GradCheckReport finite_difference_check(const std::function<Tensor(Graph*)>& f,
                                        const std::vector<std::pair<std::string, Tensor>>& params,
                                        const GradCheckOptions& options = {});

// Same verification, but the perturbed evaluations go through `probe`, an
// independent scalar route (typically the double-precision reference
// forward). Whole-model checks need this: a float32 probe cannot separate
// truncation noise from the batch-norm-induced curvature of the loss.
GradCheckReport finite_difference_check(const std::function<Tensor(Graph*)>& f,
                                        const std::function<double()>& probe,
                                        const std::vector<std::pair<std::string, Tensor>>& params,
                                        const GradCheckOptions& options = {});

}  // namespace babynet

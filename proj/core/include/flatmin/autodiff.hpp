#pragma once

#include "flatmin/matrix.hpp"
#include "flatmin/model.hpp"
#include "flatmin/param_vector.hpp"

namespace flatmin {

struct Batch {
    Matrix inputs;            // n x d_in
    std::vector<int> labels;  // n, each in [0, C)

    std::size_t size() const { return labels.size(); }
};

struct EvalResult {
    double loss = 0.0;         // mean cross-entropy over the batch
    Matrix per_example_probs;  // n x C softmax rows
};

// Mean softmax cross-entropy and per-example probabilities. Pure and
// deterministic; throws ArchitectureError on shape mismatch and NumericError
// (naming the layer) if an intermediate goes non-finite.
EvalResult forward(const Model& model, const ParamVector& params, const Batch& batch);

// Gradient of the batch mean loss w.r.t. all parameters (reverse mode).
ParamVector grad(const Model& model, const ParamVector& params, const Batch& batch);

// Loss and gradient in one pass; the workhorse for optimizer steps.
double loss_and_grad(const Model& model, const ParamVector& params, const Batch& batch,
                     ParamVector& grad_out);

// Hessian-vector product of the batch loss via forward-over-reverse
// (Pearlmutter's R-operator). Exact, no finite differences, H never formed.
ParamVector hvp(const Model& model, const ParamVector& params, const Batch& batch,
                const ParamVector& v);

}  // namespace flatmin

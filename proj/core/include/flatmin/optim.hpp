#pragma once

#include <cstdint>
#include <functional>
#include <optional>

#include "flatmin/autodiff.hpp"
#include "flatmin/model.hpp"
#include "flatmin/objective.hpp"

namespace flatmin {

struct OptimizerState {
    ParamVector params;
    std::optional<ParamVector> momentum_buffer;  // created on first step
    std::uint64_t step = 0;
    double lr = 0.1;
    double momentum = 0.0;
    double weight_decay = 0.0;
};

// Per-step record for the step log. loss/grad_norm refer to the gradient
// actually fed into the momentum rule (for the smoothed step, the
// split-averaged perturbed gradient).
struct StepStats {
    double loss = 0.0;
    double grad_norm = 0.0;
    double gamma = 0.0;
    bool sam_skipped_ascent = false;
};

// Evaluates a loss and fills its gradient; both trained models (via a batch)
// and synthetic objectives plug in here, so every step rule has one code path.
using LossGradFn = std::function<double(const ParamVector&, ParamVector&)>;

LossGradFn batch_loss(const Model& model, const Batch& batch);
LossGradFn objective_loss(const Objective& obj);

// ParamVector over a bare value array, partitioned into `filters` equal
// groups (layer 0); bridges objectives without a network layout into the
// filter-aware machinery.
ParamVector flat_params(std::vector<double> values, std::size_t filters);

// How the per-filter scale enters the perturbation covariance. The filter
// norm is used literally as the per-coordinate variance by default; the
// squared-norm reading is available as a switch.
enum class SigmaMode { norm, squared_norm };

struct LpfConfig {
    double gamma0 = 0.0005;
    double alpha = 0.0;
    int M = 1;
    std::uint64_t T_total = 1;
    SigmaMode sigma_mode = SigmaMode::norm;
};

struct SigmaDiag {
    std::vector<double> per_parameter_scale;  // filter norm broadcast to its entries
};

struct EntropySgdConfig {
    int L = 5;                    // Langevin iterations
    double gamma = 0.0;           // scope; must be > 0
    double eta_inner = 0.05;      // SGLD step size
    double eps_noise = 1e-4;      // SGLD noise level
    double alpha_avg = 0.75;      // exponential averaging factor
    double outer_lr_scale = 1.0;  // optional multiplier on the outer step
};

// Batches for the Langevin inner loop, indexed by inner iteration.
using BatchSource = std::function<Batch(int inner_iter)>;
using LossGradSource = std::function<double(int inner_iter, const ParamVector&, ParamVector&)>;

// One mini-batch split of a smoothed step: its loss/grad evaluator and its
// share of the batch.
struct WeightedLoss {
    LossGradFn eval;
    double weight = 1.0;
};

// Heavy-ball SGD with weight decay added to the gradient:
//   buffer <- momentum * buffer + (g + wd * params);  params -= lr * buffer
StepStats msgd_step(OptimizerState& state, const LossGradFn& loss);
StepStats msgd_step(OptimizerState& state, const Model& model, const Batch& batch);

// Per-filter L2 norm broadcast to that filter's parameter entries.
SigmaDiag filter_sigma(const ParamVector& params);

// Cosine warm-up of the filter radius: gamma0 at t = 0 rising to
// (alpha + 1) * gamma0 at t = T, monotone in between.
double gamma_schedule(std::uint64_t t, std::uint64_t T, double gamma0, double alpha);

// One smoothed-gradient step: each split's gradient is taken at
// params + z_i with z_i ~ N(0, gamma_t * Sigma), Sigma recomputed from the
// live parameters per split, and the weighted average drives the momentum
// rule. Sub-streams are keyed by (seed, step, split) so any evaluation order
// reproduces bit-exactly.
StepStats lpf_sgd_step(OptimizerState& state, const std::vector<WeightedLoss>& splits,
                       const LpfConfig& cfg, std::uint64_t seed);
// Splits the batch into M near-equal parts (first batch%M get one extra
// example), weighting gradients by split size.
StepStats lpf_sgd_step(OptimizerState& state, const Model& model, const Batch& batch,
                       const LpfConfig& cfg, std::uint64_t seed);

// Sharpness-aware step: gradient at the ascent point params + rho * g/|g|.
// A (rare) zero gradient skips the ascent and is flagged in the stats.
StepStats sam_step(OptimizerState& state, const LossGradFn& loss, double rho);
StepStats sam_step(OptimizerState& state, const Model& model, const Batch& batch, double rho);

// Local-entropy step: L SGLD iterations around the current point maintain an
// exponential average mu; the outer update follows gamma * (params - mu)
// through the momentum rule.
StepStats entropy_sgd_step(OptimizerState& state, const LossGradSource& inner_loss,
                           const EntropySgdConfig& cfg, std::uint64_t seed);
StepStats entropy_sgd_step(OptimizerState& state, const Model& model, const BatchSource& batches,
                           const EntropySgdConfig& cfg, std::uint64_t seed);

}  // namespace flatmin

#include "flatmin/optim.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "flatmin/error.hpp"
#include "flatmin/rng.hpp"

namespace flatmin {

LossGradFn batch_loss(const Model& model, const Batch& batch) {
    return [&model, &batch](const ParamVector& p, ParamVector& g) {
        return loss_and_grad(model, p, batch, g);
    };
}

LossGradFn objective_loss(const Objective& obj) {
    return [&obj](const ParamVector& p, ParamVector& g) {
        g = zeros_like(p);
        obj.grad(p.span(), g.span());
        return obj.value(p.span());
    };
}

ParamVector flat_params(std::vector<double> values, std::size_t filters) {
    if (filters < 1 || values.size() % filters != 0)
        throw ConfigError("filter count must evenly divide the value count");
    auto layout = std::make_shared<ParamLayout>();
    const std::size_t len = values.size() / filters;
    layout->layer_filter_begin = {0, filters};
    for (std::size_t f = 0; f < filters; ++f) {
        layout->entries.push_back({0, ParamRole::weight, {1, len}, f * len, len});
        layout->filters.push_back({f * len, len, 0, static_cast<int>(f)});
    }
    layout->total = values.size();
    ParamVector p;
    p.values = std::move(values);
    p.layout = std::move(layout);
    return p;
}

namespace {

// buffer <- momentum * buffer + (g + wd * params); params -= lr * buffer
void momentum_update(OptimizerState& state, const ParamVector& g) {
    if (!state.momentum_buffer) state.momentum_buffer = zeros_like(state.params);
    ParamVector& buf = *state.momentum_buffer;
    const double wd = state.weight_decay;
    for (std::size_t i = 0; i < g.size(); ++i) {
        buf.values[i] = state.momentum * buf.values[i] + g.values[i] + wd * state.params.values[i];
        state.params.values[i] -= state.lr * buf.values[i];
    }
}

}  // namespace

StepStats msgd_step(OptimizerState& state, const LossGradFn& loss) {
    ParamVector g;
    const double value = loss(state.params, g);
    if (!all_finite(g.values)) throw NumericError("non-finite gradient in optimizer step");
    momentum_update(state, g);
    state.step += 1;
    return {value, norm2(g.span()), 0.0, false};
}

StepStats msgd_step(OptimizerState& state, const Model& model, const Batch& batch) {
    return msgd_step(state, batch_loss(model, batch));
}

SigmaDiag filter_sigma(const ParamVector& params) {
    SigmaDiag sigma;
    sigma.per_parameter_scale.assign(params.size(), 0.0);
    for (const FilterSlice& f : params.layout->filters) {
        const double n = filter_norm(params, f);
        if (n < 1e-300)
            throw DegenerateFilterError("zero-norm filter " + std::to_string(f.filter) +
                                        " in layer " + std::to_string(f.layer));
        for (std::size_t i = f.offset; i < f.offset + f.length; ++i)
            sigma.per_parameter_scale[i] = n;
    }
    return sigma;
}

double gamma_schedule(std::uint64_t t, std::uint64_t T, double gamma0, double alpha) {
    if (T < 1) throw ConfigError("schedule horizon T must be >= 1");
    if (t > T)
        throw ConfigError("schedule step " + std::to_string(t) + " outside [0, " +
                          std::to_string(T) + "]");
    const double phase = static_cast<double>(t) * 3.14159265358979323846 / static_cast<double>(T);
    return gamma0 * (alpha / 2.0 * (-std::cos(phase) + 1.0) + 1.0);
}

StepStats lpf_sgd_step(OptimizerState& state, const std::vector<WeightedLoss>& splits,
                       const LpfConfig& cfg, std::uint64_t seed) {
    if (splits.empty()) throw ConfigError("smoothed step needs at least one split");
    const std::uint64_t t = std::min(state.step, cfg.T_total);
    const double gamma_t = gamma_schedule(t, cfg.T_total, cfg.gamma0, cfg.alpha);

    ParamVector g_avg = zeros_like(state.params);
    ParamVector g_split;
    ParamVector probe = state.params;
    double loss_avg = 0.0;
    for (std::size_t split = 0; split < splits.size(); ++split) {
        // covariance recomputed from the live parameters each split
        const SigmaDiag sigma = filter_sigma(state.params);
        rng::Stream stream = rng::substream(seed, {0x1bfULL, state.step, split});
        for (std::size_t i = 0; i < probe.size(); ++i) {
            const double s = sigma.per_parameter_scale[i];
            const double var = gamma_t * (cfg.sigma_mode == SigmaMode::norm ? s : s * s);
            probe.values[i] = state.params.values[i] + std::sqrt(var) * stream.normal();
        }
        const double loss = splits[split].eval(probe, g_split);
        if (!all_finite(g_split.values))
            throw NumericError("non-finite gradient in split " + std::to_string(split));
        axpy(splits[split].weight, g_split.span(), g_avg.span());
        loss_avg += splits[split].weight * loss;
    }

    momentum_update(state, g_avg);
    state.step += 1;
    return {loss_avg, norm2(g_avg.span()), gamma_t, false};
}

StepStats lpf_sgd_step(OptimizerState& state, const Model& model, const Batch& batch,
                       const LpfConfig& cfg, std::uint64_t seed) {
    const std::size_t n = batch.size();
    if (cfg.M < 1) throw ConfigError("MC split count M must be >= 1");
    if (static_cast<std::size_t>(cfg.M) > n)
        throw ConfigError("MC split count M = " + std::to_string(cfg.M) + " exceeds batch size " +
                          std::to_string(n));

    const std::size_t m = static_cast<std::size_t>(cfg.M);
    const std::size_t base = n / m, extra = n % m;
    std::vector<Batch> parts(m);
    std::vector<WeightedLoss> splits;
    splits.reserve(m);
    std::size_t row = 0;
    for (std::size_t split = 0; split < m; ++split) {
        const std::size_t len = base + (split < extra ? 1 : 0);
        Batch& sub = parts[split];
        sub.inputs = Matrix(len, batch.inputs.cols);
        sub.labels.resize(len);
        for (std::size_t r = 0; r < len; ++r) {
            std::copy(batch.inputs.row(row + r).begin(), batch.inputs.row(row + r).end(),
                      sub.inputs.row(r).begin());
            sub.labels[r] = batch.labels[row + r];
        }
        row += len;
        splits.push_back(
            {batch_loss(model, sub), static_cast<double>(len) / static_cast<double>(n)});
    }
    return lpf_sgd_step(state, splits, cfg, seed);
}

StepStats sam_step(OptimizerState& state, const LossGradFn& loss, double rho) {
    if (rho <= 0.0) throw ConfigError("SAM radius rho must be > 0");
    ParamVector g;
    const double value = loss(state.params, g);
    const double gnorm = norm2(g.span());

    StepStats stats{value, gnorm, 0.0, false};
    if (gnorm < 1e-12) {
        // undefined ascent direction; fall back to the plain gradient
        stats.sam_skipped_ascent = true;
        momentum_update(state, g);
        state.step += 1;
        return stats;
    }

    ParamVector ascent = state.params;
    axpy(rho / gnorm, g.span(), ascent.span());
    ParamVector g_ascent;
    loss(ascent, g_ascent);
    if (!all_finite(g_ascent.values)) throw NumericError("non-finite gradient at ascent point");
    stats.grad_norm = norm2(g_ascent.span());
    momentum_update(state, g_ascent);
    state.step += 1;
    return stats;
}

StepStats sam_step(OptimizerState& state, const Model& model, const Batch& batch, double rho) {
    return sam_step(state, batch_loss(model, batch), rho);
}

StepStats entropy_sgd_step(OptimizerState& state, const LossGradSource& inner_loss,
                           const EntropySgdConfig& cfg, std::uint64_t seed) {
    if (cfg.L < 1) throw ConfigError("Langevin iteration count L must be >= 1");
    if (cfg.gamma <= 0.0)
        throw ConfigError("local-entropy scope gamma must be > 0 (the outer update vanishes)");

    ParamVector theta_prime = state.params;
    ParamVector mu = state.params;
    ParamVector g;
    rng::Stream stream = rng::substream(seed, {0xe5dULL, state.step});
    const double noise_scale = std::sqrt(cfg.eta_inner) * cfg.eps_noise;

    double last_loss = 0.0;
    for (int k = 0; k < cfg.L; ++k) {
        last_loss = inner_loss(k, theta_prime, g);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double pull = cfg.gamma * (state.params.values[i] - theta_prime.values[i]);
            double next = theta_prime.values[i] - cfg.eta_inner * (g.values[i] - pull);
            if (noise_scale > 0.0) next += noise_scale * stream.normal();
            theta_prime.values[i] = next;
            mu.values[i] =
                (1.0 - cfg.alpha_avg) * mu.values[i] + cfg.alpha_avg * theta_prime.values[i];
        }
        if (!all_finite(theta_prime.values))
            throw NumericError("non-finite Langevin iterate at inner step " + std::to_string(k));
    }

    ParamVector outer = zeros_like(state.params);
    for (std::size_t i = 0; i < outer.size(); ++i)
        outer.values[i] = cfg.outer_lr_scale * cfg.gamma * (state.params.values[i] - mu.values[i]);

    momentum_update(state, outer);
    state.step += 1;
    return {last_loss, norm2(outer.span()), 0.0, false};
}

StepStats entropy_sgd_step(OptimizerState& state, const Model& model, const BatchSource& batches,
                           const EntropySgdConfig& cfg, std::uint64_t seed) {
    return entropy_sgd_step(
        state,
        [&model, &batches](int k, const ParamVector& p, ParamVector& g) {
            const Batch b = batches(k);
            return loss_and_grad(model, p, b, g);
        },
        cfg, seed);
}

}  // namespace flatmin

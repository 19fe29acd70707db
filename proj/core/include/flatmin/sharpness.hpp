#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "flatmin/autodiff.hpp"
#include "flatmin/model.hpp"
#include "flatmin/objective.hpp"

namespace flatmin {

enum class MeasureKind {
    lpf,
    eps_sharpness,
    pac_bayes,
    frn,
    hess_frobenius,
    lambda_max,
    trace,
    d_eff,
    shannon_entropy,
    local_entropy_grad,
};

const char* to_string(MeasureKind kind);
MeasureKind measure_from_string(const std::string& name);

// One computed sharpness value plus every stochastic knob that produced it.
struct MeasureReport {
    MeasureKind name;
    double value = 0.0;
    std::map<std::string, std::string> config;
    std::string dataset_id;
};

// Monte-Carlo estimate of the Gaussian-smoothed loss at theta: the mean of
// value(theta + tau) over M draws tau with per-coordinate std sigma.
double lpf_measure(const Objective& obj, std::span<const double> theta, double sigma, int M,
                   std::uint64_t seed);

struct EpsSharpnessResult {
    double value = 0.0;               // 1 / displacement
    double displacement = 0.0;        // |theta_found - theta*|
    double achieved_deviation = 0.0;  // loss rise at the accepted step
};

// Exponential bracketing then bisection for the step along the full-data
// gradient that raises the loss by epsilon (within psi); returns the inverse
// of the displacement reached.
EpsSharpnessResult eps_sharpness(const Objective& obj, std::span<const double> theta,
                                 double epsilon, double psi);

struct PacBayesResult {
    double value = 0.0;
    double sigma_found = 0.0;
    double achieved_deviation = 0.0;  // independent re-estimate at sigma_found
};

// Bisection on sigma until the MC-estimated loss deviation under
// N(theta*, sigma^2 I) hits 0.1 (within psi); returns
// |theta* - theta0|^2 / (4 sigma^2) + 0.5 ln(m / delta).
PacBayesResult pac_bayes_measure(const Objective& obj, std::span<const double> theta,
                                 std::span<const double> theta0, std::size_t m, int M, double psi,
                                 double delta, std::uint64_t seed);

// theta^T (H theta) over the full dataset.
double fisher_rao_norm(const Objective& obj, std::span<const double> theta);

// sqrt of the mean of |H v|^2 over M standard-normal probes.
double hessian_frobenius(const Objective& obj, std::span<const double> theta, int M,
                         std::uint64_t seed);

struct SpectrumEstimate {
    std::vector<double> ritz_values;  // descending
    std::vector<double> weights;      // quadrature weights, same order
    int k = 0;                        // values actually produced
    bool breakdown = false;           // stopped early on a tiny beta
};

// k-step Lanczos with full reorthogonalization from a seeded random unit
// start vector. Ritz values and quadrature weights (squared first components
// of the tridiagonal eigenvectors).
SpectrumEstimate lanczos_spectrum(const Objective& obj, std::span<const double> theta, int k,
                                  std::uint64_t seed);

struct SpectrumMeasures {
    double lambda_max = 0.0;
    double trace_est = 0.0;  // dim * sum w_i * lambda_i
    double d_eff = 0.0;      // dim * sum w_i * lambda_i / (lambda_i + 1)
};

SpectrumMeasures spectrum_measures(const SpectrumEstimate& spectrum, std::size_t dim);

// Mean predictive Shannon entropy over the dataset, with 0 ln 0 := 0.
double shannon_entropy(const Model& model, const ParamVector& params, const Batch& data);

// Langevin averaging loop around theta*; returns |gamma (theta* - mu)| where
// mu is the exponential average of the iterates. Gradients are full-data.
double local_entropy_grad_norm(const Objective& obj, std::span<const double> theta, int L,
                               double gamma, double eta, double eps_noise, double alpha_avg,
                               std::uint64_t seed);

}  // namespace flatmin

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace flatmin {

struct CorrelationResult {
    double tau = 0.0;
    std::size_t n = 0;
    double ci95_halfwidth = 0.0;
};

// Tie-corrected Kendall tau_b via merge-sort pair counting (O(n log n)); the
// 95% halfwidth uses the normal approximation of tau's null variance.
CorrelationResult kendall_tau(std::span<const double> x, std::span<const double> y);

// test error minus train error
double generalization_gap(double train_error, double test_error);

// Min-max scaling to [0, 1]; a constant input has no scale and is rejected.
std::vector<double> normalize_measures(std::span<const double> values);

struct GeBoundInputs {
    double alpha_lip = 1.0;    // Lipschitz constant of the per-example loss
    double beta_smooth = 1.0;  // smoothness constant
    double c = 0.1;            // learning-rate constant, eta_t <= c / t
    double T = 1.0;            // number of steps
    double sigma = 1.0;        // kernel std
};

struct GeRatioResult {
    double rho = 1.0;
    double p = 0.0;
    double p_hat = 0.0;
    bool smoothing_inactive = false;  // sigma <= alpha/beta: ratio is exactly 1
};

// Ratio of the smoothed-training stability bound to the plain-SGD one:
//   rho = (1 - p) / (1 - p_hat) * (2 c alpha^2 / T)^(p_hat - p)
// with p = 1/(beta c + 1) and p_hat = 1/(min(alpha/sigma, beta) c + 1).
GeRatioResult ge_ratio(const GeBoundInputs& inp);

// Uniform-stability generalization bound for SGD after T steps on m samples:
//   (1 + 1/(beta c)) / (m - 1) * (2 c alpha^2)^p * T^(1-p)
double ge_bound_sgd(const GeBoundInputs& inp, std::size_t m);

// Same bound with the smoothed loss's constant min(alpha/sigma, beta).
double ge_bound_lpf(const GeBoundInputs& inp, std::size_t m);

// T threshold above which rho is guaranteed below 1 for sigma > alpha/beta.
double ge_ratio_unit_threshold(const GeBoundInputs& inp);

// T threshold above which rho is strictly decreasing in the kernel std over
// (alpha/beta, sigma]. The headline e^{-p} condition stops being sufficient
// once sigma pushes p_hat toward 1; this is the exact requirement.
double ge_sigma_monotone_threshold(const GeBoundInputs& inp);

// 1-D test functions with certified Lipschitz/smoothness constants, used to
// probe the Gaussian-smoothing properties empirically.
struct TestFunction1D {
    std::string name;
    double alpha = 1.0;  // Lipschitz certificate
    double beta = 1.0;   // smoothness certificate (may be +inf)
    std::function<double(double)> f;
    std::function<double(double)> df;
    double grid_lo = -3.0;
    double grid_hi = 3.0;
};

TestFunction1D scaled_abs(double a);
// quadratic beta x^2 / 2 inside |x| <= alpha/beta with the Lipschitz linear
// continuation outside; clipped_quadratic restricts the probe grid to the
// quadratic interior, huber spans both regimes
TestFunction1D clipped_quadratic(double alpha, double beta);
TestFunction1D huber(double alpha, double beta);

struct SmoothnessReport {
    double sigma = 0.0;
    int M = 0;
    double empirical_lipschitz = 0.0;
    double empirical_smoothness = 0.0;
    double lipschitz_bound = 0.0;   // alpha
    double smoothness_bound = 0.0;  // min(alpha/sigma, beta)
    double sandwich_lower_violation = 0.0;  // max of f - smoothed
    double sandwich_upper_violation = 0.0;  // max of smoothed - f - alpha sigma sqrt(d)
    double mc_slack = 0.0;                  // allowance from MC standard error
    bool lipschitz_ok = false;
    bool smoothness_ok = false;
    bool sandwich_ok = false;
};

// MC-smooths the function on a dense grid (common random numbers across grid
// points), estimates Lipschitz and gradient-Lipschitz constants from max
// finite-difference ratios, and checks them against the certified bounds
// plus the convex sandwich f <= smoothed <= f + alpha sigma sqrt(d).
SmoothnessReport smoothing_property_check(const TestFunction1D& fn, double sigma, int M,
                                          std::uint64_t seed, double tol = 0.05);

}  // namespace flatmin

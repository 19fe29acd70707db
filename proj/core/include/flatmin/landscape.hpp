#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "flatmin/matrix.hpp"
#include "flatmin/objective.hpp"

namespace flatmin {

// Quadratic bowl f(theta) = theta^T H theta / 2 with H = Q diag(lambda) Q^T,
// Q a seeded random orthogonal basis. Minimizer is the origin. Eigenvalues
// are stored descending.
struct QuadraticLandscape {
    std::vector<double> eigenvalues;
    std::uint64_t basis_seed = 0;
    Matrix basis;  // d x d orthogonal Q, column i spans eigendirection i

    std::size_t dim() const { return eigenvalues.size(); }

    // H with Q = I; handy when coordinates should stay interpretable
    static QuadraticLandscape diagonal(std::vector<double> eigs);
    static QuadraticLandscape rotated(std::vector<double> eigs, std::uint64_t basis_seed);
};

// K eigenvalues drawn U[1e-5, 1e-3] (the flat directions), the remaining
// d - K from the baseline law U[1, 10]. Flat draws are prefix-consistent in
// K for a fixed seed, so the trace is monotone along a K sweep.
QuadraticLandscape sample_flat_fraction(std::size_t d, std::size_t K, std::uint64_t seed);

// All d eigenvalues drawn U[0.9 K_mean, 1.1 K_mean].
QuadraticLandscape sample_mean_scaled(std::size_t d, double K_mean, std::uint64_t seed);

// Closed-form measure values at the minimizer theta* = 0:
//   lpf = sigma^2 sum(lambda) / 2, lambda_max, trace, frobenius, d_eff.
std::map<std::string, double> oracle_measures(const QuadraticLandscape& land, double sigma);

// theta^T H theta for a supplied point.
double oracle_frn(const QuadraticLandscape& land, std::span<const double> theta);

// Exposes the landscape through the same interface as trained models, so
// every sharpness operation runs on it unmodified.
class QuadraticObjective final : public Objective {
public:
    explicit QuadraticObjective(const QuadraticLandscape& land) : land_(&land) {}

    std::size_t dim() const override { return land_->dim(); }
    double value(std::span<const double> theta) const override;
    void grad(std::span<const double> theta, std::span<double> out) const override;
    void hvp(std::span<const double> theta, std::span<const double> v,
             std::span<double> out) const override;

private:
    void apply_h(std::span<const double> x, std::span<double> out) const;
    const QuadraticLandscape* land_;
};

}  // namespace flatmin

#include "flatmin/landscape.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "flatmin/error.hpp"
#include "flatmin/rng.hpp"

namespace flatmin {

namespace {

// Orthogonal basis from the QR factorization of a seeded Gaussian matrix
// (Householder reflections, R diagonal forced positive so Q is unique).
Matrix random_orthogonal(std::size_t d, std::uint64_t seed) {
    rng::Stream stream(rng::derive(seed, {0x0b5151ULL}));
    Matrix a(d, d);
    for (double& v : a.data) v = stream.normal();

    Matrix q(d, d, 0.0);
    for (std::size_t i = 0; i < d; ++i) q.at(i, i) = 1.0;

    std::vector<double> h(d);
    for (std::size_t k = 0; k < d; ++k) {
        double nrm = 0.0;
        for (std::size_t i = k; i < d; ++i) nrm += a.at(i, k) * a.at(i, k);
        nrm = std::sqrt(nrm);
        if (nrm == 0.0) continue;
        const double alpha = a.at(k, k) >= 0.0 ? -nrm : nrm;
        double hnorm2 = 0.0;
        for (std::size_t i = k; i < d; ++i) {
            h[i] = a.at(i, k) - (i == k ? alpha : 0.0);
            hnorm2 += h[i] * h[i];
        }
        if (hnorm2 == 0.0) continue;
        // apply reflector to A (columns k..d) and accumulate into Q
        for (std::size_t j = k; j < d; ++j) {
            double s = 0.0;
            for (std::size_t i = k; i < d; ++i) s += h[i] * a.at(i, j);
            s = 2.0 * s / hnorm2;
            for (std::size_t i = k; i < d; ++i) a.at(i, j) -= s * h[i];
        }
        for (std::size_t j = 0; j < d; ++j) {
            double s = 0.0;
            for (std::size_t i = k; i < d; ++i) s += h[i] * q.at(i, j);
            s = 2.0 * s / hnorm2;
            for (std::size_t i = k; i < d; ++i) q.at(i, j) -= s * h[i];
        }
    }
    // q currently holds the product of reflectors applied to I, i.e. Q^T;
    // flip signs so the implied R has a positive diagonal, then transpose.
    Matrix out(d, d);
    for (std::size_t i = 0; i < d; ++i) {
        const double sign = a.at(i, i) >= 0.0 ? 1.0 : -1.0;
        for (std::size_t j = 0; j < d; ++j) out.at(j, i) = sign * q.at(i, j);
    }
    return out;
}

}  // namespace

QuadraticLandscape QuadraticLandscape::diagonal(std::vector<double> eigs) {
    QuadraticLandscape land;
    std::sort(eigs.begin(), eigs.end(), std::greater<double>());
    land.eigenvalues = std::move(eigs);
    const std::size_t d = land.eigenvalues.size();
    land.basis = Matrix(d, d, 0.0);
    for (std::size_t i = 0; i < d; ++i) land.basis.at(i, i) = 1.0;
    return land;
}

QuadraticLandscape QuadraticLandscape::rotated(std::vector<double> eigs, std::uint64_t basis_seed) {
    QuadraticLandscape land;
    std::sort(eigs.begin(), eigs.end(), std::greater<double>());
    land.eigenvalues = std::move(eigs);
    land.basis_seed = basis_seed;
    land.basis = random_orthogonal(land.eigenvalues.size(), basis_seed);
    return land;
}

QuadraticLandscape sample_flat_fraction(std::size_t d, std::size_t K, std::uint64_t seed) {
    if (K > d) throw ConfigError("flat-fraction K exceeds dimension");
    rng::Stream base = rng::substream(seed, {0xbaceULL, 1});
    rng::Stream flat = rng::substream(seed, {0xbaceULL, 2});
    std::vector<double> eigs(d);
    for (double& v : eigs) v = base.uniform(1.0, 10.0);
    // prefix-consistent flat draws: the K smallest baseline values give way
    std::vector<double> flat_draws(d);
    for (double& v : flat_draws) v = flat.uniform(1e-5, 1e-3);
    std::sort(eigs.begin(), eigs.end(), std::greater<double>());
    for (std::size_t i = 0; i < K; ++i) eigs[d - 1 - i] = flat_draws[i];
    return QuadraticLandscape::rotated(std::move(eigs), rng::derive(seed, {3}));
}

QuadraticLandscape sample_mean_scaled(std::size_t d, double K_mean, std::uint64_t seed) {
    if (K_mean <= 0.0) throw ConfigError("mean eigenvalue must be positive");
    rng::Stream stream = rng::substream(seed, {0x5ca1edULL});
    std::vector<double> eigs(d);
    for (double& v : eigs) v = stream.uniform(0.9 * K_mean, 1.1 * K_mean);
    return QuadraticLandscape::rotated(std::move(eigs), rng::derive(seed, {3}));
}

std::map<std::string, double> oracle_measures(const QuadraticLandscape& land, double sigma) {
    const auto& ev = land.eigenvalues;
    const double tr = std::accumulate(ev.begin(), ev.end(), 0.0);
    double fro2 = 0.0, deff = 0.0, lmax = 0.0;
    for (double l : ev) {
        fro2 += l * l;
        deff += l / (l + 1.0);
        lmax = std::max(lmax, l);
    }
    return {
        {"lpf", sigma * sigma * tr / 2.0},
        {"lambda_max", lmax},
        {"trace", tr},
        {"hess_frobenius", std::sqrt(fro2)},
        {"d_eff", deff},
    };
}

double oracle_frn(const QuadraticLandscape& land, std::span<const double> theta) {
    std::vector<double> h(land.dim());
    QuadraticObjective obj(land);
    obj.hvp(theta, theta, h);
    return dot(theta, h);
}

void QuadraticObjective::apply_h(std::span<const double> x, std::span<double> out) const {
    const std::size_t d = land_->dim();
    const Matrix& q = land_->basis;
    std::vector<double> y(d, 0.0);  // y = Q^T x
    for (std::size_t i = 0; i < d; ++i) {
        double s = 0.0;
        for (std::size_t r = 0; r < d; ++r) s += q.at(r, i) * x[r];
        y[i] = s * land_->eigenvalues[i];
    }
    for (std::size_t r = 0; r < d; ++r) {
        double s = 0.0;
        for (std::size_t i = 0; i < d; ++i) s += q.at(r, i) * y[i];
        out[r] = s;
    }
}

double QuadraticObjective::value(std::span<const double> theta) const {
    const std::size_t d = land_->dim();
    const Matrix& q = land_->basis;
    double f = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        double s = 0.0;
        for (std::size_t r = 0; r < d; ++r) s += q.at(r, i) * theta[r];
        f += land_->eigenvalues[i] * s * s;
    }
    return 0.5 * f;
}

void QuadraticObjective::grad(std::span<const double> theta, std::span<double> out) const {
    apply_h(theta, out);
}

void QuadraticObjective::hvp(std::span<const double> /*theta*/, std::span<const double> v,
                             std::span<double> out) const {
    apply_h(v, out);
}

}  // namespace flatmin

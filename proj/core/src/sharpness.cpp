#include "flatmin/sharpness.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "flatmin/error.hpp"
#include "flatmin/rng.hpp"

namespace flatmin {

const char* to_string(MeasureKind kind) {
    switch (kind) {
        case MeasureKind::lpf: return "lpf";
        case MeasureKind::eps_sharpness: return "eps_sharpness";
        case MeasureKind::pac_bayes: return "pac_bayes";
        case MeasureKind::frn: return "frn";
        case MeasureKind::hess_frobenius: return "hess_frobenius";
        case MeasureKind::lambda_max: return "lambda_max";
        case MeasureKind::trace: return "trace";
        case MeasureKind::d_eff: return "d_eff";
        case MeasureKind::shannon_entropy: return "shannon_entropy";
        case MeasureKind::local_entropy_grad: return "local_entropy_grad";
    }
    return "?";
}

MeasureKind measure_from_string(const std::string& name) {
    static const std::map<std::string, MeasureKind> table = {
        {"lpf", MeasureKind::lpf},
        {"eps_sharpness", MeasureKind::eps_sharpness},
        {"pac_bayes", MeasureKind::pac_bayes},
        {"frn", MeasureKind::frn},
        {"hess_frobenius", MeasureKind::hess_frobenius},
        {"lambda_max", MeasureKind::lambda_max},
        {"trace", MeasureKind::trace},
        {"d_eff", MeasureKind::d_eff},
        {"shannon_entropy", MeasureKind::shannon_entropy},
        {"local_entropy_grad", MeasureKind::local_entropy_grad},
    };
    auto it = table.find(name);
    if (it == table.end()) throw ConfigError("unknown measure '" + name + "'");
    return it->second;
}

double lpf_measure(const Objective& obj, std::span<const double> theta, double sigma, int M,
                   std::uint64_t seed) {
    if (sigma <= 0.0) throw ConfigError("lpf kernel std sigma must be > 0");
    if (M < 1) throw ConfigError("lpf MC iteration count must be >= 1");
    const std::size_t d = obj.dim();
    std::vector<double> probe(d);
    double out = 0.0;
    for (int j = 0; j < M; ++j) {
        rng::Stream stream = rng::substream(seed, {0x1bfceULL, static_cast<std::uint64_t>(j)});
        for (std::size_t i = 0; i < d; ++i) probe[i] = theta[i] + sigma * stream.normal();
        const double loss = obj.value(probe);
        if (!std::isfinite(loss))
            throw NumericError("non-finite smoothed loss at sample " + std::to_string(j));
        out += loss;
    }
    return out / static_cast<double>(M);
}

namespace {

constexpr double kBisectLo = 1e-12;
constexpr double kBisectHi = 1e3;
constexpr int kBisectMaxIter = 200;

}  // namespace

EpsSharpnessResult eps_sharpness(const Objective& obj, std::span<const double> theta,
                                 double epsilon, double psi) {
    if (epsilon <= 0.0) throw ConfigError("target deviation epsilon must be > 0");
    const std::size_t d = obj.dim();
    std::vector<double> g(d);
    obj.grad(theta, g);
    const double gnorm = norm2(g);
    if (gnorm < 1e-12) throw UndefinedDirectionError("full-data gradient is (near) zero");
    const double base = obj.value(theta);

    std::vector<double> probe(d);
    auto deviation = [&](double eta) {
        for (std::size_t i = 0; i < d; ++i) probe[i] = theta[i] + eta * g[i];
        return obj.value(probe) - base;
    };

    double eta_max = kBisectLo;
    if (deviation(eta_max) > epsilon + psi)
        throw NonBracketableError("loss rises above target within the minimal step");
    while (deviation(eta_max) < epsilon) {
        eta_max *= 10.0;
        if (eta_max > kBisectHi)
            throw NonBracketableError("no step below 1e3 raises the loss by epsilon");
    }

    double eta_min = kBisectLo, eta = eta_max, dev = deviation(eta);
    for (int it = 0; it < kBisectMaxIter; ++it) {
        if (dev >= epsilon - psi && dev <= epsilon + psi) break;
        if (dev < epsilon - psi)
            eta_min = eta;
        else
            eta_max = eta;
        eta = 0.5 * (eta_min + eta_max);
        dev = deviation(eta);
    }
    if (dev < epsilon - psi || dev > epsilon + psi)
        throw NonBracketableError("bisection failed to land in the tolerance window");

    // confirm with one more evaluation at the accepted point
    const double final_dev = deviation(eta);
    EpsSharpnessResult result;
    result.displacement = eta * gnorm;
    result.value = 1.0 / result.displacement;
    result.achieved_deviation = final_dev;
    return result;
}

PacBayesResult pac_bayes_measure(const Objective& obj, std::span<const double> theta,
                                 std::span<const double> theta0, std::size_t m, int M, double psi,
                                 double delta, std::uint64_t seed) {
    if (m < 2) throw ConfigError("pac-bayes needs dataset size m >= 2");
    if (M < 1) throw ConfigError("pac-bayes MC iteration count must be >= 1");
    const double target = 0.1;
    const std::size_t d = obj.dim();
    const double base = obj.value(theta);

    // common random numbers across bisection steps: the stream is re-derived
    // per evaluation, so d(sigma) is a deterministic monotone-friendly curve
    std::vector<double> probe(d);
    auto deviation = [&](double sigma, std::uint64_t tag) {
        double acc = 0.0;
        for (int j = 0; j < M; ++j) {
            rng::Stream stream = rng::substream(seed, {tag, static_cast<std::uint64_t>(j)});
            for (std::size_t i = 0; i < d; ++i) probe[i] = theta[i] + sigma * stream.normal();
            acc += obj.value(probe);
        }
        return acc / static_cast<double>(M) - base;
    };

    double lo = kBisectLo, hi = kBisectHi;
    if (deviation(lo, 0xacbULL) > target + psi)
        throw NonBracketableError("loss deviation exceeds target at the minimal sigma");
    if (deviation(hi, 0xacbULL) < target - psi)
        throw NonBracketableError("loss too flat: deviation below target at the maximal sigma");

    double sigma = 0.0, dev = 0.0;
    bool hit = false;
    for (int it = 0; it < kBisectMaxIter; ++it) {
        sigma = 0.5 * (lo + hi);
        dev = deviation(sigma, 0xacbULL);
        if (dev >= target - psi && dev <= target + psi) {
            hit = true;
            break;
        }
        if (dev < target - psi)
            lo = sigma;
        else
            hi = sigma;
    }
    if (!hit) throw NonBracketableError("sigma bisection failed to land in the tolerance window");

    PacBayesResult result;
    result.sigma_found = sigma;
    // independent draws confirm the deviation actually achieved
    result.achieved_deviation = deviation(sigma, 0xacb7ULL);

    double disp2 = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        const double diff = theta[i] - theta0[i];
        disp2 += diff * diff;
    }
    result.value = disp2 / (4.0 * sigma * sigma) +
                   0.5 * std::log(static_cast<double>(m) / delta);
    return result;
}

double fisher_rao_norm(const Objective& obj, std::span<const double> theta) {
    std::vector<double> h(obj.dim());
    obj.hvp(theta, theta, h);
    return dot(theta, h);
}

double hessian_frobenius(const Objective& obj, std::span<const double> theta, int M,
                         std::uint64_t seed) {
    if (M < 1) throw ConfigError("frobenius MC iteration count must be >= 1");
    const std::size_t d = obj.dim();
    std::vector<double> v(d), hv(d);
    double acc = 0.0;
    for (int j = 0; j < M; ++j) {
        rng::Stream stream = rng::substream(seed, {0xf20bULL, static_cast<std::uint64_t>(j)});
        for (double& x : v) x = stream.normal();
        obj.hvp(theta, v, hv);
        acc += dot(hv, hv);
    }
    return std::sqrt(acc / static_cast<double>(M));
}

namespace {

// Eigenvalues of a symmetric tridiagonal matrix by the implicit-shift QL
// method, tracking only the first row of the eigenvector matrix (all the
// quadrature needs). diag/sub are destroyed; sub[i] couples i and i+1.
void tridiag_eigen_first_row(std::vector<double>& diag, std::vector<double>& sub,
                             std::vector<double>& first_row) {
    const int n = static_cast<int>(diag.size());
    first_row.assign(n, 0.0);
    first_row[0] = 1.0;
    if (n == 1) return;
    sub.resize(n, 0.0);
    sub[n - 1] = 0.0;

    for (int l = 0; l < n; ++l) {
        int iter = 0;
        int m;
        do {
            for (m = l; m < n - 1; ++m) {
                const double dd = std::abs(diag[m]) + std::abs(diag[m + 1]);
                if (std::abs(sub[m]) <= 1e-15 * dd) break;
            }
            if (m != l) {
                if (iter++ == 64)
                    throw NumericError("tridiagonal eigensolver failed to converge");
                double g = (diag[l + 1] - diag[l]) / (2.0 * sub[l]);
                double r = std::hypot(g, 1.0);
                g = diag[m] - diag[l] + sub[l] / (g + std::copysign(r, g));
                double s = 1.0, c = 1.0, p = 0.0;
                bool underflow = false;
                for (int i = m - 1; i >= l; --i) {
                    double f = s * sub[i];
                    const double b = c * sub[i];
                    r = std::hypot(f, g);
                    sub[i + 1] = r;
                    if (r == 0.0) {
                        diag[i + 1] -= p;
                        sub[m] = 0.0;
                        underflow = true;
                        break;
                    }
                    s = f / r;
                    c = g / r;
                    g = diag[i + 1] - p;
                    r = (diag[i] - g) * s + 2.0 * c * b;
                    p = s * r;
                    diag[i + 1] = g + p;
                    g = c * r - b;
                    f = first_row[i + 1];
                    first_row[i + 1] = s * first_row[i] + c * f;
                    first_row[i] = c * first_row[i] - s * f;
                }
                if (underflow) continue;
                diag[l] -= p;
                sub[l] = g;
                sub[m] = 0.0;
            }
        } while (m != l);
    }
}

}  // namespace

SpectrumEstimate lanczos_spectrum(const Objective& obj, std::span<const double> theta, int k,
                                  std::uint64_t seed) {
    const std::size_t d = obj.dim();
    if (k < 1 || static_cast<std::size_t>(k) > d)
        throw ConfigError("lanczos step count must be in [1, dim]");

    std::vector<std::vector<double>> basis;
    std::vector<double> alphas, betas;

    std::vector<double> v(d);
    rng::Stream stream = rng::substream(seed, {0x1a2cULL});
    for (double& x : v) x = stream.normal();
    scale(1.0 / norm2(v), v);
    basis.push_back(v);

    SpectrumEstimate est;
    std::vector<double> w(d);
    for (int j = 0; j < k; ++j) {
        obj.hvp(theta, basis[j], w);
        const double alpha = dot(basis[j], w);
        alphas.push_back(alpha);
        axpy(-alpha, basis[j], w);
        if (j > 0) axpy(-betas[j - 1], basis[j - 1], w);
        // full reorthogonalization, two passes
        for (int pass = 0; pass < 2; ++pass)
            for (const auto& u : basis) axpy(-dot(u, w), u, w);
        if (j + 1 == k) break;
        const double beta = norm2(w);
        if (beta < 1e-12) {
            est.breakdown = true;
            break;
        }
        betas.push_back(beta);
        scale(1.0 / beta, w);
        basis.push_back(w);
    }

    std::vector<double> diag = alphas, sub = betas, first_row;
    tridiag_eigen_first_row(diag, sub, first_row);

    const int produced = static_cast<int>(diag.size());
    std::vector<int> order(produced);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) { return diag[a] > diag[b]; });
    est.k = produced;
    est.ritz_values.resize(produced);
    est.weights.resize(produced);
    for (int i = 0; i < produced; ++i) {
        est.ritz_values[i] = diag[order[i]];
        est.weights[i] = first_row[order[i]] * first_row[order[i]];
    }
    return est;
}

SpectrumMeasures spectrum_measures(const SpectrumEstimate& spectrum, std::size_t dim) {
    if (spectrum.ritz_values.empty()) throw ConfigError("empty spectrum estimate");
    SpectrumMeasures out;
    out.lambda_max = spectrum.ritz_values.front();
    double tr = 0.0, deff = 0.0;
    for (std::size_t i = 0; i < spectrum.ritz_values.size(); ++i) {
        const double l = spectrum.ritz_values[i], w = spectrum.weights[i];
        tr += w * l;
        deff += w * l / (l + 1.0);
    }
    out.trace_est = static_cast<double>(dim) * tr;
    out.d_eff = static_cast<double>(dim) * deff;
    return out;
}

double shannon_entropy(const Model& model, const ParamVector& params, const Batch& data) {
    const Matrix probs = forward(model, params, data).per_example_probs;
    double out = 0.0;
    for (double p : probs.data)
        if (p > 0.0) out += p * std::log(p);
    return -out / static_cast<double>(probs.rows);
}

double local_entropy_grad_norm(const Objective& obj, std::span<const double> theta, int L,
                               double gamma, double eta, double eps_noise, double alpha_avg,
                               std::uint64_t seed) {
    if (L < 1) throw ConfigError("Langevin iteration count L must be >= 1");
    if (gamma <= 0.0) throw ConfigError("local-entropy scope gamma must be > 0");
    const std::size_t d = obj.dim();
    std::vector<double> theta_prime(theta.begin(), theta.end());
    std::vector<double> mu = theta_prime;
    std::vector<double> g(d);
    rng::Stream stream = rng::substream(seed, {0x1eULL});
    const double noise_scale = std::sqrt(eta) * eps_noise;

    for (int k = 0; k < L; ++k) {
        obj.grad(theta_prime, g);
        for (std::size_t i = 0; i < d; ++i) {
            const double pull = gamma * (theta[i] - theta_prime[i]);
            double step = theta_prime[i] - eta * (g[i] - pull);
            if (noise_scale > 0.0) step += noise_scale * stream.normal();
            theta_prime[i] = step;
            mu[i] = (1.0 - alpha_avg) * mu[i] + alpha_avg * theta_prime[i];
        }
        if (!all_finite(theta_prime))
            throw NumericError("non-finite Langevin iterate at inner step " + std::to_string(k));
    }

    double acc = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        const double diff = gamma * (theta[i] - mu[i]);
        acc += diff * diff;
    }
    return std::sqrt(acc);
}

}  // namespace flatmin

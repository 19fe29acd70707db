#include "flatmin/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "flatmin/error.hpp"
#include "flatmin/rng.hpp"

namespace flatmin {

namespace {

// pairs (i < j) with key[i] == key[j]
template <typename Key>
double tied_pairs(std::vector<Key> keys) {
    std::sort(keys.begin(), keys.end());
    double total = 0.0;
    std::size_t run = 1;
    for (std::size_t i = 1; i <= keys.size(); ++i) {
        if (i < keys.size() && keys[i] == keys[i - 1]) {
            ++run;
        } else {
            total += 0.5 * static_cast<double>(run) * static_cast<double>(run - 1);
            run = 1;
        }
    }
    return total;
}

// strict inversions via merge sort
double count_inversions(std::vector<double>& a, std::vector<double>& tmp, std::size_t lo,
                        std::size_t hi) {
    if (hi - lo < 2) return 0.0;
    const std::size_t mid = lo + (hi - lo) / 2;
    double inv = count_inversions(a, tmp, lo, mid) + count_inversions(a, tmp, mid, hi);
    std::size_t i = lo, j = mid, k = lo;
    while (i < mid && j < hi) {
        if (a[i] <= a[j]) {
            tmp[k++] = a[i++];
        } else {
            inv += static_cast<double>(mid - i);
            tmp[k++] = a[j++];
        }
    }
    while (i < mid) tmp[k++] = a[i++];
    while (j < hi) tmp[k++] = a[j++];
    std::copy(tmp.begin() + lo, tmp.begin() + hi, a.begin() + lo);
    return inv;
}

}  // namespace

CorrelationResult kendall_tau(std::span<const double> x, std::span<const double> y) {
    const std::size_t n = x.size();
    if (y.size() != n) throw ConfigError("kendall inputs must have equal length");
    if (n < 2) throw ConfigError("kendall needs at least two points");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (x[a] != x[b]) return x[a] < x[b];
        return y[a] < y[b];
    });

    const double n0 = 0.5 * static_cast<double>(n) * static_cast<double>(n - 1);
    const double n1 = tied_pairs(std::vector<double>(x.begin(), x.end()));
    const double n2 = tied_pairs(std::vector<double>(y.begin(), y.end()));
    if (n1 == n0 || n2 == n0)
        throw UndefinedCorrelationError("an input is constant; rank correlation undefined");

    std::vector<std::pair<double, double>> xy(n);
    for (std::size_t i = 0; i < n; ++i) xy[i] = {x[order[i]], y[order[i]]};
    const double n3 = tied_pairs(xy);

    // sorted by (x asc, y asc): strict y-inversions are exactly the
    // discordant pairs; pairs tied in x are y-sorted and contribute none
    std::vector<double> ys(n), tmp(n);
    for (std::size_t i = 0; i < n; ++i) ys[i] = y[order[i]];
    const double discordant = count_inversions(ys, tmp, 0, n);

    const double joint = n0 - n1 - n2 + n3;  // pairs untied in both
    const double numer = joint - 2.0 * discordant;

    CorrelationResult result;
    result.n = n;
    result.tau = numer / std::sqrt((n0 - n1) * (n0 - n2));
    const double dn = static_cast<double>(n);
    result.ci95_halfwidth = 1.96 * std::sqrt(2.0 * (2.0 * dn + 5.0) / (9.0 * dn * (dn - 1.0)));
    return result;
}

double generalization_gap(double train_error, double test_error) {
    return test_error - train_error;
}

std::vector<double> normalize_measures(std::span<const double> values) {
    if (values.empty()) throw ConfigError("nothing to normalize");
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    if (*hi <= *lo)
        throw DegenerateNormalizationError("constant measure vector cannot be min-max scaled");
    std::vector<double> out(values.size());
    const double range = *hi - *lo;
    for (std::size_t i = 0; i < values.size(); ++i) out[i] = (values[i] - *lo) / range;
    return out;
}

namespace {

void check_bound_inputs(const GeBoundInputs& inp) {
    if (inp.alpha_lip <= 0.0 || inp.beta_smooth <= 0.0 || inp.c <= 0.0 || inp.sigma <= 0.0 ||
        inp.T < 1.0)
        throw ConfigError("stability-bound inputs must be positive (T >= 1)");
}

double smoothed_constant(const GeBoundInputs& inp) {
    return std::min(inp.alpha_lip / inp.sigma, inp.beta_smooth);
}

}  // namespace

GeRatioResult ge_ratio(const GeBoundInputs& inp) {
    check_bound_inputs(inp);
    GeRatioResult out;
    out.p = 1.0 / (inp.beta_smooth * inp.c + 1.0);
    out.p_hat = 1.0 / (smoothed_constant(inp) * inp.c + 1.0);
    out.smoothing_inactive = inp.sigma <= inp.alpha_lip / inp.beta_smooth;
    const double base = 2.0 * inp.c * inp.alpha_lip * inp.alpha_lip / inp.T;
    out.rho = (1.0 - out.p) / (1.0 - out.p_hat) * std::pow(base, out.p_hat - out.p);
    return out;
}

double ge_bound_sgd(const GeBoundInputs& inp, std::size_t m) {
    check_bound_inputs(inp);
    if (m < 2) throw ConfigError("stability bound needs m >= 2");
    const double bc = inp.beta_smooth * inp.c;
    const double p = 1.0 / (bc + 1.0);
    return (1.0 + 1.0 / bc) / static_cast<double>(m - 1) *
           std::pow(2.0 * inp.c * inp.alpha_lip * inp.alpha_lip, p) * std::pow(inp.T, 1.0 - p);
}

double ge_bound_lpf(const GeBoundInputs& inp, std::size_t m) {
    check_bound_inputs(inp);
    if (m < 2) throw ConfigError("stability bound needs m >= 2");
    const double bc = smoothed_constant(inp) * inp.c;
    const double p_hat = 1.0 / (bc + 1.0);
    return (1.0 + 1.0 / bc) / static_cast<double>(m - 1) *
           std::pow(2.0 * inp.c * inp.alpha_lip * inp.alpha_lip, p_hat) *
           std::pow(inp.T, 1.0 - p_hat);
}

double ge_ratio_unit_threshold(const GeBoundInputs& inp) {
    const GeRatioResult r = ge_ratio(inp);
    if (r.p_hat <= r.p) return std::numeric_limits<double>::infinity();
    return 2.0 * inp.c * inp.alpha_lip * inp.alpha_lip *
           std::pow((1.0 - r.p) / (1.0 - r.p_hat), 1.0 / (r.p_hat - r.p));
}

double ge_sigma_monotone_threshold(const GeBoundInputs& inp) {
    const GeRatioResult r = ge_ratio(inp);
    const double x = r.p_hat - r.p;
    if (x <= 0.0) return std::numeric_limits<double>::infinity();
    // 1/rho = (1 - a x) b^x with a = 1/(1-p), b = T / (2 c alpha^2) is
    // increasing on [0, x] iff ln b >= a / (1 - a x)
    const double a = 1.0 / (1.0 - r.p);
    return 2.0 * inp.c * inp.alpha_lip * inp.alpha_lip * std::exp(a / (1.0 - a * x));
}

TestFunction1D scaled_abs(double a) {
    TestFunction1D fn;
    fn.name = "scaled_abs";
    fn.alpha = a;
    fn.beta = std::numeric_limits<double>::infinity();
    fn.f = [a](double x) { return a * std::abs(x); };
    fn.df = [a](double x) { return x > 0.0 ? a : (x < 0.0 ? -a : 0.0); };
    fn.grid_lo = -3.0;
    fn.grid_hi = 3.0;
    return fn;
}

namespace {

TestFunction1D huber_impl(const char* name, double alpha, double beta, double grid_scale) {
    TestFunction1D fn;
    fn.name = name;
    fn.alpha = alpha;
    fn.beta = beta;
    const double r = alpha / beta;  // quadratic/linear crossover
    fn.f = [alpha, beta, r](double x) {
        const double ax = std::abs(x);
        return ax <= r ? 0.5 * beta * x * x : alpha * ax - 0.5 * alpha * r;
    };
    fn.df = [alpha, beta, r](double x) {
        return std::abs(x) <= r ? beta * x : std::copysign(alpha, x);
    };
    fn.grid_lo = -grid_scale * r;
    fn.grid_hi = grid_scale * r;
    return fn;
}

}  // namespace

TestFunction1D clipped_quadratic(double alpha, double beta) {
    return huber_impl("clipped_quadratic", alpha, beta, 0.9);
}

TestFunction1D huber(double alpha, double beta) {
    return huber_impl("huber", alpha, beta, 3.0);
}

SmoothnessReport smoothing_property_check(const TestFunction1D& fn, double sigma, int M,
                                          std::uint64_t seed, double tol) {
    if (sigma <= 0.0 || M < 1) throw ConfigError("smoothing check needs sigma > 0 and M >= 1");
    const int npts = 161;
    const double h = (fn.grid_hi - fn.grid_lo) / static_cast<double>(npts - 1);

    // one set of kernel draws shared by every grid point
    std::vector<double> z(M);
    rng::Stream stream = rng::substream(seed, {0x70e1ULL});
    for (double& v : z) v = stream.normal();

    std::vector<double> smooth(npts), sgrad(npts);
    double max_se = 0.0;
    for (int i = 0; i < npts; ++i) {
        const double x = fn.grid_lo + h * i;
        double sf = 0.0, sf2 = 0.0, sg = 0.0;
        for (int j = 0; j < M; ++j) {
            const double v = fn.f(x + sigma * z[j]);
            sf += v;
            sf2 += v * v;
            sg += fn.df(x + sigma * z[j]);
        }
        smooth[i] = sf / M;
        sgrad[i] = sg / M;
        const double var = std::max(0.0, sf2 / M - smooth[i] * smooth[i]);
        max_se = std::max(max_se, std::sqrt(var / M));
    }

    SmoothnessReport rep;
    rep.sigma = sigma;
    rep.M = M;
    rep.lipschitz_bound = fn.alpha;
    rep.smoothness_bound = std::min(fn.alpha / sigma, fn.beta);
    for (int i = 0; i + 1 < npts; ++i) {
        rep.empirical_lipschitz =
            std::max(rep.empirical_lipschitz, std::abs(smooth[i + 1] - smooth[i]) / h);
        rep.empirical_smoothness =
            std::max(rep.empirical_smoothness, std::abs(sgrad[i + 1] - sgrad[i]) / h);
    }
    for (int i = 0; i < npts; ++i) {
        const double x = fn.grid_lo + h * i;
        rep.sandwich_lower_violation =
            std::max(rep.sandwich_lower_violation, fn.f(x) - smooth[i]);
        rep.sandwich_upper_violation =
            std::max(rep.sandwich_upper_violation, smooth[i] - fn.f(x) - fn.alpha * sigma);
    }
    rep.mc_slack = 4.0 * max_se + 1e-12;
    rep.lipschitz_ok = rep.empirical_lipschitz <= fn.alpha * (1.0 + tol);
    rep.smoothness_ok = rep.empirical_smoothness <= rep.smoothness_bound * (1.0 + tol);
    rep.sandwich_ok = rep.sandwich_lower_violation <= rep.mc_slack &&
                      rep.sandwich_upper_violation <= rep.mc_slack;
    return rep;
}

}  // namespace flatmin

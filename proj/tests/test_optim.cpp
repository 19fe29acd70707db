#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "flatmin/dataset.hpp"
#include "flatmin/error.hpp"
#include "flatmin/landscape.hpp"
#include "flatmin/model.hpp"
#include "flatmin/optim.hpp"
#include "flatmin/rng.hpp"

using namespace flatmin;

namespace {

OptimizerState quad_state(std::vector<double> theta, double lr, double momentum, double wd,
                          std::size_t filters = 0) {
    OptimizerState s;
    s.params = flat_params(std::move(theta), filters == 0 ? 1 : filters);
    s.lr = lr;
    s.momentum = momentum;
    s.weight_decay = wd;
    return s;
}

}  // namespace

TEST_CASE("msgd with zero momentum and decay is vanilla sgd") {
    Dataset ds = make_synthetic(SyntheticKind::blobs, 32, 2, 2, 1);
    auto [model, params] = build_mlp({2, 4, 2}, 1);
    const Batch batch = full_batch(ds);
    const ParamVector g = grad(model, params, batch);

    OptimizerState state{params, std::nullopt, 0, 0.1, 0.0, 0.0};
    msgd_step(state, model, batch);
    for (std::size_t i = 0; i < params.size(); ++i)
        CHECK(state.params.values[i] == params.values[i] - 0.1 * g.values[i]);
    CHECK(state.step == 1);
}

TEST_CASE("msgd on the identity quadratic contracts by 1 - lr") {
    auto land = QuadraticLandscape::diagonal({1.0, 1.0, 1.0});
    QuadraticObjective obj(land);
    OptimizerState state = quad_state({1.0, 1.0, 1.0}, 0.1, 0.0, 0.0);
    msgd_step(state, objective_loss(obj));
    for (double v : state.params.values) CHECK(v == doctest::Approx(0.9).epsilon(1e-15));
}

TEST_CASE("two momentum steps match the hand-unrolled recursion") {
    auto land = QuadraticLandscape::diagonal({2.0, 0.5});
    QuadraticObjective obj(land);
    const double lr = 0.1, mom = 0.9;
    OptimizerState state = quad_state({1.0, -1.0}, lr, mom, 0.0);
    msgd_step(state, objective_loss(obj));
    msgd_step(state, objective_loss(obj));

    // by hand: b <- mom b + H theta; theta <- theta - lr b
    double theta[2] = {1.0, -1.0}, buf[2] = {0.0, 0.0};
    const double eig[2] = {2.0, 0.5};
    for (int step = 0; step < 2; ++step) {
        for (int i = 0; i < 2; ++i) {
            buf[i] = mom * buf[i] + eig[i] * theta[i];
            theta[i] -= lr * buf[i];
        }
    }
    CHECK(state.params.values[0] == doctest::Approx(theta[0]).epsilon(1e-15));
    CHECK(state.params.values[1] == doctest::Approx(theta[1]).epsilon(1e-15));
}

TEST_CASE("filter_sigma broadcasts per-filter norms") {
    // single filter (3, 4): combined norm 5 on every entry
    ParamVector p = flat_params({3.0, 4.0}, 1);
    const SigmaDiag s = filter_sigma(p);
    CHECK(s.per_parameter_scale == std::vector<double>{5.0, 5.0});

    // balanced network: all norms 1, reduces to isotropic
    auto model = Model::make({2, 2, 2});
    ParamVector bp;
    bp.layout = model.layout();
    bp.values.assign(model.layout()->total, 0.0);
    for (const FilterSlice& f : model.layout()->filters) bp.values[f.offset] = 1.0;
    for (double v : filter_sigma(bp).per_parameter_scale) CHECK(v == 1.0);

    // random parameters: entries equal independently recomputed slice norms
    auto [m2, p2] = build_mlp({3, 5, 2}, 9);
    const SigmaDiag s2 = filter_sigma(p2);
    for (const FilterSlice& f : m2.layout()->filters) {
        double acc = 0.0;
        for (std::size_t i = f.offset; i < f.offset + f.length; ++i)
            acc += p2.values[i] * p2.values[i];
        for (std::size_t i = f.offset; i < f.offset + f.length; ++i)
            CHECK(s2.per_parameter_scale[i] == doctest::Approx(std::sqrt(acc)).epsilon(1e-15));
    }

    ParamVector degenerate = flat_params({0.0, 0.0}, 1);
    CHECK_THROWS_AS(filter_sigma(degenerate), DegenerateFilterError);
}

TEST_CASE("gamma schedule hits its endpoints and midpoint") {
    CHECK(gamma_schedule(0, 100, 0.25, 7.0) == 0.25);
    CHECK(gamma_schedule(100, 100, 0.25, 7.0) == doctest::Approx(8.0 * 0.25).epsilon(1e-15));
    CHECK(gamma_schedule(50, 100, 1.0, 2.0) == doctest::Approx(2.0).epsilon(1e-12));

    double prev = -1.0;
    for (std::uint64_t t = 0; t <= 64; ++t) {
        const double g = gamma_schedule(t, 64, 0.5, 3.0);
        CHECK(g >= prev);
        prev = g;
    }
    CHECK_THROWS_AS(gamma_schedule(101, 100, 1.0, 1.0), ConfigError);
    CHECK_THROWS_AS(gamma_schedule(0, 0, 1.0, 1.0), ConfigError);
}

TEST_CASE("zero filter radius reduces the smoothed step to msgd") {
    Dataset ds = make_synthetic(SyntheticKind::blobs, 30, 2, 2, 3);
    auto [model, params] = build_mlp({2, 6, 2}, 3);
    const Batch batch = full_batch(ds);

    OptimizerState a{params, std::nullopt, 0, 0.05, 0.9, 1e-4};
    OptimizerState b{params, std::nullopt, 0, 0.05, 0.9, 1e-4};
    LpfConfig cfg;
    cfg.gamma0 = 0.0;
    cfg.alpha = 0.0;
    cfg.M = 4;
    cfg.T_total = 100;
    for (int step = 0; step < 10; ++step) {
        msgd_step(a, model, batch);
        lpf_sgd_step(b, model, batch, cfg, 99);
    }
    for (std::size_t i = 0; i < params.size(); ++i)
        CHECK(std::abs(a.params.values[i] - b.params.values[i]) <=
              1e-12 * std::max(1.0, std::abs(a.params.values[i])));
}

TEST_CASE("uneven splits still average to the full-batch gradient at gamma 0") {
    Dataset ds = make_synthetic(SyntheticKind::blobs, 31, 2, 2, 5);  // 31 % 4 != 0
    auto [model, params] = build_mlp({2, 4, 2}, 5);
    const Batch batch = full_batch(ds);
    const ParamVector g = grad(model, params, batch);

    OptimizerState state{params, std::nullopt, 0, 1.0, 0.0, 0.0};
    LpfConfig cfg;
    cfg.gamma0 = 0.0;
    cfg.M = 4;
    cfg.T_total = 10;
    lpf_sgd_step(state, model, batch, cfg, 7);
    for (std::size_t i = 0; i < params.size(); ++i)
        CHECK(params.values[i] - state.params.values[i] ==
              doctest::Approx(g.values[i]).epsilon(1e-12));
}

TEST_CASE("smoothed gradient of a quadratic is unbiased") {
    // E grad f(theta + z) = H theta for any zero-mean perturbation
    const std::size_t d = 50;
    std::vector<double> eigs(d), theta(d, 1.0);
    rng::Stream es(rng::derive(11, {}));
    for (double& e : eigs) e = es.uniform(1.0, 10.0);
    auto land = QuadraticLandscape::diagonal(eigs);
    QuadraticObjective obj(land);

    const int draws = 100000;
    const double gamma = 0.04;  // per-coordinate variance (|theta_i| = 1 filters)
    OptimizerState state = quad_state(theta, 1.0, 0.0, 0.0, d);
    std::vector<WeightedLoss> splits(draws,
                                     {objective_loss(obj), 1.0 / static_cast<double>(draws)});
    LpfConfig cfg;
    cfg.gamma0 = gamma;
    cfg.alpha = 0.0;
    cfg.T_total = 10;
    lpf_sgd_step(state, splits, cfg, 13);

    // descending eigenvalue order matches diagonal() storage
    std::sort(eigs.begin(), eigs.end(), std::greater<double>());
    for (std::size_t i = 0; i < d; ++i) {
        const double mean_update = theta[i] - state.params.values[i];  // lr = 1
        const double want = eigs[i] * theta[i];
        const double se = eigs[i] * std::sqrt(gamma / draws);
        CHECK(std::abs(mean_update - want) <= 4.0 * se);
    }
}

TEST_CASE("single-split smoothed step equals a hand-coded perturbed gradient step") {
    auto land = QuadraticLandscape::diagonal({2.0, 1.0});
    QuadraticObjective obj(land);
    OptimizerState state = quad_state({1.0, 2.0}, 0.1, 0.0, 0.0, 2);
    LpfConfig cfg;
    cfg.gamma0 = 0.01;
    cfg.M = 1;
    cfg.T_total = 10;
    lpf_sgd_step(state, {{objective_loss(obj), 1.0}}, cfg, 21);

    // replicate the single draw by hand from the same sub-stream
    const SigmaDiag sigma = filter_sigma(flat_params({1.0, 2.0}, 2));
    rng::Stream stream = rng::substream(21, {0x1bfULL, 0, 0});
    double probe[2];
    for (int i = 0; i < 2; ++i)
        probe[i] = (i == 0 ? 1.0 : 2.0) +
                   std::sqrt(cfg.gamma0 * sigma.per_parameter_scale[i]) * stream.normal();
    const double eig[2] = {2.0, 1.0};
    CHECK(state.params.values[0] == doctest::Approx(1.0 - 0.1 * eig[0] * probe[0]).epsilon(1e-15));
    CHECK(state.params.values[1] == doctest::Approx(2.0 - 0.1 * eig[1] * probe[1]).epsilon(1e-15));
}

TEST_CASE("covariance tracks parameter norms across updates") {
    ParamVector p = flat_params({3.0, 4.0}, 2);
    const SigmaDiag before = filter_sigma(p);
    CHECK(before.per_parameter_scale == std::vector<double>{3.0, 4.0});
    p.values[0] = 6.0;
    const SigmaDiag after = filter_sigma(p);
    CHECK(after.per_parameter_scale == std::vector<double>{6.0, 4.0});
}

TEST_CASE("sam step follows the closed-form two-stage evaluation") {
    auto land = QuadraticLandscape::diagonal({3.0, 1.0});
    QuadraticObjective obj(land);
    const double rho = 0.05, lr = 0.1;
    const std::vector<double> theta0 = {1.0, 2.0};
    OptimizerState state = quad_state(theta0, lr, 0.0, 0.0);
    sam_step(state, objective_loss(obj), rho);

    const double eig[2] = {3.0, 1.0};
    double g[2] = {eig[0] * theta0[0], eig[1] * theta0[1]};
    const double gn = std::sqrt(g[0] * g[0] + g[1] * g[1]);
    for (int i = 0; i < 2; ++i) {
        const double ascent = theta0[i] + rho * g[i] / gn;
        CHECK(state.params.values[i] ==
              doctest::Approx(theta0[i] - lr * eig[i] * ascent).epsilon(1e-14));
    }
}

TEST_CASE("sam approaches msgd as rho shrinks") {
    Dataset ds = make_synthetic(SyntheticKind::blobs, 24, 2, 2, 7);
    auto [model, params] = build_mlp({2, 4, 2}, 7);
    const Batch batch = full_batch(ds);
    OptimizerState a{params, std::nullopt, 0, 0.1, 0.0, 0.0};
    OptimizerState b{params, std::nullopt, 0, 0.1, 0.0, 0.0};
    msgd_step(a, model, batch);
    sam_step(b, model, batch, 1e-10);
    for (std::size_t i = 0; i < params.size(); ++i)
        CHECK(a.params.values[i] == doctest::Approx(b.params.values[i]).epsilon(1e-9));
}

TEST_CASE("sam flags and survives a zero gradient") {
    auto land = QuadraticLandscape::diagonal({1.0, 1.0});
    QuadraticObjective obj(land);
    OptimizerState state = quad_state({0.0, 0.0}, 0.1, 0.0, 0.0);
    const StepStats stats = sam_step(state, objective_loss(obj), 0.05);
    CHECK(stats.sam_skipped_ascent);
    CHECK(state.params.values == std::vector<double>{0.0, 0.0});
}

TEST_CASE("entropy-sgd one-step expansion matches by hand") {
    auto land = QuadraticLandscape::diagonal({2.0, 0.5});
    QuadraticObjective obj(land);
    const double lr = 0.1, gamma = 0.5, eta = 0.05, alpha = 0.75;
    const std::vector<double> theta0 = {1.0, -2.0};
    OptimizerState state = quad_state(theta0, lr, 0.0, 0.0);
    EntropySgdConfig cfg;
    cfg.L = 1;
    cfg.gamma = gamma;
    cfg.eta_inner = eta;
    cfg.eps_noise = 0.0;
    cfg.alpha_avg = alpha;
    entropy_sgd_step(
        state,
        [&obj](int, const ParamVector& p, ParamVector& g) {
            g = zeros_like(p);
            obj.grad(p.span(), g.span());
            return obj.value(p.span());
        },
        cfg, 3);

    // mu = (1-a) theta + a (theta - eta H theta); outer dir = gamma a eta H theta
    const double eig[2] = {2.0, 0.5};
    for (int i = 0; i < 2; ++i) {
        const double outer = gamma * alpha * eta * eig[i] * theta0[i];
        CHECK(state.params.values[i] == doctest::Approx(theta0[i] - lr * outer).epsilon(1e-13));
    }
}

TEST_CASE("entropy-sgd rejects a zero scope and repeats deterministically") {
    auto land = QuadraticLandscape::diagonal({1.0});
    QuadraticObjective obj(land);
    EntropySgdConfig cfg;
    cfg.gamma = 0.0;
    OptimizerState state = quad_state({1.0}, 0.1, 0.0, 0.0);
    CHECK_THROWS_AS(entropy_sgd_step(
                        state,
                        [&obj](int, const ParamVector& p, ParamVector& g) {
                            g = zeros_like(p);
                            obj.grad(p.span(), g.span());
                            return obj.value(p.span());
                        },
                        cfg, 3),
                    ConfigError);

    cfg.gamma = 0.3;
    cfg.L = 4;
    cfg.eps_noise = 1e-3;
    auto run = [&]() {
        OptimizerState s = quad_state({1.0}, 0.1, 0.5, 0.0);
        for (int i = 0; i < 3; ++i)
            entropy_sgd_step(
                s,
                [&obj](int, const ParamVector& p, ParamVector& g) {
                    g = zeros_like(p);
                    obj.grad(p.span(), g.span());
                    return obj.value(p.span());
                },
                cfg, 17);
        return s.params.values;
    };
    CHECK(run() == run());
}

TEST_CASE("split count larger than the batch is a config error") {
    Dataset ds = make_synthetic(SyntheticKind::blobs, 3, 2, 2, 9);
    auto [model, params] = build_mlp({2, 3, 2}, 9);
    OptimizerState state{params, std::nullopt, 0, 0.1, 0.0, 0.0};
    LpfConfig cfg;
    cfg.M = 8;
    cfg.T_total = 10;
    CHECK_THROWS_AS(lpf_sgd_step(state, model, full_batch(ds), cfg, 1), ConfigError);
}

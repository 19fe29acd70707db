// Command-line front end: train single runs, compute sharpness measures on
// checkpoints, execute sweeps, reproduce the synthetic-landscape sensitivity
// study, tabulate the stability-bound ratio, and self-check the numerics.
//
// Exit codes: 0 ok, 1 usage/config, 2 parse error, 3 numeric failure.

#include <cmath>
#include <filesystem>
#include <iostream>
#include <numeric>

#include <CLI11.hpp>
#include <json.hpp>

#include "flatmin/analysis.hpp"
#include "flatmin/csv.hpp"
#include "flatmin/error.hpp"
#include "flatmin/harness.hpp"
#include "flatmin/landscape.hpp"
#include "flatmin/rng.hpp"

namespace fm = flatmin;

namespace {

struct CommonOpts {
    std::string config_path;
    std::string out_dir = "out";
    std::string format = "csv";
    std::uint64_t seed = 0;
    bool seed_given = false;
};

void write_manifest(const std::string& out_dir, const nlohmann::json& extra,
                    const std::vector<std::string>& files) {
    nlohmann::json manifest = extra;
    manifest["files"] = files;
    std::ofstream out(out_dir + "/manifest.json");
    out << manifest.dump(2) << "\n";
}

int cmd_train(const CommonOpts& opts) {
    fm::ExperimentConfig cfg = fm::parse_config_file(opts.config_path);
    const std::uint64_t seed = opts.seed_given ? opts.seed : cfg.seeds.front();
    std::filesystem::create_directories(opts.out_dir);
    fm::RunRecord rec = fm::train_to_threshold(cfg, seed, opts.out_dir);

    const std::string runs_path = opts.out_dir + "/runs.csv";
    {
        fm::CsvWriter csv(runs_path,
                          "run_id,seed,converged,epochs_used,final_train_loss,train_error,"
                          "test_error,gap,abort_reason");
        csv.field(rec.run_id)
            .field(rec.seed)
            .field(std::string(rec.converged ? "true" : "false"))
            .field(rec.epochs_used)
            .field(rec.final_train_loss)
            .field(rec.train_error)
            .field(rec.test_error)
            .field(fm::generalization_gap(rec.train_error, rec.test_error))
            .field(rec.abort_reason);
        csv.end_row();
    }
    const std::string measures_path = opts.out_dir + "/measures.csv";
    fm::write_measures_csv(measures_path, {rec});

    write_manifest(opts.out_dir,
                   {{"command", "train"},
                    {"run_id", rec.run_id},
                    {"config_hash", rec.config_hash},
                    {"converged", rec.converged}},
                   {runs_path, measures_path, rec.checkpoint_path, rec.step_log_path});

    std::cout << rec.run_id << ": converged=" << (rec.converged ? "true" : "false")
              << " epochs=" << rec.epochs_used
              << " train_loss=" << fm::fmt_double(rec.final_train_loss)
              << " train_err=" << fm::fmt_double(rec.train_error)
              << " test_err=" << fm::fmt_double(rec.test_error) << "\n";
    return 0;
}

int cmd_measure(const CommonOpts& opts, const std::string& checkpoint,
                const std::string& init_checkpoint) {
    fm::ExperimentConfig cfg = fm::parse_config_file(opts.config_path);
    auto [model, params] = fm::load_checkpoint(checkpoint);
    fm::ParamVector init;
    const fm::ParamVector* init_ptr = nullptr;
    if (!init_checkpoint.empty()) {
        auto loaded = fm::load_checkpoint(init_checkpoint);
        init = std::move(loaded.second);
        init_ptr = &init;
    }
    auto [train, test] = fm::build_datasets(cfg.dataset, 0);
    const std::uint64_t seed = opts.seed_given ? opts.seed : cfg.seeds.front();
    const auto reports = fm::compute_measures(model, params, init_ptr, train, cfg.measures, seed);

    std::filesystem::create_directories(opts.out_dir);
    if (opts.format == "json") {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& r : reports) {
            nlohmann::json jr;
            jr["measure"] = fm::to_string(r.name);
            jr["value"] = r.value;
            jr["dataset_id"] = r.dataset_id;
            jr["config"] = r.config;
            arr.push_back(jr);
        }
        std::ofstream out(opts.out_dir + "/measures.json");
        out << arr.dump(2) << "\n";
    } else {
        fm::RunRecord rec;
        rec.run_id = "checkpoint";
        rec.measures = reports;
        fm::write_measures_csv(opts.out_dir + "/measures.csv", {rec});
    }
    for (const auto& r : reports)
        std::cout << fm::to_string(r.name) << " = " << fm::fmt_double(r.value) << "\n";
    return 0;
}

int cmd_sweep(const CommonOpts& opts) {
    fm::ExperimentConfig cfg = fm::parse_config_file(opts.config_path);
    if (opts.seed_given) {
        // master seed: re-key every configured seed deterministically
        for (std::uint64_t& s : cfg.seeds) s = fm::rng::derive(opts.seed, {s});
    }
    const fm::SweepResult result = fm::run_sweep(cfg, opts.out_dir);
    std::size_t converged = 0;
    for (const auto& r : result.runs) converged += r.converged ? 1 : 0;
    std::cout << "sweep: " << result.runs.size() << " runs, " << converged << " converged, "
              << "artifacts in " << opts.out_dir << "\n";
    return 0;
}

int cmd_landscape(const CommonOpts& opts, const std::string& sweep_kind, std::size_t d,
                  std::vector<double> values, double sigma, int lpf_M) {
    if (values.empty()) throw fm::ConfigError("landscape sweep needs --values");
    std::filesystem::create_directories(opts.out_dir);
    const std::string path = opts.out_dir + "/landscape_sweep.csv";
    fm::CsvWriter csv(path, "sweep_param,sweep_value,measure,oracle_value,estimated_value,seed");

    const std::uint64_t seed = opts.seed;
    for (double value : values) {
        fm::QuadraticLandscape land =
            sweep_kind == "flat_fraction"
                ? fm::sample_flat_fraction(d, static_cast<std::size_t>(value), seed)
                : fm::sample_mean_scaled(d, value, seed);
        fm::QuadraticObjective obj(land);
        const std::vector<double> origin(d, 0.0);
        const auto oracle = fm::oracle_measures(land, sigma);

        const int k = static_cast<int>(std::min<std::size_t>(100, d));
        double tr = 0.0, deff = 0.0, lmax = -1e300;
        const int probes = 10;
        for (int p = 0; p < probes; ++p) {
            const auto est = fm::lanczos_spectrum(obj, origin, k,
                                                  fm::rng::derive(seed, {0x5aULL, static_cast<std::uint64_t>(p)}));
            const auto sm = fm::spectrum_measures(est, d);
            tr += sm.trace_est;
            deff += sm.d_eff;
            lmax = std::max(lmax, sm.lambda_max);
        }
        const std::map<std::string, double> estimates = {
            {"lpf", fm::lpf_measure(obj, origin, sigma, lpf_M, fm::rng::derive(seed, {0x1bULL}))},
            {"lambda_max", lmax},
            {"trace", tr / probes},
            {"d_eff", deff / probes},
            {"hess_frobenius",
             fm::hessian_frobenius(obj, origin, 1000, fm::rng::derive(seed, {0xf2ULL}))},
        };
        for (const auto& [name, oracle_value] : oracle) {
            csv.field(sweep_kind)
                .field(value)
                .field(name)
                .field(oracle_value)
                .field(estimates.at(name))
                .field(seed);
            csv.end_row();
        }
    }
    std::cout << "landscape sweep written to " << path << "\n";
    return 0;
}

int cmd_theory(const CommonOpts& opts, double alpha, double beta, double c,
               std::vector<double> sigmas, std::vector<double> Ts, std::size_t m) {
    if (sigmas.empty() || Ts.empty()) throw fm::ConfigError("theory table needs --sigmas and --Ts");
    std::filesystem::create_directories(opts.out_dir);
    const std::string path = opts.out_dir + "/ge_ratio.csv";
    fm::CsvWriter csv(path,
                      "alpha,beta,c,sigma,T,p,p_hat,rho,smoothing_inactive,unit_threshold_T,"
                      "bound_sgd,bound_lpf");
    for (double sigma : sigmas) {
        for (double T : Ts) {
            const fm::GeBoundInputs inp{alpha, beta, c, T, sigma};
            const fm::GeRatioResult r = fm::ge_ratio(inp);
            csv.field(alpha)
                .field(beta)
                .field(c)
                .field(sigma)
                .field(T)
                .field(r.p)
                .field(r.p_hat)
                .field(r.rho)
                .field(std::string(r.smoothing_inactive ? "true" : "false"))
                .field(fm::ge_ratio_unit_threshold(inp))
                .field(m >= 2 ? fm::fmt_double(fm::ge_bound_sgd(inp, m)) : std::string(""))
                .field(m >= 2 ? fm::fmt_double(fm::ge_bound_lpf(inp, m)) : std::string(""));
            csv.end_row();
        }
    }
    std::cout << "ge-ratio table written to " << path << "\n";
    return 0;
}

// Fast oracle/invariant battery; a smoke test of the numerics that runs in
// seconds rather than the full ctest suite.
int cmd_check() {
    int failures = 0;
    auto check = [&](const char* name, bool ok) {
        std::cout << (ok ? "[ok]   " : "[FAIL] ") << name << "\n";
        if (!ok) ++failures;
    };

    {
        const double g0 = fm::gamma_schedule(0, 100, 0.5, 3.0);
        const double gT = fm::gamma_schedule(100, 100, 0.5, 3.0);
        check("gamma schedule endpoints", g0 == 0.5 && std::abs(gT - 2.0) < 1e-15);
    }
    {
        auto land = fm::QuadraticLandscape::diagonal({4.0, 2.0, 1.0});
        fm::QuadraticObjective obj(land);
        std::vector<double> theta = {1.0, 1.0, 1.0}, g(3);
        obj.grad(theta, g);
        check("quadratic gradient = H theta",
              std::abs(g[0] - 4.0) + std::abs(g[1] - 2.0) + std::abs(g[2] - 1.0) < 1e-12);
    }
    {
        auto land = fm::sample_mean_scaled(30, 5.0, 7);
        fm::QuadraticObjective obj(land);
        const std::vector<double> origin(30, 0.0);
        const auto est = fm::lanczos_spectrum(obj, origin, 30, 3);
        const auto sm = fm::spectrum_measures(est, 30);
        const auto oracle = fm::oracle_measures(land, 0.1);
        check("lanczos lambda_max vs oracle",
              std::abs(sm.lambda_max - oracle.at("lambda_max")) < 1e-6 * oracle.at("lambda_max"));
        const double lpf = fm::lpf_measure(obj, origin, 0.1, 20000, 11);
        check("lpf closed form on quadratic",
              std::abs(lpf - oracle.at("lpf")) < 0.05 * oracle.at("lpf"));
        const double fro = fm::hessian_frobenius(obj, origin, 500, 13);
        check("hutchinson frobenius on quadratic",
              std::abs(fro - oracle.at("hess_frobenius")) < 0.05 * oracle.at("hess_frobenius"));
    }
    {
        std::vector<double> x = {1, 2, 3, 4}, y = {1, 3, 2, 4};
        const auto c = fm::kendall_tau(x, y);
        check("kendall tau on 4-point example", std::abs(c.tau - 4.0 / 6.0) < 1e-15);
    }
    {
        auto [model, params] = fm::build_mlp({2, 8, 8, 2}, 5);
        for (std::size_t i = 0; i < params.size(); ++i) params.values[i] *= (i % 3 == 0) ? 3.0 : 0.5;
        auto [balanced, report] = fm::balance(model, params);
        bool norms_ok = true;
        for (double n : report.per_filter_norms_after) norms_ok &= std::abs(n - 1.0) < 1e-9;
        check("balance: unit filter norms", norms_ok);
        check("balance: function preserved", report.max_output_deviation < 1e-9);
    }
    {
        const fm::GeBoundInputs inp{1.0, 10.0, 0.1, 1e6, 1.0};
        const auto r = fm::ge_ratio(inp);
        const fm::GeBoundInputs flat{1.0, 10.0, 0.1, 1e6, 0.05};
        check("ge ratio < 1 past threshold", r.rho < 1.0 && inp.T > fm::ge_ratio_unit_threshold(inp));
        check("ge ratio = 1 when smoothing inactive", fm::ge_ratio(flat).rho == 1.0);
    }
    {
        const auto rep = fm::smoothing_property_check(fm::scaled_abs(1.0), 0.5, 20000, 17);
        check("smoothing bounds on |x|", rep.lipschitz_ok && rep.smoothness_ok && rep.sandwich_ok);
    }

    std::cout << (failures == 0 ? "all checks passed\n" : "SOME CHECKS FAILED\n");
    return failures == 0 ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"flat-minima training and loss-landscape sharpness toolkit"};
    app.require_subcommand(1);

    CommonOpts opts;
    std::string checkpoint, init_checkpoint;
    std::string sweep_kind = "mean_scaled";
    std::size_t land_d = 100;
    std::vector<double> land_values;
    double land_sigma = 0.1;
    int land_lpf_M = 20000;
    double th_alpha = 1.0, th_beta = 10.0, th_c = 0.1;
    std::vector<double> th_sigmas, th_Ts;
    std::size_t th_m = 0;

    auto add_common = [&](CLI::App* cmd, bool needs_config) {
        auto* c = cmd->add_option("--config", opts.config_path, "experiment config file");
        if (needs_config) c->required();
        cmd->add_option("--out", opts.out_dir, "output directory");
        cmd->add_option("--format", opts.format, "output format")
            ->check(CLI::IsMember({"csv", "json"}));
        cmd->add_option("--seed", opts.seed, "seed override / master seed")
            ->each([&](const std::string&) { opts.seed_given = true; });
    };

    auto* train = app.add_subcommand("train", "train one run to the loss threshold");
    add_common(train, true);

    auto* measure = app.add_subcommand("measure", "compute sharpness measures on a checkpoint");
    add_common(measure, true);
    measure->add_option("--checkpoint", checkpoint, "trained model checkpoint")->required();
    measure->add_option("--init", init_checkpoint,
                        "initial-parameters checkpoint (needed for pac_bayes)");

    auto* sweep = app.add_subcommand("sweep", "run an axis study and correlation report");
    add_common(sweep, true);

    auto* landscape = app.add_subcommand("landscape", "synthetic quadratic landscape sweeps");
    add_common(landscape, false);
    landscape->add_option("--sweep", sweep_kind, "flat_fraction | mean_scaled")
        ->check(CLI::IsMember({"flat_fraction", "mean_scaled"}));
    landscape->add_option("--d", land_d, "landscape dimension");
    landscape->add_option("--values", land_values, "sweep values (K counts or mean eigenvalues)")
        ->delimiter(',');
    landscape->add_option("--sigma", land_sigma, "lpf kernel std");
    landscape->add_option("--lpf-m", land_lpf_M, "lpf MC samples");

    auto* theory = app.add_subcommand("theory", "generalization-bound ratio tables");
    add_common(theory, false);
    theory->add_option("--alpha", th_alpha, "Lipschitz constant");
    theory->add_option("--beta", th_beta, "smoothness constant");
    theory->add_option("--c", th_c, "learning-rate constant");
    theory->add_option("--sigmas", th_sigmas, "kernel stds")->delimiter(',');
    theory->add_option("--Ts", th_Ts, "step counts")->delimiter(',');
    theory->add_option("--m", th_m, "dataset size for absolute bounds");

    auto* check = app.add_subcommand("check", "run the built-in oracle/invariant battery");
    (void)check;

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (train->parsed()) return cmd_train(opts);
        if (measure->parsed()) return cmd_measure(opts, checkpoint, init_checkpoint);
        if (sweep->parsed()) return cmd_sweep(opts);
        if (landscape->parsed())
            return cmd_landscape(opts, sweep_kind, land_d, land_values, land_sigma, land_lpf_M);
        if (theory->parsed()) return cmd_theory(opts, th_alpha, th_beta, th_c, th_sigmas, th_Ts, th_m);
        if (check->parsed()) return cmd_check();
    } catch (const fm::ParseError& e) {
        std::cerr << "parse error: " << e.what() << "\n";
        return 2;
    } catch (const fm::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const fm::Error& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    }
    return 1;
}

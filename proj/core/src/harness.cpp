#include "flatmin/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <memory>
#include <numeric>

#include <json.hpp>

#include "flatmin/analysis.hpp"
#include "flatmin/csv.hpp"
#include "flatmin/error.hpp"
#include "flatmin/landscape.hpp"
#include "flatmin/rng.hpp"

namespace flatmin {

namespace {

// Dataset construction is keyed off a fixed seed so that every run and every
// training seed in a sweep sees the same data; run seeds only drive
// initialization, shuffling and optimizer noise.
constexpr std::uint64_t kDatasetSeed = 0x5eedULL;

Dataset slice_dataset(const Dataset& src, std::size_t begin, std::size_t count) {
    Dataset out;
    out.inputs = Matrix(count, src.inputs.cols);
    out.labels.resize(count);
    for (std::size_t r = 0; r < count; ++r) {
        std::copy(src.inputs.row(begin + r).begin(), src.inputs.row(begin + r).end(),
                  out.inputs.row(r).begin());
        out.labels[r] = src.labels[begin + r];
    }
    out.num_classes = src.num_classes;
    out.provenance = src.provenance;
    return out;
}

Dataset base_dataset(const DatasetSpec& spec, Split split) {
    if (spec.kind == "synthetic") {
        // one pooled draw split into train/test so both come from the same
        // generator state (blob centers etc.), not just the same law
        const SyntheticKind kind = synthetic_from_string(spec.synthetic_kind);
        Dataset all = make_synthetic(kind, spec.n_train + spec.n_test, spec.d, spec.classes,
                                     kDatasetSeed);
        Dataset ds = split == Split::train ? slice_dataset(all, 0, spec.n_train)
                                           : slice_dataset(all, spec.n_train, spec.n_test);
        ds.split = split;
        return ds;
    }
    if (spec.kind == "csv") {
        Dataset ds = load_csv(split == Split::train ? spec.csv_train : spec.csv_test);
        ds.split = split;
        return ds;
    }
    if (spec.kind == "idx") {
        Dataset ds = load_idx(split == Split::train ? spec.idx_train_images : spec.idx_test_images,
                              split == Split::train ? spec.idx_train_labels : spec.idx_test_labels);
        ds.split = split;
        return ds;
    }
    throw ConfigError("unknown dataset kind '" + spec.kind + "'");
}

std::string dataset_id(const Dataset& ds) {
    std::string id = ds.provenance.source;
    if (ds.provenance.label_noise_alpha > 0.0)
        id += "+label" + fmt_double(ds.provenance.label_noise_alpha);
    if (ds.provenance.data_noise_sigma > 0.0)
        id += "+data" + fmt_double(ds.provenance.data_noise_sigma);
    return id;
}

}  // namespace

std::pair<Dataset, Dataset> build_datasets(const DatasetSpec& spec, std::uint64_t /*seed*/) {
    Dataset train = base_dataset(spec, Split::train);
    Dataset test = base_dataset(spec, Split::test);
    // corruption protocols touch the training split only
    if (spec.label_noise_alpha > 0.0)
        train = inject_label_noise(train, spec.label_noise_alpha, rng::derive(kDatasetSeed, {11}));
    if (spec.data_noise_sigma > 0.0)
        train = inject_data_noise(train, spec.data_noise_sigma, rng::derive(kDatasetSeed, {12}));
    if (train.num_classes < test.num_classes) train.num_classes = test.num_classes;
    if (test.num_classes < train.num_classes) test.num_classes = train.num_classes;
    return {std::move(train), std::move(test)};
}

std::vector<MeasureReport> compute_measures(const Model& model, const ParamVector& params,
                                            const ParamVector* initial_params, const Dataset& data,
                                            const MeasureSpec& spec, std::uint64_t seed) {
    // measures assume a balanced network; canonicalize first where the
    // architecture allows it
    ParamVector at = params;
    const bool all_relu = std::all_of(model.hidden_activations.begin(),
                                      model.hidden_activations.end(),
                                      [](Activation a) { return a == Activation::relu; });
    if (all_relu && model.num_layers() > 1) at = balance(model, params).first;

    const Batch full = full_batch(data);
    DatasetLossObjective obj(model, full);
    const std::string ds_id = dataset_id(data);

    std::vector<MeasureReport> reports;
    auto add = [&](MeasureKind kind, double value, std::map<std::string, std::string> config) {
        MeasureReport r;
        r.name = kind;
        r.value = value;
        r.config = std::move(config);
        r.dataset_id = ds_id;
        reports.push_back(std::move(r));
    };

    // the three spectrum measures share one set of Lanczos runs
    const bool wants_spectrum =
        std::any_of(spec.list.begin(), spec.list.end(), [](MeasureKind k) {
            return k == MeasureKind::lambda_max || k == MeasureKind::trace ||
                   k == MeasureKind::d_eff;
        });
    SpectrumMeasures spectrum{};
    int lanczos_k = 0;
    if (wants_spectrum) {
        lanczos_k = static_cast<int>(
            std::min<std::size_t>(static_cast<std::size_t>(spec.lanczos_k), obj.dim()));
        double tr_acc = 0.0, deff_acc = 0.0, lmax = -1e300;
        for (int p = 0; p < spec.spectrum_probes; ++p) {
            const SpectrumEstimate est =
                lanczos_spectrum(obj, at.span(), lanczos_k, rng::derive(seed, {0x5aULL, static_cast<std::uint64_t>(p)}));
            const SpectrumMeasures sm = spectrum_measures(est, obj.dim());
            tr_acc += sm.trace_est;
            deff_acc += sm.d_eff;
            lmax = std::max(lmax, sm.lambda_max);
        }
        spectrum.trace_est = tr_acc / spec.spectrum_probes;
        spectrum.d_eff = deff_acc / spec.spectrum_probes;
        spectrum.lambda_max = lmax;
    }

    for (MeasureKind kind : spec.list) {
        switch (kind) {
            case MeasureKind::lpf:
                add(kind,
                    lpf_measure(obj, at.span(), spec.lpf_sigma, spec.lpf_M,
                                rng::derive(seed, {0x1bULL})),
                    {{"sigma", fmt_double(spec.lpf_sigma)},
                     {"M", std::to_string(spec.lpf_M)},
                     {"seed", std::to_string(seed)}});
                break;
            case MeasureKind::eps_sharpness: {
                const EpsSharpnessResult r = eps_sharpness(obj, at.span(), spec.epsilon, spec.psi);
                add(kind, r.value,
                    {{"epsilon", fmt_double(spec.epsilon)},
                     {"psi", fmt_double(spec.psi)},
                     {"achieved_deviation", fmt_double(r.achieved_deviation)}});
                break;
            }
            case MeasureKind::pac_bayes: {
                if (initial_params == nullptr)
                    throw ConfigError("pac_bayes needs the initial parameter vector");
                const PacBayesResult r = pac_bayes_measure(
                    obj, at.span(), initial_params->span(), obj.num_examples(),
                    spec.pac_bayes_M, spec.psi, spec.pac_bayes_delta, rng::derive(seed, {0xacULL}));
                add(kind, r.value,
                    {{"sigma", fmt_double(r.sigma_found)},
                     {"M", std::to_string(spec.pac_bayes_M)},
                     {"psi", fmt_double(spec.psi)},
                     {"delta", fmt_double(spec.pac_bayes_delta)},
                     {"achieved_deviation", fmt_double(r.achieved_deviation)},
                     {"seed", std::to_string(seed)}});
                break;
            }
            case MeasureKind::frn:
                add(kind, fisher_rao_norm(obj, at.span()), {});
                break;
            case MeasureKind::hess_frobenius:
                add(kind,
                    hessian_frobenius(obj, at.span(), spec.frobenius_M,
                                      rng::derive(seed, {0xf2ULL})),
                    {{"M", std::to_string(spec.frobenius_M)}, {"seed", std::to_string(seed)}});
                break;
            case MeasureKind::lambda_max:
                add(kind, spectrum.lambda_max,
                    {{"k", std::to_string(lanczos_k)},
                     {"probes", std::to_string(spec.spectrum_probes)},
                     {"seed", std::to_string(seed)}});
                break;
            case MeasureKind::trace:
                add(kind, spectrum.trace_est,
                    {{"k", std::to_string(lanczos_k)},
                     {"probes", std::to_string(spec.spectrum_probes)},
                     {"seed", std::to_string(seed)}});
                break;
            case MeasureKind::d_eff:
                add(kind, spectrum.d_eff,
                    {{"k", std::to_string(lanczos_k)},
                     {"probes", std::to_string(spec.spectrum_probes)},
                     {"seed", std::to_string(seed)}});
                break;
            case MeasureKind::shannon_entropy:
                add(kind, shannon_entropy(model, at, full), {});
                break;
            case MeasureKind::local_entropy_grad: {
                if (!spec.le_gamma)
                    throw ConfigError(
                        "local_entropy_grad needs measures.le.gamma (no default exists)");
                add(kind,
                    local_entropy_grad_norm(obj, at.span(), spec.le_L, *spec.le_gamma,
                                            spec.le_eta, spec.le_eps, spec.le_alpha_avg,
                                            rng::derive(seed, {0x1eULL})),
                    {{"L", std::to_string(spec.le_L)},
                     {"gamma", fmt_double(*spec.le_gamma)},
                     {"eta", fmt_double(spec.le_eta)},
                     {"eps", fmt_double(spec.le_eps)},
                     {"alpha_avg", fmt_double(spec.le_alpha_avg)},
                     {"seed", std::to_string(seed)}});
                break;
            }
        }
    }
    return reports;
}

RunRecord train_to_threshold(const ExperimentConfig& cfg, std::uint64_t seed,
                             const std::string& out_dir, const std::string& run_tag) {
    if (cfg.stop.loss_threshold <= 0.0) throw ConfigError("stop.loss_threshold must be > 0");
    if (cfg.batch_size < 1) throw ConfigError("train.batch_size must be >= 1");

    auto [train, test] = build_datasets(cfg.dataset, seed);

    std::vector<std::size_t> sizes;
    sizes.push_back(train.inputs.cols);
    for (std::size_t h : cfg.model.hidden) sizes.push_back(h);
    sizes.push_back(train.num_classes);

    auto [model, init_params] = build_mlp(sizes, rng::derive(seed, {0x171ULL}));
    if (cfg.model.activation != Activation::relu)
        model.hidden_activations.assign(model.hidden_activations.size(), cfg.model.activation);

    RunRecord rec;
    rec.seed = seed;
    rec.config_hash = config_hash(cfg);
    rec.run_id = run_tag.empty() ? ("run_" + rec.config_hash.substr(0, 8) + "_s" + std::to_string(seed))
                                 : (run_tag + "_s" + std::to_string(seed));

    OptimizerState state;
    state.params = init_params;
    state.lr = cfg.optimizer.lr;
    state.momentum = cfg.optimizer.momentum;
    state.weight_decay = cfg.optimizer.weight_decay;

    const std::size_t n = train.size();
    const std::size_t batch = std::min(cfg.batch_size, n);
    const std::size_t steps_per_epoch = (n + batch - 1) / batch;
    LpfConfig lpf = cfg.optimizer.lpf;
    lpf.T_total = std::max<std::uint64_t>(
        1, static_cast<std::uint64_t>(cfg.stop.max_epochs) * steps_per_epoch);

    std::unique_ptr<CsvWriter> step_log;
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        rec.step_log_path = out_dir + "/" + rec.run_id + "_steps.csv";
        step_log = std::make_unique<CsvWriter>(rec.step_log_path,
                                               "step,optimizer,loss,grad_norm,gamma_t,wallclock_ns");
    }

    const Batch full = full_batch(train);
    double full_loss = forward(model, state.params, full).loss;
    bool aborted = false;
    std::size_t steps_run = 0;

    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    for (int epoch = 0; epoch < cfg.stop.max_epochs && !aborted; ++epoch) {
        if (full_loss <= cfg.stop.loss_threshold) break;
        // per-epoch Fisher-Yates shuffle from a keyed sub-stream
        rng::Stream shuffle = rng::substream(seed, {0x5f1eULL, static_cast<std::uint64_t>(epoch)});
        for (std::size_t i = n; i > 1; --i) {
            const std::size_t j = shuffle.uniform_index(i);
            std::swap(perm[i - 1], perm[j]);
        }
        try {
            for (std::size_t start = 0; start < n; start += batch) {
                const std::size_t len = std::min(batch, n - start);
                const Batch mini = take_batch(
                    train, std::vector<std::size_t>(perm.begin() + start, perm.begin() + start + len));
                const auto t0 = std::chrono::steady_clock::now();
                StepStats stats;
                if (cfg.optimizer.name == "msgd") {
                    stats = msgd_step(state, model, mini);
                } else if (cfg.optimizer.name == "lpf_sgd") {
                    stats = lpf_sgd_step(state, model, mini, lpf, seed);
                } else if (cfg.optimizer.name == "sam") {
                    stats = sam_step(state, model, mini, cfg.optimizer.sam_rho);
                } else if (cfg.optimizer.name == "entropy_sgd") {
                    const std::uint64_t step_now = state.step;
                    BatchSource src = [&train, &cfg, seed, step_now](int k) {
                        rng::Stream pick = rng::substream(
                            seed, {0xe5baULL, step_now, static_cast<std::uint64_t>(k)});
                        std::vector<std::size_t> idx(std::min(cfg.batch_size, train.size()));
                        for (auto& i : idx) i = pick.uniform_index(train.size());
                        return take_batch(train, idx);
                    };
                    stats = entropy_sgd_step(state, model, src, cfg.optimizer.entropy, seed);
                } else {
                    throw ConfigError("unknown optimizer '" + cfg.optimizer.name + "'");
                }
                ++steps_run;
                if (step_log) {
                    const auto ns = std::chrono::duration_cast<std::chrono::nanoseconds>(
                                        std::chrono::steady_clock::now() - t0)
                                        .count();
                    step_log->field(state.step - 1)
                        .field(cfg.optimizer.name)
                        .field(stats.loss)
                        .field(stats.grad_norm)
                        .field(stats.gamma)
                        .field(static_cast<std::uint64_t>(ns));
                    step_log->end_row();
                }
            }
        } catch (const NumericError& e) {
            aborted = true;
            rec.abort_reason = e.what();
        }
        if (!aborted) {
            full_loss = forward(model, state.params, full).loss;
            rec.epochs_used = epoch + 1;
            if (!std::isfinite(full_loss) || full_loss > 1e6) {
                aborted = true;
                rec.abort_reason = "diverged: train loss " + fmt_double(full_loss) + " at epoch " +
                                   std::to_string(epoch + 1);
            }
        }
    }

    rec.final_train_loss = full_loss;
    rec.converged = !aborted && full_loss <= cfg.stop.loss_threshold;
    rec.train_error = error_rate(model, state.params, train);
    rec.test_error = error_rate(model, state.params, test);

    if (!out_dir.empty()) {
        rec.checkpoint_path = out_dir + "/" + rec.run_id + ".ckpt";
        save_checkpoint(model, state.params, rec.checkpoint_path);
        // keep the starting point too; the pac-bayes measure needs it
        save_checkpoint(model, init_params, out_dir + "/" + rec.run_id + "_init.ckpt");
    }

    const bool want_measures = !cfg.measures.list.empty() && steps_run > 0 && !aborted &&
                               (rec.converged || cfg.measures.on_nonconverged);
    if (want_measures) {
        try {
            rec.measures = compute_measures(model, state.params, &init_params, train,
                                            cfg.measures, seed);
        } catch (const Error& e) {
            rec.abort_reason = std::string("measures: ") + e.what();
        }
    }
    return rec;
}

void write_measures_csv(const std::string& path, const std::vector<RunRecord>& runs) {
    CsvWriter csv(path, "run_id,measure,value,sigma,M,epsilon,psi,seed");
    for (const RunRecord& run : runs) {
        for (const MeasureReport& m : run.measures) {
            auto get = [&m](const char* key) -> std::string {
                const auto it = m.config.find(key);
                return it == m.config.end() ? "" : it->second;
            };
            csv.field(run.run_id)
                .field(to_string(m.name))
                .field(m.value)
                .field(get("sigma"))
                .field(get("M"))
                .field(get("epsilon"))
                .field(get("psi"))
                .field(get("seed"));
            csv.end_row();
        }
    }
}

SweepResult run_sweep(const ExperimentConfig& cfg, const std::string& out_dir) {
    const std::vector<std::string> axes = {"hyperparam", "label_noise", "data_noise", "width"};
    if (std::find(axes.begin(), axes.end(), cfg.sweep.axis) == axes.end())
        throw ConfigError("sweep.axis must be one of hyperparam/label_noise/data_noise/width");
    if (cfg.sweep.values.empty()) throw ConfigError("sweep.values must be non-empty");
    if (cfg.sweep.axis == "hyperparam" && cfg.sweep.param.empty())
        throw ConfigError("hyperparam sweeps need sweep.param");
    if (cfg.seeds.empty()) throw ConfigError("sweep needs at least one seed");

    std::filesystem::create_directories(out_dir);
    SweepResult result;

    for (std::size_t vi = 0; vi < cfg.sweep.values.size(); ++vi) {
        const double value = cfg.sweep.values[vi];
        ExperimentConfig point = cfg;
        if (cfg.sweep.axis == "hyperparam") {
            apply_config_value(point, cfg.sweep.param, value);
        } else if (cfg.sweep.axis == "label_noise") {
            point.dataset.label_noise_alpha = value;
        } else if (cfg.sweep.axis == "data_noise") {
            point.dataset.data_noise_sigma = value;
        } else {  // width
            for (std::size_t& h : point.model.hidden)
                h = static_cast<std::size_t>(value);
        }
        for (std::uint64_t seed : cfg.seeds) {
            RunRecord rec =
                train_to_threshold(point, seed, out_dir, "ax" + std::to_string(vi));
            rec.axis_value = value;
            result.runs.push_back(std::move(rec));
        }
    }

    // runs.csv: one row per run
    const std::string runs_path = out_dir + "/runs.csv";
    {
        CsvWriter csv(runs_path,
                      "run_id,axis,axis_value,seed,converged,epochs_used,final_train_loss,"
                      "train_error,test_error,gap,abort_reason");
        for (const RunRecord& r : result.runs) {
            csv.field(r.run_id)
                .field(cfg.sweep.axis)
                .field(r.axis_value)
                .field(r.seed)
                .field(std::string(r.converged ? "true" : "false"))
                .field(r.epochs_used)
                .field(r.final_train_loss)
                .field(r.train_error)
                .field(r.test_error)
                .field(generalization_gap(r.train_error, r.test_error))
                .field(r.abort_reason);
            csv.end_row();
        }
    }
    result.artifact_paths.push_back(runs_path);

    const std::string measures_path = out_dir + "/measures.csv";
    write_measures_csv(measures_path, result.runs);
    result.artifact_paths.push_back(measures_path);

    // per-axis-value summary over completed (non-aborted) runs
    const std::string summary_path = out_dir + "/axis_summary.csv";
    {
        CsvWriter csv(summary_path,
                      "axis,axis_value,n_runs,n_converged,mean_train_error,mean_test_error,mean_gap");
        for (double value : cfg.sweep.values) {
            std::size_t n_runs = 0, n_conv = 0, n_done = 0;
            double tr = 0.0, te = 0.0;
            for (const RunRecord& r : result.runs) {
                if (r.axis_value != value) continue;
                ++n_runs;
                if (r.converged) ++n_conv;
                if (r.abort_reason.empty()) {
                    ++n_done;
                    tr += r.train_error;
                    te += r.test_error;
                }
            }
            const double dn = n_done > 0 ? static_cast<double>(n_done) : 1.0;
            csv.field(cfg.sweep.axis)
                .field(value)
                .field(n_runs)
                .field(n_conv)
                .field(tr / dn)
                .field(te / dn)
                .field((te - tr) / dn);
            csv.end_row();
        }
    }
    result.artifact_paths.push_back(summary_path);

    // correlation over converged runs only: measures and gap are averaged
    // over seeds per axis value, then rank-correlated across the axis
    const std::string corr_path = out_dir + "/correlation.csv";
    {
        CsvWriter csv(corr_path, "measure,axis,tau,ci95,n");
        std::vector<MeasureKind> kinds = cfg.measures.list;
        for (MeasureKind kind : kinds) {
            std::vector<double> xs, ys;
            for (double value : cfg.sweep.values) {
                double gap_acc = 0.0, mv_acc = 0.0;
                std::size_t count = 0;
                for (const RunRecord& r : result.runs) {
                    if (r.axis_value != value || !r.converged) continue;
                    for (const MeasureReport& m : r.measures) {
                        if (m.name != kind) continue;
                        gap_acc += generalization_gap(r.train_error, r.test_error);
                        mv_acc += m.value;
                        ++count;
                        break;
                    }
                }
                if (count > 0) {
                    xs.push_back(mv_acc / count);
                    ys.push_back(gap_acc / count);
                }
            }
            if (xs.size() < 2) {
                std::cerr << "warning: axis '" << cfg.sweep.axis << "': fewer than 2 converged "
                          << "points for measure " << to_string(kind) << ", correlation skipped\n";
                continue;
            }
            try {
                const CorrelationResult c = kendall_tau(xs, ys);
                csv.field(to_string(kind))
                    .field(cfg.sweep.axis)
                    .field(c.tau)
                    .field(c.ci95_halfwidth)
                    .field(c.n);
                csv.end_row();
            } catch (const UndefinedCorrelationError& e) {
                std::cerr << "warning: correlation for " << to_string(kind)
                          << " undefined: " << e.what() << "\n";
            }
        }
    }
    result.artifact_paths.push_back(corr_path);

    // manifest indexes every artifact of the sweep
    nlohmann::json manifest;
    manifest["config_hash"] = config_hash(cfg);
    manifest["axis"] = cfg.sweep.axis;
    manifest["axis_values"] = cfg.sweep.values;
    manifest["seeds"] = cfg.seeds;
    nlohmann::json runs = nlohmann::json::array();
    for (const RunRecord& r : result.runs) {
        nlohmann::json jr;
        jr["run_id"] = r.run_id;
        jr["seed"] = r.seed;
        jr["axis_value"] = r.axis_value;
        jr["converged"] = r.converged;
        jr["epochs_used"] = r.epochs_used;
        // paths are stored relative to the sweep directory so two runs of
        // the same sweep compare byte-identical wherever they land
        jr["checkpoint"] = std::filesystem::path(r.checkpoint_path).filename().string();
        jr["step_log"] = std::filesystem::path(r.step_log_path).filename().string();
        runs.push_back(jr);
    }
    manifest["runs"] = runs;
    nlohmann::json files = nlohmann::json::array();
    for (const std::string& p : result.artifact_paths)
        files.push_back(std::filesystem::path(p).filename().string());
    manifest["files"] = files;
    const std::string manifest_path = out_dir + "/manifest.json";
    {
        std::ofstream out(manifest_path);
        out << manifest.dump(2) << "\n";
    }
    result.artifact_paths.push_back(manifest_path);
    return result;
}

}  // namespace flatmin

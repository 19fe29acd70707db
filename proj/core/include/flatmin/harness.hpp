#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "flatmin/dataset.hpp"
#include "flatmin/optim.hpp"
#include "flatmin/sharpness.hpp"

namespace flatmin {

struct DatasetSpec {
    std::string kind = "synthetic";  // synthetic | csv | idx
    std::string synthetic_kind = "blobs";
    std::size_t n_train = 1000;
    std::size_t n_test = 1000;
    std::size_t d = 2;
    std::size_t classes = 2;
    std::string csv_train, csv_test;
    std::string idx_train_images, idx_train_labels, idx_test_images, idx_test_labels;
    double label_noise_alpha = 0.0;  // applied to the train split
    double data_noise_sigma = 0.0;
};

struct ModelSpec {
    std::vector<std::size_t> hidden = {16};
    Activation activation = Activation::relu;
};

struct OptimizerSpec {
    std::string name = "msgd";  // msgd | lpf_sgd | sam | entropy_sgd
    double lr = 0.01;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    LpfConfig lpf;
    double sam_rho = 0.05;
    EntropySgdConfig entropy;
};

struct StopRule {
    double loss_threshold = 0.01;
    int max_epochs = 300;
};

struct MeasureSpec {
    std::vector<MeasureKind> list;
    double lpf_sigma = 0.01;
    int lpf_M = 1000;
    double epsilon = 0.1;
    double psi = 1e-3;
    int pac_bayes_M = 1000;
    double pac_bayes_delta = 0.05;
    int lanczos_k = 100;        // clamped to the parameter count
    int spectrum_probes = 10;   // start vectors averaged for trace / d_eff
    int frobenius_M = 1000;
    int le_L = 20;
    std::optional<double> le_gamma;  // required when the LE measure is requested
    double le_eta = 0.1;
    double le_eps = 1e-4;
    double le_alpha_avg = 0.75;
    bool on_nonconverged = true;
};

struct SweepSpec {
    std::string axis;  // hyperparam | label_noise | data_noise | width
    std::vector<double> values;
    std::string param;  // dotted config key, hyperparam axis only
};

struct ExperimentConfig {
    DatasetSpec dataset;
    ModelSpec model;
    OptimizerSpec optimizer;
    StopRule stop;
    MeasureSpec measures;
    SweepSpec sweep;
    std::vector<std::uint64_t> seeds = {0};
    std::size_t batch_size = 128;
    std::string output_dir = "out";
};

// Line-oriented `section.key = value` file; unknown keys are hard errors.
ExperimentConfig parse_config_file(const std::string& path);
ExperimentConfig parse_config_text(const std::string& text, const std::string& origin);

// Re-points one numeric config field by its dotted key (sweep machinery).
void apply_config_value(ExperimentConfig& cfg, const std::string& key, double value);

std::string config_hash(const ExperimentConfig& cfg);

struct RunRecord {
    std::string run_id;
    std::string config_hash;
    std::uint64_t seed = 0;
    double axis_value = 0.0;
    double final_train_loss = 0.0;
    double train_error = 0.0;
    double test_error = 0.0;
    int epochs_used = 0;
    bool converged = false;
    std::string abort_reason;
    std::vector<MeasureReport> measures;
    std::string step_log_path;
    std::string checkpoint_path;
};

// Builds train/test datasets per spec (noise applied to the train split).
std::pair<Dataset, Dataset> build_datasets(const DatasetSpec& spec, std::uint64_t seed);

// Trains with shuffled mini-batches until the full-train loss crosses the
// threshold or the epoch budget runs out; balances the network and computes
// the configured measures on completed runs. Artifacts (checkpoint, step
// log) are written under out_dir when it is non-empty.
RunRecord train_to_threshold(const ExperimentConfig& cfg, std::uint64_t seed,
                             const std::string& out_dir = "", const std::string& run_tag = "");

struct SweepResult {
    std::vector<RunRecord> runs;
    std::vector<std::string> artifact_paths;
};

// Executes |axis values| x |seeds| runs, then writes runs.csv, measures.csv,
// axis_summary.csv, correlation.csv (converged runs only) and manifest.json
// under out_dir.
SweepResult run_sweep(const ExperimentConfig& cfg, const std::string& out_dir);

// Measures on a parameter vector; balances first when hidden units are ReLU.
std::vector<MeasureReport> compute_measures(const Model& model, const ParamVector& params,
                                            const ParamVector* initial_params, const Dataset& data,
                                            const MeasureSpec& spec, std::uint64_t seed);

void write_measures_csv(const std::string& path, const std::vector<RunRecord>& runs);

}  // namespace flatmin

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "flatmin/csv.hpp"
#include "flatmin/dataset.hpp"
#include "flatmin/error.hpp"
#include "flatmin/harness.hpp"
#include "flatmin/rng.hpp"

using namespace flatmin;

namespace {

std::filesystem::path scratch_dir() {
    const auto dir = std::filesystem::temp_directory_path() / "flatmin_harness_tests";
    std::filesystem::create_directories(dir);
    return dir;
}

void write_be32(std::ofstream& out, std::uint32_t v) {
    const unsigned char bytes[4] = {static_cast<unsigned char>(v >> 24),
                                    static_cast<unsigned char>(v >> 16),
                                    static_cast<unsigned char>(v >> 8),
                                    static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(bytes), 4);
}

void write_idx_pair(const std::string& images, const std::string& labels, std::uint32_t n,
                    std::uint32_t rows, std::uint32_t cols, std::uint32_t image_magic = 0x803,
                    std::uint32_t label_magic = 0x801) {
    std::ofstream img(images, std::ios::binary);
    write_be32(img, image_magic);
    write_be32(img, n);
    write_be32(img, rows);
    write_be32(img, cols);
    for (std::uint32_t i = 0; i < n * rows * cols; ++i) {
        const char pix = static_cast<char>(i % 256);
        img.write(&pix, 1);
    }
    std::ofstream lab(labels, std::ios::binary);
    write_be32(lab, label_magic);
    write_be32(lab, n);
    for (std::uint32_t i = 0; i < n; ++i) {
        const char c = static_cast<char>(i % 10);
        lab.write(&c, 1);
    }
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// step logs carry a wallclock column that legitimately differs between runs
std::string strip_last_column(const std::string& csv) {
    std::string out;
    std::stringstream ss(csv);
    std::string line;
    while (std::getline(ss, line)) {
        const auto pos = line.rfind(',');
        out += line.substr(0, pos);
        out += '\n';
    }
    return out;
}

const char* kSmallConfig = R"(
dataset.kind = synthetic
dataset.synthetic.kind = blobs
dataset.synthetic.n_train = 120
dataset.synthetic.n_test = 120
dataset.synthetic.d = 2
dataset.synthetic.classes = 2
model.hidden = 8
train.batch_size = 30
optimizer.name = msgd
optimizer.lr = 0.1
optimizer.momentum = 0.9
optimizer.weight_decay = 0.0001
stop.loss_threshold = 0.05
stop.max_epochs = 200
measures.list = lpf,shannon_entropy
measures.lpf.M = 50
seeds = 1,2
)";

}  // namespace

TEST_CASE("idx files load with scaling and validation") {
    const auto dir = scratch_dir();
    const std::string images = dir / "imgs.idx";
    const std::string labels = dir / "labs.idx";
    write_idx_pair(images, labels, 10, 28, 28);
    const Dataset ds = load_idx(images, labels);
    CHECK(ds.size() == 10);
    CHECK(ds.inputs.cols == 784);
    for (double v : ds.inputs.data) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    CHECK(ds.labels[3] == 3);

    write_idx_pair(images, labels, 4, 4, 4, 0x42);
    CHECK_THROWS_WITH_AS(load_idx(images, labels), doctest::Contains("byte 0"), ParseError);
}

TEST_CASE("csv datasets round-trip through files") {
    const auto dir = scratch_dir();
    const std::string path = dir / "ds.csv";
    Dataset ds = make_synthetic(SyntheticKind::moons, 50, 2, 2, 5);
    save_csv(ds, path);
    const Dataset back = load_csv(path);
    CHECK(back.size() == ds.size());
    CHECK(back.labels == ds.labels);
    for (std::size_t i = 0; i < ds.inputs.data.size(); ++i)
        CHECK(back.inputs.data[i] == doctest::Approx(ds.inputs.data[i]).epsilon(1e-12));
}

TEST_CASE("csv parser names the offending line") {
    const auto dir = scratch_dir();
    const std::string path = dir / "bad.csv";
    {
        std::ofstream out(path);
        out << "x0,x1,label\n0.5,1.5,0\n0.25,oops,1\n";
    }
    CHECK_THROWS_WITH_AS(load_csv(path), doctest::Contains("line 3"), ParseError);
    {
        std::ofstream out(path);
        out << "0.5,1.5,0\n0.25,1\n";
    }
    CHECK_THROWS_WITH_AS(load_csv(path), doctest::Contains("ragged"), ParseError);
    {
        std::ofstream out(path);
        out << "0.5,1.5,-2\n";
    }
    CHECK_THROWS_WITH_AS(load_csv(path), doctest::Contains("label"), ParseError);
}

TEST_CASE("synthetic generators are deterministic") {
    const Dataset a = make_synthetic(SyntheticKind::blobs, 100, 3, 2, 0);
    const Dataset b = make_synthetic(SyntheticKind::blobs, 100, 3, 2, 0);
    CHECK(a.inputs.data == b.inputs.data);
    CHECK(a.labels == b.labels);
    const Dataset c = make_synthetic(SyntheticKind::spirals, 64, 2, 2, 9);
    CHECK(c.num_classes == 2);
}

TEST_CASE("label noise hits its flip rate and never keeps the true class") {
    Dataset ds = make_synthetic(SyntheticKind::blobs, 10000, 2, 4, 3);
    const Dataset zero = inject_label_noise(ds, 0.0, 7);
    CHECK(zero.labels == ds.labels);

    const Dataset all = inject_label_noise(ds, 1.0, 7);
    for (std::size_t i = 0; i < ds.size(); ++i) CHECK(all.labels[i] != ds.labels[i]);

    const Dataset some = inject_label_noise(ds, 0.3, 7);
    std::size_t flips = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) flips += some.labels[i] != ds.labels[i] ? 1 : 0;
    const double rate = static_cast<double>(flips) / 10000.0;
    CHECK(rate > 0.28);
    CHECK(rate < 0.32);
    CHECK(some.provenance.label_noise_alpha == 0.3);

    Dataset single = ds;
    single.num_classes = 1;
    CHECK_THROWS_AS(inject_label_noise(single, 0.5, 7), ConfigError);
}

TEST_CASE("data noise perturbs inputs with the requested spread and spares labels") {
    Dataset ds = make_synthetic(SyntheticKind::blobs, 50000, 2, 2, 11);
    const Dataset same = inject_data_noise(ds, 0.0, 13);
    CHECK(same.inputs.data == ds.inputs.data);

    const double sigma = 0.7;
    const Dataset noisy = inject_data_noise(ds, sigma, 13);
    CHECK(noisy.labels == ds.labels);
    double acc = 0.0;
    for (std::size_t i = 0; i < ds.inputs.data.size(); ++i) {
        const double diff = noisy.inputs.data[i] - ds.inputs.data[i];
        acc += diff * diff;
    }
    const double sd = std::sqrt(acc / static_cast<double>(ds.inputs.data.size()));
    CHECK(sd > sigma * 0.98);
    CHECK(sd < sigma * 1.02);
}

TEST_CASE("noise injection commutes with dataset serialization") {
    const auto dir = scratch_dir();
    const std::string path = dir / "commute.csv";
    Dataset ds = make_synthetic(SyntheticKind::blobs, 200, 2, 3, 17);
    const Dataset inject_first = inject_label_noise(ds, 0.4, 23);
    save_csv(ds, path);
    const Dataset inject_after = inject_label_noise(load_csv(path), 0.4, 23);
    CHECK(inject_first.labels == inject_after.labels);
}

TEST_CASE("training converges on separable blobs and records the run") {
    ExperimentConfig cfg = parse_config_text(kSmallConfig, "inline");
    const RunRecord rec = train_to_threshold(cfg, 1);
    CHECK(rec.converged);
    CHECK(rec.epochs_used <= 200);
    CHECK(rec.final_train_loss <= 0.05);
    CHECK(rec.measures.size() == 2);
    CHECK(rec.train_error < 0.05);
}

TEST_CASE("divergence aborts the run with a recorded reason") {
    ExperimentConfig cfg = parse_config_text(kSmallConfig, "inline");
    cfg.optimizer.lr = 1e8;  // guaranteed blow-up
    cfg.stop.max_epochs = 20;
    const RunRecord rec = train_to_threshold(cfg, 1);
    CHECK_FALSE(rec.converged);
    CHECK_FALSE(rec.abort_reason.empty());
    CHECK(rec.measures.empty());
}

TEST_CASE("a zero epoch budget yields a non-converged run without measures") {
    ExperimentConfig cfg = parse_config_text(kSmallConfig, "inline");
    cfg.stop.max_epochs = 0;
    const RunRecord rec = train_to_threshold(cfg, 1);
    CHECK_FALSE(rec.converged);
    CHECK(rec.epochs_used == 0);
    CHECK(rec.measures.empty());
}

TEST_CASE("identical config and seed reproduce the run exactly") {
    ExperimentConfig cfg = parse_config_text(kSmallConfig, "inline");
    const RunRecord a = train_to_threshold(cfg, 2);
    const RunRecord b = train_to_threshold(cfg, 2);
    CHECK(a.final_train_loss == b.final_train_loss);
    CHECK(a.train_error == b.train_error);
    CHECK(a.test_error == b.test_error);
    CHECK(a.epochs_used == b.epochs_used);
    REQUIRE(a.measures.size() == b.measures.size());
    for (std::size_t i = 0; i < a.measures.size(); ++i)
        CHECK(a.measures[i].value == b.measures[i].value);
}

TEST_CASE("unknown config keys are hard errors") {
    CHECK_THROWS_WITH_AS(parse_config_text("optimizer.lrr = 0.1\n", "inline"),
                         doctest::Contains("optimizer.lrr"), ParseError);
    CHECK_THROWS_AS(parse_config_text("just some words\n", "inline"), ParseError);
    // comments and blank lines are fine
    const ExperimentConfig cfg =
        parse_config_text("# comment\n\noptimizer.lr = 0.25 # trailing\n", "inline");
    CHECK(cfg.optimizer.lr == 0.25);
}

TEST_CASE("sweeps emit one record per point and seed, and skip degenerate correlations") {
    ExperimentConfig cfg = parse_config_text(kSmallConfig, "inline");
    cfg.sweep.axis = "width";
    cfg.sweep.values = {4, 8};
    cfg.seeds = {1, 2};
    cfg.stop.max_epochs = 40;
    const auto dir = scratch_dir() / "sweep_a";
    std::filesystem::remove_all(dir);
    const SweepResult result = run_sweep(cfg, dir);
    CHECK(result.runs.size() == 4);
    CHECK(std::filesystem::exists(dir / "runs.csv"));
    CHECK(std::filesystem::exists(dir / "measures.csv"));
    CHECK(std::filesystem::exists(dir / "axis_summary.csv"));
    CHECK(std::filesystem::exists(dir / "correlation.csv"));
    CHECK(std::filesystem::exists(dir / "manifest.json"));

    // single point, single seed: correlation must be skipped
    ExperimentConfig tiny = parse_config_text(kSmallConfig, "inline");
    tiny.sweep.axis = "width";
    tiny.sweep.values = {8};
    tiny.seeds = {1};
    tiny.stop.max_epochs = 10;
    const auto dir2 = scratch_dir() / "sweep_b";
    std::filesystem::remove_all(dir2);
    run_sweep(tiny, dir2);
    const std::string corr = slurp(dir2 / "correlation.csv");
    CHECK(corr == "measure,axis,tau,ci95,n\n");
}

TEST_CASE("sweep output is byte-identical across repeated executions") {
    ExperimentConfig cfg = parse_config_text(kSmallConfig, "inline");
    cfg.sweep.axis = "label_noise";
    cfg.sweep.values = {0.0, 0.2};
    cfg.seeds = {1};
    cfg.stop.max_epochs = 25;
    const auto dir = scratch_dir() / "sweep_det";

    std::filesystem::remove_all(dir);
    run_sweep(cfg, dir);
    std::map<std::string, std::string> first;
    for (const auto& entry : std::filesystem::directory_iterator(dir))
        first[entry.path().filename()] = slurp(entry.path());

    std::filesystem::remove_all(dir);
    run_sweep(cfg, dir);
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        const std::string name = entry.path().filename();
        REQUIRE(first.count(name) == 1);
        if (name.find("_steps.csv") != std::string::npos) {
            CHECK(strip_last_column(slurp(entry.path())) == strip_last_column(first[name]));
        } else {
            CHECK(slurp(entry.path()) == first[name]);
        }
    }
}

TEST_CASE("non-converged runs never enter a correlation") {
    ExperimentConfig cfg = parse_config_text(kSmallConfig, "inline");
    cfg.sweep.axis = "label_noise";
    cfg.sweep.values = {0.0, 0.45};  // the noisy point cannot reach the threshold
    cfg.seeds = {1, 2};
    cfg.stop.max_epochs = 60;
    cfg.stop.loss_threshold = 0.05;
    const auto dir = scratch_dir() / "sweep_discard";
    std::filesystem::remove_all(dir);
    const SweepResult result = run_sweep(cfg, dir);

    std::size_t converged_noisy = 0, measured_nonconverged = 0;
    for (const RunRecord& r : result.runs) {
        if (r.axis_value > 0.0 && r.converged) ++converged_noisy;
        if (!r.converged && !r.measures.empty()) ++measured_nonconverged;
    }
    REQUIRE(converged_noisy == 0);
    // measures exist for completed non-converged runs, yet the correlation
    // report must not see them: one usable axis point -> no rows at all
    CHECK(measured_nonconverged > 0);
    CHECK(slurp(dir / "correlation.csv") == "measure,axis,tau,ci95,n\n");
}

TEST_CASE("hyperparameter sweeps reject unknown keys") {
    ExperimentConfig cfg = parse_config_text(kSmallConfig, "inline");
    cfg.sweep.axis = "hyperparam";
    cfg.sweep.values = {0.1};
    cfg.sweep.param = "optimizer.color";
    CHECK_THROWS_AS(run_sweep(cfg, scratch_dir() / "sweep_bad"), ConfigError);
}

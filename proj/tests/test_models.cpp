#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "flatmin/autodiff.hpp"
#include "flatmin/dataset.hpp"
#include "flatmin/error.hpp"
#include "flatmin/model.hpp"
#include "flatmin/optim.hpp"
#include "flatmin/rng.hpp"

using namespace flatmin;

TEST_CASE("build_mlp is deterministic per seed") {
    auto [m1, p1] = build_mlp({2, 3, 2}, 0);
    auto [m2, p2] = build_mlp({2, 3, 2}, 0);
    CHECK(p1.values == p2.values);
    auto [m3, p3] = build_mlp({2, 3, 2}, 1);
    CHECK(p1.values != p3.values);
}

TEST_CASE("parameter count follows the architecture") {
    auto [model, params] = build_mlp({4, 8, 3}, 5);
    CHECK(params.size() == 4 * 8 + 8 + 8 * 3 + 3);  // 67
    CHECK(model.layout()->filters.size() == 8 + 3);
    // filter slices partition the value range
    std::size_t covered = 0;
    for (const FilterSlice& f : model.layout()->filters) covered += f.length;
    CHECK(covered == params.size());
}

TEST_CASE("initial weights have He-style variance") {
    auto [model, params] = build_mlp({256, 32, 2}, 11);
    double sum = 0.0, sum2 = 0.0;
    std::size_t count = 0;
    const auto& layout = *model.layout();
    for (std::size_t fi = layout.layer_filter_begin[0]; fi < layout.layer_filter_begin[1]; ++fi) {
        const FilterSlice& f = layout.filters[fi];
        for (std::size_t i = 0; i + 1 < f.length; ++i) {
            const double w = params.values[f.offset + i];
            sum += w;
            sum2 += w * w;
            ++count;
        }
    }
    const double var = sum2 / count - (sum / count) * (sum / count);
    const double target = 2.0 / 256.0;
    CHECK(var > target * 0.7);
    CHECK(var < target * 1.3);
}

namespace {

Matrix random_inputs(std::size_t n, std::size_t d, std::uint64_t seed) {
    Matrix x(n, d);
    rng::Stream stream(rng::derive(seed, {0x77ULL}));
    for (double& v : x.data) v = stream.normal();
    return x;
}

}  // namespace

TEST_CASE("balance leaves an already-balanced network untouched") {
    auto model = Model::make({2, 2, 2});
    ParamVector params;
    params.layout = model.layout();
    params.values.assign(model.layout()->total, 0.0);
    // hidden filters (1,0|0) and (0,1|0): exactly unit norm
    params.values[0] = 1.0;
    params.values[4] = 1.0;
    // output layer arbitrary
    params.values[6] = 0.3;
    params.values[7] = -0.7;
    params.values[9] = 1.2;
    params.values[10] = 0.4;
    const auto [balanced, report] = balance(model, params);
    CHECK(balanced.values == params.values);
    CHECK(report.max_output_deviation == 0.0);
}

TEST_CASE("balance preserves the network function for imbalanced filters") {
    auto [model, params] = build_mlp({2, 2, 2}, 3);
    // scale the two first-layer filters wildly apart
    const auto& layout = *model.layout();
    scale(10.0, params.filter(layout.filters[0]));
    scale(0.1, params.filter(layout.filters[1]));

    const auto [balanced, report] = balance(model, params);
    const Matrix probe = random_inputs(100, 2, 13);
    const Matrix before = predict_proba(model, params, probe);
    const Matrix after = predict_proba(model, balanced, probe);
    for (std::size_t i = 0; i < before.data.size(); ++i)
        CHECK(std::abs(after.data[i] - before.data[i]) <=
              1e-9 * std::max(1e-12, std::abs(before.data[i])));
    for (double n : report.per_filter_norms_after) CHECK(n == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("train loss is unchanged by balancing a trained network") {
    Dataset ds = make_synthetic(SyntheticKind::blobs, 200, 2, 2, 4);
    auto [model, params] = build_mlp({2, 8, 2}, 4);
    OptimizerState state{params, std::nullopt, 0, 0.05, 0.9, 0.0};
    const Batch full = full_batch(ds);
    std::vector<std::size_t> idx(ds.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    for (int epoch = 0; epoch < 50; ++epoch) msgd_step(state, model, full);
    const double before = forward(model, state.params, full).loss;
    const auto [balanced, report] = balance(model, state.params);
    const double after = forward(model, balanced, full).loss;
    CHECK(std::abs(after - before) <= 1e-3 * before);
}

TEST_CASE("balance is idempotent") {
    auto [model, params] = build_mlp({3, 6, 4, 2}, 17);
    for (std::size_t i = 0; i < params.size(); ++i)
        params.values[i] *= (i % 2 == 0) ? 4.0 : 0.25;
    const auto once = balance(model, params).first;
    const auto twice = balance(model, once).first;
    for (std::size_t i = 0; i < once.size(); ++i)
        CHECK(std::abs(twice.values[i] - once.values[i]) <=
              1e-12 * std::max(1.0, std::abs(once.values[i])));
}

TEST_CASE("balance rejects zero-norm filters and identity activations") {
    auto [model, params] = build_mlp({2, 3, 2}, 19);
    const FilterSlice f = model.layout()->filters[1];
    for (std::size_t i = f.offset; i < f.offset + f.length; ++i) params.values[i] = 0.0;
    CHECK_THROWS_WITH_AS(balance(model, params), doctest::Contains("filter 1"),
                         DegenerateFilterError);

    auto idmodel = Model::make({2, 3, 2}, Activation::identity);
    ParamVector p2;
    p2.layout = idmodel.layout();
    p2.values.assign(idmodel.layout()->total, 0.5);
    CHECK_THROWS_AS(balance(idmodel, p2), ConfigError);
}

TEST_CASE("predict_proba gives uniform rows for zero weights and normalized rows in general") {
    auto [model, params] = build_mlp({3, 4, 4}, 23);
    for (double& v : params.values) v = 0.0;
    const Matrix probs = predict_proba(model, params, random_inputs(6, 3, 29));
    for (double p : probs.data) CHECK(p == doctest::Approx(0.25).epsilon(1e-12));

    auto [model2, params2] = build_mlp({3, 5, 3}, 31);
    const Matrix probs2 = predict_proba(model2, params2, random_inputs(8, 3, 37));
    for (std::size_t r = 0; r < probs2.rows; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < probs2.cols; ++c) s += probs2.at(r, c);
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("predict_proba agrees with forward bit for bit") {
    auto [model, params] = build_mlp({2, 6, 3}, 41);
    const Matrix inputs = random_inputs(10, 2, 43);
    Batch batch{inputs, std::vector<int>(10, 0)};
    CHECK(predict_proba(model, params, inputs).data ==
          forward(model, params, batch).per_example_probs.data);
}

TEST_CASE("checkpoints round-trip exactly") {
    auto [model, params] = build_mlp({3, 5, 2}, 47);
    const std::string path = std::filesystem::temp_directory_path() / "flatmin_ckpt_test.txt";
    save_checkpoint(model, params, path);
    const auto [loaded_model, loaded_params] = load_checkpoint(path);
    CHECK(loaded_model.layer_sizes == model.layer_sizes);
    CHECK(loaded_params.values == params.values);
    std::remove(path.c_str());
}

TEST_CASE("corrupt checkpoints raise parse errors") {
    const std::string path = std::filesystem::temp_directory_path() / "flatmin_ckpt_bad.txt";
    {
        std::ofstream out(path);
        out << "not a checkpoint\n";
    }
    CHECK_THROWS_AS(load_checkpoint(path), ParseError);
    std::remove(path.c_str());
}

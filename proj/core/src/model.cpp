#include "flatmin/model.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

#include "flatmin/autodiff.hpp"
#include "flatmin/error.hpp"
#include "flatmin/rng.hpp"

namespace flatmin {

namespace {

std::shared_ptr<const ParamLayout> build_layout(const std::vector<std::size_t>& sizes) {
    auto layout = std::make_shared<ParamLayout>();
    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
        const std::size_t fan_in = sizes[l];
        const std::size_t fan_out = sizes[l + 1];
        layout->layer_filter_begin.push_back(layout->filters.size());
        for (std::size_t j = 0; j < fan_out; ++j) {
            layout->entries.push_back({static_cast<int>(l), ParamRole::weight, {1, fan_in}, off, fan_in});
            layout->entries.push_back({static_cast<int>(l), ParamRole::bias, {1, 1}, off + fan_in, 1});
            layout->filters.push_back({off, fan_in + 1, static_cast<int>(l), static_cast<int>(j)});
            off += fan_in + 1;
        }
    }
    layout->layer_filter_begin.push_back(layout->filters.size());
    layout->total = off;
    return layout;
}

}  // namespace

Model Model::make(std::vector<std::size_t> sizes, Activation hidden) {
    if (sizes.size() < 2) throw ConfigError("model needs at least input and output sizes");
    for (std::size_t s : sizes)
        if (s < 1) throw ConfigError("all layer sizes must be >= 1");
    Model m;
    m.layer_sizes = std::move(sizes);
    m.hidden_activations.assign(m.layer_sizes.size() - 2, hidden);
    m.layout_ = build_layout(m.layer_sizes);
    return m;
}

std::pair<Model, ParamVector> build_mlp(const std::vector<std::size_t>& layer_sizes,
                                        std::uint64_t seed) {
    Model model = Model::make(layer_sizes);
    ParamVector params;
    params.layout = model.layout();
    params.values.assign(model.layout()->total, 0.0);

    rng::Stream stream(rng::derive(seed, {0x1417u}));
    for (const FilterSlice& f : model.layout()->filters) {
        const double stddev = std::sqrt(2.0 / static_cast<double>(f.length - 1));
        auto dst = params.filter(f);
        for (std::size_t i = 0; i + 1 < f.length; ++i) dst[i] = stream.normal(0.0, stddev);
        dst[f.length - 1] = 0.0;  // bias
    }
    return {std::move(model), std::move(params)};
}

std::pair<ParamVector, BalanceReport> balance(const Model& model, const ParamVector& params) {
    const auto& layout = *model.layout();
    for (Activation a : model.hidden_activations)
        if (a != Activation::relu)
            throw ConfigError("balance requires ReLU hidden activations");

    ParamVector out = params;
    out.layout = model.layout();
    BalanceReport report;

    const std::size_t n_layers = model.num_layers();
    for (std::size_t l = 0; l + 1 < n_layers; ++l) {
        const std::size_t begin = layout.layer_filter_begin[l];
        const std::size_t end = layout.layer_filter_begin[l + 1];
        for (std::size_t fi = begin; fi < end; ++fi)
            report.per_filter_norms_before.push_back(filter_norm(params, layout.filters[fi]));

        const std::size_t next_begin = layout.layer_filter_begin[l + 1];
        const std::size_t next_end = layout.layer_filter_begin[l + 2];
        for (std::size_t fi = begin; fi < end; ++fi) {
            const FilterSlice& f = layout.filters[fi];
            const double d = filter_norm(out, f);
            if (d < 1e-300)
                throw DegenerateFilterError("zero-norm filter " + std::to_string(f.filter) +
                                            " in layer " + std::to_string(f.layer));
            scale(1.0 / d, out.filter(f));
            // compensate in the next layer's incoming weights for this unit
            const std::size_t col = static_cast<std::size_t>(f.filter);
            for (std::size_t fj = next_begin; fj < next_end; ++fj)
                out.values[layout.filters[fj].offset + col] *= d;
        }
    }

    for (std::size_t l = 0; l + 1 < n_layers; ++l) {
        const std::size_t begin = layout.layer_filter_begin[l];
        const std::size_t end = layout.layer_filter_begin[l + 1];
        for (std::size_t fi = begin; fi < end; ++fi)
            report.per_filter_norms_after.push_back(filter_norm(out, layout.filters[fi]));
    }

    // verification pass: function preservation on fixed probe inputs
    const std::size_t n_probe = 64;
    Matrix probe(n_probe, model.input_dim());
    rng::Stream stream(rng::derive(0xba1a9ceULL, {model.input_dim()}));
    for (double& v : probe.data) v = stream.normal();
    const Matrix before = predict_proba(model, params, probe);
    const Matrix after = predict_proba(model, out, probe);
    double max_dev = 0.0;
    for (std::size_t i = 0; i < before.data.size(); ++i) {
        const double rel =
            std::abs(after.data[i] - before.data[i]) / std::max(1e-12, std::abs(before.data[i]));
        max_dev = std::max(max_dev, rel);
    }
    report.max_output_deviation = max_dev;

    return {std::move(out), std::move(report)};
}

namespace {

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

void save_checkpoint(const Model& model, const ParamVector& params, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot open checkpoint for writing: " + path);
    out << "flatmin checkpoint v1\n";
    out << "layers";
    for (std::size_t s : model.layer_sizes) out << ' ' << s;
    out << "\nactivations";
    for (Activation a : model.hidden_activations)
        out << ' ' << (a == Activation::relu ? "relu" : "identity");
    out << "\nparams " << params.size() << "\n";
    for (double v : params.values) out << fmt_double(v) << "\n";
}

std::pair<Model, ParamVector> load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open checkpoint: " + path);
    std::string line;
    if (!std::getline(in, line) || line != "flatmin checkpoint v1")
        throw ParseError("checkpoint " + path + ": bad header at line 1");

    if (!std::getline(in, line) || line.rfind("layers", 0) != 0)
        throw ParseError("checkpoint " + path + ": expected 'layers' at line 2");
    std::istringstream ls(line.substr(6));
    std::vector<std::size_t> sizes;
    std::size_t s;
    while (ls >> s) sizes.push_back(s);
    if (sizes.size() < 2) throw ParseError("checkpoint " + path + ": fewer than two layer sizes");

    if (!std::getline(in, line) || line.rfind("activations", 0) != 0)
        throw ParseError("checkpoint " + path + ": expected 'activations' at line 3");
    std::istringstream as(line.substr(11));
    std::vector<Activation> acts;
    std::string tok;
    while (as >> tok) {
        if (tok == "relu")
            acts.push_back(Activation::relu);
        else if (tok == "identity")
            acts.push_back(Activation::identity);
        else
            throw ParseError("checkpoint " + path + ": unknown activation '" + tok + "'");
    }
    if (acts.size() != sizes.size() - 2)
        throw ParseError("checkpoint " + path + ": activation count does not match layers");

    Model model = Model::make(sizes);
    model.hidden_activations = acts;

    if (!std::getline(in, line) || line.rfind("params ", 0) != 0)
        throw ParseError("checkpoint " + path + ": expected 'params <n>' at line 4");
    const std::size_t n = std::stoull(line.substr(7));
    if (n != model.layout()->total)
        throw ParseError("checkpoint " + path + ": parameter count does not match architecture");

    ParamVector params;
    params.layout = model.layout();
    params.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::getline(in, line))
            throw ParseError("checkpoint " + path + ": truncated at value " + std::to_string(i));
        params.values[i] = std::stod(line);
    }
    return {std::move(model), std::move(params)};
}

}  // namespace flatmin

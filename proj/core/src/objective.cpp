#include "flatmin/objective.hpp"

#include <algorithm>

#include "flatmin/error.hpp"

namespace flatmin {

DatasetLossObjective::DatasetLossObjective(const Model& model, const Batch& full_data)
    : model_(&model), data_(&full_data), dim_(model.layout()->total) {
    if (full_data.inputs.cols != model.input_dim())
        throw ArchitectureError("dataset width does not match model input dim");
}

ParamVector DatasetLossObjective::wrap(std::span<const double> theta) const {
    ParamVector p;
    p.layout = model_->layout();
    p.values.assign(theta.begin(), theta.end());
    return p;
}

double DatasetLossObjective::value(std::span<const double> theta) const {
    return forward(*model_, wrap(theta), *data_).loss;
}

void DatasetLossObjective::grad(std::span<const double> theta, std::span<double> out) const {
    ParamVector g = flatmin::grad(*model_, wrap(theta), *data_);
    std::copy(g.values.begin(), g.values.end(), out.begin());
}

void DatasetLossObjective::hvp(std::span<const double> theta, std::span<const double> v,
                               std::span<double> out) const {
    ParamVector dir;
    dir.layout = model_->layout();
    dir.values.assign(v.begin(), v.end());
    ParamVector h = flatmin::hvp(*model_, wrap(theta), *data_, dir);
    std::copy(h.values.begin(), h.values.end(), out.begin());
}

}  // namespace flatmin

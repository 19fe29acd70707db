#pragma once

#include <cstddef>
#include <span>

#include "flatmin/autodiff.hpp"

namespace flatmin {

// A twice-differentiable scalar objective on R^d. Sharpness measures are
// written against this interface so trained networks and synthetic quadratic
// landscapes run through one code path.
class Objective {
public:
    virtual ~Objective() = default;
    virtual std::size_t dim() const = 0;
    virtual double value(std::span<const double> theta) const = 0;
    virtual void grad(std::span<const double> theta, std::span<double> out) const = 0;
    virtual void hvp(std::span<const double> theta, std::span<const double> v,
                     std::span<double> out) const = 0;
};

// Full-dataset mean cross-entropy loss of a model. References the model and
// data; callers keep them alive.
class DatasetLossObjective final : public Objective {
public:
    DatasetLossObjective(const Model& model, const Batch& full_data);

    std::size_t dim() const override { return dim_; }
    double value(std::span<const double> theta) const override;
    void grad(std::span<const double> theta, std::span<double> out) const override;
    void hvp(std::span<const double> theta, std::span<const double> v,
             std::span<double> out) const override;

    std::size_t num_examples() const { return data_->size(); }

private:
    ParamVector wrap(std::span<const double> theta) const;

    const Model* model_;
    const Batch* data_;
    std::size_t dim_;
};

}  // namespace flatmin

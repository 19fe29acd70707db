#pragma once

#include <cstdint>
#include <memory>
#include <utility>
#include <vector>

#include "flatmin/matrix.hpp"
#include "flatmin/param_vector.hpp"

namespace flatmin {

enum class Activation { relu, identity };

// Fully-connected feed-forward classifier: layer_sizes = (d_in, h_1, ..., C),
// one activation per hidden layer, softmax on the output logits.
struct Model {
    std::vector<std::size_t> layer_sizes;
    std::vector<Activation> hidden_activations;

    std::size_t num_layers() const { return layer_sizes.size() - 1; }
    std::size_t input_dim() const { return layer_sizes.front(); }
    std::size_t num_classes() const { return layer_sizes.back(); }

    std::shared_ptr<const ParamLayout> layout() const { return layout_; }

    static Model make(std::vector<std::size_t> sizes, Activation hidden = Activation::relu);

private:
    std::shared_ptr<const ParamLayout> layout_;
};

// He-style initialization from a seeded stream: weights N(0, 2/fan_in),
// biases zero. Deterministic per seed.
std::pair<Model, ParamVector> build_mlp(const std::vector<std::size_t>& layer_sizes,
                                        std::uint64_t seed);

// Row-wise softmax class probabilities for a batch of inputs.
Matrix predict_proba(const Model& model, const ParamVector& params, const Matrix& inputs);

struct BalanceReport {
    std::vector<double> per_filter_norms_before;  // hidden filters, original parameters
    std::vector<double> per_filter_norms_after;   // same filters after rescaling (all 1)
    double max_output_deviation = 0.0;            // verification pass on probe inputs
};

// Rescales every hidden filter (weights + bias) to unit combined norm and
// pushes the compensating factor into the next layer's incoming weights,
// first layer to last. The last propagation folds into the output layer's
// weight matrix, so the network function is preserved for ReLU hidden units.
std::pair<ParamVector, BalanceReport> balance(const Model& model, const ParamVector& params);

// Checkpoint file: versioned text record of the architecture and the
// parameter array in layout order. Values are written with enough digits to
// round-trip doubles exactly.
void save_checkpoint(const Model& model, const ParamVector& params, const std::string& path);
std::pair<Model, ParamVector> load_checkpoint(const std::string& path);

}  // namespace flatmin

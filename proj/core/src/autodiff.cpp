#include "flatmin/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "flatmin/error.hpp"

namespace flatmin {

namespace {

double act_apply(Activation a, double z) {
    return a == Activation::relu ? (z > 0.0 ? z : 0.0) : z;
}

double act_deriv(Activation a, double z) {
    return a == Activation::relu ? (z > 0.0 ? 1.0 : 0.0) : 1.0;
}

void check_shapes(const Model& model, const ParamVector& params, const Batch& batch) {
    if (params.size() != model.layout()->total)
        throw ArchitectureError("parameter vector has " + std::to_string(params.size()) +
                                " entries, architecture needs " +
                                std::to_string(model.layout()->total));
    if (batch.inputs.cols != model.input_dim())
        throw ArchitectureError("batch width " + std::to_string(batch.inputs.cols) +
                                " does not match input dim " + std::to_string(model.input_dim()));
    if (batch.inputs.rows != batch.labels.size())
        throw ArchitectureError("inputs/labels length mismatch");
    if (batch.size() < 1) throw ArchitectureError("empty batch");
    for (std::size_t i = 0; i < batch.labels.size(); ++i)
        if (batch.labels[i] < 0 || static_cast<std::size_t>(batch.labels[i]) >= model.num_classes())
            throw ArchitectureError("label out of range at example " + std::to_string(i));
}

void check_layer_finite(const Matrix& z, std::size_t layer) {
    if (!all_finite(z.data))
        throw NumericError("non-finite activation in layer " + std::to_string(layer));
}

// z[r][j] = b_j + w_j . a[r]  for layer l, with filter slices [w | b]
void affine(const Model& model, const ParamVector& params, std::size_t l, const Matrix& a,
            Matrix& z) {
    const auto& layout = *model.layout();
    const std::size_t begin = layout.layer_filter_begin[l];
    const std::size_t fan_out = model.layer_sizes[l + 1];
    const std::size_t fan_in = model.layer_sizes[l];
    z.rows = a.rows;
    z.cols = fan_out;
    z.data.assign(a.rows * fan_out, 0.0);
    for (std::size_t r = 0; r < a.rows; ++r) {
        const double* arow = a.data.data() + r * fan_in;
        double* zrow = z.data.data() + r * fan_out;
        for (std::size_t j = 0; j < fan_out; ++j) {
            const double* w = params.values.data() + layout.filters[begin + j].offset;
            double s = w[fan_in];  // bias
            for (std::size_t i = 0; i < fan_in; ++i) s += w[i] * arow[i];
            zrow[j] = s;
        }
    }
}

// Row-wise softmax with max subtraction; returns mean cross-entropy.
double softmax_rows(Matrix& logits, const std::vector<int>& labels, Matrix& probs) {
    const std::size_t n = logits.rows, c = logits.cols;
    probs.rows = n;
    probs.cols = c;
    probs.data.resize(n * c);
    double loss = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        const double* zr = logits.data.data() + r * c;
        double* pr = probs.data.data() + r * c;
        double zmax = zr[0];
        for (std::size_t j = 1; j < c; ++j) zmax = std::max(zmax, zr[j]);
        double denom = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            pr[j] = std::exp(zr[j] - zmax);
            denom += pr[j];
        }
        for (std::size_t j = 0; j < c; ++j) pr[j] /= denom;
        const std::size_t y = static_cast<std::size_t>(labels[r]);
        // log prob computed from logits directly for accuracy near 0 loss
        loss -= zr[y] - zmax - std::log(denom);
    }
    return loss / static_cast<double>(n);
}

struct ForwardTrace {
    std::vector<Matrix> a;  // a[0] = inputs, a[l] post-activation, l = 1..L-1
    std::vector<Matrix> z;  // z[l] pre-activation of layer l-1, l = 1..L
    Matrix probs;
    double loss = 0.0;
};

ForwardTrace run_forward(const Model& model, const ParamVector& params, const Batch& batch) {
    check_shapes(model, params, batch);
    const std::size_t n_layers = model.num_layers();
    ForwardTrace t;
    t.a.resize(n_layers);
    t.z.resize(n_layers + 1);
    t.a[0] = batch.inputs;
    for (std::size_t l = 0; l < n_layers; ++l) {
        affine(model, params, l, t.a[l], t.z[l + 1]);
        check_layer_finite(t.z[l + 1], l);
        if (l + 1 < n_layers) {
            const Activation act = model.hidden_activations[l];
            Matrix& al = t.a[l + 1];
            al = t.z[l + 1];
            for (double& v : al.data) v = act_apply(act, v);
        }
    }
    t.loss = softmax_rows(t.z[n_layers], batch.labels, t.probs);
    if (!std::isfinite(t.loss)) throw NumericError("non-finite loss at output layer");
    return t;
}

// delta = dLoss/dlogits = (probs - onehot) / n
Matrix output_delta(const ForwardTrace& t, const std::vector<int>& labels) {
    Matrix d = t.probs;
    const double inv_n = 1.0 / static_cast<double>(d.rows);
    for (std::size_t r = 0; r < d.rows; ++r) {
        double* dr = d.data.data() + r * d.cols;
        dr[static_cast<std::size_t>(labels[r])] -= 1.0;
        for (std::size_t j = 0; j < d.cols; ++j) dr[j] *= inv_n;
    }
    return d;
}

// Accumulates parameter gradients of layer l given delta = dLoss/dz[l+1],
// and (for l > 0) computes delta of the previous layer.
void backward_layer(const Model& model, const ParamVector& params, std::size_t l, const Matrix& a,
                    const Matrix* z_prev, const Matrix& delta, ParamVector& grad_out,
                    Matrix* delta_prev) {
    const auto& layout = *model.layout();
    const std::size_t begin = layout.layer_filter_begin[l];
    const std::size_t fan_in = model.layer_sizes[l];
    const std::size_t fan_out = model.layer_sizes[l + 1];
    const std::size_t n = a.rows;

    for (std::size_t j = 0; j < fan_out; ++j) {
        double* g = grad_out.values.data() + layout.filters[begin + j].offset;
        for (std::size_t r = 0; r < n; ++r) {
            const double dj = delta.data[r * fan_out + j];
            if (dj == 0.0) continue;
            const double* arow = a.data.data() + r * fan_in;
            for (std::size_t i = 0; i < fan_in; ++i) g[i] += dj * arow[i];
            g[fan_in] += dj;
        }
    }

    if (delta_prev != nullptr) {
        const Activation act = model.hidden_activations[l - 1];
        delta_prev->rows = n;
        delta_prev->cols = fan_in;
        delta_prev->data.assign(n * fan_in, 0.0);
        for (std::size_t r = 0; r < n; ++r) {
            double* dp = delta_prev->data.data() + r * fan_in;
            const double* dr = delta.data.data() + r * fan_out;
            for (std::size_t j = 0; j < fan_out; ++j) {
                const double dj = dr[j];
                if (dj == 0.0) continue;
                const double* w = params.values.data() + layout.filters[begin + j].offset;
                for (std::size_t i = 0; i < fan_in; ++i) dp[i] += dj * w[i];
            }
            const double* zp = z_prev->data.data() + r * fan_in;
            for (std::size_t i = 0; i < fan_in; ++i) dp[i] *= act_deriv(act, zp[i]);
        }
    }
}

}  // namespace

EvalResult forward(const Model& model, const ParamVector& params, const Batch& batch) {
    ForwardTrace t = run_forward(model, params, batch);
    return {t.loss, std::move(t.probs)};
}

double loss_and_grad(const Model& model, const ParamVector& params, const Batch& batch,
                     ParamVector& grad_out) {
    ForwardTrace t = run_forward(model, params, batch);
    grad_out.layout = model.layout();
    grad_out.values.assign(model.layout()->total, 0.0);

    const std::size_t n_layers = model.num_layers();
    Matrix delta = output_delta(t, batch.labels);
    for (std::size_t l = n_layers; l-- > 0;) {
        Matrix delta_prev;
        backward_layer(model, params, l, t.a[l], l > 0 ? &t.z[l] : nullptr, delta, grad_out,
                       l > 0 ? &delta_prev : nullptr);
        delta = std::move(delta_prev);
    }
    if (!all_finite(grad_out.values)) throw NumericError("non-finite gradient");
    return t.loss;
}

ParamVector grad(const Model& model, const ParamVector& params, const Batch& batch) {
    ParamVector g;
    loss_and_grad(model, params, batch, g);
    return g;
}

// Shares the forward code path, so it agrees with forward() bit for bit.
Matrix predict_proba(const Model& model, const ParamVector& params, const Matrix& inputs) {
    if (inputs.cols != model.input_dim())
        throw ArchitectureError("input width " + std::to_string(inputs.cols) +
                                " does not match input dim " + std::to_string(model.input_dim()));
    if (inputs.rows == 0) return Matrix(0, model.num_classes());
    Batch b{inputs, std::vector<int>(inputs.rows, 0)};
    return forward(model, params, b).per_example_probs;
}

ParamVector hvp(const Model& model, const ParamVector& params, const Batch& batch,
                const ParamVector& v) {
    if (v.size() != params.size()) throw ArchitectureError("direction/parameter size mismatch");
    ForwardTrace t = run_forward(model, params, batch);
    const auto& layout = *model.layout();
    const std::size_t n_layers = model.num_layers();
    const std::size_t n = batch.size();

    // forward tangent sweep: Rz, Ra
    std::vector<Matrix> ra(n_layers), rz(n_layers + 1);
    ra[0] = Matrix(n, model.input_dim(), 0.0);
    for (std::size_t l = 0; l < n_layers; ++l) {
        const std::size_t begin = layout.layer_filter_begin[l];
        const std::size_t fan_in = model.layer_sizes[l];
        const std::size_t fan_out = model.layer_sizes[l + 1];
        Matrix& rzl = rz[l + 1];
        rzl = Matrix(n, fan_out, 0.0);
        for (std::size_t r = 0; r < n; ++r) {
            const double* arow = t.a[l].data.data() + r * fan_in;
            const double* rarow = ra[l].data.data() + r * fan_in;
            double* out = rzl.data.data() + r * fan_out;
            for (std::size_t j = 0; j < fan_out; ++j) {
                const std::size_t off = layout.filters[begin + j].offset;
                const double* w = params.values.data() + off;
                const double* rw = v.values.data() + off;
                double s = rw[fan_in];
                for (std::size_t i = 0; i < fan_in; ++i) s += rw[i] * arow[i] + w[i] * rarow[i];
                out[j] = s;
            }
        }
        if (l + 1 < n_layers) {
            const Activation act = model.hidden_activations[l];
            ra[l + 1] = Matrix(n, fan_out, 0.0);
            for (std::size_t i = 0; i < rzl.data.size(); ++i)
                ra[l + 1].data[i] = act_deriv(act, t.z[l + 1].data[i]) * rzl.data[i];
        }
    }

    // tangent of the output delta: R[(p - y)/n] = Rp / n with
    // Rp_j = p_j (Rz_j - sum_k p_k Rz_k)
    const std::size_t c = model.num_classes();
    Matrix delta = output_delta(t, batch.labels);
    Matrix rdelta(n, c, 0.0);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r) {
        const double* pr = t.probs.data.data() + r * c;
        const double* rzr = rz[n_layers].data.data() + r * c;
        double* rd = rdelta.data.data() + r * c;
        double mean = 0.0;
        for (std::size_t j = 0; j < c; ++j) mean += pr[j] * rzr[j];
        for (std::size_t j = 0; j < c; ++j) rd[j] = pr[j] * (rzr[j] - mean) * inv_n;
    }

    // backward sweep carrying (delta, Rdelta); ReLU/identity have zero second
    // derivative so Rdelta picks up no curvature term from the activation
    ParamVector result;
    result.layout = model.layout();
    result.values.assign(layout.total, 0.0);
    for (std::size_t l = n_layers; l-- > 0;) {
        const std::size_t begin = layout.layer_filter_begin[l];
        const std::size_t fan_in = model.layer_sizes[l];
        const std::size_t fan_out = model.layer_sizes[l + 1];

        for (std::size_t j = 0; j < fan_out; ++j) {
            double* g = result.values.data() + layout.filters[begin + j].offset;
            for (std::size_t r = 0; r < n; ++r) {
                const double dj = delta.data[r * fan_out + j];
                const double rdj = rdelta.data[r * fan_out + j];
                const double* arow = t.a[l].data.data() + r * fan_in;
                const double* rarow = ra[l].data.data() + r * fan_in;
                for (std::size_t i = 0; i < fan_in; ++i) g[i] += rdj * arow[i] + dj * rarow[i];
                g[fan_in] += rdj;
            }
        }

        if (l > 0) {
            const Activation act = model.hidden_activations[l - 1];
            Matrix dprev(n, fan_in, 0.0), rdprev(n, fan_in, 0.0);
            for (std::size_t r = 0; r < n; ++r) {
                double* dp = dprev.data.data() + r * fan_in;
                double* rdp = rdprev.data.data() + r * fan_in;
                const double* dr = delta.data.data() + r * fan_out;
                const double* rdr = rdelta.data.data() + r * fan_out;
                for (std::size_t j = 0; j < fan_out; ++j) {
                    const std::size_t off = layout.filters[begin + j].offset;
                    const double* w = params.values.data() + off;
                    const double* rw = v.values.data() + off;
                    for (std::size_t i = 0; i < fan_in; ++i) {
                        dp[i] += dr[j] * w[i];
                        rdp[i] += rdr[j] * w[i] + dr[j] * rw[i];
                    }
                }
                const double* zp = t.z[l].data.data() + r * fan_in;
                for (std::size_t i = 0; i < fan_in; ++i) {
                    const double m = act_deriv(act, zp[i]);
                    dp[i] *= m;
                    rdp[i] *= m;
                }
            }
            delta = std::move(dprev);
            rdelta = std::move(rdprev);
        }
    }
    if (!all_finite(result.values)) throw NumericError("non-finite Hessian-vector product");
    return result;
}

}  // namespace flatmin

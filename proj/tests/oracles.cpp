#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace oracles {

using flatmin::Activation;
using flatmin::Batch;
using flatmin::Matrix;
using flatmin::Model;
using flatmin::Objective;
using flatmin::ParamVector;

double forward_loss_reference(const Model& model, const ParamVector& params, const Batch& batch) {
    const auto& layout = *model.layout();
    double total = 0.0;
    for (std::size_t ex = 0; ex < batch.size(); ++ex) {
        std::vector<double> act(batch.inputs.row(ex).begin(), batch.inputs.row(ex).end());
        for (std::size_t l = 0; l < model.num_layers(); ++l) {
            const std::size_t fan_out = model.layer_sizes[l + 1];
            std::vector<double> next(fan_out, 0.0);
            for (std::size_t j = 0; j < fan_out; ++j) {
                const auto& f = layout.filters[layout.layer_filter_begin[l] + j];
                double s = params.values[f.offset + f.length - 1];
                for (std::size_t i = 0; i + 1 < f.length; ++i)
                    s += params.values[f.offset + i] * act[i];
                next[j] = s;
            }
            if (l + 1 < model.num_layers() && model.hidden_activations[l] == Activation::relu)
                for (double& v : next) v = std::max(0.0, v);
            act = std::move(next);
        }
        double zmax = act[0];
        for (double v : act) zmax = std::max(zmax, v);
        double denom = 0.0;
        for (double v : act) denom += std::exp(v - zmax);
        total += -(act[static_cast<std::size_t>(batch.labels[ex])] - zmax - std::log(denom));
    }
    return total / static_cast<double>(batch.size());
}

std::vector<double> fd_gradient(const Objective& obj, std::vector<double> theta, double h) {
    std::vector<double> g(theta.size());
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const double keep = theta[i];
        theta[i] = keep + h;
        const double up = obj.value(theta);
        theta[i] = keep - h;
        const double dn = obj.value(theta);
        theta[i] = keep;
        g[i] = (up - dn) / (2.0 * h);
    }
    return g;
}

std::vector<double> fd_hvp(const Objective& obj, std::vector<double> theta,
                           const std::vector<double>& v, double h) {
    const std::size_t d = theta.size();
    std::vector<double> plus(d), minus(d), shifted(d);
    for (std::size_t i = 0; i < d; ++i) shifted[i] = theta[i] + h * v[i];
    obj.grad(shifted, plus);
    for (std::size_t i = 0; i < d; ++i) shifted[i] = theta[i] - h * v[i];
    obj.grad(shifted, minus);
    std::vector<double> out(d);
    for (std::size_t i = 0; i < d; ++i) out[i] = (plus[i] - minus[i]) / (2.0 * h);
    return out;
}

Matrix dense_hessian(const Objective& obj, const std::vector<double>& theta) {
    const std::size_t d = obj.dim();
    Matrix h(d, d);
    std::vector<double> e(d, 0.0), col(d);
    for (std::size_t j = 0; j < d; ++j) {
        e[j] = 1.0;
        obj.hvp(theta, e, col);
        e[j] = 0.0;
        for (std::size_t i = 0; i < d; ++i) h.at(i, j) = col[i];
    }
    return h;
}

std::vector<double> jacobi_eigenvalues(Matrix a) {
    const std::size_t n = a.rows;
    if (a.cols != n) throw std::invalid_argument("jacobi needs a square matrix");
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += a.at(p, q) * a.at(p, q);
        if (off < 1e-24) break;
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a.at(p, q);
                if (std::abs(apq) < 1e-300) continue;
                const double theta = (a.at(q, q) - a.at(p, p)) / (2.0 * apq);
                const double t = std::copysign(1.0, theta) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a.at(k, p), akq = a.at(k, q);
                    a.at(k, p) = c * akp - s * akq;
                    a.at(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a.at(p, k), aqk = a.at(q, k);
                    a.at(p, k) = c * apk - s * aqk;
                    a.at(q, k) = s * apk + c * aqk;
                }
            }
        }
    }
    std::vector<double> eig(n);
    for (std::size_t i = 0; i < n; ++i) eig[i] = a.at(i, i);
    std::sort(eig.begin(), eig.end(), std::greater<double>());
    return eig;
}

double kendall_tau_bruteforce(const std::vector<double>& x, const std::vector<double>& y) {
    const std::size_t n = x.size();
    double concordant = 0, discordant = 0, ties_x = 0, ties_y = 0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const double dx = x[i] - x[j], dy = y[i] - y[j];
            if (dx == 0.0 && dy == 0.0) continue;
            if (dx == 0.0) {
                ++ties_x;
            } else if (dy == 0.0) {
                ++ties_y;
            } else if (dx * dy > 0.0) {
                ++concordant;
            } else {
                ++discordant;
            }
        }
    }
    const double n0 = 0.5 * static_cast<double>(n) * static_cast<double>(n - 1);
    double tx = 0, ty = 0;  // all pairs tied in x / in y (including joint)
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            if (x[i] == x[j]) ++tx;
            if (y[i] == y[j]) ++ty;
        }
    return (concordant - discordant) / std::sqrt((n0 - tx) * (n0 - ty));
}

double max_rel_err(const std::vector<double>& got, const std::vector<double>& want, double floor) {
    double worst = 0.0;
    for (std::size_t i = 0; i < got.size(); ++i) {
        const double denom = std::max(floor, std::abs(want[i]));
        worst = std::max(worst, std::abs(got[i] - want[i]) / denom);
    }
    return worst;
}

}  // namespace oracles

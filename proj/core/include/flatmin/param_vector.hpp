#pragma once

#include <array>
#include <cstddef>
#include <memory>
#include <span>
#include <vector>

#include "flatmin/matrix.hpp"

namespace flatmin {

enum class ParamRole { weight, bias };

// One contiguous run of parameters: a single filter's weight row or its bias.
struct LayoutEntry {
    int layer;
    ParamRole role;
    std::array<std::size_t, 2> shape;  // {rows, cols}; bias entries are {1, 1}
    std::size_t offset;
    std::size_t length;
};

// A filter is one output unit's incoming weight row plus its bias, stored
// contiguously: [w_0 .. w_{fan_in-1}, b].
struct FilterSlice {
    std::size_t offset;
    std::size_t length;  // fan_in + 1
    int layer;
    int filter;
};

// Describes how a flat parameter array maps onto layers and filters. Shared
// between all vectors of the same architecture.
struct ParamLayout {
    std::vector<LayoutEntry> entries;
    std::vector<FilterSlice> filters;
    std::size_t total = 0;

    // first filter index of each layer, plus a terminating total count
    std::vector<std::size_t> layer_filter_begin;
};

// Flat parameter vector plus its layer/filter layout map.
struct ParamVector {
    std::vector<double> values;
    std::shared_ptr<const ParamLayout> layout;

    std::size_t size() const { return values.size(); }
    double& operator[](std::size_t i) { return values[i]; }
    double operator[](std::size_t i) const { return values[i]; }

    std::span<double> span() { return {values.data(), values.size()}; }
    std::span<const double> span() const { return {values.data(), values.size()}; }

    std::span<double> filter(const FilterSlice& f) { return {values.data() + f.offset, f.length}; }
    std::span<const double> filter(const FilterSlice& f) const {
        return {values.data() + f.offset, f.length};
    }

    bool same_layout(const ParamVector& other) const {
        return layout == other.layout ||
               (layout && other.layout && layout->total == other.layout->total &&
                layout->filters.size() == other.layout->filters.size());
    }
};

// Zero vector with the same layout.
inline ParamVector zeros_like(const ParamVector& p) {
    ParamVector z;
    z.values.assign(p.size(), 0.0);
    z.layout = p.layout;
    return z;
}

// Combined L2 norm of a filter's weights and bias.
inline double filter_norm(const ParamVector& p, const FilterSlice& f) {
    return norm2(p.filter(f));
}

}  // namespace flatmin

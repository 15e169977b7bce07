#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "loralab/autodiff.hpp"
#include "loralab/error.hpp"
#include "loralab/matrix.hpp"
#include "loralab/rng.hpp"

namespace loralab {

// Probability that a single entry of the merged low-rank product is exactly
// zero when both factor masks drop independently at rate p.
inline double entry_zero_probability(double p) {
    if (p < 0.0 || p >= 1.0)
        throw config_error("dropout rate must lie in [0, 1), got " + std::to_string(p));
    return 2.0 * p - p * p;
}

// Adapter over a frozen base weight: effective weight = base + scale * up * down.
// up starts at zero so the adapted model initially equals the base model.
struct LoraLayer {
    Parameter base;  // out_dim x in_dim, frozen
    Parameter down;  // rank x in_dim
    Parameter up;    // out_dim x rank
    double scale = 1.0;

    std::size_t in_dim() const { return base.value.cols(); }
    std::size_t out_dim() const { return base.value.rows(); }
    std::size_t rank() const { return down.value.rows(); }
};

// Quasi-SVD adapter: effective weight = base + scale * left * diag(singular) * right.
// singular starts at zero and never receives dropout.
struct AdaLoraLayer {
    Parameter base;      // out_dim x in_dim, frozen
    Parameter left;      // out_dim x rank
    Parameter singular;  // 1 x rank
    Parameter right;     // rank x in_dim
    double scale = 1.0;

    std::size_t in_dim() const { return base.value.cols(); }
    std::size_t out_dim() const { return base.value.rows(); }
    std::size_t rank() const { return right.value.rows(); }
};

namespace detail {
inline void check_rank(std::size_t rank, std::size_t out_dim, std::size_t in_dim) {
    if (rank == 0 || rank > std::min(out_dim, in_dim))
        throw config_error("adapter rank " + std::to_string(rank) + " outside [1, min(" +
                           std::to_string(out_dim) + ", " + std::to_string(in_dim) + ")]");
}

inline Matrix uniform_matrix(std::size_t rows, std::size_t cols, double bound, Rng& rng) {
    Matrix m(rows, cols);
    for (double& v : m.flat()) v = rng.uniform(-bound, bound);
    return m;
}
}  // namespace detail

inline LoraLayer make_lora_layer(Matrix base, std::size_t rank, double scale, Rng& rng) {
    const std::size_t out_dim = base.rows();
    const std::size_t in_dim = base.cols();
    detail::check_rank(rank, out_dim, in_dim);
    LoraLayer layer;
    layer.base = {std::move(base), false};
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_dim));
    layer.down = {detail::uniform_matrix(rank, in_dim, bound, rng), true};
    layer.up = {Matrix(out_dim, rank), true};
    layer.scale = scale;
    return layer;
}

inline AdaLoraLayer make_adalora_layer(Matrix base, std::size_t rank, double scale, Rng& rng) {
    const std::size_t out_dim = base.rows();
    const std::size_t in_dim = base.cols();
    detail::check_rank(rank, out_dim, in_dim);
    AdaLoraLayer layer;
    layer.base = {std::move(base), false};
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_dim));
    layer.left = {detail::uniform_matrix(out_dim, rank, bound, rng), true};
    layer.singular = {Matrix(1, rank), true};
    layer.right = {detail::uniform_matrix(rank, in_dim, bound, rng), true};
    layer.scale = scale;
    return layer;
}

// Bernoulli 0/1 masks over the adapter's input and output dimensions. The
// rank dimension is never masked.
struct DropoutMask {
    std::vector<double> input_mask;   // in_dim entries, masks columns of down / right
    std::vector<double> output_mask;  // out_dim entries, masks rows of up / left
    double rate = 0.0;
    std::size_t layer_id = 0;
};

// One dropout instance: a mask for every adapted layer, in layer order.
struct MaskSet {
    std::vector<DropoutMask> masks;
    int instance = 0;
};

// Each entry is 1 with probability 1-p. Drawing consumes exactly
// in_dim + out_dim uniforms from rng, input mask first, so a mask is a pure
// function of the derivation path used to build rng.
inline DropoutMask sample_mask(std::size_t in_dim, std::size_t out_dim, double p, Rng& rng,
                               std::size_t layer_id = 0) {
    if (p < 0.0 || p >= 1.0)
        throw config_error("dropout rate must lie in [0, 1), got " + std::to_string(p));
    DropoutMask mask;
    mask.rate = p;
    mask.layer_id = layer_id;
    mask.input_mask.resize(in_dim);
    mask.output_mask.resize(out_dim);
    for (double& v : mask.input_mask) v = rng.next_double() < p ? 0.0 : 1.0;
    for (double& v : mask.output_mask) v = rng.next_double() < p ? 0.0 : 1.0;
    return mask;
}

namespace detail {
inline void check_mask(const DropoutMask& mask, std::size_t in_dim, std::size_t out_dim) {
    if (mask.input_mask.size() != in_dim || mask.output_mask.size() != out_dim)
        throw dim_error("mask lengths (" + std::to_string(mask.input_mask.size()) + ", " +
                        std::to_string(mask.output_mask.size()) + ") do not match layer dims (" +
                        std::to_string(in_dim) + ", " + std::to_string(out_dim) + ")");
}

// rows x len matrix whose every row equals v
inline Matrix tile_as_rows(const std::vector<double>& v, std::size_t rows) {
    Matrix m(rows, v.size());
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < v.size(); ++j) m(i, j) = v[j];
    return m;
}

// len x cols matrix whose every column equals v
inline Matrix tile_as_cols(const std::vector<double>& v, std::size_t cols) {
    Matrix m(v.size(), cols);
    for (std::size_t i = 0; i < v.size(); ++i)
        for (std::size_t j = 0; j < cols; ++j) m(i, j) = v[i];
    return m;
}
}  // namespace detail

// Masked copies of the factors: columns of down are zeroed where the input
// mask is 0, rows of up where the output mask is 0. The layer is not mutated.
inline std::pair<Matrix, Matrix> apply_dropout(const LoraLayer& layer, const DropoutMask& mask) {
    detail::check_mask(mask, layer.in_dim(), layer.out_dim());
    Matrix down = hadamard(layer.down.value, detail::tile_as_rows(mask.input_mask, layer.rank()));
    Matrix up = hadamard(layer.up.value, detail::tile_as_cols(mask.output_mask, layer.rank()));
    return {std::move(down), std::move(up)};
}

// Masked copies of (left, right): rows of left are zeroed where the output
// mask is 0, columns of right where the input mask is 0. singular is untouched.
inline std::pair<Matrix, Matrix> apply_dropout(const AdaLoraLayer& layer,
                                               const DropoutMask& mask) {
    detail::check_mask(mask, layer.in_dim(), layer.out_dim());
    Matrix left = hadamard(layer.left.value, detail::tile_as_cols(mask.output_mask, layer.rank()));
    Matrix right =
        hadamard(layer.right.value, detail::tile_as_rows(mask.input_mask, layer.rank()));
    return {std::move(left), std::move(right)};
}

// ---- graph forward passes (activations are batch x features) ----

inline NodePtr forward_node(Graph& g, LoraLayer& layer, const NodePtr& x,
                            const DropoutMask* mask) {
    if (x->value.cols() != layer.in_dim())
        throw dim_error("lora forward: input is " + x->value.shape_str() + ", layer expects " +
                        std::to_string(layer.in_dim()) + " features");
    NodePtr down = g.param(layer.down);
    NodePtr up = g.param(layer.up);
    if (mask) {
        detail::check_mask(*mask, layer.in_dim(), layer.out_dim());
        down = hadamard(down, g.constant(detail::tile_as_rows(mask->input_mask, layer.rank())));
        up = hadamard(up, g.constant(detail::tile_as_cols(mask->output_mask, layer.rank())));
    }
    NodePtr out = matmul(x, transpose(g.param(layer.base)));
    NodePtr delta = matmul(matmul(x, transpose(down)), transpose(up));
    if (layer.scale != 1.0) delta = scale(delta, layer.scale);
    return add(out, delta);
}

inline NodePtr forward_node(Graph& g, AdaLoraLayer& layer, const NodePtr& x,
                            const DropoutMask* mask) {
    if (x->value.cols() != layer.in_dim())
        throw dim_error("adalora forward: input is " + x->value.shape_str() + ", layer expects " +
                        std::to_string(layer.in_dim()) + " features");
    NodePtr left = g.param(layer.left);
    NodePtr right = g.param(layer.right);
    if (mask) {
        detail::check_mask(*mask, layer.in_dim(), layer.out_dim());
        left = hadamard(left, g.constant(detail::tile_as_cols(mask->output_mask, layer.rank())));
        right = hadamard(right, g.constant(detail::tile_as_rows(mask->input_mask, layer.rank())));
    }
    NodePtr out = matmul(x, transpose(g.param(layer.base)));
    NodePtr h = col_scale(matmul(x, transpose(right)), g.param(layer.singular));
    NodePtr delta = matmul(h, transpose(left));
    if (layer.scale != 1.0) delta = scale(delta, layer.scale);
    return add(out, delta);
}

// Value-level forward, shared with the graph path (single source of truth).
template <class Layer>
Matrix forward(Layer& layer, const Matrix& x, const DropoutMask* mask = nullptr) {
    Graph g;
    return forward_node(g, layer, g.constant(x), mask)->value;
}

// ---- merged deltas ----

inline Matrix merged_delta(const LoraLayer& layer, const DropoutMask* mask = nullptr) {
    if (!mask) return matmul(layer.up.value, layer.down.value);
    auto [down, up] = apply_dropout(layer, *mask);
    return matmul(up, down);
}

inline Matrix merged_delta(const AdaLoraLayer& layer, const DropoutMask* mask = nullptr) {
    Matrix left = layer.left.value;
    Matrix right = layer.right.value;
    if (mask) {
        auto masked = apply_dropout(layer, *mask);
        left = std::move(masked.first);
        right = std::move(masked.second);
    }
    for (std::size_t i = 0; i < right.rows(); ++i)
        for (std::size_t j = 0; j < right.cols(); ++j) right(i, j) *= layer.singular.value(0, i);
    return matmul(left, right);
}

// Unmasked merged delta as a graph node (the sparsity penalty differentiates
// through it into the factors).
inline NodePtr merged_delta_node(Graph& g, LoraLayer& layer) {
    return matmul(g.param(layer.up), g.param(layer.down));
}

inline NodePtr merged_delta_node(Graph& g, AdaLoraLayer& layer) {
    return matmul(g.param(layer.left), row_scale(g.param(layer.right), g.param(layer.singular)));
}

}  // namespace loralab

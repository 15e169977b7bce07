#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "loralab/adapters.hpp"
#include "loralab/autodiff.hpp"
#include "loralab/error.hpp"
#include "loralab/rng.hpp"

namespace loralab {

struct DenseLayer {
    Parameter weight;  // out_dim x in_dim; y = x * W^T
};

struct BiasLayer {
    Parameter bias;  // 1 x dim; y = x + bias (row broadcast)
};

struct ReluLayer {};

using Layer = std::variant<DenseLayer, BiasLayer, ReluLayer, LoraLayer, AdaLoraLayer>;

enum class AdapterKind { lora, adalora };

struct ModelSpec {
    std::size_t input_dim = 8;
    std::vector<std::size_t> hidden = {32};
    std::size_t classes = 4;
    AdapterKind adapter = AdapterKind::lora;
    std::size_t rank = 8;
    double adapter_scale = 1.0;
    bool train_head = false;  // when true the last linear layer trains fully instead of being adapted

    std::vector<std::size_t> widths() const {
        std::vector<std::size_t> w;
        w.push_back(input_dim);
        w.insert(w.end(), hidden.begin(), hidden.end());
        w.push_back(classes);
        return w;
    }
};

// An MLP whose linear layers may be wrapped with low-rank adapters. All
// parameters are snapshotted when adapters are attached; the snapshot is
// immutable for the rest of the run.
class Model {
public:
    Model() = default;

    // Fully trainable dense MLP (the pre-training architecture).
    static Model plain_mlp(const ModelSpec& spec, std::uint64_t seed) {
        if (spec.classes < 2) throw config_error("model needs at least 2 output classes");
        if (spec.input_dim == 0) throw config_error("model input dimension must be positive");
        Model m;
        m.classes_ = spec.classes;
        m.input_dim_ = spec.input_dim;
        const auto widths = spec.widths();
        for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
            Rng rng = derive_rng(seed, {stream::kInit, l});
            const std::size_t in = widths[l];
            const std::size_t out = widths[l + 1];
            const double bound = 1.0 / std::sqrt(static_cast<double>(in));
            m.layers_.push_back(DenseLayer{{detail::uniform_matrix(out, in, bound, rng), true}});
            m.layers_.push_back(BiasLayer{{Matrix(1, out), true}});
            if (l + 2 < widths.size()) m.layers_.push_back(ReluLayer{});
        }
        return m;
    }

    // Wraps a pre-trained model's linear layers with adapters. Bases and
    // biases freeze; only adapter factors (and optionally the head) train.
    // The requested rank is capped per layer at min(out_dim, in_dim).
    static Model adapted(const Model& pretrained, const ModelSpec& spec, std::uint64_t seed) {
        Model m;
        m.classes_ = pretrained.classes_;
        m.input_dim_ = pretrained.input_dim_;
        const std::size_t last_dense = pretrained.last_dense_index();
        for (std::size_t l = 0; l < pretrained.layers_.size(); ++l) {
            const Layer& layer = pretrained.layers_[l];
            if (const auto* dense = std::get_if<DenseLayer>(&layer)) {
                if (spec.train_head && l == last_dense) {
                    m.layers_.push_back(DenseLayer{{dense->weight.value, true}});
                    continue;
                }
                Rng rng = derive_rng(seed, {stream::kInit, l});
                const std::size_t cap =
                    std::min(dense->weight.value.rows(), dense->weight.value.cols());
                const std::size_t rank = std::min(spec.rank, cap);
                if (spec.adapter == AdapterKind::lora)
                    m.layers_.push_back(
                        make_lora_layer(dense->weight.value, rank, spec.adapter_scale, rng));
                else
                    m.layers_.push_back(
                        make_adalora_layer(dense->weight.value, rank, spec.adapter_scale, rng));
            } else if (const auto* bias = std::get_if<BiasLayer>(&layer)) {
                const bool head_bias = spec.train_head && l == last_dense + 1;
                m.layers_.push_back(BiasLayer{{bias->bias.value, head_bias}});
            } else {
                m.layers_.push_back(layer);
            }
        }
        m.take_snapshot();
        return m;
    }

    static Model from_layers(std::vector<Layer> layers, std::size_t input_dim,
                             std::size_t classes) {
        Model m;
        m.layers_ = std::move(layers);
        m.input_dim_ = input_dim;
        m.classes_ = classes;
        return m;
    }

    std::size_t classes() const { return classes_; }
    std::size_t input_dim() const { return input_dim_; }
    std::vector<Layer>& layers() { return layers_; }
    const std::vector<Layer>& layers() const { return layers_; }

    // Logits for a batch x input_dim matrix; adapter layers consume masks in
    // layer order when a mask set is supplied.
    NodePtr forward(Graph& g, const NodePtr& x, const MaskSet* masks = nullptr) {
        NodePtr h = x;
        std::size_t adapter_index = 0;
        for (Layer& layer : layers_) {
            if (auto* dense = std::get_if<DenseLayer>(&layer)) {
                h = matmul(h, transpose(g.param(dense->weight)));
            } else if (auto* bias = std::get_if<BiasLayer>(&layer)) {
                h = add_row_broadcast(h, g.param(bias->bias));
            } else if (std::get_if<ReluLayer>(&layer)) {
                h = relu(h);
            } else if (auto* lora = std::get_if<LoraLayer>(&layer)) {
                h = forward_node(g, *lora, h, mask_for(masks, adapter_index++));
            } else if (auto* ada = std::get_if<AdaLoraLayer>(&layer)) {
                h = forward_node(g, *ada, h, mask_for(masks, adapter_index++));
            }
        }
        return h;
    }

    Matrix predict(const Matrix& x, const MaskSet* masks = nullptr) {
        Graph g;
        return forward(g, g.constant(x), masks)->value;
    }

    // All parameters in a fixed layer-major order (frozen ones included).
    std::vector<Parameter*> parameters() {
        std::vector<Parameter*> out;
        for (Layer& layer : layers_) {
            if (auto* dense = std::get_if<DenseLayer>(&layer)) {
                out.push_back(&dense->weight);
            } else if (auto* bias = std::get_if<BiasLayer>(&layer)) {
                out.push_back(&bias->bias);
            } else if (auto* lora = std::get_if<LoraLayer>(&layer)) {
                out.push_back(&lora->base);
                out.push_back(&lora->down);
                out.push_back(&lora->up);
            } else if (auto* ada = std::get_if<AdaLoraLayer>(&layer)) {
                out.push_back(&ada->base);
                out.push_back(&ada->left);
                out.push_back(&ada->singular);
                out.push_back(&ada->right);
            }
        }
        return out;
    }

    std::size_t trainable_count() {
        std::size_t n = 0;
        for (Parameter* p : parameters())
            if (p->trainable) n += p->value.size();
        return n;
    }

    // (in_dim, out_dim) per adapter layer, in layer order; what mask sampling needs.
    std::vector<std::pair<std::size_t, std::size_t>> mask_shapes() const {
        std::vector<std::pair<std::size_t, std::size_t>> shapes;
        for (const Layer& layer : layers_) {
            if (const auto* lora = std::get_if<LoraLayer>(&layer))
                shapes.emplace_back(lora->in_dim(), lora->out_dim());
            else if (const auto* ada = std::get_if<AdaLoraLayer>(&layer))
                shapes.emplace_back(ada->in_dim(), ada->out_dim());
        }
        return shapes;
    }

    std::size_t adapter_count() const { return mask_shapes().size(); }

    // Unmasked merged deltas of every adapter layer (for the sparsity penalty).
    std::vector<NodePtr> adapter_delta_nodes(Graph& g) {
        std::vector<NodePtr> nodes;
        for (Layer& layer : layers_) {
            if (auto* lora = std::get_if<LoraLayer>(&layer))
                nodes.push_back(merged_delta_node(g, *lora));
            else if (auto* ada = std::get_if<AdaLoraLayer>(&layer))
                nodes.push_back(merged_delta_node(g, *ada));
        }
        return nodes;
    }

    std::vector<Matrix> merged_deltas(const MaskSet* masks = nullptr) const {
        std::vector<Matrix> deltas;
        std::size_t adapter_index = 0;
        for (const Layer& layer : layers_) {
            if (const auto* lora = std::get_if<LoraLayer>(&layer))
                deltas.push_back(merged_delta(*lora, mask_for(masks, adapter_index++)));
            else if (const auto* ada = std::get_if<AdaLoraLayer>(&layer))
                deltas.push_back(merged_delta(*ada, mask_for(masks, adapter_index++)));
        }
        return deltas;
    }

    // A plain trainable copy with every adapter folded into its merged weight
    // (base + scale * delta). Used by probes that differentiate in the merged
    // parameter space.
    Model merged_plain_copy() const {
        Model m;
        m.classes_ = classes_;
        m.input_dim_ = input_dim_;
        std::size_t adapter_index = 0;
        auto deltas = merged_deltas();
        for (const Layer& layer : layers_) {
            if (const auto* dense = std::get_if<DenseLayer>(&layer)) {
                m.layers_.push_back(DenseLayer{{dense->weight.value, true}});
            } else if (const auto* bias = std::get_if<BiasLayer>(&layer)) {
                m.layers_.push_back(BiasLayer{{bias->bias.value, bias->bias.trainable}});
            } else if (std::get_if<ReluLayer>(&layer)) {
                m.layers_.push_back(ReluLayer{});
            } else if (const auto* lora = std::get_if<LoraLayer>(&layer)) {
                Matrix w = add(lora->base.value, scale(deltas[adapter_index++], lora->scale));
                m.layers_.push_back(DenseLayer{{std::move(w), true}});
            } else if (const auto* ada = std::get_if<AdaLoraLayer>(&layer)) {
                Matrix w = add(ada->base.value, scale(deltas[adapter_index++], ada->scale));
                m.layers_.push_back(DenseLayer{{std::move(w), true}});
            }
        }
        return m;
    }

    // Re-draws every adapter factor (nonzero, unlike the training init); used
    // by property checks that need a nonzero delta weight.
    void randomize_adapters(Rng& rng, double bound = 0.8) {
        auto redraw = [&](Parameter& p) {
            p.value = detail::uniform_matrix(p.value.rows(), p.value.cols(), bound, rng);
        };
        for (Layer& layer : layers_) {
            if (auto* lora = std::get_if<LoraLayer>(&layer)) {
                redraw(lora->down);
                redraw(lora->up);
            } else if (auto* ada = std::get_if<AdaLoraLayer>(&layer)) {
                redraw(ada->left);
                redraw(ada->singular);
                redraw(ada->right);
            }
        }
    }

    void take_snapshot() {
        snapshot_.clear();
        for (Parameter* p : parameters()) snapshot_.push_back(p->value);
    }

    bool has_snapshot() const { return !snapshot_.empty(); }
    const std::vector<Matrix>& snapshot() const { return snapshot_; }

    // Largest drift of any frozen parameter from its snapshot; must stay 0.
    double frozen_drift() {
        if (snapshot_.empty()) return 0.0;
        double drift = 0.0;
        auto params = parameters();
        for (std::size_t i = 0; i < params.size(); ++i)
            if (!params[i]->trainable) drift = std::max(drift, max_abs_diff(params[i]->value, snapshot_[i]));
        return drift;
    }

    // Trainable-parameter displacement from the snapshot (factor space).
    double delta_from_snapshot_norm_sq() {
        if (snapshot_.empty()) throw contract_error("delta_from_snapshot: no snapshot taken");
        double total = 0.0;
        auto params = parameters();
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (!params[i]->trainable) continue;
            total += frobenius_norm_sq(sub(params[i]->value, snapshot_[i]));
        }
        return total;
    }

private:
    static const DropoutMask* mask_for(const MaskSet* masks, std::size_t adapter_index) {
        if (!masks) return nullptr;
        if (adapter_index >= masks->masks.size())
            throw dim_error("mask set has " + std::to_string(masks->masks.size()) +
                            " masks, adapter index " + std::to_string(adapter_index) +
                            " requested");
        return &masks->masks[adapter_index];
    }

    std::size_t last_dense_index() const {
        std::size_t last = layers_.size();
        for (std::size_t l = 0; l < layers_.size(); ++l)
            if (std::holds_alternative<DenseLayer>(layers_[l])) last = l;
        if (last == layers_.size()) throw contract_error("model has no dense layer to adapt");
        return last;
    }

    std::vector<Layer> layers_;
    std::vector<Matrix> snapshot_;
    std::size_t classes_ = 0;
    std::size_t input_dim_ = 0;
};

// Draws one mask per adapter layer; the rng for layer k derives from
// (seed, path..., k) so instances and layers get independent streams.
inline MaskSet sample_mask_set(const std::vector<std::pair<std::size_t, std::size_t>>& shapes,
                               double p, std::uint64_t seed,
                               std::initializer_list<std::uint64_t> path, int instance) {
    MaskSet set;
    set.instance = instance;
    set.masks.reserve(shapes.size());
    for (std::size_t layer = 0; layer < shapes.size(); ++layer) {
        std::uint64_t s = seed;
        for (std::uint64_t v : path) s = mix_u64(s, v);
        s = mix_u64(s, static_cast<std::uint64_t>(instance));
        Rng rng = derive_rng(s, {layer});
        set.masks.push_back(sample_mask(shapes[layer].first, shapes[layer].second, p, rng, layer));
    }
    return set;
}

}  // namespace loralab

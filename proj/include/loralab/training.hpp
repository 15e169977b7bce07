#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <unordered_map>
#include <variant>
#include <vector>

#include "loralab/dataset.hpp"
#include "loralab/ensemble.hpp"
#include "loralab/model.hpp"

namespace loralab {

enum class TrainMode { dropout, explicit_reg, plain };
enum class OptimizerKind { sgd, adam };

inline const char* to_string(TrainMode m) {
    switch (m) {
        case TrainMode::dropout: return "dropout";
        case TrainMode::explicit_reg: return "explicit-reg";
        case TrainMode::plain: return "plain";
    }
    return "?";
}

inline const char* to_string(OptimizerKind k) {
    return k == OptimizerKind::sgd ? "sgd" : "adam";
}

struct TrainConfig {
    int epochs = 400;
    int batch_size = 16;
    double dropout_rate = 0.5;
    int instances = 4;
    double learning_rate = 0.15;
    double lambda = 0.0;  // explicit-reg mode only
    std::uint64_t seed = 42;
    TrainMode mode = TrainMode::dropout;
    OptimizerKind optimizer = OptimizerKind::sgd;
    double divergence_threshold = 1e6;
};

inline void validate(const TrainConfig& c) {
    if (c.epochs < 0) throw config_error("epochs must be non-negative");
    if (c.batch_size < 1) throw config_error("batch size must be positive");
    if (c.dropout_rate < 0.0 || c.dropout_rate >= 1.0)
        throw config_error("dropout rate must lie in [0, 1), got " +
                           std::to_string(c.dropout_rate));
    if (c.instances < 1) throw config_error("instance count must be positive");
    if (c.learning_rate <= 0.0) throw config_error("learning rate must be positive");
    if (c.lambda < 0.0) throw config_error("lambda must be non-negative");
}

struct EpochRow {
    int epoch = 0;
    double train_loss = 0.0;
    double test_loss = 0.0;
    double train_acc = 0.0;
    double test_acc = 0.0;
    double ece = 0.0;
    double wall_ms = 0.0;  // measured; reported on the console, not persisted
};

struct RunRecord {
    std::vector<EpochRow> rows;
    TrainConfig config;
};

// ---- objectives ----

// Mean over the supplied dropout instances of the masked cross-entropy on the
// batch. Instances share one parameter leaf each, so backward() of the mean
// accumulates 1/N of every instance's adjoint into the shared parameters.
inline NodePtr multi_instance_loss(Model& model, Graph& g, const Matrix& x,
                                   const std::vector<int>& labels,
                                   std::span<const MaskSet> mask_sets) {
    if (mask_sets.empty()) throw config_error("multi_instance_loss: need at least one instance");
    NodePtr input = g.constant(x);
    std::vector<NodePtr> losses;
    losses.reserve(mask_sets.size());
    for (const MaskSet& set : mask_sets)
        losses.push_back(softmax_cross_entropy(model.forward(g, input, &set), labels));
    return average(losses);
}

// Unmasked task loss plus lambda * (2p - p^2) * ||merged delta||^2 summed over
// adapter layers; the closed form of the expected masked-norm penalty.
inline NodePtr explicit_regularized_loss(Model& model, Graph& g, const Matrix& x,
                                         const std::vector<int>& labels, double lambda,
                                         double p) {
    if (lambda < 0.0) throw config_error("lambda must be non-negative");
    const double coeff = lambda * entry_zero_probability(p);
    NodePtr loss = softmax_cross_entropy(model.forward(g, g.constant(x)), labels);
    if (coeff == 0.0) return loss;
    NodePtr penalty;
    for (NodePtr& delta : model.adapter_delta_nodes(g)) {
        NodePtr term = sum_squares(delta);
        penalty = penalty ? add(penalty, term) : term;
    }
    if (!penalty) return loss;
    return add(loss, scale(penalty, coeff));
}

// ---- optimizers ----

inline void sgd_step(Parameter& param, const Matrix& grad, double lr) {
    if (lr <= 0.0) throw contract_error("sgd_step: learning rate must be positive");
    if (!param.value.same_shape(grad))
        throw contract_error("sgd_step: gradient shape " + grad.shape_str() +
                             " does not match parameter " + param.value.shape_str());
    if (!param.trainable) return;
    for (std::size_t i = 0; i < param.value.size(); ++i)
        param.value.flat()[i] -= lr * grad.flat()[i];
}

// Applies one step to every trainable parameter bound in the graph, in
// binding order.
inline void sgd_step(const Graph& g, double lr) {
    for (const auto& [param, node] : g.bindings()) sgd_step(*param, node->grad, lr);
}

struct SgdOptimizer {
    double lr = 0.05;
    void step(const Graph& g) { sgd_step(g, lr); }
};

struct AdamOptimizer {
    double lr = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    void step(const Graph& g) {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1, t_);
        const double bc2 = 1.0 - std::pow(beta2, t_);
        for (const auto& [param, node] : g.bindings()) {
            if (!param->trainable) continue;
            auto& [m, v] = state(*param);
            for (std::size_t i = 0; i < param->value.size(); ++i) {
                const double grad = node->grad.flat()[i];
                m.flat()[i] = beta1 * m.flat()[i] + (1.0 - beta1) * grad;
                v.flat()[i] = beta2 * v.flat()[i] + (1.0 - beta2) * grad * grad;
                param->value.flat()[i] -=
                    lr * (m.flat()[i] / bc1) / (std::sqrt(v.flat()[i] / bc2) + eps);
            }
        }
    }

private:
    std::pair<Matrix, Matrix>& state(Parameter& p) {
        auto it = state_.find(&p);
        if (it == state_.end())
            it = state_
                     .emplace(&p, std::make_pair(Matrix(p.value.rows(), p.value.cols()),
                                                 Matrix(p.value.rows(), p.value.cols())))
                     .first;
        return it->second;
    }

    std::unordered_map<Parameter*, std::pair<Matrix, Matrix>> state_;
    long t_ = 0;
};

using Optimizer = std::variant<SgdOptimizer, AdamOptimizer>;

inline Optimizer make_optimizer(const TrainConfig& c) {
    if (c.optimizer == OptimizerKind::adam) {
        AdamOptimizer adam;
        adam.lr = c.learning_rate;
        return adam;
    }
    return SgdOptimizer{c.learning_rate};
}

// ---- training loop ----

// One optimizer step per iteration: shuffle, draw N mask sets per iteration
// (shared across the batch), accumulate the objective, update trainables
// only. Per-epoch metrics come from the test-time ensemble on both splits.
// A fixed seed reproduces the record bit for bit.
inline RunRecord train(Model& model, const Dataset& train_set, const Dataset& test_set,
                       const TrainConfig& config, const EvalOptions& eval_options,
                       const std::function<void(const EpochRow&)>& on_epoch = nullptr) {
    validate(config);
    if (train_set.size() == 0 || test_set.size() == 0)
        throw config_error("train: datasets must be non-empty");

    RunRecord record;
    record.config = config;
    record.rows.reserve(static_cast<std::size_t>(config.epochs));

    const auto mask_shapes = model.mask_shapes();
    Optimizer optimizer = make_optimizer(config);
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const auto started = std::chrono::steady_clock::now();
        Rng shuffle_rng = derive_rng(config.seed, {stream::kShuffle,
                                                   static_cast<std::uint64_t>(epoch)});
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[shuffle_rng.next_below(i)]);

        const std::size_t step = static_cast<std::size_t>(config.batch_size);
        std::uint64_t iteration = 0;
        for (std::size_t start = 0; start < order.size(); start += step, ++iteration) {
            const std::size_t count = std::min(step, order.size() - start);
            Matrix x(count, train_set.features.cols());
            std::vector<int> y(count);
            for (std::size_t i = 0; i < count; ++i) {
                const std::size_t row = order[start + i];
                for (std::size_t j = 0; j < x.cols(); ++j) x(i, j) = train_set.features(row, j);
                y[i] = train_set.labels[row];
            }

            Graph g;
            NodePtr loss;
            if (config.mode == TrainMode::dropout) {
                std::vector<MaskSet> sets;
                sets.reserve(static_cast<std::size_t>(config.instances));
                for (int r = 0; r < config.instances; ++r)
                    sets.push_back(sample_mask_set(
                        mask_shapes, config.dropout_rate, config.seed,
                        {stream::kTrainMask, static_cast<std::uint64_t>(epoch), iteration}, r));
                loss = multi_instance_loss(model, g, x, y, sets);
            } else if (config.mode == TrainMode::explicit_reg) {
                loss = explicit_regularized_loss(model, g, x, y, config.lambda,
                                                 config.dropout_rate);
            } else {
                loss = softmax_cross_entropy(model.forward(g, g.constant(x)), y);
            }

            const double value = loss->value(0, 0);
            if (!std::isfinite(value) || value > config.divergence_threshold)
                throw numerical_error("training diverged at epoch " + std::to_string(epoch) +
                                      ", iteration " + std::to_string(iteration) + " (loss " +
                                      std::to_string(value) + ")");
            backward(loss);
            std::visit([&g](auto& opt) { opt.step(g); }, optimizer);
        }

        EvalOptions opts = eval_options;
        if (config.mode != TrainMode::dropout) {
            opts.dropout_rate = 0.0;
            opts.instances = 1;
        }
        MaskStream train_stream{config.seed,
                                mix_u64(stream::kEpochEval, static_cast<std::uint64_t>(epoch) * 2)};
        MaskStream test_stream{config.seed,
                               mix_u64(stream::kEpochEval, static_cast<std::uint64_t>(epoch) * 2 + 1)};
        EvalResult train_eval =
            evaluate(model, train_set.features, train_set.labels, opts, train_stream);
        EvalResult test_eval =
            evaluate(model, test_set.features, test_set.labels, opts, test_stream);

        EpochRow row;
        row.epoch = epoch;
        row.train_loss = train_eval.loss;
        row.test_loss = test_eval.loss;
        row.train_acc = train_eval.accuracy;
        row.test_acc = test_eval.accuracy;
        row.ece = test_eval.calibration.ece;
        row.wall_ms = std::chrono::duration<double, std::milli>(
                          std::chrono::steady_clock::now() - started)
                          .count();
        record.rows.push_back(row);
        if (on_epoch) on_epoch(row);
    }
    return record;
}

}  // namespace loralab

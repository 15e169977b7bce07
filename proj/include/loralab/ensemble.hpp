#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "loralab/error.hpp"
#include "loralab/matrix.hpp"
#include "loralab/metrics.hpp"
#include "loralab/model.hpp"

namespace loralab {

enum class AggregationDomain { logits, probabilities };

inline const char* to_string(AggregationDomain d) {
    return d == AggregationDomain::logits ? "logits" : "probabilities";
}

// Identifies the mask stream a batch of ensemble forwards draws from. Masks
// for instance r, layer l derive from (seed, tag, batch, r, l).
struct MaskStream {
    std::uint64_t seed = 0;
    std::uint64_t tag = stream::kEval;
    std::uint64_t batch = 0;
};

struct EnsembleOutput {
    Matrix mean;                       // batch x K, arithmetic mean of per_instance
    std::vector<Matrix> per_instance;  // raw logits or row-softmaxed, per domain
    AggregationDomain domain = AggregationDomain::logits;
    double dropout_rate = 0.0;
};

// Mean as first + mean of differences: identical instances aggregate to
// themselves bit for bit, which the p = 0 and N = 1 contracts rely on.
inline Matrix aggregate_mean(std::span<const Matrix> outputs) {
    if (outputs.empty()) throw contract_error("aggregate_mean: no outputs");
    Matrix mean = outputs[0];
    if (outputs.size() == 1) return mean;
    Matrix correction(mean.rows(), mean.cols());
    for (std::size_t r = 1; r < outputs.size(); ++r) {
        require_same_shape(mean, outputs[r], "aggregate_mean");
        for (std::size_t i = 0; i < correction.size(); ++i)
            correction.flat()[i] += outputs[r].flat()[i] - mean.flat()[i];
    }
    const double inv = 1.0 / static_cast<double>(outputs.size());
    for (std::size_t i = 0; i < mean.size(); ++i) mean.flat()[i] += correction.flat()[i] * inv;
    return mean;
}

// Draws fresh masks for one batch, runs the masked forwards, and averages in
// the requested domain. Instances reduce in order 0..N-1.
inline EnsembleOutput ensemble_predict(Model& model, const Matrix& x, double p, int instances,
                                       const MaskStream& stream,
                                       AggregationDomain domain = AggregationDomain::logits) {
    if (instances < 1) throw config_error("ensemble needs at least 1 dropout instance");
    if (p < 0.0 || p >= 1.0)
        throw config_error("dropout rate must lie in [0, 1), got " + std::to_string(p));
    EnsembleOutput out;
    out.domain = domain;
    out.dropout_rate = p;
    out.per_instance.reserve(static_cast<std::size_t>(instances));
    const auto shapes = model.mask_shapes();
    for (int r = 0; r < instances; ++r) {
        Matrix logits;
        if (p == 0.0 || shapes.empty()) {
            logits = model.predict(x);
        } else {
            MaskSet set = sample_mask_set(shapes, p, stream.seed, {stream.tag, stream.batch}, r);
            logits = model.predict(x, &set);
        }
        out.per_instance.push_back(domain == AggregationDomain::probabilities
                                       ? softmax_rows(logits)
                                       : std::move(logits));
    }
    out.mean = aggregate_mean(out.per_instance);
    return out;
}

// Probabilities of the aggregated predictor (softmax of mean logits, or the
// mean probabilities directly).
inline Matrix ensemble_probabilities(const EnsembleOutput& out) {
    return out.domain == AggregationDomain::logits ? softmax_rows(out.mean) : out.mean;
}

namespace detail {
inline double nll_of_probabilities(const Matrix& probs, std::span<const int> labels) {
    double loss = 0.0;
    for (std::size_t i = 0; i < probs.rows(); ++i)
        loss -= std::log(probs(i, static_cast<std::size_t>(labels[i])));
    return loss / static_cast<double>(probs.rows());
}
}  // namespace detail

// Cross-entropy of the aggregated output.
inline double ensemble_loss(const EnsembleOutput& out, std::span<const int> labels) {
    if (labels.size() != out.mean.rows())
        throw dim_error("ensemble_loss: label count does not match batch");
    return detail::nll_of_probabilities(ensemble_probabilities(out), labels);
}

// Mean over instances of each instance's own cross-entropy.
inline double mean_instance_loss(const EnsembleOutput& out, std::span<const int> labels) {
    double total = 0.0;
    for (const Matrix& o : out.per_instance) {
        const Matrix probs =
            out.domain == AggregationDomain::logits ? softmax_rows(o) : o;
        total += detail::nll_of_probabilities(probs, labels);
    }
    return total / static_cast<double>(out.per_instance.size());
}

struct EvalOptions {
    double dropout_rate = 0.5;
    int instances = 4;
    AggregationDomain domain = AggregationDomain::logits;
    int bins = 10;
    int batch_size = 0;  // 0 = the whole split as one batch
};

struct EvalResult {
    double loss = 0.0;
    double accuracy = 0.0;
    CalibrationReport calibration;
    std::size_t n = 0;
    double dropout_rate = 0.0;
    int instances = 1;
    AggregationDomain domain = AggregationDomain::logits;
    std::vector<double> per_sample_loss;  // -log p of the true class, aggregated output
};

// Full-split evaluation with the test-time ensemble; masks are redrawn per
// eval batch (batch index feeds the stream derivation).
inline EvalResult evaluate(Model& model, const Matrix& features, std::span<const int> labels,
                           const EvalOptions& options, MaskStream stream) {
    if (features.rows() != labels.size())
        throw dim_error("evaluate: label count does not match features");
    const std::size_t n = features.rows();
    const std::size_t step = options.batch_size > 0 ? static_cast<std::size_t>(options.batch_size) : n;

    EvalResult result;
    result.n = n;
    result.dropout_rate = options.dropout_rate;
    result.instances = options.instances;
    result.domain = options.domain;
    result.per_sample_loss.reserve(n);

    Matrix all_probs(n, model.classes());
    for (std::size_t start = 0, batch = 0; start < n; start += step, ++batch) {
        const std::size_t count = std::min(step, n - start);
        Matrix x(count, features.cols());
        std::vector<int> y(count);
        for (std::size_t i = 0; i < count; ++i) {
            for (std::size_t j = 0; j < features.cols(); ++j) x(i, j) = features(start + i, j);
            y[i] = labels[start + i];
        }
        stream.batch = batch;
        EnsembleOutput out =
            ensemble_predict(model, x, options.dropout_rate, options.instances, stream, options.domain);
        Matrix probs = ensemble_probabilities(out);
        for (std::size_t i = 0; i < count; ++i) {
            for (std::size_t j = 0; j < probs.cols(); ++j) all_probs(start + i, j) = probs(i, j);
            result.per_sample_loss.push_back(
                -std::log(probs(i, static_cast<std::size_t>(y[i]))));
        }
    }
    double total = 0.0;
    for (double v : result.per_sample_loss) total += v;
    result.loss = total / static_cast<double>(n);
    result.accuracy = accuracy(all_probs, labels);
    result.calibration = ece(all_probs, labels, options.bins);
    return result;
}

}  // namespace loralab

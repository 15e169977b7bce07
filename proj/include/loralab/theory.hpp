#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "loralab/adapters.hpp"
#include "loralab/autodiff.hpp"
#include "loralab/dataset.hpp"
#include "loralab/eigen.hpp"
#include "loralab/ensemble.hpp"
#include "loralab/error.hpp"
#include "loralab/parallel.hpp"
#include "loralab/rng.hpp"

namespace loralab {

// ---- expected masked-norm identity ----

struct McNormReport {
    double p = 0.0;
    double drop_probability = 0.0;  // 2p - p^2
    long draws = 0;
    double mc_estimate = 0.0;
    double closed_form = 0.0;
    double rel_error = 0.0;
    double standard_error = 0.0;
};

// Standard error of the Monte Carlo estimator of E||d (.) delta||^2 where each
// entry is kept (=1, dropped) with probability q = 2p - p^2.
inline double mc_masked_norm_standard_error(std::span<const double> delta, double p, long draws) {
    const double q = entry_zero_probability(p);
    double var = 0.0;
    for (double v : delta) var += v * v * v * v;
    var *= q * (1.0 - q);
    return std::sqrt(var / static_cast<double>(draws));
}

// Monte Carlo estimate of the expected masked squared norm against its closed
// form (2p - p^2) * ||delta||^2. A mask entry of 1 marks a dropped coordinate.
inline McNormReport mc_masked_norm_check(std::span<const double> delta, double p, long draws,
                                         Rng rng) {
    if (draws < 1) throw contract_error("mc_masked_norm_check: need at least one draw");
    McNormReport report;
    report.p = p;
    report.drop_probability = entry_zero_probability(p);
    report.draws = draws;
    double norm_sq = 0.0;
    for (double v : delta) norm_sq += v * v;
    report.closed_form = report.drop_probability * norm_sq;
    double total = 0.0;
    for (long t = 0; t < draws; ++t) {
        double masked = 0.0;
        for (double v : delta)
            if (rng.bernoulli(report.drop_probability)) masked += v * v;
        total += masked;
    }
    report.mc_estimate = total / static_cast<double>(draws);
    const double denom = std::max(std::abs(report.closed_form), 1e-300);
    report.rel_error = std::abs(report.mc_estimate - report.closed_form) / denom;
    report.standard_error = mc_masked_norm_standard_error(delta, p, draws);
    return report;
}

// ---- ensemble convexity check ----

struct JensenRow {
    double ensemble_loss = 0.0;       // loss of the aggregated output
    double mean_instance_loss = 0.0;  // mean of per-instance losses
    double gap = 0.0;                 // mean_instance_loss - ensemble_loss
};

struct JensenReport {
    std::vector<JensenRow> rows;
    int violations = 0;
    double most_negative_gap = 0.0;  // 0 when every gap clears the slack
    double slack = 1e-10;
    AggregationDomain domain = AggregationDomain::logits;
    double p = 0.0;
    int instances = 0;
};

// Per trial: re-randomized adapters, a random batch, fresh masks; records the
// gap between the mean of instance losses and the loss of the aggregated
// output. Convexity of cross-entropy makes every gap >= 0 up to fp slack.
inline JensenReport jensen_check(Model& model, const Dataset& data, double p, int instances,
                                 int trials, AggregationDomain domain, std::uint64_t seed,
                                 int batch_size = 8, bool randomize_adapters = true) {
    if (trials < 1) throw config_error("jensen_check: need at least one trial");
    if (batch_size < 1) throw config_error("jensen_check: batch size must be positive");
    JensenReport report;
    report.domain = domain;
    report.p = p;
    report.instances = instances;
    report.rows.reserve(static_cast<std::size_t>(trials));
    for (int trial = 0; trial < trials; ++trial) {
        if (randomize_adapters) {
            Rng init = derive_rng(seed, {stream::kJensen, static_cast<std::uint64_t>(trial), 1});
            model.randomize_adapters(init);
        }
        Rng pick = derive_rng(seed, {stream::kJensen, static_cast<std::uint64_t>(trial), 0});
        std::vector<std::size_t> rows(static_cast<std::size_t>(batch_size));
        for (auto& r : rows) r = pick.next_below(data.size());
        Dataset batch = take_rows(data, rows);

        MaskStream stream{seed, stream::kJensen, static_cast<std::uint64_t>(trial)};
        EnsembleOutput out =
            ensemble_predict(model, batch.features, p, instances, stream, domain);
        JensenRow row;
        row.ensemble_loss = ensemble_loss(out, batch.labels);
        row.mean_instance_loss = mean_instance_loss(out, batch.labels);
        row.gap = row.mean_instance_loss - row.ensemble_loss;
        if (row.gap < -report.slack) ++report.violations;
        report.most_negative_gap = std::min(report.most_negative_gap, std::min(row.gap, 0.0));
        report.rows.push_back(row);
    }
    return report;
}

// ---- stability bound ----

// 2 eta^2 / ((lambda_min + 2 lambda (2p - p^2)) n)
inline double phs_beta_bound(double eta, double lambda_min, double lambda, double p, long n) {
    if (n < 1) throw contract_error("phs_beta_bound: n must be positive");
    const double denom = lambda_min + 2.0 * lambda * entry_zero_probability(p);
    if (denom <= 0.0) return std::numeric_limits<double>::infinity();
    return 2.0 * eta * eta / (denom * static_cast<double>(n));
}

// sqrt((C^2 + 24 C eta^2 / (lambda_min + 2 lambda (2p - p^2))) / (2 n delta));
// non-increasing in p on [0, 1) for any positive constants.
inline double theoretical_gap_bound(double C, double eta, double lambda_min, double lambda,
                                    double p, long n, double delta) {
    if (n < 1) throw contract_error("theoretical_gap_bound: n must be positive");
    if (delta <= 0.0) throw contract_error("theoretical_gap_bound: delta must be positive");
    const double denom = lambda_min + 2.0 * lambda * entry_zero_probability(p);
    if (denom <= 0.0) return std::numeric_limits<double>::infinity();
    const double numerator = C * C + 24.0 * C * eta * eta / denom;
    return std::sqrt(numerator / (2.0 * static_cast<double>(n) * delta));
}

enum class ProbeLoss { logistic, squared };

// Data for the convex probe; labels drive the logistic loss, targets (n x
// outputs) the squared loss.
struct ProbeData {
    Matrix features;
    std::vector<int> labels;
    Matrix targets;

    std::size_t size() const { return features.rows(); }
};

struct ProbeSpec {
    ProbeLoss loss = ProbeLoss::logistic;
    int outputs = 2;
    int rank = 0;             // 0 = full rank min(outputs, input_dim)
    double tolerance = 1e-8;  // factor-space gradient norm at which training stops
    long max_iterations = 400000;
    double hessian_step = 1e-4;
    std::uint64_t seed = 7;
};

struct StabilitySample {
    int index = 0;
    double perturbation = 0.0;  // |L_lambda(x_i; leave-one-out optimum) - L_lambda(x_i; full optimum)|
};

struct StabilityReport {
    long n = 0;
    double lambda = 0.0;
    double p = 0.0;
    double eta = 0.0;         // max per-sample gradient norm of L_lambda over visited optima
    double lambda_min = 0.0;  // smallest Hessian eigenvalue of the data loss, clamped at 0
    double beta_bound = 0.0;
    std::vector<StabilitySample> samples;
    double max_observed = 0.0;
    bool bound_satisfied = false;
    double hessian_asymmetry = 0.0;
    double final_gradient_norm = 0.0;
    // eta is a local surrogate for the global Lipschitz constant: it is
    // measured only at the optima this probe visits.
    bool eta_is_local_surrogate = true;
};

namespace probe_detail {

struct Problem {
    const Matrix* features = nullptr;
    const std::vector<int>* labels = nullptr;
    const Matrix* targets = nullptr;
    ProbeLoss loss = ProbeLoss::logistic;
    double coeff = 0.0;  // lambda * (2p - p^2)
};

inline NodePtr loss_node(Graph& g, LoraLayer& layer, const Problem& prob) {
    NodePtr logits = forward_node(g, layer, g.constant(*prob.features), nullptr);
    NodePtr task = prob.loss == ProbeLoss::logistic
                       ? softmax_cross_entropy(logits, *prob.labels)
                       : half_squared_error(logits, *prob.targets);
    if (prob.coeff == 0.0) return task;
    NodePtr delta_sq = sum_squares(matmul(g.param(layer.up), g.param(layer.down)));
    return add(task, scale(delta_sq, prob.coeff));
}

struct MinimizeOutcome {
    double gradient_norm = 0.0;
    long iterations = 0;
    bool converged = false;
};

inline std::vector<double> factor_gradient(LoraLayer& layer, const Problem& prob,
                                           double* value = nullptr) {
    Graph g;
    NodePtr loss = loss_node(g, layer, prob);
    backward(loss);
    if (value) *value = loss->value(0, 0);
    const Matrix& gd = g.find(layer.down)->grad;
    const Matrix& gu = g.find(layer.up)->grad;
    std::vector<double> grad;
    grad.reserve(gd.size() + gu.size());
    grad.insert(grad.end(), gd.flat().begin(), gd.flat().end());
    grad.insert(grad.end(), gu.flat().begin(), gu.flat().end());
    return grad;
}

inline void move_factors(LoraLayer& layer, std::span<const double> direction, double step) {
    std::size_t k = 0;
    for (double& v : layer.down.value.flat()) v += step * direction[k++];
    for (double& v : layer.up.value.flat()) v += step * direction[k++];
}

inline double norm(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

// Gaussian elimination with partial pivoting; empty result when singular.
inline std::vector<double> solve_linear(Matrix a, std::vector<double> b) {
    const std::size_t n = b.size();
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t pivot = col;
        for (std::size_t r = col + 1; r < n; ++r)
            if (std::abs(a(r, col)) > std::abs(a(pivot, col))) pivot = r;
        if (std::abs(a(pivot, col)) < 1e-300) return {};
        if (pivot != col) {
            for (std::size_t c = 0; c < n; ++c) std::swap(a(pivot, c), a(col, c));
            std::swap(b[pivot], b[col]);
        }
        for (std::size_t r = col + 1; r < n; ++r) {
            const double factor = a(r, col) / a(col, col);
            if (factor == 0.0) continue;
            for (std::size_t c = col; c < n; ++c) a(r, c) -= factor * a(col, c);
            b[r] -= factor * b[col];
        }
    }
    std::vector<double> x(n);
    for (std::size_t i = n; i-- > 0;) {
        double s = b[i];
        for (std::size_t c = i + 1; c < n; ++c) s -= a(i, c) * x[c];
        x[i] = s / a(i, i);
    }
    return x;
}

// Factor-space Hessian by central differences of the analytic gradient.
inline Matrix factor_hessian(LoraLayer& layer, const Problem& prob, std::size_t dim,
                             double step) {
    Matrix h(dim, dim);
    std::vector<double> unit(dim, 0.0);
    for (std::size_t j = 0; j < dim; ++j) {
        unit[j] = 1.0;
        move_factors(layer, unit, step);
        const std::vector<double> up = factor_gradient(layer, prob);
        move_factors(layer, unit, -2.0 * step);
        const std::vector<double> down = factor_gradient(layer, prob);
        move_factors(layer, unit, step);
        unit[j] = 0.0;
        for (std::size_t i = 0; i < dim; ++i) h(i, j) = (up[i] - down[i]) / (2.0 * step);
    }
    return h;
}

// Two-phase deterministic full-batch minimizer. Armijo-backtracked gradient
// descent makes global progress until loss decreases fall below fp
// resolution; a damped Newton polish then drives the analytic gradient norm
// to the tolerance (the loss value plays no role there, so the fp floor of
// the objective does not cap convergence).
inline MinimizeOutcome minimize(LoraLayer& layer, const Problem& prob, double tol,
                                long max_iterations) {
    double step = 1.0;
    MinimizeOutcome outcome;
    for (long it = 0; it <= max_iterations; ++it) {
        double f0 = 0.0;
        const std::vector<double> grad = factor_gradient(layer, prob, &f0);
        const double grad_norm = norm(grad);
        const double grad_sq = grad_norm * grad_norm;
        outcome.gradient_norm = grad_norm;
        outcome.iterations = it;
        if (grad_norm < tol) {
            outcome.converged = true;
            return outcome;
        }
        if (it == max_iterations) break;

        double t = step;
        bool accepted = false;
        for (int shrink = 0; shrink < 70 && !accepted; ++shrink) {
            move_factors(layer, grad, -t);
            Graph probe;
            const double f1 = loss_node(probe, layer, prob)->value(0, 0);
            if (std::isfinite(f1) && f1 < f0 && f1 <= f0 - 1e-4 * t * grad_sq)
                accepted = true;
            else
                move_factors(layer, grad, t);
            if (!accepted) t *= 0.5;
        }
        if (!accepted) break;  // at the fp floor of the objective; polish below
        step = std::min(t * 2.0, 1e8);
    }

    const std::size_t dim = layer.down.value.size() + layer.up.value.size();
    for (int it = 0; it < 200; ++it) {
        std::vector<double> grad = factor_gradient(layer, prob);
        const double grad_norm = norm(grad);
        outcome.gradient_norm = grad_norm;
        if (grad_norm < tol) {
            outcome.converged = true;
            return outcome;
        }
        const Matrix hessian = factor_hessian(layer, prob, dim, 1e-5);
        std::vector<double> rhs(dim);
        for (std::size_t i = 0; i < dim; ++i) rhs[i] = -grad[i];

        double mu = 1e-10;
        bool accepted = false;
        for (int damp = 0; damp < 60 && !accepted; ++damp) {
            Matrix damped = hessian;
            for (std::size_t i = 0; i < dim; ++i) damped(i, i) += mu;
            std::vector<double> direction = solve_linear(damped, rhs);
            if (!direction.empty()) {
                move_factors(layer, direction, 1.0);
                const double new_norm = norm(factor_gradient(layer, prob));
                if (std::isfinite(new_norm) && new_norm < grad_norm)
                    accepted = true;
                else
                    move_factors(layer, direction, -1.0);
            }
            if (!accepted) mu = mu == 0.0 ? 1e-10 : mu * 10.0;
        }
        if (!accepted) return outcome;  // gradient cannot be reduced further
    }
    return outcome;
}

inline Matrix row_of(const Matrix& m, std::size_t i) {
    Matrix out(1, m.cols());
    for (std::size_t j = 0; j < m.cols(); ++j) out(0, j) = m(i, j);
    return out;
}

// L_lambda(x_i; theta): the sample's own loss plus the full penalty term.
inline double sample_loss(LoraLayer& layer, const Problem& prob, std::size_t i) {
    Graph g;
    NodePtr logits = forward_node(g, layer, g.constant(row_of(*prob.features, i)), nullptr);
    double value;
    if (prob.loss == ProbeLoss::logistic) {
        value = softmax_cross_entropy(logits, {(*prob.labels)[i]})->value(0, 0);
    } else {
        value = half_squared_error(logits, row_of(*prob.targets, i))->value(0, 0);
    }
    if (prob.coeff > 0.0) value += prob.coeff * frobenius_norm_sq(merged_delta(layer));
    return value;
}

// Gradient of L_lambda(x_i; theta) with respect to the merged weight
// theta = base + up * down, as a flat vector.
inline std::vector<double> merged_sample_gradient(const Matrix& merged, const Matrix& base,
                                                  const Problem& prob, std::size_t i) {
    Parameter w{merged, true};
    Graph g;
    NodePtr pred = matmul(g.constant(row_of(*prob.features, i)), transpose(g.param(w)));
    NodePtr loss = prob.loss == ProbeLoss::logistic
                       ? softmax_cross_entropy(pred, {(*prob.labels)[i]})
                       : half_squared_error(pred, row_of(*prob.targets, i));
    if (prob.coeff > 0.0)
        loss = add(loss, scale(sum_squares(sub(g.param(w), g.constant(base))), prob.coeff));
    backward(loss);
    const Matrix& grad = g.find(w)->grad;
    return {grad.flat().begin(), grad.flat().end()};
}

inline double max_sample_gradient_norm(LoraLayer& layer, const Problem& prob) {
    const Matrix merged = add(layer.base.value, merged_delta(layer));
    double max_norm = 0.0;
    for (std::size_t i = 0; i < prob.features->rows(); ++i) {
        double sq = 0.0;
        for (double v : merged_sample_gradient(merged, layer.base.value, prob, i)) sq += v * v;
        max_norm = std::max(max_norm, std::sqrt(sq));
    }
    return max_norm;
}

inline Problem drop_sample(const Problem& prob, std::size_t drop, Matrix& features_out,
                           std::vector<int>& labels_out, Matrix& targets_out) {
    const std::size_t n = prob.features->rows();
    features_out = Matrix(n - 1, prob.features->cols());
    labels_out.clear();
    if (prob.loss == ProbeLoss::squared) targets_out = Matrix(n - 1, prob.targets->cols());
    std::size_t r = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (i == drop) continue;
        for (std::size_t j = 0; j < prob.features->cols(); ++j)
            features_out(r, j) = (*prob.features)(i, j);
        if (prob.loss == ProbeLoss::logistic) labels_out.push_back((*prob.labels)[i]);
        else
            for (std::size_t j = 0; j < prob.targets->cols(); ++j)
                targets_out(r, j) = (*prob.targets)(i, j);
        ++r;
    }
    Problem out = prob;
    out.features = &features_out;
    out.labels = &labels_out;
    out.targets = &targets_out;
    return out;
}

}  // namespace probe_detail

// Trains a low-rank-reparameterized convex learner to the gradient tolerance,
// retrains it once per left-out sample from a warm start, and checks every
// measured loss perturbation against the stability bound
// 2 eta^2 / ((lambda_min + 2 lambda (2p - p^2)) n).
inline StabilityReport stability_probe(const ProbeData& data, double lambda, double p,
                                       const ProbeSpec& spec) {
    const long n = static_cast<long>(data.size());
    if (n < 2) throw config_error("stability_probe: need at least 2 samples");
    if (lambda < 0.0) throw config_error("stability_probe: lambda must be non-negative");
    if (spec.outputs < 1) throw config_error("stability_probe: outputs must be positive");
    if (spec.loss == ProbeLoss::logistic) {
        if (data.labels.size() != data.features.rows())
            throw dim_error("stability_probe: label count does not match features");
    } else if (data.targets.rows() != data.features.rows() ||
               data.targets.cols() != static_cast<std::size_t>(spec.outputs)) {
        throw dim_error("stability_probe: target shape does not match features/outputs");
    }

    const std::size_t input_dim = data.features.cols();
    const std::size_t outputs = static_cast<std::size_t>(spec.outputs);
    const std::size_t rank = spec.rank > 0
                                 ? static_cast<std::size_t>(spec.rank)
                                 : std::min(outputs, input_dim);
    const double coeff = lambda * entry_zero_probability(p);

    Rng init = derive_rng(spec.seed, {stream::kProbe, 0});
    LoraLayer full = make_lora_layer(Matrix(outputs, input_dim), rank, 1.0, init);

    probe_detail::Problem problem;
    problem.features = &data.features;
    problem.labels = &data.labels;
    problem.targets = &data.targets;
    problem.loss = spec.loss;
    problem.coeff = coeff;

    auto full_outcome = probe_detail::minimize(full, problem, spec.tolerance, spec.max_iterations);
    if (!full_outcome.converged)
        throw probe_error("stability_probe: full-data optimization stalled at gradient norm " +
                          std::to_string(full_outcome.gradient_norm) +
                          " (bound assumptions unverifiable)");

    StabilityReport report;
    report.n = n;
    report.lambda = lambda;
    report.p = p;
    report.final_gradient_norm = full_outcome.gradient_norm;

    // Hessian of the unregularized data loss in the merged parameter space.
    const Matrix merged_opt = add(full.base.value, merged_delta(full));
    auto gradient_at = [&](const std::vector<double>& theta) {
        Parameter w{Matrix(outputs, input_dim), true};
        for (std::size_t i = 0; i < theta.size(); ++i) w.value.flat()[i] = theta[i];
        Graph g;
        NodePtr pred = matmul(g.constant(data.features), transpose(g.param(w)));
        NodePtr loss = spec.loss == ProbeLoss::logistic
                           ? softmax_cross_entropy(pred, data.labels)
                           : half_squared_error(pred, data.targets);
        backward(loss);
        const Matrix& grad = g.find(w)->grad;
        return std::vector<double>(grad.flat().begin(), grad.flat().end());
    };
    Matrix hessian = finite_difference_hessian(
        gradient_at, {merged_opt.flat().begin(), merged_opt.flat().end()}, spec.hessian_step);
    report.hessian_asymmetry = max_asymmetry(hessian);
    if (report.hessian_asymmetry > 1e-6)
        throw numerical_error("stability_probe: Hessian asymmetry " +
                              std::to_string(report.hessian_asymmetry) + " exceeds 1e-6");
    const auto eigenvalues = jacobi_eigenvalues(symmetrize(hessian));
    report.lambda_min = std::max(0.0, eigenvalues.front());

    // Leave-one-out retrainings, warm-started from the full optimum.
    report.samples.resize(static_cast<std::size_t>(n));
    std::vector<double> loo_eta(static_cast<std::size_t>(n), 0.0);
    std::vector<double> full_losses(static_cast<std::size_t>(n), 0.0);
    for (std::size_t i = 0; i < static_cast<std::size_t>(n); ++i)
        full_losses[i] = probe_detail::sample_loss(full, problem, i);

    parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
        LoraLayer loo = full;  // warm start at the full-data optimum
        Matrix features;
        std::vector<int> labels;
        Matrix targets;
        probe_detail::Problem reduced =
            probe_detail::drop_sample(problem, i, features, labels, targets);
        auto outcome = probe_detail::minimize(loo, reduced, spec.tolerance, spec.max_iterations);
        if (!outcome.converged)
            throw probe_error("stability_probe: leave-one-out optimization for sample " +
                              std::to_string(i) + " stalled at gradient norm " +
                              std::to_string(outcome.gradient_norm));
        report.samples[i].index = static_cast<int>(i);
        report.samples[i].perturbation =
            std::abs(probe_detail::sample_loss(loo, problem, i) - full_losses[i]);
        loo_eta[i] = probe_detail::max_sample_gradient_norm(loo, problem);
    });

    report.eta = probe_detail::max_sample_gradient_norm(full, problem);
    for (double v : loo_eta) report.eta = std::max(report.eta, v);
    report.beta_bound = phs_beta_bound(report.eta, report.lambda_min, lambda, p, n);
    for (const auto& s : report.samples)
        report.max_observed = std::max(report.max_observed, s.perturbation);
    report.bound_satisfied = report.max_observed <= report.beta_bound;
    return report;
}

// ---- generalization-gap sweep ----

struct SweepRow {
    double p = 0.0;
    std::uint64_t seed = 0;
    double train_loss = 0.0;
    double test_loss = 0.0;
    double gap = 0.0;
    double train_acc = 0.0;
    double test_acc = 0.0;
    double ece = 0.0;
    bool diverged = false;
};

struct SweepCellResult {
    SweepRow row;
    double loss_min = 0.0;  // per-sample loss range observed by this cell
    double loss_max = 0.0;
    double max_sample_grad_norm = 0.0;
};

struct GapBoundConstants {
    double C = 0.0;    // <= 0: use the observed per-sample loss range
    double eta = 0.0;  // <= 0: use the max measured per-sample gradient norm
    double lambda_min = 0.0;
    double lambda = 1.0;
    double delta = 0.1;
    long n = 0;  // fine-tuning train size
};

struct SweepBoundRow {
    double p = 0.0;
    double bound = 0.0;
};

struct GapSweepRecord {
    std::vector<SweepRow> rows;  // p-major, then seed order: the full grid
    std::vector<SweepBoundRow> bound_rows;
    GapBoundConstants constants;
    bool eta_is_local_surrogate = true;
};

// Runs one cell per (p, seed) pair via the supplied runner (cells execute in
// parallel; results land in grid order) and tabulates the generalization-gap
// bound per p with the echoed constants. Diverged cells are kept and flagged.
template <class RunCell>
GapSweepRecord gap_sweep(std::span<const double> p_grid, std::span<const std::uint64_t> seeds,
                         GapBoundConstants constants, RunCell&& run) {
    if (p_grid.empty()) throw config_error("gap_sweep: empty p grid");
    for (double p : p_grid)
        if (p < 0.0 || p > 0.95)
            throw config_error("gap_sweep: p grid must lie within [0, 0.95], got " +
                               std::to_string(p));
    if (seeds.size() < 3) throw config_error("gap_sweep: need at least 3 seeds");
    if (constants.n < 1) throw config_error("gap_sweep: constants.n must be positive");

    const std::size_t cells = p_grid.size() * seeds.size();
    std::vector<SweepCellResult> results(cells);
    parallel_for(cells, [&](std::size_t c) {
        const double p = p_grid[c / seeds.size()];
        const std::uint64_t seed = seeds[c % seeds.size()];
        results[c] = run(p, seed);
        results[c].row.p = p;
        results[c].row.seed = seed;
    });

    GapSweepRecord record;
    record.rows.reserve(cells);
    double loss_min = std::numeric_limits<double>::infinity();
    double loss_max = -std::numeric_limits<double>::infinity();
    double grad_norm = 0.0;
    for (const auto& cell : results) {
        record.rows.push_back(cell.row);
        if (cell.row.diverged) continue;
        loss_min = std::min(loss_min, cell.loss_min);
        loss_max = std::max(loss_max, cell.loss_max);
        grad_norm = std::max(grad_norm, cell.max_sample_grad_norm);
    }
    if (constants.C <= 0.0)
        constants.C = loss_max > loss_min ? loss_max - loss_min : 1.0;
    if (constants.eta <= 0.0) constants.eta = grad_norm > 0.0 ? grad_norm : 1.0;
    record.constants = constants;
    for (double p : p_grid)
        record.bound_rows.push_back(
            {p, theoretical_gap_bound(constants.C, constants.eta, constants.lambda_min,
                                      constants.lambda, p, constants.n, constants.delta)});
    return record;
}

}  // namespace loralab

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "loralab/checkpoint.hpp"
#include "loralab/config.hpp"
#include "loralab/dataset.hpp"
#include "loralab/ensemble.hpp"
#include "loralab/io.hpp"
#include "loralab/svg.hpp"
#include "loralab/theory.hpp"
#include "loralab/training.hpp"

namespace loralab {

namespace harness_detail {
// Sub-seed tags separating the pipeline stages.
inline constexpr std::uint64_t kPretrainSeed = 11;
inline constexpr std::uint64_t kAdapterSeed = 13;
inline constexpr std::uint64_t kFinetuneSeed = 17;
inline constexpr std::uint64_t kFinalEvalSeed = 19;
inline constexpr std::uint64_t kProbeDataSeed = 23;
inline constexpr std::uint64_t kMcNormSeed = 29;
}  // namespace harness_detail

struct DatasetBundle {
    Dataset pretrain;
    Dataset train;
    Dataset test;
};

inline GeneratorSpec split_spec(const DataConfig& d, std::uint64_t seed, SplitTag split) {
    GeneratorSpec s;
    s.kind = d.kind;
    s.classes = d.classes;
    s.dim = d.dim;
    s.noise = d.noise;
    s.radius = d.radius;
    s.seed = seed;
    s.split = split;
    if (split == SplitTag::pretrain) {
        s.n = d.pretrain_n;
    } else {
        s.shift = d.shift;  // the downstream task is the shifted distribution
        s.n = split == SplitTag::finetune_train ? d.train_n : d.test_n;
    }
    return s;
}

inline void validate_shapes(const ExperimentConfig& cfg) {
    if (static_cast<int>(cfg.model.classes) != cfg.data.classes)
        throw config_error("model.classes (" + std::to_string(cfg.model.classes) +
                           ") differs from data.classes (" + std::to_string(cfg.data.classes) +
                           ")");
    if (static_cast<int>(cfg.model.input_dim) != cfg.data.dim)
        throw config_error("model.input_dim (" + std::to_string(cfg.model.input_dim) +
                           ") differs from data.dim (" + std::to_string(cfg.data.dim) + ")");
}

inline DatasetBundle make_datasets(const ExperimentConfig& cfg) {
    validate_shapes(cfg);
    DatasetBundle b;
    b.pretrain = generate_dataset(split_spec(cfg.data, cfg.seed, SplitTag::pretrain));
    b.train = generate_dataset(split_spec(cfg.data, cfg.seed, SplitTag::finetune_train));
    b.test = generate_dataset(split_spec(cfg.data, cfg.seed, SplitTag::finetune_test));
    return b;
}

// Raises a load error naming the first layer whose shape disagrees with the
// configured architecture.
inline void check_architecture(const Model& model, const ModelSpec& spec) {
    const auto widths = spec.widths();
    std::size_t linear = 0;
    for (std::size_t l = 0; l < model.layers().size(); ++l) {
        const Layer& layer = model.layers()[l];
        std::size_t out = 0, in = 0;
        if (const auto* dense = std::get_if<DenseLayer>(&layer)) {
            out = dense->weight.value.rows();
            in = dense->weight.value.cols();
        } else if (const auto* lora = std::get_if<LoraLayer>(&layer)) {
            out = lora->out_dim();
            in = lora->in_dim();
        } else if (const auto* ada = std::get_if<AdaLoraLayer>(&layer)) {
            out = ada->out_dim();
            in = ada->in_dim();
        } else {
            continue;
        }
        if (linear + 1 >= widths.size() || in != widths[linear] || out != widths[linear + 1])
            throw io_error("checkpoint layer " + std::to_string(l) + " is " +
                           std::to_string(out) + "x" + std::to_string(in) +
                           ", which does not fit the configured architecture");
        ++linear;
    }
    if (linear + 1 != widths.size())
        throw io_error("checkpoint has " + std::to_string(linear) +
                       " linear layers, configuration expects " +
                       std::to_string(widths.size() - 1));
}

struct PretrainResult {
    Model model;
    RunRecord record;
};

// Trains the plain dense model on the unshifted distribution.
inline PretrainResult run_pretrain(const ExperimentConfig& cfg,
                                   const std::function<void(const EpochRow&)>& on_epoch = nullptr) {
    DatasetBundle data = make_datasets(cfg);
    Model model = Model::plain_mlp(cfg.model, mix_u64(cfg.seed, harness_detail::kPretrainSeed));
    TrainConfig tc;
    tc.epochs = cfg.pretrain.epochs;
    tc.batch_size = cfg.pretrain.batch_size;
    tc.learning_rate = cfg.pretrain.learning_rate;
    tc.mode = TrainMode::plain;
    tc.dropout_rate = 0.0;
    tc.instances = 1;
    tc.seed = mix_u64(cfg.seed, harness_detail::kPretrainSeed);
    EvalOptions eval = cfg.eval;
    // no held-out pre-training split; both metric columns use the training data
    RunRecord record = train(model, data.pretrain, data.pretrain, tc, eval, on_epoch);
    return {std::move(model), std::move(record)};
}

struct FinetuneResult {
    Model model;
    RunRecord record;
};

// Wraps the pre-trained model with adapters (bases frozen) and runs the
// fine-tuning phase on the shifted task.
inline FinetuneResult run_finetune(const ExperimentConfig& cfg, const Model& pretrained,
                                   const std::function<void(const EpochRow&)>& on_epoch = nullptr) {
    check_architecture(pretrained, cfg.model);
    DatasetBundle data = make_datasets(cfg);
    Model model =
        Model::adapted(pretrained, cfg.model, mix_u64(cfg.seed, harness_detail::kAdapterSeed));
    TrainConfig tc = cfg.train;
    tc.seed = mix_u64(cfg.seed, harness_detail::kFinetuneSeed);
    RunRecord record = train(model, data.train, data.test, tc, cfg.eval, on_epoch);
    record.config = cfg.train;
    return {std::move(model), std::move(record)};
}

// ---- evaluation report (external JSON schema) ----

inline json eval_report_json(const EvalResult& r) {
    json per_bin = json::array();
    for (const CalibrationBin& b : r.calibration.rows)
        per_bin.push_back(json{{"lo", b.lo},
                               {"hi", b.hi},
                               {"count", b.count},
                               {"mean_confidence", b.mean_confidence},
                               {"accuracy", b.accuracy}});
    return json{{"accuracy", r.accuracy}, {"ece", r.calibration.ece},
                {"n", r.n},               {"N", r.instances},
                {"p", r.dropout_rate},    {"domain", to_string(r.domain)},
                {"per_bin", per_bin}};
}

inline EvalResult run_eval(Model& model, const ExperimentConfig& cfg) {
    DatasetBundle data = make_datasets(cfg);
    MaskStream stream{cfg.seed, mix_u64(stream::kEval, harness_detail::kFinalEvalSeed)};
    return evaluate(model, data.test.features, data.test.labels, cfg.eval, stream);
}

// ---- gap sweep ----

// Per-sample gradient norms of the task loss in the merged parameter space,
// measured over the fine-tuning train split (local surrogate for eta).
inline double max_sample_gradient_norm(const Model& model, const Dataset& data) {
    Model merged = model.merged_plain_copy();
    double max_norm = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        Matrix row(1, data.features.cols());
        for (std::size_t j = 0; j < data.features.cols(); ++j) row(0, j) = data.features(i, j);
        Graph g;
        NodePtr loss = softmax_cross_entropy(merged.forward(g, g.constant(row)),
                                             {data.labels[i]});
        backward(loss);
        double sq = 0.0;
        for (const auto& [param, node] : g.bindings())
            if (param->trainable) sq += frobenius_norm_sq(node->grad);
        max_norm = std::max(max_norm, std::sqrt(sq));
    }
    return max_norm;
}

inline GapSweepRecord run_gap_sweep(const ExperimentConfig& cfg,
                                    const std::function<void(const SweepRow&)>& on_cell = nullptr) {
    validate_shapes(cfg);
    const SweepSection& sweep = cfg.sweep;

    // one pre-training run per distinct seed, shared across the p grid
    std::vector<std::uint64_t> unique_seeds;
    for (std::uint64_t s : sweep.seeds)
        if (std::find(unique_seeds.begin(), unique_seeds.end(), s) == unique_seeds.end())
            unique_seeds.push_back(s);
    std::vector<Model> pretrained(unique_seeds.size());
    parallel_for(unique_seeds.size(), [&](std::size_t i) {
        ExperimentConfig cell = cfg;
        cell.seed = unique_seeds[i];
        pretrained[i] = run_pretrain(cell).model;
    });
    auto pretrained_for = [&](std::uint64_t seed) -> const Model& {
        for (std::size_t i = 0; i < unique_seeds.size(); ++i)
            if (unique_seeds[i] == seed) return pretrained[i];
        throw contract_error("sweep: seed lookup failed");
    };

    GapBoundConstants constants;
    constants.C = sweep.bound_C;
    constants.eta = sweep.bound_eta;
    constants.lambda_min = sweep.bound_lambda_min;
    constants.lambda = sweep.bound_lambda;
    constants.delta = sweep.bound_delta;
    constants.n = cfg.data.train_n;

    auto run_cell = [&](double p, std::uint64_t seed) {
        ExperimentConfig cell = cfg;
        cell.seed = seed;
        cell.train.dropout_rate = p;
        cell.eval.dropout_rate = p;
        SweepCellResult result;
        try {
            DatasetBundle data = make_datasets(cell);
            FinetuneResult ft = run_finetune(cell, pretrained_for(seed));
            MaskStream train_stream{cell.seed, mix_u64(stream::kEval, 0)};
            MaskStream test_stream{cell.seed, mix_u64(stream::kEval, 1)};
            EvalResult train_eval =
                evaluate(ft.model, data.train.features, data.train.labels, cell.eval, train_stream);
            EvalResult test_eval =
                evaluate(ft.model, data.test.features, data.test.labels, cell.eval, test_stream);
            result.row.train_loss = train_eval.loss;
            result.row.test_loss = test_eval.loss;
            result.row.gap = test_eval.loss - train_eval.loss;
            result.row.train_acc = train_eval.accuracy;
            result.row.test_acc = test_eval.accuracy;
            result.row.ece = test_eval.calibration.ece;
            result.loss_min = std::numeric_limits<double>::infinity();
            result.loss_max = -std::numeric_limits<double>::infinity();
            for (const auto& losses : {train_eval.per_sample_loss, test_eval.per_sample_loss})
                for (double v : losses) {
                    result.loss_min = std::min(result.loss_min, v);
                    result.loss_max = std::max(result.loss_max, v);
                }
            result.max_sample_grad_norm = max_sample_gradient_norm(ft.model, data.train);
        } catch (const numerical_error&) {
            result.row.diverged = true;
            result.row.train_loss = result.row.test_loss = result.row.gap = result.row.train_acc =
                result.row.test_acc = result.row.ece = std::numeric_limits<double>::quiet_NaN();
        }
        if (on_cell) on_cell(result.row);
        return result;
    };
    return gap_sweep(sweep.p_grid, sweep.seeds, constants, run_cell);
}

inline json sweep_record_json(const GapSweepRecord& record) {
    json rows = json::array();
    for (const SweepRow& r : record.rows)
        rows.push_back(json{{"p", r.p},
                            {"seed", r.seed},
                            {"train_loss", r.train_loss},
                            {"test_loss", r.test_loss},
                            {"gap", r.gap},
                            {"train_acc", r.train_acc},
                            {"test_acc", r.test_acc},
                            {"ece", r.ece},
                            {"diverged", r.diverged}});
    json bound = json::array();
    for (const SweepBoundRow& b : record.bound_rows)
        bound.push_back(json{{"p", b.p}, {"bound", b.bound}});
    return json{{"rows", rows},
                {"bound", bound},
                {"constants", json{{"C", record.constants.C},
                                   {"eta", record.constants.eta},
                                   {"lambda_min", record.constants.lambda_min},
                                   {"lambda", record.constants.lambda},
                                   {"delta", record.constants.delta},
                                   {"n", record.constants.n}}},
                {"eta_is_local_surrogate", record.eta_is_local_surrogate}};
}

// Gap-versus-p chart: one line per seed plus the across-seed mean.
inline std::string sweep_chart_svg(const std::vector<SweepRow>& rows) {
    std::map<std::uint64_t, ChartSeries> by_seed;
    std::map<double, std::pair<double, int>> mean_acc;
    std::size_t color = 0;
    for (const SweepRow& r : rows) {
        if (r.diverged) continue;
        auto it = by_seed.find(r.seed);
        if (it == by_seed.end()) {
            ChartSeries s;
            s.name = "seed " + std::to_string(r.seed);
            s.color = sweep_color(color++);
            s.width = 1.0;
            it = by_seed.emplace(r.seed, std::move(s)).first;
        }
        it->second.points.emplace_back(r.p, r.gap);
        auto& [sum, count] = mean_acc[r.p];
        sum += r.gap;
        ++count;
    }
    std::vector<ChartSeries> series;
    for (auto& [seed, s] : by_seed) {
        std::sort(s.points.begin(), s.points.end());
        series.push_back(std::move(s));
    }
    ChartSeries mean;
    mean.name = "mean";
    mean.color = "#000000";
    mean.width = 2.5;
    for (const auto& [p, acc] : mean_acc) mean.points.emplace_back(p, acc.first / acc.second);
    series.push_back(std::move(mean));
    return line_chart_svg(series, "generalization gap vs dropout rate", "dropout rate p",
                          "test loss - train loss");
}

// ---- theory-check runners ----

inline std::vector<JensenReport> run_jensen(const ExperimentConfig& cfg) {
    validate_shapes(cfg);
    DatasetBundle data = make_datasets(cfg);
    Model base = Model::plain_mlp(cfg.model, mix_u64(cfg.seed, harness_detail::kPretrainSeed));
    Model model =
        Model::adapted(base, cfg.model, mix_u64(cfg.seed, harness_detail::kAdapterSeed));
    std::vector<AggregationDomain> domains;
    if (cfg.jensen.domain == "both")
        domains = {AggregationDomain::logits, AggregationDomain::probabilities};
    else
        domains = {domain_from(cfg.jensen.domain)};
    std::vector<JensenReport> reports;
    for (AggregationDomain d : domains)
        reports.push_back(jensen_check(model, data.test, cfg.jensen.p, cfg.jensen.instances,
                                       cfg.jensen.trials, d, cfg.seed, cfg.jensen.batch_size));
    return reports;
}

inline json jensen_reports_json(const std::vector<JensenReport>& reports) {
    json out = json::array();
    for (const JensenReport& r : reports)
        out.push_back(json{{"domain", to_string(r.domain)},
                           {"p", r.p},
                           {"instances", r.instances},
                           {"trials", r.rows.size()},
                           {"violations", r.violations},
                           {"most_negative_gap", r.most_negative_gap},
                           {"slack", r.slack}});
    return json{{"reports", out}};
}

inline ProbeData make_probe_data(const ExperimentConfig& cfg) {
    GeneratorSpec spec;
    spec.kind = DataKind::blobs;
    spec.classes = cfg.stability.classes;
    spec.n = cfg.stability.n;
    spec.dim = cfg.stability.input_dim;
    spec.noise = cfg.stability.noise;
    spec.seed = mix_u64(cfg.seed, harness_detail::kProbeDataSeed);
    Dataset d = generate_dataset(spec);
    ProbeData probe;
    probe.features = std::move(d.features);
    probe.labels = std::move(d.labels);
    return probe;
}

inline std::vector<StabilityReport> run_stability(const ExperimentConfig& cfg) {
    ProbeData data = make_probe_data(cfg);
    ProbeSpec spec;
    spec.loss = ProbeLoss::logistic;
    spec.outputs = cfg.stability.classes;
    spec.rank = cfg.stability.rank;
    spec.tolerance = cfg.stability.tolerance;
    spec.max_iterations = cfg.stability.max_iterations;
    spec.seed = mix_u64(cfg.seed, stream::kProbe);
    std::vector<StabilityReport> reports;
    for (double lambda : cfg.stability.lambdas)
        reports.push_back(stability_probe(data, lambda, cfg.stability.p, spec));
    return reports;
}

inline json stability_reports_json(const std::vector<StabilityReport>& reports) {
    json out = json::array();
    for (const StabilityReport& r : reports)
        out.push_back(json{{"lambda", r.lambda},
                           {"p", r.p},
                           {"n", r.n},
                           {"eta", r.eta},
                           {"lambda_min", r.lambda_min},
                           {"beta_bound", r.beta_bound},
                           {"max_observed", r.max_observed},
                           {"bound_satisfied", r.bound_satisfied},
                           {"hessian_asymmetry", r.hessian_asymmetry},
                           {"final_gradient_norm", r.final_gradient_norm},
                           {"eta_is_local_surrogate", r.eta_is_local_surrogate}});
    return json{{"reports", out}};
}

inline std::vector<McNormReport> run_mcnorm(const ExperimentConfig& cfg) {
    if (cfg.mcnorm.dim < 1) throw config_error("mcnorm: dim must be positive");
    Rng delta_rng = derive_rng(cfg.seed, {harness_detail::kMcNormSeed, 0});
    std::vector<double> delta(static_cast<std::size_t>(cfg.mcnorm.dim));
    for (double& v : delta) v = delta_rng.uniform(-1.0, 1.0);
    std::vector<McNormReport> reports;
    for (std::size_t i = 0; i < cfg.mcnorm.p_values.size(); ++i)
        reports.push_back(mc_masked_norm_check(
            delta, cfg.mcnorm.p_values[i], cfg.mcnorm.draws,
            derive_rng(cfg.seed, {harness_detail::kMcNormSeed, i + 1})));
    return reports;
}

inline json mcnorm_reports_json(const std::vector<McNormReport>& reports, int dim) {
    json out = json::array();
    for (const McNormReport& r : reports)
        out.push_back(json{{"p", r.p},
                           {"drop_probability", r.drop_probability},
                           {"draws", r.draws},
                           {"mc_estimate", r.mc_estimate},
                           {"closed_form", r.closed_form},
                           {"rel_error", r.rel_error},
                           {"standard_error", r.standard_error}});
    return json{{"dim", dim}, {"reports", out}};
}

// Rebuild the sweep chart from a previously written sweep.csv.
inline std::vector<SweepRow> parse_sweep_csv(const std::string& text) {
    std::vector<SweepRow> rows;
    std::size_t pos = 0;
    bool header = true;
    while (pos < text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string::npos) end = text.size();
        std::string line = text.substr(pos, end - pos);
        pos = end + 1;
        if (line.empty()) continue;
        if (header) {
            header = false;
            if (line != "p,seed,train_loss,test_loss,gap,train_acc,test_acc,ece,diverged")
                throw io_error("unrecognized sweep CSV header: " + line);
            continue;
        }
        std::vector<std::string> fields;
        std::size_t start = 0;
        while (true) {
            std::size_t comma = line.find(',', start);
            fields.push_back(line.substr(start, comma - start));
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        if (fields.size() != 9) throw io_error("malformed sweep CSV row: " + line);
        SweepRow row;
        row.p = std::stod(fields[0]);
        row.seed = std::stoull(fields[1]);
        row.train_loss = std::stod(fields[2]);
        row.test_loss = std::stod(fields[3]);
        row.gap = std::stod(fields[4]);
        row.train_acc = std::stod(fields[5]);
        row.test_acc = std::stod(fields[6]);
        row.ece = std::stod(fields[7]);
        row.diverged = fields[8] == "1";
        rows.push_back(row);
    }
    return rows;
}

}  // namespace loralab

// End-to-end acceptance suite. Each criterion prints one PASS/FAIL line;
// the process exits nonzero if any criterion fails.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "loralab/cli.hpp"
#include "loralab/harness.hpp"
#include "loralab/loralab.hpp"

using namespace loralab;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(int index, const char* title, bool pass, const std::string& detail,
            double seconds) {
    std::printf("[%s] criterion %2d: %-24s %s (%.1f s)\n", pass ? "PASS" : "FAIL", index, title,
                detail.c_str(), seconds);
    std::fflush(stdout);
    if (!pass) ++failures;
}

void run_criterion(int index, const char* title, const std::function<std::pair<bool, std::string>()>& body) {
    const auto started = std::chrono::steady_clock::now();
    bool pass = false;
    std::string detail;
    try {
        auto [ok, text] = body();
        pass = ok;
        detail = text;
    } catch (const std::exception& e) {
        detail = std::string("exception: ") + e.what();
    }
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    report(index, title, pass, detail, seconds);
}

std::string fmt3(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.4g", v);
    return buf;
}

// ---- criterion 1: expected masked-norm identity ----

std::pair<bool, std::string> masked_norm_identity() {
    const double rates[] = {0.1, 0.3, 0.5, 0.7, 0.9};
    const long draws = 100000;
    int checked = 0;
    double worst_ratio = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        Rng dim_rng = derive_rng(501, {static_cast<std::uint64_t>(trial), 0});
        const std::size_t dim = 1 + dim_rng.next_below(256);
        std::vector<double> delta(dim);
        for (double& v : delta) v = dim_rng.uniform(-2.0, 2.0);
        for (double p : rates) {
            McNormReport r = mc_masked_norm_check(
                delta, p, draws,
                derive_rng(501, {static_cast<std::uint64_t>(trial),
                                 static_cast<std::uint64_t>(p * 100)}));
            const double err = std::abs(r.mc_estimate - r.closed_form);
            const double ratio = r.standard_error > 0.0 ? err / r.standard_error : 0.0;
            worst_ratio = std::max(worst_ratio, ratio);
            if (err > 3.0 * r.standard_error)
                return {false, "p=" + fmt3(p) + " off by " + fmt3(ratio) + " standard errors"};
            ++checked;
        }
    }
    return {true, std::to_string(checked) + " checks, worst |err|/se = " + fmt3(worst_ratio)};
}

// ---- criterion 2: entry sparsity of the merged product ----

std::pair<bool, std::string> entry_sparsity() {
    Rng rng(502);
    LoraLayer layer = make_lora_layer(Matrix(4, 4), 2, 1.0, rng);
    layer.up.value = Matrix(4, 2);
    for (double& v : layer.up.value.flat()) v = rng.uniform(0.2, 1.0);
    for (double& v : layer.down.value.flat())
        if (v == 0.0) v = 0.2;

    std::string detail;
    const long draws = 100000;
    for (double p : {0.3, 0.5}) {
        const double q = entry_zero_probability(p);
        long zeros = 0;
        for (long t = 0; t < draws; ++t) {
            Rng mask_rng = derive_rng(503, {static_cast<std::uint64_t>(p * 100),
                                            static_cast<std::uint64_t>(t)});
            DropoutMask mask = sample_mask(4, 4, p, mask_rng);
            const Matrix delta = merged_delta(layer, &mask);
            for (double v : delta.flat()) zeros += v == 0.0 ? 1 : 0;
        }
        const double fraction = static_cast<double>(zeros) / (16.0 * draws);
        const double sigma = std::sqrt(q * (1.0 - q) / static_cast<double>(draws));
        if (std::abs(fraction - q) > 3.0 * sigma)
            return {false, "p=" + fmt3(p) + ": fraction " + fmt3(fraction) + " vs " + fmt3(q)};
        detail += "p=" + fmt3(p) + ": " + fmt3(fraction) + " vs " + fmt3(q) + "  ";
    }
    return {true, detail};
}

// ---- criterion 3: ensemble convexity inequality ----

std::pair<bool, std::string> jensen_ensemble() {
    ModelSpec spec;
    spec.input_dim = 4;
    spec.hidden = {6};
    spec.classes = 3;
    spec.rank = 2;
    Model base = Model::plain_mlp(spec, 504);
    Model model = Model::adapted(base, spec, 505);

    GeneratorSpec gen;
    gen.classes = 3;
    gen.n = 256;
    gen.dim = 4;
    gen.noise = 0.6;
    gen.seed = 506;
    Dataset data = generate_dataset(gen);

    long total = 0;
    double most_negative = 0.0;
    for (int instances : {2, 4, 8}) {
        for (AggregationDomain domain :
             {AggregationDomain::logits, AggregationDomain::probabilities}) {
            JensenReport report = jensen_check(model, data, 0.5, instances, 1000, domain,
                                               507 + static_cast<std::uint64_t>(instances));
            total += static_cast<long>(report.rows.size());
            most_negative = std::min(most_negative, report.most_negative_gap);
            if (report.violations != 0)
                return {false, "N=" + std::to_string(instances) + " domain " +
                                   to_string(domain) + ": " +
                                   std::to_string(report.violations) + " violations"};
        }
    }
    return {true, std::to_string(total) + " trials, most negative gap " + fmt3(most_negative)};
}

// ---- criterion 4: gradient correctness on masked low-rank MLPs ----

std::pair<bool, std::string> gradient_correctness() {
    double worst = 0.0;
    for (std::uint64_t instance = 0; instance < 100; ++instance) {
        Rng rng = derive_rng(508, {instance});
        ModelSpec spec;
        spec.input_dim = 2 + rng.next_below(5);
        spec.hidden = {2 + rng.next_below(7)};
        spec.classes = 2 + rng.next_below(3);
        spec.rank = 1 + rng.next_below(2);
        Model base = Model::plain_mlp(spec, 509 + instance);
        Model model = Model::adapted(base, spec, 510 + instance);
        model.randomize_adapters(rng);

        const std::size_t batch = 2 + rng.next_below(4);
        Matrix x(batch, spec.input_dim);
        for (double& v : x.flat()) v = rng.uniform(-1.5, 1.5);
        std::vector<int> labels(batch);
        for (int& y : labels) y = static_cast<int>(rng.next_below(spec.classes));
        MaskSet masks =
            sample_mask_set(model.mask_shapes(), 0.5, 511 + instance, {stream::kTrainMask, 0, 0}, 0);

        std::vector<Parameter*> trainable;
        for (Parameter* p : model.parameters())
            if (p->trainable) trainable.push_back(p);
        const double unmasked = grad_check(
            [&](Graph& g) {
                return softmax_cross_entropy(model.forward(g, g.constant(x)), labels);
            },
            trainable, 1e-4);
        const double masked = grad_check(
            [&](Graph& g) {
                return softmax_cross_entropy(model.forward(g, g.constant(x), &masks), labels);
            },
            trainable, 1e-4);
        worst = std::max({worst, unmasked, masked});
        if (worst >= 1e-4)
            return {false, "instance " + std::to_string(instance) + ": max rel err " + fmt3(worst)};
    }
    return {true, "100 instances, max rel err " + fmt3(worst)};
}

// ---- criterion 5: stability probe ----

std::pair<bool, std::string> stability_bound() {
    // convex logistic instance
    GeneratorSpec gen;
    gen.classes = 2;
    gen.n = 50;
    gen.dim = 6;
    gen.noise = 0.8;
    gen.seed = 512;
    Dataset d = generate_dataset(gen);
    ProbeData data;
    data.features = d.features;
    data.labels = d.labels;

    ProbeSpec spec;
    spec.loss = ProbeLoss::logistic;
    spec.outputs = 2;
    spec.tolerance = 1e-8;
    spec.seed = 513;
    std::string detail;
    for (double lambda : {0.1, 1.0, 10.0}) {
        StabilityReport report = stability_probe(data, lambda, 0.5, spec);
        if (!report.bound_satisfied)
            return {false, "lambda=" + fmt3(lambda) + ": max perturbation " +
                               fmt3(report.max_observed) + " exceeds bound " +
                               fmt3(report.beta_bound)};
        detail += "l=" + fmt3(lambda) + ": " + fmt3(report.max_observed) + "<=" +
                  fmt3(report.beta_bound) + "  ";
    }

    // 1-D quadratic with closed-form leave-one-out values
    const int n = 8;
    const double p = 0.5;
    const double coeff = 1.0 / n;
    ProbeData quad;
    quad.features = Matrix(n, 1, 1.0);
    quad.targets = Matrix(n, 1);
    Rng rng(514);
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
        quad.targets(i, 0) = rng.uniform(0.5, 2.5);
        sum += quad.targets(i, 0);
    }
    ProbeSpec quad_spec;
    quad_spec.loss = ProbeLoss::squared;
    quad_spec.outputs = 1;
    quad_spec.rank = 1;
    quad_spec.tolerance = 1e-11;
    quad_spec.seed = 515;
    StabilityReport report =
        stability_probe(quad, coeff / entry_zero_probability(p), p, quad_spec);
    const double theta_full = sum / (n + 2.0);
    auto sample_loss = [&](double theta, double x) {
        return 0.5 * (theta - x) * (theta - x) + coeff * theta * theta;
    };
    double worst = 0.0;
    for (int i = 0; i < n; ++i) {
        const double x_i = quad.targets(i, 0);
        const double theta_loo = (sum - x_i) / ((n - 1.0) * (1.0 + 2.0 * coeff));
        const double expected =
            std::abs(sample_loss(theta_loo, x_i) - sample_loss(theta_full, x_i));
        worst = std::max(worst, std::abs(report.samples[i].perturbation - expected));
    }
    if (worst > 1e-8)
        return {false, "quadratic closed-form mismatch " + fmt3(worst)};
    return {true, detail + "| quadratic err " + fmt3(worst)};
}

// ---- criterion 6: bound monotonicity ----

std::pair<bool, std::string> bound_monotonicity() {
    for (std::uint64_t tuple = 0; tuple < 100; ++tuple) {
        Rng rng = derive_rng(516, {tuple});
        const double C = rng.uniform(0.05, 20.0);
        const double eta = rng.uniform(0.05, 20.0);
        const double lambda_min = rng.uniform(1e-6, 10.0);
        const double lambda = rng.uniform(1e-4, 20.0);
        const long n = 5 + static_cast<long>(rng.next_below(5000));
        const double delta = rng.uniform(0.005, 0.9);
        double previous = std::numeric_limits<double>::infinity();
        for (int k = 0; k <= 18; ++k) {  // p = 0, 0.05, ..., 0.9
            const double p = 0.05 * k;
            const double bound = theoretical_gap_bound(C, eta, lambda_min, lambda, p, n, delta);
            if (!(bound <= previous))
                return {false, "tuple " + std::to_string(tuple) + " increases at p=" + fmt3(p)};
            previous = bound;
        }
    }
    return {true, "100 random positive tuples, grid step 0.05"};
}

// ---- criteria 7 and 8: overfitting control and ensemble benefit ----

struct OverfitOutcome {
    double gap0 = 0.0, gap5 = 0.0;
    double test0 = 0.0, test5 = 0.0;
    double train5 = 0.0, train95 = 0.0;
    double ensemble5 = 0.0, single5 = 0.0;
};

OverfitOutcome overfit_cells;
bool overfit_ready = false;

void run_overfit_experiment() {
    ExperimentConfig cfg;  // the tuned default experiment
    const std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5, 6};
    const double ps[3] = {0.0, 0.5, 0.95};

    std::vector<Model> pretrained(seeds.size());
    parallel_for(seeds.size(), [&](std::size_t i) {
        ExperimentConfig cell = cfg;
        cell.seed = seeds[i];
        pretrained[i] = run_pretrain(cell).model;
    });

    struct Cell {
        double gap = 0.0, test_acc = 0.0, train_acc = 0.0, single_acc = 0.0;
    };
    std::vector<Cell> cells(3 * seeds.size());
    parallel_for(cells.size(), [&](std::size_t k) {
        const int pi = static_cast<int>(k / seeds.size());
        const std::size_t si = k % seeds.size();
        ExperimentConfig cell = cfg;
        cell.seed = seeds[si];
        cell.train.dropout_rate = ps[pi];
        cell.eval.dropout_rate = ps[pi];
        FinetuneResult ft = run_finetune(cell, pretrained[si]);
        DatasetBundle data = make_datasets(cell);
        MaskStream train_stream{cell.seed, mix_u64(stream::kEval, 0)};
        MaskStream test_stream{cell.seed, mix_u64(stream::kEval, 1)};
        EvalResult train_eval =
            evaluate(ft.model, data.train.features, data.train.labels, cell.eval, train_stream);
        EvalResult test_eval =
            evaluate(ft.model, data.test.features, data.test.labels, cell.eval, test_stream);
        EvalOptions single = cell.eval;
        single.dropout_rate = 0.0;
        single.instances = 1;
        EvalResult single_eval =
            evaluate(ft.model, data.test.features, data.test.labels, single, test_stream);
        cells[k] = {test_eval.loss - train_eval.loss, test_eval.accuracy, train_eval.accuracy,
                    single_eval.accuracy};
    });

    auto mean = [&](int pi, auto field) {
        double s = 0.0;
        for (std::size_t i = 0; i < seeds.size(); ++i) s += field(cells[pi * seeds.size() + i]);
        return s / static_cast<double>(seeds.size());
    };
    overfit_cells.gap0 = mean(0, [](const Cell& c) { return c.gap; });
    overfit_cells.gap5 = mean(1, [](const Cell& c) { return c.gap; });
    overfit_cells.test0 = mean(0, [](const Cell& c) { return c.test_acc; });
    overfit_cells.test5 = mean(1, [](const Cell& c) { return c.test_acc; });
    overfit_cells.train5 = mean(1, [](const Cell& c) { return c.train_acc; });
    overfit_cells.train95 = mean(2, [](const Cell& c) { return c.train_acc; });
    overfit_cells.ensemble5 = overfit_cells.test5;
    overfit_cells.single5 = mean(1, [](const Cell& c) { return c.single_acc; });
    overfit_ready = true;
}

std::pair<bool, std::string> overfitting_control() {
    if (!overfit_ready) run_overfit_experiment();
    const OverfitOutcome& o = overfit_cells;
    std::string detail = "gap " + fmt3(o.gap0) + ">" + fmt3(o.gap5) + ", test-acc " +
                         fmt3(o.test5) + ">=" + fmt3(o.test0) + ", train-acc " + fmt3(o.train95) +
                         "<" + fmt3(o.train5);
    const bool pass = o.gap0 > o.gap5 && o.test5 >= o.test0 && o.train95 < o.train5;
    return {pass, detail};
}

std::pair<bool, std::string> ensemble_benefit() {
    if (!overfit_ready) run_overfit_experiment();
    const OverfitOutcome& o = overfit_cells;
    return {o.ensemble5 >= o.single5,
            "ensemble " + fmt3(o.ensemble5) + " vs single " + fmt3(o.single5)};
}

// ---- criterion 9: calibration error ----

std::pair<bool, std::string> ece_correctness() {
    // calibrated predictor: exact binary confidences, matching bin accuracy
    Matrix calibrated(6, 4);
    auto set_row = [&](std::size_t i, double c0, double c1, double c2, double c3) {
        calibrated(i, 0) = c0;
        calibrated(i, 1) = c1;
        calibrated(i, 2) = c2;
        calibrated(i, 3) = c3;
    };
    for (std::size_t i = 0; i < 4; ++i) set_row(i, 0.75, 0.125, 0.0625, 0.0625);
    for (std::size_t i = 4; i < 6; ++i) set_row(i, 0.5, 0.25, 0.125, 0.125);
    std::vector<int> calibrated_labels = {0, 0, 0, 1, 0, 1};
    CalibrationReport calibrated_report = ece(calibrated, calibrated_labels, 10);
    if (!(calibrated_report.ece < 1e-12))
        return {false, "calibrated predictor has ece " + fmt3(calibrated_report.ece)};

    Matrix fours(4, 2);
    for (std::size_t i = 0; i < 4; ++i) {
        fours(i, 0) = 0.8;
        fours(i, 1) = 0.2;
    }
    std::vector<int> labels = {0, 0, 1, 1};
    CalibrationReport report = ece(fours, labels, 10);
    if (std::abs(report.ece - 0.3) > 1e-15)
        return {false, "expected 0.3, got " + fmt3(report.ece)};
    return {true, "calibrated " + fmt3(calibrated_report.ece) + ", hand case " + fmt3(report.ece)};
}

// ---- criterion 10: byte-identical CLI outputs ----

std::string slurp_dir(const fs::path& dir) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(dir))
        if (entry.is_regular_file()) files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    std::string all;
    for (const fs::path& f : files) {
        all += f.filename().string();
        all += '\0';
        all += read_text_file(f);
        all += '\0';
    }
    return all;
}

std::pair<bool, std::string> determinism() {
    const fs::path root = fs::temp_directory_path() / "loralab_acceptance_det";
    fs::remove_all(root);
    fs::create_directories(root);

    ExperimentConfig cfg;
    cfg.seed = 404;
    cfg.data.pretrain_n = 128;
    cfg.data.train_n = 24;
    cfg.data.test_n = 64;
    cfg.pretrain.epochs = 4;
    cfg.train.epochs = 4;
    cfg.model.hidden = {8};
    cfg.jensen.trials = 25;
    cfg.stability.n = 12;
    cfg.stability.input_dim = 3;
    cfg.stability.lambdas = {1.0};
    cfg.mcnorm.p_values = {0.3, 0.7};
    cfg.mcnorm.dim = 16;
    cfg.mcnorm.draws = 20000;
    cfg.sweep.p_grid = {0.0, 0.5};
    cfg.sweep.seeds = {1, 2, 3};
    const std::string config_path = (root / "config.json").string();
    write_text_file(config_path, dump_config(cfg));

    auto run_everything = [&](const fs::path& out) {
        fs::create_directories(out);
        const std::string out_str = out.string();
        std::vector<std::vector<std::string>> commands = {
            {"pretrain", "--config", config_path, "--out", out_str, "--quiet"},
            {"finetune", "--config", config_path, "--out", out_str, "--checkpoint",
             (out / "pretrained.json").string(), "--quiet"},
            {"eval", "--config", config_path, "--out", out_str, "--checkpoint",
             (out / "checkpoint.json").string(), "--quiet"},
            {"mcnorm-check", "--config", config_path, "--out", out_str, "--quiet"},
            {"jensen-check", "--config", config_path, "--out", out_str, "--quiet"},
            {"stability-probe", "--config", config_path, "--out", out_str, "--quiet"},
            {"sweep", "--config", config_path, "--out", out_str, "--quiet"},
            {"plot", "--in", (out / "sweep.csv").string(), "--out", out_str, "--quiet"},
        };
        for (auto& argv : commands)
            if (int code = run_cli(argv); code != 0)
                throw std::runtime_error("command " + argv[0] + " exited " +
                                         std::to_string(code));
    };

    setenv("LORA_LAB_THREADS", "1", 1);
    run_everything(root / "a");
    run_everything(root / "b");
    setenv("LORA_LAB_THREADS", "3", 1);
    run_everything(root / "c");
    unsetenv("LORA_LAB_THREADS");

    const std::string a = slurp_dir(root / "a");
    const bool same_serial = a == slurp_dir(root / "b");
    const bool same_threaded = a == slurp_dir(root / "c");
    fs::remove_all(root);
    if (!same_serial) return {false, "repeat run differed"};
    if (!same_threaded) return {false, "threaded run differed"};
    return {true, "8 commands x 3 runs byte-identical (threads 1 and 3)"};
}

}  // namespace

int main() {
    std::printf("acceptance suite\n");
    run_criterion(1, "masked-norm identity", masked_norm_identity);
    run_criterion(2, "entry sparsity", entry_sparsity);
    run_criterion(3, "ensemble convexity", jensen_ensemble);
    run_criterion(4, "gradient correctness", gradient_correctness);
    run_criterion(5, "stability bound", stability_bound);
    run_criterion(6, "bound monotonicity", bound_monotonicity);
    run_criterion(7, "overfitting control", overfitting_control);
    run_criterion(8, "ensemble benefit", ensemble_benefit);
    run_criterion(9, "calibration error", ece_correctness);
    run_criterion(10, "determinism", determinism);
    if (failures > 0) {
        std::printf("%d criterion(s) failed\n", failures);
        return 1;
    }
    std::printf("all criteria passed\n");
    return 0;
}

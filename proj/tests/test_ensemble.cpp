#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "loralab/dataset.hpp"
#include "loralab/ensemble.hpp"
#include "loralab/metrics.hpp"
#include "loralab/model.hpp"

using namespace loralab;

namespace {

Model adapted_toy(std::uint64_t seed) {
    ModelSpec spec;
    spec.input_dim = 4;
    spec.hidden = {6};
    spec.classes = 3;
    spec.rank = 2;
    Model base = Model::plain_mlp(spec, seed);
    Model model = Model::adapted(base, spec, seed + 1);
    Rng rng(seed + 2);
    model.randomize_adapters(rng);
    return model;
}

Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
    Matrix m(rows, cols);
    for (double& v : m.flat()) v = rng.uniform(-1.0, 1.0);
    return m;
}

}  // namespace

TEST_SUITE("ensemble") {

TEST_CASE("hand-set instance outputs aggregate by arithmetic mean") {
    std::vector<Matrix> outputs = {Matrix::from_rows({{2, 0}}), Matrix::from_rows({{0, 2}})};
    Matrix mean = aggregate_mean(outputs);
    CHECK(mean == Matrix::from_rows({{1, 1}}));
    Matrix probs = softmax_rows(mean);
    CHECK(probs(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(probs(0, 1) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("rate zero collapses every instance to the single unmasked forward") {
    Model model = adapted_toy(40);
    Rng rng(41);
    Matrix x = random_matrix(5, 4, rng);
    EnsembleOutput out = ensemble_predict(model, x, 0.0, 4, {7, stream::kEval, 0});
    const Matrix expected = model.predict(x);
    for (const Matrix& o : out.per_instance) CHECK(o == expected);
    CHECK(out.mean == expected);
}

TEST_CASE("one instance returns that instance exactly") {
    Model model = adapted_toy(42);
    Rng rng(43);
    Matrix x = random_matrix(3, 4, rng);
    EnsembleOutput out = ensemble_predict(model, x, 0.5, 1, {8, stream::kEval, 0});
    CHECK(out.mean == out.per_instance[0]);
}

TEST_CASE("mean is the arithmetic mean of instances within 1e-12") {
    Model model = adapted_toy(44);
    Rng rng(45);
    Matrix x = random_matrix(6, 4, rng);
    EnsembleOutput out = ensemble_predict(model, x, 0.5, 5, {9, stream::kEval, 0});
    Matrix naive(out.mean.rows(), out.mean.cols());
    for (const Matrix& o : out.per_instance)
        for (std::size_t i = 0; i < naive.size(); ++i) naive.flat()[i] += o.flat()[i];
    for (double& v : naive.flat()) v /= 5.0;
    CHECK(max_abs_diff(out.mean, naive) < 1e-12);
}

TEST_CASE("probability-domain rows sum to one within 1e-9") {
    Model model = adapted_toy(46);
    Rng rng(47);
    Matrix x = random_matrix(6, 4, rng);
    EnsembleOutput out =
        ensemble_predict(model, x, 0.5, 4, {10, stream::kEval, 0}, AggregationDomain::probabilities);
    for (std::size_t i = 0; i < out.mean.rows(); ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < out.mean.cols(); ++j) sum += out.mean(i, j);
        CHECK(std::abs(sum - 1.0) < 1e-9);
    }
}

TEST_CASE("instance count must be positive") {
    Model model = adapted_toy(48);
    Matrix x(2, 4, 0.1);
    CHECK_THROWS_AS(ensemble_predict(model, x, 0.5, 0, {11, stream::kEval, 0}), config_error);
}

TEST_CASE("ensemble prediction is deterministic in the stream key") {
    Model model = adapted_toy(49);
    Rng rng(50);
    Matrix x = random_matrix(4, 4, rng);
    EnsembleOutput a = ensemble_predict(model, x, 0.5, 3, {12, stream::kEval, 5});
    EnsembleOutput b = ensemble_predict(model, x, 0.5, 3, {12, stream::kEval, 5});
    CHECK(a.mean == b.mean);
    EnsembleOutput c = ensemble_predict(model, x, 0.5, 3, {12, stream::kEval, 6});
    CHECK(a.mean != c.mean);
}

TEST_CASE("accuracy on toy outputs") {
    Matrix outputs = Matrix::from_rows({{0.9, 0.1}, {0.2, 0.8}});
    std::vector<int> right = {0, 1};
    std::vector<int> wrong = {1, 0};
    CHECK(accuracy(outputs, right) == 1.0);
    CHECK(accuracy(outputs, wrong) == 0.0);
}

TEST_CASE("exact ties resolve to the lowest class index") {
    Matrix tied = Matrix::from_rows({{0.5, 0.5, 0.0}});
    std::vector<int> low = {0};
    std::vector<int> high = {1};
    CHECK(accuracy(tied, low) == 1.0);
    CHECK(accuracy(tied, high) == 0.0);
}

TEST_CASE("accuracy rejects mismatched label counts") {
    Matrix outputs(3, 2, 0.5);
    std::vector<int> labels = {0, 1};
    CHECK_THROWS_AS(accuracy(outputs, labels), dim_error);
}

TEST_CASE("perfectly calibrated predictor has ece below 1e-12") {
    // confidences 0.75 (3 of 4 correct) and 0.5 (1 of 2 correct); both are
    // exact binary fractions so the bin means are exact
    Matrix probs(6, 4);
    auto set_row = [&](std::size_t i, double conf, double rest0, double rest1, double rest2) {
        probs(i, 0) = conf;
        probs(i, 1) = rest0;
        probs(i, 2) = rest1;
        probs(i, 3) = rest2;
    };
    for (std::size_t i = 0; i < 4; ++i) set_row(i, 0.75, 0.125, 0.0625, 0.0625);
    for (std::size_t i = 4; i < 6; ++i) set_row(i, 0.5, 0.25, 0.125, 0.125);
    std::vector<int> labels = {0, 0, 0, 1, 0, 1};  // 3/4 then 1/2 correct
    CalibrationReport report = ece(probs, labels, 10);
    CHECK(report.ece < 1e-12);
}

TEST_CASE("four samples at confidence 0.8 with half correct give ece 0.3") {
    Matrix probs(4, 2);
    for (std::size_t i = 0; i < 4; ++i) {
        probs(i, 0) = 0.8;
        probs(i, 1) = 0.2;
    }
    std::vector<int> labels = {0, 0, 1, 1};  // two correct
    CalibrationReport report = ece(probs, labels, 10);
    CHECK(std::abs(report.ece - 0.3) < 1e-15);
    // all four land in the (0.7, 0.8] bin
    CHECK(report.rows[7].count == 4);
}

TEST_CASE("single confident correct sample has zero ece") {
    Matrix probs = Matrix::from_rows({{1.0, 0.0}});
    std::vector<int> labels = {0};
    CalibrationReport report = ece(probs, labels, 10);
    CHECK(report.ece == 0.0);
    CHECK(report.rows[9].count == 1);  // confidence 1.0 lands in the top bin
}

TEST_CASE("ece is exactly invariant under sample permutation") {
    Rng rng(51);
    const std::size_t n = 200;
    Matrix probs(n, 3);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
        double a = rng.uniform(0.01, 1.0), b = rng.uniform(0.01, 1.0), c = rng.uniform(0.01, 1.0);
        const double s = a + b + c;
        probs(i, 0) = a / s;
        probs(i, 1) = b / s;
        probs(i, 2) = c / s;
        labels[i] = static_cast<int>(rng.next_below(3));
    }
    CalibrationReport base = ece(probs, labels, 10);

    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.next_below(i)]);
    Matrix shuffled(n, 3);
    std::vector<int> shuffled_labels(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < 3; ++j) shuffled(i, j) = probs(perm[i], j);
        shuffled_labels[i] = labels[perm[i]];
    }
    CalibrationReport permuted = ece(shuffled, shuffled_labels, 10);
    CHECK(base.ece == permuted.ece);
}

TEST_CASE("ece report rows recompose the headline number") {
    Rng rng(52);
    const std::size_t n = 64;
    Matrix probs(n, 2);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double a = rng.uniform(0.0, 1.0);
        probs(i, 0) = a;
        probs(i, 1) = 1.0 - a;
        labels[i] = static_cast<int>(rng.next_below(2));
    }
    CalibrationReport report = ece(probs, labels, 10);
    std::size_t counted = 0;
    double recomputed = 0.0;
    for (const CalibrationBin& b : report.rows) {
        counted += b.count;
        if (b.count > 0)
            recomputed += (static_cast<double>(b.count) / static_cast<double>(n)) *
                          std::abs(b.accuracy - b.mean_confidence);
    }
    CHECK(counted == n);
    CHECK(recomputed == doctest::Approx(report.ece).epsilon(1e-15));
}

TEST_CASE("non-normalized probability rows are a contract error") {
    Matrix probs = Matrix::from_rows({{0.7, 0.7}});
    std::vector<int> labels = {0};
    CHECK_THROWS_AS(ece(probs, labels, 10), contract_error);
    CHECK_THROWS_AS(ece(Matrix::from_rows({{0.5, 0.5}}), labels, 0), contract_error);
}

TEST_CASE("ensemble loss agrees between domains on a one-instance ensemble") {
    Model model = adapted_toy(53);
    Rng rng(54);
    Matrix x = random_matrix(4, 4, rng);
    std::vector<int> labels = {0, 1, 2, 0};
    EnsembleOutput logits_out = ensemble_predict(model, x, 0.5, 1, {13, stream::kEval, 0});
    EnsembleOutput probs_out =
        ensemble_predict(model, x, 0.5, 1, {13, stream::kEval, 0}, AggregationDomain::probabilities);
    CHECK(ensemble_loss(logits_out, labels) ==
          doctest::Approx(ensemble_loss(probs_out, labels)).epsilon(1e-12));
    CHECK(mean_instance_loss(logits_out, labels) ==
          doctest::Approx(ensemble_loss(logits_out, labels)).epsilon(1e-12));
}

TEST_CASE("evaluate covers the split and reports per-sample losses") {
    Model model = adapted_toy(55);
    GeneratorSpec spec;
    spec.classes = 3;
    spec.n = 33;
    spec.dim = 4;
    spec.noise = 0.4;
    spec.seed = 56;
    Dataset data = generate_dataset(spec);
    EvalOptions options;
    options.dropout_rate = 0.5;
    options.instances = 3;
    options.batch_size = 10;  // forces a ragged final batch
    EvalResult result = evaluate(model, data.features, data.labels, options, {57, stream::kEval});
    CHECK(result.n == 33);
    CHECK(result.per_sample_loss.size() == 33);
    double total = 0.0;
    for (double v : result.per_sample_loss) total += v;
    CHECK(result.loss == doctest::Approx(total / 33.0).epsilon(1e-12));
    CHECK(result.calibration.n == 33);
}

}  // TEST_SUITE

#include <doctest.h>

#include <cmath>
#include <cstdlib>

#include "loralab/dataset.hpp"
#include "loralab/model.hpp"
#include "loralab/training.hpp"

using namespace loralab;

namespace {

Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double bound = 1.0) {
    Matrix m(rows, cols);
    for (double& v : m.flat()) v = rng.uniform(-bound, bound);
    return m;
}

struct Fixture {
    Model model;
    Matrix x;
    std::vector<int> labels;

    static Fixture make(std::uint64_t seed, double adapter_bound = 0.8) {
        ModelSpec spec;
        spec.input_dim = 4;
        spec.hidden = {6};
        spec.classes = 3;
        spec.rank = 2;
        Fixture f;
        Model base = Model::plain_mlp(spec, seed);
        f.model = Model::adapted(base, spec, seed + 1);
        Rng rng(seed + 2);
        f.model.randomize_adapters(rng, adapter_bound);
        f.x = random_matrix(5, 4, rng);
        f.labels = {0, 1, 2, 0, 1};
        return f;
    }
};

MaskSet draw_masks(const Model& model, double p, std::uint64_t seed, int instance) {
    return sample_mask_set(model.mask_shapes(), p, seed, {stream::kTrainMask, 0, 0}, instance);
}

Dataset separable_blobs(int n, std::uint64_t seed) {
    GeneratorSpec spec;
    spec.kind = DataKind::blobs;
    spec.classes = 2;
    spec.n = n;
    spec.dim = 2;
    spec.noise = 0.15;
    spec.radius = 2.0;
    spec.seed = seed;
    return generate_dataset(spec);
}

}  // namespace

TEST_SUITE("training") {

TEST_CASE("one instance equals the single masked loss") {
    Fixture f = Fixture::make(10);
    MaskSet mask = draw_masks(f.model, 0.5, 7, 0);
    Graph g1;
    const double single =
        softmax_cross_entropy(f.model.forward(g1, g1.constant(f.x), &mask), f.labels)->value(0, 0);
    Graph g2;
    std::vector<MaskSet> sets = {mask};
    const double multi = multi_instance_loss(f.model, g2, f.x, f.labels, sets)->value(0, 0);
    CHECK(multi == single);
}

TEST_CASE("rate zero makes every instance the unmasked loss") {
    Fixture f = Fixture::make(11);
    Graph g1;
    const double unmasked =
        softmax_cross_entropy(f.model.forward(g1, g1.constant(f.x)), f.labels)->value(0, 0);
    std::vector<MaskSet> sets;
    for (int r = 0; r < 3; ++r) sets.push_back(draw_masks(f.model, 0.0, 8, r));
    Graph g2;
    const double multi = multi_instance_loss(f.model, g2, f.x, f.labels, sets)->value(0, 0);
    CHECK(multi == doctest::Approx(unmasked).epsilon(1e-14));
}

TEST_CASE("two fixed masks average the two individual losses") {
    Fixture f = Fixture::make(12);
    MaskSet a = draw_masks(f.model, 0.5, 9, 0);
    MaskSet b = draw_masks(f.model, 0.5, 9, 1);
    Graph ga, gb;
    const double la =
        softmax_cross_entropy(f.model.forward(ga, ga.constant(f.x), &a), f.labels)->value(0, 0);
    const double lb =
        softmax_cross_entropy(f.model.forward(gb, gb.constant(f.x), &b), f.labels)->value(0, 0);
    std::vector<MaskSet> sets = {a, b};
    Graph g;
    const double multi = multi_instance_loss(f.model, g, f.x, f.labels, sets)->value(0, 0);
    CHECK(std::abs(multi - (la + lb) / 2.0) < 1e-12);
}

TEST_CASE("no instances is a configuration error") {
    Fixture f = Fixture::make(13);
    Graph g;
    std::vector<MaskSet> none;
    CHECK_THROWS_AS(multi_instance_loss(f.model, g, f.x, f.labels, none), config_error);
}

TEST_CASE("identical masks reproduce the single-instance loss") {
    Fixture f = Fixture::make(14);
    MaskSet mask = draw_masks(f.model, 0.5, 10, 0);
    std::vector<MaskSet> repeated(4, mask);
    Graph g1, g2;
    std::vector<MaskSet> once = {mask};
    const double single = multi_instance_loss(f.model, g1, f.x, f.labels, once)->value(0, 0);
    const double multi = multi_instance_loss(f.model, g2, f.x, f.labels, repeated)->value(0, 0);
    CHECK(multi == doctest::Approx(single).epsilon(1e-14));
}

TEST_CASE("multi-instance gradient is the average of per-instance gradients") {
    Fixture f = Fixture::make(15);
    std::vector<MaskSet> sets;
    for (int r = 0; r < 3; ++r) sets.push_back(draw_masks(f.model, 0.5, 11, r));

    Graph g;
    backward(multi_instance_loss(f.model, g, f.x, f.labels, sets));

    for (Parameter* p : f.model.parameters()) {
        if (!p->trainable) continue;
        Matrix averaged(p->value.rows(), p->value.cols());
        for (const MaskSet& set : sets) {
            Graph gi;
            backward(softmax_cross_entropy(f.model.forward(gi, gi.constant(f.x), &set), f.labels));
            averaged = add(averaged, gi.find(*p)->grad);
        }
        averaged = scale(averaged, 1.0 / 3.0);
        CHECK(max_abs_diff(g.find(*p)->grad, averaged) < 1e-10);
    }
}

TEST_CASE("explicit regularizer with lambda zero is the plain task loss") {
    Fixture f = Fixture::make(16);
    Graph g1, g2;
    const double plain =
        softmax_cross_entropy(f.model.forward(g1, g1.constant(f.x)), f.labels)->value(0, 0);
    const double reg =
        explicit_regularized_loss(f.model, g2, f.x, f.labels, 0.0, 0.5)->value(0, 0);
    CHECK(reg == plain);
}

TEST_CASE("fresh adapters carry zero penalty") {
    ModelSpec spec;
    spec.input_dim = 4;
    spec.hidden = {6};
    spec.classes = 3;
    spec.rank = 2;
    Model base = Model::plain_mlp(spec, 17);
    Model model = Model::adapted(base, spec, 18);  // up factors are zero
    Matrix x(2, 4, 0.3);
    std::vector<int> labels = {0, 1};
    Graph g1, g2;
    const double plain =
        softmax_cross_entropy(model.forward(g1, g1.constant(x)), labels)->value(0, 0);
    const double reg = explicit_regularized_loss(model, g2, x, labels, 2.5, 0.5)->value(0, 0);
    CHECK(reg == plain);
}

TEST_CASE("penalty matches the closed form and a Monte Carlo estimate") {
    // single adapter whose merged delta entries are {3, 4} plus zeros
    LoraLayer layer;
    layer.base = {Matrix(2, 2), false};
    layer.down = {Matrix::from_rows({{3, 4}}), true};
    layer.up = {Matrix::from_rows({{1}, {0}}), true};
    Model model = Model::from_layers({layer}, 2, 2);
    Matrix x = Matrix::from_rows({{0.5, -0.25}});
    std::vector<int> labels = {0};

    const double lambda = 1.0;
    const double p = 0.5;
    Graph g1, g2;
    const double plain =
        softmax_cross_entropy(model.forward(g1, g1.constant(x)), labels)->value(0, 0);
    const double reg = explicit_regularized_loss(model, g2, x, labels, lambda, p)->value(0, 0);
    const double penalty = reg - plain;
    CHECK(penalty == doctest::Approx(0.75 * 25.0).epsilon(1e-12));

    // Monte Carlo oracle for E||d (.) delta||^2 with q = 2p - p^2
    const double q = 0.75;
    const double entries[] = {3.0, 4.0};
    Rng rng(20240);
    double total = 0.0;
    const long draws = 1000000;
    for (long t = 0; t < draws; ++t) {
        double masked = 0.0;
        for (double v : entries)
            if (rng.next_double() < q) masked += v * v;
        total += masked;
    }
    const double mc = total / static_cast<double>(draws);
    CHECK(std::abs(mc - penalty) / penalty < 0.01);
}

TEST_CASE("sgd step arithmetic and freeze contract") {
    Parameter theta{Matrix(1, 1, 1.0), true};
    sgd_step(theta, Matrix(1, 1, 0.0), 0.1);
    CHECK(theta.value(0, 0) == 1.0);
    sgd_step(theta, Matrix(1, 1, 2.0), 0.1);
    CHECK(theta.value(0, 0) == doctest::Approx(0.8).epsilon(1e-15));

    Parameter frozen{Matrix(1, 1, 5.0), false};
    sgd_step(frozen, Matrix(1, 1, 2.0), 0.1);
    CHECK(frozen.value(0, 0) == 5.0);

    CHECK_THROWS_AS(sgd_step(theta, Matrix(2, 1), 0.1), contract_error);
    CHECK_THROWS_AS(sgd_step(theta, Matrix(1, 1), 0.0), contract_error);
}

TEST_CASE("zero epochs returns an empty record and leaves parameters alone") {
    Dataset data = separable_blobs(20, 5);
    ModelSpec spec;
    spec.input_dim = 2;
    spec.hidden = {4};
    spec.classes = 2;
    Model model = Model::plain_mlp(spec, 22);
    std::vector<Matrix> before;
    for (Parameter* p : model.parameters()) before.push_back(p->value);

    TrainConfig cfg;
    cfg.epochs = 0;
    cfg.mode = TrainMode::plain;
    RunRecord record = train(model, data, data, cfg, EvalOptions{});
    CHECK(record.rows.empty());
    auto params = model.parameters();
    for (std::size_t i = 0; i < params.size(); ++i)
        CHECK(max_abs_diff(params[i]->value, before[i]) == 0.0);
}

TEST_CASE("plain training solves separable blobs") {
    Dataset train_set = separable_blobs(60, 6);
    Dataset test_set = separable_blobs(40, 7);
    ModelSpec spec;
    spec.input_dim = 2;
    spec.hidden = {8};
    spec.classes = 2;
    Model model = Model::plain_mlp(spec, 23);
    TrainConfig cfg;
    cfg.epochs = 50;
    cfg.batch_size = 16;
    cfg.learning_rate = 0.5;
    cfg.mode = TrainMode::plain;
    cfg.seed = 24;
    RunRecord record = train(model, train_set, test_set, cfg, EvalOptions{});
    REQUIRE(record.rows.size() == 50);
    CHECK(record.rows.back().train_acc == 1.0);
}

TEST_CASE("same seed reproduces the record bit for bit") {
    Dataset train_set = separable_blobs(40, 8);
    Dataset test_set = separable_blobs(30, 9);
    ModelSpec spec;
    spec.input_dim = 2;
    spec.hidden = {4};
    spec.classes = 2;
    spec.rank = 2;

    auto run = [&]() {
        Model base = Model::plain_mlp(spec, 25);
        Model model = Model::adapted(base, spec, 26);
        TrainConfig cfg;
        cfg.epochs = 8;
        cfg.batch_size = 8;
        cfg.dropout_rate = 0.5;
        cfg.instances = 3;
        cfg.learning_rate = 0.2;
        cfg.seed = 27;
        return train(model, train_set, test_set, cfg, EvalOptions{0.5, 3});
    };
    RunRecord a = run();
    RunRecord b = run();
    REQUIRE(a.rows.size() == b.rows.size());
    for (std::size_t i = 0; i < a.rows.size(); ++i) {
        CHECK(a.rows[i].train_loss == b.rows[i].train_loss);
        CHECK(a.rows[i].test_loss == b.rows[i].test_loss);
        CHECK(a.rows[i].train_acc == b.rows[i].train_acc);
        CHECK(a.rows[i].test_acc == b.rows[i].test_acc);
        CHECK(a.rows[i].ece == b.rows[i].ece);
    }
}

TEST_CASE("adam runs and differs from sgd") {
    Dataset train_set = separable_blobs(40, 10);
    ModelSpec spec;
    spec.input_dim = 2;
    spec.hidden = {4};
    spec.classes = 2;
    Model a = Model::plain_mlp(spec, 28);
    Model b = Model::plain_mlp(spec, 28);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.mode = TrainMode::plain;
    cfg.learning_rate = 0.05;
    cfg.seed = 29;
    RunRecord ra = train(a, train_set, train_set, cfg, EvalOptions{});
    cfg.optimizer = OptimizerKind::adam;
    RunRecord rb = train(b, train_set, train_set, cfg, EvalOptions{});
    CHECK(ra.rows.back().train_loss != rb.rows.back().train_loss);
}

TEST_CASE("divergence aborts with the epoch and iteration named") {
    Dataset train_set = separable_blobs(40, 11);
    ModelSpec spec;
    spec.input_dim = 2;
    spec.hidden = {4};
    spec.classes = 2;
    Model model = Model::plain_mlp(spec, 30);
    TrainConfig cfg;
    cfg.epochs = 20;
    cfg.mode = TrainMode::plain;
    cfg.learning_rate = 1e9;  // guaranteed blow-up
    cfg.seed = 31;
    CHECK_THROWS_WITH_AS(train(model, train_set, train_set, cfg, EvalOptions{}),
                         doctest::Contains("epoch"), numerical_error);
}

TEST_CASE("frozen bases and snapshot stay fixed through adapter training") {
    Dataset train_set = separable_blobs(40, 12);
    Dataset test_set = separable_blobs(30, 13);
    ModelSpec spec;
    spec.input_dim = 2;
    spec.hidden = {4};
    spec.classes = 2;
    spec.rank = 2;
    Model base = Model::plain_mlp(spec, 32);
    Model model = Model::adapted(base, spec, 33);
    TrainConfig cfg;
    cfg.epochs = 5;
    cfg.batch_size = 8;
    cfg.dropout_rate = 0.3;
    cfg.instances = 2;
    cfg.learning_rate = 0.3;
    cfg.seed = 34;
    train(model, train_set, test_set, cfg, EvalOptions{0.3, 2});
    CHECK(model.frozen_drift() == 0.0);
    CHECK(model.delta_from_snapshot_norm_sq() > 0.0);
}

TEST_CASE("train config validation") {
    TrainConfig cfg;
    cfg.batch_size = 0;
    CHECK_THROWS_AS(validate(cfg), config_error);
    cfg = TrainConfig{};
    cfg.dropout_rate = 1.0;
    CHECK_THROWS_AS(validate(cfg), config_error);
    cfg = TrainConfig{};
    cfg.instances = 0;
    CHECK_THROWS_AS(validate(cfg), config_error);
    cfg = TrainConfig{};
    cfg.learning_rate = 0.0;
    CHECK_THROWS_AS(validate(cfg), config_error);
    cfg = TrainConfig{};
    cfg.lambda = -1.0;
    CHECK_THROWS_AS(validate(cfg), config_error);
}

}  // TEST_SUITE

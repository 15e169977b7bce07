#pragma once

#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <string>
#include <vector>

#include <json.hpp>

#include "loralab/dataset.hpp"
#include "loralab/ensemble.hpp"
#include "loralab/io.hpp"
#include "loralab/model.hpp"
#include "loralab/training.hpp"

namespace loralab {

using json = nlohmann::json;

namespace cfg_detail {
// Unknown keys are a hard error: a typo in a sweep grid should fail loudly,
// not silently fall back to a default.
inline void require_keys(const json& j, std::initializer_list<const char*> allowed,
                         const std::string& section) {
    if (!j.is_object()) throw config_error("section '" + section + "' must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool known = false;
        for (const char* k : allowed)
            if (it.key() == k) {
                known = true;
                break;
            }
        if (!known) throw config_error("unknown key '" + it.key() + "' in " + section);
    }
}

template <class T>
T get_or(const json& j, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw config_error(std::string("bad value for '") + key + "': " + e.what());
    }
}
}  // namespace cfg_detail

// ---- enum names ----

inline std::string to_string(DataKind k) { return k == DataKind::blobs ? "blobs" : "moons"; }
inline std::string to_string(AdapterKind k) { return k == AdapterKind::lora ? "lora" : "adalora"; }

inline DataKind data_kind_from(const std::string& s) {
    if (s == "blobs") return DataKind::blobs;
    if (s == "moons") return DataKind::moons;
    throw config_error("unknown data kind '" + s + "' (expected blobs|moons)");
}

inline AdapterKind adapter_kind_from(const std::string& s) {
    if (s == "lora") return AdapterKind::lora;
    if (s == "adalora") return AdapterKind::adalora;
    throw config_error("unknown adapter '" + s + "' (expected lora|adalora)");
}

inline TrainMode train_mode_from(const std::string& s) {
    if (s == "dropout") return TrainMode::dropout;
    if (s == "explicit-reg") return TrainMode::explicit_reg;
    if (s == "plain") return TrainMode::plain;
    throw config_error("unknown mode '" + s + "' (expected dropout|explicit-reg|plain)");
}

inline OptimizerKind optimizer_kind_from(const std::string& s) {
    if (s == "sgd") return OptimizerKind::sgd;
    if (s == "adam") return OptimizerKind::adam;
    throw config_error("unknown optimizer '" + s + "' (expected sgd|adam)");
}

inline AggregationDomain domain_from(const std::string& s) {
    if (s == "logits") return AggregationDomain::logits;
    if (s == "probabilities") return AggregationDomain::probabilities;
    throw config_error("unknown domain '" + s + "' (expected logits|probabilities)");
}

// ---- config sections ----

struct DataConfig {
    DataKind kind = DataKind::blobs;
    int classes = 4;
    int dim = 8;
    double noise = 0.9;
    double radius = 1.6;
    ShiftSpec shift{0.5, 0.4, -0.3};
    int pretrain_n = 2048;
    int train_n = 64;
    int test_n = 1024;
};

struct PretrainConfig {
    int epochs = 40;
    int batch_size = 32;
    double learning_rate = 0.1;
};

struct SweepSection {
    std::vector<double> p_grid = {0.0, 0.25, 0.5, 0.75, 0.9};
    std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
    double bound_lambda = 1.0;
    double bound_delta = 0.1;
    double bound_lambda_min = 0.0;
    double bound_eta = 0.0;  // 0 = measure
    double bound_C = 0.0;    // 0 = measure
};

struct JensenSection {
    double p = 0.5;
    int instances = 4;
    int trials = 1000;
    std::string domain = "both";  // logits | probabilities | both
    int batch_size = 8;
};

struct StabilitySection {
    int n = 50;
    std::vector<double> lambdas = {0.1, 1.0, 10.0};
    double p = 0.5;
    int input_dim = 6;
    int classes = 2;
    int rank = 0;
    double tolerance = 1e-8;
    long max_iterations = 400000;
    double noise = 0.8;
};

struct McNormSection {
    std::vector<double> p_values = {0.1, 0.3, 0.5, 0.7, 0.9};
    int dim = 64;
    long draws = 100000;
};

struct ExperimentConfig {
    int version = 1;
    std::uint64_t seed = 42;
    ModelSpec model;
    DataConfig data;
    PretrainConfig pretrain;
    TrainConfig train;
    EvalOptions eval;
    SweepSection sweep;
    JensenSection jensen;
    StabilitySection stability;
    McNormSection mcnorm;
};

// ---- JSON round-trip (every key is always emitted) ----

inline json to_json(const ModelSpec& m) {
    return json{{"input_dim", m.input_dim}, {"hidden", m.hidden},
                {"classes", m.classes},     {"adapter", to_string(m.adapter)},
                {"rank", m.rank},           {"scale", m.adapter_scale},
                {"train_head", m.train_head}};
}

inline ModelSpec model_spec_from_json(const json& j) {
    cfg_detail::require_keys(
        j, {"input_dim", "hidden", "classes", "adapter", "rank", "scale", "train_head"}, "model");
    ModelSpec m;
    m.input_dim = cfg_detail::get_or<std::size_t>(j, "input_dim", m.input_dim);
    m.hidden = cfg_detail::get_or<std::vector<std::size_t>>(j, "hidden", m.hidden);
    m.classes = cfg_detail::get_or<std::size_t>(j, "classes", m.classes);
    m.adapter = adapter_kind_from(
        cfg_detail::get_or<std::string>(j, "adapter", to_string(m.adapter)));
    m.rank = cfg_detail::get_or<std::size_t>(j, "rank", m.rank);
    m.adapter_scale = cfg_detail::get_or<double>(j, "scale", m.adapter_scale);
    m.train_head = cfg_detail::get_or<bool>(j, "train_head", m.train_head);
    return m;
}

inline json to_json(const DataConfig& d) {
    return json{{"kind", to_string(d.kind)},
                {"classes", d.classes},
                {"dim", d.dim},
                {"noise", d.noise},
                {"radius", d.radius},
                {"shift_angle", d.shift.angle},
                {"shift_offset", std::vector<double>{d.shift.dx, d.shift.dy}},
                {"pretrain_n", d.pretrain_n},
                {"train_n", d.train_n},
                {"test_n", d.test_n}};
}

inline DataConfig data_config_from_json(const json& j) {
    cfg_detail::require_keys(j,
                             {"kind", "classes", "dim", "noise", "radius", "shift_angle",
                              "shift_offset", "pretrain_n", "train_n", "test_n"},
                             "data");
    DataConfig d;
    d.kind = data_kind_from(cfg_detail::get_or<std::string>(j, "kind", to_string(d.kind)));
    d.classes = cfg_detail::get_or<int>(j, "classes", d.classes);
    d.dim = cfg_detail::get_or<int>(j, "dim", d.dim);
    d.noise = cfg_detail::get_or<double>(j, "noise", d.noise);
    d.radius = cfg_detail::get_or<double>(j, "radius", d.radius);
    d.shift.angle = cfg_detail::get_or<double>(j, "shift_angle", d.shift.angle);
    auto offset = cfg_detail::get_or<std::vector<double>>(
        j, "shift_offset", {d.shift.dx, d.shift.dy});
    if (offset.size() != 2) throw config_error("shift_offset must have exactly 2 entries");
    d.shift.dx = offset[0];
    d.shift.dy = offset[1];
    d.pretrain_n = cfg_detail::get_or<int>(j, "pretrain_n", d.pretrain_n);
    d.train_n = cfg_detail::get_or<int>(j, "train_n", d.train_n);
    d.test_n = cfg_detail::get_or<int>(j, "test_n", d.test_n);
    return d;
}

inline json to_json(const PretrainConfig& p) {
    return json{{"epochs", p.epochs},
                {"batch_size", p.batch_size},
                {"learning_rate", p.learning_rate}};
}

inline PretrainConfig pretrain_config_from_json(const json& j) {
    cfg_detail::require_keys(j, {"epochs", "batch_size", "learning_rate"}, "pretrain");
    PretrainConfig p;
    p.epochs = cfg_detail::get_or<int>(j, "epochs", p.epochs);
    p.batch_size = cfg_detail::get_or<int>(j, "batch_size", p.batch_size);
    p.learning_rate = cfg_detail::get_or<double>(j, "learning_rate", p.learning_rate);
    return p;
}

inline json to_json(const TrainConfig& t) {
    return json{{"epochs", t.epochs},
                {"batch_size", t.batch_size},
                {"dropout_rate", t.dropout_rate},
                {"instances", t.instances},
                {"learning_rate", t.learning_rate},
                {"lambda", t.lambda},
                {"mode", to_string(t.mode)},
                {"optimizer", to_string(t.optimizer)}};
}

inline TrainConfig train_config_from_json(const json& j) {
    cfg_detail::require_keys(j,
                             {"epochs", "batch_size", "dropout_rate", "instances",
                              "learning_rate", "lambda", "mode", "optimizer"},
                             "train");
    TrainConfig t;
    t.epochs = cfg_detail::get_or<int>(j, "epochs", t.epochs);
    t.batch_size = cfg_detail::get_or<int>(j, "batch_size", t.batch_size);
    t.dropout_rate = cfg_detail::get_or<double>(j, "dropout_rate", t.dropout_rate);
    t.instances = cfg_detail::get_or<int>(j, "instances", t.instances);
    t.learning_rate = cfg_detail::get_or<double>(j, "learning_rate", t.learning_rate);
    t.lambda = cfg_detail::get_or<double>(j, "lambda", t.lambda);
    t.mode = train_mode_from(cfg_detail::get_or<std::string>(j, "mode", to_string(t.mode)));
    t.optimizer =
        optimizer_kind_from(cfg_detail::get_or<std::string>(j, "optimizer", to_string(t.optimizer)));
    return t;
}

inline json to_json(const EvalOptions& e) {
    return json{{"instances", e.instances},
                {"dropout_rate", e.dropout_rate},
                {"domain", to_string(e.domain)},
                {"bins", e.bins},
                {"batch_size", e.batch_size}};
}

inline EvalOptions eval_options_from_json(const json& j, const TrainConfig& train) {
    cfg_detail::require_keys(j, {"instances", "dropout_rate", "domain", "bins", "batch_size"},
                             "eval");
    EvalOptions e;
    e.instances = cfg_detail::get_or<int>(j, "instances", train.instances);
    e.dropout_rate = cfg_detail::get_or<double>(j, "dropout_rate", train.dropout_rate);
    e.domain = domain_from(cfg_detail::get_or<std::string>(j, "domain", "logits"));
    e.bins = cfg_detail::get_or<int>(j, "bins", e.bins);
    e.batch_size = cfg_detail::get_or<int>(j, "batch_size", e.batch_size);
    return e;
}

inline json to_json(const SweepSection& s) {
    return json{{"p_grid", s.p_grid},
                {"seeds", s.seeds},
                {"bound_lambda", s.bound_lambda},
                {"bound_delta", s.bound_delta},
                {"bound_lambda_min", s.bound_lambda_min},
                {"bound_eta", s.bound_eta},
                {"bound_C", s.bound_C}};
}

inline SweepSection sweep_section_from_json(const json& j) {
    cfg_detail::require_keys(j,
                             {"p_grid", "seeds", "bound_lambda", "bound_delta",
                              "bound_lambda_min", "bound_eta", "bound_C"},
                             "sweep");
    SweepSection s;
    s.p_grid = cfg_detail::get_or<std::vector<double>>(j, "p_grid", s.p_grid);
    s.seeds = cfg_detail::get_or<std::vector<std::uint64_t>>(j, "seeds", s.seeds);
    s.bound_lambda = cfg_detail::get_or<double>(j, "bound_lambda", s.bound_lambda);
    s.bound_delta = cfg_detail::get_or<double>(j, "bound_delta", s.bound_delta);
    s.bound_lambda_min = cfg_detail::get_or<double>(j, "bound_lambda_min", s.bound_lambda_min);
    s.bound_eta = cfg_detail::get_or<double>(j, "bound_eta", s.bound_eta);
    s.bound_C = cfg_detail::get_or<double>(j, "bound_C", s.bound_C);
    return s;
}

inline json to_json(const JensenSection& s) {
    return json{{"p", s.p},
                {"instances", s.instances},
                {"trials", s.trials},
                {"domain", s.domain},
                {"batch_size", s.batch_size}};
}

inline JensenSection jensen_section_from_json(const json& j) {
    cfg_detail::require_keys(j, {"p", "instances", "trials", "domain", "batch_size"}, "jensen");
    JensenSection s;
    s.p = cfg_detail::get_or<double>(j, "p", s.p);
    s.instances = cfg_detail::get_or<int>(j, "instances", s.instances);
    s.trials = cfg_detail::get_or<int>(j, "trials", s.trials);
    s.domain = cfg_detail::get_or<std::string>(j, "domain", s.domain);
    if (s.domain != "logits" && s.domain != "probabilities" && s.domain != "both")
        throw config_error("jensen domain must be logits|probabilities|both");
    s.batch_size = cfg_detail::get_or<int>(j, "batch_size", s.batch_size);
    return s;
}

inline json to_json(const StabilitySection& s) {
    return json{{"n", s.n},
                {"lambdas", s.lambdas},
                {"p", s.p},
                {"input_dim", s.input_dim},
                {"classes", s.classes},
                {"rank", s.rank},
                {"tolerance", s.tolerance},
                {"max_iterations", s.max_iterations},
                {"noise", s.noise}};
}

inline StabilitySection stability_section_from_json(const json& j) {
    cfg_detail::require_keys(j,
                             {"n", "lambdas", "p", "input_dim", "classes", "rank", "tolerance",
                              "max_iterations", "noise"},
                             "stability");
    StabilitySection s;
    s.n = cfg_detail::get_or<int>(j, "n", s.n);
    s.lambdas = cfg_detail::get_or<std::vector<double>>(j, "lambdas", s.lambdas);
    s.p = cfg_detail::get_or<double>(j, "p", s.p);
    s.input_dim = cfg_detail::get_or<int>(j, "input_dim", s.input_dim);
    s.classes = cfg_detail::get_or<int>(j, "classes", s.classes);
    s.rank = cfg_detail::get_or<int>(j, "rank", s.rank);
    s.tolerance = cfg_detail::get_or<double>(j, "tolerance", s.tolerance);
    s.max_iterations = cfg_detail::get_or<long>(j, "max_iterations", s.max_iterations);
    s.noise = cfg_detail::get_or<double>(j, "noise", s.noise);
    return s;
}

inline json to_json(const McNormSection& s) {
    return json{{"p_values", s.p_values}, {"dim", s.dim}, {"draws", s.draws}};
}

inline McNormSection mcnorm_section_from_json(const json& j) {
    cfg_detail::require_keys(j, {"p_values", "dim", "draws"}, "mcnorm");
    McNormSection s;
    s.p_values = cfg_detail::get_or<std::vector<double>>(j, "p_values", s.p_values);
    s.dim = cfg_detail::get_or<int>(j, "dim", s.dim);
    s.draws = cfg_detail::get_or<long>(j, "draws", s.draws);
    return s;
}

inline json to_json(const ExperimentConfig& c) {
    return json{{"version", c.version},     {"seed", c.seed},
                {"model", to_json(c.model)}, {"data", to_json(c.data)},
                {"pretrain", to_json(c.pretrain)}, {"train", to_json(c.train)},
                {"eval", to_json(c.eval)},   {"sweep", to_json(c.sweep)},
                {"jensen", to_json(c.jensen)}, {"stability", to_json(c.stability)},
                {"mcnorm", to_json(c.mcnorm)}};
}

inline ExperimentConfig config_from_json(const json& j) {
    cfg_detail::require_keys(j,
                             {"version", "seed", "model", "data", "pretrain", "train", "eval",
                              "sweep", "jensen", "stability", "mcnorm"},
                             "config");
    ExperimentConfig c;
    c.version = cfg_detail::get_or<int>(j, "version", 1);
    if (c.version != 1)
        throw config_error("unsupported config version " + std::to_string(c.version));
    c.seed = cfg_detail::get_or<std::uint64_t>(j, "seed", c.seed);
    if (j.contains("model")) c.model = model_spec_from_json(j.at("model"));
    if (j.contains("data")) c.data = data_config_from_json(j.at("data"));
    if (j.contains("pretrain")) c.pretrain = pretrain_config_from_json(j.at("pretrain"));
    if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
    c.train.seed = c.seed;
    c.eval = j.contains("eval") ? eval_options_from_json(j.at("eval"), c.train)
                                : EvalOptions{c.train.dropout_rate, c.train.instances,
                                              AggregationDomain::logits, 10, 0};
    if (j.contains("sweep")) c.sweep = sweep_section_from_json(j.at("sweep"));
    if (j.contains("jensen")) c.jensen = jensen_section_from_json(j.at("jensen"));
    if (j.contains("stability")) c.stability = stability_section_from_json(j.at("stability"));
    if (j.contains("mcnorm")) c.mcnorm = mcnorm_section_from_json(j.at("mcnorm"));
    return c;
}

inline std::string dump_config(const ExperimentConfig& c) { return to_json(c).dump(2) + "\n"; }

inline ExperimentConfig parse_config(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw config_error(std::string("config is not valid JSON: ") + e.what());
    }
    return config_from_json(j);
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path))
        throw config_error("config file not found: " + path.string());
    return parse_config(read_text_file(path));
}

}  // namespace loralab

#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "loralab/error.hpp"
#include "loralab/matrix.hpp"
#include "loralab/rng.hpp"

namespace loralab {

enum class DataKind { blobs, moons };
enum class SplitTag { pretrain, finetune_train, finetune_test };

inline const char* to_string(SplitTag tag) {
    switch (tag) {
        case SplitTag::pretrain: return "pretrain";
        case SplitTag::finetune_train: return "finetune-train";
        case SplitTag::finetune_test: return "finetune-test";
    }
    return "?";
}

// Rotation (about the origin) plus translation of the class geometry,
// emulating the distribution shift between the pre-training task and the
// downstream task. Zero shift reproduces the pre-training distribution.
struct ShiftSpec {
    double angle = 0.0;  // radians
    double dx = 0.0;
    double dy = 0.0;

    bool operator==(const ShiftSpec&) const = default;
};

struct GeneratorSpec {
    DataKind kind = DataKind::blobs;
    int classes = 4;
    int n = 256;
    int dim = 2;          // >= 2; dimensions beyond the first two carry pure noise
    double noise = 0.3;   // gaussian sigma
    double radius = 2.0;  // blob center circle radius / moon scale
    ShiftSpec shift;
    std::uint64_t seed = 0;
    SplitTag split = SplitTag::pretrain;

    bool operator==(const GeneratorSpec&) const = default;
};

struct Dataset {
    Matrix features;  // n x dim
    std::vector<int> labels;
    SplitTag split = SplitTag::pretrain;
    GeneratorSpec spec;

    std::size_t size() const { return labels.size(); }
};

namespace detail {
inline void rotate2d(double& x, double& y, double angle) {
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    const double nx = c * x - s * y;
    const double ny = s * x + c * y;
    x = nx;
    y = ny;
}
}  // namespace detail

// Shifted 2-D class centers for blob data (handy for distribution tests).
inline std::vector<std::pair<double, double>> class_centers(const GeneratorSpec& spec) {
    std::vector<std::pair<double, double>> centers;
    for (int k = 0; k < spec.classes; ++k) {
        const double angle = 2.0 * 3.14159265358979323846 * k / spec.classes;
        double x = spec.radius * std::cos(angle);
        double y = spec.radius * std::sin(angle);
        detail::rotate2d(x, y, spec.shift.angle);
        centers.emplace_back(x + spec.shift.dx, y + spec.shift.dy);
    }
    return centers;
}

// Deterministic synthetic classification data. Regeneration from an equal
// spec yields bit-identical features and labels.
inline Dataset generate_dataset(const GeneratorSpec& spec) {
    if (spec.classes < 2) throw config_error("dataset needs at least 2 classes");
    if (spec.kind == DataKind::moons && spec.classes != 2)
        throw config_error("two-moons data is binary; got " + std::to_string(spec.classes) +
                           " classes");
    if (spec.n < 1) throw config_error("dataset size must be positive");
    if (spec.dim < 2) throw config_error("dataset dimension must be at least 2");
    if (spec.noise < 0.0) throw config_error("noise sigma must be non-negative");

    Dataset data;
    data.split = spec.split;
    data.spec = spec;
    data.features = Matrix(spec.n, spec.dim);
    data.labels.resize(spec.n);

    Rng rng = derive_rng(spec.seed, {stream::kData, static_cast<std::uint64_t>(spec.split)});
    const auto centers = spec.kind == DataKind::blobs ? class_centers(spec)
                                                      : std::vector<std::pair<double, double>>{};
    for (int i = 0; i < spec.n; ++i) {
        const int label = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(spec.classes)));
        data.labels[i] = label;
        double x = 0.0;
        double y = 0.0;
        if (spec.kind == DataKind::blobs) {
            x = centers[static_cast<std::size_t>(label)].first;
            y = centers[static_cast<std::size_t>(label)].second;
        } else {
            const double t = rng.next_double() * 3.14159265358979323846;
            if (label == 0) {
                x = spec.radius * std::cos(t);
                y = spec.radius * std::sin(t);
            } else {
                x = spec.radius * (1.0 - std::cos(t));
                y = spec.radius * (0.5 - std::sin(t));
            }
            detail::rotate2d(x, y, spec.shift.angle);
            x += spec.shift.dx;
            y += spec.shift.dy;
        }
        data.features(i, 0) = x + spec.noise * rng.gaussian();
        data.features(i, 1) = y + spec.noise * rng.gaussian();
        for (int d = 2; d < spec.dim; ++d)
            data.features(i, static_cast<std::size_t>(d)) = spec.noise * rng.gaussian();
    }
    return data;
}

inline Dataset take_rows(const Dataset& data, const std::vector<std::size_t>& indices) {
    Dataset out;
    out.split = data.split;
    out.spec = data.spec;
    out.features = Matrix(indices.size(), data.features.cols());
    out.labels.reserve(indices.size());
    for (std::size_t r = 0; r < indices.size(); ++r) {
        for (std::size_t c = 0; c < data.features.cols(); ++c)
            out.features(r, c) = data.features(indices[r], c);
        out.labels.push_back(data.labels[indices[r]]);
    }
    return out;
}

}  // namespace loralab

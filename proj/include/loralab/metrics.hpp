#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "loralab/error.hpp"
#include "loralab/matrix.hpp"

namespace loralab {

// Fraction of rows whose argmax equals the label; exact ties go to the
// lowest class index so the result is deterministic.
inline double accuracy(const Matrix& outputs, std::span<const int> labels) {
    if (labels.size() != outputs.rows())
        throw dim_error("accuracy: " + std::to_string(labels.size()) + " labels for " +
                        outputs.shape_str() + " outputs");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < outputs.rows(); ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < outputs.cols(); ++j)
            if (outputs(i, j) > outputs(i, best)) best = j;
        if (static_cast<int>(best) == labels[i]) ++correct;
    }
    return outputs.rows() == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(outputs.rows());
}

struct CalibrationBin {
    double lo = 0.0;
    double hi = 0.0;
    std::size_t count = 0;
    double mean_confidence = 0.0;
    double accuracy = 0.0;
};

struct CalibrationReport {
    double ece = 0.0;
    int bins = 0;
    std::size_t n = 0;
    std::vector<CalibrationBin> rows;
};

// Expected calibration error with equal-width right-closed bins over (0, 1],
// so confidence 1.0 lands in the top bin. Empty bins contribute 0.
inline CalibrationReport ece(const Matrix& probabilities, std::span<const int> labels, int bins) {
    if (bins < 1) throw contract_error("ece: bin count must be at least 1");
    if (labels.size() != probabilities.rows())
        throw dim_error("ece: " + std::to_string(labels.size()) + " labels for " +
                        probabilities.shape_str() + " probabilities");
    const std::size_t n = probabilities.rows();
    const std::size_t m = static_cast<std::size_t>(bins);

    // confidence values are bucketed then sorted within each bin before
    // summation, which makes the result exactly invariant under sample
    // permutations despite floating-point addition
    std::vector<std::vector<double>> bin_conf(m);
    std::vector<std::size_t> bin_correct(m, 0);
    for (std::size_t i = 0; i < n; ++i) {
        double row_sum = 0.0;
        for (std::size_t j = 0; j < probabilities.cols(); ++j) row_sum += probabilities(i, j);
        if (std::abs(row_sum - 1.0) > 1e-6)
            throw contract_error("ece: probability row " + std::to_string(i) +
                                 " sums to " + std::to_string(row_sum) + ", expected 1");
        std::size_t best = 0;
        for (std::size_t j = 1; j < probabilities.cols(); ++j)
            if (probabilities(i, j) > probabilities(i, best)) best = j;
        const double conf = probabilities(i, best);
        std::size_t bin = 0;
        if (conf > 0.0) {
            bin = static_cast<std::size_t>(std::ceil(conf * static_cast<double>(m))) - 1;
            bin = std::min(bin, m - 1);
        }
        bin_conf[bin].push_back(conf);
        if (static_cast<int>(best) == labels[i]) ++bin_correct[bin];
    }

    CalibrationReport report;
    report.bins = bins;
    report.n = n;
    report.rows.resize(m);
    for (std::size_t b = 0; b < m; ++b) {
        CalibrationBin& row = report.rows[b];
        row.lo = static_cast<double>(b) / static_cast<double>(m);
        row.hi = static_cast<double>(b + 1) / static_cast<double>(m);
        row.count = bin_conf[b].size();
        if (row.count == 0) continue;
        std::sort(bin_conf[b].begin(), bin_conf[b].end());
        double sum = 0.0;
        for (double c : bin_conf[b]) sum += c;
        row.mean_confidence = sum / static_cast<double>(row.count);
        row.accuracy = static_cast<double>(bin_correct[b]) / static_cast<double>(row.count);
        report.ece += (static_cast<double>(row.count) / static_cast<double>(n)) *
                      std::abs(row.accuracy - row.mean_confidence);
    }
    return report;
}

}  // namespace loralab

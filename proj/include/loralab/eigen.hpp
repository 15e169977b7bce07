#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "loralab/error.hpp"
#include "loralab/matrix.hpp"

namespace loralab {

// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
inline std::vector<double> jacobi_eigenvalues(Matrix a, int max_sweeps = 100) {
    if (a.rows() != a.cols())
        throw contract_error("jacobi_eigenvalues: matrix must be square, got " + a.shape_str());
    const std::size_t n = a.rows();
    if (n == 0) return {};

    auto off_diagonal = [&]() {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) s += a(i, j) * a(i, j);
        return std::sqrt(2.0 * s);
    };

    for (int sweep = 0; sweep < max_sweeps && off_diagonal() > 1e-14; ++sweep) {
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (std::abs(apq) < 1e-300) continue;
                const double tau = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = (tau >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(tau) + std::sqrt(1.0 + tau * tau));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a(k, p);
                    const double akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a(p, k);
                    const double aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
            }
        }
    }

    std::vector<double> eigenvalues(n);
    for (std::size_t i = 0; i < n; ++i) eigenvalues[i] = a(i, i);
    std::sort(eigenvalues.begin(), eigenvalues.end());
    return eigenvalues;
}

inline double max_asymmetry(const Matrix& a) {
    if (a.rows() != a.cols()) throw contract_error("max_asymmetry: matrix must be square");
    double m = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = i + 1; j < a.cols(); ++j)
            m = std::max(m, std::abs(a(i, j) - a(j, i)));
    return m;
}

inline Matrix symmetrize(const Matrix& a) {
    Matrix out = a;
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out(i, j) = 0.5 * (a(i, j) + a(j, i));
    return out;
}

// Hessian of a scalar function via central differences of its gradient:
// column j is (grad(x + h e_j) - grad(x - h e_j)) / (2h).
inline Matrix finite_difference_hessian(
    const std::function<std::vector<double>(const std::vector<double>&)>& gradient,
    std::vector<double> point, double step) {
    if (step <= 0.0) throw contract_error("finite_difference_hessian: step must be positive");
    const std::size_t d = point.size();
    Matrix hessian(d, d);
    for (std::size_t j = 0; j < d; ++j) {
        const double saved = point[j];
        point[j] = saved + step;
        const std::vector<double> up = gradient(point);
        point[j] = saved - step;
        const std::vector<double> down = gradient(point);
        point[j] = saved;
        if (up.size() != d || down.size() != d)
            throw contract_error("finite_difference_hessian: gradient dimension mismatch");
        for (std::size_t i = 0; i < d; ++i) hessian(i, j) = (up[i] - down[i]) / (2.0 * step);
    }
    return hessian;
}

}  // namespace loralab

#include "dmplug/linalg.hpp"

#include "dmplug/tensor.hpp"

#include <cmath>

namespace dmplug::linalg {

void sym_eig(int n, std::vector<double> a, std::vector<double>& eigvals,
             std::vector<double>& eigvecs) {
    if (n <= 0 || static_cast<int>(a.size()) != n * n)
        throw ContractError("sym_eig: bad matrix size");
    // symmetrize; callers pass nominally symmetric matrices
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            double m = 0.5 * (a[i * n + j] + a[j * n + i]);
            a[i * n + j] = a[j * n + i] = m;
        }
    eigvecs.assign(static_cast<size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) eigvecs[i * n + i] = 1.0;

    auto off_norm = [&] {
        double s = 0.0;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) s += a[i * n + j] * a[i * n + j];
        return s;
    };

    const int max_sweeps = 100;
    for (int sweep = 0; sweep < max_sweeps && off_norm() > 1e-26; ++sweep) {
        for (int p = 0; p < n - 1; ++p)
            for (int q = p + 1; q < n; ++q) {
                double apq = a[p * n + q];
                if (std::fabs(apq) < 1e-300) continue;
                double app = a[p * n + p], aqq = a[q * n + q];
                double tau = (aqq - app) / (2.0 * apq);
                double t = (tau >= 0 ? 1.0 : -1.0) /
                           (std::fabs(tau) + std::sqrt(1.0 + tau * tau));
                double c = 1.0 / std::sqrt(1.0 + t * t);
                double s = t * c;
                for (int k = 0; k < n; ++k) {
                    double akp = a[k * n + p], akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for (int k = 0; k < n; ++k) {
                    double apk = a[p * n + k], aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for (int k = 0; k < n; ++k) {
                    double vkp = eigvecs[k * n + p], vkq = eigvecs[k * n + q];
                    eigvecs[k * n + p] = c * vkp - s * vkq;
                    eigvecs[k * n + q] = s * vkp + c * vkq;
                }
            }
    }
    eigvals.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) eigvals[i] = a[i * n + i];
}

std::vector<double> matvec(int m, int n, const std::vector<double>& a,
                           const std::vector<double>& x) {
    if (static_cast<int>(a.size()) != m * n || static_cast<int>(x.size()) != n)
        throw ContractError("matvec: size mismatch");
    std::vector<double> y(static_cast<size_t>(m), 0.0);
    for (int i = 0; i < m; ++i) {
        double acc = 0.0;
        for (int j = 0; j < n; ++j) acc += a[i * n + j] * x[j];
        y[i] = acc;
    }
    return y;
}

std::vector<double> lstsq(int m, int n, const std::vector<double>& a,
                          const std::vector<double>& b, double rel_tol) {
    if (static_cast<int>(a.size()) != m * n || static_cast<int>(b.size()) != m)
        throw ContractError("lstsq: size mismatch");
    // normal equations with eigen-based pseudo-inverse
    std::vector<double> ata(static_cast<size_t>(n) * n, 0.0);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            double aij = a[i * n + j];
            if (aij == 0.0) continue;
            for (int k = 0; k < n; ++k) ata[j * n + k] += aij * a[i * n + k];
        }
    std::vector<double> atb(static_cast<size_t>(n), 0.0);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) atb[j] += a[i * n + j] * b[i];

    std::vector<double> lam, V;
    sym_eig(n, ata, lam, V);
    double lmax = 0.0;
    for (double l : lam) lmax = std::max(lmax, std::fabs(l));
    double cut = lmax * rel_tol;

    std::vector<double> x(static_cast<size_t>(n), 0.0);
    for (int j = 0; j < n; ++j) {
        if (!(lam[j] > cut)) continue;
        double c = 0.0;
        for (int i = 0; i < n; ++i) c += V[i * n + j] * atb[i];
        c /= lam[j];
        for (int i = 0; i < n; ++i) x[i] += V[i * n + j] * c;
    }
    return x;
}

} // namespace dmplug::linalg

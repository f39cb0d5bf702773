#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "pm/errors.hpp"

namespace pm {

inline double mean(const std::vector<double>& x) {
    if (x.empty()) return 0.0;
    double s = 0.0;
    for (double v : x) s += v;
    return s / static_cast<double>(x.size());
}

inline double sample_variance(const std::vector<double>& x) {
    const std::size_t n = x.size();
    if (n < 2) return 0.0;
    const double m = mean(x);
    double s = 0.0;
    for (double v : x) s += (v - m) * (v - m);
    return s / static_cast<double>(n - 1);
}

struct JackknifeResult {
    double value = 0.0;
    double error = 0.0;
};

// Delete-1 jackknife error of the plain mean over bins.
inline JackknifeResult jackknife_mean(const std::vector<double>& bins) {
    JackknifeResult r;
    const std::size_t n = bins.size();
    r.value = mean(bins);
    if (n < 2) return r;
    double s = 0.0;
    for (double v : bins) {
        const double del = (r.value * static_cast<double>(n) - v) / static_cast<double>(n - 1);
        s += (del - r.value) * (del - r.value);
    }
    r.error = std::sqrt(s * static_cast<double>(n - 1) / static_cast<double>(n));
    return r;
}

// Delete-1 jackknife of f(means of each observable). bins_by_obs[k][b] is
// bin b of observable k; all observables share the bin count.
inline JackknifeResult jackknife_apply(const std::vector<std::vector<double>>& bins_by_obs,
                                       const std::function<double(const std::vector<double>&)>& f) {
    JackknifeResult r;
    if (bins_by_obs.empty()) return r;
    const std::size_t n = bins_by_obs.front().size();
    const std::size_t k = bins_by_obs.size();
    std::vector<double> sums(k, 0.0), args(k, 0.0);
    for (std::size_t o = 0; o < k; ++o)
        for (double v : bins_by_obs[o]) sums[o] += v;
    for (std::size_t o = 0; o < k; ++o) args[o] = sums[o] / static_cast<double>(n);
    r.value = f(args);
    if (n < 2) return r;
    std::vector<double> dels;
    dels.reserve(n);
    for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t o = 0; o < k; ++o)
            args[o] = (sums[o] - bins_by_obs[o][b]) / static_cast<double>(n - 1);
        dels.push_back(f(args));
    }
    const double dm = mean(dels);
    double s = 0.0;
    for (double d : dels) s += (d - dm) * (d - dm);
    r.error = std::sqrt(s * static_cast<double>(n - 1) / static_cast<double>(n));
    return r;
}

// Cyclic Jacobi eigendecomposition of a symmetric matrix (row-major, n x n).
// Returns eigenvalues and column eigenvectors; deterministic sweep order.
struct SymEig {
    std::vector<double> values;
    std::vector<double> vectors;  // vectors[i*n + k] = component i of eigenvector k
};

inline SymEig jacobi_eigen_sym(std::vector<double> a, std::size_t n) {
    SymEig out;
    std::vector<double> v(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += a[p * n + q] * a[p * n + q];
        if (off < 1e-26) break;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a[p * n + q];
                if (std::abs(apq) < 1e-300) continue;
                const double theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a[k * n + p], akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a[p * n + k], aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v[k * n + p], vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
    }
    out.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) out.values[i] = a[i * n + i];
    out.vectors = std::move(v);
    return out;
}

// Deterministic Nelder-Mead on R^n; no restarts, fixed coefficients.
inline std::vector<double> nelder_mead(const std::function<double(const std::vector<double>&)>& f,
                                       std::vector<double> x0, double step, int max_iter) {
    const std::size_t n = x0.size();
    std::vector<std::vector<double>> pts(n + 1, x0);
    for (std::size_t i = 0; i < n; ++i) pts[i + 1][i] += step;
    std::vector<double> fv(n + 1);
    for (std::size_t i = 0; i <= n; ++i) fv[i] = f(pts[i]);

    for (int it = 0; it < max_iter; ++it) {
        std::vector<std::size_t> order(n + 1);
        for (std::size_t i = 0; i <= n; ++i) order[i] = i;
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            if (fv[a] != fv[b]) return fv[a] < fv[b];
            return a < b;
        });
        std::vector<std::vector<double>> np(n + 1);
        std::vector<double> nf(n + 1);
        for (std::size_t i = 0; i <= n; ++i) {
            np[i] = pts[order[i]];
            nf[i] = fv[order[i]];
        }
        pts = std::move(np);
        fv = std::move(nf);
        if (std::abs(fv[n] - fv[0]) < 1e-14 * (1.0 + std::abs(fv[0]))) break;

        std::vector<double> centroid(n, 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t k = 0; k < n; ++k) centroid[k] += pts[i][k] / static_cast<double>(n);

        auto blend = [&](double coef) {
            std::vector<double> x(n);
            for (std::size_t k = 0; k < n; ++k) x[k] = centroid[k] + coef * (pts[n][k] - centroid[k]);
            return x;
        };
        const std::vector<double> xr = blend(-1.0);
        const double fr = f(xr);
        if (fr < fv[0]) {
            const std::vector<double> xe = blend(-2.0);
            const double fe = f(xe);
            if (fe < fr) {
                pts[n] = xe;
                fv[n] = fe;
            } else {
                pts[n] = xr;
                fv[n] = fr;
            }
        } else if (fr < fv[n - 1]) {
            pts[n] = xr;
            fv[n] = fr;
        } else {
            const std::vector<double> xc = blend(fr < fv[n] ? -0.5 : 0.5);
            const double fc = f(xc);
            if (fc < std::min(fr, fv[n])) {
                pts[n] = xc;
                fv[n] = fc;
            } else {
                for (std::size_t i = 1; i <= n; ++i) {
                    for (std::size_t k = 0; k < n; ++k) pts[i][k] = pts[0][k] + 0.5 * (pts[i][k] - pts[0][k]);
                    fv[i] = f(pts[i]);
                }
            }
        }
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i <= n; ++i)
        if (fv[i] < fv[best]) best = i;
    return pts[best];
}

struct LineFit {
    double intercept = 0.0;
    double slope = 0.0;
    double intercept_err = 0.0;
    double slope_err = 0.0;
    double chi2 = 0.0;
    int dof = 0;
};

// Weighted least squares y = a + b x with weights 1/sigma^2.
inline LineFit wls_line(const std::vector<double>& x, const std::vector<double>& y,
                        const std::vector<double>& sigma) {
    const std::size_t n = x.size();
    if (n < 2 || y.size() != n || sigma.size() != n)
        raise_config("DegenerateFit", "line fit needs at least two matched points");
    double S = 0, Sx = 0, Sy = 0, Sxx = 0, Sxy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double s2 = sigma[i] > 0 ? sigma[i] * sigma[i] : 1.0;
        const double w = 1.0 / s2;
        S += w;
        Sx += w * x[i];
        Sy += w * y[i];
        Sxx += w * x[i] * x[i];
        Sxy += w * x[i] * y[i];
    }
    const double det = S * Sxx - Sx * Sx;
    if (!(std::abs(det) > 1e-300 * (1.0 + S * Sxx)))
        raise_config("DegenerateFit", "abscissas do not span a line");
    LineFit f;
    f.intercept = (Sxx * Sy - Sx * Sxy) / det;
    f.slope = (S * Sxy - Sx * Sy) / det;
    f.intercept_err = std::sqrt(Sxx / det);
    f.slope_err = std::sqrt(S / det);
    f.dof = static_cast<int>(n) - 2;
    for (std::size_t i = 0; i < n; ++i) {
        const double s2 = sigma[i] > 0 ? sigma[i] * sigma[i] : 1.0;
        const double r = y[i] - f.intercept - f.slope * x[i];
        f.chi2 += r * r / s2;
    }
    return f;
}

} // namespace pm

#pragma once

#include <algorithm>
#include <cmath>
#include <future>
#include <string>
#include <vector>

#include "pm/errors.hpp"

namespace pm::li {

struct RadialGrid {
    int n_points = 0;
    double s_max = 0;
    double h_s = 0;
    std::vector<double> s_values, r_values;
    std::vector<double> quadrature_weights; // Simpson weight times dr/ds
};

// Uniform s in [0, s_max], r = s/(1-s); s_max puts r_max at 1e4 bohr.
inline RadialGrid build_grid(int n_points) {
    if (n_points < 3 || n_points % 2 == 0)
        raise_config("TooFewPoints", "need an odd point count >= 3, got " + std::to_string(n_points));
    RadialGrid g;
    g.n_points = n_points;
    const double r_max = 1e4;
    g.s_max = r_max / (1.0 + r_max);
    g.h_s = g.s_max / static_cast<double>(n_points - 1);
    g.s_values.resize(static_cast<std::size_t>(n_points));
    g.r_values.resize(static_cast<std::size_t>(n_points));
    g.quadrature_weights.resize(static_cast<std::size_t>(n_points));
    for (int i = 0; i < n_points; ++i) {
        const auto k = static_cast<std::size_t>(i);
        const double s = g.h_s * static_cast<double>(i);
        g.s_values[k] = s;
        g.r_values[k] = s / (1.0 - s);
        double simp = (i == 0 || i == n_points - 1) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
        const double jac = 1.0 / ((1.0 - s) * (1.0 - s));
        g.quadrature_weights[k] = simp * g.h_s / 3.0 * jac;
    }
    return g;
}

inline double integrate(const RadialGrid& g, const std::vector<double>& f) {
    double acc = 0.0;
    for (int i = 0; i < g.n_points; ++i)
        acc += g.quadrature_weights[static_cast<std::size_t>(i)] * f[static_cast<std::size_t>(i)];
    return acc;
}

struct StoOrbital {
    int n = 1;
    int l = 0;
    double zeta = 1.0;
    std::vector<double> u; // u(r) = r R(r), normalized so integral of u^2 dr is 1
};

inline StoOrbital make_sto(const RadialGrid& g, int n, int l, double zeta) {
    if (!(zeta > 0)) raise_config("NonFiniteResult", "exponent must be positive");
    StoOrbital o;
    o.n = n;
    o.l = l;
    o.zeta = zeta;
    o.u.resize(static_cast<std::size_t>(g.n_points));
    std::vector<double> u2(static_cast<std::size_t>(g.n_points));
    for (int i = 0; i < g.n_points; ++i) {
        const auto k = static_cast<std::size_t>(i);
        const double r = g.r_values[k];
        const double v = r > 0 ? std::exp(static_cast<double>(n) * std::log(r) - zeta * r) : 0.0;
        o.u[k] = std::isfinite(v) ? v : 0.0;
        u2[k] = o.u[k] * o.u[k];
    }
    const double norm = integrate(g, u2);
    if (!(norm > 0) || !std::isfinite(norm))
        raise_runtime("NonFiniteResult", "orbital norm is not positive finite");
    const double scale = 1.0 / std::sqrt(norm);
    for (auto& v : o.u) v *= scale;
    return o;
}

// du/ds by five-point centered differences (three-point near the edges,
// one-sided at the boundary), converted to du/dr by (1-s)^2.
inline std::vector<double> radial_derivative(const RadialGrid& g, const std::vector<double>& u) {
    const int n = g.n_points;
    const double h = g.h_s;
    std::vector<double> d(static_cast<std::size_t>(n));
    auto U = [&](int i) { return u[static_cast<std::size_t>(i)]; };
    for (int i = 0; i < n; ++i) {
        double ds;
        if (i >= 2 && i <= n - 3)
            ds = (U(i - 2) - 8.0 * U(i - 1) + 8.0 * U(i + 1) - U(i + 2)) / (12.0 * h);
        else if (i >= 1 && i <= n - 2)
            ds = (U(i + 1) - U(i - 1)) / (2.0 * h);
        else if (i == 0)
            ds = (-3.0 * U(0) + 4.0 * U(1) - U(2)) / (2.0 * h);
        else
            ds = (3.0 * U(n - 1) - 4.0 * U(n - 2) + U(n - 3)) / (2.0 * h);
        const double oms = 1.0 - g.s_values[static_cast<std::size_t>(i)];
        d[static_cast<std::size_t>(i)] = ds * oms * oms;
    }
    return d;
}

inline double one_electron_energy(const StoOrbital& orb, double Z, const RadialGrid& g) {
    const auto du = radial_derivative(g, orb.u);
    std::vector<double> integrand(static_cast<std::size_t>(g.n_points), 0.0);
    const double ll = static_cast<double>(orb.l * (orb.l + 1));
    for (int i = 0; i < g.n_points; ++i) {
        const auto k = static_cast<std::size_t>(i);
        const double r = g.r_values[k];
        const double u = orb.u[k];
        double v = 0.5 * du[k] * du[k];
        if (r > 0) v += ll * u * u / (2.0 * r * r) - Z * u * u / r;
        integrand[k] = v;
    }
    const double e = integrate(g, integrand);
    if (!std::isfinite(e)) raise_runtime("NonFiniteResult", "one-electron energy is not finite");
    return e;
}

// Radial Coulomb multipole I_k[f,g] = integral f(r1) g(r2) r_<^k / r_>^(k+1).
// One forward pass builds B(r) = cum. of g s^k and C(r) = cum. of g s^(-1-k)
// with the grid's own weights, then assembles f(r)[r^(-1-k) B + r^k (C_inf - C)].
// Using one shared weight array makes I_k exactly symmetric under f <-> g.
inline double slater_integral(int k, const std::vector<double>& f, const std::vector<double>& g,
                              const RadialGrid& grid) {
    const int n = grid.n_points;
    double B = 0.0, C = 0.0, Cinf = 0.0;
    for (int i = 1; i < n; ++i) {
        const auto q = static_cast<std::size_t>(i);
        Cinf += grid.quadrature_weights[q] * g[q] * std::pow(grid.r_values[q], -(k + 1));
    }
    double acc = 0.0;
    for (int i = 1; i < n; ++i) {
        const auto q = static_cast<std::size_t>(i);
        const double r = grid.r_values[q];
        const double rk = std::pow(r, k);
        const double w = grid.quadrature_weights[q];
        B += w * g[q] * rk;        // r_< branch, diagonal included here once
        C += w * g[q] / (rk * r);
        acc += w * f[q] * (B / (rk * r) + rk * (Cinf - C));
    }
    if (!std::isfinite(acc)) raise_runtime("NonFiniteResult", "slater integral is not finite");
    return acc;
}

inline std::vector<double> density(const StoOrbital& a, const StoOrbital& b) {
    std::vector<double> d(a.u.size());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = a.u[i] * b.u[i];
    return d;
}

inline StoOrbital orthogonalize_2s(const StoOrbital& core, const StoOrbital& candidate,
                                   const RadialGrid& g) {
    if (core.l != candidate.l)
        raise_config("DegenerateOrbital", "orthogonalization requires equal angular momentum");
    const double ov = integrate(g, density(core, candidate));
    StoOrbital out = candidate;
    double norm2 = 0.0;
    for (std::size_t i = 0; i < out.u.size(); ++i) {
        out.u[i] = candidate.u[i] - ov * core.u[i];
    }
    std::vector<double> u2(out.u.size());
    for (std::size_t i = 0; i < out.u.size(); ++i) u2[i] = out.u[i] * out.u[i];
    norm2 = integrate(g, u2);
    if (norm2 < 1e-16)
        raise_runtime("DegenerateOrbital", "candidate is parallel to the core orbital");
    const double scale = 1.0 / std::sqrt(norm2);
    for (auto& v : out.u) v *= scale;
    return out;
}

namespace detail {

inline double factorial(int n) {
    double v = 1.0;
    for (int i = 2; i <= n; ++i) v *= static_cast<double>(i);
    return v;
}

} // namespace detail

// (j1 j2 j3; 0 0 0) Wigner symbol; zero unless the triangle rule holds and
// j1+j2+j3 is even.
inline double wigner3j_zero(int j1, int j2, int j3) {
    if (j3 < std::abs(j1 - j2) || j3 > j1 + j2) return 0.0;
    const int J = j1 + j2 + j3;
    if (J % 2 != 0) return 0.0;
    const int g = J / 2;
    using detail::factorial;
    const double t = std::sqrt(factorial(J - 2 * j1) * factorial(J - 2 * j2) *
                               factorial(J - 2 * j3) / factorial(J + 1));
    const double v = factorial(g) / (factorial(g - j1) * factorial(g - j2) * factorial(g - j3));
    return (g % 2 == 0 ? 1.0 : -1.0) * t * v;
}

// Angular weight of the k-th multipole in the direct Coulomb term between
// spherically averaged shells l1 and l2; picks out k=0 alone when either
// shell is an s state.
inline double direct_angular_weight(int l1, int l2, int k) {
    const double a = wigner3j_zero(l1, k, l1);
    const double b = wigner3j_zero(l2, k, l2);
    return static_cast<double>(2 * l1 + 1) * a * a * static_cast<double>(2 * l2 + 1) * b * b;
}

// Angular weight of the k-th multipole in the exchange term; for an s-p pair
// only k=1 survives, with weight 1/3.
inline double exchange_angular_weight(int l1, int l2, int k) {
    const double a = wigner3j_zero(l1, k, l2);
    return a * a;
}

struct EnergyBreakdown {
    double h_1s = 0, h_2s = 0, h_2p = 0;
    double J_11 = 0, J_12 = 0, J_1p = 0, K_12 = 0, K_sp = 0;
    double E_total = 0;
};

constexpr double kExactLiGroundState = -7.478; // nonrelativistic bound used as a sanity assertion

inline EnergyBreakdown energy_ground(double z1, double z2, double Z, const RadialGrid& g) {
    const auto u1 = make_sto(g, 1, 0, z1);
    const auto u2raw = make_sto(g, 2, 0, z2);
    const auto u2 = orthogonalize_2s(u1, u2raw, g);
    EnergyBreakdown b;
    b.h_1s = one_electron_energy(u1, Z, g);
    b.h_2s = one_electron_energy(u2, Z, g);
    b.J_11 = slater_integral(0, density(u1, u1), density(u1, u1), g);
    b.J_12 = slater_integral(0, density(u1, u1), density(u2, u2), g);
    b.K_12 = slater_integral(0, density(u1, u2), density(u1, u2), g);
    b.E_total = 2.0 * b.h_1s + b.h_2s + b.J_11 + 2.0 * b.J_12 - b.K_12;
    if (b.E_total < kExactLiGroundState)
        raise_runtime("NonFiniteResult", "ground energy violates the variational bound");
    return b;
}

// 1s^2 2p configuration. Multipole content comes from the angular weights:
// the direct s-p sum collapses to k=0, the exchange to k=1 with weight 1/3.
inline EnergyBreakdown energy_excited(double z1, double zp, double Z, const RadialGrid& g) {
    const auto u1 = make_sto(g, 1, 0, z1);
    const auto up = make_sto(g, 2, 1, zp);
    EnergyBreakdown b;
    b.h_1s = one_electron_energy(u1, Z, g);
    b.h_2p = one_electron_energy(up, Z, g);
    b.J_11 = slater_integral(0, density(u1, u1), density(u1, u1), g);
    const auto dir = density(u1, u1);
    const auto dpp = density(up, up);
    const auto cross = density(u1, up);
    b.J_1p = 0.0;
    b.K_sp = 0.0;
    for (int k = 0; k <= 2; ++k) {
        const double wd = direct_angular_weight(0, 1, k);
        if (wd != 0.0) b.J_1p += wd * slater_integral(k, dir, dpp, g);
        const double wx = exchange_angular_weight(0, 1, k);
        if (wx != 0.0) b.K_sp += wx * slater_integral(k, cross, cross, g);
    }
    b.E_total = 2.0 * b.h_1s + b.h_2p + b.J_11 + 2.0 * b.J_1p - b.K_sp;
    return b;
}

struct SearchRanges {
    double z1_min = 2.0, z1_max = 3.4;
    double z2_min = 0.30, z2_max = 1.30;
    double zp_min = 0.30, zp_max = 1.00;
    double coarse_step = 0.1;
    double fine_step = 0.01;
};

struct TracePoint {
    std::string stage;
    double za = 0, zb = 0, E = 0;
};

struct OptimizationResult {
    double zeta_1s = 0, zeta_2s = 0, zeta_2p = 0;
    double E_ground = 0, E_excited = 0, delta_E = 0;
    std::vector<TracePoint> search_trace;
};

namespace detail {

inline std::vector<double> axis(double lo, double hi, double step) {
    std::vector<double> v;
    const int m = static_cast<int>(std::lround((hi - lo) / step));
    for (int i = 0; i <= m; ++i) v.push_back(lo + step * static_cast<double>(i));
    return v;
}

template <class F>
inline std::vector<double> map_jobs(const std::vector<std::pair<double, double>>& pts, int jobs, F&& f) {
    std::vector<double> out(pts.size());
    if (jobs <= 1) {
        for (std::size_t i = 0; i < pts.size(); ++i) out[i] = f(pts[i].first, pts[i].second);
        return out;
    }
    std::vector<std::future<void>> fut;
    std::size_t next = 0;
    const std::size_t stride = (pts.size() + static_cast<std::size_t>(jobs) - 1) / static_cast<std::size_t>(jobs);
    for (int w = 0; w < jobs && next < pts.size(); ++w) {
        const std::size_t lo = next, hi = std::min(pts.size(), next + stride);
        next = hi;
        fut.push_back(std::async(std::launch::async, [&, lo, hi] {
            for (std::size_t i = lo; i < hi; ++i) out[i] = f(pts[i].first, pts[i].second);
        }));
    }
    for (auto& fu : fut) fu.get();
    return out;
}

} // namespace detail

// Two-stage nested grid search: coarse then fine over (z1, z2) for the ground
// state, then over zp with z1 frozen at its ground-state optimum.
inline OptimizationResult optimize(double Z, const RadialGrid& g, const SearchRanges& R, int jobs = 1) {
    OptimizationResult res;

    auto eval_ground = [&](double z1, double z2) { return energy_ground(z1, z2, Z, g).E_total; };
    auto eval_excited = [&](double z1, double zp) { return energy_excited(z1, zp, Z, g).E_total; };

    auto stage2d = [&](const std::vector<double>& z1s, const std::vector<double>& z2s,
                       const char* tag) {
        std::vector<std::pair<double, double>> pts;
        for (double a : z1s)
            for (double b : z2s) pts.emplace_back(a, b);
        const auto E = detail::map_jobs(pts, jobs, eval_ground);
        std::size_t best = 0;
        for (std::size_t i = 0; i < pts.size(); ++i) {
            res.search_trace.push_back({tag, pts[i].first, pts[i].second, E[i]});
            if (E[i] < E[best]) best = i;
        }
        return std::make_tuple(pts[best].first, pts[best].second, E[best]);
    };

    const auto z1c = detail::axis(R.z1_min, R.z1_max, R.coarse_step);
    const auto z2c = detail::axis(R.z2_min, R.z2_max, R.coarse_step);
    auto [cz1, cz2, cE] = stage2d(z1c, z2c, "ground-coarse");
    const double eps = R.coarse_step / 2.0;
    if (std::abs(cz1 - R.z1_min) < eps || std::abs(cz1 - R.z1_max) < eps ||
        std::abs(cz2 - R.z2_min) < eps || std::abs(cz2 - R.z2_max) < eps)
        raise_config("RangeDoesNotBracketMinimum",
                     "coarse ground optimum sits on the search boundary (z1=" + std::to_string(cz1) +
                         ", z2=" + std::to_string(cz2) + ")");

    const auto z1f = detail::axis(std::max(R.z1_min, cz1 - R.coarse_step),
                                  std::min(R.z1_max, cz1 + R.coarse_step), R.fine_step);
    const auto z2f = detail::axis(std::max(R.z2_min, cz2 - R.coarse_step),
                                  std::min(R.z2_max, cz2 + R.coarse_step), R.fine_step);
    auto [fz1, fz2, fE] = stage2d(z1f, z2f, "ground-fine");
    res.zeta_1s = fz1;
    res.zeta_2s = fz2;
    res.E_ground = fE;

    auto stage1d = [&](const std::vector<double>& zps, const char* tag) {
        std::vector<std::pair<double, double>> pts;
        for (double b : zps) pts.emplace_back(res.zeta_1s, b);
        const auto E = detail::map_jobs(pts, jobs, eval_excited);
        std::size_t best = 0;
        for (std::size_t i = 0; i < pts.size(); ++i) {
            res.search_trace.push_back({tag, pts[i].first, pts[i].second, E[i]});
            if (E[i] < E[best]) best = i;
        }
        return std::make_pair(pts[best].second, E[best]);
    };

    auto [czp, cEp] = stage1d(detail::axis(R.zp_min, R.zp_max, R.coarse_step), "excited-coarse");
    if (std::abs(czp - R.zp_min) < eps || std::abs(czp - R.zp_max) < eps)
        raise_config("RangeDoesNotBracketMinimum",
                     "coarse excited optimum sits on the search boundary (zp=" + std::to_string(czp) + ")");
    auto [fzp, fEp] = stage1d(detail::axis(std::max(R.zp_min, czp - R.coarse_step),
                                           std::min(R.zp_max, czp + R.coarse_step), R.fine_step),
                              "excited-fine");
    res.zeta_2p = fzp;
    res.E_excited = fEp;
    res.delta_E = res.E_excited - res.E_ground;
    if (!(res.E_excited > res.E_ground))
        raise_runtime("NonFiniteResult", "excited state fell below the ground state");
    return res;
}

} // namespace pm::li

#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "pm/env/cs/types.hpp"
#include "pm/rng.hpp"

namespace pm::cs {

namespace detail {

// Counter-mode Gaussian stream (Box-Muller over splitmix64), insensitive to call order
// elsewhere in the generator.
class GaussStream {
public:
    explicit GaussStream(std::uint64_t seed) : ctr_(seed) {}

    double operator()() {
        if (have_) {
            have_ = false;
            return spare_;
        }
        const double u1 = 1.0 - unit();
        const double u2 = unit();
        const double r = std::sqrt(-2.0 * std::log(u1));
        spare_ = r * std::sin(2.0 * M_PI * u2);
        have_ = true;
        return r * std::cos(2.0 * M_PI * u2);
    }

private:
    double unit() {
        const std::uint64_t v = splitmix64(ctr_++);
        return static_cast<double>(v >> 11) * (1.0 / 9007199254740992.0);
    }

    std::uint64_t ctr_;
    bool have_ = false;
    double spare_ = 0.0;
};

// Stationary AR(1) series with unit marginal variance.
inline std::vector<double> ar1_series(GaussStream& g, int n, double rho) {
    std::vector<double> out(n);
    if (n == 0) return out;
    out[0] = g();
    const double mix = std::sqrt(1.0 - rho * rho);
    for (int t = 1; t < n; ++t) out[t] = rho * out[t - 1] + mix * g();
    return out;
}

}  // namespace detail

struct SyntheticEnsemble {
    CorrelatorSet correlators;
    WilsonLoopTable zE;
    TruthRecord truth;
};

// Emits correlators built from a known wavefunction, energies, and linear divergence,
// with correlated multiplicative Gaussian noise, then stores delete-1 jackknife means.
// The truth record backs round-trip assertions downstream.
inline SyntheticEnsemble generate_synthetic_ensemble(const CsConfig& cfg) {
    validate(cfg);
    SyntheticEnsemble out;

    out.truth.base = TailParams{cfg.c1, cfg.c2, cfg.n1, cfg.n2, cfg.lambda0};
    out.truth.kappa0 = cfg.kappa0;
    out.truth.delta = cfg.delta;
    out.truth.A = cfg.A;
    out.truth.E0 = cfg.E0;
    out.truth.r_excited = cfg.r_excited;
    out.truth.r_excited_nl = cfg.r_excited_nl;
    out.truth.dE = cfg.dE;
    out.truth.p_ref = cfg.momenta[0];

    out.zE.staple_L = cfg.staple_L;
    for (int z = 0; z <= cfg.z_max; ++z) {
        const int len = z + 2 * cfg.staple_L;
        out.zE.zE[{len, cfg.b}] = std::exp(-2.0 * cfg.delta * len);
    }

    CorrelatorSet& s = out.correlators;
    s.lattice_spacing = cfg.lattice_spacing;
    s.lattice_L = cfg.lattice_L;
    s.T = cfg.T;
    s.R = cfg.replicas;
    s.b = cfg.b;
    s.momenta = cfg.momenta;
    s.momenta_gev.clear();
    for (int p : cfg.momenta)
        s.momenta_gev.push_back(cfg.p_ref_gev * p / static_cast<double>(cfg.momenta[0]));
    for (int z = -cfg.z_max; z <= cfg.z_max; ++z) s.zs.push_back(z);

    const std::size_t M = s.momenta.size();
    const std::size_t Z = s.nz();
    const int R = s.R, T = s.T;
    s.nl_data.assign(M * Z * static_cast<std::size_t>(R) * static_cast<std::size_t>(T),
                     cplx{0.0, 0.0});
    s.loc_data.assign(M * static_cast<std::size_t>(R) * static_cast<std::size_t>(T), 0.0);

    const double rho = 0.5;
    const double inv_r1 = 1.0 / static_cast<double>(R - 1);

    for (std::size_t m = 0; m < M; ++m) {
        const int p = s.momenta[m];
        const double factor_p =
            std::pow(static_cast<double>(p) / static_cast<double>(cfg.momenta[0]), cfg.kappa0);

        std::vector<cplx> phi(Z);
        for (std::size_t zi = 0; zi < Z; ++zi) {
            const int z = s.zs[zi];
            if (z == 0) {
                phi[zi] = cplx{tail_eval(out.truth.base, 0.0).real(), 0.0} * factor_p;
            } else {
                const cplx base = tail_eval(out.truth.base, lambda_of(std::abs(z), p, s.lattice_L));
                phi[zi] = (z > 0 ? base : std::conj(base)) * factor_p;
            }
        }

        std::vector<double> loc_sum(T, 0.0);
        std::vector<std::vector<double>> loc_cfg(R, std::vector<double>(T));
        std::vector<std::vector<cplx>> nl_sum(Z, std::vector<cplx>(T, cplx{0.0, 0.0}));
        std::vector<std::vector<std::vector<cplx>>> nl_cfg(
            Z, std::vector<std::vector<cplx>>(R, std::vector<cplx>(T)));

        for (int c = 0; c < R; ++c) {
            const std::uint64_t salt_base =
                (static_cast<std::uint64_t>(m) * 1000003ull + static_cast<std::uint64_t>(c)) *
                1000003ull;
            detail::GaussStream gu(derive_seed(cfg.seed, salt_base));
            const std::vector<double> u = detail::ar1_series(gu, T, rho);
            for (int t = 0; t < T; ++t) {
                const double v = cfg.A * std::exp(-cfg.E0 * t) *
                                 (1.0 + cfg.r_excited * std::exp(-cfg.dE * t)) *
                                 (1.0 + cfg.noise * u[t]);
                loc_cfg[c][t] = v;
                loc_sum[t] += v;
            }
            for (std::size_t zi = 0; zi < Z; ++zi) {
                const double div = std::exp(-cfg.delta * (std::abs(s.zs[zi]) + 2 * cfg.staple_L));
                detail::GaussStream gz(derive_seed(cfg.seed, salt_base + 7ull + 4ull * zi));
                const std::vector<double> wre = detail::ar1_series(gz, T, rho);
                const std::vector<double> wim = detail::ar1_series(gz, T, rho);
                for (int t = 0; t < T; ++t) {
                    const double amp = cfg.A * std::exp(-cfg.E0 * t) *
                                       (1.0 + cfg.r_excited_nl * std::exp(-cfg.dE * t)) * div;
                    const cplx noise_fac{1.0 + cfg.noise * (u[t] + wre[t]) * M_SQRT1_2,
                                         cfg.noise * wim[t] * M_SQRT1_2};
                    const cplx v = phi[zi] * amp * noise_fac;
                    nl_cfg[zi][c][t] = v;
                    nl_sum[zi][t] += v;
                }
            }
        }

        for (int r = 0; r < R; ++r)
            for (int t = 0; t < T; ++t) s.loc(m, r, t) = (loc_sum[t] - loc_cfg[r][t]) * inv_r1;
        for (std::size_t zi = 0; zi < Z; ++zi)
            for (int r = 0; r < R; ++r)
                for (int t = 0; t < T; ++t)
                    s.nl(m, zi, r, t) = (nl_sum[zi][t] - nl_cfg[zi][r][t]) * inv_r1;
    }

    validate(s);
    return out;
}

}  // namespace pm::cs

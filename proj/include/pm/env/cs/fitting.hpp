#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "pm/env/cs/types.hpp"
#include "pm/errors.hpp"
#include "pm/stats.hpp"

namespace pm::cs {

inline double jk_mean(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

// Delete-1 jackknife error from the replica spread.
inline double jk_sigma(const std::vector<double>& v) {
    const std::size_t n = v.size();
    if (n < 2) return 0.0;
    const double m = jk_mean(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s * static_cast<double>(n - 1) / static_cast<double>(n));
}

inline cplx jk_mean_c(const std::vector<cplx>& v) {
    cplx s{0.0, 0.0};
    for (const cplx& x : v) s += x;
    return v.empty() ? s : s / static_cast<double>(v.size());
}

namespace detail {

constexpr double kSigmaFloorRel = 1e-12;

struct SeriesStats {
    std::vector<cplx> central;
    std::vector<double> sig_re, sig_im;
    double scale = 0.0;
};

inline SeriesStats series_stats(const std::vector<std::vector<cplx>>& data) {
    SeriesStats st;
    const std::size_t R = data.size();
    const std::size_t N = data.empty() ? 0 : data[0].size();
    st.central.resize(N);
    st.sig_re.resize(N);
    st.sig_im.resize(N);
    std::vector<double> re(R), im(R);
    for (std::size_t i = 0; i < N; ++i) {
        for (std::size_t r = 0; r < R; ++r) {
            re[r] = data[r][i].real();
            im[r] = data[r][i].imag();
        }
        st.central[i] = cplx{jk_mean(re), jk_mean(im)};
        st.sig_re[i] = jk_sigma(re);
        st.sig_im[i] = jk_sigma(im);
        st.scale = std::max(st.scale, std::abs(st.central[i]));
    }
    const double floor = kSigmaFloorRel * (st.scale + 1e-300);
    for (std::size_t i = 0; i < N; ++i) {
        st.sig_re[i] = std::max(st.sig_re[i], floor);
        st.sig_im[i] = std::max(st.sig_im[i], floor);
    }
    return st;
}

// Weighted constant fit of one real component over [t0, t1].
struct ConstFit {
    double value = 0.0;
    double sigma = 0.0;
    double chi2 = 0.0;
};

inline ConstFit const_fit(const std::vector<double>& y, const std::vector<double>& sig, int t0,
                          int t1) {
    double sw = 0.0, swy = 0.0;
    for (int t = t0; t <= t1; ++t) {
        const double w = 1.0 / (sig[t] * sig[t]);
        sw += w;
        swy += w * y[t];
    }
    ConstFit f;
    f.value = swy / sw;
    f.sigma = 1.0 / std::sqrt(sw);
    for (int t = t0; t <= t1; ++t) {
        const double d = (y[t] - f.value) / sig[t];
        f.chi2 += d * d;
    }
    return f;
}

// Weighted a + b*exp(-Delta*t) fit of one real component at fixed Delta.
struct ExpFit {
    double a = 0.0, b = 0.0;
    double var_a = 0.0, var_b = 0.0;
    double chi2 = 0.0;
    bool ok = false;
};

inline ExpFit exp_fit_fixed(const std::vector<double>& y, const std::vector<double>& sig,
                            int t0, int t1, double Delta) {
    double m00 = 0, m01 = 0, m11 = 0, r0 = 0, r1 = 0;
    for (int t = t0; t <= t1; ++t) {
        const double w = 1.0 / (sig[t] * sig[t]);
        const double e = std::exp(-Delta * t);
        m00 += w;
        m01 += w * e;
        m11 += w * e * e;
        r0 += w * y[t];
        r1 += w * e * y[t];
    }
    ExpFit f;
    const double det = m00 * m11 - m01 * m01;
    if (!(std::abs(det) > 1e-300 * (m00 * m11 + 1e-300))) return f;
    f.a = (m11 * r0 - m01 * r1) / det;
    f.b = (m00 * r1 - m01 * r0) / det;
    f.var_a = m11 / det;
    f.var_b = m00 / det;
    for (int t = t0; t <= t1; ++t) {
        const double d = (y[t] - f.a - f.b * std::exp(-Delta * t)) / sig[t];
        f.chi2 += d * d;
    }
    f.ok = std::isfinite(f.chi2);
    return f;
}

struct TwoStateFit {
    cplx phi{0.0, 0.0}, B{0.0, 0.0};
    double Delta = 0.0;
    double sphi_re = 0.0, sphi_im = 0.0, sB_re = 0.0, sB_im = 0.0;
    double chi2 = 0.0;
    bool ok = false;
};

inline TwoStateFit two_state_fit(const std::vector<double>& yre, const std::vector<double>& yim,
                                 const std::vector<double>& sre, const std::vector<double>& sim,
                                 int t0, int t1, double Delta_lo, double Delta_hi) {
    auto chi2_at = [&](double Delta) {
        const ExpFit fr = exp_fit_fixed(yre, sre, t0, t1, Delta);
        const ExpFit fi = exp_fit_fixed(yim, sim, t0, t1, Delta);
        if (!fr.ok || !fi.ok) return std::numeric_limits<double>::infinity();
        return fr.chi2 + fi.chi2;
    };
    const int grid = 40;
    double best_ld = std::log(Delta_lo), best_chi2 = std::numeric_limits<double>::infinity();
    for (int i = 0; i < grid; ++i) {
        const double ld = std::log(Delta_lo) +
                          (std::log(Delta_hi) - std::log(Delta_lo)) * i / (grid - 1.0);
        const double c = chi2_at(std::exp(ld));
        if (c < best_chi2) {
            best_chi2 = c;
            best_ld = ld;
        }
    }
    const double span = (std::log(Delta_hi) - std::log(Delta_lo)) / (grid - 1.0);
    double lo = best_ld - span, hi = best_ld + span;
    const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
    double x1 = hi - gr * (hi - lo), x2 = lo + gr * (hi - lo);
    double f1 = chi2_at(std::exp(x1)), f2 = chi2_at(std::exp(x2));
    for (int it = 0; it < 60; ++it) {
        if (f1 < f2) {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - gr * (hi - lo);
            f1 = chi2_at(std::exp(x1));
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + gr * (hi - lo);
            f2 = chi2_at(std::exp(x2));
        }
    }
    TwoStateFit out;
    out.Delta = std::exp(0.5 * (lo + hi));
    const ExpFit fr = exp_fit_fixed(yre, sre, t0, t1, out.Delta);
    const ExpFit fi = exp_fit_fixed(yim, sim, t0, t1, out.Delta);
    if (!fr.ok || !fi.ok) return out;
    out.phi = cplx{fr.a, fi.a};
    out.B = cplx{fr.b, fi.b};
    out.sphi_re = std::sqrt(fr.var_a);
    out.sphi_im = std::sqrt(fi.var_a);
    out.sB_re = std::sqrt(fr.var_b);
    out.sB_im = std::sqrt(fi.var_b);
    out.chi2 = fr.chi2 + fi.chi2;
    out.ok = std::isfinite(out.chi2);
    return out;
}

}  // namespace detail

struct RatioFit {
    std::vector<cplx> phi;  // per replica
    FitDiagnostics diag;
};

// Windowed plateau extraction from R(t) = C_nl/C_loc replicas. Model choice is
// significance-gated: if the longest acceptable two-state window shows an excited-state
// amplitude above 2 sigma, that fit wins; otherwise the one-state window with the lowest
// chi^2/dof is used. Windows end at T-1, need >= 4 points, and must be stable under
// dropping their first point.
inline RatioFit fit_ratio_series(const std::vector<std::vector<cplx>>& ratio,
                                 double chi2dof_max) {
    const int R = static_cast<int>(ratio.size());
    const int T = static_cast<int>(ratio[0].size());
    const detail::SeriesStats st = detail::series_stats(ratio);
    std::vector<double> yre(T), yim(T);
    for (int t = 0; t < T; ++t) {
        yre[t] = st.central[t].real();
        yim[t] = st.central[t].imag();
    }
    const double stab_floor = 1e-9 * (st.scale + 1e-300);
    const double dlo = 0.02, dhi = 3.0;
    const int t1 = T - 1;

    struct Cand {
        int t0 = 0;
        double chi2_dof = 0.0;
        bool usable = false;
        detail::TwoStateFit two;
        detail::ConstFit one_re, one_im;
    };
    std::vector<Cand> one(T), two(T);
    double best_seen = std::numeric_limits<double>::infinity();
    for (int t0 = 0; t0 + 3 <= t1; ++t0) {
        const int len = t1 - t0 + 1;
        Cand c1;
        c1.t0 = t0;
        c1.one_re = detail::const_fit(yre, st.sig_re, t0, t1);
        c1.one_im = detail::const_fit(yim, st.sig_im, t0, t1);
        c1.chi2_dof = (c1.one_re.chi2 + c1.one_im.chi2) / (2.0 * len - 2.0);
        if (std::isfinite(c1.chi2_dof)) {
            const detail::ConstFit sr = detail::const_fit(yre, st.sig_re, t0 + 1, t1);
            const detail::ConstFit si = detail::const_fit(yim, st.sig_im, t0 + 1, t1);
            const bool stable =
                std::abs(sr.value - c1.one_re.value) <=
                    2.0 * (sr.sigma + c1.one_re.sigma) + stab_floor &&
                std::abs(si.value - c1.one_im.value) <=
                    2.0 * (si.sigma + c1.one_im.sigma) + stab_floor;
            c1.usable = stable && c1.chi2_dof <= chi2dof_max;
            best_seen = std::min(best_seen, c1.chi2_dof);
        }
        one[t0] = c1;

        Cand c2;
        c2.t0 = t0;
        c2.two = detail::two_state_fit(yre, yim, st.sig_re, st.sig_im, t0, t1, dlo, dhi);
        if (c2.two.ok) {
            c2.chi2_dof = c2.two.chi2 / std::max(1.0, 2.0 * len - 5.0);
            const detail::TwoStateFit shr =
                detail::two_state_fit(yre, yim, st.sig_re, st.sig_im, t0 + 1, t1, dlo, dhi);
            const bool stable =
                shr.ok &&
                std::abs(shr.phi.real() - c2.two.phi.real()) <=
                    2.0 * (shr.sphi_re + c2.two.sphi_re) + stab_floor &&
                std::abs(shr.phi.imag() - c2.two.phi.imag()) <=
                    2.0 * (shr.sphi_im + c2.two.sphi_im) + stab_floor;
            c2.usable = stable && std::isfinite(c2.chi2_dof) && c2.chi2_dof <= chi2dof_max;
            if (std::isfinite(c2.chi2_dof)) best_seen = std::min(best_seen, c2.chi2_dof);
        }
        two[t0] = c2;
    }

    int sel_t0 = -1;
    bool sel_two = false;
    for (int t0 = 0; t0 + 3 <= t1; ++t0) {
        if (!two[t0].usable) continue;
        const detail::TwoStateFit& f = two[t0].two;
        const double sig_b = std::max(std::abs(f.B.real()) / (f.sB_re + 1e-300),
                                      std::abs(f.B.imag()) / (f.sB_im + 1e-300));
        if (sig_b >= 2.0) {
            sel_t0 = t0;
            sel_two = true;
        }
        break;  // only the longest acceptable two-state window is gate-tested
    }
    if (sel_t0 < 0) {
        for (int t0 = 0; t0 + 3 <= t1; ++t0) {
            if (!one[t0].usable) continue;
            if (sel_t0 < 0 || one[t0].chi2_dof < one[sel_t0].chi2_dof) sel_t0 = t0;
        }
        if (sel_t0 >= 0) sel_two = false;
    }
    if (sel_t0 < 0) {
        for (int t0 = 0; t0 + 3 <= t1; ++t0) {
            if (!two[t0].usable) continue;
            if (sel_t0 < 0 || two[t0].chi2_dof < two[sel_t0].chi2_dof) sel_t0 = t0;
        }
        if (sel_t0 >= 0) sel_two = true;
    }
    if (sel_t0 < 0)
        raise_runtime("NoAcceptableWindow",
                      "no fit window passed chi2/dof <= " + std::to_string(chi2dof_max) +
                          " with a stable plateau (best chi2/dof " + std::to_string(best_seen) +
                          ")");

    RatioFit out;
    out.diag.t0 = sel_t0;
    out.diag.t1 = t1;
    out.diag.model = sel_two ? "two-state" : "one-state";
    out.diag.chi2_dof = sel_two ? two[sel_t0].chi2_dof : one[sel_t0].chi2_dof;
    out.phi.resize(R);
    std::vector<double> rre(T), rim(T);
    for (int r = 0; r < R; ++r) {
        for (int t = 0; t < T; ++t) {
            rre[t] = ratio[r][t].real();
            rim[t] = ratio[r][t].imag();
        }
        if (!sel_two) {
            out.phi[r] = cplx{detail::const_fit(rre, st.sig_re, sel_t0, t1).value,
                              detail::const_fit(rim, st.sig_im, sel_t0, t1).value};
        } else {
            const double dc = two[sel_t0].two.Delta;
            const detail::TwoStateFit fr = detail::two_state_fit(
                rre, rim, st.sig_re, st.sig_im, sel_t0, t1, dc / 4.0, dc * 4.0);
            out.phi[r] = fr.ok ? fr.phi
                               : cplx{detail::const_fit(rre, st.sig_re, sel_t0, t1).value,
                                      detail::const_fit(rim, st.sig_im, sel_t0, t1).value};
        }
    }
    return out;
}

namespace detail {

// Amplitude solve for the asymptotic form at fixed (n1, n2, lambda0): the model is linear
// in (Re c1, Im c1, Re c2, Im c2) once the nonlinear shape parameters are held.
struct TailShape {
    double n1 = 0.0, n2 = 0.0, lambda0 = 1.0;
};

struct AmpSolve {
    std::array<double, 4> u{0.0, 0.0, 0.0, 0.0};
    double chi2 = std::numeric_limits<double>::infinity();
    bool ok = false;
};

inline void tail_basis(const TailShape& sh, double lambda, cplx& g1, cplx& g2) {
    const double le = std::max(lambda, 1e-12);
    const cplx i{0.0, 1.0};
    const double damp = std::exp(-le / sh.lambda0);
    g1 = std::exp(i * (M_PI * sh.n1 / 2.0)) * std::pow(le, -sh.n1) * damp;
    g2 = std::exp(i * (le - M_PI * sh.n2 / 2.0)) * std::pow(le, -sh.n2) * damp;
}

inline AmpSolve solve_amplitudes(const TailShape& sh, const std::vector<double>& lam,
                                 const std::vector<cplx>& val, const std::vector<double>& sre,
                                 const std::vector<double>& sim, std::size_t j0,
                                 std::size_t j1) {
    double M[4][4] = {};
    double rhs[4] = {};
    for (std::size_t j = j0; j <= j1; ++j) {
        cplx g1, g2;
        tail_basis(sh, lam[j], g1, g2);
        const double rowr[4] = {g1.real(), -g1.imag(), g2.real(), -g2.imag()};
        const double rowi[4] = {g1.imag(), g1.real(), g2.imag(), g2.real()};
        const double wr = 1.0 / (sre[j] * sre[j]);
        const double wi = 1.0 / (sim[j] * sim[j]);
        for (int a = 0; a < 4; ++a) {
            for (int b = 0; b < 4; ++b)
                M[a][b] += wr * rowr[a] * rowr[b] + wi * rowi[a] * rowi[b];
            rhs[a] += wr * rowr[a] * val[j].real() + wi * rowi[a] * val[j].imag();
        }
    }
    double tr = 0.0;
    for (int a = 0; a < 4; ++a) tr += M[a][a];
    for (int a = 0; a < 4; ++a) M[a][a] += 1e-14 * (tr + 1e-300);

    AmpSolve out;
    double A[4][5];
    for (int a = 0; a < 4; ++a) {
        for (int b = 0; b < 4; ++b) A[a][b] = M[a][b];
        A[a][4] = rhs[a];
    }
    for (int col = 0; col < 4; ++col) {
        int piv = col;
        for (int rix = col + 1; rix < 4; ++rix)
            if (std::abs(A[rix][col]) > std::abs(A[piv][col])) piv = rix;
        if (std::abs(A[piv][col]) < 1e-300) return out;
        for (int b = 0; b < 5; ++b) std::swap(A[col][b], A[piv][b]);
        for (int rix = 0; rix < 4; ++rix) {
            if (rix == col) continue;
            const double f = A[rix][col] / A[col][col];
            for (int b = col; b < 5; ++b) A[rix][b] -= f * A[col][b];
        }
    }
    for (int a = 0; a < 4; ++a) out.u[a] = A[a][4] / A[a][a];

    out.chi2 = 0.0;
    for (std::size_t j = j0; j <= j1; ++j) {
        cplx g1, g2;
        tail_basis(sh, lam[j], g1, g2);
        const cplx model = cplx{out.u[0], out.u[1]} * g1 + cplx{out.u[2], out.u[3]} * g2;
        const double dr = (val[j].real() - model.real()) / sre[j];
        const double di = (val[j].imag() - model.imag()) / sim[j];
        out.chi2 += dr * dr + di * di;
    }
    out.ok = std::isfinite(out.chi2);
    return out;
}

// An amplitude compatible with zero leaves its power unconstrained; zero both so the
// form stays finite when extrapolated toward lambda = 0.
inline void prune_tail_params(TailParams& p, double scale) {
    if (std::abs(p.c1) <= 1e-10 * scale) {
        p.c1 = cplx{0.0, 0.0};
        p.n1 = 0.0;
    }
    if (std::abs(p.c2) <= 1e-10 * scale) {
        p.c2 = cplx{0.0, 0.0};
        p.n2 = 0.0;
    }
}

constexpr double kNLo = -1.0, kNHi = 5.0;
constexpr double kLLo = -1.6094379124341003, kLHi = 4.0943445622221004;  // ln 0.2, ln 60

inline double shape_penalty(const std::array<double, 3>& th) {
    auto pen = [](double x, double lo, double hi) {
        if (x < lo) return (lo - x) * (lo - x);
        if (x > hi) return (x - hi) * (x - hi);
        return 0.0;
    };
    return 1e4 * (pen(th[0], kNLo, kNHi) + pen(th[1], kNLo, kNHi) + pen(th[2], kLLo, kLHi));
}

inline TailShape shape_of(const std::array<double, 3>& th) {
    TailShape sh;
    sh.n1 = std::clamp(th[0], kNLo, kNHi);
    sh.n2 = std::clamp(th[1], kNLo, kNHi);
    sh.lambda0 = std::exp(std::clamp(th[2], kLLo, kLHi));
    return sh;
}

// Projected Levenberg-Marquardt over the three shape parameters with the amplitudes
// re-solved at every evaluation; polishes the simplex result to machine precision.
inline std::array<double, 3> lm_polish(
    const std::function<double(const std::array<double, 3>&)>& chi2_of,
    std::array<double, 3> th, int iters) {
    auto clampth = [](std::array<double, 3> t) {
        t[0] = std::clamp(t[0], kNLo, kNHi);
        t[1] = std::clamp(t[1], kNLo, kNHi);
        t[2] = std::clamp(t[2], kLLo, kLHi);
        return t;
    };
    th = clampth(th);
    double f0 = chi2_of(th);
    double mu = 1e-3;
    for (int it = 0; it < iters; ++it) {
        double g[3], H[3][3] = {};
        const double h = 1e-6;
        double fp[3], fm[3];
        for (int a = 0; a < 3; ++a) {
            std::array<double, 3> tp = th, tm = th;
            tp[a] += h;
            tm[a] -= h;
            fp[a] = chi2_of(tp);
            fm[a] = chi2_of(tm);
            g[a] = (fp[a] - fm[a]) / (2.0 * h);
            H[a][a] = std::max((fp[a] - 2.0 * f0 + fm[a]) / (h * h), 1e-12);
        }
        for (int a = 0; a < 3; ++a)
            for (int b = a + 1; b < 3; ++b) {
                std::array<double, 3> tpp = th;
                tpp[a] += h;
                tpp[b] += h;
                const double fab = chi2_of(tpp);
                H[a][b] = H[b][a] =
                    (fab - fp[a] - fp[b] + f0) / (h * h);
            }
        bool moved = false;
        for (int tries = 0; tries < 8 && !moved; ++tries) {
            double A[3][4];
            for (int a = 0; a < 3; ++a) {
                for (int b = 0; b < 3; ++b) A[a][b] = H[a][b];
                A[a][a] += mu * (std::abs(H[a][a]) + 1e-12);
                A[a][3] = -g[a];
            }
            for (int col = 0; col < 3; ++col) {
                int piv = col;
                for (int rix = col + 1; rix < 3; ++rix)
                    if (std::abs(A[rix][col]) > std::abs(A[piv][col])) piv = rix;
                if (std::abs(A[piv][col]) < 1e-300) break;
                for (int b = 0; b < 4; ++b) std::swap(A[col][b], A[piv][b]);
                for (int rix = 0; rix < 3; ++rix) {
                    if (rix == col) continue;
                    const double f = A[rix][col] / A[col][col];
                    for (int b = col; b < 4; ++b) A[rix][b] -= f * A[col][b];
                }
            }
            std::array<double, 3> cand = th;
            for (int a = 0; a < 3; ++a)
                cand[a] += std::abs(A[a][a]) > 1e-300 ? A[a][3] / A[a][a] : 0.0;
            cand = clampth(cand);
            const double fc = chi2_of(cand);
            if (fc < f0) {
                th = cand;
                f0 = fc;
                mu = std::max(mu * 0.3, 1e-12);
                moved = true;
            } else {
                mu *= 10.0;
            }
        }
        if (!moved) break;
        if (f0 < 1e-28) break;
    }
    return th;
}

}  // namespace detail

// Joint real+imaginary least-squares fit of the asymptotic form over a sliding window;
// the window minimizing chi^2/dof wins. lambda0 positivity is kept by fitting ln(lambda0).
inline AsymptoticFitParams fit_asymptotic_tail(const PhiSeries& s, const CsConfig& cfg) {
    const detail::SeriesStats st = detail::series_stats(s.replicas);
    const std::size_t N = s.lambdas.size();

    std::size_t first_fit = N;
    for (std::size_t i = 0; i < N; ++i)
        if (s.lambdas[i] > 0.0 && s.lambdas[i] >= cfg.lambda_min_fit) {
            first_fit = i;
            break;
        }
    if (first_fit == N ||
        N - first_fit < static_cast<std::size_t>(cfg.min_tail_points))
        raise_runtime("InsufficientTail",
                      "only " + std::to_string(N - std::min(first_fit, N)) +
                          " points at lambda >= " + std::to_string(cfg.lambda_min_fit) +
                          ", need " + std::to_string(cfg.min_tail_points));

    const std::size_t last = N - 1;
    auto chi2_for = [&](const std::array<double, 3>& th, std::size_t j0,
                        const std::vector<cplx>& vals) {
        const detail::AmpSolve amp = detail::solve_amplitudes(
            detail::shape_of(th), s.lambdas, vals, st.sig_re, st.sig_im, j0, last);
        return amp.chi2 + detail::shape_penalty(th);
    };

    auto fit_window = [&](std::size_t j0, const std::vector<cplx>& vals,
                          std::array<double, 3>* seed) {
        std::array<double, 3> best{0.0, 0.0, std::log(8.0)};
        double best_chi2 = std::numeric_limits<double>::infinity();
        auto consider = [&](std::array<double, 3> start, double step, int nm_iters) {
            const std::function<double(const std::vector<double>&)> fnm =
                [&](const std::vector<double>& x) {
                    return chi2_for({x[0], x[1], x[2]}, j0, vals);
                };
            const std::vector<double> r =
                nelder_mead(fnm, {start[0], start[1], start[2]}, step, nm_iters);
            std::array<double, 3> th{r[0], r[1], r[2]};
            th = detail::lm_polish(
                [&](const std::array<double, 3>& t) { return chi2_for(t, j0, vals); }, th, 15);
            const double c = chi2_for(th, j0, vals);
            if (c < best_chi2) {
                best_chi2 = c;
                best = th;
            }
        };
        if (seed) {
            consider(*seed, 0.05, 60);
        } else {
            for (double n1s : {0.0, 1.0, 2.0})
                for (double n2s : {0.0, 1.0, 2.0})
                    for (double l0 : {2.0, 8.0}) consider({n1s, n2s, std::log(l0)}, 0.3, 220);
        }
        return std::pair<std::array<double, 3>, double>{best, best_chi2};
    };

    std::size_t sel_j0 = N;
    std::array<double, 3> sel_th{};
    double sel_chi2_dof = std::numeric_limits<double>::infinity(), sel_chi2 = 0.0;
    for (std::size_t j0 = first_fit;
         last + 1 - j0 >= static_cast<std::size_t>(cfg.min_tail_points); ++j0) {
        const auto [th, chi2] = fit_window(j0, st.central, nullptr);
        const double dof = std::max(1.0, 2.0 * static_cast<double>(last + 1 - j0) - 7.0);
        const double cd = chi2 / dof;
        if (std::isfinite(cd) && cd < sel_chi2_dof) {
            sel_chi2_dof = cd;
            sel_chi2 = chi2;
            sel_th = th;
            sel_j0 = j0;
        }
    }
    if (sel_j0 == N || !std::isfinite(sel_chi2))
        raise_runtime("FitDidNotConverge", "no tail window produced a finite fit");

    AsymptoticFitParams out;
    const detail::TailShape sh = detail::shape_of(sel_th);
    const detail::AmpSolve amp = detail::solve_amplitudes(sh, s.lambdas, st.central, st.sig_re,
                                                          st.sig_im, sel_j0, last);
    if (!amp.ok) raise_runtime("FitDidNotConverge", "amplitude solve degenerated");
    out.central.c1 = cplx{amp.u[0], amp.u[1]};
    out.central.c2 = cplx{amp.u[2], amp.u[3]};
    out.central.n1 = sh.n1;
    out.central.n2 = sh.n2;
    out.central.lambda0 = sh.lambda0;
    detail::prune_tail_params(out.central, st.scale);
    out.window_lo = s.lambdas[sel_j0];
    out.window_hi = s.lambdas[last];
    out.chi2_dof = sel_chi2_dof;

    const std::size_t R = s.replicas.size();
    out.replicas.resize(R);
    for (std::size_t r = 0; r < R; ++r) {
        std::array<double, 3> seed = sel_th;
        const auto [th, chi2] = fit_window(sel_j0, s.replicas[r], &seed);
        (void)chi2;
        const detail::TailShape shr = detail::shape_of(th);
        const detail::AmpSolve ar = detail::solve_amplitudes(
            shr, s.lambdas, s.replicas[r], st.sig_re, st.sig_im, sel_j0, last);
        out.replicas[r].c1 = cplx{ar.u[0], ar.u[1]};
        out.replicas[r].c2 = cplx{ar.u[2], ar.u[3]};
        out.replicas[r].n1 = shr.n1;
        out.replicas[r].n2 = shr.n2;
        out.replicas[r].lambda0 = shr.lambda0;
        detail::prune_tail_params(out.replicas[r], st.scale);
    }

    out.breakdown_point = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < N; ++i) {
        if (!(s.lambdas[i] > 0.0)) continue;
        const double mag = std::abs(st.central[i]);
        const double sig = std::hypot(st.sig_re[i], st.sig_im[i]);
        if (sig > cfg.breakdown_rel * (mag + 1e-300)) {
            out.breakdown_point = s.lambdas[i];
            break;
        }
    }

    // Noiseless shortcut: when the fitted form reproduces every data point to numerical
    // precision, the analytic form is used everywhere in the continuation.
    bool exact_everywhere = true;
    const double tol = 1e-9 * (st.scale + 1e-300);
    for (std::size_t i = 0; i < N && exact_everywhere; ++i)
        exact_everywhere = std::abs(st.central[i] - tail_eval(out.central, s.lambdas[i])) <= tol;
    out.replace_from = exact_everywhere ? 0.0 : out.breakdown_point;
    return out;
}

}  // namespace pm::cs

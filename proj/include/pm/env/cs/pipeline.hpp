#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <limits>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "pm/env/cs/fitting.hpp"
#include "pm/env/cs/synthetic.hpp"
#include "pm/env/cs/types.hpp"
#include "pm/errors.hpp"
#include "pm/stats.hpp"

namespace pm::cs {

namespace detail {

// Natural cubic spline second derivatives (Thomas solve, complex values).
inline std::vector<cplx> spline_m(const std::vector<double>& x, const std::vector<cplx>& y) {
    const std::size_t n = x.size();
    std::vector<cplx> m(n, cplx{0.0, 0.0});
    if (n < 3) return m;
    std::vector<double> b(n, 0.0), c(n, 0.0);
    std::vector<cplx> d(n, cplx{0.0, 0.0});
    std::vector<double> a(n, 0.0);
    b[0] = b[n - 1] = 1.0;
    for (std::size_t i = 1; i + 1 < n; ++i) {
        const double h0 = x[i] - x[i - 1], h1 = x[i + 1] - x[i];
        a[i] = h0;
        b[i] = 2.0 * (h0 + h1);
        c[i] = h1;
        d[i] = 6.0 * ((y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0);
    }
    for (std::size_t i = 1; i < n; ++i) {
        const double f = a[i] / b[i - 1];
        b[i] -= f * c[i - 1];
        d[i] -= f * d[i - 1];
    }
    m[n - 1] = d[n - 1] / b[n - 1];
    for (std::size_t i = n - 1; i-- > 0;) m[i] = (d[i] - c[i] * m[i + 1]) / b[i];
    return m;
}

inline cplx spline_eval(const std::vector<double>& x, const std::vector<cplx>& y,
                        const std::vector<cplx>& m, double t) {
    std::size_t hi = 1;
    while (hi + 1 < x.size() && x[hi] < t) ++hi;
    const double h = x[hi] - x[hi - 1];
    if (!(h > 0.0)) return y[hi];
    const double A = (x[hi] - t) / h;
    const double B = 1.0 - A;
    return A * y[hi - 1] + B * y[hi] +
           ((A * A * A - A) * m[hi - 1] + (B * B * B - B) * m[hi]) * (h * h) / 6.0;
}

}  // namespace detail

// Stage 1: R(z,b;t) = C_nl/C_loc per replica, then windowed plateau fits.
inline BareMatrixElement ratio_and_fit(const CorrelatorSet& s, const CsConfig& cfg) {
    validate(s);
    if (s.T < 8) raise_config("MissingField", "ratio fits need at least 8 time slices");
    if (s.R < 20) raise_config("MissingField", "ratio fits need at least 20 replicas");

    BareMatrixElement out;
    out.R = s.R;
    for (std::size_t m = 0; m < s.momenta.size(); ++m)
        for (std::size_t zi = 0; zi < s.nz(); ++zi) {
            std::vector<std::vector<cplx>> ratio(s.R, std::vector<cplx>(s.T));
            for (int r = 0; r < s.R; ++r)
                for (int t = 0; t < s.T; ++t) ratio[r][t] = s.nl(m, zi, r, t) / s.loc(m, r, t);
            try {
                RatioFit fit = fit_ratio_series(ratio, cfg.chi2dof_max);
                BareEntry e;
                e.z = s.zs[zi];
                e.b = s.b;
                e.p = s.momenta[m];
                e.replicas = std::move(fit.phi);
                e.diag = fit.diag;
                out.entries.push_back(std::move(e));
            } catch (const Error& err) {
                if (err.kind() != "NoAcceptableWindow") throw;
                raise_runtime("NoAcceptableWindow",
                              "z=" + std::to_string(s.zs[zi]) + " p=" +
                                  std::to_string(s.momenta[m]) + ": " + err.what());
            }
        }
    return out;
}

// Stage 2: divide by sqrt(Z_E(|z|+2L, b)) per replica.
inline BareMatrixElement renormalize(const BareMatrixElement& bare, const WilsonLoopTable& zE) {
    BareMatrixElement out;
    out.R = bare.R;
    for (const BareEntry& e : bare.entries) {
        const int length = std::abs(e.z) + 2 * zE.staple_L;
        const double z_e = zE.lookup(length, e.b);
        BareEntry n = e;
        const double scale = 1.0 / std::sqrt(z_e);
        for (cplx& v : n.replicas) v *= scale;
        out.entries.push_back(std::move(n));
    }
    return out;
}

// Collects one momentum's renormalized values onto the lambda axis, Hermitian-averaging
// the +z and -z entries.
inline PhiSeries phi_series(const BareMatrixElement& ren, const CsConfig& cfg, int p) {
    PhiSeries out;
    out.b = cfg.b;
    out.p = p;
    std::vector<const BareEntry*> pos;
    for (const BareEntry& e : ren.entries)
        if (e.p == p && e.z >= 0) pos.push_back(&e);
    std::sort(pos.begin(), pos.end(),
              [](const BareEntry* a, const BareEntry* b) { return a->z < b->z; });
    if (pos.empty()) raise_config("MissingField", "no entries at momentum " + std::to_string(p));
    const std::size_t R = pos[0]->replicas.size();
    out.replicas.assign(R, {});
    for (const BareEntry* e : pos) {
        const BareEntry* neg = ren.find(-e->z, e->b, p);
        out.lambdas.push_back(lambda_of(e->z, p, cfg.lattice_L));
        for (std::size_t r = 0; r < R; ++r) {
            cplx v = e->replicas[r];
            if (neg != nullptr && e->z != 0) v = 0.5 * (v + std::conj(neg->replicas[r]));
            out.replicas[r].push_back(v);
        }
    }
    return out;
}

// Stage 3 output assembly: data below replace_from, fitted form at and above it, mirrored
// to negative lambda by Hermiticity, on a uniform grid cut where the form drops below
// cut_rel of the wavefunction peak.
inline ContinuedPhi continue_phi(const PhiSeries& s, const AsymptoticFitParams& fit,
                                 const CsConfig& cfg) {
    const detail::SeriesStats st = detail::series_stats(s.replicas);
    const double peak = st.scale + 1e-300;
    const double lam_max_data = s.lambdas.back();
    const double dl = cfg.dlambda;

    long k_cut = static_cast<long>(std::ceil(std::min(fit.replace_from, lam_max_data) / dl));
    const long k_cap = k_cut + static_cast<long>(std::ceil(60.0 * fit.central.lambda0 / dl)) + 1;
    while (k_cut < k_cap && std::abs(tail_eval(fit.central, k_cut * dl)) >= cfg.cut_rel * peak)
        ++k_cut;

    ContinuedPhi out;
    out.b = s.b;
    out.p = s.p;
    out.dlambda = dl;
    for (long k = -k_cut; k <= k_cut; ++k) out.lambdas.push_back(k * dl);

    const std::size_t R = s.replicas.size();
    out.replicas.assign(R, std::vector<cplx>(out.lambdas.size()));
    for (std::size_t r = 0; r < R; ++r) {
        const std::vector<cplx> sm = detail::spline_m(s.lambdas, s.replicas[r]);
        for (std::size_t k = 0; k < out.lambdas.size(); ++k) {
            const double lam = out.lambdas[k];
            const double al = std::abs(lam);
            cplx v;
            if (al < fit.replace_from && al <= lam_max_data)
                v = detail::spline_eval(s.lambdas, s.replicas[r], sm, al);
            else
                v = tail_eval(fit.replicas.empty() ? fit.central : fit.replicas[r], al);
            out.replicas[r][k] = lam < 0.0 ? std::conj(v) : v;
        }
    }
    return out;
}

// Stage 4: trapezoidal integral dl/(2 pi) e^{i(x-1/2)l} phi(l) on the x grid, per replica.
inline FxSeries fourier_to_x(const ContinuedPhi& phi, const CsConfig& cfg) {
    const std::size_t N = phi.lambdas.size();
    if (N < 3) raise_config("MissingField", "continued wavefunction grid is too short");
    const double dl = phi.lambdas[1] - phi.lambdas[0];
    for (std::size_t j = 1; j < N; ++j)
        if (std::abs(phi.lambdas[j] - phi.lambdas[j - 1] - dl) > 1e-9 * (1.0 + std::abs(dl)))
            raise_config("MissingField", "lambda grid is not uniform");
    if (std::abs(phi.lambdas.front() + phi.lambdas.back()) > 1e-9)
        raise_config("MissingField", "lambda grid is not symmetric");

    const double xw = std::max(std::abs(cfg.x_min - 0.5), std::abs(cfg.x_max - 0.5));
    if (dl * xw > M_PI / 2.0)
        raise_runtime("GridTooCoarse", "lambda step " + std::to_string(dl) +
                                           " cannot resolve x offsets up to " +
                                           std::to_string(xw));

    FxSeries out;
    out.b = phi.b;
    out.p = phi.p;
    const int nx = static_cast<int>(std::lround((cfg.x_max - cfg.x_min) / cfg.dx)) + 1;
    for (int k = 0; k < nx; ++k) out.xs.push_back(cfg.x_min + k * cfg.dx);

    const std::size_t R = phi.replicas.size();
    out.replicas.assign(R, std::vector<cplx>(out.xs.size()));
    std::vector<cplx> phase(N);
    for (std::size_t k = 0; k < out.xs.size(); ++k) {
        const double om = out.xs[k] - 0.5;
        const cplx rot = std::polar(1.0, om * dl);
        cplx cur = std::polar(1.0, om * phi.lambdas.front());
        for (std::size_t j = 0; j < N; ++j) {
            const double w = (j == 0 || j + 1 == N) ? 0.5 * dl : dl;
            phase[j] = cur * (w / (2.0 * M_PI));
            cur *= rot;
        }
        for (std::size_t r = 0; r < R; ++r) {
            cplx acc{0.0, 0.0};
            const auto& vals = phi.replicas[r];
            for (std::size_t j = 0; j < N; ++j) acc += phase[j] * vals[j];
            out.replicas[r][k] = acc;
        }
    }
    return out;
}

// Stage 5: K(x) = (log f1 - log f2)/(log P1 - log P2) per replica, then an
// inverse-covariance weighted plateau average over the central x window.
inline CsKernelResult extract_cs_kernel(const FxSeries& f1, const FxSeries& f2,
                                        const CsConfig& cfg) {
    if (f1.p == f2.p)
        raise_config("EqualMomenta", "kernel extraction needs two distinct momenta");
    if (f1.xs.size() != f2.xs.size() || f1.replicas.size() != f2.replicas.size())
        raise_config("MissingField", "momentum pair disagrees on grid or replica count");
    for (std::size_t k = 0; k < f1.xs.size(); ++k)
        if (std::abs(f1.xs[k] - f2.xs[k]) > 1e-12)
            raise_config("MissingField", "momentum pair disagrees on the x grid");

    CsKernelResult out;
    out.b = f1.b;
    out.p1 = f1.p;
    out.p2 = f2.p;
    out.xs = f1.xs;
    out.plateau_lo = cfg.plateau_lo;
    out.plateau_hi = cfg.plateau_hi;

    const double denom = std::log(static_cast<double>(f1.p)) -
                         std::log(static_cast<double>(f2.p));
    const std::size_t R = f1.replicas.size();
    const std::size_t NX = f1.xs.size();
    out.K_by_x.assign(R, std::vector<cplx>(NX));
    for (std::size_t r = 0; r < R; ++r)
        for (std::size_t k = 0; k < NX; ++k)
            out.K_by_x[r][k] =
                (std::log(f1.replicas[r][k]) - std::log(f2.replicas[r][k])) / denom;
    out.K_central.resize(NX);
    for (std::size_t k = 0; k < NX; ++k) {
        cplx s{0.0, 0.0};
        for (std::size_t r = 0; r < R; ++r) s += out.K_by_x[r][k];
        out.K_central[k] = s / static_cast<double>(R);
    }

    std::vector<std::size_t> pk;
    for (std::size_t k = 0; k < NX; ++k)
        if (out.xs[k] >= cfg.plateau_lo - 1e-12 && out.xs[k] <= cfg.plateau_hi + 1e-12)
            pk.push_back(k);
    if (pk.size() < 2) raise_config("MissingField", "plateau window contains fewer than 2 points");

    for (std::size_t k : pk) {
        bool fin = std::isfinite(out.K_central[k].real()) &&
                   std::isfinite(out.K_central[k].imag());
        for (std::size_t r = 0; r < R && fin; ++r)
            fin = std::isfinite(out.K_by_x[r][k].real()) &&
                  std::isfinite(out.K_by_x[r][k].imag());
        if (!fin)
            raise_runtime("PlateauRejected", "kernel is not finite at x=" +
                                                 std::to_string(out.xs[k]));
    }

    const std::size_t np = pk.size();
    std::vector<double> kc(np), kim(np);
    double kscale = 0.0;
    for (std::size_t j = 0; j < np; ++j) {
        kc[j] = out.K_central[pk[j]].real();
        kim[j] = out.K_central[pk[j]].imag();
        kscale = std::max(kscale, std::abs(kc[j]));
    }
    std::vector<double> cov(np * np, 0.0);
    const double jkf = static_cast<double>(R - 1) / static_cast<double>(R);
    for (std::size_t r = 0; r < R; ++r)
        for (std::size_t j = 0; j < np; ++j) {
            const double dj = out.K_by_x[r][pk[j]].real() - kc[j];
            for (std::size_t l = j; l < np; ++l)
                cov[j * np + l] += jkf * dj * (out.K_by_x[r][pk[l]].real() - kc[l]);
        }
    for (std::size_t j = 0; j < np; ++j)
        for (std::size_t l = 0; l < j; ++l) cov[j * np + l] = cov[l * np + j];

    // Shrink toward the diagonal: with as many plateau points as replicas the raw
    // sample covariance is too noisy to invert.
    const double shrink = std::min(1.0, static_cast<double>(np) / static_cast<double>(R));
    for (std::size_t j = 0; j < np; ++j)
        for (std::size_t l = 0; l < np; ++l)
            if (j != l) cov[j * np + l] *= 1.0 - shrink;

    double max_diag = 0.0;
    for (std::size_t j = 0; j < np; ++j) max_diag = std::max(max_diag, cov[j * np + j]);

    std::vector<double> w(np, 1.0 / static_cast<double>(np));
    if (max_diag < 1e-24 * (kscale * kscale + 1e-300)) {
        // degenerate spread: replicas coincide; a flat plateau is still required
        double m = 0.0;
        for (double v : kc) m += v / static_cast<double>(np);
        double dev = 0.0;
        for (double v : kc) dev = std::max(dev, std::abs(v - m));
        if (dev > 1e-6 * (std::abs(m) + 1e-3))
            raise_runtime("PlateauRejected",
                          "zero-variance kernel varies across the plateau window by " +
                              std::to_string(dev));
        out.K_final = m;
        out.K_final_err = 0.0;
        out.plateau_chi2_dof = 0.0;
    } else {
        const SymEig eig = jacobi_eigen_sym(cov, np);
        double max_ev = 0.0;
        for (double v : eig.values) max_ev = std::max(max_ev, v);
        const double tol = 1e-10 * max_ev;
        std::vector<double> pinv(np * np, 0.0);
        std::size_t rank = 0;
        for (std::size_t e = 0; e < np; ++e) {
            if (!(eig.values[e] > tol)) continue;
            ++rank;
            const double inv = 1.0 / eig.values[e];
            for (std::size_t j = 0; j < np; ++j)
                for (std::size_t l = 0; l < np; ++l)
                    pinv[j * np + l] +=
                        inv * eig.vectors[j * np + e] * eig.vectors[l * np + e];
        }
        double ssum = 0.0;
        for (std::size_t j = 0; j < np; ++j) {
            w[j] = 0.0;
            for (std::size_t l = 0; l < np; ++l) w[j] += pinv[j * np + l];
            ssum += w[j];
        }
        if (!(ssum > 0.0)) {
            for (std::size_t j = 0; j < np; ++j) w[j] = 1.0 / static_cast<double>(np);
        } else {
            for (std::size_t j = 0; j < np; ++j) w[j] /= ssum;
        }
        out.K_final = 0.0;
        for (std::size_t j = 0; j < np; ++j) out.K_final += w[j] * kc[j];
        std::vector<double> reps(R, 0.0);
        for (std::size_t r = 0; r < R; ++r)
            for (std::size_t j = 0; j < np; ++j)
                reps[r] += w[j] * out.K_by_x[r][pk[j]].real();
        out.K_final_err = jk_sigma(reps);

        double chi2 = 0.0;
        for (std::size_t j = 0; j < np; ++j)
            for (std::size_t l = 0; l < np; ++l)
                chi2 += (kc[j] - out.K_final) * pinv[j * np + l] * (kc[l] - out.K_final);
        const double dof = std::max(1.0, static_cast<double>(rank) - 1.0);
        out.plateau_chi2_dof = chi2 / dof;
        if (out.plateau_chi2_dof > cfg.chi2dof_max)
            raise_runtime("PlateauRejected", "plateau constant fit chi2/dof " +
                                                 std::to_string(out.plateau_chi2_dof) +
                                                 " exceeds " +
                                                 std::to_string(cfg.chi2dof_max));
    }
    out.K_final_im = 0.0;
    for (std::size_t j = 0; j < np; ++j) out.K_final_im += w[j] * kim[j];
    return out;
}

struct CsPipelineResult {
    CorrelatorSet correlators;
    WilsonLoopTable zE;
    TruthRecord truth;
    BareMatrixElement bare;
    BareMatrixElement renorm;
    std::vector<PhiSeries> series;
    std::vector<AsymptoticFitParams> tails;
    std::vector<ContinuedPhi> continued;
    std::vector<FxSeries> fx;
    CsKernelResult kernel;
};

// Full synthetic round trip: generate, fit, renormalize, continue, transform, extract.
inline CsPipelineResult run_cs_pipeline(const CsConfig& cfg) {
    validate(cfg);
    CsPipelineResult out;
    SyntheticEnsemble ens = generate_synthetic_ensemble(cfg);
    out.correlators = std::move(ens.correlators);
    out.zE = std::move(ens.zE);
    out.truth = ens.truth;

    out.bare = ratio_and_fit(out.correlators, cfg);
    out.renorm = renormalize(out.bare, out.zE);
    for (std::size_t m = 0; m < 2; ++m) {
        const int p = cfg.momenta[m];
        out.series.push_back(phi_series(out.renorm, cfg, p));
        out.tails.push_back(fit_asymptotic_tail(out.series.back(), cfg));
        out.continued.push_back(continue_phi(out.series.back(), out.tails.back(), cfg));
        out.fx.push_back(fourier_to_x(out.continued.back(), cfg));
    }
    out.kernel = extract_cs_kernel(out.fx[0], out.fx[1], cfg);
    return out;
}

inline std::string bare_csv(const BareMatrixElement& m) {
    std::ostringstream os;
    os.precision(17);
    os << "z,b,p,re,im,sig_re,sig_im,t0,t1,chi2_dof,model\n";
    for (const BareEntry& e : m.entries) {
        std::vector<double> re, im;
        for (const cplx& v : e.replicas) {
            re.push_back(v.real());
            im.push_back(v.imag());
        }
        os << e.z << "," << e.b << "," << e.p << "," << jk_mean(re) << "," << jk_mean(im)
           << "," << jk_sigma(re) << "," << jk_sigma(im) << "," << e.diag.t0 << ","
           << e.diag.t1 << "," << e.diag.chi2_dof << "," << e.diag.model << "\n";
    }
    return os.str();
}

inline std::string tail_csv(const AsymptoticFitParams& t, int b, int p) {
    std::ostringstream os;
    os.precision(17);
    os << "b,p,c1_re,c1_im,c2_re,c2_im,n1,n2,lambda0,window_lo,window_hi,breakdown,"
          "replace_from,chi2_dof\n";
    os << b << "," << p << "," << t.central.c1.real() << "," << t.central.c1.imag() << ","
       << t.central.c2.real() << "," << t.central.c2.imag() << "," << t.central.n1 << ","
       << t.central.n2 << "," << t.central.lambda0 << "," << t.window_lo << ","
       << t.window_hi << "," << t.breakdown_point << "," << t.replace_from << ","
       << t.chi2_dof << "\n";
    return os.str();
}

inline std::string fx_csv(const FxSeries& f) {
    std::ostringstream os;
    os.precision(17);
    os << "x,b,p,re,im,sig_re,sig_im\n";
    const std::size_t R = f.replicas.size();
    std::vector<double> re(R), im(R);
    for (std::size_t k = 0; k < f.xs.size(); ++k) {
        for (std::size_t r = 0; r < R; ++r) {
            re[r] = f.replicas[r][k].real();
            im[r] = f.replicas[r][k].imag();
        }
        os << f.xs[k] << "," << f.b << "," << f.p << "," << jk_mean(re) << "," << jk_mean(im)
           << "," << jk_sigma(re) << "," << jk_sigma(im) << "\n";
    }
    return os.str();
}

inline std::string kernel_csv(const CsKernelResult& k) {
    std::ostringstream os;
    os.precision(17);
    os << "x,K_re,K_im,sig\n";
    const std::size_t R = k.K_by_x.size();
    std::vector<double> re(R);
    for (std::size_t i = 0; i < k.xs.size(); ++i) {
        for (std::size_t r = 0; r < R; ++r) re[r] = k.K_by_x[r][i].real();
        os << k.xs[i] << "," << k.K_central[i].real() << "," << k.K_central[i].imag() << ","
           << jk_sigma(re) << "\n";
    }
    return os.str();
}

inline std::string kernel_report(const CsPipelineResult& r) {
    std::ostringstream os;
    os.precision(10);
    os << "collins-soper kernel extraction\n";
    os << "  momenta (lattice units): P1=" << r.kernel.p1 << " P2=" << r.kernel.p2 << "\n";
    os << "  momenta (GeV): ";
    for (std::size_t i = 0; i < r.correlators.momenta_gev.size(); ++i)
        os << (i ? ", " : "") << r.correlators.momenta_gev[i];
    os << "\n  b (lattice units): " << r.kernel.b << "\n";
    os << "  plateau window: [" << r.kernel.plateau_lo << ", " << r.kernel.plateau_hi << "]\n";
    os << "  K_final = " << r.kernel.K_final << " +/- " << r.kernel.K_final_err
       << " (statistical only)\n";
    os << "  Im K diagnostic = " << r.kernel.K_final_im << "\n";
    os << "  plateau chi2/dof = " << r.kernel.plateau_chi2_dof << "\n";
    os << "  injected kernel = " << r.truth.kappa0 << "\n";
    os << "  reference matrix elements (renormalized):\n";
    for (int z : {0, 2})
        for (int p : {r.kernel.p1, r.kernel.p2})
            if (const BareEntry* e = r.renorm.find(z, r.kernel.b, p)) {
                std::vector<double> re, im;
                for (const cplx& v : e->replicas) {
                    re.push_back(v.real());
                    im.push_back(v.imag());
                }
                os << "    z=" << z << " p=" << p << ": " << jk_mean(re) << " +/- "
                   << jk_sigma(re) << " (re), " << jk_mean(im) << " +/- " << jk_sigma(im)
                   << " (im), " << e->diag.model << " fit chi2/dof " << e->diag.chi2_dof
                   << "\n";
            }
    return os.str();
}

}  // namespace pm::cs

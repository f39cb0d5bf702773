#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "pm/env/qmc/lattice.hpp"
#include "pm/env/qmc/sse.hpp"
#include "pm/errors.hpp"
#include "pm/rng.hpp"
#include "pm/stats.hpp"

namespace pm::qmc {

namespace detail {

// Counter-based Gaussian stream (Box-Muller on splitmix64 output).
class GaussStream {
  public:
    explicit GaussStream(std::uint64_t seed) : ctr_(seed) {}
    double operator()() {
        const double u1 = std::max(to_unit(splitmix64(ctr_++)), 1e-300);
        const double u2 = to_unit(splitmix64(ctr_++));
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
    }

  private:
    static double to_unit(std::uint64_t x) { return static_cast<double>(x >> 11) * 0x1.0p-53; }
    std::uint64_t ctr_;
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Chemical-potential tuning (Robbins-Monro on the density)

struct TuneOptions {
    double tol = 5e-4;       // |<n> - target| convergence threshold
    double alpha0 = 0.5;     // step sequence alpha_k = alpha0 / (k + 1)
    double kappa_min = 1e-3; // compressibility floor near the Mott tip
    double max_step = 0.2;   // hard cap on a single mu update
    int max_iters = 40;
    int therm_sweeps = 400;  // per-iteration thermalization (warm start)
    int meas_sweeps = 2000;
    int bins = 10;
};

struct TuneStep {
    int k = 0;
    double mu = 0.0;
    double n_avg = 0.0;
    double n_err = 0.0;
    double kappa = 0.0;
    bool floored = false;  // step used kappa_min instead of the measured kappa
};

struct TuneResult {
    double mu = 0.0;
    bool converged = false;
    int iterations = 0;  // number of mu updates performed
    std::string error_kind;  // "TuningDidNotConverge" when the cap was reached
    std::vector<TuneStep> trace;
    std::uint64_t seed = 0;
};

// Single Robbins-Monro update; exposed for direct verification of the
// clamped step. k counts previous updates (0-based).
inline std::pair<double, bool> next_mu(double mu, double n_avg, double kappa, int k,
                                       double target, const TuneOptions& opt) {
    const bool floored = kappa < opt.kappa_min;
    const double keff = std::max(kappa, opt.kappa_min);
    const double alpha = opt.alpha0 / static_cast<double>(k + 1);
    double step = -alpha * (n_avg - target) / keff;
    step = std::clamp(step, -opt.max_step, opt.max_step);
    return {mu + step, floored};
}

inline TuneResult tune_mu(const SseConfig& cfg, const UnionJackLattice& lat,
                          double target_density = 1.0, const TuneOptions& opt = TuneOptions{}) {
    validate_config(cfg);
    if (!(cfg.mu > 0.0 && cfg.mu < cfg.U))
        raise_config("MuOutOfRange", "initial mu must lie in (0, U)");
    if (opt.max_iters < 1 || opt.meas_sweeps < opt.bins || opt.bins < 10)
        raise_config("InsufficientBins", "tuning chain needs at least 10 bins per iteration");

    TuneResult out;
    out.seed = cfg.seed;
    SseConfig run = cfg;
    run.measurement_sweeps = opt.meas_sweeps - opt.meas_sweeps % opt.bins;
    run.bins = opt.bins;
    SseState st = init_state(run, lat);
    for (int s = 0; s < cfg.thermalization_sweeps; ++s) sse_sweep(st, run, lat);

    double best_mu = run.mu;
    double best_dev = std::numeric_limits<double>::infinity();
    for (int k = 0; k < opt.max_iters; ++k) {
        for (int s = 0; s < opt.therm_sweeps; ++s) sse_sweep(st, run, lat);
        const Measurements m = measure(st, run, lat);
        TuneStep step;
        step.k = k;
        step.mu = run.mu;
        step.n_avg = m.n_avg;
        step.n_err = m.n_avg_err;
        step.kappa = m.kappa;
        const double dev = std::abs(m.n_avg - target_density);
        if (dev < best_dev) {
            best_dev = dev;
            best_mu = run.mu;
        }
        if (dev <= opt.tol) {
            out.trace.push_back(step);
            out.mu = run.mu;
            out.converged = true;
            out.iterations = k;
            return out;
        }
        const auto [mu_next, floored] = next_mu(run.mu, m.n_avg, m.kappa, k, target_density, opt);
        step.floored = floored;
        out.trace.push_back(step);
        run.mu = mu_next;
    }
    out.mu = best_mu;
    out.converged = false;
    out.iterations = opt.max_iters;
    out.error_kind = "TuningDidNotConverge";
    return out;
}

// ---------------------------------------------------------------------------
// Single-histogram reweighting in the hopping parameter

struct ReweightResult {
    double w2 = 0.0;
    double err = 0.0;
    double ess = 0.0;           // effective sample size (sum w)^2 / sum w^2
    double ess_fraction = 0.0;  // ess / retained samples
    std::size_t n_samples = 0;
};

// <W^2>(t') = sum W2_i (t'/t)^{K_i} / sum (t'/t)^{K_i} over per-sweep samples,
// jackknifed over bins. The configuration weight scales exactly as t^K because
// the diagonal-weight shift is t-independent.
inline ReweightResult reweight(const std::vector<std::pair<int, double>>& kw_samples,
                               double t_from, double t_to, int bins = 20,
                               double min_ess_fraction = 0.10) {
    if (!(t_from > 0.0) || !(t_to > 0.0))
        raise_config("NonpositiveHopping", "reweighting requires positive hoppings");
    if (bins < 10)
        raise_config("InsufficientBins", "need at least 10 bins, got " + std::to_string(bins));
    const std::size_t bs = kw_samples.size() / static_cast<std::size_t>(bins);
    if (bs == 0)
        raise_config("InsufficientBins", "fewer samples than bins");
    const std::size_t n = bs * static_cast<std::size_t>(bins);

    const double logr = std::log(t_to / t_from);
    int kref = kw_samples.front().first;
    for (std::size_t i = 1; i < n; ++i) {
        const int K = kw_samples[i].first;
        if (logr > 0.0 ? K > kref : K < kref) kref = K;
    }
    std::vector<double> num_bins(static_cast<std::size_t>(bins), 0.0);
    std::vector<double> den_bins(static_cast<std::size_t>(bins), 0.0);
    double sw = 0.0, sw2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double w = std::exp(static_cast<double>(kw_samples[i].first - kref) * logr);
        const std::size_t b = i / bs;
        num_bins[b] += w * kw_samples[i].second;
        den_bins[b] += w;
        sw += w;
        sw2 += w * w;
    }
    for (int b = 0; b < bins; ++b) {
        num_bins[static_cast<std::size_t>(b)] /= static_cast<double>(bs);
        den_bins[static_cast<std::size_t>(b)] /= static_cast<double>(bs);
    }
    ReweightResult out;
    out.n_samples = n;
    out.ess = sw2 > 0.0 ? sw * sw / sw2 : 0.0;
    out.ess_fraction = out.ess / static_cast<double>(n);
    if (out.ess_fraction < min_ess_fraction) {
        std::ostringstream os;
        os << "effective sample size " << out.ess_fraction * 100.0 << "% of raw is below the "
           << min_ess_fraction * 100.0 << "% trust window reweighting " << t_from << " -> "
           << t_to;
        raise_runtime("OutOfTrustWindow", os.str());
    }
    const JackknifeResult jr = jackknife_apply(
        {num_bins, den_bins},
        [](const std::vector<double>& m) { return m[0] / m[1]; });
    out.w2 = jr.value;
    out.err = jr.error;
    return out;
}

// ---------------------------------------------------------------------------
// Crossing extraction and finite-size-scaling extrapolation

struct W2Curve {
    int L = 0;
    std::vector<double> t;
    std::vector<double> w2;
    std::vector<double> err;
};

struct Crossing {
    int L1 = 0;
    int L2 = 0;
    double t_star = 0.0;
    double error = 0.0;
    int bootstrap_ok = 0;
    std::uint64_t seed = 0;
};

namespace detail {

// Root of the piecewise-linear difference curve; roots = 0 and roots >= 2 are
// reported through the counters.
inline bool locate_single_root(const std::vector<double>& t, const std::vector<double>& d,
                               double& root, int& n_roots) {
    n_roots = 0;
    root = 0.0;
    const std::size_t n = t.size();
    bool any_nonzero = false;
    for (double v : d)
        if (v != 0.0) any_nonzero = true;
    if (!any_nonzero) return false;  // identical curves: no sign change
    for (std::size_t k = 0; k < n; ++k) {
        if (d[k] == 0.0 && (k == 0 || d[k - 1] != 0.0)) {
            ++n_roots;
            root = t[k];
        }
        if (k + 1 < n && d[k] * d[k + 1] < 0.0) {
            ++n_roots;
            // bisection on the linear interpolant
            double lo = t[k], hi = t[k + 1];
            double flo = d[k];
            for (int it = 0; it < 80; ++it) {
                const double mid = 0.5 * (lo + hi);
                const double fm = d[k] + (d[k + 1] - d[k]) * (mid - t[k]) / (t[k + 1] - t[k]);
                if ((fm < 0.0) == (flo < 0.0)) {
                    lo = mid;
                    flo = fm;
                } else {
                    hi = mid;
                }
            }
            root = 0.5 * (lo + hi);
        }
    }
    return n_roots == 1;
}

}  // namespace detail

// Crossing point of two reweighted curves on a shared t-grid, with a
// parametric bootstrap over the stated point errors.
inline Crossing find_crossing(const W2Curve& a, const W2Curve& b, std::uint64_t seed = 12345,
                              int n_bootstrap = 200) {
    const W2Curve& c1 = a.L <= b.L ? a : b;
    const W2Curve& c2 = a.L <= b.L ? b : a;
    if (c1.L == c2.L) raise_config("EqualSizes", "crossing requires two distinct sizes");
    if (c1.t.size() < 2 || c1.t != c2.t)
        raise_config("MismatchedGrids", "curves must share an identical t-grid");
    if (c1.w2.size() != c1.t.size() || c2.w2.size() != c2.t.size() ||
        c1.err.size() != c1.t.size() || c2.err.size() != c2.t.size())
        raise_config("MismatchedGrids", "curve arrays must match the t-grid length");

    const std::size_t n = c1.t.size();
    std::vector<double> d(n);
    for (std::size_t k = 0; k < n; ++k) d[k] = c1.w2[k] - c2.w2[k];
    double root = 0.0;
    int n_roots = 0;
    detail::locate_single_root(c1.t, d, root, n_roots);
    if (n_roots == 0)
        raise_runtime("NoCrossing", "curve difference has no sign change in the window");
    if (n_roots > 1)
        raise_runtime("MultipleCrossings", "curve difference changes sign " +
                                               std::to_string(n_roots) + " times");

    Crossing out;
    out.L1 = c1.L;
    out.L2 = c2.L;
    out.t_star = root;
    out.seed = seed;
    detail::GaussStream g(seed);
    std::vector<double> boots;
    std::vector<double> db(n);
    for (int rep = 0; rep < n_bootstrap; ++rep) {
        for (std::size_t k = 0; k < n; ++k)
            db[k] = (c1.w2[k] + c1.err[k] * g()) - (c2.w2[k] + c2.err[k] * g());
        double r = 0.0;
        int nr = 0;
        if (detail::locate_single_root(c1.t, db, r, nr)) boots.push_back(r);
    }
    out.bootstrap_ok = static_cast<int>(boots.size());
    if (boots.size() < 2)
        raise_runtime("NoCrossing", "parametric bootstrap could not locate the crossing");
    out.error = std::sqrt(sample_variance(boots));
    return out;
}

struct CriticalPointFit {
    std::vector<Crossing> crossings;
    double nu = 0.6717;  // 3D XY correlation-length exponent
    double t_c = 0.0;
    double t_c_err = 0.0;
    double amplitude = 0.0;
    double amplitude_err = 0.0;
    double chi2 = 0.0;
    int dof = 0;
};

// Weighted least squares of t* against L_mid^{-1/nu}, L_mid = sqrt(L1 L2).
// The intercept error is pure propagation of the stated crossing errors.
inline CriticalPointFit extrapolate_fss(const std::vector<Crossing>& crossings,
                                        double nu = 0.6717) {
    if (crossings.size() < 2)
        raise_config("DegenerateFit", "need at least two crossings, got " +
                                          std::to_string(crossings.size()));
    if (!(nu > 0.0)) raise_config("NonpositiveNu", "correlation exponent must be positive");
    std::vector<double> x, y, s;
    for (const Crossing& c : crossings) {
        if (c.L1 >= c.L2)
            raise_config("UnorderedCrossing", "crossing sizes must satisfy L1 < L2");
        if (!(c.error > 0.0))
            raise_config("DegenerateFit", "crossing errors must be positive");
        const double lmid = std::sqrt(static_cast<double>(c.L1) * static_cast<double>(c.L2));
        x.push_back(std::pow(lmid, -1.0 / nu));
        y.push_back(c.t_star);
        s.push_back(c.error);
    }
    const LineFit f = wls_line(x, y, s);
    CriticalPointFit out;
    out.crossings = crossings;
    out.nu = nu;
    out.t_c = f.intercept;
    out.t_c_err = f.intercept_err;
    out.amplitude = f.slope;
    out.amplitude_err = f.slope_err;
    out.chi2 = f.chi2;
    out.dof = f.dof;
    return out;
}

// ---------------------------------------------------------------------------
// Critical-point scan: tuned chains on a t-grid per size, reweighted onto a
// shared fine grid, crossings of consecutive sizes, FSS extrapolation.

struct CriticalScanConfig {
    std::vector<int> sizes = {8, 12, 16, 20};
    double t_lo = 0.027;  // default scan window for the critical search
    double t_hi = 0.033;
    int grid_points = 4;   // simulated hoppings per size
    int fine_points = 25;  // shared reweighted evaluation grid
    std::string pattern = "full";
    double beta_aspect = 1.5;  // beta = 1.5 L
    int n_max = 4;
    int thermalization_sweeps = 4000;
    int measurement_sweeps = 40000;
    int bins = 20;
    std::uint64_t seed = 20240801;
    bool tune = true;  // Robbins-Monro density tuning before each production chain
    double mu0 = 0.4;
    TuneOptions tune_options;
    double nu = 0.6717;
};

struct SizeScan {
    int L = 0;
    double beta = 0.0;
    std::vector<double> grid_t;
    std::vector<double> grid_mu;
    std::vector<Measurements> chains;
    W2Curve curve;
};

struct CriticalScanResult {
    std::vector<SizeScan> sizes;
    std::vector<Crossing> crossings;
    bool fitted = false;  // extrapolation needs at least two crossings (three sizes)
    CriticalPointFit fit;
};

inline CriticalScanResult critical_scan(const CriticalScanConfig& sc) {
    if (sc.sizes.size() < 2)
        raise_config("DegenerateFit", "critical scan needs at least two sizes");
    for (std::size_t i = 1; i < sc.sizes.size(); ++i)
        if (sc.sizes[i] <= sc.sizes[i - 1])
            raise_config("UnorderedCrossing", "scan sizes must be strictly increasing");
    if (!(sc.t_lo > 0.0) || !(sc.t_hi > sc.t_lo))
        raise_config("NonpositiveHopping", "scan window must satisfy 0 < t_lo < t_hi");
    if (sc.grid_points < 2 || sc.fine_points < 2)
        raise_config("InsufficientBins", "scan needs at least two grid and fine points");

    std::vector<double> fine(static_cast<std::size_t>(sc.fine_points));
    for (int i = 0; i < sc.fine_points; ++i)
        fine[static_cast<std::size_t>(i)] =
            sc.t_lo + (sc.t_hi - sc.t_lo) * static_cast<double>(i) /
                          static_cast<double>(sc.fine_points - 1);

    CriticalScanResult out;
    double mu = sc.mu0;
    for (std::size_t si = 0; si < sc.sizes.size(); ++si) {
        SizeScan sz;
        sz.L = sc.sizes[si];
        sz.beta = sc.beta_aspect * sz.L;
        const UnionJackLattice lat = build_lattice(sz.L, sc.pattern);
        for (int j = 0; j < sc.grid_points; ++j) {
            SseConfig cfg;
            cfg.t = sc.t_lo + (sc.t_hi - sc.t_lo) * static_cast<double>(j) /
                                  static_cast<double>(sc.grid_points - 1);
            cfg.mu = mu;
            cfg.beta = sz.beta;
            cfg.n_max = sc.n_max;
            cfg.thermalization_sweeps = sc.thermalization_sweeps;
            cfg.measurement_sweeps = sc.measurement_sweeps;
            cfg.bins = sc.bins;
            cfg.seed = derive_seed(sc.seed, static_cast<std::uint64_t>(sz.L) * 1000 +
                                                static_cast<std::uint64_t>(j));
            if (sc.tune) {
                const TuneResult tr = tune_mu(cfg, lat, 1.0, sc.tune_options);
                mu = tr.mu;  // warm start carried across the grid and sizes
                cfg.mu = mu;
            }
            sz.grid_t.push_back(cfg.t);
            sz.grid_mu.push_back(cfg.mu);
            sz.chains.push_back(run_chain(cfg, lat));
        }
        sz.curve.L = sz.L;
        sz.curve.t = fine;
        for (double tp : fine) {
            std::size_t jn = 0;
            for (std::size_t j = 1; j < sz.grid_t.size(); ++j)
                if (std::abs(sz.grid_t[j] - tp) < std::abs(sz.grid_t[jn] - tp)) jn = j;
            const ReweightResult r =
                reweight(sz.chains[jn].kw_samples, sz.grid_t[jn], tp, sc.bins);
            sz.curve.w2.push_back(r.w2);
            sz.curve.err.push_back(r.err);
        }
        out.sizes.push_back(std::move(sz));
    }
    for (std::size_t i = 0; i + 1 < out.sizes.size(); ++i)
        out.crossings.push_back(find_crossing(out.sizes[i].curve, out.sizes[i + 1].curve,
                                              derive_seed(sc.seed, 777 + i)));
    if (out.crossings.size() >= 2) {
        out.fit = extrapolate_fss(out.crossings, sc.nu);
        out.fitted = true;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Text artifacts

namespace detail {

inline std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

}  // namespace detail

inline std::string bins_csv(const Measurements& m) {
    std::ostringstream os;
    os << "# seed=" << m.seed << "\n";
    os << "bin,n,N_var,W2,K_count\n";
    for (std::size_t b = 0; b < m.bin_rows.size(); ++b) {
        const BinRow& r = m.bin_rows[b];
        os << b << "," << detail::fmt(r.n) << "," << detail::fmt(r.N_var) << ","
           << detail::fmt(r.W2) << "," << detail::fmt(r.K) << "\n";
    }
    return os.str();
}

inline std::string histogram_csv(const Measurements& m) {
    std::ostringstream os;
    os << "# seed=" << m.seed << "\n";
    os << "K,count\n";
    for (std::size_t k = 0; k < m.kin_histogram.size(); ++k)
        os << k << "," << m.kin_histogram[k] << "\n";
    return os.str();
}

inline std::string tuning_csv(const TuneResult& tr) {
    std::ostringstream os;
    os << "# seed=" << tr.seed << "\n";
    os << "k,mu,n_avg,n_err,kappa,floored\n";
    for (const TuneStep& s : tr.trace)
        os << s.k << "," << detail::fmt(s.mu) << "," << detail::fmt(s.n_avg) << ","
           << detail::fmt(s.n_err) << "," << detail::fmt(s.kappa) << "," << (s.floored ? 1 : 0)
           << "\n";
    return os.str();
}

inline std::string crossings_csv(const std::vector<Crossing>& crossings) {
    std::ostringstream os;
    os << "L1,L2,t_star,error,seed\n";
    for (const Crossing& c : crossings)
        os << c.L1 << "," << c.L2 << "," << detail::fmt(c.t_star) << "," << detail::fmt(c.error)
           << "," << c.seed << "\n";
    return os.str();
}

inline std::string fss_report(const CriticalPointFit& fit) {
    std::ostringstream os;
    os << "finite-size-scaling fit: t_star vs (sqrt(L1 L2))^(-1/nu)\n";
    os << "nu = " << detail::fmt(fit.nu) << "\n";
    os << "crossings = " << fit.crossings.size() << "\n";
    for (const Crossing& c : fit.crossings)
        os << "  L1=" << c.L1 << " L2=" << c.L2 << " t_star=" << detail::fmt(c.t_star)
           << " err=" << detail::fmt(c.error) << " seed=" << c.seed << "\n";
    os << "t_c = " << detail::fmt(fit.t_c) << " +/- " << detail::fmt(fit.t_c_err) << "\n";
    os << "amplitude = " << detail::fmt(fit.amplitude) << " +/- "
       << detail::fmt(fit.amplitude_err) << "\n";
    os << "chi2 = " << detail::fmt(fit.chi2) << " dof = " << fit.dof << "\n";
    return os.str();
}

} // namespace pm::qmc

#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "pm/errors.hpp"

namespace pm::cs {

using cplx = std::complex<double>;

struct CsConfig {
    std::vector<int> momenta{4, 6};   // P^z in lattice units; first entry is the reference
    double p_ref_gev = 1.47;          // GeV label attached to momenta[0]
    double lattice_spacing = 0.06;    // fm, metadata only
    int lattice_L = 48;               // spatial extent; lambda = 2*pi*z*P/L
    int z_max = 12;
    int b = 3;
    int staple_L = 6;
    int T = 16;
    int replicas = 50;
    std::uint64_t seed = 20240801;
    double noise = 0.01;

    // generator truth
    double A = 1.0;
    double E0 = 0.8;
    double r_excited = 0.0;           // excited-state weight in the local correlator
    double r_excited_nl = 0.0;        // excited-state weight in the nonlocal correlator
    double dE = 0.5;
    double delta = 0.08;              // linear-divergence slope per lattice unit
    double kappa0 = -0.3;             // injected kernel: phi_P = (P/P_ref)^kappa0 * base
    cplx c1{1.0, 0.0};
    cplx c2{0.0, 0.0};
    double n1 = 0.0;
    double n2 = 0.0;
    double lambda0 = 3.0;

    // analysis knobs
    double lambda_min_fit = 1.5;
    int min_tail_points = 6;
    double breakdown_rel = 0.30;
    double chi2dof_max = 5.0;
    double dlambda = 0.05;            // uniform grid step of the continued wavefunction
    double cut_rel = 1e-6;            // |phi| cutoff relative to its peak
    double x_min = -0.5;
    double x_max = 1.5;
    double dx = 0.01;
    double plateau_lo = 0.3;
    double plateau_hi = 0.7;
};

inline void validate(const CsConfig& c) {
    if (c.momenta.size() < 2)
        raise_config("MissingField", "need at least two momenta");
    for (int p : c.momenta)
        if (p <= 0) raise_config("MissingField", "momenta must be positive lattice integers");
    if (c.momenta[0] == c.momenta[1])
        raise_config("EqualMomenta", "the two analysis momenta must differ");
    if (c.lattice_L <= 0 || c.z_max < 2 || c.staple_L <= 0)
        raise_config("MissingField", "lattice geometry must be positive");
    if (c.T < 8)
        raise_config("MissingField", "need at least 8 time slices");
    if (c.replicas < 20)
        raise_config("MissingField", "need at least 20 replicas");
    if (!(c.noise >= 0.0))
        raise_config("MissingField", "noise level must be nonnegative");
    if (!(c.lambda0 > 0.0))
        raise_config("MissingField", "lambda0 must be positive");
    if (!(c.dlambda > 0.0 && c.dx > 0.0 && c.cut_rel > 0.0))
        raise_config("MissingField", "grid steps and cutoff must be positive");
    if (!(c.x_min < c.x_max))
        raise_config("MissingField", "x grid bounds must be ordered");
    if (!(c.plateau_lo < c.plateau_hi && c.plateau_lo >= c.x_min && c.plateau_hi <= c.x_max))
        raise_config("MissingField", "plateau window must sit inside the x grid");
    if (!(c.breakdown_rel > 0.0 && c.chi2dof_max > 0.0))
        raise_config("MissingField", "thresholds must be positive");
    if (c.min_tail_points < 4)
        raise_config("MissingField", "tail fit needs at least 4 points");
}

inline double lambda_of(int z, int p, int lattice_L) {
    return 2.0 * M_PI * static_cast<double>(z) * static_cast<double>(p) /
           static_cast<double>(lattice_L);
}

// Correlator ensemble; replica arrays hold delete-1 jackknife means.
struct CorrelatorSet {
    double lattice_spacing = 0.06;
    int lattice_L = 48;
    int T = 0;
    int R = 0;
    int b = 0;
    std::vector<int> momenta;
    std::vector<double> momenta_gev;
    std::vector<int> zs;              // ascending, typically symmetric around 0
    std::vector<cplx> nl_data;        // ((m*Z + zi)*R + r)*T + t
    std::vector<double> loc_data;     // (m*R + r)*T + t

    std::size_t nz() const { return zs.size(); }

    cplx& nl(std::size_t m, std::size_t zi, std::size_t r, std::size_t t) {
        return nl_data[((m * nz() + zi) * static_cast<std::size_t>(R) + r) *
                           static_cast<std::size_t>(T) + t];
    }
    const cplx& nl(std::size_t m, std::size_t zi, std::size_t r, std::size_t t) const {
        return nl_data[((m * nz() + zi) * static_cast<std::size_t>(R) + r) *
                           static_cast<std::size_t>(T) + t];
    }
    double& loc(std::size_t m, std::size_t r, std::size_t t) {
        return loc_data[(m * static_cast<std::size_t>(R) + r) * static_cast<std::size_t>(T) + t];
    }
    const double& loc(std::size_t m, std::size_t r, std::size_t t) const {
        return loc_data[(m * static_cast<std::size_t>(R) + r) * static_cast<std::size_t>(T) + t];
    }

    int z_index(int z) const {
        for (std::size_t i = 0; i < zs.size(); ++i)
            if (zs[i] == z) return static_cast<int>(i);
        return -1;
    }
};

inline void validate(const CorrelatorSet& s) {
    if (s.T < 1 || s.R < 1 || s.momenta.empty() || s.zs.empty())
        raise_config("MissingField", "correlator set is incomplete");
    const std::size_t want_nl = s.momenta.size() * s.nz() *
                                static_cast<std::size_t>(s.R) * static_cast<std::size_t>(s.T);
    const std::size_t want_loc = s.momenta.size() * static_cast<std::size_t>(s.R) *
                                 static_cast<std::size_t>(s.T);
    if (s.nl_data.size() != want_nl || s.loc_data.size() != want_loc)
        raise_config("MissingField", "correlator array extents disagree with the declared shape");
}

struct WilsonLoopTable {
    int staple_L = 6;
    std::map<std::pair<int, int>, double> zE;   // (length, b) -> value

    double lookup(int length, int b) const {
        auto it = zE.find({length, b});
        if (it == zE.end())
            raise_runtime("MissingZEEntry", "no Z_E entry for (length=" + std::to_string(length) +
                                                ", b=" + std::to_string(b) + ")");
        return it->second;
    }
};

inline void validate(const WilsonLoopTable& t) {
    for (const auto& [key, v] : t.zE)
        if (!(v > 0.0))
            raise_config("MissingField", "Z_E must be positive at (length=" +
                                             std::to_string(key.first) + ", b=" +
                                             std::to_string(key.second) + ")");
}

struct FitDiagnostics {
    int t0 = 0;
    int t1 = 0;
    double chi2_dof = 0.0;
    std::string model;                // "one-state" or "two-state"
};

struct BareEntry {
    int z = 0;
    int b = 0;
    int p = 0;                        // lattice units
    std::vector<cplx> replicas;
    FitDiagnostics diag;
};

struct BareMatrixElement {
    int R = 0;
    std::vector<BareEntry> entries;

    const BareEntry* find(int z, int b, int p) const {
        for (const auto& e : entries)
            if (e.z == z && e.b == b && e.p == p) return &e;
        return nullptr;
    }
};

// (c1/(-i l)^{n1} + e^{il} c2/(i l)^{n2}) e^{-l/lambda0}, principal branch, l > 0.
struct TailParams {
    cplx c1{0.0, 0.0};
    cplx c2{0.0, 0.0};
    double n1 = 0.0;
    double n2 = 0.0;
    double lambda0 = 1.0;
};

inline cplx tail_eval(const TailParams& p, double lambda) {
    const double le = std::max(lambda, 1e-12);
    const cplx i{0.0, 1.0};
    const cplx t1 = p.c1 * std::exp(i * (M_PI * p.n1 / 2.0)) * std::pow(le, -p.n1);
    const cplx t2 = p.c2 * std::exp(i * (le - M_PI * p.n2 / 2.0)) * std::pow(le, -p.n2);
    return (t1 + t2) * std::exp(-le / p.lambda0);
}

struct AsymptoticFitParams {
    TailParams central;
    std::vector<TailParams> replicas;
    double window_lo = 0.0;
    double window_hi = 0.0;
    double breakdown_point = std::numeric_limits<double>::infinity();
    double replace_from = std::numeric_limits<double>::infinity();  // data below, model at and above
    double chi2_dof = 0.0;
};

// Renormalized wavefunction samples along lambda at one (b, P).
struct PhiSeries {
    int b = 0;
    int p = 0;
    std::vector<double> lambdas;              // ascending, lambda >= 0
    std::vector<std::vector<cplx>> replicas;  // [r][i]
};

// Continued wavefunction on a uniform symmetric lambda grid.
struct ContinuedPhi {
    int b = 0;
    int p = 0;
    double dlambda = 0.0;
    std::vector<double> lambdas;              // symmetric around 0, uniform
    std::vector<std::vector<cplx>> replicas;  // [r][i]
};

struct FxSeries {
    int b = 0;
    int p = 0;
    std::vector<double> xs;
    std::vector<std::vector<cplx>> replicas;  // [r][k]
};

struct CsKernelResult {
    int b = 0;
    int p1 = 0;
    int p2 = 0;
    std::vector<double> xs;
    std::vector<std::vector<cplx>> K_by_x;    // [r][k]
    std::vector<cplx> K_central;
    double K_final = 0.0;
    double K_final_err = 0.0;
    double K_final_im = 0.0;                  // diagnostic
    double plateau_lo = 0.0;
    double plateau_hi = 0.0;
    double plateau_chi2_dof = 0.0;
};

struct TruthRecord {
    TailParams base;
    double kappa0 = 0.0;
    double delta = 0.0;
    double A = 1.0;
    double E0 = 0.0;
    double r_excited = 0.0;
    double r_excited_nl = 0.0;
    double dE = 0.0;
    int p_ref = 0;
};

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += ch;
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace detail

// One CSV file per observable and momentum: "# key value" metadata header block,
// then rows (replica, z, b, t, re, im). Local-correlator rows carry z=0, b=0, im=0.
inline std::string correlator_csv(const CorrelatorSet& s, const std::string& obs,
                                  std::size_t m_index) {
    std::ostringstream os;
    os.precision(17);
    os << "# format cs-correlators-v1\n";
    os << "# obs " << obs << "\n";
    os << "# p " << s.momenta[m_index] << "\n";
    os << "# p_gev " << s.momenta_gev[m_index] << "\n";
    os << "# lattice_spacing " << s.lattice_spacing << "\n";
    os << "# lattice_L " << s.lattice_L << "\n";
    os << "# T " << s.T << "\n";
    os << "# replicas " << s.R << "\n";
    os << "replica,z,b,t,re,im\n";
    if (obs == "loc") {
        for (int r = 0; r < s.R; ++r)
            for (int t = 0; t < s.T; ++t)
                os << r << ",0,0," << t << "," << s.loc(m_index, r, t) << ",0\n";
    } else {
        for (std::size_t zi = 0; zi < s.nz(); ++zi)
            for (int r = 0; r < s.R; ++r)
                for (int t = 0; t < s.T; ++t) {
                    const cplx v = s.nl(m_index, zi, r, t);
                    os << r << "," << s.zs[zi] << "," << s.b << "," << t << "," << v.real()
                       << "," << v.imag() << "\n";
                }
    }
    return os.str();
}

inline std::string wilson_table_csv(const WilsonLoopTable& t) {
    std::ostringstream os;
    os.precision(17);
    os << "# format cs-zE-v1\n";
    os << "# staple_L " << t.staple_L << "\n";
    os << "length,b,value\n";
    for (const auto& [key, v] : t.zE) os << key.first << "," << key.second << "," << v << "\n";
    return os.str();
}

inline WilsonLoopTable read_wilson_table(const std::string& text) {
    WilsonLoopTable t;
    std::istringstream is(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        if (line[0] == '#') {
            std::istringstream hs(line.substr(1));
            std::string key;
            hs >> key;
            if (key == "staple_L") hs >> t.staple_L;
            continue;
        }
        if (line.rfind("length", 0) == 0) continue;
        const auto f = detail::split_csv(line);
        if (f.size() != 3)
            raise_config("MalformedTable", "Z_E table line " + std::to_string(lineno) +
                                               " does not have 3 columns");
        t.zE[{std::stoi(f[0]), std::stoi(f[1])}] = std::stod(f[2]);
    }
    validate(t);
    return t;
}

// Assembles a CorrelatorSet from per-(obs, momentum) CSV file contents.
inline CorrelatorSet read_correlators(const std::vector<std::string>& files) {
    struct Block {
        std::string obs;
        int p = 0;
        double p_gev = 0.0;
        double a = 0.0;
        int lattice_L = 0;
        int T = 0;
        int R = 0;
        int b = 0;
        std::map<int, std::vector<std::pair<std::size_t, cplx>>> by_z;  // z -> (r*T+t, value)
    };
    std::vector<Block> blocks;
    for (const auto& text : files) {
        Block blk;
        std::istringstream is(text);
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            if (line.empty()) continue;
            if (line[0] == '#') {
                std::istringstream hs(line.substr(1));
                std::string key;
                hs >> key;
                if (key == "obs") hs >> blk.obs;
                else if (key == "p") hs >> blk.p;
                else if (key == "p_gev") hs >> blk.p_gev;
                else if (key == "lattice_spacing") hs >> blk.a;
                else if (key == "lattice_L") hs >> blk.lattice_L;
                else if (key == "T") hs >> blk.T;
                else if (key == "replicas") hs >> blk.R;
                continue;
            }
            if (line.rfind("replica", 0) == 0) continue;
            const auto f = detail::split_csv(line);
            if (f.size() != 6)
                raise_config("MalformedTable", "correlator line " + std::to_string(lineno) +
                                                   " does not have 6 columns");
            const int r = std::stoi(f[0]);
            const int z = std::stoi(f[1]);
            const int b = std::stoi(f[2]);
            const int t = std::stoi(f[3]);
            if (blk.obs == "nl" && b != 0) blk.b = b;
            blk.by_z[z].push_back({static_cast<std::size_t>(r) * blk.T + t,
                                   cplx{std::stod(f[4]), std::stod(f[5])}});
        }
        if (blk.obs.empty() || blk.p == 0 || blk.T == 0 || blk.R == 0)
            raise_config("MalformedTable", "correlator file lacks a complete metadata header");
        blocks.push_back(std::move(blk));
    }

    CorrelatorSet s;
    std::vector<int> momenta;
    for (const auto& blk : blocks) {
        bool seen = false;
        for (int p : momenta) seen = seen || p == blk.p;
        if (!seen) momenta.push_back(blk.p);
    }
    if (blocks.empty()) raise_config("MissingField", "no correlator files supplied");
    s.momenta = momenta;
    s.T = blocks[0].T;
    s.R = blocks[0].R;
    s.lattice_spacing = blocks[0].a;
    s.lattice_L = blocks[0].lattice_L;
    s.momenta_gev.assign(momenta.size(), 0.0);
    for (const auto& blk : blocks) {
        if (blk.T != s.T || blk.R != s.R)
            raise_config("MissingField", "correlator files disagree on time extent or replicas");
        if (blk.obs == "nl")
            for (const auto& [z, rows] : blk.by_z) {
                (void)rows;
                if (s.z_index(z) < 0) s.zs.push_back(z);
            }
        if (blk.b != 0) s.b = blk.b;
    }
    std::sort(s.zs.begin(), s.zs.end());
    s.nl_data.assign(momenta.size() * s.nz() * static_cast<std::size_t>(s.R) *
                         static_cast<std::size_t>(s.T),
                     cplx{0.0, 0.0});
    s.loc_data.assign(momenta.size() * static_cast<std::size_t>(s.R) *
                          static_cast<std::size_t>(s.T),
                      0.0);
    for (const auto& blk : blocks) {
        std::size_t m = 0;
        for (std::size_t i = 0; i < momenta.size(); ++i)
            if (momenta[i] == blk.p) m = i;
        s.momenta_gev[m] = blk.p_gev;
        for (const auto& [z, rows] : blk.by_z) {
            if (blk.obs == "loc") {
                for (const auto& [rt, v] : rows) s.loc_data[m * s.R * s.T + rt] = v.real();
            } else {
                const std::size_t zi = static_cast<std::size_t>(s.z_index(z));
                for (const auto& [rt, v] : rows)
                    s.nl_data[(m * s.nz() + zi) * static_cast<std::size_t>(s.R) *
                                  static_cast<std::size_t>(s.T) + rt] = v;
            }
        }
    }
    validate(s);
    return s;
}

}  // namespace pm::cs

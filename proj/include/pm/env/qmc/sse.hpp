#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "pm/env/qmc/lattice.hpp"
#include "pm/errors.hpp"
#include "pm/rng.hpp"
#include "pm/stats.hpp"

namespace pm::qmc {

struct SseConfig {
    double t = 0.03;  // hopping, in units of U
    double U = 1.0;
    double mu = 0.5;
    double beta = 6.0;  // the critical-point protocol drives beta = 1.5 L
    int n_max = 4;      // local truncation; 2 for exact-diagonalization cross-checks
    int thermalization_sweeps = 2000;
    int measurement_sweeps = 10000;
    int bins = 20;
    std::uint64_t seed = 20240801;
    // Constant diagonal-weight shift. Deliberately t-independent so a sampled
    // configuration's weight scales as t^K and operator-count reweighting in t
    // is exact.
    double eps_offset = 0.1;
    std::string loop_solution = "directed";  // "directed" or "heatbath"
    bool paranoid_checks = false;            // full state audit every sweep
    std::uint64_t worm_step_cap = 0;         // 0 = auto
};

inline void validate_config(const SseConfig& cfg) {
    if (cfg.n_max < 2)
        raise_config("TruncationTooSmall", "n_max must be at least 2, got " +
                                               std::to_string(cfg.n_max));
    if (!(cfg.U > 0.0)) raise_config("NonpositiveInteraction", "U must be positive");
    if (!(cfg.beta > 0.0)) raise_config("NonpositiveBeta", "beta must be positive");
    if (cfg.t < 0.0) raise_config("NegativeHopping", "hopping t must be non-negative");
    if (!(cfg.eps_offset > 0.0))
        raise_config("NonpositiveOffset", "diagonal weight offset must be positive");
    if (cfg.loop_solution != "directed" && cfg.loop_solution != "heatbath")
        raise_config("UnknownLoopSolution",
                     "loop_solution must be 'directed' or 'heatbath', got '" +
                         cfg.loop_solution + "'");
}

// Operator slot. bond < 0 marks an identity slot; otherwise the four leg
// occupations are stored explicitly: 0 = a-in, 1 = b-in, 2 = a-out, 3 = b-out.
struct Op {
    int bond = -1;
    std::array<std::int8_t, 4> n{0, 0, 0, 0};

    bool empty() const { return bond < 0; }
    bool diagonal() const { return n[0] == n[2] && n[1] == n[3]; }
};

struct SseState {
    std::vector<int> n;  // occupations at propagation slice 0
    std::vector<Op> ops;
    int n_ops = 0;
    int loops_per_sweep = 4;
    bool adapt_loops = true;
    std::uint64_t sweeps_done = 0;
    std::mt19937_64 rng;
};

namespace detail {

inline double uniform(std::mt19937_64& g) {
    return static_cast<double>(g() >> 11) * 0x1.0p-53;
}

inline std::uint64_t below(std::mt19937_64& g, std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(g()) * n) >> 64);
}

}  // namespace detail

// Per-bond share of the site terms: the site operators are split evenly over
// the bonds touching each site, so summing over bonds recovers the full
// diagonal Hamiltonian.
inline double bond_diag_energy(const SseConfig& cfg, const UnionJackLattice& lat, int bond,
                               int na, int nb) {
    const Bond& bd = lat.bonds[static_cast<std::size_t>(bond)];
    const double za = static_cast<double>(lat.coordination[static_cast<std::size_t>(bd.a)]);
    const double zb = static_cast<double>(lat.coordination[static_cast<std::size_t>(bd.b)]);
    const double u = 0.5 * cfg.U;
    return u * (static_cast<double>(na * (na - 1)) / za +
                static_cast<double>(nb * (nb - 1)) / zb) -
           cfg.mu * (static_cast<double>(na) / za + static_cast<double>(nb) / zb);
}

struct BondTables {
    std::vector<double> Cb;  // per-bond shift making all diagonal weights >= eps_offset
    double C_tot = 0.0;
};

inline BondTables make_bond_tables(const SseConfig& cfg, const UnionJackLattice& lat) {
    BondTables tb;
    tb.Cb.resize(lat.bonds.size());
    for (std::size_t b = 0; b < lat.bonds.size(); ++b) {
        double emax = 0.0;
        for (int na = 0; na <= cfg.n_max; ++na)
            for (int nb = 0; nb <= cfg.n_max; ++nb)
                emax = std::max(emax, bond_diag_energy(cfg, lat, static_cast<int>(b), na, nb));
        tb.Cb[b] = emax + cfg.eps_offset;
        tb.C_tot += tb.Cb[b];
    }
    return tb;
}

inline double diagonal_weight(const SseConfig& cfg, const UnionJackLattice& lat,
                              const BondTables& tb, int bond, int na, int nb) {
    return tb.Cb[static_cast<std::size_t>(bond)] - bond_diag_energy(cfg, lat, bond, na, nb);
}

// Weight of an arbitrary leg assignment: positive for legal diagonal and
// single-hop vertices, zero otherwise.
inline double vertex_weight(const SseConfig& cfg, const UnionJackLattice& lat,
                            const BondTables& tb, int bond, const std::array<int, 4>& v) {
    for (int x : v)
        if (x < 0 || x > cfg.n_max) return 0.0;
    if (v[0] == v[2] && v[1] == v[3]) return diagonal_weight(cfg, lat, tb, bond, v[0], v[1]);
    if (v[2] == v[0] - 1 && v[3] == v[1] + 1)
        return cfg.t * std::sqrt(static_cast<double>(v[0]) * static_cast<double>(v[1] + 1));
    if (v[2] == v[0] + 1 && v[3] == v[1] - 1)
        return cfg.t * std::sqrt(static_cast<double>(v[1]) * static_cast<double>(v[0] + 1));
    return 0.0;
}

// Metropolis factors for the diagonal update; n_ops counts operators before
// insertion (resp. including the operator slated for removal).
inline double insert_acceptance(const SseConfig& cfg, const UnionJackLattice& lat, int M,
                                int n_ops, double wd) {
    const double r = cfg.beta * static_cast<double>(lat.bonds.size()) * wd /
                     static_cast<double>(M - n_ops);
    return std::min(1.0, r);
}

inline double remove_acceptance(const SseConfig& cfg, const UnionJackLattice& lat, int M,
                                int n_ops, double wd) {
    const double r = static_cast<double>(M - n_ops + 1) /
                     (cfg.beta * static_cast<double>(lat.bonds.size()) * wd);
    return std::min(1.0, r);
}

// Exit flavor forced by particle conservation: exits on the entrance side
// compensate with the opposite change, exits on the other side repeat it.
inline int exit_flavor(int entrance_leg, int exit_leg, int f) {
    const bool same_side = (entrance_leg < 2) == (exit_leg < 2);
    return same_side ? -f : f;
}

// Candidate exit weights for a worm entering leg li with occupation change f:
// bounce, straight-through, switch-and-continue, switch-and-reverse.
inline std::array<double, 4> scatter_weights(const SseConfig& cfg, const UnionJackLattice& lat,
                                             const BondTables& tb, const Op& op, int li, int f) {
    std::array<int, 4> base{op.n[0], op.n[1], op.n[2], op.n[3]};
    base[static_cast<std::size_t>(li)] += f;
    std::array<double, 4> w{0.0, 0.0, 0.0, 0.0};
    for (int le = 0; le < 4; ++le) {
        std::array<int, 4> v = base;
        v[static_cast<std::size_t>(le)] += exit_flavor(li, le, f);
        w[static_cast<std::size_t>(le)] = vertex_weight(cfg, lat, tb, op.bond, v);
    }
    return w;
}

// Directed-loop transition row for the entrance channel: the zero-bounce
// symmetric flux solution when feasible (2 max(w) <= sum(w)), built by merging
// the two smallest channels into the three-channel triangle solution;
// heat-bath otherwise (and always in "heatbath" mode).
inline std::array<double, 4> scatter_row(const std::array<double, 4>& w, int li,
                                         const std::string& mode) {
    std::array<double, 4> p{0.0, 0.0, 0.0, 0.0};
    const double S = w[0] + w[1] + w[2] + w[3];
    if (!(S > 0.0)) raise_runtime("StateCorruption", "scatter row has no positive channel");
    const double win = w[static_cast<std::size_t>(li)];
    if (!(win > 0.0))
        raise_runtime("StateCorruption", "worm entered a zero-weight channel");
    const double wm = *std::max_element(w.begin(), w.end());
    if (mode == "heatbath" || 2.0 * wm > S) {
        for (int e = 0; e < 4; ++e) p[static_cast<std::size_t>(e)] = w[static_cast<std::size_t>(e)] / S;
        return p;
    }
    std::array<int, 4> idx{0, 1, 2, 3};
    std::sort(idx.begin(), idx.end(), [&](int a, int b) {
        if (w[static_cast<std::size_t>(a)] != w[static_cast<std::size_t>(b)])
            return w[static_cast<std::size_t>(a)] > w[static_cast<std::size_t>(b)];
        return a < b;
    });
    const double w1 = w[static_cast<std::size_t>(idx[0])];
    const double w2 = w[static_cast<std::size_t>(idx[1])];
    const double w3 = w[static_cast<std::size_t>(idx[2])];
    const double w4 = w[static_cast<std::size_t>(idx[3])];
    const double wJ = w3 + w4;
    double a[4][4] = {};
    const double a12 = 0.5 * (w1 + w2 - wJ);
    const double a1J = 0.5 * (w1 + wJ - w2);
    const double a2J = 0.5 * (w2 + wJ - w1);
    a[0][1] = a[1][0] = std::max(0.0, a12);
    if (wJ > 0.0) {
        a[0][2] = a[2][0] = std::max(0.0, a1J) * w3 / wJ;
        a[0][3] = a[3][0] = std::max(0.0, a1J) * w4 / wJ;
        a[1][2] = a[2][1] = std::max(0.0, a2J) * w3 / wJ;
        a[1][3] = a[3][1] = std::max(0.0, a2J) * w4 / wJ;
    }
    int r = 0;
    for (int k = 0; k < 4; ++k)
        if (idx[static_cast<std::size_t>(k)] == li) r = k;
    double rowsum = 0.0;
    for (int k = 0; k < 4; ++k) {
        p[static_cast<std::size_t>(idx[static_cast<std::size_t>(k)])] = a[r][k] / win;
        rowsum += a[r][k] / win;
    }
    if (!(rowsum > 0.0)) raise_runtime("StateCorruption", "scatter row sums to zero");
    for (double& x : p) x /= rowsum;
    return p;
}

inline SseState init_state(const SseConfig& cfg, const UnionJackLattice& lat) {
    validate_config(cfg);
    SseState st;
    st.n.assign(static_cast<std::size_t>(lat.n_sites), 1);
    st.ops.assign(static_cast<std::size_t>(std::max(16, lat.n_sites)), Op{});
    st.loops_per_sweep = std::max(4, lat.n_sites / 2);
    st.rng.seed(cfg.seed);
    return st;
}

// Full configuration audit: propagation closure, vertex legality, occupation
// bounds, operator count, integer winding per axis.
inline void check_state(const SseState& st, const SseConfig& cfg, const UnionJackLattice& lat) {
    if (st.n.size() != static_cast<std::size_t>(lat.n_sites))
        raise_runtime("StateCorruption", "occupation array size mismatch");
    std::vector<int> prop = st.n;
    for (int x : prop)
        if (x < 0 || x > cfg.n_max) raise_runtime("StateCorruption", "occupation out of range");
    int count = 0;
    long wx = 0, wy = 0;
    for (std::size_t p = 0; p < st.ops.size(); ++p) {
        const Op& op = st.ops[p];
        if (op.empty()) continue;
        ++count;
        if (op.bond >= static_cast<int>(lat.bonds.size()))
            raise_runtime("StateCorruption", "operator references invalid bond");
        const Bond& bd = lat.bonds[static_cast<std::size_t>(op.bond)];
        if (prop[static_cast<std::size_t>(bd.a)] != op.n[0] ||
            prop[static_cast<std::size_t>(bd.b)] != op.n[1])
            raise_runtime("StateCorruption",
                          "leg occupations disagree with propagated state at slot " +
                              std::to_string(p));
        for (int l = 0; l < 4; ++l)
            if (op.n[static_cast<std::size_t>(l)] < 0 || op.n[static_cast<std::size_t>(l)] > cfg.n_max)
                raise_runtime("StateCorruption", "leg occupation out of range at slot " +
                                                     std::to_string(p));
        const bool hop_ab = op.n[2] == op.n[0] - 1 && op.n[3] == op.n[1] + 1;
        const bool hop_ba = op.n[2] == op.n[0] + 1 && op.n[3] == op.n[1] - 1;
        if (!op.diagonal() && !hop_ab && !hop_ba)
            raise_runtime("StateCorruption", "illegal vertex at slot " + std::to_string(p));
        if (!op.diagonal()) {
            const int dir = (op.n[2] == op.n[0] - 1) ? 1 : -1;
            wx += dir * bd.dx;
            wy += dir * bd.dy;
        }
        prop[static_cast<std::size_t>(bd.a)] = op.n[2];
        prop[static_cast<std::size_t>(bd.b)] = op.n[3];
    }
    if (count != st.n_ops) raise_runtime("StateCorruption", "operator count mismatch");
    if (prop != st.n) raise_runtime("StateCorruption", "operator string is not periodic");
    if (wx % lat.L != 0 || wy % lat.L != 0)
        raise_runtime("StateCorruption", "non-integer winding number");
}

namespace detail {

inline void diagonal_update(SseState& st, const SseConfig& cfg, const UnionJackLattice& lat,
                            const BondTables& tb, std::vector<int>& nprop) {
    nprop = st.n;
    const int M = static_cast<int>(st.ops.size());
    const auto Nb = static_cast<std::uint64_t>(lat.bonds.size());
    for (std::size_t p = 0; p < st.ops.size(); ++p) {
        Op& op = st.ops[p];
        if (op.empty()) {
            const int b = static_cast<int>(below(st.rng, Nb));
            const Bond& bd = lat.bonds[static_cast<std::size_t>(b)];
            const int na = nprop[static_cast<std::size_t>(bd.a)];
            const int nb = nprop[static_cast<std::size_t>(bd.b)];
            const double wd = diagonal_weight(cfg, lat, tb, b, na, nb);
            if (uniform(st.rng) < insert_acceptance(cfg, lat, M, st.n_ops, wd)) {
                op.bond = b;
                op.n = {static_cast<std::int8_t>(na), static_cast<std::int8_t>(nb),
                        static_cast<std::int8_t>(na), static_cast<std::int8_t>(nb)};
                ++st.n_ops;
            }
        } else if (op.diagonal()) {
            const double wd = diagonal_weight(cfg, lat, tb, op.bond, op.n[0], op.n[1]);
            if (uniform(st.rng) < remove_acceptance(cfg, lat, M, st.n_ops, wd)) {
                op.bond = -1;
                --st.n_ops;
            }
        } else {
            const Bond& bd = lat.bonds[static_cast<std::size_t>(op.bond)];
            nprop[static_cast<std::size_t>(bd.a)] = op.n[2];
            nprop[static_cast<std::size_t>(bd.b)] = op.n[3];
        }
    }
}

struct LoopScaffold {
    std::vector<int> vpos;   // slot index per vertex
    std::vector<int> link;   // leg adjacency along site world lines
    std::vector<int> dummy;
};

inline void build_links(const SseState& st, const UnionJackLattice& lat, LoopScaffold& sc) {
    sc.vpos.clear();
    for (std::size_t p = 0; p < st.ops.size(); ++p)
        if (!st.ops[p].empty()) sc.vpos.push_back(static_cast<int>(p));
    const int V = static_cast<int>(sc.vpos.size());
    sc.link.assign(static_cast<std::size_t>(4 * V), -1);
    std::vector<int> first_in(static_cast<std::size_t>(lat.n_sites), -1);
    std::vector<int> last_out(static_cast<std::size_t>(lat.n_sites), -1);
    for (int v = 0; v < V; ++v) {
        const Op& op = st.ops[static_cast<std::size_t>(sc.vpos[static_cast<std::size_t>(v)])];
        const Bond& bd = lat.bonds[static_cast<std::size_t>(op.bond)];
        const int sites[2] = {bd.a, bd.b};
        for (int k = 0; k < 2; ++k) {
            const int s = sites[k];
            const int gin = 4 * v + k;
            const int gout = 4 * v + k + 2;
            if (last_out[static_cast<std::size_t>(s)] >= 0) {
                sc.link[static_cast<std::size_t>(gin)] = last_out[static_cast<std::size_t>(s)];
                sc.link[static_cast<std::size_t>(last_out[static_cast<std::size_t>(s)])] = gin;
            } else {
                first_in[static_cast<std::size_t>(s)] = gin;
            }
            last_out[static_cast<std::size_t>(s)] = gout;
        }
    }
    for (int s = 0; s < lat.n_sites; ++s) {
        if (last_out[static_cast<std::size_t>(s)] < 0) continue;
        sc.link[static_cast<std::size_t>(first_in[static_cast<std::size_t>(s)])] =
            last_out[static_cast<std::size_t>(s)];
        sc.link[static_cast<std::size_t>(last_out[static_cast<std::size_t>(s)])] =
            first_in[static_cast<std::size_t>(s)];
    }
}

// Segment from leg g_from to its linked leg g_to crosses propagation slice 0
// iff the time ordering wraps around.
inline bool segment_wraps(const LoopScaffold& sc, int g_from, int g_to) {
    const int pf = sc.vpos[static_cast<std::size_t>(g_from >> 2)];
    const int pt = sc.vpos[static_cast<std::size_t>(g_to >> 2)];
    const bool from_out = (g_from & 3) >= 2;
    return from_out ? (pt <= pf) : (pt >= pf);
}

// One directed worm. Returns the number of scatter steps.
inline std::uint64_t run_worm(SseState& st, const SseConfig& cfg, const UnionJackLattice& lat,
                              const BondTables& tb, LoopScaffold& sc, std::uint64_t cap) {
    const int V = static_cast<int>(sc.vpos.size());
    const int j0 = static_cast<int>(below(st.rng, static_cast<std::uint64_t>(4 * V)));
    const int f0 = (st.rng() & 1u) ? 1 : -1;
    const int tail_link = sc.link[static_cast<std::size_t>(j0)];
    auto site_of_leg = [&](int g) {
        const Op& op = st.ops[static_cast<std::size_t>(sc.vpos[static_cast<std::size_t>(g >> 2)])];
        const Bond& bd = lat.bonds[static_cast<std::size_t>(op.bond)];
        return ((g & 1) == 0) ? bd.a : bd.b;
    };
    int j = j0;
    int f = f0;
    std::uint64_t steps = 0;
    while (true) {
        if (++steps > cap)
            raise_runtime("StateCorruption", "worm failed to close within " +
                                                 std::to_string(cap) + " steps");
        const int v = j >> 2;
        const int li = j & 3;
        Op& op = st.ops[static_cast<std::size_t>(sc.vpos[static_cast<std::size_t>(v)])];
        const std::array<double, 4> w = scatter_weights(cfg, lat, tb, op, li, f);
        const std::array<double, 4> prob = scatter_row(w, li, cfg.loop_solution);
        const double u = uniform(st.rng);
        int le = -1;
        double acc = 0.0;
        for (int e = 0; e < 4; ++e) {
            if (!(prob[static_cast<std::size_t>(e)] > 0.0)) continue;
            le = e;  // rounding fallback: last positive channel
            acc += prob[static_cast<std::size_t>(e)];
            if (u < acc) break;
        }
        if (le < 0) raise_runtime("StateCorruption", "no exit channel available");
        const int fe = exit_flavor(li, le, f);
        op.n[static_cast<std::size_t>(li)] = static_cast<std::int8_t>(op.n[static_cast<std::size_t>(li)] + f);
        op.n[static_cast<std::size_t>(le)] = static_cast<std::int8_t>(op.n[static_cast<std::size_t>(le)] + fe);
        const int ge = 4 * v + le;
        if (ge == j0 && fe == -f0) break;  // head annihilated the tail in place
        if (ge == tail_link && fe == f0) {
            // Tail segment now consistent; account for a slice-0 crossing.
            const int gout = ((j0 & 3) >= 2) ? j0 : tail_link;
            const int gin = ((j0 & 3) >= 2) ? tail_link : j0;
            const int pf = sc.vpos[static_cast<std::size_t>(gout >> 2)];
            const int pt = sc.vpos[static_cast<std::size_t>(gin >> 2)];
            if (pt <= pf) st.n[static_cast<std::size_t>(site_of_leg(j0))] += f0;
            break;
        }
        const int jn = sc.link[static_cast<std::size_t>(ge)];
        if (segment_wraps(sc, ge, jn)) st.n[static_cast<std::size_t>(site_of_leg(ge))] += fe;
        j = jn;
        f = fe;
    }
    return steps;
}

}  // namespace detail

inline void sse_sweep(SseState& st, const SseConfig& cfg, const UnionJackLattice& lat) {
    validate_config(cfg);
    const BondTables tb = make_bond_tables(cfg, lat);
    static thread_local std::vector<int> nprop;
    static thread_local detail::LoopScaffold sc;
    detail::diagonal_update(st, cfg, lat, tb, nprop);
    // At t = 0 the off-diagonal sector is empty: a worm could only relabel
    // world lines between occupation levels, so occupations stay at the
    // initial filling and the t=0 limit is reproduced exactly by the
    // diagonal update alone.
    if (cfg.t == 0.0) {
        const int M0 = static_cast<int>(st.ops.size());
        if (4 * st.n_ops > 3 * M0)
            st.ops.resize(static_cast<std::size_t>(std::max(M0 + 8, (4 * st.n_ops) / 3)), Op{});
        ++st.sweeps_done;
        if (cfg.paranoid_checks) check_state(st, cfg, lat);
        return;
    }
    detail::build_links(st, lat, sc);
    const int V = static_cast<int>(sc.vpos.size());
    if (V > 0) {
        const std::uint64_t legs = static_cast<std::uint64_t>(4 * V);
        const std::uint64_t cap =
            cfg.worm_step_cap > 0 ? cfg.worm_step_cap : 1000000ull + 2000ull * legs;
        std::uint64_t total_steps = 0;
        for (int l = 0; l < st.loops_per_sweep; ++l)
            total_steps += detail::run_worm(st, cfg, lat, tb, sc, cap);
        if (st.adapt_loops) {
            const double target = 2.0 * static_cast<double>(legs);
            const double avg = static_cast<double>(total_steps) /
                               static_cast<double>(st.loops_per_sweep);
            const double want = target / std::max(1.0, avg);
            const int next = static_cast<int>(std::lround(
                std::clamp(want, 0.5 * st.loops_per_sweep, 2.0 * st.loops_per_sweep)));
            st.loops_per_sweep = std::clamp(next, 1, 100000);
        }
    }
    // Grow the expansion cutoff before the string saturates.
    const int M = static_cast<int>(st.ops.size());
    if (4 * st.n_ops > 3 * M)
        st.ops.resize(static_cast<std::size_t>(std::max(M + 8, (4 * st.n_ops) / 3)), Op{});
    ++st.sweeps_done;
    if (cfg.paranoid_checks) check_state(st, cfg, lat);
}

struct BinRow {
    double n = 0.0;      // bin-mean density
    double N_var = 0.0;  // within-bin variance of total particle number
    double W2 = 0.0;     // bin-mean squared winding
    double K = 0.0;      // bin-mean kinetic (off-diagonal) operator count
    double ops = 0.0;    // bin-mean total operator count (for the energy estimator)
};

struct Measurements {
    double n_avg = 0.0;
    double kappa = 0.0;
    double W2 = 0.0;
    double E = 0.0;
    double n_avg_err = 0.0;
    double kappa_err = 0.0;
    double W2_err = 0.0;
    double E_err = 0.0;
    std::vector<std::uint64_t> kin_histogram;  // index = kinetic operator count
    std::vector<BinRow> bin_rows;
    std::vector<std::pair<int, double>> kw_samples;  // per-sweep (K, W^2)
    std::uint64_t measurement_count = 0;
    std::uint64_t seed = 0;
    // Context needed to recompute estimators when merging chains.
    double beta_used = 0.0;
    double C_tot_used = 0.0;
    int n_sites_used = 0;
};

// Recompute all scalar estimators and jackknife errors from bin rows.
inline void refresh_from_bins(Measurements& m) {
    std::vector<double> bn, bN, bN2, bW2, bOps;
    const double Ns = static_cast<double>(m.n_sites_used);
    for (const BinRow& r : m.bin_rows) {
        const double N = r.n * Ns;
        bn.push_back(r.n);
        bN.push_back(N);
        bN2.push_back(r.N_var + N * N);
        bW2.push_back(r.W2);
        bOps.push_back(r.ops);
    }
    const JackknifeResult jn = jackknife_mean(bn);
    m.n_avg = jn.value;
    m.n_avg_err = jn.error;
    const double beta = m.beta_used;
    const JackknifeResult jk =
        jackknife_apply({bN, bN2}, [beta, Ns](const std::vector<double>& a) {
            return beta * (a[1] - a[0] * a[0]) / Ns;
        });
    m.kappa = jk.value;
    m.kappa_err = jk.error;
    const JackknifeResult jw = jackknife_mean(bW2);
    m.W2 = jw.value;
    m.W2_err = jw.error;
    const JackknifeResult jo = jackknife_mean(bOps);
    m.E = m.C_tot_used - jo.value / m.beta_used;
    m.E_err = jo.error / m.beta_used;
}

inline Measurements measure(SseState& st, const SseConfig& cfg, const UnionJackLattice& lat) {
    validate_config(cfg);
    if (cfg.bins < 10)
        raise_config("InsufficientBins",
                     "need at least 10 bins, got " + std::to_string(cfg.bins));
    if (cfg.measurement_sweeps < cfg.bins || cfg.measurement_sweeps % cfg.bins != 0)
        raise_config("InsufficientBins", "measurement sweeps (" +
                                             std::to_string(cfg.measurement_sweeps) +
                                             ") must be a positive multiple of bins (" +
                                             std::to_string(cfg.bins) + ")");
    const BondTables tb = make_bond_tables(cfg, lat);
    check_state(st, cfg, lat);
    st.adapt_loops = false;

    const int bins = cfg.bins;
    const int bs = cfg.measurement_sweeps / bins;
    Measurements out;
    out.seed = cfg.seed;
    out.kw_samples.reserve(static_cast<std::size_t>(cfg.measurement_sweeps));
    std::vector<double> bN(static_cast<std::size_t>(bins), 0.0);
    std::vector<double> bN2(static_cast<std::size_t>(bins), 0.0);
    std::vector<double> bW2(static_cast<std::size_t>(bins), 0.0);
    std::vector<double> bK(static_cast<std::size_t>(bins), 0.0);
    std::vector<double> bOps(static_cast<std::size_t>(bins), 0.0);

    for (int b = 0; b < bins; ++b) {
        for (int s = 0; s < bs; ++s) {
            sse_sweep(st, cfg, lat);
            long wx = 0, wy = 0;
            int K = 0;
            for (const Op& op : st.ops) {
                if (op.empty() || op.diagonal()) continue;
                ++K;
                const Bond& bd = lat.bonds[static_cast<std::size_t>(op.bond)];
                const int dir = (op.n[2] == op.n[0] - 1) ? 1 : -1;
                wx += dir * bd.dx;
                wy += dir * bd.dy;
            }
            if (wx % lat.L != 0 || wy % lat.L != 0)
                raise_runtime("StateCorruption", "non-integer winding number");
            const double Wx = static_cast<double>(wx) / lat.L;
            const double Wy = static_cast<double>(wy) / lat.L;
            const double w2 = 0.5 * (Wx * Wx + Wy * Wy);
            double N = 0.0;
            for (int x : st.n) N += static_cast<double>(x);
            bN[static_cast<std::size_t>(b)] += N;
            bN2[static_cast<std::size_t>(b)] += N * N;
            bW2[static_cast<std::size_t>(b)] += w2;
            bK[static_cast<std::size_t>(b)] += static_cast<double>(K);
            bOps[static_cast<std::size_t>(b)] += static_cast<double>(st.n_ops);
            if (static_cast<std::size_t>(K) >= out.kin_histogram.size())
                out.kin_histogram.resize(static_cast<std::size_t>(K) + 1, 0);
            ++out.kin_histogram[static_cast<std::size_t>(K)];
            out.kw_samples.emplace_back(K, w2);
        }
        const double den = static_cast<double>(bs);
        bN[static_cast<std::size_t>(b)] /= den;
        bN2[static_cast<std::size_t>(b)] /= den;
        bW2[static_cast<std::size_t>(b)] /= den;
        bK[static_cast<std::size_t>(b)] /= den;
        bOps[static_cast<std::size_t>(b)] /= den;
    }
    check_state(st, cfg, lat);

    const double Ns = static_cast<double>(lat.n_sites);
    out.measurement_count = static_cast<std::uint64_t>(bins) * static_cast<std::uint64_t>(bs);
    out.beta_used = cfg.beta;
    out.C_tot_used = tb.C_tot;
    out.n_sites_used = lat.n_sites;
    out.bin_rows.resize(static_cast<std::size_t>(bins));
    for (int b = 0; b < bins; ++b) {
        BinRow& r = out.bin_rows[static_cast<std::size_t>(b)];
        r.n = bN[static_cast<std::size_t>(b)] / Ns;
        r.N_var = bN2[static_cast<std::size_t>(b)] -
                  bN[static_cast<std::size_t>(b)] * bN[static_cast<std::size_t>(b)];
        r.W2 = bW2[static_cast<std::size_t>(b)];
        r.K = bK[static_cast<std::size_t>(b)];
        r.ops = bOps[static_cast<std::size_t>(b)];
    }
    refresh_from_bins(out);
    return out;
}

// Thermalize a fresh state and measure.
inline Measurements run_chain(const SseConfig& cfg, const UnionJackLattice& lat) {
    SseState st = init_state(cfg, lat);
    for (int s = 0; s < cfg.thermalization_sweeps; ++s) sse_sweep(st, cfg, lat);
    return measure(st, cfg, lat);
}

// Order-independent combination of independent chains: bin rows concatenate
// and every scalar estimate is recomputed from the union of bins.
inline Measurements merge_measurements(const Measurements& a, const Measurements& b) {
    if (a.beta_used != b.beta_used || a.n_sites_used != b.n_sites_used ||
        a.C_tot_used != b.C_tot_used)
        raise_config("MismatchedChains", "cannot merge chains with different parameters");
    Measurements out = a;
    out.bin_rows.insert(out.bin_rows.end(), b.bin_rows.begin(), b.bin_rows.end());
    out.kw_samples.insert(out.kw_samples.end(), b.kw_samples.begin(), b.kw_samples.end());
    out.measurement_count += b.measurement_count;
    if (b.kin_histogram.size() > out.kin_histogram.size())
        out.kin_histogram.resize(b.kin_histogram.size(), 0);
    for (std::size_t k = 0; k < b.kin_histogram.size(); ++k)
        out.kin_histogram[k] += b.kin_histogram[k];
    refresh_from_bins(out);
    return out;
}

} // namespace pm::qmc

#pragma once

#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "pm/errors.hpp"

namespace pm::qmc {

struct Bond {
    int a = 0;
    int b = 0;
    int dx = 0;  // minimal-image displacement from a to b
    int dy = 0;
    bool diagonal = false;
};

// Square lattice with periodic wrap plus crossed diagonals. The default
// "alternating" pattern crosses checkerboard plaquettes (2 diagonals per
// site, z=6); "full" crosses every plaquette (z=8).
struct UnionJackLattice {
    int L = 0;
    int n_sites = 0;
    std::string diagonal_pattern;
    std::vector<Bond> bonds;
    std::vector<int> coordination;

    int site(int x, int y) const {
        const int xm = ((x % L) + L) % L;
        const int ym = ((y % L) + L) % L;
        return ym * L + xm;
    }
    int x_of(int s) const { return s % L; }
    int y_of(int s) const { return s / L; }

    int nn_bond_count() const {
        int c = 0;
        for (const Bond& b : bonds)
            if (!b.diagonal) ++c;
        return c;
    }
    int diagonal_bond_count() const { return static_cast<int>(bonds.size()) - nn_bond_count(); }

    double average_coordination() const {
        if (n_sites == 0) return 0.0;
        return 2.0 * static_cast<double>(bonds.size()) / static_cast<double>(n_sites);
    }

    // Audit dump: header line plus one line per bond.
    std::string dump() const {
        std::ostringstream os;
        os << "L=" << L << " pattern=" << diagonal_pattern << " sites=" << n_sites
           << " nn_bonds=" << nn_bond_count() << " diagonal_bonds=" << diagonal_bond_count()
           << " zbar=" << average_coordination() << "\n";
        os << "a,b,dx,dy,diagonal\n";
        for (const Bond& b : bonds)
            os << b.a << "," << b.b << "," << b.dx << "," << b.dy << "," << (b.diagonal ? 1 : 0)
               << "\n";
        return os.str();
    }
};

inline UnionJackLattice build_lattice(int L, const std::string& pattern = "alternating") {
    if (L < 2 || L % 2 != 0)
        raise_config("OddSize", "lattice size must be even and at least 2, got " +
                                    std::to_string(L));
    if (pattern != "alternating" && pattern != "full")
        raise_config("UnknownPattern", "diagonal pattern must be 'alternating' or 'full', got '" +
                                           pattern + "'");
    UnionJackLattice lat;
    lat.L = L;
    lat.n_sites = L * L;
    lat.diagonal_pattern = pattern;
    lat.coordination.assign(lat.n_sites, 0);

    std::set<std::pair<int, int>> seen;
    auto add = [&](int a, int b, int dx, int dy, bool diag) {
        const std::pair<int, int> key = std::minmax(a, b);
        if (!seen.insert(key).second) return;  // periodic image duplicate
        lat.bonds.push_back(Bond{a, b, dx, dy, diag});
        ++lat.coordination[a];
        ++lat.coordination[b];
    };

    for (int y = 0; y < L; ++y)
        for (int x = 0; x < L; ++x) {
            add(lat.site(x, y), lat.site(x + 1, y), 1, 0, false);
            add(lat.site(x, y), lat.site(x, y + 1), 0, 1, false);
        }
    for (int y = 0; y < L; ++y)
        for (int x = 0; x < L; ++x) {
            if (pattern == "alternating" && (x + y) % 2 != 0) continue;
            add(lat.site(x, y), lat.site(x + 1, y + 1), 1, 1, true);
            add(lat.site(x + 1, y), lat.site(x, y + 1), -1, 1, true);
        }
    return lat;
}

} // namespace pm::qmc

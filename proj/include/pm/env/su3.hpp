#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "pm/errors.hpp"

namespace pm::su3 {

// Exact coefficient of the form (num/den) * sqrt(rad), kept normalized:
// gcd-reduced, den > 0, square factors pulled out of rad, zero as 0/1*sqrt(1).
struct RootRational {
    long long num = 0;
    long long den = 1;
    long long rad = 1;

    static RootRational zero() { return {}; }

    static RootRational make(long long n, long long d, long long r = 1) {
        if (d == 0) raise_config("DegenerateCoefficient", "zero denominator");
        if (r <= 0) raise_config("DegenerateCoefficient", "radicand must be positive");
        RootRational v{n, d, r};
        v.normalize();
        return v;
    }

    void normalize() {
        if (num == 0) {
            den = 1;
            rad = 1;
            return;
        }
        for (long long f = 2; f * f <= rad; ++f) {
            while (rad % (f * f) == 0) {
                rad /= f * f;
                num *= f;
            }
        }
        if (den < 0) {
            num = -num;
            den = -den;
        }
        const long long g = std::gcd(num < 0 ? -num : num, den);
        num /= g;
        den /= g;
    }

    bool is_zero() const { return num == 0; }

    RootRational operator-() const { return {-num, den, rad}; }

    RootRational operator*(const RootRational& o) const {
        if (is_zero() || o.is_zero()) return zero();
        return make(num * o.num, den * o.den, rad * o.rad);
    }

    // Addition requires matching radicands (all coefficients in one channel share one).
    RootRational operator+(const RootRational& o) const {
        if (is_zero()) return o;
        if (o.is_zero()) return *this;
        if (rad != o.rad)
            raise_config("DegenerateCoefficient", "cannot add mismatched radicands");
        return make(num * o.den + o.num * den, den * o.den, rad);
    }

    bool operator==(const RootRational& o) const {
        return num == o.num && den == o.den && (num == 0 || rad == o.rad);
    }

    double value() const {
        return static_cast<double>(num) / static_cast<double>(den) * std::sqrt(static_cast<double>(rad));
    }

    std::string text() const {
        if (num == 0) return "0";
        std::string s = std::to_string(num);
        if (rad != 1) s += "*sqrt(" + std::to_string(rad) + ")";
        if (den != 1) s += "/" + std::to_string(den);
        return s;
    }
};

enum class Meson { Pi0, PiPlus, PiMinus, K0, K0Bar, KPlus, KMinus, Eta8 };
enum class Parent { D0, DPlus, DsPlus };
enum class Ckm { Vcd, Vcs };

inline const char* meson_name(Meson m) {
    switch (m) {
        case Meson::Pi0: return "pi0";
        case Meson::PiPlus: return "pi+";
        case Meson::PiMinus: return "pi-";
        case Meson::K0: return "K0";
        case Meson::K0Bar: return "K0bar";
        case Meson::KPlus: return "K+";
        case Meson::KMinus: return "K-";
        case Meson::Eta8: return "eta8";
    }
    return "?";
}

inline const char* parent_name(Parent p) {
    switch (p) {
        case Parent::D0: return "D0";
        case Parent::DPlus: return "D+";
        case Parent::DsPlus: return "Ds+";
    }
    return "?";
}

inline const char* ckm_name(Ckm c) { return c == Ckm::Vcd ? "Vcd" : "Vcs"; }

inline Meson meson_from_name(const std::string& s) {
    static const std::map<std::string, Meson> table = {
        {"pi0", Meson::Pi0},   {"pi+", Meson::PiPlus}, {"pi-", Meson::PiMinus},
        {"K0", Meson::K0},     {"K0bar", Meson::K0Bar}, {"K+", Meson::KPlus},
        {"K-", Meson::KMinus}, {"eta8", Meson::Eta8}};
    auto it = table.find(s);
    if (it == table.end()) raise_config("UnknownMeson", "no octet member named '" + s + "'");
    return it->second;
}

inline Parent parent_from_name(const std::string& s) {
    static const std::map<std::string, Parent> table = {
        {"D0", Parent::D0}, {"D+", Parent::DPlus}, {"Ds+", Parent::DsPlus}};
    auto it = table.find(s);
    if (it == table.end()) raise_config("UnknownMeson", "no charm triplet member named '" + s + "'");
    return it->second;
}

struct OctetEntry {
    Meson meson;
    RootRational coeff;
};

// Flavor structures of the semileptonic contraction: triplet D_j of parents,
// spurion row O^i carrying the CKM factors, and the pseudoscalar octet P^i_j.
struct FlavorSetup {
    std::array<Parent, 3> D{Parent::D0, Parent::DPlus, Parent::DsPlus};
    std::array<std::pair<bool, Ckm>, 3> O{{{false, Ckm::Vcd}, {true, Ckm::Vcd}, {true, Ckm::Vcs}}};
    std::array<std::array<std::vector<OctetEntry>, 3>, 3> P; // P[i][j]
    std::string overall = "a";
};

inline std::array<std::array<std::vector<OctetEntry>, 3>, 3> octet_matrix() {
    auto r = [](long long n, long long d, long long rad = 1) { return RootRational::make(n, d, rad); };
    std::array<std::array<std::vector<OctetEntry>, 3>, 3> P;
    P[0][0] = {{Meson::Pi0, r(1, 2, 2)}, {Meson::Eta8, r(1, 6, 6)}};
    P[0][1] = {{Meson::PiPlus, r(1, 1)}};
    P[0][2] = {{Meson::KPlus, r(1, 1)}};
    P[1][0] = {{Meson::PiMinus, r(1, 1)}};
    P[1][1] = {{Meson::Pi0, r(-1, 2, 2)}, {Meson::Eta8, r(1, 6, 6)}};
    P[1][2] = {{Meson::K0, r(1, 1)}};
    P[2][0] = {{Meson::KMinus, r(1, 1)}};
    P[2][1] = {{Meson::K0Bar, r(1, 1)}};
    P[2][2] = {{Meson::Eta8, r(-2, 6, 6)}};
    return P;
}

inline FlavorSetup default_setup() {
    FlavorSetup s;
    s.P = octet_matrix();
    return s;
}

struct Amplitude {
    Parent parent;
    Meson daughter;
    std::string lepton_pair = "l+ nu";
    RootRational coefficient;
    Ckm ckm = Ckm::Vcd;
    std::string overall = "a";
};

// Contract O^i P^i_j against the parent index j. Every daughter appearing in
// the octet is reported per parent; zero rows are dropped.
inline std::vector<Amplitude> contract_hamiltonian(const FlavorSetup& setup) {
    std::vector<Amplitude> out;
    for (int j = 0; j < 3; ++j) {
        // amplitude per (meson, ckm symbol); radicands differ across mesons so
        // each (meson, ckm) slot accumulates a single RootRational.
        std::map<std::pair<int, int>, RootRational> acc;
        for (int i = 0; i < 3; ++i) {
            if (!setup.O[static_cast<std::size_t>(i)].first) continue;
            const Ckm sym = setup.O[static_cast<std::size_t>(i)].second;
            for (const auto& e : setup.P[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]) {
                auto key = std::make_pair(static_cast<int>(e.meson), static_cast<int>(sym));
                auto it = acc.find(key);
                if (it == acc.end())
                    acc.emplace(key, e.coeff);
                else
                    it->second = it->second + e.coeff;
            }
        }
        for (const auto& [key, coeff] : acc) {
            if (coeff.is_zero()) continue;
            Amplitude a;
            a.parent = setup.D[static_cast<std::size_t>(j)];
            a.daughter = static_cast<Meson>(key.first);
            a.coefficient = coeff;
            a.ckm = static_cast<Ckm>(key.second);
            a.overall = setup.overall;
            out.push_back(a);
        }
    }
    return out;
}

// Single-channel lookup; returns an explicit zero amplitude for flavor-forbidden
// channels so callers can distinguish "zero" from "no such meson".
inline Amplitude amplitude(const FlavorSetup& setup, Parent parent, Meson daughter) {
    Amplitude a;
    a.parent = parent;
    a.daughter = daughter;
    a.coefficient = RootRational::zero();
    a.overall = setup.overall;
    for (const auto& row : contract_hamiltonian(setup)) {
        if (row.parent == parent && row.daughter == daughter) return row;
    }
    return a;
}

inline Amplitude amplitude(const FlavorSetup& setup, const std::string& parent, const std::string& daughter) {
    return amplitude(setup, parent_from_name(parent), meson_from_name(daughter));
}

} // namespace pm::su3

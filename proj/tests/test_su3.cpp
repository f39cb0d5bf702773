#include <catch2/catch_amalgamated.hpp>

#include <map>
#include <vector>

#include "pm/env/su3.hpp"

using namespace pm::su3;

namespace {

RootRational rr(long long n, long long d, long long r = 1) { return RootRational::make(n, d, r); }

// Independent 9-term contraction: the octet matrix re-entered by hand and the
// index sum written as a plain double loop, kept separate from the library path.
std::map<std::pair<std::string, std::string>, std::pair<RootRational, std::string>> brute_force_table() {
    struct Entry {
        const char* meson;
        RootRational c;
    };
    std::vector<Entry> P[3][3];
    P[0][0] = {{"pi0", rr(1, 2, 2)}, {"eta8", rr(1, 6, 6)}};
    P[0][1] = {{"pi+", rr(1, 1)}};
    P[0][2] = {{"K+", rr(1, 1)}};
    P[1][0] = {{"pi-", rr(1, 1)}};
    P[1][1] = {{"pi0", rr(-1, 2, 2)}, {"eta8", rr(1, 6, 6)}};
    P[1][2] = {{"K0", rr(1, 1)}};
    P[2][0] = {{"K-", rr(1, 1)}};
    P[2][1] = {{"K0bar", rr(1, 1)}};
    P[2][2] = {{"eta8", rr(-2, 6, 6)}};
    const char* parents[3] = {"D0", "D+", "Ds+"};
    const char* ckm[3] = {"", "Vcd", "Vcs"};

    std::map<std::pair<std::string, std::string>, std::pair<RootRational, std::string>> out;
    for (int j = 0; j < 3; ++j)
        for (int i = 0; i < 3; ++i) {
            if (i == 0) continue; // O[0] = 0
            for (const auto& e : P[i][j]) {
                auto key = std::make_pair(std::string(parents[j]), std::string(e.meson));
                auto it = out.find(key);
                if (it == out.end())
                    out.emplace(key, std::make_pair(e.c, std::string(ckm[i])));
                else
                    it->second.first = it->second.first + e.c;
            }
        }
    for (auto it = out.begin(); it != out.end();)
        it = it->second.first.is_zero() ? out.erase(it) : std::next(it);
    return out;
}

} // namespace

TEST_CASE("exact coefficient arithmetic normalizes") {
    CHECK(rr(2, 4) == rr(1, 2));
    CHECK(rr(1, 1, 8) == rr(2, 1, 2));
    CHECK(rr(1, -2) == rr(-1, 2));
    CHECK((rr(1, 2, 2) * rr(1, 2, 2)) == rr(1, 2));
    CHECK((rr(1, 6, 6) + rr(1, 6, 6)) == rr(1, 3, 6));
    CHECK((rr(1, 2) + rr(-1, 2)).is_zero());
    CHECK(rr(-2, 6, 6).value() == Catch::Approx(-2.0 / std::sqrt(6.0)));
}

TEST_CASE("octet matrix is traceless per meson") {
    const auto P = octet_matrix();
    std::map<int, RootRational> trace;
    for (int i = 0; i < 3; ++i)
        for (const auto& e : P[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)]) {
            auto it = trace.find(static_cast<int>(e.meson));
            if (it == trace.end())
                trace.emplace(static_cast<int>(e.meson), e.coeff);
            else
                it->second = it->second + e.coeff;
        }
    for (const auto& [meson, c] : trace) CHECK(c.is_zero());
}

TEST_CASE("contraction reproduces the closed-form channel table") {
    const auto rows = contract_hamiltonian(default_setup());
    REQUIRE(rows.size() == 7);

    auto find = [&](Parent p, Meson m) -> const Amplitude& {
        for (const auto& r : rows)
            if (r.parent == p && r.daughter == m) return r;
        FAIL("missing channel");
        return rows.front();
    };

    CHECK(find(Parent::D0, Meson::PiMinus).coefficient == rr(1, 1));
    CHECK(find(Parent::D0, Meson::PiMinus).ckm == Ckm::Vcd);
    CHECK(find(Parent::D0, Meson::KMinus).coefficient == rr(1, 1));
    CHECK(find(Parent::D0, Meson::KMinus).ckm == Ckm::Vcs);
    CHECK(find(Parent::DPlus, Meson::Pi0).coefficient == rr(-1, 2, 2));
    CHECK(find(Parent::DPlus, Meson::Pi0).ckm == Ckm::Vcd);
    CHECK(find(Parent::DPlus, Meson::Eta8).coefficient == rr(1, 6, 6));
    CHECK(find(Parent::DPlus, Meson::K0Bar).coefficient == rr(1, 1));
    CHECK(find(Parent::DPlus, Meson::K0Bar).ckm == Ckm::Vcs);
    CHECK(find(Parent::DsPlus, Meson::K0).coefficient == rr(1, 1));
    CHECK(find(Parent::DsPlus, Meson::K0).ckm == Ckm::Vcd);
    CHECK(find(Parent::DsPlus, Meson::Eta8).coefficient == rr(-2, 6, 6));
    CHECK(find(Parent::DsPlus, Meson::Eta8).ckm == Ckm::Vcs);

    for (const auto& r : rows) {
        CHECK(r.lepton_pair == "l+ nu");
        CHECK(r.overall == "a");
    }
}

TEST_CASE("contraction equals the brute-force index sum") {
    const auto expected = brute_force_table();
    const auto rows = contract_hamiltonian(default_setup());
    REQUIRE(rows.size() == expected.size());
    for (const auto& r : rows) {
        auto key = std::make_pair(std::string(parent_name(r.parent)), std::string(meson_name(r.daughter)));
        auto it = expected.find(key);
        REQUIRE(it != expected.end());
        CHECK(r.coefficient == it->second.first);
        CHECK(std::string(ckm_name(r.ckm)) == it->second.second);
    }
}

TEST_CASE("single-channel lookups") {
    const auto setup = default_setup();
    CHECK(amplitude(setup, "D0", "pi-").coefficient == rr(1, 1));
    CHECK(amplitude(setup, "D0", "pi-").ckm == Ckm::Vcd);
    CHECK(amplitude(setup, "D+", "K0bar").coefficient == rr(1, 1));
    CHECK(amplitude(setup, "D+", "K0bar").ckm == Ckm::Vcs);
    CHECK(amplitude(setup, "D0", "eta8").coefficient.is_zero());
    CHECK(amplitude(setup, "D0", "K+").coefficient.is_zero());
    CHECK_THROWS_AS(amplitude(setup, "D0", "pi++"), pm::Error);
    try {
        amplitude(setup, "D0", "rho0");
    } catch (const pm::Error& e) {
        CHECK(e.kind() == "UnknownMeson");
    }
}

TEST_CASE("switching off one CKM symbol prunes the table") {
    auto setup = default_setup();
    setup.O[1].first = false; // Vcd off
    CHECK(contract_hamiltonian(setup).size() == 3);

    setup = default_setup();
    setup.O[2].first = false; // Vcs off
    CHECK(contract_hamiltonian(setup).size() == 4);
}

TEST_CASE("eta8 phase flip leaves squared strengths invariant") {
    auto flipped = default_setup();
    for (auto& row : flipped.P)
        for (auto& cell : row)
            for (auto& e : cell)
                if (e.meson == Meson::Eta8) e.coeff = -e.coeff;

    auto strength = [](const std::vector<Amplitude>& rows) {
        std::map<std::string, double> s;
        for (const auto& r : rows) {
            const double c = r.coefficient.value();
            s[parent_name(r.parent)] += c * c;
        }
        return s;
    };
    const auto a = strength(contract_hamiltonian(default_setup()));
    const auto b = strength(contract_hamiltonian(flipped));
    REQUIRE(a.size() == b.size());
    for (const auto& [p, v] : a) CHECK(v == Catch::Approx(b.at(p)).epsilon(1e-14));
}

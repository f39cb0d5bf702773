#pragma once

#include <cmath>
#include <string>

#include "pm/errors.hpp"

namespace pm::tde {

constexpr double kG = 6.67430e-11;        // m^3 kg^-1 s^-2
constexpr double kC = 2.99792458e8;       // m/s
constexpr double kMSun = 1.98892e30;      // kg
constexpr double kRSun = 6.957e8;         // m

struct TdeConfig {
    double M_bh = 1e6 * kMSun;
    double M_star = kMSun;
    double R_star = kRSun;
    double spin = 0.9;                    // dimensionless a_bullet, fiducial guess
    double inclination = M_PI / 3.0;      // radians, fiducial guess
    double eccentricity = 0.98;           // 1 - 2 R_star/r_t at the defaults, so da/a = 1
    double penetration = 1.0;             // beta
    double accumulation_orbits = 1.7529069; // reproduces theta = 20.3 deg at the defaults
    double Mdot_fb = 3.31e22;             // kg/s
};

struct PrecessionReport {
    double r_t = 0, r_g = 0, r_p = 0;     // meters
    double denergy = 0;                   // J/kg
    double da_over_a = 0;
    double dw_S = 0, dw_SO = 0, dOmega_LT = 0; // radians/orbit
    double theta = 0;                     // radians
    double v_rel_over_c = 0;
    double eps_diss = 0;                  // J/kg
    double Edot = 0;                      // W
};

inline void validate(const TdeConfig& c) {
    if (!(c.M_bh > 0 && c.M_star > 0 && c.R_star > 0))
        raise_config("MissingField", "masses and radius must be positive");
    if (!(std::abs(c.spin) <= 1.0))
        raise_config("MissingField", "spin must satisfy |a| <= 1");
    if (c.eccentricity < 0)
        raise_config("MissingField", "eccentricity must be nonnegative");
    if (!(c.penetration > 0))
        raise_config("MissingField", "penetration must be positive");
    if (!(c.Mdot_fb >= 0))
        raise_config("MissingField", "fallback rate must be nonnegative");
}

// Closed-form post-Newtonian chain for the debris-stream nozzle crossing.
// The debris semi-major axis follows from the pericenter and eccentricity,
// a = r_p/(1-e); the spin terms are evaluated exactly as printed even though
// their dimensional form is nonstandard, and vanish at spin = 0.
inline PrecessionReport precession_chain(const TdeConfig& c) {
    validate(c);
    if (c.eccentricity >= 1.0)
        raise_runtime("UnboundOrbit", "eccentricity " + std::to_string(c.eccentricity) +
                                          " >= 1 makes (1-e^2) terms undefined");
    PrecessionReport r;
    const double GM = kG * c.M_bh;
    r.r_t = c.R_star * std::cbrt(c.M_bh / c.M_star);
    r.r_g = GM / (kC * kC);
    r.r_p = r.r_t / c.penetration;
    r.denergy = GM * c.R_star / (r.r_t * r.r_t);

    const double e = c.eccentricity;
    const double a = r.r_p / (1.0 - e);
    const double one_m_e2 = 1.0 - e * e;
    const double eps_orbit = GM / (2.0 * a);
    r.da_over_a = r.denergy / eps_orbit;

    r.dw_S = 6.0 * M_PI * GM / (kC * kC * a * one_m_e2);
    const double c3 = kC * kC * kC;
    const double cosi = std::cos(c.inclination);
    r.dw_SO = 4.0 * M_PI * std::pow(GM, 1.5) * c.spin * cosi /
              (c3 * std::pow(a, 2.5) * std::pow(one_m_e2, 1.5));
    r.dOmega_LT = 2.0 * M_PI * GM * GM * c.spin * cosi /
                  (c3 * a * a * a * std::pow(one_m_e2, 1.5));

    const double dwS_diff = r.dw_S * r.da_over_a;
    const double dwSO_diff = r.dw_SO * r.da_over_a;
    const double dLT_diff = r.dOmega_LT * r.da_over_a;
    const double per_orbit = std::sqrt((dwS_diff + dwSO_diff) * (dwS_diff + dwSO_diff) +
                                       dLT_diff * dLT_diff * std::sin(c.inclination) * std::sin(c.inclination));
    r.theta = c.accumulation_orbits * per_orbit;

    r.v_rel_over_c = 2.0 * std::sqrt(2.0 * GM / (r.r_p * kC * kC)) * std::sin(r.theta / 2.0);
    const double v_rel = r.v_rel_over_c * kC;
    r.eps_diss = 0.5 * v_rel * v_rel;
    r.Edot = c.Mdot_fb * r.eps_diss;
    if (!std::isfinite(r.Edot))
        raise_runtime("UnboundOrbit", "chain produced a non-finite dissipation rate");
    return r;
}

inline double map_to_physical(double f, const PrecessionReport& report) {
    if (!(f >= 0.0 && f <= 1.0))
        raise_config("MissingField", "thermalization fraction must lie in [0,1]");
    return f * report.Edot;
}

// Dissipation per unit mass without differential precession, for the
// enhancement-ratio diagnostic against the constant 5.93e13 J/kg.
constexpr double kBaselineEpsDiss = 5.93e13;

} // namespace pm::tde

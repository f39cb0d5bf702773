#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "pm/errors.hpp"

namespace pm::sph {

struct SphConfig {
    double gamma = 5.0 / 3.0;
    double rho0 = 1.0;
    double u0 = 0.05;
    double v0 = 1.0;
    double dx = 0.6;
    double h = -1.0;                 // <= 0 means the paper default 1.2*dx
    double cfl = 0.005;
    double theta = 20.3 * M_PI / 180.0;
    double stop_fraction = 0.05;

    int ribbon_length = 40;          // particles along the ribbon
    int ribbon_width = 10;           // particles across the ribbon
    double offset = 7.1;             // inner-face set-off from the collision plane, in dx
    double alpha_visc = 1.0;
    double beta_visc = 2.0;
    double max_time = 80.0;
    long max_steps = 400000;
    int smooth_window = 25;
    long record_every = 10;
};

struct SphSample {
    long step = 0;
    double time = 0, U = 0, kinetic = 0, total = 0;
};

struct SphResult {
    double f = 0.0;
    double energy_drift = 0.0;
    std::vector<SphSample> u_series;
    double Edot_SPH = 0.0;           // filled by the physical mapping stage
    double K_rel = 0.0;
    double delta_U = 0.0;
    long steps = 0;
    double stop_time = 0.0;
    bool stopped_on_saturation = false;
};

namespace detail {

// 2D cubic spline, normalization 10/(7 pi h^2).
inline double kernel_w(double q, double sigma) {
    if (q < 1.0) return sigma * (1.0 - 1.5 * q * q + 0.75 * q * q * q);
    if (q < 2.0) {
        const double t = 2.0 - q;
        return sigma * 0.25 * t * t * t;
    }
    return 0.0;
}

inline double kernel_dwdq(double q, double sigma) {
    if (q < 1.0) return sigma * (-3.0 * q + 2.25 * q * q);
    if (q < 2.0) {
        const double t = 2.0 - q;
        return sigma * (-0.75 * t * t);
    }
    return 0.0;
}

struct CellList {
    double cell = 1.0, x0 = 0.0, y0 = 0.0;
    int nx = 1, ny = 1;
    std::vector<std::vector<int>> cells;

    void build(const std::vector<double>& x, const std::vector<double>& y, double radius) {
        cell = radius;
        const auto [xmin, xmax] = std::minmax_element(x.begin(), x.end());
        const auto [ymin, ymax] = std::minmax_element(y.begin(), y.end());
        x0 = *xmin;
        y0 = *ymin;
        nx = std::max(1, static_cast<int>((*xmax - x0) / cell) + 1);
        ny = std::max(1, static_cast<int>((*ymax - y0) / cell) + 1);
        cells.assign(static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny), {});
        for (int i = 0; i < static_cast<int>(x.size()); ++i) {
            const int cx = std::min(nx - 1, static_cast<int>((x[static_cast<std::size_t>(i)] - x0) / cell));
            const int cy = std::min(ny - 1, static_cast<int>((y[static_cast<std::size_t>(i)] - y0) / cell));
            cells[static_cast<std::size_t>(cy) * static_cast<std::size_t>(nx) + static_cast<std::size_t>(cx)].push_back(i);
        }
    }

    template <class F>
    void for_pairs(const std::vector<double>& x, const std::vector<double>& y, double r2max, F&& f) const {
        for (int cy = 0; cy < ny; ++cy)
            for (int cx = 0; cx < nx; ++cx) {
                const auto& base = cells[static_cast<std::size_t>(cy) * static_cast<std::size_t>(nx) + static_cast<std::size_t>(cx)];
                for (int dcy = 0; dcy <= 1; ++dcy)
                    for (int dcx = (dcy == 0 ? 0 : -1); dcx <= 1; ++dcx) {
                        const int ox = cx + dcx, oy = cy + dcy;
                        if (ox < 0 || ox >= nx || oy >= ny) continue;
                        const auto& other = cells[static_cast<std::size_t>(oy) * static_cast<std::size_t>(nx) + static_cast<std::size_t>(ox)];
                        const bool same = (dcx == 0 && dcy == 0);
                        for (std::size_t a = 0; a < base.size(); ++a) {
                            const int i = base[a];
                            for (std::size_t b = same ? a + 1 : 0; b < other.size(); ++b) {
                                const int j = other[b];
                                const double ddx = x[static_cast<std::size_t>(i)] - x[static_cast<std::size_t>(j)];
                                const double ddy = y[static_cast<std::size_t>(i)] - y[static_cast<std::size_t>(j)];
                                const double r2 = ddx * ddx + ddy * ddy;
                                if (r2 < r2max) f(i, j, ddx, ddy, r2);
                            }
                        }
                    }
            }
    }
};

} // namespace detail

class RibbonSim {
public:
    explicit RibbonSim(const SphConfig& cfg) : c_(cfg) {
        if (!(c_.gamma > 1.0)) raise_config("MissingField", "gamma must exceed 1");
        if (!(c_.cfl > 0.0)) raise_config("MissingField", "cfl must be positive");
        if (!(c_.dx > 0.0)) raise_config("MissingField", "dx must be positive");
        if (!(c_.rho0 > 0.0) || !(c_.u0 > 0.0)) raise_config("MissingField", "rho0 and u0 must be positive");
        if (c_.h <= 0.0) c_.h = 1.2 * c_.dx;
        init_particles();
    }

    // Two mirror-image ribbons stacked across the y=0 collision plane, with
    // velocities tilted by +-theta/2 so they converge at the full angle theta
    // (relative speed 2 v0 sin(theta/2), tangential components co-moving, as
    // for two stream segments crossing at theta). theta=0 degenerates to
    // parallel co-moving ribbons with no relative motion. The inner faces
    // start offset*dx off the plane, kernel-separated at every angle; offset
    // doubles as the free-flight approach distance before the crossing.
    void init_particles() {
        const double a = c_.theta / 2.0;
        const double ca = std::cos(a), sa = std::sin(a);
        const int len = c_.ribbon_length, wid = c_.ribbon_width;
        m_ = c_.rho0 * c_.dx * c_.dx;
        for (int side = 0; side < 2; ++side) {
            const double sign = side == 0 ? 1.0 : -1.0; // +1: upper ribbon moving downward
            for (int i = 0; i < len; ++i)
                for (int j = 0; j < wid; ++j) {
                    x_.push_back((static_cast<double>(i) + 0.5 - 0.5 * static_cast<double>(len)) * c_.dx);
                    y_.push_back(sign * (c_.offset + j) * c_.dx);
                    vx_.push_back(c_.v0 * ca);
                    vy_.push_back(-sign * c_.v0 * sa);
                    u_.push_back(c_.u0);
                }
        }
        n_ = static_cast<int>(x_.size());
        rho_.assign(static_cast<std::size_t>(n_), c_.rho0);
        P_.assign(static_cast<std::size_t>(n_), 0.0);
        cs_.assign(static_cast<std::size_t>(n_), 0.0);
        ax_.assign(static_cast<std::size_t>(n_), 0.0);
        ay_.assign(static_cast<std::size_t>(n_), 0.0);
        du_.assign(static_cast<std::size_t>(n_), 0.0);
        bal_.assign(static_cast<std::size_t>(n_), 1.0);
    }

    SphResult run() {
        SphResult res;
        // Kinetic energy in the drift-free frame: the tangential components
        // cancel against the center-of-momentum drift, leaving the normal
        // relative motion v0 sin(theta/2) per particle.
        const double vn = c_.v0 * std::sin(c_.theta / 2.0);
        res.K_rel = 0.5 * m_ * static_cast<double>(n_) * vn * vn;

        compute_forces();
        const double E0 = total_energy();
        const double U0 = internal_energy();
        double Emin = E0, Emax = E0;
        record(res, 0, 0.0);

        double t = 0.0;
        double dt0 = -1.0;
        double prevU = U0;
        bool armed = false;
        std::vector<double> rate_window;
        double peak_rate = 0.0;
        const double rate_floor = 1e-6 * (U0 + res.K_rel) / std::max(1.0, c_.max_time);
        // The saturation stop arms only once U has risen a fixed fraction of
        // K_rel above its initial value, so pre-collision transients (edge
        // relaxation, free-flight venting) cannot set a spurious peak rate
        // and end the run before the collision heating.
        const double arm_rise = 0.05 * res.K_rel;

        long step = 0;
        for (step = 1; step <= c_.max_steps && t < c_.max_time; ++step) {
            const double dt = c_.cfl * c_.h / vmax();
            if (dt0 < 0) dt0 = dt;
            if (dt < 1e-12 * dt0)
                raise_runtime("TimestepUnderflow", "dt " + std::to_string(dt) + " at step " + std::to_string(step));

            // kick-drift-kick
            for (int i = 0; i < n_; ++i) {
                const auto k = static_cast<std::size_t>(i);
                vx_[k] += 0.5 * dt * ax_[k];
                vy_[k] += 0.5 * dt * ay_[k];
                u_[k] = std::max(1e-12 * c_.u0, u_[k] + 0.5 * dt * du_[k]);
                x_[k] += dt * vx_[k];
                y_[k] += dt * vy_[k];
            }
            compute_forces();
            for (int i = 0; i < n_; ++i) {
                const auto k = static_cast<std::size_t>(i);
                vx_[k] += 0.5 * dt * ax_[k];
                vy_[k] += 0.5 * dt * ay_[k];
                u_[k] = std::max(1e-12 * c_.u0, u_[k] + 0.5 * dt * du_[k]);
            }
            t += dt;

            const double U = internal_energy();
            const double E = total_energy();
            if (!std::isfinite(U) || !std::isfinite(E))
                raise_runtime("ParticleBlowup", "non-finite energy at step " + std::to_string(step));
            Emin = std::min(Emin, E);
            Emax = std::max(Emax, E);

            rate_window.push_back((U - prevU) / dt);
            prevU = U;
            if (static_cast<int>(rate_window.size()) > c_.smooth_window)
                rate_window.erase(rate_window.begin());
            double sm = 0.0;
            for (double v : rate_window) sm += v;
            sm /= static_cast<double>(rate_window.size());
            if (U - U0 > arm_rise) armed = true;
            if (armed) peak_rate = std::max(peak_rate, sm);

            if (step % c_.record_every == 0) record(res, step, t);

            if (armed && static_cast<int>(rate_window.size()) == c_.smooth_window &&
                peak_rate > rate_floor && sm < c_.stop_fraction * peak_rate) {
                res.stopped_on_saturation = true;
                break;
            }
        }
        record(res, step, t);

        res.steps = step;
        res.stop_time = t;
        res.delta_U = internal_energy() - U0;
        res.f = res.K_rel > 1e-12 * (U0 + 1.0) ? std::clamp(res.delta_U / res.K_rel, 0.0, 1.0) : 0.0;
        res.energy_drift = std::abs(E0) > 0 ? (Emax - Emin) / std::abs(E0) : 0.0;
        return res;
    }

private:
    void record(SphResult& res, long step, double t) const {
        SphSample s;
        s.step = step;
        s.time = t;
        s.U = internal_energy();
        s.kinetic = kinetic_energy();
        s.total = s.U + s.kinetic;
        res.u_series.push_back(s);
    }

    double vmax() const {
        double v = 1e-12;
        for (int i = 0; i < n_; ++i) {
            const auto k = static_cast<std::size_t>(i);
            v = std::max(v, cs_[k] + std::sqrt(vx_[k] * vx_[k] + vy_[k] * vy_[k]));
        }
        return v;
    }

    double internal_energy() const {
        double U = 0.0;
        for (double ui : u_) U += m_ * ui;
        return U;
    }

    double kinetic_energy() const {
        double K = 0.0;
        for (int i = 0; i < n_; ++i) {
            const auto k = static_cast<std::size_t>(i);
            K += 0.5 * m_ * (vx_[k] * vx_[k] + vy_[k] * vy_[k]);
        }
        return K;
    }

    double total_energy() const { return internal_energy() + kinetic_energy(); }

    void compute_forces() {
        const double h = c_.h;
        const double sigma = 10.0 / (7.0 * M_PI * h * h);
        const double r2max = 4.0 * h * h;
        cells_.build(x_, y_, 2.0 * h);

        for (int i = 0; i < n_; ++i) rho_[static_cast<std::size_t>(i)] = m_ * detail::kernel_w(0.0, sigma);
        cells_.for_pairs(x_, y_, r2max, [&](int i, int j, double, double, double r2) {
            const double w = detail::kernel_w(std::sqrt(r2) / h, sigma);
            rho_[static_cast<std::size_t>(i)] += m_ * w;
            rho_[static_cast<std::size_t>(j)] += m_ * w;
        });

        for (int i = 0; i < n_; ++i) {
            const auto k = static_cast<std::size_t>(i);
            if (!std::isfinite(rho_[k]) || rho_[k] <= 0)
                raise_runtime("ParticleBlowup", "bad density on particle " + std::to_string(i));
            P_[k] = (c_.gamma - 1.0) * rho_[k] * u_[k];
            cs_[k] = std::sqrt(c_.gamma * (c_.gamma - 1.0) * u_[k]);
        }

        std::vector<double> divv(static_cast<std::size_t>(n_), 0.0), curlv(static_cast<std::size_t>(n_), 0.0);
        cells_.for_pairs(x_, y_, r2max, [&](int i, int j, double ddx, double ddy, double r2) {
            const auto ki = static_cast<std::size_t>(i), kj = static_cast<std::size_t>(j);
            const double r = std::sqrt(r2);
            if (r < 1e-12) return;
            const double gw = detail::kernel_dwdq(r / h, sigma) / (h * r);
            const double gx = gw * ddx, gy = gw * ddy;
            const double vijx = vx_[ki] - vx_[kj], vijy = vy_[ki] - vy_[kj];
            const double dv = vijx * gx + vijy * gy;
            const double cv = vijx * gy - vijy * gx;
            divv[ki] -= m_ * dv / rho_[ki];
            divv[kj] -= m_ * dv / rho_[kj];
            curlv[ki] -= m_ * cv / rho_[ki];
            curlv[kj] -= m_ * cv / rho_[kj];
        });
        for (int i = 0; i < n_; ++i) {
            const auto k = static_cast<std::size_t>(i);
            const double ad = std::abs(divv[k]), ac = std::abs(curlv[k]);
            bal_[k] = ad / (ad + ac + 1e-4 * cs_[k] / h);
        }

        std::fill(ax_.begin(), ax_.end(), 0.0);
        std::fill(ay_.begin(), ay_.end(), 0.0);
        std::fill(du_.begin(), du_.end(), 0.0);
        cells_.for_pairs(x_, y_, r2max, [&](int i, int j, double ddx, double ddy, double r2) {
            const auto ki = static_cast<std::size_t>(i), kj = static_cast<std::size_t>(j);
            const double r = std::sqrt(r2);
            if (r < 1e-12) return;
            const double gw = detail::kernel_dwdq(r / h, sigma) / (h * r);
            const double gx = gw * ddx, gy = gw * ddy;
            const double vijx = vx_[ki] - vx_[kj], vijy = vy_[ki] - vy_[kj];
            double piij = 0.0;
            const double vdotr = vijx * ddx + vijy * ddy;
            if (vdotr < 0.0) {
                const double mu = h * vdotr / (r2 + 0.01 * h * h) * 0.5 * (bal_[ki] + bal_[kj]);
                const double cbar = 0.5 * (cs_[ki] + cs_[kj]);
                const double rbar = 0.5 * (rho_[ki] + rho_[kj]);
                piij = (-c_.alpha_visc * cbar * mu + c_.beta_visc * mu * mu) / rbar;
            }
            const double common = P_[ki] / (rho_[ki] * rho_[ki]) + P_[kj] / (rho_[kj] * rho_[kj]) + piij;
            ax_[ki] -= m_ * common * gx;
            ay_[ki] -= m_ * common * gy;
            ax_[kj] += m_ * common * gx;
            ay_[kj] += m_ * common * gy;
            const double heat = 0.5 * m_ * common * (vijx * gx + vijy * gy);
            du_[ki] += heat;
            du_[kj] += heat;
        });
    }

    SphConfig c_;
    int n_ = 0;
    double m_ = 0;
    std::vector<double> x_, y_, vx_, vy_, u_, rho_, P_, cs_, ax_, ay_, du_, bal_;
    detail::CellList cells_;
};

inline SphResult run_sph_ribbon(const SphConfig& cfg) {
    RibbonSim sim(cfg);
    return sim.run();
}

} // namespace pm::sph

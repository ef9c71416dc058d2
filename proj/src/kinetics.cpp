#include "vpetabc/kinetics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "vpetabc/common.hpp"

namespace vpetabc {

namespace {

constexpr double grid_tolerance = 1e-9;

// m_k = ∫_0^h w^k e^{-a w} dw for k = 0, 1, 2.
struct KernelMoments {
    double m0, m1, m2;
};

KernelMoments kernel_moments(double a, double h) {
    const double x = a * h;
    if (std::abs(x) < 0.5) {
        // Alternating series, 24 terms is far below double rounding for |x| < 0.5.
        KernelMoments m{0, 0, 0};
        double term = 1.0;  // (-x)^j / j!
        for (int j = 0; j < 24; ++j) {
            m.m0 += term / (j + 1);
            m.m1 += term / (j + 2);
            m.m2 += term / (j + 3);
            term *= -x / (j + 1);
        }
        return {m.m0 * h, m.m1 * h * h, m.m2 * h * h * h};
    }
    const double e = std::exp(-x);
    return {
        -std::expm1(-x) / a,
        (1.0 - e * (1.0 + x)) / (a * a),
        (2.0 - e * (2.0 + 2.0 * x + x * x)) / (a * a * a),
    };
}

// Exact convolutions of e^{-a t} and t·e^{-a t} with the piecewise-linear
// interpolant of the input, advanced one node at a time.
struct ExpConvolver {
    double decay, c0, c1;       // I_{n+1} = decay·I_n + c0·f_n + c1·f_{n+1}
    double d0, d1, step;        // J_{n+1} = decay·(J_n + step·I_n) + d0·f_n + d1·f_{n+1}

    ExpConvolver(double a, double h) : step(h) {
        const auto m = kernel_moments(a, h);
        decay = std::exp(-a * h);
        c0 = m.m1 / h;
        c1 = m.m0 - m.m1 / h;
        d0 = m.m2 / h;
        d1 = m.m1 - m.m2 / h;
    }
};

double snap(double v) {
    const double r = std::round(v);
    return std::abs(v - r) < grid_tolerance ? r : v;
}

} // namespace

FrameSchedule::FrameSchedule(std::vector<double> start, std::vector<double> duration)
    : start_(std::move(start)), duration_(std::move(duration)) {
    if (start_.size() != duration_.size()) throw config_error("frame schedule: start/duration length mismatch");
    if (start_.empty()) throw config_error("frame schedule: no frames");
    for (std::size_t f = 0; f < start_.size(); ++f) {
        if (!(duration_[f] > 0) || !std::isfinite(duration_[f]))
            throw config_error("frame schedule: frame " + std::to_string(f) + " has non-positive duration");
        if (!(start_[f] >= 0) || !std::isfinite(start_[f]))
            throw config_error("frame schedule: frame " + std::to_string(f) + " starts before t = 0");
        if (f > 0 && start_[f] < end(f - 1) - grid_tolerance)
            throw config_error("frame schedule: frame " + std::to_string(f) + " overlaps its predecessor");
    }
}

FrameSchedule FrameSchedule::from_durations(std::span<const double> durations) {
    std::vector<double> start(durations.size());
    double t = 0.0;
    for (std::size_t f = 0; f < durations.size(); ++f) {
        start[f] = t;
        t += durations[f];
    }
    return {std::move(start), std::vector<double>(durations.begin(), durations.end())};
}

FrameSchedule FrameSchedule::uniform(std::size_t count, double duration) {
    std::vector<double> d(count, duration);
    return from_durations(d);
}

double FrameSchedule::min_duration() const {
    return *std::min_element(duration_.begin(), duration_.end());
}

FineGrid::FineGrid(double step, double t_end) : step_(step) {
    if (!(step > 0) || !std::isfinite(step)) throw config_error("fine grid: step must be positive");
    if (!(t_end >= 0) || !std::isfinite(t_end)) throw config_error("fine grid: t_end must be non-negative");
    nodes_ = static_cast<std::size_t>(std::ceil(snap(t_end / step))) + 1;
}

FineGrid FineGrid::covering(const FrameSchedule& schedule, double step) {
    if (schedule.size() && step > schedule.min_duration() + grid_tolerance)
        throw config_error("fine grid: step exceeds the shortest frame duration");
    return {step, schedule.last_end()};
}

double feng_value(const FengParams& p, double t) {
    const double e1 = std::exp(-p.kappa1 * t);
    return p.beta1 * t * e1 + p.beta2 * (std::exp(-p.kappa2 * t) - e1) + p.beta3 * (std::exp(-p.kappa3 * t) - e1);
}

Curve feng_input(const FengParams& p, const FineGrid& grid) {
    Curve c(grid.nodes());
    c[0] = 0.0;
    for (std::size_t i = 1; i < c.size(); ++i) c[i] = feng_value(p, grid.time(i));
    return c;
}

double gamma_variate(double tD, double tP, double alpha, double t) {
    if (!(tP > tD) || !(alpha > 0))
        throw shape_error("gamma variate requires tP > tD and alpha > 0");
    if (t <= tD) return 0.0;
    const double x = (t - tD) / (tP - tD);
    return std::exp(alpha * (std::log(x) + 1.0 - x));
}

FrameAverager::FrameAverager(const FineGrid& grid, const FrameSchedule& schedule) {
    const double h = grid.step();
    const std::size_t last = grid.nodes() - 1;
    first_.resize(schedule.size());
    count_.resize(schedule.size());
    offset_.resize(schedule.size());
    for (std::size_t f = 0; f < schedule.size(); ++f) {
        const double a = schedule.start(f);
        const double b = schedule.end(f);
        const double ka = snap(a / h);
        const double kb = snap(b / h);
        const auto k0 = static_cast<std::size_t>(std::floor(ka));
        const auto k1 = static_cast<std::size_t>(std::ceil(kb));
        if (k1 > last)
            throw data_error("frame " + std::to_string(f) + " extends beyond the fine grid (t_end = " +
                             std::to_string(grid.t_end()) + ")");
        std::vector<double> w(k1 - k0 + 1, 0.0);
        for (std::size_t k = k0; k < k1; ++k) {
            const double u = std::max(a, grid.time(k));
            const double v = std::min(b, grid.time(k + 1));
            if (v <= u) continue;
            const double su = (u - grid.time(k)) / h;
            const double sv = (v - grid.time(k)) / h;
            const double half = 0.5 * (v - u) / (b - a);
            w[k - k0] += half * ((1.0 - su) + (1.0 - sv));
            w[k - k0 + 1] += half * (su + sv);
        }
        first_[f] = k0;
        count_[f] = w.size();
        offset_[f] = weight_.size();
        weight_.insert(weight_.end(), w.begin(), w.end());
        nodes_needed_ = std::max(nodes_needed_, k1 + 1);
    }
}

Tac FrameAverager::apply(std::span<const double> curve) const {
    if (curve.size() < nodes_needed_) throw data_error("curve shorter than the frames it is averaged over");
    Tac out(frames());
    apply(curve, out.data());
    return out;
}

Tac frame_average(std::span<const double> curve, const FineGrid& grid, const FrameSchedule& schedule) {
    if (curve.size() != grid.nodes()) throw data_error("curve length does not match the fine grid");
    return FrameAverager(grid, schedule).apply(curve);
}

void tissue_2tcm(const TwoTcmParams& p, std::span<const double> plasma, double step, std::span<double> out) {
    const std::size_t n = std::min(plasma.size(), out.size());
    if (n == 0) return;
    if (p.K1 == 0.0) {
        std::fill_n(out.begin(), n, 0.0);
        return;
    }
    const double sum = p.k2 + p.k3 + p.k4;
    const double disc = std::max(sum * sum - 4.0 * p.k2 * p.k4, 0.0);
    const double root = std::sqrt(disc);
    const double fast = 0.5 * (sum + root);
    const double slow = fast > 0 ? 2.0 * p.k2 * p.k4 / (sum + root) : 0.0;
    const double a = p.k3 + p.k4;

    if (fast - slow <= 1e-12 * (fast + slow)) {
        // Repeated root: h(t) = K1·(1 + (k3 + k4 - θ)·t)·e^{-θt}.
        const double theta = 0.5 * sum;
        const ExpConvolver c(theta, step);
        const double w = a - theta;
        double I = 0.0, J = 0.0;
        out[0] = 0.0;
        for (std::size_t i = 0; i + 1 < n; ++i) {
            const double J_next = c.decay * (J + step * I) + c.d0 * plasma[i] + c.d1 * plasma[i + 1];
            I = c.decay * I + c.c0 * plasma[i] + c.c1 * plasma[i + 1];
            J = J_next;
            out[i + 1] = p.K1 * (I + w * J);
        }
        return;
    }

    const ExpConvolver cs(slow, step);
    const ExpConvolver cf(fast, step);
    const double ws = p.K1 * (a - slow) / (fast - slow);
    const double wf = p.K1 * (fast - a) / (fast - slow);
    double Is = 0.0, If = 0.0;
    out[0] = 0.0;
    for (std::size_t i = 0; i + 1 < n; ++i) {
        Is = cs.decay * Is + cs.c0 * plasma[i] + cs.c1 * plasma[i + 1];
        If = cf.decay * If + cf.c0 * plasma[i] + cf.c1 * plasma[i + 1];
        out[i + 1] = ws * Is + wf * If;
    }
}

Tac simulate_2tcm(const TwoTcmParams& p, std::span<const double> plasma, const FineGrid& grid,
                  const FrameSchedule& schedule, std::span<const double> whole_blood) {
    if (plasma.size() != grid.nodes()) throw data_error("input curve length does not match the fine grid");
    if (!whole_blood.empty() && whole_blood.size() != grid.nodes())
        throw data_error("whole-blood curve length does not match the fine grid");
    const auto blood = whole_blood.empty() ? plasma : whole_blood;
    std::vector<double> fine(grid.nodes());
    tissue_2tcm(p, plasma, grid.step(), fine);
    for (std::size_t i = 0; i < fine.size(); ++i) fine[i] = (1.0 - p.Vb) * fine[i] + p.Vb * blood[i];
    return frame_average(fine, grid, schedule);
}

namespace {

// One Crank–Nicolson step; shared by the lp-ntPET and MRTM paths so that
// gamma = 0 reproduces MRTM bit for bit.
inline double cn_step(double c, double rate, double rate_next, double R1, double k2, double cr, double cr_next,
                      double h) {
    const double half = 0.5 * h;
    return (c * (1.0 - half * rate) + R1 * (cr_next - cr) + half * k2 * (cr + cr_next)) / (1.0 + half * rate_next);
}

} // namespace

void lpntpet_curve(const LpNtPetParams& p, std::span<const double> reference, double step, std::span<double> out) {
    const std::size_t n = std::min(reference.size(), out.size());
    if (n == 0) return;
    const bool valid_shape = p.tP > p.tD && p.alpha > 0;
    if (p.gamma == 0.0 && !valid_shape) {
        // MRTM rows carry sentinel shape parameters.
        mrtm_curve(p.R1, p.k2, p.k2a, reference, step, out);
        return;
    }
    if (!valid_shape) throw shape_error("gamma variate requires tP > tD and alpha > 0");
    const double inv_width = 1.0 / (p.tP - p.tD);
    auto rate_at = [&](std::size_t i) {
        const double t = step * static_cast<double>(i);
        if (t <= p.tD) return p.k2a;
        const double x = (t - p.tD) * inv_width;
        return p.k2a + p.gamma * std::exp(p.alpha * (std::log(x) + 1.0 - x));
    };
    out[0] = p.R1 * reference[0];
    double rate = rate_at(0);
    for (std::size_t i = 0; i + 1 < n; ++i) {
        const double rate_next = rate_at(i + 1);
        out[i + 1] = cn_step(out[i], rate, rate_next, p.R1, p.k2, reference[i], reference[i + 1], step);
        rate = rate_next;
    }
}

void mrtm_curve(double R1, double k2, double k2a, std::span<const double> reference, double step,
                std::span<double> out) {
    const std::size_t n = std::min(reference.size(), out.size());
    if (n == 0) return;
    out[0] = R1 * reference[0];
    for (std::size_t i = 0; i + 1 < n; ++i)
        out[i + 1] = cn_step(out[i], k2a, k2a, R1, k2, reference[i], reference[i + 1], step);
}

Tac simulate_lpntpet(const LpNtPetParams& p, std::span<const double> reference, const FineGrid& grid,
                     const FrameSchedule& schedule) {
    if (reference.size() != grid.nodes()) throw data_error("reference curve length does not match the fine grid");
    if (p.gamma > 0) gamma_variate(p.tD, p.tP, p.alpha, 0.0);  // validates the shape
    std::vector<double> fine(grid.nodes());
    lpntpet_curve(p, reference, grid.step(), fine);
    return frame_average(fine, grid, schedule);
}

Tac simulate_mrtm(double R1, double k2, double k2a, std::span<const double> reference, const FineGrid& grid,
                  const FrameSchedule& schedule) {
    if (reference.size() != grid.nodes()) throw data_error("reference curve length does not match the fine grid");
    std::vector<double> fine(grid.nodes());
    mrtm_curve(R1, k2, k2a, reference, grid.step(), fine);
    return frame_average(fine, grid, schedule);
}

std::vector<double> cumulative_trapezoid_from_zero(std::span<const double> t, std::span<const double> y) {
    std::vector<double> out(t.size());
    double acc = 0.0, t_prev = 0.0, y_prev = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) {
        acc += 0.5 * (t[i] - t_prev) * (y[i] + y_prev);
        out[i] = acc;
        t_prev = t[i];
        y_prev = y[i];
    }
    return out;
}

} // namespace vpetabc

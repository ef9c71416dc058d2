#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace vpetabc {

/// Per-frame values on an acquisition schedule (kBq/mL or any consistent unit).
using Tac = std::vector<double>;

/// Samples of a continuous curve at the nodes of a FineGrid.
using Curve = std::vector<double>;

/// Acquisition timebase shared by all TACs. Times in minutes.
class FrameSchedule {
public:
    FrameSchedule() = default;
    FrameSchedule(std::vector<double> start, std::vector<double> duration);

    /// Contiguous frames starting at t = 0.
    static FrameSchedule from_durations(std::span<const double> durations);
    /// `count` contiguous frames of equal length.
    static FrameSchedule uniform(std::size_t count, double duration);

    std::size_t size() const noexcept { return start_.size(); }
    double start(std::size_t f) const { return start_[f]; }
    double duration(std::size_t f) const { return duration_[f]; }
    double end(std::size_t f) const { return start_[f] + duration_[f]; }
    double mid(std::size_t f) const { return start_[f] + 0.5 * duration_[f]; }
    double last_end() const { return size() ? end(size() - 1) : 0.0; }
    double min_duration() const;

    const std::vector<double>& starts() const noexcept { return start_; }
    const std::vector<double>& durations() const noexcept { return duration_; }

    friend bool operator==(const FrameSchedule&, const FrameSchedule&) = default;

private:
    std::vector<double> start_;
    std::vector<double> duration_;
};

/// Uniform simulation grid 0, step, 2·step, ... covering [0, t_end].
class FineGrid {
public:
    FineGrid() = default;
    FineGrid(double step, double t_end);

    /// Grid with the given step that covers every frame of `schedule`.
    static FineGrid covering(const FrameSchedule& schedule, double step = 0.05);

    double step() const noexcept { return step_; }
    std::size_t nodes() const noexcept { return nodes_; }
    double time(std::size_t i) const noexcept { return step_ * static_cast<double>(i); }
    double t_end() const noexcept { return time(nodes_ - 1); }

    friend bool operator==(const FineGrid&, const FineGrid&) = default;

private:
    double step_ = 0.05;
    std::size_t nodes_ = 1;
};

struct TwoTcmParams {
    double K1 = 0, k2 = 0, k3 = 0, k4 = 0, Vb = 0;
};

struct LpNtPetParams {
    double R1 = 1, k2 = 0, k2a = 0, gamma = 0, tD = 0, tP = 1, alpha = 1;

    /// BP_ND = k2/k2a - 1.
    double binding_potential() const { return k2 / k2a - 1.0; }
};

/// Tri-exponential-plus-linear arterial input.
struct FengParams {
    double beta1 = 0, beta2 = 0, beta3 = 0;
    double kappa1 = 0, kappa2 = 0, kappa3 = 0;

    /// kappa1 > kappa2 > kappa3 > 0 keeps the curve non-negative.
    bool well_ordered() const { return kappa1 > kappa2 && kappa2 > kappa3 && kappa3 > 0; }
};

double feng_value(const FengParams& p, double t);
Curve feng_input(const FengParams& p, const FineGrid& grid);

/// Peak-normalised gamma variate: 0 for t <= tD, exactly 1 at t = tP.
/// Throws shape_error unless tP > tD and alpha > 0.
double gamma_variate(double tD, double tP, double alpha, double t);

/// Linear frame-averaging operator for a (grid, schedule) pair. Each frame
/// value is the mean of the piecewise-linear interpolant of the fine-grid
/// samples over [start, end].
class FrameAverager {
public:
    FrameAverager(const FineGrid& grid, const FrameSchedule& schedule);

    std::size_t frames() const noexcept { return first_.size(); }
    /// Last fine-grid node any frame touches, plus one.
    std::size_t nodes_needed() const noexcept { return nodes_needed_; }

    template <class Out>
    void apply(std::span<const double> curve, Out* out) const {
        for (std::size_t f = 0; f < first_.size(); ++f) {
            double acc = 0.0;
            const std::size_t off = offset_[f];
            for (std::size_t k = 0; k < count_[f]; ++k) acc += weight_[off + k] * curve[first_[f] + k];
            out[f] = static_cast<Out>(acc);
        }
    }

    Tac apply(std::span<const double> curve) const;

private:
    std::vector<std::size_t> first_, count_, offset_;
    std::vector<double> weight_;
    std::size_t nodes_needed_ = 0;
};

/// Throws data_error if a frame extends beyond the grid.
Tac frame_average(std::span<const double> curve, const FineGrid& grid, const FrameSchedule& schedule);

/// Total tissue concentration C_f + C_m on the fine grid (no blood term),
/// zero initial state, input taken as the piecewise-linear interpolant of
/// `plasma`. Writes grid.nodes() (or out.size(), if smaller) values.
void tissue_2tcm(const TwoTcmParams& p, std::span<const double> plasma, double step, std::span<double> out);

/// Frame-averaged PET signal (1 - Vb)(C_f + C_m) + Vb·C_wb. `whole_blood`
/// defaults to the plasma input when empty.
Tac simulate_2tcm(const TwoTcmParams& p, std::span<const double> plasma, const FineGrid& grid,
                  const FrameSchedule& schedule, std::span<const double> whole_blood = {});

/// Fine-grid lp-ntPET target curve: Crank–Nicolson stepping of
/// dC/dt = R1·dCr/dt + k2·Cr - (k2a + gamma·g(t))·C, with C(0) = R1·Cr(0).
void lpntpet_curve(const LpNtPetParams& p, std::span<const double> reference, double step, std::span<double> out);

/// Same recursion with gamma fixed at zero.
void mrtm_curve(double R1, double k2, double k2a, std::span<const double> reference, double step,
                std::span<double> out);

Tac simulate_lpntpet(const LpNtPetParams& p, std::span<const double> reference, const FineGrid& grid,
                     const FrameSchedule& schedule);
Tac simulate_mrtm(double R1, double k2, double k2a, std::span<const double> reference, const FineGrid& grid,
                  const FrameSchedule& schedule);

/// Cumulative trapezoid integral of `y` sampled at `t`, anchored at (0, 0).
std::vector<double> cumulative_trapezoid_from_zero(std::span<const double> t, std::span<const double> y);

} // namespace vpetabc

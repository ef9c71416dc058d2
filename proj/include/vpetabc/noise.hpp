#pragma once

#include <cmath>
#include <span>
#include <variant>

#include "vpetabc/kinetics.hpp"
#include "vpetabc/rng.hpp"

namespace vpetabc {

/// Which decay-weighting of the Gaussian standard deviation to use.
///   two_tcm: σ = sqrt(C·e^{-λt}/Δt)·e^{λt}
///   lpntpet: σ = sqrt(C/(Δt·e^{λt}))
enum class GaussianStyle { two_tcm, lpntpet };

struct GaussianNoise {
    double level = 0.0;
    double half_life_min = 109.8;
    GaussianStyle style = GaussianStyle::two_tcm;

    double decay_constant() const { return std::log(2.0) / half_life_min; }
};

/// Scaled Poisson counts: Pois(level·C)/level.
struct PoissonNoise {
    double level = 1.0;
};

using NoiseModel = std::variant<GaussianNoise, PoissonNoise>;

/// Throws config_error on out-of-range levels or half-life.
void validate(const NoiseModel& model);

/// Unscaled σ for a frame value at time t (frame mid-time) and duration dt.
/// Negative values are clamped to 0.
double gaussian_sigma(const GaussianNoise& m, double value, double t, double dt);

/// In-place perturbation of a frame-averaged TAC. The RNG stream is consumed
/// frame by frame in order.
void apply_gaussian(std::span<double> tac, const GaussianNoise& m, const FrameSchedule& schedule,
                    counter_engine& rng);
void apply_poisson(std::span<double> tac, const PoissonNoise& m, counter_engine& rng);
void apply_noise(std::span<double> tac, const NoiseModel& m, const FrameSchedule& schedule, counter_engine& rng);

} // namespace vpetabc

#include "vpetabc/noise.hpp"

#include <algorithm>
#include <random>

#include "vpetabc/common.hpp"

namespace vpetabc {

void validate(const NoiseModel& model) {
    std::visit(
        [](const auto& m) {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, GaussianNoise>) {
                if (!(m.level >= 0) || !std::isfinite(m.level)) throw config_error("noise: gaussian level must be >= 0");
                if (!(m.half_life_min > 0) || !std::isfinite(m.half_life_min))
                    throw config_error("noise: half_life_min must be > 0");
            } else {
                if (!(m.level > 0) || !std::isfinite(m.level)) throw config_error("noise: poisson level must be > 0");
            }
        },
        model);
}

double gaussian_sigma(const GaussianNoise& m, double value, double t, double dt) {
    const double c = std::max(value, 0.0);
    const double lambda = m.decay_constant();
    if (m.style == GaussianStyle::two_tcm) return std::sqrt(c * std::exp(-lambda * t) / dt) * std::exp(lambda * t);
    return std::sqrt(c / (dt * std::exp(lambda * t)));
}

void apply_gaussian(std::span<double> tac, const GaussianNoise& m, const FrameSchedule& schedule,
                    counter_engine& rng) {
    if (m.level == 0.0) return;
    for (std::size_t f = 0; f < tac.size(); ++f) {
        std::normal_distribution<double> z(0.0, 1.0);
        tac[f] += m.level * gaussian_sigma(m, tac[f], schedule.mid(f), schedule.duration(f)) * z(rng);
    }
}

void apply_poisson(std::span<double> tac, const PoissonNoise& m, counter_engine& rng) {
    for (auto& v : tac) {
        const double rate = std::max(v, 0.0) * m.level;
        if (rate == 0.0) {
            v = 0.0;
            continue;
        }
        // std::poisson_distribution<long long> stays exact for the rates seen here (< 2^53).
        std::poisson_distribution<long long> pois(rate);
        v = static_cast<double>(pois(rng)) / m.level;
    }
}

void apply_noise(std::span<double> tac, const NoiseModel& m, const FrameSchedule& schedule, counter_engine& rng) {
    if (const auto* g = std::get_if<GaussianNoise>(&m))
        apply_gaussian(tac, *g, schedule, rng);
    else
        apply_poisson(tac, std::get<PoissonNoise>(m), rng);
}

} // namespace vpetabc

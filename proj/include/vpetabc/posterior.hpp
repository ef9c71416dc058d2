#pragma once

#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "vpetabc/abc.hpp"
#include "vpetabc/priors.hpp"

namespace vpetabc {

/// Fraction of the voxel's accepted rows carrying each model indicator.
std::vector<double> model_probability(const AcceptedSamples& s, std::size_t voxel, std::size_t models);

/// Argmax of the model probabilities; ties go to the model with fewer free
/// parameters, then the lower index. For two models this is the strict > 0.5
/// rule with exact ties resolved towards the simpler model.
std::size_t preferred_model(std::span<const double> probabilities, const PriorSpec& spec);

/// Linear interpolation between order statistics (h = (n - 1)·q).
double quantile_sorted(std::span<const double> sorted, double q);

struct Interval {
    double mean = std::numeric_limits<double>::quiet_NaN();
    double lower = std::numeric_limits<double>::quiet_NaN();
    double upper = std::numeric_limits<double>::quiet_NaN();
    std::size_t count = 0;

    bool available() const { return count > 0; }
};

/// Mean and central `level` interval of the values.
Interval summarize_values(std::vector<double> values, double level);

struct ConditionalSummary {
    std::size_t model = 0;
    std::size_t count = 0;          // accepted rows with this indicator
    std::vector<Interval> params;   // canonical parameter order of the model

    bool available() const { return count > 0; }
};

ConditionalSummary conditional_summary(const AcceptedSamples& s, std::size_t voxel, const PriorSpec& spec,
                                       std::size_t model, double level = 0.95);

/// K_i = K1·k3/(k2 + k3) per accepted 2TCM row (rows with k2 + k3 = 0 give 0
/// and are counted in `degenerate`). `model` restricts to one indicator.
struct KiPosterior {
    std::vector<double> samples;
    Interval summary;
    std::size_t degenerate = 0;
};

KiPosterior ki_posterior(const AcceptedSamples& s, std::size_t voxel, const PriorSpec& spec,
                         std::optional<std::size_t> model = std::nullopt, double level = 0.95);

double net_influx(double K1, double k2, double k3);

/// Per-time credible band of the response function 1 + (gamma/k2a)·g(t)
/// over accepted lp-ntPET rows.
struct EnvelopePoint {
    double t, lower, median, upper;
};

struct ResponseEnvelope {
    std::vector<EnvelopePoint> points;
    bool activated = false;   // lower band exceeds 1 somewhere
    std::size_t used = 0;
    std::size_t excluded = 0; // rows with k2a <= 0
};

ResponseEnvelope response_envelope(const AcceptedSamples& s, std::size_t voxel, const PriorSpec& spec,
                                   std::span<const double> times, double level = 0.95);

struct VoxelSummary {
    std::vector<double> probabilities;
    std::size_t preferred = 0;
    ConditionalSummary conditional;    // of the preferred model
    std::optional<Interval> ki;        // 2TCM specs
    std::optional<Interval> bp_nd;     // reference-tissue specs, preferred model
};

std::vector<VoxelSummary> summarize(const AcceptedSamples& s, const PriorSpec& spec, double level = 0.95,
                                    unsigned workers = 1);

} // namespace vpetabc

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "vpetabc/abc.hpp"

namespace vpetabc {

/// A group of synthetic voxels sharing one generating prior.
struct PilotClass {
    std::string name;
    std::size_t count = 0;
    ModelPrior truth;                                // single model; probability ignored
    std::optional<Distribution> response_percent;    // if set, gamma = k2a·pct/100
    bool activated = false;
    std::vector<std::string> tags;
};

struct PilotScenario {
    FrameSchedule schedule;
    FineGrid grid;
    Curve input;
    Curve whole_blood;
    NoiseModel noise;
    std::vector<PilotClass> classes;
    std::size_t replicates = 1;

    std::size_t voxels_per_replicate() const;
    std::size_t voxel_count() const { return voxels_per_replicate() * replicates; }
    /// Throws config_error for empty scenarios, zero counts or bad priors.
    void validate() const;
    /// Union prior over the class models (column layout of the truth table).
    PriorSpec truth_spec() const;
};

/// Synthetic voxels, replicates stacked; truth column 0 is the class index.
struct Phantom {
    Observations obs;
    ThetaMatrix truth;
    std::vector<std::string> columns;        // parameter names of truth columns 1..P
    std::vector<std::size_t> class_of;
};

/// Deterministic in (scenario, seed); row v of class c uses counter streams
/// keyed by v, so the result is independent of `workers`.
Phantom simulate_phantom(const PilotScenario& scenario, std::uint64_t seed, unsigned workers = 1);

// ---------------------------------------------------------------- estimation

struct MseFit {
    double argmin_n = 0.0;
    bool fitted = false;     // quadratic in ln n was fitted and convex
    bool flagged = false;    // fit impossible or non-convex: raw minimum reported
    std::array<double, 3> coefficients{};   // c0 + c1·ln n + c2·ln² n
};

struct MseReport {
    std::vector<std::size_t> n_grid;
    std::vector<std::string> targets;
    std::vector<std::vector<double>> mse;    // [target][n]
    std::vector<MseFit> fits;                // per target
};

/// Quadratic least squares in ln n; argmin clamped to the grid hull.
MseFit fit_mse_curve(const std::vector<std::size_t>& n_grid, const std::vector<double>& mse);

/// One ABC run at max(n_grid) for all replicates; smaller n by truncation.
/// MSE of the posterior mean against the truth per target parameter.
MseReport pilot_mse(const PilotScenario& scenario, const Simulator& sim, std::vector<std::size_t> n_grid,
                    const std::vector<std::string>& targets, const AbcConfig& cfg, std::uint64_t phantom_seed);

MseReport pilot_mse(const Phantom& phantom, const Simulator& sim, std::vector<std::size_t> n_grid,
                    const std::vector<std::string>& targets, const AbcConfig& cfg);

// ---------------------------------------------------------------- selection

struct Rate {
    std::size_t hits = 0;
    std::size_t total = 0;

    double value() const;    // NaN when total = 0
};

struct SelectionRow {
    std::size_t n = 0;
    Rate sensitivity, specificity;
    double accuracy = 0.0;
    double auc = 0.0;
    std::vector<Rate> per_tag;      // detection rate of activated voxels carrying each tag
    std::vector<Rate> per_class;    // detection (activated) or correct rejection (null) per class
};

struct SelectionReport {
    std::vector<std::string> tags;
    std::vector<std::string> class_names;
    std::vector<SelectionRow> rows;
    std::optional<std::size_t> working_point;
    bool sensitivity_undefined = false;
    double specificity_floor = 0.95;
};

/// Mann–Whitney AUC of scores for positives vs negatives (ties count 1/2).
double roc_auc(const std::vector<double>& positives, const std::vector<double>& negatives);

/// Per n: a voxel is detected when the posterior mass of lp-ntPET models
/// exceeds 0.5. Working point: smallest n whose specificity >= floor.
SelectionReport pilot_selection(const PilotScenario& scenario, const Simulator& sim, std::vector<std::size_t> n_grid,
                                const AbcConfig& cfg, std::uint64_t phantom_seed, double specificity_floor = 0.95);

SelectionReport pilot_selection(const PilotScenario& scenario, const Phantom& phantom, const Simulator& sim,
                                std::vector<std::size_t> n_grid, const AbcConfig& cfg,
                                double specificity_floor = 0.95);

} // namespace vpetabc

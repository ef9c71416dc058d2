#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "vpetabc/abc.hpp"
#include "vpetabc/calibration.hpp"
#include "vpetabc/kinetics.hpp"
#include "vpetabc/noise.hpp"
#include "vpetabc/priors.hpp"
#include "vpetabc/spatial.hpp"

namespace vpetabc {

using json = nlohmann::json;

/// Shared input curve descriptor. Per-voxel inputs are not supported.
///   feng:         {"type":"feng","beta":[b1,b2,b3],"kappa":[k1,k2,k3]}
///   feng_tissue:  feng plus "K1","k2": the Feng curve through a one-tissue
///                 compartment, used as a reference-region TAC
///   fine_grid:    {"type":"fine_grid","step":δ,"values":[...]} sampled at 0, δ, 2δ, ...
///   frames:       {"type":"frames","values":[...]} at frame mid-times, linear
///                 through (0,0), held constant after the last mid-time
/// All but fine_grid accept "step" (default 0.05 min).
struct InputSpec {
    enum class Type { feng, feng_tissue, fine_grid, frames };
    Type type = Type::feng;
    FengParams feng{};
    double K1 = 0.0, k2 = 0.0;
    double step = 0.05;
    std::vector<double> values;

    FineGrid grid_for(const FrameSchedule& schedule) const;
    Curve resolve(const FineGrid& grid, const FrameSchedule& schedule) const;
    json to_json() const;
};

/// Default Feng parameters used by the bundled scenarios.
FengParams default_feng();

/// Schedules: {"preset":"fdg"|"raclopride"|"calibration"},
/// {"durations_min":[...]} (contiguous from 0) or
/// {"starts_min":[...],"durations_min":[...]} or {"uniform":{"frames":F,"duration_min":d}}.
FrameSchedule schedule_preset(const std::string& name);
FrameSchedule parse_schedule(const json& j);
json schedule_to_json(const FrameSchedule& s);

InputSpec parse_input(const json& j);

/// {"fixed":v} | {"uniform":[lo,hi]} (+ "after":{"base":name,"gap":g}) |
/// {"normal":[mean,sd]} (+ "truncate":[lo,hi]) | {"offset":{"base":name,"range":[lo,hi]}}
Distribution parse_distribution(const json& j);
ModelPrior parse_model_prior(const json& j, bool need_probability);
/// {"preset":name} or {"models":[{"name","kind","probability","params":{...}}]}
PriorSpec parse_priors(const json& j);
json priors_to_json(const PriorSpec& spec);

/// {"type":"gaussian","level":l,"style":"2tcm"|"lpntpet","half_life_min":h} | {"type":"poisson","level":l}
NoiseModel parse_noise(const json& j);

/// {"N":..,"n":..,"distance":"l1"|"l2","batch_rows":..,"batch_bytes":..}; seed set separately.
AbcConfig parse_abc(const json& j);

/// "classes":[{"name","count","truth":{model},"response_percent":{dist},"activated","tags"}], "replicates"
PilotScenario parse_scenario(const json& j, const FrameSchedule& schedule, const FineGrid& grid, Curve input,
                             const NoiseModel& noise);

MoranConfig parse_moran(const json& j);

/// Loaded run configuration. Relative paths resolve against the config file's directory.
struct RunConfig {
    std::filesystem::path path;
    std::filesystem::path base_dir;
    json raw;
    std::uint64_t seed = 0;

    std::filesystem::path resolve(const std::string& p) const;
    bool has(const char* key) const { return raw.contains(key) && !raw.at(key).is_null(); }
    const json& at(const char* key) const;
};

RunConfig load_config(const std::filesystem::path& path);

/// Integral or string JSON value as a seed.
std::uint64_t parse_seed(const json& j);

} // namespace vpetabc

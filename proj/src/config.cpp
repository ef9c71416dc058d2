#include "vpetabc/config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "vpetabc/common.hpp"

namespace vpetabc {

namespace {

template <class T>
T get(const json& j, const char* key, const std::string& where) {
    if (!j.contains(key)) throw config_error(where + ": missing '" + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw config_error(where + ": '" + key + "' has the wrong type");
    }
}

template <class T>
T get_or(const json& j, const char* key, T fallback, const std::string& where) {
    if (!j.contains(key) || j.at(key).is_null()) return fallback;
    return get<T>(j, key, where);
}

void require_object(const json& j, const std::string& where) {
    if (!j.is_object()) throw config_error(where + ": expected an object");
}

std::array<double, 3> triple(const json& j, const char* key, const std::string& where) {
    const auto v = get<std::vector<double>>(j, key, where);
    if (v.size() != 3) throw config_error(where + ": '" + key + "' needs 3 values");
    return {v[0], v[1], v[2]};
}

} // namespace

FengParams default_feng() { return {2e5, 5e4, 2e4, 4.0, 0.4, 0.02}; }

FineGrid InputSpec::grid_for(const FrameSchedule& schedule) const {
    if (type == Type::fine_grid) {
        if (values.size() < 2) throw config_error("input: fine_grid needs at least 2 values");
        const FineGrid g(step, step * static_cast<double>(values.size() - 1));
        if (g.nodes() != values.size()) throw config_error("input: fine_grid length does not match its step");
        if (g.t_end() + 1e-9 < schedule.last_end()) throw data_error("input: fine_grid does not cover the schedule");
        if (step > schedule.min_duration()) throw config_error("input: fine_grid step exceeds the shortest frame");
        return g;
    }
    return FineGrid::covering(schedule, step);
}

Curve InputSpec::resolve(const FineGrid& grid, const FrameSchedule& schedule) const {
    switch (type) {
    case Type::feng: return feng_input(feng, grid);
    case Type::feng_tissue: {
        const Curve cp = feng_input(feng, grid);
        Curve out(grid.nodes());
        tissue_2tcm({K1, k2, 0.0, 0.0, 0.0}, cp, grid.step(), out);
        return out;
    }
    case Type::fine_grid: {
        if (grid.nodes() > values.size()) throw data_error("input: fine_grid shorter than the simulation grid");
        if (std::abs(grid.step() - step) > 1e-12) throw data_error("input: fine_grid step differs from the simulation grid");
        return Curve(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(grid.nodes()));
    }
    case Type::frames: {
        if (values.size() != schedule.size())
            throw data_error("input: " + std::to_string(values.size()) + " frame values for " +
                             std::to_string(schedule.size()) + " frames");
        std::vector<double> t{0.0}, y{0.0};
        for (std::size_t f = 0; f < schedule.size(); ++f) {
            t.push_back(schedule.mid(f));
            y.push_back(values[f]);
        }
        Curve out(grid.nodes());
        std::size_t k = 0;
        for (std::size_t i = 0; i < out.size(); ++i) {
            const double ti = grid.time(i);
            while (k + 2 < t.size() && t[k + 1] < ti) ++k;
            if (ti >= t.back()) {
                out[i] = y.back();
            } else {
                const double w = (ti - t[k]) / (t[k + 1] - t[k]);
                out[i] = y[k] + w * (y[k + 1] - y[k]);
            }
        }
        return out;
    }
    }
    return {};
}

json InputSpec::to_json() const {
    json j;
    switch (type) {
    case Type::feng: j["type"] = "feng"; break;
    case Type::feng_tissue: j["type"] = "feng_tissue"; break;
    case Type::fine_grid: j["type"] = "fine_grid"; break;
    case Type::frames: j["type"] = "frames"; break;
    }
    if (type == Type::feng || type == Type::feng_tissue) {
        j["beta"] = {feng.beta1, feng.beta2, feng.beta3};
        j["kappa"] = {feng.kappa1, feng.kappa2, feng.kappa3};
    }
    if (type == Type::feng_tissue) {
        j["K1"] = K1;
        j["k2"] = k2;
    }
    if (type == Type::fine_grid || type == Type::frames) j["values"] = values;
    j["step"] = step;
    return j;
}

FrameSchedule schedule_preset(const std::string& name) {
    if (name == "fdg") {
        std::vector<double> d;
        d.insert(d.end(), 12, 10.0 / 60.0);
        d.insert(d.end(), 6, 0.5);
        d.insert(d.end(), 5, 1.0);
        d.insert(d.end(), 12, 200.0 / 60.0);
        return FrameSchedule::from_durations(d);
    }
    if (name == "lpntpet") return FrameSchedule::uniform(61, 1.0);
    if (name == "calibration") return FrameSchedule::uniform(45, 2.0);
    throw config_error("schedule: unknown preset '" + name + "' (expected fdg, lpntpet or calibration)");
}

FrameSchedule parse_schedule(const json& j) {
    const std::string where = "schedule";
    if (j.is_string()) return schedule_preset(j.get<std::string>());
    require_object(j, where);
    try {
        if (j.contains("preset")) return schedule_preset(get<std::string>(j, "preset", where));
        if (j.contains("uniform")) {
            const auto& u = j.at("uniform");
            return FrameSchedule::uniform(get<std::size_t>(u, "frames", where), get<double>(u, "duration_min", where));
        }
        const auto d = get<std::vector<double>>(j, "durations_min", where);
        if (j.contains("starts_min")) return FrameSchedule(get<std::vector<double>>(j, "starts_min", where), d);
        return FrameSchedule::from_durations(d);
    } catch (const data_error& e) {
        throw config_error(std::string("schedule: ") + e.what());
    }
}

json schedule_to_json(const FrameSchedule& s) { return {{"starts_min", s.starts()}, {"durations_min", s.durations()}}; }

InputSpec parse_input(const json& j) {
    const std::string where = "input";
    require_object(j, where);
    InputSpec in;
    const auto type = get<std::string>(j, "type", where);
    if (type == "feng" || type == "feng_tissue") {
        in.type = type == "feng" ? InputSpec::Type::feng : InputSpec::Type::feng_tissue;
        const auto f = default_feng();
        const auto b = j.contains("beta") ? triple(j, "beta", where) : std::array{f.beta1, f.beta2, f.beta3};
        const auto k = j.contains("kappa") ? triple(j, "kappa", where) : std::array{f.kappa1, f.kappa2, f.kappa3};
        in.feng = {b[0], b[1], b[2], k[0], k[1], k[2]};
        if (!in.feng.well_ordered()) throw config_error("input: Feng kappa must satisfy kappa1 > kappa2 > kappa3 > 0");
        if (in.type == InputSpec::Type::feng_tissue) {
            in.K1 = get<double>(j, "K1", where);
            in.k2 = get<double>(j, "k2", where);
            if (!(in.K1 > 0) || !(in.k2 >= 0)) throw config_error("input: feng_tissue needs K1 > 0 and k2 >= 0");
        }
    } else if (type == "fine_grid") {
        in.type = InputSpec::Type::fine_grid;
        in.values = get<std::vector<double>>(j, "values", where);
    } else if (type == "frames") {
        in.type = InputSpec::Type::frames;
        in.values = get<std::vector<double>>(j, "values", where);
    } else if (type == "per_voxel") {
        throw config_error("input: per-voxel input curves are not supported; supply one shared curve");
    } else {
        throw config_error("input: unknown type '" + type + "' (expected feng, feng_tissue, fine_grid or frames)");
    }
    in.step = get_or<double>(j, "step", 0.05, where);
    if (!(in.step > 0)) throw config_error("input: step must be > 0");
    for (double v : in.values)
        if (!std::isfinite(v)) throw config_error("input: values must be finite");
    return in;
}

Distribution parse_distribution(const json& j) {
    const std::string where = "prior";
    if (j.is_number()) return Distribution::fixed(j.get<double>());
    require_object(j, where);
    if (j.contains("fixed")) return Distribution::fixed(get<double>(j, "fixed", where));
    if (j.contains("uniform")) {
        const auto r = get<std::vector<double>>(j, "uniform", where);
        if (r.size() != 2) throw config_error("prior: uniform needs [lo, hi]");
        if (j.contains("after")) {
            const auto& a = j.at("after");
            return Distribution::uniform_after(get<std::string>(a, "base", where), get_or<double>(a, "gap", 0.0, where),
                                               r[0], r[1]);
        }
        return Distribution::uniform(r[0], r[1]);
    }
    if (j.contains("normal")) {
        const auto r = get<std::vector<double>>(j, "normal", where);
        if (r.size() != 2) throw config_error("prior: normal needs [mean, sd]");
        auto d = Distribution::normal(r[0], r[1]);
        if (j.contains("truncate")) {
            const auto t = get<std::vector<double>>(j, "truncate", where);
            if (t.size() != 2) throw config_error("prior: truncate needs [lo, hi]");
            d.lo = t[0];
            d.hi = t[1];
        }
        return d;
    }
    if (j.contains("offset")) {
        const auto& o = j.at("offset");
        const auto r = get<std::vector<double>>(o, "range", where);
        if (r.size() != 2) throw config_error("prior: offset range needs [lo, hi]");
        return Distribution::offset(get<std::string>(o, "base", where), r[0], r[1]);
    }
    throw config_error("prior: expected one of fixed, uniform, normal, offset");
}

namespace {

json distribution_to_json(const Distribution& d) {
    switch (d.type) {
    case Distribution::Type::fixed: return {{"fixed", d.a}};
    case Distribution::Type::uniform: {
        json j{{"uniform", {d.a, d.b}}};
        if (!d.base.empty()) j["after"] = {{"base", d.base}, {"gap", d.gap}};
        return j;
    }
    case Distribution::Type::normal: {
        json j{{"normal", {d.a, d.b}}};
        if (std::isfinite(d.lo) || std::isfinite(d.hi)) j["truncate"] = {d.lo, d.hi};
        return j;
    }
    case Distribution::Type::offset: return {{"offset", {{"base", d.base}, {"range", {d.a, d.b}}}}};
    }
    return {};
}

} // namespace

ModelPrior parse_model_prior(const json& j, bool need_probability) {
    require_object(j, "model");
    ModelPrior m;
    m.name = get_or<std::string>(j, "name", "", "model");
    const std::string where = "model '" + m.name + "'";
    m.kind = model_kind_from_string(get<std::string>(j, "kind", where));
    if (m.name.empty()) m.name = std::string(to_string(m.kind));
    m.probability = need_probability ? get<double>(j, "probability", where) : 1.0;
    const auto& params = j.contains("params") ? j.at("params") : throw config_error(where + ": missing 'params'");
    require_object(params, where + ".params");
    const auto names = parameter_names(m.kind);
    for (const auto& [key, _] : params.items()) {
        if (std::find(names.begin(), names.end(), key) == names.end())
            throw config_error(where + ": unknown parameter '" + key + "'");
    }
    for (const auto name : names) {
        const std::string key(name);
        if (!params.contains(key)) throw config_error(where + ": missing parameter '" + key + "'");
        try {
            m.params.push_back(parse_distribution(params.at(key)));
        } catch (const config_error& e) {
            throw config_error(where + "." + key + ": " + e.what());
        }
    }
    return m;
}

PriorSpec parse_priors(const json& j) {
    if (j.is_string()) return prior_preset(j.get<std::string>());
    require_object(j, "priors");
    if (j.contains("preset")) return prior_preset(get<std::string>(j, "preset", "priors"));
    const auto& models = j.contains("models") ? j.at("models") : throw config_error("priors: missing 'models' or 'preset'");
    if (!models.is_array()) throw config_error("priors: 'models' must be an array");
    std::vector<ModelPrior> out;
    for (const auto& m : models) out.push_back(parse_model_prior(m, true));
    return PriorSpec(std::move(out));
}

json priors_to_json(const PriorSpec& spec) {
    json models = json::array();
    for (const auto& m : spec.models()) {
        json params = json::object();
        const auto names = parameter_names(m.kind);
        for (std::size_t k = 0; k < m.params.size(); ++k) params[std::string(names[k])] = distribution_to_json(m.params[k]);
        models.push_back({{"name", m.name}, {"kind", to_string(m.kind)}, {"probability", m.probability}, {"params", params}});
    }
    return {{"models", models}};
}

NoiseModel parse_noise(const json& j) {
    const std::string where = "noise";
    require_object(j, where);
    const auto type = get<std::string>(j, "type", where);
    NoiseModel out;
    if (type == "gaussian") {
        GaussianNoise g;
        g.level = get<double>(j, "level", where);
        g.half_life_min = get_or<double>(j, "half_life_min", 109.8, where);
        const auto style = get_or<std::string>(j, "style", "2tcm", where);
        if (style == "2tcm") g.style = GaussianStyle::two_tcm;
        else if (style == "lpntpet") g.style = GaussianStyle::lpntpet;
        else throw config_error("noise: style must be 2tcm or lpntpet");
        out = g;
    } else if (type == "poisson") {
        out = PoissonNoise{get<double>(j, "level", where)};
    } else {
        throw config_error("noise: type must be gaussian or poisson");
    }
    validate(out);
    return out;
}

AbcConfig parse_abc(const json& j) {
    const std::string where = "abc";
    require_object(j, where);
    AbcConfig c;
    c.N = get_or<std::uint64_t>(j, "N", c.N, where);
    c.n = get_or<std::size_t>(j, "n", c.n, where);
    const auto d = get_or<std::string>(j, "distance", "l1", where);
    if (d == "l1") c.distance = DistanceKind::l1;
    else if (d == "l2") c.distance = DistanceKind::l2;
    else throw config_error("abc: distance must be l1 or l2");
    c.batch_rows = get_or<std::size_t>(j, "batch_rows", 0, where);
    c.batch_bytes = get_or<std::uint64_t>(j, "batch_bytes", c.batch_bytes, where);
    c.validate();
    return c;
}

PilotScenario parse_scenario(const json& j, const FrameSchedule& schedule, const FineGrid& grid, Curve input,
                             const NoiseModel& noise) {
    const std::string where = "scenario";
    require_object(j, where);
    PilotScenario s;
    s.schedule = schedule;
    s.grid = grid;
    s.input = std::move(input);
    s.noise = noise;
    s.replicates = get_or<std::size_t>(j, "replicates", 1, where);
    const auto& classes = j.contains("classes") ? j.at("classes") : throw config_error("scenario: missing 'classes'");
    if (!classes.is_array()) throw config_error("scenario: 'classes' must be an array");
    for (const auto& c : classes) {
        PilotClass pc;
        pc.name = get<std::string>(c, "name", where);
        pc.count = get<std::size_t>(c, "count", where + " class '" + pc.name + "'");
        pc.truth = parse_model_prior(c.at("truth"), false);
        if (c.contains("response_percent")) pc.response_percent = parse_distribution(c.at("response_percent"));
        pc.activated = get_or<bool>(c, "activated", pc.truth.kind == ModelKind::lpntpet, where);
        pc.tags = get_or<std::vector<std::string>>(c, "tags", {}, where);
        s.classes.push_back(std::move(pc));
    }
    s.validate();
    return s;
}

MoranConfig parse_moran(const json& j) {
    MoranConfig c;
    c.fwhm_mm = get_or<double>(j, "fwhm_mm", c.fwhm_mm, "moran");
    c.validate();
    return c;
}

std::filesystem::path RunConfig::resolve(const std::string& p) const {
    const std::filesystem::path path(p);
    return path.is_absolute() ? path : base_dir / path;
}

const json& RunConfig::at(const char* key) const {
    if (!has(key)) throw config_error("config: missing '" + std::string(key) + "' block");
    return raw.at(key);
}

std::uint64_t parse_seed(const json& j) {
    if (j.is_number_unsigned()) return j.get<std::uint64_t>();
    if (j.is_number_integer() && j.get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(j.get<std::int64_t>());
    if (j.is_string()) {
        try {
            std::size_t used = 0;
            const auto s = j.get<std::string>();
            const auto v = std::stoull(s, &used, 0);
            if (used == s.size()) return v;
        } catch (const std::exception&) {
        }
    }
    throw config_error("seed must be a non-negative integer");
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open config '" + path.string() + "'");
    RunConfig c;
    c.path = path;
    c.base_dir = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
    try {
        c.raw = json::parse(in);
    } catch (const json::parse_error& e) {
        throw config_error("config '" + path.string() + "' is not valid JSON: " + e.what());
    }
    if (!c.raw.is_object()) throw config_error("config: top level must be an object");
    if (c.has("seed")) c.seed = parse_seed(c.raw.at("seed"));
    return c;
}

} // namespace vpetabc

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "vpetabc/abc.hpp"
#include "vpetabc/baselines.hpp"
#include "vpetabc/calibration.hpp"
#include "vpetabc/common.hpp"
#include "vpetabc/config.hpp"
#include "vpetabc/io.hpp"
#include "vpetabc/parallel.hpp"
#include "vpetabc/posterior.hpp"
#include "vpetabc/rng.hpp"
#include "vpetabc/spatial.hpp"

using namespace vpetabc;

namespace {

enum exit_code { ok = 0, config_failure = 2, data_failure = 3, budget_failure = 4, runtime_failure = 5 };

struct Options {
    std::string config;
    std::string out;
    std::optional<unsigned> workers;
    std::optional<std::string> seed;
    std::optional<std::uint64_t> batch_bytes;
};

struct Context {
    RunConfig cfg;
    fs::path out;
    unsigned workers = 1;
    Manifest manifest;

    Context(RunConfig c, fs::path o, unsigned w, const std::string& command)
        : cfg(std::move(c)), out(std::move(o)), workers(w),
          manifest(command, sha256_of(cfg.raw), cfg.seed) {}

    static std::string sha256_of(const json& j) {
        const auto s = j.dump();
        return sha256_hex(s.data(), s.size());
    }

    fs::path path(const std::string& name) const { return out / name; }

    void text(const std::string& name, const std::string& content) {
        write_text(path(name), content);
        manifest.add_output(path(name));
    }
};

Context make_context(const Options& o, const std::string& command) {
    RunConfig cfg = load_config(o.config);
    if (o.seed) cfg.seed = parse_seed(json(*o.seed));
    cfg.raw["seed"] = cfg.seed;
    if (o.batch_bytes) {
        if (!cfg.raw.contains("abc") || !cfg.raw["abc"].is_object()) cfg.raw["abc"] = json::object();
        cfg.raw["abc"]["batch_bytes"] = *o.batch_bytes;
    }
    fs::path out = o.out.empty() ? (cfg.has("output") ? cfg.resolve(cfg.raw.at("output").get<std::string>()) : fs::path("out"))
                                 : fs::path(o.out);
    fs::create_directories(out);
    const unsigned workers = o.workers ? std::max(1u, *o.workers) : default_workers();
    return Context(std::move(cfg), std::move(out), workers, command);
}

std::string fmt(double v) { return format_double(v); }

// ---------------------------------------------------------------- model setup

struct ModelSetup {
    FrameSchedule schedule;
    FineGrid grid;
    Curve input;
    json input_descriptor;
};

std::optional<Dataset> load_dataset(const Context& ctx) {
    if (!ctx.cfg.has("dataset")) return std::nullopt;
    return read_dataset(ctx.cfg.resolve(ctx.cfg.raw.at("dataset").get<std::string>()));
}

ModelSetup model_setup(const Context& ctx, const Dataset* ds, std::optional<bool> plasma = std::nullopt) {
    ModelSetup m;
    if (ds) {
        m.schedule = ds->schedule;
        if (ctx.cfg.has("schedule") && parse_schedule(ctx.cfg.raw.at("schedule")) != ds->schedule)
            throw config_error("config schedule differs from the dataset schedule");
    } else if (ctx.cfg.has("schedule")) {
        m.schedule = parse_schedule(ctx.cfg.raw.at("schedule"));
    } else {
        m.schedule = schedule_preset(plasma.value_or(true) ? "fdg" : "lpntpet");
    }
    if (ctx.cfg.has("input")) m.input_descriptor = ctx.cfg.raw.at("input");
    else if (ds && !ds->input.is_null()) m.input_descriptor = ds->input;
    else throw config_error("no input curve: set 'input' in the config or in the dataset");
    InputSpec in;
    try {
        in = parse_input(m.input_descriptor);
    } catch (const config_error& e) {
        if (ctx.cfg.has("input")) throw;
        throw data_error(std::string("dataset input descriptor: ") + e.what());
    }
    m.grid = in.grid_for(m.schedule);
    m.input = in.resolve(m.grid, m.schedule);
    m.input_descriptor = in.to_json();
    return m;
}

PriorSpec priors_of(const Context& ctx) { return parse_priors(ctx.cfg.at("priors")); }
NoiseModel noise_of(const Context& ctx, const char* block = nullptr) {
    if (block && ctx.cfg.has(block) && ctx.cfg.raw.at(block).contains("noise")) return parse_noise(ctx.cfg.raw.at(block).at("noise"));
    return parse_noise(ctx.cfg.at("noise"));
}

AbcConfig abc_of(const Context& ctx) {
    AbcConfig a = parse_abc(ctx.cfg.has("abc") ? ctx.cfg.raw.at("abc") : json::object());
    a.seed = ctx.cfg.seed;
    a.workers = ctx.workers;
    return a;
}

double value_at(const Curve& c, const FineGrid& g, double t) {
    const double x = t / g.step();
    const auto k = std::min<std::size_t>(static_cast<std::size_t>(x), c.size() - 2);
    const double w = x - static_cast<double>(k);
    return c[k] + w * (c[k + 1] - c[k]);
}

void emit_map(Context& ctx, const std::string& field, const std::vector<double>& masked, const VolumeGeometry& geom) {
    const auto stem = ctx.path("maps/" + field);
    ctx.manifest.add_outputs(write_map(stem, make_map(masked, geom, field)));
}

// ---------------------------------------------------------------- simulate

int cmd_simulate(Context& ctx) {
    const auto& sim_block = ctx.cfg.at("simulate");
    const auto noise = noise_of(ctx, "simulate");
    std::optional<bool> plasma;
    if (sim_block.contains("classes") && sim_block.at("classes").is_array() && !sim_block.at("classes").empty())
        plasma = uses_plasma_input(model_kind_from_string(sim_block.at("classes")[0].at("truth").value("kind", "2tcm")));
    Phantom ph;
    PilotScenario scenario;
    ModelSetup m;
    {
        Manifest::Stage st(ctx.manifest, "simulate");
        m = model_setup(ctx, nullptr, plasma);
        scenario = parse_scenario(sim_block, m.schedule, m.grid, m.input, noise);
        ph = simulate_phantom(scenario, ctx.cfg.seed, ctx.workers);
    }
    Manifest::Stage st(ctx.manifest, "write");
    Dataset ds;
    ds.schedule = m.schedule;
    ds.input = m.input_descriptor;
    const std::size_t J = ph.obs.voxels;
    if (sim_block.contains("dims")) {
        const auto d = sim_block.at("dims").get<std::vector<std::size_t>>();
        if (d.size() != 3 || d[0] * d[1] * d[2] != J)
            throw config_error("simulate: dims must be 3 values whose product equals the voxel count " + std::to_string(J));
        ds.geometry.dims = {d[0], d[1], d[2]};
    } else {
        ds.geometry.dims = {J, 1, 1};
    }
    if (sim_block.contains("spacing_mm")) {
        const auto s = sim_block.at("spacing_mm").get<std::vector<double>>();
        if (s.size() != 3) throw config_error("simulate: spacing_mm needs 3 values");
        ds.geometry.spacing_mm = {s[0], s[1], s[2]};
    }
    ds.tacs.resize(ph.obs.values.size());
    std::transform(ph.obs.values.begin(), ph.obs.values.end(), ds.tacs.begin(), [](double v) { return static_cast<float>(v); });
    ctx.manifest.add_outputs(write_dataset(ctx.path("dataset.json"), ds));

    std::ostringstream csv;
    csv << "voxel,class,model";
    for (const auto& c : ph.columns) csv << ',' << c;
    csv << '\n';
    for (std::size_t v = 0; v < J; ++v) {
        const auto& cls = scenario.classes[ph.class_of[v]];
        csv << v << ',' << cls.name << ',' << to_string(cls.truth.kind);
        const auto row = ph.truth.row(v);
        for (std::size_t c = 1; c < row.size(); ++c) csv << ',' << fmt(row[c]);
        csv << '\n';
    }
    ctx.text("truth.csv", csv.str());
    return ok;
}

// ---------------------------------------------------------------- summarize

void write_summaries(Context& ctx, const AcceptedSamples& samples, const PriorSpec& spec, const VolumeGeometry& geom,
                     const FrameSchedule& schedule) {
    const auto idx = geom.masked_indices();
    if (idx.size() != samples.voxels)
        throw data_error("posterior has " + std::to_string(samples.voxels) + " voxels but the mask has " +
                         std::to_string(idx.size()));
    json block = ctx.cfg.has("summarize") ? ctx.cfg.raw.at("summarize") : json::object();
    const double level = block.value("level", 0.95);
    if (!(level > 0 && level < 1)) throw config_error("summarize: level must be in (0, 1)");
    const auto summaries = summarize(samples, spec, level, ctx.workers);
    const std::size_t M = spec.model_count();
    const auto& cols = spec.columns();
    const bool plasma = spec.plasma_input();

    std::ostringstream csv;
    csv << "voxel";
    for (std::size_t m = 0; m < M; ++m) csv << ",p_" << spec.model(m).name;
    csv << ",preferred";
    for (const auto& c : cols) csv << ',' << c << "_mean," << c << "_lower," << c << "_upper";
    const char* derived = plasma ? "ki" : "bp_nd";
    csv << ',' << derived << "_mean," << derived << "_lower," << derived << "_upper\n";

    const std::size_t J = samples.voxels;
    std::vector<std::vector<double>> pmap(M, std::vector<double>(J)), colmean(cols.size(), std::vector<double>(J));
    std::vector<double> pref(J), dmean(J), dlo(J), dhi(J);
    const double nan_v = std::numeric_limits<double>::quiet_NaN();
    for (std::size_t j = 0; j < J; ++j) {
        const auto& s = summaries[j];
        csv << idx[j];
        for (std::size_t m = 0; m < M; ++m) {
            csv << ',' << fmt(s.probabilities[m]);
            pmap[m][j] = s.probabilities[m];
        }
        csv << ',' << spec.model(s.preferred).name;
        pref[j] = static_cast<double>(s.preferred);
        std::vector<Interval> by_col(cols.size());
        for (std::size_t k = 0; k < s.conditional.params.size(); ++k)
            by_col[spec.column_of(s.preferred, k) - 1] = s.conditional.params[k];
        for (std::size_t c = 0; c < cols.size(); ++c) {
            csv << ',' << fmt(by_col[c].mean) << ',' << fmt(by_col[c].lower) << ',' << fmt(by_col[c].upper);
            colmean[c][j] = by_col[c].mean;
        }
        const Interval d = plasma ? s.ki.value_or(Interval{}) : s.bp_nd.value_or(Interval{});
        csv << ',' << fmt(d.mean) << ',' << fmt(d.lower) << ',' << fmt(d.upper) << '\n';
        dmean[j] = d.available() ? d.mean : nan_v;
        dlo[j] = d.available() ? d.lower : nan_v;
        dhi[j] = d.available() ? d.upper : nan_v;
    }
    ctx.text("summary.csv", csv.str());
    for (std::size_t m = 0; m < M; ++m) emit_map(ctx, "p_" + spec.model(m).name, pmap[m], geom);
    emit_map(ctx, "preferred_model", pref, geom);
    for (std::size_t c = 0; c < cols.size(); ++c) emit_map(ctx, cols[c] + "_mean", colmean[c], geom);
    emit_map(ctx, std::string(derived) + "_mean", dmean, geom);
    emit_map(ctx, std::string(derived) + "_lower", dlo, geom);
    emit_map(ctx, std::string(derived) + "_upper", dhi, geom);

    bool has_lp = false;
    for (const auto& m : spec.models()) has_lp |= m.kind == ModelKind::lpntpet;
    if (!has_lp || !block.value("envelope", true)) return;
    std::vector<double> times;
    if (block.contains("envelope_times")) times = block.at("envelope_times").get<std::vector<double>>();
    else
        for (std::size_t f = 0; f < schedule.size(); ++f) times.push_back(schedule.mid(f));
    std::vector<ResponseEnvelope> env(J);
    parallel_for(J, ctx.workers, [&](std::size_t b, std::size_t e) {
        for (std::size_t j = b; j < e; ++j) env[j] = response_envelope(samples, j, spec, times, level);
    });
    std::ostringstream ecsv;
    ecsv << "voxel,t_min,lower,median,upper,lower_pct,median_pct,upper_pct\n";
    std::vector<double> activated(J);
    for (std::size_t j = 0; j < J; ++j) {
        activated[j] = env[j].activated ? 1.0 : 0.0;
        for (const auto& p : env[j].points)
            ecsv << idx[j] << ',' << fmt(p.t) << ',' << fmt(p.lower) << ',' << fmt(p.median) << ',' << fmt(p.upper) << ','
                 << fmt(100.0 * (p.lower - 1.0)) << ',' << fmt(100.0 * (p.median - 1.0)) << ','
                 << fmt(100.0 * (p.upper - 1.0)) << '\n';
    }
    ctx.text("envelope.csv", ecsv.str());
    emit_map(ctx, "envelope_activated", activated, geom);
}

// ---------------------------------------------------------------- infer

int cmd_infer(Context& ctx) {
    Dataset ds;
    PriorSpec spec;
    std::optional<Simulator> sim;
    Observations obs;
    AbcConfig abc;
    {
        Manifest::Stage st(ctx.manifest, "load");
        abc = abc_of(ctx);
        spec = priors_of(ctx);
        const auto loaded = load_dataset(ctx);
        if (!loaded) throw config_error("infer: 'dataset' is required");
        ds = *loaded;
        const auto m = model_setup(ctx, &ds, spec.plasma_input());
        sim.emplace(spec, m.input, m.grid, m.schedule, noise_of(ctx));
        obs = ds.observations();
        if (obs.voxels == 0) throw data_error("dataset mask selects no voxels");
        plan_batch_rows(abc, obs.voxels, obs.frames);
    }
    AcceptedPosterior post;
    {
        Manifest::Stage st(ctx.manifest, "abc");
        post = abc_infer(*sim, obs, abc);
    }
    AcceptedSamples samples;
    {
        Manifest::Stage st(ctx.manifest, "export");
        samples = gather_samples(post, spec, abc.seed);
        ctx.manifest.add_outputs(write_posterior(ctx.path("posterior"), post, samples, spec));
    }
    Manifest::Stage st(ctx.manifest, "summarize");
    write_summaries(ctx, samples, spec, ds.geometry, ds.schedule);
    return ok;
}

int cmd_summarize(Context& ctx) {
    Manifest::Stage st(ctx.manifest, "summarize");
    const auto spec = priors_of(ctx);
    const auto ds = load_dataset(ctx);
    if (!ds) throw config_error("summarize: 'dataset' is required for the volume geometry");
    const fs::path stem = ctx.cfg.has("posterior") ? ctx.cfg.resolve(ctx.cfg.raw.at("posterior").get<std::string>())
                                                   : ctx.path("posterior");
    const auto file = read_posterior(stem);
    json cols = json::array({"voxel", "pool_row", "distance", "model"});
    for (const auto& c : spec.columns()) cols.push_back(c);
    if (file.sidecar.at("columns") != cols) throw config_error("summarize: posterior columns do not match the priors");
    write_summaries(ctx, file.samples, spec, ds->geometry, ds->schedule);
    return ok;
}

// ---------------------------------------------------------------- baselines

int cmd_baseline(Context& ctx, const std::string& method) {
    const auto ds = load_dataset(ctx);
    if (!ds) throw config_error("baseline: 'dataset' is required");
    const json block = ctx.cfg.has("baseline") ? ctx.cfg.raw.at("baseline") : json::object();
    const auto obs = ds->observations();
    const auto idx = ds->geometry.masked_indices();
    const std::size_t J = obs.voxels;
    const bool plasma_method = method != "nnls-lpntpet";
    std::optional<PriorSpec> spec;
    if (method == "grid-oracle") spec = priors_of(ctx);
    const auto m = model_setup(ctx, &*ds, spec ? spec->plasma_input() : plasma_method);
    const auto& schedule = m.schedule;
    Manifest::Stage st(ctx.manifest, method);
    std::ostringstream csv;

    if (method == "patlak") {
        const double t_star = block.value("t_star", 20.0);
        std::vector<double> cp(schedule.size());
        for (std::size_t f = 0; f < cp.size(); ++f) cp[f] = value_at(m.input, m.grid, schedule.mid(f));
        const auto icp = integral_at_mid_times(m.input, m.grid, schedule);
        std::vector<PatlakResult> res(J);
        parallel_for(J, ctx.workers, [&](std::size_t b, std::size_t e) {
            for (std::size_t j = b; j < e; ++j) res[j] = patlak_fit(obs.tac(j), cp, icp, schedule, t_star);
        });
        csv << "voxel,ki,intercept,r2,frames_used\n";
        std::vector<double> ki(J);
        for (std::size_t j = 0; j < J; ++j) {
            csv << idx[j] << ',' << fmt(res[j].slope) << ',' << fmt(res[j].intercept) << ',' << fmt(res[j].r2) << ','
                << res[j].frames_used << '\n';
            ki[j] = res[j].slope;
        }
        ctx.text("baseline_patlak.csv", csv.str());
        emit_map(ctx, "patlak_ki", ki, ds->geometry);
    } else if (method == "nnls-lpntpet") {
        const FrameAverager avg(m.grid, schedule);
        const auto ref = avg.apply(m.input);
        BasisLibrary::Grid g;
        if (block.contains("basis")) {
            const auto& b = block.at("basis");
            g.td_lo = b.value("td_lo", g.td_lo);
            g.td_hi = b.value("td_hi", g.td_hi);
            g.td_step = b.value("td_step", g.td_step);
            g.tp_offset_lo = b.value("tp_offset_lo", g.tp_offset_lo);
            g.tp_offset_hi = b.value("tp_offset_hi", g.tp_offset_hi);
            g.tp_step = b.value("tp_step", g.tp_step);
            g.alphas = b.value("alphas", g.alphas);
        }
        const BasisLibrary lib(schedule, g);
        BicCounts counts;
        counts.lpntpet = block.value("bic_k_lpntpet", counts.lpntpet);
        counts.mrtm = block.value("bic_k_mrtm", counts.mrtm);
        std::vector<LpNtPetFits> res(J);
        parallel_for(J, ctx.workers, [&](std::size_t b, std::size_t e) {
            for (std::size_t j = b; j < e; ++j) res[j] = nnls_lpntpet_fit(obs.tac(j), ref, schedule, lib);
        });
        csv << "voxel,selected,R1,k2,k2a,gamma,tD,tP,alpha,rss_lpntpet,rss_mrtm,bic_lpntpet,bic_mrtm,"
               "mrtm_R1,mrtm_k2,mrtm_k2a,flagged\n";
        std::vector<double> sel(J), bp(J), gamma(J);
        for (std::size_t j = 0; j < J; ++j) {
            auto& r = res[j];
            r.lpntpet.bic = bic(r.lpntpet.rss, schedule.size(), counts.lpntpet);
            r.mrtm.bic = bic(r.mrtm.rss, schedule.size(), counts.mrtm);
            const bool lp = bic_select(r.lpntpet, r.mrtm, schedule.size(), counts) == SelectedModel::lpntpet;
            const auto& lc = r.lpntpet.coefficients;
            const auto& mc = r.mrtm.coefficients;
            const double nan_v = std::numeric_limits<double>::quiet_NaN();
            csv << idx[j] << ',' << (lp ? "lpntpet" : "mrtm") << ',' << fmt(lc[0]) << ',' << fmt(lc[1]) << ',' << fmt(lc[2])
                << ',' << fmt(lc[3]) << ',' << fmt(r.lpntpet.basis ? r.lpntpet.basis->tD : nan_v) << ','
                << fmt(r.lpntpet.basis ? r.lpntpet.basis->tP : nan_v) << ','
                << fmt(r.lpntpet.basis ? r.lpntpet.basis->alpha : nan_v) << ',' << fmt(r.lpntpet.rss) << ','
                << fmt(r.mrtm.rss) << ',' << fmt(r.lpntpet.bic) << ',' << fmt(r.mrtm.bic) << ',' << fmt(mc[0]) << ','
                << fmt(mc[1]) << ',' << fmt(mc[2]) << ',' << (r.lpntpet.flagged || r.mrtm.flagged) << '\n';
            sel[j] = lp;
            const auto& c = lp ? lc : mc;
            bp[j] = c[2] > 0 ? c[1] / c[2] - 1.0 : nan_v;
            gamma[j] = lp ? lc[3] : 0.0;
        }
        ctx.text("baseline_nnls_lpntpet.csv", csv.str());
        emit_map(ctx, "nnls_selected_lpntpet", sel, ds->geometry);
        emit_map(ctx, "nnls_bp_nd", bp, ds->geometry);
        emit_map(ctx, "nnls_gamma", gamma, ds->geometry);
    } else if (method == "nnls-2tcm") {
        TwoTcmFitOptions opt;
        opt.starts = block.value("starts", opt.starts);
        opt.max_iterations = block.value("max_iterations", opt.max_iterations);
        if (block.contains("lower")) opt.lower = block.at("lower").get<std::array<double, 5>>();
        if (block.contains("upper")) opt.upper = block.at("upper").get<std::array<double, 5>>();
        std::vector<FitResult> res(J);
        parallel_for(J, ctx.workers, [&](std::size_t b, std::size_t e) {
            for (std::size_t j = b; j < e; ++j) res[j] = nnls_2tcm_fit(obs.tac(j), m.input, m.grid, schedule, opt);
        });
        csv << "voxel,K1,k2,k3,k4,Vb,ki,rss,flagged\n";
        std::vector<double> ki(J);
        for (std::size_t j = 0; j < J; ++j) {
            const auto& c = res[j].coefficients;
            ki[j] = net_influx(c[0], c[1], c[2]);
            csv << idx[j];
            for (double v : c) csv << ',' << fmt(v);
            csv << ',' << fmt(ki[j]) << ',' << fmt(res[j].rss) << ',' << res[j].flagged << '\n';
        }
        ctx.text("baseline_nnls_2tcm.csv", csv.str());
        emit_map(ctx, "nnls_2tcm_ki", ki, ds->geometry);
    } else if (method == "grid-oracle") {
        const Simulator sim(*spec, m.input, m.grid, schedule, noise_of(ctx));
        const json g = block.contains("grid") ? block.at("grid") : json::object();
        const std::size_t model = g.contains("model") ? spec->model_index(g.at("model").get<std::string>()) : 0;
        const auto resolution = g.value("resolution", std::vector<std::size_t>{});
        const std::size_t budget = g.value("cell_budget", std::size_t{50'000'000});
        const std::size_t limit = std::min<std::size_t>(J, g.value("max_voxels", J));
        std::vector<std::string> names;
        csv << "voxel";
        std::ostringstream body;
        for (std::size_t j = 0; j < limit; ++j) {
            const auto gp = grid_posterior(sim, obs.tac(j), model, resolution, budget, ctx.workers);
            if (j == 0)
                for (const auto& n : gp.names) csv << ',' << n << "_mean";
            body << idx[j];
            for (double v : gp.means) body << ',' << fmt(v);
            body << '\n';
        }
        csv << '\n' << body.str();
        ctx.text("baseline_grid_oracle.csv", csv.str());
    } else {
        throw config_error("unknown baseline '" + method + "'");
    }
    return ok;
}

// ---------------------------------------------------------------- calibrate

int cmd_calibrate(Context& ctx, const std::string& mode) {
    const auto& block = ctx.cfg.at("calibrate");
    const auto spec = priors_of(ctx);
    const auto abc = abc_of(ctx);
    const auto m = model_setup(ctx, nullptr, spec.plasma_input());
    const auto noise = noise_of(ctx, "calibrate");
    const auto scenario = parse_scenario(block.contains("scenario") ? block.at("scenario") : block, m.schedule, m.grid,
                                         m.input, noise);
    const Simulator sim(spec, m.input, m.grid, m.schedule, noise);
    if (!block.contains("n_grid")) throw config_error("calibrate: missing 'n_grid'");
    const auto n_grid = block.at("n_grid").get<std::vector<std::size_t>>();
    const std::uint64_t phantom_seed = derive_seed(ctx.cfg.seed, "phantom");
    Phantom ph;
    {
        Manifest::Stage st(ctx.manifest, "phantom");
        ph = simulate_phantom(scenario, phantom_seed, ctx.workers);
    }
    Manifest::Stage st(ctx.manifest, "calibrate-" + mode);
    std::ostringstream csv;
    if (mode == "mse") {
        const auto targets = block.value("targets", std::vector<std::string>{});
        const auto rep = pilot_mse(ph, sim, n_grid, targets, abc);
        csv << "n";
        for (const auto& t : rep.targets) csv << ",mse_" << t;
        csv << '\n';
        for (std::size_t i = 0; i < rep.n_grid.size(); ++i) {
            csv << rep.n_grid[i];
            for (std::size_t t = 0; t < rep.targets.size(); ++t) csv << ',' << fmt(rep.mse[t][i]);
            csv << '\n';
        }
        json fits = json::array();
        for (std::size_t t = 0; t < rep.targets.size(); ++t) {
            const auto& f = rep.fits[t];
            fits.push_back({{"target", rep.targets[t]},
                            {"argmin_n", f.argmin_n},
                            {"fitted", f.fitted},
                            {"flagged", f.flagged},
                            {"coefficients", f.coefficients}});
        }
        ctx.text("calibration_mse.csv", csv.str());
        write_json(ctx.path("calibration_mse.json"), {{"n_grid", rep.n_grid}, {"fits", fits}});
        ctx.manifest.add_output(ctx.path("calibration_mse.json"));
    } else if (mode == "selection") {
        const auto rep = pilot_selection(scenario, ph, sim, n_grid, abc, block.value("specificity_floor", 0.95));
        csv << "n,activated,null";
        for (const auto& t : rep.tags) csv << ',' << t;
        std::vector<std::size_t> act_classes;
        for (std::size_t c = 0; c < scenario.classes.size(); ++c)
            if (scenario.classes[c].activated) {
                act_classes.push_back(c);
                csv << ',' << scenario.classes[c].name;
            }
        csv << ",accuracy,auc\n";
        json rows = json::array();
        for (const auto& r : rep.rows) {
            csv << r.n << ',' << fmt(r.sensitivity.value()) << ',' << fmt(r.specificity.value());
            for (const auto& t : r.per_tag) csv << ',' << fmt(t.value());
            for (std::size_t c : act_classes) csv << ',' << fmt(r.per_class[c].value());
            csv << ',' << fmt(r.accuracy) << ',' << fmt(r.auc) << '\n';
            json classes = json::object();
            for (std::size_t c = 0; c < scenario.classes.size(); ++c)
                classes[scenario.classes[c].name] = {{"hits", r.per_class[c].hits}, {"total", r.per_class[c].total}};
            rows.push_back({{"n", r.n},
                            {"sensitivity", {{"hits", r.sensitivity.hits}, {"total", r.sensitivity.total}}},
                            {"specificity", {{"hits", r.specificity.hits}, {"total", r.specificity.total}}},
                            {"accuracy", r.accuracy},
                            {"auc", std::isfinite(r.auc) ? json(r.auc) : json(nullptr)},
                            {"classes", classes}});
        }
        ctx.text("calibration_selection.csv", csv.str());
        write_json(ctx.path("calibration_selection.json"),
                   {{"rows", rows},
                    {"specificity_floor", rep.specificity_floor},
                    {"working_point", rep.working_point ? json(*rep.working_point) : json(nullptr)},
                    {"sensitivity_undefined", rep.sensitivity_undefined}});
        ctx.manifest.add_output(ctx.path("calibration_selection.json"));
    } else {
        throw config_error("unknown calibration mode '" + mode + "'");
    }
    return ok;
}

// ---------------------------------------------------------------- moran

int cmd_moran(Context& ctx) {
    Manifest::Stage st(ctx.manifest, "moran");
    const auto& block = ctx.cfg.at("moran");
    auto cfg = parse_moran(block);
    const std::size_t slice = block.value("slice", std::size_t{0});
    if (!block.contains("maps") || !block.at("maps").is_array()) throw config_error("moran: 'maps' must be a list");
    std::vector<NamedMap> maps;
    std::array<std::size_t, 3> dims{};
    std::array<double, 3> spacing{};
    for (const auto& e : block.at("maps")) {
        const auto name = e.at("name").get<std::string>();
        const auto pm = read_map(ctx.cfg.resolve(e.at("path").get<std::string>()));
        if (maps.empty()) {
            dims = pm.dims;
            spacing = pm.spacing_mm;
        } else if (pm.dims != dims) {
            throw data_error("moran: map '" + name + "' has a different geometry");
        }
        if (slice >= pm.dims[2]) throw config_error("moran: slice out of range");
        Map2d m{pm.dims[0], pm.dims[1], std::vector<double>(pm.dims[0] * pm.dims[1])};
        for (std::size_t i = 0; i < m.size(); ++i) m.values[i] = pm.values[slice * m.size() + i];
        maps.push_back({name, std::move(m)});
    }
    if (maps.empty()) throw config_error("moran: at least one map is required");
    cfg.spacing_x_mm = spacing[0];
    cfg.spacing_y_mm = spacing[1];
    const std::size_t plane = dims[0] * dims[1];
    std::vector<std::uint8_t> mask;
    if (!block.contains("mask")) throw config_error("moran: 'mask' is required");
    const auto bytes = read_bytes(ctx.cfg.resolve(block.at("mask").get<std::string>()));
    if (bytes.size() == plane) mask = bytes;
    else if (bytes.size() == plane * dims[2]) mask.assign(bytes.begin() + static_cast<std::ptrdiff_t>(slice * plane),
                                                           bytes.begin() + static_cast<std::ptrdiff_t>((slice + 1) * plane));
    else throw data_error("moran: mask size does not match the maps");

    const auto rep = moran_compare(maps, mask, cfg);
    std::ostringstream csv, corr;
    csv << "map,q75,median\n";
    corr << "map";
    for (const auto& n : rep.names) corr << ',' << n;
    corr << '\n';
    json jmaps = json::array();
    for (std::size_t i = 0; i < rep.names.size(); ++i) {
        csv << rep.names[i] << ',' << fmt(rep.q75[i]) << ',' << fmt(rep.median[i]) << '\n';
        corr << rep.names[i];
        for (std::size_t k = 0; k < rep.names.size(); ++k) corr << ',' << fmt(rep.corr(i, k));
        corr << '\n';
        ParametricMap out{{dims[0], dims[1], 1}, spacing, "local_morans_i", {}};
        out.values.resize(plane);
        for (std::size_t p = 0; p < plane; ++p) out.values[p] = static_cast<float>(rep.local_i[i].values[p]);
        ctx.manifest.add_outputs(write_map(ctx.path("moran_" + rep.names[i]), out));
        jmaps.push_back({{"name", rep.names[i]}, {"q75", rep.q75[i]}, {"median", rep.median[i]}});
    }
    json matrix = json::array();
    for (std::size_t i = 0; i < rep.names.size(); ++i) {
        json row = json::array();
        for (std::size_t k = 0; k < rep.names.size(); ++k)
            row.push_back(std::isfinite(rep.corr(i, k)) ? json(rep.corr(i, k)) : json(nullptr));
        matrix.push_back(row);
    }
    ctx.text("moran_report.csv", csv.str());
    ctx.text("moran_correlation.csv", corr.str());
    write_json(ctx.path("moran_report.json"),
               {{"fwhm_mm", cfg.fwhm_mm}, {"slice", slice}, {"maps", jmaps}, {"correlation", matrix}});
    ctx.manifest.add_output(ctx.path("moran_report.json"));
    return ok;
}

int run(const std::string& command, const Options& opt, const std::function<int(Context&)>& body) {
    Context ctx = make_context(opt, command);
    const int rc = body(ctx);
    ctx.manifest.write(ctx.out);
    return rc;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Voxelwise rejection ABC for dynamic PET kinetic modelling"};
    app.require_subcommand(1);
    Options opt;
    auto common = [&opt](CLI::App* sub) {
        sub->add_option("--config", opt.config, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
        sub->add_option("--out", opt.out, "Output directory");
        sub->add_option("--workers", opt.workers, "Worker threads (default: VPETABC_WORKERS or all cores)");
        sub->add_option("--seed", opt.seed, "Seed, overrides the config");
        sub->add_option("--batch-bytes", opt.batch_bytes, "Memory budget for one ABC batch");
    };
    std::string baseline_method, calibrate_mode;
    auto* simulate = app.add_subcommand("simulate", "Simulate a TAC dataset and its ground truth");
    auto* infer = app.add_subcommand("infer", "Run ABC inference on a dataset");
    auto* summarize = app.add_subcommand("summarize", "Summaries and maps from an exported posterior");
    auto* baseline = app.add_subcommand("baseline", "Classical fits");
    baseline->add_option("method", baseline_method, "patlak | nnls-lpntpet | nnls-2tcm | grid-oracle")
        ->required()
        ->check(CLI::IsMember({"patlak", "nnls-lpntpet", "nnls-2tcm", "grid-oracle"}));
    auto* calibrate = app.add_subcommand("calibrate", "Pilot study over the number of accepted simulations");
    calibrate->add_option("mode", calibrate_mode, "mse | selection")->required()->check(CLI::IsMember({"mse", "selection"}));
    auto* moran = app.add_subcommand("moran", "Local Moran's I comparison of parametric maps");
    for (auto* s : {simulate, infer, summarize, baseline, calibrate, moran}) common(s);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? ok : config_failure;
    }

    try {
        if (*simulate) return run("simulate", opt, cmd_simulate);
        if (*infer) return run("infer", opt, cmd_infer);
        if (*summarize) return run("summarize", opt, cmd_summarize);
        if (*baseline) return run("baseline " + baseline_method, opt, [&](Context& c) { return cmd_baseline(c, baseline_method); });
        if (*calibrate) return run("calibrate " + calibrate_mode, opt, [&](Context& c) { return cmd_calibrate(c, calibrate_mode); });
        if (*moran) return run("moran", opt, cmd_moran);
    } catch (const budget_error& e) {
        std::cerr << "budget error: " << e.what() << " (largest feasible batch_rows: " << e.feasible_batch() << ")\n";
        return budget_failure;
    } catch (const config_error& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return config_failure;
    } catch (const json::exception& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return config_failure;
    } catch (const data_error& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return data_failure;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return runtime_failure;
    }
    return runtime_failure;
}

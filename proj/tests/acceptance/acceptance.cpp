#include "../unit/oracles.hpp"

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "vpetabc/abc.hpp"
#include "vpetabc/baselines.hpp"
#include "vpetabc/calibration.hpp"
#include "vpetabc/config.hpp"
#include "vpetabc/io.hpp"
#include "vpetabc/kinetics.hpp"
#include "vpetabc/spatial.hpp"

using namespace vpetabc;
using D = Distribution;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
    char buf[1024];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof buf, f, ap);
    va_end(ap);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

unsigned max_workers() { return std::max(1u, std::thread::hardware_concurrency()); }

Observations to_observations(const SimulationPool& pool) {
    Observations o{pool.size(), pool.frames, {}};
    o.values.assign(pool.curves.begin(), pool.curves.end());
    return o;
}

Curve reference_tac(const FineGrid& g, const FrameSchedule& s) {
    InputSpec in;
    in.type = InputSpec::Type::feng_tissue;
    in.feng = default_feng();
    in.K1 = 0.1;
    in.k2 = 0.3;
    return in.resolve(g, s);
}

// ---------------------------------------------------------------- 1

Outcome forward_model_fidelity() {
    const auto s = schedule_preset("fdg");
    const auto g = FineGrid::covering(s);
    std::mt19937_64 gen(2024);
    std::uniform_real_distribution<double> u(0, 1);
    double worst = 0;
    std::size_t redraws = 0;
    for (int i = 0; i < 1000; ++i) {
        FengParams f;
        do {
            f = {4e4 + u(gen) * 4.3e5, 1e4 + u(gen) * 1.9e5, 8e3 + u(gen) * 2.2e4,
                 1 + u(gen) * 999,     0.03 + u(gen) * 3.57, 0.01 + u(gen) * 0.025};
            redraws += !f.well_ordered();
        } while (!f.well_ordered());
        const TwoTcmParams p{0.001 + u(gen) * 0.999, 0.001 + u(gen) * 1.999, 0.001 + u(gen) * 0.499, u(gen) * 0.1,
                             0.03 + u(gen) * 0.17};
        const auto cp = feng_input(f, g);
        const auto got = simulate_2tcm(p, cp, g, s);
        auto tissue = oracle::rk4_2tcm(p.K1, p.k2, p.k3, p.k4, cp, g.step(), 10);
        for (std::size_t k = 0; k < tissue.size(); ++k) tissue[k] = (1 - p.Vb) * tissue[k] + p.Vb * cp[k];
        for (std::size_t fr = 0; fr < s.size(); ++fr) {
            const double want = oracle::frame_mean(tissue, g.step(), s.start(fr), s.end(fr));
            worst = std::max(worst, std::abs(got[fr] - want) / std::abs(want));
        }
    }
    return {worst < 1e-6, fmt("max relative frame error %.3e over 1000 draws (%zu input redraws for kappa order)", worst,
                              redraws)};
}

// ---------------------------------------------------------------- 2

Outcome nested_identity() {
    const auto s = schedule_preset("lpntpet");
    const auto g = FineGrid::covering(s);
    const auto ref = reference_tac(g, s);
    std::mt19937_64 gen(77);
    std::uniform_real_distribution<double> u(0, 1);
    double worst_abs = 0, worst_rel = 0;
    for (int i = 0; i < 1000; ++i) {
        LpNtPetParams p{0.6 + u(gen), 0.1 + 0.5 * u(gen), 0.02 + 0.18 * u(gen), 0.0, 15 + 10 * u(gen), 0,
                        0.1 + 2.9 * u(gen)};
        p.tP = p.tD + 1 + 29 * u(gen);
        const auto a = simulate_lpntpet(p, ref, g, s);
        const auto b = simulate_mrtm(p.R1, p.k2, p.k2a, ref, g, s);
        for (std::size_t f = 0; f < s.size(); ++f) {
            worst_abs = std::max(worst_abs, std::abs(a[f] - b[f]));
            if (b[f] != 0) worst_rel = std::max(worst_rel, std::abs(a[f] - b[f]) / std::abs(b[f]));
        }
    }
    return {worst_abs <= 1e-12, fmt("max |lp - mrtm| %.3e, max relative %.3e over 1000 draws", worst_abs, worst_rel)};
}

// ---------------------------------------------------------------- 3

AcceptedPosterior full_sort(const SimulationPool& pool, const Observations& obs, std::size_t n, DistanceKind kind) {
    AcceptedPosterior out{obs.voxels, n, {}};
    std::vector<AcceptedRecord> all(pool.size());
    for (std::size_t j = 0; j < obs.voxels; ++j) {
        for (std::size_t i = 0; i < pool.size(); ++i) {
            double d = 0;
            for (std::size_t f = 0; f < obs.frames; ++f) {
                const double t = static_cast<double>(pool.curve(i)[f]) - obs.tac(j)[f];
                d += kind == DistanceKind::l1 ? std::abs(t) : t * t;
            }
            all[i] = {i, d};
        }
        std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
            return a.distance != b.distance ? a.distance < b.distance : a.index < b.index;
        });
        for (std::size_t r = 0; r < n; ++r) {
            auto rec = all[r];
            if (kind == DistanceKind::l2) rec.distance = std::sqrt(rec.distance);
            out.records.push_back(rec);
        }
    }
    return out;
}

Outcome engine_exactness() {
    const auto s = schedule_preset("fdg");
    const auto g = FineGrid::covering(s);
    const Simulator sim(prior_preset("fdg-2tcm-wide"), feng_input(default_feng(), g), g, s, GaussianNoise{7.0});
    AbcConfig cfg;
    cfg.N = 10000;
    cfg.seed = 41;
    const auto pool = build_pool(sim, cfg);
    AbcConfig data = cfg;
    data.N = 50;
    data.seed = 42;
    const auto obs = to_observations(build_pool(sim, data));
    const std::vector<unsigned> workers{1u, max_workers(), 4u};
    std::size_t runs = 0, equal = 0;
    for (auto kind : {DistanceKind::l1, DistanceKind::l2})
        for (std::size_t n : {18u, 100u}) {
            const auto want = full_sort(pool, obs, n, kind);
            for (std::size_t batch : {std::size_t{37}, std::size_t{1000}, std::size_t{cfg.N}})
                for (unsigned w : workers) {
                    AbcConfig c = cfg;
                    c.n = n;
                    c.distance = kind;
                    c.batch_rows = batch;
                    c.workers = w;
                    ++runs;
                    equal += abc_infer(sim, obs, c) == want && select_top_n(pool, obs, c) == want;
                }
        }
    return {equal == runs, fmt("%zu/%zu configurations bit-identical to full sort (L1/L2, n 18/100, batch 37/1000/N, "
                               "workers 1/%u/4)",
                               equal, runs, max_workers())};
}

// ---------------------------------------------------------------- 4

Outcome posterior_fidelity() {
    const auto s = schedule_preset("lpntpet");
    const auto g = FineGrid::covering(s);
    const auto ref = reference_tac(g, s);
    const GaussianNoise noise{2.0, 20.4, GaussianStyle::lpntpet};
    const PriorSpec spec({ModelPrior{"lpntpet", ModelKind::lpntpet, 1.0,
                                     {D::fixed(1.0), D::fixed(0.3), D::uniform(0.02, 0.2), D::uniform(0.0, 0.1),
                                      D::fixed(25), D::fixed(35), D::fixed(1.0)}}});
    const PriorSpec truth({ModelPrior{"lpntpet", ModelKind::lpntpet, 1.0,
                                      {D::fixed(1.0), D::fixed(0.3), D::fixed(0.05), D::fixed(0.025), D::fixed(25),
                                       D::fixed(35), D::fixed(1.0)}}});
    const Simulator sim(spec, ref, g, s, noise);
    const std::size_t J = 50;
    AbcConfig dc;
    dc.N = J;
    dc.n = 1;
    dc.seed = 777;
    const auto obs = to_observations(build_pool(Simulator(truth, ref, g, s, noise), dc));
    std::vector<std::array<double, 2>> exact(J);
    const std::size_t res[2] = {300, 300};
    for (std::size_t j = 0; j < J; ++j) {
        const std::vector<double> y(obs.tac(j).begin(), obs.tac(j).end());
        const auto gp = grid_posterior(sim, y, 0, res, 50'000'000, max_workers());
        exact[j] = {gp.means[0], gp.means[1]};
    }
    const std::size_t ck = spec.column("k2a"), cg = spec.column("gamma");
    auto gaps = [&](std::uint64_t N, std::size_t n) {
        AbcConfig a;
        a.N = N;
        a.n = n;
        a.seed = 5;
        a.workers = max_workers();
        const auto smp = gather_samples(abc_infer(sim, obs, a), spec, a.seed);
        double mean_gap = 0, worst = 0;
        for (std::size_t j = 0; j < J; ++j) {
            double m[2] = {0, 0};
            for (std::size_t r = 0; r < n; ++r) {
                m[0] += smp.row(j, r)[ck];
                m[1] += smp.row(j, r)[cg];
            }
            for (int k = 0; k < 2; ++k) {
                const double e = std::abs(m[k] / double(n) - exact[j][k]) / std::abs(exact[j][k]);
                mean_gap += e / double(2 * J);
                worst = std::max(worst, e);
            }
        }
        return std::array<double, 2>{mean_gap, worst};
    };
    const auto a3 = gaps(1000, 100), a4 = gaps(10000, 100), a5 = gaps(100000, 100);
    const auto p3 = gaps(1000, 10), p4 = gaps(10000, 100), p5 = gaps(100000, 1000);
    const bool within = a5[1] <= 0.05;
    const bool monotone = a3[0] > a4[0] && a4[0] > a5[0];
    const bool monotone_p = p3[0] > p4[0] && p4[0] > p5[0];
    return {within && monotone && monotone_p,
            fmt("n=100 mean gap %.4f > %.4f > %.4f over N 1e3/1e4/1e5, worst TAC at 1e5 %.4f; n/N=1e-2 mean gap "
                "%.4f > %.4f > %.4f",
                a3[0], a4[0], a5[0], a5[1], p3[0], p4[0], p5[0])};
}

// ---------------------------------------------------------------- 5

double sign_test_p(std::size_t wins, std::size_t trials) {
    double p = 0;
    for (std::size_t k = wins; k <= trials; ++k)
        p += std::exp(std::lgamma(trials + 1.0) - std::lgamma(k + 1.0) - std::lgamma(trials - k + 1.0) -
                      double(trials) * std::log(2.0));
    return p;
}

Outcome estimation_vs_nnls() {
    const auto s = schedule_preset("fdg");
    const auto g = FineGrid::covering(s);
    const auto cp = feng_input(default_feng(), g);
    const auto spec = prior_preset("fdg-2tcm-wide");
    const Simulator sim(spec, cp, g, s, GaussianNoise{7.0});
    const std::size_t J = 500;
    AbcConfig dc;
    dc.N = J;
    dc.n = 1;
    dc.seed = 12345;
    const auto data = build_pool(sim, dc);
    const auto obs = to_observations(data);
    AbcConfig a;
    a.N = 1'000'000;
    a.n = 18;
    a.seed = 1;
    a.workers = max_workers();
    const auto smp = gather_samples(abc_infer(sim, obs, a), spec, a.seed);
    const std::size_t cK1 = spec.column("K1"), ck3 = spec.column("k3");
    std::size_t win1 = 0, tie1 = 0, win3 = 0, tie3 = 0;
    std::vector<double> ea, en;
    for (std::size_t j = 0; j < J; ++j) {
        double m1 = 0, m3 = 0;
        for (std::size_t r = 0; r < a.n; ++r) {
            m1 += smp.row(j, r)[cK1];
            m3 += smp.row(j, r)[ck3];
        }
        m1 /= double(a.n);
        m3 /= double(a.n);
        const auto truth = data.theta.row(j);
        const auto fit = nnls_2tcm_fit(obs.tac(j), cp, g, s);
        const double a1 = std::abs(std::log(m1 / truth[cK1])), n1 = std::abs(std::log(fit.coefficients[0] / truth[cK1]));
        const double a3 = std::abs(std::log(m3 / truth[ck3])), n3 = std::abs(std::log(fit.coefficients[2] / truth[ck3]));
        win1 += a1 < n1;
        tie1 += a1 == n1;
        win3 += a3 < n3;
        tie3 += a3 == n3;
        ea.push_back(a1);
        en.push_back(n1);
    }
    const double p1 = sign_test_p(win1, J - tie1), p3 = sign_test_p(win3, J - tie3);
    return {p1 < 0.05, fmt("K1: ABC closer in %zu/%zu (one-sided sign test p=%.4f), median |log-ratio| ABC %.3f NNLS "
                           "%.3f; k3: ABC closer in %zu/%zu (p=%.3f)",
                           win1, J - tie1, p1, oracle::quantile(ea, 0.5), oracle::quantile(en, 0.5), win3, J - tie3,
                           p3)};
}

// ---------------------------------------------------------------- 6

struct SelectionRates {
    double abc_sens, abc_spec, nnls_sens, nnls_spec, nnls4_sens, nnls4_spec;
};

SelectionRates selection_at(double level) {
    const std::size_t per = 500;
    const auto s = schedule_preset("lpntpet");
    const auto g = FineGrid::covering(s);
    const auto ref = reference_tac(g, s);
    const GaussianNoise noise{level, 20.4, GaussianStyle::lpntpet};
    const std::vector<D> base{D::uniform(0.6, 1.6), D::uniform(0.1, 0.6), D::uniform(0.02, 0.2)};
    const ModelPrior mrtm{"mrtm", ModelKind::mrtm, 0.5, base};
    const ModelPrior lp{"lpntpet", ModelKind::lpntpet, 0.5,
                        {base[0], base[1], base[2], D::uniform(0.0, 0.1), D::uniform(15, 25), D::offset("tD", 1, 30),
                         D::normal(0.7, 0.1, 0.1, 3)}};
    ModelPrior active = lp;
    active.params[3] = D::uniform(0.02, 0.1);
    const PilotScenario sc{s, g, ref, {}, noise,
                           {PilotClass{"activated", per, active, std::nullopt, true, {}},
                            PilotClass{"null", per, mrtm, std::nullopt, false, {}}},
                           1};
    const auto ph = simulate_phantom(sc, 99, max_workers());
    const Simulator sim(PriorSpec({mrtm, lp}), ref, g, s, noise);
    AbcConfig a;
    a.N = 1'000'000;
    a.seed = 3;
    a.workers = max_workers();
    const auto rep = pilot_selection(sc, ph, sim, {100}, a);
    const BasisLibrary lib(s);
    const auto ref_frames = frame_average(ref, g, s);
    std::size_t tp7 = 0, tn7 = 0, tp4 = 0, tn4 = 0;
    for (std::size_t j = 0; j < ph.obs.voxels; ++j) {
        const auto f = nnls_lpntpet_fit(ph.obs.tac(j), ref_frames, s, lib);
        const bool d7 = bic_select(f.lpntpet, f.mrtm, s.size(), BicCounts{7, 3}) == SelectedModel::lpntpet;
        const bool d4 = bic_select(f.lpntpet, f.mrtm, s.size()) == SelectedModel::lpntpet;
        if (ph.class_of[j] == 0) {
            tp7 += d7;
            tp4 += d4;
        } else {
            tn7 += !d7;
            tn4 += !d4;
        }
    }
    const double P = double(per);
    return {rep.rows[0].sensitivity.value(), rep.rows[0].specificity.value(), tp7 / P, tn7 / P, tp4 / P, tn4 / P};
}

Outcome selection_tradeoff() {
    const double tol = 0.1;
    const auto lo = selection_at(20.0);
    const auto hi = selection_at(120.0);
    const bool low_ok = lo.abc_sens >= 0.85 - tol && lo.abc_spec >= 0.90 - tol;
    const bool high_ok = hi.abc_sens >= 0.75 - tol && hi.nnls_sens <= 0.3 + tol && hi.nnls_spec >= 0.95 - tol;
    const bool strict = lo.abc_sens >= 0.85 && lo.abc_spec >= 0.90 && hi.abc_sens >= 0.75 && hi.nnls_sens <= 0.3 &&
                        hi.nnls_spec >= 0.95;
    return {low_ok && high_ok,
            fmt("low (l=20): ABC %.3f/%.3f, NNLS+BIC %.3f/%.3f; high (l=120): ABC %.3f/%.3f, NNLS+BIC %.3f/%.3f "
                "(sens/spec, ABC n=100 N=1e6, BIC k=7/3); thresholds without tolerance %s; with k=4/3 NNLS "
                "low %.3f/%.3f high %.3f/%.3f",
                lo.abc_sens, lo.abc_spec, lo.nnls_sens, lo.nnls_spec, hi.abc_sens, hi.abc_spec, hi.nnls_sens,
                hi.nnls_spec, strict ? "met" : "not all met", lo.nnls4_sens, lo.nnls4_spec, hi.nnls4_sens,
                hi.nnls4_spec)};
}

// ---------------------------------------------------------------- 7

Outcome calibration_trend() {
    const auto s = schedule_preset("calibration");
    const auto g = FineGrid::covering(s);
    const auto ref = reference_tac(g, s);
    const GaussianNoise noise{80.0, 20.4, GaussianStyle::lpntpet};
    const std::vector<D> base{D::uniform(0.6, 1.6), D::uniform(0.1, 0.6), D::uniform(0.02, 0.2)};
    auto lp = [&](D td, D tp) {
        return ModelPrior{"lpntpet", ModelKind::lpntpet, 0.5,
                          {base[0], base[1], base[2], D::fixed(0), td, tp, D::normal(0.7, 0.1, 0.1, 3)}};
    };
    const D early_td = D::uniform(30, 35), early_tp = D::offset("tD", 3, 8);
    const D late_td = D::uniform(35, 40), late_tp = D::offset("tD", 10, 15);
    const D low = D::normal(150, 20, 0, 1e9), high = D::normal(350, 20, 0, 1e9);
    const ModelPrior mrtm{"mrtm", ModelKind::mrtm, 0.5, base};
    const PilotScenario sc{s, g, ref, {}, noise,
                           {PilotClass{"early_low", 336, lp(early_td, early_tp), low, true, {"low", "early"}},
                            PilotClass{"early_high", 336, lp(early_td, early_tp), high, true, {"high", "early"}},
                            PilotClass{"late_low", 336, lp(late_td, late_tp), low, true, {"low", "late"}},
                            PilotClass{"late_high", 337, lp(late_td, late_tp), high, true, {"high", "late"}},
                            PilotClass{"null", 505, mrtm, std::nullopt, false, {}}},
                           1};
    const ModelPrior abc_lp{"lpntpet", ModelKind::lpntpet, 0.5,
                            {base[0], base[1], base[2], D::uniform(0, 0.8), D::uniform(25, 45), D::offset("tD", 1, 20),
                             D::normal(0.7, 0.1, 0.1, 3)}};
    const Simulator sim(PriorSpec({mrtm, abc_lp}), ref, g, s, noise);
    AbcConfig a;
    a.N = 1'000'000;
    a.seed = 8;
    a.workers = max_workers();
    const std::vector<std::size_t> sweep{200, 150, 100, 50, 25, 15};
    const auto rep = pilot_selection(sc, sim, sweep, a, 31);
    std::map<std::size_t, const SelectionRow*> by_n;
    for (const auto& r : rep.rows) by_n[r.n] = &r;
    std::vector<double> act, null;
    bool low_early_weakest = true;
    std::string table;
    for (auto n : sweep) {
        const auto& r = *by_n.at(n);
        act.push_back(r.sensitivity.value());
        null.push_back(r.specificity.value());
        double weakest = 1e9;
        std::size_t arg = 0;
        for (std::size_t c = 0; c < 4; ++c)
            if (r.per_class[c].value() < weakest) {
                weakest = r.per_class[c].value();
                arg = c;
            }
        low_early_weakest = low_early_weakest && arg == 0;
        table += fmt(" n=%zu %.3f/%.3f (el %.3f eh %.3f ll %.3f lh %.3f)", n, act.back(), null.back(),
                     r.per_class[0].value(), r.per_class[1].value(), r.per_class[2].value(), r.per_class[3].value());
    }
    auto trend_ok = [](const std::vector<double>& v, int sign) {
        std::size_t inversions = 0;
        for (std::size_t i = 1; i < v.size(); ++i) {
            const double step = sign * (v[i] - v[i - 1]);
            if (step < 0) {
                if (-step > 0.01) return false;
                ++inversions;
            }
        }
        return inversions <= 1;
    };
    const bool ok = trend_ok(act, 1) && trend_ok(null, -1) && low_early_weakest;
    return {ok, fmt("activated/null detection (per class) over the sweep:%s; early_low weakest at every n: %s",
                    table.c_str(), low_early_weakest ? "yes" : "no")};
}

// ---------------------------------------------------------------- 8

Outcome patlak_behaviour() {
    const auto s = schedule_preset("fdg");
    const auto g = FineGrid::covering(s);
    const auto cp = feng_input(default_feng(), g);
    std::vector<double> cp_mid(s.size());
    for (std::size_t f = 0; f < s.size(); ++f) cp_mid[f] = oracle::lerp_curve(cp, g.step(), s.mid(f));
    const auto icp = integral_at_mid_times(cp, g, s);
    const std::vector<std::array<double, 4>> sets{{0.1, 0.2, 0.05, 0.0}, {0.5, 1.2, 0.3, 0.05}, {0.05, 0.1, 0.1, 0.1}};
    double worst_irr = 0, weakest_drop = 1;
    for (const auto& p : sets) {
        // TAC = (1 - Vb)·tissue + Vb·Cp: slope (1 - Vb)·Ki, Vb·Cp/Cp goes to the intercept
        const double ki = (1 - p[3]) * p[0] * p[2] / (p[1] + p[2]);
        const auto irr = simulate_2tcm({p[0], p[1], p[2], 0.0, p[3]}, cp, g, s);
        worst_irr = std::max(worst_irr, std::abs(patlak_fit(irr, cp_mid, icp, s).slope - ki) / ki);
        const auto rev = simulate_2tcm({p[0], p[1], p[2], 0.05, p[3]}, cp, g, s);
        weakest_drop = std::min(weakest_drop, 1 - patlak_fit(rev, cp_mid, icp, s).slope / ki);
    }
    return {worst_irr <= 0.02 && weakest_drop >= 0.10,
            fmt("irreversible worst relative Ki error %.4f; k4=0.05 smallest underestimate %.3f (3 parameter sets)",
                worst_irr, weakest_drop)};
}

// ---------------------------------------------------------------- 9

Map2d noise_map(std::size_t nx, std::size_t ny, std::uint64_t seed) {
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> z;
    Map2d m{nx, ny, std::vector<double>(nx * ny)};
    for (auto& v : m.values) v = z(gen);
    return m;
}

Map2d box_smooth(const Map2d& m) {
    Map2d out{m.nx, m.ny, std::vector<double>(m.size())};
    for (std::size_t y = 0; y < m.ny; ++y)
        for (std::size_t x = 0; x < m.nx; ++x) {
            double acc = 0;
            int c = 0;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const long xx = long(x) + dx, yy = long(y) + dy;
                    if (xx < 0 || yy < 0 || xx >= long(m.nx) || yy >= long(m.ny)) continue;
                    acc += m.at(std::size_t(xx), std::size_t(yy));
                    ++c;
                }
            out.values[y * m.nx + x] = acc / c;
        }
    return out;
}

Outcome moran_pipeline() {
    const MoranConfig cfg{40.0, 1.6456, 3.3};
    std::vector<std::uint8_t> mask(30 * 25, 1);
    for (std::size_t i = 0; i < mask.size(); i += 7) mask[i] = 0;
    const auto w = moran_weights(30, 25, mask, cfg);
    double row_err = 0;
    for (std::size_t j = 0; j < mask.size(); ++j) {
        double total = 0;
        for (std::size_t k = 0; k < 8; ++k) total += w.weights[j * 8 + k];
        row_err = std::max(row_err, std::abs(total - (w.has_neighbours[j] ? 1.0 : 0.0)));
    }

    const MoranConfig unit{40.0, 1.0, 1.0};
    Map2d strip{9, 8, std::vector<double>(72)};
    for (std::size_t y = 0; y < 8; ++y)
        for (std::size_t x = 0; x < 9; ++x) strip.values[y * 9 + x] = (x % 2) ? -1.0 : 1.0;
    std::vector<std::uint8_t> one_row(72, 0);
    for (std::size_t x = 0; x < 9; ++x) one_row[4 * 9 + x] = 1;
    const auto Is = local_morans_i(strip, one_row, unit);
    double strip_err = 0;
    for (std::size_t x = 0; x < 9; ++x) strip_err = std::max(strip_err, std::abs(Is.at(x, 4) + 1.0));

    Map2d board{9, 8, std::vector<double>(72)};
    for (std::size_t y = 0; y < 8; ++y)
        for (std::size_t x = 0; x < 9; ++x) board.values[y * 9 + x] = (x + y) % 2 ? -1.0 : 1.0;
    const double wd = 1.0 / std::sqrt(2.0);
    const double board_want = (-4 + 4 * wd) / (4 + 4 * wd);
    const auto Ib = local_morans_i(board, {}, unit);
    double board_err = 0;
    for (std::size_t y = 1; y < 7; ++y)
        for (std::size_t x = 1; x < 8; ++x) board_err = std::max(board_err, std::abs(Ib.at(x, y) - board_want));

    std::mt19937_64 gen(17);
    std::normal_distribution<double> nz;
    double loop_err = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const MoranConfig c{40.0, 1.0 + 0.5 * (trial % 3), 1.0 + 0.7 * (trial % 2)};
        Map2d z{3, 3, std::vector<double>(9)};
        for (auto& v : z.values) v = nz(gen);
        std::vector<std::uint8_t> m(9, 1);
        if (trial % 4 == 1) m[gen() % 9] = 0;
        const auto I = local_morans_i(z, m, c);
        for (int y = 0; y < 3; ++y)
            for (int x = 0; x < 3; ++x) {
                if (!m[y * 3 + x]) continue;
                double num = 0, den = 0;
                for (int yy = 0; yy < 3; ++yy)
                    for (int xx = 0; xx < 3; ++xx) {
                        if ((xx == x && yy == y) || std::abs(xx - x) > 1 || std::abs(yy - y) > 1 || !m[yy * 3 + xx])
                            continue;
                        const double d = std::hypot((xx - x) * c.spacing_x_mm, (yy - y) * c.spacing_y_mm);
                        num += z.at(xx, yy) / d;
                        den += 1.0 / d;
                    }
                loop_err = std::max(loop_err, std::abs(I.at(x, y) - z.at(x, y) * num / den));
            }
    }

    const auto raw = noise_map(60, 40, 5);
    const std::vector<NamedMap> maps{{"raw", raw}, {"smooth", box_smooth(raw)}};
    const auto rep = moran_compare(maps, {}, cfg);

    const bool ok = row_err <= 1e-12 && strip_err <= 1e-12 && board_err <= 1e-12 && loop_err <= 1e-12 &&
                    rep.q75[1] > rep.q75[0];
    return {ok, fmt("row-sum error %.1e; strip checkerboard |I+1| %.1e; 2D checkerboard interior I=%.6f (derived "
                    "%.6f); 3x3 loop error %.1e; q75 smoothed %.3f > raw %.3f",
                    row_err, strip_err, Ib.at(4, 4), board_want, loop_err, rep.q75[1], rep.q75[0])};
}

// ---------------------------------------------------------------- 10

Outcome throughput() {
    const auto s = schedule_preset("fdg");
    const auto g = FineGrid::covering(s);
    const Simulator sim(prior_preset("fdg-2tcm-wide"), feng_input(default_feng(), g), g, s, GaussianNoise{7.0});
    auto run = [&](std::size_t J) {
        AbcConfig dc;
        dc.N = J;
        dc.n = 1;
        dc.seed = 99;
        const auto obs = to_observations(build_pool(sim, dc));
        AbcConfig a;
        a.N = 1'000'000;
        a.n = 18;
        a.seed = 1;
        a.workers = max_workers();
        const auto t0 = std::chrono::steady_clock::now();
        const auto post = abc_infer(sim, obs, a);
        const auto samples = gather_samples(post, sim.spec(), a.seed);
        const double dt = seconds_since(t0);
        return samples.voxels == J ? dt : -1.0;
    };
    const double t_small = run(100), t_large = run(10000);
    const double ratio = (t_large / 1e4) / (t_small / 1e2);
    return {t_small > 0 && t_large > 0 && ratio < 0.2 && t_large < 1800,
            fmt("J=1e2 %.2f s (%.4f s/voxel), J=1e4 %.1f s (%.4f s/voxel), ratio %.3f, %u worker(s)", t_small,
                t_small / 1e2, t_large, t_large / 1e4, ratio, max_workers())};
}

// ---------------------------------------------------------------- 11

#ifdef VPETABC_CLI_PATH

struct Scratch {
    fs::path path;
    Scratch() {
        std::random_device rd;
        path = fs::temp_directory_path() / ("vpetabc_accept_" + std::to_string(rd()) + std::to_string(rd()));
        fs::create_directories(path);
    }
    ~Scratch() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
};

int cli(const std::string& args) {
    const int st = std::system((std::string(VPETABC_CLI_PATH) + " " + args + " >/dev/null 2>&1").c_str());
    return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

std::map<std::string, std::string> tree(const fs::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (!e.is_regular_file() || e.path().filename() == "manifest.json") continue;
        out[fs::relative(e.path(), root).generic_string()] = sha256_file(e.path());
    }
    return out;
}

std::map<std::string, std::string> manifest_outputs(const fs::path& root) {
    std::map<std::string, std::string> out;
    const auto man = read_json(root / "manifest.json");
    for (const auto& o : man.at("outputs"))
        out[o.at("path").get<std::string>()] = o.at("sha256").get<std::string>();
    return out;
}

Outcome reproducibility() {
    Scratch tmp;
    const auto& d = tmp.path;
    auto uni = [](double lo, double hi) { return json{{"uniform", {lo, hi}}}; };
    const json fdg_noise{{"type", "gaussian"}, {"level", 7.0}};
    const json lp_noise{{"type", "gaussian"}, {"level", 2.0}, {"style", "lpntpet"}, {"half_life_min", 20.4}};
    const json ref{{"type", "feng_tissue"}, {"K1", 0.1}, {"k2", 0.3}};
    const json lp_truth{{"kind", "lpntpet"},
                        {"params",
                         {{"R1", uni(0.8, 1.2)},
                          {"k2", uni(0.2, 0.4)},
                          {"k2a", uni(0.05, 0.1)},
                          {"gamma", uni(0.01, 0.1)},
                          {"tD", uni(15, 25)},
                          {"tP", {{"offset", {{"base", "tD"}, {"range", {5, 15}}}}}},
                          {"alpha", 1.0}}}};
    const json mrtm_truth{{"kind", "mrtm"}, {"params", {{"R1", uni(0.8, 1.2)}, {"k2", uni(0.2, 0.4)}, {"k2a", uni(0.05, 0.1)}}}};
    const json toy_priors{
        {"models",
         {{{"name", "lpntpet"},
           {"kind", "lpntpet"},
           {"probability", 1.0},
           {"params",
            {{"R1", 1.0}, {"k2", 0.3}, {"k2a", uni(0.02, 0.2)}, {"gamma", uni(0.0, 0.1)}, {"tD", 20.0}, {"tP", 30.0}, {"alpha", 1.0}}}}}}};

    std::vector<std::pair<std::string, json>> steps;
    steps.push_back({"simulate fdg",
                     {{"seed", 7},
                      {"schedule", {{"preset", "fdg"}}},
                      {"input", {{"type", "feng"}}},
                      {"noise", fdg_noise},
                      {"simulate",
                       {{"dims", {12, 10, 1}},
                        {"classes",
                         {{{"name", "fdg"},
                           {"count", 120},
                           {"truth",
                            {{"kind", "2tcm"},
                             {"params",
                              {{"K1", uni(0.001, 1)}, {"k2", uni(0.001, 2)}, {"k3", uni(0.001, 0.5)}, {"k4", uni(0, 0.1)},
                               {"Vb", uni(0.03, 0.2)}}}}}}}}}}}});
    const std::string fdg_ds = (d / "simulate_fdg_w1" / "dataset.json").string();
    const json fdg_infer{{"seed", 3},
                         {"dataset", fdg_ds},
                         {"priors", {{"preset", "fdg-2tcm"}}},
                         {"noise", fdg_noise},
                         {"abc", {{"N", 20000}, {"n", 18}, {"batch_rows", 3001}}}};
    steps.push_back({"infer", fdg_infer});
    json summ = fdg_infer;
    summ["posterior"] = (d / "infer_w1" / "posterior").string();
    steps.push_back({"summarize", summ});
    steps.push_back({"baseline patlak", {{"dataset", fdg_ds}, {"baseline", {{"t_star", 20.0}}}}});
    steps.push_back({"baseline nnls-2tcm", {{"dataset", fdg_ds}, {"baseline", {{"starts", 4}}}}});
    steps.push_back({"simulate lp",
                     {{"seed", 11},
                      {"schedule", {{"preset", "lpntpet"}}},
                      {"input", ref},
                      {"noise", lp_noise},
                      {"simulate",
                       {{"classes",
                         {{{"name", "active"}, {"count", 30}, {"truth", lp_truth}},
                          {{"name", "null"}, {"count", 30}, {"activated", false}, {"truth", mrtm_truth}}}}}}}});
    const std::string lp_ds = (d / "simulate_lp_w1" / "dataset.json").string();
    steps.push_back({"baseline nnls-lpntpet", {{"dataset", lp_ds}, {"input", ref}}});
    steps.push_back({"baseline grid-oracle",
                     {{"dataset", lp_ds},
                      {"input", ref},
                      {"priors", toy_priors},
                      {"noise", lp_noise},
                      {"baseline", {{"grid", {{"resolution", {40, 40}}, {"max_voxels", 6}}}}}}});
    const json scenario{
        {"classes",
         {{{"name", "active"}, {"count", 20}, {"truth", lp_truth}, {"tags", {"lp"}}},
          {{"name", "null"}, {"count", 20}, {"truth", mrtm_truth}}}}};
    json calib{{"seed", 5},
               {"schedule", {{"preset", "lpntpet"}}},
               {"input", ref},
               {"priors", {{"preset", "raclopride-lpntpet"}}},
               {"noise", lp_noise},
               {"abc", {{"N", 20000}, {"n", 18}}}};
    calib["calibrate"] = {{"n_grid", {10, 25, 50}}, {"scenario", scenario}, {"targets", {"k2", "k2a"}}};
    steps.push_back({"calibrate mse", calib});
    steps.push_back({"calibrate selection", calib});
    steps.push_back({"moran",
                     {{"moran",
                       {{"fwhm_mm", 12},
                        {"mask", "mask.u8"},
                        {"maps",
                         {{{"name", "abc_k1"}, {"path", (d / "infer_w1" / "maps" / "K1_mean").string()}},
                          {{"name", "patlak"}, {"path", (d / "baseline_patlak_w1" / "maps" / "patlak_ki").string()}}}}}}}});
    std::vector<std::uint8_t> mask(120, 1);
    write_bytes(d / "mask.u8", mask.data(), mask.size());

    std::string report;
    bool ok = true;
    for (const auto& [cmd, cfg] : steps) {
        std::string tag = cmd;
        std::replace(tag.begin(), tag.end(), ' ', '_');
        std::replace(tag.begin(), tag.end(), '-', '_');
        const auto cfg_path = d / (tag + ".json");
        write_json(cfg_path, cfg);
        const std::string sub = cmd.rfind("simulate", 0) == 0 ? "simulate" : cmd;
        int codes[2];
        const unsigned w[2] = {1, 3};
        for (int k = 0; k < 2; ++k)
            codes[k] = cli(sub + " --config " + cfg_path.string() + " --out " +
                           (d / (tag + "_w" + std::to_string(w[k]))).string() + " --workers " + std::to_string(w[k]));
        bool same = codes[0] == 0 && codes[1] == 0;
        std::size_t files = 0;
        if (same) {
            const auto a = tree(d / (tag + "_w1")), b = tree(d / (tag + "_w3"));
            same = a == b && manifest_outputs(d / (tag + "_w1")) == a && manifest_outputs(d / (tag + "_w3")) == b;
            files = a.size();
            const int again = cli(sub + " --config " + cfg_path.string() + " --out " + (d / (tag + "_again")).string() +
                                  " --workers 1");
            const bool repeat = again == 0 && tree(d / (tag + "_again")) == a;
            same = same && repeat;
        }
        ok = ok && same;
        report += fmt(" %s[%d/%d,%zu files,%s]", tag.c_str(), codes[0], codes[1], files, same ? "identical" : "differs");
    }
    return {ok, "workers 1/3 and a repeat run:" + report};
}

#endif

} // namespace

int main(int argc, char** argv) {
    std::vector<std::pair<int, std::function<Outcome()>>> criteria{
        {1, forward_model_fidelity}, {2, nested_identity},   {3, engine_exactness}, {4, posterior_fidelity},
        {5, estimation_vs_nnls},     {6, selection_tradeoff}, {7, calibration_trend}, {8, patlak_behaviour},
        {9, moran_pipeline},         {10, throughput},
#ifdef VPETABC_CLI_PATH
        {11, reproducibility},
#endif
    };
    const std::map<int, double> budget{{1, 60}, {2, 10}, {3, 60}, {4, 600}, {5, 1800}, {6, 1800}, {7, 1800},
                                       {8, 10}, {9, 10}, {10, 1800}, {11, 1800}};
    std::set<int> only;
    for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
    int bad = 0;
    for (const auto& [k, fn] : criteria) {
        if (!only.empty() && !only.count(k)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double dt = seconds_since(t0);
        const bool in_time = dt < budget.at(k);
        const bool pass = o.pass && in_time;
        bad += !pass;
        std::printf("criterion %d: %s %s [%.1f s, budget %.0f s]\n", k, pass ? "PASS" : "FAIL", o.detail.c_str(), dt,
                    budget.at(k));
        std::fflush(stdout);
    }
#ifndef VPETABC_CLI_PATH
    if (only.empty() || only.count(11)) {
        std::printf("criterion 11: FAIL command-line tool not built\n");
        ++bad;
    }
#endif
    return bad == 0 ? 0 : 1;
}

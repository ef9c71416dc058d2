#include "vpetabc/calibration.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "vpetabc/common.hpp"
#include "vpetabc/parallel.hpp"
#include "vpetabc/posterior.hpp"
#include "vpetabc/rng.hpp"

namespace vpetabc {

namespace {

constexpr double nan_v = std::numeric_limits<double>::quiet_NaN();

std::vector<std::size_t> checked_grid(std::vector<std::size_t> n_grid, const AbcConfig& cfg) {
    if (n_grid.empty()) throw config_error("calibration: n grid is empty");
    std::sort(n_grid.begin(), n_grid.end());
    n_grid.erase(std::unique(n_grid.begin(), n_grid.end()), n_grid.end());
    if (n_grid.front() == 0) throw config_error("calibration: n must be >= 1");
    if (n_grid.back() > cfg.N)
        throw config_error("calibration: n " + std::to_string(n_grid.back()) + " exceeds N " + std::to_string(cfg.N));
    return n_grid;
}

AbcConfig at_max_n(AbcConfig cfg, const std::vector<std::size_t>& n_grid) {
    cfg.n = n_grid.back();
    cfg.validate();
    return cfg;
}

} // namespace

std::size_t PilotScenario::voxels_per_replicate() const {
    std::size_t total = 0;
    for (const auto& c : classes) total += c.count;
    return total;
}

void PilotScenario::validate() const {
    if (classes.empty()) throw config_error("scenario: at least one class is required");
    if (replicates < 1) throw config_error("scenario: replicates must be >= 1");
    for (const auto& c : classes) {
        if (c.count == 0) throw config_error("scenario: class '" + c.name + "' is empty");
        if (c.response_percent && c.truth.kind != ModelKind::lpntpet)
            throw config_error("scenario: class '" + c.name + "' sets response_percent on a model without gamma");
    }
    vpetabc::validate(noise);
    (void)truth_spec();
}

PriorSpec PilotScenario::truth_spec() const {
    std::vector<ModelPrior> models;
    const double total = static_cast<double>(voxels_per_replicate());
    for (const auto& c : classes) {
        ModelPrior m = c.truth;
        m.name = c.name;
        m.probability = static_cast<double>(c.count) / total;
        models.push_back(std::move(m));
    }
    // probabilities only shape the column layout here; renormalise rounding
    double sum = 0.0;
    for (const auto& m : models) sum += m.probability;
    for (auto& m : models) m.probability /= sum;
    return PriorSpec(std::move(models));
}

Phantom simulate_phantom(const PilotScenario& scenario, std::uint64_t seed, unsigned workers) {
    scenario.validate();
    const PriorSpec spec = scenario.truth_spec();
    std::vector<PriorSpec> single;
    for (const auto& c : scenario.classes) {
        ModelPrior m = c.truth;
        m.name = c.name;
        m.probability = 1.0;
        single.emplace_back(std::vector<ModelPrior>{m});
    }
    const Simulator sim(spec, scenario.input, scenario.grid, scenario.schedule, scenario.noise, scenario.whole_blood);

    const std::size_t per = scenario.voxels_per_replicate();
    const std::size_t J = scenario.voxel_count();
    const std::size_t L = scenario.schedule.size();
    Phantom ph;
    ph.columns = spec.columns();
    ph.obs = Observations{J, L, std::vector<double>(J * L)};
    ph.truth = ThetaMatrix{J, spec.parameter_columns() + 1, std::vector<double>(J * (spec.parameter_columns() + 1))};
    ph.class_of.resize(J);
    std::vector<std::size_t> class_start;
    for (std::size_t c = 0, acc = 0; c < scenario.classes.size(); acc += scenario.classes[c].count, ++c)
        class_start.push_back(acc);
    for (std::size_t v = 0; v < J; ++v) {
        const std::size_t local = v % per;
        const auto it = std::upper_bound(class_start.begin(), class_start.end(), local);
        ph.class_of[v] = static_cast<std::size_t>(it - class_start.begin()) - 1;
    }

    const std::uint64_t truth_seed = derive_seed(seed, "truth");
    const std::uint64_t response_seed = derive_seed(seed, "response");
    const std::uint64_t phantom_noise = derive_seed(seed, "phantom-noise");
    parallel_for(J, workers, [&](std::size_t begin, std::size_t end) {
        std::vector<double> local, fine(scenario.grid.nodes());
        for (std::size_t v = begin; v < end; ++v) {
            const std::size_t c = ph.class_of[v];
            const auto& cls = scenario.classes[c];
            const auto& one = single[c];
            local.assign(one.parameter_columns() + 1, 0.0);
            one.sample_row(truth_seed, v, local);
            auto row = ph.truth.row(v);
            std::fill(row.begin(), row.end(), nan_v);
            row[0] = static_cast<double>(c);
            for (std::size_t k = 0; k < cls.truth.params.size(); ++k)
                row[spec.column_of(c, k)] = local[one.column_of(0, k)];
            if (cls.response_percent) {
                ModelPrior pm{"response", ModelKind::mrtm, 1.0,
                              {*cls.response_percent, Distribution::fixed(1), Distribution::fixed(1)}};
                const PriorSpec pct_spec({pm});
                double pct_row[4];
                pct_spec.sample_row(response_seed, v, pct_row);
                row[spec.column_of(c, 3)] = row[spec.column_of(c, 2)] * pct_row[1] / 100.0;
            }
            const auto out = std::span<double>(ph.obs.values).subspan(v * L, L);
            try {
                sim.clean_curve(row, fine, out);
            } catch (const error& e) {
                throw data_error("phantom voxel " + std::to_string(v) + ": " + e.what());
            }
            counter_engine rng(phantom_noise, v);
            apply_noise(out, scenario.noise, scenario.schedule, rng);
        }
    });
    return ph;
}

MseFit fit_mse_curve(const std::vector<std::size_t>& n_grid, const std::vector<double>& mse) {
    MseFit fit;
    std::size_t raw = 0;
    for (std::size_t i = 1; i < mse.size(); ++i)
        if (mse[i] < mse[raw]) raw = i;
    fit.argmin_n = static_cast<double>(n_grid[raw]);
    if (n_grid.size() == 1) return fit;
    if (n_grid.size() < 3) {
        fit.flagged = true;
        return fit;
    }
    const auto m = static_cast<Eigen::Index>(n_grid.size());
    Eigen::MatrixXd X(m, 3);
    Eigen::VectorXd y(m);
    for (Eigen::Index i = 0; i < m; ++i) {
        const double x = std::log(static_cast<double>(n_grid[static_cast<std::size_t>(i)]));
        X(i, 0) = 1.0;
        X(i, 1) = x;
        X(i, 2) = x * x;
        y(i) = mse[static_cast<std::size_t>(i)];
    }
    const Eigen::Vector3d c = X.colPivHouseholderQr().solve(y);
    fit.coefficients = {c(0), c(1), c(2)};
    if (!(c(2) > 0) || !std::isfinite(c(1))) {
        fit.flagged = true;
        return fit;
    }
    const double lo = std::log(static_cast<double>(n_grid.front()));
    const double hi = std::log(static_cast<double>(n_grid.back()));
    fit.argmin_n = std::exp(std::clamp(-c(1) / (2.0 * c(2)), lo, hi));
    fit.fitted = true;
    return fit;
}

MseReport pilot_mse(const PilotScenario& scenario, const Simulator& sim, std::vector<std::size_t> n_grid,
                    const std::vector<std::string>& targets, const AbcConfig& cfg, std::uint64_t phantom_seed) {
    return pilot_mse(simulate_phantom(scenario, phantom_seed, cfg.workers), sim, std::move(n_grid), targets, cfg);
}

MseReport pilot_mse(const Phantom& phantom, const Simulator& sim, std::vector<std::size_t> n_grid,
                    const std::vector<std::string>& targets, const AbcConfig& cfg) {
    n_grid = checked_grid(std::move(n_grid), cfg);
    if (targets.empty()) throw config_error("calibration: no target parameters");
    std::vector<std::size_t> abc_col, truth_col;
    for (const auto& t : targets) {
        const std::size_t a = sim.spec().column(t);
        const auto it = std::find(phantom.columns.begin(), phantom.columns.end(), t);
        if (a == 0 || it == phantom.columns.end())
            throw config_error("calibration: target '" + t + "' is not shared by the prior and the scenario");
        abc_col.push_back(a);
        truth_col.push_back(static_cast<std::size_t>(it - phantom.columns.begin()) + 1);
    }
    const AbcConfig run = at_max_n(cfg, n_grid);
    const auto post = abc_infer(sim, phantom.obs, run);
    const auto samples = gather_samples(post, sim.spec(), run.seed);

    MseReport rep;
    rep.n_grid = n_grid;
    rep.targets = targets;
    for (std::size_t t = 0; t < targets.size(); ++t) {
        std::vector<double> curve;
        for (std::size_t n : n_grid) {
            double sum = 0.0;
            std::size_t used = 0;
            for (std::size_t j = 0; j < samples.voxels; ++j) {
                const double truth = phantom.truth.row(j)[truth_col[t]];
                if (!std::isfinite(truth)) continue;
                double mean = 0.0;
                std::size_t count = 0;
                for (std::size_t r = 0; r < n; ++r) {
                    const double v = samples.row(j, r)[abc_col[t]];
                    if (std::isfinite(v)) {
                        mean += v;
                        ++count;
                    }
                }
                if (count == 0) continue;
                mean /= static_cast<double>(count);
                sum += (mean - truth) * (mean - truth);
                ++used;
            }
            curve.push_back(used ? sum / static_cast<double>(used) : nan_v);
        }
        rep.fits.push_back(fit_mse_curve(n_grid, curve));
        rep.mse.push_back(std::move(curve));
    }
    return rep;
}

double Rate::value() const { return total ? static_cast<double>(hits) / static_cast<double>(total) : nan_v; }

double roc_auc(const std::vector<double>& positives, const std::vector<double>& negatives) {
    if (positives.empty() || negatives.empty()) return nan_v;
    std::vector<double> neg = negatives;
    std::sort(neg.begin(), neg.end());
    double acc = 0.0;
    for (double p : positives) {
        const auto lo = std::lower_bound(neg.begin(), neg.end(), p);
        const auto hi = std::upper_bound(neg.begin(), neg.end(), p);
        acc += static_cast<double>(lo - neg.begin()) + 0.5 * static_cast<double>(hi - lo);
    }
    return acc / (static_cast<double>(positives.size()) * static_cast<double>(neg.size()));
}

SelectionReport pilot_selection(const PilotScenario& scenario, const Simulator& sim, std::vector<std::size_t> n_grid,
                                const AbcConfig& cfg, std::uint64_t phantom_seed, double specificity_floor) {
    return pilot_selection(scenario, simulate_phantom(scenario, phantom_seed, cfg.workers), sim, std::move(n_grid), cfg,
                           specificity_floor);
}

SelectionReport pilot_selection(const PilotScenario& scenario, const Phantom& phantom, const Simulator& sim,
                                std::vector<std::size_t> n_grid, const AbcConfig& cfg, double specificity_floor) {
    n_grid = checked_grid(std::move(n_grid), cfg);
    if (!(specificity_floor >= 0 && specificity_floor <= 1))
        throw config_error("calibration: specificity floor must be in [0, 1]");
    const auto& spec = sim.spec();
    std::vector<bool> is_lp(spec.model_count());
    bool any_lp = false, any_null_model = false;
    for (std::size_t m = 0; m < spec.model_count(); ++m) {
        is_lp[m] = spec.model(m).kind == ModelKind::lpntpet;
        (is_lp[m] ? any_lp : any_null_model) = true;
    }
    if (!any_lp || !any_null_model)
        throw config_error("calibration: selection needs an lp-ntPET model and a model without activation term");

    SelectionReport rep;
    rep.specificity_floor = specificity_floor;
    for (const auto& c : scenario.classes) {
        rep.class_names.push_back(c.name);
        if (!c.activated) continue;
        for (const auto& t : c.tags)
            if (std::find(rep.tags.begin(), rep.tags.end(), t) == rep.tags.end()) rep.tags.push_back(t);
    }
    const std::size_t J = phantom.obs.voxels;
    std::size_t activated_total = 0;
    for (std::size_t j = 0; j < J; ++j) activated_total += scenario.classes[phantom.class_of[j]].activated;
    rep.sensitivity_undefined = activated_total == 0;

    const AbcConfig run = at_max_n(cfg, n_grid);
    const auto post = abc_infer(sim, phantom.obs, run);
    const auto samples = gather_samples(post, spec, run.seed);

    // running count of lp-ntPET rows, so every n reads the same prefix
    std::vector<std::size_t> prefix(J * (run.n + 1), 0);
    for (std::size_t j = 0; j < J; ++j)
        for (std::size_t r = 0; r < run.n; ++r)
            prefix[j * (run.n + 1) + r + 1] =
                prefix[j * (run.n + 1) + r] + is_lp[static_cast<std::size_t>(samples.row(j, r)[0])];

    for (std::size_t n : n_grid) {
        SelectionRow row;
        row.n = n;
        row.per_tag.assign(rep.tags.size(), {});
        row.per_class.assign(scenario.classes.size(), {});
        std::vector<double> pos, neg;
        for (std::size_t j = 0; j < J; ++j) {
            const std::size_t lp_count = prefix[j * (run.n + 1) + n];
            const double p = static_cast<double>(lp_count) / static_cast<double>(n);
            const bool detected = 2 * lp_count > n;
            const auto& cls = scenario.classes[phantom.class_of[j]];
            auto& pc = row.per_class[phantom.class_of[j]];
            ++pc.total;
            if (cls.activated) {
                pos.push_back(p);
                ++row.sensitivity.total;
                row.sensitivity.hits += detected;
                pc.hits += detected;
                for (const auto& t : cls.tags) {
                    auto& r = row.per_tag[static_cast<std::size_t>(std::find(rep.tags.begin(), rep.tags.end(), t) -
                                                                    rep.tags.begin())];
                    ++r.total;
                    r.hits += detected;
                }
            } else {
                neg.push_back(p);
                ++row.specificity.total;
                row.specificity.hits += !detected;
                pc.hits += !detected;
            }
        }
        row.accuracy = static_cast<double>(row.sensitivity.hits + row.specificity.hits) / static_cast<double>(J);
        row.auc = roc_auc(pos, neg);
        if (!rep.working_point && row.specificity.total > 0 && row.specificity.value() >= specificity_floor)
            rep.working_point = n;
        rep.rows.push_back(std::move(row));
    }
    return rep;
}

} // namespace vpetabc

#include "vpetabc/baselines.hpp"

#include <ceres/ceres.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "vpetabc/common.hpp"
#include "vpetabc/noise.hpp"
#include "vpetabc/parallel.hpp"

namespace vpetabc {

namespace {

std::vector<double> mid_times(const FrameSchedule& schedule) {
    std::vector<double> t(schedule.size());
    for (std::size_t f = 0; f < t.size(); ++f) t[f] = schedule.mid(f);
    return t;
}

double radical_inverse(unsigned index, unsigned base) {
    double result = 0.0, fraction = 1.0 / base;
    while (index > 0) {
        result += fraction * (index % base);
        index /= base;
        fraction /= base;
    }
    return result;
}

} // namespace

PatlakResult patlak_fit(std::span<const double> tac, std::span<const double> input, std::span<const double> input_integral,
                        const FrameSchedule& schedule, double t_star) {
    const std::size_t L = schedule.size();
    if (tac.size() != L || input.size() != L || input_integral.size() != L)
        throw data_error("patlak: TAC, input and schedule lengths differ");
    std::vector<double> x, y;
    for (std::size_t f = 0; f < L; ++f) {
        if (schedule.mid(f) < t_star) continue;
        if (!(input[f] > 0)) throw data_error("patlak: input must be positive after t_star (frame " + std::to_string(f) + ")");
        x.push_back(input_integral[f] / input[f]);
        y.push_back(tac[f] / input[f]);
    }
    if (x.size() < 3) throw data_error("patlak: fewer than 3 frames after t_star");
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxx = 0, sxy = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0.0) throw data_error("patlak: degenerate abscissa");
    PatlakResult r;
    r.slope = sxy / sxx;
    r.intercept = my - r.slope * mx;
    double ss_res = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double e = y[i] - (r.intercept + r.slope * x[i]);
        ss_res += e * e;
    }
    r.r2 = syy > 0 ? 1.0 - ss_res / syy : 1.0;
    r.frames_used = x.size();
    return r;
}

PatlakResult patlak_ki(std::span<const double> tac, std::span<const double> input, const FrameSchedule& schedule,
                       double t_star) {
    if (input.size() != schedule.size()) throw data_error("patlak: input and schedule lengths differ");
    const auto t = mid_times(schedule);
    return patlak_fit(tac, input, cumulative_trapezoid_from_zero(t, input), schedule, t_star);
}

std::vector<double> integral_at_mid_times(std::span<const double> curve, const FineGrid& grid,
                                          const FrameSchedule& schedule) {
    const double h = grid.step();
    std::vector<double> out(schedule.size());
    double acc = 0.0;
    std::size_t k = 0;  // acc = ∫_0^{t_k}
    for (std::size_t f = 0; f < schedule.size(); ++f) {
        const double t = schedule.mid(f);
        while (k + 1 < curve.size() && grid.time(k + 1) <= t) {
            acc += 0.5 * h * (curve[k] + curve[k + 1]);
            ++k;
        }
        const double dt = t - grid.time(k);
        double part = 0.0;
        if (dt > 0) {
            if (k + 1 >= curve.size()) throw data_error("frame mid-time beyond the fine grid");
            const double v = curve[k] + (curve[k + 1] - curve[k]) * dt / h;
            part = 0.5 * dt * (curve[k] + v);
        }
        out[f] = acc + part;
    }
    return out;
}

NnlsResult nnls(const Eigen::MatrixXd& A, const Eigen::VectorXd& b) {
    const Eigen::Index n = A.cols();
    NnlsResult res;
    res.x = Eigen::VectorXd::Zero(n);
    std::vector<bool> passive(static_cast<std::size_t>(n), false);
    const double tol = 10.0 * std::numeric_limits<double>::epsilon() * A.cwiseAbs().colwise().sum().maxCoeff() *
                       static_cast<double>(std::max(A.rows(), n));

    auto solve_passive = [&](Eigen::VectorXd& s) {
        std::vector<Eigen::Index> idx;
        for (Eigen::Index j = 0; j < n; ++j)
            if (passive[static_cast<std::size_t>(j)]) idx.push_back(j);
        Eigen::MatrixXd Ap(A.rows(), static_cast<Eigen::Index>(idx.size()));
        for (std::size_t c = 0; c < idx.size(); ++c) Ap.col(static_cast<Eigen::Index>(c)) = A.col(idx[c]);
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Ap);
        Eigen::VectorXd sp;
        if (qr.rank() < Ap.cols()) {
            const Eigen::MatrixXd G = Ap.transpose() * Ap;
            const double lambda = 1e-10 * std::max(G.trace() / static_cast<double>(G.rows()), 1e-300);
            sp = (G + lambda * Eigen::MatrixXd::Identity(G.rows(), G.cols())).ldlt().solve(Ap.transpose() * b);
            res.ridge = true;
        } else {
            sp = qr.solve(b);
        }
        s.setZero(n);
        for (std::size_t c = 0; c < idx.size(); ++c) s(idx[c]) = sp(static_cast<Eigen::Index>(c));
    };

    Eigen::VectorXd w = A.transpose() * (b - A * res.x);
    Eigen::VectorXd s(n);
    const int max_outer = 3 * static_cast<int>(n) + 10;
    int outer = 0;
    while (outer++ < max_outer) {
        Eigen::Index t = -1;
        double wmax = tol;
        for (Eigen::Index j = 0; j < n; ++j)
            if (!passive[static_cast<std::size_t>(j)] && w(j) > wmax) {
                wmax = w(j);
                t = j;
            }
        if (t < 0) break;
        passive[static_cast<std::size_t>(t)] = true;
        for (int inner = 0; inner < 3 * n + 10; ++inner) {
            solve_passive(s);
            bool feasible = true;
            for (Eigen::Index j = 0; j < n; ++j)
                if (passive[static_cast<std::size_t>(j)] && s(j) <= 0) feasible = false;
            if (feasible) break;
            double alpha = 1.0;
            for (Eigen::Index j = 0; j < n; ++j)
                if (passive[static_cast<std::size_t>(j)] && s(j) <= 0)
                    alpha = std::min(alpha, res.x(j) / (res.x(j) - s(j)));
            res.x += alpha * (s - res.x);
            for (Eigen::Index j = 0; j < n; ++j)
                if (passive[static_cast<std::size_t>(j)] && res.x(j) <= tol) {
                    passive[static_cast<std::size_t>(j)] = false;
                    res.x(j) = 0.0;
                }
            s = res.x;
        }
        res.x = s.cwiseMax(0.0);
        w = A.transpose() * (b - A * res.x);
    }
    if (outer > max_outer) res.converged = false;
    res.rss = (A * res.x - b).squaredNorm();
    return res;
}

BasisLibrary::BasisLibrary(const FrameSchedule& schedule, const Grid& grid) : frames_(schedule.size()) {
    if (grid.alphas.empty() || !(grid.td_step > 0) || !(grid.tp_step > 0) || grid.td_hi < grid.td_lo ||
        grid.tp_offset_hi < grid.tp_offset_lo || !(grid.tp_offset_lo > 0))
        throw config_error("basis library: invalid grid");
    const auto count = [](double lo, double hi, double step) {
        return static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9)) + 1;
    };
    const std::size_t ntd = count(grid.td_lo, grid.td_hi, grid.td_step);
    const std::size_t ntp = count(grid.tp_offset_lo, grid.tp_offset_hi, grid.tp_step);
    for (std::size_t i = 0; i < ntd; ++i) {
        const double tD = grid.td_lo + static_cast<double>(i) * grid.td_step;
        for (std::size_t k = 0; k < ntp; ++k) {
            const double tP = tD + grid.tp_offset_lo + static_cast<double>(k) * grid.tp_step;
            for (double a : grid.alphas) {
                triples_.push_back({tD, tP, a});
                for (std::size_t f = 0; f < frames_; ++f) g_.push_back(gamma_variate(tD, tP, a, schedule.mid(f)));
            }
        }
    }
}

LpNtPetFits nnls_lpntpet_fit(std::span<const double> tac, std::span<const double> reference,
                             const FrameSchedule& schedule, const BasisLibrary& library) {
    const std::size_t L = schedule.size();
    if (tac.size() != L || reference.size() != L || library.frames() != L)
        throw data_error("nnls lp-ntPET: TAC, reference, library and schedule lengths differ");
    if (library.size() == 0) throw config_error("nnls lp-ntPET: empty basis library");
    const auto t = mid_times(schedule);
    const auto int_ref = cumulative_trapezoid_from_zero(t, reference);
    const auto int_tac = cumulative_trapezoid_from_zero(t, tac);
    const auto Li = static_cast<Eigen::Index>(L);

    Eigen::MatrixXd A(Li, 4);
    Eigen::VectorXd b(Li);
    for (Eigen::Index f = 0; f < Li; ++f) {
        const auto fu = static_cast<std::size_t>(f);
        A(f, 0) = reference[fu];
        A(f, 1) = int_ref[fu];
        A(f, 2) = -int_tac[fu];
        b(f) = tac[fu];
    }

    LpNtPetFits out;
    const auto mrtm = nnls(A.leftCols(3), b);
    out.mrtm.coefficients = {mrtm.x(0), mrtm.x(1), mrtm.x(2)};
    out.mrtm.rss = mrtm.rss;
    out.mrtm.flagged = mrtm.ridge || !mrtm.converged;
    out.mrtm.bic = bic(mrtm.rss, L, 3);

    // gamma = 0 is feasible for lp-ntPET, so the MRTM optimum is a candidate.
    out.lpntpet.coefficients = {mrtm.x(0), mrtm.x(1), mrtm.x(2), 0.0};
    out.lpntpet.rss = mrtm.rss;
    out.lpntpet.flagged = out.mrtm.flagged;
    std::vector<double> weighted(L);
    for (std::size_t k = 0; k < library.size(); ++k) {
        const auto g = library.activation(k);
        for (std::size_t f = 0; f < L; ++f) weighted[f] = tac[f] * g[f];
        const auto B = cumulative_trapezoid_from_zero(t, weighted);
        for (Eigen::Index f = 0; f < Li; ++f) A(f, 3) = -B[static_cast<std::size_t>(f)];
        const auto fit = nnls(A, b);
        if (fit.rss < out.lpntpet.rss) {
            out.lpntpet.coefficients = {fit.x(0), fit.x(1), fit.x(2), fit.x(3)};
            out.lpntpet.rss = fit.rss;
            out.lpntpet.basis = library.triple(k);
            out.lpntpet.flagged = fit.ridge || !fit.converged;
        }
    }
    out.lpntpet.bic = bic(out.lpntpet.rss, L, 4);
    return out;
}

double bic(double rss, std::size_t frames, std::size_t parameters) {
    const double L = static_cast<double>(frames);
    return L * std::log(std::max(rss, 1e-300) / L) + static_cast<double>(parameters) * std::log(L);
}

SelectedModel bic_select(const FitResult& lp, const FitResult& mrtm, std::size_t frames, BicCounts counts) {
    return bic(lp.rss, frames, counts.lpntpet) < bic(mrtm.rss, frames, counts.mrtm) ? SelectedModel::lpntpet
                                                                                     : SelectedModel::mrtm;
}

namespace {

struct TwoTcmResidual {
    std::span<const double> tac;
    std::span<const double> plasma;
    const FineGrid* grid;
    const FrameAverager* averager;

    bool operator()(double const* const* params, double* residuals) const {
        const double* p = params[0];
        thread_local std::vector<double> fine;
        fine.resize(averager->nodes_needed());
        const TwoTcmParams q{p[0], p[1], p[2], p[3], p[4]};
        tissue_2tcm(q, plasma.first(fine.size()), grid->step(), fine);
        for (std::size_t i = 0; i < fine.size(); ++i) fine[i] = (1.0 - q.Vb) * fine[i] + q.Vb * plasma[i];
        averager->apply(fine, residuals);
        for (std::size_t f = 0; f < tac.size(); ++f) residuals[f] -= tac[f];
        return true;
    }
};

} // namespace

FitResult nnls_2tcm_fit(std::span<const double> tac, std::span<const double> plasma, const FineGrid& grid,
                        const FrameSchedule& schedule, const TwoTcmFitOptions& options) {
    if (tac.size() != schedule.size()) throw data_error("nnls 2TCM: TAC and schedule lengths differ");
    if (plasma.size() != grid.nodes()) throw data_error("nnls 2TCM: input curve length does not match the fine grid");
    const FrameAverager averager(grid, schedule);
    static constexpr unsigned primes[5] = {2, 3, 5, 7, 11};

    FitResult best;
    best.rss = std::numeric_limits<double>::infinity();
    for (int s = 0; s < std::max(1, options.starts); ++s) {
        std::array<double, 5> x{};
        for (int i = 0; i < 5; ++i)
            x[i] = options.lower[i] + radical_inverse(static_cast<unsigned>(s + 1), primes[i]) * (options.upper[i] - options.lower[i]);

        ceres::Problem::Options popts;
        ceres::Problem problem(popts);
        auto* cost = new ceres::DynamicNumericDiffCostFunction<TwoTcmResidual, ceres::CENTRAL>(
            new TwoTcmResidual{tac, plasma, &grid, &averager});
        cost->AddParameterBlock(5);
        cost->SetNumResiduals(static_cast<int>(tac.size()));
        problem.AddResidualBlock(cost, nullptr, x.data());
        for (int i = 0; i < 5; ++i) {
            problem.SetParameterLowerBound(x.data(), i, options.lower[i]);
            problem.SetParameterUpperBound(x.data(), i, options.upper[i]);
        }
        ceres::Solver::Options sopts;
        sopts.linear_solver_type = ceres::DENSE_QR;
        sopts.max_num_iterations = options.max_iterations;
        sopts.logging_type = ceres::SILENT;
        sopts.minimizer_progress_to_stdout = false;
        sopts.num_threads = 1;
        ceres::Solver::Summary summary;
        ceres::Solve(sopts, &problem, &summary);

        const double rss = 2.0 * summary.final_cost;
        if (rss < best.rss) {
            best.rss = rss;
            best.coefficients.assign(x.begin(), x.end());
            best.flagged = summary.termination_type != ceres::CONVERGENCE;
        }
    }
    best.bic = bic(best.rss, tac.size(), 5);
    return best;
}

GridPosterior grid_posterior(const Simulator& sim, std::span<const double> tac, std::size_t model,
                             std::span<const std::size_t> resolution, std::size_t cell_budget, unsigned workers) {
    const auto* noise = std::get_if<GaussianNoise>(&sim.noise());
    if (!noise) throw config_error("grid posterior: requires a Gaussian noise model");
    if (!(noise->level > 0)) throw config_error("grid posterior: Gaussian noise level must be > 0");
    const auto& spec = sim.spec();
    if (model >= spec.model_count()) throw config_error("grid posterior: model index out of range");
    if (tac.size() != sim.frames()) throw data_error("grid posterior: TAC length does not match the schedule");
    const auto& prior = spec.model(model);
    const auto names = parameter_names(prior.kind);

    GridPosterior gp;
    std::vector<std::size_t> free;
    std::vector<std::vector<double>> log_prior;
    for (std::size_t k = 0; k < prior.params.size(); ++k) {
        const auto& d = prior.params[k];
        if (d.is_fixed()) continue;
        if (!d.base.empty() || d.type == Distribution::Type::offset)
            throw config_error("grid posterior: dependent priors are not supported on the grid");
        free.push_back(k);
    }
    if (free.empty() || free.size() > 4) throw config_error("grid posterior: needs 1 to 4 free parameters");
    if (resolution.size() != free.size())
        throw config_error("grid posterior: resolution must list one size per free parameter");
    std::size_t cells = 1;
    for (std::size_t i = 0; i < free.size(); ++i) {
        const auto& d = prior.params[free[i]];
        const std::size_t r = resolution[i];
        if (r == 0) throw config_error("grid posterior: zero resolution");
        if (cells > cell_budget / r) throw config_error("grid posterior: grid exceeds the cell budget");
        cells *= r;
        double lo = d.a, hi = d.b;
        if (d.type == Distribution::Type::normal) {
            lo = std::max(d.lo, d.a - 5.0 * d.b);
            hi = std::min(d.hi, d.a + 5.0 * d.b);
        }
        std::vector<double> axis(r), lp(r, 0.0);
        for (std::size_t c = 0; c < r; ++c) {
            axis[c] = lo + (hi - lo) * (static_cast<double>(c) + 0.5) / static_cast<double>(r);
            if (d.type == Distribution::Type::normal) lp[c] = -0.5 * std::pow((axis[c] - d.a) / d.b, 2);
        }
        gp.names.emplace_back(names[free[i]]);
        gp.columns.push_back(spec.column_of(model, free[i]));
        gp.axes.push_back(std::move(axis));
        log_prior.push_back(std::move(lp));
    }

    std::vector<double> base(spec.parameter_columns() + 1, std::numeric_limits<double>::quiet_NaN());
    base[0] = static_cast<double>(model);
    for (std::size_t k = 0; k < prior.params.size(); ++k)
        if (prior.params[k].is_fixed()) base[spec.column_of(model, k)] = prior.params[k].a;

    const auto& schedule = sim.schedule();
    gp.log_likelihood.resize(cells);
    std::vector<double> log_post(cells);
    parallel_for(cells, workers, [&](std::size_t begin, std::size_t end) {
        std::vector<double> row = base, fine(sim.grid().nodes()), mu(sim.frames());
        for (std::size_t c = begin; c < end; ++c) {
            std::size_t rem = c;
            double lp = 0.0;
            for (std::size_t i = free.size(); i-- > 0;) {
                const std::size_t a = rem % gp.axes[i].size();
                rem /= gp.axes[i].size();
                row[gp.columns[i]] = gp.axes[i][a];
                lp += log_prior[i][a];
            }
            sim.clean_curve(row, fine, mu);
            double ll = 0.0;
            for (std::size_t f = 0; f < mu.size(); ++f) {
                const double sd = std::max(noise->level * gaussian_sigma(*noise, mu[f], schedule.mid(f), schedule.duration(f)),
                                           1e-12 * (1.0 + std::abs(tac[f])));
                const double z = (tac[f] - mu[f]) / sd;
                ll += -0.5 * z * z - std::log(sd);
            }
            gp.log_likelihood[c] = ll;
            log_post[c] = ll + lp;
        }
    });

    const double peak = *std::max_element(log_post.begin(), log_post.end());
    gp.weights.resize(cells);
    double total = 0.0;
    for (std::size_t c = 0; c < cells; ++c) total += gp.weights[c] = std::exp(log_post[c] - peak);
    for (auto& w : gp.weights) w /= total;

    gp.marginals.assign(free.size(), {});
    for (std::size_t i = 0; i < free.size(); ++i) gp.marginals[i].assign(gp.axes[i].size(), 0.0);
    for (std::size_t c = 0; c < cells; ++c) {
        std::size_t rem = c;
        for (std::size_t i = free.size(); i-- > 0;) {
            gp.marginals[i][rem % gp.axes[i].size()] += gp.weights[c];
            rem /= gp.axes[i].size();
        }
    }
    for (std::size_t i = 0; i < free.size(); ++i) {
        double m = 0.0;
        for (std::size_t a = 0; a < gp.axes[i].size(); ++a) m += gp.marginals[i][a] * gp.axes[i][a];
        gp.means.push_back(m);
    }
    return gp;
}

} // namespace vpetabc

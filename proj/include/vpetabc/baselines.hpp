#pragma once

#include <Eigen/Dense>
#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vpetabc/abc.hpp"
#include "vpetabc/kinetics.hpp"

namespace vpetabc {

// ---------------------------------------------------------------- Patlak

struct PatlakResult {
    double slope = 0.0;      // K_i
    double intercept = 0.0;
    double r2 = 0.0;
    std::size_t frames_used = 0;
};

/// OLS of C_t/C_p against ∫C_p/C_p over frames with mid-time >= t_star.
/// `input_integral` holds ∫_0^{mid_f} C_p per frame.
PatlakResult patlak_fit(std::span<const double> tac, std::span<const double> input, std::span<const double> input_integral,
                        const FrameSchedule& schedule, double t_star = 20.0);

/// As patlak_fit, with ∫C_p from the trapezoid rule over frame mid-times.
PatlakResult patlak_ki(std::span<const double> tac, std::span<const double> input, const FrameSchedule& schedule,
                       double t_star = 20.0);

/// ∫_0^{mid_f} of the piecewise-linear fine-grid curve, per frame.
std::vector<double> integral_at_mid_times(std::span<const double> curve, const FineGrid& grid,
                                          const FrameSchedule& schedule);

// ---------------------------------------------------------------- NNLS

struct NnlsResult {
    Eigen::VectorXd x;
    double rss = 0.0;
    bool ridge = false;       // a rank-deficient subproblem needed regularisation
    bool converged = true;
};

/// Lawson–Hanson: min ||A x - b||² subject to x >= 0.
NnlsResult nnls(const Eigen::MatrixXd& A, const Eigen::VectorXd& b);

struct BasisTriple {
    double tD, tP, alpha;
};

/// Gamma-variate activation shapes evaluated on the frame mid-times.
class BasisLibrary {
public:
    /// tP runs over tD + tp_offset_lo .. tD + tp_offset_hi with `step`.
    struct Grid {
        double td_lo = 15, td_hi = 25, td_step = 1;
        double tp_offset_lo = 1, tp_offset_hi = 45, tp_step = 1;
        std::vector<double> alphas{0.25, 1.0, 4.0};
    };

    BasisLibrary(const FrameSchedule& schedule, const Grid& grid);
    explicit BasisLibrary(const FrameSchedule& schedule) : BasisLibrary(schedule, Grid{}) {}

    std::size_t size() const noexcept { return triples_.size(); }
    const BasisTriple& triple(std::size_t k) const { return triples_[k]; }
    /// g(mid_f) for triple k.
    std::span<const double> activation(std::size_t k) const { return {g_.data() + k * frames_, frames_}; }
    std::size_t frames() const noexcept { return frames_; }

private:
    std::size_t frames_;
    std::vector<BasisTriple> triples_;
    std::vector<double> g_;
};

struct FitResult {
    std::vector<double> coefficients;    // (R1,k2,k2a[,gamma]) or (K1,k2,k3,k4,Vb)
    double rss = 0.0;
    std::optional<BasisTriple> basis;
    double bic = 0.0;
    bool flagged = false;                // ridge fallback or non-convergence
};

struct LpNtPetFits {
    FitResult lpntpet;
    FitResult mrtm;
};

/// Basis-function NNLS for lp-ntPET (min-RSS triple) and MRTM.
LpNtPetFits nnls_lpntpet_fit(std::span<const double> tac, std::span<const double> reference,
                             const FrameSchedule& schedule, const BasisLibrary& library);

double bic(double rss, std::size_t frames, std::size_t parameters);

enum class SelectedModel { mrtm, lpntpet };

/// Parameter counts entering the BIC penalty. The defaults count linear
/// coefficients only; lpntpet = 7 also charges the (tD, tP, alpha) search.
struct BicCounts {
    std::size_t lpntpet = 4;
    std::size_t mrtm = 3;
};

/// Ties choose MRTM.
SelectedModel bic_select(const FitResult& lp, const FitResult& mrtm, std::size_t frames, BicCounts counts = {});

// ---------------------------------------------------------------- 2TCM NLS

struct TwoTcmFitOptions {
    std::array<double, 5> lower{0.001, 0.001, 0.001, 0.0, 0.03};
    std::array<double, 5> upper{1.0, 2.0, 0.5, 0.1, 0.2};
    int starts = 8;
    int max_iterations = 200;
};

/// Bound-constrained least squares of simulate_2tcm against the TAC,
/// multi-started from Halton points in the box.
FitResult nnls_2tcm_fit(std::span<const double> tac, std::span<const double> plasma, const FineGrid& grid,
                        const FrameSchedule& schedule, const TwoTcmFitOptions& options = {});

// ---------------------------------------------------------------- grid oracle

struct GridPosterior {
    std::vector<std::string> names;               // free parameters
    std::vector<std::size_t> columns;             // their Θ columns
    std::vector<std::vector<double>> axes;
    std::vector<double> log_likelihood;           // row-major, last axis fastest
    std::vector<double> weights;                  // normalised posterior
    std::vector<std::vector<double>> marginals;
    std::vector<double> means;

    std::size_t cells() const { return weights.size(); }
};

/// Exact Gaussian-likelihood posterior on a tensor grid over the free
/// parameters (at most 4) of one model of sim.spec(). Fixed parameters keep
/// their prior values. Throws config_error for non-Gaussian noise, unsupported
/// prior types or more than `cell_budget` cells.
GridPosterior grid_posterior(const Simulator& sim, std::span<const double> tac, std::size_t model,
                             std::span<const std::size_t> resolution, std::size_t cell_budget = 50'000'000,
                             unsigned workers = 1);

} // namespace vpetabc

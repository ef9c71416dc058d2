#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "vpetabc/kinetics.hpp"
#include "vpetabc/noise.hpp"
#include "vpetabc/priors.hpp"

namespace vpetabc {

enum class DistanceKind { l1, l2 };

struct AbcConfig {
    std::uint64_t N = 10'000'000;
    std::size_t n = 18;
    DistanceKind distance = DistanceKind::l1;
    std::size_t batch_rows = 0;               // 0: derived from batch_bytes
    std::uint64_t batch_bytes = 4ULL << 30;   // memory budget for one batch plus selection state
    std::uint64_t seed = 0;
    unsigned workers = 1;

    /// Accepted proportion p = n/N.
    double proportion() const { return static_cast<double>(n) / static_cast<double>(N); }
    /// Throws config_error unless 1 <= n <= N.
    void validate() const;
};

/// Seeds of the prior and noise streams, derived from the run seed.
std::uint64_t theta_seed(std::uint64_t seed);
std::uint64_t noise_seed(std::uint64_t seed);

/// The forward-model set used to fill the pool: prior, shared input curve
/// (plasma for 2TCM, reference TAC for lp-ntPET/MRTM) and observation noise.
class Simulator {
public:
    Simulator(PriorSpec spec, Curve input, FineGrid grid, FrameSchedule schedule, NoiseModel noise,
              Curve whole_blood = {});

    const PriorSpec& spec() const noexcept { return spec_; }
    const FrameSchedule& schedule() const noexcept { return schedule_; }
    const FineGrid& grid() const noexcept { return grid_; }
    const Curve& input() const noexcept { return input_; }
    const NoiseModel& noise() const noexcept { return noise_; }
    std::size_t frames() const noexcept { return schedule_.size(); }

    /// Noise-free frame values for a Θ row (indicator + parameter columns).
    void clean_curve(std::span<const double> theta_row, std::span<double> fine_scratch, std::span<double> out) const;

    /// Pool row `row`: samples Θ into theta_out, then writes the noisy curve.
    void simulate_row(std::uint64_t seed, std::uint64_t row, std::span<double> theta_out,
                      std::span<double> fine_scratch, std::span<double> curve_out) const;

private:
    PriorSpec spec_;
    Curve input_;
    Curve whole_blood_;
    FineGrid grid_;
    FrameSchedule schedule_;
    FrameAverager averager_;
    NoiseModel noise_;
};

/// Materialised Θ (N×(P+1)) and X (N×L, single precision).
struct SimulationPool {
    ThetaMatrix theta;
    std::vector<float> curves;
    std::size_t frames = 0;

    std::size_t size() const noexcept { return theta.rows; }
    std::span<const float> curve(std::size_t i) const { return {curves.data() + i * frames, frames}; }
};

SimulationPool build_pool(const Simulator& sim, const AbcConfig& cfg);

/// Observed TACs of the in-mask voxels, J×L row-major.
struct Observations {
    std::size_t voxels = 0;
    std::size_t frames = 0;
    std::vector<double> values;

    std::span<const double> tac(std::size_t j) const { return {values.data() + j * frames, frames}; }
};

/// Σ_f |x_f - y_f| (L1) or Σ_f (x_f - y_f)² (L2, squared), accumulated in
/// double in frame order.
double distance(std::span<const float> x, std::span<const double> y, DistanceKind kind);

struct AcceptedRecord {
    std::uint64_t index = 0;  // pool row
    double distance = 0.0;

    friend bool operator<(const AcceptedRecord& a, const AcceptedRecord& b) {
        return a.distance < b.distance || (a.distance == b.distance && a.index < b.index);
    }
    friend bool operator==(const AcceptedRecord&, const AcceptedRecord&) = default;
};

/// Per voxel, the n closest pool rows sorted by (distance, index).
struct AcceptedPosterior {
    std::size_t voxels = 0;
    std::size_t n = 0;
    std::vector<AcceptedRecord> records;

    std::span<const AcceptedRecord> voxel(std::size_t j) const { return {records.data() + j * n, n}; }
    /// Keep the first n' records of every voxel (n' <= n).
    AcceptedPosterior truncated(std::size_t n_prime) const;
    friend bool operator==(const AcceptedPosterior&, const AcceptedPosterior&) = default;
};

/// Streaming per-voxel top-n selection with bounded max-heaps. Rows may be
/// offered in any grouping; the result depends only on the set offered.
class TopNSelector {
public:
    TopNSelector(std::size_t voxels, std::size_t n);

    /// Offer `rows` pool rows starting at `first_row`. `frame_major` holds
    /// L×rows values (frame f of row i at f·rows + i).
    void offer(std::uint64_t first_row, std::size_t rows, std::span<const float> frame_major, const Observations& obs,
               DistanceKind kind, unsigned workers);

    /// Throws config_error if fewer than n rows were offered.
    AcceptedPosterior finish(DistanceKind kind) &&;

private:
    std::size_t voxels_, n_;
    std::vector<AcceptedRecord> heaps_;
    std::vector<std::size_t> sizes_;
};

/// Batch size honouring cfg.batch_rows / cfg.batch_bytes; throws budget_error
/// (carrying the largest feasible batch) before anything is allocated.
std::size_t plan_batch_rows(const AbcConfig& cfg, std::size_t voxels, std::size_t frames);

/// Selection over an existing pool, processed in cfg-sized batches.
AcceptedPosterior select_top_n(const SimulationPool& pool, const Observations& obs, const AbcConfig& cfg);

/// Full vectorised rejection ABC: simulate the pool batch by batch and stream
/// each batch through the selector. X is never held in full.
AcceptedPosterior abc_infer(const Simulator& sim, const Observations& obs, const AbcConfig& cfg);

/// Accepted Θ rows, J×n×(P+1), regenerated from the counter-based prior stream.
struct AcceptedSamples {
    std::size_t voxels = 0;
    std::size_t n = 0;
    std::size_t cols = 0;
    std::vector<double> theta;
    std::vector<double> distances;

    std::span<const double> row(std::size_t j, std::size_t r) const {
        return {theta.data() + (j * n + r) * cols, cols};
    }
};

AcceptedSamples gather_samples(const AcceptedPosterior& post, const PriorSpec& spec, std::uint64_t seed);
AcceptedSamples gather_samples(const AcceptedPosterior& post, const ThetaMatrix& theta);

} // namespace vpetabc

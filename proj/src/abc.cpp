#include "vpetabc/abc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "vpetabc/common.hpp"
#include "vpetabc/parallel.hpp"
#include "vpetabc/rng.hpp"

namespace vpetabc {

namespace {

constexpr std::size_t row_tile = 1024;
constexpr std::size_t max_auto_batch = 262144;

void check_observations(const Observations& obs, std::size_t frames) {
    if (obs.frames != frames)
        throw data_error("observed TACs have " + std::to_string(obs.frames) + " frames, the pool has " +
                         std::to_string(frames));
    if (obs.values.size() != obs.voxels * obs.frames) throw data_error("observation matrix has the wrong size");
    if (obs.voxels == 0) throw data_error("no voxels to infer");
    for (double v : obs.values)
        if (!std::isfinite(v)) throw data_error("observed TACs contain non-finite values");
}

} // namespace

void AbcConfig::validate() const {
    if (N < 1) throw config_error("abc: N must be >= 1");
    if (n < 1) throw config_error("abc: n must be >= 1");
    if (n > N) throw config_error("abc: n (" + std::to_string(n) + ") exceeds N (" + std::to_string(N) + ")");
    if (batch_bytes == 0) throw config_error("abc: batch_bytes must be positive");
}

std::uint64_t theta_seed(std::uint64_t seed) { return derive_seed(seed, "theta"); }
std::uint64_t noise_seed(std::uint64_t seed) { return derive_seed(seed, "noise"); }

Simulator::Simulator(PriorSpec spec, Curve input, FineGrid grid, FrameSchedule schedule, NoiseModel noise,
                     Curve whole_blood)
    : spec_(std::move(spec)),
      input_(std::move(input)),
      whole_blood_(std::move(whole_blood)),
      grid_(grid),
      schedule_(std::move(schedule)),
      averager_(grid_, schedule_),
      noise_(noise) {
    if (input_.size() != grid_.nodes()) throw data_error("input curve length does not match the fine grid");
    if (!whole_blood_.empty() && whole_blood_.size() != grid_.nodes())
        throw data_error("whole-blood curve length does not match the fine grid");
    for (double v : input_)
        if (!std::isfinite(v)) throw data_error("input curve contains non-finite values");
    validate(noise_);
}

void Simulator::clean_curve(std::span<const double> theta_row, std::span<double> fine_scratch,
                            std::span<double> out) const {
    const auto m = static_cast<std::size_t>(theta_row[0]);
    const auto& model = spec_.model(m);
    auto param = [&](std::size_t k) { return theta_row[spec_.column_of(m, k)]; };
    const auto fine = fine_scratch.first(averager_.nodes_needed());
    const std::span<const double> input(input_.data(), fine.size());

    switch (model.kind) {
    case ModelKind::two_tcm: {
        const TwoTcmParams p{param(0), param(1), param(2), param(3), param(4)};
        tissue_2tcm(p, input, grid_.step(), fine);
        const double* blood = whole_blood_.empty() ? input_.data() : whole_blood_.data();
        for (std::size_t i = 0; i < fine.size(); ++i) fine[i] = (1.0 - p.Vb) * fine[i] + p.Vb * blood[i];
        break;
    }
    case ModelKind::lpntpet: {
        const LpNtPetParams p{param(0), param(1), param(2), param(3), param(4), param(5), param(6)};
        lpntpet_curve(p, input, grid_.step(), fine);
        break;
    }
    case ModelKind::mrtm: mrtm_curve(param(0), param(1), param(2), input, grid_.step(), fine); break;
    }
    averager_.apply(fine, out.data());
}

void Simulator::simulate_row(std::uint64_t seed, std::uint64_t row, std::span<double> theta_out,
                             std::span<double> fine_scratch, std::span<double> curve_out) const {
    spec_.sample_row(theta_seed(seed), row, theta_out);
    try {
        clean_curve(theta_out, fine_scratch, curve_out);
    } catch (const error& e) {
        throw data_error("pool row " + std::to_string(row) + ": " + e.what());
    }
    counter_engine rng(noise_seed(seed), row);
    apply_noise(curve_out, noise_, schedule_, rng);
    for (double v : curve_out)
        if (!std::isfinite(v)) throw data_error("pool row " + std::to_string(row) + ": simulated curve is not finite");
}

SimulationPool build_pool(const Simulator& sim, const AbcConfig& cfg) {
    cfg.validate();
    const std::size_t N = cfg.N;
    const std::size_t L = sim.frames();
    SimulationPool pool;
    pool.frames = L;
    pool.theta = ThetaMatrix{N, sim.spec().parameter_columns() + 1, {}};
    pool.theta.values.resize(N * pool.theta.cols);
    pool.curves.resize(N * L);
    parallel_for(N, cfg.workers, [&](std::size_t begin, std::size_t end) {
        std::vector<double> fine(sim.grid().nodes());
        std::vector<double> tac(L);
        for (std::size_t i = begin; i < end; ++i) {
            sim.simulate_row(cfg.seed, i, pool.theta.row(i), fine, tac);
            std::transform(tac.begin(), tac.end(), pool.curves.begin() + static_cast<std::ptrdiff_t>(i * L),
                           [](double v) { return static_cast<float>(v); });
        }
    });
    return pool;
}

double distance(std::span<const float> x, std::span<const double> y, DistanceKind kind) {
    double acc = 0.0;
    for (std::size_t f = 0; f < y.size(); ++f) {
        const double t = static_cast<double>(x[f]) - y[f];
        acc += kind == DistanceKind::l1 ? std::abs(t) : t * t;
    }
    return acc;
}

AcceptedPosterior AcceptedPosterior::truncated(std::size_t n_prime) const {
    if (n_prime > n || n_prime == 0) throw config_error("truncation size must be in [1, n]");
    AcceptedPosterior out{voxels, n_prime, {}};
    out.records.reserve(voxels * n_prime);
    for (std::size_t j = 0; j < voxels; ++j) {
        const auto v = voxel(j);
        out.records.insert(out.records.end(), v.begin(), v.begin() + static_cast<std::ptrdiff_t>(n_prime));
    }
    return out;
}

TopNSelector::TopNSelector(std::size_t voxels, std::size_t n)
    : voxels_(voxels), n_(n), heaps_(voxels * n), sizes_(voxels, 0) {}

namespace {

constexpr std::size_t voxel_block = 4;

template <std::size_t B, DistanceKind K>
void accumulate(const float* frames, std::size_t stride, std::size_t L, const double* const* y, double* d,
                std::size_t len) {
    std::fill_n(d, B * row_tile, 0.0);
    for (std::size_t f = 0; f < L; ++f) {
        const float* xf = frames + f * stride;
        double yf[B];
        for (std::size_t b = 0; b < B; ++b) yf[b] = y[b][f];
        for (std::size_t i = 0; i < len; ++i) {
            const double x = static_cast<double>(xf[i]);
            for (std::size_t b = 0; b < B; ++b) {
                const double t = x - yf[b];
                if constexpr (K == DistanceKind::l1) d[b * row_tile + i] += std::abs(t);
                else d[b * row_tile + i] += t * t;
            }
        }
    }
}

template <DistanceKind K>
void accumulate(std::size_t B, const float* frames, std::size_t stride, std::size_t L, const double* const* y,
                double* d, std::size_t len) {
    switch (B) {
    case 4: accumulate<4, K>(frames, stride, L, y, d, len); break;
    case 3: accumulate<3, K>(frames, stride, L, y, d, len); break;
    case 2: accumulate<2, K>(frames, stride, L, y, d, len); break;
    default: accumulate<1, K>(frames, stride, L, y, d, len); break;
    }
}

} // namespace

void TopNSelector::offer(std::uint64_t first_row, std::size_t rows, std::span<const float> frame_major,
                         const Observations& obs, DistanceKind kind, unsigned workers) {
    const std::size_t L = obs.frames;
    if (frame_major.size() < rows * L) throw data_error("batch buffer smaller than rows × frames");
    parallel_for(voxels_, workers, [&](std::size_t vbegin, std::size_t vend) {
        std::vector<double> d(voxel_block * row_tile);
        for (std::size_t t0 = 0; t0 < rows; t0 += row_tile) {
            const std::size_t len = std::min(row_tile, rows - t0);
            for (std::size_t j0 = vbegin; j0 < vend; j0 += voxel_block) {
                const std::size_t B = std::min(voxel_block, vend - j0);
                const double* y[voxel_block];
                for (std::size_t b = 0; b < B; ++b) y[b] = obs.tac(j0 + b).data();
                const float* frames = frame_major.data() + t0;
                if (kind == DistanceKind::l1) accumulate<DistanceKind::l1>(B, frames, rows, L, y, d.data(), len);
                else accumulate<DistanceKind::l2>(B, frames, rows, L, y, d.data(), len);
                for (std::size_t b = 0; b < B; ++b) {
                    const double* db = d.data() + b * row_tile;
                    AcceptedRecord* heap = heaps_.data() + (j0 + b) * n_;
                    std::size_t& size = sizes_[j0 + b];
                    for (std::size_t i = 0; i < len; ++i) {
                        const AcceptedRecord rec{first_row + t0 + i, db[i]};
                        if (size < n_) {
                            heap[size++] = rec;
                            std::push_heap(heap, heap + size);
                        } else if (rec < heap[0]) {
                            std::pop_heap(heap, heap + n_);
                            heap[n_ - 1] = rec;
                            std::push_heap(heap, heap + n_);
                        }
                    }
                }
            }
        }
    });
}

AcceptedPosterior TopNSelector::finish(DistanceKind kind) && {
    for (std::size_t j = 0; j < voxels_; ++j)
        if (sizes_[j] < n_) throw config_error("abc: fewer pool rows than n were offered");
    for (std::size_t j = 0; j < voxels_; ++j) {
        auto* heap = heaps_.data() + j * n_;
        std::sort_heap(heap, heap + n_);
        if (kind == DistanceKind::l2)
            for (std::size_t r = 0; r < n_; ++r) heap[r].distance = std::sqrt(heap[r].distance);
    }
    return AcceptedPosterior{voxels_, n_, std::move(heaps_)};
}

std::size_t plan_batch_rows(const AbcConfig& cfg, std::size_t voxels, std::size_t frames) {
    const std::uint64_t fixed = voxels * (cfg.n * sizeof(AcceptedRecord) + frames * sizeof(double) + sizeof(std::size_t));
    const std::uint64_t per_row = frames * sizeof(float);
    const std::uint64_t feasible = fixed >= cfg.batch_bytes ? 0 : (cfg.batch_bytes - fixed) / per_row;
    if (feasible == 0)
        throw budget_error("memory budget of " + std::to_string(cfg.batch_bytes) + " bytes cannot hold the selection state (" +
                               std::to_string(fixed) + " bytes for " + std::to_string(voxels) + " voxels)",
                           0);
    if (cfg.batch_rows > 0) {
        if (cfg.batch_rows > feasible)
            throw budget_error("batch_rows " + std::to_string(cfg.batch_rows) + " exceeds the memory budget; largest feasible batch is " +
                                   std::to_string(feasible),
                               feasible);
        return static_cast<std::size_t>(std::min<std::uint64_t>(cfg.batch_rows, cfg.N));
    }
    return static_cast<std::size_t>(std::min<std::uint64_t>({cfg.N, feasible, max_auto_batch}));
}

AcceptedPosterior select_top_n(const SimulationPool& pool, const Observations& obs, const AbcConfig& cfg) {
    cfg.validate();
    check_observations(obs, pool.frames);
    if (cfg.n > pool.size()) throw config_error("abc: n exceeds the pool size");
    const std::size_t N = pool.size();
    const std::size_t L = pool.frames;
    AbcConfig c = cfg;
    c.N = N;
    const std::size_t batch = plan_batch_rows(c, obs.voxels, L);
    TopNSelector selector(obs.voxels, cfg.n);
    std::vector<float> buffer(batch * L);
    for (std::size_t first = 0; first < N; first += batch) {
        const std::size_t rows = std::min(batch, N - first);
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t f = 0; f < L; ++f) buffer[f * rows + i] = pool.curves[(first + i) * L + f];
        selector.offer(first, rows, buffer, obs, cfg.distance, cfg.workers);
    }
    return std::move(selector).finish(cfg.distance);
}

AcceptedPosterior abc_infer(const Simulator& sim, const Observations& obs, const AbcConfig& cfg) {
    cfg.validate();
    check_observations(obs, sim.frames());
    const std::size_t L = sim.frames();
    const std::size_t N = cfg.N;
    const std::size_t batch = plan_batch_rows(cfg, obs.voxels, L);
    const std::size_t cols = sim.spec().parameter_columns() + 1;
    TopNSelector selector(obs.voxels, cfg.n);
    std::vector<float> buffer(batch * L);
    for (std::size_t first = 0; first < N; first += batch) {
        const std::size_t rows = std::min(batch, N - first);
        parallel_for(rows, cfg.workers, [&](std::size_t begin, std::size_t end) {
            std::vector<double> theta(cols), fine(sim.grid().nodes()), tac(L);
            for (std::size_t i = begin; i < end; ++i) {
                sim.simulate_row(cfg.seed, first + i, theta, fine, tac);
                for (std::size_t f = 0; f < L; ++f) buffer[f * rows + i] = static_cast<float>(tac[f]);
            }
        });
        selector.offer(first, rows, buffer, obs, cfg.distance, cfg.workers);
    }
    return std::move(selector).finish(cfg.distance);
}

AcceptedSamples gather_samples(const AcceptedPosterior& post, const PriorSpec& spec, std::uint64_t seed) {
    AcceptedSamples s{post.voxels, post.n, spec.parameter_columns() + 1, {}, {}};
    s.theta.resize(post.records.size() * s.cols);
    s.distances.resize(post.records.size());
    const std::uint64_t tseed = theta_seed(seed);
    for (std::size_t r = 0; r < post.records.size(); ++r) {
        spec.sample_row(tseed, post.records[r].index, {s.theta.data() + r * s.cols, s.cols});
        s.distances[r] = post.records[r].distance;
    }
    return s;
}

AcceptedSamples gather_samples(const AcceptedPosterior& post, const ThetaMatrix& theta) {
    AcceptedSamples s{post.voxels, post.n, theta.cols, {}, {}};
    s.theta.resize(post.records.size() * s.cols);
    s.distances.resize(post.records.size());
    for (std::size_t r = 0; r < post.records.size(); ++r) {
        const auto row = theta.row(post.records[r].index);
        std::copy(row.begin(), row.end(), s.theta.begin() + static_cast<std::ptrdiff_t>(r * s.cols));
        s.distances[r] = post.records[r].distance;
    }
    return s;
}

} // namespace vpetabc

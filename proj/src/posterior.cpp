#include "vpetabc/posterior.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "vpetabc/common.hpp"
#include "vpetabc/kinetics.hpp"
#include "vpetabc/parallel.hpp"
#include "vpetabc/volume.hpp"

namespace vpetabc {

std::vector<std::size_t> VolumeGeometry::masked_indices() const {
    std::vector<std::size_t> out;
    const std::size_t count = voxel_count();
    out.reserve(count);
    for (std::size_t v = 0; v < count; ++v)
        if (in_mask(v)) out.push_back(v);
    return out;
}

ParametricMap make_map(std::span<const double> masked_values, const VolumeGeometry& geometry, std::string field) {
    if (!geometry.mask.empty() && geometry.mask.size() != geometry.voxel_count())
        throw data_error("mask size does not match the volume dimensions");
    const auto idx = geometry.masked_indices();
    if (idx.size() != masked_values.size())
        throw data_error("map has " + std::to_string(masked_values.size()) + " values for " +
                         std::to_string(idx.size()) + " masked voxels");
    ParametricMap map{geometry.dims, geometry.spacing_mm, std::move(field),
                      std::vector<float>(geometry.voxel_count(), std::numeric_limits<float>::quiet_NaN())};
    for (std::size_t k = 0; k < idx.size(); ++k) map.values[idx[k]] = static_cast<float>(masked_values[k]);
    return map;
}

std::vector<double> model_probability(const AcceptedSamples& s, std::size_t voxel, std::size_t models) {
    std::vector<std::size_t> counts(models, 0);
    for (std::size_t r = 0; r < s.n; ++r) ++counts.at(static_cast<std::size_t>(s.row(voxel, r)[0]));
    std::vector<double> p(models);
    for (std::size_t m = 0; m < models; ++m) p[m] = static_cast<double>(counts[m]) / static_cast<double>(s.n);
    return p;
}

std::size_t preferred_model(std::span<const double> probabilities, const PriorSpec& spec) {
    std::size_t best = 0;
    for (std::size_t m = 1; m < probabilities.size(); ++m) {
        if (probabilities[m] > probabilities[best] ||
            (probabilities[m] == probabilities[best] &&
             spec.model(m).free_parameters() < spec.model(best).free_parameters()))
            best = m;
    }
    return best;
}

double quantile_sorted(std::span<const double> sorted, double q) {
    if (sorted.empty()) return std::numeric_limits<double>::quiet_NaN();
    const double h = (static_cast<double>(sorted.size()) - 1.0) * std::clamp(q, 0.0, 1.0);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

Interval summarize_values(std::vector<double> values, double level) {
    Interval out;
    out.count = values.size();
    if (values.empty()) return out;
    std::sort(values.begin(), values.end());
    out.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
    const double tail = 0.5 * (1.0 - level);
    out.lower = quantile_sorted(values, tail);
    out.upper = quantile_sorted(values, 1.0 - tail);
    return out;
}

ConditionalSummary conditional_summary(const AcceptedSamples& s, std::size_t voxel, const PriorSpec& spec,
                                       std::size_t model, double level) {
    const auto& m = spec.model(model);
    ConditionalSummary out{model, 0, {}};
    std::vector<std::vector<double>> columns(m.params.size());
    for (std::size_t r = 0; r < s.n; ++r) {
        const auto row = s.row(voxel, r);
        if (static_cast<std::size_t>(row[0]) != model) continue;
        ++out.count;
        for (std::size_t k = 0; k < m.params.size(); ++k) columns[k].push_back(row[spec.column_of(model, k)]);
    }
    for (auto& c : columns) out.params.push_back(summarize_values(std::move(c), level));
    return out;
}

double net_influx(double K1, double k2, double k3) {
    const double denom = k2 + k3;
    return denom == 0.0 ? 0.0 : K1 * k3 / denom;
}

KiPosterior ki_posterior(const AcceptedSamples& s, std::size_t voxel, const PriorSpec& spec,
                         std::optional<std::size_t> model, double level) {
    KiPosterior out;
    for (std::size_t r = 0; r < s.n; ++r) {
        const auto row = s.row(voxel, r);
        const auto m = static_cast<std::size_t>(row[0]);
        if (model && *model != m) continue;
        if (spec.model(m).kind != ModelKind::two_tcm) continue;
        const double K1 = row[spec.column_of(m, 0)];
        const double k2 = row[spec.column_of(m, 1)];
        const double k3 = row[spec.column_of(m, 2)];
        if (k2 + k3 == 0.0) ++out.degenerate;
        out.samples.push_back(net_influx(K1, k2, k3));
    }
    out.summary = summarize_values(out.samples, level);
    return out;
}

ResponseEnvelope response_envelope(const AcceptedSamples& s, std::size_t voxel, const PriorSpec& spec,
                                   std::span<const double> times, double level) {
    struct Row {
        double scale, tD, tP, alpha;
    };
    ResponseEnvelope out;
    std::vector<Row> rows;
    for (std::size_t r = 0; r < s.n; ++r) {
        const auto row = s.row(voxel, r);
        const auto m = static_cast<std::size_t>(row[0]);
        if (spec.model(m).kind != ModelKind::lpntpet) continue;
        const double k2a = row[spec.column_of(m, 2)];
        if (!(k2a > 0)) {
            ++out.excluded;
            continue;
        }
        rows.push_back({row[spec.column_of(m, 3)] / k2a, row[spec.column_of(m, 4)], row[spec.column_of(m, 5)],
                        row[spec.column_of(m, 6)]});
    }
    out.used = rows.size();
    if (rows.empty()) return out;
    const double tail = 0.5 * (1.0 - level);
    std::vector<double> values(rows.size());
    for (double t : times) {
        for (std::size_t k = 0; k < rows.size(); ++k) {
            const auto& r = rows[k];
            values[k] = 1.0 + (r.scale == 0.0 ? 0.0 : r.scale * gamma_variate(r.tD, r.tP, r.alpha, t));
        }
        std::sort(values.begin(), values.end());
        const EnvelopePoint p{t, quantile_sorted(values, tail), quantile_sorted(values, 0.5),
                              quantile_sorted(values, 1.0 - tail)};
        if (p.lower > 1.0) out.activated = true;
        out.points.push_back(p);
    }
    return out;
}

std::vector<VoxelSummary> summarize(const AcceptedSamples& s, const PriorSpec& spec, double level, unsigned workers) {
    std::vector<VoxelSummary> out(s.voxels);
    const bool plasma = spec.plasma_input();
    parallel_for(s.voxels, workers, [&](std::size_t begin, std::size_t end) {
        for (std::size_t j = begin; j < end; ++j) {
            auto& v = out[j];
            v.probabilities = model_probability(s, j, spec.model_count());
            v.preferred = preferred_model(v.probabilities, spec);
            v.conditional = conditional_summary(s, j, spec, v.preferred, level);
            if (plasma) {
                v.ki = ki_posterior(s, j, spec, std::nullopt, level).summary;
            } else {
                std::vector<double> bp;
                for (std::size_t r = 0; r < s.n; ++r) {
                    const auto row = s.row(j, r);
                    if (static_cast<std::size_t>(row[0]) != v.preferred) continue;
                    const double k2 = row[spec.column_of(v.preferred, 1)];
                    const double k2a = row[spec.column_of(v.preferred, 2)];
                    if (k2a > 0) bp.push_back(k2 / k2a - 1.0);
                }
                v.bp_nd = summarize_values(std::move(bp), level);
            }
        }
    });
    return out;
}

} // namespace vpetabc

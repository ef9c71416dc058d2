#include "vpetabc/spatial.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "vpetabc/common.hpp"
#include "vpetabc/posterior.hpp"

namespace vpetabc {

namespace {

constexpr double nan_v = std::numeric_limits<double>::quiet_NaN();

bool inside(std::span<const std::uint8_t> mask, std::size_t i) { return mask.empty() || mask[i] != 0; }

void check_geometry(const Map2d& map, std::span<const std::uint8_t> mask) {
    if (map.values.size() != map.size()) throw data_error("map values do not match its dimensions");
    if (!mask.empty() && mask.size() != map.size()) throw data_error("mask size does not match the map");
}

std::vector<double> kernel(double sigma) {
    const auto radius = static_cast<std::ptrdiff_t>(std::ceil(4.0 * sigma));
    std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
    for (std::ptrdiff_t i = -radius; i <= radius; ++i)
        k[static_cast<std::size_t>(i + radius)] = sigma > 0 ? std::exp(-0.5 * (i / sigma) * (i / sigma)) : (i == 0);
    return k;
}

// 1D convolution along x (stride 1) or y (stride nx), zero outside the slice.
std::vector<double> convolve(const std::vector<double>& in, std::size_t nx, std::size_t ny, const std::vector<double>& k,
                             bool along_x) {
    const auto r = static_cast<std::ptrdiff_t>(k.size() / 2);
    std::vector<double> out(in.size(), 0.0);
    const auto n_axis = static_cast<std::ptrdiff_t>(along_x ? nx : ny);
    for (std::size_t y = 0; y < ny; ++y)
        for (std::size_t x = 0; x < nx; ++x) {
            const auto p = static_cast<std::ptrdiff_t>(along_x ? x : y);
            double acc = 0.0;
            for (std::ptrdiff_t d = -r; d <= r; ++d) {
                const std::ptrdiff_t q = p + d;
                if (q < 0 || q >= n_axis) continue;
                const std::size_t idx = along_x ? y * nx + static_cast<std::size_t>(q) : static_cast<std::size_t>(q) * nx + x;
                acc += k[static_cast<std::size_t>(d + r)] * in[idx];
            }
            out[y * nx + x] = acc;
        }
    return out;
}

} // namespace

void MoranConfig::validate() const {
    if (!(fwhm_mm > 0) || !std::isfinite(fwhm_mm)) throw config_error("moran: fwhm_mm must be > 0");
    if (!(spacing_x_mm > 0) || !(spacing_y_mm > 0)) throw config_error("moran: voxel spacing must be > 0");
}

double detrend_sigma_voxels(double fwhm_mm, double spacing_mm) {
    return fwhm_mm / (2.0 * std::sqrt(2.0 * std::log(2.0))) / spacing_mm;
}

Map2d masked_gaussian_smooth(const Map2d& map, std::span<const std::uint8_t> mask, const MoranConfig& cfg) {
    cfg.validate();
    check_geometry(map, mask);
    std::vector<double> num(map.size()), den(map.size());
    for (std::size_t i = 0; i < map.size(); ++i) {
        const bool in = inside(mask, i);
        num[i] = in ? map.values[i] : 0.0;
        den[i] = in ? 1.0 : 0.0;
    }
    const auto kx = kernel(detrend_sigma_voxels(cfg.fwhm_mm, cfg.spacing_x_mm));
    const auto ky = kernel(detrend_sigma_voxels(cfg.fwhm_mm, cfg.spacing_y_mm));
    num = convolve(convolve(num, map.nx, map.ny, kx, true), map.nx, map.ny, ky, false);
    den = convolve(convolve(den, map.nx, map.ny, kx, true), map.nx, map.ny, ky, false);
    Map2d out{map.nx, map.ny, std::vector<double>(map.size(), nan_v)};
    for (std::size_t i = 0; i < map.size(); ++i)
        if (inside(mask, i) && den[i] > 0) out.values[i] = num[i] / den[i];
    return out;
}

Map2d detrend_zscore(const Map2d& map, std::span<const std::uint8_t> mask, const MoranConfig& cfg) {
    check_geometry(map, mask);
    std::size_t count = 0;
    for (std::size_t i = 0; i < map.size(); ++i) {
        if (!inside(mask, i)) continue;
        if (!std::isfinite(map.values[i])) throw data_error("moran: map is not finite inside the mask");
        ++count;
    }
    if (count == 0) throw data_error("moran: empty mask");
    const Map2d trend = masked_gaussian_smooth(map, mask, cfg);
    Map2d out{map.nx, map.ny, std::vector<double>(map.size(), nan_v)};
    double mean = 0.0;
    for (std::size_t i = 0; i < map.size(); ++i)
        if (inside(mask, i)) mean += out.values[i] = map.values[i] - trend.values[i];
    mean /= static_cast<double>(count);
    double var = 0.0;
    for (std::size_t i = 0; i < map.size(); ++i)
        if (inside(mask, i)) var += (out.values[i] - mean) * (out.values[i] - mean);
    var /= static_cast<double>(count);
    const double scale = std::sqrt(var);
    if (!(scale > 1e-12 * std::max(1.0, std::abs(mean)))) throw data_error("moran: zero variance after detrending");
    for (std::size_t i = 0; i < map.size(); ++i)
        if (inside(mask, i)) out.values[i] = (out.values[i] - mean) / scale;
    return out;
}

NeighbourWeights moran_weights(std::size_t nx, std::size_t ny, std::span<const std::uint8_t> mask,
                               const MoranConfig& cfg) {
    cfg.validate();
    if (!mask.empty() && mask.size() != nx * ny) throw data_error("mask size does not match the map");
    NeighbourWeights w;
    for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx)
            if (dx || dy) {
                w.dx.push_back(static_cast<std::int8_t>(dx));
                w.dy.push_back(static_cast<std::int8_t>(dy));
            }
    w.weights.assign(nx * ny * 8, 0.0);
    w.has_neighbours.assign(nx * ny, 0);
    for (std::size_t y = 0; y < ny; ++y)
        for (std::size_t x = 0; x < nx; ++x) {
            const std::size_t j = y * nx + x;
            if (!inside(mask, j)) continue;
            double total = 0.0;
            for (std::size_t k = 0; k < 8; ++k) {
                const auto xx = static_cast<std::ptrdiff_t>(x) + w.dx[k];
                const auto yy = static_cast<std::ptrdiff_t>(y) + w.dy[k];
                if (xx < 0 || yy < 0 || xx >= static_cast<std::ptrdiff_t>(nx) || yy >= static_cast<std::ptrdiff_t>(ny)) continue;
                if (!inside(mask, static_cast<std::size_t>(yy) * nx + static_cast<std::size_t>(xx))) continue;
                const double d = std::hypot(w.dx[k] * cfg.spacing_x_mm, w.dy[k] * cfg.spacing_y_mm);
                total += w.weights[j * 8 + k] = 1.0 / d;
            }
            if (total > 0) {
                w.has_neighbours[j] = 1;
                for (std::size_t k = 0; k < 8; ++k) w.weights[j * 8 + k] /= total;
            }
        }
    return w;
}

namespace {

// Σ_k w_jk z_k for every voxel with neighbours; NaN otherwise.
std::vector<double> spatial_lag(const Map2d& z, std::span<const std::uint8_t> mask, const NeighbourWeights& w) {
    std::vector<double> lag(z.size(), nan_v);
    for (std::size_t y = 0; y < z.ny; ++y)
        for (std::size_t x = 0; x < z.nx; ++x) {
            const std::size_t j = y * z.nx + x;
            if (!inside(mask, j) || !w.has_neighbours[j]) continue;
            double acc = 0.0;
            for (std::size_t k = 0; k < 8; ++k) {
                const double wk = w.weights[j * 8 + k];
                if (wk == 0.0) continue;
                const std::size_t nb = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(y) + w.dy[k]) * z.nx +
                                       static_cast<std::size_t>(static_cast<std::ptrdiff_t>(x) + w.dx[k]);
                acc += wk * z.values[nb];
            }
            lag[j] = acc;
        }
    return lag;
}

} // namespace

Map2d local_morans_i(const Map2d& z, std::span<const std::uint8_t> mask, const MoranConfig& cfg) {
    check_geometry(z, mask);
    const auto w = moran_weights(z.nx, z.ny, mask, cfg);
    const auto lag = spatial_lag(z, mask, w);
    Map2d out{z.nx, z.ny, std::vector<double>(z.size(), nan_v)};
    for (std::size_t j = 0; j < z.size(); ++j)
        if (std::isfinite(lag[j])) out.values[j] = z.values[j] * lag[j];
    return out;
}

double global_morans_i(const Map2d& z, std::span<const std::uint8_t> mask, const MoranConfig& cfg) {
    check_geometry(z, mask);
    const auto w = moran_weights(z.nx, z.ny, mask, cfg);
    const auto lag = spatial_lag(z, mask, w);
    double mean = 0.0;
    std::size_t n = 0;
    for (std::size_t j = 0; j < z.size(); ++j)
        if (inside(mask, j)) {
            mean += z.values[j];
            ++n;
        }
    if (n == 0) throw data_error("moran: empty mask");
    mean /= static_cast<double>(n);
    // lag of the centred field equals lag(z) - mean for row-standardised weights
    double cross = 0.0, sq = 0.0, s0 = 0.0;
    for (std::size_t j = 0; j < z.size(); ++j) {
        if (!inside(mask, j)) continue;
        const double c = z.values[j] - mean;
        sq += c * c;
        if (std::isfinite(lag[j])) {
            cross += c * (lag[j] - mean);
            s0 += 1.0;
        }
    }
    if (s0 == 0.0 || sq == 0.0) return nan_v;
    return static_cast<double>(n) / s0 * cross / sq;
}

double pearson(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw data_error("pearson: length mismatch");
    double ma = 0, mb = 0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (std::isfinite(a[i]) && std::isfinite(b[i])) {
            ma += a[i];
            mb += b[i];
            ++n;
        }
    if (n < 2) return nan_v;
    ma /= static_cast<double>(n);
    mb /= static_cast<double>(n);
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (std::isfinite(a[i]) && std::isfinite(b[i])) {
            sab += (a[i] - ma) * (b[i] - mb);
            saa += (a[i] - ma) * (a[i] - ma);
            sbb += (b[i] - mb) * (b[i] - mb);
        }
    if (saa == 0 || sbb == 0) return nan_v;
    return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

MoranReport moran_compare(std::span<const NamedMap> maps, std::span<const std::uint8_t> mask, const MoranConfig& cfg) {
    if (maps.empty()) throw config_error("moran: at least one map is required");
    MoranReport r;
    for (const auto& m : maps) {
        if (m.map.nx != maps[0].map.nx || m.map.ny != maps[0].map.ny)
            throw data_error("moran: map '" + m.name + "' has a different geometry");
        const auto z = detrend_zscore(m.map, mask, cfg);
        auto I = local_morans_i(z, mask, cfg);
        std::vector<double> defined;
        for (double v : I.values)
            if (std::isfinite(v)) defined.push_back(v);
        std::sort(defined.begin(), defined.end());
        r.names.push_back(m.name);
        r.q75.push_back(quantile_sorted(defined, 0.75));
        r.median.push_back(quantile_sorted(defined, 0.5));
        r.local_i.push_back(std::move(I));
    }
    const std::size_t k = maps.size();
    r.correlation.assign(k * k, 1.0);
    for (std::size_t a = 0; a < k; ++a)
        for (std::size_t b = a + 1; b < k; ++b)
            r.correlation[a * k + b] = r.correlation[b * k + a] = pearson(r.local_i[a].values, r.local_i[b].values);
    return r;
}

} // namespace vpetabc

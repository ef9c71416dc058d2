#include "doctest.h"
#include "oracles.hpp"

#include <cmath>
#include <random>

#include "vpetabc/common.hpp"
#include "vpetabc/spatial.hpp"

using namespace vpetabc;

namespace {

Map2d noise_map(std::size_t nx, std::size_t ny, std::uint64_t seed) {
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> z;
    Map2d m{nx, ny, std::vector<double>(nx * ny)};
    for (auto& v : m.values) v = z(gen);
    return m;
}

/// 3x3 box average, clipped at the border.
Map2d box_smooth(const Map2d& m) {
    Map2d out{m.nx, m.ny, std::vector<double>(m.size())};
    for (std::size_t y = 0; y < m.ny; ++y)
        for (std::size_t x = 0; x < m.nx; ++x) {
            double s = 0;
            int c = 0;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const long xx = long(x) + dx, yy = long(y) + dy;
                    if (xx < 0 || yy < 0 || xx >= long(m.nx) || yy >= long(m.ny)) continue;
                    s += m.at(std::size_t(xx), std::size_t(yy));
                    ++c;
                }
            out.values[y * m.nx + x] = s / c;
        }
    return out;
}

} // namespace

TEST_CASE("detrending") {
    const MoranConfig cfg{40.0, 2.0, 3.0};
    CHECK(detrend_sigma_voxels(40.0, 2.0) == doctest::Approx(40.0 / 2.354820045 / 2.0).epsilon(1e-9));
    SUBCASE("constant map") {
        const Map2d m{20, 20, std::vector<double>(400, 3.5)};
        CHECK_THROWS_AS(detrend_zscore(m, {}, cfg), data_error);
    }
    SUBCASE("ramp") {
        const MoranConfig small{8.0, 1.0, 1.0};
        Map2d m{120, 120, std::vector<double>(120 * 120)};
        for (std::size_t y = 0; y < 120; ++y)
            for (std::size_t x = 0; x < 120; ++x) m.values[y * 120 + x] = 0.5 * x + 0.2 * y;
        const auto trend = masked_gaussian_smooth(m, {}, small);
        double var_in = 0, var_res = 0, mean_in = 0, mean_res = 0;
        for (std::size_t i = 0; i < m.size(); ++i) {
            mean_in += m.values[i];
            mean_res += m.values[i] - trend.values[i];
        }
        mean_in /= m.size();
        mean_res /= m.size();
        for (std::size_t i = 0; i < m.size(); ++i) {
            var_in += std::pow(m.values[i] - mean_in, 2);
            var_res += std::pow(m.values[i] - trend.values[i] - mean_res, 2);
        }
        CHECK(var_res <= 0.1 * var_in);
    }
    SUBCASE("z-scores") {
        std::vector<std::uint8_t> mask(40 * 30, 0);
        for (std::size_t y = 5; y < 25; ++y)
            for (std::size_t x = 3; x < 37; ++x) mask[y * 40 + x] = 1;
        const auto z = detrend_zscore(noise_map(40, 30, 1), mask, cfg);
        double s = 0, s2 = 0, n = 0;
        for (std::size_t i = 0; i < z.size(); ++i) {
            if (!mask[i]) {
                CHECK(std::isnan(z.values[i]));
                continue;
            }
            s += z.values[i];
            s2 += z.values[i] * z.values[i];
            ++n;
        }
        CHECK(std::abs(s / n) < 1e-12);
        CHECK(std::abs(std::sqrt(s2 / n - (s / n) * (s / n)) - 1.0) < 1e-12);
    }
    SUBCASE("errors") {
        auto m = noise_map(10, 10, 2);
        std::vector<std::uint8_t> empty(100, 0);
        CHECK_THROWS_AS(detrend_zscore(m, empty, cfg), data_error);
        m.values[5] = std::nan("");
        CHECK_THROWS_AS(detrend_zscore(m, {}, cfg), data_error);
        CHECK_THROWS_AS(MoranConfig({0.0, 1, 1}).validate(), config_error);
        CHECK_THROWS_AS(MoranConfig({10.0, 1, -1}).validate(), config_error);
    }
}

TEST_CASE("neighbour weights are row-standardised inverse distances") {
    const MoranConfig cfg{40.0, 1.6456, 3.3};
    std::vector<std::uint8_t> mask(7 * 6, 1);
    mask[8] = mask[20] = 0;
    const auto w = moran_weights(7, 6, mask, cfg);
    for (std::size_t j = 0; j < 42; ++j) {
        double total = 0;
        for (std::size_t k = 0; k < 8; ++k) total += w.weights[j * 8 + k];
        if (w.has_neighbours[j]) CHECK(total == doctest::Approx(1.0).epsilon(1e-15));
        else CHECK(total == 0.0);
    }
    // interior voxel (3, 3): diagonal vs horizontal ratio is the distance ratio
    const std::size_t j = 3 * 7 + 3;
    double w_h = 0, w_d = 0;
    for (std::size_t k = 0; k < 8; ++k) {
        if (w.dx[k] == 1 && w.dy[k] == 0) w_h = w.weights[j * 8 + k];
        if (w.dx[k] == 1 && w.dy[k] == 1) w_d = w.weights[j * 8 + k];
    }
    CHECK(w_d / w_h == doctest::Approx(1.6456 / std::hypot(1.6456, 3.3)).epsilon(1e-12));
    std::vector<std::uint8_t> lonely(9, 0);
    lonely[4] = 1;
    const auto wl = moran_weights(3, 3, lonely, cfg);
    CHECK(wl.has_neighbours[4] == 0);
    const auto I = local_morans_i(Map2d{3, 3, std::vector<double>(9, 1.0)}, lonely, cfg);
    CHECK(std::isnan(I.values[4]));
}

TEST_CASE("local Moran's I") {
    const MoranConfig cfg{40.0, 1.0, 1.0};
    SUBCASE("checkerboard") {
        Map2d z{9, 8, std::vector<double>(72)};
        for (std::size_t y = 0; y < 8; ++y)
            for (std::size_t x = 0; x < 9; ++x) z.values[y * 9 + x] = (x + y) % 2 ? -1.0 : 1.0;
        const auto I = local_morans_i(z, {}, cfg);
        for (std::size_t y = 1; y < 7; ++y)
            for (std::size_t x = 1; x < 8; ++x) {
                // row-standardised lag: 4 edge neighbours (opposite sign) and 4 diagonals (same sign)
                const double we = 1.0, wd = 1.0 / std::sqrt(2.0);
                const double lag_over_z = (-4 * we + 4 * wd) / (4 * we + 4 * wd);
                CHECK(I.at(x, y) == doctest::Approx(lag_over_z).epsilon(1e-14));
            }
    }
    SUBCASE("checkerboard strip gives -1") {
        // one-row mask: only the two horizontal neighbours remain, both opposite
        Map2d z{9, 8, std::vector<double>(72)};
        for (std::size_t y = 0; y < 8; ++y)
            for (std::size_t x = 0; x < 9; ++x) z.values[y * 9 + x] = (x % 2) ? -1.0 : 1.0;
        std::vector<std::uint8_t> rows_only(72, 0);
        for (std::size_t x = 0; x < 9; ++x) rows_only[4 * 9 + x] = 1;
        const auto I = local_morans_i(z, rows_only, cfg);
        for (std::size_t x = 1; x < 8; ++x) CHECK(I.at(x, 4) == doctest::Approx(-1.0).epsilon(1e-15));
    }
    SUBCASE("random 3x3 against a double loop") {
        std::mt19937_64 gen(17);
        std::normal_distribution<double> nz;
        for (int trial = 0; trial < 50; ++trial) {
            const MoranConfig c{40.0, 1.0 + 0.5 * (trial % 3), 1.0 + 0.7 * (trial % 2)};
            Map2d z{3, 3, std::vector<double>(9)};
            for (auto& v : z.values) v = nz(gen);
            std::vector<std::uint8_t> mask(9, 1);
            if (trial % 4 == 1) mask[gen() % 9] = 0;
            const auto I = local_morans_i(z, mask, c);
            for (int y = 0; y < 3; ++y)
                for (int x = 0; x < 3; ++x) {
                    if (!mask[y * 3 + x]) {
                        CHECK(std::isnan(I.at(x, y)));
                        continue;
                    }
                    double num = 0, den = 0;
                    for (int yy = 0; yy < 3; ++yy)
                        for (int xx = 0; xx < 3; ++xx) {
                            if ((xx == x && yy == y) || std::abs(xx - x) > 1 || std::abs(yy - y) > 1) continue;
                            if (!mask[yy * 3 + xx]) continue;
                            const double d = std::sqrt(std::pow((xx - x) * c.spacing_x_mm, 2) +
                                                       std::pow((yy - y) * c.spacing_y_mm, 2));
                            num += z.at(xx, yy) / d;
                            den += 1.0 / d;
                        }
                    CHECK(std::abs(I.at(x, y) - z.at(x, y) * num / den) <= 1e-12);
                }
        }
    }
    SUBCASE("positive clustering inside a blob") {
        Map2d z{12, 12, std::vector<double>(144, -0.5)};
        for (std::size_t y = 3; y < 9; ++y)
            for (std::size_t x = 3; x < 9; ++x) z.values[y * 12 + x] = 2.0;
        const auto I = local_morans_i(z, {}, cfg);
        for (std::size_t y = 4; y < 8; ++y)
            for (std::size_t x = 4; x < 8; ++x) CHECK(I.at(x, y) > 0.0);
    }
}

TEST_CASE("global Moran's I equals the mean of local values") {
    const MoranConfig cfg{20.0, 1.5, 2.0};
    std::vector<std::uint8_t> mask(30 * 25, 1);
    for (std::size_t i = 0; i < mask.size(); i += 7) mask[i] = 0;
    const auto z = detrend_zscore(box_smooth(noise_map(30, 25, 3)), mask, cfg);
    const auto I = local_morans_i(z, mask, cfg);
    double s = 0, n = 0;
    for (double v : I.values)
        if (std::isfinite(v)) {
            s += v;
            ++n;
        }
    CHECK(std::abs(global_morans_i(z, mask, cfg) - s / n) < 1e-10);
}

TEST_CASE("Moran's I is invariant to shift and scale") {
    const MoranConfig cfg{30.0, 2.0, 2.0};
    const auto m = box_smooth(noise_map(25, 25, 4));
    auto shifted = m, scaled = m;
    for (auto& v : shifted.values) v += 17.0;
    for (auto& v : scaled.values) v *= 3.5;
    const auto a = local_morans_i(detrend_zscore(m, {}, cfg), {}, cfg);
    const auto b = local_morans_i(detrend_zscore(shifted, {}, cfg), {}, cfg);
    const auto c = local_morans_i(detrend_zscore(scaled, {}, cfg), {}, cfg);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(b.values[i] == doctest::Approx(a.values[i]).epsilon(1e-9).scale(1.0));
        CHECK(c.values[i] == doctest::Approx(a.values[i]).epsilon(1e-9).scale(1.0));
    }
}

TEST_CASE("moran comparison") {
    const MoranConfig cfg{40.0, 1.6456, 3.3};
    const auto raw = noise_map(60, 40, 5);
    const auto smooth = box_smooth(raw);
    const std::vector<NamedMap> maps{{"raw", raw}, {"smooth", smooth}, {"raw_again", raw}};
    const auto r = moran_compare(maps, {}, cfg);
    CHECK(r.corr(0, 2) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r.corr(1, 1) == 1.0);
    CHECK(r.q75[1] > r.q75[0]);
    for (std::size_t k = 0; k < 3; ++k) CHECK(r.q75[k] >= r.median[k]);
    for (double c : r.correlation) CHECK((c >= -1.0 && c <= 1.0));
    std::vector<double> defined;
    for (double v : r.local_i[0].values)
        if (std::isfinite(v)) defined.push_back(v);
    CHECK(r.q75[0] == doctest::Approx(oracle::quantile(defined, 0.75)).epsilon(1e-14));
    const std::vector<NamedMap> bad{{"a", raw}, {"b", noise_map(10, 10, 1)}};
    CHECK_THROWS_AS(moran_compare(bad, {}, cfg), data_error);
}

TEST_CASE("pearson") {
    const std::vector<double> a{1, 2, 3, std::nan(""), 5}, b{2, 4, 6, 8, 10.5};
    CHECK(pearson(a, a) == doctest::Approx(1.0));
    const std::vector<double> c{3, 2, 1, 0, -1};
    CHECK(pearson(a, c) == doctest::Approx(-1.0));
    CHECK(std::isnan(pearson(std::vector<double>{1, 1, 1}, std::vector<double>{1, 2, 3})));
}

#include "vpetabc/priors.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <random>

#include "vpetabc/common.hpp"
#include "vpetabc/parallel.hpp"
#include "vpetabc/rng.hpp"

namespace vpetabc {

namespace {

constexpr std::array<std::string_view, 5> two_tcm_names{"K1", "k2", "k3", "k4", "Vb"};
constexpr std::array<std::string_view, 7> lpntpet_names{"R1", "k2", "k2a", "gamma", "tD", "tP", "alpha"};
constexpr std::array<std::string_view, 3> mrtm_names{"R1", "k2", "k2a"};

constexpr int max_truncation_tries = 10000;

} // namespace

std::span<const std::string_view> parameter_names(ModelKind kind) {
    switch (kind) {
    case ModelKind::two_tcm: return two_tcm_names;
    case ModelKind::lpntpet: return lpntpet_names;
    case ModelKind::mrtm: return mrtm_names;
    }
    return {};
}

std::string_view to_string(ModelKind kind) {
    switch (kind) {
    case ModelKind::two_tcm: return "2tcm";
    case ModelKind::lpntpet: return "lpntpet";
    case ModelKind::mrtm: return "mrtm";
    }
    return "?";
}

ModelKind model_kind_from_string(std::string_view s) {
    if (s == "2tcm") return ModelKind::two_tcm;
    if (s == "lpntpet") return ModelKind::lpntpet;
    if (s == "mrtm") return ModelKind::mrtm;
    throw config_error("unknown model kind '" + std::string(s) + "' (expected 2tcm, lpntpet or mrtm)");
}

bool uses_plasma_input(ModelKind kind) { return kind == ModelKind::two_tcm; }

std::size_t ModelPrior::free_parameters() const {
    return static_cast<std::size_t>(std::count_if(params.begin(), params.end(), [](const auto& d) { return !d.is_fixed(); }));
}

PriorSpec::PriorSpec(std::vector<ModelPrior> models) : models_(std::move(models)) {
    if (models_.empty()) throw config_error("priors: at least one model is required");
    double total = 0.0;
    for (const auto& m : models_) {
        if (!(m.probability > 0) || !std::isfinite(m.probability))
            throw config_error("priors: model '" + m.name + "' needs a positive probability");
        total += m.probability;
        if (uses_plasma_input(m.kind) != uses_plasma_input(models_.front().kind))
            throw config_error("priors: models driven by a plasma input and by a reference TAC cannot be mixed");
    }
    if (std::abs(total - 1.0) > 1e-9) throw config_error("priors: model probabilities must sum to 1");
    for (std::size_t i = 0; i < models_.size(); ++i)
        for (std::size_t j = i + 1; j < models_.size(); ++j)
            if (models_[i].name == models_[j].name) throw config_error("priors: duplicate model name '" + models_[i].name + "'");

    double acc = 0.0;
    for (const auto& m : models_) {
        acc += m.probability / total;
        cumulative_.push_back(acc);
    }
    cumulative_.back() = 1.0;

    for (const auto& m : models_) {
        const auto names = parameter_names(m.kind);
        if (m.params.size() != names.size())
            throw config_error("priors: model '" + m.name + "' must define " + std::to_string(names.size()) +
                               " parameters");
        std::vector<std::size_t> cols;
        std::vector<std::size_t> bases;
        for (std::size_t k = 0; k < names.size(); ++k) {
            const auto& d = m.params[k];
            const std::string pname(names[k]);
            switch (d.type) {
            case Distribution::Type::fixed:
                if (!std::isfinite(d.a)) throw config_error("priors: " + m.name + "." + pname + " fixed value must be finite");
                break;
            case Distribution::Type::uniform:
            case Distribution::Type::offset:
                if (!(d.a < d.b) || !std::isfinite(d.a) || !std::isfinite(d.b))
                    throw config_error("priors: " + m.name + "." + pname + " needs lo < hi");
                break;
            case Distribution::Type::normal:
                if (!(d.b > 0) || !std::isfinite(d.a)) throw config_error("priors: " + m.name + "." + pname + " needs sd > 0");
                if (!(d.lo < d.hi)) throw config_error("priors: " + m.name + "." + pname + " truncation needs lo < hi");
                break;
            }
            std::size_t base = k;
            if (!d.base.empty()) {
                const auto it = std::find(names.begin(), names.begin() + static_cast<std::ptrdiff_t>(k), d.base);
                if (it == names.begin() + static_cast<std::ptrdiff_t>(k))
                    throw config_error("priors: " + m.name + "." + pname + " refers to '" + d.base +
                                       "', which must be an earlier parameter of the same model");
                base = static_cast<std::size_t>(it - names.begin());
            } else if (d.type == Distribution::Type::offset) {
                throw config_error("priors: " + m.name + "." + pname + " offset distribution needs a base parameter");
            }
            bases.push_back(base);
            auto col = std::find(columns_.begin(), columns_.end(), pname);
            if (col == columns_.end()) {
                columns_.push_back(pname);
                col = columns_.end() - 1;
            }
            cols.push_back(static_cast<std::size_t>(col - columns_.begin()));
        }
        column_of_.push_back(std::move(cols));
        base_index_.push_back(std::move(bases));
    }
}

std::size_t PriorSpec::column(std::string_view name) const {
    const auto it = std::find(columns_.begin(), columns_.end(), name);
    return it == columns_.end() ? 0 : static_cast<std::size_t>(it - columns_.begin()) + 1;
}

std::size_t PriorSpec::model_index(std::string_view name) const {
    for (std::size_t m = 0; m < models_.size(); ++m)
        if (models_[m].name == name) return m;
    throw config_error("priors: no model named '" + std::string(name) + "'");
}

void PriorSpec::sample_row(std::uint64_t seed, std::uint64_t row, std::span<double> out) const {
    counter_engine rng(seed, row);
    std::fill(out.begin(), out.end(), std::numeric_limits<double>::quiet_NaN());
    const double u = rng.uniform();
    std::size_t m = 0;
    while (m + 1 < cumulative_.size() && u >= cumulative_[m]) ++m;
    out[0] = static_cast<double>(m);

    const auto& model = models_[m];
    double values[8];
    for (std::size_t k = 0; k < model.params.size(); ++k) {
        const auto& d = model.params[k];
        double v = 0.0;
        switch (d.type) {
        case Distribution::Type::fixed: v = d.a; break;
        case Distribution::Type::uniform: {
            const double lo = d.base.empty() ? d.a : std::max(d.a, values[base_index_[m][k]] + d.gap);
            if (!(lo < d.b)) throw data_error("priors: empty range for " + model.name + "." +
                                              std::string(parameter_names(model.kind)[k]));
            v = lo + (d.b - lo) * rng.uniform();
            break;
        }
        case Distribution::Type::offset: v = values[base_index_[m][k]] + d.a + (d.b - d.a) * rng.uniform(); break;
        case Distribution::Type::normal: {
            std::normal_distribution<double> z(d.a, d.b);
            int tries = 0;
            do {
                v = z(rng);
            } while ((v < d.lo || v > d.hi) && ++tries < max_truncation_tries);
            v = std::clamp(v, d.lo, d.hi);
            break;
        }
        }
        values[k] = v;
        out[column_of_[m][k] + 1] = v;
    }
}

ThetaMatrix sample_theta(const PriorSpec& spec, std::size_t N, std::uint64_t seed, unsigned workers) {
    if (N == 0) throw config_error("sample_theta: N must be >= 1");
    ThetaMatrix theta{N, spec.parameter_columns() + 1, {}};
    theta.values.resize(theta.rows * theta.cols);
    parallel_for(N, workers, [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) spec.sample_row(seed, i, theta.row(i));
    });
    return theta;
}

PriorSpec prior_preset(std::string_view name) {
    using D = Distribution;
    if (name == "fdg-2tcm-wide" || name == "fdg-2tcm") {
        auto model = [](std::string n, D k4, double p) {
            return ModelPrior{std::move(n), ModelKind::two_tcm, p,
                              {D::uniform(0.001, 1.0), D::uniform(0.001, 2.0), D::uniform(0.001, 0.5), k4,
                               D::uniform(0.03, 0.2)}};
        };
        if (name == "fdg-2tcm") return PriorSpec({model("2tcm", D::uniform(0.0, 0.1), 1.0)});
        return PriorSpec({model("2tcm-irreversible", D::fixed(0.0), 0.5), model("2tcm-reversible", D::uniform(0.0, 0.1), 0.5)});
    }
    if (name == "raclopride-lpntpet") {
        return PriorSpec({
            ModelPrior{"mrtm", ModelKind::mrtm, 0.5, {D::uniform(0.6, 1.6), D::uniform(0.1, 0.6), D::uniform(0.02, 0.2)}},
            ModelPrior{"lpntpet",
                       ModelKind::lpntpet,
                       0.5,
                       {D::uniform(0.6, 1.6), D::uniform(0.1, 0.6), D::uniform(0.02, 0.2), D::uniform(0.0, 0.1),
                        D::uniform(30.0, 40.0), D::offset("tD", 1.0, 30.0), D::normal(0.7, 0.1, 0.1, 3.0)}},
        });
    }
    throw config_error("unknown prior preset '" + std::string(name) + "'");
}

} // namespace vpetabc

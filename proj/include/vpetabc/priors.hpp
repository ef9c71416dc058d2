#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace vpetabc {

enum class ModelKind { two_tcm, lpntpet, mrtm };

/// Canonical parameter order for each kind:
///   two_tcm: K1 k2 k3 k4 Vb
///   lpntpet: R1 k2 k2a gamma tD tP alpha
///   mrtm:    R1 k2 k2a
std::span<const std::string_view> parameter_names(ModelKind kind);
std::string_view to_string(ModelKind kind);
ModelKind model_kind_from_string(std::string_view s);

/// Whether the kind is driven by a plasma input (2TCM) or a reference TAC.
bool uses_plasma_input(ModelKind kind);

/// Marginal prior of one parameter.
struct Distribution {
    enum class Type { fixed, uniform, normal, offset };

    Type type = Type::fixed;
    double a = 0.0;  // fixed value | uniform lo | normal mean | offset lo
    double b = 0.0;  // uniform hi | normal sd | offset hi
    // Truncation bounds of a normal.
    double lo = -std::numeric_limits<double>::infinity();
    double hi = std::numeric_limits<double>::infinity();
    // offset: base + U(a, b). uniform with a base: U(max(a, base + gap), b).
    std::string base;
    double gap = 0.0;

    static Distribution fixed(double v) { return make(Type::fixed, v, 0.0); }
    static Distribution uniform(double lo, double hi) { return make(Type::uniform, lo, hi); }
    static Distribution normal(double mean, double sd, double lo = -std::numeric_limits<double>::infinity(),
                               double hi = std::numeric_limits<double>::infinity()) {
        Distribution d = make(Type::normal, mean, sd);
        d.lo = lo;
        d.hi = hi;
        return d;
    }
    static Distribution offset(std::string base, double lo, double hi) {
        Distribution d = make(Type::offset, lo, hi);
        d.base = std::move(base);
        return d;
    }
    static Distribution uniform_after(std::string base, double gap, double lo, double hi) {
        Distribution d = make(Type::uniform, lo, hi);
        d.base = std::move(base);
        d.gap = gap;
        return d;
    }

    bool is_fixed() const { return type == Type::fixed; }

private:
    static Distribution make(Type t, double a, double b) {
        Distribution d;
        d.type = t;
        d.a = a;
        d.b = b;
        return d;
    }
};

struct ModelPrior {
    std::string name;
    ModelKind kind = ModelKind::two_tcm;
    double probability = 0.0;
    std::vector<Distribution> params;  // canonical order of `kind`

    std::size_t free_parameters() const;
};

/// Models plus the shared column layout of the parameter matrix.
/// Columns are the union of parameter names in first-seen order; a model's
/// unused columns hold NaN.
class PriorSpec {
public:
    PriorSpec() = default;
    /// Validates and builds the column layout; throws config_error.
    explicit PriorSpec(std::vector<ModelPrior> models);

    std::size_t model_count() const noexcept { return models_.size(); }
    const ModelPrior& model(std::size_t m) const { return models_[m]; }
    const std::vector<ModelPrior>& models() const noexcept { return models_; }

    /// P: number of parameter columns (the matrix has P + 1 with the indicator).
    std::size_t parameter_columns() const noexcept { return columns_.size(); }
    const std::vector<std::string>& columns() const noexcept { return columns_; }
    /// Column (1-based, after the indicator) of parameter k of model m.
    std::size_t column_of(std::size_t m, std::size_t k) const { return column_of_[m][k] + 1; }
    /// 1-based column of a named parameter, or 0 if absent.
    std::size_t column(std::string_view name) const;
    /// Index of a named model; throws config_error if absent.
    std::size_t model_index(std::string_view name) const;
    bool plasma_input() const { return !models_.empty() && uses_plasma_input(models_.front().kind); }

    /// Draw one row (m, θ) into out[0..P]. Pure function of (seed, row).
    void sample_row(std::uint64_t seed, std::uint64_t row, std::span<double> out) const;

private:
    std::vector<ModelPrior> models_;
    std::vector<std::string> columns_;
    std::vector<std::vector<std::size_t>> column_of_;
    std::vector<std::vector<std::size_t>> base_index_;  // within-model index of offset bases
    std::vector<double> cumulative_;
};

/// N×(P+1) row-major matrix; column 0 is the model indicator.
struct ThetaMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;

    std::span<const double> row(std::size_t i) const { return {values.data() + i * cols, cols}; }
    std::span<double> row(std::size_t i) { return {values.data() + i * cols, cols}; }
};

ThetaMatrix sample_theta(const PriorSpec& spec, std::size_t N, std::uint64_t seed, unsigned workers = 1);

/// Named presets: "fdg-2tcm-wide", "fdg-2tcm" (single reversible 2TCM over the
/// same box), "raclopride-lpntpet".
PriorSpec prior_preset(std::string_view name);

} // namespace vpetabc

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>

#include "vpetabc/abc.hpp"
#include "vpetabc/baselines.hpp"
#include "vpetabc/common.hpp"
#include "vpetabc/config.hpp"
#include "vpetabc/io.hpp"
#include "vpetabc/kinetics.hpp"
#include "vpetabc/posterior.hpp"
#include "vpetabc/spatial.hpp"

namespace py = pybind11;
using namespace vpetabc;

namespace {

using f64_array = py::array_t<double, py::array::c_style | py::array::forcecast>;

json parse(const std::string& text) {
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        throw config_error(std::string("invalid JSON: ") + e.what());
    }
}

py::array_t<double> to_numpy(const std::vector<double>& v) {
    py::array_t<double> out(static_cast<py::ssize_t>(v.size()));
    std::memcpy(out.mutable_data(), v.data(), v.size() * sizeof(double));
    return out;
}

std::vector<double> to_vector(const f64_array& a) { return {a.data(), a.data() + a.size()}; }

struct Model {
    FrameSchedule schedule;
    FineGrid grid;
    Curve input;
};

Model model_of(const std::string& schedule_json, const std::string& input_json) {
    Model m;
    m.schedule = parse_schedule(parse(schedule_json));
    const auto in = parse_input(parse(input_json));
    m.grid = in.grid_for(m.schedule);
    m.input = in.resolve(m.grid, m.schedule);
    return m;
}

class Engine {
public:
    Engine(const std::string& priors, const std::string& schedule, const std::string& input, const std::string& noise)
        : model_(model_of(schedule, input)),
          sim_(parse_priors(parse(priors)), model_.input, model_.grid, model_.schedule, parse_noise(parse(noise))) {}

    std::vector<std::string> columns() const {
        std::vector<std::string> out{"model"};
        for (const auto& c : sim_.spec().columns()) out.push_back(c);
        return out;
    }

    std::vector<std::string> models() const {
        std::vector<std::string> out;
        for (const auto& m : sim_.spec().models()) out.push_back(m.name);
        return out;
    }

    py::tuple simulate(std::uint64_t N, std::uint64_t seed) const {
        AbcConfig c;
        c.N = N;
        c.n = 1;
        c.seed = seed;
        SimulationPool pool;
        {
            py::gil_scoped_release nogil;
            pool = build_pool(sim_, c);
        }
        py::array_t<double> theta({static_cast<py::ssize_t>(N), static_cast<py::ssize_t>(pool.theta.cols)});
        std::memcpy(theta.mutable_data(), pool.theta.values.data(), pool.theta.values.size() * sizeof(double));
        py::array_t<float> curves({static_cast<py::ssize_t>(N), static_cast<py::ssize_t>(pool.frames)});
        std::memcpy(curves.mutable_data(), pool.curves.data(), pool.curves.size() * sizeof(float));
        return py::make_tuple(theta, curves);
    }

    py::dict infer(const f64_array& tacs, std::uint64_t N, std::size_t n, std::uint64_t seed, unsigned workers,
                   const std::string& distance, double level) const {
        if (tacs.ndim() != 2 || static_cast<std::size_t>(tacs.shape(1)) != sim_.frames())
            throw data_error("tacs must be a (voxels, frames) array with " + std::to_string(sim_.frames()) + " frames");
        Observations obs{static_cast<std::size_t>(tacs.shape(0)), sim_.frames(), to_vector(tacs)};
        AbcConfig c;
        c.N = N;
        c.n = n;
        c.seed = seed;
        c.workers = workers;
        if (distance == "l2") c.distance = DistanceKind::l2;
        else if (distance != "l1") throw config_error("distance must be 'l1' or 'l2'");
        AcceptedPosterior post;
        AcceptedSamples samples;
        std::vector<VoxelSummary> summary;
        {
            py::gil_scoped_release nogil;
            post = abc_infer(sim_, obs, c);
            samples = gather_samples(post, sim_.spec(), seed);
            summary = summarize(samples, sim_.spec(), level, workers);
        }
        const auto J = static_cast<py::ssize_t>(obs.voxels), nn = static_cast<py::ssize_t>(n);
        py::array_t<std::uint64_t> index({J, nn});
        py::array_t<double> dist({J, nn});
        for (std::size_t i = 0; i < post.records.size(); ++i) {
            index.mutable_data()[i] = post.records[i].index;
            dist.mutable_data()[i] = post.records[i].distance;
        }
        py::array_t<double> theta({J, nn, static_cast<py::ssize_t>(samples.cols)});
        std::memcpy(theta.mutable_data(), samples.theta.data(), samples.theta.size() * sizeof(double));
        const auto M = static_cast<py::ssize_t>(sim_.spec().model_count());
        py::array_t<double> prob({J, M});
        for (py::ssize_t j = 0; j < J; ++j)
            for (py::ssize_t m = 0; m < M; ++m) prob.mutable_data()[j * M + m] = summary[j].probabilities[m];
        py::dict out;
        out["index"] = index;
        out["distance"] = dist;
        out["samples"] = theta;
        out["model_probability"] = prob;
        return out;
    }

private:
    Model model_;
    Simulator sim_;
};

Map2d map_of(const f64_array& a) {
    if (a.ndim() != 2) throw data_error("map must be a 2-D array (ny, nx)");
    return {static_cast<std::size_t>(a.shape(1)), static_cast<std::size_t>(a.shape(0)), to_vector(a)};
}

std::vector<std::uint8_t> mask_of(const std::optional<py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>>& m,
                                  const Map2d& map) {
    if (!m) return {};
    if (static_cast<std::size_t>(m->size()) != map.size()) throw data_error("mask size does not match the map");
    return {m->data(), m->data() + m->size()};
}

py::array_t<double> numpy_map(const Map2d& m) {
    py::array_t<double> out({static_cast<py::ssize_t>(m.ny), static_cast<py::ssize_t>(m.nx)});
    std::memcpy(out.mutable_data(), m.values.data(), m.values.size() * sizeof(double));
    return out;
}

} // namespace

PYBIND11_MODULE(_vpetabc, m) {
    auto base = py::register_exception<error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<config_error>(m, "ConfigError", base.ptr());
    py::register_exception<data_error>(m, "DataError", base.ptr());
    py::register_exception<budget_error>(m, "BudgetError", base.ptr());

    m.def("version", &library_version);

    m.def("schedule", [](const std::string& spec) {
        const auto s = parse_schedule(parse(spec));
        std::vector<double> mids;
        for (std::size_t f = 0; f < s.size(); ++f) mids.push_back(s.mid(f));
        py::dict d;
        d["start"] = to_numpy(s.starts());
        d["duration"] = to_numpy(s.durations());
        d["mid"] = to_numpy(mids);
        return d;
    });

    m.def("input_curve", [](const std::string& schedule, const std::string& input) {
        const auto md = model_of(schedule, input);
        std::vector<double> t(md.grid.nodes());
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = md.grid.time(i);
        return py::make_tuple(to_numpy(t), to_numpy(md.input));
    });

    m.def(
        "simulate_2tcm",
        [](double K1, double k2, double k3, double k4, double Vb, const std::string& schedule, const std::string& input) {
            const auto md = model_of(schedule, input);
            return to_numpy(simulate_2tcm({K1, k2, k3, k4, Vb}, md.input, md.grid, md.schedule));
        },
        py::arg("K1"), py::arg("k2"), py::arg("k3"), py::arg("k4"), py::arg("Vb"), py::arg("schedule"), py::arg("input"));

    m.def(
        "simulate_lpntpet",
        [](double R1, double k2, double k2a, double gamma, double tD, double tP, double alpha, const std::string& schedule,
           const std::string& input) {
            const auto md = model_of(schedule, input);
            return to_numpy(simulate_lpntpet({R1, k2, k2a, gamma, tD, tP, alpha}, md.input, md.grid, md.schedule));
        },
        py::arg("R1"), py::arg("k2"), py::arg("k2a"), py::arg("gamma"), py::arg("tD"), py::arg("tP"), py::arg("alpha"),
        py::arg("schedule"), py::arg("input"));

    m.def("gamma_variate", &gamma_variate, py::arg("tD"), py::arg("tP"), py::arg("alpha"), py::arg("t"));

    m.def(
        "patlak_ki",
        [](const f64_array& tac, const f64_array& input, const std::string& schedule, double t_star) {
            const auto s = parse_schedule(parse(schedule));
            const auto r = patlak_ki(to_vector(tac), to_vector(input), s, t_star);
            return py::make_tuple(r.slope, r.intercept, r.r2);
        },
        py::arg("tac"), py::arg("input"), py::arg("schedule"), py::arg("t_star") = 20.0);

    m.def(
        "local_morans_i",
        [](const f64_array& map, std::optional<py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>> mask,
           double fwhm_mm, double spacing_x_mm, double spacing_y_mm, bool detrend) {
            const MoranConfig cfg{fwhm_mm, spacing_x_mm, spacing_y_mm};
            cfg.validate();
            const auto mp = map_of(map);
            const auto mk = mask_of(mask, mp);
            const auto z = detrend ? detrend_zscore(mp, mk, cfg) : mp;
            return numpy_map(local_morans_i(z, mk, cfg));
        },
        py::arg("map"), py::arg("mask") = py::none(), py::arg("fwhm_mm") = 40.0, py::arg("spacing_x_mm") = 1.0,
        py::arg("spacing_y_mm") = 1.0, py::arg("detrend") = true);

    py::class_<Engine>(m, "Engine")
        .def(py::init<const std::string&, const std::string&, const std::string&, const std::string&>(),
             py::arg("priors"), py::arg("schedule"), py::arg("input"), py::arg("noise"))
        .def_property_readonly("columns", &Engine::columns)
        .def_property_readonly("models", &Engine::models)
        .def("simulate", &Engine::simulate, py::arg("N"), py::arg("seed"))
        .def("infer", &Engine::infer, py::arg("tacs"), py::arg("N"), py::arg("n") = 18, py::arg("seed") = 0,
             py::arg("workers") = 1, py::arg("distance") = "l1", py::arg("level") = 0.95);
}

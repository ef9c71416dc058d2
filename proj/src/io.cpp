#include "vpetabc/io.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "vpetabc/common.hpp"
#include "vpetabc/config.hpp"

#ifndef VPETABC_VERSION
#define VPETABC_VERSION "0.0.0"
#endif

namespace vpetabc {

namespace {

template <class T>
void put_le(std::vector<std::uint8_t>& out, T v) {
    std::uint8_t b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
    out.insert(out.end(), b, b + sizeof(T));
}

template <class T>
T get_le(const std::uint8_t* p) {
    std::uint8_t b[sizeof(T)];
    std::memcpy(b, p, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
    T v;
    std::memcpy(&v, b, sizeof(T));
    return v;
}

fs::path with_suffix(const fs::path& stem, const std::string& suffix) { return fs::path(stem.string() + suffix); }

std::array<std::size_t, 3> dims_of(const json& j, const std::string& where) {
    try {
        const auto d = j.at("dims").get<std::vector<std::size_t>>();
        if (d.size() != 3 || !d[0] || !d[1] || !d[2]) throw data_error(where + ": dims must be 3 positive integers");
        return {d[0], d[1], d[2]};
    } catch (const json::exception&) {
        throw data_error(where + ": missing or malformed dims");
    }
}

std::array<double, 3> spacing_of(const json& j, const std::string& where) {
    if (!j.contains("spacing_mm")) return {1.0, 1.0, 1.0};
    try {
        const auto s = j.at("spacing_mm").get<std::vector<double>>();
        if (s.size() != 3 || !(s[0] > 0 && s[1] > 0 && s[2] > 0))
            throw data_error(where + ": spacing_mm must be 3 positive values");
        return {s[0], s[1], s[2]};
    } catch (const json::exception&) {
        throw data_error(where + ": malformed spacing_mm");
    }
}

std::vector<float> floats_from(const std::vector<std::uint8_t>& bytes, std::size_t expected, const fs::path& path) {
    if (bytes.size() != expected * 4)
        throw data_error("'" + path.string() + "' holds " + std::to_string(bytes.size()) + " bytes, expected " +
                         std::to_string(expected * 4));
    std::vector<float> out(expected);
    for (std::size_t i = 0; i < expected; ++i) out[i] = get_le<float>(bytes.data() + 4 * i);
    return out;
}

std::vector<std::uint8_t> floats_to(std::span<const float> v) {
    std::vector<std::uint8_t> out;
    out.reserve(v.size() * 4);
    for (float x : v) put_le(out, x);
    return out;
}

} // namespace

const char* library_version() { return VPETABC_VERSION; }

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot open '" + path.string() + "'");
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_bytes(const fs::path& path, const void* data, std::size_t size) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw error("cannot write '" + path.string() + "'");
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
    if (!out) throw error("failed writing '" + path.string() + "'");
}

void write_text(const fs::path& path, const std::string& text) { write_bytes(path, text.data(), text.size()); }

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw data_error("cannot open '" + path.string() + "'");
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw data_error("'" + path.string() + "' is not valid JSON: " + e.what());
    }
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::string sha256_hex(const void* data, std::size_t size) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data, size, md, &len, EVP_sha256(), nullptr) != 1) throw error("SHA-256 failed");
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned i = 0; i < len; ++i) {
        out.push_back(hex[md[i] >> 4]);
        out.push_back(hex[md[i] & 15]);
    }
    return out;
}

std::string sha256_file(const fs::path& path) {
    const auto bytes = read_bytes(path);
    return sha256_hex(bytes.data(), bytes.size());
}

// ---------------------------------------------------------------- dataset

Observations Dataset::observations() const {
    const std::size_t L = frames();
    const auto idx = geometry.masked_indices();
    Observations obs{idx.size(), L, std::vector<double>(idx.size() * L)};
    for (std::size_t j = 0; j < idx.size(); ++j)
        for (std::size_t f = 0; f < L; ++f) obs.values[j * L + f] = tacs[idx[j] * L + f];
    return obs;
}

std::vector<fs::path> write_dataset(const fs::path& header, const Dataset& ds) {
    const std::size_t V = ds.geometry.voxel_count();
    if (ds.tacs.size() != V * ds.frames()) throw data_error("dataset: payload size does not match dims and frames");
    if (!ds.geometry.mask.empty() && ds.geometry.mask.size() != V) throw data_error("dataset: mask size mismatch");
    std::string stem = header.stem().string();
    const fs::path dir = header.parent_path();
    const fs::path payload = dir / (stem + ".f32");
    std::vector<fs::path> written;

    json h;
    h["format"] = "vpetabc-tac";
    h["version"] = 1;
    h["dims"] = ds.geometry.dims;
    h["spacing_mm"] = ds.geometry.spacing_mm;
    h["frames"] = ds.frames();
    h["schedule"] = schedule_to_json(ds.schedule);
    h["units"] = ds.units;
    h["payload"] = payload.filename().string();
    h["mask"] = nullptr;
    h["input"] = nullptr;

    const auto bytes = floats_to(ds.tacs);
    write_bytes(payload, bytes.data(), bytes.size());
    written.push_back(payload);
    if (!ds.geometry.mask.empty()) {
        const fs::path mask = dir / (stem + ".mask.u8");
        write_bytes(mask, ds.geometry.mask.data(), ds.geometry.mask.size());
        h["mask"] = mask.filename().string();
        written.push_back(mask);
    }
    if (!ds.input.is_null()) {
        const fs::path input = dir / (stem + ".input.json");
        write_json(input, ds.input);
        h["input"] = input.filename().string();
        written.push_back(input);
    }
    write_json(header, h);
    written.push_back(header);
    return written;
}

Dataset read_dataset(const fs::path& header) {
    const json h = read_json(header);
    const std::string where = "dataset '" + header.string() + "'";
    if (h.value("format", "") != "vpetabc-tac") throw data_error(where + ": not a vpetabc-tac header");
    const fs::path dir = header.parent_path();
    Dataset ds;
    ds.geometry.dims = dims_of(h, where);
    ds.geometry.spacing_mm = spacing_of(h, where);
    try {
        ds.schedule = parse_schedule(h.at("schedule"));
        ds.units = h.value("units", "kBq/mL");
        if (h.at("frames").get<std::size_t>() != ds.schedule.size())
            throw data_error(where + ": frame count does not match the schedule");
        const std::size_t V = ds.geometry.voxel_count();
        const fs::path payload = dir / h.at("payload").get<std::string>();
        ds.tacs = floats_from(read_bytes(payload), V * ds.schedule.size(), payload);
        if (h.contains("mask") && !h.at("mask").is_null()) {
            const fs::path mask = dir / h.at("mask").get<std::string>();
            ds.geometry.mask = read_bytes(mask);
            if (ds.geometry.mask.size() != V) throw data_error(where + ": mask size does not match dims");
        }
        if (h.contains("input") && !h.at("input").is_null()) ds.input = read_json(dir / h.at("input").get<std::string>());
    } catch (const json::exception& e) {
        throw data_error(where + ": malformed header (" + e.what() + ")");
    } catch (const config_error& e) {
        throw data_error(where + ": " + e.what());
    }
    return ds;
}

// ---------------------------------------------------------------- maps

std::vector<fs::path> write_map(const fs::path& stem, const ParametricMap& map, const std::string& mask_path) {
    if (map.values.size() != map.dims[0] * map.dims[1] * map.dims[2]) throw data_error("map: values do not match dims");
    const fs::path payload = with_suffix(stem, ".f32");
    const fs::path sidecar = with_suffix(stem, ".json");
    const auto bytes = floats_to(map.values);
    write_bytes(payload, bytes.data(), bytes.size());
    json j{{"format", "vpetabc-map"},
           {"version", 1},
           {"dims", map.dims},
           {"spacing_mm", map.spacing_mm},
           {"field", map.field},
           {"payload", payload.filename().string()},
           {"mask_path", mask_path.empty() ? json(nullptr) : json(mask_path)}};
    write_json(sidecar, j);
    return {payload, sidecar};
}

ParametricMap read_map(const fs::path& path) {
    fs::path sidecar = path;
    if (sidecar.extension() != ".json") sidecar = with_suffix(path, ".json");
    if (path.extension() == ".f32") sidecar = path.parent_path() / (path.stem().string() + ".json");
    const json j = read_json(sidecar);
    const std::string where = "map '" + sidecar.string() + "'";
    ParametricMap m;
    m.dims = dims_of(j, where);
    m.spacing_mm = spacing_of(j, where);
    m.field = j.value("field", "");
    const fs::path payload = sidecar.parent_path() / j.value("payload", sidecar.stem().string() + ".f32");
    m.values = floats_from(read_bytes(payload), m.dims[0] * m.dims[1] * m.dims[2], payload);
    return m;
}

// ---------------------------------------------------------------- posterior export

std::vector<fs::path> write_posterior(const fs::path& stem, const AcceptedPosterior& post,
                                      const AcceptedSamples& samples, const PriorSpec& spec) {
    if (samples.voxels != post.voxels || samples.n != post.n || samples.cols != spec.parameter_columns() + 1)
        throw data_error("posterior export: samples do not match the posterior");
    const std::size_t P = spec.parameter_columns();
    std::vector<std::uint8_t> out;
    out.reserve(post.records.size() * (32 + 8 * P));
    for (std::size_t j = 0; j < post.voxels; ++j)
        for (std::size_t r = 0; r < post.n; ++r) {
            const auto& rec = post.records[j * post.n + r];
            put_le<std::uint64_t>(out, j);
            put_le<std::uint64_t>(out, rec.index);
            put_le<double>(out, rec.distance);
            for (double v : samples.row(j, r)) put_le<double>(out, v);
        }
    const fs::path payload = with_suffix(stem, ".bin");
    const fs::path sidecar = with_suffix(stem, ".json");
    write_bytes(payload, out.data(), out.size());
    json models = json::array();
    for (const auto& m : spec.models()) models.push_back({{"name", m.name}, {"kind", to_string(m.kind)}});
    json cols = json::array({"voxel", "pool_row", "distance", "model"});
    for (const auto& c : spec.columns()) cols.push_back(c);
    write_json(sidecar, {{"format", "vpetabc-posterior"},
                         {"version", 1},
                         {"J", post.voxels},
                         {"n", post.n},
                         {"P", P},
                         {"record_bytes", 32 + 8 * P},
                         {"columns", cols},
                         {"models", models},
                         {"payload", payload.filename().string()}});
    return {payload, sidecar};
}

PosteriorFile read_posterior(const fs::path& stem) {
    fs::path sidecar = stem.extension() == ".json" ? stem : with_suffix(stem, ".json");
    PosteriorFile f;
    f.sidecar = read_json(sidecar);
    const std::string where = "posterior '" + sidecar.string() + "'";
    try {
        const auto J = f.sidecar.at("J").get<std::size_t>();
        const auto n = f.sidecar.at("n").get<std::size_t>();
        const auto P = f.sidecar.at("P").get<std::size_t>();
        const fs::path payload = sidecar.parent_path() / f.sidecar.at("payload").get<std::string>();
        const auto bytes = read_bytes(payload);
        const std::size_t rb = 32 + 8 * P;
        if (bytes.size() != J * n * rb) throw data_error(where + ": payload size mismatch");
        f.post = AcceptedPosterior{J, n, std::vector<AcceptedRecord>(J * n)};
        f.samples = AcceptedSamples{J, n, P + 1, std::vector<double>(J * n * (P + 1)), std::vector<double>(J * n)};
        for (std::size_t i = 0; i < J * n; ++i) {
            const std::uint8_t* p = bytes.data() + i * rb;
            if (get_le<std::uint64_t>(p) != i / n) throw data_error(where + ": records out of order");
            f.post.records[i] = {get_le<std::uint64_t>(p + 8), get_le<double>(p + 16)};
            f.samples.distances[i] = f.post.records[i].distance;
            for (std::size_t c = 0; c <= P; ++c) f.samples.theta[i * (P + 1) + c] = get_le<double>(p + 24 + 8 * c);
        }
    } catch (const json::exception& e) {
        throw data_error(where + ": malformed sidecar (" + e.what() + ")");
    }
    return f;
}

// ---------------------------------------------------------------- manifest

Manifest::Manifest(std::string command, std::string config_sha256, std::uint64_t seed)
    : command_(std::move(command)), config_sha256_(std::move(config_sha256)), seed_(seed) {}

Manifest::Stage::Stage(Manifest& m, std::string name)
    : m_(m), name_(std::move(name)), start_(std::chrono::steady_clock::now()) {}

Manifest::Stage::~Stage() {
    m_.record_stage(name_, std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count());
}

void Manifest::add_output(const fs::path& path) {
    if (std::find(outputs_.begin(), outputs_.end(), path) == outputs_.end()) outputs_.push_back(path);
}

void Manifest::add_outputs(const std::vector<fs::path>& paths) {
    for (const auto& p : paths) add_output(p);
}

void Manifest::record_stage(const std::string& name, double seconds) { stages_.emplace_back(name, seconds); }

fs::path Manifest::write(const fs::path& root) const {
    json outputs = json::array();
    auto sorted = outputs_;
    std::sort(sorted.begin(), sorted.end());
    for (const auto& p : sorted) {
        const auto rel = fs::weakly_canonical(p).lexically_relative(fs::weakly_canonical(root));
        outputs.push_back({{"path", rel.generic_string()}, {"bytes", fs::file_size(p)}, {"sha256", sha256_file(p)}});
    }
    json stages = json::array();
    for (const auto& [name, s] : stages_) stages.push_back({{"stage", name}, {"wall_seconds", s}});
    json j{{"tool", "vpetabc"},
           {"version", library_version()},
           {"command", command_},
           {"config_sha256", config_sha256_},
           {"seed", seed_},
           {"versions",
            {{"vpetabc", library_version()},
             {"compiler", __VERSION__},
             {"cxx_standard", __cplusplus},
             {"json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." + std::to_string(NLOHMANN_JSON_VERSION_MINOR) +
                          "." + std::to_string(NLOHMANN_JSON_VERSION_PATCH)}}},
           {"stages", stages},
           {"outputs", outputs}};
    const fs::path path = root / "manifest.json";
    write_json(path, j);
    return path;
}

} // namespace vpetabc

#pragma once

#include <chrono>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "vpetabc/abc.hpp"
#include "vpetabc/kinetics.hpp"
#include "vpetabc/volume.hpp"

namespace vpetabc {

namespace fs = std::filesystem;

/// TAC dataset: JSON header plus a little-endian float32 payload holding
/// X·Y·Z·L values, the L frames of each voxel contiguous, voxels x-fastest.
/// The optional mask is X·Y·Z uint8 bytes; the input descriptor is JSON.
struct Dataset {
    VolumeGeometry geometry;
    FrameSchedule schedule;
    std::vector<float> tacs;
    nlohmann::json input;     // input descriptor; null when absent
    std::string units = "kBq/mL";

    std::size_t frames() const { return schedule.size(); }
    /// In-mask TACs in masked_indices() order, as doubles.
    Observations observations() const;
};

/// Writes <header>, <stem>.f32, <stem>.mask.u8 (if masked) and
/// <stem>.input.json (if an input is present) next to it.
std::vector<fs::path> write_dataset(const fs::path& header, const Dataset& ds);
Dataset read_dataset(const fs::path& header);

/// ParametricMap: <path>.f32 payload plus <path>.json sidecar.
std::vector<fs::path> write_map(const fs::path& stem, const ParametricMap& map, const std::string& mask_path = "");
ParametricMap read_map(const fs::path& stem_or_sidecar);

/// Accepted posterior export. Record layout (little-endian, packed):
///   u64 voxel, u64 pool_row, f64 distance, f64 model, f64 params[P]
/// with sidecar JSON {J, n, P, columns, models}.
std::vector<fs::path> write_posterior(const fs::path& stem, const AcceptedPosterior& post,
                                      const AcceptedSamples& samples, const PriorSpec& spec);

struct PosteriorFile {
    AcceptedPosterior post;
    AcceptedSamples samples;
    nlohmann::json sidecar;
};

PosteriorFile read_posterior(const fs::path& stem);

std::vector<std::uint8_t> read_bytes(const fs::path& path);
void write_bytes(const fs::path& path, const void* data, std::size_t size);
void write_text(const fs::path& path, const std::string& text);
nlohmann::json read_json(const fs::path& path);
/// Pretty-printed with a trailing newline.
void write_json(const fs::path& path, const nlohmann::json& j);

/// Shortest round-trip decimal form; "nan"/"inf"/"-inf" for non-finite values.
std::string format_double(double v);

/// Lowercase hex SHA-256.
std::string sha256_hex(const void* data, std::size_t size);
std::string sha256_file(const fs::path& path);

/// Run manifest: config hash, seed, versions, per-stage wall time, and every
/// output file with its content hash.
class Manifest {
public:
    Manifest(std::string command, std::string config_sha256, std::uint64_t seed);

    /// RAII timer recording one stage.
    class Stage {
    public:
        Stage(Manifest& m, std::string name);
        ~Stage();
        Stage(const Stage&) = delete;
        Stage& operator=(const Stage&) = delete;

    private:
        Manifest& m_;
        std::string name_;
        std::chrono::steady_clock::time_point start_;
    };

    void add_output(const fs::path& path);
    void add_outputs(const std::vector<fs::path>& paths);
    void record_stage(const std::string& name, double seconds);
    /// Hashes every output (relative to `root`) and writes manifest.json there.
    fs::path write(const fs::path& root) const;

private:
    std::string command_;
    std::string config_sha256_;
    std::uint64_t seed_;
    std::vector<std::pair<std::string, double>> stages_;
    std::vector<fs::path> outputs_;
};

const char* library_version();

} // namespace vpetabc

#pragma once

// Tab-separated dataset manifest. One row per triple:
//   hr_path  lr_clean_path  lr_compressed_path  scale  qf  codec_id
// Paths are relative to the directory holding the manifest. A first line
// starting with "hr_path" is treated as a header.

#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cisr/codec.hpp"
#include "cisr/image_io.hpp"

namespace cisr {

class ManifestError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ManifestRow {
    std::string hr_path;
    std::string lr_clean_path;
    std::string lr_compressed_path;
    int scale = 0;
    int qf = 0;
    std::string codec_id;

    std::string image_id() const { return std::filesystem::path(hr_path).stem().string(); }
};

struct Manifest {
    std::filesystem::path base_dir;
    std::vector<ManifestRow> rows;

    std::filesystem::path resolve(const std::string& rel) const { return base_dir / rel; }
};

inline const char* kManifestHeader = "hr_path\tlr_clean_path\tlr_compressed_path\tscale\tqf\tcodec_id";

namespace detail {

inline std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream ss(line);
    while (std::getline(ss, field, '\t')) out.push_back(field);
    if (!line.empty() && line.back() == '\t') out.emplace_back();
    return out;
}

inline int parse_field_int(const std::string& v, const std::string& what, int line) {
    try {
        std::size_t used = 0;
        const int out = std::stoi(v, &used);
        if (used == v.size()) return out;
    } catch (const std::exception&) {
    }
    throw ManifestError("manifest line " + std::to_string(line) + ": " + what + " '" + v + "' is not an integer");
}

}  // namespace detail

inline Manifest parse_manifest(std::istream& in, const std::filesystem::path& base_dir) {
    Manifest m;
    m.base_dir = base_dir;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        if (lineno == 1 && line.rfind("hr_path", 0) == 0) continue;
        const auto f = detail::split_tabs(line);
        if (f.size() != 6)
            throw ManifestError("manifest line " + std::to_string(lineno) + ": expected 6 tab-separated fields, got " +
                                std::to_string(f.size()));
        ManifestRow r{f[0], f[1], f[2], detail::parse_field_int(f[3], "scale", lineno),
                      detail::parse_field_int(f[4], "qf", lineno), f[5]};
        if (r.hr_path.empty() || r.lr_clean_path.empty() || r.lr_compressed_path.empty())
            throw ManifestError("manifest line " + std::to_string(lineno) + ": empty path");
        if (r.scale < 2 || r.scale > 4)
            throw ManifestError("manifest line " + std::to_string(lineno) + ": scale must be 2, 3 or 4");
        if (r.qf < 1 || r.qf > 100)
            throw ManifestError("manifest line " + std::to_string(lineno) + ": qf must be in [1, 100]");
        m.rows.push_back(std::move(r));
    }
    return m;
}

inline Manifest read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ManifestError("cannot open manifest " + path.string());
    return parse_manifest(in, path.parent_path());
}

inline void write_manifest(std::ostream& os, const std::vector<ManifestRow>& rows) {
    os << kManifestHeader << '\n';
    for (const auto& r : rows)
        os << r.hr_path << '\t' << r.lr_clean_path << '\t' << r.lr_compressed_path << '\t' << r.scale << '\t' << r.qf
           << '\t' << r.codec_id << '\n';
}

inline void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRow>& rows) {
    std::ofstream out(path);
    if (!out) throw ManifestError("cannot write manifest " + path.string());
    write_manifest(out, rows);
}

/// Loads every triple and checks the shape contract between x, y and z.
inline std::vector<TrainingTriple<float>> load_triples(const Manifest& m) {
    std::vector<TrainingTriple<float>> out;
    for (const auto& r : m.rows) {
        TrainingTriple<float> t;
        t.x = read_image(m.resolve(r.hr_path));
        t.y = read_image(m.resolve(r.lr_clean_path));
        t.z = read_image(m.resolve(r.lr_compressed_path));
        t.scale = r.scale;
        t.qf = r.qf;
        t.codec_id = r.codec_id;
        if (t.y.shape() != t.z.shape())
            throw ManifestError(r.lr_compressed_path + ": clean and compressed LR images differ in size");
        if (t.x.h() != t.y.h() * r.scale || t.x.w() != t.y.w() * r.scale)
            throw ManifestError(r.hr_path + ": HR image is not " + std::to_string(r.scale) + "x the LR image");
        out.push_back(std::move(t));
    }
    return out;
}

}  // namespace cisr

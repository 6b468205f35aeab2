#pragma once

// Batch operations behind the command-line tool: dataset generation,
// inference and evaluation.

#include <algorithm>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "cisr/codec.hpp"
#include "cisr/image_io.hpp"
#include "cisr/manifest.hpp"
#include "cisr/metrics.hpp"
#include "cisr/unfold.hpp"

namespace cisr {

namespace fs = std::filesystem;

inline bool is_known_codec(const std::string& id) { return id == "jpegsim" || id == "jpeg" || id == "webp"; }

/// Image files directly inside `dir`, sorted by name.
inline std::vector<fs::path> list_images(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && is_image_file(e.path())) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

/// Writes HR / clean LR / compressed LR PNGs for every image and quality
/// factor, plus `manifest.tsv`, under `out_dir`. Rows are ordered by image
/// name, then by the order of `qfs`. Every codec id is simulated by the
/// block-DCT codec; the id is recorded as metadata.
inline std::vector<ManifestRow> degrade_directory(const fs::path& in_dir, const fs::path& out_dir, int scale,
                                                  const std::vector<int>& qfs, const std::string& codec_id) {
    if (scale < 2 || scale > 4) throw std::invalid_argument("scale must be 2, 3 or 4");
    if (qfs.empty()) throw std::invalid_argument("no quality factors given");
    if (!is_known_codec(codec_id)) throw std::invalid_argument("unknown codec '" + codec_id + "'");
    for (int qf : qfs) build_quant_table(qf);
    const auto images = list_images(in_dir);
    if (images.empty()) throw IoError("no PNG/PPM images in " + in_dir.string());

    fs::create_directories(out_dir / "hr");
    fs::create_directories(out_dir / "lr_clean");
    std::vector<ManifestRow> rows;
    for (const auto& path : images) {
        const Image hr = read_image(path);
        const std::string stem = path.stem().string() + ".png";
        const std::string hr_rel = "hr/" + stem, clean_rel = "lr_clean/" + stem;
        bool first = true;
        for (int qf : qfs) {
            const TrainingTriple<float> t = make_triple(hr, scale, qf, codec_id);
            if (first) {
                write_image(out_dir / hr_rel, t.x);
                write_image(out_dir / clean_rel, t.y);
                first = false;
            }
            const std::string dir = "lr_" + codec_id + "_q" + std::to_string(qf);
            fs::create_directories(out_dir / dir);
            write_image(out_dir / dir / stem, t.z);
            rows.push_back({hr_rel, clean_rel, dir + "/" + stem, scale, qf, codec_id});
        }
    }
    write_manifest(out_dir / "manifest.tsv", rows);
    return rows;
}

/// Final estimate x_J, clamped to [0, 1].
inline Image super_resolve(const Model<float>& model, const Image& z) {
    NoGradGuard ng;
    return clamp01(forward(z, model).final());
}

inline MetricRow score(const ManifestRow& row, const Image& prediction, const Image& truth, bool with_psnr,
                       bool with_ssim) {
    MetricRow r{row.image_id(), row.scale, row.qf, row.codec_id, 0.0, 0.0};
    if (with_psnr) r.psnr_db = psnr(prediction, truth);
    if (with_ssim) r.ssim = ssim(prediction, truth);
    return r;
}

inline MetricReport evaluate(const Model<float>& model, const Manifest& manifest, bool with_psnr = true,
                             bool with_ssim = true) {
    MetricReport report;
    report.with_psnr = with_psnr;
    report.with_ssim = with_ssim;
    for (const auto& row : manifest.rows) {
        if (row.scale != model.cfg.scale)
            throw ManifestError("manifest row for " + row.hr_path + " has scale " + std::to_string(row.scale) +
                                ", the model was built for " + std::to_string(model.cfg.scale));
        const Image x = read_image(manifest.resolve(row.hr_path));
        const Image z = read_image(manifest.resolve(row.lr_compressed_path));
        report.rows.push_back(score(row, super_resolve(model, z), x, with_psnr, with_ssim));
    }
    return report;
}

}  // namespace cisr

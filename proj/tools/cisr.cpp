// Command-line front end: dataset generation, training, inference,
// evaluation and a built-in self test.
//
// Failures print one line on stderr, `error<TAB><kind><TAB><message>`, and
// exit with the code for that kind.

#include <CLI11.hpp>

#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "cisr/checkpoint.hpp"
#include "cisr/cisr.hpp"
#include "cisr/pipeline.hpp"
#include "cisr/testing/suite.hpp"
#include "cisr/train.hpp"

namespace fs = std::filesystem;
using namespace cisr;

namespace {

enum Exit : int {
    kOk = 0,
    kInternal = 1,
    kUsage = 2,
    kIo = 3,
    kManifest = 4,
    kCheckpoint = 5,
    kConfig = 6,
    kInvalid = 7,
    kSelftest = 8,
};

struct Failure {
    Exit code;
    std::string kind;
    std::string message;
};

int report(const Failure& f) {
    std::string msg = f.message;
    for (char& c : msg)
        if (c == '\n' || c == '\t' || c == '\r') c = ' ';
    std::cerr << "error\t" << f.kind << '\t' << msg << std::endl;
    return f.code;
}

std::vector<int> parse_qf_list(const std::string& list) {
    std::vector<int> out;
    std::stringstream ss(list);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stoi(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw std::invalid_argument("bad quality factor '" + item + "' in --qf");
        }
    }
    if (out.empty()) throw std::invalid_argument("--qf needs at least one value");
    return out;
}

ModelConfig read_config_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

void ensure_parent(const fs::path& file) {
    if (file.has_parent_path()) fs::create_directories(file.parent_path());
}

std::vector<TrainingTriple<float>> load_set(const std::string& path) {
    return load_triples(read_manifest(path));
}

Image normalized(const Tensor<float>& t) {
    float hi = 0.0f;
    for (float v : t.data()) hi = std::max(hi, std::abs(v));
    Image out(t.shape());
    for (std::size_t i = 0; i < t.numel(); ++i) out.data()[i] = hi > 0 ? std::abs(t.data()[i]) / hi : 0.0f;
    return out;
}

void dump_debug(const fs::path& dir, const std::vector<IterationDebug<float>>& dbg) {
    fs::create_directories(dir);
    for (std::size_t j = 0; j < dbg.size(); ++j)
        for (const auto& [name, m] : {std::pair{"arm", &dbg[j].arm}, std::pair{"rem", &dbg[j].rem}}) {
            const std::string p = "iter" + std::to_string(j + 1) + "_" + name + "_";
            write_image(dir / (p + "aux.png"), clamp01(m->g));
            if (m->blocking.numel()) write_image(dir / (p + "blocking.png"), m->blocking);
            if (m->h.numel()) write_image(dir / (p + "h.png"), normalized(m->h));
            if (m->u.numel()) write_image(dir / (p + "nonlocal.png"), clamp01(m->u));
            if (m->skip.numel()) write_image(dir / (p + "skip.png"), clamp01(m->skip));
            for (int k = 0; k < m->weights.c(); ++k)
                write_image(dir / (p + "t" + std::to_string(k + 1) + ".png"), select_channels(m->weights, {k}));
        }
}

int run_selftest() {
    const fs::path scratch = fs::temp_directory_path() / ("cisr_selftest_" + std::to_string(::getpid()));
    bool all = true;
    for (const auto& check : testing::fast_checks(scratch)) {
        const testing::CheckResult r = testing::timed(check.run);
        all = all && r.pass;
        std::printf("%s %-20s %6.1fs  %s\n", r.pass ? "PASS" : "FAIL", check.name.c_str(), r.seconds, r.detail.c_str());
    }
    std::error_code ec;
    fs::remove_all(scratch, ec);
    return all ? kOk : kSelftest;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Super-resolution of compressed images"};
    app.require_subcommand(1);

    auto* degrade = app.add_subcommand("degrade", "Make HR / clean LR / compressed LR triples and a manifest");
    std::string in_dir, out_dir, qf_list, codec = "jpegsim";
    int scale = 2;
    std::uint64_t seed = 0;
    degrade->add_option("--input", in_dir, "Directory of HR images")->required();
    degrade->add_option("--out", out_dir, "Output directory")->required();
    degrade->add_option("--scale", scale, "Down-sampling factor")->required()->check(CLI::IsMember({2, 3, 4}));
    degrade->add_option("--qf", qf_list, "Comma-separated quality factors")->required();
    degrade->add_option("--codec", codec, "Codec id: jpegsim, or jpeg / webp (simulated)");
    degrade->add_option("--seed", seed, "Seed (the pipeline is deterministic)");

    auto* train_cmd = app.add_subcommand("train", "Train a model");
    std::string config_path, train_manifest, val_manifest, out_ckpt, resume;
    train_cmd->add_option("--config", config_path, "Model config file")->required();
    train_cmd->add_option("--train-manifest", train_manifest, "Training manifest")->required();
    train_cmd->add_option("--val-manifest", val_manifest, "Validation manifest")->required();
    train_cmd->add_option("--out", out_ckpt, "Output checkpoint")->required();
    train_cmd->add_option("--resume", resume, "Checkpoint to start from");

    auto* sr = app.add_subcommand("sr", "Super-resolve one compressed LR image");
    std::string ckpt, input, output, dump_iterates, dump_debug_dir;
    sr->add_option("--ckpt", ckpt, "Checkpoint")->required();
    sr->add_option("--input", input, "Compressed LR image")->required();
    sr->add_option("--out", output, "Output HR image")->required();
    sr->add_option("--dump-iterates", dump_iterates, "Write every HR iterate x_hat_0..x_hat_J here");
    sr->add_option("--dump-debug", dump_debug_dir, "Write per-iteration internal maps here");

    auto* eval = app.add_subcommand("eval", "Score a model on a manifest");
    std::string eval_ckpt, eval_manifest, report_path, metrics = "psnr,ssim";
    eval->add_option("--ckpt", eval_ckpt, "Checkpoint")->required();
    eval->add_option("--manifest", eval_manifest, "Manifest")->required();
    eval->add_option("--report", report_path, "Output TSV report")->required();
    eval->add_option("--metrics", metrics, "Comma-separated subset of psnr,ssim");

    app.add_subcommand("selftest", "Run the oracle and gradient checks");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return report({kUsage, "usage", e.what()});
    }

    try {
        if (*degrade) {
            const auto rows = degrade_directory(in_dir, out_dir, scale, parse_qf_list(qf_list), codec);
            std::cout << "wrote " << rows.size() << " triples to " << (fs::path(out_dir) / "manifest.tsv").string() << '\n';
        } else if (*train_cmd) {
            const ModelConfig cfg = read_config_file(config_path);
            const auto train_set = load_set(train_manifest);
            const auto val_set = load_set(val_manifest);
            TrainOptions opts;
            ensure_parent(out_ckpt);
            std::ofstream log(out_ckpt + ".log");
            if (!log) throw IoError("cannot write training log " + out_ckpt + ".log");
            opts.log = &log;
            opts.log_every = 10;
            if (!resume.empty()) opts.resume = load_checkpoint(resume, cfg);
            const TrainResult r = train(train_set, val_set, cfg, std::move(opts));
            save_checkpoint(r.model, out_ckpt);
            std::cout << "trained " << r.steps << " steps";
            if (!r.val_history.empty())
                std::cout << ", best validation PSNR " << r.val_history[r.best_epoch - 1] << " dB at epoch " << r.best_epoch;
            std::cout << (r.stopped_early ? " (early stop)" : "") << '\n';
        } else if (*sr) {
            const Model<float> model = load_checkpoint(ckpt);
            const Image z = read_image(input);
            NoGradGuard ng;
            std::vector<IterationDebug<float>> dbg;
            const bool want_debug = !dump_debug_dir.empty();
            if (want_debug && model.cfg.topology != Topology::parallel_series)
                throw std::invalid_argument("--dump-debug needs the parallel_series topology");
            const UnfoldTrace<float> trace = want_debug ? unfold_infer(z, model, &dbg) : forward(z, model);
            ensure_parent(output);
            write_image(output, clamp01(trace.final()));
            if (!dump_iterates.empty()) {
                fs::create_directories(dump_iterates);
                for (std::size_t j = 0; j < trace.x_hats.size(); ++j)
                    write_image(fs::path(dump_iterates) / ("x_hat_" + std::to_string(j) + ".png"),
                                clamp01(trace.x_hats[j]));
            }
            if (want_debug) dump_debug(dump_debug_dir, dbg);
        } else if (*eval) {
            bool with_psnr = false, with_ssim = false;
            std::stringstream ss(metrics);
            std::string m;
            while (std::getline(ss, m, ',')) {
                if (m == "psnr") with_psnr = true;
                else if (m == "ssim") with_ssim = true;
                else throw std::invalid_argument("unknown metric '" + m + "'");
            }
            const Model<float> model = load_checkpoint(eval_ckpt);
            const MetricReport rep = evaluate(model, read_manifest(eval_manifest), with_psnr, with_ssim);
            ensure_parent(report_path);
            std::ofstream out(report_path);
            if (!out) throw IoError("cannot write report " + report_path);
            rep.write_tsv(out);
        } else {
            return run_selftest();
        }
    } catch (const CheckpointError& e) {
        return report({kCheckpoint, "checkpoint", e.what()});
    } catch (const ConfigError& e) {
        return report({kConfig, "config", e.what()});
    } catch (const ManifestError& e) {
        return report({kManifest, "manifest", e.what()});
    } catch (const IoError& e) {
        return report({kIo, "io", e.what()});
    } catch (const fs::filesystem_error& e) {
        return report({kIo, "io", e.what()});
    } catch (const std::invalid_argument& e) {
        return report({kInvalid, "invalid", e.what()});
    } catch (const std::exception& e) {
        return report({kInternal, "internal", e.what()});
    }
    return kOk;
}

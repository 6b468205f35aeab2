#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cisr/checkpoint.hpp"
#include "cisr/image_io.hpp"
#include "cisr/pipeline.hpp"
#include "cisr/testing/oracles.hpp"

using namespace cisr;
using cisr::testing::synthetic_image;
namespace fs = std::filesystem;

namespace {

struct CliRun {
    int code = -1;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::string> lines_of(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream in(s);
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
}

// One working tree per test binary: three HR images, their degraded set and a
// toy checkpoint, built once and shared by the tests below.
class Cli : public ::testing::Test {
protected:
    static fs::path root;

    static void SetUpTestSuite() {
        root = fs::temp_directory_path() / ("cisr_cli_" + std::to_string(::getpid()));
        fs::remove_all(root);
        fs::create_directories(root / "hr_in");
        for (int i = 0; i < 3; ++i)
            write_image(root / "hr_in" / ("img" + std::to_string(i) + ".png"), synthetic_image<float>(64, 72, 40 + i));
        std::ofstream(root / "toy.cfg") << "preset = toy\nscale = 2\niterations = 3\nmax_steps = 2\npatch_size = 16\n"
                                           "steps_per_epoch = 1\n";
    }
    static void TearDownTestSuite() { fs::remove_all(root); }

    static CliRun cisr(const std::string& args) {
        const fs::path out = root / "stdout.txt", err = root / "stderr.txt";
        const std::string cmd =
            std::string(CISR_CLI_PATH) + " " + args + " >" + out.string() + " 2>" + err.string();
        const int status = std::system(cmd.c_str());
        return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
    }

    static std::string p(const fs::path& rel) { return (root / rel).string(); }

    static void ensure_degraded() {
        if (fs::exists(root / "set" / "manifest.tsv")) return;
        ASSERT_EQ(cisr("degrade --input " + p("hr_in") + " --out " + p("set") + " --scale 2 --qf 10,20").code, 0);
    }
    static void ensure_trained() {
        ensure_degraded();
        if (fs::exists(root / "toy.ckpt")) return;
        const auto r = cisr("train --config " + p("toy.cfg") + " --train-manifest " + p("set/manifest.tsv") +
                            " --val-manifest " + p("set/manifest.tsv") + " --out " + p("toy.ckpt"));
        ASSERT_EQ(r.code, 0) << r.err;
    }
};

fs::path Cli::root;

}  // namespace

TEST_F(Cli, DegradeWritesOneRowPerImageAndQuality) {
    ensure_degraded();
    const auto rows = lines_of(slurp(root / "set" / "manifest.tsv"));
    ASSERT_EQ(rows.size(), 7u);
    EXPECT_EQ(rows[0], kManifestHeader);
    EXPECT_EQ(rows[1], "hr/img0.png\tlr_clean/img0.png\tlr_jpegsim_q10/img0.png\t2\t10\tjpegsim");
    EXPECT_EQ(rows[2], "hr/img0.png\tlr_clean/img0.png\tlr_jpegsim_q20/img0.png\t2\t20\tjpegsim");
    const auto m = read_manifest(root / "set" / "manifest.tsv");
    const auto triples = load_triples(m);
    ASSERT_EQ(triples.size(), 6u);
    EXPECT_EQ(triples[0].x.shape(), (Shape{1, 3, 64, 72}));
    EXPECT_EQ(triples[0].z.shape(), (Shape{1, 3, 32, 36}));
}

// The codec's decoded values are continuous; the PNG stores them rounded to
// the nearest 8-bit level.
TEST_F(Cli, DegradedFilesMatchTheLibrary) {
    ensure_degraded();
    const auto hr = read_image(root / "hr_in" / "img1.png");
    const auto t = make_triple(hr, 2, 20);
    EXPECT_EQ(read_image(root / "set" / "hr" / "img1.png").data(), t.x.data());
    for (const auto& [rel, want] : {std::pair{"lr_jpegsim_q20/img1.png", &t.z}, std::pair{"lr_clean/img1.png", &t.y}}) {
        const auto got = read_image(root / "set" / rel);
        ASSERT_EQ(got.shape(), want->shape());
        for (std::size_t i = 0; i < got.numel(); ++i)
            ASSERT_NEAR(got.data()[i], want->data()[i], 0.5 / 255.0 + 1e-6) << rel;
    }
}

TEST_F(Cli, DegradeIsRepeatable) {
    ensure_degraded();
    ASSERT_EQ(cisr("degrade --input " + p("hr_in") + " --out " + p("again") + " --scale 2 --qf 10,20").code, 0);
    for (const auto& e : fs::recursive_directory_iterator(root / "set"))
        if (e.is_regular_file()) {
            EXPECT_EQ(slurp(e.path()), slurp(root / "again" / fs::relative(e.path(), root / "set"))) << e.path();
        }
}

TEST_F(Cli, TrainWritesACheckpointAndALog) {
    ensure_trained();
    const auto model = load_checkpoint(root / "toy.ckpt");
    EXPECT_EQ(model.cfg.iterations, 3);
    EXPECT_EQ(model.cfg.max_steps, 2);
    const auto log = lines_of(slurp(root / "toy.ckpt.log"));
    ASSERT_GE(log.size(), 2u);
    EXPECT_EQ(log[0], "step\tloss\tpsnr_per_iteration\twall_s");
}

TEST_F(Cli, SuperResolveDumpsEveryIterate) {
    ensure_trained();
    const auto r = cisr("sr --ckpt " + p("toy.ckpt") + " --input " + p("set/lr_jpegsim_q10/img2.png") + " --out " +
                        p("sr/out.png") + " --dump-iterates " + p("sr/iters"));
    ASSERT_EQ(r.code, 0) << r.err;
    for (int j = 0; j <= 3; ++j) EXPECT_TRUE(fs::exists(root / "sr" / "iters" / ("x_hat_" + std::to_string(j) + ".png")));
    EXPECT_FALSE(fs::exists(root / "sr" / "iters" / "x_hat_4.png"));
    const auto z = read_image(root / "set" / "lr_jpegsim_q10" / "img2.png");
    EXPECT_EQ(read_image(root / "sr" / "out.png").shape(), (Shape{1, 3, 64, 72}));
    EXPECT_EQ(slurp(root / "sr" / "out.png"), slurp(root / "sr" / "iters" / "x_hat_3.png"));
    const fs::path bicubic = root / "sr" / "bicubic.png";
    write_image(bicubic, clamp01(bicubic_up(z, 2)));
    EXPECT_EQ(read_image(root / "sr" / "iters" / "x_hat_0.png").data(), read_image(bicubic).data());
}

TEST_F(Cli, SuperResolveDumpsInternalMaps) {
    ensure_trained();
    const auto r = cisr("sr --ckpt " + p("toy.ckpt") + " --input " + p("set/lr_jpegsim_q10/img0.png") + " --out " +
                        p("dbg/out.png") + " --dump-debug " + p("dbg/maps"));
    ASSERT_EQ(r.code, 0) << r.err;
    for (const char* f : {"iter1_arm_blocking.png", "iter3_rem_h.png", "iter2_rem_nonlocal.png", "iter1_arm_t3.png"})
        EXPECT_TRUE(fs::exists(root / "dbg" / "maps" / f)) << f;
}

TEST_F(Cli, EvalReportsEveryRowAndAMean) {
    ensure_trained();
    const auto r = cisr("eval --ckpt " + p("toy.ckpt") + " --manifest " + p("set/manifest.tsv") + " --report " +
                        p("report.tsv"));
    ASSERT_EQ(r.code, 0) << r.err;
    const auto rows = lines_of(slurp(root / "report.tsv"));
    ASSERT_EQ(rows.size(), 8u);
    EXPECT_EQ(rows[0], "image_id\tscale\tqf\tcodec_id\tpsnr_db\tssim");
    EXPECT_EQ(rows[1].substr(0, 18), "img0\t2\t10\tjpegsim\t");
    EXPECT_EQ(rows[7].substr(0, 11), "mean\t-\t-\t-\t");
    const auto psnr_only = cisr("eval --ckpt " + p("toy.ckpt") + " --manifest " + p("set/manifest.tsv") +
                                " --report " + p("psnr.tsv") + " --metrics psnr");
    ASSERT_EQ(psnr_only.code, 0);
    for (const auto& row : lines_of(slurp(root / "psnr.tsv")))
        if (row.rfind("image_id", 0) != 0) {
            EXPECT_EQ(row.substr(row.size() - 2), "\t-") << row;
        }
}

TEST_F(Cli, EvalIsRepeatable) {
    ensure_trained();
    const std::string args = "eval --ckpt " + p("toy.ckpt") + " --manifest " + p("set/manifest.tsv") + " --report ";
    ASSERT_EQ(cisr(args + p("r1.tsv")).code, 0);
    ASSERT_EQ(cisr(args + p("r2.tsv")).code, 0);
    EXPECT_EQ(slurp(root / "r1.tsv"), slurp(root / "r2.tsv"));
}

TEST(Score, PerfectPredictionScoresTheCeiling) {
    const auto x = synthetic_image<float>(24, 24, 3);
    const ManifestRow row{"hr/a.png", "lr/a.png", "z/a.png", 2, 10, "jpegsim"};
    const MetricRow r = score(row, x, x, true, true);
    EXPECT_EQ(r.image_id, "a");
    EXPECT_EQ(r.psnr_db, 99.0);
    EXPECT_NEAR(r.ssim, 1.0, 1e-12);
}

TEST_F(Cli, UsageErrors) {
    EXPECT_EQ(cisr("").code, 2);
    EXPECT_EQ(cisr("frobnicate").code, 2);
    EXPECT_EQ(cisr("degrade --input a --out b --scale 2 --qf 10 --bogus").code, 2);
    EXPECT_EQ(cisr("degrade --input a --out b --scale 5 --qf 10").code, 2);
    EXPECT_EQ(cisr("sr --ckpt a --input b").code, 2);
    EXPECT_EQ(cisr("--help").code, 0);
}

TEST_F(Cli, EachFailureKindHasItsOwnExitCode) {
    ensure_trained();
    const std::string manifest = p("set/manifest.tsv");
    auto check = [&](const std::string& args, int code, const std::string& kind) {
        const auto r = cisr(args);
        EXPECT_EQ(r.code, code) << args << "\n" << r.err;
        EXPECT_EQ(r.err.rfind("error\t" + kind + "\t", 0), 0u) << r.err;
        EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1) << r.err;
    };
    check("degrade --input " + p("missing") + " --out " + p("x") + " --scale 2 --qf 10", 3, "io");
    check("sr --ckpt " + p("toy.ckpt") + " --input " + p("missing.png") + " --out " + p("o.png"), 3, "io");
    check("eval --ckpt " + p("toy.ckpt") + " --manifest " + p("missing.tsv") + " --report " + p("r.tsv"), 4, "manifest");
    check("sr --ckpt " + p("missing.ckpt") + " --input " + p("set/lr_clean/img0.png") + " --out " + p("o.png"), 5,
          "checkpoint");
    std::ofstream(root / "bad.cfg") << "preset = toy\nwidth = 3\n";
    check("train --config " + p("bad.cfg") + " --train-manifest " + manifest + " --val-manifest " + manifest +
              " --out " + p("bad.ckpt"),
          6, "config");
    check("degrade --input " + p("hr_in") + " --out " + p("x") + " --scale 2 --qf ten", 7, "invalid");
    check("degrade --input " + p("hr_in") + " --out " + p("x") + " --scale 2 --qf 10 --codec png", 7, "invalid");
    check("eval --ckpt " + p("toy.ckpt") + " --manifest " + manifest + " --report " + p("r.tsv") + " --metrics lpips",
          7, "invalid");
    std::ofstream(root / "s3.cfg") << "preset = toy\nscale = 3\n";
    check("train --config " + p("s3.cfg") + " --train-manifest " + manifest + " --val-manifest " + manifest +
              " --out " + p("s3.ckpt") + " --resume " + p("toy.ckpt"),
          5, "checkpoint");
}

TEST_F(Cli, SelftestPassesEveryCheck) {
    const auto r = cisr("selftest");
    EXPECT_EQ(r.code, 0) << r.out;
    const auto rows = lines_of(r.out);
    EXPECT_EQ(rows.size(), 7u);
    for (const auto& row : rows) EXPECT_EQ(row.rfind("PASS ", 0), 0u) << row;
}

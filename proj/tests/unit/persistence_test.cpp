#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "cisr/checkpoint.hpp"
#include "cisr/image_io.hpp"
#include "cisr/manifest.hpp"
#include "cisr/testing/oracles.hpp"

using namespace cisr;
using cisr::testing::random_tensor;
using cisr::testing::synthetic_image;
namespace fs = std::filesystem;

namespace {

ModelConfig small_config(int s = 2) {
    ModelConfig c = ModelConfig::toy(s);
    for (ModuleSpec* m : {&c.arm, &c.rem}) m->backbone = BackboneConfig{1, 1, 8, 4};
    return c;
}

Model<float> trained_looking_model(int s = 2) {
    auto m = Model<float>::init(small_config(s));
    std::uint64_t seed = 0;
    for (auto* set : m.sets())
        for (auto& e : set->entries()) {
            const auto noise = random_tensor<float>(e.tensor.shape(), seed++, -0.1f, 0.1f);
            for (std::size_t i = 0; i < e.tensor.numel(); ++i) e.tensor.data()[i] += noise.data()[i];
        }
    return m;
}

void reseal(std::vector<std::uint8_t>& bytes) {
    const std::size_t body = bytes.size() - 8;
    const std::uint64_t sum = fnv1a64(bytes.data(), body);
    for (int i = 0; i < 8; ++i) bytes[body + i] = static_cast<std::uint8_t>(sum >> (8 * i));
}

void put_u32(std::vector<std::uint8_t>& bytes, std::size_t at, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes[at + i] = static_cast<std::uint8_t>(v >> (8 * i));
}

// Offset of the first dimension of the named tensor's shape record.
std::size_t dims_offset(const std::vector<std::uint8_t>& bytes, const std::string& name) {
    const std::string needle = name;
    auto it = std::search(bytes.begin(), bytes.end(), needle.begin(), needle.end());
    EXPECT_NE(it, bytes.end());
    return static_cast<std::size_t>(it - bytes.begin()) + needle.size() + 4;
}

CheckpointError::Code decode_error(const std::vector<std::uint8_t>& bytes) {
    try {
        decode_checkpoint(bytes);
    } catch (const CheckpointError& e) {
        return e.code();
    }
    ADD_FAILURE() << "decode succeeded";
    return CheckpointError::Code::io;
}

class TempDir {
public:
    TempDir() {
        path_ = fs::temp_directory_path() /
                ("cisr_persist_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "_" +
                 ::testing::UnitTest::GetInstance()->current_test_info()->name());
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() { fs::remove_all(path_); }
    const fs::path& path() const { return path_; }

private:
    fs::path path_;
};

using Code = CheckpointError::Code;

}  // namespace

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
    TempDir dir;
    const auto m = trained_looking_model();
    save_checkpoint(m, dir.path() / "a.ckpt");
    const auto loaded = load_checkpoint(dir.path() / "a.ckpt");
    save_checkpoint(loaded, dir.path() / "b.ckpt");
    EXPECT_EQ(encode_checkpoint(m), encode_checkpoint(loaded));
    std::ifstream a(dir.path() / "a.ckpt", std::ios::binary), b(dir.path() / "b.ckpt", std::ios::binary);
    EXPECT_EQ(std::string(std::istreambuf_iterator<char>(a), {}), std::string(std::istreambuf_iterator<char>(b), {}));
}

TEST(Checkpoint, RestoredModelComputesTheSameOutput) {
    const auto m = trained_looking_model(3);
    const auto back = decode_checkpoint(encode_checkpoint(m));
    EXPECT_EQ(serialize_config(back.cfg), serialize_config(m.cfg));
    const auto z = random_tensor<float>(Shape{1, 3, 8, 8}, 99, 0, 1);
    EXPECT_EQ(unfold_infer(z, back).final().data(), unfold_infer(z, m).final().data());
}

TEST(Checkpoint, UnsharedModelsRoundTrip) {
    ModelConfig c = small_config();
    c.share_params = false;
    const auto m = Model<float>::init(c);
    const auto back = decode_checkpoint(encode_checkpoint(m));
    EXPECT_EQ(back.arm.size(), 2u);
    EXPECT_EQ(encode_checkpoint(back), encode_checkpoint(m));
}

TEST(Checkpoint, RejectsShortFiles) {
    const auto bytes = encode_checkpoint(trained_looking_model());
    EXPECT_EQ(decode_error({bytes.begin(), bytes.begin() + 10}), Code::truncated);
    EXPECT_EQ(decode_error({}), Code::truncated);
}

// Cutting the tail removes the real checksum, so a cut file fails the
// checksum before any record is read.
TEST(Checkpoint, RejectsCutFiles) {
    const auto bytes = encode_checkpoint(trained_looking_model());
    for (std::size_t keep : {bytes.size() / 2, bytes.size() - 1})
        EXPECT_EQ(decode_error({bytes.begin(), bytes.begin() + static_cast<long>(keep)}), Code::checksum) << keep;
}

TEST(Checkpoint, ResealedCutFileIsTruncated) {
    auto bytes = encode_checkpoint(trained_looking_model());
    bytes.erase(bytes.end() - 108, bytes.end() - 8);
    reseal(bytes);
    EXPECT_EQ(decode_error(bytes), Code::truncated);
}

TEST(Checkpoint, RejectsBadMagic) {
    auto bytes = encode_checkpoint(trained_looking_model());
    bytes[0] = 'X';
    EXPECT_EQ(decode_error(bytes), Code::bad_magic);
}

TEST(Checkpoint, RejectsOtherVersions) {
    auto bytes = encode_checkpoint(trained_looking_model());
    put_u32(bytes, 8, kCheckpointVersion + 1);
    EXPECT_EQ(decode_error(bytes), Code::unsupported_version);
}

TEST(Checkpoint, RejectsFlippedBits) {
    const auto clean = encode_checkpoint(trained_looking_model());
    for (std::size_t at : {std::size_t{20}, clean.size() / 2, clean.size() - 12, clean.size() - 1}) {
        auto bytes = clean;
        bytes[at] ^= 0x10;
        EXPECT_EQ(decode_error(bytes), Code::checksum) << at;
    }
}

TEST(Checkpoint, RejectsOverflowingDimensions) {
    const auto clean = encode_checkpoint(trained_looking_model());
    auto huge = clean;
    put_u32(huge, dims_offset(huge, "head.weight"), 0xFFFFFFFFu);
    reseal(huge);
    EXPECT_EQ(decode_error(huge), Code::dimension_overflow);
    auto large = clean;
    const std::size_t at = dims_offset(large, "head.weight");
    for (int i = 0; i < 4; ++i) put_u32(large, at + 4 * i, 60000);
    reseal(large);
    EXPECT_EQ(decode_error(large), Code::dimension_overflow);
}

TEST(Checkpoint, RejectsShapesThatDisagreeWithTheConfig) {
    auto bytes = encode_checkpoint(trained_looking_model());
    const std::size_t at = dims_offset(bytes, "head.weight");
    put_u32(bytes, at, 4);
    reseal(bytes);
    EXPECT_EQ(decode_error(bytes), Code::malformed);
}

TEST(Checkpoint, RejectsTrailingBytes) {
    auto bytes = encode_checkpoint(trained_looking_model());
    bytes.insert(bytes.end() - 8, {1, 2, 3, 4});
    reseal(bytes);
    EXPECT_EQ(decode_error(bytes), Code::malformed);
}

TEST(Checkpoint, MissingFileIsAnIoError) {
    try {
        load_checkpoint("/nonexistent/dir/model.ckpt");
        FAIL();
    } catch (const CheckpointError& e) {
        EXPECT_EQ(e.code(), Code::io);
    }
}

TEST(Checkpoint, RequestedArchitectureMustMatch) {
    TempDir dir;
    save_checkpoint(trained_looking_model(2), dir.path() / "m.ckpt");
    try {
        load_checkpoint(dir.path() / "m.ckpt", small_config(3));
        FAIL();
    } catch (const CheckpointError& e) {
        EXPECT_EQ(e.code(), Code::config_mismatch);
        EXPECT_NE(std::string(e.what()).find("scale"), std::string::npos) << e.what();
    }
    ModelConfig schedule_only = small_config(2);
    schedule_only.optimizer.lr = 0.5;
    schedule_only.max_steps = 7;
    EXPECT_NO_THROW(load_checkpoint(dir.path() / "m.ckpt", schedule_only));
}

TEST(Config, SerializeParseRoundTrip) {
    std::vector<ModelConfig> cs = {ModelConfig::tiny(2), ModelConfig::full(4), ModelConfig::toy(3), small_config()};
    ModelConfig odd = small_config(3);
    odd.set_iterations(3);
    odd.rho = {0.1, 0.2, 0.7};
    odd.gamma = 0.5;
    odd.rem.fixed_h = 0.25;
    odd.arm.disable_nonlocal = true;
    odd.arm.skip_mode = SkipMode::z_only;
    odd.rem.boundary = Boundary::periodic;
    odd.optimizer.lr = 3e-4;
    odd.seed = 1234567;
    cs.push_back(odd);
    for (const auto& c : cs) {
        const std::string text = serialize_config(c);
        const ModelConfig back = parse_config(text);
        EXPECT_EQ(serialize_config(back), text);
        EXPECT_FALSE(architecture_mismatch(back, c));
    }
}

TEST(Config, PresetsAndOverrides) {
    const auto c = parse_config("preset = toy\nscale = 3\n# comment\n\narm.tau = 0.5  # trailing\niterations = 4\n");
    EXPECT_EQ(c.scale, 3);
    EXPECT_EQ(c.arm.scale, 3);
    EXPECT_EQ(c.arm.backbone, ModelConfig::toy(3).arm.backbone);
    EXPECT_EQ(c.arm.blocking.tau, 0.5);
    EXPECT_EQ(c.rho, default_rho(4));
}

TEST(Config, ErrorsNameTheOffendingKey) {
    const std::vector<std::pair<std::string, std::string>> bad = {
        {"colour = red\n", "colour"},
        {"arm.colour = red\n", "arm.colour"},
        {"preset = huge\n", "preset"},
        {"scale = 5\n", "scale"},
        {"lr = fast\n", "lr"},
        {"share_params = maybe\n", "share_params"},
        {"topology = spiral\n", "topology"},
        {"seed = 1\nseed = 2\n", "seed"},
        {"iterations = 3\nrho = 0.5,1\n", "rho"},
        {"just words\n", "line 1"},
    };
    for (const auto& [text, key] : bad) {
        try {
            parse_config(text);
            ADD_FAILURE() << text;
        } catch (const ConfigError& e) {
            EXPECT_NE(std::string(e.what()).find(key), std::string::npos) << e.what();
        }
    }
}

TEST(Manifest, ParsesRowsAndSkipsTheHeader) {
    std::istringstream in(std::string(kManifestHeader) +
                          "\r\nhr/a.png\tlr/a.png\tlrc/a.png\t2\t10\tjpegsim\r\n# note\n\nhr/b.png\tlr/b.png\tlrc/b.png\t4\t"
                          "20\tjpegsim\n");
    const auto m = parse_manifest(in, "/data");
    ASSERT_EQ(m.rows.size(), 2u);
    EXPECT_EQ(m.rows[0].image_id(), "a");
    EXPECT_EQ(m.rows[1].scale, 4);
    EXPECT_EQ(m.rows[1].qf, 20);
    EXPECT_EQ(m.resolve(m.rows[0].hr_path), fs::path("/data/hr/a.png"));
}

TEST(Manifest, WriteThenParseIsLossless) {
    const std::vector<ManifestRow> rows = {{"x/1.png", "y/1.png", "z/1.png", 3, 30, "jpegsim"},
                                           {"x/2.png", "y/2.png", "z/2.png", 2, 100, "webp"}};
    std::stringstream ss;
    write_manifest(ss, rows);
    const auto m = parse_manifest(ss, ".");
    ASSERT_EQ(m.rows.size(), rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        EXPECT_EQ(m.rows[i].lr_compressed_path, rows[i].lr_compressed_path);
        EXPECT_EQ(m.rows[i].qf, rows[i].qf);
        EXPECT_EQ(m.rows[i].codec_id, rows[i].codec_id);
    }
}

TEST(Manifest, RejectsMalformedLines) {
    for (const std::string line : {"a\tb\tc\t2\t10", "a\tb\tc\ttwo\t10\tjpegsim", "a\tb\tc\t5\t10\tjpegsim",
                                   "a\tb\tc\t2\t0\tjpegsim", "\tb\tc\t2\t10\tjpegsim", "a\tb\tc\t2\t10x\tjpegsim"}) {
        std::istringstream in(line + "\n");
        EXPECT_THROW(parse_manifest(in, "."), ManifestError) << line;
    }
    EXPECT_THROW(read_manifest("/nonexistent/manifest.tsv"), ManifestError);
}

TEST(Manifest, LoadChecksTheScaleContract) {
    TempDir dir;
    const auto t = make_triple(synthetic_image<float>(32, 32, 1), 2, 10);
    write_image(dir.path() / "x.png", t.x);
    write_image(dir.path() / "y.png", t.y);
    write_image(dir.path() / "z.png", t.z);
    Manifest m;
    m.base_dir = dir.path();
    m.rows.push_back({"x.png", "y.png", "z.png", 2, 10, "jpegsim"});
    const auto triples = load_triples(m);
    ASSERT_EQ(triples.size(), 1u);
    EXPECT_EQ(triples[0].x.shape(), t.x.shape());
    m.rows[0].scale = 4;
    EXPECT_THROW(load_triples(m), ManifestError);
    m.rows[0].scale = 2;
    m.rows[0].lr_compressed_path = "x.png";
    EXPECT_THROW(load_triples(m), ManifestError);
}

TEST(ImageIo, EightBitRoundTrip) {
    TempDir dir;
    Tensor<float> img(Shape{1, 3, 5, 7});
    for (std::size_t i = 0; i < img.numel(); ++i) img.data()[i] = static_cast<float>((i * 37) % 256) / 255.0f;
    for (const char* name : {"a.png", "a.ppm"}) {
        write_image(dir.path() / name, img);
        EXPECT_EQ(read_image(dir.path() / name).data(), img.data()) << name;
    }
}

TEST(ImageIo, QuantisesAndClampsOnWrite) {
    TempDir dir;
    Tensor<float> img(Shape{1, 3, 2, 2});
    img.data() = {-0.5f, 1.5f, 0.5f, 0.1f, 0, 0, 0, 0, 0, 0, 0, 0};
    write_image(dir.path() / "q.png", img);
    const auto back = read_image(dir.path() / "q.png");
    EXPECT_EQ(back.data()[0], 0.0f);
    EXPECT_EQ(back.data()[1], 1.0f);
    EXPECT_EQ(back.data()[2], 128.0f / 255.0f);
    EXPECT_EQ(back.data()[3], 26.0f / 255.0f);
}

TEST(ImageIo, GrayscaleIsReplicated) {
    TempDir dir;
    const auto g = random_tensor<float>(Shape{1, 1, 4, 6}, 5, 0, 1);
    write_image(dir.path() / "g.pgm", g);
    const auto back = read_image(dir.path() / "g.pgm");
    EXPECT_EQ(back.shape(), (Shape{1, 3, 4, 6}));
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 6; ++x) {
            EXPECT_EQ(back.at(0, 0, y, x), back.at(0, 2, y, x));
            EXPECT_NEAR(back.at(0, 1, y, x), g.at(0, 0, y, x), 0.5f / 255.0f + 1e-6f);
        }
}

TEST(ImageIo, MissingAndUnreadableFiles) {
    TempDir dir;
    EXPECT_THROW(read_image(dir.path() / "none.png"), IoError);
    std::ofstream(dir.path() / "junk.png") << "not a png";
    EXPECT_THROW(read_image(dir.path() / "junk.png"), IoError);
    std::ofstream(dir.path() / "junk.ppm") << "P6\n-3 4\n255\n";
    EXPECT_THROW(read_image(dir.path() / "junk.ppm"), IoError);
    EXPECT_THROW(write_image(dir.path() / "two.png", Tensor<float>(Shape{1, 2, 4, 4})), IoError);
}

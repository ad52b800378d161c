#include <gtest/gtest.h>

#include <fstream>

#include "cvid/checkpoint.hpp"
#include "test_util.hpp"

using namespace cvid;
using cvid::test::TempDir;

namespace {

template <class T>
std::vector<std::vector<T>> snapshot(CvidModel<T>& m) {
    std::vector<std::vector<T>> out;
    m.visit_params([&](const std::string&, Param<T>& p) { out.push_back(p.value); });
    m.visit_buffers([&](const std::string&, std::vector<T>& b) { out.push_back(b); });
    return out;
}

void write_bytes(const std::filesystem::path& p, const std::string& bytes) {
    std::ofstream(p, std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitExact) {
    TempDir dir("ckpt");
    auto model = CvidModel<float>::initialized(cvid::test::mini_config(), 3);
    cvid::test::randomize(model, 4);
    model.meta() = {2, 57, 3};
    save_checkpoint(model, dir / "m.cvid");
    auto back = load_checkpoint<float>(dir / "m.cvid");
    EXPECT_EQ(back.config(), model.config());
    EXPECT_EQ(back.meta(), model.meta());
    EXPECT_EQ(snapshot(back), snapshot(model));

    const ImageTensor x = cvid::test::random_image(8, 8, 3, 1);
    EXPECT_EQ(derain_channelwise_forward(x, std::nullopt, back, Mode::Infer, 5).yhat,
              derain_channelwise_forward(x, std::nullopt, model, Mode::Infer, 5).yhat);
}

TEST(Checkpoint, DefaultConfigDoubleRoundTrip) {
    TempDir dir("ckpt");
    auto model = CvidModel<double>::initialized(NetworkConfig{}, 9);
    save_checkpoint(model, dir / "m.cvid");
    auto back = load_checkpoint<double>(dir / "m.cvid");
    EXPECT_EQ(snapshot(back), snapshot(model));
}

TEST(Checkpoint, CorruptionDetected) {
    TempDir dir("ckpt");
    auto model = CvidModel<float>::initialized(cvid::test::mini_config(), 1);
    save_checkpoint(model, dir / "m.cvid");
    const std::string good = cvid::test::read_bytes(dir / "m.cvid");

    std::string flipped = good;
    flipped[good.size() - 20] ^= 0x40;
    write_bytes(dir / "flip.cvid", flipped);
    EXPECT_THROW(load_checkpoint<float>(dir / "flip.cvid"), CheckpointError);

    write_bytes(dir / "trunc.cvid", good.substr(0, good.size() / 2));
    EXPECT_THROW(load_checkpoint<float>(dir / "trunc.cvid"), CheckpointError);

    write_bytes(dir / "magic.cvid", "NOTACKPT" + good.substr(8));
    EXPECT_THROW(load_checkpoint<float>(dir / "magic.cvid"), CheckpointError);

    write_bytes(dir / "tiny.cvid", "CV");
    EXPECT_THROW(load_checkpoint<float>(dir / "tiny.cvid"), CheckpointError);

    std::string header_junk = good;
    header_junk[21] = '#';
    write_bytes(dir / "hdr.cvid", header_junk);
    EXPECT_THROW(load_checkpoint<float>(dir / "hdr.cvid"), CheckpointError);
}

TEST(Checkpoint, ScalarTypeMismatch) {
    TempDir dir("ckpt");
    auto model = CvidModel<float>::initialized(cvid::test::mini_config(), 1);
    save_checkpoint(model, dir / "m.cvid");
    EXPECT_THROW(load_checkpoint<double>(dir / "m.cvid"), CheckpointError);
}

TEST(Checkpoint, MissingFile) {
    EXPECT_THROW(load_checkpoint<float>("/nonexistent/model.cvid"), IoError);
}

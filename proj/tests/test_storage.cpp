#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>

#include <gtest/gtest.h>

#include <json.hpp>

#include "lpe/errors.hpp"
#include "lpe/storage.hpp"

namespace lpe {
namespace {

namespace fs = std::filesystem;

class StorageTest : public ::testing::Test {
protected:
    void SetUp() override {
        dir = fs::temp_directory_path() /
              ("lpe_storage_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    void TearDown() override { fs::remove_all(dir); }

    fs::path dir;
};

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void dump(const fs::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << bytes;
}

std::string container(const std::string& header, const std::string& payload) {
    std::string out = "LPE1";
    const auto len = static_cast<std::uint32_t>(header.size());
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((len >> (8 * b)) & 0xFF));
    return out + header + payload;
}

TEST_F(StorageTest, CheckpointRoundTripIsBitExact) {
    const Checkpoint ckpt = init_checkpoint(ModelSpec::mlp({3, 7, 2}, Activation::tanh), 4);
    save_checkpoint(dir / "a.lpe1", ckpt);
    const Checkpoint back = load_checkpoint(dir / "a.lpe1");
    EXPECT_EQ(back, ckpt);
    save_checkpoint(dir / "b.lpe1", back);
    EXPECT_EQ(slurp(dir / "a.lpe1"), slurp(dir / "b.lpe1"));
    EXPECT_EQ(file_kind(dir / "a.lpe1"), "checkpoint");
}

TEST_F(StorageTest, RejectsBadMagic) {
    const Checkpoint ckpt = init_checkpoint(ModelSpec::mlp({2, 2}), 1);
    save_checkpoint(dir / "a.lpe1", ckpt);
    std::string bytes = slurp(dir / "a.lpe1");
    bytes[3] = '2';
    dump(dir / "a.lpe1", bytes);
    EXPECT_THROW(load_checkpoint(dir / "a.lpe1"), FormatError);
    EXPECT_EQ(file_kind(dir / "a.lpe1"), "");
}

TEST_F(StorageTest, TruncationIsCorruption) {
    save_checkpoint(dir / "a.lpe1", init_checkpoint(ModelSpec::mlp({4, 5, 3}), 1));
    const std::string bytes = slurp(dir / "a.lpe1");
    dump(dir / "cut.lpe1", bytes.substr(0, bytes.size() - 3));
    EXPECT_THROW(load_checkpoint(dir / "cut.lpe1"), CorruptionError);
    dump(dir / "cut.lpe1", bytes.substr(0, 20));
    EXPECT_THROW(load_checkpoint(dir / "cut.lpe1"), CorruptionError);
}

TEST_F(StorageTest, RejectsOverlappingTensors) {
    nlohmann::json header = {
        {"kind", "checkpoint"},
        {"spec", {{"layer_dims", {1, 1}}, {"activation", "relu"}, {"quantize_mask", {false}}}},
        {"tensors",
         {{{"name", "layer_0/W"}, {"dtype", "f32"}, {"shape", {1, 1}}, {"offset", 0}, {"length", 4}},
          {{"name", "layer_0/b"}, {"dtype", "f32"}, {"shape", {1}}, {"offset", 2}, {"length", 4}}}}};
    dump(dir / "x.lpe1", container(header.dump(), std::string(8, '\0')));
    EXPECT_THROW(load_checkpoint(dir / "x.lpe1"), FormatError);

    header["tensors"][1]["offset"] = 4;
    dump(dir / "ok.lpe1", container(header.dump(), std::string(8, '\0')));
    EXPECT_EQ(load_checkpoint(dir / "ok.lpe1"), Checkpoint::zeros(ModelSpec{{1, 1}, Activation::relu, {false}}));

    header["tensors"][1]["length"] = 8;
    dump(dir / "len.lpe1", container(header.dump(), std::string(12, '\0')));
    EXPECT_THROW(load_checkpoint(dir / "len.lpe1"), FormatError);
}

TEST_F(StorageTest, QuantizedMemberIsSmallerThanFullPrecision) {
    const Checkpoint ckpt = init_checkpoint(ModelSpec::mlp({16, 64, 64, 4}), 2);
    const MemberSet ms = generate_members(ckpt, EnsembleSpec::lpe_bsr(5, 1, 3));
    save_member(dir / "m.lpe1", ckpt.spec, ms.members[0]);
    save_checkpoint(dir / "full.lpe1", ckpt);
    EXPECT_LT(fs::file_size(dir / "m.lpe1"), fs::file_size(dir / "full.lpe1"));
    EXPECT_EQ(load_member(dir / "m.lpe1", ckpt.spec), ms.members[0]);
    EXPECT_EQ(file_kind(dir / "m.lpe1"), "member");
}

TEST_F(StorageTest, MemberSetRoundTrip) {
    const Checkpoint ckpt = init_checkpoint(ModelSpec::mlp({3, 6, 3}), 2);
    for (const auto& spec : {EnsembleSpec::lpe_bsr(4, 3, 1), EnsembleSpec::rtn(6), EnsembleSpec::gaussian(0.01, 2, 4),
                             EnsembleSpec::mcd(0.2, 2, 4)}) {
        const MemberSet ms = generate_members(ckpt, spec);
        const fs::path out = dir / std::string(to_string(spec.method));
        const auto paths = save_member_set(out, ms);
        ASSERT_EQ(paths.size(), spec.size + 2);
        EXPECT_EQ(paths.back().filename(), "manifest.json");
        for (const auto& p : paths) EXPECT_TRUE(fs::exists(p));
        EXPECT_EQ(load_member_set(paths.back()), ms);
        EXPECT_EQ(load_model(out / "member_000.lpe1"), ms.materialize(0));
    }
}

TEST_F(StorageTest, MemberWithForeignSpecIsRejected) {
    const Checkpoint ckpt = init_checkpoint(ModelSpec::mlp({3, 6, 3}), 2);
    const MemberSet ms = generate_members(ckpt, EnsembleSpec::lpe_bsr(4, 1, 1));
    save_member(dir / "m.lpe1", ckpt.spec, ms.members[0]);
    EXPECT_THROW(load_member(dir / "m.lpe1", ModelSpec::mlp({3, 5, 3})), Error);
    EXPECT_THROW(load_checkpoint(dir / "m.lpe1"), FormatError);
}

TEST(Blobs, DeterministicAndBalanced) {
    const Dataset a = make_blobs(3, 2, 50, 0.7, 11);
    EXPECT_EQ(a.size(), 150u);
    EXPECT_EQ(a.dim(), 2u);
    EXPECT_EQ(a.num_classes, 3u);
    std::vector<int> counts(3, 0);
    for (int y : a.labels) ++counts.at(static_cast<std::size_t>(y));
    EXPECT_EQ(counts, (std::vector<int>{50, 50, 50}));
    const Dataset b = make_blobs(3, 2, 50, 0.7, 11);
    EXPECT_EQ(a.features, b.features);
    EXPECT_EQ(a.labels, b.labels);
    EXPECT_NE(make_blobs(3, 2, 50, 0.7, 12).features, a.features);
}

TEST_F(StorageTest, DatasetCsvRoundTrip) {
    const Dataset a = make_blobs(4, 3, 10, 1.0, 2);
    save_dataset_csv(dir / "d.csv", a);
    const Dataset b = load_dataset_csv(dir / "d.csv");
    EXPECT_EQ(a.features, b.features);
    EXPECT_EQ(a.labels, b.labels);
    EXPECT_EQ(b.num_classes, 4u);
    dump(dir / "bad.csv", "f0,label\n1.5,0\nabc,1\n");
    EXPECT_THROW(load_dataset_csv(dir / "bad.csv"), DataError);
    dump(dir / "neg.csv", "f0,label\n1.5,-1\n");
    EXPECT_THROW(load_dataset_csv(dir / "neg.csv"), DataError);
}

}  // namespace
}  // namespace lpe

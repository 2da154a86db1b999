#include <gtest/gtest.h>

#include <fstream>

#include "snstitch/snv2_io.hpp"
#include "test_helpers.hpp"

using namespace snstitch;
using testutil::TempDir;

TEST(Checkpoint, RoundTripBitExact) {
  TempDir tmp;
  Rng rng(21);
  AnchorSpec spec{4, 32, 4, 4.0, 16, 10, 8};
  AnchorModel m = AnchorModel::init(spec, rng);
  save_checkpoint(m, tmp.file("model.snv2"));
  AnchorModel loaded = load_checkpoint(tmp.file("model.snv2"), spec);
  bool all_equal = true;
  for_each_param(m, [&](const std::string& n, Matrix& p) {
    Matrix* other = nullptr;
    for_each_param(loaded, [&](const std::string& n2, Matrix& p2) {
      if (n2 == n) other = &p2;
    });
    ASSERT_NE(other, nullptr) << n;
    all_equal = all_equal && p.bit_equal(*other);
  });
  EXPECT_TRUE(all_equal);
}

TEST(Checkpoint, TensorRecordCount) {
  // depth 4 / width 32: 4 blocks x 12 tensors + embed 2 + norm 2 + head 2
  TempDir tmp;
  Rng rng(22);
  AnchorSpec spec{4, 32, 4, 4.0, 16, 10, 8};
  save_checkpoint(AnchorModel::init(spec, rng), tmp.file("model.snv2"));
  EXPECT_EQ(read_snv2_file(tmp.file("model.snv2")).size(), 4u * 12 + 2 + 2 + 2);
}

TEST(Checkpoint, TruncatedFileIsFormatError) {
  TempDir tmp;
  Rng rng(23);
  AnchorSpec spec{2, 8, 2, 4.0, 4, 3, 4};
  save_checkpoint(AnchorModel::init(spec, rng), tmp.file("model.snv2"));
  std::ifstream in(tmp.file("model.snv2"), std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  for (std::size_t cut : {bytes.size() - 1, bytes.size() / 2, std::size_t{7}}) {
    std::ofstream out(tmp.file("cut.snv2"), std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(cut));
    out.close();
    EXPECT_THROW(load_checkpoint(tmp.file("cut.snv2"), spec), FormatError) << cut;
  }
}

TEST(Checkpoint, BadMagicIsFormatError) {
  TempDir tmp;
  std::ofstream out(tmp.file("bad.snv2"), std::ios::binary);
  out << "NOPE then some bytes";
  out.close();
  EXPECT_THROW(read_snv2_file(tmp.file("bad.snv2")), FormatError);
}

TEST(Checkpoint, WrongSpecShapeTableIsFormatError) {
  TempDir tmp;
  Rng rng(24);
  AnchorSpec spec{2, 8, 2, 4.0, 4, 3, 4};
  save_checkpoint(AnchorModel::init(spec, rng), tmp.file("model.snv2"));
  AnchorSpec wider = spec;
  wider.width = 16;
  EXPECT_THROW(load_checkpoint(tmp.file("model.snv2"), wider), FormatError);
  AnchorSpec deeper = spec;
  deeper.depth = 4;
  EXPECT_THROW(load_checkpoint(tmp.file("model.snv2"), deeper), FormatError);
}

TEST(Checkpoint, TrailingBytesRejected) {
  TempDir tmp;
  Rng rng(25);
  AnchorSpec spec{2, 8, 2, 4.0, 4, 3, 4};
  save_checkpoint(AnchorModel::init(spec, rng), tmp.file("model.snv2"));
  std::ofstream out(tmp.file("model.snv2"), std::ios::binary | std::ios::app);
  out << "junk";
  out.close();
  EXPECT_THROW(read_snv2_file(tmp.file("model.snv2")), FormatError);
}

TEST(Checkpoint, LittleEndianLayout) {
  // spot-check the on-disk layout: magic, version=1, count, then first record
  TempDir tmp;
  write_snv2_file(tmp.file("one.snv2"), {to_tensor("x", Matrix::from({{1.0}}))});
  std::ifstream in(tmp.file("one.snv2"), std::ios::binary);
  std::string b((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  ASSERT_GE(b.size(), 4u + 2 + 2 + 1 + 1 + 1 + 8 + 8);
  EXPECT_EQ(b.substr(0, 4), "SNV2");
  EXPECT_EQ(static_cast<unsigned char>(b[4]), 1);  // version lo
  EXPECT_EQ(static_cast<unsigned char>(b[5]), 0);  // version hi
  EXPECT_EQ(static_cast<unsigned char>(b[6]), 1);  // count lo
  EXPECT_EQ(static_cast<unsigned char>(b[8]), 1);  // name length
  EXPECT_EQ(b[9], 'x');
  EXPECT_EQ(static_cast<unsigned char>(b[10]), 2);  // rank
}

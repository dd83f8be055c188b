#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "hypermatch/image_io.hpp"
#include "hypermatch/manifest.hpp"
#include "png_io.hpp"
#include "test_util.hpp"

namespace {

using namespace hypermatch;

TEST(Manifest, ParsesLabelsMasksAndComments) {
  std::istringstream in(
      "path,label,mask,category\n"
      "# comment\n"
      "a.hfs,0,,bottle\n"
      "sub/b.hfs,1,masks/b.png,bottle\n"
      "/abs/c.hfs,unknown\n"
      "d.hfs\n");
  const auto m = parse_manifest(in, "/data", "m.csv");
  ASSERT_EQ(m.size(), 4u);
  EXPECT_EQ(m[0].path, "/data/a.hfs");
  EXPECT_EQ(m[0].label, 0);
  EXPECT_FALSE(m[0].mask.has_value());
  EXPECT_EQ(m[0].category, "bottle");
  EXPECT_EQ(m[1].label, 1);
  EXPECT_EQ(*m[1].mask, "/data/masks/b.png");
  EXPECT_EQ(m[2].path, "/abs/c.hfs");
  EXPECT_FALSE(m[2].label.has_value());
  EXPECT_FALSE(m[3].label.has_value());
}

TEST(Manifest, RejectsDuplicatesAndBadLabels) {
  std::istringstream dup("a.hfs,0\n./a.hfs,1\n");
  EXPECT_THROW(parse_manifest(dup, "/d", "m"), Error);
  std::istringstream label("a.hfs,2\n");
  EXPECT_THROW(parse_manifest(label, "/d", "m"), Error);
  std::istringstream wide("a,0,m,c,extra\n");
  EXPECT_THROW(parse_manifest(wide, "/d", "m"), Error);
}

TEST(Manifest, WriteReadRoundTrip) {
  testutil::TempDir dir;
  Manifest m{{dir / "f/a.hfs", 1, dir / "m/a.pgm", "x"}, {dir / "f/b.hfs", std::nullopt, std::nullopt, ""}};
  write_manifest(m, dir / "list.csv");
  const auto back = read_manifest(dir / "list.csv");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].path, m[0].path);
  EXPECT_EQ(back[0].mask, m[0].mask);
  EXPECT_EQ(back[0].label, 1);
  EXPECT_FALSE(back[1].label.has_value());
  std::ifstream raw(dir / "list.csv");
  std::string header;
  std::getline(raw, header);
  EXPECT_EQ(header, "path,label,mask,category");
}

TEST(Pgm, RoundTripEightAndSixteenBit) {
  testutil::TempDir dir;
  GrayImage img(2, 3);
  img << 0, 1, 255, 7, 128, 3;
  write_pgm(img, 255, dir / "a.pgm");
  std::uint16_t maxval = 0;
  EXPECT_EQ(read_pgm(dir / "a.pgm", &maxval), img);
  EXPECT_EQ(maxval, 255);
  img(0, 0) = 60000;
  write_pgm(img, 65535, dir / "b.pgm");
  EXPECT_EQ(read_pgm(dir / "b.pgm"), img);
}

TEST(Pgm, RejectsOtherFormats) {
  testutil::TempDir dir;
  std::ofstream(dir / "p2.pgm") << "P2\n1 1\n255\n0\n";
  EXPECT_THROW(read_pgm(dir / "p2.pgm"), Error);
}

TEST(Mask, NonzeroIsAnomalous) {
  GrayImage img(1, 3);
  img << 0, 1, 255;
  EXPECT_EQ(to_mask(img), (MaskMatrix(1, 3) << 0, 1, 1).finished());
  EXPECT_EQ(from_mask(to_mask(img)), (GrayImage(1, 3) << 0, 255, 255).finished());
}

TEST(Heatmap, MinMaxScaled) {
  RowMatrixD s(1, 3);
  s << 0.2, 0.7, 0.45;
  const auto h = to_heatmap(s);
  EXPECT_EQ(h(0, 0), 0);
  EXPECT_EQ(h(0, 1), 255);
  EXPECT_EQ(to_heatmap(RowMatrixD::Constant(2, 2, 3.0)).maxCoeff(), 0);
}

TEST(Png, RoundTripAndMaskFormats) {
  testutil::TempDir dir;
  GrayImage img(3, 2);
  img << 0, 255, 10, 20, 0, 0;
  tools::write_png_gray(img, dir / "a.png");
  EXPECT_EQ(tools::read_png_gray(dir / "a.png"), img);
  EXPECT_EQ(tools::read_mask(dir / "a.png"), to_mask(img));
  write_pgm(img, 255, dir / "a.pgm");
  EXPECT_EQ(tools::read_mask(dir / "a.pgm"), to_mask(img));
  EXPECT_THROW(tools::read_png_gray(dir / "a.pgm"), Error);
}

}  // namespace

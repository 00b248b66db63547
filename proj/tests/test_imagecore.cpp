#include <array>
#include <fstream>
#include <random>

#include "doctest.h"
#include "pal/binio.hpp"
#include "pal/errors.hpp"
#include "pal/image.hpp"
#include "support.hpp"

using namespace pal;
using testsupport::block_mask;

namespace {

// Straight per-pixel confusion counts.
double count_iou(const BinaryMask& p, const BinaryMask& g) {
  long tp = 0, fp = 0, fn = 0;
  for (int y = 0; y < p.height(); ++y)
    for (int x = 0; x < p.width(); ++x) {
      const bool a = p.at(x, y), b = g.at(x, y);
      tp += a && b;
      fp += a && !b;
      fn += !a && b;
    }
  if (tp + fp + fn == 0) return 1.0;
  return static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
}

Image ramp(int w, int h) {
  Image img(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) img.set(x, y, static_cast<float>(y * w + x) / static_cast<float>(w * h));
  return img;
}

}  // namespace

TEST_CASE("iou of identical and disjoint masks") {
  const auto a = block_mask(8, 8, 1, 1, 3, 3);
  const auto b = block_mask(8, 8, 5, 5, 2, 2);
  CHECK(iou(a, a) == 1.0);
  CHECK(iou(a, b) == 0.0);
}

TEST_CASE("iou of a block inside a larger block") {
  const auto pred = block_mask(6, 6, 1, 1, 2, 2);
  const auto gt = block_mask(6, 6, 1, 1, 4, 2);
  CHECK(iou(pred, gt) == doctest::Approx(count_iou(pred, gt)));
  CHECK(iou(pred, gt) == doctest::Approx(0.5));
}

TEST_CASE("iou of two empty masks is one") {
  CHECK(iou(BinaryMask(4, 4), BinaryMask(4, 4)) == 1.0);
  CHECK(iou(BinaryMask(4, 4), block_mask(4, 4, 0, 0, 1, 1)) == 0.0);
}

TEST_CASE("iou rejects mismatched shapes") {
  CHECK_THROWS_AS(iou(BinaryMask(4, 4), BinaryMask(4, 5)), DimensionError);
}

TEST_CASE("iou properties over random masks") {
  std::mt19937_64 rng(11);
  for (int t = 0; t < 200; ++t) {
    const auto a = testsupport::random_mask(9, 7, 0.3, rng);
    const auto b = testsupport::random_mask(9, 7, 0.3, rng);
    const double v = iou(a, b);
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    CHECK(v == iou(b, a));
    CHECK(v == doctest::Approx(count_iou(a, b)).epsilon(1e-12));
    if (a.count() > 0) CHECK(iou(a, a) == 1.0);
  }
}

TEST_CASE("mean_iou") {
  const auto a = block_mask(5, 5, 0, 0, 2, 2);
  const auto b = block_mask(5, 5, 3, 3, 2, 2);
  const std::array<BinaryMask, 2> perfect{a, a}, mixed{a, b};
  CHECK(mean_iou(perfect, perfect) == 1.0);
  CHECK(mean_iou(std::array{a, a}, mixed) == doctest::Approx(0.5));

  std::mt19937_64 rng(5);
  std::vector<BinaryMask> ps, gs;
  double sum = 0.0;
  for (int i = 0; i < 10; ++i) {
    ps.push_back(testsupport::random_mask(6, 6, 0.4, rng));
    gs.push_back(testsupport::random_mask(6, 6, 0.4, rng));
    sum += count_iou(ps.back(), gs.back());
  }
  CHECK(mean_iou(ps, gs) == doctest::Approx(sum / 10.0).epsilon(1e-12));

  // singleton equals the pairwise value
  CHECK(mean_iou(std::span(ps).first(1), std::span(gs).first(1)) == iou(ps[0], gs[0]));

  CHECK_THROWS_AS(mean_iou(std::span<const BinaryMask>(), std::span<const BinaryMask>()), UsageError);
  CHECK_THROWS_AS(mean_iou(std::span(ps).first(2), std::span(gs).first(3)), DimensionError);
}

TEST_CASE("image and mask construction checks") {
  CHECK_THROWS_AS(Image(2, 2, std::vector<float>{0.f, 0.5f, 1.f}), DimensionError);
  CHECK_THROWS_AS(Image(1, 2, std::vector<float>{0.f, 1.5f}), UsageError);
  CHECK_THROWS_AS(Image(0, 3), DimensionError);
  CHECK_THROWS_AS(BinaryMask(1, 2, std::vector<std::uint8_t>{0, 2}), UsageError);
  CHECK(BinaryMask(3, 3, true).count() == 9);
}

TEST_CASE("crop examples") {
  const auto img = ramp(7, 5);
  CHECK(crop(img, Rect{0, 0, 7, 5}) == img);

  const auto one = crop(img, Rect{0, 0, 1, 1});
  CHECK(one.width() == 1);
  CHECK(one.at(0, 0) == img.at(0, 0));

  const auto mid = crop(img, Rect{2, 1, 3, 3});
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 3; ++x)
      CHECK(mid.at(x, y) == doctest::Approx(((y + 1) * 7 + (x + 2)) / 35.0f));

  CHECK_THROWS_AS(crop(img, Rect{5, 0, 3, 1}), DimensionError);
  CHECK_THROWS_AS(crop(img, Rect{-1, 0, 1, 1}), DimensionError);
  CHECK_THROWS_AS(crop(img, Rect{0, 0, 0, 1}), DimensionError);
}

TEST_CASE("crop matches offset lookup for random rects") {
  std::mt19937_64 rng(3);
  const auto img = testsupport::random_image(13, 11, rng);
  const auto mask = testsupport::random_mask(13, 11, 0.5, rng);
  std::uniform_int_distribution<int> ux(0, 12), uy(0, 10);
  for (int t = 0; t < 100; ++t) {
    const int x0 = ux(rng), y0 = uy(rng);
    const int w = std::uniform_int_distribution<int>(1, 13 - x0)(rng);
    const int h = std::uniform_int_distribution<int>(1, 11 - y0)(rng);
    const Rect r{x0, y0, w, h};
    const auto ci = crop(img, r);
    const auto cm = crop(mask, r);
    REQUIRE(ci.width() == w);
    REQUIRE(cm.height() == h);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        CHECK(ci.at(x, y) == img.at(x0 + x, y0 + y));
        CHECK(cm.at(x, y) == mask.at(x0 + x, y0 + y));
      }
  }
}

TEST_CASE("pgm round trip keeps 8-bit values") {
  testsupport::TempDir dir("pgm");
  std::vector<float> d(6 * 4);
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<float>((i * 37) % 256) / 255.0f;
  const Image img(6, 4, d);
  write_pgm(dir / "a.pgm", img);
  CHECK(read_pgm(dir / "a.pgm") == img);
}

TEST_CASE("pgm reader skips comments and rejects other formats") {
  testsupport::TempDir dir("pgmc");
  {
    std::ofstream os(dir / "c.pgm", std::ios::binary);
    os << "P5\n# made by hand\n2 1\n255\n";
    os.put(static_cast<char>(0));
    os.put(static_cast<char>(255));
  }
  const auto img = read_pgm(dir / "c.pgm");
  CHECK(img.width() == 2);
  CHECK(img.at(1, 0) == 1.0f);
  {
    std::ofstream os(dir / "p2.pgm");
    os << "P2\n1 1\n255\n0\n";
  }
  CHECK_THROWS_AS(read_pgm(dir / "p2.pgm"), IoError);
  CHECK_THROWS_AS(read_pgm(dir / "missing.pgm"), IoError);
}

TEST_CASE("psm layout and round trip") {
  testsupport::TempDir dir("psm");
  std::mt19937_64 rng(9);
  const auto m = testsupport::random_mask(5, 3, 0.5, rng);
  write_psm(dir / "m.psm", m);
  CHECK(std::filesystem::file_size(dir / "m.psm") == 16 + 15);
  CHECK(read_psm(dir / "m.psm") == m);

  std::ifstream is(dir / "m.psm", std::ios::binary);
  char magic[4];
  is.read(magic, 4);
  CHECK(std::string(magic, 4) == "PSM1");
  CHECK(binio::get_u32(is) == 5);
  CHECK(binio::get_u32(is) == 3);
}

TEST_CASE("psm reader rejects corrupt files") {
  testsupport::TempDir dir("psmbad");
  {
    std::ofstream os(dir / "bad.psm", std::ios::binary);
    os << "PSMX";
  }
  CHECK_THROWS_AS(read_psm(dir / "bad.psm"), IoError);
  write_psm(dir / "t.psm", BinaryMask(4, 4, true));
  std::filesystem::resize_file(dir / "t.psm", 20);
  CHECK_THROWS_AS(read_psm(dir / "t.psm"), IoError);
}

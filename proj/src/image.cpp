#include "pal/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

#include "pal/binio.hpp"
#include "pal/errors.hpp"

namespace pal {

namespace {

void check_extent(int width, int height) {
  if (width <= 0 || height <= 0) throw DimensionError("grid extent must be positive");
}

void check_rect(const Rect& r, int width, int height) {
  if (r.w <= 0 || r.h <= 0 || r.x0 < 0 || r.y0 < 0 || r.x0 + r.w > width || r.y0 + r.h > height) {
    std::ostringstream msg;
    msg << "rect (" << r.x0 << "," << r.y0 << "," << r.w << "x" << r.h << ") outside " << width << "x"
        << height;
    throw DimensionError(msg.str());
  }
}

}  // namespace

Image::Image(int width, int height, float fill) : width_(width), height_(height) {
  check_extent(width, height);
  if (!(fill >= 0.0f && fill <= 1.0f)) throw UsageError("image fill outside [0,1]");
  data_.assign(static_cast<std::size_t>(width) * height, fill);
}

Image::Image(int width, int height, std::vector<float> data)
    : width_(width), height_(height), data_(std::move(data)) {
  check_extent(width, height);
  if (data_.size() != static_cast<std::size_t>(width) * height)
    throw DimensionError("image data length does not match extent");
  for (float v : data_)
    if (!(v >= 0.0f && v <= 1.0f)) throw UsageError("image intensity outside [0,1]");
}

BinaryMask::BinaryMask(int width, int height, bool fill) : width_(width), height_(height) {
  check_extent(width, height);
  bits_.assign(static_cast<std::size_t>(width) * height, fill ? 1 : 0);
}

BinaryMask::BinaryMask(int width, int height, std::vector<std::uint8_t> bits)
    : width_(width), height_(height), bits_(std::move(bits)) {
  check_extent(width, height);
  if (bits_.size() != static_cast<std::size_t>(width) * height)
    throw DimensionError("mask length does not match extent");
  for (auto b : bits_)
    if (b > 1) throw UsageError("mask values must be 0 or 1");
}

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

double iou(const BinaryMask& pred, const BinaryMask& gt) {
  if (pred.width() != gt.width() || pred.height() != gt.height())
    throw DimensionError("iou: mask shapes differ");
  std::size_t tp = 0, fp = 0, fn = 0;
  auto p = pred.bits();
  auto g = gt.bits();
  for (std::size_t i = 0; i < p.size(); ++i) {
    tp += p[i] & g[i];
    fp += p[i] & (g[i] ^ 1u);
    fn += (p[i] ^ 1u) & g[i];
  }
  const std::size_t denom = tp + fp + fn;
  if (denom == 0) return 1.0;
  return static_cast<double>(tp) / static_cast<double>(denom);
}

double mean_iou(std::span<const BinaryMask> preds, std::span<const BinaryMask> gts) {
  if (preds.empty() || gts.empty()) throw UsageError("mean_iou: empty evaluation list");
  if (preds.size() != gts.size()) throw DimensionError("mean_iou: list lengths differ");
  double sum = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) sum += iou(preds[i], gts[i]);
  return sum / static_cast<double>(preds.size());
}

Image crop(const Image& img, const Rect& r) {
  check_rect(r, img.width(), img.height());
  std::vector<float> out;
  out.reserve(static_cast<std::size_t>(r.w) * r.h);
  for (int y = r.y0; y < r.y0 + r.h; ++y)
    for (int x = r.x0; x < r.x0 + r.w; ++x) out.push_back(img.at(x, y));
  return Image(r.w, r.h, std::move(out));
}

BinaryMask crop(const BinaryMask& mask, const Rect& r) {
  check_rect(r, mask.width(), mask.height());
  std::vector<std::uint8_t> out;
  out.reserve(static_cast<std::size_t>(r.w) * r.h);
  for (int y = r.y0; y < r.y0 + r.h; ++y)
    for (int x = r.x0; x < r.x0 + r.w; ++x) out.push_back(mask.at(x, y) ? 1 : 0);
  return BinaryMask(r.w, r.h, std::move(out));
}

void write_pgm(const std::filesystem::path& path, const Image& img) {
  auto os = binio::open_out(path.string());
  os << "P5\n" << img.width() << " " << img.height() << "\n255\n";
  std::vector<unsigned char> bytes(img.size());
  auto d = img.data();
  for (std::size_t i = 0; i < bytes.size(); ++i)
    bytes[i] = static_cast<unsigned char>(std::lround(std::clamp(d[i], 0.0f, 1.0f) * 255.0f));
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("write failed: " + path.string());
}

namespace {

// Reads the next whitespace-delimited header token, skipping '#' comments.
std::string pgm_token(std::istream& is) {
  std::string tok;
  while (is) {
    int c = is.peek();
    if (c == '#') {
      std::string line;
      std::getline(is, line);
    } else if (std::isspace(c)) {
      is.get();
    } else {
      break;
    }
  }
  is >> tok;
  return tok;
}

}  // namespace

Image read_pgm(const std::filesystem::path& path) {
  auto is = binio::open_in(path.string());
  if (pgm_token(is) != "P5") throw IoError("not a binary PGM: " + path.string());
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(pgm_token(is));
    h = std::stoi(pgm_token(is));
    maxval = std::stoi(pgm_token(is));
  } catch (const std::exception&) {
    throw IoError("malformed PGM header: " + path.string());
  }
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255) throw IoError("unsupported PGM: " + path.string());
  is.get();
  std::vector<unsigned char> bytes(static_cast<std::size_t>(w) * h);
  is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!is) throw IoError("truncated PGM: " + path.string());
  std::vector<float> data(bytes.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) data[i] = static_cast<float>(bytes[i]) / static_cast<float>(maxval);
  return Image(w, h, std::move(data));
}

void write_psm(const std::filesystem::path& path, const BinaryMask& mask) {
  auto os = binio::open_out(path.string());
  os.write("PSM1", 4);
  binio::put_u32(os, static_cast<std::uint32_t>(mask.width()));
  binio::put_u32(os, static_cast<std::uint32_t>(mask.height()));
  binio::put_u32(os, 0);
  auto b = mask.bits();
  os.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
  if (!os) throw IoError("write failed: " + path.string());
}

BinaryMask read_psm(const std::filesystem::path& path) {
  auto is = binio::open_in(path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != "PSM1") throw IoError("bad PSM magic: " + path.string());
  const auto w = binio::get_u32(is);
  const auto h = binio::get_u32(is);
  binio::get_u32(is);
  if (w == 0 || h == 0 || w > (1u << 16) || h > (1u << 16)) throw IoError("bad PSM extent: " + path.string());
  std::vector<std::uint8_t> bits(static_cast<std::size_t>(w) * h);
  is.read(reinterpret_cast<char*>(bits.data()), static_cast<std::streamsize>(bits.size()));
  if (!is) throw IoError("truncated PSM: " + path.string());
  for (auto b : bits)
    if (b > 1) throw IoError("non-binary PSM payload: " + path.string());
  return BinaryMask(static_cast<int>(w), static_cast<int>(h), std::move(bits));
}

}  // namespace pal

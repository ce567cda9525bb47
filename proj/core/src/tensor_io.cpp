#include "m2mrf/tensor_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "m2mrf/errors.hpp"

namespace m2mrf::io {

namespace {

constexpr uint8_t kMagic[4] = {'M', '2', 'M', 'T'};
constexpr uint8_t kVersion = 1;
constexpr uint8_t kDtypeF64 = 0;
constexpr int64_t kMaxElements = int64_t{1} << 31;

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v & 0xff));
  out.push_back(static_cast<uint8_t>((v >> 8) & 0xff));
  out.push_back(static_cast<uint8_t>((v >> 16) & 0xff));
  out.push_back(static_cast<uint8_t>((v >> 24) & 0xff));
}

void put_f64(std::vector<uint8_t>& out, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>((bits >> (8 * i)) & 0xff));
}

uint32_t get_u32(const uint8_t* p) {
  return static_cast<uint32_t>(p[0]) | static_cast<uint32_t>(p[1]) << 8 |
         static_cast<uint32_t>(p[2]) << 16 | static_cast<uint32_t>(p[3]) << 24;
}

double get_f64(const uint8_t* p) {
  uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<uint64_t>(p[i]) << (8 * i);
  double v;
  std::memcpy(&v, &bits, sizeof v);
  return v;
}

[[noreturn]] void reject(const std::string& origin, size_t offset, const std::string& what) {
  throw FormatError(origin + ": " + what + " at byte " + std::to_string(offset));
}

}  // namespace

std::vector<uint8_t> encode_m2mt(const Tensor& t) {
  for (int64_t d : t.shape())
    if (d > static_cast<int64_t>(UINT32_MAX))
      throw ContractError("encode_m2mt: dimension " + std::to_string(d) + " exceeds u32");
  std::vector<uint8_t> out;
  out.reserve(7 + 4 * t.shape().size() + 8 * static_cast<size_t>(t.numel()));
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(kMagic[i]));
  out.push_back(kVersion);
  out.push_back(kDtypeF64);
  out.push_back(static_cast<uint8_t>(t.rank()));
  for (int64_t d : t.shape()) put_u32(out, static_cast<uint32_t>(d));
  for (int64_t i = 0; i < t.numel(); ++i) put_f64(out, t[i]);
  return out;
}

Tensor decode_m2mt(const uint8_t* bytes, size_t size, const std::string& origin) {
  if (size < 4) reject(origin, size, "file truncated inside magic");
  if (std::memcmp(bytes, kMagic, 4) != 0) reject(origin, 0, "bad magic");
  if (size < 5) reject(origin, 4, "file truncated before version");
  if (bytes[4] != kVersion)
    reject(origin, 4, "unsupported version " + std::to_string(int(bytes[4])));
  if (size < 6) reject(origin, 5, "file truncated before dtype");
  if (bytes[5] != kDtypeF64) reject(origin, 5, "unsupported dtype " + std::to_string(int(bytes[5])));
  if (size < 7) reject(origin, 6, "file truncated before ndim");
  const int ndim = bytes[6];
  if (ndim < 1) reject(origin, 6, "ndim must be >= 1");

  size_t off = 7;
  Shape shape;
  int64_t numel = 1;
  for (int i = 0; i < ndim; ++i, off += 4) {
    if (size < off + 4) reject(origin, size, "file truncated inside dims");
    const uint32_t d = get_u32(bytes + off);
    if (d == 0) reject(origin, off, "zero dimension");
    numel *= static_cast<int64_t>(d);
    if (numel > kMaxElements) reject(origin, off, "dimension product too large");
    shape.push_back(static_cast<int64_t>(d));
  }

  const size_t want = off + 8 * static_cast<size_t>(numel);
  if (size < want) reject(origin, size, "file truncated inside data");
  if (size > want) reject(origin, want, "trailing bytes");

  std::vector<double> data(static_cast<size_t>(numel));
  for (int64_t i = 0; i < numel; ++i) data[static_cast<size_t>(i)] = get_f64(bytes + off + 8 * i);
  return Tensor(std::move(shape), std::move(data));
}

void write_m2mt(const std::string& path, const Tensor& t) {
  const std::vector<uint8_t> bytes = encode_m2mt(t);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("short write to " + path);
}

Tensor read_m2mt(const std::string& path) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw IoError("cannot open " + path + " for reading");
  const std::streamsize size = f.tellg();
  f.seekg(0);
  std::vector<uint8_t> bytes(static_cast<size_t>(size));
  if (size > 0) f.read(reinterpret_cast<char*>(bytes.data()), size);
  if (!f) throw IoError("read failed on " + path);
  return decode_m2mt(bytes.data(), bytes.size(), path);
}

namespace {

uint8_t to_byte(double v) {
  const double c = std::min(std::max(v, 0.0), 1.0);
  return static_cast<uint8_t>(std::lround(c * 255.0));
}

}  // namespace

void write_pgm(const std::string& path, const Tensor& gray) {
  const bool flat = gray.rank() == 2;
  if (!flat && !(gray.rank() == 3 && gray.dim(2) == 1))
    throw ShapeError("write_pgm: expected (H, W) or (H, W, 1), got " + shape_str(gray.shape()));
  const int64_t H = gray.dim(0), W = gray.dim(1);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f << "P5\n" << W << " " << H << "\n255\n";
  std::vector<uint8_t> row(static_cast<size_t>(W));
  for (int64_t y = 0; y < H; ++y) {
    for (int64_t x = 0; x < W; ++x) row[static_cast<size_t>(x)] = to_byte(gray[y * W + x]);
    f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!f) throw IoError("short write to " + path);
}

void write_ppm(const std::string& path, const Tensor& rgb) {
  if (rgb.rank() != 3 || rgb.dim(2) != 3)
    throw ShapeError("write_ppm: expected (H, W, 3), got " + shape_str(rgb.shape()));
  const int64_t H = rgb.dim(0), W = rgb.dim(1);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f << "P6\n" << W << " " << H << "\n255\n";
  std::vector<uint8_t> row(static_cast<size_t>(3 * W));
  for (int64_t y = 0; y < H; ++y) {
    for (int64_t x = 0; x < W; ++x)
      for (int64_t c = 0; c < 3; ++c)
        row[static_cast<size_t>(3 * x + c)] = to_byte(rgb[(y * W + x) * 3 + c]);
    f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!f) throw IoError("short write to " + path);
}

}  // namespace m2mrf::io

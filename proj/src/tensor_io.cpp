#include "ema/tensor_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

namespace ema::io {
namespace {

constexpr std::size_t kMagicOffset = 0;
constexpr std::size_t kVersionOffset = 4;
constexpr std::size_t kDtypeOffset = 8;
constexpr std::size_t kNdimOffset = 12;
constexpr std::size_t kDimsOffset = 16;
constexpr std::uint32_t kMaxNdim = 8;
constexpr std::uint64_t kMaxElements = 1ULL << 31;

std::uint32_t load_u32_le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

void store_u32_le(unsigned char* p, std::uint32_t v) {
  p[0] = static_cast<unsigned char>(v);
  p[1] = static_cast<unsigned char>(v >> 8);
  p[2] = static_cast<unsigned char>(v >> 16);
  p[3] = static_cast<unsigned char>(v >> 24);
}

}  // namespace

TensorData read_tensor_file(const std::string& path) {
  const auto fail = [&path](const std::string& msg, std::size_t off) {
    throw TensorFormatError("'" + path + "': " + msg, off);
  };
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open file", 0);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());

  if (bytes.size() < kDimsOffset)
    fail("truncated header (" + std::to_string(bytes.size()) + " bytes)", bytes.size());
  if (std::memcmp(bytes.data(), "EMAT", 4) != 0) fail("bad magic", kMagicOffset);
  if (load_u32_le(bytes.data() + kVersionOffset) != 1) fail("unsupported version", kVersionOffset);
  if (load_u32_le(bytes.data() + kDtypeOffset) != 0) fail("unsupported dtype", kDtypeOffset);
  const std::uint32_t ndim = load_u32_le(bytes.data() + kNdimOffset);
  if (ndim == 0 || ndim > kMaxNdim)
    fail("ndim " + std::to_string(ndim) + " out of range", kNdimOffset);
  if (bytes.size() < kDimsOffset + 4ULL * ndim) fail("truncated dims", bytes.size());

  TensorData t;
  std::uint64_t count = 1;
  for (std::uint32_t i = 0; i < ndim; ++i) {
    const std::size_t off = kDimsOffset + 4ULL * i;
    const std::uint32_t d = load_u32_le(bytes.data() + off);
    if (d == 0) fail("zero dimension", off);
    count *= d;
    if (count > kMaxElements) fail("dims overflow", off);
    t.dims.push_back(d);
  }

  const std::size_t payload_offset = kDimsOffset + 4ULL * ndim;
  const std::size_t payload_bytes = bytes.size() - payload_offset;
  if (payload_bytes < count * 4)
    fail("truncated payload (" + std::to_string(payload_bytes) + " of " +
             std::to_string(count * 4) + " bytes)",
         bytes.size());
  if (payload_bytes > count * 4) fail("trailing bytes after payload", payload_offset + count * 4);

  t.values.resize(count);
  for (std::uint64_t i = 0; i < count; ++i)
    t.values[i] = std::bit_cast<float>(load_u32_le(bytes.data() + payload_offset + 4 * i));
  return t;
}

void write_tensor_file(const std::string& path, const std::vector<std::uint32_t>& dims,
                       const float* values, std::size_t count) {
  if (dims.empty() || dims.size() > kMaxNdim)
    throw std::invalid_argument("write_tensor_file: ndim out of range");
  std::uint64_t expected = 1;
  for (std::uint32_t d : dims) {
    if (d == 0) throw std::invalid_argument("write_tensor_file: zero dimension");
    expected *= d;
  }
  if (expected != count)
    throw std::invalid_argument("write_tensor_file: payload size does not match dims");

  std::vector<unsigned char> bytes(kDimsOffset + 4 * dims.size() + 4 * count);
  std::memcpy(bytes.data(), "EMAT", 4);
  store_u32_le(bytes.data() + kVersionOffset, 1);
  store_u32_le(bytes.data() + kDtypeOffset, 0);
  store_u32_le(bytes.data() + kNdimOffset, static_cast<std::uint32_t>(dims.size()));
  for (std::size_t i = 0; i < dims.size(); ++i)
    store_u32_le(bytes.data() + kDimsOffset + 4 * i, dims[i]);
  const std::size_t payload_offset = kDimsOffset + 4 * dims.size();
  for (std::size_t i = 0; i < count; ++i)
    store_u32_le(bytes.data() + payload_offset + 4 * i, std::bit_cast<std::uint32_t>(values[i]));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("write_tensor_file: cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write_tensor_file: short write to '" + path + "'");
}

MatF tensor_as_matrix(const TensorData& t) {
  if (t.dims.size() != 2)
    throw std::invalid_argument("tensor_as_matrix: expected 2 dims, got " +
                                std::to_string(t.dims.size()));
  MatF m(t.dims[0], t.dims[1]);
  m.data = t.values;
  return m;
}

FeatureMap<float> tensor_as_feature_map(const TensorData& t) {
  if (t.dims.size() != 3)
    throw std::invalid_argument("tensor_as_feature_map: expected 3 dims, got " +
                                std::to_string(t.dims.size()));
  FeatureMap<float> fm(t.dims[0], t.dims[1], t.dims[2]);
  fm.data = t.values;
  return fm;
}

void export_responsibility_map(const MatF& z, std::size_t basis, std::size_t h, std::size_t w,
                               const std::string& path) {
  if (basis >= z.cols)
    throw std::invalid_argument("export_responsibility_map: basis " + std::to_string(basis) +
                                " out of range for K = " + std::to_string(z.cols));
  if (z.rows != h * w)
    throw std::invalid_argument("export_responsibility_map: " + std::to_string(z.rows) +
                                " pixels do not fill a " + std::to_string(h) + "x" +
                                std::to_string(w) + " image");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw std::runtime_error("export_responsibility_map: cannot open '" + path + "' for writing");
  out << "P5\n" << w << " " << h << "\n255\n";
  for (std::size_t n = 0; n < z.rows; ++n) {
    const double v = std::clamp(static_cast<double>(z(n, basis)), 0.0, 1.0);
    out.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
  }
  if (!out) throw std::runtime_error("export_responsibility_map: short write to '" + path + "'");
}

}  // namespace ema::io

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "ema/matrix.hpp"

namespace ema::io {

/// Format violation in an EMAT file; offset is the byte position of the
/// offending field.
struct TensorFormatError : std::runtime_error {
  std::size_t offset;
  TensorFormatError(const std::string& msg, std::size_t off)
      : std::runtime_error(msg + " at offset " + std::to_string(off)), offset(off) {}
};

/// Raw EMAT payload: little-endian float32 values in row-major order (last
/// dimension fastest), preceded by "EMAT", version 1, dtype 0 and the dims.
struct TensorData {
  std::vector<std::uint32_t> dims;
  std::vector<float> values;
};

TensorData read_tensor_file(const std::string& path);
void write_tensor_file(const std::string& path, const std::vector<std::uint32_t>& dims,
                       const float* values, std::size_t count);

inline void write_tensor_file(const std::string& path, const MatF& m) {
  write_tensor_file(path, {static_cast<std::uint32_t>(m.rows), static_cast<std::uint32_t>(m.cols)},
                    m.data.data(), m.data.size());
}
inline void write_tensor_file(const std::string& path, const FeatureMap<float>& fm) {
  write_tensor_file(path,
                    {static_cast<std::uint32_t>(fm.channels), static_cast<std::uint32_t>(fm.height),
                     static_cast<std::uint32_t>(fm.width)},
                    fm.data.data(), fm.data.size());
}

/// 2-dimensional tensors are pixel matrices.
MatF tensor_as_matrix(const TensorData& t);
/// 3-dimensional tensors are channel-major feature maps.
FeatureMap<float> tensor_as_feature_map(const TensorData& t);

/// Writes one responsibility column as a binary PGM (P5) image of size
/// W x H: byte = round(clamp(z, 0, 1) * 255), half away from zero.
void export_responsibility_map(const MatF& z, std::size_t basis, std::size_t h, std::size_t w,
                               const std::string& path);

}  // namespace ema::io

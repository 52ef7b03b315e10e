#pragma once

// MGTF: a minimal named-tensor container.
//
//   "MGTF" | u32 version | u32 tensor_count | tensor*
//   tensor := u32 name_bytes | name (UTF-8) | u8 dtype | u32 rank | u32 dims[rank] | payload
//
// dtype 0 is float32 and dtype 1 is uint16; the payload is row-major. Every
// multi-byte value is little-endian regardless of host byte order.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "markovgen/types.hpp"

namespace markovgen {

inline constexpr std::uint32_t kTensorFormatVersion = 1;

enum class DType : std::uint8_t { kFloat32 = 0, kUInt16 = 1 };

struct Tensor {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::variant<std::vector<float>, std::vector<std::uint16_t>> data;

  DType dtype() const;
  std::size_t element_count() const;

  const std::vector<float>& floats() const;
  const std::vector<std::uint16_t>& u16() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

struct TensorFile {
  std::uint32_t version = kTensorFormatVersion;
  std::vector<Tensor> tensors;

  const Tensor* find(std::string_view name) const;
  // Throws kMalformedFile when absent.
  const Tensor& get(std::string_view name) const;
  void add(Tensor tensor);
};

void write_tensor_file(std::ostream& out, const TensorFile& file);
TensorFile read_tensor_file(std::istream& in);
void write_tensor_file(const std::filesystem::path& path, const TensorFile& file);
TensorFile read_tensor_file(const std::filesystem::path& path);

Tensor float_tensor(std::string name, std::vector<std::uint32_t> dims, const RowMatrix& values);
Tensor label_tensor(std::string name, std::vector<std::uint32_t> dims, std::span<const Label> labels);
// Throws kMalformedFile if the tensor is not float32 of the given shape.
RowMatrix to_matrix(const Tensor& tensor, Eigen::Index rows, Eigen::Index cols);

// MRF parameters: tensors "w_spatial" [n, n], "w_label" [V, V] and
// "geometry" (uint16 [height, width, V - 1]). Weights round through float32.
TensorFile to_tensor_file(const MRFParams& params);
MRFParams mrf_params_from(const TensorFile& file);
void save_mrf_params(const std::filesystem::path& path, const MRFParams& params);
MRFParams load_mrf_params(const std::filesystem::path& path);

}  // namespace markovgen

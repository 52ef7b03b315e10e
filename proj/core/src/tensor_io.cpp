#include "markovgen/tensor_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "markovgen/error.hpp"

namespace markovgen {
namespace {

constexpr std::array<char, 4> kMagic = {'M', 'G', 'T', 'F'};
// Guards against absurd allocations when reading corrupted headers.
constexpr std::uint32_t kMaxRank = 8;
constexpr std::uint32_t kMaxNameBytes = 4096;
constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 32;

void put_u32(std::ostream& out, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                         static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(bytes, 4);
}

void put_u16(std::ostream& out, std::uint16_t v) {
  const char bytes[2] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff)};
  out.write(bytes, 2);
}

void read_exact(std::istream& in, char* dst, std::size_t count) {
  in.read(dst, static_cast<std::streamsize>(count));
  require(static_cast<std::size_t>(in.gcount()) == count, ErrorCode::kMalformedFile,
          "unexpected end of data");
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  read_exact(in, reinterpret_cast<char*>(b), 4);
  return std::uint32_t{b[0]} | (std::uint32_t{b[1]} << 8) | (std::uint32_t{b[2]} << 16) |
         (std::uint32_t{b[3]} << 24);
}

std::uint16_t get_u16(std::istream& in) {
  unsigned char b[2];
  read_exact(in, reinterpret_cast<char*>(b), 2);
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint64_t product(const std::vector<std::uint32_t>& dims) {
  std::uint64_t p = 1;
  for (auto d : dims) p *= d;
  return p;
}

}  // namespace

DType Tensor::dtype() const {
  return std::holds_alternative<std::vector<float>>(data) ? DType::kFloat32 : DType::kUInt16;
}

std::size_t Tensor::element_count() const {
  return std::visit([](const auto& v) { return v.size(); }, data);
}

const std::vector<float>& Tensor::floats() const {
  const auto* v = std::get_if<std::vector<float>>(&data);
  require(v != nullptr, ErrorCode::kMalformedFile, "tensor '" + name + "' is not float32");
  return *v;
}

const std::vector<std::uint16_t>& Tensor::u16() const {
  const auto* v = std::get_if<std::vector<std::uint16_t>>(&data);
  require(v != nullptr, ErrorCode::kMalformedFile, "tensor '" + name + "' is not uint16");
  return *v;
}

const Tensor* TensorFile::find(std::string_view name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

const Tensor& TensorFile::get(std::string_view name) const {
  const Tensor* t = find(name);
  require(t != nullptr, ErrorCode::kMalformedFile, "missing tensor '" + std::string(name) + "'");
  return *t;
}

void TensorFile::add(Tensor tensor) {
  require(find(tensor.name) == nullptr, ErrorCode::kInvalidArgument,
          "duplicate tensor name '" + tensor.name + "'");
  require(product(tensor.dims) == tensor.element_count(), ErrorCode::kDimensionMismatch,
          "tensor '" + tensor.name + "' dims disagree with payload size");
  tensors.push_back(std::move(tensor));
}

void write_tensor_file(std::ostream& out, const TensorFile& file) {
  out.write(kMagic.data(), kMagic.size());
  put_u32(out, file.version);
  put_u32(out, static_cast<std::uint32_t>(file.tensors.size()));
  for (const auto& t : file.tensors) {
    require(product(t.dims) == t.element_count(), ErrorCode::kDimensionMismatch,
            "tensor '" + t.name + "' dims disagree with payload size");
    put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    out.put(static_cast<char>(t.dtype()));
    put_u32(out, static_cast<std::uint32_t>(t.dims.size()));
    for (auto d : t.dims) put_u32(out, d);
    if (t.dtype() == DType::kFloat32) {
      for (float f : t.floats()) put_u32(out, std::bit_cast<std::uint32_t>(f));
    } else {
      for (auto v : t.u16()) put_u16(out, v);
    }
  }
  require(static_cast<bool>(out), ErrorCode::kIo, "write failed");
}

TensorFile read_tensor_file(std::istream& in) {
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  require(in.gcount() == 4 && magic == kMagic, ErrorCode::kMalformedFile, "bad magic bytes");
  TensorFile file;
  file.version = get_u32(in);
  require(file.version == kTensorFormatVersion, ErrorCode::kVersionMismatch,
          "file version " + std::to_string(file.version) + ", reader supports " +
              std::to_string(kTensorFormatVersion));
  const std::uint32_t count = get_u32(in);
  for (std::uint32_t k = 0; k < count; ++k) {
    Tensor t;
    const std::uint32_t name_len = get_u32(in);
    require(name_len <= kMaxNameBytes, ErrorCode::kMalformedFile, "tensor name too long");
    t.name.resize(name_len);
    read_exact(in, t.name.data(), name_len);
    char dtype = 0;
    read_exact(in, &dtype, 1);
    const std::uint32_t rank = get_u32(in);
    require(rank <= kMaxRank, ErrorCode::kMalformedFile, "tensor rank too large");
    t.dims.resize(rank);
    for (auto& d : t.dims) d = get_u32(in);
    const std::uint64_t elements = product(t.dims);
    require(elements <= kMaxElements, ErrorCode::kMalformedFile, "tensor too large");
    if (dtype == static_cast<char>(DType::kFloat32)) {
      std::vector<float> values(elements);
      for (auto& f : values) f = std::bit_cast<float>(get_u32(in));
      t.data = std::move(values);
    } else if (dtype == static_cast<char>(DType::kUInt16)) {
      std::vector<std::uint16_t> values(elements);
      for (auto& v : values) v = get_u16(in);
      t.data = std::move(values);
    } else {
      fail(ErrorCode::kMalformedFile, "unknown dtype byte " + std::to_string(int(dtype)));
    }
    require(file.find(t.name) == nullptr, ErrorCode::kMalformedFile,
            "duplicate tensor name '" + t.name + "'");
    file.tensors.push_back(std::move(t));
  }
  return file;
}

void write_tensor_file(const std::filesystem::path& path, const TensorFile& file) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot open " + path.string() + " for writing");
  write_tensor_file(out, file);
}

TensorFile read_tensor_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open " + path.string());
  return read_tensor_file(in);
}

Tensor float_tensor(std::string name, std::vector<std::uint32_t> dims, const RowMatrix& values) {
  std::vector<float> data(static_cast<std::size_t>(values.size()));
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    data[static_cast<std::size_t>(i)] = static_cast<float>(values.data()[i]);
  }
  return {std::move(name), std::move(dims), std::move(data)};
}

Tensor label_tensor(std::string name, std::vector<std::uint32_t> dims, std::span<const Label> labels) {
  return {std::move(name), std::move(dims), std::vector<std::uint16_t>(labels.begin(), labels.end())};
}

RowMatrix to_matrix(const Tensor& tensor, Eigen::Index rows, Eigen::Index cols) {
  const auto& values = tensor.floats();
  require(tensor.dims.size() == 2 && tensor.dims[0] == rows && tensor.dims[1] == cols,
          ErrorCode::kMalformedFile,
          "tensor '" + tensor.name + "' expected shape " + std::to_string(rows) + "x" +
              std::to_string(cols));
  RowMatrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = values[static_cast<std::size_t>(i)];
  return m;
}

TensorFile to_tensor_file(const MRFParams& params) {
  validate(params);
  const auto n = static_cast<std::uint32_t>(params.geometry.n());
  const auto v = static_cast<std::uint32_t>(params.vocab.size);
  TensorFile file;
  const std::vector<Label> shape = {static_cast<Label>(params.geometry.height),
                                    static_cast<Label>(params.geometry.width),
                                    static_cast<Label>(params.vocab.size - 1)};
  file.add(label_tensor("geometry", {3}, shape));
  file.add(float_tensor("w_spatial", {n, n}, params.w_spatial));
  file.add(float_tensor("w_label", {v, v}, params.w_label));
  return file;
}

MRFParams mrf_params_from(const TensorFile& file) {
  const auto& shape = file.get("geometry").u16();
  require(shape.size() == 3, ErrorCode::kMalformedFile, "geometry tensor must hold 3 values");
  MRFParams params;
  params.geometry = {shape[0], shape[1]};
  params.vocab = {shape[2] + 1};
  params.w_spatial = to_matrix(file.get("w_spatial"), params.geometry.n(), params.geometry.n());
  params.w_label = to_matrix(file.get("w_label"), params.vocab.size, params.vocab.size);
  validate(params);
  return params;
}

void save_mrf_params(const std::filesystem::path& path, const MRFParams& params) {
  write_tensor_file(path, to_tensor_file(params));
}

MRFParams load_mrf_params(const std::filesystem::path& path) {
  return mrf_params_from(read_tensor_file(path));
}

}  // namespace markovgen

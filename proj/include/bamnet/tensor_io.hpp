#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "bamnet/tensor.hpp"

namespace bamnet {

// TNSR record layout (all integers little-endian):
//   "TNSR" | u8 version (1) | u8 dtype code | u8 rank | rank x u64 extents | payload
// The named container prefixes an index:
//   "TNSRPACK" | u8 version (1) | u32 count | count x {u16 name_len, name, u64 offset, u64 size}
//   followed by the concatenated TNSR records (offsets relative to the first one).

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using AnyTensor = std::variant<Tensor<float>, Tensor<double>, Tensor<std::uint8_t>>;
using NamedTensors = std::vector<std::pair<std::string, AnyTensor>>;

DType dtype_of(const AnyTensor& t);
const Shape& shape_of(const AnyTensor& t);

void write_tensor(std::ostream& out, const AnyTensor& tensor);
AnyTensor read_tensor(std::istream& in);

std::string encode_tensor(const AnyTensor& tensor);
AnyTensor decode_tensor(const std::string& bytes);

void save_tensor(const std::filesystem::path& path, const AnyTensor& tensor);
AnyTensor load_tensor(const std::filesystem::path& path);

void save_container(const std::filesystem::path& path, const NamedTensors& tensors);
NamedTensors load_container(const std::filesystem::path& path);

/// Extracts a tensor of element type T, rejecting any other stored dtype.
template <typename T>
Tensor<T> expect_dtype(const AnyTensor& t, const std::string& name) {
    if (const auto* p = std::get_if<Tensor<T>>(&t)) return *p;
    throw FormatError("tensor '" + name + "' has dtype " + dtype_name(dtype_of(t)) + ", expected " +
                      dtype_name(DTypeOf<T>::value));
}

}  // namespace bamnet

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace cgdm {

/// Named f64 tensor as stored in a "CGDM v1" container. Values are row-major
/// with respect to `shape`.
struct Tensor {
  std::string name;
  std::vector<std::int64_t> shape;
  std::vector<double> values;

  std::int64_t element_count() const;
};

/// CGDM v1: one JSON header line
///   {"magic":"CGDM","version":1,"tensors":[{"name":...,"shape":[...]},...]}
/// then the tensors' little-endian f64 payloads concatenated in header order.
/// The payload length must match the shape table exactly.
std::string encode_container(const std::vector<Tensor>& tensors);
std::vector<Tensor> decode_container(std::string_view bytes);

void write_container(const std::filesystem::path& path, const std::vector<Tensor>& tensors);
std::vector<Tensor> read_container(const std::filesystem::path& path);

/// Total element count implied by a container header, without reading the
/// payload. Throws FormatError for a malformed header.
std::int64_t container_element_count(std::string_view bytes);

const Tensor& find_tensor(const std::vector<Tensor>& tensors, std::string_view name);

}  // namespace cgdm

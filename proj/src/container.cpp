#include "cgdm/container.hpp"

#include "cgdm/errors.hpp"
#include "cgdm/io.hpp"

#include <nlohmann/json.hpp>

#include <numeric>

namespace cgdm {

using ordered_json = nlohmann::ordered_json;

namespace {

constexpr const char* kMagic = "CGDM";
constexpr int kVersion = 1;

struct Header {
  std::vector<Tensor> tensors;  // shapes only
  std::size_t payload_offset = 0;
};

Header parse_header(std::string_view bytes) {
  const std::size_t newline = bytes.find('\n');
  if (newline == std::string_view::npos) throw FormatError("CGDM: missing header line");
  ordered_json header;
  try {
    header = ordered_json::parse(bytes.substr(0, newline));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("CGDM: header is not JSON: ") + e.what());
  }
  if (!header.is_object() || header.value("magic", "") != kMagic) {
    throw FormatError("CGDM: bad magic");
  }
  if (!header.contains("version") || !header["version"].is_number_integer() ||
      header["version"].get<int>() != kVersion) {
    throw FormatError("CGDM: unsupported version");
  }
  if (!header.contains("tensors") || !header["tensors"].is_array()) {
    throw FormatError("CGDM: missing tensor table");
  }
  Header out;
  for (const auto& entry : header["tensors"]) {
    if (!entry.is_object() || !entry.contains("name") || !entry["name"].is_string() ||
        !entry.contains("shape") || !entry["shape"].is_array()) {
      throw FormatError("CGDM: malformed tensor entry");
    }
    Tensor t;
    t.name = entry["name"].get<std::string>();
    for (const auto& d : entry["shape"]) {
      if (!d.is_number_integer() || d.get<std::int64_t>() < 0) {
        throw FormatError("CGDM: bad shape for tensor " + t.name);
      }
      t.shape.push_back(d.get<std::int64_t>());
    }
    out.tensors.push_back(std::move(t));
  }
  out.payload_offset = newline + 1;
  return out;
}

}  // namespace

std::int64_t Tensor::element_count() const {
  return std::accumulate(shape.begin(), shape.end(), std::int64_t{1}, std::multiplies<>());
}

std::string encode_container(const std::vector<Tensor>& tensors) {
  ordered_json table = ordered_json::array();
  for (const auto& t : tensors) {
    if (t.element_count() != static_cast<std::int64_t>(t.values.size())) {
      throw FormatError("CGDM: tensor " + t.name + " has " + std::to_string(t.values.size()) +
                        " values for its shape");
    }
    table.push_back(ordered_json{{"name", t.name}, {"shape", t.shape}});
  }
  ordered_json header{{"magic", kMagic}, {"version", kVersion}, {"tensors", std::move(table)}};
  std::string out = header.dump();
  out += '\n';
  for (const auto& t : tensors)
    for (double v : t.values) append_f64_le(out, v);
  return out;
}

std::vector<Tensor> decode_container(std::string_view bytes) {
  Header header = parse_header(bytes);
  std::int64_t total = 0;
  for (const auto& t : header.tensors) total += t.element_count();
  const std::size_t expected = header.payload_offset + static_cast<std::size_t>(total) * 8;
  if (bytes.size() != expected) {
    throw FormatError("CGDM: payload has " + std::to_string(bytes.size() - header.payload_offset) +
                      " bytes, shape table needs " + std::to_string(total * 8));
  }
  const char* cursor = bytes.data() + header.payload_offset;
  for (auto& t : header.tensors) {
    t.values.resize(static_cast<std::size_t>(t.element_count()));
    for (double& v : t.values) {
      v = read_f64_le(cursor);
      cursor += 8;
    }
  }
  return std::move(header.tensors);
}

void write_container(const std::filesystem::path& path, const std::vector<Tensor>& tensors) {
  write_file(path, encode_container(tensors));
}

std::vector<Tensor> read_container(const std::filesystem::path& path) {
  return decode_container(read_file(path));
}

std::int64_t container_element_count(std::string_view bytes) {
  const Header header = parse_header(bytes);
  std::int64_t total = 0;
  for (const auto& t : header.tensors) total += t.element_count();
  return total;
}

const Tensor& find_tensor(const std::vector<Tensor>& tensors, std::string_view name) {
  for (const auto& t : tensors)
    if (t.name == name) return t;
  throw FormatError("CGDM: missing tensor " + std::string(name));
}

}  // namespace cgdm

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace cgdm {

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

// Little-endian f64 payload helpers shared by the binary containers.
void append_f64_le(std::string& out, double value);
double read_f64_le(const char* bytes);

std::string format_double(double value);  // %.17g

}  // namespace cgdm

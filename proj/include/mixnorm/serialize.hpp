#pragma once

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "mixnorm/tensor.hpp"

namespace mixnorm {

// Versioned binary tensor blob: magic "MXN1", little-endian u32 rank and
// extents, then raw 32-bit floats in row-major order.
std::vector<std::uint8_t> tensor_to_blob(const TensorF& t);
TensorF tensor_from_blob(const std::vector<std::uint8_t>& blob);

void save_tensor(const TensorF& t, const std::filesystem::path& path);
TensorF load_tensor(const std::filesystem::path& path);

// One line per outermost index, values comma-separated. Inspection only.
void tensor_to_csv(const TensorF& t, std::ostream& os);

std::string base64_encode(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> base64_decode(const std::string& text);

// Format a float/double so that re-parsing recovers the exact value.
std::string format_float(float v);
std::string format_double(double v);

// Write `content` to a temp name next to `path`, then rename into place so
// the final name never holds a partial file.
void write_file_atomic(const std::filesystem::path& path,
                       const std::string& content);

}  // namespace mixnorm

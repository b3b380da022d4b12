#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "blobforge/field.hpp"
#include "blobforge/raster.hpp"

namespace blobforge {

// ---- PNG ------------------------------------------------------------------

std::string encode_png(const Raster& r);
// Decodes to 8-bit gray (1 channel) or RGB (3 channels); alpha is dropped.
Raster decode_png(std::string_view bytes);
Raster read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Raster& r);

// ---- Raw field format -----------------------------------------------------
//
//   "BLOBF1\n" "<W> <H> <kind>\n" followed by W*H little-endian float32
//   values in row-major order.

std::string encode_field(const FieldMap& f);
FieldMap decode_field(std::string_view bytes);
void write_field(const std::filesystem::path& path, const FieldMap& f);
FieldMap read_field(const std::filesystem::path& path);

// ---- Previews -------------------------------------------------------------

// 8-bit grayscale with value round(255 * v / v_max); all zero when v_max <= 0.
struct Preview {
  Raster image;
  double v_max = 0.0;
};
Preview make_preview(const FieldMap& f);
nlohmann::json preview_sidecar(const Preview& p, const FieldMap& f);

// ---- Files ----------------------------------------------------------------

std::string read_file(const std::filesystem::path& path);
// Writes to a temporary sibling and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view data);

// Uncompressed POSIX ustar archive with zeroed timestamps and ownership, so
// identical inputs produce identical bytes.
std::string make_tar(const std::vector<std::pair<std::string, std::string>>& files);
std::vector<std::pair<std::string, std::string>> read_tar(std::string_view archive);

}  // namespace blobforge

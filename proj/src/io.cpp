#include "blobforge/io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace blobforge {

namespace fs = std::filesystem;

// ---- PNG ------------------------------------------------------------------

std::string encode_png(const Raster& r) {
  if (r.empty() || (r.channels != 1 && r.channels != 3)) {
    throw ValidationError("PNG export needs a non-empty gray or RGB raster");
  }
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(r.width);
  image.height = static_cast<png_uint_32>(r.height);
  image.format = r.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;

  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, r.pixels.data(), 0,
                                 nullptr)) {
    throw IoError(std::string("PNG encode failed: ") + image.message);
  }
  std::string out(size, '\0');
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, r.pixels.data(),
                                 0, nullptr)) {
    throw IoError(std::string("PNG encode failed: ") + image.message);
  }
  out.resize(size);
  return out;
}

Raster decode_png(std::string_view bytes) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw IoError(std::string("PNG decode failed: ") + image.message);
  }
  const bool color = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
  image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  Raster r = Raster::zeros(static_cast<int>(image.width),
                           static_cast<int>(image.height), color ? 3 : 1);
  if (!png_image_finish_read(&image, nullptr, r.pixels.data(), 0, nullptr)) {
    png_image_free(&image);
    throw IoError(std::string("PNG decode failed: ") + image.message);
  }
  return r;
}

Raster read_png(const fs::path& path) { return decode_png(read_file(path)); }

void write_png(const fs::path& path, const Raster& r) {
  write_file_atomic(path, encode_png(r));
}

// ---- Raw field format -----------------------------------------------------

namespace {

constexpr std::string_view kFieldMagic = "BLOBF1\n";

void append_f32_le(std::string& out, float v) {
  auto bits = std::bit_cast<std::uint32_t>(v);
  for (int i = 0; i < 4; ++i) {
    out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFFu));
  }
}

float read_f32_le(const char* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) {
    bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i]))
            << (8 * i);
  }
  return std::bit_cast<float>(bits);
}

}  // namespace

std::string encode_field(const FieldMap& f) {
  std::string out(kFieldMagic);
  out += std::to_string(f.width) + " " + std::to_string(f.height) + " " +
         std::string(to_string(f.kind)) + "\n";
  out.reserve(out.size() + 4 * f.values.size());
  for (double v : f.values) append_f32_le(out, static_cast<float>(v));
  return out;
}

FieldMap decode_field(std::string_view bytes) {
  if (bytes.substr(0, kFieldMagic.size()) != kFieldMagic) {
    throw IoError("not a BLOBF1 field");
  }
  const std::size_t header_end = bytes.find('\n', kFieldMagic.size());
  if (header_end == std::string_view::npos) {
    throw IoError("truncated BLOBF1 header");
  }
  std::istringstream header(std::string(
      bytes.substr(kFieldMagic.size(), header_end - kFieldMagic.size())));
  int width = 0;
  int height = 0;
  std::string kind;
  if (!(header >> width >> height >> kind) || width < 1 || height < 1) {
    throw IoError("malformed BLOBF1 header");
  }
  FieldMap f = FieldMap::filled(width, height, field_kind_from_string(kind), 0.0);
  const std::string_view payload = bytes.substr(header_end + 1);
  if (payload.size() != 4 * f.values.size()) {
    throw IoError("BLOBF1 payload size does not match header");
  }
  for (std::size_t i = 0; i < f.values.size(); ++i) {
    f.values[i] = read_f32_le(payload.data() + 4 * i);
  }
  return f;
}

void write_field(const fs::path& path, const FieldMap& f) {
  write_file_atomic(path, encode_field(f));
}

FieldMap read_field(const fs::path& path) { return decode_field(read_file(path)); }

// ---- Previews -------------------------------------------------------------

Preview make_preview(const FieldMap& f) {
  Preview p;
  p.v_max = f.max_value();
  p.image = Raster::zeros(f.width, f.height, 1);
  if (p.v_max > 0.0) {
    for (std::size_t i = 0; i < f.values.size(); ++i) {
      const double v = std::clamp(f.values[i] / p.v_max, 0.0, 1.0);
      p.image.pixels[i] = static_cast<std::uint8_t>(std::lround(255.0 * v));
    }
  }
  return p;
}

nlohmann::json preview_sidecar(const Preview& p, const FieldMap& f) {
  return {{"width", f.width},
          {"height", f.height},
          {"kind", std::string(to_string(f.kind))},
          {"v_max", p.v_max}};
}

// ---- Files ----------------------------------------------------------------

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("cannot read " + path.string());
  return std::move(ss).str();
}

void write_file_atomic(const fs::path& path, std::string_view data) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) throw IoError("short write to " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename into " + path.string() + ": " + ec.message());
}

namespace {

constexpr std::size_t kBlock = 512;

void put_octal(char* field, std::size_t width, std::uint64_t value) {
  // width - 1 digits followed by NUL.
  std::string digits(width - 1, '0');
  for (std::size_t i = width - 1; i-- > 0 && value != 0;) {
    digits[i] = static_cast<char>('0' + (value & 7u));
    value >>= 3;
  }
  std::memcpy(field, digits.data(), width - 1);
  field[width - 1] = '\0';
}

std::uint64_t parse_octal(const char* field, std::size_t width) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < width && field[i] >= '0' && field[i] <= '7'; ++i) {
    v = (v << 3) | static_cast<std::uint64_t>(field[i] - '0');
  }
  return v;
}

}  // namespace

std::string make_tar(const std::vector<std::pair<std::string, std::string>>& files) {
  std::string out;
  for (const auto& [name, data] : files) {
    if (name.size() >= 100) throw ValidationError("tar member name too long: " + name);
    char header[kBlock] = {};
    std::memcpy(header, name.data(), name.size());
    put_octal(header + 100, 8, 0644);
    put_octal(header + 108, 8, 0);
    put_octal(header + 116, 8, 0);
    put_octal(header + 124, 12, data.size());
    put_octal(header + 136, 12, 0);
    std::memset(header + 148, ' ', 8);
    header[156] = '0';
    std::memcpy(header + 257, "ustar", 6);
    std::memcpy(header + 263, "00", 2);
    unsigned sum = 0;
    for (char c : header) sum += static_cast<unsigned char>(c);
    put_octal(header + 148, 7, sum);
    header[155] = ' ';
    out.append(header, kBlock);
    out += data;
    out.append((kBlock - data.size() % kBlock) % kBlock, '\0');
  }
  out.append(2 * kBlock, '\0');
  return out;
}

std::vector<std::pair<std::string, std::string>> read_tar(std::string_view archive) {
  std::vector<std::pair<std::string, std::string>> files;
  std::size_t pos = 0;
  while (pos + kBlock <= archive.size()) {
    const char* header = archive.data() + pos;
    if (header[0] == '\0') break;
    std::string name(header, strnlen(header, 100));
    const std::uint64_t size = parse_octal(header + 124, 12);
    pos += kBlock;
    if (pos + size > archive.size()) throw IoError("truncated tar member " + name);
    files.emplace_back(std::move(name), std::string(archive.substr(pos, size)));
    pos += (size + kBlock - 1) / kBlock * kBlock;
  }
  return files;
}

}  // namespace blobforge

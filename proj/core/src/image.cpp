// SPDX-License-Identifier: Apache-2.0
#include "vlmoe/image.hpp"

#include <cstring>
#include <fstream>

#include "vlmoe/errors.hpp"

namespace vlmoe {

namespace {
constexpr char kMagic[4] = {'V', 'I', 'M', 'G'};
constexpr uint32_t kVersion = 1;

void write_u32(std::ostream& os, uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

uint32_t read_u32(std::istream& is, const char* what) {
  uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!is) throw DataError(std::string("image file truncated at ") + what);
  return v;
}
}  // namespace

void save_image(const Image& img, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open for writing: " + path);
  os.write(kMagic, 4);
  write_u32(os, kVersion);
  write_u32(os, static_cast<uint32_t>(img.height));
  write_u32(os, static_cast<uint32_t>(img.width));
  write_u32(os, static_cast<uint32_t>(img.channels));
  os.write(reinterpret_cast<const char*>(img.px.data()),
           static_cast<std::streamsize>(img.px.size() * sizeof(double)));
  if (!os) throw DataError("write failed: " + path);
}

Image load_image(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open image: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw DataError("not a VIMG file: " + path);
  const uint32_t version = read_u32(is, "version");
  if (version != kVersion)
    throw DataError("unsupported VIMG version " + std::to_string(version) +
                    " in " + path);
  const int height = static_cast<int>(read_u32(is, "height"));
  const int width = static_cast<int>(read_u32(is, "width"));
  const int channels = static_cast<int>(read_u32(is, "channels"));
  Image img(height, width, channels);
  is.read(reinterpret_cast<char*>(img.px.data()),
          static_cast<std::streamsize>(img.px.size() * sizeof(double)));
  if (!is) throw DataError("image file truncated: " + path);
  return img;
}

}  // namespace vlmoe

#include "uamd/png_io.hpp"

#include <png.h>

#include <cmath>
#include <cstring>
#include <fstream>

namespace uamd {

namespace {

struct MemReader {
  const std::vector<uint8_t>* bytes;
  size_t pos = 0;
};

void read_cb(png_structp png, png_bytep out, png_size_t len) {
  auto* r = static_cast<MemReader*>(png_get_io_ptr(png));
  if (r->pos + len > r->bytes->size()) png_error(png, "truncated PNG stream");
  std::memcpy(out, r->bytes->data() + r->pos, len);
  r->pos += len;
}

void write_cb(png_structp png, png_bytep data, png_size_t len) {
  auto* out = static_cast<std::vector<uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + len);
}

void flush_cb(png_structp) {}

struct Decoded {
  size_t h = 0, w = 0;
  int bit_depth = 0, color_type = 0, channels = 0;
  std::vector<uint8_t> rows;  // raw row data, big-endian for 16-bit
};

Decoded decode_png(const std::vector<uint8_t>& bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0)
    throw PngError("not a PNG stream");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  Decoded d;
  std::vector<png_bytep> row_ptrs;
  MemReader reader{&bytes};
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw PngError("PNG decode failed");
  }
  png_set_read_fn(png, &reader, read_cb);
  png_read_info(png, info);
  d.w = png_get_image_width(png, info);
  d.h = png_get_image_height(png, info);
  d.bit_depth = png_get_bit_depth(png, info);
  d.color_type = png_get_color_type(png, info);
  d.channels = png_get_channels(png, info);
  size_t rowbytes = png_get_rowbytes(png, info);
  d.rows.resize(rowbytes * d.h);
  row_ptrs.resize(d.h);
  for (size_t y = 0; y < d.h; ++y) row_ptrs[y] = d.rows.data() + y * rowbytes;
  png_read_image(png, row_ptrs.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return d;
}

std::vector<uint8_t> encode_png(size_t h, size_t w, int bit_depth, int color_type,
                                const std::vector<uint8_t>& rows, size_t rowbytes) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  std::vector<uint8_t> out;
  std::vector<png_bytep> row_ptrs(h);
  for (size_t y = 0; y < h; ++y)
    row_ptrs[y] = const_cast<png_bytep>(rows.data() + y * rowbytes);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw PngError("PNG encode failed");
  }
  png_set_write_fn(png, &out, write_cb, flush_cb);
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), bit_depth,
               color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, row_ptrs.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

}  // namespace

DepthMap decode_depth_png(const std::vector<uint8_t>& bytes) {
  Decoded d = decode_png(bytes);
  if (d.bit_depth != 16 || d.color_type != PNG_COLOR_TYPE_GRAY || d.channels != 1)
    throw PngError("depth PNG must be 16-bit single-channel grayscale, got depth " +
                   std::to_string(d.bit_depth) + " channels " + std::to_string(d.channels));
  DepthMap map = DepthMap::zeros(d.h, d.w);
  for (size_t y = 0; y < d.h; ++y)
    for (size_t x = 0; x < d.w; ++x) {
      const uint8_t* p = d.rows.data() + (y * d.w + x) * 2;  // network byte order
      uint16_t stored = static_cast<uint16_t>((p[0] << 8) | p[1]);
      map.at(y, x) = stored == 0 ? 0.f : static_cast<float>(stored) / 256.f;
    }
  return map;
}

std::vector<uint8_t> encode_depth_png(const DepthMap& map) {
  std::vector<uint8_t> rows(map.height * map.width * 2, 0);
  for (size_t y = 0; y < map.height; ++y)
    for (size_t x = 0; x < map.width; ++x) {
      float m = map.at(y, x);
      uint16_t stored = 0;
      if (m > 0.f) {
        if (m >= 256.f) throw PngError("encode_depth_png: depth " + std::to_string(m) +
                                       " m exceeds 16-bit range");
        stored = static_cast<uint16_t>(std::lround(m * 256.f));
        if (stored == 0) stored = 1;  // do not collapse tiny valid depths to invalid
      }
      uint8_t* p = rows.data() + (y * map.width + x) * 2;
      p[0] = static_cast<uint8_t>(stored >> 8);
      p[1] = static_cast<uint8_t>(stored & 0xff);
    }
  return encode_png(map.height, map.width, 16, PNG_COLOR_TYPE_GRAY, rows, map.width * 2);
}

Image decode_rgb_png(const std::vector<uint8_t>& bytes) {
  Decoded d = decode_png(bytes);
  if (d.bit_depth != 8 || d.color_type != PNG_COLOR_TYPE_RGB || d.channels != 3)
    throw PngError("image PNG must be 8-bit RGB");
  Image img = Image::zeros(d.h, d.w);
  for (size_t y = 0; y < d.h; ++y)
    for (size_t x = 0; x < d.w; ++x)
      for (size_t c = 0; c < 3; ++c)
        img.at(c, y, x) = static_cast<float>(d.rows[(y * d.w + x) * 3 + c]) / 255.f;
  return img;
}

std::vector<uint8_t> encode_rgb_png(const Image& img) {
  std::vector<uint8_t> rows(img.height * img.width * 3);
  for (size_t y = 0; y < img.height; ++y)
    for (size_t x = 0; x < img.width; ++x)
      for (size_t c = 0; c < 3; ++c) {
        float v = std::clamp(img.at(c, y, x), 0.f, 1.f);
        rows[(y * img.width + x) * 3 + c] = static_cast<uint8_t>(std::lround(v * 255.f));
      }
  return encode_png(img.height, img.width, 8, PNG_COLOR_TYPE_RGB, rows, img.width * 3);
}

std::vector<uint8_t> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw PngError("cannot open " + path);
  return std::vector<uint8_t>(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, const std::vector<uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw PngError("cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw PngError("write failed for " + path);
}

}  // namespace uamd

#include "image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

namespace solid::image {

namespace {

struct ReadCursor {
  std::string_view data;
  std::size_t pos = 0;
};

void write_cb(png_structp png, png_bytep data, png_size_t len) {
  auto* out = static_cast<std::string*>(png_get_io_ptr(png));
  out->append(reinterpret_cast<const char*>(data), len);
}

void flush_cb(png_structp) {}

void read_cb(png_structp png, png_bytep data, png_size_t len) {
  auto* cur = static_cast<ReadCursor*>(png_get_io_ptr(png));
  if (len > cur->data.size() - cur->pos) png_error(png, "truncated");
  std::memcpy(data, cur->data.data() + cur->pos, len);
  cur->pos += len;
}

[[noreturn]] void error_cb(png_structp, png_const_charp msg) {
  throw Error(ErrorKind::Data, std::string("png: ") + msg);
}

void warn_cb(png_structp, png_const_charp) {}

}  // namespace

Range value_range(const Field& f) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (double v : f.data) {
    if (!std::isfinite(v)) continue;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (!(lo <= hi)) return {0.0, 1.0};
  if (lo == hi) return {lo - 0.5, hi + 0.5};
  return {lo, hi};
}

std::string encode_png16(const Field& f, Range r) {
  require(f.rows > 0 && f.cols > 0, ErrorKind::Shape, "png: empty field");
  require(r.hi > r.lo, ErrorKind::Validation, "png: empty value range");
  std::vector<png_byte> rows(std::size_t(f.rows) * f.cols * 2);
  for (std::size_t i = 0; i < f.size(); ++i) {
    const double t = std::isfinite(f[i]) ? std::clamp((f[i] - r.lo) / (r.hi - r.lo), 0.0, 1.0) : 0.0;
    const auto g = std::uint16_t(std::lround(t * 65535.0));
    rows[2 * i] = png_byte(g >> 8);  // PNG stores 16-bit samples big-endian
    rows[2 * i + 1] = png_byte(g & 0xFF);
  }
  std::string out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, error_cb, warn_cb);
  require(png != nullptr, ErrorKind::Data, "png: cannot create writer");
  png_infop info = png_create_info_struct(png);
  try {
    png_set_write_fn(png, &out, write_cb, flush_cb);
    png_set_IHDR(png, info, png_uint_32(f.cols), png_uint_32(f.rows), 16, PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < f.rows; ++y) png_write_row(png, rows.data() + std::size_t(y) * f.cols * 2);
    png_write_end(png, nullptr);
  } catch (...) {
    png_destroy_write_struct(&png, &info);
    throw;
  }
  png_destroy_write_struct(&png, &info);
  return out;
}

Field decode_png16(std::string_view bytes, Range r) {
  ReadCursor cur{bytes, 0};
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, error_cb, warn_cb);
  require(png != nullptr, ErrorKind::Data, "png: cannot create reader");
  png_infop info = png_create_info_struct(png);
  Field out;
  try {
    png_set_read_fn(png, &cur, read_cb);
    png_read_info(png, info);
    const auto w = int(png_get_image_width(png, info)), h = int(png_get_image_height(png, info));
    if (png_get_bit_depth(png, info) != 16 || png_get_color_type(png, info) != PNG_COLOR_TYPE_GRAY) {
      fail(ErrorKind::Data, "png: expected 16-bit grayscale");
    }
    std::vector<png_byte> row(std::size_t(w) * 2);
    out = Field(h, w);
    for (int y = 0; y < h; ++y) {
      png_read_row(png, row.data(), nullptr);
      for (int x = 0; x < w; ++x) {
        const unsigned g = (unsigned(row[2 * std::size_t(x)]) << 8) | row[2 * std::size_t(x) + 1];
        out(y, x) = r.lo + (r.hi - r.lo) * double(g) / 65535.0;
      }
    }
  } catch (...) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

nlohmann::json colorbar(Range r, const std::string& quantity, const std::string& units) {
  return {{"quantity", quantity},
          {"units", units},
          {"min", r.lo},
          {"max", r.hi},
          {"bit_depth", 16},
          {"mapping", "value = min + (max - min) * gray / 65535"}};
}

Field bar_chart(const std::vector<double>& values, int height, int bar_width) {
  require(!values.empty(), ErrorKind::Validation, "bar_chart: no values");
  require(height >= 2 && bar_width >= 2, ErrorKind::Validation, "bar_chart: raster too small");
  double top = 0.0;
  for (double v : values) top = std::max(top, std::isfinite(v) ? v : 0.0);
  Field img(height, int(values.size()) * bar_width, 0.0);
  for (std::size_t b = 0; b < values.size(); ++b) {
    const double frac = top > 0.0 && std::isfinite(values[b]) ? std::max(values[b], 0.0) / top : 0.0;
    const int h = int(std::lround(frac * height));
    for (int y = height - h; y < height; ++y)
      for (int x = 1; x < bar_width - 1; ++x) img(y, int(b) * bar_width + x) = 1.0;
  }
  return img;
}

}  // namespace solid::image

#include "vitloss/image_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

namespace vitloss::image {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.string().c_str(), mode));
  if (!f) throw IoError("cannot open '" + path.string() + "'");
  return f;
}

Tensor<double> read_png(const std::filesystem::path& path) {
  FilePtr file = open_file(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("libpng initialisation failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("libpng initialisation failed");
  }
  // Everything libpng touches after setjmp lives in these buffers so that a
  // longjmp out of libpng leaks nothing.
  std::vector<png_byte> pixels;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("'" + path.string() + "' is not a readable PNG");
  }
  png_init_io(png, file.get());
  png_read_info(png, info);

  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color & PNG_COLOR_MASK_ALPHA || png_get_valid(png, info, PNG_INFO_tRNS)) {
    png_set_strip_alpha(png);
  }
  png_read_update_info(png, info);

  const png_uint_32 width = png_get_image_width(png, info);
  const png_uint_32 height = png_get_image_height(png, info);
  const int channels = png_get_channels(png, info);
  const int out_depth = png_get_bit_depth(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  pixels.resize(rowbytes * height);
  rows.resize(height);
  for (png_uint_32 y = 0; y < height; ++y) rows[y] = pixels.data() + y * rowbytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  const std::size_t count = static_cast<std::size_t>(width) * height * channels;
  std::vector<double> values(count);
  if (out_depth == 16) {
    for (std::size_t i = 0; i < count; ++i) {
      values[i] = static_cast<double>((pixels[2 * i] << 8) | pixels[2 * i + 1]) / 65535.0;
    }
  } else {
    for (std::size_t i = 0; i < count; ++i) values[i] = static_cast<double>(pixels[i]) / 255.0;
  }
  return Tensor<double>({height, width, static_cast<std::size_t>(channels)}, std::move(values));
}

// Reads one whitespace/comment separated header integer.
std::size_t pnm_int(std::istream& in, const std::string& name) {
  int c = in.get();
  for (;;) {
    if (c == '#') {
      while (c != '\n' && c != EOF) c = in.get();
    } else if (std::isspace(c)) {
      c = in.get();
    } else {
      break;
    }
  }
  if (!std::isdigit(c)) throw IoError("'" + name + "' has a malformed PNM header");
  std::size_t v = 0;
  while (std::isdigit(c)) {
    v = v * 10 + static_cast<std::size_t>(c - '0');
    if (v > (1u << 24)) throw IoError("'" + name + "' has an implausible PNM header value");
    c = in.get();
  }
  return v;  // the single whitespace after the last field has been consumed
}

Tensor<double> read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  char magic[2];
  in.read(magic, 2);
  const std::size_t channels = magic[1] == '5' ? 1 : 3;
  const std::size_t width = pnm_int(in, path.string());
  const std::size_t height = pnm_int(in, path.string());
  const std::size_t maxval = pnm_int(in, path.string());
  if (width == 0 || height == 0 || maxval == 0 || maxval > 65535) {
    throw IoError("'" + path.string() + "' has an unsupported PNM header");
  }
  const std::size_t bytes_per = maxval > 255 ? 2 : 1;
  const std::size_t count = width * height * channels;
  std::vector<unsigned char> raw(count * bytes_per);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size())) {
    throw IoError("'" + path.string() + "' is truncated");
  }
  std::vector<double> values(count);
  for (std::size_t i = 0; i < count; ++i) {
    const unsigned v = bytes_per == 2 ? (raw[2 * i] << 8) | raw[2 * i + 1] : raw[i];
    if (v > maxval) throw IoError("'" + path.string() + "' has a sample above maxval");
    values[i] = static_cast<double>(v) / static_cast<double>(maxval);
  }
  return Tensor<double>({height, width, channels}, std::move(values));
}

unsigned quantize(double v, unsigned maxval) {
  const double c = std::min(1.0, std::max(0.0, v));
  return static_cast<unsigned>(std::lround(c * maxval));
}

void check_image(const Tensor<double>& image) {
  require_rank(image, 3, "image");
  const std::size_t c = image.dim(2);
  if (c != 1 && c != 3) throw DimensionError("images must have 1 or 3 channels");
}

}  // namespace

Tensor<double> read(const std::filesystem::path& path) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw IoError("cannot open '" + path.string() + "'");
  unsigned char sig[8] = {};
  probe.read(reinterpret_cast<char*>(sig), 8);
  const auto got = probe.gcount();
  probe.close();
  if (got == 8 && png_sig_cmp(sig, 0, 8) == 0) return read_png(path);
  if (got >= 2 && sig[0] == 'P' && (sig[1] == '5' || sig[1] == '6')) return read_pnm(path);
  throw IoError("'" + path.string() + "' is neither PNG nor binary PGM/PPM");
}

void write_png(const Tensor<double>& image, const std::filesystem::path& path, int bit_depth) {
  check_image(image);
  if (bit_depth != 8 && bit_depth != 16) throw ContractError("PNG bit depth must be 8 or 16");
  const auto h = static_cast<png_uint_32>(image.dim(0));
  const auto w = static_cast<png_uint_32>(image.dim(1));
  const std::size_t c = image.dim(2);
  const std::size_t bytes_per = bit_depth / 8;
  const unsigned maxval = bit_depth == 16 ? 65535u : 255u;

  std::vector<png_byte> pixels(image.numel() * bytes_per);
  const auto v = image.data();
  for (std::size_t i = 0; i < image.numel(); ++i) {
    const unsigned q = quantize(v[i], maxval);
    if (bytes_per == 2) {
      pixels[2 * i] = static_cast<png_byte>(q >> 8);
      pixels[2 * i + 1] = static_cast<png_byte>(q & 0xff);
    } else {
      pixels[i] = static_cast<png_byte>(q);
    }
  }
  std::vector<png_bytep> rows(h);
  for (png_uint_32 y = 0; y < h; ++y) rows[y] = pixels.data() + y * w * c * bytes_per;

  FilePtr file = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("libpng initialisation failed");
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed writing PNG '" + path.string() + "'");
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, w, h, bit_depth, c == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

void write_pnm(const Tensor<double>& image, const std::filesystem::path& path, int bit_depth) {
  check_image(image);
  if (bit_depth != 8 && bit_depth != 16) throw ContractError("PNM bit depth must be 8 or 16");
  const unsigned maxval = bit_depth == 16 ? 65535u : 255u;
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << (image.dim(2) == 1 ? "P5" : "P6") << '\n'
      << image.dim(1) << ' ' << image.dim(0) << '\n'
      << maxval << '\n';
  std::string raw;
  for (double v : image.data()) {
    const unsigned q = quantize(v, maxval);
    if (bit_depth == 16) raw.push_back(static_cast<char>(q >> 8));
    raw.push_back(static_cast<char>(q & 0xff));
  }
  out.write(raw.data(), static_cast<std::streamsize>(raw.size()));
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

Tensor<double> center_crop(const Tensor<double>& image, std::size_t size) {
  require_rank(image, 3, "center_crop");
  const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
  if (size == 0 || size > h || size > w) {
    throw ContractError("cannot crop " + shape_str(image.shape()) + " to " +
                        std::to_string(size) + "x" + std::to_string(size));
  }
  const std::size_t top = (h - size) / 2, left = (w - size) / 2;
  std::vector<double> out(size * size * c);
  const auto v = image.data();
  for (std::size_t y = 0; y < size; ++y) {
    const auto src = v.begin() + static_cast<std::ptrdiff_t>(((top + y) * w + left) * c);
    std::copy(src, src + static_cast<std::ptrdiff_t>(size * c),
              out.begin() + static_cast<std::ptrdiff_t>(y * size * c));
  }
  return Tensor<double>({size, size, c}, std::move(out));
}

Tensor<double> fit_to_encoder(const Tensor<double>& image, const ViTConfig& config,
                              bool allow_crop) {
  require_rank(image, 3, "image");
  const std::size_t s = config.image_size;
  Tensor<double> out = image;
  if (image.dim(0) != s || image.dim(1) != s) {
    if (image.dim(0) < s || image.dim(1) < s) {
      throw ContractError("image " + shape_str(image.shape()) + " is smaller than the encoder input " +
                          std::to_string(s) + "x" + std::to_string(s));
    }
    if (!allow_crop) {
      throw ContractError("image " + shape_str(image.shape()) + " does not match the encoder input " +
                          std::to_string(s) + "x" + std::to_string(s) + " and cropping is disabled");
    }
    out = center_crop(image, s);
  }
  if (out.dim(2) == config.channels) return out;
  if (out.dim(2) == 1) {
    std::vector<double> expanded;
    expanded.reserve(s * s * config.channels);
    for (double v : out.data()) expanded.insert(expanded.end(), config.channels, v);
    return Tensor<double>({s, s, config.channels}, std::move(expanded));
  }
  throw ContractError("image has " + std::to_string(out.dim(2)) + " channels, encoder expects " +
                      std::to_string(config.channels));
}

}  // namespace vitloss::image

#include "ffield/image_io.hpp"

#include <png.h>

#include <csetjmp>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "ffield/error.hpp"

namespace ffield {
namespace {

struct ReadCursor {
  const Bytes* bytes;
  std::size_t offset;
};

void ReadFromBuffer(png_structp png, png_bytep out, png_size_t length) {
  auto* cursor = static_cast<ReadCursor*>(png_get_io_ptr(png));
  if (cursor->offset + length > cursor->bytes->size()) {
    png_error(png, "truncated PNG stream");
  }
  std::memcpy(out, cursor->bytes->data() + cursor->offset, length);
  cursor->offset += length;
}

void WriteToBuffer(png_structp png, png_bytep data, png_size_t length) {
  auto* out = static_cast<Bytes*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + length);
}

void FlushNoop(png_structp) {}

// Writes `rows` (already packed, big-endian for 16-bit) into `out`. Returns
// false if libpng reported an error.
bool EncodeRows(Bytes& out, int width, int height, int color_type, int bit_depth,
                const std::vector<png_bytep>& rows,
                const std::vector<PaletteEntry>* palette) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                            nullptr, nullptr);
  if (!png) return false;
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    return false;
  }
  std::vector<png_color> colors;
  if (palette) {
    for (const auto& c : *palette) colors.push_back(png_color{c[0], c[1], c[2]});
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    return false;
  }
  png_set_write_fn(png, &out, WriteToBuffer, FlushNoop);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width),
               static_cast<png_uint_32>(height), bit_depth, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  if (palette) {
    png_set_PLTE(png, info, colors.data(), static_cast<int>(colors.size()));
  }
  png_write_info(png, info);
  png_write_image(png, const_cast<png_bytepp>(rows.data()));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return true;
}

void CheckDims(int width, int height, std::size_t have, std::size_t per_pixel) {
  if (width <= 0 || height <= 0) {
    Fail(ErrorCode::kInvalidArgument, "png: image dimensions must be positive");
  }
  if (have != static_cast<std::size_t>(width) * height * per_pixel) {
    Fail(ErrorCode::kShape, "png: buffer size does not match " +
                                std::to_string(width) + "x" +
                                std::to_string(height));
  }
}

Bytes Encode8(int width, int height, const std::uint8_t* data, int channels,
              int color_type, const std::vector<PaletteEntry>* palette) {
  std::vector<png_bytep> rows(height);
  for (int y = 0; y < height; ++y) {
    rows[y] = const_cast<png_bytep>(data + static_cast<std::size_t>(y) * width * channels);
  }
  Bytes out;
  if (!EncodeRows(out, width, height, color_type, 8, rows, palette)) {
    Fail(ErrorCode::kInternal, "png: encoder failed");
  }
  return out;
}

}  // namespace

PngImage DecodePng(const Bytes& bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) {
    Fail(ErrorCode::kFormat, "png: not a PNG stream");
  }
  PngImage image;
  std::vector<png_bytep> rows;
  std::vector<std::uint8_t> raw;
  ReadCursor cursor{&bytes, 0};

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                           nullptr, nullptr);
  if (!png) Fail(ErrorCode::kInternal, "png: cannot allocate decoder");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    Fail(ErrorCode::kInternal, "png: cannot allocate decoder");
  }
  volatile bool ok = false;
  if (setjmp(png_jmpbuf(png)) == 0) {
    png_set_read_fn(png, &cursor, ReadFromBuffer);
    png_read_info(png, info);
    const int color_type = png_get_color_type(png, info);
    int depth = png_get_bit_depth(png, info);
    if (depth < 8) png_set_packing(png);
    if (color_type == PNG_COLOR_TYPE_GRAY_ALPHA ||
        (color_type & PNG_COLOR_MASK_ALPHA)) {
      png_set_strip_alpha(png);
    }
    if (color_type == PNG_COLOR_TYPE_GRAY_ALPHA) {
      png_set_gray_to_rgb(png);
    }
    png_read_update_info(png, info);
    image.width = static_cast<int>(png_get_image_width(png, info));
    image.height = static_cast<int>(png_get_image_height(png, info));
    image.channels = png_get_channels(png, info);
    image.bit_depth = png_get_bit_depth(png, info);
    const std::size_t stride = png_get_rowbytes(png, info);
    raw.resize(stride * image.height);
    rows.resize(image.height);
    for (int y = 0; y < image.height; ++y) rows[y] = raw.data() + stride * y;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    ok = true;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  if (!ok) Fail(ErrorCode::kFormat, "png: corrupt or truncated stream");
  if (image.channels != 1 && image.channels != 3) {
    Fail(ErrorCode::kFormat, "png: unsupported channel count " +
                                 std::to_string(image.channels));
  }

  const std::size_t count =
      static_cast<std::size_t>(image.width) * image.height * image.channels;
  image.samples.resize(count);
  if (image.bit_depth == 16) {
    for (std::size_t i = 0; i < count; ++i) {
      image.samples[i] = static_cast<std::uint16_t>((raw[2 * i] << 8) | raw[2 * i + 1]);
    }
  } else {
    const std::size_t stride = raw.size() / image.height;
    const std::size_t row_count = static_cast<std::size_t>(image.width) * image.channels;
    for (int y = 0; y < image.height; ++y) {
      for (std::size_t i = 0; i < row_count; ++i) {
        image.samples[y * row_count + i] = raw[y * stride + i];
      }
    }
  }
  return image;
}

PngImage ReadPng(const std::string& path) {
  try {
    return DecodePng(ReadFileBytes(path));
  } catch (const Error& e) {
    throw Error(e.code(), path + ": " + e.what());
  }
}

Bytes EncodePngRgb8(int width, int height, const std::vector<std::uint8_t>& rgb) {
  CheckDims(width, height, rgb.size(), 3);
  return Encode8(width, height, rgb.data(), 3, PNG_COLOR_TYPE_RGB, nullptr);
}

Bytes EncodePngGray8(int width, int height, const std::vector<std::uint8_t>& gray) {
  CheckDims(width, height, gray.size(), 1);
  return Encode8(width, height, gray.data(), 1, PNG_COLOR_TYPE_GRAY, nullptr);
}

Bytes EncodePngIndexed(int width, int height, const std::vector<std::uint8_t>& indices,
                       const std::vector<PaletteEntry>& palette) {
  CheckDims(width, height, indices.size(), 1);
  if (palette.empty() || palette.size() > 256) {
    Fail(ErrorCode::kInvalidArgument, "png: palette must hold 1..256 entries");
  }
  for (const std::uint8_t i : indices) {
    if (i >= palette.size()) {
      Fail(ErrorCode::kInvalidArgument, "png: index " + std::to_string(i) +
                                            " outside palette of " +
                                            std::to_string(palette.size()));
    }
  }
  return Encode8(width, height, indices.data(), 1, PNG_COLOR_TYPE_PALETTE, &palette);
}

Bytes EncodePngGray16(int width, int height, const std::vector<std::uint16_t>& gray) {
  CheckDims(width, height, gray.size(), 1);
  std::vector<std::uint8_t> packed(gray.size() * 2);
  for (std::size_t i = 0; i < gray.size(); ++i) {
    packed[2 * i] = static_cast<std::uint8_t>(gray[i] >> 8);
    packed[2 * i + 1] = static_cast<std::uint8_t>(gray[i] & 0xff);
  }
  std::vector<png_bytep> rows(height);
  for (int y = 0; y < height; ++y) {
    rows[y] = packed.data() + static_cast<std::size_t>(y) * width * 2;
  }
  Bytes out;
  if (!EncodeRows(out, width, height, PNG_COLOR_TYPE_GRAY, 16, rows, nullptr)) {
    Fail(ErrorCode::kInternal, "png: encoder failed");
  }
  return out;
}

Bytes ReadFileBytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) Fail(ErrorCode::kIo, "cannot open " + path);
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void CreateParentDirectories(const std::string& path) {
  const std::filesystem::path parent = std::filesystem::path(path).parent_path();
  if (parent.empty()) return;
  std::error_code ec;
  std::filesystem::create_directories(parent, ec);
  if (ec) Fail(ErrorCode::kIo, "cannot create directory " + parent.string() + ": " + ec.message());
}

void WriteFileBytes(const std::string& path, const Bytes& bytes) {
  CreateParentDirectories(path);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) Fail(ErrorCode::kIo, "cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) Fail(ErrorCode::kIo, "short write to " + path);
}

}  // namespace ffield

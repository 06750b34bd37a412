// Copyright (c) 2026 the gpic authors
// SPDX-License-Identifier: Apache-2.0

#include "gpic/image.hpp"

#include <zlib.h>

#include <atomic>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace gpic {

namespace {

[[noreturn]] void io_fail(const std::string& msg) { throw std::runtime_error(msg); }

std::uint32_t be32(const std::uint8_t* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
         (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(std::uint8_t(v >> 24));
  out.push_back(std::uint8_t(v >> 16));
  out.push_back(std::uint8_t(v >> 8));
  out.push_back(std::uint8_t(v));
}

const std::uint8_t kPngSig[8] = {137, 80, 78, 71, 13, 10, 26, 10};

int paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

}  // namespace

ImageBuffer make_image(int width, int height, int channels, std::uint8_t fill) {
  if (width < 1 || height < 1)
    throw std::invalid_argument("make_image: size must be positive, got " + std::to_string(width) +
                                "x" + std::to_string(height));
  if (channels != 1 && channels != 3 && channels != 4)
    throw std::invalid_argument("make_image: channels must be 1, 3 or 4");
  ImageBuffer img{width, height, channels, {}};
  img.data.assign(img.sample_count(), fill);
  return img;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) io_fail("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (!in.good() && !in.eof()) io_fail("read failed for " + path.string());
  return bytes;
}

void write_file_atomic(const std::filesystem::path& path, const std::uint8_t* data,
                       std::size_t size) {
  static std::atomic<unsigned> counter{0};
  std::filesystem::path tmp = path;
  tmp += ".tmp" + std::to_string(counter.fetch_add(1));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) io_fail("cannot create " + tmp.string());
    out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(size));
    if (!out.good()) io_fail("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    io_fail("rename to " + path.string() + " failed: " + ec.message());
  }
}

void write_file_atomic(const std::filesystem::path& path, const std::string& text) {
  write_file_atomic(path, reinterpret_cast<const std::uint8_t*>(text.data()), text.size());
}

// ---------------------------------------------------------------------------
// PNG

ImageBuffer decode_png(const std::uint8_t* bytes, std::size_t size) {
  if (size < 8 || std::memcmp(bytes, kPngSig, 8) != 0) io_fail("PNG: bad signature");
  std::size_t pos = 8;
  int width = 0, height = 0, channels = 0;
  bool seen_ihdr = false, seen_iend = false;
  std::vector<std::uint8_t> idat;
  while (pos + 12 <= size && !seen_iend) {
    const std::uint32_t len = be32(bytes + pos);
    if (pos + 12 + len > size) io_fail("PNG: truncated chunk");
    const std::uint8_t* type = bytes + pos + 4;
    const std::uint8_t* payload = bytes + pos + 8;
    const std::uint32_t want_crc = be32(payload + len);
    std::uint32_t got_crc = crc32(0L, Z_NULL, 0);
    got_crc = crc32(got_crc, type, len + 4);
    if (got_crc != want_crc) io_fail("PNG: chunk CRC mismatch");
    if (std::memcmp(type, "IHDR", 4) == 0) {
      if (len != 13) io_fail("PNG: bad IHDR length");
      width = static_cast<int>(be32(payload));
      height = static_cast<int>(be32(payload + 4));
      const int depth = payload[8], color = payload[9];
      const int compression = payload[10], filter = payload[11], interlace = payload[12];
      if (width < 1 || height < 1) io_fail("PNG: bad dimensions");
      if (depth != 8) io_fail("PNG: only 8-bit depth supported, got " + std::to_string(depth));
      if (color == 0) channels = 1;
      else if (color == 2) channels = 3;
      else if (color == 6) channels = 4;
      else io_fail("PNG: unsupported color type " + std::to_string(color));
      if (compression != 0 || filter != 0) io_fail("PNG: unsupported compression/filter method");
      if (interlace != 0) io_fail("PNG: interlaced images not supported");
      seen_ihdr = true;
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      if (!seen_ihdr) io_fail("PNG: IDAT before IHDR");
      idat.insert(idat.end(), payload, payload + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      seen_iend = true;
    }
    // Ancillary chunks are skipped.
    pos += 12 + len;
  }
  if (!seen_ihdr || !seen_iend) io_fail("PNG: missing IHDR or IEND");

  const std::size_t stride = static_cast<std::size_t>(width) * channels;
  const std::size_t raw_size = (stride + 1) * height;
  std::vector<std::uint8_t> raw(raw_size);
  uLongf dest_len = raw_size;
  const int zrc = uncompress(raw.data(), &dest_len, idat.data(), static_cast<uLong>(idat.size()));
  if (zrc != Z_OK || dest_len != raw_size) io_fail("PNG: corrupt or truncated image data");

  ImageBuffer img = make_image(width, height, channels);
  const int bpp = channels;
  for (int y = 0; y < height; ++y) {
    const std::uint8_t* src = raw.data() + static_cast<std::size_t>(y) * (stride + 1);
    const int f = src[0];
    ++src;
    std::uint8_t* cur = img.data.data() + static_cast<std::size_t>(y) * stride;
    const std::uint8_t* up = y > 0 ? cur - stride : nullptr;
    for (std::size_t i = 0; i < stride; ++i) {
      const int a = i >= std::size_t(bpp) ? cur[i - bpp] : 0;
      const int b = up ? up[i] : 0;
      const int c = (up && i >= std::size_t(bpp)) ? up[i - bpp] : 0;
      int v = src[i];
      switch (f) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) / 2; break;
        case 4: v += paeth(a, b, c); break;
        default: io_fail("PNG: unknown scanline filter " + std::to_string(f));
      }
      cur[i] = std::uint8_t(v & 0xff);
    }
  }
  return img;
}

std::vector<std::uint8_t> encode_png(const ImageBuffer& img) {
  if (img.width < 1 || img.height < 1) io_fail("PNG encode: empty image");
  int color = 0;
  if (img.channels == 1) color = 0;
  else if (img.channels == 3) color = 2;
  else if (img.channels == 4) color = 6;
  else io_fail("PNG encode: unsupported channel count " + std::to_string(img.channels));

  const std::size_t stride = static_cast<std::size_t>(img.width) * img.channels;
  std::vector<std::uint8_t> raw((stride + 1) * img.height);
  for (int y = 0; y < img.height; ++y) {
    std::uint8_t* dst = raw.data() + static_cast<std::size_t>(y) * (stride + 1);
    dst[0] = 0;  // filter: none
    std::memcpy(dst + 1, img.data.data() + static_cast<std::size_t>(y) * stride, stride);
  }
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> z(bound);
  if (compress2(z.data(), &bound, raw.data(), static_cast<uLong>(raw.size()),
                Z_DEFAULT_COMPRESSION) != Z_OK)
    io_fail("PNG encode: compression failed");
  z.resize(bound);

  std::vector<std::uint8_t> out;
  out.reserve(z.size() + 64);
  out.insert(out.end(), kPngSig, kPngSig + 8);
  auto chunk = [&out](const char* type, const std::uint8_t* data, std::size_t len) {
    put_be32(out, static_cast<std::uint32_t>(len));
    const std::size_t type_at = out.size();
    out.insert(out.end(), type, type + 4);
    if (len) out.insert(out.end(), data, data + len);
    std::uint32_t crc = crc32(0L, Z_NULL, 0);
    crc = crc32(crc, out.data() + type_at, static_cast<uInt>(len + 4));
    put_be32(out, crc);
  };
  std::vector<std::uint8_t> ihdr;
  put_be32(ihdr, static_cast<std::uint32_t>(img.width));
  put_be32(ihdr, static_cast<std::uint32_t>(img.height));
  ihdr.push_back(8);                          // bit depth
  ihdr.push_back(static_cast<std::uint8_t>(color));
  ihdr.push_back(0);                          // compression
  ihdr.push_back(0);                          // filter method
  ihdr.push_back(0);                          // no interlace
  chunk("IHDR", ihdr.data(), ihdr.size());
  chunk("IDAT", z.data(), z.size());
  chunk("IEND", nullptr, 0);
  return out;
}

// ---------------------------------------------------------------------------
// PNM (binary PGM/PPM)

namespace {

// Reads the next header token, skipping whitespace and '#' comments.
std::string pnm_token(const std::uint8_t* bytes, std::size_t size, std::size_t& pos) {
  while (pos < size) {
    if (std::isspace(bytes[pos])) {
      ++pos;
    } else if (bytes[pos] == '#') {
      while (pos < size && bytes[pos] != '\n') ++pos;
    } else {
      break;
    }
  }
  std::string tok;
  while (pos < size && !std::isspace(bytes[pos])) tok.push_back(static_cast<char>(bytes[pos++]));
  if (tok.empty()) io_fail("PNM: truncated header");
  return tok;
}

}  // namespace

ImageBuffer decode_pnm(const std::uint8_t* bytes, std::size_t size) {
  if (size < 2) io_fail("PNM: file too small");
  std::size_t pos = 0;
  const std::string magic = pnm_token(bytes, size, pos);
  int channels = 0;
  if (magic == "P5") channels = 1;
  else if (magic == "P6") channels = 3;
  else io_fail("PNM: unsupported magic '" + magic + "'");
  const int width = std::stoi(pnm_token(bytes, size, pos));
  const int height = std::stoi(pnm_token(bytes, size, pos));
  const int maxval = std::stoi(pnm_token(bytes, size, pos));
  if (width < 1 || height < 1) io_fail("PNM: bad dimensions");
  if (maxval != 255) io_fail("PNM: only maxval 255 supported, got " + std::to_string(maxval));
  ++pos;  // single whitespace byte separates header from samples
  ImageBuffer img = make_image(width, height, channels);
  if (pos + img.sample_count() > size) io_fail("PNM: truncated sample data");
  std::memcpy(img.data.data(), bytes + pos, img.sample_count());
  return img;
}

std::vector<std::uint8_t> encode_pnm(const ImageBuffer& img) {
  if (img.channels != 1 && img.channels != 3)
    io_fail("PNM encode: only gray or RGB supported, got " + std::to_string(img.channels) +
            " channels");
  std::string header = std::string(img.channels == 1 ? "P5" : "P6") + "\n" +
                       std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.data.begin(), img.data.end());
  return out;
}

// ---------------------------------------------------------------------------

ImageBuffer load_image(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = read_file(path);
  try {
    if (bytes.size() >= 8 && std::memcmp(bytes.data(), kPngSig, 8) == 0)
      return decode_png(bytes.data(), bytes.size());
    if (bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == '5' || bytes[1] == '6'))
      return decode_pnm(bytes.data(), bytes.size());
  } catch (const std::runtime_error& e) {
    io_fail(std::string(e.what()) + " (" + path.string() + ")");
  }
  io_fail("unsupported image format: " + path.string());
}

void save_image_file(const ImageBuffer& img, const std::filesystem::path& path) {
  const std::string ext = path.extension().string();
  std::vector<std::uint8_t> bytes;
  if (ext == ".png") {
    bytes = encode_png(img);
  } else if (ext == ".ppm" || ext == ".pgm") {
    if (ext == ".pgm" && img.channels != 1) io_fail("save: .pgm requires a 1-channel image");
    if (ext == ".ppm" && img.channels != 3) io_fail("save: .ppm requires a 3-channel image");
    bytes = encode_pnm(img);
  } else {
    io_fail("save: unsupported extension '" + ext + "' (use .png/.ppm/.pgm)");
  }
  write_file_atomic(path, bytes.data(), bytes.size());
}

// ---------------------------------------------------------------------------

ImageBuffer resize_nearest(const ImageBuffer& img, int width, int height) {
  ImageBuffer out = make_image(width, height, img.channels);
  for (int y = 0; y < height; ++y) {
    const int sy = std::min(img.height - 1, y * img.height / height);
    for (int x = 0; x < width; ++x) {
      const int sx = std::min(img.width - 1, x * img.width / width);
      for (int c = 0; c < img.channels; ++c) out.at(x, y, c) = img.at(sx, sy, c);
    }
  }
  return out;
}

ImageBuffer resize_box(const ImageBuffer& img, int width, int height) {
  ImageBuffer out = make_image(width, height, img.channels);
  for (int y = 0; y < height; ++y) {
    const int sy0 = y * img.height / height;
    const int sy1 = std::max(sy0 + 1, (y + 1) * img.height / height);
    for (int x = 0; x < width; ++x) {
      const int sx0 = x * img.width / width;
      const int sx1 = std::max(sx0 + 1, (x + 1) * img.width / width);
      const int area = (sy1 - sy0) * (sx1 - sx0);
      for (int c = 0; c < img.channels; ++c) {
        std::int64_t acc = 0;
        for (int sy = sy0; sy < sy1; ++sy)
          for (int sx = sx0; sx < sx1; ++sx) acc += img.at(sx, sy, c);
        out.at(x, y, c) = static_cast<std::uint8_t>((acc + area / 2) / area);
      }
    }
  }
  return out;
}

}  // namespace gpic

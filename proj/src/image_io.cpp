#include "fieldgen/harness/image_io.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>

namespace fieldgen::img {

namespace {

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  out.push_back(static_cast<unsigned char>(v >> 24));
  out.push_back(static_cast<unsigned char>(v >> 16));
  out.push_back(static_cast<unsigned char>(v >> 8));
  out.push_back(static_cast<unsigned char>(v));
}

std::uint32_t get_u32(const unsigned char* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
         (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

void write_chunk(std::vector<unsigned char>& out, const char type[4],
                 const std::vector<unsigned char>& payload) {
  put_u32(out, static_cast<std::uint32_t>(payload.size()));
  std::size_t crc_start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), payload.begin(), payload.end());
  const auto crc =
      ::crc32(0, out.data() + crc_start, static_cast<uInt>(4 + payload.size()));
  put_u32(out, static_cast<std::uint32_t>(crc));
}

}  // namespace

void write_png(const std::string& path, const ImageU8& img) {
  if (img.channels != 1 && img.channels != 3)
    throw io_error("write_png: 1 or 3 channels required");
  if (img.height <= 0 || img.width <= 0 ||
      img.data.size() !=
          static_cast<std::size_t>(img.height * img.width * img.channels))
    throw io_error("write_png: inconsistent image buffer");

  // filter byte 0 per scanline
  const std::size_t stride =
      static_cast<std::size_t>(img.width * img.channels);
  std::vector<unsigned char> raw((stride + 1) * img.height);
  for (long y = 0; y < img.height; ++y) {
    raw[(stride + 1) * y] = 0;
    std::memcpy(raw.data() + (stride + 1) * y + 1, img.data.data() + stride * y,
                stride);
  }
  uLongf comp_bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<unsigned char> comp(comp_bound);
  if (compress2(comp.data(), &comp_bound, raw.data(),
                static_cast<uLong>(raw.size()), 9) != Z_OK)
    throw io_error("write_png: deflate failed");
  comp.resize(comp_bound);

  std::vector<unsigned char> out = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  std::vector<unsigned char> ihdr;
  put_u32(ihdr, static_cast<std::uint32_t>(img.width));
  put_u32(ihdr, static_cast<std::uint32_t>(img.height));
  ihdr.push_back(8);                                    // bit depth
  ihdr.push_back(img.channels == 3 ? 2 : 0);            // color type
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  write_chunk(out, "IHDR", ihdr);
  write_chunk(out, "IDAT", comp);
  write_chunk(out, "IEND", {});

  std::ofstream os(path, std::ios::binary);
  if (!os) throw io_error("write_png: cannot open " + path);
  os.write(reinterpret_cast<const char*>(out.data()),
           static_cast<std::streamsize>(out.size()));
  if (!os) throw io_error("write_png: write failed for " + path);
}

namespace {

int paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

}  // namespace

ImageU8 read_png(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io_error("read_png: cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)),
                                   std::istreambuf_iterator<char>());
  static const unsigned char sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (bytes.size() < 8 || std::memcmp(bytes.data(), sig, 8) != 0)
    throw io_error("read_png: not a PNG file: " + path);

  long width = 0, height = 0, channels = 0;
  std::vector<unsigned char> idat;
  std::size_t pos = 8;
  while (pos + 8 <= bytes.size()) {
    const std::uint32_t len = get_u32(bytes.data() + pos);
    if (pos + 12 + len > bytes.size())
      throw io_error("read_png: truncated chunk in " + path);
    const char* type = reinterpret_cast<const char*>(bytes.data() + pos + 4);
    const unsigned char* payload = bytes.data() + pos + 8;
    if (std::memcmp(type, "IHDR", 4) == 0) {
      width = static_cast<long>(get_u32(payload));
      height = static_cast<long>(get_u32(payload + 4));
      const int bit_depth = payload[8];
      const int color_type = payload[9];
      if (bit_depth != 8)
        throw io_error("read_png: only 8-bit images supported");
      if (payload[12] != 0)
        throw io_error("read_png: interlaced images unsupported");
      switch (color_type) {
        case 0: channels = 1; break;
        case 2: channels = 3; break;
        case 6: channels = 4; break;
        default:
          throw io_error("read_png: unsupported color type " +
                         std::to_string(color_type));
      }
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), payload, payload + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      break;
    }
    pos += 12 + len;
  }
  if (width <= 0 || height <= 0 || channels == 0)
    throw io_error("read_png: missing IHDR in " + path);

  const std::size_t stride = static_cast<std::size_t>(width * channels);
  std::vector<unsigned char> raw((stride + 1) * height);
  uLongf raw_len = static_cast<uLongf>(raw.size());
  if (uncompress(raw.data(), &raw_len, idat.data(),
                 static_cast<uLong>(idat.size())) != Z_OK ||
      raw_len != raw.size())
    throw io_error("read_png: inflate failed for " + path);

  ImageU8 img;
  img.width = width;
  img.height = height;
  img.channels = channels;
  img.data.resize(stride * height);
  const long bpp = channels;  // bytes per pixel at 8-bit depth
  for (long y = 0; y < height; ++y) {
    const unsigned char filter = raw[(stride + 1) * y];
    const unsigned char* src = raw.data() + (stride + 1) * y + 1;
    unsigned char* dst = img.data.data() + stride * y;
    const unsigned char* prev = y > 0 ? img.data.data() + stride * (y - 1) : nullptr;
    for (long i = 0; i < static_cast<long>(stride); ++i) {
      const int a = i >= bpp ? dst[i - bpp] : 0;
      const int b = prev ? prev[i] : 0;
      const int c = (prev && i >= bpp) ? prev[i - bpp] : 0;
      int v = src[i];
      switch (filter) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) / 2; break;
        case 4: v += paeth(a, b, c); break;
        default:
          throw io_error("read_png: bad filter type in " + path);
      }
      dst[i] = static_cast<unsigned char>(v & 0xff);
    }
  }
  // Drop alpha if present; downstream code works on RGB.
  if (channels == 4) {
    ImageU8 rgb;
    rgb.width = width;
    rgb.height = height;
    rgb.channels = 3;
    rgb.data.resize(static_cast<std::size_t>(width * height * 3));
    for (long y = 0; y < height; ++y)
      for (long x = 0; x < width; ++x)
        for (long ch = 0; ch < 3; ++ch) rgb.at(y, x, ch) = img.at(y, x, ch);
    return rgb;
  }
  return img;
}

}  // namespace fieldgen::img

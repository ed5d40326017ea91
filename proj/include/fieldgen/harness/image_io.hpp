#pragma once

#include <string>
#include <vector>

#include "fieldgen/ad/tensor.hpp"

namespace fieldgen::img {

// Row-major, interleaved channels (RGB or grayscale), 8-bit.
struct ImageU8 {
  long height = 0;
  long width = 0;
  long channels = 0;
  std::vector<unsigned char> data;

  unsigned char& at(long y, long x, long c) {
    return data[static_cast<std::size_t>((y * width + x) * channels + c)];
  }
  unsigned char at(long y, long x, long c) const {
    return data[static_cast<std::size_t>((y * width + x) * channels + c)];
  }
};

void write_png(const std::string& path, const ImageU8& img);
ImageU8 read_png(const std::string& path);

// Linear map [-1,1] -> [0,255], round half up. Bit-stable by construction.
inline unsigned char unit_to_u8(double v) {
  double scaled = (v + 1.0) * 0.5 * 255.0;
  if (scaled < 0.0) scaled = 0.0;
  if (scaled > 255.0) scaled = 255.0;
  return static_cast<unsigned char>(scaled + 0.5);
}

inline double u8_to_unit(unsigned char u) {
  return static_cast<double>(u) / 255.0 * 2.0 - 1.0;
}

// [1,3,H,W] or [3,H,W] tensor in [-1,1] to interleaved RGB.
template <class T>
ImageU8 tensor_to_u8(const ad::Tensor<T>& t) {
  ad::Shape s = t.shape();
  long c, h, w;
  if (s.size() == 4 && s[0] == 1) {
    c = s[1]; h = s[2]; w = s[3];
  } else if (s.size() == 3) {
    c = s[0]; h = s[1]; w = s[2];
  } else {
    throw shape_error("tensor_to_u8: expected [1,C,H,W] or [C,H,W], got " +
                      ad::shape_str(s));
  }
  ImageU8 img;
  img.height = h;
  img.width = w;
  img.channels = c;
  img.data.resize(static_cast<std::size_t>(c * h * w));
  const auto& v = t.value();
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x)
      for (long ch = 0; ch < c; ++ch)
        img.at(y, x, ch) = unit_to_u8(static_cast<double>(v[(ch * h + y) * w + x]));
  return img;
}

template <class T>
ad::Tensor<T> u8_to_tensor(const ImageU8& img) {
  ad::Buf<T> v(img.channels * img.height * img.width);
  for (long ch = 0; ch < img.channels; ++ch)
    for (long y = 0; y < img.height; ++y)
      for (long x = 0; x < img.width; ++x)
        v[(ch * img.height + y) * img.width + x] =
            static_cast<T>(u8_to_unit(img.at(y, x, ch)));
  return ad::Tensor<T>::from_buf({1, img.channels, img.height, img.width},
                                 std::move(v));
}

// Tile a batch [N,C,H,W] into a grid image (for sample sheets).
template <class T>
ImageU8 tile_grid(const std::vector<ad::Tensor<T>>& images, long cols) {
  if (images.empty()) throw shape_error("tile_grid: no images");
  const long c = images[0].dim(1), h = images[0].dim(2), w = images[0].dim(3);
  const long n = static_cast<long>(images.size());
  const long rows = (n + cols - 1) / cols;
  ImageU8 grid;
  grid.height = rows * h;
  grid.width = cols * w;
  grid.channels = c;
  grid.data.assign(static_cast<std::size_t>(grid.height * grid.width * c), 0);
  for (long i = 0; i < n; ++i) {
    ImageU8 tile = tensor_to_u8(images[static_cast<std::size_t>(i)]);
    const long r0 = (i / cols) * h, c0 = (i % cols) * w;
    for (long y = 0; y < h; ++y)
      for (long x = 0; x < w; ++x)
        for (long ch = 0; ch < c; ++ch)
          grid.at(r0 + y, c0 + x, ch) = tile.at(y, x, ch);
  }
  return grid;
}

}  // namespace fieldgen::img

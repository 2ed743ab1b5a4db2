#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "flavars/graph.hpp"

namespace flavars {

// H x W x C uint8 raster, row-major with interleaved channels.
struct Image {
  int h = 0, w = 0, c = 0;
  std::vector<std::uint8_t> pix;

  Image() = default;
  Image(int h_, int w_, int c_, std::uint8_t fill = 0)
      : h(h_), w(w_), c(c_), pix(static_cast<std::size_t>(h_) * w_ * c_, fill) {}

  std::uint8_t& at(int y, int x, int ch) {
    return pix[(static_cast<std::size_t>(y) * w + x) * c + ch];
  }
  std::uint8_t at(int y, int x, int ch) const {
    return pix[(static_cast<std::size_t>(y) * w + x) * c + ch];
  }
  bool operator==(const Image& o) const = default;
};

// Splits a square image into non-overlapping patch_size x patch_size tiles,
// row-major over the patch grid. Each output row is one patch flattened in
// (y, x, channel) order, values as exact doubles of the uint8 pixels, so
// unpatchify reconstructs the input bit for bit.
Mat patchify(const Image& img, int patch_size);
Image unpatchify(const Mat& patches, int image_size, int patch_size, int channels);

// Binary PPM (P6, c=3) / PGM (P5, c=1).
std::string pnm_bytes(const Image& img);
void write_pnm(const std::filesystem::path& path, const Image& img);
Image read_pnm(const std::filesystem::path& path);

}  // namespace flavars

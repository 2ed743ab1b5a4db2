#include "flavars/image.hpp"

#include <fstream>

namespace flavars {

Mat patchify(const Image& img, int patch_size) {
  if (img.h != img.w) throw ConfigError("patchify: image must be square");
  if (patch_size <= 0 || img.h % patch_size != 0)
    throw ConfigError("patchify: image size not divisible by patch size");
  const int grid = img.h / patch_size;
  const int dim = patch_size * patch_size * img.c;
  Mat out(grid * grid, dim);
  for (int gy = 0; gy < grid; ++gy) {
    for (int gx = 0; gx < grid; ++gx) {
      int col = 0;
      const int row = gy * grid + gx;
      for (int py = 0; py < patch_size; ++py)
        for (int px = 0; px < patch_size; ++px)
          for (int ch = 0; ch < img.c; ++ch)
            out(row, col++) = static_cast<double>(
                img.at(gy * patch_size + py, gx * patch_size + px, ch));
    }
  }
  return out;
}

Image unpatchify(const Mat& patches, int image_size, int patch_size, int channels) {
  if (patch_size <= 0 || image_size % patch_size != 0)
    throw ConfigError("unpatchify: image size not divisible by patch size");
  const int grid = image_size / patch_size;
  if (patches.rows() != grid * grid ||
      patches.cols() != patch_size * patch_size * channels)
    throw ConfigError("unpatchify: patch matrix shape mismatch");
  Image img(image_size, image_size, channels);
  for (int gy = 0; gy < grid; ++gy) {
    for (int gx = 0; gx < grid; ++gx) {
      int col = 0;
      const int row = gy * grid + gx;
      for (int py = 0; py < patch_size; ++py)
        for (int px = 0; px < patch_size; ++px)
          for (int ch = 0; ch < channels; ++ch)
            img.at(gy * patch_size + py, gx * patch_size + px, ch) =
                static_cast<std::uint8_t>(patches(row, col++));
    }
  }
  return img;
}

std::string pnm_bytes(const Image& img) {
  if (img.c != 1 && img.c != 3) throw IoError("pnm_bytes: channels must be 1 or 3");
  std::string out = std::string(img.c == 3 ? "P6" : "P5") + "\n" + std::to_string(img.w) + " " +
                    std::to_string(img.h) + "\n255\n";
  out.append(reinterpret_cast<const char*>(img.pix.data()), img.pix.size());
  return out;
}

void write_pnm(const std::filesystem::path& path, const Image& img) {
  write_text_file(path, pnm_bytes(img));
}

Image read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("read_pnm: cannot open " + path.string());
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if ((magic != "P6" && magic != "P5") || w <= 0 || h <= 0 || maxval != 255)
    throw IoError("read_pnm: unsupported header in " + path.string());
  in.get();  // single whitespace after header
  Image img(h, w, magic == "P6" ? 3 : 1);
  in.read(reinterpret_cast<char*>(img.pix.data()),
          static_cast<std::streamsize>(img.pix.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pix.size()))
    throw IoError("read_pnm: truncated file " + path.string());
  return img;
}

}  // namespace flavars

#ifndef MRN_PNG_IO_HPP
#define MRN_PNG_IO_HPP

#include <string>
#include <vector>

namespace mrn {

// Planar CHW float image with values in [0,1]. channels is 1 (gray) or 3 (rgb).
struct PngImage {
  int channels = 0;
  int h = 0;
  int w = 0;
  std::vector<float> data;

  float& at(int c, int y, int x) { return data[(static_cast<size_t>(c) * h + y) * w + x]; }
  float at(int c, int y, int x) const { return data[(static_cast<size_t>(c) * h + y) * w + x]; }
};

// Decodes an 8- or 16-bit PNG. Gray(+alpha) maps to 1 channel, RGB(+alpha)
// to 3; palette images are expanded; alpha is dropped. Throws
// std::runtime_error when the file is missing or not a decodable PNG.
PngImage read_png(const std::string& path);

// Writes an 8-bit PNG (gray for 1 channel, RGB for 3). Values are clamped to
// [0,1] and scaled to 0..255. Throws std::runtime_error on I/O failure.
void write_png8(const std::string& path, const PngImage& img);

// Writes a single-channel 16-bit PNG, values clamped to [0,1] -> 0..65535.
void write_png16_gray(const std::string& path, const std::vector<float>& data, int h, int w);

}  // namespace mrn

#endif  // MRN_PNG_IO_HPP

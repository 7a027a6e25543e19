// Binary portable pixmap output (P5 graymap, P6 color map) for field and
// region heatmaps. Quantization is pure arithmetic on the raster, so a fixed
// raster always produces the same bytes.

#ifndef CLOAKSIM_PIXMAP_HPP
#define CLOAKSIM_PIXMAP_HPP

#include <array>
#include <functional>
#include <string>
#include <vector>

namespace cloaksim::pixmap {

// Row-major scalar raster; row 0 is the top of the image.
struct Raster {
  int width = 0, height = 0;
  std::vector<double> values;

  double& at(int row, int col) { return values[size_t(row) * width + col]; }
  double at(int row, int col) const { return values[size_t(row) * width + col]; }
};

enum class Scale { linear, log };

// 8-bit quantization. linear maps [min, max] onto [0, 255] (constant rasters
// become uniform mid-gray). log maps log10|v| over the six decades below the
// peak magnitude onto [0, 255]; an all-zero raster becomes black.
std::vector<unsigned char> quantize(const Raster& r, Scale scale);

void write_pgm(const std::string& path, const Raster& r, Scale scale);

// The raster holds palette indices (validated to round to 0..palette-1).
void write_ppm(const std::string& path, const Raster& indices,
               const std::vector<std::array<unsigned char, 3>>& palette);

// f(x, y) sampled at pixel centers over the centered square [-half, half]^2,
// x increasing rightward and y increasing upward.
Raster sample_square(int pixels, double half, const std::function<double(double, double)>& f);

}  // namespace cloaksim::pixmap

#endif

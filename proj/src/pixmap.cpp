#include "cloaksim/pixmap.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace cloaksim::pixmap {

namespace {

void check_raster(const Raster& r, const char* who) {
  if (r.width <= 0 || r.height <= 0)
    throw std::runtime_error(std::string(who) + " error: empty raster");
  if (r.values.size() != size_t(r.width) * size_t(r.height))
    throw std::runtime_error(std::string(who) + " error: raster size does not match its extent");
  for (double v : r.values)
    if (!std::isfinite(v))
      throw std::runtime_error(std::string(who) + " error: raster holds a non-finite value");
}

unsigned char to_byte(double t) {
  long b = std::lround(255.0 * t);
  if (b < 0) b = 0;
  if (b > 255) b = 255;
  return static_cast<unsigned char>(b);
}

void write_binary(const std::string& path, const std::string& bytes, const char* who) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error(std::string(who) + " error: cannot open " + path);
  os.write(bytes.data(), std::streamsize(bytes.size()));
  if (!os) throw std::runtime_error(std::string(who) + " error: write failed for " + path);
}

}  // namespace

std::vector<unsigned char> quantize(const Raster& r, Scale scale) {
  check_raster(r, "quantize");
  std::vector<unsigned char> out(r.values.size());
  if (scale == Scale::linear) {
    double lo = r.values[0], hi = r.values[0];
    for (double v : r.values) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    if (hi == lo) {
      for (auto& b : out) b = 128;
      return out;
    }
    for (size_t i = 0; i < out.size(); ++i) out[i] = to_byte((r.values[i] - lo) / (hi - lo));
    return out;
  }
  // log: six decades below the peak magnitude
  double peak = 0.0;
  for (double v : r.values) peak = std::max(peak, std::abs(v));
  if (peak == 0.0) return out;  // all black
  const double hi = std::log10(peak), lo = hi - 6.0;
  for (size_t i = 0; i < out.size(); ++i) {
    double a = std::abs(r.values[i]);
    double w = a > 0.0 ? std::max(std::log10(a), lo) : lo;
    out[i] = to_byte((w - lo) / 6.0);
  }
  return out;
}

void write_pgm(const std::string& path, const Raster& r, Scale scale) {
  std::vector<unsigned char> gray = quantize(r, scale);
  char head[48];
  std::snprintf(head, sizeof head, "P5\n%d %d\n255\n", r.width, r.height);
  std::string bytes(head);
  bytes.append(reinterpret_cast<const char*>(gray.data()), gray.size());
  write_binary(path, bytes, "write_pgm");
}

void write_ppm(const std::string& path, const Raster& indices,
               const std::vector<std::array<unsigned char, 3>>& palette) {
  check_raster(indices, "write_ppm");
  if (palette.empty()) throw std::runtime_error("write_ppm error: empty palette");
  char head[48];
  std::snprintf(head, sizeof head, "P6\n%d %d\n255\n", indices.width, indices.height);
  std::string bytes(head);
  for (double v : indices.values) {
    long k = std::lround(v);
    if (k < 0 || k >= long(palette.size()))
      throw std::runtime_error("write_ppm error: palette index out of range");
    const auto& c = palette[size_t(k)];
    bytes.push_back(char(c[0]));
    bytes.push_back(char(c[1]));
    bytes.push_back(char(c[2]));
  }
  write_binary(path, bytes, "write_ppm");
}

Raster sample_square(int pixels, double half,
                     const std::function<double(double, double)>& f) {
  if (pixels <= 0) throw std::runtime_error("sample_square error: empty raster");
  if (!(half > 0.0) || !std::isfinite(half))
    throw std::runtime_error("sample_square error: the half-width must be positive");
  if (!f) throw std::runtime_error("sample_square error: no sampling function");
  Raster r;
  r.width = r.height = pixels;
  r.values.resize(size_t(pixels) * size_t(pixels));
  const double step = 2.0 * half / pixels;
  for (int i = 0; i < pixels; ++i) {
    const double y = half - (i + 0.5) * step;
    for (int j = 0; j < pixels; ++j) {
      const double x = -half + (j + 0.5) * step;
      r.at(i, j) = f(x, y);
    }
  }
  return r;
}

}  // namespace cloaksim::pixmap

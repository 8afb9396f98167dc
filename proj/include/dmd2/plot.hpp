#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dmd2/types.hpp"

namespace dmd2::plot {

using Rgb = std::array<std::uint8_t, 3>;

// 8-bit RGB raster with a few drawing primitives and a built-in 5x7 font.
class Canvas {
 public:
  Canvas(int width, int height, Rgb background = {255, 255, 255});

  int width() const { return width_; }
  int height() const { return height_; }
  Rgb pixel(int x, int y) const;

  void set(int x, int y, Rgb c);
  void line(double x0, double y0, double x1, double y1, Rgb c, int thickness = 1);
  void rect(int x0, int y0, int x1, int y1, Rgb c, bool filled);
  void dot(double x, double y, Rgb c, int radius = 1);
  // Upper-case rendering; characters without a glyph are drawn as blanks.
  void text(int x, int y, const std::string& s, Rgb c, int scale = 1);
  static int text_width(const std::string& s, int scale = 1) { return static_cast<int>(s.size()) * 6 * scale; }

  void save_png(const std::filesystem::path& path) const;

 private:
  int width_;
  int height_;
  std::vector<std::uint8_t> rgb_;
};

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

struct LinePlotOptions {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log_y = false;
  int width = 720;
  int height = 440;
};

// Overlaid line plot with axes, ticks and a legend. Non-finite points are skipped.
void line_plot(const std::filesystem::path& path, const std::vector<Series>& series,
               const LinePlotOptions& options);

// 2-D scatter of sample rows (first two columns).
void scatter_plot(const std::filesystem::path& path, const std::vector<Matrix>& groups,
                  const std::vector<std::string>& labels, const std::string& title,
                  double half_extent, int size = 480);

Rgb palette(std::size_t i);

}  // namespace dmd2::plot

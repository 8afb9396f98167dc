#include "dmd2/plot.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>

#include "dmd2/errors.hpp"

namespace dmd2::plot {

namespace {

using Glyph = std::array<std::uint8_t, 7>;

const std::map<char, Glyph>& font() {
  static const std::map<char, Glyph> f = {
      {'0', {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}}, {'1', {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}},
      {'2', {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}}, {'3', {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E}},
      {'4', {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}}, {'5', {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}},
      {'6', {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}}, {'7', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
      {'8', {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}}, {'9', {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}},
      {'A', {0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}}, {'B', {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E}},
      {'C', {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E}}, {'D', {0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C}},
      {'E', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F}}, {'F', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10}},
      {'G', {0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F}}, {'H', {0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
      {'I', {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}}, {'J', {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C}},
      {'K', {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11}}, {'L', {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F}},
      {'M', {0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11}}, {'N', {0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11}},
      {'O', {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}}, {'P', {0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10}},
      {'Q', {0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D}}, {'R', {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11}},
      {'S', {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E}}, {'T', {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}},
      {'U', {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}}, {'V', {0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04}},
      {'W', {0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A}}, {'X', {0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11}},
      {'Y', {0x11, 0x11, 0x11, 0x0A, 0x04, 0x04, 0x04}}, {'Z', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F}},
      {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C}}, {'-', {0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00}},
      {'_', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F}}, {'+', {0x00, 0x04, 0x04, 0x1F, 0x04, 0x04, 0x00}},
      {':', {0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00}}, {'(', {0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02}},
      {')', {0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08}}, {'/', {0x00, 0x01, 0x02, 0x04, 0x08, 0x10, 0x00}},
      {'=', {0x00, 0x00, 0x1F, 0x00, 0x1F, 0x00, 0x00}}, {',', {0x00, 0x00, 0x00, 0x00, 0x0C, 0x04, 0x08}},
      {'%', {0x18, 0x19, 0x02, 0x04, 0x08, 0x13, 0x03}}, {'<', {0x02, 0x04, 0x08, 0x10, 0x08, 0x04, 0x02}},
      {'>', {0x08, 0x04, 0x02, 0x01, 0x02, 0x04, 0x08}},
  };
  return f;
}

std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

// Roughly `count` evenly spaced round values covering [lo, hi].
std::vector<double> nice_ticks(double lo, double hi, int count) {
  const double span = hi - lo;
  const double raw = span / std::max(1, count);
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 2.5, 5.0, 10.0})
    if (m * mag >= raw) {
      step = m * mag;
      break;
    }
  std::vector<double> ticks;
  for (double v = std::ceil(lo / step) * step; v <= hi + 1e-9 * span; v += step) ticks.push_back(v);
  return ticks;
}

}  // namespace

Rgb palette(std::size_t i) {
  static const Rgb colors[] = {{31, 119, 180}, {214, 39, 40},  {44, 160, 44},  {255, 127, 14},
                               {148, 103, 189}, {140, 86, 75}, {227, 119, 194}, {127, 127, 127},
                               {188, 189, 34},  {23, 190, 207}};
  return colors[i % (sizeof colors / sizeof colors[0])];
}

Canvas::Canvas(int width, int height, Rgb background) : width_(width), height_(height) {
  if (width < 1 || height < 1) throw ContractError("canvas: non-positive size");
  rgb_.resize(static_cast<std::size_t>(width) * height * 3);
  for (std::size_t i = 0; i < rgb_.size(); i += 3) std::copy(background.begin(), background.end(), rgb_.begin() + i);
}

Rgb Canvas::pixel(int x, int y) const {
  if (x < 0 || y < 0 || x >= width_ || y >= height_) throw IndexError("canvas: pixel out of range");
  const std::size_t i = (static_cast<std::size_t>(y) * width_ + x) * 3;
  return {rgb_[i], rgb_[i + 1], rgb_[i + 2]};
}

void Canvas::set(int x, int y, Rgb c) {
  if (x < 0 || y < 0 || x >= width_ || y >= height_) return;
  const std::size_t i = (static_cast<std::size_t>(y) * width_ + x) * 3;
  rgb_[i] = c[0];
  rgb_[i + 1] = c[1];
  rgb_[i + 2] = c[2];
}

void Canvas::line(double x0, double y0, double x1, double y1, Rgb c, int thickness) {
  const double len = std::max(std::abs(x1 - x0), std::abs(y1 - y0));
  const int steps = std::max(1, static_cast<int>(std::ceil(len)));
  const int r = thickness / 2;
  for (int s = 0; s <= steps; ++s) {
    const double f = static_cast<double>(s) / steps;
    const int x = static_cast<int>(std::lround(x0 + f * (x1 - x0)));
    const int y = static_cast<int>(std::lround(y0 + f * (y1 - y0)));
    for (int dy = -r; dy <= r; ++dy)
      for (int dx = -r; dx <= r; ++dx) set(x + dx, y + dy, c);
  }
}

void Canvas::rect(int x0, int y0, int x1, int y1, Rgb c, bool filled) {
  if (filled) {
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) set(x, y, c);
    return;
  }
  line(x0, y0, x1, y0, c);
  line(x1, y0, x1, y1, c);
  line(x1, y1, x0, y1, c);
  line(x0, y1, x0, y0, c);
}

void Canvas::dot(double x, double y, Rgb c, int radius) {
  const int cx = static_cast<int>(std::lround(x)), cy = static_cast<int>(std::lround(y));
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx)
      if (dx * dx + dy * dy <= radius * radius) set(cx + dx, cy + dy, c);
}

void Canvas::text(int x, int y, const std::string& s, Rgb c, int scale) {
  const auto& f = font();
  for (std::size_t k = 0; k < s.size(); ++k) {
    const char ch = static_cast<char>(std::toupper(static_cast<unsigned char>(s[k])));
    auto it = f.find(ch);
    if (it == f.end()) continue;
    const int ox = x + static_cast<int>(k) * 6 * scale;
    for (int row = 0; row < 7; ++row)
      for (int col = 0; col < 5; ++col)
        if (it->second[row] & (0x10 >> col))
          for (int sy = 0; sy < scale; ++sy)
            for (int sx = 0; sx < scale; ++sx) set(ox + col * scale + sx, y + row * scale + sy, c);
  }
}

void Canvas::save_png(const std::filesystem::path& path) const {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  if (ec) throw IoError("plot: cannot create '" + path.parent_path().string() + "': " + ec.message());
  FILE* fp = std::fopen(path.string().c_str(), "wb");
  if (!fp) throw IoError("plot: cannot open '" + path.string() + "' for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw IoError("plot: libpng failed writing '" + path.string() + "'");
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, width_, height_, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < height_; ++y)
    png_write_row(png, const_cast<png_bytep>(rgb_.data() + static_cast<std::size_t>(y) * width_ * 3));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

void line_plot(const std::filesystem::path& path, const std::vector<Series>& series,
               const LinePlotOptions& o) {
  if (series.empty()) throw ContractError("line_plot: no series");
  auto ty = [&](double v) { return o.log_y ? std::log10(v) : v; };
  auto usable = [&](double x, double y) { return std::isfinite(x) && std::isfinite(y) && (!o.log_y || y > 0.0); };
  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin, ymin = xmin, ymax = -xmin;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) throw DimensionError("line_plot: x/y length mismatch in '" + s.label + "'");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!usable(s.x[i], s.y[i])) continue;
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, ty(s.y[i]));
      ymax = std::max(ymax, ty(s.y[i]));
    }
  }
  if (!std::isfinite(xmin)) {
    xmin = 0.0, xmax = 1.0, ymin = 0.0, ymax = 1.0;
  }
  if (xmax == xmin) xmax = xmin + 1.0;
  if (ymax == ymin) {
    ymin -= 0.5;
    ymax += 0.5;
  }
  const double pad = 0.05 * (ymax - ymin);
  ymin -= pad;
  ymax += pad;

  Canvas c(o.width, o.height);
  const int left = 70, right = o.width - 20, top = 30, bottom = o.height - 45;
  const Rgb axis{40, 40, 40}, grid{225, 225, 225};
  auto px = [&](double x) { return left + (x - xmin) / (xmax - xmin) * (right - left); };
  auto py = [&](double y) { return bottom - (y - ymin) / (ymax - ymin) * (bottom - top); };

  for (double t : nice_ticks(xmin, xmax, 6)) {
    c.line(px(t), top, px(t), bottom, grid);
    const std::string l = tick_label(t);
    c.text(static_cast<int>(px(t)) - Canvas::text_width(l) / 2, bottom + 6, l, axis);
  }
  for (double t : nice_ticks(ymin, ymax, 5)) {
    c.line(left, py(t), right, py(t), grid);
    const std::string l = tick_label(o.log_y ? std::pow(10.0, t) : t);
    c.text(left - 6 - Canvas::text_width(l), static_cast<int>(py(t)) - 3, l, axis);
  }
  c.rect(left, top, right, bottom, axis, false);
  c.text((o.width - Canvas::text_width(o.title, 2)) / 2, 8, o.title, axis, 2);
  c.text((left + right - Canvas::text_width(o.x_label)) / 2, o.height - 18, o.x_label, axis);
  c.text(8, top - 12, o.y_label + (o.log_y ? " (LOG)" : ""), axis);

  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    bool have_prev = false;
    double lx = 0, ly = 0;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!usable(s.x[i], s.y[i])) {
        have_prev = false;
        continue;
      }
      const double x = px(s.x[i]), y = py(ty(s.y[i]));
      if (have_prev) c.line(lx, ly, x, y, palette(k), 2);
      if (s.x.size() == 1) c.dot(x, y, palette(k), 3);
      lx = x, ly = y, have_prev = true;
    }
    const int ly0 = top + 8 + static_cast<int>(k) * 12;
    const int lx0 = right - 12 - Canvas::text_width(s.label) - 18;
    c.rect(lx0, ly0, lx0 + 12, ly0 + 6, palette(k), true);
    c.text(lx0 + 18, ly0, s.label, axis);
  }
  c.save_png(path);
}

void scatter_plot(const std::filesystem::path& path, const std::vector<Matrix>& groups,
                  const std::vector<std::string>& labels, const std::string& title,
                  double half_extent, int size) {
  if (!(half_extent > 0.0)) throw ContractError("scatter_plot: extent must be positive");
  Canvas c(size, size);
  const Rgb axis{40, 40, 40};
  auto p = [&](double v) { return (v + half_extent) / (2.0 * half_extent) * (size - 1); };
  c.line(p(0.0), 0, p(0.0), size - 1, {230, 230, 230});
  c.line(0, p(0.0), size - 1, p(0.0), {230, 230, 230});
  for (std::size_t k = 0; k < groups.size(); ++k) {
    const Matrix& g = groups[k];
    if (g.cols() < 2) throw DimensionError("scatter_plot: samples need two columns");
    for (Eigen::Index i = 0; i < g.rows(); ++i) c.set(static_cast<int>(p(g(i, 0))), size - 1 - static_cast<int>(p(g(i, 1))), palette(k));
    if (k < labels.size()) {
      c.rect(8, 26 + static_cast<int>(k) * 12, 20, 32 + static_cast<int>(k) * 12, palette(k), true);
      c.text(26, 26 + static_cast<int>(k) * 12, labels[k], axis);
    }
  }
  c.text(8, 8, title, axis, 2);
  c.save_png(path);
}

}  // namespace dmd2::plot

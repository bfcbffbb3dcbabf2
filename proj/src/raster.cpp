#include "anyres/raster.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

namespace anyres {

namespace {

// Rows top to bottom, 3 bits each (bit 2 = left column).
struct Glyph {
  char c;
  std::array<unsigned char, 5> rows;
};

constexpr Glyph kFont[] = {
    {'0', {7, 5, 5, 5, 7}}, {'1', {2, 6, 2, 2, 7}}, {'2', {7, 1, 7, 4, 7}}, {'3', {7, 1, 7, 1, 7}},
    {'4', {5, 5, 7, 1, 1}}, {'5', {7, 4, 7, 1, 7}}, {'6', {7, 4, 7, 5, 7}}, {'7', {7, 1, 1, 1, 1}},
    {'8', {7, 5, 7, 5, 7}}, {'9', {7, 5, 7, 1, 7}}, {'.', {0, 0, 0, 0, 2}}, {',', {0, 0, 0, 2, 4}},
    {'=', {0, 7, 0, 7, 0}}, {'(', {1, 2, 2, 2, 1}}, {')', {4, 2, 2, 2, 4}}, {'-', {0, 0, 7, 0, 0}},
    {'+', {0, 2, 7, 2, 0}}, {':', {0, 2, 0, 2, 0}}, {'[', {3, 2, 2, 2, 3}}, {']', {6, 2, 2, 2, 6}},
    {'>', {4, 2, 1, 2, 4}}, {'*', {5, 2, 7, 2, 5}}, {'a', {0, 7, 1, 7, 7}}, {'c', {0, 7, 4, 4, 7}},
    {'d', {1, 7, 5, 5, 7}}, {'e', {7, 5, 7, 4, 7}}, {'f', {3, 4, 6, 4, 4}}, {'i', {2, 0, 2, 2, 2}},
    {'l', {6, 2, 2, 2, 7}}, {'m', {0, 7, 7, 5, 5}}, {'n', {0, 6, 5, 5, 5}}, {'o', {0, 7, 5, 5, 7}},
    {'p', {7, 5, 7, 4, 4}}, {'r', {0, 7, 4, 4, 4}}, {'s', {0, 7, 6, 1, 7}}, {'t', {2, 7, 2, 2, 3}},
    {'v', {0, 5, 5, 5, 2}}, {'x', {0, 5, 2, 2, 5}},
};

const Glyph* find_glyph(char c) {
  for (const auto& g : kFont) {
    if (g.c == c) return &g;
  }
  return nullptr;
}

void set_pixel(Image& img, int y, int x, double r, double g, double b) {
  if (y < 0 || x < 0 || y >= img.height || x >= img.width) return;
  img.at(y, x, 0) = r;
  img.at(y, x, 1) = g;
  img.at(y, x, 2) = b;
}

}  // namespace

int text_width(const std::string& text) { return text.empty() ? 0 : 4 * static_cast<int>(text.size()) - 1; }

void draw_text(Image& img, int top, int left, const std::string& text, double value) {
  for (std::size_t i = 0; i < text.size(); ++i) {
    const Glyph* g = find_glyph(text[i]);
    if (!g) continue;
    const int x0 = left + 4 * static_cast<int>(i);
    for (int r = 0; r < 5; ++r) {
      for (int c = 0; c < 3; ++c) {
        if (g->rows[r] & (4 >> c)) set_pixel(img, top + r, x0 + c, value, value, value);
      }
    }
  }
}

Image contact_sheet(const std::vector<std::vector<Image>>& cells,
                    const std::vector<std::vector<std::vector<std::string>>>& captions) {
  if (cells.empty() || cells.front().empty()) throw std::invalid_argument("contact sheet needs cells");
  const int ch = cells.front().front().height;
  const int cw = cells.front().front().width;
  std::size_t lines = 0;
  int caption_w = 0;
  for (const auto& row : captions) {
    for (const auto& cap : row) {
      lines = std::max(lines, cap.size());
      for (const auto& l : cap) caption_w = std::max(caption_w, text_width(l));
    }
  }
  constexpr int kPad = 2;
  const int col_w = std::max(cw, caption_w) + kPad;
  const int row_h = ch + static_cast<int>(lines) * 6 + kPad + 1;
  const int cols = static_cast<int>(cells.front().size());
  const int rows = static_cast<int>(cells.size());
  Image sheet(rows * row_h + kPad, cols * col_w + kPad, 1.0);
  for (int r = 0; r < rows; ++r) {
    if (static_cast<int>(cells[r].size()) != cols) throw std::invalid_argument("ragged contact sheet");
    for (int c = 0; c < cols; ++c) {
      const Image& cell = cells[r][c];
      if (cell.height != ch || cell.width != cw) throw std::invalid_argument("contact sheet cells differ in size");
      const int top = kPad + r * row_h;
      const int left = kPad + c * col_w;
      for (int y = 0; y < ch; ++y) {
        for (int x = 0; x < cw; ++x) {
          for (int k = 0; k < kChannels; ++k) sheet.at(top + y, left + x, k) = cell.at(y, x, k);
        }
      }
      if (r < static_cast<int>(captions.size()) && c < static_cast<int>(captions[r].size())) {
        const auto& cap = captions[r][c];
        for (std::size_t l = 0; l < cap.size(); ++l) {
          draw_text(sheet, top + ch + 1 + 6 * static_cast<int>(l), left, cap[l]);
        }
      }
    }
  }
  return sheet;
}

Image line_plot(const std::vector<std::pair<double, double>>& points, int width, int height) {
  Image img(height, width, 1.0);
  constexpr int kMargin = 12;
  const int x0 = kMargin;
  const int y0 = height - kMargin;
  for (int x = x0; x < width - 4; ++x) set_pixel(img, y0, x, 0, 0, 0);
  for (int y = 4; y <= y0; ++y) set_pixel(img, y, x0, 0, 0, 0);
  if (points.size() < 2) return img;
  double xmin = points.front().first, xmax = xmin, ymin = points.front().second, ymax = ymin;
  for (const auto& [x, y] : points) {
    xmin = std::min(xmin, x);
    xmax = std::max(xmax, x);
    ymin = std::min(ymin, y);
    ymax = std::max(ymax, y);
  }
  if (xmax == xmin) xmax = xmin + 1.0;
  if (ymax == ymin) ymax = ymin + 1.0;
  const double sx = (width - 4 - x0 - 2) / (xmax - xmin);
  const double sy = (y0 - 6) / (ymax - ymin);
  auto to_px = [&](std::pair<double, double> pt) {
    return std::pair<double, double>{x0 + 1 + (pt.first - xmin) * sx, y0 - 1 - (pt.second - ymin) * sy};
  };
  for (std::size_t i = 1; i < points.size(); ++i) {
    const auto a = to_px(points[i - 1]);
    const auto b = to_px(points[i]);
    const int steps = static_cast<int>(std::ceil(std::max(std::abs(b.first - a.first), std::abs(b.second - a.second)))) + 1;
    for (int t = 0; t <= steps; ++t) {
      const double u = static_cast<double>(t) / steps;
      set_pixel(img, static_cast<int>(std::lround(a.second + u * (b.second - a.second))),
                static_cast<int>(std::lround(a.first + u * (b.first - a.first))), 0.1, 0.2, 0.8);
    }
  }
  return img;
}

}  // namespace anyres

#pragma once

#include <string>
#include <utility>
#include <vector>

#include "anyres/image.hpp"

namespace anyres {

/// Draws text with a 3x5 bitmap font (digits, lower-case letters and a few
/// symbols; unknown glyphs render as blanks). Each glyph advances 4 pixels.
void draw_text(Image& img, int top, int left, const std::string& text, double value = 0.0);
int text_width(const std::string& text);

/// Grid of equally sized cells with a caption (one or more lines) under
/// each cell. cells[row][col]; captions share the same indexing.
Image contact_sheet(const std::vector<std::vector<Image>>& cells,
                    const std::vector<std::vector<std::vector<std::string>>>& captions);

/// Line plot of y against x with axes on a white canvas.
Image line_plot(const std::vector<std::pair<double, double>>& points, int width = 320, int height = 200);

}  // namespace anyres

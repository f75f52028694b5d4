#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mtrc/common.hpp"

namespace mtrc {

struct Image {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> rgb;  // row-major, 3 bytes per pixel
};

// Binary PPM (P6).
void write_ppm(const std::string& path, const Image& img);

// Matrix heatmap, one cell_px x cell_px block per entry; values are clamped
// to [0,1] and mapped white -> dark blue.
Image heatmap_image(const std::vector<double>& matrix, int rows, int cols,
                    int cell_px = 24);

// One colored strip, time along the horizontal axis.
Image phase_ribbon(const std::vector<int>& labels, int num_phases,
                   int height_px = 24, int px_per_frame = 3);

// One row per tool, colored where the tool is present. tools is
// [len][num_tools].
Image tool_ribbon(const std::vector<uint8_t>& tools, int len, int num_tools,
                  int row_px = 10, int px_per_frame = 3);

}  // namespace mtrc

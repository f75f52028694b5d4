#include "mtrc/image.hpp"

#include <cmath>
#include <fstream>

namespace mtrc {

namespace {

constexpr uint8_t kPhasePalette[7][3] = {
    {230, 80, 80},  {90, 190, 90},   {80, 110, 220}, {220, 200, 60},
    {190, 90, 190}, {70, 190, 190},  {150, 150, 150}};

constexpr uint8_t kToolPalette[7][3] = {
    {40, 40, 40},   {20, 20, 230},  {230, 30, 30}, {30, 200, 30},
    {240, 140, 20}, {150, 40, 220}, {220, 220, 30}};

void put_block(Image& img, int y0, int x0, int h, int w, const uint8_t* rgb) {
  for (int y = y0; y < y0 + h; ++y)
    for (int x = x0; x < x0 + w; ++x) {
      uint8_t* px = img.rgb.data() + (static_cast<int64_t>(y) * img.width + x) * 3;
      px[0] = rgb[0];
      px[1] = rgb[1];
      px[2] = rgb[2];
    }
}

}  // namespace

void write_ppm(const std::string& path, const Image& img) {
  if (img.rgb.size() != static_cast<size_t>(img.width) * img.height * 3)
    throw DimensionError("write_ppm: buffer size mismatch");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.rgb.data()),
           static_cast<std::streamsize>(img.rgb.size()));
  if (!os) throw IoError("write failed: " + path);
}

Image heatmap_image(const std::vector<double>& matrix, int rows, int cols,
                    int cell_px) {
  if (matrix.size() != static_cast<size_t>(rows) * cols)
    throw DimensionError("heatmap_image: matrix size mismatch");
  Image img;
  img.width = cols * cell_px;
  img.height = rows * cell_px;
  img.rgb.assign(static_cast<size_t>(img.width) * img.height * 3, 255);
  for (int y = 0; y < rows; ++y)
    for (int x = 0; x < cols; ++x) {
      double v = matrix[static_cast<size_t>(y) * cols + x];
      v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
      const uint8_t rgb[3] = {
          static_cast<uint8_t>(std::lround(255.0 - v * 215.0)),
          static_cast<uint8_t>(std::lround(255.0 - v * 190.0)),
          static_cast<uint8_t>(std::lround(255.0 - v * 90.0))};
      put_block(img, y * cell_px, x * cell_px, cell_px, cell_px, rgb);
    }
  return img;
}

Image phase_ribbon(const std::vector<int>& labels, int num_phases,
                   int height_px, int px_per_frame) {
  Image img;
  img.width = static_cast<int>(labels.size()) * px_per_frame;
  img.height = height_px;
  img.rgb.assign(static_cast<size_t>(img.width) * img.height * 3, 255);
  for (size_t t = 0; t < labels.size(); ++t) {
    const int z = labels[t];
    if (z < 0 || z >= num_phases)
      throw ConfigError("phase_ribbon: label out of range");
    put_block(img, 0, static_cast<int>(t) * px_per_frame, height_px,
              px_per_frame, kPhasePalette[z % 7]);
  }
  return img;
}

Image tool_ribbon(const std::vector<uint8_t>& tools, int len, int num_tools,
                  int row_px, int px_per_frame) {
  if (tools.size() != static_cast<size_t>(len) * num_tools)
    throw DimensionError("tool_ribbon: label size mismatch");
  Image img;
  img.width = len * px_per_frame;
  img.height = num_tools * row_px;
  img.rgb.assign(static_cast<size_t>(img.width) * img.height * 3, 255);
  for (int t = 0; t < len; ++t)
    for (int c = 0; c < num_tools; ++c)
      if (tools[static_cast<size_t>(t) * num_tools + c])
        put_block(img, c * row_px, t * px_per_frame, row_px, px_per_frame,
                  kToolPalette[c % 7]);
  return img;
}

}  // namespace mtrc

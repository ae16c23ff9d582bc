#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dpig/tensor.hpp"

namespace dpig {

// 8-bit grayscale raster
struct GrayImage {
    int64_t width = 0;
    int64_t height = 0;
    std::vector<uint8_t> pixels;  // row-major
};

// maps [-1,1] to [0,255], the inverse of dataset normalization
uint8_t pixel_from_unit(double v);

// rows x cols tiles of [1,h,w] or [c,h,w] tensors with a fixed gutter
GrayImage render_grid(const std::vector<Tensor>& tiles, int64_t rows, int64_t cols,
                      int64_t gutter = 2);

// binary PGM (P5, maxval 255)
void write_pgm(const std::string& path, const GrayImage& img);
GrayImage read_pgm(const std::string& path);

}  // namespace dpig

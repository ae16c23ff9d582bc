#include "dpig/image.hpp"

#include <cmath>
#include <fstream>

namespace dpig {

uint8_t pixel_from_unit(double v) {
    const double scaled = std::round((v + 1.0) * 127.5);
    return static_cast<uint8_t>(std::min(255.0, std::max(0.0, scaled)));
}

GrayImage render_grid(const std::vector<Tensor>& tiles, int64_t rows, int64_t cols,
                      int64_t gutter) {
    if (tiles.empty() || rows < 1 || cols < 1 ||
        static_cast<int64_t>(tiles.size()) != rows * cols) {
        throw ShapeError("render_grid: need rows*cols tiles");
    }
    const Tensor& first = tiles[0];
    if (first.rank() < 2) {
        throw ShapeError("render_grid: tiles must have trailing [h,w] dims");
    }
    const int64_t h = first.shape[first.rank() - 2];
    const int64_t w = first.shape[first.rank() - 1];
    if (first.numel() != h * w) {
        throw ShapeError("render_grid: tiles must be single-channel, got " + shape_str(first.shape));
    }
    GrayImage img;
    img.height = rows * h + (rows - 1) * gutter;
    img.width = cols * w + (cols - 1) * gutter;
    img.pixels.assign(static_cast<size_t>(img.height * img.width), 0);
    for (int64_t r = 0; r < rows; ++r) {
        for (int64_t c = 0; c < cols; ++c) {
            const Tensor& t = tiles[static_cast<size_t>(r * cols + c)];
            if (t.numel() != h * w) throw ShapeError("render_grid: tile size mismatch");
            const int64_t y0 = r * (h + gutter);
            const int64_t x0 = c * (w + gutter);
            for (int64_t y = 0; y < h; ++y) {
                for (int64_t x = 0; x < w; ++x) {
                    img.pixels[static_cast<size_t>((y0 + y) * img.width + (x0 + x))] =
                        pixel_from_unit(t.data[static_cast<size_t>(y * w + x)]);
                }
            }
        }
    }
    return img;
}

void write_pgm(const std::string& path, const GrayImage& img) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write image: " + path);
    f << "P5\n" << img.width << " " << img.height << "\n255\n";
    f.write(reinterpret_cast<const char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
}

GrayImage read_pgm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open image: " + path);
    std::string magic;
    f >> magic;
    if (magic != "P5") throw DataError("not a binary PGM: " + path);
    int64_t w = 0, h = 0, maxval = 0;
    f >> w >> h >> maxval;
    if (w < 1 || h < 1 || maxval != 255) throw DataError("unsupported PGM header: " + path);
    f.get();  // single whitespace after header
    GrayImage img;
    img.width = w;
    img.height = h;
    img.pixels.resize(static_cast<size_t>(w * h));
    if (!f.read(reinterpret_cast<char*>(img.pixels.data()),
                static_cast<std::streamsize>(img.pixels.size()))) {
        throw DataError("truncated PGM: " + path);
    }
    return img;
}

}  // namespace dpig

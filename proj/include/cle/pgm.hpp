#pragma once

#include <string>
#include <vector>

#include "cle/tensor.hpp"

namespace cle {

// Tiles `images` (each h*w, pixels in [0,1]) row-major into a rows x cols
// grid with 1-pixel white separators and writes binary PGM (P5, maxval 255).
void emit_pgm(const std::vector<Tensor>& images, std::size_t h, std::size_t w,
              std::size_t rows, std::size_t cols, const std::string& path);

struct PgmImage {
  std::size_t width = 0, height = 0;
  std::vector<unsigned char> pixels;
};

PgmImage read_pgm(const std::string& path);

}  // namespace cle

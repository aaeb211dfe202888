#include "cle/pgm.hpp"

#include <cmath>
#include <fstream>

namespace cle {

void emit_pgm(const std::vector<Tensor>& images, std::size_t h, std::size_t w,
              std::size_t rows, std::size_t cols, const std::string& path) {
  if (images.size() < rows * cols)
    throw std::runtime_error("pgm: " + std::to_string(images.size()) +
                             " images for a " + std::to_string(rows) + "x" +
                             std::to_string(cols) + " grid");
  const std::size_t gh = rows * h + rows - 1;
  const std::size_t gw = cols * w + cols - 1;
  std::vector<unsigned char> canvas(gh * gw, 255);  // separators white
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      const Tensor& img = images[r * cols + c];
      if (img.size() != h * w)
        throw std::runtime_error("pgm: image size " + std::to_string(img.size()) +
                                 " != " + std::to_string(h * w));
      const std::size_t oy = r * (h + 1), ox = c * (w + 1);
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          const double v = img[y * w + x];
          if (v < 0.0 || v > 1.0)
            throw std::runtime_error("pgm: pixel out of [0,1]");
          canvas[(oy + y) * gw + ox + x] =
              static_cast<unsigned char>(std::lround(v * 255.0));
        }
    }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("pgm: cannot write " + path);
  out << "P5\n" << gw << " " << gh << "\n255\n";
  out.write(reinterpret_cast<const char*>(canvas.data()),
            static_cast<std::streamsize>(canvas.size()));
  if (!out) throw std::runtime_error("pgm: short write to " + path);
}

PgmImage read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("pgm: cannot open " + path);
  std::string magic;
  in >> magic;
  if (magic != "P5") throw std::runtime_error("pgm: bad magic in " + path);
  std::size_t w, h;
  int maxval;
  in >> w >> h >> maxval;
  in.get();  // single whitespace after maxval
  if (maxval != 255) throw std::runtime_error("pgm: unsupported maxval");
  PgmImage img;
  img.width = w;
  img.height = h;
  img.pixels.resize(w * h);
  in.read(reinterpret_cast<char*>(img.pixels.data()),
          static_cast<std::streamsize>(w * h));
  if (static_cast<std::size_t>(in.gcount()) != w * h)
    throw std::runtime_error("pgm: truncated payload in " + path);
  return img;
}

}  // namespace cle

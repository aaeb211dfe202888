#include "cle/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace cle {

namespace {

std::uint32_t read_be32(const unsigned char* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
         (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

void write_be32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

IdxArray read_idx(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IdxError("idx: cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 4) throw IdxError("idx: " + path + ": file shorter than magic");
  if (bytes[0] != 0 || bytes[1] != 0)
    throw IdxError("idx: " + path + ": bad magic (first two bytes nonzero)");
  if (bytes[2] != 0x08)
    throw IdxError("idx: " + path + ": unsupported dtype byte 0x" +
                   std::to_string(bytes[2]) + " (only unsigned byte 0x08)");
  const std::size_t ndim = bytes[3];
  if (bytes.size() < 4 + 4 * ndim)
    throw IdxError("idx: " + path + ": truncated dimension header");
  IdxArray arr;
  std::size_t count = 1;
  for (std::size_t i = 0; i < ndim; ++i) {
    std::uint32_t d = read_be32(bytes.data() + 4 + 4 * i);
    arr.dims.push_back(d);
    count *= d;
  }
  const std::size_t expect = 4 + 4 * ndim + count;
  if (bytes.size() != expect)
    throw IdxError("idx: " + path + ": expected " + std::to_string(expect) +
                   " bytes, got " + std::to_string(bytes.size()));
  arr.data.assign(bytes.begin() + 4 + 4 * ndim, bytes.end());
  return arr;
}

void write_idx(const IdxArray& arr, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IdxError("idx: cannot write " + path);
  unsigned char magic[4] = {0, 0, 0x08, static_cast<unsigned char>(arr.dims.size())};
  out.write(reinterpret_cast<const char*>(magic), 4);
  for (auto d : arr.dims) write_be32(out, d);
  out.write(reinterpret_cast<const char*>(arr.data.data()),
            static_cast<std::streamsize>(arr.data.size()));
  if (!out) throw IdxError("idx: short write to " + path);
}

Dataset make_image_dataset(const IdxArray& images, const IdxArray& labels,
                           std::size_t classes, bool downsample_to_8x8,
                           std::size_t per_class_cap) {
  if (images.dims.size() != 3)
    throw IdxError("image dataset: expected rank-3 image array, got rank " +
                   std::to_string(images.dims.size()));
  if (labels.dims.size() != 1)
    throw IdxError("image dataset: expected rank-1 label array");
  const std::size_t n = images.dims[0], r = images.dims[1], c = images.dims[2];
  if (labels.dims[0] != n)
    throw IdxError("image dataset: " + std::to_string(n) + " images vs " +
                   std::to_string(labels.dims[0]) + " labels");

  const std::size_t oh = downsample_to_8x8 ? 8 : r;
  const std::size_t ow = downsample_to_8x8 ? 8 : c;
  // nearest-partition block boundaries
  std::vector<std::size_t> rb(oh + 1), cb(ow + 1);
  for (std::size_t i = 0; i <= oh; ++i)
    rb[i] = static_cast<std::size_t>(std::lround(double(i) * double(r) / double(oh)));
  for (std::size_t j = 0; j <= ow; ++j)
    cb[j] = static_cast<std::size_t>(std::lround(double(j) * double(c) / double(ow)));

  std::vector<std::size_t> per_class(classes, 0);
  std::vector<double> rows;
  std::vector<int> keep_labels;
  for (std::size_t i = 0; i < n; ++i) {
    const int y = labels.data[i];
    if (y < 0 || static_cast<std::size_t>(y) >= classes)
      throw IdxError("image dataset: label " + std::to_string(y) +
                     " out of range for " + std::to_string(classes) + " classes");
    if (per_class_cap && per_class[y] >= per_class_cap) continue;
    per_class[y] += 1;
    keep_labels.push_back(y);
    const std::uint8_t* img = images.data.data() + i * r * c;
    for (std::size_t bi = 0; bi < oh; ++bi)
      for (std::size_t bj = 0; bj < ow; ++bj) {
        double s = 0.0;
        std::size_t cnt = 0;
        for (std::size_t rr = rb[bi]; rr < rb[bi + 1]; ++rr)
          for (std::size_t cc = cb[bj]; cc < cb[bj + 1]; ++cc) {
            s += img[rr * c + cc];
            ++cnt;
          }
        rows.push_back(cnt ? s / (255.0 * double(cnt)) : 0.0);
      }
  }
  Dataset d;
  d.classes = classes;
  d.labels = std::move(keep_labels);
  d.inputs = Tensor({d.labels.size(), oh * ow}, std::move(rows));
  return d;
}

namespace {

Dataset subset(const Dataset& src, const std::vector<std::size_t>& idx,
               const std::vector<int>& relabel, std::size_t classes) {
  Dataset d;
  d.classes = classes;
  const std::size_t dim = src.dim();
  std::vector<double> rows;
  rows.reserve(idx.size() * dim);
  for (std::size_t i : idx) {
    const double* p = src.inputs.data() + i * dim;
    rows.insert(rows.end(), p, p + dim);
    d.labels.push_back(relabel[src.labels[i]]);
  }
  d.inputs = Tensor({idx.size(), dim}, std::move(rows));
  return d;
}

}  // namespace

TaskStream make_split_stream(const Dataset& train, const Dataset& test,
                             const std::vector<std::pair<int, int>>& pairs) {
  TaskStream s;
  for (auto [a, b] : pairs) {
    std::vector<int> relabel(train.classes, -1);
    relabel[a] = 0;
    relabel[b] = 1;
    Task t;
    t.head_classes = 2;
    t.class_map = {a, b};
    for (int pass = 0; pass < 2; ++pass) {
      const Dataset& src = pass == 0 ? train : test;
      std::vector<std::size_t> idx;
      bool seen_a = false, seen_b = false;
      for (std::size_t i = 0; i < src.size(); ++i) {
        if (src.labels[i] == a || src.labels[i] == b) {
          idx.push_back(i);
          (src.labels[i] == a ? seen_a : seen_b) = true;
        }
      }
      if (!seen_a || !seen_b)
        throw std::runtime_error(
            "split stream: class " + std::to_string(seen_a ? b : a) +
            " missing from " + (pass == 0 ? "train" : "test") + " data");
      (pass == 0 ? t.train : t.test) = subset(src, idx, relabel, 2);
    }
    s.tasks.push_back(std::move(t));
  }
  return s;
}

namespace {

Dataset permute_pixels(const Dataset& src, const std::vector<std::size_t>& perm) {
  Dataset d;
  d.classes = src.classes;
  d.labels = src.labels;
  const std::size_t dim = src.dim();
  Tensor out({src.size(), dim});
  for (std::size_t i = 0; i < src.size(); ++i)
    for (std::size_t j = 0; j < dim; ++j)
      out[i * dim + j] = src.inputs[i * dim + perm[j]];
  d.inputs = std::move(out);
  return d;
}

}  // namespace

TaskStream make_permuted_stream(const Dataset& train, const Dataset& test,
                                std::size_t t_count, std::uint64_t seed) {
  if (t_count < 1) throw std::runtime_error("permuted stream: need T >= 1");
  const std::size_t dim = train.dim();
  TaskStream s;
  for (std::size_t t = 0; t < t_count; ++t) {
    Task task;
    task.head_classes = train.classes;
    task.permutation.resize(dim);
    for (std::size_t j = 0; j < dim; ++j) task.permutation[j] = j;
    if (t > 0) {
      RngStream rng(seed, "perm", t);
      rng.shuffle(task.permutation);
    }
    task.train = permute_pixels(train, task.permutation);
    task.test = permute_pixels(test, task.permutation);
    s.tasks.push_back(std::move(task));
  }
  return s;
}

namespace {

void rescale_01(Tensor& a, Tensor& b) {
  double lo = a[0], hi = a[0];
  for (const Tensor* t : {&a, &b})
    for (std::size_t i = 0; i < t->size(); ++i) {
      lo = std::min(lo, (*t)[i]);
      hi = std::max(hi, (*t)[i]);
    }
  const double span = hi > lo ? hi - lo : 1.0;
  for (Tensor* t : {&a, &b})
    for (std::size_t i = 0; i < t->size(); ++i)
      (*t)[i] = std::clamp(((*t)[i] - lo) / span, 0.0, 1.0);
}

Dataset blobs_split(const SyntheticParams& p, std::size_t per_class,
                    RngStream& rng) {
  Dataset d;
  d.classes = p.classes;
  Tensor x({p.classes * per_class, p.dim});
  std::size_t row = 0;
  for (std::size_t c = 0; c < p.classes; ++c) {
    const std::size_t axis = c % p.dim;
    const double center = p.separation * p.spread * (1.0 + double(c / p.dim));
    for (std::size_t i = 0; i < per_class; ++i, ++row) {
      for (std::size_t j = 0; j < p.dim; ++j)
        x[row * p.dim + j] = (j == axis ? center : 0.0) + p.spread * rng.normal();
      d.labels.push_back(static_cast<int>(c));
    }
  }
  d.inputs = std::move(x);
  return d;
}

Dataset moons_split(const SyntheticParams& p, std::size_t per_class,
                    RngStream& rng) {
  Dataset d;
  d.classes = 2;
  Tensor x({2 * per_class, 2});
  std::size_t row = 0;
  for (int c = 0; c < 2; ++c)
    for (std::size_t i = 0; i < per_class; ++i, ++row) {
      const double t = 3.14159265358979323846 * rng.uniform();
      double px = std::cos(t), py = std::sin(t);
      if (c == 1) {
        px = 1.0 - px;
        py = 0.5 - py;
      }
      x[row * 2 + 0] = px + p.spread * rng.normal();
      x[row * 2 + 1] = py + p.spread * rng.normal();
      d.labels.push_back(c);
    }
  d.inputs = std::move(x);
  return d;
}

// Smooth per-class 8x8 prototypes: a few Gaussian bumps at seeded locations.
std::vector<Tensor> image_prototypes(std::size_t classes, RngStream& rng) {
  std::vector<Tensor> protos;
  for (std::size_t c = 0; c < classes; ++c) {
    Tensor proto({8, 8});
    const int bumps = 2 + static_cast<int>(rng.integer(2));
    for (int b = 0; b < bumps; ++b) {
      const double cy = 1.0 + 6.0 * rng.uniform();
      const double cx = 1.0 + 6.0 * rng.uniform();
      const double amp = 0.6 + 0.4 * rng.uniform();
      const double s2 = 2.0 * (0.8 + 0.8 * rng.uniform());
      for (std::size_t r = 0; r < 8; ++r)
        for (std::size_t col = 0; col < 8; ++col) {
          const double d2 = (r - cy) * (r - cy) + (col - cx) * (col - cx);
          proto[r * 8 + col] += amp * std::exp(-d2 / s2);
        }
    }
    for (std::size_t i = 0; i < proto.size(); ++i)
      proto[i] = std::clamp(proto[i], 0.0, 1.0);
    protos.push_back(std::move(proto));
  }
  return protos;
}

Dataset images_split(const SyntheticParams& p, std::size_t per_class,
                     const std::vector<Tensor>& protos, RngStream& rng) {
  Dataset d;
  d.classes = p.classes;
  Tensor x({p.classes * per_class, 64});
  std::size_t row = 0;
  for (std::size_t c = 0; c < p.classes; ++c)
    for (std::size_t i = 0; i < per_class; ++i, ++row) {
      for (std::size_t j = 0; j < 64; ++j)
        x[row * 64 + j] =
            std::clamp(protos[c][j] + p.spread * rng.normal(), 0.0, 1.0);
      d.labels.push_back(static_cast<int>(c));
    }
  d.inputs = std::move(x);
  return d;
}

}  // namespace

DataPair make_synthetic(const SyntheticParams& p, std::uint64_t seed) {
  if (p.train_per_class < 1 || p.test_per_class < 1)
    throw std::runtime_error("synthetic: per-class counts must be >= 1");
  if (p.spread <= 0.0) throw std::runtime_error("synthetic: spread must be > 0");
  RngStream train_rng(seed, "synth-train");
  RngStream test_rng(seed, "synth-test");
  DataPair out;
  if (p.kind == "gauss-blobs") {
    if (p.dim < 1) throw std::runtime_error("synthetic: dim must be >= 1");
    out.train = blobs_split(p, p.train_per_class, train_rng);
    out.test = blobs_split(p, p.test_per_class, test_rng);
    rescale_01(out.train.inputs, out.test.inputs);
  } else if (p.kind == "two-moons") {
    out.train = moons_split(p, p.train_per_class, train_rng);
    out.test = moons_split(p, p.test_per_class, test_rng);
    rescale_01(out.train.inputs, out.test.inputs);
  } else if (p.kind == "cluster-images") {
    RngStream proto_rng(seed, "synth-proto");
    auto protos = image_prototypes(p.classes, proto_rng);
    out.train = images_split(p, p.train_per_class, protos, train_rng);
    out.test = images_split(p, p.test_per_class, protos, test_rng);
  } else {
    throw std::runtime_error("synthetic: unknown kind '" + p.kind + "'");
  }
  return out;
}

}  // namespace cle

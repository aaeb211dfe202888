#include "doctest.h"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "cle/data.hpp"
#include "cle/rng.hpp"

using namespace cle;

namespace {

std::string tmp_path(const std::string& name) {
  return std::string("/tmp/cle_data_test_") + name;
}

void write_bytes(const std::string& path, const std::vector<std::uint8_t>& b) {
  std::ofstream f(path, std::ios::binary);
  f.write(reinterpret_cast<const char*>(b.data()),
          static_cast<std::streamsize>(b.size()));
}

std::vector<std::uint8_t> read_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(f), {});
}

// Small labeled dataset with `classes` classes, n per class, deterministic.
Dataset tiny_dataset(std::size_t classes, std::size_t per_class,
                     std::size_t dim, std::uint64_t seed) {
  RngStream rng(seed, "tiny-data");
  const std::size_t n = classes * per_class;
  Dataset d;
  d.inputs = Tensor({n, dim});
  d.labels.resize(n);
  d.classes = classes;
  for (std::size_t i = 0; i < n; ++i) {
    d.labels[i] = int(i % classes);
    for (std::size_t j = 0; j < dim; ++j) d.inputs.at(i, j) = rng.uniform();
  }
  return d;
}

}  // namespace

TEST_CASE("read_idx parses the header example payload") {
  const auto path = tmp_path("vec.idx");
  write_bytes(path, {0x00, 0x00, 0x08, 0x01, 0x00, 0x00, 0x00, 0x03,
                     0, 128, 255});
  IdxArray arr = read_idx(path);
  REQUIRE(arr.dims == std::vector<std::uint32_t>{3});
  REQUIRE(arr.data.size() == 3);
  CHECK(arr.data[0] == 0);
  CHECK(arr.data[1] == 128);
  CHECK(arr.data[2] == 255);

  // the /255 rescaling shows up through make_image_dataset
  IdxArray imgs;
  imgs.dims = {1, 1, 3};
  imgs.data = {0, 128, 255};
  IdxArray labels;
  labels.dims = {1};
  labels.data = {0};
  Dataset d = make_image_dataset(imgs, labels, 1, false, 0);
  CHECK(d.inputs[0] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(d.inputs[1] == doctest::Approx(128.0 / 255.0).epsilon(1e-12));
  CHECK(d.inputs[2] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("read_idx structured errors") {
  const auto bad_magic = tmp_path("bad_magic.idx");
  write_bytes(bad_magic, {0x01, 0x00, 0x08, 0x01, 0x00, 0x00, 0x00, 0x01, 7});
  CHECK_THROWS_AS((void)read_idx(bad_magic), IdxError);

  const auto bad_dtype = tmp_path("bad_dtype.idx");
  write_bytes(bad_dtype, {0x00, 0x00, 0x0D, 0x01, 0x00, 0x00, 0x00, 0x01, 7});
  CHECK_THROWS_AS((void)read_idx(bad_dtype), IdxError);

  // truncation error names expected vs actual byte counts
  const auto trunc = tmp_path("trunc.idx");
  write_bytes(trunc, {0x00, 0x00, 0x08, 0x01, 0x00, 0x00, 0x00, 0x05, 1, 2});
  try {
    (void)read_idx(trunc);
    CHECK(false);
  } catch (const IdxError& e) {
    const std::string msg = e.what();
    // header 4 + dims 4 + payload 5 = 13 expected; file has 10 bytes
    CHECK(msg.find("13") != std::string::npos);
    CHECK(msg.find("10") != std::string::npos);
  }

  CHECK_THROWS_AS((void)read_idx(tmp_path("missing.idx")), IdxError);
}

TEST_CASE("write_idx / read_idx round-trips bitwise") {
  RngStream rng(2, "idx-rt");
  IdxArray arr;
  arr.dims = {4, 3, 5};
  arr.data.resize(4 * 3 * 5);
  for (auto& b : arr.data) b = std::uint8_t(rng.integer(256));

  const auto p1 = tmp_path("rt1.idx"), p2 = tmp_path("rt2.idx");
  write_idx(arr, p1);
  IdxArray back = read_idx(p1);
  CHECK(back.dims == arr.dims);
  CHECK(back.data == arr.data);
  write_idx(back, p2);
  CHECK(read_bytes(p1) == read_bytes(p2));
}

TEST_CASE("make_image_dataset downsampling and caps") {
  // 28x28 constant-valued image downsampled to 8x8 keeps the constant
  IdxArray imgs;
  imgs.dims = {1, 28, 28};
  imgs.data.assign(28 * 28, 102);
  IdxArray labels;
  labels.dims = {1};
  labels.data = {1};
  Dataset d = make_image_dataset(imgs, labels, 2, true, 0);
  CHECK(d.dim() == 64);
  for (std::size_t i = 0; i < 64; ++i)
    CHECK(d.inputs[i] == doctest::Approx(102.0 / 255.0).epsilon(1e-12));

  // per-class cap keeps the first `cap` examples of each class
  IdxArray many;
  many.dims = {6, 1, 1};
  many.data = {10, 20, 30, 40, 50, 60};
  IdxArray ml;
  ml.dims = {6};
  ml.data = {0, 1, 0, 1, 0, 1};
  Dataset capped = make_image_dataset(many, ml, 2, false, 2);
  CHECK(capped.size() == 4);
  std::size_t c0 = 0, c1 = 0;
  for (int l : capped.labels) (l == 0 ? c0 : c1)++;
  CHECK(c0 == 2);
  CHECK(c1 == 2);
}

TEST_CASE("make_split_stream") {
  Dataset train = tiny_dataset(10, 6, 4, 11);
  Dataset test = tiny_dataset(10, 3, 4, 12);
  TaskStream s = make_split_stream(train, test, {{0, 1}, {2, 3}});
  REQUIRE(s.tasks.size() == 2);

  for (std::size_t t = 0; t < 2; ++t) {
    const Task& task = s.tasks[t];
    CHECK(task.head_classes == 2);
    // pair order preserved as task order; class_map recovers original ids
    CHECK(task.class_map == std::vector<int>{int(2 * t), int(2 * t + 1)});
    // labels remapped to {0,1}; counting oracle: 6 per class train, 3 test
    CHECK(task.train.size() == 12);
    CHECK(task.test.size() == 6);
    for (int l : task.train.labels) CHECK((l == 0 || l == 1));
  }

  // missing class is a structured error
  CHECK_THROWS((void)make_split_stream(train, test, {{0, 99}}));

  // total examples across the stream = examples whose class is in some pair
  std::size_t total = 0;
  for (const auto& t : s.tasks) total += t.train.size();
  std::size_t expect = 0;
  for (int l : train.labels) expect += l <= 3;
  CHECK(total == expect);
}

TEST_CASE("make_permuted_stream") {
  Dataset train = tiny_dataset(3, 8, 9, 21);
  Dataset test = tiny_dataset(3, 4, 9, 22);

  SUBCASE("T=1 is the identity") {
    TaskStream s = make_permuted_stream(train, test, 1, 7);
    REQUIRE(s.tasks.size() == 1);
    CHECK(s.tasks[0].train.inputs == train.inputs);
    CHECK(s.tasks[0].test.inputs == test.inputs);
  }

  SUBCASE("permutations are bijections and preserve histograms") {
    TaskStream s = make_permuted_stream(train, test, 3, 7);
    REQUIRE(s.tasks.size() == 3);
    // task 0 identity
    for (std::size_t j = 0; j < 9; ++j) CHECK(s.tasks[0].permutation[j] == j);

    for (std::size_t t = 1; t < 3; ++t) {
      auto perm = s.tasks[t].permutation;
      std::sort(perm.begin(), perm.end());
      for (std::size_t j = 0; j < 9; ++j) CHECK(perm[j] == j);

      // per-row multiset of pixel values is unchanged
      for (std::size_t r = 0; r < train.size(); ++r) {
        std::vector<double> a(9), b(9);
        for (std::size_t j = 0; j < 9; ++j) {
          a[j] = train.inputs.at(r, j);
          b[j] = s.tasks[t].train.inputs.at(r, j);
        }
        std::sort(a.begin(), a.end());
        std::sort(b.begin(), b.end());
        CHECK(a == b);
      }
      // same permutation on train and test
      for (std::size_t j = 0; j < 9; ++j)
        CHECK(s.tasks[t].test.inputs.at(0, j) ==
              test.inputs.at(0, s.tasks[t].permutation[j]));
      // full multiclass
      CHECK(s.tasks[t].head_classes == 3);
    }

    // deterministic in the seed
    TaskStream s2 = make_permuted_stream(train, test, 3, 7);
    CHECK(s2.tasks[2].train.inputs == s.tasks[2].train.inputs);
    TaskStream s3 = make_permuted_stream(train, test, 3, 8);
    CHECK(s3.tasks[2].permutation != s.tasks[2].permutation);
  }
}

TEST_CASE("make_synthetic gauss-blobs is linearly separable at 10 sigma") {
  SyntheticParams p;
  p.kind = "gauss-blobs";
  p.classes = 2;
  p.dim = 2;
  p.train_per_class = 100;
  p.test_per_class = 50;
  p.spread = 1.0;
  p.separation = 10.0;
  DataPair d = make_synthetic(p, 99);

  // nearest-class-mean classifier (linear for two classes)
  Tensor mean({2, 2});
  std::vector<std::size_t> count(2, 0);
  for (std::size_t i = 0; i < d.train.size(); ++i) {
    const int c = d.train.labels[i];
    count[c]++;
    for (std::size_t j = 0; j < 2; ++j)
      mean.at(c, j) += d.train.inputs.at(i, j);
  }
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t j = 0; j < 2; ++j) mean.at(c, j) /= double(count[c]);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < d.test.size(); ++i) {
    double best = 1e300;
    int arg = 0;
    for (int c = 0; c < 2; ++c) {
      double dist = 0;
      for (std::size_t j = 0; j < 2; ++j) {
        const double diff = d.test.inputs.at(i, j) - mean.at(c, j);
        dist += diff * diff;
      }
      if (dist < best) {
        best = dist;
        arg = c;
      }
    }
    hits += arg == d.test.labels[i];
  }
  CHECK(double(hits) / d.test.size() >= 0.99);
}

TEST_CASE("make_synthetic determinism and ranges") {
  for (const char* kind : {"gauss-blobs", "two-moons", "cluster-images"}) {
    SyntheticParams p;
    p.kind = kind;
    p.classes = 2;
    p.train_per_class = 20;
    p.test_per_class = 10;
    DataPair a = make_synthetic(p, 5);
    DataPair b = make_synthetic(p, 5);
    CHECK(a.train.inputs == b.train.inputs);
    CHECK(a.test.inputs == b.test.inputs);
    CHECK(a.train.labels == b.train.labels);

    DataPair c = make_synthetic(p, 6);
    CHECK(a.train.inputs != c.train.inputs);

    // inputs within [0,1] for every generator
    for (std::size_t i = 0; i < a.train.inputs.size(); ++i) {
      CHECK(a.train.inputs[i] >= 0.0);
      CHECK(a.train.inputs[i] <= 1.0);
    }

    // no train example repeats verbatim in test
    const std::size_t dim = a.train.dim();
    for (std::size_t i = 0; i < a.train.size(); ++i)
      for (std::size_t j = 0; j < a.test.size(); ++j) {
        bool same = true;
        for (std::size_t k = 0; k < dim && same; ++k)
          same = a.train.inputs.at(i, k) == a.test.inputs.at(j, k);
        CHECK(!same);
      }
  }

  // cluster-images are 8x8
  SyntheticParams p;
  p.kind = "cluster-images";
  p.classes = 3;
  p.train_per_class = 5;
  p.test_per_class = 2;
  DataPair d = make_synthetic(p, 7);
  CHECK(d.train.dim() == 64);
}

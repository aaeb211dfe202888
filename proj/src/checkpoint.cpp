#include "cle/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace cle {

namespace {

constexpr char kMagic[8] = {'C', 'L', 'E', 'C', 'K', '0', '0', '1'};

struct Writer {
  std::ofstream out;
  explicit Writer(const std::string& path) : out(path, std::ios::binary) {
    if (!out) throw CheckpointError("checkpoint: cannot write " + path);
  }
  void bytes(const void* p, std::size_t n) {
    out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  }
  void u64(std::uint64_t v) { bytes(&v, 8); }
  void f64(double v) { bytes(&v, 8); }
  void str(const std::string& s) {
    u64(s.size());
    bytes(s.data(), s.size());
  }
  void tensor(const Tensor& t) {
    u64(t.shape().size());
    for (auto d : t.shape()) u64(d);
    // element count written explicitly: a default-constructed tensor and a
    // rank-0 scalar both have zero dims but 0 vs 1 elements
    u64(t.size());
    bytes(t.data(), t.size() * sizeof(double));
  }
  void param(const Param& p) {
    tensor(p.value);
    tensor(p.m);
    tensor(p.v);
    u64(static_cast<std::uint64_t>(p.steps));
  }
  void ints(const std::vector<int>& v) {
    u64(v.size());
    for (int x : v) u64(static_cast<std::uint64_t>(static_cast<std::int64_t>(x)));
  }
};

struct Reader {
  std::ifstream in;
  explicit Reader(const std::string& path) : in(path, std::ios::binary) {
    if (!in) throw CheckpointError("checkpoint: cannot open " + path);
  }
  void bytes(void* p, std::size_t n) {
    in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n)
      throw CheckpointError("checkpoint: truncated file");
  }
  std::uint64_t u64() {
    std::uint64_t v;
    bytes(&v, 8);
    return v;
  }
  double f64() {
    double v;
    bytes(&v, 8);
    return v;
  }
  std::string str() {
    std::string s(u64(), '\0');
    bytes(s.data(), s.size());
    return s;
  }
  Tensor tensor() {
    std::vector<std::size_t> shape(u64());
    for (auto& d : shape) d = u64();
    const std::uint64_t n = u64();
    if (n == 0 && shape.empty()) return Tensor();
    if (n != Tensor::count(shape))
      throw CheckpointError("checkpoint: tensor length does not match shape");
    std::vector<double> data(n);
    bytes(data.data(), n * sizeof(double));
    return Tensor(std::move(shape), std::move(data));
  }
  Param param() {
    Param p;
    p.value = tensor();
    p.m = tensor();
    p.v = tensor();
    p.steps = static_cast<std::int64_t>(u64());
    return p;
  }
  std::vector<int> ints() {
    std::vector<int> v(u64());
    for (auto& x : v) x = static_cast<int>(static_cast<std::int64_t>(u64()));
    return v;
  }
};

void write_layer(Writer& w, const IbpLayerPosterior& l) {
  w.u64(l.input_dim);
  w.u64(l.width);
  w.f64(l.alpha);
  w.param(l.weights.mu);
  w.param(l.weights.raw_sigma);
  w.param(l.bias.mu);
  w.param(l.bias.raw_sigma);
  w.param(l.mask_logits);
  w.param(l.sticks.raw_a);
  w.param(l.sticks.raw_b);
}

IbpLayerPosterior read_layer(Reader& r) {
  IbpLayerPosterior l;
  l.input_dim = r.u64();
  l.width = r.u64();
  l.alpha = r.f64();
  l.weights.mu = r.param();
  l.weights.raw_sigma = r.param();
  l.bias.mu = r.param();
  l.bias.raw_sigma = r.param();
  l.mask_logits = r.param();
  l.sticks.raw_a = r.param();
  l.sticks.raw_b = r.param();
  return l;
}

void write_dense(Writer& w, const DenseGaussian& d) {
  w.u64(d.in);
  w.u64(d.out);
  w.param(d.w.mu);
  w.param(d.w.raw_sigma);
  w.param(d.b.mu);
  w.param(d.b.raw_sigma);
}

DenseGaussian read_dense(Reader& r) {
  DenseGaussian d;
  d.in = r.u64();
  d.out = r.u64();
  d.w.mu = r.param();
  d.w.raw_sigma = r.param();
  d.b.mu = r.param();
  d.b.raw_sigma = r.param();
  return d;
}

void write_prior(Writer& w, const LayerPrior& p) {
  w.tensor(p.w_mean);
  w.tensor(p.w_var);
  w.tensor(p.b_mean);
  w.tensor(p.b_var);
}

LayerPrior read_prior(Reader& r) {
  LayerPrior p;
  p.w_mean = r.tensor();
  p.w_var = r.tensor();
  p.b_mean = r.tensor();
  p.b_var = r.tensor();
  return p;
}

}  // namespace

void checkpoint_save(const TrainerState& s, const std::string& path) {
  Writer w(path);
  w.bytes(kMagic, 8);
  w.str(config_dump(s.cfg));
  w.u64(s.next_task);

  if (s.cfg.problem == "supervised") {
    w.u64(s.sup.trunk.size());
    for (const auto& l : s.sup.trunk) write_layer(w, l);
    w.u64(s.sup.heads.size());
    for (const auto& h : s.sup.heads) write_dense(w, h);
    w.u64(s.sup.head_classes.size());
    for (auto c : s.sup.head_classes) w.u64(c);
  } else {
    w.u64(s.vae.data_dim);
    w.u64(s.vae.latent_dim);
    w.u64(s.vae.encoder.size());
    for (const auto& l : s.vae.encoder) write_layer(w, l);
    w.u64(s.vae.decoder.size());
    for (const auto& l : s.vae.decoder) write_layer(w, l);
    write_dense(w, s.vae.out);
    w.u64(s.vae.z_mean_heads.size());
    for (const auto& h : s.vae.z_mean_heads) write_dense(w, h);
    for (const auto& h : s.vae.z_raw_sigma_heads) write_dense(w, h);
  }

  w.f64(s.priors.sigma0);
  w.u64(s.priors.trunk.size());
  for (const auto& p : s.priors.trunk) write_prior(w, p);
  w.u64(s.priors.decoder.size());
  for (const auto& p : s.priors.decoder) write_prior(w, p);
  w.u64(s.priors.out.has_value() ? 1 : 0);
  if (s.priors.out) write_prior(w, *s.priors.out);

  w.u64(s.masks.size());
  for (const auto& m : s.masks) {
    w.u64(m.trunk.size());
    for (const auto& t : m.trunk) w.tensor(t);
    w.u64(m.dec.size());
    for (const auto& t : m.dec) w.tensor(t);
  }

  w.u64(s.coreset.inputs.size());
  for (std::size_t i = 0; i < s.coreset.inputs.size(); ++i) {
    w.tensor(s.coreset.inputs[i]);
    w.ints(s.coreset.labels[i]);
  }

  w.u64(s.R.size());
  for (const auto& row : s.R) {
    w.u64(row.size());
    for (double v : row) w.f64(v);
  }
  if (!w.out) throw CheckpointError("checkpoint: short write to " + path);
}

TrainerState checkpoint_load(const std::string& path) {
  Reader r(path);
  char magic[8];
  r.bytes(magic, 8);
  if (std::memcmp(magic, kMagic, 8) != 0)
    throw CheckpointError("checkpoint: bad magic in " + path);
  TrainerState s;
  s.cfg = config_parse(r.str());
  s.mode = s.cfg.mode == "npbcl"  ? RunMode::Npbcl
           : s.cfg.mode == "vcl"  ? RunMode::Vcl
                                  : RunMode::Naive;
  s.next_task = r.u64();

  if (s.cfg.problem == "supervised") {
    s.sup.trunk.resize(r.u64());
    for (auto& l : s.sup.trunk) l = read_layer(r);
    s.sup.heads.resize(r.u64());
    for (auto& h : s.sup.heads) h = read_dense(r);
    s.sup.head_classes.resize(r.u64());
    for (auto& c : s.sup.head_classes) c = r.u64();
  } else {
    s.vae.data_dim = r.u64();
    s.vae.latent_dim = r.u64();
    s.vae.encoder.resize(r.u64());
    for (auto& l : s.vae.encoder) l = read_layer(r);
    s.vae.decoder.resize(r.u64());
    for (auto& l : s.vae.decoder) l = read_layer(r);
    s.vae.out = read_dense(r);
    s.vae.z_mean_heads.resize(r.u64());
    for (auto& h : s.vae.z_mean_heads) h = read_dense(r);
    s.vae.z_raw_sigma_heads.resize(s.vae.z_mean_heads.size());
    for (auto& h : s.vae.z_raw_sigma_heads) h = read_dense(r);
  }

  s.priors.sigma0 = r.f64();
  s.priors.trunk.resize(r.u64());
  for (auto& p : s.priors.trunk) p = read_prior(r);
  s.priors.decoder.resize(r.u64());
  for (auto& p : s.priors.decoder) p = read_prior(r);
  if (r.u64()) s.priors.out = read_prior(r);

  s.masks.resize(r.u64());
  for (auto& m : s.masks) {
    m.trunk.resize(r.u64());
    for (auto& t : m.trunk) t = r.tensor();
    m.dec.resize(r.u64());
    for (auto& t : m.dec) t = r.tensor();
  }

  s.coreset.inputs.resize(r.u64());
  s.coreset.labels.resize(s.coreset.inputs.size());
  for (std::size_t i = 0; i < s.coreset.inputs.size(); ++i) {
    s.coreset.inputs[i] = r.tensor();
    s.coreset.labels[i] = r.ints();
  }

  s.R.resize(r.u64());
  for (auto& row : s.R) {
    row.resize(r.u64());
    for (auto& v : row) v = r.f64();
  }
  return s;
}

}  // namespace cle

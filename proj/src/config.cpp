#include "cle/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "../vendor/json.hpp"

namespace cle {

using nlohmann::json;

namespace {

// Wraps one JSON object; every key must be consumed exactly once.
class ObjReader {
 public:
  ObjReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object())
      throw ConfigError("config: '" + path_ + "' must be an object");
  }

  bool has(const std::string& key) {
    return j_.contains(key);
  }

  template <typename T>
  void get(const std::string& key, T& target) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    try {
      target = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError("config: key '" + full(key) + "' has the wrong type");
    }
  }

  const json* child(const std::string& key) {
    if (!j_.contains(key)) return nullptr;
    seen_.insert(key);
    return &j_.at(key);
  }

  void finish() {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key()))
        throw ConfigError("config: unknown key '" + full(it.key()) + "'");
  }

  std::string full(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void check(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError("config: " + msg);
}

void parse_data(const json& j, ExperimentConfig::DataCfg& d) {
  ObjReader r(j, "data");
  r.get("source", d.source);
  r.get("stream", d.stream);
  r.get("permuted_tasks", d.permuted_tasks);
  if (const json* s = r.child("synthetic")) {
    ObjReader rs(*s, "data.synthetic");
    rs.get("kind", d.synthetic.kind);
    rs.get("classes", d.synthetic.classes);
    rs.get("dim", d.synthetic.dim);
    rs.get("train_per_class", d.synthetic.train_per_class);
    rs.get("test_per_class", d.synthetic.test_per_class);
    rs.get("spread", d.synthetic.spread);
    rs.get("separation", d.synthetic.separation);
    rs.finish();
  }
  if (const json* s = r.child("idx")) {
    ObjReader ri(*s, "data.idx");
    ri.get("train_images", d.idx_train_images);
    ri.get("train_labels", d.idx_train_labels);
    ri.get("test_images", d.idx_test_images);
    ri.get("test_labels", d.idx_test_labels);
    ri.get("downsample", d.idx_downsample);
    ri.get("train_cap", d.idx_train_cap);
    ri.get("test_cap", d.idx_test_cap);
    ri.finish();
  }
  if (const json* s = r.child("split_pairs")) {
    if (!s->is_array())
      throw ConfigError("config: key 'data.split_pairs' has the wrong type");
    d.split_pairs.clear();
    for (const auto& e : *s) {
      if (!e.is_array() || e.size() != 2 || !e[0].is_number_integer() ||
          !e[1].is_number_integer())
        throw ConfigError(
            "config: key 'data.split_pairs' entries must be [int, int]");
      d.split_pairs.emplace_back(e[0].get<int>(), e[1].get<int>());
    }
  }
  r.finish();
}

}  // namespace

ExperimentConfig config_parse(const std::string& text) {
  json j;
  try {
    j = text.empty() ? json::object() : json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  ExperimentConfig c;
  ObjReader r(j, "");
  r.get("mode", c.mode);
  r.get("problem", c.problem);
  r.get("seed", c.seed);
  r.get("output_dir", c.output_dir);
  if (const json* s = r.child("data")) parse_data(*s, c.data);
  if (const json* s = r.child("arch")) {
    ObjReader ra(*s, "arch");
    ra.get("hidden", c.arch.hidden);
    ra.get("expansion_reserve", c.arch.expansion_reserve);
    ra.get("latent", c.arch.latent);
    ra.get("vae_hidden", c.arch.vae_hidden);
    ra.finish();
  }
  if (const json* s = r.child("hyper")) {
    ObjReader rh(*s, "hyper");
    rh.get("alpha", c.hyper.alpha);
    rh.get("sigma0", c.hyper.sigma0);
    rh.get("lr", c.hyper.lr);
    rh.get("lr_ibp", c.hyper.lr_ibp);
    rh.get("lr_finetune", c.hyper.lr_finetune);
    rh.get("lr_ml", c.hyper.lr_ml);
    rh.get("lambda_start", c.hyper.lambda_start);
    rh.get("lambda_min", c.hyper.lambda_min);
    rh.get("epochs", c.hyper.epochs);
    rh.get("finetune_epochs", c.hyper.finetune_epochs);
    rh.get("ml_init_epochs", c.hyper.ml_init_epochs);
    rh.get("s_train", c.hyper.s_train);
    rh.get("s_test", c.hyper.s_test);
    rh.get("batch", c.hyper.batch);
    rh.get("coreset_method", c.hyper.coreset_method);
    rh.get("coreset_size", c.hyper.coreset_size);
    rh.get("coreset_epochs", c.hyper.coreset_epochs);
    rh.finish();
  }
  r.finish();

  check(c.mode == "npbcl" || c.mode == "vcl" || c.mode == "naive",
        "key 'mode' must be npbcl, vcl or naive (got '" + c.mode + "')");
  check(c.problem == "supervised" || c.problem == "vae",
        "key 'problem' must be supervised or vae (got '" + c.problem + "')");
  check(c.data.source == "synthetic" || c.data.source == "idx",
        "key 'data.source' must be synthetic or idx");
  check(c.data.stream == "split" || c.data.stream == "permuted",
        "key 'data.stream' must be split or permuted");
  check(c.hyper.alpha > 0.0, "key 'hyper.alpha' must be > 0");
  check(c.hyper.sigma0 > 0.0, "key 'hyper.sigma0' must be > 0");
  check(c.hyper.lr > 0.0 && c.hyper.lr_ibp > 0.0 &&
            c.hyper.lr_finetune > 0.0 && c.hyper.lr_ml > 0.0,
        "learning rates must be > 0");
  check(c.hyper.lambda_start >= c.hyper.lambda_min && c.hyper.lambda_min > 0.0,
        "key 'hyper.lambda_start' must be >= 'hyper.lambda_min' > 0");
  check(c.hyper.epochs >= 1 && c.hyper.finetune_epochs >= 0 &&
            c.hyper.ml_init_epochs >= 0 && c.hyper.coreset_epochs >= 1,
        "epoch counts out of range");
  check(c.hyper.s_train >= 1 && c.hyper.s_test >= 1,
        "sample counts must be >= 1");
  check(c.hyper.batch >= 1, "key 'hyper.batch' must be >= 1");
  check(c.hyper.coreset_method == "random" || c.hyper.coreset_method == "k-center",
        "key 'hyper.coreset_method' must be random or k-center");
  check(!c.arch.hidden.empty(), "key 'arch.hidden' must be non-empty");
  check(!c.arch.vae_hidden.empty(), "key 'arch.vae_hidden' must be non-empty");
  check(c.arch.latent >= 1, "key 'arch.latent' must be >= 1");
  check(c.data.permuted_tasks >= 1, "key 'data.permuted_tasks' must be >= 1");
  check(!c.data.split_pairs.empty(), "key 'data.split_pairs' must be non-empty");
  return c;
}

ExperimentConfig config_load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return config_parse(ss.str());
}

std::string config_dump(const ExperimentConfig& c) {
  json pairs = json::array();
  for (auto [a, b] : c.data.split_pairs) pairs.push_back({a, b});
  json j = {
      {"mode", c.mode},
      {"problem", c.problem},
      {"seed", c.seed},
      {"output_dir", c.output_dir},
      {"data",
       {{"source", c.data.source},
        {"stream", c.data.stream},
        {"permuted_tasks", c.data.permuted_tasks},
        {"split_pairs", pairs},
        {"synthetic",
         {{"kind", c.data.synthetic.kind},
          {"classes", c.data.synthetic.classes},
          {"dim", c.data.synthetic.dim},
          {"train_per_class", c.data.synthetic.train_per_class},
          {"test_per_class", c.data.synthetic.test_per_class},
          {"spread", c.data.synthetic.spread},
          {"separation", c.data.synthetic.separation}}},
        {"idx",
         {{"train_images", c.data.idx_train_images},
          {"train_labels", c.data.idx_train_labels},
          {"test_images", c.data.idx_test_images},
          {"test_labels", c.data.idx_test_labels},
          {"downsample", c.data.idx_downsample},
          {"train_cap", c.data.idx_train_cap},
          {"test_cap", c.data.idx_test_cap}}}}},
      {"arch",
       {{"hidden", c.arch.hidden},
        {"expansion_reserve", c.arch.expansion_reserve},
        {"latent", c.arch.latent},
        {"vae_hidden", c.arch.vae_hidden}}},
      {"hyper",
       {{"alpha", c.hyper.alpha},
        {"sigma0", c.hyper.sigma0},
        {"lr", c.hyper.lr},
        {"lr_ibp", c.hyper.lr_ibp},
        {"lr_finetune", c.hyper.lr_finetune},
        {"lr_ml", c.hyper.lr_ml},
        {"lambda_start", c.hyper.lambda_start},
        {"lambda_min", c.hyper.lambda_min},
        {"epochs", c.hyper.epochs},
        {"finetune_epochs", c.hyper.finetune_epochs},
        {"ml_init_epochs", c.hyper.ml_init_epochs},
        {"s_train", c.hyper.s_train},
        {"s_test", c.hyper.s_test},
        {"batch", c.hyper.batch},
        {"coreset_method", c.hyper.coreset_method},
        {"coreset_size", c.hyper.coreset_size},
        {"coreset_epochs", c.hyper.coreset_epochs}}}};
  return j.dump(2) + "\n";
}

TaskStream build_stream(const ExperimentConfig& c) {
  DataPair pair;
  if (c.data.source == "synthetic") {
    pair = make_synthetic(c.data.synthetic, c.seed);
  } else {
    IdxArray ti = read_idx(c.data.idx_train_images);
    IdxArray tl = read_idx(c.data.idx_train_labels);
    IdxArray si = read_idx(c.data.idx_test_images);
    IdxArray sl = read_idx(c.data.idx_test_labels);
    pair.train = make_image_dataset(ti, tl, 10, c.data.idx_downsample,
                                    c.data.idx_train_cap);
    pair.test = make_image_dataset(si, sl, 10, c.data.idx_downsample,
                                   c.data.idx_test_cap);
  }
  if (c.data.stream == "split")
    return make_split_stream(pair.train, pair.test, c.data.split_pairs);
  return make_permuted_stream(pair.train, pair.test, c.data.permuted_tasks,
                              c.seed);
}

}  // namespace cle

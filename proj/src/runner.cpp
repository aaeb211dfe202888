#include "cle/runner.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "../vendor/json.hpp"
#include "cle/checkpoint.hpp"
#include "cle/cl.hpp"
#include "cle/pgm.hpp"

namespace cle {

namespace fs = std::filesystem;
using nlohmann::json;

std::string resolve_output_dir(const std::string& dir) {
  const char* root = std::getenv("CLE_OUTPUT_ROOT");
  if (root && *root && !fs::path(dir).is_absolute())
    return (fs::path(root) / dir).string();
  return dir;
}

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void append_metrics_rows(const std::string& dir, const TrainerState& s,
                         std::size_t after) {
  const std::string path = dir + "/metrics.csv";
  const bool fresh = !fs::exists(path);
  std::ofstream out(path, std::ios::app);
  if (fresh) out << "after_task,eval_task,accuracy,mode,seed\n";
  for (std::size_t j = 0; j < s.R[after].size(); ++j)
    out << (after + 1) << "," << (j + 1) << "," << fmt_double(s.R[after][j])
        << "," << s.cfg.mode << "," << s.cfg.seed << "\n";
}

void write_r_json(const std::string& dir, const TrainerState& s) {
  json j;
  j["mode"] = s.cfg.mode;
  j["seed"] = s.cfg.seed;
  j["R"] = s.R;
  if (!s.R.empty()) {
    Metrics m = compute_metrics(s.R);
    j["metrics"] = {{"acc", m.acc}, {"bwt", m.bwt}};
    if (m.has_fwt) j["metrics"]["fwt"] = m.fwt;
  }
  std::ofstream out(dir + "/R.json");
  out << j.dump(2) << "\n";
}

void write_structure_csv(const std::string& dir, const TrainerState& s) {
  std::ofstream out(dir + "/structure.csv");
  out << "layer,task_a,task_b,sharing,filled\n";
  for (const auto& row : structure_report(s.masks))
    out << row.layer << "," << (row.task_a + 1) << "," << (row.task_b + 1)
        << "," << fmt_double(row.sharing) << "," << fmt_double(row.filled)
        << "\n";
}

void emit_vae_grid(const std::string& dir, const Trainer& trainer,
                   std::size_t after) {
  const TrainerState& s = trainer.state;
  const std::size_t d = s.vae.data_dim;
  std::size_t h = static_cast<std::size_t>(std::lround(std::sqrt(double(d))));
  std::size_t w = h;
  if (h * w != d) {
    h = 1;
    w = d;
  }
  const std::size_t per_task = 8;
  std::vector<Tensor> images;
  for (std::size_t j = 0; j <= after; ++j) {
    RngStream rng(s.cfg.seed, "gen", after, j);
    Tensor batch = vae_generate(s.vae, j, s.masks[j], per_task, rng, s.mode);
    for (std::size_t i = 0; i < per_task; ++i) {
      Tensor img({h, w});
      for (std::size_t k = 0; k < d; ++k) img[k] = batch[i * d + k];
      images.push_back(std::move(img));
    }
  }
  emit_pgm(images, h, w, after + 1, per_task,
           dir + "/samples_task_" + std::to_string(after + 1) + ".pgm");
}

int run_loop(Trainer& trainer, const std::string& dir) {
  fs::create_directories(dir);
  {
    std::ofstream echo(dir + "/config_resolved.json");
    echo << config_dump(trainer.state.cfg);
  }
  for (std::size_t t = trainer.state.next_task; t < trainer.task_count(); ++t) {
    try {
      trainer.train_task(t);
    } catch (const NumericError& e) {
      std::cerr << "numeric failure during task " << (t + 1) << ": " << e.what()
                << "\n";
      checkpoint_save(trainer.state, dir + "/abort.ckpt");
      std::cerr << "state saved to " << dir << "/abort.ckpt\n";
      return kExitNumeric;
    }
    append_metrics_rows(dir, trainer.state, t);
    write_r_json(dir, trainer.state);
    write_structure_csv(dir, trainer.state);
    checkpoint_save(trainer.state,
                    dir + "/task_" + std::to_string(t + 1) + ".ckpt");
    checkpoint_save(trainer.state, dir + "/latest.ckpt");
    if (trainer.state.cfg.problem == "vae") emit_vae_grid(dir, trainer, t);
  }
  if (!trainer.state.R.empty()) {
    Metrics m = compute_metrics(trainer.state.R);
    std::cout << "ACC " << fmt_double(m.acc) << " BWT " << fmt_double(m.bwt);
    if (m.has_fwt) std::cout << " FWT " << fmt_double(m.fwt);
    std::cout << "\n";
  }
  return kExitOk;
}

}  // namespace

int run_experiment(ExperimentConfig cfg) {
  cfg.output_dir = resolve_output_dir(cfg.output_dir);
  Trainer trainer(std::move(cfg));
  return run_loop(trainer, trainer.state.cfg.output_dir);
}

int resume_experiment(const std::string& checkpoint_path) {
  TrainerState state = checkpoint_load(checkpoint_path);
  state.cfg.output_dir = resolve_output_dir(state.cfg.output_dir);
  Trainer trainer(std::move(state));
  return run_loop(trainer, trainer.state.cfg.output_dir);
}

int report_run(const std::string& run_dir) {
  const std::string dir = resolve_output_dir(run_dir);
  std::ifstream in(dir + "/R.json");
  if (!in) {
    std::cerr << "report: no R.json in " << dir << "\n";
    return kExitConfig;
  }
  json j;
  in >> j;
  std::vector<std::vector<double>> r =
      j.at("R").get<std::vector<std::vector<double>>>();
  Metrics m = compute_metrics(r);
  std::cout << "tasks " << r.size() << "\n";
  std::cout << "ACC " << fmt_double(m.acc) << "\n";
  std::cout << "BWT " << fmt_double(m.bwt) << "\n";
  if (m.has_fwt) std::cout << "FWT " << fmt_double(m.fwt) << "\n";
  if (fs::exists(dir + "/latest.ckpt")) {
    TrainerState s = checkpoint_load(dir + "/latest.ckpt");
    for (const auto& row : structure_report(s.masks))
      std::cout << "layer " << row.layer << " tasks " << (row.task_a + 1) << "/"
                << (row.task_b + 1) << " sharing " << fmt_double(row.sharing)
                << " filled " << fmt_double(row.filled) << "\n";
  }
  return kExitOk;
}

}  // namespace cle

// Copyright 2026 the fusiondet authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fusiondet/checkpoint.hpp"
#include "fusiondet/runner.hpp"

namespace
{

using namespace fusiondet;

struct CommonOpts
{
  std::string config_path;
  std::string preset;
  std::string out;
  std::string data;
  int64_t seed = -1;
  std::vector<std::string> overrides;  // extra key=value pairs
};

void add_common(CLI::App * cmd, CommonOpts & opts)
{
  cmd->add_option("--config", opts.config_path, "key-value config file");
  cmd->add_option("--preset", opts.preset, "tiny | small | base");
  cmd->add_option("--seed", opts.seed, "training/generation seed");
  cmd->add_option("--out", opts.out, "output path")->required();
  cmd->add_option("--set", opts.overrides, "extra key=value overrides");
}

RunConfig resolve_config(const CommonOpts & opts)
{
  RunConfig cfg = RunConfig::make_preset("tiny");
  if (!opts.config_path.empty()) {
    std::ifstream in(opts.config_path);
    if (!in) throw std::runtime_error("cannot open config file " + opts.config_path);
    std::stringstream buf;
    buf << in.rdbuf();
    cfg = RunConfig::from_text(buf.str());
  }
  // CLI flags override file values.
  if (!opts.preset.empty()) {
    const RunConfig fresh = RunConfig::make_preset(opts.preset);
    RunConfig keep = cfg;
    cfg = fresh;
    cfg.seed = keep.seed;
    cfg.epochs = keep.epochs;
    cfg.synth = keep.synth;
  }
  for (const std::string & kv : opts.overrides) {
    const size_t eq = kv.find('=');
    if (eq == std::string::npos) throw std::runtime_error("--set expects key=value, got " + kv);
    cfg.apply_kv(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (opts.seed >= 0) {
    cfg.seed = uint64_t(opts.seed);
    cfg.synth.seed = uint64_t(opts.seed);
  }
  cfg.validate();
  return cfg;
}

std::string data_root(const CommonOpts & opts)
{
  if (!opts.data.empty()) return opts.data;
  if (const char * env = std::getenv("FUSIONDET_DATA_ROOT")) return env;
  throw std::runtime_error("no data directory: pass --data or set FUSIONDET_DATA_ROOT");
}

// The effective config is echoed next to every artifact for reproducibility.
void echo_config(const RunConfig & cfg, const std::string & dir)
{
  std::filesystem::create_directories(dir);
  std::ofstream out(dir + "/config.txt");
  out << cfg.to_text();
}

int cmd_synth(const CommonOpts & opts)
{
  const RunConfig cfg = resolve_config(opts);
  echo_config(cfg, opts.out);
  const int64_t n = generate_dataset(cfg.synth, opts.out);
  std::cout << "wrote " << n << " scenes to " << opts.out << "\n";
  return 0;
}

int cmd_train(const CommonOpts & opts)
{
  const RunConfig cfg = resolve_config(opts);
  echo_config(cfg, opts.out);
  const std::vector<Scene> scenes = load_split(data_root(opts));
  Rng rng(cfg.seed);
  Model model(cfg, rng);
  std::ofstream log(opts.out + "/metrics.log");
  train_model(model, scenes, [&](const StepRecord & r) {
    const std::string line = format_step(r);
    log << line << "\n";
    if (r.step % 64 == 0) std::cout << line << "\n";
  });
  const ApTable table = evaluate_model(model, scenes);
  log << format_ap_keyvalues(table);
  save_checkpoint(opts.out + "/checkpoint.bin", model.params());
  std::cout << format_ap_table(table);
  std::cout << "checkpoint written to " << opts.out << "/checkpoint.bin\n";
  return 0;
}

int cmd_eval(const CommonOpts & opts, const std::string & checkpoint)
{
  const RunConfig cfg = resolve_config(opts);
  echo_config(cfg, opts.out);
  const std::vector<Scene> scenes = load_split(data_root(opts));
  Rng rng(cfg.seed);
  Model model(cfg, rng);
  load_checkpoint(checkpoint, model.params());
  const ApTable table = evaluate_model(model, scenes);
  std::ofstream txt(opts.out + "/ap_table.txt");
  txt << format_ap_table(table);
  std::ofstream kv(opts.out + "/ap_table.kv");
  kv << format_ap_keyvalues(table);
  std::cout << format_ap_table(table);
  return 0;
}

int cmd_infer(const CommonOpts & opts, const std::string & checkpoint, int64_t index)
{
  const RunConfig cfg = resolve_config(opts);
  const Scene scene = load_kitti_frame(frame_paths(data_root(opts), index));
  Rng rng(cfg.seed);
  Model model(cfg, rng);
  load_checkpoint(checkpoint, model.params());
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<Detection> detections = infer_scene(model, scene);
  const auto t1 = std::chrono::steady_clock::now();
  const double ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
  std::vector<ObjectLabel> labels;
  for (const Detection & d : detections) {
    labels.push_back(detection_to_label(d, scene.calib, scene.image.width, scene.image.height));
  }
  write_detections(opts.out, labels, scene.calib);
  {
    std::ofstream cfg_out(opts.out + ".config.txt");
    cfg_out << cfg.to_text();
  }
  std::cout << "detections=" << detections.size() << " latency_ms=" << ms << "\n";
  return 0;
}

int cmd_render_bev(const CommonOpts & opts, int64_t index, const std::string & detections_path)
{
  const RunConfig cfg = resolve_config(opts);
  const Scene scene = load_kitti_frame(frame_paths(data_root(opts), index));
  std::vector<Detection> detections;
  if (!detections_path.empty()) {
    for (const ObjectLabel & l : read_kitti_label(detections_path, scene.calib)) {
      Detection d;
      d.box = l.box;
      d.score = l.has_score ? l.score : 1.0;
      detections.push_back(d);
    }
  }
  write_ppm(opts.out, render_bev(scene, detections, cfg.anchor_spec));
  {
    std::ofstream cfg_out(opts.out + ".config.txt");
    cfg_out << cfg.to_text();
  }
  std::cout << "wrote " << opts.out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char ** argv)
{
  CLI::App app{"camera+LiDAR fusion 3D detector"};
  app.require_subcommand(1);

  CommonOpts synth_opts, train_opts, eval_opts, infer_opts, bev_opts;
  std::string eval_ckpt, infer_ckpt, bev_detections;
  int64_t infer_index = 0, bev_index = 0;

  CLI::App * synth = app.add_subcommand("synth", "generate a synthetic dataset");
  add_common(synth, synth_opts);

  CLI::App * train = app.add_subcommand("train", "train a model");
  add_common(train, train_opts);
  train->add_option("--data", train_opts.data, "dataset directory");

  CLI::App * evalc = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(evalc, eval_opts);
  evalc->add_option("--data", eval_opts.data, "dataset directory");
  evalc->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();

  CLI::App * infer = app.add_subcommand("infer", "run inference on one frame");
  add_common(infer, infer_opts);
  infer->add_option("--data", infer_opts.data, "dataset directory");
  infer->add_option("--checkpoint", infer_ckpt, "checkpoint file")->required();
  infer->add_option("--index", infer_index, "frame index");

  CLI::App * bev = app.add_subcommand("render-bev", "render a BEV image");
  add_common(bev, bev_opts);
  bev->add_option("--data", bev_opts.data, "dataset directory");
  bev->add_option("--index", bev_index, "frame index");
  bev->add_option("--detections", bev_detections, "detection label file to overlay");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return cmd_synth(synth_opts);
    if (train->parsed()) return cmd_train(train_opts);
    if (evalc->parsed()) return cmd_eval(eval_opts, eval_ckpt);
    if (infer->parsed()) return cmd_infer(infer_opts, infer_ckpt, infer_index);
    if (bev->parsed()) return cmd_render_bev(bev_opts, bev_index, bev_detections);
  } catch (const std::exception & e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "hyperace/detect.hpp"
#include "hyperace/image.hpp"
#include "hyperace/model.hpp"
#include "hyperace/profiler.hpp"
#include "hyperace/train.hpp"
#include "hyperace/weights.hpp"
#include "reference/suite.hpp"

using namespace hyperace;

namespace {

void note(const std::string& m) { std::cerr << m << std::endl; }

// Precedence: variant preset, then --config, then individual flags.
struct ModelFlags {
  std::string variant = "n";
  std::string config;
  bool no_ds = false;
  std::optional<int> hyperedges, classes;
  std::string tunnels;  // three 0/1 digits: backbone-neck, in-neck, neck-head

  void add(CLI::App* app) {
    app->add_option("--variant", variant, "preset: n, s, l, x or micro")->capture_default_str();
    app->add_option("--config", config, "model config JSON; overrides --variant");
    app->add_flag("--no-ds", no_ds, "vanilla convolutions instead of depthwise-separable blocks");
    app->add_option("--hyperedges", hyperedges, "number of hyperedges M");
    app->add_option("--classes", classes, "number of classes");
    app->add_option("--tunnels", tunnels, "FullPAD tunnels as three 0/1 digits, e.g. 101");
  }

  ModelConfig resolve() const {
    ModelConfig c = config.empty() ? ModelConfig::preset(variant) : load_config(config);
    if (no_ds) c.use_ds = false;
    if (hyperedges) c.hyperedges = *hyperedges;
    if (classes) c.num_classes = *classes;
    if (!tunnels.empty()) {
      if (tunnels.size() != 3 || tunnels.find_first_not_of("01") != std::string::npos) {
        throw CLI::ValidationError("--tunnels", "expected three 0/1 digits, got '" + tunnels + "'");
      }
      c.tunnels = {tunnels[0] == '1', tunnels[1] == '1', tunnels[2] == '1'};
    }
    c.validate();
    return c;
  }
};

Tensor load_input(const std::string& path, std::int64_t h, std::int64_t w) {
  return pad_to_multiple(read_image(path, h, w), 32, 0.0);
}

std::unique_ptr<Network> load_network(const ModelConfig& cfg, const std::string& weights, std::uint64_t seed) {
  auto net = std::make_unique<Network>(cfg);
  if (weights.empty()) {
    net->init(seed);
  } else {
    load_weights(*net, weights);
  }
  return net;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hyperace: hypergraph-enhanced real-time detector"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "help for every command");

  // build
  ModelFlags build_flags;
  std::string build_out, build_weights;
  std::uint64_t build_seed = 0;
  auto* build = app.add_subcommand("build", "emit a model config (and optionally initialized weights)");
  build_flags.add(build);
  build->add_option("--out", build_out, "config JSON path (stdout when omitted)");
  build->add_option("--weights-out", build_weights, "write freshly initialized weights here");
  build->add_option("--seed", build_seed, "initialization seed")->capture_default_str();

  // detect
  ModelFlags det_flags;
  std::string det_weights, det_image;
  double det_conf = 0.25, det_iou = 0.45;
  std::int64_t det_h = 0, det_w = 0;
  std::uint64_t det_seed = 0;
  auto* det = app.add_subcommand("detect", "run detection and print JSON lines");
  det_flags.add(det);
  det->add_option("--weights", det_weights, "weight file (random init from --seed when omitted)");
  det->add_option("--image", det_image, "PPM (P6) or raw float32 NCHW image")->required();
  det->add_option("--height", det_h, "raw image height");
  det->add_option("--width", det_w, "raw image width");
  det->add_option("--conf", det_conf, "confidence threshold")->capture_default_str()->check(CLI::Range(0.0, 1.0));
  det->add_option("--iou", det_iou, "NMS IoU threshold")->capture_default_str()->check(CLI::Range(0.0, 1.0));
  det->add_option("--seed", det_seed, "initialization seed without --weights")->capture_default_str();

  // profile
  ModelFlags prof_flags;
  std::int64_t prof_size = 640;
  bool prof_json = false, prof_compare = false;
  auto* prof = app.add_subcommand("profile", "parameter and FLOP budget");
  prof_flags.add(prof);
  prof->add_option("--size", prof_size, "square input extent")->capture_default_str();
  prof->add_flag("--json", prof_json, "JSON instead of aligned text");
  prof->add_flag("--compare", prof_compare, "also check the published N/S totals, DS reductions and M sweep");

  // hyperedges
  ModelFlags hyp_flags;
  std::string hyp_weights, hyp_image, hyp_layer, hyp_top_out;
  std::int64_t hyp_h = 0, hyp_w = 0;
  int hyp_k = 5;
  std::uint64_t hyp_seed = 0;
  auto* hyp = app.add_subcommand("hyperedges", "dump a participation matrix as CSV");
  hyp_flags.add(hyp);
  hyp->add_option("--weights", hyp_weights, "weight file (random init from --seed when omitted)");
  hyp->add_option("--image", hyp_image, "PPM (P6) or raw float32 NCHW image")->required();
  hyp->add_option("--height", hyp_h, "raw image height");
  hyp->add_option("--width", hyp_w, "raw image width");
  hyp->add_option("--layer", hyp_layer, "C3AH layer name, e.g. hyperace.high0")->required();
  hyp->add_option("--top-k", hyp_k, "vertices per hyperedge")->capture_default_str()->check(CLI::NonNegativeNumber);
  hyp->add_option("--top-out", hyp_top_out, "CSV of top-k vertex coordinates per hyperedge");
  hyp->add_option("--seed", hyp_seed, "initialization seed without --weights")->capture_default_str();

  // gradcheck
  std::uint64_t gc_seed = 0;
  int gc_seeds = 1;
  std::string gc_size = "micro";
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  gc->add_option("--seed", gc_seed, "first seed")->capture_default_str();
  gc->add_option("--seeds", gc_seeds, "number of seeds")->capture_default_str()->check(CLI::PositiveNumber);
  gc->add_option("--size", gc_size, "network size for the whole-model check")
      ->capture_default_str()
      ->check(CLI::IsMember({"micro"}));

  // toytrain
  ModelFlags tt_flags;
  tt_flags.classes = kShapeClasses;
  TrainOptions tt;
  std::string tt_out, tt_trace;
  auto* tr = app.add_subcommand("toytrain", "train on synthetic shapes");
  tt_flags.add(tr);
  tr->add_option("--steps", tt.steps, "optimizer steps")->capture_default_str();
  tr->add_option("--lr", tt.lr, "peak learning rate")->capture_default_str();
  tr->add_option("--batch", tt.batch, "scenes per step")->capture_default_str();
  tr->add_option("--seed", tt.seed, "seed for weights and scenes")->capture_default_str();
  tr->add_option("--eval-every", tt.eval_every, "held-out evaluation interval (0: end only)")->capture_default_str();
  tr->add_option("--eval-scenes", tt.eval_scenes, "held-out scene count")->capture_default_str();
  tr->add_option("--out", tt_out, "weight file to write");
  tr->add_option("--trace", tt_trace, "loss trace CSV (step,loss)");

  // selftest
  std::uint64_t st_seed = 0;
  auto* st = app.add_subcommand("selftest", "check optimized kernels against loop-level oracles");
  st->add_option("--seed", st_seed, "seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*build) {
      const ModelConfig cfg = build_flags.resolve();
      if (build_out.empty()) {
        std::cout << to_json(cfg) << '\n';
      } else {
        save_config(cfg, build_out);
        note("wrote " + build_out);
      }
      if (!build_weights.empty()) {
        Network net(cfg);
        net.init(build_seed);
        save_weights(net, build_weights);
        note("wrote " + build_weights);
      }
    } else if (*det) {
      const ModelConfig cfg = det_flags.resolve();
      auto net = load_network(cfg, det_weights, det_seed);
      Tensor image = read_image(det_image, det_h, det_w);
      const double h = static_cast<double>(image.dim(2)), w = static_cast<double>(image.dim(3));
      image = pad_to_multiple(image, 32, 0.0);
      auto heads = net->detect(image);
      DecodeOptions opt;
      opt.reg_bins = cfg.reg_bins;
      opt.num_classes = cfg.num_classes;
      opt.conf_threshold = det_conf;
      opt.image_width = w;
      opt.image_height = h;
      auto dets = nms(decode({heads.begin(), heads.end()}, opt), det_iou);
      write_json_lines(std::cout, dets);
      note(std::to_string(dets.size()) + " detections");
    } else if (*prof) {
      const ModelConfig cfg = prof_flags.resolve();
      auto r = count_budget(cfg, prof_size, prof_size);
      if (prof_json) {
        nlohmann::json j = nlohmann::json::parse(report_json(r));
        if (prof_compare) j["compare"] = nlohmann::json::parse(checks_json(reference_checks()));
        std::cout << j.dump(2) << '\n';
      } else {
        std::cout << report_text(r);
        if (prof_compare) std::cout << '\n' << checks_text(reference_checks());
      }
    } else if (*hyp) {
      const ModelConfig cfg = hyp_flags.resolve();
      auto net = load_network(cfg, hyp_weights, hyp_seed);
      Tensor image = load_input(hyp_image, hyp_h, hyp_w);
      auto e = export_participation(*net, image, hyp_layer, hyp_k);
      write_participation_csv(std::cout, e);
      if (!hyp_top_out.empty()) {
        std::ofstream out(hyp_top_out);
        if (!out) throw std::runtime_error("cannot write '" + hyp_top_out + "'");
        write_top_vertices_csv(out, e);
      }
    } else if (*gc) {
      double worst = 0;
      for (const auto& e : ref::gradient_suite(gc_seeds, gc_seed)) {
        std::printf("%-14s max rel error %.3e%s\n", e.name.c_str(), e.max_rel_error,
                    e.max_rel_error < 1e-4 ? "" : ("  at " + e.worst).c_str());
        worst = std::max(worst, e.max_rel_error);
      }
      std::printf("max relative error %.3e (limit 1e-4)\n", worst);
      return worst < 1e-4 ? 0 : 1;
    } else if (*tr) {
      const ModelConfig cfg = tt_flags.resolve();
      Network net(cfg);
      net.init(tt.seed);
      auto r = train_toy(net, tt, note);
      if (!tt_out.empty()) save_weights(net, tt_out);
      if (!tt_trace.empty()) write_loss_csv(r.loss, tt_trace);
      nlohmann::json j = {{"steps", tt.steps},
                          {"initial_loss", r.loss.empty() ? 0.0 : r.loss.front()},
                          {"final_loss", r.loss.empty() ? 0.0 : r.loss.back()},
                          {"recall", r.final_eval.recall},
                          {"precision", r.final_eval.precision},
                          {"steps_to_recall", r.steps_to_recall},
                          {"seconds", r.seconds}};
      std::cout << j.dump() << '\n';
    } else if (*st) {
      bool ok = true;
      for (const auto& c : ref::oracle_checks(st_seed)) {
        std::printf("%-20s max error %.3e (limit %.1e) %s\n", c.name.c_str(), c.max_error, c.tolerance,
                    c.passed() ? "ok" : "FAIL");
        ok = ok && c.passed();
      }
      return ok ? 0 : 1;
    }
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

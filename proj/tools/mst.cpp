#include <CLI11.hpp>
#include <httplib.h>

#include <csignal>
#include <fstream>
#include <iomanip>
#include <iostream>

#include "mst/checkpoint.hpp"
#include "mst/dataset.hpp"
#include "mst/segmenter.hpp"
#include "mst/service.hpp"
#include "mst/training.hpp"

using namespace mst;

namespace {

std::shared_ptr<MstModel<float>> load_model(const std::string& dir) {
  const auto ckpt = read_checkpoint(dir);
  auto model = std::make_shared<MstModel<float>>(ckpt.config);
  load_weights(ckpt, *model);
  return model;
}

std::vector<double> parse_targets(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size() || !(v > 0.0 && v <= 1.0)) throw ConfigError("targets: '" + item + "' is not in (0, 1]");
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError("targets: empty list");
  return out;
}

int run_train(const std::string& config_path, const std::string& out, const std::string& dataset) {
  const TrainConfig cfg = config_path.empty() ? TrainConfig::desk() : load_train_config(config_path);
  const auto data = dataset.empty()
                        ? gen_synthetic(cfg.data_seed, cfg.samples_per_epoch, cfg.model.image_size)
                        : load_dataset(dataset, cfg.model.image_size);
  for (const auto& s : data)
    if (s.image.width != cfg.model.image_size || s.image.height != cfg.model.image_size) {
      throw ConfigError("train: sample " + s.id + " is not " + std::to_string(cfg.model.image_size) + " square");
    }
  MstModel<float> model(cfg.model);
  Trainer trainer(cfg, model);
  TrainOutputs outputs;
  outputs.dir = out;
  outputs.on_epoch = [](const EpochStats& e) {
    std::cout << "epoch " << e.epoch << " lr " << e.lr << " loss " << e.total << " seg " << e.seg << " contrastive "
              << e.contrastive << std::endl;
  };
  trainer.train(data, outputs);
  std::cout << "checkpoint " << (std::filesystem::path(out) / "final").string() << " sha256 "
            << checkpoint_hash(std::filesystem::path(out) / "final") << '\n';
  return 0;
}

int run_eval(const std::string& checkpoint, const std::string& dataset, const std::string& targets, int max_clicks,
             const std::string& protocol, const std::string& report, const std::string& scale_report,
             std::uint64_t seed) {
  auto model = load_model(checkpoint);
  EvalOptions opts;
  opts.targets = parse_targets(targets);
  opts.max_clicks = max_clicks;
  opts.protocol = parse_protocol(protocol);
  if (max_clicks < 1) throw ConfigError("max-clicks must be positive");
  const auto data = load_dataset(dataset, model->config().image_size);
  ModelSegmenter<float> inner(*model);
  LetterboxSegmenter seg(inner, model->config().image_size);
  std::vector<EvalRecord> records;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& s = data[i];
    std::optional<Mask> initial;
    if (opts.protocol == Protocol::Sp) {
      std::seed_seq seq{seed, std::uint64_t(i)};
      Rng rng(seq);
      initial = sp_initial_mask(s.mask, rng);
    }
    records.push_back(evaluate_sample(seg, s.id, s.image, s.mask, opts, initial ? &*initial : nullptr));
  }
  if (!report.empty()) {
    std::ofstream out(report);
    if (!out) throw ConfigError("cannot write " + report);
    write_report(out, records, opts);
  }
  if (!scale_report.empty()) {
    std::ofstream out(scale_report);
    if (!out) throw ConfigError("cannot write " + scale_report);
    const auto edges = default_scale_edges();
    write_scale_report(out, noc_scale_bins(records, opts.targets.front(), edges, max_clicks));
  }
  std::cout << "samples " << records.size() << " protocol " << protocol_name(opts.protocol) << '\n';
  for (double t : opts.targets) {
    const auto s = aggregate(records, t, max_clicks);
    std::cout << "NoC@" << std::lround(t * 100) << ' ' << std::fixed << std::setprecision(3) << s.mean_noc
              << " NoF " << s.failures << '\n';
  }
  return 0;
}

httplib::Server* active_server = nullptr;

int run_serve(const std::string& checkpoint, const std::string& host, int port, std::size_t max_sessions,
              const std::string& origin) {
  ServiceOptions opts;
  opts.max_sessions = max_sessions;
  opts.cors_origin = origin;
  std::shared_ptr<const MstModel<float>> model;
  std::string hash;
  if (!checkpoint.empty()) {
    model = load_model(checkpoint);
    hash = checkpoint_hash(checkpoint);
  }
  SessionService service(model, hash, opts);
  httplib::Server server;
  mount_routes(server, service);
  active_server = &server;
  std::signal(SIGINT, [](int) { active_server->stop(); });
  std::signal(SIGTERM, [](int) { active_server->stop(); });
  std::cout << "listening on " << host << ':' << port << (model ? "" : " (no model loaded)") << std::endl;
  if (!server.listen(host, port)) {
    std::cerr << "cannot listen on " << host << ':' << port << '\n';
    return 1;
  }
  return 0;
}

int run_gen_data(std::uint64_t seed, std::size_t n, std::size_t size, const std::string& out) {
  if (n == 0) throw ConfigError("gen-data: n must be positive");
  const auto samples = gen_synthetic(seed, n, size);
  save_dataset(out, samples);
  std::ofstream meta(std::filesystem::path(out) / "samples.csv");
  meta << "id,kind,scale_ratio\n";
  for (const auto& s : samples) meta << s.id << ',' << shape_name(s.kind) << ',' << s.scale_ratio << '\n';
  std::cout << "wrote " << n << " samples to " << out << '\n';
  return 0;
}

nlohmann::json selection_json(const std::optional<SelectionResult<float>>& sel) {
  if (!sel) return nullptr;
  return {{"scale", scale_name(sel->scale)},
          {"indices", sel->indices},
          {"scores", std::vector<float>(sel->top_scores.values().begin(), sel->top_scores.values().end())},
          {"mean_score", sel->mean_top_score()}};
}

int run_dump_selection(const std::string& checkpoint, const std::string& dataset, std::size_t index,
                       const std::vector<int>& click, const std::string& out) {
  auto model = load_model(checkpoint);
  const std::size_t w = model->config().image_size;
  const auto data = load_dataset(dataset, w);
  if (index >= data.size()) throw ConfigError("dump-selection: index out of range");
  const auto& s = data[index];
  if (s.image.width != w || s.image.height != w) throw ConfigError("dump-selection: sample must be model size");
  Point p;
  if (click.size() == 2) {
    p = {click[0], click[1]};
  } else {
    const auto depth = region_distance(s.mask.data, w, w);
    const auto best = std::size_t(std::max_element(depth.begin(), depth.end()) - depth.begin());
    p = {int(best % w), int(best / w)};
  }
  ClickState state;
  state.clicks.push_back({p, true});
  ModelSegmenter<float> seg(*model);
  const auto result = seg.run(s.image, state);
  nlohmann::json blocks = nlohmann::json::array();
  for (std::size_t i = 0; i < result.trace.fusion.size(); ++i) {
    const auto& f = result.trace.fusion[i];
    blocks.push_back({{"block", result.trace.blocks[i]},
                      {"fused", f.fused},
                      {"chosen", f.fused ? scale_name(f.chosen) : "none"},
                      {"kernel_tokens", f.kernel ? f.kernel->indices : std::vector<std::size_t>{}},
                      {"tiny", selection_json(f.tiny)},
                      {"large", selection_json(f.large)}});
  }
  const auto precision = selection_precision(model->config(), result.trace, s.mask.data);
  const nlohmann::json doc{{"sample", s.id},
                           {"click", {{"x", p.x}, {"y", p.y}}},
                           {"precision", precision ? nlohmann::json(*precision) : nlohmann::json(nullptr)},
                           {"blocks", blocks}};
  if (out.empty()) {
    std::cout << doc.dump(2) << '\n';
  } else {
    std::ofstream(out) << doc.dump(2) << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-scale token fusion interactive segmentation"};
  app.require_subcommand(1);

  std::string config, out, dataset;
  auto* train = app.add_subcommand("train", "Train a model on synthetic data");
  train->add_option("--config", config, "Flat key = value config file")->check(CLI::ExistingFile);
  train->add_option("--out", out, "Output directory")->required();
  train->add_option("--dataset", dataset, "synthetic:SEED:N or a dataset directory (default: from config)");

  std::string checkpoint, targets = "0.80,0.85,0.90", protocol = "zero", report, scale_report;
  int max_clicks = 20;
  std::uint64_t seed = 0;
  auto* eval = app.add_subcommand("eval", "Evaluate NoC on a dataset");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--dataset", dataset, "synthetic:SEED:N or a dataset directory")->required();
  eval->add_option("--targets", targets, "Comma separated IoU targets");
  eval->add_option("--max-clicks", max_clicks, "Click budget per sample");
  eval->add_option("--protocol", protocol, "zero or sp");
  eval->add_option("--report", report, "Per-sample CSV report");
  eval->add_option("--scale-report", scale_report, "NoC by target-area ratio CSV");
  eval->add_option("--seed", seed, "Seed for the sp initial masks");

  std::string host = "0.0.0.0", origin = "*";
  int port = 8080;
  std::size_t max_sessions = 64;
  auto* serve = app.add_subcommand("serve", "Run the HTTP session service");
  serve->add_option("--checkpoint", checkpoint, "Checkpoint directory")->check(CLI::ExistingDirectory);
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--port", port, "Port");
  serve->add_option("--max-sessions", max_sessions, "Live session limit");
  serve->add_option("--cors-origin", origin, "Access-Control-Allow-Origin value");

  std::size_t n = 100, size = 112;
  auto* gen = app.add_subcommand("gen-data", "Write a synthetic dataset directory");
  gen->add_option("--seed", seed, "Generator seed");
  gen->add_option("--n", n, "Sample count");
  gen->add_option("--size", size, "Image side");
  gen->add_option("--out", out, "Output directory")->required();

  std::size_t index = 0;
  std::vector<int> click;
  auto* dump = app.add_subcommand("dump-selection", "Print the token selection for one click");
  dump->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required()->check(CLI::ExistingDirectory);
  dump->add_option("--dataset", dataset, "synthetic:SEED:N or a dataset directory")->required();
  dump->add_option("--index", index, "Sample index");
  dump->add_option("--click", click, "x y (default: deepest gt pixel)")->expected(2);
  dump->add_option("--out", out, "JSON output file (default: stdout)");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train) return run_train(config, out, dataset);
    if (*eval) return run_eval(checkpoint, dataset, targets, max_clicks, protocol, report, scale_report, seed);
    if (*serve) return run_serve(checkpoint, host, port, max_sessions, origin);
    if (*gen) return run_gen_data(seed, n, size, out);
    if (*dump) return run_dump_selection(checkpoint, dataset, index, click, out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

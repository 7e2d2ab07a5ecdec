#include "mst/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "mst/checkpoint.hpp"

namespace mst {

TrainConfig TrainConfig::desk() { return TrainConfig{}; }

TrainConfig TrainConfig::full() {
  TrainConfig c;
  c.model = ModelConfig::full();
  c.epochs = 230;
  c.samples_per_epoch = 30000;
  c.lr = 5e-6;
  c.lr_drops = {50, 70};
  return c;
}

void TrainConfig::validate() const {
  model.validate();
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (samples_per_epoch == 0) throw ConfigError("samples_per_epoch must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be positive");
  if (!(lr_factor > 0.0)) throw ConfigError("lr_factor must be positive");
  if (!std::is_sorted(lr_drops.begin(), lr_drops.end())) throw ConfigError("lr_drops must be sorted");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
  if (max_clicks == 0) throw ConfigError("max_clicks must be positive");
  if (!(click_decay >= 0.0 && click_decay <= 1.0)) throw ConfigError("click_decay must lie in [0, 1]");
  if (max_pairs == 0) throw ConfigError("max_pairs must be positive");
}

double TrainConfig::lr_at(std::size_t epoch) const {
  double r = lr;
  for (std::size_t d : lr_drops)
    if (epoch >= d) r *= lr_factor;
  return r;
}

namespace {

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  s = s.substr(b, e - b + 1);
  if (s.size() >= 2 && (s.front() == '"' || s.front() == '\'') && s.back() == s.front()) s = s.substr(1, s.size() - 2);
  return s;
}

std::size_t to_size(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const long long x = std::stoll(v, &pos);
    if (pos != v.size() || x < 0) throw std::invalid_argument(v);
    return static_cast<std::size_t>(x);
  } catch (const std::exception&) {
    throw ConfigError("config: '" + key + "' expects a non-negative integer, got '" + v + "'");
  }
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config: '" + key + "' expects a number, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config: '" + key + "' expects a boolean, got '" + v + "'");
}

std::vector<std::size_t> to_list(const std::string& key, std::string v) {
  if (!v.empty() && v.front() == '[') v.erase(v.begin());
  if (!v.empty() && v.back() == ']') v.pop_back();
  std::vector<std::size_t> out;
  if (trim(v).empty() || trim(v) == "none") return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_size(key, trim(item)));
  return out;
}

std::string list_text(const std::vector<std::size_t>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + std::to_string(v[i]);
  return s + "]";
}

}  // namespace

TrainConfig parse_train_config(std::istream& in) {
  TrainConfig c;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string v = trim(line.substr(eq + 1));
    auto& m = c.model;
    if (key == "preset") {
      if (v == "desk") c = TrainConfig::desk();
      else if (v == "full") c = TrainConfig::full();
      else throw ConfigError("config: unknown preset '" + v + "'");
    } else if (key == "epochs") c.epochs = to_size(key, v);
    else if (key == "samples_per_epoch") c.samples_per_epoch = to_size(key, v);
    else if (key == "batch_size") c.batch_size = to_size(key, v);
    else if (key == "lr") c.lr = to_double(key, v);
    else if (key == "lr_drops") c.lr_drops = to_list(key, v);
    else if (key == "lr_factor") c.lr_factor = to_double(key, v);
    else if (key == "weight_decay") c.weight_decay = to_double(key, v);
    else if (key == "max_clicks") c.max_clicks = to_size(key, v);
    else if (key == "click_decay") c.click_decay = to_double(key, v);
    else if (key == "seed") c.seed = to_size(key, v);
    else if (key == "data_seed") c.data_seed = to_size(key, v);
    else if (key == "contrastive") c.contrastive = to_bool(key, v);
    else if (key == "augment") c.augment = to_bool(key, v);
    else if (key == "max_pairs") c.max_pairs = to_size(key, v);
    else if (key == "focal_gamma") c.focal_gamma = to_double(key, v);
    else if (key == "focal_alpha") c.focal_alpha = to_double(key, v);
    else if (key == "model.image_size") m.image_size = to_size(key, v);
    else if (key == "model.embed_dim") m.embed_dim = to_size(key, v);
    else if (key == "model.depth") m.depth = to_size(key, v);
    else if (key == "model.heads") m.heads = to_size(key, v);
    else if (key == "model.mst_blocks") m.mst_blocks = to_list(key, v);
    else if (key == "model.k_divisor") m.k_divisor = to_size(key, v);
    else if (key == "model.mlp_ratio") m.mlp_ratio = to_size(key, v);
    else if (key == "model.pool_ratio") m.pool_ratio = to_size(key, v);
    else if (key == "model.fpn_channels") m.fpn_channels = to_size(key, v);
    else if (key == "model.head_hidden") m.head_hidden = to_size(key, v);
    else if (key == "model.init_seed") m.init_seed = to_size(key, v);
    else throw ConfigError("config: unknown key '" + key + "'");
  }
  c.validate();
  return c;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  return parse_train_config(in);
}

std::string format_train_config(const TrainConfig& c) {
  std::ostringstream os;
  os.precision(17);
  os << "epochs = " << c.epochs << "\nsamples_per_epoch = " << c.samples_per_epoch
     << "\nbatch_size = " << c.batch_size << "\nlr = " << c.lr << "\nlr_drops = " << list_text(c.lr_drops)
     << "\nlr_factor = " << c.lr_factor << "\nweight_decay = " << c.weight_decay
     << "\nmax_clicks = " << c.max_clicks << "\nclick_decay = " << c.click_decay << "\nseed = " << c.seed
     << "\ndata_seed = " << c.data_seed << "\ncontrastive = " << (c.contrastive ? "true" : "false")
     << "\naugment = " << (c.augment ? "true" : "false") << "\nmax_pairs = " << c.max_pairs
     << "\nfocal_gamma = " << c.focal_gamma << "\nfocal_alpha = " << c.focal_alpha
     << "\nmodel.image_size = " << c.model.image_size << "\nmodel.embed_dim = " << c.model.embed_dim
     << "\nmodel.depth = " << c.model.depth << "\nmodel.heads = " << c.model.heads
     << "\nmodel.mst_blocks = " << list_text(c.model.mst_blocks) << "\nmodel.k_divisor = " << c.model.k_divisor
     << "\nmodel.mlp_ratio = " << c.model.mlp_ratio << "\nmodel.pool_ratio = " << c.model.pool_ratio
     << "\nmodel.fpn_channels = " << c.model.fpn_channels << "\nmodel.head_hidden = " << c.model.head_hidden
     << "\nmodel.init_seed = " << c.model.init_seed << '\n';
  return os.str();
}

std::size_t draw_click_count(Rng& rng, std::size_t max_clicks, double decay) {
  std::bernoulli_distribution more(decay);
  std::size_t n = 1;
  while (n < max_clicks && more(rng)) ++n;
  return n;
}

namespace {

std::size_t pick(const std::vector<std::size_t>& v, Rng& rng) { return v[rng() % v.size()]; }

Point to_point(std::size_t i, std::size_t w) { return {int(i % w), int(i / w)}; }

}  // namespace

std::vector<Click> sample_training_clicks(const Mask& gt, const Mask* previous, Rng& rng, std::size_t max_clicks,
                                          double decay) {
  const std::size_t w = gt.width, n = gt.data.size();
  if (gt.area() == 0) throw ContractError("sample_training_clicks: empty ground truth");
  const std::size_t count = draw_click_count(rng, max_clicks, decay);

  const auto depth = region_distance(gt.data, gt.width, gt.height);
  const double deepest = *std::max_element(depth.begin(), depth.end());
  std::vector<std::size_t> interior, inside, near, outside;
  for (std::size_t i = 0; i < n; ++i) {
    if (gt.data[i]) {
      inside.push_back(i);
      if (depth[i] >= std::max(1.0, 0.25 * deepest)) interior.push_back(i);
    } else {
      outside.push_back(i);
    }
  }
  if (!outside.empty()) {
    std::vector<std::uint8_t> bg(n);
    for (std::size_t i = 0; i < n; ++i) bg[i] = gt.data[i] ? 0 : 1;
    const auto bg_depth = region_distance(bg, gt.width, gt.height);
    const double band = std::max(2.0, 0.1 * double(w));
    for (std::size_t i : outside)
      if (bg_depth[i] <= band) near.push_back(i);
  }

  std::vector<Click> clicks;
  clicks.push_back({to_point(pick(interior, rng), w), true});
  for (std::size_t k = 1; k < count; ++k) {
    if (previous != nullptr) {
      std::vector<std::uint8_t> pred(previous->data);
      const auto comps = error_components(pred, gt.data, gt.width, gt.height);
      if (!comps.empty()) {
        const auto& c = comps[rng() % comps.size()];
        clicks.push_back({to_point(pick(c.pixels, rng), w), c.false_negative});
        continue;
      }
    }
    const bool positive = outside.empty() || (rng() >> 63) != 0;
    if (positive) {
      clicks.push_back({to_point(pick(inside, rng), w), true});
    } else {
      const auto& pool = (!near.empty() && (rng() >> 63) != 0) ? near : outside;
      clicks.push_back({to_point(pick(pool, rng), w), false});
    }
  }
  return clicks;
}

Trainer::Trainer(const TrainConfig& config, MstModel<float>& model)
    : config_(config),
      model_(model),
      optimizer_(model.params().param_refs(),
                 AdamWOptions{config.lr, 0.9, 0.999, 1e-8, config.weight_decay}),
      rng_(config.seed) {
  config_.validate();
  loss_options_.contrastive = config.contrastive;
  loss_options_.focal = {config.focal_gamma, config.focal_alpha};
  loss_options_.triplet.max_pairs = config.max_pairs;
}

LossReport<float> Trainer::second_pass_loss(const Sample& s, std::vector<Click> clicks, Rng& rng, bool record) {
  const ModelConfig& mc = model_.config();
  const int radius = mc.click_radius();
  ClickState state;
  state.clicks = std::move(clicks);
  {
    NoGradScope<float> no_grad;
    const Tensor<float> input = build_input<float>(s.image, state, radius);
    const auto first = model_.forward(input, state.positives(), FusionMode::Training, &rng);
    const auto probs = model_.probabilities(first.logits);
    state.previous.assign(probs.begin(), probs.end());
    if (state.clicks.size() < config_.max_clicks) {
      const Mask pred = binarize(state.previous, s.image.width, s.image.height);
      if (auto c = next_click(pred.data, s.mask.data, s.mask.width, s.mask.height)) state.clicks.push_back(*c);
    }
  }
  std::optional<NoGradScope<float>> no_grad;
  if (!record) no_grad.emplace();
  const Tensor<float> input = build_input<float>(s.image, state, radius);
  const auto second = model_.forward(input, state.positives(), FusionMode::Training, &rng);
  return compute_loss(mc, second, std::span<const std::uint8_t>(s.mask.data), loss_options_, rng);
}

LossReport<float> Trainer::evaluate_loss(const Sample& sample, std::span<const Click> clicks, std::uint64_t seed) {
  Rng rng(seed);
  return second_pass_loss(sample, {clicks.begin(), clicks.end()}, rng, false);
}

StepStats Trainer::train_batch(std::span<const Sample> batch) {
  if (batch.empty()) throw ContractError("train_batch: empty batch");
  StepStats st;
  st.epoch = epoch_;
  st.lr = optimizer_.options().lr;
  const float inv = 1.0f / float(batch.size());
  optimizer_.zero_grad();
  for (const Sample& raw : batch) {
    const Sample s = config_.augment ? augment(raw, rng_()) : raw;
    auto clicks = sample_training_clicks(s.mask, nullptr, rng_, config_.max_clicks, config_.click_decay);
    Tape<float> tape;
    TapeScope<float> scope(tape);
    const auto report = second_pass_loss(s, clicks, rng_, true);
    if (!std::isfinite(report.seg) || !std::isfinite(report.contrastive)) {
      std::ostringstream os;
      os << "non-finite loss at step " << step_ << " (epoch " << epoch_ << ", sample " << s.id
         << "): seg=" << report.seg << " contrastive=" << report.contrastive << " clicks=";
      for (const auto& c : clicks) os << '(' << c.point.x << ',' << c.point.y << (c.positive ? ",+)" : ",-)");
      throw NumericError(os.str());
    }
    tape.backward(scale(report.total, inv));
    st.seg += report.seg * inv;
    st.contrastive += report.contrastive * inv;
    st.tiny_pairs += double(report.tiny_pairs) * inv;
    st.large_pairs += double(report.large_pairs) * inv;
  }
  // Parameters the loss cannot reach this step (for example the stream
  // refresh of the last fusion block) have a zero gradient.
  for (const auto& p : optimizer_.params()) p.tensor.raw()->grad_buffer();
  optimizer_.step();
  optimizer_.zero_grad();
  st.total = st.seg + st.contrastive;
  st.step = ++step_;
  return st;
}

EpochStats Trainer::run_epoch(std::span<const Sample> data, std::size_t epoch, std::ostream* step_log) {
  if (data.empty()) throw ContractError("run_epoch: empty dataset");
  epoch_ = epoch;
  optimizer_.set_lr(config_.lr_at(epoch));
  std::vector<std::size_t> order;
  while (order.size() < config_.samples_per_epoch) {
    std::vector<std::size_t> pass(data.size());
    std::iota(pass.begin(), pass.end(), 0);
    std::shuffle(pass.begin(), pass.end(), rng_);
    order.insert(order.end(), pass.begin(), pass.end());
  }
  order.resize(config_.samples_per_epoch);

  EpochStats es;
  es.epoch = epoch;
  es.lr = optimizer_.options().lr;
  std::vector<Sample> batch;
  for (std::size_t start = 0; start < order.size(); start += config_.batch_size) {
    batch.clear();
    for (std::size_t i = start; i < std::min(order.size(), start + config_.batch_size); ++i) batch.push_back(data[order[i]]);
    const StepStats st = train_batch(batch);
    if (step_log != nullptr) {
      *step_log << st.step << ',' << st.epoch << ',' << st.lr << ',' << st.seg << ',' << st.contrastive << ','
                << st.total << ',' << st.tiny_pairs << ',' << st.large_pairs << '\n';
    }
    es.seg += st.seg;
    es.contrastive += st.contrastive;
    ++es.steps;
  }
  es.seg /= double(es.steps);
  es.contrastive /= double(es.steps);
  es.total = es.seg + es.contrastive;
  return es;
}

std::vector<EpochStats> Trainer::train(std::span<const Sample> data, const TrainOutputs& outputs) {
  std::ofstream step_log, epoch_log;
  const bool write = !outputs.dir.empty();
  if (write) {
    std::filesystem::create_directories(outputs.dir);
    std::ofstream(outputs.dir / "train_config.txt") << format_train_config(config_);
    step_log.open(outputs.dir / "loss.csv");
    step_log << "step,epoch,lr,seg,contrastive,total,tiny_pairs,large_pairs\n";
    epoch_log.open(outputs.dir / "epochs.csv");
    epoch_log << "epoch,lr,seg,contrastive,total,steps\n";
  }
  std::vector<EpochStats> history;
  for (std::size_t e = 0; e < config_.epochs; ++e) {
    EpochStats es;
    try {
      es = run_epoch(data, e, write ? &step_log : nullptr);
    } catch (const NumericError& err) {
      if (write) std::ofstream(outputs.dir / "diagnostics.txt") << err.what() << '\n';
      throw;
    }
    history.push_back(es);
    if (write) {
      epoch_log << es.epoch << ',' << es.lr << ',' << es.seg << ',' << es.contrastive << ',' << es.total << ','
                << es.steps << '\n';
      epoch_log.flush();
      step_log.flush();
      if (outputs.checkpoints) {
        char name[32];
        std::snprintf(name, sizeof name, "epoch_%03zu", e);
        const nlohmann::json meta{{"epoch", e}, {"step", step_}, {"loss", es.total}};
        save_checkpoint(outputs.dir / name, model_, &optimizer_, meta);
      }
    }
    if (outputs.on_epoch) outputs.on_epoch(es);
  }
  if (write) save_checkpoint(outputs.dir / "final", model_, &optimizer_, {{"epochs", config_.epochs}, {"step", step_}});
  return history;
}

}  // namespace mst

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mst/adamw.hpp"
#include "mst/clicks.hpp"
#include "mst/model.hpp"
#include "mst/synthetic.hpp"

namespace mst {

struct TrainConfig {
  ModelConfig model = ModelConfig::desk();
  std::size_t epochs = 20;
  std::size_t samples_per_epoch = 512;
  std::size_t batch_size = 8;
  double lr = 3e-4;
  std::vector<std::size_t> lr_drops{12, 16};
  double lr_factor = 0.1;
  double weight_decay = 0.01;
  std::size_t max_clicks = 24;
  double click_decay = 0.8;
  std::uint64_t seed = 1;
  std::uint64_t data_seed = 1000;
  bool contrastive = true;
  bool augment = true;
  std::size_t max_pairs = 256;
  double focal_gamma = 2.0;
  double focal_alpha = 0.25;

  static TrainConfig desk();
  static TrainConfig full();
  void validate() const;
  /// Learning rate in effect during a 0-based epoch.
  double lr_at(std::size_t epoch) const;
};

/// Flat `key = value` text; `#` starts a comment, quotes around values and
/// brackets around lists are optional. A `preset` key resets every field to
/// that preset first. Model fields use a `model.` prefix.
TrainConfig parse_train_config(std::istream& in);
TrainConfig load_train_config(const std::filesystem::path& path);
std::string format_train_config(const TrainConfig& config);

/// 1 + number of successful continuation trials, capped at max_clicks.
std::size_t draw_click_count(Rng& rng, std::size_t max_clicks, double decay);

/// Training clicks: the first is positive and inside the object, away from
/// its boundary; later ones come from the error regions of `previous` when
/// given, else are random points inside (positive) or near/outside the object.
std::vector<Click> sample_training_clicks(const Mask& gt, const Mask* previous, Rng& rng, std::size_t max_clicks,
                                          double decay);

struct StepStats {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double lr = 0.0;
  double seg = 0.0;
  double contrastive = 0.0;
  double total = 0.0;
  double tiny_pairs = 0.0;
  double large_pairs = 0.0;
};

struct EpochStats {
  std::size_t epoch = 0;
  double lr = 0.0;
  double seg = 0.0;
  double contrastive = 0.0;
  double total = 0.0;
  std::size_t steps = 0;
};

struct TrainOutputs {
  std::filesystem::path dir;  // empty: nothing written
  bool checkpoints = true;
  std::function<void(const EpochStats&)> on_epoch;
};

/// Two forward passes per sample: the first without gradients produces the
/// previous mask and one corrective click, the second is differentiated.
class Trainer {
 public:
  Trainer(const TrainConfig& config, MstModel<float>& model);

  StepStats train_batch(std::span<const Sample> batch);
  EpochStats run_epoch(std::span<const Sample> data, std::size_t epoch, std::ostream* step_log = nullptr);
  std::vector<EpochStats> train(std::span<const Sample> data, const TrainOutputs& outputs = {});

  /// Loss of the second pass on one sample with fixed clicks, no update.
  LossReport<float> evaluate_loss(const Sample& sample, std::span<const Click> clicks, std::uint64_t seed);

  AdamW<float>& optimizer() { return optimizer_; }
  std::size_t step() const { return step_; }

 private:
  LossReport<float> second_pass_loss(const Sample& sample, std::vector<Click> clicks, Rng& rng, bool record);

  TrainConfig config_;
  MstModel<float>& model_;
  AdamW<float> optimizer_;
  LossOptions loss_options_;
  Rng rng_;
  std::size_t step_ = 0;
  std::size_t epoch_ = 0;
};

}  // namespace mst

#pragma once

// The three training regimes and inference:
//   semi_supervised  WGAN-GP adversarial phase, then pose regression on the
//                    critic trunk + pose head (generator and score head frozen)
//   only_vo          pose regression alone on a critic without score head
//   simultaneous     adversarial and supervised critic updates in one step

#include "advo/dataset.hpp"
#include "advo/losses.hpp"
#include "advo/model.hpp"

#include <json.hpp>
#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace advo {

enum class Regime { SemiSupervised, OnlyVo, Simultaneous };
enum class SupervisedLoss { Beta, Reprojection };

std::string to_string(Regime r);
Regime parse_regime(const std::string& s);

struct TrainConfig {
  Regime regime = Regime::SemiSupervised;
  std::int64_t adversarial_iters = 10000;  // semi_supervised, phase 1
  std::int64_t pose_iters = 40000;         // semi_supervised, phase 2
  std::int64_t total_iters = 50000;        // only_vo and simultaneous
  std::int64_t batch_size = 100;
  double learning_rate = 1e-4;
  double beta = 100.0;
  std::uint64_t seed = 0;
  /// Held-out sequence; neither it nor its mirror may appear in training.
  std::string test_sequence;

  double gp_lambda = 10.0;
  int critic_steps = 5;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.9;
  SupervisedLoss loss = SupervisedLoss::Beta;
  std::int64_t base_channels = 64;
  LatentDistribution latent = LatentDistribution::Uniform;

  /// 0 disables periodic checkpoints.
  std::int64_t checkpoint_every = 0;
  std::filesystem::path checkpoint_dir;

  void validate() const;
  ModelOptions model_options() const;
  LossConfig loss_config() const { return {beta, gp_lambda, critic_steps}; }
  /// Number of log rows a complete run produces.
  std::int64_t planned_iterations() const;

  nlohmann::json to_json() const;
  /// Missing keys keep the values of `base`; unknown keys are rejected.
  static TrainConfig from_json(const nlohmann::json& j, const TrainConfig& base);
  static TrainConfig from_json(const nlohmann::json& j) { return from_json(j, TrainConfig{}); }
};

/// One row per iteration. Terms a phase does not compute are NaN.
struct TrainLogRow {
  std::int64_t iteration = 0;
  std::string phase;
  double loss_x = 0.0;
  double loss_q = 0.0;
  double loss_beta = 0.0;
  double loss_p = 0.0;
  double critic = 0.0;
  double generator = 0.0;
  double gradient_penalty = 0.0;
  double fake_min = 0.0;
  double fake_max = 0.0;
  std::size_t excluded_points = 0;
  double wall_seconds = 0.0;
};

struct TrainResult {
  Model model;
  std::vector<TrainLogRow> log;
};

using TrainObserver = std::function<void(const TrainLogRow&)>;

/// Refuses to start (HoldOut) when the dataset contains the test sequence.
/// Any non-finite loss saves `diagnostic.pt` into checkpoint_dir (when set)
/// and throws NonFinite.
TrainResult train(const TrainConfig& config, const Dataset& dataset,
                  std::optional<Model> initial = std::nullopt, const TrainObserver& observer = {});

void write_training_log(std::span<const TrainLogRow> rows, const std::filesystem::path& path);

/// Two frames stacked as [2, 96, 128], pixels mapped to [-1, 1].
torch::Tensor pair_tensor(const Frame& first, const Frame& second);
/// [B, 2, 96, 128] for the selected samples.
torch::Tensor batch_tensor(std::span<const TrainingSample> samples, std::span<const std::size_t> indices);

struct PoseEstimate {
  Vec3 x_hat = Vec3::Zero();
  Vec4 q_hat = Vec4::Zero();

  /// Normalized, sign-canonical label for geometric use.
  MotionLabel label() const;
};

struct InferenceResult {
  std::vector<PoseEstimate> predictions;
  std::vector<double> milliseconds;  // per frame pair
};

/// Evaluation-mode forward pass over each pair, timed individually.
InferenceResult infer(Model& model, std::span<const FramePair> pairs);
InferenceResult infer(const std::filesystem::path& checkpoint, std::span<const FramePair> pairs,
                      const std::optional<ModelOptions>& expected = std::nullopt);

}  // namespace advo

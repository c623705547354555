#pragma once

// Generator and two-headed critic. The critic trunk is shared by a scalar
// Wasserstein score head and a 7-output pose head (3 translation + 4
// quaternion).

#include <json.hpp>
#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

namespace advo {

inline constexpr std::int64_t kLatentDim = 128;
inline constexpr std::int64_t kPoseOutputs = 7;
inline constexpr std::int64_t kPairChannels = 2;

enum class LatentDistribution { Uniform, Normal };

struct ModelOptions {
  /// Width of the first critic stage; the other stages are 2x, 4x, 8x this.
  std::int64_t base_channels = 64;
  /// False for the supervised-only network (no critic score head).
  bool score_head = true;
  bool generator = true;
  LatentDistribution latent = LatentDistribution::Uniform;

  bool operator==(const ModelOptions&) const = default;
  nlohmann::json to_json() const;
  static ModelOptions from_json(const nlohmann::json& j);
};

struct PosePrediction {
  torch::Tensor x_hat;  // [B, 3]
  torch::Tensor q_hat;  // [B, 4], raw network output
};

struct CriticOutput {
  torch::Tensor score;  // [B]; undefined when the score head is absent
  PosePrediction pose;
};

class GeneratorImpl : public torch::nn::Module {
 public:
  explicit GeneratorImpl(std::int64_t base_channels);
  /// z: [B, 128] -> [B, 2, 96, 128] in [-1, 1].
  torch::Tensor forward(const torch::Tensor& z);

 private:
  std::int64_t top_channels_;
  torch::nn::Linear project_{nullptr};
  torch::nn::BatchNorm2d project_norm_{nullptr};
  torch::nn::Sequential upsample_{nullptr};
};
TORCH_MODULE(Generator);

class CriticImpl : public torch::nn::Module {
 public:
  CriticImpl(std::int64_t base_channels, bool score_head);

  /// [B, 2, 96, 128] -> flattened trunk features.
  torch::Tensor features(const torch::Tensor& pairs);
  torch::Tensor score(const torch::Tensor& features);
  PosePrediction pose(const torch::Tensor& features);
  CriticOutput forward(const torch::Tensor& pairs);

  bool has_score_head() const { return !score_head_.is_empty(); }

  std::vector<torch::Tensor> trunk_parameters() const { return trunk_->parameters(); }
  std::vector<torch::Tensor> score_parameters() const;
  std::vector<torch::Tensor> pose_parameters() const { return pose_head_->parameters(); }

 private:
  torch::nn::Sequential trunk_{nullptr};
  torch::nn::Linear score_head_{nullptr};
  torch::nn::Sequential pose_head_{nullptr};
};
TORCH_MODULE(Critic);

/// Owns the networks selected by ModelOptions.
struct Model {
  ModelOptions options;
  Generator generator{nullptr};
  Critic critic{nullptr};

  /// Seeds the global torch RNG with `seed` before initializing; without a
  /// seed the current RNG state is used.
  Model(const ModelOptions& opts, std::optional<std::uint64_t> seed);

  void train(bool on = true);
  void eval() { train(false); }
  /// Stable digest of parameter names and shapes.
  std::string architecture_hash() const;
  /// Deep copy with identical parameter values.
  Model clone() const;
};

/// Checks the latent shape and runs the generator.
torch::Tensor generate(Generator& generator, const torch::Tensor& z);
/// Checks the pair shape and runs both critic heads.
CriticOutput discriminate(Critic& critic, const torch::Tensor& pairs);

/// [batch, 128] i.i.d. samples: Uniform[-1, 1] or standard normal.
torch::Tensor sample_latent(std::int64_t batch, std::uint64_t seed,
                            LatentDistribution dist = LatentDistribution::Uniform);

/// One file holding every named tensor plus a JSON metadata block.
void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     nlohmann::json metadata = nlohmann::json::object());

struct LoadedCheckpoint {
  Model model;
  nlohmann::json metadata;
};

/// Throws Checkpoint when the file is unreadable, the stored architecture
/// does not match its tensors, or `expected` differs from the stored options.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path,
                                 const std::optional<ModelOptions>& expected = std::nullopt);

struct NamedTensor {
  std::string name;
  torch::Tensor tensor;
  bool buffer = false;
};

/// Every parameter and buffer, prefixed with "generator." or "critic.".
std::vector<NamedTensor> named_state(const Model& model);

}  // namespace advo

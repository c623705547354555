#pragma once

// Supervised pose losses, the reprojection loss and the WGAN-GP objectives.
// Tensor losses are autograd-friendly and dtype-agnostic; batch variants
// return one value per sample.

#include "advo/camera.hpp"
#include "advo/geometry.hpp"

#include <torch/torch.h>

#include <cstdint>
#include <functional>
#include <optional>
#include <span>

namespace advo {

struct LossConfig {
  double beta = 100.0;
  double gp_lambda = 10.0;
  int critic_steps = 5;

  void validate() const;
};

/// ||x - x_hat||_2 per row of [B, 3] (or a single [3] vector).
torch::Tensor loss_translation(const torch::Tensor& x, const torch::Tensor& x_hat);
/// ||q - q_hat||_2 on the raw, unnormalized q_hat.
torch::Tensor loss_rotation(const torch::Tensor& q, const torch::Tensor& q_hat);
/// L_x + beta * L_q.
torch::Tensor loss_beta(const torch::Tensor& x, const torch::Tensor& q, const torch::Tensor& x_hat,
                        const torch::Tensor& q_hat, double beta);

/// [..., 4] (w, x, y, z) -> [..., 3, 3]; the quaternion is normalized first.
torch::Tensor quaternion_to_rotation(const torch::Tensor& q);

/// pi(K (A x + b)). Throws PointBehindCamera for non-positive depth.
Vec2 project(const Mat3& a, const Vec3& x, const Vec3& b, const CameraIntrinsics& k);

struct ReprojectionLoss {
  torch::Tensor value;       // scalar
  std::size_t used = 0;      // points that entered the average
  std::size_t excluded = 0;  // behind either camera
};

/// Mean pixel distance between projections of G_n under the labelled and the
/// predicted motion. x, q, x_hat, q_hat are single-sample vectors; q_hat is
/// normalized here. Throws DegenerateLoss when no point survives.
ReprojectionLoss loss_reprojection(const torch::Tensor& x, const torch::Tensor& q,
                                   const torch::Tensor& x_hat, const torch::Tensor& q_hat,
                                   const CameraIntrinsics& k, const PointSet& points);

/// Per-pair point averaging, then the batch mean.
ReprojectionLoss loss_reprojection_batch(const torch::Tensor& x, const torch::Tensor& q,
                                         const torch::Tensor& x_hat, const torch::Tensor& q_hat,
                                         const CameraIntrinsics& k,
                                         std::span<const PointSet* const> points);

/// mean(fake) - mean(real) + gp_lambda * gp.
torch::Tensor critic_loss(const torch::Tensor& real_scores, const torch::Tensor& fake_scores,
                          const torch::Tensor& gp, double gp_lambda);

using CriticFn = std::function<torch::Tensor(const torch::Tensor&)>;

/// mean over the batch of (||grad_input critic(interp)||_2 - 1)^2 with
/// interp = eps * real + (1 - eps) * fake, eps ~ U[0, 1] per sample. The
/// result stays differentiable w.r.t. the critic parameters when
/// `create_graph` is set. Without a seed the global torch RNG is used.
torch::Tensor gradient_penalty(const torch::Tensor& real, const torch::Tensor& fake,
                               const CriticFn& critic, std::optional<std::uint64_t> seed = {},
                               bool create_graph = true);

/// -mean(fake).
torch::Tensor generator_loss(const torch::Tensor& fake_scores);

}  // namespace advo

#include "advo/losses.hpp"

#include "advo/error.hpp"
#include "advo/log.hpp"

#include <sstream>

namespace advo {

namespace {

constexpr double kMinDepth = 1e-9;

torch::Tensor row_norm(const torch::Tensor& v) {
  return torch::linalg_vector_norm(v, 2, {-1}, /*keepdim=*/false, std::nullopt);
}

void check_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  if (!a.sizes().equals(b.sizes())) {
    std::ostringstream os;
    os << what << ": shape mismatch " << a.sizes() << " vs " << b.sizes();
    throw Error(ErrorKind::Shape, os.str());
  }
}

torch::Tensor to_tensor(const Mat3& m, const torch::TensorOptions& opts) {
  auto t = torch::empty({3, 3}, opts.dtype(torch::kFloat64));
  auto acc = t.accessor<double, 2>();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) acc[r][c] = m(r, c);
  return t.to(opts.dtype());
}

}  // namespace

void LossConfig::validate() const {
  if (!(beta > 0.0)) throw Error(ErrorKind::Config, "beta must be positive");
  if (!(gp_lambda >= 0.0)) throw Error(ErrorKind::Config, "gp_lambda must be >= 0");
  if (critic_steps < 1) throw Error(ErrorKind::Config, "critic_steps must be >= 1");
}

torch::Tensor loss_translation(const torch::Tensor& x, const torch::Tensor& x_hat) {
  check_same_shape(x, x_hat, "loss_translation");
  return row_norm(x - x_hat);
}

torch::Tensor loss_rotation(const torch::Tensor& q, const torch::Tensor& q_hat) {
  check_same_shape(q, q_hat, "loss_rotation");
  return row_norm(q - q_hat);
}

torch::Tensor loss_beta(const torch::Tensor& x, const torch::Tensor& q, const torch::Tensor& x_hat,
                        const torch::Tensor& q_hat, double beta) {
  return loss_translation(x, x_hat) + beta * loss_rotation(q, q_hat);
}

torch::Tensor quaternion_to_rotation(const torch::Tensor& q_raw) {
  const auto q = q_raw / row_norm(q_raw).unsqueeze(-1);
  const auto w = q.select(-1, 0), x = q.select(-1, 1), y = q.select(-1, 2), z = q.select(-1, 3);
  const auto r0 = torch::stack({1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)}, -1);
  const auto r1 = torch::stack({2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)}, -1);
  const auto r2 = torch::stack({2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)}, -1);
  return torch::stack({r0, r1, r2}, -2);
}

Vec2 project(const Mat3& a, const Vec3& x, const Vec3& b, const CameraIntrinsics& k) {
  const Vec3 h = k.matrix() * (a * x + b);
  if (!(h.z() > 0.0)) {
    std::ostringstream os;
    os << "point projects with non-positive depth " << h.z();
    throw Error(ErrorKind::PointBehindCamera, os.str());
  }
  return h.head<2>() / h.z();
}

ReprojectionLoss loss_reprojection(const torch::Tensor& x, const torch::Tensor& q,
                                   const torch::Tensor& x_hat, const torch::Tensor& q_hat,
                                   const CameraIntrinsics& k, const PointSet& points) {
  if (points.empty()) throw Error(ErrorKind::DegenerateLoss, "reprojection loss needs points");
  const auto opts = x_hat.options();
  auto g = torch::empty({static_cast<std::int64_t>(points.size()), 3}, opts.dtype(torch::kFloat64));
  {
    auto acc = g.accessor<double, 2>();
    for (std::size_t i = 0; i < points.size(); ++i)
      for (int c = 0; c < 3; ++c) acc[i][c] = points.points[i][c];
  }
  g = g.to(opts.dtype());
  const auto kt = to_tensor(k.matrix(), opts);

  // Rows of g transformed: (A g^T)^T + b, then K.
  const auto cam_true = torch::matmul(g, quaternion_to_rotation(q).transpose(0, 1)) + x;
  const auto cam_pred = torch::matmul(g, quaternion_to_rotation(q_hat).transpose(0, 1)) + x_hat;
  const auto h_true = torch::matmul(cam_true, kt.transpose(0, 1));
  const auto h_pred = torch::matmul(cam_pred, kt.transpose(0, 1));

  const auto keep = torch::logical_and(h_true.select(1, 2).gt(kMinDepth),
                                       h_pred.select(1, 2).gt(kMinDepth))
                        .detach();
  const auto idx = torch::nonzero(keep).squeeze(1);
  ReprojectionLoss out;
  out.used = static_cast<std::size_t>(idx.size(0));
  out.excluded = points.size() - out.used;
  if (out.used == 0) {
    throw Error(ErrorKind::DegenerateLoss, "every point lies behind one of the cameras");
  }
  if (out.excluded > 0) {
    log::write(log::Level::Debug, "loss_reprojection: excluded " + std::to_string(out.excluded) +
                                      " point(s) behind the camera");
  }
  const auto ht = h_true.index_select(0, idx);
  const auto hp = h_pred.index_select(0, idx);
  const auto pt = ht.slice(1, 0, 2) / ht.slice(1, 2, 3);
  const auto pp = hp.slice(1, 0, 2) / hp.slice(1, 2, 3);
  out.value = row_norm(pt - pp).mean();
  return out;
}

ReprojectionLoss loss_reprojection_batch(const torch::Tensor& x, const torch::Tensor& q,
                                         const torch::Tensor& x_hat, const torch::Tensor& q_hat,
                                         const CameraIntrinsics& k,
                                         std::span<const PointSet* const> points) {
  const auto batch = x_hat.size(0);
  if (static_cast<std::size_t>(batch) != points.size()) {
    throw Error(ErrorKind::Shape, "loss_reprojection_batch: one point set per sample required");
  }
  ReprojectionLoss out;
  std::vector<torch::Tensor> values;
  for (std::int64_t i = 0; i < batch; ++i) {
    if (points[i] == nullptr) {
      throw Error(ErrorKind::DegenerateLoss, "sample " + std::to_string(i) + " has no point set");
    }
    auto r = loss_reprojection(x[i], q[i], x_hat[i], q_hat[i], k, *points[i]);
    out.used += r.used;
    out.excluded += r.excluded;
    values.push_back(r.value);
  }
  out.value = torch::stack(values).mean();
  return out;
}

torch::Tensor critic_loss(const torch::Tensor& real_scores, const torch::Tensor& fake_scores,
                          const torch::Tensor& gp, double gp_lambda) {
  return fake_scores.mean() - real_scores.mean() + gp_lambda * gp;
}

torch::Tensor gradient_penalty(const torch::Tensor& real, const torch::Tensor& fake,
                               const CriticFn& critic, std::optional<std::uint64_t> seed,
                               bool create_graph) {
  check_same_shape(real, fake, "gradient_penalty");
  std::vector<std::int64_t> eps_shape(real.dim(), 1);
  eps_shape[0] = real.size(0);
  torch::Tensor eps;
  if (seed) {
    auto gen = at::make_generator<at::CPUGeneratorImpl>(*seed);
    eps = torch::rand(eps_shape, gen, real.options().dtype(torch::kFloat64)).to(real.dtype());
  } else {
    eps = torch::rand(eps_shape, real.options());
  }
  auto interp = (eps * real.detach() + (1.0 - eps) * fake.detach()).requires_grad_(true);
  const auto scores = critic(interp);
  torch::Tensor grads;
  if (scores.requires_grad()) {
    grads = torch::autograd::grad({scores.sum()}, {interp}, {}, /*retain_graph=*/true,
                                  create_graph, /*allow_unused=*/true)[0];
  }
  if (!grads.defined()) grads = torch::zeros_like(interp);
  const auto norms = row_norm(grads.flatten(1));
  return (norms - 1.0).pow(2).mean();
}

torch::Tensor generator_loss(const torch::Tensor& fake_scores) { return -fake_scores.mean(); }

}  // namespace advo

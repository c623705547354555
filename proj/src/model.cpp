#include "advo/model.hpp"

#include "advo/dataset.hpp"
#include "advo/error.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

namespace advo {

namespace nn = torch::nn;
using json = nlohmann::json;

namespace {

constexpr std::int64_t kTrunkRows = kFrameHeight / 16;  // 6
constexpr std::int64_t kTrunkCols = kFrameWidth / 16;   // 8
constexpr double kLeakySlope = 0.2;

void init_conv(torch::Tensor& weight, torch::Tensor& bias) {
  torch::NoGradGuard guard;
  weight.normal_(0.0, 0.02);
  if (bias.defined()) bias.zero_();
}

void init_linear(nn::Linear& layer) {
  torch::NoGradGuard guard;
  const double bound = 1.0 / std::sqrt(static_cast<double>(layer->options.in_features()));
  layer->weight.uniform_(-bound, bound);
  if (layer->bias.defined()) layer->bias.uniform_(-bound, bound);
}

nn::Conv2d down(std::int64_t in, std::int64_t out) {
  nn::Conv2d conv(nn::Conv2dOptions(in, out, 4).stride(2).padding(1));
  init_conv(conv->weight, conv->bias);
  return conv;
}

nn::ConvTranspose2d up(std::int64_t in, std::int64_t out) {
  nn::ConvTranspose2d conv(nn::ConvTranspose2dOptions(in, out, 4).stride(2).padding(1));
  init_conv(conv->weight, conv->bias);
  return conv;
}

nn::LeakyReLU leaky() { return nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(kLeakySlope)); }

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string latent_name(LatentDistribution d) {
  return d == LatentDistribution::Normal ? "normal" : "uniform";
}

}  // namespace

json ModelOptions::to_json() const {
  return {{"base_channels", base_channels},
          {"score_head", score_head},
          {"generator", generator},
          {"latent", latent_name(latent)}};
}

ModelOptions ModelOptions::from_json(const json& j) {
  ModelOptions o;
  o.base_channels = j.value("base_channels", o.base_channels);
  o.score_head = j.value("score_head", o.score_head);
  o.generator = j.value("generator", o.generator);
  const std::string latent = j.value("latent", std::string("uniform"));
  if (latent == "uniform") {
    o.latent = LatentDistribution::Uniform;
  } else if (latent == "normal") {
    o.latent = LatentDistribution::Normal;
  } else {
    throw Error(ErrorKind::Config, "unknown latent distribution '" + latent + "'");
  }
  if (o.base_channels < 1) throw Error(ErrorKind::Config, "base_channels must be >= 1");
  return o;
}

GeneratorImpl::GeneratorImpl(std::int64_t base_channels) : top_channels_(8 * base_channels) {
  const std::int64_t c = base_channels;
  project_ = register_module("project", nn::Linear(kLatentDim, top_channels_ * kTrunkRows * kTrunkCols));
  init_linear(project_);
  project_norm_ = register_module("project_norm", nn::BatchNorm2d(top_channels_));
  upsample_ = register_module(
      "upsample",
      nn::Sequential(up(8 * c, 4 * c), nn::BatchNorm2d(4 * c), nn::ReLU(),   // 12x16
                     up(4 * c, 2 * c), nn::BatchNorm2d(2 * c), nn::ReLU(),   // 24x32
                     up(2 * c, c), nn::BatchNorm2d(c), nn::ReLU(),           // 48x64
                     up(c, kPairChannels), nn::Tanh()));                     // 96x128
}

torch::Tensor GeneratorImpl::forward(const torch::Tensor& z) {
  auto h = project_->forward(z).view({z.size(0), top_channels_, kTrunkRows, kTrunkCols});
  h = torch::relu(project_norm_->forward(h));
  return upsample_->forward(h);
}

CriticImpl::CriticImpl(std::int64_t base_channels, bool score_head) {
  const std::int64_t c = base_channels;
  trunk_ = register_module(
      "trunk", nn::Sequential(down(kPairChannels, c), leaky(),  // 48x64
                              down(c, 2 * c), leaky(),          // 24x32
                              down(2 * c, 4 * c), leaky(),      // 12x16
                              down(4 * c, 8 * c), leaky(),      // 6x8
                              nn::Flatten()));
  const std::int64_t feat = 8 * c * kTrunkRows * kTrunkCols;
  if (score_head) {
    // No bias: a constant offset cancels out of every Wasserstein objective.
    score_head_ = register_module("score_head", nn::Linear(nn::LinearOptions(feat, 1).bias(false)));
    init_linear(score_head_);
  }
  nn::Linear fc1(feat, 1024), fc2(1024, 128), fc3(128, kPoseOutputs);
  init_linear(fc1);
  init_linear(fc2);
  init_linear(fc3);
  pose_head_ = register_module("pose_head", nn::Sequential(fc1, leaky(), fc2, leaky(), fc3));
}

torch::Tensor CriticImpl::features(const torch::Tensor& pairs) { return trunk_->forward(pairs); }

torch::Tensor CriticImpl::score(const torch::Tensor& features) {
  if (score_head_.is_empty()) {
    throw Error(ErrorKind::Config, "this network was built without a critic score head");
  }
  return score_head_->forward(features).squeeze(1);
}

PosePrediction CriticImpl::pose(const torch::Tensor& features) {
  const auto out = pose_head_->forward(features);
  return {out.slice(1, 0, 3), out.slice(1, 3, 7)};
}

CriticOutput CriticImpl::forward(const torch::Tensor& pairs) {
  const auto f = features(pairs);
  CriticOutput out;
  if (has_score_head()) out.score = score(f);
  out.pose = pose(f);
  return out;
}

std::vector<torch::Tensor> CriticImpl::score_parameters() const {
  return score_head_.is_empty() ? std::vector<torch::Tensor>{} : score_head_->parameters();
}

Model::Model(const ModelOptions& opts, std::optional<std::uint64_t> seed) : options(opts) {
  if (opts.base_channels < 1) throw Error(ErrorKind::Config, "base_channels must be >= 1");
  if (seed) torch::manual_seed(*seed);
  critic = Critic(opts.base_channels, opts.score_head);
  if (opts.generator) generator = Generator(opts.base_channels);
}

void Model::train(bool on) {
  critic->train(on);
  if (!generator.is_empty()) generator->train(on);
}

std::vector<NamedTensor> named_state(const Model& model) {
  std::vector<NamedTensor> out;
  const auto collect = [&](const std::string& prefix, const nn::Module& m) {
    for (const auto& p : m.named_parameters()) out.push_back({prefix + p.key(), p.value(), false});
    for (const auto& b : m.named_buffers()) out.push_back({prefix + b.key(), b.value(), true});
  };
  if (!model.generator.is_empty()) collect("generator.", *model.generator);
  collect("critic.", *model.critic);
  return out;
}

std::string Model::architecture_hash() const {
  std::ostringstream os;
  for (const auto& nt : named_state(*this)) {
    os << nt.name << ':';
    for (auto s : nt.tensor.sizes()) os << s << ',';
    os << ';';
  }
  std::ostringstream hex;
  hex << std::hex << std::setw(16) << std::setfill('0') << fnv1a(os.str());
  return hex.str();
}

Model Model::clone() const {
  Model copy(options, std::nullopt);
  torch::NoGradGuard guard;
  const auto src = named_state(*this);
  const auto dst = named_state(copy);
  for (std::size_t i = 0; i < src.size(); ++i) dst[i].tensor.copy_(src[i].tensor);
  copy.critic->train(critic->is_training());
  if (!generator.is_empty()) copy.generator->train(generator->is_training());
  return copy;
}

torch::Tensor generate(Generator& generator, const torch::Tensor& z) {
  if (z.dim() != 2 || z.size(1) != kLatentDim) {
    std::ostringstream os;
    os << "latent batch must have shape [B, " << kLatentDim << "], got " << z.sizes();
    throw Error(ErrorKind::Shape, os.str());
  }
  return generator->forward(z);
}

CriticOutput discriminate(Critic& critic, const torch::Tensor& pairs) {
  if (pairs.dim() != 4 || pairs.size(1) != kPairChannels || pairs.size(2) != kFrameHeight ||
      pairs.size(3) != kFrameWidth) {
    std::ostringstream os;
    os << "pair batch must have shape [B, 2, 96, 128], got " << pairs.sizes();
    throw Error(ErrorKind::Shape, os.str());
  }
  return critic->forward(pairs);
}

torch::Tensor sample_latent(std::int64_t batch, std::uint64_t seed, LatentDistribution dist) {
  if (batch < 1) throw Error(ErrorKind::Config, "latent batch must be >= 1");
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  const auto shape = std::vector<std::int64_t>{batch, kLatentDim};
  if (dist == LatentDistribution::Normal) return torch::randn(shape, gen);
  return torch::rand(shape, gen) * 2.0 - 1.0;
}

void save_checkpoint(const std::filesystem::path& path, const Model& model, json metadata) {
  metadata["architecture"] = model.options.to_json();
  metadata["architecture_hash"] = model.architecture_hash();
  torch::serialize::OutputArchive archive;
  for (const auto& nt : named_state(model)) archive.write(nt.name, nt.tensor.detach(), nt.buffer);
  archive.write("metadata", c10::IValue(metadata.dump()));
  try {
    archive.save_to(path.string());
  } catch (const c10::Error& e) {
    throw Error(ErrorKind::Io, "cannot write checkpoint " + path.string() + ": " + e.what_without_backtrace());
  }
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path,
                                 const std::optional<ModelOptions>& expected) {
  torch::serialize::InputArchive archive;
  try {
    archive.load_from(path.string());
  } catch (const c10::Error& e) {
    throw Error(ErrorKind::Checkpoint, "cannot read checkpoint " + path.string() + ": " +
                                           e.what_without_backtrace());
  }
  c10::IValue meta_value;
  if (!archive.try_read("metadata", meta_value) || !meta_value.isString()) {
    throw Error(ErrorKind::Checkpoint, path.string() + ": missing metadata block");
  }
  json metadata = json::parse(meta_value.toStringRef());
  const ModelOptions stored = ModelOptions::from_json(metadata.at("architecture"));
  if (expected && !(*expected == stored)) {
    throw Error(ErrorKind::Checkpoint, "checkpoint architecture " + stored.to_json().dump() +
                                           " does not match expected " + expected->to_json().dump());
  }
  Model model(stored, std::nullopt);
  if (metadata.value("architecture_hash", std::string{}) != model.architecture_hash()) {
    throw Error(ErrorKind::Checkpoint, path.string() + ": architecture hash mismatch");
  }
  torch::NoGradGuard guard;
  for (auto& nt : named_state(model)) {
    torch::Tensor stored_t;
    if (!archive.try_read(nt.name, stored_t, nt.buffer) ||
        !stored_t.sizes().equals(nt.tensor.sizes())) {
      throw Error(ErrorKind::Checkpoint, path.string() + ": missing or mis-shaped tensor " + nt.name);
    }
    nt.tensor.copy_(stored_t);
  }
  return {std::move(model), std::move(metadata)};
}

}  // namespace advo

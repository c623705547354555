#include "advo/training.hpp"

#include "advo/error.hpp"
#include "advo/log.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <set>

namespace advo {

using json = nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string to_string(SupervisedLoss l) { return l == SupervisedLoss::Beta ? "beta" : "reprojection"; }

SupervisedLoss parse_loss(const std::string& s) {
  if (s == "beta") return SupervisedLoss::Beta;
  if (s == "reprojection") return SupervisedLoss::Reprojection;
  throw Error(ErrorKind::Config, "unknown loss '" + s + "' (expected beta or reprojection)");
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double scalar(const torch::Tensor& t) { return t.detach().item<double>(); }

struct Batch {
  std::vector<std::size_t> indices;
  torch::Tensor pairs;  // [B, 2, 96, 128]
  torch::Tensor x;      // [B, 3]
  torch::Tensor q;      // [B, 4]
};

struct Supervised {
  torch::Tensor objective;
  double loss_x = kNaN, loss_q = kNaN, loss_beta = kNaN, loss_p = kNaN;
  std::size_t excluded = 0;
};

struct Adversarial {
  double critic = kNaN, generator = kNaN, gp = kNaN, fake_min = kNaN, fake_max = kNaN;
};

TrainLogRow blank_row(std::int64_t iteration, std::string phase) {
  TrainLogRow r;
  r.iteration = iteration;
  r.phase = std::move(phase);
  r.loss_x = r.loss_q = r.loss_beta = r.loss_p = kNaN;
  r.critic = r.generator = r.gradient_penalty = r.fake_min = r.fake_max = kNaN;
  return r;
}

class Trainer {
 public:
  Trainer(const TrainConfig& cfg, const Dataset& ds, Model& model, const TrainObserver& observer)
      : cfg_(cfg),
        ds_(ds),
        model_(model),
        observer_(observer),
        batches_(ds.size(), static_cast<std::size_t>(cfg.batch_size), cfg.seed),
        start_(std::chrono::steady_clock::now()) {}

  std::vector<TrainLogRow> run() {
    torch::manual_seed(cfg_.seed);
    model_.train();
    switch (cfg_.regime) {
      case Regime::SemiSupervised:
        run_adversarial_phase();
        run_supervised_phase("pose", cfg_.pose_iters);
        break;
      case Regime::OnlyVo:
        run_supervised_phase("supervised", cfg_.total_iters);
        break;
      case Regime::Simultaneous:
        run_simultaneous();
        break;
    }
    model_.eval();
    return std::move(log_);
  }

 private:
  torch::optim::AdamOptions adam() const {
    return torch::optim::AdamOptions(cfg_.learning_rate).betas({cfg_.adam_beta1, cfg_.adam_beta2});
  }

  static std::vector<torch::Tensor> concat(std::vector<torch::Tensor> a,
                                           const std::vector<torch::Tensor>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
  }

  Batch next_batch() {
    Batch b;
    b.indices = batches_.next();
    b.pairs = batch_tensor(ds_.samples, b.indices);
    const auto n = static_cast<std::int64_t>(b.indices.size());
    b.x = torch::empty({n, 3}, torch::kFloat64);
    b.q = torch::empty({n, 4}, torch::kFloat64);
    auto xa = b.x.accessor<double, 2>();
    auto qa = b.q.accessor<double, 2>();
    for (std::int64_t i = 0; i < n; ++i) {
      const MotionLabel& l = ds_.samples[b.indices[i]].label;
      for (int c = 0; c < 3; ++c) xa[i][c] = l.x[c];
      for (int c = 0; c < 4; ++c) qa[i][c] = l.q[c];
    }
    b.x = b.x.to(torch::kFloat32);
    b.q = b.q.to(torch::kFloat32);
    return b;
  }

  torch::Tensor latent() {
    return sample_latent(cfg_.batch_size, splitmix64(cfg_.seed ^ splitmix64(latent_draws_++)),
                         cfg_.latent);
  }

  Supervised supervised(const Batch& b, const PosePrediction& pred) {
    Supervised s;
    const auto lx = loss_translation(b.x, pred.x_hat);
    const auto lq = loss_rotation(b.q, pred.q_hat);
    s.loss_x = scalar(lx.mean());
    s.loss_q = scalar(lq.mean());
    s.loss_beta = s.loss_x + cfg_.beta * s.loss_q;
    if (cfg_.loss == SupervisedLoss::Beta) {
      s.objective = (lx + cfg_.beta * lq).mean();
      s.loss_beta = scalar(s.objective);
    } else {
      std::vector<const PointSet*> pts;
      for (std::size_t i : b.indices) pts.push_back(&*ds_.samples[i].points);
      auto r = loss_reprojection_batch(b.x, b.q, pred.x_hat, pred.q_hat, *ds_.intrinsics, pts);
      s.objective = r.value;
      s.loss_p = scalar(r.value);
      s.excluded = r.excluded;
    }
    return s;
  }

  // One critic update; `extra` is added to the adversarial objective.
  Adversarial critic_update(torch::optim::Optimizer& opt, const Batch& real,
                            const std::function<torch::Tensor(const torch::Tensor&)>& extra = {}) {
    torch::Tensor fake;
    {
      torch::NoGradGuard guard;
      fake = generate(model_.generator, latent());
    }
    auto& critic = model_.critic;
    const auto real_features = critic->features(real.pairs);
    const auto real_scores = critic->score(real_features);
    const auto fake_scores = critic->score(critic->features(fake));
    const auto gp = gradient_penalty(real.pairs, fake, [&](const torch::Tensor& x) {
      return critic->score(critic->features(x));
    });
    auto loss = critic_loss(real_scores, fake_scores, gp, cfg_.gp_lambda);
    Adversarial a;
    a.critic = scalar(loss);
    a.gp = scalar(gp);
    a.fake_min = fake.min().item<double>();
    a.fake_max = fake.max().item<double>();
    if (extra) loss = loss + extra(real_features);
    opt.zero_grad();
    loss.backward();
    opt.step();
    return a;
  }

  double generator_update(torch::optim::Optimizer& opt) {
    const auto fake = generate(model_.generator, latent());
    const auto loss = generator_loss(model_.critic->score(model_.critic->features(fake)));
    opt.zero_grad();
    loss.backward();
    opt.step();
    return scalar(loss);
  }

  void run_adversarial_phase() {
    torch::optim::Adam critic_opt(
        concat(model_.critic->trunk_parameters(), model_.critic->score_parameters()), adam());
    torch::optim::Adam gen_opt(model_.generator->parameters(), adam());
    for (std::int64_t it = 0; it < cfg_.adversarial_iters; ++it) {
      Adversarial a;
      for (int k = 0; k < cfg_.critic_steps; ++k) a = critic_update(critic_opt, next_batch());
      a.generator = generator_update(gen_opt);
      TrainLogRow row = blank_row(iteration_, "adversarial");
      fill(row, a);
      finish(row);
    }
  }

  void run_supervised_phase(const std::string& phase, std::int64_t iters) {
    torch::optim::Adam opt(
        concat(model_.critic->trunk_parameters(), model_.critic->pose_parameters()), adam());
    for (std::int64_t it = 0; it < iters; ++it) {
      const Batch b = next_batch();
      const auto pred = model_.critic->pose(model_.critic->features(b.pairs));
      Supervised s = supervised(b, pred);
      TrainLogRow row = blank_row(iteration_, phase);
      fill(row, s);
      check_finite(row);
      opt.zero_grad();
      s.objective.backward();
      opt.step();
      finish(row);
    }
  }

  void run_simultaneous() {
    torch::optim::Adam critic_opt(model_.critic->parameters(), adam());
    torch::optim::Adam gen_opt(model_.generator->parameters(), adam());
    for (std::int64_t it = 0; it < cfg_.total_iters; ++it) {
      Adversarial a;
      Supervised s;
      for (int k = 0; k < cfg_.critic_steps; ++k) {
        const Batch b = next_batch();
        if (k + 1 < cfg_.critic_steps) {
          a = critic_update(critic_opt, b);
          continue;
        }
        // Last critic step of the iteration also carries the pose loss on
        // the same real batch.
        a = critic_update(critic_opt, b, [&](const torch::Tensor& feats) {
          s = supervised(b, model_.critic->pose(feats));
          return s.objective;
        });
      }
      a.generator = generator_update(gen_opt);
      TrainLogRow row = blank_row(iteration_, "simultaneous");
      fill(row, a);
      fill(row, s);
      finish(row);
    }
  }

  static void fill(TrainLogRow& row, const Adversarial& a) {
    row.critic = a.critic;
    row.generator = a.generator;
    row.gradient_penalty = a.gp;
    row.fake_min = a.fake_min;
    row.fake_max = a.fake_max;
  }

  static void fill(TrainLogRow& row, const Supervised& s) {
    row.loss_x = s.loss_x;
    row.loss_q = s.loss_q;
    row.loss_beta = s.loss_beta;
    row.loss_p = s.loss_p;
    row.excluded_points = s.excluded;
  }

  // Terms a phase does not compute stay NaN and are skipped.
  std::vector<double> required_terms(const TrainLogRow& row) const {
    std::vector<double> terms;
    if (row.phase == "adversarial" || row.phase == "simultaneous") {
      terms.insert(terms.end(), {row.critic, row.gradient_penalty});
      if (!std::isnan(row.generator)) terms.push_back(row.generator);
    }
    if (row.phase != "adversarial") {
      terms.insert(terms.end(), {row.loss_x, row.loss_q});
      terms.push_back(cfg_.loss == SupervisedLoss::Reprojection ? row.loss_p : row.loss_beta);
    }
    return terms;
  }

  void check_finite(const TrainLogRow& row) {
    for (double v : required_terms(row)) {
      if (std::isfinite(v)) continue;
      if (!cfg_.checkpoint_dir.empty()) {
        std::filesystem::create_directories(cfg_.checkpoint_dir);
        save_checkpoint(cfg_.checkpoint_dir / "diagnostic.pt", model_,
                        {{"iteration", row.iteration}, {"phase", row.phase}, {"diagnostic", true}});
      }
      throw Error(ErrorKind::NonFinite, "non-finite loss at iteration " +
                                            std::to_string(row.iteration) + " (" + row.phase + ")");
    }
  }

  void finish(TrainLogRow& row) {
    check_finite(row);
    row.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    log_.push_back(row);
    if (observer_) observer_(row);
    ++iteration_;
    if (cfg_.checkpoint_every > 0 && !cfg_.checkpoint_dir.empty() &&
        iteration_ % cfg_.checkpoint_every == 0) {
      std::filesystem::create_directories(cfg_.checkpoint_dir);
      save_checkpoint(cfg_.checkpoint_dir / ("checkpoint_" + std::to_string(iteration_) + ".pt"),
                      model_, {{"iteration", iteration_}, {"config", cfg_.to_json()}});
    }
  }

  const TrainConfig& cfg_;
  const Dataset& ds_;
  Model& model_;
  const TrainObserver& observer_;
  BatchIterator batches_;
  std::chrono::steady_clock::time_point start_;
  std::vector<TrainLogRow> log_;
  std::int64_t iteration_ = 0;
  std::uint64_t latent_draws_ = 0;
};

void check_hold_out(const TrainConfig& cfg, const Dataset& ds) {
  if (cfg.test_sequence.empty()) return;
  for (const TrainingSample& s : ds.samples) {
    if (s.first->sequence == cfg.test_sequence || s.second->sequence == cfg.test_sequence) {
      throw Error(ErrorKind::HoldOut,
                  std::string("training data contains the held-out sequence ") + cfg.test_sequence +
                      (s.first->mirrored ? " (mirrored)" : ""));
    }
  }
}

}  // namespace

std::string to_string(Regime r) {
  switch (r) {
    case Regime::SemiSupervised: return "semi_supervised";
    case Regime::OnlyVo: return "only_vo";
    case Regime::Simultaneous: return "simultaneous";
  }
  return "?";
}

Regime parse_regime(const std::string& s) {
  if (s == "semi_supervised") return Regime::SemiSupervised;
  if (s == "only_vo") return Regime::OnlyVo;
  if (s == "simultaneous") return Regime::Simultaneous;
  throw Error(ErrorKind::Config,
              "unknown regime '" + s + "' (expected semi_supervised, only_vo or simultaneous)");
}

void TrainConfig::validate() const {
  if (adversarial_iters < 0 || pose_iters < 0 || total_iters < 0) {
    throw Error(ErrorKind::Config, "iteration counts must be >= 0");
  }
  if (batch_size < 1) throw Error(ErrorKind::Config, "batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw Error(ErrorKind::Config, "learning_rate must be positive");
  loss_config().validate();
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    throw Error(ErrorKind::Config, "Adam betas must lie in [0, 1)");
  }
  if (base_channels < 1) throw Error(ErrorKind::Config, "base_channels must be >= 1");
  if (checkpoint_every < 0) throw Error(ErrorKind::Config, "checkpoint_every must be >= 0");
}

ModelOptions TrainConfig::model_options() const {
  ModelOptions o;
  o.base_channels = base_channels;
  o.latent = latent;
  o.score_head = regime != Regime::OnlyVo;
  o.generator = regime != Regime::OnlyVo;
  return o;
}

std::int64_t TrainConfig::planned_iterations() const {
  return regime == Regime::SemiSupervised ? adversarial_iters + pose_iters : total_iters;
}

json TrainConfig::to_json() const {
  return {{"regime", to_string(regime)},
          {"adversarial_iters", adversarial_iters},
          {"pose_iters", pose_iters},
          {"total_iters", total_iters},
          {"batch_size", batch_size},
          {"learning_rate", learning_rate},
          {"beta", beta},
          {"seed", seed},
          {"test_sequence", test_sequence},
          {"gp_lambda", gp_lambda},
          {"critic_steps", critic_steps},
          {"adam_beta1", adam_beta1},
          {"adam_beta2", adam_beta2},
          {"loss", to_string(loss)},
          {"base_channels", base_channels},
          {"latent", latent == LatentDistribution::Normal ? "normal" : "uniform"},
          {"checkpoint_every", checkpoint_every},
          {"checkpoint_dir", checkpoint_dir.string()}};
}

TrainConfig TrainConfig::from_json(const json& j, const TrainConfig& base) {
  if (!j.is_object()) throw Error(ErrorKind::Config, "training config must be a JSON object");
  static const std::set<std::string> kKeys = {
      "regime",     "adversarial_iters", "pose_iters", "total_iters",   "batch_size",
      "learning_rate", "beta",           "seed",       "test_sequence", "gp_lambda",
      "critic_steps",  "adam_beta1",     "adam_beta2", "loss",          "base_channels",
      "latent",     "checkpoint_every",  "checkpoint_dir"};
  for (const auto& [key, _] : j.items()) {
    if (!kKeys.contains(key)) throw Error(ErrorKind::Config, "unknown config key '" + key + "'");
  }
  TrainConfig c = base;
  try {
    if (j.contains("regime")) c.regime = parse_regime(j["regime"].get<std::string>());
    c.adversarial_iters = j.value("adversarial_iters", c.adversarial_iters);
    c.pose_iters = j.value("pose_iters", c.pose_iters);
    c.total_iters = j.value("total_iters", c.total_iters);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.beta = j.value("beta", c.beta);
    c.seed = j.value("seed", c.seed);
    if (j.contains("test_sequence")) {
      const auto& t = j["test_sequence"];
      c.test_sequence = t.is_null() ? std::string{} : t.get<std::string>();
    }
    c.gp_lambda = j.value("gp_lambda", c.gp_lambda);
    c.critic_steps = j.value("critic_steps", c.critic_steps);
    c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
    c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
    if (j.contains("loss")) c.loss = parse_loss(j["loss"].get<std::string>());
    c.base_channels = j.value("base_channels", c.base_channels);
    if (j.contains("latent")) {
      const std::string l = j["latent"].get<std::string>();
      if (l == "uniform") c.latent = LatentDistribution::Uniform;
      else if (l == "normal") c.latent = LatentDistribution::Normal;
      else throw Error(ErrorKind::Config, "unknown latent distribution '" + l + "'");
    }
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    if (j.contains("checkpoint_dir")) c.checkpoint_dir = j["checkpoint_dir"].get<std::string>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Config, std::string("bad config value: ") + e.what());
  }
  c.validate();
  return c;
}

TrainResult train(const TrainConfig& config, const Dataset& dataset, std::optional<Model> initial,
                  const TrainObserver& observer) {
  config.validate();
  check_hold_out(config, dataset);
  if (dataset.samples.empty()) throw Error(ErrorKind::EmptyDataset, "training dataset is empty");
  if (config.loss == SupervisedLoss::Reprojection) {
    if (!dataset.intrinsics) {
      throw Error(ErrorKind::Config, "reprojection loss needs camera intrinsics in the dataset");
    }
    for (const auto& s : dataset.samples) {
      if (!s.points || s.points->empty()) {
        throw Error(ErrorKind::Config, "reprojection loss needs a point set for every sample");
      }
    }
  }

  Model model = initial ? std::move(*initial) : Model(config.model_options(), config.seed);
  if (!(model.options == config.model_options())) {
    throw Error(ErrorKind::Config, "initial model architecture does not match the regime");
  }
  if (config.planned_iterations() == 0) {
    model.eval();
    return {std::move(model), {}};
  }
  Trainer trainer(config, dataset, model, observer);
  auto rows = trainer.run();
  return {std::move(model), std::move(rows)};
}

void write_training_log(std::span<const TrainLogRow> rows, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot write training log " + path.string());
  out << std::setprecision(9);
  out << "iteration,phase,loss_x,loss_q,loss_beta,loss_p,critic,generator,gradient_penalty,"
         "excluded_points,wall_seconds\n";
  const auto cell = [&](double v) -> std::ostream& {
    if (!std::isnan(v)) out << v;
    return out;
  };
  for (const auto& r : rows) {
    out << r.iteration << ',' << r.phase << ',';
    cell(r.loss_x) << ',';
    cell(r.loss_q) << ',';
    cell(r.loss_beta) << ',';
    cell(r.loss_p) << ',';
    cell(r.critic) << ',';
    cell(r.generator) << ',';
    cell(r.gradient_penalty) << ',';
    out << r.excluded_points << ',' << r.wall_seconds << '\n';
  }
}

torch::Tensor pair_tensor(const Frame& first, const Frame& second) {
  for (const Frame* f : {&first, &second}) {
    if (f->image.width != kFrameWidth || f->image.height != kFrameHeight) {
      throw Error(ErrorKind::Dimension, "frames must be 128x96");
    }
  }
  auto t = torch::empty({kPairChannels, kFrameHeight, kFrameWidth}, torch::kFloat32);
  float* dst = t.data_ptr<float>();
  const std::size_t plane = static_cast<std::size_t>(kFrameHeight) * kFrameWidth;
  for (std::size_t i = 0; i < plane; ++i) {
    dst[i] = static_cast<float>(first.image.pixels[i] / 127.5 - 1.0);
    dst[plane + i] = static_cast<float>(second.image.pixels[i] / 127.5 - 1.0);
  }
  return t;
}

torch::Tensor batch_tensor(std::span<const TrainingSample> samples,
                           std::span<const std::size_t> indices) {
  std::vector<torch::Tensor> items;
  items.reserve(indices.size());
  for (std::size_t i : indices) items.push_back(pair_tensor(*samples[i].first, *samples[i].second));
  return torch::stack(items);
}

MotionLabel PoseEstimate::label() const {
  MotionLabel l;
  l.x = x_hat;
  const double n = q_hat.norm();
  l.q = n > 0.0 ? canonicalize_quaternion(q_hat / n) : Vec4(1.0, 0.0, 0.0, 0.0);
  return l;
}

InferenceResult infer(Model& model, std::span<const FramePair> pairs) {
  model.eval();
  torch::NoGradGuard guard;
  InferenceResult out;
  out.predictions.reserve(pairs.size());
  out.milliseconds.reserve(pairs.size());
  for (const FramePair& p : pairs) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto input = pair_tensor(*p.first, *p.second).unsqueeze(0);
    const auto pred = model.critic->pose(model.critic->features(input));
    const auto x = pred.x_hat.to(torch::kFloat64).contiguous();
    const auto q = pred.q_hat.to(torch::kFloat64).contiguous();
    const auto t1 = std::chrono::steady_clock::now();
    PoseEstimate e;
    for (int c = 0; c < 3; ++c) e.x_hat[c] = x[0][c].item<double>();
    for (int c = 0; c < 4; ++c) e.q_hat[c] = q[0][c].item<double>();
    out.predictions.push_back(e);
    out.milliseconds.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  return out;
}

InferenceResult infer(const std::filesystem::path& checkpoint, std::span<const FramePair> pairs,
                      const std::optional<ModelOptions>& expected) {
  auto loaded = load_checkpoint(checkpoint, expected);
  return infer(loaded.model, pairs);
}

}  // namespace advo

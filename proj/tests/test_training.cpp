#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "support/doctest_torch.hpp"

#include "advo/error.hpp"
#include "advo/training.hpp"
#include "support/synthetic.hpp"

#include <cmath>
#include <fstream>

using namespace advo;
namespace fs = std::filesystem;

namespace {

TrainConfig tiny(Regime regime) {
  TrainConfig c;
  c.regime = regime;
  c.adversarial_iters = 0;
  c.pose_iters = 0;
  c.total_iters = 0;
  c.batch_size = 4;
  c.base_channels = 8;
  c.critic_steps = 2;
  c.seed = 3;
  return c;
}

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::Usage;
}

bool same_state(const Model& a, const Model& b, const std::string& prefix) {
  const auto sa = named_state(a), sb = named_state(b);
  for (std::size_t i = 0; i < sa.size(); ++i) {
    if (sa[i].name.rfind(prefix, 0) != 0) continue;
    if (!torch::equal(sa[i].tensor, sb[i].tensor)) return false;
  }
  return true;
}

Dataset with_points(Dataset d) {
  d.intrinsics = advo::testing::kitti_intrinsics().cropped_and_scaled(370, 0, 0.256, 96.0 / 375.0);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> xy(-5, 5), z(5, 30);
  for (auto& s : d.samples) {
    PointSet p;
    for (int i = 0; i < 20; ++i) p.points.emplace_back(xy(rng), xy(rng) / 5, z(rng));
    s.points = p;
  }
  return d;
}

}  // namespace

TEST_CASE("defaults match the documented schedule") {
  const TrainConfig c;
  CHECK(c.batch_size == 100);
  CHECK(c.learning_rate == 1e-4);
  CHECK(c.beta == 100.0);
  CHECK(c.adversarial_iters == 10000);
  CHECK(c.pose_iters == 40000);
  CHECK(c.planned_iterations() == 50000);
  CHECK(c.regime == Regime::SemiSupervised);
  CHECK(c.model_options().score_head);
  TrainConfig vo = c;
  vo.regime = Regime::OnlyVo;
  CHECK(vo.planned_iterations() == 50000);
  CHECK_FALSE(vo.model_options().score_head);
  CHECK_FALSE(vo.model_options().generator);
}

TEST_CASE("config json") {
  const TrainConfig c = TrainConfig::from_json(nlohmann::json::parse(
      R"({"regime": "only_vo", "total_iters": 12, "loss": "reprojection", "latent": "normal"})"));
  CHECK(c.regime == Regime::OnlyVo);
  CHECK(c.total_iters == 12);
  CHECK(c.loss == SupervisedLoss::Reprojection);
  CHECK(c.latent == LatentDistribution::Normal);
  CHECK(c.batch_size == 100);
  const TrainConfig back = TrainConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());

  CHECK(kind_of([] { TrainConfig::from_json(nlohmann::json::parse(R"({"batchsize": 3})")); }) == ErrorKind::Config);
  CHECK(kind_of([] { TrainConfig::from_json(nlohmann::json::parse(R"({"regime": "gan"})")); }) == ErrorKind::Config);
  CHECK(kind_of([] { TrainConfig::from_json(nlohmann::json::parse(R"({"batch_size": "x"})")); }) == ErrorKind::Config);
  CHECK(kind_of([] { TrainConfig::from_json(nlohmann::json::parse("[1]")); }) == ErrorKind::Config);
  TrainConfig neg;
  neg.learning_rate = 0;
  CHECK(kind_of([&] { neg.validate(); }) == ErrorKind::Config);
  CHECK(parse_regime(to_string(Regime::Simultaneous)) == Regime::Simultaneous);
}

TEST_CASE("zero iterations returns the initial state and an empty log") {
  const Dataset d = advo::testing::cue_dataset(8, 1);
  const TrainConfig c = tiny(Regime::SemiSupervised);
  Model init(c.model_options(), 5);
  const Model copy = init.clone();
  const TrainResult r = train(c, d, std::move(init));
  CHECK(r.log.empty());
  CHECK(same_state(r.model, copy, ""));
}

TEST_CASE("semi-supervised log layout") {
  const Dataset d = advo::testing::cue_dataset(12, 1);
  TrainConfig c = tiny(Regime::SemiSupervised);
  c.adversarial_iters = 3;
  c.pose_iters = 4;
  std::size_t observed = 0;
  const TrainResult r = train(c, d, std::nullopt, [&](const TrainLogRow&) { ++observed; });
  REQUIRE(r.log.size() == 7);
  CHECK(observed == 7);
  for (std::size_t i = 0; i < r.log.size(); ++i) {
    const auto& row = r.log[i];
    CHECK(row.iteration == static_cast<std::int64_t>(i));
    CHECK(row.phase == (i < 3 ? "adversarial" : "pose"));
    if (i < 3) {
      CHECK(std::isfinite(row.critic));
      CHECK(std::isfinite(row.generator));
      CHECK(std::isfinite(row.gradient_penalty));
      CHECK(row.fake_min >= -1.0);
      CHECK(row.fake_max <= 1.0);
      CHECK(std::isnan(row.loss_beta));
    } else {
      CHECK(std::isfinite(row.loss_beta));
      CHECK(row.loss_beta == doctest::Approx(row.loss_x + 100.0 * row.loss_q).epsilon(1e-5));
      CHECK(std::isnan(row.critic));
      CHECK(std::isnan(row.loss_p));
    }
  }
}

TEST_CASE("simultaneous rows carry both objectives") {
  const Dataset d = advo::testing::cue_dataset(12, 1);
  TrainConfig c = tiny(Regime::Simultaneous);
  c.total_iters = 2;
  const TrainResult r = train(c, d);
  REQUIRE(r.log.size() == 2);
  for (const auto& row : r.log) {
    CHECK(row.phase == "simultaneous");
    CHECK(std::isfinite(row.critic));
    CHECK(std::isfinite(row.loss_beta));
  }
}

TEST_CASE("pose phase leaves the generator and the score head untouched") {
  const Dataset d = advo::testing::cue_dataset(12, 1);
  TrainConfig c = tiny(Regime::SemiSupervised);
  c.pose_iters = 3;
  Model init(c.model_options(), 8);
  const Model copy = init.clone();
  const TrainResult r = train(c, d, std::move(init));
  CHECK(same_state(r.model, copy, "generator."));
  CHECK(same_state(r.model, copy, "critic.score_head"));
  CHECK_FALSE(same_state(r.model, copy, "critic.trunk"));
  CHECK_FALSE(same_state(r.model, copy, "critic.pose_head"));
}

TEST_CASE("only_vo is deterministic under a fixed seed") {
  const Dataset d = advo::testing::cue_dataset(20, 4);
  TrainConfig c = tiny(Regime::OnlyVo);
  c.total_iters = 6;
  const auto a = train(c, d), b = train(c, d);
  REQUIRE(a.log.size() == 6);
  for (std::size_t i = 0; i < a.log.size(); ++i)
    CHECK(b.log[i].loss_beta == doctest::Approx(a.log[i].loss_beta).epsilon(1e-6));
  c.seed = 4;
  const auto other = train(c, d);
  CHECK(other.log[0].loss_beta != a.log[0].loss_beta);
}

TEST_CASE("training refuses data from the held-out sequence") {
  Dataset d = advo::testing::cue_dataset(8, 1, "03");
  TrainConfig c = tiny(Regime::OnlyVo);
  c.total_iters = 1;
  c.test_sequence = "03";
  CHECK(kind_of([&] { train(c, d); }) == ErrorKind::HoldOut);

  // the mirrored twin is caught by provenance as well
  Dataset twin = advo::testing::cue_dataset(8, 2, "05");
  auto m = std::make_shared<Frame>(mirror_image(*d.samples[0].first));
  TrainingSample s = d.samples[0];
  s.first = m;
  s.second = m;
  twin.samples.push_back(s);
  CHECK(kind_of([&] { train(c, twin); }) == ErrorKind::HoldOut);
  CHECK_NOTHROW(train(c, twin.without_sequence("03")));
}

TEST_CASE("empty dataset and small-batch errors") {
  TrainConfig c = tiny(Regime::OnlyVo);
  c.total_iters = 1;
  CHECK(kind_of([&] { train(c, Dataset{}); }) == ErrorKind::EmptyDataset);
  c.batch_size = 50;
  CHECK(kind_of([&] { train(c, advo::testing::cue_dataset(8, 1)); }) == ErrorKind::EmptyDataset);
}

TEST_CASE("non-finite loss aborts with a diagnostic checkpoint") {
  const fs::path dir = advo::testing::temp_dir("nan");
  const Dataset d = advo::testing::cue_dataset(8, 1);
  TrainConfig c = tiny(Regime::OnlyVo);
  c.total_iters = 3;
  c.checkpoint_dir = dir;
  Model poisoned(c.model_options(), 1);
  {
    torch::NoGradGuard ng;
    poisoned.critic->pose_parameters().back().fill_(std::numeric_limits<float>::quiet_NaN());
  }
  CHECK(kind_of([&] { train(c, d, std::move(poisoned)); }) == ErrorKind::NonFinite);
  CHECK(fs::exists(dir / "diagnostic.pt"));
  CHECK(load_checkpoint(dir / "diagnostic.pt").metadata.at("diagnostic") == true);
  fs::remove_all(dir);
}

TEST_CASE("periodic checkpoints") {
  const fs::path dir = advo::testing::temp_dir("periodic");
  TrainConfig c = tiny(Regime::OnlyVo);
  c.total_iters = 4;
  c.checkpoint_every = 2;
  c.checkpoint_dir = dir;
  train(c, advo::testing::cue_dataset(8, 1));
  CHECK(fs::exists(dir / "checkpoint_2.pt"));
  CHECK(fs::exists(dir / "checkpoint_4.pt"));
  CHECK_FALSE(fs::exists(dir / "checkpoint_3.pt"));
  CHECK(load_checkpoint(dir / "checkpoint_4.pt").metadata.at("iteration") == 4);
  fs::remove_all(dir);
}

TEST_CASE("reprojection regime") {
  const Dataset d = with_points(advo::testing::cue_dataset(8, 1));
  TrainConfig c = tiny(Regime::OnlyVo);
  c.total_iters = 2;
  c.loss = SupervisedLoss::Reprojection;
  const auto r = train(c, d);
  REQUIRE(r.log.size() == 2);
  CHECK(std::isfinite(r.log[0].loss_p));
  CHECK(r.log[0].loss_p >= 0.0);

  Dataset no_points = advo::testing::cue_dataset(8, 1);
  CHECK(kind_of([&] { train(c, no_points); }) == ErrorKind::Config);
}

TEST_CASE("training log csv") {
  const fs::path dir = advo::testing::temp_dir("log");
  TrainLogRow row;
  row.iteration = 5;
  row.phase = "pose";
  row.loss_x = 1.5;
  row.critic = std::numeric_limits<double>::quiet_NaN();
  std::vector<TrainLogRow> rows{row};
  write_training_log(rows, dir / "log.csv");
  std::ifstream in(dir / "log.csv");
  std::string header, line;
  std::getline(in, header);
  std::getline(in, line);
  CHECK(header.rfind("iteration,phase,loss_x,", 0) == 0);
  CHECK(line.rfind("5,pose,1.5,", 0) == 0);
  CHECK(line.find("nan") == std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("pair tensor scaling") {
  Frame a, b;
  a.image = GrayImage(kFrameWidth, kFrameHeight, 0);
  b.image = GrayImage(kFrameWidth, kFrameHeight, 255);
  const auto t = pair_tensor(a, b);
  CHECK((t.sizes() == torch::IntArrayRef{2, 96, 128}));
  CHECK(t[0].max().item<float>() == -1.0f);
  CHECK(t[1].min().item<float>() == 1.0f);
  Frame small;
  small.image = GrayImage(10, 10);
  CHECK_THROWS_AS(pair_tensor(small, small), Error);
}

TEST_CASE("inference") {
  const fs::path dir = advo::testing::temp_dir("infer");
  const Dataset d = advo::testing::cue_dataset(6, 2);
  Model m(ModelOptions{8, false, false, LatentDistribution::Uniform}, 1);
  const auto pairs = d.pairs();
  const InferenceResult a = infer(m, pairs);
  const InferenceResult b = infer(m, pairs);
  REQUIRE(a.predictions.size() == 6);
  CHECK(a.milliseconds.size() == 6);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(a.predictions[i].x_hat == b.predictions[i].x_hat);
    CHECK(a.predictions[i].q_hat == b.predictions[i].q_hat);
    CHECK(a.milliseconds[i] >= 0.0);
    const MotionLabel l = a.predictions[i].label();
    CHECK(std::abs(l.q.norm() - 1.0) < 1e-12);
  }
  save_checkpoint(dir / "m.pt", m);
  const InferenceResult c = infer(dir / "m.pt", pairs);
  for (std::size_t i = 0; i < 6; ++i) CHECK(c.predictions[i].q_hat == a.predictions[i].q_hat);
  CHECK(kind_of([&] { infer(dir / "m.pt", pairs, ModelOptions{}); }) == ErrorKind::Checkpoint);
  fs::remove_all(dir);
}

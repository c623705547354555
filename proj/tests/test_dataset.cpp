#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "advo/dataset.hpp"
#include "advo/error.hpp"
#include "support/synthetic.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <set>

using namespace advo;
namespace fs = std::filesystem;

namespace {

FramePtr make_frame(std::uint8_t fill, const std::string& seq, int index, bool mirrored = false) {
  auto f = std::make_shared<Frame>();
  f->image = GrayImage(kFrameWidth, kFrameHeight, fill);
  f->sequence = seq;
  f->index = index;
  f->mirrored = mirrored;
  return f;
}

std::array<int, 256> histogram(const GrayImage& img) {
  std::array<int, 256> h{};
  for (auto p : img.pixels) ++h[p];
  return h;
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

}  // namespace

TEST_CASE("preprocess constant image") {
  const Frame f = preprocess_image(GrayImage(1241, 376, 77));
  CHECK(f.image.width == 128);
  CHECK(f.image.height == 96);
  CHECK(std::all_of(f.image.pixels.begin(), f.image.pixels.end(), [](auto p) { return p == 77; }));
}

TEST_CASE("preprocess keeps the center bright pixel near the output center") {
  GrayImage raw(1241, 376, 0);
  raw.at(188, 620) = 255;
  const Frame f = preprocess_image(raw);
  // crop offset (370, 0); center lands at col (250.5)*0.256-0.5, row (188.5)*0.256-0.5
  const double expect_col = 250.5 * 128.0 / 500.0 - 0.5;
  const double expect_row = 188.5 * 96.0 / 375.0 - 0.5;
  const auto it = std::max_element(f.image.pixels.begin(), f.image.pixels.end());
  REQUIRE(*it > 0);
  const auto idx = static_cast<int>(it - f.image.pixels.begin());
  const int row = idx / kFrameWidth, col = idx % kFrameWidth;
  CHECK(std::abs(row - expect_row) <= 1.0);
  CHECK(std::abs(col - expect_col) <= 1.0);
  CHECK(std::abs(row - 48) <= 1);
  CHECK(std::abs(col - 64) <= 1);
}

TEST_CASE("preprocess rejects undersized input naming the axis") {
  try {
    preprocess_image(GrayImage(499, 376));
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Dimension);
    CHECK(std::string(e.what()).find("width") != std::string::npos);
  }
  try {
    preprocess_image(GrayImage(1241, 374));
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Dimension);
    CHECK(std::string(e.what()).find("height") != std::string::npos);
  }
  CHECK_NOTHROW(preprocess_image(GrayImage(500, 375)));
}

TEST_CASE("preprocess is deterministic") {
  GrayImage raw(1241, 376);
  std::mt19937_64 rng(5);
  for (auto& p : raw.pixels) p = static_cast<std::uint8_t>(rng() & 0xff);
  CHECK(preprocess_image(raw).image == preprocess_image(raw).image);
}

TEST_CASE("mirror image") {
  Frame f;
  f.image = GrayImage(kFrameWidth, kFrameHeight, 0);
  for (int r = 0; r < kFrameHeight; ++r)
    for (int c = kFrameWidth / 2; c < kFrameWidth; ++c) f.image.at(r, c) = 255;
  const Frame m = mirror_image(f);
  CHECK(m.mirrored);
  for (int r = 0; r < kFrameHeight; ++r) {
    CHECK(m.image.at(r, 0) == 255);
    CHECK(m.image.at(r, kFrameWidth / 2 - 1) == 255);
    CHECK(m.image.at(r, kFrameWidth / 2) == 0);
    CHECK(m.image.at(r, kFrameWidth - 1) == 0);
  }

  std::mt19937_64 rng(9);
  for (auto& p : f.image.pixels) p = static_cast<std::uint8_t>(rng() & 0xff);
  const Frame once = mirror_image(f);
  const Frame twice = mirror_image(once);
  CHECK(twice.image == f.image);
  CHECK_FALSE(twice.mirrored);
  CHECK(histogram(once.image) == histogram(f.image));
  for (int c = 0; c < kFrameWidth; ++c) CHECK(once.image.at(7, c) == f.image.at(7, kFrameWidth - 1 - c));
}

TEST_CASE("build_pairs examples") {
  std::vector<FramePtr> two{make_frame(1, "s", 0), make_frame(2, "s", 1)};
  std::vector<Pose> same(2, Pose::identity());
  const auto one = build_pairs(two, same);
  REQUIRE(one.size() == 1);
  CHECK(one[0].label.x.norm() == 0.0);
  CHECK((one[0].label.q - Vec4(1, 0, 0, 0)).norm() == 0.0);

  std::vector<FramePtr> eleven;
  for (int i = 0; i < 11; ++i) eleven.push_back(make_frame(0, "s", i));
  const auto poses = advo::testing::drive_poses(11, 0.5);
  const auto ten = build_pairs(eleven, poses);
  REQUIRE(ten.size() == 10);
  for (std::size_t i = 0; i < ten.size(); ++i) {
    CHECK((ten[i].label.x - Vec3(0, 0, 0.5)).norm() < 1e-9);
    CHECK(ten[i].first == eleven[i]);
    CHECK(ten[i].second == eleven[i + 1]);
  }

  std::vector<Pose> short_poses(3);
  CHECK(kind_of([&] { build_pairs(eleven, short_poses); }) == ErrorKind::LengthMismatch);
  std::vector<FramePtr> single{make_frame(0, "s", 0)};
  std::vector<Pose> single_pose(1);
  CHECK_THROWS_AS(build_pairs(single, single_pose), Error);
}

TEST_CASE("labels match recomputed relative transforms, mirrored ones via the mirror map") {
  std::mt19937_64 rng(11);
  std::vector<Pose> poses;
  std::vector<FramePtr> frames, mirrored;
  for (int i = 0; i < 20; ++i) {
    poses.push_back(advo::testing::random_pose(rng, 3.0));
    frames.push_back(make_frame(0, "s", i));
    mirrored.push_back(make_frame(0, "s", i, true));
  }
  const auto plain = build_pairs(frames, poses);
  const auto flip = build_pairs(mirrored, poses);
  REQUIRE(plain.size() == flip.size());
  for (std::size_t i = 0; i < plain.size(); ++i) {
    const Mat4 oracle = poses[i].matrix().inverse() * poses[i + 1].matrix();
    CHECK((label_to_pose(plain[i].label).matrix() - oracle).cwiseAbs().maxCoeff() < 1e-9);
    const Pose m = mirror_transform(Pose::from_matrix(oracle));
    CHECK((label_to_pose(flip[i].label).matrix() - m.matrix()).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("batch iterator") {
  BatchIterator it(250, 100, 42);
  CHECK(it.batches_per_epoch() == 2);
  const auto e0 = it.epoch(0);
  REQUIRE(e0.size() == 2);
  std::set<std::size_t> seen;
  for (const auto& b : e0) {
    CHECK(b.size() == 100);
    for (auto i : b) {
      CHECK(i < 250);
      seen.insert(i);
    }
  }
  CHECK(seen.size() == 200);

  BatchIterator again(250, 100, 42);
  CHECK(again.epoch(0) == e0);
  CHECK(again.epoch(1) != e0);
  BatchIterator other(250, 100, 43);
  CHECK(other.epoch(0) != e0);

  // the stream walks epoch 0 then rolls into epoch 1
  CHECK(it.next() == e0[0]);
  CHECK(it.next() == e0[1]);
  CHECK(it.next() == it.epoch(1)[0]);

  CHECK(kind_of([] { BatchIterator(0, 10, 1); }) == ErrorKind::EmptyDataset);
  CHECK_THROWS_AS(BatchIterator(10, 0, 1), Error);
}

TEST_CASE("hold-out filtering by provenance") {
  Dataset d = advo::testing::cue_dataset(10, 1, "03");
  Dataset other = advo::testing::cue_dataset(10, 2, "05");
  d.samples.insert(d.samples.end(), other.samples.begin(), other.samples.end());
  // mirrored twin of 03
  for (std::size_t i = 0; i < 10; ++i) {
    TrainingSample s = d.samples[i];
    auto a = std::make_shared<Frame>(mirror_image(*s.first));
    auto b = std::make_shared<Frame>(mirror_image(*s.second));
    s.first = a;
    s.second = b;
    d.samples.push_back(s);
  }
  CHECK(d.sequences() == std::vector<std::string>{"03", "05"});
  const Dataset train = d.without_sequence("03");
  CHECK(train.size() == 10);
  for (const auto& s : train.samples) {
    CHECK(s.first->sequence != "03");
    CHECK(s.second->sequence != "03");
  }
  CHECK(d.only_sequence("03", true).size() == 20);
  CHECK(d.only_sequence("03", false).size() == 10);
}

TEST_CASE("png and pose file round trips") {
  const fs::path dir = advo::testing::temp_dir("dataset_io");
  GrayImage img(13, 7);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<std::uint8_t>(i * 3);
  write_png(dir / "a.png", img);
  CHECK(read_png(dir / "a.png") == img);

  std::mt19937_64 rng(4);
  std::vector<Pose> poses;
  for (int i = 0; i < 10; ++i) poses.push_back(advo::testing::random_pose(rng));
  write_kitti_poses(dir / "p.txt", poses);
  const auto back = read_kitti_poses(dir / "p.txt");
  REQUIRE(back.size() == poses.size());
  for (std::size_t i = 0; i < poses.size(); ++i)
    CHECK((back[i].matrix() - poses[i].matrix()).cwiseAbs().maxCoeff() < 1e-15);

  {
    std::ofstream bad(dir / "bad.txt");
    bad << "2 0 0 0 0 1 0 0 0 0 1 0\n";
  }
  CHECK(kind_of([&] { read_kitti_poses(dir / "bad.txt"); }) == ErrorKind::InvalidPose);
  CHECK(kind_of([&] { read_png(dir / "missing.png"); }) == ErrorKind::Io);
  fs::remove_all(dir);
}

TEST_CASE("preprocess_kitti writes a loadable dataset") {
  const fs::path root = advo::testing::temp_dir("kitti_src");
  const fs::path out = advo::testing::temp_dir("kitti_out") / "data";
  advo::testing::write_kitti_sequence(root, "00", 6, 1);
  advo::testing::write_kitti_sequence(root, "01", 4, 2);

  PreprocessOptions opt;
  opt.kitti_root = root;
  opt.out = out;
  opt.sequences = {"00", "01"};
  opt.mirror = true;
  const auto summary = preprocess_kitti(opt);
  CHECK(summary.pairs == 2 * ((6 - 1) + (4 - 1)));
  CHECK(summary.frames == 2 * (6 + 4));

  const Dataset d = load_dataset(out);
  CHECK(d.size() == summary.pairs);
  REQUIRE(d.intrinsics.has_value());
  const auto raw_k = read_kitti_calib(root / "sequences" / "00" / "calib.txt");
  // crop offset 370, scale 0.256 horizontally and 96/375 vertically
  CHECK(d.intrinsics->fx == doctest::Approx(raw_k.fx * 128.0 / 500.0));
  CHECK(d.intrinsics->fy == doctest::Approx(raw_k.fy * 96.0 / 375.0));
  CHECK(d.intrinsics->cx == doctest::Approx((raw_k.cx - 370 + 0.5) * 0.256 - 0.5));
  CHECK(d.intrinsics->cy == doctest::Approx((raw_k.cy + 0.5) * 96.0 / 375.0 - 0.5));

  std::size_t mirrored = 0;
  for (const auto& s : d.samples) mirrored += s.first->mirrored ? 1 : 0;
  CHECK(mirrored * 2 == d.size());
  CHECK(fs::exists(out / "frames" / frame_file_name("00", 0, true)));

  std::vector<FramePtr> frames;
  const auto poses = read_kitti_poses(root / "poses" / "00.txt");
  for (const auto& s : d.only_sequence("00", false).samples) {
    const Mat4 oracle = poses[s.first->index].matrix().inverse() * poses[s.second->index].matrix();
    CHECK((label_to_pose(s.label).matrix() - oracle).cwiseAbs().maxCoeff() < 1e-6);
  }

  PreprocessOptions empty = opt;
  empty.sequences.clear();
  empty.out = out.parent_path() / "empty";
  CHECK(kind_of([&] { preprocess_kitti(empty); }) == ErrorKind::Usage);
  PreprocessOptions missing = opt;
  missing.sequences = {"07"};
  missing.out = out.parent_path() / "missing";
  CHECK_THROWS_AS(preprocess_kitti(missing), Error);
  CHECK_FALSE(fs::exists(missing.out));

  fs::remove_all(root);
  fs::remove_all(out.parent_path());
}

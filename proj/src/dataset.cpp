#include "advo/dataset.hpp"

#include "advo/error.hpp"
#include "advo/log.hpp"
#include "advo/triangulation.hpp"

#include <json.hpp>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace advo {

namespace {

struct Tap {
  int index;
  double weight;
};

// Triangle-filter taps for one output coordinate; the support widens with the
// downscale factor so every source pixel contributes.
std::vector<std::vector<Tap>> resample_taps(int in_size, int out_size) {
  const double scale = static_cast<double>(in_size) / out_size;
  const double support = std::max(scale, 1.0);
  std::vector<std::vector<Tap>> taps(out_size);
  for (int o = 0; o < out_size; ++o) {
    const double center = (o + 0.5) * scale;
    const int lo = std::max(0, static_cast<int>(std::floor(center - support)));
    const int hi = std::min(in_size - 1, static_cast<int>(std::ceil(center + support)));
    double total = 0.0;
    for (int i = lo; i <= hi; ++i) {
      const double w = 1.0 - std::abs((i + 0.5 - center) / support);
      if (w > 0.0) {
        taps[o].push_back({i, w});
        total += w;
      }
    }
    for (Tap& t : taps[o]) t.weight /= total;
  }
  return taps;
}

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

std::string mirror_tag(bool mirrored) { return mirrored ? "m" : "o"; }

}  // namespace

Frame preprocess_image(const GrayImage& raw, std::string sequence, int index) {
  if (raw.width < kCropWidth) {
    throw Error(ErrorKind::Dimension, "image width " + std::to_string(raw.width) +
                                          " is smaller than the crop width " +
                                          std::to_string(kCropWidth));
  }
  if (raw.height < kCropHeight) {
    throw Error(ErrorKind::Dimension, "image height " + std::to_string(raw.height) +
                                          " is smaller than the crop height " +
                                          std::to_string(kCropHeight));
  }
  const int ox = (raw.width - kCropWidth) / 2;
  const int oy = (raw.height - kCropHeight) / 2;

  static const auto kTapsX = resample_taps(kCropWidth, kFrameWidth);
  static const auto kTapsY = resample_taps(kCropHeight, kFrameHeight);

  std::vector<double> rows(static_cast<std::size_t>(kCropHeight) * kFrameWidth);
  for (int r = 0; r < kCropHeight; ++r) {
    for (int c = 0; c < kFrameWidth; ++c) {
      double acc = 0.0;
      for (const Tap& t : kTapsX[c]) acc += t.weight * raw.at(oy + r, ox + t.index);
      rows[static_cast<std::size_t>(r) * kFrameWidth + c] = acc;
    }
  }

  Frame out;
  out.image = GrayImage(kFrameWidth, kFrameHeight);
  out.sequence = std::move(sequence);
  out.index = index;
  for (int r = 0; r < kFrameHeight; ++r) {
    for (int c = 0; c < kFrameWidth; ++c) {
      double acc = 0.0;
      for (const Tap& t : kTapsY[r]) acc += t.weight * rows[static_cast<std::size_t>(t.index) * kFrameWidth + c];
      out.image.at(r, c) = to_byte(acc);
    }
  }
  return out;
}

Frame mirror_image(const Frame& f) {
  Frame out = f;
  for (int r = 0; r < f.image.height; ++r) {
    for (int c = 0; c < f.image.width; ++c) {
      out.image.at(r, c) = f.image.at(r, f.image.width - 1 - c);
    }
  }
  out.mirrored = !f.mirrored;
  return out;
}

std::vector<TrainingSample> build_pairs(std::span<const FramePtr> frames,
                                        std::span<const Pose> poses, int stride) {
  if (frames.size() != poses.size()) {
    throw Error(ErrorKind::LengthMismatch,
                "build_pairs: " + std::to_string(frames.size()) + " frames but " +
                    std::to_string(poses.size()) + " poses");
  }
  if (frames.size() < 2) {
    throw Error(ErrorKind::LengthMismatch, "build_pairs needs at least two frames");
  }
  if (stride < 1) throw Error(ErrorKind::Config, "pair stride must be >= 1");

  std::vector<TrainingSample> out;
  for (std::size_t i = 0; i + stride < frames.size(); ++i) {
    const FramePtr& a = frames[i];
    const FramePtr& b = frames[i + stride];
    if (a->sequence != b->sequence || a->mirrored != b->mirrored) {
      throw Error(ErrorKind::Config, "build_pairs: frames come from different sequences");
    }
    Pose rel = relative_transform(poses[i], poses[i + stride], kFilePoseTolerance);
    if (a->mirrored) rel = mirror_transform(rel);
    out.push_back(TrainingSample{a, b, pose_to_label(rel), std::nullopt});
  }
  return out;
}

BatchIterator::BatchIterator(std::size_t dataset_size, std::size_t batch_size,
                             std::uint64_t seed)
    : size_(dataset_size), batch_(batch_size), seed_(seed) {
  if (batch_size < 1) throw Error(ErrorKind::Config, "batch size must be >= 1");
  if (dataset_size == 0) throw Error(ErrorKind::EmptyDataset, "dataset is empty");
  if (dataset_size < batch_size) {
    throw Error(ErrorKind::EmptyDataset, "dataset of " + std::to_string(dataset_size) +
                                             " samples cannot fill one batch of " +
                                             std::to_string(batch_size));
  }
}

std::vector<std::vector<std::size_t>> BatchIterator::epoch(std::uint64_t epoch_index) const {
  std::vector<std::size_t> order(size_);
  for (std::size_t i = 0; i < size_; ++i) order[i] = i;
  std::seed_seq seq{static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32),
                    static_cast<std::uint32_t>(epoch_index),
                    static_cast<std::uint32_t>(epoch_index >> 32)};
  std::mt19937_64 rng(seq);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<std::vector<std::size_t>> batches(batches_per_epoch());
  for (std::size_t b = 0; b < batches.size(); ++b) {
    batches[b].assign(order.begin() + b * batch_, order.begin() + (b + 1) * batch_);
  }
  return batches;
}

std::vector<std::size_t> BatchIterator::next() {
  if (cursor_ >= current_.size()) {
    current_ = epoch(epoch_index_++);
    cursor_ = 0;
  }
  return current_[cursor_++];
}

std::vector<std::string> Dataset::sequences() const {
  std::set<std::string> seen;
  for (const auto& s : samples) seen.insert(s.first->sequence);
  return {seen.begin(), seen.end()};
}

Dataset Dataset::without_sequence(const std::string& sequence) const {
  Dataset out;
  out.intrinsics = intrinsics;
  for (const auto& s : samples) {
    if (s.first->sequence != sequence) out.samples.push_back(s);
  }
  return out;
}

Dataset Dataset::only_sequence(const std::string& sequence, bool include_mirrored) const {
  Dataset out;
  out.intrinsics = intrinsics;
  for (const auto& s : samples) {
    if (s.first->sequence == sequence && (include_mirrored || !s.first->mirrored)) {
      out.samples.push_back(s);
    }
  }
  return out;
}

std::vector<FramePair> Dataset::pairs() const {
  std::vector<FramePair> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back({s.first, s.second});
  return out;
}

GrayImage read_png(const fs::path& path) {
  const cv::Mat m = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  if (m.empty()) throw Error(ErrorKind::Io, "cannot read image " + path.string());
  GrayImage img(m.cols, m.rows);
  for (int r = 0; r < m.rows; ++r) {
    std::copy_n(m.ptr<std::uint8_t>(r), m.cols, img.pixels.begin() + static_cast<std::ptrdiff_t>(r) * m.cols);
  }
  return img;
}

void write_png(const fs::path& path, const GrayImage& image) {
  cv::Mat m(image.height, image.width, CV_8UC1, const_cast<std::uint8_t*>(image.pixels.data()));
  if (!cv::imwrite(path.string(), m)) {
    throw Error(ErrorKind::Io, "cannot write image " + path.string());
  }
}

std::vector<Pose> read_kitti_poses(const fs::path& path, double tol) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open pose file " + path.string());
  std::vector<Pose> poses;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    Mat4 m = Mat4::Identity();
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 4; ++c) {
        if (!(ls >> m(r, c))) {
          throw Error(ErrorKind::Io, path.string() + ":" + std::to_string(line_no) +
                                         ": expected 12 numbers");
        }
      }
    }
    Pose p = Pose::from_matrix(m);
    try {
      validate_pose(p, tol);
    } catch (const Error& e) {
      throw Error(ErrorKind::InvalidPose,
                  path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    poses.push_back(p);
  }
  return poses;
}

void write_kitti_poses(const fs::path& path, std::span<const Pose> poses) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot write pose file " + path.string());
  out << std::setprecision(17);
  for (const Pose& p : poses) {
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) out << p.rotation(r, c) << ' ';
      out << p.translation[r] << (r == 2 ? "\n" : " ");
    }
  }
  if (!out) throw Error(ErrorKind::Io, "failed writing " + path.string());
}

CameraIntrinsics read_kitti_calib(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open calibration file " + path.string());
  std::map<std::string, std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string key;
    if (!(ls >> key)) continue;
    if (!key.empty() && key.back() == ':') key.pop_back();
    std::vector<double> v;
    double x;
    while (ls >> x) v.push_back(x);
    rows[key] = std::move(v);
  }
  const auto p0 = rows.find("P0");
  if (p0 == rows.end() || p0->second.size() != 12) {
    throw Error(ErrorKind::Io, path.string() + ": missing 3x4 P0 matrix");
  }
  CameraIntrinsics k;
  k.fx = p0->second[0];
  k.cx = p0->second[2];
  k.fy = p0->second[5];
  k.cy = p0->second[6];
  const auto p1 = rows.find("P1");
  if (p1 != rows.end() && p1->second.size() == 12 && p1->second[0] != 0.0) {
    k.baseline = -p1->second[3] / p1->second[0];
  }
  k.validate();
  return k;
}

std::string frame_file_name(const std::string& sequence, int index, bool mirrored) {
  std::ostringstream os;
  os << sequence << '_' << std::setw(6) << std::setfill('0') << index << '_'
     << mirror_tag(mirrored) << ".png";
  return os.str();
}

namespace {

json label_json(const MotionLabel& l) {
  return {{"x", {l.x[0], l.x[1], l.x[2]}}, {"q", {l.q[0], l.q[1], l.q[2], l.q[3]}}};
}

void run_preprocess(const PreprocessOptions& opt, PreprocessSummary& summary) {
  fs::create_directories(opt.out / "frames");
  std::ofstream index(opt.out / "index.jsonl");
  if (!index) throw Error(ErrorKind::Io, "cannot write " + (opt.out / "index.jsonl").string());
  std::ofstream points_out;
  if (opt.correspondences) {
    points_out.open(opt.out / "points.jsonl");
    if (!points_out) throw Error(ErrorKind::Io, "cannot write points.jsonl");
  }
  std::optional<CameraIntrinsics> shared_k;

  for (const std::string& seq : opt.sequences) {
    const fs::path seq_dir = opt.kitti_root / "sequences" / seq;
    const fs::path pose_file = opt.kitti_root / "poses" / (seq + ".txt");
    if (!fs::is_directory(seq_dir / "image_0")) {
      throw Error(ErrorKind::Io, "sequence " + seq + ": missing " + (seq_dir / "image_0").string());
    }
    if (!fs::exists(pose_file)) {
      throw Error(ErrorKind::Io, "sequence " + seq + ": missing poses " + pose_file.string());
    }
    const std::vector<Pose> poses = read_kitti_poses(pose_file);

    std::optional<CameraIntrinsics> raw_k;
    if (fs::exists(seq_dir / "calib.txt")) raw_k = read_kitti_calib(seq_dir / "calib.txt");

    std::vector<FramePtr> original;
    int raw_w = 0, raw_h = 0;
    for (std::size_t i = 0; i < poses.size(); ++i) {
      std::ostringstream name;
      name << std::setw(6) << std::setfill('0') << i << ".png";
      const GrayImage raw = read_png(seq_dir / "image_0" / name.str());
      raw_w = raw.width;
      raw_h = raw.height;
      original.push_back(std::make_shared<Frame>(preprocess_image(raw, seq, static_cast<int>(i))));
    }
    if (raw_k && !shared_k) {
      shared_k = raw_k->cropped_and_scaled((raw_w - kCropWidth) / 2, (raw_h - kCropHeight) / 2,
                                           static_cast<double>(kFrameWidth) / kCropWidth,
                                           static_cast<double>(kFrameHeight) / kCropHeight);
    }

    std::optional<FileCorrespondenceProvider> matches;
    if (opt.correspondences) {
      if (!raw_k || !raw_k->baseline) {
        throw Error(ErrorKind::Io, "sequence " + seq + ": calib.txt with P1 is required for points");
      }
      matches.emplace(*opt.correspondences / (seq + ".jsonl"));
    }

    std::vector<std::vector<FramePtr>> variants{original};
    if (opt.mirror) {
      std::vector<FramePtr> mirrored;
      for (const FramePtr& f : original) mirrored.push_back(std::make_shared<Frame>(mirror_image(*f)));
      variants.push_back(std::move(mirrored));
    }

    for (const auto& frames : variants) {
      for (const FramePtr& f : frames) {
        write_png(opt.out / "frames" / frame_file_name(f->sequence, f->index, f->mirrored), f->image);
        ++summary.frames;
      }
      for (const TrainingSample& s : build_pairs(frames, poses, opt.stride)) {
        json rec = label_json(s.label);
        rec["a"] = "frames/" + frame_file_name(seq, s.first->index, s.first->mirrored);
        rec["b"] = "frames/" + frame_file_name(seq, s.second->index, s.second->mirrored);
        rec["seq"] = seq;
        rec["mirrored"] = s.first->mirrored;
        index << rec.dump() << '\n';
        ++summary.pairs;
      }
      if (matches) {
        for (const FramePtr& f : frames) {
          const auto corr = matches->correspondences(f->index);
          if (corr.empty()) continue;
          PointSet g;
          try {
            g = build_point_set(corr, *raw_k, *raw_k->baseline, opt.max_points);
          } catch (const Error& e) {
            if (e.kind() != ErrorKind::EmptyPointSet) throw;
            continue;
          }
          json pts = json::array();
          for (const Vec3& p : g.points) {
            const Vec3 q = f->mirrored ? Vec3(mirror_matrix() * p) : p;
            pts.push_back({q[0], q[1], q[2]});
          }
          points_out << json{{"frame", "frames/" + frame_file_name(seq, f->index, f->mirrored)},
                             {"points", pts}}
                            .dump()
                     << '\n';
          ++summary.point_sets;
        }
      }
    }
  }

  if (shared_k) {
    std::ofstream kf(opt.out / "intrinsics.json");
    json kj{{"fx", shared_k->fx}, {"fy", shared_k->fy}, {"cx", shared_k->cx}, {"cy", shared_k->cy}};
    kf << kj.dump(2) << '\n';
  }
  if (!index) throw Error(ErrorKind::Io, "failed writing index.jsonl");
}

}  // namespace

PreprocessSummary preprocess_kitti(const PreprocessOptions& opt) {
  if (opt.sequences.empty()) throw Error(ErrorKind::Usage, "no sequences requested");
  const bool created = !fs::exists(opt.out);
  PreprocessSummary summary;
  try {
    run_preprocess(opt, summary);
  } catch (...) {
    std::error_code ec;
    if (created) {
      fs::remove_all(opt.out, ec);
    } else {
      fs::remove_all(opt.out / "frames", ec);
      fs::remove(opt.out / "index.jsonl", ec);
      fs::remove(opt.out / "points.jsonl", ec);
      fs::remove(opt.out / "intrinsics.json", ec);
    }
    throw;
  }
  return summary;
}

Dataset load_dataset(const fs::path& dir) {
  std::ifstream in(dir / "index.jsonl");
  if (!in) throw Error(ErrorKind::Io, "cannot open " + (dir / "index.jsonl").string());

  std::map<std::string, FramePtr> cache;
  const auto load_frame = [&](const std::string& rel, const std::string& seq, bool mirrored) {
    auto it = cache.find(rel);
    if (it != cache.end()) return it->second;
    auto f = std::make_shared<Frame>();
    f->image = read_png(dir / rel);
    if (f->image.width != kFrameWidth || f->image.height != kFrameHeight) {
      throw Error(ErrorKind::Dimension, rel + ": expected a 128x96 frame");
    }
    f->sequence = seq;
    f->mirrored = mirrored;
    // <seq>_<index>_<o|m>.png
    const std::string stem = fs::path(rel).stem().string();
    const auto last = stem.rfind('_');
    const auto prev = stem.rfind('_', last - 1);
    if (last != std::string::npos && prev != std::string::npos) {
      f->index = std::stoi(stem.substr(prev + 1, last - prev - 1));
    }
    cache.emplace(rel, f);
    return FramePtr(f);
  };

  Dataset ds;
  std::map<std::string, std::size_t> by_second;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json rec = json::parse(line);
      const std::string seq = rec.at("seq").get<std::string>();
      const bool mirrored = rec.at("mirrored").get<bool>();
      TrainingSample s;
      s.first = load_frame(rec.at("a").get<std::string>(), seq, mirrored);
      s.second = load_frame(rec.at("b").get<std::string>(), seq, mirrored);
      const auto& x = rec.at("x");
      const auto& q = rec.at("q");
      if (x.size() != 3 || q.size() != 4) throw Error(ErrorKind::Io, "bad label arity");
      s.label.x = Vec3(x[0].get<double>(), x[1].get<double>(), x[2].get<double>());
      s.label.q = Vec4(q[0].get<double>(), q[1].get<double>(), q[2].get<double>(), q[3].get<double>());
      ds.samples.push_back(std::move(s));
    } catch (const json::exception& e) {
      throw Error(ErrorKind::Io, "index.jsonl:" + std::to_string(line_no) + ": " + e.what());
    }
  }

  if (fs::exists(dir / "intrinsics.json")) {
    std::ifstream kf(dir / "intrinsics.json");
    const json kj = json::parse(kf);
    CameraIntrinsics k;
    k.fx = kj.at("fx");
    k.fy = kj.at("fy");
    k.cx = kj.at("cx");
    k.cy = kj.at("cy");
    ds.intrinsics = k;
  }

  if (fs::exists(dir / "points.jsonl")) {
    std::map<std::string, PointSet> points;
    std::ifstream pf(dir / "points.jsonl");
    while (std::getline(pf, line)) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      const json rec = json::parse(line);
      PointSet g;
      for (const auto& p : rec.at("points")) {
        g.points.emplace_back(p[0].get<double>(), p[1].get<double>(), p[2].get<double>());
      }
      points[rec.at("frame").get<std::string>()] = std::move(g);
    }
    for (TrainingSample& s : ds.samples) {
      const auto it = points.find(
          "frames/" + frame_file_name(s.second->sequence, s.second->index, s.second->mirrored));
      if (it != points.end()) s.points = it->second;
    }
  }
  return ds;
}

}  // namespace advo

#include "ffield/scene_io.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "ffield/binary_io.hpp"

namespace ffield {
namespace fs = std::filesystem;

namespace {

constexpr char kFeatureMagic[4] = {'F', 'T', 'E', 'N'};

std::string ReadText(const std::string& path) {
  std::ifstream in(path);
  if (!in) Fail(ErrorCode::kIo, "cannot open " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void WriteText(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) Fail(ErrorCode::kIo, "cannot write " + path);
  out << text;
}

std::vector<double> ParseReals(const std::string& text, const std::string& what) {
  std::istringstream is(text);
  std::vector<double> values;
  std::string token;
  while (is >> token) {
    try {
      std::size_t used = 0;
      values.push_back(std::stod(token, &used));
      if (used != token.size()) throw std::invalid_argument(token);
    } catch (const std::exception&) {
      Fail(ErrorCode::kFormat, what + ": not a number: '" + token + "'");
    }
  }
  return values;
}

std::string FormatReals(const double* v, int n, int per_line) {
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (int i = 0; i < n; ++i) {
    os << v[i] << ((i + 1) % per_line == 0 ? '\n' : ' ');
  }
  return os.str();
}

bool HasSuffix(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() &&
         s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

std::optional<std::size_t> EmbeddingSet::find(const std::string& label) const {
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == label) return i;
  }
  return std::nullopt;
}

CameraIntrinsics ReadIntrinsics(const std::string& path) {
  const auto v = ParseReals(ReadText(path), path);
  if (v.size() != 6) {
    Fail(ErrorCode::kFormat, path + ": expected 6 values (fx fy cx cy width height)");
  }
  CameraIntrinsics k{v[0], v[1], v[2], v[3], static_cast<int>(v[4]),
                     static_cast<int>(v[5])};
  if (v[4] != k.width || v[5] != k.height) {
    Fail(ErrorCode::kFormat, path + ": width and height must be integers");
  }
  k.validate();
  return k;
}

void WriteIntrinsics(const std::string& path, const CameraIntrinsics& k) {
  const double v[6] = {k.fx, k.fy, k.cx, k.cy, static_cast<double>(k.width),
                       static_cast<double>(k.height)};
  WriteText(path, FormatReals(v, 6, 6));
}

SceneBounds ReadBounds(const std::string& path) {
  const auto v = ParseReals(ReadText(path), path);
  if (v.size() != 6) Fail(ErrorCode::kFormat, path + ": expected 6 values");
  SceneBounds b{Vec3(v[0], v[1], v[2]), Vec3(v[3], v[4], v[5])};
  b.validate();
  return b;
}

void WriteBounds(const std::string& path, const SceneBounds& b) {
  const double v[6] = {b.min.x(), b.min.y(), b.min.z(), b.max.x(), b.max.y(), b.max.z()};
  WriteText(path, FormatReals(v, 6, 6));
}

Pose ParsePose(const std::string& text, const std::string& what) {
  const auto v = ParseReals(text, what);
  if (v.size() != 16) {
    Fail(ErrorCode::kFormat, what + ": pose needs 16 values, got " + std::to_string(v.size()));
  }
  Pose pose;
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) pose(r, c) = v[r * 4 + c];
  }
  ValidatePose(pose, what);
  return pose;
}

std::string FormatPose(const Pose& pose) {
  double v[16];
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) v[r * 4 + c] = pose(r, c);
  }
  return FormatReals(v, 16, 4);
}

Tensor<float> DecodeFeatureMap(const Bytes& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kFeatureMagic, 4) != 0) {
    Fail(ErrorCode::kFormat, "feature map: bad magic (expected FTEN)");
  }
  ByteReader in(bytes, "feature map");
  in.str(4);
  const std::uint32_t h = in.u32();
  const std::uint32_t w = in.u32();
  const std::uint32_t d = in.u32();
  if (h == 0 || w == 0 || d == 0) {
    Fail(ErrorCode::kFormat, "feature map: zero extent in header");
  }
  const std::size_t count = static_cast<std::size_t>(h) * w * d;
  if (in.remaining() != count * 4) {
    Fail(ErrorCode::kFormat, "feature map: truncated payload (header declares " +
                                 std::to_string(count) + " values, found " +
                                 std::to_string(in.remaining() / 4) + ")");
  }
  Tensor<float> out({h, w, d});
  for (std::size_t i = 0; i < count; ++i) {
    out[i] = in.f32();
    if (!std::isfinite(out[i])) {
      Fail(ErrorCode::kNumeric, "feature map: non-finite value at index " + std::to_string(i));
    }
  }
  return out;
}

Bytes EncodeFeatureMap(const Tensor<float>& features) {
  if (features.rank() != 3) {
    Fail(ErrorCode::kShape, "feature map: expected Hf x Wf x D, got " + features.shape_string());
  }
  ByteWriter out;
  out.raw(kFeatureMagic, 4);
  for (int a = 0; a < 3; ++a) out.u32(static_cast<std::uint32_t>(features.dim(a)));
  for (const float v : features.values()) out.f32(v);
  return std::move(out.bytes());
}

Tensor<float> LoadFeatureMap(const std::string& path) {
  try {
    return DecodeFeatureMap(ReadFileBytes(path));
  } catch (const Error& e) {
    throw Error(e.code(), path + ": " + e.what());
  }
}

void WriteFeatureMap(const std::string& path, const Tensor<float>& features) {
  WriteFileBytes(path, EncodeFeatureMap(features));
}

std::string FrameStem(std::int64_t frame_id) {
  std::ostringstream os;
  os << std::setw(5) << std::setfill('0') << frame_id;
  return os.str();
}

PosedFrame DecodeFrame(std::int64_t frame_id, const Bytes& rgb_png,
                       const Bytes* depth_png, const std::string& pose_text,
                       const Bytes* feature_bin) {
  const std::string what = "frame " + std::to_string(frame_id);
  PosedFrame frame;
  frame.frame_id = frame_id;
  PngImage rgb;
  try {
    rgb = DecodePng(rgb_png);
  } catch (const Error& e) {
    throw Error(e.code(), what + " rgb: " + e.what());
  }
  if (rgb.channels != 3 || rgb.bit_depth != 8) {
    Fail(ErrorCode::kFormat, what + ": rgb must be 8-bit RGB");
  }
  frame.width = rgb.width;
  frame.height = rgb.height;
  frame.rgb.resize(rgb.samples.size());
  for (std::size_t i = 0; i < rgb.samples.size(); ++i) {
    frame.rgb[i] = static_cast<float>(rgb.samples[i]) / 255.0f;
  }
  if (depth_png) {
    PngImage depth;
    try {
      depth = DecodePng(*depth_png);
    } catch (const Error& e) {
      throw Error(e.code(), what + " depth: " + e.what());
    }
    if (depth.channels != 1 || depth.bit_depth != 16) {
      Fail(ErrorCode::kFormat, what + ": depth must be a 16-bit single-channel PNG");
    }
    if (depth.width != frame.width || depth.height != frame.height) {
      Fail(ErrorCode::kShape, what + ": depth size differs from rgb size");
    }
    frame.depth.resize(depth.samples.size());
    for (std::size_t i = 0; i < depth.samples.size(); ++i) {
      frame.depth[i] = static_cast<float>(depth.samples[i]) / 1000.0f;
    }
  }
  frame.pose = ParsePose(pose_text, what);
  if (feature_bin) {
    try {
      frame.features = DecodeFeatureMap(*feature_bin);
    } catch (const Error& e) {
      throw Error(e.code(), what + ": " + e.what());
    }
  }
  return frame;
}

void ValidateFrame(const PosedFrame& frame, const CameraIntrinsics& intrinsics) {
  const std::string what = "frame " + std::to_string(frame.frame_id);
  if (frame.width != intrinsics.width || frame.height != intrinsics.height) {
    Fail(ErrorCode::kShape, what + ": image is " + std::to_string(frame.width) + "x" +
                                std::to_string(frame.height) + ", intrinsics say " +
                                std::to_string(intrinsics.width) + "x" +
                                std::to_string(intrinsics.height));
  }
  const std::size_t pixels = static_cast<std::size_t>(frame.width) * frame.height;
  if (frame.rgb.size() != pixels * 3) Fail(ErrorCode::kShape, what + ": rgb size mismatch");
  if (frame.has_depth()) {
    if (frame.depth.size() != pixels) Fail(ErrorCode::kShape, what + ": depth size mismatch");
    for (const float d : frame.depth) {
      if (!(d >= 0.0f) || !std::isfinite(d)) {
        Fail(ErrorCode::kFormat, what + ": negative or non-finite depth");
      }
    }
  }
  if (frame.has_features() && frame.features.rank() != 3) {
    Fail(ErrorCode::kShape, what + ": features must be Hf x Wf x D");
  }
  ValidatePose(frame.pose, what);
}

void WriteFrame(const std::string& frames_dir, const PosedFrame& frame) {
  const std::string stem = (fs::path(frames_dir) / FrameStem(frame.frame_id)).string();
  std::vector<std::uint8_t> rgb8(frame.rgb.size());
  for (std::size_t i = 0; i < rgb8.size(); ++i) {
    rgb8[i] = static_cast<std::uint8_t>(
        std::lround(std::clamp(frame.rgb[i], 0.0f, 1.0f) * 255.0f));
  }
  WriteFileBytes(stem + ".rgb.png", EncodePngRgb8(frame.width, frame.height, rgb8));
  if (frame.has_depth()) {
    std::vector<std::uint16_t> mm(frame.depth.size());
    for (std::size_t i = 0; i < mm.size(); ++i) {
      mm[i] = static_cast<std::uint16_t>(
          std::clamp<long>(std::lround(frame.depth[i] * 1000.0f), 0, 65535));
    }
    WriteFileBytes(stem + ".depth.png", EncodePngGray16(frame.width, frame.height, mm));
  }
  WriteText(stem + ".pose.txt", FormatPose(frame.pose));
  if (frame.has_features()) WriteFeatureMap(stem + ".feat.bin", frame.features);
}

std::vector<PosedFrame> LoadFrameDirectory(const std::string& frames_dir,
                                           const CameraIntrinsics& intrinsics) {
  if (!fs::is_directory(frames_dir)) {
    Fail(ErrorCode::kIo, "missing frames directory " + frames_dir);
  }
  std::map<std::int64_t, std::string> stems;  // sorted by frame id
  for (const auto& entry : fs::directory_iterator(frames_dir)) {
    const std::string name = entry.path().filename().string();
    if (!HasSuffix(name, ".rgb.png")) continue;
    const std::string stem = name.substr(0, name.size() - 8);
    if (stem.empty() || !std::all_of(stem.begin(), stem.end(), ::isdigit)) {
      Fail(ErrorCode::kFormat, "unexpected frame file name " + name);
    }
    stems.emplace(std::stoll(stem), (fs::path(frames_dir) / stem).string());
  }
  std::vector<PosedFrame> frames;
  for (const auto& [id, stem] : stems) {
    const std::string pose_path = stem + ".pose.txt";
    if (!fs::exists(pose_path)) {
      Fail(ErrorCode::kNotFound, "frame " + std::to_string(id) + ": missing pose file " + pose_path);
    }
    const Bytes rgb = ReadFileBytes(stem + ".rgb.png");
    std::optional<Bytes> depth, feat;
    if (fs::exists(stem + ".depth.png")) depth = ReadFileBytes(stem + ".depth.png");
    if (fs::exists(stem + ".feat.bin")) feat = ReadFileBytes(stem + ".feat.bin");
    PosedFrame frame = DecodeFrame(id, rgb, depth ? &*depth : nullptr, ReadText(pose_path),
                                   feat ? &*feat : nullptr);
    ValidateFrame(frame, intrinsics);
    frames.push_back(std::move(frame));
  }
  return frames;
}

Scene LoadScene(const std::string& directory) {
  const fs::path root(directory);
  if (!fs::is_directory(root)) Fail(ErrorCode::kIo, "scene directory not found: " + directory);
  const fs::path intrinsics_path = root / "intrinsics.txt";
  if (!fs::exists(intrinsics_path)) {
    Fail(ErrorCode::kNotFound, directory + ": missing intrinsics.txt");
  }
  const fs::path bounds_path = root / "bounds.txt";
  if (!fs::exists(bounds_path)) Fail(ErrorCode::kNotFound, directory + ": missing bounds.txt");

  Scene scene;
  scene.directory = directory;
  scene.intrinsics = ReadIntrinsics(intrinsics_path.string());
  scene.bounds = ReadBounds(bounds_path.string());
  scene.frames = LoadFrameDirectory((root / "frames").string(), scene.intrinsics);
  if (scene.frames.empty()) Fail(ErrorCode::kNotFound, directory + ": no frames found");

  const PosedFrame* first_with_features = nullptr;
  std::size_t with_depth = 0;
  for (const PosedFrame& f : scene.frames) {
    if (f.has_depth()) ++with_depth;
    if (!f.has_features()) continue;
    if (!first_with_features) {
      first_with_features = &f;
      scene.feature_dim = f.feature_dim();
    } else if (f.feature_dim() != scene.feature_dim) {
      Fail(ErrorCode::kShape,
           "inconsistent feature dimension: frame " +
               std::to_string(first_with_features->frame_id) + " has D=" +
               std::to_string(scene.feature_dim) + ", frame " + std::to_string(f.frame_id) +
               " has D=" + std::to_string(f.feature_dim()));
    }
  }
  if (first_with_features) {
    for (const PosedFrame& f : scene.frames) {
      if (!f.has_features()) {
        Fail(ErrorCode::kNotFound, "frame " + std::to_string(f.frame_id) +
                                       ": missing feature map (other frames have one)");
      }
    }
  }
  scene.has_depth = with_depth > 0;
  if (with_depth > 0 && with_depth < scene.frames.size()) {
    scene.warnings.push_back(std::to_string(scene.frames.size() - with_depth) +
                             " frames have no depth map");
  }
  for (const PosedFrame& f : scene.frames) {
    if (!scene.bounds.contains(f.pose.block<3, 1>(0, 3))) {
      scene.warnings.push_back("frame " + std::to_string(f.frame_id) +
                               ": camera center outside scene bounds");
    }
  }
  return scene;
}

EmbeddingSet ParseEmbeddings(const std::string& text) {
  EmbeddingSet set;
  std::vector<std::vector<double>> rows;
  std::set<std::string> seen;
  std::istringstream lines(text);
  std::string line;
  int line_no = 0;
  while (std::getline(lines, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const auto tab = line.find('\t');
    const std::string where = "embeddings line " + std::to_string(line_no);
    if (tab == std::string::npos || tab == 0) {
      Fail(ErrorCode::kFormat, where + ": expected 'label<TAB>values'");
    }
    const std::string label = line.substr(0, tab);
    auto values = ParseReals(line.substr(tab + 1), where);
    if (values.empty()) Fail(ErrorCode::kFormat, where + ": label '" + label + "' has no vector");
    if (!rows.empty() && values.size() != rows.front().size()) {
      Fail(ErrorCode::kShape, where + ": ragged dimension " + std::to_string(values.size()) +
                                  " (expected " + std::to_string(rows.front().size()) + ")");
    }
    if (!seen.insert(label).second) {
      Fail(ErrorCode::kInvalidArgument, where + ": duplicate label '" + label + "'");
    }
    set.labels.push_back(label);
    rows.push_back(std::move(values));
  }
  if (rows.empty()) Fail(ErrorCode::kFormat, "embeddings: no records");
  const std::size_t d = rows.front().size();
  set.matrix = Tensor<float>({rows.size(), d});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < d; ++j) set.matrix(i, j) = static_cast<float>(rows[i][j]);
  }
  return set;
}

EmbeddingSet LoadEmbeddings(const std::string& path) {
  try {
    return ParseEmbeddings(ReadText(path));
  } catch (const Error& e) {
    throw Error(e.code(), path + ": " + e.what());
  }
}

void WriteEmbeddings(const std::string& path, const EmbeddingSet& set) {
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<float>::max_digits10);
  for (std::size_t i = 0; i < set.size(); ++i) {
    os << set.labels[i] << '\t';
    for (std::size_t j = 0; j < set.dim(); ++j) {
      os << (j ? " " : "") << set.matrix(i, j);
    }
    os << '\n';
  }
  WriteText(path, os.str());
}

LabeledPointCloud LoadPointCloud(const std::string& path,
                                 const std::optional<SceneBounds>& bounds) {
  std::ifstream in(path);
  if (!in) Fail(ErrorCode::kIo, "cannot open " + path);
  LabeledPointCloud cloud;
  std::string line;
  int line_no = 0;
  std::optional<bool> labeled;
  while (std::getline(in, line)) {
    ++line_no;
    const auto v = ParseReals(line, path + ":" + std::to_string(line_no));
    if (v.empty()) continue;
    if (v.size() != 3 && v.size() != 4) {
      Fail(ErrorCode::kFormat, path + ":" + std::to_string(line_no) + ": expected x y z [label]");
    }
    if (labeled && *labeled != (v.size() == 4)) {
      Fail(ErrorCode::kFormat, path + ":" + std::to_string(line_no) + ": mixed labeled/unlabeled rows");
    }
    labeled = v.size() == 4;
    cloud.points.emplace_back(v[0], v[1], v[2]);
    if (v.size() == 4) cloud.labels.push_back(static_cast<std::int32_t>(v[3]));
    if (bounds && !bounds->contains(cloud.points.back())) {
      cloud.out_of_bounds.push_back(cloud.points.size() - 1);
    }
  }
  return cloud;
}

void WritePointCloud(const std::string& path, const LabeledPointCloud& cloud) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) Fail(ErrorCode::kIo, "cannot write " + path);
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    const Vec3& p = cloud.points[i];
    out << p.x() << ' ' << p.y() << ' ' << p.z();
    if (!cloud.labels.empty()) out << ' ' << cloud.labels[i];
    out << '\n';
  }
}

}  // namespace ffield

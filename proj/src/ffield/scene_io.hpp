#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ffield/geometry.hpp"
#include "ffield/image_io.hpp"
#include "ffield/tensor.hpp"

namespace ffield {

// One keyframe. rgb is H*W*3 in [0,1]; depth is H*W meters with 0 meaning
// "no measurement" (empty vector when the frame has no depth at all);
// features is Hf x Wf x D (empty tensor when absent).
struct PosedFrame {
  std::int64_t frame_id = 0;
  int width = 0;
  int height = 0;
  std::vector<float> rgb;
  std::vector<float> depth;
  Tensor<float> features;
  Pose pose = Pose::Identity();

  bool has_depth() const { return !depth.empty(); }
  bool has_features() const { return !features.empty(); }
  std::size_t feature_dim() const { return has_features() ? features.dim(2) : 0; }
};

struct Scene {
  std::string directory;
  CameraIntrinsics intrinsics;
  SceneBounds bounds;
  std::vector<PosedFrame> frames;  // sorted by frame_id
  std::size_t feature_dim = 0;     // 0 when the scene carries no features
  bool has_depth = false;
  std::vector<std::string> warnings;
};

// Ordered label prompts and their embedding rows; row i is class i.
struct EmbeddingSet {
  std::vector<std::string> labels;
  Tensor<float> matrix;  // K x D

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return matrix.empty() ? 0 : matrix.cols(); }
  std::optional<std::size_t> find(const std::string& label) const;
};

inline constexpr std::int32_t kIgnoreLabel = -1;

struct LabeledPointCloud {
  std::vector<Vec3> points;
  std::vector<std::int32_t> labels;  // empty, or one per point (kIgnoreLabel allowed)
  std::vector<std::size_t> out_of_bounds;  // indices flagged at load time
};

// Scene directory layout:
//   intrinsics.txt          fx fy cx cy width height
//   bounds.txt              minx miny minz maxx maxy maxz
//   frames/NNNNN.rgb.png    8-bit RGB
//   frames/NNNNN.depth.png  16-bit millimeters, 0 = invalid (optional)
//   frames/NNNNN.pose.txt   16 reals, row-major camera-to-world
//   frames/NNNNN.feat.bin   FTEN feature tensor (optional)
Scene LoadScene(const std::string& directory);
std::vector<PosedFrame> LoadFrameDirectory(const std::string& frames_dir,
                                           const CameraIntrinsics& intrinsics);
void ValidateFrame(const PosedFrame& frame, const CameraIntrinsics& intrinsics);

CameraIntrinsics ReadIntrinsics(const std::string& path);
void WriteIntrinsics(const std::string& path, const CameraIntrinsics& intrinsics);
SceneBounds ReadBounds(const std::string& path);
void WriteBounds(const std::string& path, const SceneBounds& bounds);
Pose ParsePose(const std::string& text, const std::string& what);
std::string FormatPose(const Pose& pose);

// Frame codecs shared by the directory loader and the keyframe upload path.
PosedFrame DecodeFrame(std::int64_t frame_id, const Bytes& rgb_png,
                       const Bytes* depth_png, const std::string& pose_text,
                       const Bytes* feature_bin);
void WriteFrame(const std::string& frames_dir, const PosedFrame& frame);
std::string FrameStem(std::int64_t frame_id);

// FTEN: "FTEN", then Hf, Wf, D as uint32 LE, then Hf*Wf*D float32 LE,
// row-major, channel-last.
Tensor<float> DecodeFeatureMap(const Bytes& bytes);
Bytes EncodeFeatureMap(const Tensor<float>& features);
Tensor<float> LoadFeatureMap(const std::string& path);
void WriteFeatureMap(const std::string& path, const Tensor<float>& features);

// One record per line: label, TAB, D whitespace-separated reals.
EmbeddingSet ParseEmbeddings(const std::string& text);
EmbeddingSet LoadEmbeddings(const std::string& path);
void WriteEmbeddings(const std::string& path, const EmbeddingSet& set);

// One point per line: x y z [label]; label -1 is ignored in evaluation.
LabeledPointCloud LoadPointCloud(const std::string& path,
                                 const std::optional<SceneBounds>& bounds);
void WritePointCloud(const std::string& path, const LabeledPointCloud& cloud);

}  // namespace ffield

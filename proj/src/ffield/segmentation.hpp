#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ffield/encoding.hpp"
#include "ffield/field.hpp"
#include "ffield/renderer.hpp"
#include "ffield/scene_io.hpp"

namespace ffield {

// Maps a prompt to a D-dim embedding. Implementations must be thread-safe
// for concurrent encode() calls.
class TextEncoder {
 public:
  virtual ~TextEncoder() = default;
  virtual std::size_t dim() const = 0;
  virtual std::vector<float> encode(const std::string& prompt) const = 0;
};

// Looks prompts up verbatim in a fixed embedding table.
class DictionaryEncoder final : public TextEncoder {
 public:
  explicit DictionaryEncoder(EmbeddingSet table);
  static DictionaryEncoder FromFile(const std::string& path);

  std::size_t dim() const override { return table_.dim(); }
  // Throws kNotFound listing the known labels.
  std::vector<float> encode(const std::string& prompt) const override;
  const EmbeddingSet& table() const { return table_; }

 private:
  EmbeddingSet table_;
};

// One row per prompt in prompt order. Empty lists and repeated prompts are
// rejected.
EmbeddingSet EncodeLabels(const std::vector<std::string>& prompts, const TextEncoder& encoder);

// "a, b ,c" -> {"a", "b", "c"}; empty entries are dropped.
std::vector<std::string> SplitPrompts(const std::string& text);

struct Classification {
  std::vector<std::int32_t> classes;  // M
  std::vector<float> scores;          // M, similarity of the chosen class
  std::vector<float> class_scores;    // M x K when requested, else empty
};

// argmax_k E_k . f per row (dot products accumulated in double); ties go to
// the lowest class index. `features` holds m rows of D values.
Classification ClassifyFeatures(std::span<const float> features, std::size_t m,
                                const EmbeddingSet& embeddings, bool cosine = false,
                                bool keep_class_scores = false);
// Tensor overload: the last extent must equal D.
Classification ClassifyFeatures(const Tensor<float>& features, const EmbeddingSet& embeddings,
                                bool cosine = false, bool keep_class_scores = false);

struct SegmentOptions {
  int samples = 256;
  int width = 0;
  int height = 0;
  // Pixels whose rendered opacity is below this are background (index K).
  double opacity_threshold = 0.5;
  bool cosine = false;
  bool keep_class_scores = false;
};

struct SegmentationMap {
  int width = 0;
  int height = 0;
  std::vector<std::string> labels;      // K
  std::vector<std::int32_t> classes;    // H*W, K = background
  std::vector<float> scores;            // H*W
  std::vector<float> class_scores;      // H*W*K when requested
  std::vector<float> opacity;           // H*W
  std::size_t background() const { return labels.size(); }
};

SegmentationMap SegmentView(const FieldEvaluator& field, const SceneBounds& bounds,
                            const Pose& pose, const CameraIntrinsics& intrinsics,
                            const EmbeddingSet& embeddings, const SegmentOptions& options);
SegmentationMap SegmentView(const FieldModel<float>& model, const Pose& pose,
                            const CameraIntrinsics& intrinsics, const EmbeddingSet& embeddings,
                            const SegmentOptions& options);

struct PointSegmentation {
  Classification result;
  std::vector<std::size_t> out_of_bounds;  // clamped into the box before lookup
};

// Feature lookup at world points (no rendering); chunked and parallel.
PointSegmentation SegmentPoints(const FieldModel<float>& model, std::span<const Vec3> points,
                                const EmbeddingSet& embeddings, bool cosine = false);

// Raw per-point features f(x), row-major N x D.
Tensor<float> QueryPointFeatures(const FieldModel<float>& model, std::span<const Vec3> points);

// Stable label color (hash of the label text), independent of list order.
PaletteEntry LabelColor(const std::string& label);

// Indexed PNG: palette entry k is LabelColor(labels[k]), the background
// index K is black.
Bytes EncodeSegmentationPng(const SegmentationMap& map);
// Writes <stem>.png and <stem>.labels.txt (one label per line, index order).
void WriteSegmentation(const std::string& stem, const SegmentationMap& map);
// Per-class scores as an FTEN tensor H x W x K.
Bytes EncodeClassScores(const SegmentationMap& map);

// Label sidecar helpers shared with evaluation.
std::vector<std::string> ReadLabelList(const std::string& path);
void WriteLabelList(const std::string& path, const std::vector<std::string>& labels);

}  // namespace ffield

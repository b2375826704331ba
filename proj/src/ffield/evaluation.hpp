#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "ffield/scene_io.hpp"

namespace ffield {

// counts(ref, pred). Elements whose reference or prediction is kIgnoreLabel
// are skipped.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes);

  // Throws kShape on a length mismatch and kInvalidArgument for an index
  // outside [0, K) that is not the ignore label.
  void accumulate(std::span<const std::int32_t> predicted,
                  std::span<const std::int32_t> reference);
  void merge(const ConfusionMatrix& other);

  std::size_t classes() const { return classes_; }
  std::uint64_t count(std::size_t ref, std::size_t pred) const {
    return counts_[ref * classes_ + pred];
  }
  std::uint64_t total() const { return total_; }

 private:
  std::size_t classes_;
  std::vector<std::uint64_t> counts_;
  std::uint64_t total_ = 0;
};

struct ClassScore {
  double iou = 0.0;
  double acc = 0.0;
  std::uint64_t reference_count = 0;
  bool present = false;  // has reference elements; only these enter the means
};

struct SegmentationScores {
  double miou = 0.0;
  double macc = 0.0;
  std::vector<ClassScore> per_class;
};

// IoU = TP/(TP+FP+FN), acc = TP/(TP+FN), averaged over classes present in
// the reference. Throws kInvalidArgument when nothing was counted.
SegmentationScores MiouMacc(const ConfusionMatrix& cm);

enum class Aggregation { kPooled, kMacro };

// kPooled sums the matrices first; kMacro averages each class's IoU/acc
// over the sets where it is present, then averages over classes.
SegmentationScores Aggregate(const std::vector<ConfusionMatrix>& sets, Aggregation mode);

inline constexpr double kInfinitePsnr = std::numeric_limits<double>::infinity();

// 10 log10(1 / MSE) for images in [0,1]; +infinity when identical.
double Psnr(std::span<const float> image, std::span<const float> reference);

// Mean |depth - reference| over mask != 0. Throws when no pixel is valid.
double DepthMae(std::span<const float> depth, std::span<const float> reference,
                std::span<const std::uint8_t> mask);
// Mask = reference > 0.
double DepthMae(std::span<const float> depth, std::span<const float> reference);

std::string FormatScoreTable(const SegmentationScores& scores,
                             const std::vector<std::string>& labels);
// JSON record: {"miou", "macc", "classes": [{"label", "iou", "acc", "count"}]}.
std::string ScoreRecordJson(const SegmentationScores& scores,
                            const std::vector<std::string>& labels);

// Label maps on disk: indexed/gray 8-bit PNGs with a label list found at
// <stem>.labels.txt or, failing that, labels.txt in the same directory.
// 255 is the ignore value; indices past the label list (the segmentation
// background) are ignored too.
struct LabelMap {
  int width = 0;
  int height = 0;
  std::vector<std::int32_t> classes;
  std::vector<std::string> labels;
};
LabelMap LoadLabelMap(const std::string& png_path);

// Label list of a point cloud file: <stem>.labels.txt, else labels.txt
// next to it.
std::vector<std::string> PointLabelsFor(const std::string& cloud_path);

struct EvaluationReport {
  std::vector<std::string> labels;  // reference labels first, then prediction-only labels
  SegmentationScores scores;
  std::size_t items = 0;            // maps or point clouds compared
};

// Matches prediction and reference maps by file name (sidecar label lists
// excluded); labels are matched by name.
EvaluationReport EvaluateMapDirectories(const std::string& pred_dir, const std::string& ref_dir,
                                        Aggregation mode);
EvaluationReport EvaluatePointFiles(const std::string& pred_path, const std::string& ref_path);

// Pairwise label remapping into a shared class space.
struct LabelSpace {
  std::vector<std::string> labels;
  std::vector<std::int32_t> add(const std::vector<std::string>& names);
};
std::vector<std::int32_t> Remap(std::span<const std::int32_t> classes,
                                const std::vector<std::int32_t>& mapping);

}  // namespace ffield

#include "ffield/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "ffield/segmentation.hpp"

namespace fs = std::filesystem;

namespace ffield {

ConfusionMatrix::ConfusionMatrix(std::size_t classes)
    : classes_(classes), counts_(classes * classes, 0) {
  if (classes == 0) Fail(ErrorCode::kInvalidArgument, "confusion matrix needs at least one class");
}

void ConfusionMatrix::accumulate(std::span<const std::int32_t> predicted,
                                 std::span<const std::int32_t> reference) {
  if (predicted.size() != reference.size()) {
    Fail(ErrorCode::kShape, "accumulate: " + std::to_string(predicted.size()) +
                                " predictions vs " + std::to_string(reference.size()) +
                                " references");
  }
  const auto k = static_cast<std::int32_t>(classes_);
  const auto check = [k](std::int32_t v, const char* what) {
    if (v != kIgnoreLabel && (v < 0 || v >= k)) {
      Fail(ErrorCode::kInvalidArgument, std::string("accumulate: ") + what + " index " +
                                            std::to_string(v) + " outside [0, " +
                                            std::to_string(k) + ")");
    }
  };
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    check(reference[i], "reference");
    check(predicted[i], "predicted");
  }
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (reference[i] == kIgnoreLabel || predicted[i] == kIgnoreLabel) continue;
    ++counts_[static_cast<std::size_t>(reference[i]) * classes_ + predicted[i]];
    ++total_;
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.classes_ != classes_) {
    Fail(ErrorCode::kShape, "merge: " + std::to_string(classes_) + " vs " +
                                std::to_string(other.classes_) + " classes");
  }
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  total_ += other.total_;
}

SegmentationScores MiouMacc(const ConfusionMatrix& cm) {
  if (cm.total() == 0) Fail(ErrorCode::kInvalidArgument, "miou_macc: confusion matrix is empty");
  const std::size_t k = cm.classes();
  SegmentationScores out;
  out.per_class.resize(k);
  std::size_t present = 0;
  for (std::size_t c = 0; c < k; ++c) {
    std::uint64_t tp = cm.count(c, c), fn = 0, fp = 0;
    for (std::size_t o = 0; o < k; ++o) {
      if (o == c) continue;
      fn += cm.count(c, o);
      fp += cm.count(o, c);
    }
    ClassScore& s = out.per_class[c];
    s.reference_count = tp + fn;
    s.present = s.reference_count > 0;
    if (!s.present) continue;
    s.iou = static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
    s.acc = static_cast<double>(tp) / static_cast<double>(tp + fn);
    out.miou += s.iou;
    out.macc += s.acc;
    ++present;
  }
  out.miou /= static_cast<double>(present);
  out.macc /= static_cast<double>(present);
  return out;
}

SegmentationScores Aggregate(const std::vector<ConfusionMatrix>& sets, Aggregation mode) {
  if (sets.empty()) Fail(ErrorCode::kInvalidArgument, "aggregate: no confusion matrices");
  if (mode == Aggregation::kPooled) {
    ConfusionMatrix pooled(sets.front().classes());
    for (const ConfusionMatrix& cm : sets) pooled.merge(cm);
    return MiouMacc(pooled);
  }
  const std::size_t k = sets.front().classes();
  std::vector<double> iou(k, 0.0), acc(k, 0.0);
  std::vector<std::size_t> seen(k, 0);
  std::vector<std::uint64_t> counts(k, 0);
  for (const ConfusionMatrix& cm : sets) {
    if (cm.classes() != k) Fail(ErrorCode::kShape, "aggregate: class counts differ");
    if (cm.total() == 0) continue;
    const SegmentationScores s = MiouMacc(cm);
    for (std::size_t c = 0; c < k; ++c) {
      if (!s.per_class[c].present) continue;
      iou[c] += s.per_class[c].iou;
      acc[c] += s.per_class[c].acc;
      counts[c] += s.per_class[c].reference_count;
      ++seen[c];
    }
  }
  SegmentationScores out;
  out.per_class.resize(k);
  std::size_t present = 0;
  for (std::size_t c = 0; c < k; ++c) {
    if (seen[c] == 0) continue;
    ClassScore& s = out.per_class[c];
    s.present = true;
    s.iou = iou[c] / static_cast<double>(seen[c]);
    s.acc = acc[c] / static_cast<double>(seen[c]);
    s.reference_count = counts[c];
    out.miou += s.iou;
    out.macc += s.acc;
    ++present;
  }
  if (present == 0) Fail(ErrorCode::kInvalidArgument, "aggregate: nothing was counted");
  out.miou /= static_cast<double>(present);
  out.macc /= static_cast<double>(present);
  return out;
}

double Psnr(std::span<const float> image, std::span<const float> reference) {
  if (image.size() != reference.size() || image.empty()) {
    Fail(ErrorCode::kShape, "psnr: " + std::to_string(image.size()) + " vs " +
                                std::to_string(reference.size()) + " values");
  }
  double se = 0.0;
  for (std::size_t i = 0; i < image.size(); ++i) {
    const double d = double(image[i]) - reference[i];
    se += d * d;
  }
  const double mse = se / static_cast<double>(image.size());
  if (mse == 0.0) return kInfinitePsnr;
  return 10.0 * std::log10(1.0 / mse);
}

double DepthMae(std::span<const float> depth, std::span<const float> reference,
                std::span<const std::uint8_t> mask) {
  if (depth.size() != reference.size() || mask.size() != depth.size()) {
    Fail(ErrorCode::kShape, "depth_mae: depth, reference and mask sizes differ");
  }
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < depth.size(); ++i) {
    if (!mask[i]) continue;
    sum += std::abs(double(depth[i]) - reference[i]);
    ++n;
  }
  if (n == 0) Fail(ErrorCode::kInvalidArgument, "depth_mae: no valid pixels");
  return sum / static_cast<double>(n);
}

double DepthMae(std::span<const float> depth, std::span<const float> reference) {
  std::vector<std::uint8_t> mask(reference.size());
  for (std::size_t i = 0; i < reference.size(); ++i) mask[i] = reference[i] > 0.0f;
  return DepthMae(depth, reference, mask);
}

std::string FormatScoreTable(const SegmentationScores& scores,
                             const std::vector<std::string>& labels) {
  std::size_t width = 5;
  for (const std::string& l : labels) width = std::max(width, l.size());
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << std::left << std::setw(static_cast<int>(width)) << "class" << "  " << std::right
     << std::setw(8) << "IoU" << std::setw(8) << "Acc" << std::setw(12) << "count" << '\n';
  for (std::size_t c = 0; c < scores.per_class.size(); ++c) {
    const ClassScore& s = scores.per_class[c];
    const std::string name = c < labels.size() ? labels[c] : std::to_string(c);
    os << std::left << std::setw(static_cast<int>(width)) << name << "  " << std::right;
    if (s.present) {
      os << std::setw(8) << s.iou << std::setw(8) << s.acc;
    } else {
      os << std::setw(8) << "-" << std::setw(8) << "-";
    }
    os << std::setw(12) << s.reference_count << '\n';
  }
  os << "mIoU " << scores.miou << "  mAcc " << scores.macc << '\n';
  return os.str();
}

std::string ScoreRecordJson(const SegmentationScores& scores,
                            const std::vector<std::string>& labels) {
  nlohmann::json j;
  j["miou"] = scores.miou;
  j["macc"] = scores.macc;
  j["classes"] = nlohmann::json::array();
  for (std::size_t c = 0; c < scores.per_class.size(); ++c) {
    const ClassScore& s = scores.per_class[c];
    nlohmann::json e;
    e["label"] = c < labels.size() ? labels[c] : std::to_string(c);
    e["count"] = s.reference_count;
    if (s.present) {
      e["iou"] = s.iou;
      e["acc"] = s.acc;
    } else {
      e["iou"] = nullptr;
      e["acc"] = nullptr;
    }
    j["classes"].push_back(e);
  }
  return j.dump(2);
}

namespace {

std::vector<std::string> LabelsNextTo(const fs::path& file, const std::string& stem_source) {
  const fs::path sidecar = file.parent_path() / (stem_source + ".labels.txt");
  if (fs::exists(sidecar)) return ReadLabelList(sidecar.string());
  const fs::path shared = file.parent_path() / "labels.txt";
  if (fs::exists(shared)) return ReadLabelList(shared.string());
  Fail(ErrorCode::kNotFound, file.string() + ": no label list (" + sidecar.filename().string() +
                                 " or labels.txt)");
}

}  // namespace

LabelMap LoadLabelMap(const std::string& png_path) {
  const PngImage png = ReadPng(png_path);
  if (png.channels != 1 || png.bit_depth != 8) {
    Fail(ErrorCode::kFormat, png_path + ": label maps must be 8-bit single channel");
  }
  LabelMap map;
  map.width = png.width;
  map.height = png.height;
  map.labels = LabelsNextTo(png_path, fs::path(png_path).stem().string());
  map.classes.resize(png.samples.size());
  const auto k = static_cast<std::int32_t>(map.labels.size());
  for (std::size_t i = 0; i < png.samples.size(); ++i) {
    const auto v = static_cast<std::int32_t>(png.samples[i]);
    map.classes[i] = (v == 255 || v >= k) ? kIgnoreLabel : v;
  }
  return map;
}

std::vector<std::string> PointLabelsFor(const std::string& cloud_path) {
  return LabelsNextTo(cloud_path, fs::path(cloud_path).stem().string());
}

std::vector<std::int32_t> LabelSpace::add(const std::vector<std::string>& names) {
  std::vector<std::int32_t> mapping;
  for (const std::string& n : names) {
    auto it = std::find(labels.begin(), labels.end(), n);
    if (it == labels.end()) {
      labels.push_back(n);
      it = labels.end() - 1;
    }
    mapping.push_back(static_cast<std::int32_t>(it - labels.begin()));
  }
  return mapping;
}

std::vector<std::int32_t> Remap(std::span<const std::int32_t> classes,
                                const std::vector<std::int32_t>& mapping) {
  std::vector<std::int32_t> out(classes.size());
  for (std::size_t i = 0; i < classes.size(); ++i) {
    const std::int32_t c = classes[i];
    if (c == kIgnoreLabel) {
      out[i] = kIgnoreLabel;
    } else if (c < 0 || static_cast<std::size_t>(c) >= mapping.size()) {
      Fail(ErrorCode::kInvalidArgument, "label index " + std::to_string(c) +
                                            " has no entry in the label list");
    } else {
      out[i] = mapping[c];
    }
  }
  return out;
}

EvaluationReport EvaluateMapDirectories(const std::string& pred_dir, const std::string& ref_dir,
                                        Aggregation mode) {
  if (!fs::is_directory(pred_dir)) Fail(ErrorCode::kIo, "not a directory: " + pred_dir);
  if (!fs::is_directory(ref_dir)) Fail(ErrorCode::kIo, "not a directory: " + ref_dir);
  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(pred_dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") {
      names.push_back(entry.path().filename().string());
    }
  }
  std::sort(names.begin(), names.end());
  if (names.empty()) Fail(ErrorCode::kNotFound, pred_dir + ": no .png label maps");

  std::vector<LabelMap> preds, refs;
  for (const std::string& name : names) {
    const fs::path ref_path = fs::path(ref_dir) / name;
    if (!fs::exists(ref_path)) Fail(ErrorCode::kNotFound, "no reference map " + ref_path.string());
    preds.push_back(LoadLabelMap((fs::path(pred_dir) / name).string()));
    refs.push_back(LoadLabelMap(ref_path.string()));
    if (preds.back().width != refs.back().width || preds.back().height != refs.back().height) {
      Fail(ErrorCode::kShape, name + ": prediction is " + std::to_string(preds.back().width) +
                                  "x" + std::to_string(preds.back().height) +
                                  ", reference is " + std::to_string(refs.back().width) + "x" +
                                  std::to_string(refs.back().height));
    }
  }
  LabelSpace space;
  std::vector<std::vector<std::int32_t>> ref_maps, pred_maps;
  for (const LabelMap& r : refs) ref_maps.push_back(space.add(r.labels));
  for (const LabelMap& p : preds) pred_maps.push_back(space.add(p.labels));

  std::vector<ConfusionMatrix> sets;
  for (std::size_t i = 0; i < names.size(); ++i) {
    ConfusionMatrix cm(space.labels.size());
    cm.accumulate(Remap(preds[i].classes, pred_maps[i]), Remap(refs[i].classes, ref_maps[i]));
    sets.push_back(std::move(cm));
  }
  EvaluationReport report;
  report.labels = space.labels;
  report.scores = Aggregate(sets, mode);
  report.items = names.size();
  return report;
}

EvaluationReport EvaluatePointFiles(const std::string& pred_path, const std::string& ref_path) {
  const LabeledPointCloud pred = LoadPointCloud(pred_path, std::nullopt);
  const LabeledPointCloud ref = LoadPointCloud(ref_path, std::nullopt);
  if (pred.labels.empty() || ref.labels.empty()) {
    Fail(ErrorCode::kFormat, "point evaluation needs labels in both files");
  }
  if (pred.points.size() != ref.points.size()) {
    Fail(ErrorCode::kShape, "point clouds differ in size: " + std::to_string(pred.points.size()) +
                                " vs " + std::to_string(ref.points.size()));
  }
  for (std::size_t i = 0; i < pred.points.size(); ++i) {
    if ((pred.points[i] - ref.points[i]).norm() > 1e-5) {
      Fail(ErrorCode::kInvalidArgument, "point clouds differ at row " + std::to_string(i));
    }
  }
  LabelSpace space;
  const auto ref_map = space.add(PointLabelsFor(ref_path));
  const auto pred_map = space.add(PointLabelsFor(pred_path));
  ConfusionMatrix cm(space.labels.size());
  cm.accumulate(Remap(pred.labels, pred_map), Remap(ref.labels, ref_map));
  EvaluationReport report;
  report.labels = space.labels;
  report.scores = MiouMacc(cm);
  report.items = 1;
  return report;
}

}  // namespace ffield

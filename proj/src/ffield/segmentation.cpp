#include "ffield/segmentation.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>

namespace ffield {

DictionaryEncoder::DictionaryEncoder(EmbeddingSet table) : table_(std::move(table)) {
  if (table_.size() == 0) Fail(ErrorCode::kInvalidArgument, "dictionary encoder: empty table");
}

DictionaryEncoder DictionaryEncoder::FromFile(const std::string& path) {
  return DictionaryEncoder(LoadEmbeddings(path));
}

std::vector<float> DictionaryEncoder::encode(const std::string& prompt) const {
  const auto k = table_.find(prompt);
  if (!k) {
    std::string known;
    for (const std::string& l : table_.labels) known += (known.empty() ? "" : ", ") + l;
    Fail(ErrorCode::kNotFound, "unknown prompt '" + prompt + "'; known labels: " + known);
  }
  const auto row = table_.matrix.row(*k);
  return {row.begin(), row.end()};
}

EmbeddingSet EncodeLabels(const std::vector<std::string>& prompts, const TextEncoder& encoder) {
  if (prompts.empty()) Fail(ErrorCode::kInvalidArgument, "encode_labels: empty prompt list");
  std::set<std::string> seen;
  for (const std::string& p : prompts) {
    if (!seen.insert(p).second) {
      Fail(ErrorCode::kInvalidArgument, "encode_labels: duplicate label '" + p + "'");
    }
  }
  const std::size_t d = encoder.dim();
  EmbeddingSet set;
  set.labels = prompts;
  set.matrix = Tensor<float>({prompts.size(), d});
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    const std::vector<float> e = encoder.encode(prompts[i]);
    if (e.size() != d) {
      Fail(ErrorCode::kShape, "encode_labels: encoder returned " + std::to_string(e.size()) +
                                  " values for '" + prompts[i] + "', expected " +
                                  std::to_string(d));
    }
    std::copy(e.begin(), e.end(), set.matrix.data() + i * d);
  }
  return set;
}

std::vector<std::string> SplitPrompts(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    const auto b = item.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) continue;
    const auto e = item.find_last_not_of(" \t\r\n");
    out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

Classification ClassifyFeatures(std::span<const float> features, std::size_t m,
                                const EmbeddingSet& embeddings, bool cosine,
                                bool keep_class_scores) {
  const std::size_t k = embeddings.size();
  const std::size_t d = embeddings.dim();
  if (k == 0) Fail(ErrorCode::kInvalidArgument, "classify_features: no classes");
  if (features.size() != m * d) {
    Fail(ErrorCode::kShape, "classify_features: " + std::to_string(features.size()) +
                                " values for " + std::to_string(m) + " rows, embeddings have D=" +
                                std::to_string(d));
  }
  std::vector<double> rows(k * d);
  for (std::size_t c = 0; c < k; ++c) {
    double norm = 0.0;
    for (std::size_t j = 0; j < d; ++j) norm += double(embeddings.matrix(c, j)) * embeddings.matrix(c, j);
    norm = std::sqrt(norm);
    const double inv = cosine ? (norm > 0.0 ? 1.0 / norm : 0.0) : 1.0;
    for (std::size_t j = 0; j < d; ++j) rows[c * d + j] = embeddings.matrix(c, j) * inv;
  }
  Classification out;
  out.classes.resize(m);
  out.scores.resize(m);
  if (keep_class_scores) out.class_scores.resize(m * k);
#pragma omp parallel for schedule(static) if (m > 4096)
  for (std::size_t i = 0; i < m; ++i) {
    const float* f = features.data() + i * d;
    double scale = 1.0;
    if (cosine) {
      double norm = 0.0;
      for (std::size_t j = 0; j < d; ++j) norm += double(f[j]) * f[j];
      scale = norm > 0.0 ? 1.0 / std::sqrt(norm) : 0.0;
    }
    std::int32_t best = 0;
    double best_score = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += rows[c * d + j] * f[j];
      s *= scale;
      if (keep_class_scores) out.class_scores[i * k + c] = static_cast<float>(s);
      if (c == 0 || s > best_score) {
        best = static_cast<std::int32_t>(c);
        best_score = s;
      }
    }
    out.classes[i] = best;
    out.scores[i] = static_cast<float>(best_score);
  }
  return out;
}

Classification ClassifyFeatures(const Tensor<float>& features, const EmbeddingSet& embeddings,
                                bool cosine, bool keep_class_scores) {
  const std::size_t d = features.rank() == 0 ? 0 : features.shape().back();
  if (d != embeddings.dim()) {
    Fail(ErrorCode::kShape, "classify_features: feature dim " + std::to_string(d) +
                                " vs embedding dim " + std::to_string(embeddings.dim()));
  }
  const std::size_t m = d == 0 ? 0 : features.size() / d;
  return ClassifyFeatures(features.values(), m, embeddings, cosine, keep_class_scores);
}

SegmentationMap SegmentView(const FieldEvaluator& field, const SceneBounds& bounds,
                            const Pose& pose, const CameraIntrinsics& intrinsics,
                            const EmbeddingSet& embeddings, const SegmentOptions& options) {
  if (field.feature_dim() != embeddings.dim()) {
    Fail(ErrorCode::kShape, "segment_view: field feature dim " +
                                std::to_string(field.feature_dim()) + " vs embedding dim " +
                                std::to_string(embeddings.dim()));
  }
  RenderOptions ro;
  ro.maps = kMapFeature | kMapOpacity;
  ro.samples = options.samples;
  ro.width = options.width;
  ro.height = options.height;
  const RenderedMaps maps = RenderMaps(field, bounds, pose, intrinsics, ro);
  Classification c = ClassifyFeatures(maps.feature, embeddings, options.cosine,
                                      options.keep_class_scores);
  SegmentationMap out;
  out.width = maps.width;
  out.height = maps.height;
  out.labels = embeddings.labels;
  out.classes = std::move(c.classes);
  out.scores = std::move(c.scores);
  out.class_scores = std::move(c.class_scores);
  out.opacity = maps.opacity;
  const auto background = static_cast<std::int32_t>(out.background());
  for (std::size_t i = 0; i < out.classes.size(); ++i) {
    if (out.opacity[i] < options.opacity_threshold) out.classes[i] = background;
  }
  return out;
}

SegmentationMap SegmentView(const FieldModel<float>& model, const Pose& pose,
                            const CameraIntrinsics& intrinsics, const EmbeddingSet& embeddings,
                            const SegmentOptions& options) {
  return SegmentView(ModelEvaluator(model), model.bounds(), pose, intrinsics, embeddings, options);
}

Tensor<float> QueryPointFeatures(const FieldModel<float>& model, std::span<const Vec3> points) {
  const std::size_t n = points.size();
  const std::size_t d = static_cast<std::size_t>(model.field().feature_dim);
  Tensor<float> out({n, d});
  const ModelEvaluator eval(model);
  constexpr std::size_t kChunk = 16384;
  const std::size_t chunks = (n + kChunk - 1) / kChunk;
  std::exception_ptr failure;
  std::mutex failure_mutex;
#pragma omp parallel for schedule(dynamic)
  for (std::size_t c = 0; c < chunks; ++c) {
    try {
      const std::size_t begin = c * kChunk;
      const std::size_t end = std::min(n, begin + kChunk);
      Tensor<float> unit({end - begin, 3});
      for (std::size_t i = begin; i < end; ++i) {
        const Vec3 u = model.bounds().to_unit(points[i]);
        for (int a = 0; a < 3; ++a) unit(i - begin, a) = static_cast<float>(u[a]);
      }
      const FieldSamples s = eval.evaluate(unit, Tensor<float>(), kHeadFeature);
      std::copy(s.feature.data(), s.feature.data() + s.feature.size(), out.data() + begin * d);
    } catch (...) {
      std::lock_guard<std::mutex> lock(failure_mutex);
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

PointSegmentation SegmentPoints(const FieldModel<float>& model, std::span<const Vec3> points,
                                const EmbeddingSet& embeddings, bool cosine) {
  if (static_cast<std::size_t>(model.field().feature_dim) != embeddings.dim()) {
    Fail(ErrorCode::kShape, "segment_points: field feature dim " +
                                std::to_string(model.field().feature_dim) +
                                " vs embedding dim " + std::to_string(embeddings.dim()));
  }
  PointSegmentation out;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (!model.bounds().contains(points[i])) out.out_of_bounds.push_back(i);
  }
  const Tensor<float> features = QueryPointFeatures(model, points);
  out.result = ClassifyFeatures(features.values(), points.size(), embeddings, cosine);
  return out;
}

PaletteEntry LabelColor(const std::string& label) {
  std::uint32_t h = 2166136261u;
  for (const unsigned char ch : label) {
    h ^= ch;
    h *= 16777619u;
  }
  return {static_cast<std::uint8_t>(48 + (h & 0xff) % 208),
          static_cast<std::uint8_t>(48 + ((h >> 8) & 0xff) % 208),
          static_cast<std::uint8_t>(48 + ((h >> 16) & 0xff) % 208)};
}

Bytes EncodeSegmentationPng(const SegmentationMap& map) {
  if (map.labels.size() > 254) {
    Fail(ErrorCode::kInvalidArgument, "segmentation png: at most 254 classes");
  }
  std::vector<PaletteEntry> palette;
  for (const std::string& l : map.labels) palette.push_back(LabelColor(l));
  palette.push_back({0, 0, 0});
  std::vector<std::uint8_t> indices(map.classes.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    indices[i] = static_cast<std::uint8_t>(map.classes[i]);
  }
  return EncodePngIndexed(map.width, map.height, indices, palette);
}

std::vector<std::string> ReadLabelList(const std::string& path) {
  std::ifstream in(path);
  if (!in) Fail(ErrorCode::kIo, "cannot read label list " + path);
  std::vector<std::string> labels;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) labels.push_back(line);
  }
  return labels;
}

void WriteLabelList(const std::string& path, const std::vector<std::string>& labels) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) Fail(ErrorCode::kIo, "cannot write label list " + path);
  for (const std::string& l : labels) out << l << '\n';
}

void WriteSegmentation(const std::string& stem, const SegmentationMap& map) {
  WriteFileBytes(stem + ".png", EncodeSegmentationPng(map));
  WriteLabelList(stem + ".labels.txt", map.labels);
}

Bytes EncodeClassScores(const SegmentationMap& map) {
  const std::size_t k = map.labels.size();
  const std::size_t pixels = static_cast<std::size_t>(map.width) * map.height;
  if (map.class_scores.size() != pixels * k) {
    Fail(ErrorCode::kState, "class scores were not kept for this segmentation");
  }
  return EncodeFeatureMap(Tensor<float>(
      {static_cast<std::size_t>(map.height), static_cast<std::size_t>(map.width), k},
      map.class_scores));
}

}  // namespace ffield

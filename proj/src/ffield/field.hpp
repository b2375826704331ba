#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ffield/encoding.hpp"
#include "ffield/geometry.hpp"
#include "ffield/image_io.hpp"

namespace ffield {

struct FieldConfig {
  int geo_dim = 15;
  std::vector<int> density_hidden{64};
  std::vector<int> color_hidden{64, 64};
  std::vector<int> feature_hidden{64, 64};
  int feature_dim = 8;

  void validate() const;
};

// Weights are (in x out), biases (1 x out); hidden layers use relu.
template <typename T>
struct Mlp {
  std::vector<Parameter<T>> weights;
  std::vector<Parameter<T>> biases;
};

// All learnable state of the feature field: one hash table per level plus
// the density, color and feature MLPs.
//   density: encode(x)             -> [raw sigma | 15-d geometric code]
//   color:   [geo | sh(direction)] -> rgb (sigmoid)
//   feature: geo                   -> D-dim feature (identity)
template <typename T>
class FieldModel {
 public:
  FieldModel(const EncodingConfig& encoding, const FieldConfig& field,
             const SceneBounds& bounds, std::uint64_t seed);

  template <typename U>
  FieldModel<U> cast() const;

  const EncodingConfig& encoding() const { return encoding_; }
  const FieldConfig& field() const { return field_; }
  const SceneBounds& bounds() const { return bounds_; }
  const HashGridLayout& layout() const { return layout_; }

  std::vector<Parameter<T>*> parameters();
  std::vector<const Parameter<T>*> parameters() const;
  std::size_t parameter_count() const;
  Parameter<T>* find(const std::string& name);

  std::vector<Parameter<T>> hash_tables;
  Mlp<T> density;
  Mlp<T> color;
  Mlp<T> feature;

 private:
  template <typename U>
  friend class FieldModel;

  EncodingConfig encoding_;
  FieldConfig field_;
  SceneBounds bounds_;
  HashGridLayout layout_;
};

// Closed-form parameter count for a configuration.
std::size_t FieldParameterCount(const EncodingConfig& encoding, const FieldConfig& field);

// Tape handles for every parameter of a model.
struct FieldVars {
  std::vector<Var> tables;
  std::vector<Var> density_w, density_b;
  std::vector<Var> color_w, color_b;
  std::vector<Var> feature_w, feature_b;
};

// `trainable` registers parameters for gradients; otherwise they are bound
// as frozen borrowed values (no copies).
template <typename T>
FieldVars BindField(Tape<T>& tape, FieldModel<T>& model, bool trainable);
template <typename T>
FieldVars BindFieldFrozen(Tape<T>& tape, const FieldModel<T>& model);

struct DensityOutput {
  Var sigma;  // M x 1, softplus
  Var geo;    // M x geo_dim
};

template <typename T>
DensityOutput QueryDensity(Tape<T>& tape, const FieldModel<T>& model,
                           const FieldVars& vars, Var encoded_positions);
template <typename T>
Var QueryColor(Tape<T>& tape, const FieldModel<T>& model, const FieldVars& vars,
               Var geo, Var encoded_directions);
template <typename T>
Var QueryFeature(Tape<T>& tape, const FieldModel<T>& model, const FieldVars& vars, Var geo);

// Immutable published parameters. Readers hold a shared_ptr; the trainer
// swaps in a new one at each publication.
struct ParameterSnapshot {
  std::uint64_t version = 0;
  FieldModel<float> model;
  std::optional<CameraIntrinsics> intrinsics;
};
using SnapshotPtr = std::shared_ptr<const ParameterSnapshot>;

// FFLD container: magic, version, metadata (configs, bounds, D), named
// parameter blocks stored as little-endian float32.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  FieldModel<float> model;
  std::optional<CameraIntrinsics> intrinsics;
};

Bytes EncodeCheckpoint(const FieldModel<float>& model,
                       const std::optional<CameraIntrinsics>& intrinsics);
Checkpoint DecodeCheckpoint(const Bytes& bytes);
// Writes through a temporary file and rename so an interrupted write never
// replaces a good checkpoint.
void SaveCheckpoint(const std::string& path, const FieldModel<float>& model,
                    const std::optional<CameraIntrinsics>& intrinsics);
Checkpoint LoadCheckpoint(const std::string& path);

}  // namespace ffield

#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "ffield/adam.hpp"
#include "ffield/field.hpp"
#include "ffield/renderer.hpp"
#include "ffield/scene_io.hpp"

namespace ffield {

struct LossWeights {
  double lambda_d = 0.1;
  double lambda_f = 0.5;

  void validate() const;
};

enum class FeatureSampling { kNearest, kBilinear };

struct TrainConfig {
  int iterations = 20000;
  int batch_rays = 4096;
  int samples = 256;
  std::uint64_t seed = 0;
  int snapshot_interval = 500;
  double learning_rate = 1e-3;
  bool stratified = true;
  FeatureSampling feature_sampling = FeatureSampling::kNearest;
  LossWeights weights;
  // Rays per forward/backward pass. Gradients of the micro-batches are summed
  // before the single optimizer step, so the result does not depend on it
  // beyond float summation order.
  int micro_batch_rays = 512;

  void validate() const;
};

// Append-only set of keyframes. Sampling weight of a frame defaults to its
// pixel count, which makes (frame, pixel) draws uniform over all pixels.
class KeyframeBuffer {
 public:
  KeyframeBuffer(CameraIntrinsics intrinsics, std::size_t feature_dim);

  // Throws (buffer unchanged) on an invalid frame or a feature-dim mismatch.
  void add(PosedFrame frame);
  void add(PosedFrame frame, double weight);

  std::size_t size() const { return frames_.size(); }
  bool empty() const { return frames_.empty(); }
  const PosedFrame& frame(std::size_t i) const { return *frames_[i]; }
  const CameraIntrinsics& intrinsics() const { return intrinsics_; }
  std::size_t feature_dim() const { return feature_dim_; }
  double weight(std::size_t i) const;

  // Draws a frame index proportionally to the frame weights.
  std::size_t draw_frame(std::mt19937_64& rng) const;

 private:
  CameraIntrinsics intrinsics_;
  std::size_t feature_dim_;
  std::vector<std::shared_ptr<const PosedFrame>> frames_;
  std::vector<double> cumulative_;
};

// Rays plus supervision targets. depth_mask is 0 where the depth target is
// undefined; features has zero columns when the buffer carries no features.
template <typename T>
struct RayBatch {
  std::vector<Ray> rays;
  std::vector<std::size_t> frame_index;
  std::vector<PixelCoord> pixels;
  Tensor<T> rgb;        // B x 3
  Tensor<T> depth;      // B x 1, meters
  Tensor<T> depth_mask; // B x 1
  Tensor<T> features;   // B x D
};

// Feature target for image pixel (u, v) of a frame whose feature map may be
// coarser than the image.
void LookupFeature(const PosedFrame& frame, int u, int v, FeatureSampling sampling, float* out);

// Uniform draws over (frame, pixel); rays missing the scene box are redrawn.
template <typename T>
RayBatch<T> SampleBatch(const KeyframeBuffer& buffer, const SceneBounds& bounds,
                        std::size_t batch_size, FeatureSampling sampling, std::mt19937_64& rng);

struct LossComponents {
  double rgb = 0.0;
  double depth = 0.0;
  double feature = 0.0;
};

struct LossVars {
  Var rgb;
  Var depth;
  Var feature;
};

// rgb: mean over rays of ||c - c_t||^2; depth: mean of mask * |d - d_t|;
// feature: mean of ||f - f_t||^2 / D. `normalizer` is the batch size the
// sums are divided by (larger than the row count for a micro-batch).
// feature_pred may be invalid when D == 0, giving a constant zero term.
template <typename T>
LossVars ComputeLossVars(Tape<T>& tape, Var rgb_pred, const Tensor<T>& rgb_target,
                         Var depth_pred, const Tensor<T>& depth_target,
                         const Tensor<T>& depth_mask, Var feature_pred,
                         const Tensor<T>& feature_target, double normalizer);

// Plain evaluation of the three loss terms over a full batch.
template <typename T>
LossComponents ComputeLosses(const Tensor<T>& rgb_pred, const Tensor<T>& rgb_target,
                             const Tensor<T>& depth_pred, const Tensor<T>& depth_target,
                             const Tensor<T>& depth_mask, const Tensor<T>& feature_pred,
                             const Tensor<T>& feature_target);

// L_rgb + lambda_d L_d + lambda_f L_f. Throws kNumeric on a non-finite term.
double TotalLoss(const LossComponents& losses, const LossWeights& weights);

struct StepStats {
  std::int64_t iteration = 0;  // 1-based index of the completed step
  LossComponents losses;
  double total = 0.0;
  double milliseconds = 0.0;
};

template <typename T>
class Trainer {
 public:
  Trainer(FieldModel<T> model, TrainConfig config);

  // One optimizer step on a batch drawn from `buffer`.
  StepStats step(const KeyframeBuffer& buffer);

  // Loss of a fixed batch under the current parameters, with gradients left
  // in the parameters' grad buffers. No optimizer update.
  double loss_and_gradient(const RayBatch<T>& batch, std::mt19937_64& sample_rng,
                           LossComponents* components);

  FieldModel<T>& model() { return model_; }
  const FieldModel<T>& model() const { return model_; }
  const TrainConfig& config() const { return config_; }
  std::int64_t iteration() const { return iteration_; }
  std::mt19937_64& rng() { return rng_; }

 private:
  FieldModel<T> model_;
  TrainConfig config_;
  Adam<T> adam_;
  std::mt19937_64 rng_;
  std::int64_t iteration_ = 0;
};

// Tab-separated metrics log: a header line, then one record per iteration.
class MetricsLog {
 public:
  explicit MetricsLog(const std::string& path);
  void write(const StepStats& stats);
  void flush();

 private:
  std::string path_;
  std::string pending_;
};

struct OfflineOutputs {
  std::string checkpoint_path;
  std::string log_path;  // empty: no log
};

struct OfflineResult {
  std::int64_t iterations = 0;
  StepStats last;
  std::vector<StepStats> history;
};

using ProgressCallback = std::function<void(const StepStats&)>;

// Trains for config.iterations steps, saving the checkpoint at every
// snapshot_interval and at the end. A non-finite loss aborts with the last
// saved checkpoint left in place.
OfflineResult TrainOffline(const Scene& scene, const EncodingConfig& encoding,
                           const FieldConfig& field, const TrainConfig& config,
                           const OfflineOutputs& outputs, const ProgressCallback& progress = {});

// Streaming trainer. submit() may be called from any thread; frames are
// handed over through a queue and integrated between steps by the training
// context. Readers get immutable snapshots published every snapshot_interval.
template <typename T>
class OnlineTrainer {
 public:
  OnlineTrainer(FieldModel<T> model, TrainConfig config, CameraIntrinsics intrinsics,
                std::size_t feature_dim);
  ~OnlineTrainer();

  OnlineTrainer(const OnlineTrainer&) = delete;
  OnlineTrainer& operator=(const OnlineTrainer&) = delete;

  // Validates and enqueues. Throws on an invalid frame or D mismatch; the
  // queue and buffer are unchanged in that case.
  void submit(PosedFrame frame);

  // Training-context operations. Use either run_steps or start/stop.
  std::size_t integrate_pending();
  std::vector<StepStats> run_steps(int steps);

  // Background loop: integrate, step, publish; idles while the buffer is empty.
  void start();
  void stop();
  bool running() const;

  SnapshotPtr snapshot() const;
  void publish();
  std::uint64_t snapshot_version() const;
  std::int64_t iteration() const;
  std::size_t keyframe_count() const;
  std::size_t pending_count() const;
  std::size_t feature_dim() const { return feature_dim_; }
  // Last error raised by the background loop (empty if none).
  std::string last_error() const;

 private:
  void loop();
  StepStats step_locked();

  Trainer<T> trainer_;
  CameraIntrinsics intrinsics_;
  std::size_t feature_dim_;
  KeyframeBuffer buffer_;

  mutable std::mutex queue_mutex_;
  std::condition_variable queue_cv_;
  std::deque<PosedFrame> queue_;

  mutable std::mutex state_mutex_;
  SnapshotPtr snapshot_;
  std::uint64_t version_ = 0;
  std::int64_t iteration_ = 0;
  std::size_t keyframes_ = 0;
  std::string last_error_;

  std::thread worker_;
  bool stop_requested_ = false;
  bool running_ = false;
};

}  // namespace ffield

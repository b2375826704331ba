#include "ffield/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ffield/encoding.hpp"
#include "ffield/ops.hpp"

namespace ffield {

void LossWeights::validate() const {
  if (!(lambda_d >= 0.0) || !(lambda_f >= 0.0)) {
    Fail(ErrorCode::kInvalidArgument, "loss weights must be non-negative");
  }
}

void TrainConfig::validate() const {
  std::ostringstream why;
  if (iterations < 0) why << "iterations < 0; ";
  if (batch_rays < 1) why << "batch_rays < 1; ";
  if (samples < 2) why << "samples < 2; ";
  if (snapshot_interval < 1) why << "snapshot_interval < 1; ";
  if (!(learning_rate > 0.0)) why << "learning_rate must be positive; ";
  if (micro_batch_rays < 1) why << "micro_batch_rays < 1; ";
  if (!why.str().empty()) Fail(ErrorCode::kInvalidArgument, "train config: " + why.str());
  weights.validate();
}

KeyframeBuffer::KeyframeBuffer(CameraIntrinsics intrinsics, std::size_t feature_dim)
    : intrinsics_(intrinsics), feature_dim_(feature_dim) {
  intrinsics_.validate();
}

void KeyframeBuffer::add(PosedFrame frame) {
  const double w = static_cast<double>(frame.width) * frame.height;
  add(std::move(frame), w);
}

void KeyframeBuffer::add(PosedFrame frame, double weight) {
  ValidateFrame(frame, intrinsics_);
  if (frame.feature_dim() != feature_dim_) {
    Fail(ErrorCode::kShape, "frame " + std::to_string(frame.frame_id) + " has feature dim " +
                                std::to_string(frame.feature_dim()) + ", session expects " +
                                std::to_string(feature_dim_));
  }
  if (!(weight > 0.0) || !std::isfinite(weight)) {
    Fail(ErrorCode::kInvalidArgument, "keyframe weight must be positive");
  }
  const double base = cumulative_.empty() ? 0.0 : cumulative_.back();
  frames_.push_back(std::make_shared<const PosedFrame>(std::move(frame)));
  cumulative_.push_back(base + weight);
}

double KeyframeBuffer::weight(std::size_t i) const {
  return cumulative_.at(i) - (i == 0 ? 0.0 : cumulative_[i - 1]);
}

std::size_t KeyframeBuffer::draw_frame(std::mt19937_64& rng) const {
  if (frames_.empty()) Fail(ErrorCode::kState, "keyframe buffer is empty");
  std::uniform_real_distribution<double> pick(0.0, cumulative_.back());
  const double x = pick(rng);
  const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), x);
  return std::min<std::size_t>(static_cast<std::size_t>(it - cumulative_.begin()),
                               frames_.size() - 1);
}

void LookupFeature(const PosedFrame& frame, int u, int v, FeatureSampling sampling, float* out) {
  const Tensor<float>& f = frame.features;
  const int hf = static_cast<int>(f.dim(0));
  const int wf = static_cast<int>(f.dim(1));
  const std::size_t d = f.dim(2);
  const double sx = static_cast<double>(wf) / frame.width;
  const double sy = static_cast<double>(hf) / frame.height;
  const auto texel = [&](int x, int y) {
    return f.data() + (static_cast<std::size_t>(y) * wf + x) * d;
  };
  if (sampling == FeatureSampling::kNearest) {
    const int x = std::clamp(static_cast<int>(std::floor((u + 0.5) * sx)), 0, wf - 1);
    const int y = std::clamp(static_cast<int>(std::floor((v + 0.5) * sy)), 0, hf - 1);
    std::copy_n(texel(x, y), d, out);
    return;
  }
  const double x = std::clamp((u + 0.5) * sx - 0.5, 0.0, wf - 1.0);
  const double y = std::clamp((v + 0.5) * sy - 0.5, 0.0, hf - 1.0);
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  const int x1 = std::min(x0 + 1, wf - 1);
  const int y1 = std::min(y0 + 1, hf - 1);
  const double ax = x - x0;
  const double ay = y - y0;
  const float* p00 = texel(x0, y0);
  const float* p10 = texel(x1, y0);
  const float* p01 = texel(x0, y1);
  const float* p11 = texel(x1, y1);
  for (std::size_t k = 0; k < d; ++k) {
    out[k] = static_cast<float>((1 - ay) * ((1 - ax) * p00[k] + ax * p10[k]) +
                                ay * ((1 - ax) * p01[k] + ax * p11[k]));
  }
}

template <typename T>
RayBatch<T> SampleBatch(const KeyframeBuffer& buffer, const SceneBounds& bounds,
                        std::size_t batch_size, FeatureSampling sampling, std::mt19937_64& rng) {
  if (buffer.empty()) Fail(ErrorCode::kState, "sample_batch: keyframe buffer is empty");
  const std::size_t dim = buffer.feature_dim();
  RayBatch<T> batch;
  batch.rgb = Tensor<T>({batch_size, 3});
  batch.depth = Tensor<T>({batch_size, 1});
  batch.depth_mask = Tensor<T>({batch_size, 1});
  batch.features = Tensor<T>({batch_size, dim});
  std::vector<float> feature(dim);
  const std::size_t max_draws = 64 * batch_size + 1024;
  std::size_t draws = 0;
  while (batch.rays.size() < batch_size) {
    if (++draws > max_draws) {
      Fail(ErrorCode::kState, "sample_batch: camera rays do not reach the scene box");
    }
    const std::size_t fi = buffer.draw_frame(rng);
    const PosedFrame& frame = buffer.frame(fi);
    std::uniform_int_distribution<int> pick_u(0, frame.width - 1);
    std::uniform_int_distribution<int> pick_v(0, frame.height - 1);
    const int u = pick_u(rng);
    const int v = pick_v(rng);
    const PixelCoord px{static_cast<double>(u), static_cast<double>(v)};
    const Ray ray = GenerateRays(frame.pose, buffer.intrinsics(), std::span(&px, 1), bounds)[0];
    if (!ray.hit) continue;
    const std::size_t r = batch.rays.size();
    const std::size_t pixel = static_cast<std::size_t>(v) * frame.width + u;
    for (int c = 0; c < 3; ++c) batch.rgb(r, c) = static_cast<T>(frame.rgb[3 * pixel + c]);
    if (frame.has_depth() && frame.depth[pixel] > 0.0f) {
      batch.depth(r, 0) = static_cast<T>(frame.depth[pixel]);
      batch.depth_mask(r, 0) = T(1);
    }
    if (dim > 0) {
      LookupFeature(frame, u, v, sampling, feature.data());
      for (std::size_t k = 0; k < dim; ++k) batch.features(r, k) = static_cast<T>(feature[k]);
    }
    batch.rays.push_back(ray);
    batch.frame_index.push_back(fi);
    batch.pixels.push_back(px);
  }
  return batch;
}

template <typename T>
LossVars ComputeLossVars(Tape<T>& tape, Var rgb_pred, const Tensor<T>& rgb_target,
                         Var depth_pred, const Tensor<T>& depth_target,
                         const Tensor<T>& depth_mask, Var feature_pred,
                         const Tensor<T>& feature_target, double normalizer) {
  if (!(normalizer > 0.0)) Fail(ErrorCode::kInvalidArgument, "losses: empty batch");
  const T inv = static_cast<T>(1.0 / normalizer);
  LossVars out;
  const Var rgb_res = ops::sub(tape, rgb_pred, tape.constant(rgb_target));
  out.rgb = ops::scale(tape, ops::sum(tape, ops::square(tape, rgb_res)), inv);

  const Var depth_res = ops::sub(tape, depth_pred, tape.constant(depth_target));
  const Var masked = ops::mul(tape, ops::abs(tape, depth_res), tape.constant(depth_mask));
  out.depth = ops::scale(tape, ops::sum(tape, masked), inv);

  const std::size_t dim = feature_target.empty() ? 0 : feature_target.cols();
  if (!feature_pred.valid() || dim == 0) {
    out.feature = tape.constant(Tensor<T>::Scalar(T(0)));
  } else {
    const Var f_res = ops::sub(tape, feature_pred, tape.constant(feature_target));
    out.feature = ops::scale(tape, ops::sum(tape, ops::square(tape, f_res)),
                             static_cast<T>(1.0 / (normalizer * static_cast<double>(dim))));
  }
  return out;
}

template <typename T>
LossComponents ComputeLosses(const Tensor<T>& rgb_pred, const Tensor<T>& rgb_target,
                             const Tensor<T>& depth_pred, const Tensor<T>& depth_target,
                             const Tensor<T>& depth_mask, const Tensor<T>& feature_pred,
                             const Tensor<T>& feature_target) {
  Tape<T> tape(false);
  const Var feature = feature_pred.empty() ? Var{} : tape.frozen(feature_pred);
  const LossVars v = ComputeLossVars(tape, tape.frozen(rgb_pred), rgb_target,
                                     tape.frozen(depth_pred), depth_target, depth_mask, feature,
                                     feature_target, static_cast<double>(rgb_pred.rows()));
  return {static_cast<double>(tape.value(v.rgb)[0]), static_cast<double>(tape.value(v.depth)[0]),
          static_cast<double>(tape.value(v.feature)[0])};
}

double TotalLoss(const LossComponents& losses, const LossWeights& weights) {
  if (!std::isfinite(losses.rgb) || !std::isfinite(losses.depth) ||
      !std::isfinite(losses.feature)) {
    std::ostringstream os;
    os << "non-finite loss term (rgb " << losses.rgb << ", depth " << losses.depth
       << ", feature " << losses.feature << ")";
    Fail(ErrorCode::kNumeric, os.str());
  }
  return losses.rgb + weights.lambda_d * losses.depth + weights.lambda_f * losses.feature;
}

template <typename T>
Trainer<T>::Trainer(FieldModel<T> model, TrainConfig config)
    : model_(std::move(model)),
      config_(config),
      adam_(AdamConfig{config.learning_rate, 0.9, 0.999, 1e-15}),
      rng_(config.seed) {
  config_.validate();
}

namespace {

template <typename T>
Tensor<T> RowsOf(const Tensor<T>& t, std::size_t begin, std::size_t end) {
  const std::size_t cols = t.cols();
  Tensor<T> out({end - begin, cols});
  std::copy(t.data() + begin * cols, t.data() + end * cols, out.data());
  return out;
}

}  // namespace

template <typename T>
double Trainer<T>::loss_and_gradient(const RayBatch<T>& batch, std::mt19937_64& sample_rng,
                                     LossComponents* components) {
  for (Parameter<T>* p : model_.parameters()) p->zero_grad();
  const std::size_t total_rays = batch.rays.size();
  const std::size_t micro = static_cast<std::size_t>(config_.micro_batch_rays);
  const std::size_t dim = batch.features.empty() ? 0 : batch.features.cols();
  const bool with_features = dim > 0;
  const T lambda_d = static_cast<T>(config_.weights.lambda_d);
  const T lambda_f = static_cast<T>(config_.weights.lambda_f);
  LossComponents sum;

  for (std::size_t begin = 0; begin < total_rays; begin += micro) {
    const std::size_t end = std::min(total_rays, begin + micro);
    const std::span<const Ray> rays(batch.rays.data() + begin, end - begin);
    const RaySamples<T> s =
        SampleAlongRays<T>(rays, config_.samples, config_.stratified, &sample_rng);
    const std::size_t n = s.per_ray;
    const std::size_t m = rays.size() * n;

    Tensor<T> dirs({m, 3});
    Tensor<T> depth_values({m, 1});
    for (std::size_t r = 0; r < rays.size(); ++r) {
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t k = r * n + i;
        for (int a = 0; a < 3; ++a) dirs(k, a) = static_cast<T>(rays[r].world_direction[a]);
        depth_values(k, 0) = s.t[k] * static_cast<T>(rays[r].depth_scale);
      }
    }

    Tape<T> tape(true);
    const FieldVars vars = BindField(tape, model_, true);
    const Var encoded = EncodePositions(tape, s.positions, model_.encoding(), model_.layout(),
                                        vars.tables);
    const DensityOutput density = QueryDensity(tape, model_, vars, encoded);
    const Var weights = CompositeWeights(tape, density.sigma, s.delta, rays.size(), n);
    const Var sh = tape.constant(ShEncodeBatch(dirs, model_.encoding().sh_degree));
    const Var color = WeightedSum(tape, weights, QueryColor(tape, model_, vars, density.geo, sh));
    const Var depth = WeightedSum(tape, weights, tape.constant(std::move(depth_values)));
    Var feature;
    if (with_features) {
      feature = WeightedSum(tape, weights, QueryFeature(tape, model_, vars, density.geo));
    }
    const Tensor<T> feature_target = with_features ? RowsOf(batch.features, begin, end) : Tensor<T>();
    const LossVars l = ComputeLossVars(
        tape, color, RowsOf(batch.rgb, begin, end), depth, RowsOf(batch.depth, begin, end),
        RowsOf(batch.depth_mask, begin, end), feature, feature_target,
        static_cast<double>(total_rays));
    const Var total = ops::add(
        tape, ops::add(tape, l.rgb, ops::scale(tape, l.depth, lambda_d)),
        ops::scale(tape, l.feature, lambda_f));
    sum.rgb += static_cast<double>(tape.value(l.rgb)[0]);
    sum.depth += static_cast<double>(tape.value(l.depth)[0]);
    sum.feature += static_cast<double>(tape.value(l.feature)[0]);
    tape.backward(total);
  }
  if (components) *components = sum;
  return TotalLoss(sum, config_.weights);
}

template <typename T>
StepStats Trainer<T>::step(const KeyframeBuffer& buffer) {
  const auto start = std::chrono::steady_clock::now();
  const RayBatch<T> batch = SampleBatch<T>(buffer, model_.bounds(),
                                           static_cast<std::size_t>(config_.batch_rays),
                                           config_.feature_sampling, rng_);
  StepStats stats;
  stats.total = loss_and_gradient(batch, rng_, &stats.losses);
  adam_.step(model_.parameters());
  stats.iteration = ++iteration_;
  stats.milliseconds =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return stats;
}

MetricsLog::MetricsLog(const std::string& path) : path_(path) {
  CreateParentDirectories(path_);
  std::ofstream out(path_, std::ios::trunc);
  if (!out) Fail(ErrorCode::kIo, "cannot write metrics log " + path_);
  out << "iteration\tl_rgb\tl_d\tl_f\ttotal\tms\n";
}

void MetricsLog::write(const StepStats& s) {
  char line[256];
  std::snprintf(line, sizeof(line), "%lld\t%.9g\t%.9g\t%.9g\t%.9g\t%.3f\n",
                static_cast<long long>(s.iteration), s.losses.rgb, s.losses.depth,
                s.losses.feature, s.total, s.milliseconds);
  pending_ += line;
  if (pending_.size() > (1u << 16)) flush();
}

void MetricsLog::flush() {
  if (pending_.empty()) return;
  std::ofstream out(path_, std::ios::app);
  if (!out) Fail(ErrorCode::kIo, "cannot write metrics log " + path_);
  out << pending_;
  pending_.clear();
}

OfflineResult TrainOffline(const Scene& scene, const EncodingConfig& encoding,
                           const FieldConfig& field, const TrainConfig& config,
                           const OfflineOutputs& outputs, const ProgressCallback& progress) {
  config.validate();
  if (scene.frames.empty()) Fail(ErrorCode::kInvalidArgument, "train: scene has no frames");
  if (outputs.checkpoint_path.empty()) Fail(ErrorCode::kInvalidArgument, "train: no checkpoint path");
  FieldConfig fc = field;
  if (scene.feature_dim > 0) fc.feature_dim = static_cast<int>(scene.feature_dim);

  KeyframeBuffer buffer(scene.intrinsics, scene.feature_dim);
  for (const PosedFrame& f : scene.frames) buffer.add(f);

  Trainer<float> trainer(FieldModel<float>(encoding, fc, scene.bounds, config.seed), config);
  std::optional<MetricsLog> log;
  if (!outputs.log_path.empty()) log.emplace(outputs.log_path);
  SaveCheckpoint(outputs.checkpoint_path, trainer.model(), scene.intrinsics);

  OfflineResult result;
  for (int it = 0; it < config.iterations; ++it) {
    StepStats stats;
    try {
      stats = trainer.step(buffer);
    } catch (const Error& e) {
      if (log) log->flush();
      if (e.code() != ErrorCode::kNumeric) throw;
      Fail(ErrorCode::kNumeric, "training aborted at iteration " + std::to_string(it + 1) + ": " +
                                    e.what() + "; last good checkpoint kept at " +
                                    outputs.checkpoint_path);
    }
    if (log) log->write(stats);
    result.history.push_back(stats);
    result.last = stats;
    result.iterations = stats.iteration;
    if (progress) progress(stats);
    if (stats.iteration % config.snapshot_interval == 0 || it + 1 == config.iterations) {
      SaveCheckpoint(outputs.checkpoint_path, trainer.model(), scene.intrinsics);
    }
  }
  if (log) log->flush();
  return result;
}

template <typename T>
OnlineTrainer<T>::OnlineTrainer(FieldModel<T> model, TrainConfig config,
                                CameraIntrinsics intrinsics, std::size_t feature_dim)
    : trainer_(std::move(model), config),
      intrinsics_(intrinsics),
      feature_dim_(feature_dim),
      buffer_(intrinsics, feature_dim) {
  if (feature_dim > 0 && static_cast<std::size_t>(trainer_.model().field().feature_dim) != feature_dim) {
    Fail(ErrorCode::kShape, "online trainer: model feature dim does not match the session");
  }
  publish();
}

template <typename T>
OnlineTrainer<T>::~OnlineTrainer() {
  stop();
}

template <typename T>
void OnlineTrainer<T>::submit(PosedFrame frame) {
  ValidateFrame(frame, intrinsics_);
  if (frame.feature_dim() != feature_dim_) {
    Fail(ErrorCode::kShape, "frame " + std::to_string(frame.frame_id) + " has feature dim " +
                                std::to_string(frame.feature_dim()) + ", session expects " +
                                std::to_string(feature_dim_));
  }
  {
    std::lock_guard<std::mutex> lock(queue_mutex_);
    queue_.push_back(std::move(frame));
  }
  queue_cv_.notify_all();
}

template <typename T>
std::size_t OnlineTrainer<T>::integrate_pending() {
  std::deque<PosedFrame> incoming;
  {
    std::lock_guard<std::mutex> lock(queue_mutex_);
    incoming.swap(queue_);
  }
  for (PosedFrame& f : incoming) buffer_.add(std::move(f));
  std::lock_guard<std::mutex> lock(state_mutex_);
  keyframes_ = buffer_.size();
  return incoming.size();
}

template <typename T>
StepStats OnlineTrainer<T>::step_locked() {
  const StepStats stats = trainer_.step(buffer_);
  bool publish_now = false;
  {
    std::lock_guard<std::mutex> lock(state_mutex_);
    iteration_ = stats.iteration;
    publish_now = stats.iteration % trainer_.config().snapshot_interval == 0;
  }
  if (publish_now) publish();
  return stats;
}

template <typename T>
std::vector<StepStats> OnlineTrainer<T>::run_steps(int steps) {
  if (running()) Fail(ErrorCode::kState, "run_steps: background loop is active");
  std::vector<StepStats> out;
  for (int i = 0; i < steps; ++i) {
    integrate_pending();
    if (buffer_.empty()) break;
    out.push_back(step_locked());
  }
  return out;
}

template <typename T>
void OnlineTrainer<T>::publish() {
  auto snap = std::make_shared<ParameterSnapshot>(ParameterSnapshot{
      0, trainer_.model().template cast<float>(), intrinsics_});
  std::lock_guard<std::mutex> lock(state_mutex_);
  snap->version = ++version_;
  snapshot_ = std::move(snap);
}

template <typename T>
void OnlineTrainer<T>::loop() {
  for (;;) {
    {
      std::unique_lock<std::mutex> lock(queue_mutex_);
      queue_cv_.wait(lock, [&] { return stop_requested_ || !queue_.empty() || !buffer_.empty(); });
      if (stop_requested_) return;
    }
    try {
      integrate_pending();
      if (!buffer_.empty()) step_locked();
    } catch (const std::exception& e) {
      std::lock_guard<std::mutex> lock(state_mutex_);
      last_error_ = e.what();
      running_ = false;
      return;
    }
  }
}

template <typename T>
void OnlineTrainer<T>::start() {
  std::lock_guard<std::mutex> lock(state_mutex_);
  if (running_) return;
  if (worker_.joinable()) worker_.join();
  {
    std::lock_guard<std::mutex> qlock(queue_mutex_);
    stop_requested_ = false;
  }
  running_ = true;
  worker_ = std::thread([this] { loop(); });
}

template <typename T>
void OnlineTrainer<T>::stop() {
  {
    std::lock_guard<std::mutex> lock(queue_mutex_);
    stop_requested_ = true;
  }
  queue_cv_.notify_all();
  if (worker_.joinable()) worker_.join();
  std::lock_guard<std::mutex> lock(state_mutex_);
  running_ = false;
}

template <typename T>
bool OnlineTrainer<T>::running() const {
  std::lock_guard<std::mutex> lock(state_mutex_);
  return running_;
}

template <typename T>
SnapshotPtr OnlineTrainer<T>::snapshot() const {
  std::lock_guard<std::mutex> lock(state_mutex_);
  return snapshot_;
}

template <typename T>
std::uint64_t OnlineTrainer<T>::snapshot_version() const {
  std::lock_guard<std::mutex> lock(state_mutex_);
  return version_;
}

template <typename T>
std::int64_t OnlineTrainer<T>::iteration() const {
  std::lock_guard<std::mutex> lock(state_mutex_);
  return iteration_;
}

template <typename T>
std::size_t OnlineTrainer<T>::keyframe_count() const {
  std::lock_guard<std::mutex> lock(state_mutex_);
  return keyframes_;
}

template <typename T>
std::size_t OnlineTrainer<T>::pending_count() const {
  std::lock_guard<std::mutex> lock(queue_mutex_);
  return queue_.size();
}

template <typename T>
std::string OnlineTrainer<T>::last_error() const {
  std::lock_guard<std::mutex> lock(state_mutex_);
  return last_error_;
}

#define FFIELD_INSTANTIATE_TRAINER(T)                                                       \
  template RayBatch<T> SampleBatch<T>(const KeyframeBuffer&, const SceneBounds&,           \
                                      std::size_t, FeatureSampling, std::mt19937_64&);     \
  template LossVars ComputeLossVars<T>(Tape<T>&, Var, const Tensor<T>&, Var,               \
                                       const Tensor<T>&, const Tensor<T>&, Var,            \
                                       const Tensor<T>&, double);                          \
  template LossComponents ComputeLosses<T>(const Tensor<T>&, const Tensor<T>&,             \
                                           const Tensor<T>&, const Tensor<T>&,             \
                                           const Tensor<T>&, const Tensor<T>&,             \
                                           const Tensor<T>&);                              \
  template class Trainer<T>;                                                               \
  template class OnlineTrainer<T>;

FFIELD_INSTANTIATE_TRAINER(float)
FFIELD_INSTANTIATE_TRAINER(double)

}  // namespace ffield

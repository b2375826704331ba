#include "ffield/field.hpp"

#include <cmath>
#include <filesystem>
#include <iomanip>
#include <limits>
#include <map>
#include <random>
#include <sstream>

#include "ffield/binary_io.hpp"
#include "ffield/ops.hpp"

namespace ffield {

void FieldConfig::validate() const {
  std::ostringstream why;
  if (geo_dim < 1) why << "geo_dim < 1; ";
  if (feature_dim < 1) why << "feature_dim < 1; ";
  for (const auto* widths : {&density_hidden, &color_hidden, &feature_hidden}) {
    for (int w : *widths) {
      if (w < 1) why << "hidden width < 1; ";
    }
  }
  if (!why.str().empty()) Fail(ErrorCode::kInvalidArgument, "field config: " + why.str());
}

namespace {

struct LayerShape {
  std::size_t in, out;
  bool relu_follows;
};

std::vector<LayerShape> MlpShapes(std::size_t in, const std::vector<int>& hidden,
                                  std::size_t out) {
  std::vector<LayerShape> shapes;
  std::size_t width = in;
  for (int h : hidden) {
    shapes.push_back({width, static_cast<std::size_t>(h), true});
    width = static_cast<std::size_t>(h);
  }
  shapes.push_back({width, out, false});
  return shapes;
}

std::vector<LayerShape> DensityShapes(const EncodingConfig& e, const FieldConfig& f) {
  return MlpShapes(e.position_dim(), f.density_hidden, 1 + static_cast<std::size_t>(f.geo_dim));
}
std::vector<LayerShape> ColorShapes(const EncodingConfig& e, const FieldConfig& f) {
  return MlpShapes(static_cast<std::size_t>(f.geo_dim) + e.direction_dim(), f.color_hidden, 3);
}
std::vector<LayerShape> FeatureShapes(const FieldConfig& f) {
  return MlpShapes(static_cast<std::size_t>(f.geo_dim), f.feature_hidden,
                   static_cast<std::size_t>(f.feature_dim));
}

// Uniform fan-in initialization: sqrt(6/fan_in) before a relu, sqrt(3/fan_in)
// for output layers; zero biases.
template <typename T>
Mlp<T> MakeMlp(const std::string& name, const std::vector<LayerShape>& shapes,
               std::mt19937_64* rng) {
  Mlp<T> mlp;
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    const LayerShape& s = shapes[i];
    Tensor<T> w({s.in, s.out});
    if (rng) {
      const double bound = std::sqrt((s.relu_follows ? 6.0 : 3.0) / static_cast<double>(s.in));
      std::uniform_real_distribution<double> u(-bound, bound);
      for (T& v : w.values()) v = static_cast<T>(u(*rng));
    }
    const std::string prefix = name + "." + std::to_string(i);
    mlp.weights.emplace_back(prefix + ".weight", std::move(w));
    mlp.biases.emplace_back(prefix + ".bias", Tensor<T>({1, s.out}));
  }
  return mlp;
}

std::string LevelName(std::size_t level) {
  std::ostringstream os;
  os << "hash.level" << std::setw(2) << std::setfill('0') << level;
  return os.str();
}

template <typename T>
std::vector<Var> BindAll(Tape<T>& tape, std::vector<Parameter<T>>& params, bool trainable) {
  std::vector<Var> vars;
  for (Parameter<T>& p : params) {
    vars.push_back(trainable ? tape.parameter(p) : tape.frozen(p.value));
  }
  return vars;
}

template <typename T>
std::vector<Var> BindAllFrozen(Tape<T>& tape, const std::vector<Parameter<T>>& params) {
  std::vector<Var> vars;
  for (const Parameter<T>& p : params) vars.push_back(tape.frozen(p.value));
  return vars;
}

template <typename T>
Var RunMlp(Tape<T>& tape, Var x, const std::vector<Var>& w, const std::vector<Var>& b) {
  for (std::size_t i = 0; i < w.size(); ++i) {
    x = ops::linear(tape, x, w[i], b[i]);
    if (i + 1 < w.size()) x = ops::relu(tape, x);
  }
  return x;
}

void RequireCols(const char* op, std::size_t have, std::size_t want) {
  if (have != want) {
    Fail(ErrorCode::kShape, std::string(op) + ": input has " + std::to_string(have) +
                                " columns, expected " + std::to_string(want));
  }
}

}  // namespace

template <typename T>
FieldModel<T>::FieldModel(const EncodingConfig& encoding, const FieldConfig& field,
                          const SceneBounds& bounds, std::uint64_t seed)
    : encoding_(encoding), field_(field), bounds_(bounds), layout_(encoding) {
  field.validate();
  bounds.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> table_init(-1e-4, 1e-4);
  for (std::size_t l = 0; l < layout_.levels().size(); ++l) {
    Tensor<T> table({layout_.levels()[l].rows,
                     static_cast<std::size_t>(encoding.features_per_level)});
    for (T& v : table.values()) v = static_cast<T>(table_init(rng));
    hash_tables.emplace_back(LevelName(l), std::move(table));
  }
  density = MakeMlp<T>("density", DensityShapes(encoding, field), &rng);
  color = MakeMlp<T>("color", ColorShapes(encoding, field), &rng);
  feature = MakeMlp<T>("feature", FeatureShapes(field), &rng);
}

template <typename T>
template <typename U>
FieldModel<U> FieldModel<T>::cast() const {
  FieldModel<U> out(encoding_, field_, bounds_, 0);
  auto dst = out.parameters();
  auto src = parameters();
  for (std::size_t i = 0; i < src.size(); ++i) {
    dst[i]->value = src[i]->value.template cast<U>();
    dst[i]->zero_grad();
  }
  return out;
}

template <typename T>
std::vector<Parameter<T>*> FieldModel<T>::parameters() {
  std::vector<Parameter<T>*> out;
  for (auto& p : hash_tables) out.push_back(&p);
  for (Mlp<T>* mlp : {&density, &color, &feature}) {
    for (std::size_t i = 0; i < mlp->weights.size(); ++i) {
      out.push_back(&mlp->weights[i]);
      out.push_back(&mlp->biases[i]);
    }
  }
  return out;
}

template <typename T>
std::vector<const Parameter<T>*> FieldModel<T>::parameters() const {
  std::vector<const Parameter<T>*> out;
  for (Parameter<T>* p : const_cast<FieldModel*>(this)->parameters()) out.push_back(p);
  return out;
}

template <typename T>
std::size_t FieldModel<T>::parameter_count() const {
  std::size_t n = 0;
  for (const Parameter<T>* p : parameters()) n += p->value.size();
  return n;
}

template <typename T>
Parameter<T>* FieldModel<T>::find(const std::string& name) {
  for (Parameter<T>* p : parameters()) {
    if (p->name == name) return p;
  }
  return nullptr;
}

std::size_t FieldParameterCount(const EncodingConfig& encoding, const FieldConfig& field) {
  std::size_t n = 0;
  const HashGridLayout layout(encoding);
  for (const HashLevel& l : layout.levels()) {
    n += static_cast<std::size_t>(l.rows) * encoding.features_per_level;
  }
  for (const auto& shapes : {DensityShapes(encoding, field), ColorShapes(encoding, field),
                             FeatureShapes(field)}) {
    for (const LayerShape& s : shapes) n += s.in * s.out + s.out;
  }
  return n;
}

template <typename T>
FieldVars BindField(Tape<T>& tape, FieldModel<T>& model, bool trainable) {
  FieldVars v;
  v.tables = BindAll(tape, model.hash_tables, trainable);
  v.density_w = BindAll(tape, model.density.weights, trainable);
  v.density_b = BindAll(tape, model.density.biases, trainable);
  v.color_w = BindAll(tape, model.color.weights, trainable);
  v.color_b = BindAll(tape, model.color.biases, trainable);
  v.feature_w = BindAll(tape, model.feature.weights, trainable);
  v.feature_b = BindAll(tape, model.feature.biases, trainable);
  return v;
}

template <typename T>
FieldVars BindFieldFrozen(Tape<T>& tape, const FieldModel<T>& model) {
  FieldVars v;
  v.tables = BindAllFrozen(tape, model.hash_tables);
  v.density_w = BindAllFrozen(tape, model.density.weights);
  v.density_b = BindAllFrozen(tape, model.density.biases);
  v.color_w = BindAllFrozen(tape, model.color.weights);
  v.color_b = BindAllFrozen(tape, model.color.biases);
  v.feature_w = BindAllFrozen(tape, model.feature.weights);
  v.feature_b = BindAllFrozen(tape, model.feature.biases);
  return v;
}

template <typename T>
DensityOutput QueryDensity(Tape<T>& tape, const FieldModel<T>& model, const FieldVars& vars,
                           Var encoded_positions) {
  RequireCols("query_density", tape.value(encoded_positions).cols(),
              model.encoding().position_dim());
  const Var out = RunMlp(tape, encoded_positions, vars.density_w, vars.density_b);
  const std::size_t geo = static_cast<std::size_t>(model.field().geo_dim);
  return {ops::softplus(tape, ops::slice_cols(tape, out, 0, 1)),
          ops::slice_cols(tape, out, 1, 1 + geo)};
}

template <typename T>
Var QueryColor(Tape<T>& tape, const FieldModel<T>& model, const FieldVars& vars, Var geo,
               Var encoded_directions) {
  RequireCols("query_color", tape.value(geo).cols(),
              static_cast<std::size_t>(model.field().geo_dim));
  RequireCols("query_color", tape.value(encoded_directions).cols(),
              model.encoding().direction_dim());
  const Var in = ops::concat_cols(tape, {geo, encoded_directions});
  return ops::sigmoid(tape, RunMlp(tape, in, vars.color_w, vars.color_b));
}

template <typename T>
Var QueryFeature(Tape<T>& tape, const FieldModel<T>& model, const FieldVars& vars, Var geo) {
  RequireCols("query_feature", tape.value(geo).cols(),
              static_cast<std::size_t>(model.field().geo_dim));
  return RunMlp(tape, geo, vars.feature_w, vars.feature_b);
}

template class FieldModel<float>;
template class FieldModel<double>;
template FieldModel<float> FieldModel<float>::cast<float>() const;
template FieldModel<float> FieldModel<double>::cast<float>() const;
template FieldModel<double> FieldModel<float>::cast<double>() const;
template FieldModel<double> FieldModel<double>::cast<double>() const;

#define FFIELD_INSTANTIATE_FIELD(T)                                                      \
  template FieldVars BindField<T>(Tape<T>&, FieldModel<T>&, bool);                      \
  template FieldVars BindFieldFrozen<T>(Tape<T>&, const FieldModel<T>&);                \
  template DensityOutput QueryDensity<T>(Tape<T>&, const FieldModel<T>&,                \
                                         const FieldVars&, Var);                        \
  template Var QueryColor<T>(Tape<T>&, const FieldModel<T>&, const FieldVars&, Var, Var); \
  template Var QueryFeature<T>(Tape<T>&, const FieldModel<T>&, const FieldVars&, Var);

FFIELD_INSTANTIATE_FIELD(float)
FFIELD_INSTANTIATE_FIELD(double)

// --- checkpoint container ---------------------------------------------------

namespace {

constexpr char kCheckpointMagic[4] = {'F', 'F', 'L', 'D'};

std::string JoinInts(const std::vector<int>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

std::vector<double> SplitReals(const std::string& s, const std::string& key) {
  std::vector<double> out;
  std::istringstream is(s);
  std::string token;
  while (std::getline(is, token, ',')) {
    try {
      out.push_back(std::stod(token));
    } catch (const std::exception&) {
      Fail(ErrorCode::kFormat, "checkpoint: bad value for " + key + ": '" + s + "'");
    }
  }
  return out;
}

std::string EncodeMeta(const FieldModel<float>& model,
                       const std::optional<CameraIntrinsics>& intrinsics) {
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10);
  const EncodingConfig& e = model.encoding();
  const FieldConfig& f = model.field();
  const SceneBounds& b = model.bounds();
  os << "encoding.frequency_bands=" << e.frequency_bands << '\n'
     << "encoding.hash_levels=" << e.hash_levels << '\n'
     << "encoding.base_resolution=" << e.base_resolution << '\n'
     << "encoding.per_level_scale=" << e.per_level_scale << '\n'
     << "encoding.table_size_log2=" << e.table_size_log2 << '\n'
     << "encoding.features_per_level=" << e.features_per_level << '\n'
     << "encoding.sh_degree=" << e.sh_degree << '\n'
     << "field.geo_dim=" << f.geo_dim << '\n'
     << "field.density_hidden=" << JoinInts(f.density_hidden) << '\n'
     << "field.color_hidden=" << JoinInts(f.color_hidden) << '\n'
     << "field.feature_hidden=" << JoinInts(f.feature_hidden) << '\n'
     << "field.feature_dim=" << f.feature_dim << '\n'
     << "bounds.min=" << b.min.x() << ',' << b.min.y() << ',' << b.min.z() << '\n'
     << "bounds.max=" << b.max.x() << ',' << b.max.y() << ',' << b.max.z() << '\n';
  if (intrinsics) {
    const CameraIntrinsics& k = *intrinsics;
    os << "intrinsics=" << k.fx << ',' << k.fy << ',' << k.cx << ',' << k.cy << ','
       << k.width << ',' << k.height << '\n';
  }
  return os.str();
}

}  // namespace

Bytes EncodeCheckpoint(const FieldModel<float>& model,
                       const std::optional<CameraIntrinsics>& intrinsics) {
  ByteWriter out;
  out.raw(kCheckpointMagic, 4);
  out.u32(kCheckpointVersion);
  const std::string meta = EncodeMeta(model, intrinsics);
  out.u32(static_cast<std::uint32_t>(meta.size()));
  out.str(meta);
  const auto params = model.parameters();
  out.u32(static_cast<std::uint32_t>(params.size()));
  for (const Parameter<float>* p : params) {
    out.u32(static_cast<std::uint32_t>(p->name.size()));
    out.str(p->name);
    out.u32(static_cast<std::uint32_t>(p->value.rank()));
    for (std::size_t extent : p->value.shape()) out.u32(static_cast<std::uint32_t>(extent));
    for (const float v : p->value.values()) out.f32(v);
  }
  return std::move(out.bytes());
}

Checkpoint DecodeCheckpoint(const Bytes& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    Fail(ErrorCode::kFormat, "checkpoint: bad magic (expected FFLD)");
  }
  ByteReader in(bytes, "checkpoint");
  in.str(4);
  const std::uint32_t version = in.u32();
  if (version != kCheckpointVersion) {
    Fail(ErrorCode::kFormat, "checkpoint: unsupported version " + std::to_string(version));
  }
  std::map<std::string, std::string> meta;
  {
    std::istringstream lines(in.str(in.u32()));
    std::string line;
    while (std::getline(lines, line)) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) Fail(ErrorCode::kFormat, "checkpoint: bad metadata line");
      meta[line.substr(0, eq)] = line.substr(eq + 1);
    }
  }
  auto get = [&](const std::string& key) -> const std::string& {
    auto it = meta.find(key);
    if (it == meta.end()) Fail(ErrorCode::kFormat, "checkpoint: missing metadata " + key);
    return it->second;
  };
  auto get_int = [&](const std::string& key) {
    const auto v = SplitReals(get(key), key);
    if (v.size() != 1) Fail(ErrorCode::kFormat, "checkpoint: bad value for " + key);
    return static_cast<int>(v[0]);
  };
  auto get_ints = [&](const std::string& key) {
    std::vector<int> out;
    for (double v : SplitReals(get(key), key)) out.push_back(static_cast<int>(v));
    return out;
  };
  auto get_vec3 = [&](const std::string& key) {
    const auto v = SplitReals(get(key), key);
    if (v.size() != 3) Fail(ErrorCode::kFormat, "checkpoint: bad value for " + key);
    return Vec3(v[0], v[1], v[2]);
  };

  EncodingConfig e;
  e.frequency_bands = get_int("encoding.frequency_bands");
  e.hash_levels = get_int("encoding.hash_levels");
  e.base_resolution = get_int("encoding.base_resolution");
  e.per_level_scale = SplitReals(get("encoding.per_level_scale"), "per_level_scale").at(0);
  e.table_size_log2 = get_int("encoding.table_size_log2");
  e.features_per_level = get_int("encoding.features_per_level");
  e.sh_degree = get_int("encoding.sh_degree");
  FieldConfig f;
  f.geo_dim = get_int("field.geo_dim");
  f.density_hidden = get_ints("field.density_hidden");
  f.color_hidden = get_ints("field.color_hidden");
  f.feature_hidden = get_ints("field.feature_hidden");
  f.feature_dim = get_int("field.feature_dim");
  const SceneBounds bounds{get_vec3("bounds.min"), get_vec3("bounds.max")};

  Checkpoint ck{FieldModel<float>(e, f, bounds, 0), std::nullopt};
  if (meta.count("intrinsics")) {
    const auto k = SplitReals(meta["intrinsics"], "intrinsics");
    if (k.size() != 6) Fail(ErrorCode::kFormat, "checkpoint: bad intrinsics");
    ck.intrinsics = CameraIntrinsics{k[0], k[1], k[2], k[3], static_cast<int>(k[4]),
                                     static_cast<int>(k[5])};
  }

  const std::uint32_t blocks = in.u32();
  const std::size_t expected = ck.model.parameters().size();
  if (blocks != expected) {
    Fail(ErrorCode::kFormat, "checkpoint: " + std::to_string(blocks) +
                                 " parameter blocks, configuration needs " +
                                 std::to_string(expected));
  }
  for (std::uint32_t b = 0; b < blocks; ++b) {
    const std::string name = in.str(in.u32());
    Parameter<float>* p = ck.model.find(name);
    if (!p) Fail(ErrorCode::kFormat, "checkpoint: unknown parameter block '" + name + "'");
    Shape shape(in.u32());
    for (auto& extent : shape) extent = in.u32();
    if (shape != p->value.shape()) {
      Fail(ErrorCode::kFormat, "checkpoint: block '" + name + "' has shape " +
                                   ShapeString(shape) + ", expected " +
                                   p->value.shape_string());
    }
    in.need(p->value.size() * 4);
    for (float& v : p->value.values()) v = in.f32();
  }
  if (in.remaining() != 0) Fail(ErrorCode::kFormat, "checkpoint: trailing bytes");
  return ck;
}

void SaveCheckpoint(const std::string& path, const FieldModel<float>& model,
                    const std::optional<CameraIntrinsics>& intrinsics) {
  const std::string tmp = path + ".tmp";
  WriteFileBytes(tmp, EncodeCheckpoint(model, intrinsics));
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) Fail(ErrorCode::kIo, "cannot move checkpoint into place at " + path + ": " + ec.message());
}

Checkpoint LoadCheckpoint(const std::string& path) {
  try {
    return DecodeCheckpoint(ReadFileBytes(path));
  } catch (const Error& e) {
    throw Error(e.code(), path + ": " + e.what());
  }
}

}  // namespace ffield

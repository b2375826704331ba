#include "ffield/encoding.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "ffield/ops.hpp"

namespace ffield {

void EncodingConfig::validate() const {
  std::ostringstream why;
  if (frequency_bands < 1) why << "frequency_bands < 1; ";
  if (hash_levels < 1) why << "hash_levels < 1; ";
  if (base_resolution < 1) why << "base_resolution < 1; ";
  if (!(per_level_scale > 1.0)) why << "per_level_scale must exceed 1; ";
  if (table_size_log2 < 1 || table_size_log2 > 30) why << "table_size_log2 outside 1..30; ";
  if (features_per_level < 1) why << "features_per_level < 1; ";
  if (sh_degree < 1 || sh_degree > 4) why << "sh_degree outside 1..4; ";
  if (!why.str().empty()) Fail(ErrorCode::kInvalidArgument, "encoding config: " + why.str());
}

HashGridLayout::HashGridLayout(const EncodingConfig& config)
    : features_(config.features_per_level) {
  config.validate();
  const std::uint64_t capacity = std::uint64_t{1} << config.table_size_log2;
  for (int l = 0; l < config.hash_levels; ++l) {
    HashLevel level;
    level.resolution = static_cast<std::uint32_t>(
        std::floor(config.base_resolution * std::pow(config.per_level_scale, l)));
    const std::uint64_t side = level.resolution + 1ull;
    const std::uint64_t dense_rows = side * side * side;
    level.dense = dense_rows <= capacity;
    level.rows = static_cast<std::uint32_t>(level.dense ? dense_rows : capacity);
    levels_.push_back(level);
  }
}

namespace {

template <typename T>
T ClampUnit(T v, bool* clamped) {
  if (v < T(0)) {
    *clamped = true;
    return T(0);
  }
  if (v > T(1)) {
    *clamped = true;
    return T(1);
  }
  return v;
}

// Cell origin and fractional offset along one axis of a level grid.
template <typename T>
inline void Locate(T unit, std::uint32_t resolution, std::uint32_t* cell, T* frac) {
  const T scaled = unit * static_cast<T>(resolution);
  std::uint32_t c = static_cast<std::uint32_t>(std::floor(scaled));
  if (c >= resolution) c = resolution - 1;
  *cell = c;
  *frac = scaled - static_cast<T>(c);
}

template <typename T>
Tensor<T> ClampedPositions(const Tensor<T>& positions, ClampCounter* counter) {
  if (positions.rank() != 2 || positions.cols() != 3) {
    Fail(ErrorCode::kShape, "encode: positions must be M x 3, got " + positions.shape_string());
  }
  Tensor<T> out = positions;
  std::uint64_t clamped = 0;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    bool any = false;
    for (int a = 0; a < 3; ++a) out(r, a) = ClampUnit(out(r, a), &any);
    clamped += any ? 1 : 0;
  }
  if (counter) {
    counter->clamped += clamped;
    counter->total += out.rows();
  }
  return out;
}

}  // namespace

template <typename T>
void FrequencyEncode(const T* position, int bands, T* out) {
  const T pi = std::numbers::pi_v<T>;
  for (int a = 0; a < 3; ++a) {
    T freq = pi;
    for (int k = 0; k < bands; ++k) {
      const T arg = freq * position[a];
      out[a * 2 * bands + 2 * k] = std::sin(arg);
      out[a * 2 * bands + 2 * k + 1] = std::cos(arg);
      freq *= T(2);
    }
  }
}

template <typename T>
Tensor<T> FrequencyEncodeBatch(const Tensor<T>& positions, int bands, ClampCounter* counter) {
  const Tensor<T> unit = ClampedPositions(positions, counter);
  const std::size_t width = 6u * bands;
  Tensor<T> out({unit.rows(), width});
#pragma omp parallel for schedule(static) if (unit.rows() > 4096)
  for (std::size_t r = 0; r < unit.rows(); ++r) {
    FrequencyEncode(unit.data() + 3 * r, bands, out.data() + r * width);
  }
  return out;
}

template <typename T>
Var HashGridEncode(Tape<T>& tape, const Tensor<T>& positions, const HashGridLayout& layout,
                   const std::vector<Var>& tables, ClampCounter* counter) {
  const auto& levels = layout.levels();
  const std::size_t features = static_cast<std::size_t>(layout.features_per_level());
  if (tables.size() != levels.size()) {
    Fail(ErrorCode::kShape, "hashgrid_encode: expected " + std::to_string(levels.size()) +
                                " level tables, got " + std::to_string(tables.size()));
  }
  for (std::size_t l = 0; l < levels.size(); ++l) {
    const Tensor<T>& t = tape.value(tables[l]);
    if (t.rows() != levels[l].rows || t.cols() != features) {
      Fail(ErrorCode::kShape, "hashgrid_encode: level " + std::to_string(l) + " table is " +
                                  t.shape_string() + ", expected [" +
                                  std::to_string(levels[l].rows) + "x" +
                                  std::to_string(features) + "]");
    }
  }
  const Var unit_var = tape.constant(ClampedPositions(positions, counter));
  const Tensor<T>& unit = tape.value(unit_var);
  const std::size_t m = unit.rows();
  const std::size_t width = levels.size() * features;
  Tensor<T> out({m, width});

  std::vector<const T*> table_data;
  for (Var t : tables) table_data.push_back(tape.value(t).data());

#pragma omp parallel for schedule(static) if (m > 1024)
  for (std::size_t r = 0; r < m; ++r) {
    const T* p = unit.data() + 3 * r;
    T* o = out.data() + r * width;
    for (std::size_t l = 0; l < levels.size(); ++l) {
      std::uint32_t c[3];
      T f[3];
      for (int a = 0; a < 3; ++a) Locate(p[a], levels[l].resolution, &c[a], &f[a]);
      T* ol = o + l * features;
      for (std::size_t k = 0; k < features; ++k) ol[k] = T(0);
      for (int corner = 0; corner < 8; ++corner) {
        T w = T(1);
        std::uint32_t v[3];
        for (int a = 0; a < 3; ++a) {
          const bool hi = (corner >> a) & 1;
          v[a] = c[a] + (hi ? 1u : 0u);
          w *= hi ? f[a] : T(1) - f[a];
        }
        const T* row = table_data[l] + layout.index(l, v[0], v[1], v[2]) * features;
        for (std::size_t k = 0; k < features; ++k) ol[k] += w * row[k];
      }
    }
  }

  std::vector<Var> inputs = tables;
  inputs.push_back(unit_var);
  return tape.record("hashgrid_encode", std::move(out), inputs,
                     [tables, unit_var, &layout](Tape<T>& t, Var self) {
    const auto& levels = layout.levels();
    const std::size_t features = static_cast<std::size_t>(layout.features_per_level());
    const Tensor<T>& g = t.grad(self);
    const Tensor<T>& unit = t.value(unit_var);
    const std::size_t width = levels.size() * features;
    std::vector<T*> grads(levels.size(), nullptr);
    for (std::size_t l = 0; l < levels.size(); ++l) {
      if (Tensor<T>* gt = t.grad_if_needed(tables[l])) grads[l] = gt->data();
    }
    // Levels own disjoint tables, so splitting by level is race-free and the
    // per-table accumulation order is fixed.
#pragma omp parallel for schedule(dynamic)
    for (std::size_t l = 0; l < levels.size(); ++l) {
      if (!grads[l]) continue;
      for (std::size_t r = 0; r < unit.rows(); ++r) {
        const T* p = unit.data() + 3 * r;
        const T* gl = g.data() + r * width + l * features;
        std::uint32_t c[3];
        T f[3];
        for (int a = 0; a < 3; ++a) Locate(p[a], levels[l].resolution, &c[a], &f[a]);
        for (int corner = 0; corner < 8; ++corner) {
          T w = T(1);
          std::uint32_t v[3];
          for (int a = 0; a < 3; ++a) {
            const bool hi = (corner >> a) & 1;
            v[a] = c[a] + (hi ? 1u : 0u);
            w *= hi ? f[a] : T(1) - f[a];
          }
          T* row = grads[l] + layout.index(l, v[0], v[1], v[2]) * features;
          for (std::size_t k = 0; k < features; ++k) row[k] += w * gl[k];
        }
      }
    }
  });
}

template <typename T>
Var EncodePositions(Tape<T>& tape, const Tensor<T>& positions, const EncodingConfig& config,
                    const HashGridLayout& layout, const std::vector<Var>& tables,
                    ClampCounter* counter) {
  const Var freq = tape.constant(FrequencyEncodeBatch(positions, config.frequency_bands, counter));
  const Var hash = HashGridEncode(tape, positions, layout, tables, nullptr);
  return ops::concat_cols(tape, {freq, hash});
}

template <typename T>
void ShEncode(const T* d, int degree, T* out) {
  const T norm = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
  if (!(std::abs(norm - T(1)) <= T(1e-4))) {
    std::ostringstream os;
    os << "sh_encode: direction must be unit length, |d| = " << norm;
    Fail(ErrorCode::kInvalidArgument, os.str());
  }
  if (degree < 1 || degree > 4) Fail(ErrorCode::kInvalidArgument, "sh_encode: degree outside 1..4");
  const T x = d[0], y = d[1], z = d[2];
  const T xx = x * x, yy = y * y, zz = z * z;
  out[0] = T(0.28209479177387814);
  if (degree <= 1) return;
  out[1] = T(-0.48860251190291987) * y;
  out[2] = T(0.48860251190291987) * z;
  out[3] = T(-0.48860251190291987) * x;
  if (degree <= 2) return;
  out[4] = T(1.0925484305920792) * x * y;
  out[5] = T(-1.0925484305920792) * y * z;
  out[6] = T(0.94617469575755997) * zz - T(0.31539156525251999);
  out[7] = T(-1.0925484305920792) * x * z;
  out[8] = T(0.54627421529603959) * (xx - yy);
  if (degree <= 3) return;
  out[9] = T(0.59004358992664352) * y * (T(-3) * xx + yy);
  out[10] = T(2.8906114426405538) * x * y * z;
  out[11] = T(0.45704579946446572) * y * (T(1) - T(5) * zz);
  out[12] = T(0.3731763325901154) * z * (T(5) * zz - T(3));
  out[13] = T(0.45704579946446572) * x * (T(1) - T(5) * zz);
  out[14] = T(1.4453057213202769) * z * (xx - yy);
  out[15] = T(0.59004358992664352) * x * (T(-1) * xx + T(3) * yy);
}

template <typename T>
Tensor<T> ShEncodeBatch(const Tensor<T>& directions, int degree) {
  if (directions.rank() != 2 || directions.cols() != 3) {
    Fail(ErrorCode::kShape, "sh_encode: directions must be M x 3, got " + directions.shape_string());
  }
  const std::size_t width = static_cast<std::size_t>(degree) * degree;
  Tensor<T> out({directions.rows(), width});
  for (std::size_t r = 0; r < directions.rows(); ++r) {
    ShEncode(directions.data() + 3 * r, degree, out.data() + r * width);
  }
  return out;
}

#define FFIELD_INSTANTIATE_ENCODING(T)                                                   \
  template void FrequencyEncode<T>(const T*, int, T*);                                  \
  template Tensor<T> FrequencyEncodeBatch<T>(const Tensor<T>&, int, ClampCounter*);     \
  template Var HashGridEncode<T>(Tape<T>&, const Tensor<T>&, const HashGridLayout&,     \
                                 const std::vector<Var>&, ClampCounter*);               \
  template Var EncodePositions<T>(Tape<T>&, const Tensor<T>&, const EncodingConfig&,    \
                                  const HashGridLayout&, const std::vector<Var>&,       \
                                  ClampCounter*);                                       \
  template void ShEncode<T>(const T*, int, T*);                                         \
  template Tensor<T> ShEncodeBatch<T>(const Tensor<T>&, int);

FFIELD_INSTANTIATE_ENCODING(float)
FFIELD_INSTANTIATE_ENCODING(double)

}  // namespace ffield

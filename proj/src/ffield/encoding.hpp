#pragma once

#include <atomic>
#include <cstdint>
#include <vector>

#include "ffield/tape.hpp"

namespace ffield {

struct EncodingConfig {
  int frequency_bands = 2;
  int hash_levels = 16;
  int base_resolution = 16;
  double per_level_scale = 1.3819;
  int table_size_log2 = 19;
  int features_per_level = 2;
  int sh_degree = 4;

  void validate() const;
  std::size_t frequency_dim() const { return 6u * frequency_bands; }
  std::size_t hash_dim() const {
    return static_cast<std::size_t>(hash_levels) * features_per_level;
  }
  // concat(frequency, hash grid)
  std::size_t position_dim() const { return frequency_dim() + hash_dim(); }
  std::size_t direction_dim() const {
    return static_cast<std::size_t>(sh_degree) * sh_degree;
  }
};

// x*1 XOR y*2654435761 XOR z*805459861 in uint32 arithmetic.
inline std::uint32_t SpatialHash(std::uint32_t x, std::uint32_t y, std::uint32_t z) {
  return (x * 1u) ^ (y * 2654435761u) ^ (z * 805459861u);
}

struct HashLevel {
  std::uint32_t resolution = 0;  // cells per axis; vertices = resolution + 1
  std::uint32_t rows = 0;        // table rows allocated for this level
  bool dense = false;            // collision-free indexing
};

class HashGridLayout {
 public:
  explicit HashGridLayout(const EncodingConfig& config);

  const std::vector<HashLevel>& levels() const { return levels_; }
  int features_per_level() const { return features_; }

  std::uint32_t index(std::size_t level, std::uint32_t x, std::uint32_t y,
                      std::uint32_t z) const {
    const HashLevel& l = levels_[level];
    if (l.dense) {
      const std::uint32_t side = l.resolution + 1;
      return x + side * (y + side * z);
    }
    return SpatialHash(x, y, z) & (l.rows - 1);
  }

 private:
  std::vector<HashLevel> levels_;
  int features_;
};

// Counts positions that had to be clamped into the unit cube.
struct ClampCounter {
  std::atomic<std::uint64_t> clamped{0};
  std::atomic<std::uint64_t> total{0};

  double rate() const {
    const auto t = total.load();
    return t ? static_cast<double>(clamped.load()) / static_cast<double>(t) : 0.0;
  }
};

// Per axis a and band k: out[a*2L + 2k] = sin(2^k pi x_a), out[.. + 1] = cos(..).
template <typename T>
void FrequencyEncode(const T* position, int bands, T* out);

// positions: M x 3 unit-cube coordinates -> M x 6L (not differentiable).
template <typename T>
Tensor<T> FrequencyEncodeBatch(const Tensor<T>& positions, int bands,
                               ClampCounter* counter = nullptr);

// Multiresolution hash-grid lookup with trilinear interpolation. `tables`
// holds one (rows x F) var per level; gradients scatter into touched rows.
template <typename T>
Var HashGridEncode(Tape<T>& tape, const Tensor<T>& positions,
                   const HashGridLayout& layout, const std::vector<Var>& tables,
                   ClampCounter* counter = nullptr);

// concat(frequency encoding, hash-grid encoding).
template <typename T>
Var EncodePositions(Tape<T>& tape, const Tensor<T>& positions,
                    const EncodingConfig& config, const HashGridLayout& layout,
                    const std::vector<Var>& tables, ClampCounter* counter = nullptr);

// Real spherical harmonics up to band degree-1 (degree in 1..4). Throws
// kInvalidArgument when |d| differs from 1 by more than 1e-4.
template <typename T>
void ShEncode(const T* direction, int degree, T* out);

template <typename T>
Tensor<T> ShEncodeBatch(const Tensor<T>& directions, int degree);

}  // namespace ffield

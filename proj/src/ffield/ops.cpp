#include "ffield/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

namespace ffield::ops {
namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

template <typename T>
ConstMatMap<T> AsMatrix(const Tensor<T>& t) {
  return ConstMatMap<T>(t.data(), static_cast<Eigen::Index>(t.rows()),
                        static_cast<Eigen::Index>(t.cols()));
}
template <typename T>
MatMap<T> AsMatrix(Tensor<T>& t) {
  return MatMap<T>(t.data(), static_cast<Eigen::Index>(t.rows()),
                   static_cast<Eigen::Index>(t.cols()));
}

Shape Matrix2(std::size_t rows, std::size_t cols) { return {rows, cols}; }

[[noreturn]] void ShapeMismatch(const char* op, const Shape& a, const Shape& b) {
  Fail(ErrorCode::kShape, std::string(op) + ": shape mismatch " +
                              ShapeString(a) + " vs " + ShapeString(b));
}

template <typename T>
void RequireSameShape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) ShapeMismatch(op, a.shape(), b.shape());
}

// Elementwise unary op: forward f(x); backward g * df(x, y).
template <typename T, typename F, typename D>
Var Unary(Tape<T>& tape, const char* op, Var x, F f, D df) {
  const Tensor<T>& xv = tape.value(x);
  Tensor<T> out(xv.shape());
  const std::size_t n = xv.size();
  const T* in = xv.data();
  T* o = out.data();
#pragma omp parallel for simd schedule(static) if (n > 65536)
  for (std::size_t i = 0; i < n; ++i) o[i] = f(in[i]);
  return tape.record(op, std::move(out), {x}, [x, df](Tape<T>& t, Var self) {
    Tensor<T>* gx = t.grad_if_needed(x);
    if (!gx) return;
    const T* g = t.grad(self).data();
    const T* xin = t.value(x).data();
    const T* y = t.value(self).data();
    T* gi = gx->data();
    const std::size_t m = gx->size();
#pragma omp parallel for simd schedule(static) if (m > 65536)
    for (std::size_t i = 0; i < m; ++i) gi[i] += g[i] * df(xin[i], y[i]);
  });
}

}  // namespace

template <typename T>
Var matmul(Tape<T>& tape, Var a, Var b) {
  const Tensor<T>& av = tape.value(a);
  const Tensor<T>& bv = tape.value(b);
  if (av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.rows()) {
    ShapeMismatch("matmul", av.shape(), bv.shape());
  }
  Tensor<T> out(Matrix2(av.rows(), bv.cols()));
  AsMatrix(out).noalias() = AsMatrix(av) * AsMatrix(bv);
  return tape.record("matmul", std::move(out), {a, b}, [a, b](Tape<T>& t, Var self) {
    const auto g = AsMatrix(t.grad(self));
    if (Tensor<T>* ga = t.grad_if_needed(a)) {
      AsMatrix(*ga).noalias() += g * AsMatrix(t.value(b)).transpose();
    }
    if (Tensor<T>* gb = t.grad_if_needed(b)) {
      AsMatrix(*gb).noalias() += AsMatrix(t.value(a)).transpose() * g;
    }
  });
}

template <typename T>
Var add(Tape<T>& tape, Var a, Var b) {
  const Tensor<T>& av = tape.value(a);
  const Tensor<T>& bv = tape.value(b);
  RequireSameShape("add", av, bv);
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return tape.record("add", std::move(out), {a, b}, [a, b](Tape<T>& t, Var self) {
    const Tensor<T>& g = t.grad(self);
    for (Var v : {a, b}) {
      if (Tensor<T>* gv = t.grad_if_needed(v)) {
        for (std::size_t i = 0; i < g.size(); ++i) (*gv)[i] += g[i];
      }
    }
  });
}

template <typename T>
Var sub(Tape<T>& tape, Var a, Var b) {
  const Tensor<T>& av = tape.value(a);
  const Tensor<T>& bv = tape.value(b);
  RequireSameShape("sub", av, bv);
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return tape.record("sub", std::move(out), {a, b}, [a, b](Tape<T>& t, Var self) {
    const Tensor<T>& g = t.grad(self);
    if (Tensor<T>* ga = t.grad_if_needed(a)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    }
    if (Tensor<T>* gb = t.grad_if_needed(b)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
    }
  });
}

template <typename T>
Var mul(Tape<T>& tape, Var a, Var b) {
  const Tensor<T>& av = tape.value(a);
  const Tensor<T>& bv = tape.value(b);
  RequireSameShape("mul", av, bv);
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return tape.record("mul", std::move(out), {a, b}, [a, b](Tape<T>& t, Var self) {
    const Tensor<T>& g = t.grad(self);
    if (Tensor<T>* ga = t.grad_if_needed(a)) {
      const Tensor<T>& bv = t.value(b);
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * bv[i];
    }
    if (Tensor<T>* gb = t.grad_if_needed(b)) {
      const Tensor<T>& av = t.value(a);
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * av[i];
    }
  });
}

template <typename T>
Var add_bias(Tape<T>& tape, Var x, Var bias) {
  const Tensor<T>& xv = tape.value(x);
  const Tensor<T>& bv = tape.value(bias);
  if (xv.rank() != 2 || bv.size() != xv.cols()) {
    ShapeMismatch("add_bias", xv.shape(), bv.shape());
  }
  Tensor<T> out(xv.shape());
  AsMatrix(out) = AsMatrix(xv).rowwise() +
                  ConstMatMap<T>(bv.data(), 1, static_cast<Eigen::Index>(bv.size())).row(0);
  return tape.record("add_bias", std::move(out), {x, bias},
                     [x, bias](Tape<T>& t, Var self) {
    const auto g = AsMatrix(t.grad(self));
    if (Tensor<T>* gx = t.grad_if_needed(x)) AsMatrix(*gx) += g;
    if (Tensor<T>* gb = t.grad_if_needed(bias)) {
      MatMap<T>(gb->data(), 1, static_cast<Eigen::Index>(gb->size())).row(0) +=
          g.colwise().sum();
    }
  });
}

template <typename T>
Var scale(Tape<T>& tape, Var x, T factor) {
  return Unary(
      tape, "scale", x, [factor](T v) { return v * factor; },
      [factor](T, T) { return factor; });
}

template <typename T>
Var relu(Tape<T>& tape, Var x) {
  return Unary(
      tape, "relu", x, [](T v) { return v > T(0) ? v : T(0); },
      [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Var sigmoid(Tape<T>& tape, Var x) {
  return Unary(
      tape, "sigmoid", x, [](T v) { return T(1) / (T(1) + std::exp(-v)); },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var softplus(Tape<T>& tape, Var x) {
  return Unary(
      tape, "softplus", x,
      [](T v) { return v > T(20) ? v : std::log1p(std::exp(v)); },
      [](T v, T) { return T(1) / (T(1) + std::exp(-v)); });
}

template <typename T>
Var exp(Tape<T>& tape, Var x) {
  return Unary(
      tape, "exp", x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Var square(Tape<T>& tape, Var x) {
  return Unary(
      tape, "square", x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <typename T>
Var abs(Tape<T>& tape, Var x) {
  return Unary(
      tape, "abs", x, [](T v) { return std::abs(v); },
      [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Var concat_cols(Tape<T>& tape, const std::vector<Var>& parts) {
  if (parts.empty()) Fail(ErrorCode::kShape, "concat_cols: no inputs");
  const std::size_t rows = tape.value(parts[0]).rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (Var p : parts) {
    const Tensor<T>& v = tape.value(p);
    if (v.rank() != 2 || v.rows() != rows) {
      ShapeMismatch("concat_cols", tape.value(parts[0]).shape(), v.shape());
    }
    widths.push_back(v.cols());
    total += v.cols();
  }
  Tensor<T> out(Matrix2(rows, total));
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor<T>& v = tape.value(parts[k]);
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(v.data() + r * widths[k], widths[k], out.data() + r * total + offset);
    }
    offset += widths[k];
  }
  return tape.record("concat_cols", std::move(out), parts,
                     [parts, widths, total](Tape<T>& t, Var self) {
    const Tensor<T>& g = t.grad(self);
    const std::size_t rows = g.rows();
    std::size_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      if (Tensor<T>* gp = t.grad_if_needed(parts[k])) {
        for (std::size_t r = 0; r < rows; ++r) {
          const T* src = g.data() + r * total + offset;
          T* dst = gp->data() + r * widths[k];
          for (std::size_t c = 0; c < widths[k]; ++c) dst[c] += src[c];
        }
      }
      offset += widths[k];
    }
  });
}

template <typename T>
Var slice_cols(Tape<T>& tape, Var x, std::size_t begin, std::size_t end) {
  const Tensor<T>& xv = tape.value(x);
  if (xv.rank() != 2 || begin >= end || end > xv.cols()) {
    Fail(ErrorCode::kShape, "slice_cols: columns [" + std::to_string(begin) +
                                ", " + std::to_string(end) + ") out of range for " +
                                xv.shape_string());
  }
  const std::size_t rows = xv.rows();
  const std::size_t width = end - begin;
  const std::size_t cols = xv.cols();
  Tensor<T> out(Matrix2(rows, width));
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(xv.data() + r * cols + begin, width, out.data() + r * width);
  }
  return tape.record("slice_cols", std::move(out), {x},
                     [x, begin, width, cols](Tape<T>& t, Var self) {
    Tensor<T>* gx = t.grad_if_needed(x);
    if (!gx) return;
    const Tensor<T>& g = t.grad(self);
    for (std::size_t r = 0; r < g.rows(); ++r) {
      for (std::size_t c = 0; c < width; ++c) {
        (*gx)[r * cols + begin + c] += g[r * width + c];
      }
    }
  });
}

template <typename T>
Var sum(Tape<T>& tape, Var x) {
  const Tensor<T>& xv = tape.value(x);
  T total = T(0);
  for (const T v : xv.values()) total += v;
  return tape.record("sum", Tensor<T>::Scalar(total), {x}, [x](Tape<T>& t, Var self) {
    Tensor<T>* gx = t.grad_if_needed(x);
    if (!gx) return;
    const T g = t.grad(self)[0];
    for (T& v : gx->values()) v += g;
  });
}

template <typename T>
Var mean(Tape<T>& tape, Var x) {
  const std::size_t n = tape.value(x).size();
  if (n == 0) Fail(ErrorCode::kShape, "mean: empty tensor");
  return scale(tape, sum(tape, x), T(1) / static_cast<T>(n));
}

#define FFIELD_INSTANTIATE_OPS(T)                                            \
  template Var matmul<T>(Tape<T>&, Var, Var);                                \
  template Var add<T>(Tape<T>&, Var, Var);                                   \
  template Var sub<T>(Tape<T>&, Var, Var);                                   \
  template Var mul<T>(Tape<T>&, Var, Var);                                   \
  template Var add_bias<T>(Tape<T>&, Var, Var);                              \
  template Var scale<T>(Tape<T>&, Var, T);                                   \
  template Var relu<T>(Tape<T>&, Var);                                       \
  template Var sigmoid<T>(Tape<T>&, Var);                                    \
  template Var softplus<T>(Tape<T>&, Var);                                   \
  template Var exp<T>(Tape<T>&, Var);                                        \
  template Var square<T>(Tape<T>&, Var);                                     \
  template Var abs<T>(Tape<T>&, Var);                                        \
  template Var concat_cols<T>(Tape<T>&, const std::vector<Var>&);            \
  template Var slice_cols<T>(Tape<T>&, Var, std::size_t, std::size_t);       \
  template Var sum<T>(Tape<T>&, Var);                                        \
  template Var mean<T>(Tape<T>&, Var);

FFIELD_INSTANTIATE_OPS(float)
FFIELD_INSTANTIATE_OPS(double)

}  // namespace ffield::ops

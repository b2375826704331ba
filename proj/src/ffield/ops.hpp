#pragma once

#include <vector>

#include "ffield/tape.hpp"

// Differentiable tensor ops. All ops take rank-2 (rows x cols) operands;
// the only broadcast is a 1 x cols bias added to every row.
namespace ffield::ops {

template <typename T> Var matmul(Tape<T>& tape, Var a, Var b);
template <typename T> Var add(Tape<T>& tape, Var a, Var b);
template <typename T> Var sub(Tape<T>& tape, Var a, Var b);
template <typename T> Var mul(Tape<T>& tape, Var a, Var b);
template <typename T> Var add_bias(Tape<T>& tape, Var x, Var bias);
template <typename T> Var scale(Tape<T>& tape, Var x, T factor);

template <typename T> Var relu(Tape<T>& tape, Var x);
template <typename T> Var sigmoid(Tape<T>& tape, Var x);
template <typename T> Var softplus(Tape<T>& tape, Var x);
template <typename T> Var exp(Tape<T>& tape, Var x);
template <typename T> Var square(Tape<T>& tape, Var x);
template <typename T> Var abs(Tape<T>& tape, Var x);

template <typename T> Var concat_cols(Tape<T>& tape, const std::vector<Var>& parts);
template <typename T> Var slice_cols(Tape<T>& tape, Var x, std::size_t begin, std::size_t end);

// Sum of every element, as a 1-element tensor.
template <typename T> Var sum(Tape<T>& tape, Var x);
template <typename T> Var mean(Tape<T>& tape, Var x);

// x * W + b
template <typename T>
Var linear(Tape<T>& tape, Var x, Var weight, Var bias) {
  return add_bias(tape, matmul(tape, x, weight), bias);
}

}  // namespace ffield::ops

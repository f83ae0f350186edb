#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "error.hpp"

namespace solid {

/// Dense row-major 2-D array. Row index is the vertical coordinate.
template <class T>
struct Grid {
  int rows = 0;
  int cols = 0;
  std::vector<T> data;

  Grid() = default;
  Grid(int r, int c, T fill = T{}) : rows(r), cols(c), data(std::size_t(r) * c, fill) {}
  Grid(int r, int c, std::vector<T> values) : rows(r), cols(c), data(std::move(values)) {
    if (!(data.size() == std::size_t(r) * c)) fail(ErrorKind::Shape, "grid data length " + std::to_string(data.size()) + " != " + std::to_string(r) + "x" + std::to_string(c));
  }

  std::size_t size() const { return data.size(); }
  T& operator()(int r, int c) { return data[std::size_t(r) * cols + c]; }
  const T& operator()(int r, int c) const { return data[std::size_t(r) * cols + c]; }
  T& operator[](std::size_t i) { return data[i]; }
  const T& operator[](std::size_t i) const { return data[i]; }

  bool same_shape(int r, int c) const { return rows == r && cols == c; }
  template <class U>
  bool same_shape(const Grid<U>& o) const { return rows == o.rows && cols == o.cols; }

  friend bool operator==(const Grid& a, const Grid& b) {
    return a.rows == b.rows && a.cols == b.cols && a.data == b.data;
  }
};

using Field = Grid<double>;
using Mask = Grid<std::uint8_t>;

template <class A, class B>
void require_same_shape(const Grid<A>& a, const Grid<B>& b, const char* what) {
  if (!(a.same_shape(b))) fail(ErrorKind::Shape, std::string(what) + ": shape " + std::to_string(a.rows) + "x" + std::to_string(a.cols) + " vs " + std::to_string(b.rows) + "x" + std::to_string(b.cols));
}

inline std::size_t popcount(const Mask& m) {
  std::size_t n = 0;
  for (auto v : m.data) n += v != 0;
  return n;
}

}  // namespace solid

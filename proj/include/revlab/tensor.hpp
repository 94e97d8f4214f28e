#pragma once

#include <cassert>
#include <cstddef>
#include <vector>

namespace revlab {

// Row-major 2D buffer. Vectors are 1 x n. Deliberately minimal: the model code
// drives BLAS directly and only needs contiguous storage with shape attached.
template <typename T>
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<T> v;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), v(static_cast<size_t>(r) * c, T(0)) {}

  T* row(int r) { return v.data() + static_cast<size_t>(r) * cols; }
  const T* row(int r) const { return v.data() + static_cast<size_t>(r) * cols; }
  T& at(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
  T at(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }
  size_t size() const { return v.size(); }
  T* data() { return v.data(); }
  const T* data() const { return v.data(); }
  void zero() { std::fill(v.begin(), v.end(), T(0)); }
};

// c = alpha * op(a) op(b) + beta * c, row-major, leading dims = full widths.
// Dispatches to cblas_sgemm / cblas_dgemm.
void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a, int lda,
          const float* b, int ldb, float beta, float* c, int ldc);
void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha, const double* a, int lda,
          const double* b, int ldb, double beta, double* c, int ldc);

// pins BLAS to one thread; called once before any gemm (we run single-threaded
// and deterministic, parallelism would come from batch-level workers instead)
void pin_blas_single_thread();

}  // namespace revlab

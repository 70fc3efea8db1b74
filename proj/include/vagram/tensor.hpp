#pragma once

#include <cmath>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "vagram/common.hpp"

namespace vagram {

// Dense row-major f64 tensor of rank 0..2. A scalar is any tensor with a
// single element; vectors are shape {n}; matrices {rows, cols}.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<std::size_t>(count(shape_)), 0.0);
  }

  Tensor(std::vector<int> shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (count(shape_) != static_cast<long>(data_.size()))
      throw ShapeError("Tensor: shape " + shape_str(shape_) + " does not match data length " +
                       std::to_string(data_.size()));
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

  static Tensor ones(std::vector<int> shape) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), 1.0);
    return t;
  }

  static Tensor full(std::vector<int> shape, double v) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
  }

  static Tensor row(const std::vector<double>& v) { return Tensor({1, static_cast<int>(v.size())}, v); }

  static Tensor vec(const std::vector<double>& v) { return Tensor({static_cast<int>(v.size())}, v); }

  static Tensor identity(int n) {
    Tensor t({n, n});
    for (int i = 0; i < n; ++i) t.data_[static_cast<std::size_t>(i) * n + i] = 1.0;
    return t;
  }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  long size() const { return static_cast<long>(data_.size()); }
  bool is_scalar() const { return data_.size() == 1; }

  // Rows/cols with rank-1 treated as a single row vector.
  int rows() const { return rank() == 2 ? shape_[0] : 1; }
  int cols() const { return rank() == 2 ? shape_[1] : (rank() == 1 ? shape_[0] : 1); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& raw() { return data_; }
  const std::vector<double>& raw() const { return data_; }

  double& operator[](long i) { return data_[static_cast<std::size_t>(i)]; }
  double operator[](long i) const { return data_[static_cast<std::size_t>(i)]; }

  double& at(int r, int c) { return data_[static_cast<std::size_t>(r) * cols() + c]; }
  double at(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols() + c]; }

  double value() const {
    if (!is_scalar()) throw ShapeError("Tensor::value: tensor of shape " + shape_str(shape_) + " is not scalar");
    return data_[0];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  std::string shape_str() const { return shape_str(shape_); }

  static std::string shape_str(const std::vector<int>& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i) out += ",";
      out += std::to_string(s[i]);
    }
    return out + "]";
  }

  static long count(const std::vector<int>& shape) {
    long n = 1;
    for (int d : shape) {
      if (d < 0) throw ShapeError("Tensor: negative dimension in " + shape_str(shape));
      n *= d;
    }
    return n;
  }

 private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

namespace tensor_ops {

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

inline Tensor map(const Tensor& a, const std::function<double(double)>& f) {
  Tensor out = a;
  for (long i = 0; i < out.size(); ++i) out[i] = f(out[i]);
  return out;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Tensor out = a;
  for (long i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  Tensor out = a;
  for (long i = 0; i < out.size(); ++i) out[i] -= b[i];
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  Tensor out = a;
  for (long i = 0; i < out.size(); ++i) out[i] *= b[i];
  return out;
}

inline Tensor minimum(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "min");
  Tensor out = a;
  for (long i = 0; i < out.size(); ++i) out[i] = a[i] <= b[i] ? a[i] : b[i];
  return out;
}

inline Tensor scale(const Tensor& a, double k) {
  Tensor out = a;
  for (long i = 0; i < out.size(); ++i) out[i] *= k;
  return out;
}

inline Tensor add_scalar(const Tensor& a, double k) {
  Tensor out = a;
  for (long i = 0; i < out.size(); ++i) out[i] += k;
  return out;
}

// a: [m,n], b: row of n entries (shape {n} or {1,n}); adds b to every row.
inline Tensor add_row(const Tensor& a, const Tensor& b) {
  if (b.size() != a.cols())
    throw ShapeError("add_row: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  Tensor out = a;
  const int m = a.rows(), n = a.cols();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[static_cast<long>(i) * n + j] += b[j];
  return out;
}

// C = A * B for rank-2 operands, [m,k] x [k,n] -> [m,n].
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows())
    throw ShapeError("matmul: incompatible shapes " + a.shape_str() + " x " + b.shape_str());
  const int m = a.rows(), k = a.cols(), n = b.cols();
  Tensor c({m, n});
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = c.data();
  for (int i = 0; i < m; ++i) {
    const double* arow = pa + static_cast<long>(i) * k;
    double* crow = pc + static_cast<long>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = pb + static_cast<long>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

// C = A * B^T, [m,k] x [n,k] -> [m,n].
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols())
    throw ShapeError("matmul_nt: incompatible shapes " + a.shape_str() + " x " + b.shape_str() + "^T");
  const int m = a.rows(), k = a.cols(), n = b.rows();
  Tensor c({m, n});
  for (int i = 0; i < m; ++i) {
    const double* arow = a.data() + static_cast<long>(i) * k;
    for (int j = 0; j < n; ++j) {
      const double* brow = b.data() + static_cast<long>(j) * k;
      double acc = 0.0;
      for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
      c.at(i, j) = acc;
    }
  }
  return c;
}

// C = A^T * B, [k,m] x [k,n] -> [m,n].
inline Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.rows() != b.rows())
    throw ShapeError("matmul_tn: incompatible shapes " + a.shape_str() + "^T x " + b.shape_str());
  const int k = a.rows(), m = a.cols(), n = b.cols();
  Tensor c({m, n});
  for (int p = 0; p < k; ++p) {
    const double* arow = a.data() + static_cast<long>(p) * m;
    const double* brow = b.data() + static_cast<long>(p) * n;
    for (int i = 0; i < m; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* crow = c.data() + static_cast<long>(i) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

inline Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (long i = 0; i < a.size(); ++i) acc += a[i];
  return Tensor::scalar(acc);
}

inline Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw ShapeError("mean: empty tensor");
  return Tensor::scalar(sum(a).value() / static_cast<double>(a.size()));
}

// [m,n] -> [m,1], sum over columns within each row.
inline Tensor row_sum(const Tensor& a) {
  const int m = a.rows(), n = a.cols();
  Tensor out({m, 1});
  for (int i = 0; i < m; ++i) {
    double acc = 0.0;
    for (int j = 0; j < n; ++j) acc += a[static_cast<long>(i) * n + j];
    out[i] = acc;
  }
  return out;
}

// [m,n] -> row of n sums over rows.
inline Tensor col_sum(const Tensor& a) {
  const int m = a.rows(), n = a.cols();
  Tensor out({1, n});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[j] += a[static_cast<long>(i) * n + j];
  return out;
}

inline Tensor clip(const Tensor& a, double lo, double hi) {
  Tensor out = a;
  for (long i = 0; i < out.size(); ++i) out[i] = out[i] < lo ? lo : (out[i] > hi ? hi : out[i]);
  return out;
}

// [m, na] ++ [m, nb] -> [m, na+nb] along columns.
inline Tensor concat_cols(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.rows() != b.rows())
    throw ShapeError("concat_cols: incompatible shapes " + a.shape_str() + " vs " + b.shape_str());
  const int m = a.rows(), na = a.cols(), nb = b.cols();
  Tensor out({m, na + nb});
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < na; ++j) out.at(i, j) = a.at(i, j);
    for (int j = 0; j < nb; ++j) out.at(i, na + j) = b.at(i, j);
  }
  return out;
}

// Columns [c0, c1) of a rank-2 tensor.
inline Tensor slice_cols(const Tensor& a, int c0, int c1) {
  if (a.rank() != 2 || c0 < 0 || c1 > a.cols() || c0 >= c1)
    throw ShapeError("slice_cols: invalid range [" + std::to_string(c0) + "," + std::to_string(c1) +
                     ") for shape " + a.shape_str());
  const int m = a.rows(), n = c1 - c0;
  Tensor out({m, n});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.at(i, j) = a.at(i, c0 + j);
  return out;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double silu(double x) { return x * sigmoid(x); }

// Exact SiLU derivative sigma(x) * (1 + x * (1 - sigma(x))).
inline double silu_grad(double x) {
  const double s = sigmoid(x);
  return s * (1.0 + x * (1.0 - s));
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

inline double l2_norm(const double* p, long n) {
  double acc = 0.0;
  for (long i = 0; i < n; ++i) acc += p[i] * p[i];
  return std::sqrt(acc);
}

}  // namespace tensor_ops
}  // namespace vagram

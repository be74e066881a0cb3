#pragma once

// Differentiable kernels over BasicTensor. Reductions accumulate in double
// regardless of the storage type.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "napl/common.hpp"
#include "napl/tensor.hpp"

namespace napl {

namespace detail {

template <typename T>
void require_matrix(const BasicTensor<T>& t, const char* op) {
  if (t.rank() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
}

template <typename T>
void require_same_shape(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

template <typename T>
TensorNode<T>& parent(TensorNode<T>& node, std::size_t i) {
  return *node.parents[i];
}

/// When set, relu appends its activation pattern here. Finite-difference
/// checks use it to detect probes that straddle a kink.
inline std::vector<bool>*& relu_pattern_sink() {
  thread_local std::vector<bool>* sink = nullptr;
  return sink;
}

inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

inline double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

// ---------------------------------------------------------------- products

namespace detail {

/// out[i,:] (+)= Σ_t A(i,t)·B[t,:] for i < rows, where A(i,t) =
/// a[i·row_stride + t·col_stride] and B is a contiguous inner × cols array.
template <typename T>
void product_rows(std::size_t rows, std::size_t inner, std::size_t cols, const T* a, std::size_t row_stride,
                  std::size_t col_stride, const T* b, T* out, bool accumulate) {
  parallel_for(rows, inner * cols, [&](std::size_t begin, std::size_t end) {
    std::vector<double> acc(cols);
    for (std::size_t i = begin; i < end; ++i) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t t = 0; t < inner; ++t) {
        const double av = a[i * row_stride + t * col_stride];
        if (av == 0.0) continue;
        const T* brow = b + t * cols;
        for (std::size_t j = 0; j < cols; ++j) acc[j] += av * static_cast<double>(brow[j]);
      }
      T* orow = out + i * cols;
      if (accumulate) {
        for (std::size_t j = 0; j < cols; ++j) orow[j] += static_cast<T>(acc[j]);
      } else {
        for (std::size_t j = 0; j < cols; ++j) orow[j] = static_cast<T>(acc[j]);
      }
    }
  });
}

template <typename T>
std::vector<T> transposed(const T* src, std::size_t rows, std::size_t cols) {
  std::vector<T> out(rows * cols);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) out[j * rows + i] = src[i * cols + j];
  }
  return out;
}

}  // namespace detail

/// C = A·B for A [m×k], B [k×n].
template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require_matrix(a, "matmul");
  detail::require_matrix(b, "matmul");
  if (a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: inner dimensions disagree for " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(m * n);
  detail::product_rows(m, k, n, a.values().data(), k, 1, b.values().data(), out.data(), false);
  return make_result<T>({m, n}, std::move(out), {&a, &b}, [m, k, n](TensorNode<T>& node) {
    const T* G = node.grad.data();
    auto& pa = detail::parent(node, 0);
    auto& pb = detail::parent(node, 1);
    if (pa.requires_grad) {
      const auto bt = detail::transposed(pb.value.data(), k, n);
      detail::product_rows(m, n, k, G, n, 1, bt.data(), pa.grad.data(), true);
    }
    if (pb.requires_grad) {
      detail::product_rows(k, m, n, pa.value.data(), 1, k, G, pb.grad.data(), true);
    }
  });
}

/// C = A·Bᵀ for A [m×k], B [n×k].
template <typename T>
BasicTensor<T> matmul_nt(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require_matrix(a, "matmul_nt");
  detail::require_matrix(b, "matmul_nt");
  if (a.dim(1) != b.dim(1)) {
    throw ShapeError("matmul_nt: inner dimensions disagree for " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()) + "^T");
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  std::vector<T> out(m * n);
  const auto bt = detail::transposed(b.values().data(), n, k);
  detail::product_rows(m, k, n, a.values().data(), k, 1, bt.data(), out.data(), false);
  return make_result<T>({m, n}, std::move(out), {&a, &b}, [m, k, n](TensorNode<T>& node) {
    const T* G = node.grad.data();
    auto& pa = detail::parent(node, 0);
    auto& pb = detail::parent(node, 1);
    if (pa.requires_grad) detail::product_rows(m, n, k, G, n, 1, pb.value.data(), pa.grad.data(), true);
    if (pb.requires_grad) detail::product_rows(n, m, k, G, 1, n, pa.value.data(), pb.grad.data(), true);
  });
}

// ------------------------------------------------------------- elementwise

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return make_result<T>(a.shape(), std::move(out), {&a, &b}, [](TensorNode<T>& node) {
    for (std::size_t p = 0; p < 2; ++p) {
      auto& par = detail::parent(node, p);
      if (!par.requires_grad) continue;
      for (std::size_t i = 0; i < node.grad.size(); ++i) par.grad[i] += node.grad[i];
    }
  });
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return make_result<T>(a.shape(), std::move(out), {&a, &b}, [](TensorNode<T>& node) {
    auto& pa = detail::parent(node, 0);
    auto& pb = detail::parent(node, 1);
    for (std::size_t i = 0; i < node.grad.size(); ++i) {
      if (pa.requires_grad) pa.grad[i] += node.grad[i];
      if (pb.requires_grad) pb.grad[i] -= node.grad[i];
    }
  });
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return make_result<T>(a.shape(), std::move(out), {&a, &b}, [](TensorNode<T>& node) {
    auto& pa = detail::parent(node, 0);
    auto& pb = detail::parent(node, 1);
    for (std::size_t i = 0; i < node.grad.size(); ++i) {
      if (pa.requires_grad) pa.grad[i] += node.grad[i] * pb.value[i];
      if (pb.requires_grad) pb.grad[i] += node.grad[i] * pa.value[i];
    }
  });
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * factor;
  return make_result<T>(a.shape(), std::move(out), {&a}, [factor](TensorNode<T>& node) {
    auto& pa = detail::parent(node, 0);
    for (std::size_t i = 0; i < node.grad.size(); ++i) pa.grad[i] += node.grad[i] * factor;
  });
}

/// Adds the row vector `bias` [n] to every row of `a` [..., n].
template <typename T>
BasicTensor<T> add_rowvec(const BasicTensor<T>& a, const BasicTensor<T>& bias) {
  if (bias.numel() != a.cols()) {
    throw ShapeError("add_rowvec: bias " + shape_str(bias.shape()) + " does not match rows of " + shape_str(a.shape()));
  }
  const std::size_t n = a.cols();
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + bias[i % n];
  return make_result<T>(a.shape(), std::move(out), {&a, &bias}, [n](TensorNode<T>& node) {
    auto& pa = detail::parent(node, 0);
    auto& pb = detail::parent(node, 1);
    if (pa.requires_grad) {
      for (std::size_t i = 0; i < node.grad.size(); ++i) pa.grad[i] += node.grad[i];
    }
    if (pb.requires_grad) {
      std::vector<double> acc(n, 0.0);
      for (std::size_t i = 0; i < node.grad.size(); ++i) acc[i % n] += node.grad[i];
      for (std::size_t j = 0; j < n; ++j) pb.grad[j] += static_cast<T>(acc[j]);
    }
  });
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& a) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] > T(0) ? a[i] : T(0);
  if (auto* sink = detail::relu_pattern_sink()) {
    for (std::size_t i = 0; i < out.size(); ++i) sink->push_back(a[i] > T(0));
  }
  return make_result<T>(a.shape(), std::move(out), {&a}, [](TensorNode<T>& node) {
    auto& pa = detail::parent(node, 0);
    for (std::size_t i = 0; i < node.grad.size(); ++i) {
      if (pa.value[i] > T(0)) pa.grad[i] += node.grad[i];
    }
  });
}

/// Elementwise 1/(1+e^{-x}); evaluated without overflow for large |x|.
template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& a) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(detail::stable_sigmoid(a[i]));
  return make_result<T>(a.shape(), std::move(out), {&a}, [](TensorNode<T>& node) {
    auto& pa = detail::parent(node, 0);
    for (std::size_t i = 0; i < node.grad.size(); ++i) {
      const T y = node.value[i];
      pa.grad[i] += node.grad[i] * y * (T(1) - y);
    }
  });
}

template <typename T>
BasicTensor<T> log(const BasicTensor<T>& a) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(a[i]);
  return make_result<T>(a.shape(), std::move(out), {&a}, [](TensorNode<T>& node) {
    auto& pa = detail::parent(node, 0);
    for (std::size_t i = 0; i < node.grad.size(); ++i) pa.grad[i] += node.grad[i] / pa.value[i];
  });
}

// --------------------------------------------------------- row-wise kernels

/// Softmax along the last axis, with max-subtraction.
template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& a) {
  const std::size_t n = a.cols(), rows = a.rows();
  std::vector<T> out(a.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = a.values().data() + r * n;
    const double mx = *std::max_element(x, x + n);
    double total = 0;
    for (std::size_t j = 0; j < n; ++j) total += std::exp(x[j] - mx);
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = static_cast<T>(std::exp(x[j] - mx) / total);
  }
  return make_result<T>(a.shape(), std::move(out), {&a}, [n, rows](TensorNode<T>& node) {
    auto& pa = detail::parent(node, 0);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = node.value.data() + r * n;
      const T* g = node.grad.data() + r * n;
      double dot = 0;
      for (std::size_t j = 0; j < n; ++j) dot += static_cast<double>(g[j]) * y[j];
      for (std::size_t j = 0; j < n; ++j) pa.grad[r * n + j] += static_cast<T>(y[j] * (g[j] - dot));
    }
  });
}

/// log(softmax(a)) along the last axis, computed directly from logits.
template <typename T>
BasicTensor<T> log_softmax(const BasicTensor<T>& a) {
  const std::size_t n = a.cols(), rows = a.rows();
  std::vector<T> out(a.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = a.values().data() + r * n;
    const double mx = *std::max_element(x, x + n);
    double total = 0;
    for (std::size_t j = 0; j < n; ++j) total += std::exp(x[j] - mx);
    const double lse = mx + std::log(total);
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = static_cast<T>(x[j] - lse);
  }
  return make_result<T>(a.shape(), std::move(out), {&a}, [n, rows](TensorNode<T>& node) {
    auto& pa = detail::parent(node, 0);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = node.value.data() + r * n;
      const T* g = node.grad.data() + r * n;
      double gsum = 0;
      for (std::size_t j = 0; j < n; ++j) gsum += g[j];
      for (std::size_t j = 0; j < n; ++j) {
        pa.grad[r * n + j] += static_cast<T>(g[j] - std::exp(static_cast<double>(y[j])) * gsum);
      }
    }
  });
}

/// Per-row normalization to zero mean and unit variance, then gain and bias.
template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& a, const BasicTensor<T>& gain, const BasicTensor<T>& bias,
                          double eps = 1e-5) {
  const std::size_t n = a.cols(), rows = a.rows();
  if (gain.numel() != n || bias.numel() != n) {
    throw ShapeError("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" + shape_str(bias.shape()) +
                     " do not match " + shape_str(a.shape()));
  }
  std::vector<T> out(a.numel());
  std::vector<double> xhat(a.numel());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = a.values().data() + r * n;
    double mean = 0;
    for (std::size_t j = 0; j < n; ++j) mean += x[j];
    mean /= static_cast<double>(n);
    double var = 0;
    for (std::size_t j = 0; j < n; ++j) var += (x[j] - mean) * (x[j] - mean);
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[r * n + j] = (x[j] - mean) * inv_std[r];
      out[r * n + j] = static_cast<T>(xhat[r * n + j] * gain[j] + bias[j]);
    }
  }
  return make_result<T>(
      a.shape(), std::move(out), {&a, &gain, &bias},
      [n, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](TensorNode<T>& node) {
        auto& pa = detail::parent(node, 0);
        auto& pg = detail::parent(node, 1);
        auto& pb = detail::parent(node, 2);
        std::vector<double> dgain(n, 0.0), dbias(n, 0.0);
        for (std::size_t r = 0; r < rows; ++r) {
          const T* g = node.grad.data() + r * n;
          const double* xh = xhat.data() + r * n;
          double mean_dxh = 0, mean_dxh_xh = 0;
          for (std::size_t j = 0; j < n; ++j) {
            const double dxh = static_cast<double>(g[j]) * pg.value[j];
            mean_dxh += dxh;
            mean_dxh_xh += dxh * xh[j];
            dgain[j] += static_cast<double>(g[j]) * xh[j];
            dbias[j] += g[j];
          }
          mean_dxh /= static_cast<double>(n);
          mean_dxh_xh /= static_cast<double>(n);
          if (pa.requires_grad) {
            for (std::size_t j = 0; j < n; ++j) {
              const double dxh = static_cast<double>(g[j]) * pg.value[j];
              pa.grad[r * n + j] += static_cast<T>(inv_std[r] * (dxh - mean_dxh - xh[j] * mean_dxh_xh));
            }
          }
        }
        if (pg.requires_grad) {
          for (std::size_t j = 0; j < n; ++j) pg.grad[j] += static_cast<T>(dgain[j]);
        }
        if (pb.requires_grad) {
          for (std::size_t j = 0; j < n; ++j) pb.grad[j] += static_cast<T>(dbias[j]);
        }
      });
}

// ------------------------------------------------------------ restructuring

/// Column-wise concatenation of matrices with equal row counts.
template <typename T>
BasicTensor<T> concat_cols(const std::vector<BasicTensor<T>>& parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  const std::size_t rows = parts[0].dim(0);
  std::vector<std::size_t> offsets;
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail::require_matrix(p, "concat_cols");
    if (p.dim(0) != rows) {
      throw ShapeError("concat_cols: row mismatch " + shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
    }
    offsets.push_back(total);
    total += p.dim(1);
  }
  std::vector<T> out(rows * total);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const std::size_t w = parts[k].dim(1);
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(parts[k].values().data() + r * w, w, out.data() + r * total + offsets[k]);
    }
  }
  return make_result<T>({rows, total}, std::move(out), parts, [rows, total, offsets](TensorNode<T>& node) {
    for (std::size_t k = 0; k < node.parents.size(); ++k) {
      auto& par = detail::parent(node, k);
      if (!par.requires_grad) continue;
      const std::size_t w = par.shape[1];
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < w; ++c) par.grad[r * w + c] += node.grad[r * total + offsets[k] + c];
      }
    }
  });
}

template <typename T>
BasicTensor<T> slice_cols(const BasicTensor<T>& a, std::size_t begin, std::size_t count) {
  detail::require_matrix(a, "slice_cols");
  if (begin + count > a.dim(1)) {
    throw ShapeError("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") out of range for " + shape_str(a.shape()));
  }
  const std::size_t rows = a.dim(0), n = a.dim(1);
  std::vector<T> out(rows * count);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(a.values().data() + r * n + begin, count, out.data() + r * count);
  }
  return make_result<T>({rows, count}, std::move(out), {&a}, [rows, n, begin, count](TensorNode<T>& node) {
    auto& pa = detail::parent(node, 0);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < count; ++c) pa.grad[r * n + begin + c] += node.grad[r * count + c];
    }
  });
}

/// out[i] = a[index[i]] row-wise. The adjoint scatter-adds into `a`.
template <typename T>
BasicTensor<T> gather_rows(const BasicTensor<T>& a, std::span<const std::size_t> index) {
  const std::size_t n = a.cols(), src_rows = a.rows();
  std::vector<T> out(index.size() * n);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= src_rows) {
      throw ContractError("gather_rows: index " + std::to_string(index[i]) + " out of range for " +
                          std::to_string(src_rows) + " rows");
    }
    std::copy_n(a.values().data() + index[i] * n, n, out.data() + i * n);
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  return make_result<T>({index.size(), n}, std::move(out), {&a}, [n, idx = std::move(idx)](TensorNode<T>& node) {
    auto& pa = detail::parent(node, 0);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      for (std::size_t c = 0; c < n; ++c) pa.grad[idx[i] * n + c] += node.grad[i * n + c];
    }
  });
}

/// Mean of the rows assigned to each segment; empty segments produce zeros.
template <typename T>
BasicTensor<T> segment_mean(const BasicTensor<T>& a, std::span<const std::size_t> segment, std::size_t num_segments) {
  const std::size_t n = a.cols();
  if (segment.size() != a.rows()) {
    throw ShapeError("segment_mean: " + std::to_string(segment.size()) + " segment ids for " + shape_str(a.shape()));
  }
  std::vector<double> acc(num_segments * n, 0.0);
  std::vector<double> count(num_segments, 0.0);
  for (std::size_t r = 0; r < segment.size(); ++r) {
    if (segment[r] >= num_segments) throw ContractError("segment_mean: segment id out of range");
    count[segment[r]] += 1.0;
    for (std::size_t c = 0; c < n; ++c) acc[segment[r] * n + c] += a[r * n + c];
  }
  std::vector<T> out(num_segments * n);
  for (std::size_t s = 0; s < num_segments; ++s) {
    for (std::size_t c = 0; c < n; ++c) out[s * n + c] = count[s] > 0 ? static_cast<T>(acc[s * n + c] / count[s]) : T(0);
  }
  std::vector<std::size_t> seg(segment.begin(), segment.end());
  return make_result<T>({num_segments, n}, std::move(out), {&a},
                        [n, seg = std::move(seg), count = std::move(count)](TensorNode<T>& node) {
                          auto& pa = detail::parent(node, 0);
                          for (std::size_t r = 0; r < seg.size(); ++r) {
                            const double w = 1.0 / count[seg[r]];
                            for (std::size_t c = 0; c < n; ++c) {
                              pa.grad[r * n + c] += static_cast<T>(node.grad[seg[r] * n + c] * w);
                            }
                          }
                        });
}

/// out[i] = a[rows[i], cols[i]].
template <typename T>
BasicTensor<T> pick(const BasicTensor<T>& a, std::span<const std::size_t> rows, std::span<const std::size_t> cols) {
  require(rows.size() == cols.size(), "pick: row/col index lengths differ");
  const std::size_t n = a.cols();
  std::vector<std::size_t> flat(rows.size());
  std::vector<T> out(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= a.rows() || cols[i] >= n) throw ContractError("pick: index out of range for " + shape_str(a.shape()));
    flat[i] = rows[i] * n + cols[i];
    out[i] = a[flat[i]];
  }
  return make_result<T>({rows.size()}, std::move(out), {&a}, [flat = std::move(flat)](TensorNode<T>& node) {
    auto& pa = detail::parent(node, 0);
    for (std::size_t i = 0; i < flat.size(); ++i) pa.grad[flat[i]] += node.grad[i];
  });
}

// --------------------------------------------------------------- reductions

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& a) {
  double s = 0;
  for (T v : a.values()) s += v;
  return make_result<T>({1}, {static_cast<T>(s)}, {&a}, [](TensorNode<T>& node) {
    auto& pa = detail::parent(node, 0);
    for (auto& g : pa.grad) g += node.grad[0];
  });
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& a) {
  require(a.numel() > 0, "mean of empty tensor");
  return scale(sum(a), static_cast<T>(1.0 / static_cast<double>(a.numel())));
}

/// Σ_i w_i · a_i with constant weights.
template <typename T>
BasicTensor<T> weighted_sum(const BasicTensor<T>& a, std::span<const double> weights) {
  if (weights.size() != a.numel()) {
    throw ShapeError("weighted_sum: " + std::to_string(weights.size()) + " weights for " + shape_str(a.shape()));
  }
  double s = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) s += weights[i] * a[i];
  std::vector<double> w(weights.begin(), weights.end());
  return make_result<T>({1}, {static_cast<T>(s)}, {&a}, [w = std::move(w)](TensorNode<T>& node) {
    auto& pa = detail::parent(node, 0);
    for (std::size_t i = 0; i < w.size(); ++i) pa.grad[i] += static_cast<T>(w[i] * node.grad[0]);
  });
}

// -------------------------------------------------------------- mask losses

/// Row-wise sigmoid focal loss averaged over columns. `logits` [R×N] are
/// mask logits, `targets` R×N values in {0,1}.
template <typename T>
BasicTensor<T> sigmoid_focal_loss_rows(const BasicTensor<T>& logits, std::span<const T> targets, double alpha,
                                       double gamma) {
  detail::require_matrix(logits, "sigmoid_focal_loss_rows");
  const std::size_t rows = logits.dim(0), n = logits.dim(1);
  if (targets.size() != logits.numel()) throw ShapeError("sigmoid_focal_loss_rows: target size mismatch");
  require(n > 0, "sigmoid_focal_loss_rows: empty mask");
  std::vector<T> out(rows);
  std::vector<double> dx(logits.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    double total = 0;
    for (std::size_t j = 0; j < n; ++j) {
      const double x = logits[r * n + j], y = targets[r * n + j];
      const double p = detail::stable_sigmoid(x);
      const double ce = detail::softplus(x) - y * x;
      const double pt = p * y + (1 - p) * (1 - y);
      const double at = alpha >= 0 ? alpha * y + (1 - alpha) * (1 - y) : 1.0;
      const double one_minus = 1 - pt;
      const double w = std::pow(one_minus, gamma);
      total += at * ce * w;
      const double dpt = (2 * y - 1) * p * (1 - p);
      const double dw = gamma == 0 ? 0.0 : -gamma * std::pow(one_minus, gamma - 1) * dpt;
      dx[r * n + j] = at * ((p - y) * w + ce * dw) / static_cast<double>(n);
    }
    out[r] = static_cast<T>(total / static_cast<double>(n));
  }
  return make_result<T>({rows}, std::move(out), {&logits}, [n, dx = std::move(dx)](TensorNode<T>& node) {
    auto& pa = detail::parent(node, 0);
    for (std::size_t i = 0; i < dx.size(); ++i) pa.grad[i] += static_cast<T>(dx[i] * node.grad[i / n]);
  });
}

/// Row-wise dice loss 1 − (2Σpy + 1)/(Σp + Σy + 1) with p = sigmoid(logits).
template <typename T>
BasicTensor<T> dice_loss_rows(const BasicTensor<T>& logits, std::span<const T> targets) {
  detail::require_matrix(logits, "dice_loss_rows");
  const std::size_t rows = logits.dim(0), n = logits.dim(1);
  if (targets.size() != logits.numel()) throw ShapeError("dice_loss_rows: target size mismatch");
  std::vector<T> out(rows);
  std::vector<double> dx(logits.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    double inter = 0, psum = 0, ysum = 0;
    for (std::size_t j = 0; j < n; ++j) {
      const double p = detail::stable_sigmoid(logits[r * n + j]);
      const double y = targets[r * n + j];
      inter += p * y;
      psum += p;
      ysum += y;
    }
    const double num = 2 * inter + 1, den = psum + ysum + 1;
    out[r] = static_cast<T>(1 - num / den);
    for (std::size_t j = 0; j < n; ++j) {
      const double p = detail::stable_sigmoid(logits[r * n + j]);
      const double y = targets[r * n + j];
      dx[r * n + j] = -(2 * y * den - num) / (den * den) * p * (1 - p);
    }
  }
  return make_result<T>({rows}, std::move(out), {&logits}, [n, dx = std::move(dx)](TensorNode<T>& node) {
    auto& pa = detail::parent(node, 0);
    for (std::size_t i = 0; i < dx.size(); ++i) pa.grad[i] += static_cast<T>(dx[i] * node.grad[i / n]);
  });
}

}  // namespace napl

#pragma once

// Independent reference implementations used by the tests. Everything here
// is written term by term in long double and shares no code with the
// library kernels.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

#include "napl/ops.hpp"
#include "napl/random.hpp"
#include "napl/tensor.hpp"

namespace oracle {

using Real = long double;

inline Real sigmoid(Real x) { return 1.0L / (1.0L + std::exp(-x)); }

/// Minimum total cost over all n! permutations, and the lexicographically
/// smallest permutation that attains it.
struct BruteForce {
  double total = 0;
  std::vector<std::size_t> assignment;
};

inline BruteForce brute_force_assignment(std::size_t n, const std::vector<double>& cost) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  BruteForce best{std::numeric_limits<double>::infinity(), {}};
  do {
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) total += cost[i * n + perm[i]];
    if (total < best.total) best = {total, perm};
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

struct MaskTerms {
  Real focal = 0;  // mean over points
  Real dice = 0;
};

/// Focal: α_t (1 − p_t)^γ · BCE averaged over points. Dice: 1 − (2Σpy + 1)/(Σp + Σy + 1).
inline MaskTerms mask_terms(const std::vector<double>& gt, const std::vector<double>& logits, Real alpha = 0.25L,
                            Real gamma = 2.0L) {
  MaskTerms t;
  Real inter = 0, psum = 0, ysum = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const Real y = gt[i];
    const Real p = sigmoid(logits[i]);
    const Real bce = -(y * std::log(p) + (1 - y) * std::log(1 - p));
    const Real pt = p * y + (1 - p) * (1 - y);
    const Real at = alpha * y + (1 - alpha) * (1 - y);
    t.focal += at * std::pow(1 - pt, gamma) * bce;
    inter += p * y;
    psum += p;
    ysum += y;
  }
  t.focal /= static_cast<Real>(gt.size());
  t.dice = 1 - (2 * inter + 1) / (psum + ysum + 1);
  return t;
}

inline Real mask_loss(const std::vector<double>& gt, const std::vector<double>& logits, Real focal_weight = 1,
                      Real dice_weight = 1) {
  const auto t = mask_terms(gt, logits);
  return focal_weight * t.focal + dice_weight * t.dice;
}

inline std::vector<Real> softmax_row(const std::vector<double>& logits) {
  Real mx = *std::max_element(logits.begin(), logits.end());
  std::vector<Real> e(logits.size());
  Real z = 0;
  for (std::size_t c = 0; c < logits.size(); ++c) z += e[c] = std::exp(static_cast<Real>(logits[c]) - mx);
  for (auto& v : e) v /= z;
  return e;
}

/// Σ_i [−w_i log s_{σ(i)}(c_i) + 𝟙{c_i real}·mask_loss(m_i, m_{σ(i)})].
/// `classes[i]` is a 0-based score column; `no_object` marks padding rows,
/// which carry weight `no_object_weight` and no mask.
inline Real napl_loss(const std::vector<std::vector<double>>& class_logits,
                      const std::vector<std::vector<double>>& mask_logits, const std::vector<int>& classes,
                      const std::vector<std::vector<double>>& gt_masks, const std::vector<std::size_t>& sigma,
                      int no_object, Real no_object_weight = 1) {
  Real total = 0;
  for (std::size_t i = 0; i < classes.size(); ++i) {
    const auto s = softmax_row(class_logits[sigma[i]]);
    const bool padding = classes[i] == no_object;
    total -= (padding ? no_object_weight : 1) * std::log(s[static_cast<std::size_t>(classes[i])]);
    if (!padding) total += mask_loss(gt_masks[i], mask_logits[sigma[i]]);
  }
  return total;
}

/// Mean −log p(label) over points whose label is not 0; labels are 1-based.
inline Real pwc_loss(const std::vector<std::vector<double>>& probs, const std::vector<int>& labels) {
  Real total = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == 0) continue;
    total -= std::log(static_cast<Real>(probs[i][static_cast<std::size_t>(labels[i] - 1)]));
    ++n;
  }
  return n ? total / static_cast<Real>(n) : 0;
}

/// Mean IoU from explicit per-class point sets; classes absent from both
/// prediction and ground truth are skipped. Label 0 is ignored.
inline Real miou(const std::vector<int>& pred, const std::vector<int>& gt, int num_classes) {
  Real total = 0;
  int counted = 0;
  for (int c = 1; c <= num_classes; ++c) {
    std::uint64_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < gt.size(); ++i) {
      if (gt[i] == 0) continue;
      const bool in_pred = pred[i] == c, in_gt = gt[i] == c;
      inter += in_pred && in_gt;
      uni += in_pred || in_gt;
    }
    if (uni == 0) continue;
    total += static_cast<Real>(inter) / static_cast<Real>(uni);
    ++counted;
  }
  return total / counted;
}

inline Real relative_error(Real value, Real reference) {
  return std::abs(value - reference) / std::max<Real>(std::abs(reference), 1e-300L);
}

// ---------------------------------------------------------- finite differences

using TensorD = napl::BasicTensor<double>;

struct GradCheck {
  double max_error = 0;     // |analytic − numeric| / max(1, |analytic|, |numeric|)
  std::size_t checked = 0;  // coordinates compared
  std::size_t skipped = 0;  // probes that crossed a relu kink
};

/// Central differences with step `h` for every coordinate of every input.
/// Probes whose ±h evaluations change any relu activation pattern are
/// skipped, since the function is not differentiable across the kink.
inline GradCheck check_gradients(const std::function<TensorD(const std::vector<TensorD>&)>& fn,
                                 std::vector<TensorD> inputs, double h = 1e-3) {
  for (auto& x : inputs) {
    x.set_requires_grad(true);
    x.zero_grad();
  }
  std::vector<bool> base_pattern;
  auto& sink = napl::detail::relu_pattern_sink();
  sink = &base_pattern;
  auto out = fn(inputs);
  sink = nullptr;
  out.backward();

  GradCheck result;
  for (auto& x : inputs) {
    const std::vector<double> analytic(x.grad().begin(), x.grad().end());
    auto values = x.values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      std::vector<bool> plus_pattern, minus_pattern;
      double f_plus, f_minus;
      {
        napl::NoGradGuard no_grad;
        values[i] = saved + h;
        sink = &plus_pattern;
        f_plus = fn(inputs).item();
        values[i] = saved - h;
        sink = &minus_pattern;
        f_minus = fn(inputs).item();
        sink = nullptr;
        values[i] = saved;
      }
      if (plus_pattern != base_pattern || minus_pattern != base_pattern) {
        ++result.skipped;
        continue;
      }
      const double numeric = (f_plus - f_minus) / (2 * h);
      const double scale = std::max({1.0, std::abs(analytic[i]), std::abs(numeric)});
      result.max_error = std::max(result.max_error, std::abs(analytic[i] - numeric) / scale);
      ++result.checked;
    }
  }
  return result;
}

inline TensorD random_tensor(napl::Shape shape, napl::Rng& rng, double lo = -2, double hi = 2) {
  std::vector<double> v(napl::shape_numel(shape));
  for (auto& x : v) x = napl::uniform(rng, lo, hi);
  return TensorD::from(std::move(shape), std::move(v), true);
}

}  // namespace oracle

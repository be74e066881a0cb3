#pragma once

// Set-prediction objective over class-mask pairs. Predictions z are
// (score row, soft mask) per query; ground truth z^gt is one
// (class, binary mask) pair per class present in the frame, padded with
// no-object tokens. Training drops M random prediction pairs, matches the
// rest to the padded ground truth at minimal cost, and sums matched
// cross-entropy plus, for real segments, focal + dice mask loss.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "napl/common.hpp"
#include "napl/matching.hpp"
#include "napl/ops.hpp"
#include "napl/point_cloud.hpp"
#include "napl/proto_decoder.hpp"
#include "napl/random.hpp"

namespace napl {

/// Class value of a padding token in a ground-truth set.
inline constexpr int kNoObject = -1;

/// z^gt: per pair a class in {1..C} (or kNoObject) and a binary mask over
/// the frame's points (empty for kNoObject).
struct GroundTruthSet {
  std::size_t num_points = 0;
  std::vector<int> classes;
  std::vector<std::vector<std::uint8_t>> masks;

  std::size_t size() const { return classes.size(); }
  std::size_t num_real() const {
    return static_cast<std::size_t>(std::count_if(classes.begin(), classes.end(), [](int c) { return c != kNoObject; }));
  }
};

struct MaskLossConfig {
  double focal_weight = 1.0;
  double dice_weight = 1.0;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
};

struct NaplLossConfig {
  MaskLossConfig mask;
  double no_object_weight = 1.0;
  std::size_t dropout_count = 10;  // M
  bool use_dropout = true;
};

/// One pair per class present, classes ascending. Ignored points belong to
/// no mask.
inline GroundTruthSet build_ground_truth_pairs(std::span<const int> labels, int num_classes) {
  GroundTruthSet gt;
  gt.num_points = labels.size();
  std::vector<bool> present(static_cast<std::size_t>(num_classes) + 1, false);
  for (int l : labels) {
    if (l == kIgnoreLabel) continue;
    require(l >= 1 && l <= num_classes, "ground truth label " + std::to_string(l) + " out of range");
    present[static_cast<std::size_t>(l)] = true;
  }
  for (int c = 1; c <= num_classes; ++c) {
    if (!present[static_cast<std::size_t>(c)]) continue;
    std::vector<std::uint8_t> mask(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) mask[i] = labels[i] == c;
    gt.classes.push_back(c);
    gt.masks.push_back(std::move(mask));
  }
  return gt;
}

/// Appends no-object tokens until the set has `target_size` pairs.
inline GroundTruthSet pad_ground_truth(GroundTruthSet gt, std::size_t target_size) {
  if (gt.size() > target_size) {
    throw ContractError("ground truth has " + std::to_string(gt.size()) + " segments but only " +
                        std::to_string(target_size) +
                        " predictions survive dropout; raise the query count or lower the dropout count");
  }
  while (gt.size() < target_size) {
    gt.classes.push_back(kNoObject);
    gt.masks.emplace_back();
  }
  return gt;
}

/// Mask logits P·Fᵀ, [N_q × N].
template <typename T>
BasicTensor<T> mask_logits(const BasicTensor<T>& features, const BasicTensor<T>& prototypes) {
  if (features.rank() != 2 || prototypes.rank() != 2 || features.dim(1) != prototypes.dim(1)) {
    throw ContractError("soft masks: feature " + shape_str(features.shape()) + " and prototype " +
                        shape_str(prototypes.shape()) + " widths differ");
  }
  return matmul_nt(prototypes, features);
}

/// m_k[i] = sigmoid(f_i · p_k), [N_q × N].
template <typename T>
BasicTensor<T> soft_masks(const BasicTensor<T>& features, const BasicTensor<T>& prototypes) {
  return sigmoid(mask_logits(features, prototypes));
}

namespace detail {
inline std::atomic<std::uint64_t>& dropout_invocations() {
  static std::atomic<std::uint64_t> count{0};
  return count;
}
}  // namespace detail

/// Number of prototype_dropout calls so far in this process.
inline std::uint64_t prototype_dropout_invocations() { return detail::dropout_invocations().load(); }

/// Indices (ascending) of the N_q − M prediction pairs that survive a
/// uniformly random drop of M pairs without replacement.
inline std::vector<std::size_t> prototype_dropout(std::size_t num_queries, std::size_t drop, Rng& rng) {
  if (drop >= num_queries) {
    throw ContractError("prototype_dropout: dropping " + std::to_string(drop) + " of " + std::to_string(num_queries) +
                        " prototypes leaves none");
  }
  ++detail::dropout_invocations();
  std::vector<std::size_t> idx(num_queries);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < drop; ++i) {
    const auto j = static_cast<std::size_t>(uniform_int(rng, static_cast<std::int64_t>(i),
                                                        static_cast<std::int64_t>(num_queries - 1)));
    std::swap(idx[i], idx[j]);
  }
  std::vector<std::size_t> survivors(idx.begin() + static_cast<std::ptrdiff_t>(drop), idx.end());
  std::sort(survivors.begin(), survivors.end());
  return survivors;
}

/// z′ as tensors: log class scores [K × (C+1)] and mask logits [K × N].
template <typename T>
struct PredictionPairs {
  BasicTensor<T> log_scores;
  BasicTensor<T> mask_logits;

  std::size_t size() const { return log_scores.dim(0); }
  std::size_t num_classes() const { return log_scores.dim(1) - 1; }
};

template <typename T>
PredictionPairs<T> select_pairs(const PredictionPairs<T>& all, std::span<const std::size_t> keep) {
  return {gather_rows(all.log_scores, keep), gather_rows(all.mask_logits, keep)};
}

/// Score column for a ground-truth class (∅ is the last column).
inline std::size_t score_column(int cls, std::size_t num_classes) {
  return cls == kNoObject ? num_classes : static_cast<std::size_t>(cls - 1);
}

/// λ_f·mean focal + λ_d·dice for one pair; `logits` is a [1 × N] row with
/// soft mask m = sigmoid(logits).
template <typename T>
BasicTensor<T> mask_loss(std::span<const T> gt_mask, const BasicTensor<T>& logits, const MaskLossConfig& cfg = {}) {
  if (logits.rank() != 2 || logits.dim(0) != 1) {
    throw ContractError("mask_loss: expected logits as a 1 x N row, got " + shape_str(logits.shape()));
  }
  if (gt_mask.size() != logits.numel()) {
    throw ContractError("mask_loss: ground-truth length " + std::to_string(gt_mask.size()) +
                        " differs from prediction length " + std::to_string(logits.numel()));
  }
  auto focal = sigmoid_focal_loss_rows(logits, gt_mask, cfg.focal_alpha, cfg.focal_gamma);
  auto dice = dice_loss_rows(logits, gt_mask);
  return sum(add(scale(focal, static_cast<T>(cfg.focal_weight)), scale(dice, static_cast<T>(cfg.dice_weight))));
}

/// cost(i, k) = −s_k(c_i) + 𝟙{c_i ≠ ∅}·L_mask(m_i^gt, m_k) for padded ground
/// truth rows i and prediction columns k.
template <typename T>
CostMatrix matching_cost(const PredictionPairs<T>& pred, const GroundTruthSet& gt, const MaskLossConfig& cfg = {}) {
  const std::size_t n = pred.size();
  require(gt.size() == n, "matching_cost: ground truth and predictions must have equal size");
  const std::size_t N = pred.mask_logits.dim(1);
  const std::size_t C = pred.num_classes();
  for (const auto& m : gt.masks) require(m.empty() || m.size() == N, "matching_cost: mask length mismatch");

  std::vector<std::size_t> real_rows;
  for (std::size_t i = 0; i < n; ++i) {
    if (gt.classes[i] != kNoObject) real_rows.push_back(i);
  }
  std::vector<double> gt_count(real_rows.size(), 0.0);
  for (std::size_t r = 0; r < real_rows.size(); ++r) {
    for (auto b : gt.masks[real_rows[r]]) gt_count[r] += b;
  }

  CostMatrix cost(n, std::vector<double>(n * n, 0.0));
  std::vector<double> neg_focal(N), pos_minus_neg(N), prob(N);
  for (std::size_t k = 0; k < n; ++k) {
    double neg_total = 0, prob_total = 0;
    for (std::size_t j = 0; j < N; ++j) {
      const double x = pred.mask_logits(k, j);
      const double p = detail::stable_sigmoid(x);
      const double sp = detail::softplus(x);
      const double a = cfg.focal_alpha;
      const double pos = (a >= 0 ? a : 1.0) * (sp - x) * std::pow(1 - p, cfg.focal_gamma);
      const double neg = (a >= 0 ? 1 - a : 1.0) * sp * std::pow(p, cfg.focal_gamma);
      neg_focal[j] = neg;
      pos_minus_neg[j] = pos - neg;
      prob[j] = p;
      neg_total += neg;
      prob_total += p;
    }
    for (std::size_t r = 0; r < real_rows.size(); ++r) {
      const auto& mask = gt.masks[real_rows[r]];
      double focal = neg_total, inter = 0;
      for (std::size_t j = 0; j < N; ++j) {
        if (!mask[j]) continue;
        focal += pos_minus_neg[j];
        inter += prob[j];
      }
      focal /= static_cast<double>(N);
      const double dice = 1 - (2 * inter + 1) / (prob_total + gt_count[r] + 1);
      cost(real_rows[r], k) = cfg.focal_weight * focal + cfg.dice_weight * dice;
    }
    for (std::size_t i = 0; i < n; ++i) {
      const double s = std::exp(static_cast<double>(pred.log_scores(k, score_column(gt.classes[i], C))));
      cost(i, k) -= s;
    }
  }
  return cost;
}

template <typename T>
struct NaplLossTerms {
  BasicTensor<T> total;
  double cross_entropy = 0;
  double mask = 0;
};

/// Σ_i [−w_i·log s_{σ(i)}(c_i) + 𝟙{c_i ≠ ∅}·L_mask(m_i^gt, m_{σ(i)})], where
/// w_i is the no-object weight on padding rows and 1 otherwise.
template <typename T>
NaplLossTerms<T> napl_loss_terms(const PredictionPairs<T>& pred, const GroundTruthSet& gt, const Matching& sigma,
                                 const NaplLossConfig& cfg = {}) {
  require(gt.size() == pred.size(), "napl_loss: ground truth and predictions must have equal size");
  validate_matching(sigma, gt.size(), pred.size());
  const std::size_t C = pred.num_classes();
  const std::size_t N = pred.mask_logits.dim(1);

  std::vector<std::size_t> rows(gt.size()), cols(gt.size());
  std::vector<double> weights(gt.size());
  std::vector<std::size_t> mask_rows;
  std::vector<T> targets;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    rows[i] = sigma.assignment[i];
    cols[i] = score_column(gt.classes[i], C);
    weights[i] = gt.classes[i] == kNoObject ? -cfg.no_object_weight : -1.0;
    if (gt.classes[i] != kNoObject) {
      require(gt.masks[i].size() == N, "napl_loss: mask length mismatch");
      mask_rows.push_back(sigma.assignment[i]);
      targets.insert(targets.end(), gt.masks[i].begin(), gt.masks[i].end());
    }
  }
  auto picked = pick(pred.log_scores, std::span<const std::size_t>(rows), std::span<const std::size_t>(cols));
  auto ce = weighted_sum(picked, std::span<const double>(weights));

  NaplLossTerms<T> out;
  out.cross_entropy = ce.item();
  out.total = ce;
  if (!mask_rows.empty()) {
    auto logits = gather_rows(pred.mask_logits, std::span<const std::size_t>(mask_rows));
    auto focal = sigmoid_focal_loss_rows(logits, std::span<const T>(targets), cfg.mask.focal_alpha, cfg.mask.focal_gamma);
    auto dice = dice_loss_rows(logits, std::span<const T>(targets));
    auto per_pair = add(scale(focal, static_cast<T>(cfg.mask.focal_weight)), scale(dice, static_cast<T>(cfg.mask.dice_weight)));
    auto mask_total = sum(per_pair);
    out.mask = mask_total.item();
    out.total = add(ce, mask_total);
  }
  return out;
}

template <typename T>
BasicTensor<T> napl_loss(const PredictionPairs<T>& pred, const GroundTruthSet& gt, const Matching& sigma,
                         const NaplLossConfig& cfg = {}) {
  return napl_loss_terms(pred, gt, sigma, cfg).total;
}

/// Everything one training sample contributes.
template <typename T>
struct NaplObjective {
  BasicTensor<T> loss;
  double cross_entropy = 0;
  double mask = 0;
  std::vector<std::size_t> survivors;
  Matching matching;
  std::size_t num_segments = 0;
};

/// Full per-sample objective. Dropout is applied iff `cfg.use_dropout`, and
/// only then is `rng` consumed.
template <typename T>
NaplObjective<T> napl_objective(const BasicTensor<T>& features, const PrototypeSet<T>& protos,
                                std::span<const int> labels, const NaplLossConfig& cfg, Rng& rng) {
  const std::size_t C = protos.num_classes();
  std::vector<std::size_t> valid;
  std::vector<int> valid_labels;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == kIgnoreLabel) continue;
    valid.push_back(i);
    valid_labels.push_back(labels[i]);
  }
  NaplObjective<T> out;
  const std::size_t nq = protos.num_queries();
  if (cfg.use_dropout) {
    out.survivors = prototype_dropout(nq, cfg.dropout_count, rng);
  } else {
    out.survivors.resize(nq);
    std::iota(out.survivors.begin(), out.survivors.end(), std::size_t{0});
  }
  auto gt = build_ground_truth_pairs(valid_labels, static_cast<int>(C));
  out.num_segments = gt.size();
  gt = pad_ground_truth(std::move(gt), out.survivors.size());

  const auto& f = valid.size() == labels.size() ? features : gather_rows(features, std::span<const std::size_t>(valid));
  const std::span<const std::size_t> keep(out.survivors);
  PredictionPairs<T> pred{gather_rows(log_softmax(protos.class_logits), keep),
                          f.rows() > 0 ? mask_logits(f, gather_rows(protos.prototypes, keep))
                                       : BasicTensor<T>::zeros({keep.size(), 0})};
  if (f.rows() == 0) {
    // No labeled points: only the no-object classification terms remain.
    out.matching.assignment.resize(keep.size());
    std::iota(out.matching.assignment.begin(), out.matching.assignment.end(), std::size_t{0});
  } else {
    out.matching = hungarian_match(matching_cost(pred, gt, cfg.mask));
  }
  auto terms = napl_loss_terms(pred, gt, out.matching, cfg);
  out.loss = terms.total;
  out.cross_entropy = terms.cross_entropy;
  out.mask = terms.mask;
  return out;
}

}  // namespace napl

#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "napl/common.hpp"
#include "napl/matching_loss.hpp"
#include "napl/point_cloud.hpp"
#include "napl/proto_decoder.hpp"

namespace napl {

/// Per-point class in {1..C}; `winner` is the prototype that decided it.
struct SegmentationResult {
  std::vector<int> labels;
  std::vector<std::size_t> winner;
};

namespace detail {

template <typename T>
std::vector<double> logits_values(const BasicTensor<T>& features, const BasicTensor<T>& prototypes) {
  NoGradGuard no_grad;
  auto logits = mask_logits(features, prototypes);
  return {logits.values().begin(), logits.values().end()};
}

}  // namespace detail

/// ĉ_i = argmax_{c ≤ C} Σ_k sigmoid(f_i·p_k)·s_k^c; the no-object column
/// never wins and ties go to the smaller class.
template <typename T>
SegmentationResult semantic_inference(const BasicTensor<T>& features, const PrototypeSet<T>& protos) {
  const std::size_t nq = protos.num_queries(), C = protos.num_classes();
  const std::size_t N = features.dim(0);
  const auto logits = detail::logits_values(features, protos.prototypes);
  SegmentationResult out;
  out.labels.resize(N);
  out.winner.resize(N);
  std::vector<double> masks(nq), score(C);
  for (std::size_t i = 0; i < N; ++i) {
    std::fill(score.begin(), score.end(), 0.0);
    for (std::size_t k = 0; k < nq; ++k) {
      masks[k] = detail::stable_sigmoid(logits[k * N + i]);
      for (std::size_t c = 0; c < C; ++c) score[c] += masks[k] * protos.scores(k, c);
    }
    std::size_t best = 0;
    for (std::size_t c = 1; c < C; ++c) {
      if (score[c] > score[best]) best = c;
    }
    std::size_t win = 0;
    double win_value = -1;
    for (std::size_t k = 0; k < nq; ++k) {
      const double contrib = masks[k] * protos.scores(k, best);
      if (contrib > win_value) {
        win_value = contrib;
        win = k;
      }
    }
    out.labels[i] = static_cast<int>(best) + 1;
    out.winner[i] = win;
  }
  return out;
}

enum class PrototypeDistance { NegativeInnerProduct, Euclidean };

/// Labels each point with the class of its nearest retained prototype
/// (argmax class ≠ no-object). Default distance is −f·p.
template <typename T>
SegmentationResult nearest_prototype_assign(const BasicTensor<T>& features, const PrototypeSet<T>& protos,
                                            PrototypeDistance distance = PrototypeDistance::NegativeInnerProduct) {
  const std::size_t C = protos.num_classes(), D = features.dim(1), N = features.dim(0);
  require(protos.prototypes.dim(1) == D, "nearest_prototype_assign: feature and prototype widths differ");
  std::vector<std::size_t> retained;
  for (std::size_t k = 0; k < protos.num_queries(); ++k) {
    if (protos.predicted_column(k) != C) retained.push_back(k);
  }
  if (retained.empty()) {
    throw ContractError("nearest_prototype_assign: every prototype predicts no-object; use semantic_inference instead");
  }
  SegmentationResult out;
  out.labels.resize(N);
  out.winner.resize(N);
  for (std::size_t i = 0; i < N; ++i) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t arg = retained.front();
    for (std::size_t k : retained) {
      double d = 0;
      if (distance == PrototypeDistance::NegativeInnerProduct) {
        for (std::size_t t = 0; t < D; ++t) d -= static_cast<double>(features(i, t)) * protos.prototypes(k, t);
      } else {
        for (std::size_t t = 0; t < D; ++t) {
          const double diff = static_cast<double>(features(i, t)) - protos.prototypes(k, t);
          d += diff * diff;
        }
      }
      if (d < best) {
        best = d;
        arg = k;
      }
    }
    out.labels[i] = static_cast<int>(protos.predicted_column(arg)) + 1;
    out.winner[i] = arg;
  }
  return out;
}

/// Per-class prototype counts k_c per frame and their averages.
struct PrototypeStats {
  std::size_t num_classes = 0;
  std::vector<std::vector<std::size_t>> frame_counts;
  // presence[f][c]: class c+1 occurs in frame f's ground truth (all true when
  // unknown). Averages run over frames where the class is present.
  std::vector<std::vector<bool>> presence;

  void add_frame(std::vector<std::size_t> counts, std::vector<bool> present = {}) {
    require(counts.size() == num_classes, "PrototypeStats: count vector has the wrong length");
    if (present.empty()) present.assign(num_classes, true);
    frame_counts.push_back(std::move(counts));
    presence.push_back(std::move(present));
  }

  void merge(const PrototypeStats& other) {
    require(other.num_classes == num_classes, "PrototypeStats: class count mismatch");
    for (std::size_t f = 0; f < other.frame_counts.size(); ++f) add_frame(other.frame_counts[f], other.presence[f]);
  }

  std::size_t frames() const { return frame_counts.size(); }

  /// Average k_c per class; nullopt for classes never present.
  std::vector<std::optional<double>> averages() const {
    std::vector<std::optional<double>> out(num_classes);
    for (std::size_t c = 0; c < num_classes; ++c) {
      double total = 0;
      std::size_t n = 0;
      for (std::size_t f = 0; f < frame_counts.size(); ++f) {
        if (!presence[f][c]) continue;
        total += static_cast<double>(frame_counts[f][c]);
        ++n;
      }
      if (n > 0) out[c] = total / static_cast<double>(n);
    }
    return out;
  }
};

/// Counts, per class, the prototypes that predict that class and are the
/// winning contributor (largest sigmoid(f_i·p_k)·s_k^{ĉ_i}) for at least one
/// point.
template <typename T>
std::vector<std::size_t> count_active_prototypes(const BasicTensor<T>& features, const PrototypeSet<T>& protos) {
  const std::size_t C = protos.num_classes();
  const auto seg = semantic_inference(features, protos);
  std::vector<bool> active(protos.num_queries(), false);
  for (auto k : seg.winner) active[k] = true;
  std::vector<std::size_t> counts(C, 0);
  for (std::size_t k = 0; k < protos.num_queries(); ++k) {
    const std::size_t col = protos.predicted_column(k);
    if (active[k] && col != C) ++counts[col];
  }
  return counts;
}

template <typename T>
PrototypeStats count_prototypes(const PrototypeSet<T>& protos, const BasicTensor<T>& features,
                                std::span<const int> gt_labels = {}) {
  PrototypeStats stats;
  stats.num_classes = protos.num_classes();
  std::vector<bool> present;
  if (!gt_labels.empty()) {
    present.assign(stats.num_classes, false);
    for (int l : gt_labels) {
      if (l >= 1 && static_cast<std::size_t>(l) <= stats.num_classes) present[static_cast<std::size_t>(l - 1)] = true;
    }
  }
  stats.add_frame(count_active_prototypes(features, protos), std::move(present));
  return stats;
}

/// counts(gt, pred) over non-ignored points, classes 1..C.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t num_classes = 0) : num_classes_(num_classes), counts_(num_classes * num_classes, 0) {}

  std::size_t num_classes() const { return num_classes_; }
  std::uint64_t at(int gt, int pred) const { return counts_[index(gt, pred)]; }
  std::uint64_t& at(int gt, int pred) { return counts_[index(gt, pred)]; }

  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (auto c : counts_) t += c;
    return t;
  }

  void merge(const ConfusionMatrix& other) {
    require(other.num_classes_ == num_classes_, "ConfusionMatrix: class count mismatch");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  }

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::size_t index(int gt, int pred) const {
    if (gt < 1 || pred < 1 || static_cast<std::size_t>(gt) > num_classes_ || static_cast<std::size_t>(pred) > num_classes_) {
      throw ContractError("confusion matrix label out of range: gt=" + std::to_string(gt) +
                          " pred=" + std::to_string(pred));
    }
    return static_cast<std::size_t>(gt - 1) * num_classes_ + static_cast<std::size_t>(pred - 1);
  }

  std::size_t num_classes_;
  std::vector<std::uint64_t> counts_;
};

/// Adds one count per point with a non-ignored ground-truth label.
inline void accumulate_confusion(std::span<const int> pred, std::span<const int> gt, ConfusionMatrix& cm) {
  require(pred.size() == gt.size(), "accumulate_confusion: prediction and ground truth lengths differ");
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i] == kIgnoreLabel) continue;
    ++cm.at(gt[i], pred[i]);
  }
}

struct IouReport {
  std::vector<std::optional<double>> per_class;  // nullopt: class absent from gt and pred
  double mean = 0;
};

/// IoU_c = TP/(TP + FP + FN); classes with zero denominator are left out of
/// the mean.
inline IouReport miou(const ConfusionMatrix& cm) {
  require(cm.total() > 0, "miou: confusion matrix is empty");
  const auto C = static_cast<int>(cm.num_classes());
  IouReport r;
  r.per_class.resize(static_cast<std::size_t>(C));
  double total = 0;
  int present = 0;
  for (int c = 1; c <= C; ++c) {
    std::uint64_t tp = cm.at(c, c), fp = 0, fn = 0;
    for (int o = 1; o <= C; ++o) {
      if (o == c) continue;
      fp += cm.at(o, c);
      fn += cm.at(c, o);
    }
    const std::uint64_t denom = tp + fp + fn;
    if (denom == 0) continue;
    const double iou = static_cast<double>(tp) / static_cast<double>(denom);
    r.per_class[static_cast<std::size_t>(c - 1)] = iou;
    total += iou;
    ++present;
  }
  r.mean = total / present;
  return r;
}

}  // namespace napl

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "prockd/encoder.hpp"
#include "prockd/params.hpp"
#include "prockd/tensor.hpp"

namespace prockd::distill {

// Pairs each student layer with one teacher layer; both 1-based.
struct LayerMap {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (student, teacher)

  std::vector<std::size_t> teacher_layers() const;
  // Throws Errc::InvalidDepths unless strictly increasing in both coordinates
  // and within the given depths, with one pair per student layer.
  void validate(std::size_t teacher_depth, std::size_t student_depth) const;
};

// Student layer j maps to teacher layer round(j * m / n), clamped to [1, m].
LayerMap uniform_layer_map(std::size_t teacher_depth, std::size_t student_depth);

// Learnable W_h taking student hidden width d' to teacher width d.
struct HiddenProjector {
  Tensor weight;  // [d' x d]

  static HiddenProjector create(std::size_t student_dim, std::size_t teacher_dim, std::uint64_t seed);
  static HiddenProjector identity(std::size_t dim);
  ParamList parameters() const { return {{"w_h", weight}}; }
};

struct LossWeights {
  double emb = 0.3;
  double pro = 1.0;
  double stu = 1.0;

  void validate() const;  // nonnegative, not all zero
};

enum class HeadMatch {
  // Student head i is compared to teacher head (i+1)*(h_T/h_S) - 1; needs h_S | h_T.
  Subsample,
  // Student head i is compared to the mean of the teacher heads k with floor(k*h_S/h_T) == i.
  Pool,
};

// Teacher head indices (0-based) paired with each student head under Subsample.
std::vector<std::size_t> subsampled_heads(std::size_t teacher_heads, std::size_t student_heads);

// sum over mapped layers of sum_i MSE(A_i^S, A_i^T) + MSE(F^S W_h, F^T).
Tensor embedding_loss(const LayerMap& map, const HiddenProjector& proj,
                      const std::vector<model::LayerOutput>& student_layers,
                      const std::vector<model::LayerOutput>& teacher_layers,
                      HeadMatch match = HeadMatch::Subsample);

// KL(softmax(y_con) || softmax(y_stu)) + CE(y_con, labels).
Tensor prototype_loss(const Tensor& y_con, const Tensor& y_stu, std::span<const std::size_t> labels);

// lambda_emb * L_emb + lambda_pro * L_pro + lambda_stu * L_stu. Terms whose
// weight is zero are skipped and may be left undefined. Throws Errc::NonFinite.
Tensor total_loss(const LossWeights& weights, const Tensor& emb, const Tensor& pro, const Tensor& stu);

}  // namespace prockd::distill

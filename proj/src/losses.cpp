#include "prockd/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "prockd/error.hpp"
#include "prockd/ops.hpp"

namespace prockd::distill {

std::vector<std::size_t> LayerMap::teacher_layers() const {
  std::vector<std::size_t> out;
  for (const auto& [s, t] : pairs) out.push_back(t);
  return out;
}

void LayerMap::validate(std::size_t teacher_depth, std::size_t student_depth) const {
  if (pairs.size() != student_depth)
    fail(Errc::InvalidDepths, "layer map has " + std::to_string(pairs.size()) + " pairs for " +
                                  std::to_string(student_depth) + " student layers");
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto [s, t] = pairs[i];
    if (s < 1 || s > student_depth || t < 1 || t > teacher_depth)
      fail(Errc::InvalidDepths, "layer pair out of range");
    if (i > 0 && (s <= pairs[i - 1].first || t <= pairs[i - 1].second))
      fail(Errc::InvalidDepths, "layer map must be strictly increasing");
  }
}

LayerMap uniform_layer_map(std::size_t teacher_depth, std::size_t student_depth) {
  if (student_depth < 1 || teacher_depth < student_depth)
    fail(Errc::InvalidDepths, "cannot map " + std::to_string(student_depth) + " student layers onto " +
                                  std::to_string(teacher_depth) + " teacher layers");
  LayerMap map;
  const double stride = static_cast<double>(teacher_depth) / static_cast<double>(student_depth);
  for (std::size_t j = 1; j <= student_depth; ++j) {
    auto t = static_cast<std::size_t>(std::llround(static_cast<double>(j) * stride));
    t = std::clamp<std::size_t>(t, 1, teacher_depth);
    map.pairs.emplace_back(j, t);
  }
  return map;
}

HiddenProjector HiddenProjector::create(std::size_t student_dim, std::size_t teacher_dim, std::uint64_t seed) {
  Rng rng(seed);
  HiddenProjector p{randn({student_dim, teacher_dim}, 1.0 / std::sqrt(static_cast<double>(student_dim)), rng)};
  p.weight.set_requires_grad(true);
  return p;
}

HiddenProjector HiddenProjector::identity(std::size_t dim) {
  std::vector<double> eye(dim * dim, 0.0);
  for (std::size_t i = 0; i < dim; ++i) eye[i * dim + i] = 1.0;
  HiddenProjector p{Tensor({dim, dim}, std::move(eye))};
  p.weight.set_requires_grad(true);
  return p;
}

void LossWeights::validate() const {
  if (!(emb >= 0.0 && pro >= 0.0 && stu >= 0.0))
    fail(Errc::InvalidConfig, "loss weights must be nonnegative");
  if (emb == 0.0 && pro == 0.0 && stu == 0.0) fail(Errc::InvalidConfig, "loss weights are all zero");
}

std::vector<std::size_t> subsampled_heads(std::size_t teacher_heads, std::size_t student_heads) {
  if (student_heads == 0 || teacher_heads < student_heads || teacher_heads % student_heads != 0)
    fail(Errc::HeadMismatch, std::to_string(student_heads) + " student heads cannot subsample " +
                                 std::to_string(teacher_heads) + " teacher heads");
  const std::size_t stride = teacher_heads / student_heads;
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < student_heads; ++i) out.push_back((i + 1) * stride - 1);
  return out;
}

namespace {

// Teacher attention target for student head i: [B x 1 x l x l].
Tensor teacher_target(const model::LayerOutput& teacher, std::size_t student_heads, std::size_t i,
                      HeadMatch match) {
  const std::size_t ht = teacher.heads;
  if (match == HeadMatch::Subsample || ht == student_heads) {
    const std::size_t k = subsampled_heads(ht, student_heads)[i];
    return slice(teacher.attention, 1, k, k + 1);
  }
  if (student_heads > ht) fail(Errc::HeadMismatch, "student has more heads than the teacher");
  std::vector<Tensor> group;
  for (std::size_t k = 0; k < ht; ++k)
    if (k * student_heads / ht == i) group.push_back(slice(teacher.attention, 1, k, k + 1));
  Tensor acc = group.front();
  for (std::size_t g = 1; g < group.size(); ++g) acc = add(acc, group[g]);
  return scale(acc, 1.0 / static_cast<double>(group.size()));
}

}  // namespace

Tensor embedding_loss(const LayerMap& map, const HiddenProjector& proj,
                      const std::vector<model::LayerOutput>& student_layers,
                      const std::vector<model::LayerOutput>& teacher_layers, HeadMatch match) {
  map.validate(teacher_layers.size(), student_layers.size());
  Tensor total;
  auto accumulate = [&total](const Tensor& term) { total = total.defined() ? add(total, term) : term; };
  for (const auto& [s, t] : map.pairs) {
    const auto& stu = student_layers[s - 1];
    const auto& tea = teacher_layers[t - 1];
    if (stu.batch != tea.batch || stu.tokens != tea.tokens)
      fail(Errc::ShapeMismatch, "student and teacher layers disagree on batch or token length");
    for (std::size_t i = 0; i < stu.heads; ++i)
      accumulate(mse(slice(stu.attention, 1, i, i + 1), teacher_target(tea, stu.heads, i, match)));
    accumulate(mse(matmul(stu.hidden, proj.weight), tea.hidden));
  }
  return total;
}

Tensor prototype_loss(const Tensor& y_con, const Tensor& y_stu, std::span<const std::size_t> labels) {
  return add(kl_divergence(y_con, y_stu), cross_entropy(y_con, labels));
}

Tensor total_loss(const LossWeights& weights, const Tensor& emb, const Tensor& pro, const Tensor& stu) {
  Tensor total;
  const std::pair<double, const Tensor*> terms[] = {{weights.emb, &emb}, {weights.pro, &pro}, {weights.stu, &stu}};
  for (const auto& [w, term] : terms) {
    if (w == 0.0) continue;
    if (!term->defined() || term->numel() != 1) fail(Errc::NotScalar, "loss term must be a scalar");
    if (!std::isfinite(term->item())) fail(Errc::NonFinite, "loss term is not finite");
    Tensor weighted = scale(*term, w);
    total = total.defined() ? add(total, weighted) : weighted;
  }
  if (!total.defined()) fail(Errc::InvalidConfig, "loss weights are all zero");
  return total;
}

}  // namespace prockd::distill

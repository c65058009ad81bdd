#include "prockd/distill.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "prockd/error.hpp"
#include "prockd/ops.hpp"
#include "prockd/tape.hpp"

namespace prockd::distill {
namespace {

std::size_t tap_width(const harness::DistillConfig& c) { return c.tap.size() * c.teacher.hidden_dim; }

model::Classifier make_head(std::size_t dim, std::size_t classes, std::uint64_t seed) {
  Rng rng(seed);
  model::Classifier head{randn({dim, classes}, 1.0 / std::sqrt(static_cast<double>(dim)), rng),
                         Tensor::zeros({classes})};
  set_trainable(head.parameters(), true);
  return head;
}

double batch_accuracy(const Tensor& logits, std::span<const std::size_t> labels) {
  const std::size_t b = logits.dim(0), c = logits.dim(1);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < b; ++i) {
    auto row = logits.data().subspan(i * c, c);
    const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    correct += best == labels[i] ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(b);
}

ParamList collect(const DistillState& s) {
  ParamList p = prefixed(s.student.parameters(), "student.");
  append(p, prefixed(s.bank.parameters(), "proto."));
  append(p, prefixed(s.aug.parameters(), "aug."));
  if (s.teacher_aug) append(p, prefixed(s.teacher_aug->parameters(), "taug."));
  append(p, prefixed(s.projector.parameters(), "proj."));
  append(p, prefixed(s.proto_head.parameters(), "proto_"));
  return p;
}

}  // namespace

LossWeights baseline_weights(Baseline baseline, const LossWeights& configured) {
  switch (baseline) {
    case Baseline::None: return {0.0, 0.0, 1.0};
    case Baseline::Fbkd: return {configured.emb, 0.0, configured.stu};
    case Baseline::Proc: return configured;
  }
  return configured;
}

TeacherCache::TeacherCache(const model::Encoder& teacher, const data::SyntheticDataset& dataset,
                           const std::vector<std::size_t>& layers)
    : layers_(teacher.config().layers),
      depth_(teacher.config().layers),
      tokens_(teacher.config().token_len()),
      heads_(teacher.config().heads) {
  for (auto l : layers) {
    if (l < 1 || l > depth_) fail(Errc::IndexOutOfRange, "teacher layer " + std::to_string(l));
    layers_[l - 1].cached = true;
    layers_[l - 1].dim = teacher.config().hidden_dim;
  }
  const std::size_t n = dataset.size(), chunk = 100;
  for (auto& layer : layers_) {
    if (!layer.cached) continue;
    layer.hidden.reserve(n * tokens_ * layer.dim);
    layer.attention.reserve(n * heads_ * tokens_ * tokens_);
  }
  TapeScope no_tape(nullptr);
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < n; start += chunk) {
    idx.resize(std::min(chunk, n - start));
    std::iota(idx.begin(), idx.end(), start);
    auto out = teacher.forward(dataset.batch(idx));
    for (std::size_t l = 0; l < depth_; ++l) {
      if (!layers_[l].cached) continue;
      auto h = out.layers[l].hidden.data();
      auto a = out.layers[l].attention.data();
      layers_[l].hidden.insert(layers_[l].hidden.end(), h.begin(), h.end());
      layers_[l].attention.insert(layers_[l].attention.end(), a.begin(), a.end());
    }
  }
}

std::vector<model::LayerOutput> TeacherCache::gather(std::span<const std::size_t> indices) const {
  std::vector<model::LayerOutput> out(depth_);
  const std::size_t b = indices.size(), att = heads_ * tokens_ * tokens_;
  for (std::size_t l = 0; l < depth_; ++l) {
    const auto& layer = layers_[l];
    if (!layer.cached) continue;
    const std::size_t rows = tokens_ * layer.dim;
    std::vector<double> hidden(b * rows), attention(b * att);
    for (std::size_t i = 0; i < b; ++i) {
      std::copy_n(layer.hidden.begin() + static_cast<std::ptrdiff_t>(indices[i] * rows), rows,
                  hidden.begin() + static_cast<std::ptrdiff_t>(i * rows));
      std::copy_n(layer.attention.begin() + static_cast<std::ptrdiff_t>(indices[i] * att), att,
                  attention.begin() + static_cast<std::ptrdiff_t>(i * att));
    }
    out[l] = model::LayerOutput{Tensor({b * tokens_, layer.dim}, std::move(hidden)),
                                Tensor({b, heads_, tokens_, tokens_}, std::move(attention)), b, tokens_, heads_};
  }
  return out;
}

DistillState::DistillState(const harness::DistillConfig& config, const LossWeights& w)
    : teacher_config(config.teacher),
      student(config.student, derive_seed(config.seed, kInitStream)),
      bank(proto::PrototypeBank::create(config.prototypes, tap_width(config), derive_seed(config.seed, kBankStream))),
      aug(augment::AugmentParams::create(tap_width(config), config.student.hidden_dim, config.attn_dim,
                                         derive_seed(config.seed, kAugmentStream))),
      teacher_aug(config.teacher_augment
                      ? std::optional(augment::AugmentParams::create(tap_width(config), tap_width(config),
                                                                     config.attn_dim, config.student.hidden_dim,
                                                                     derive_seed(config.seed, kTeacherAugmentStream)))
                      : std::nullopt),
      projector(HiddenProjector::create(config.student.hidden_dim, config.teacher.hidden_dim,
                                        derive_seed(config.seed, kProjectorStream))),
      proto_head(make_head(tap_width(config), config.student.num_classes, derive_seed(config.seed, kProtoHeadStream))),
      aug_classifier(student.classifier()),
      map(config.layer_map()),
      weights(w),
      match(config.head_match),
      tap(config.tap),
      use_proto_head(config.proto_head),
      optimizer(collect(*this), config.optim) {
  weights.validate();
  map.validate(config.teacher.layers, config.student.layers);
}

ParamList DistillState::trainable() const { return collect(*this); }

ParamList DistillState::state_tensors() const { return collect(*this); }

std::vector<std::size_t> DistillState::teacher_layers_needed() const {
  std::set<std::size_t> need;
  if (weights.emb > 0)
    for (auto t : map.teacher_layers()) need.insert(t);
  if (weights.pro > 0)
    for (auto t : tap) need.insert(t);
  return {need.begin(), need.end()};
}

LossTerms distill_losses(const DistillState& state, const Batch& batch) {
  LossTerms terms;
  const auto out = state.student.forward(batch.images);
  terms.logits = out.logits;
  terms.stu = cross_entropy(out.logits, batch.labels);
  if (state.weights.emb > 0)
    terms.emb = embedding_loss(state.map, state.projector, out.layers, batch.teacher, state.match);
  if (state.weights.pro > 0) {
    const auto& last = out.layers.back();
    const Tensor tokens = reshape(last.hidden, {last.batch, last.tokens, last.hidden.dim(1)});
    const Tensor y_con = augment::consistency_logits(state.aug, *state.aug_classifier, state.bank.prototypes, tokens);
    Tensor pro = prototype_loss(y_con, out.logits, batch.labels);
    if (state.use_proto_head || state.teacher_aug) {
      const Tensor feature = proto::tap_features(batch.teacher, state.tap, state.teacher_config.grid(),
                                                 state.teacher_config.class_token);
      if (state.use_proto_head) {
        const auto po = proto::prototype_forward(state.bank, feature);
        pro = add(pro, cross_entropy(state.proto_head.forward(po.pooled), batch.labels));
      }
      if (state.teacher_aug) {
        const Tensor y_con_t = augment::consistency_logits(*state.teacher_aug, *state.aug_classifier,
                                                           state.bank.prototypes, model::spatial_as_hidden(feature));
        pro = add(pro, prototype_loss(y_con_t, out.logits, batch.labels));
      }
    }
    terms.pro = pro;
  }
  terms.total = total_loss(state.weights, terms.emb, terms.pro, terms.stu);
  return terms;
}

StepResult distill_step(DistillState& state, const Batch& batch) {
  Tape tape;
  TapeScope scope(tape);
  const LossTerms terms = distill_losses(state, batch);
  tape.backward(terms.total);

  StepResult r;
  r.emb = terms.emb.defined() ? terms.emb.item() : 0.0;
  r.pro = terms.pro.defined() ? terms.pro.item() : 0.0;
  r.stu = terms.stu.item();
  r.metrics.loss_total = terms.total.item();
  r.metrics.loss_emb = r.emb;
  r.metrics.loss_pro = r.pro;
  r.metrics.loss_stu = r.stu;
  r.metrics.train_acc = batch_accuracy(terms.logits, batch.labels);
  r.metrics.grad_norm = state.optimizer.grad_norm();
  if (!std::isfinite(r.metrics.grad_norm)) fail(Errc::NonFinite, "gradient norm is not finite");
  state.optimizer.step();
  state.optimizer.zero_grad();
  return r;
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t samples, std::size_t batch_size, Rng& rng) {
  std::vector<std::size_t> order(samples);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng.engine());
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < samples; start += batch_size)
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(samples, start + batch_size)));
  return out;
}

double accuracy(const model::Encoder& model, const data::SyntheticDataset& dataset, std::size_t batch_size) {
  TapeScope no_tape(nullptr);
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < dataset.size(); start += batch_size) {
    idx.resize(std::min(batch_size, dataset.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    const auto labels = dataset.batch_labels(idx);
    const double acc = batch_accuracy(model.forward(dataset.batch(idx)).logits, labels);
    correct += static_cast<std::size_t>(std::llround(acc * static_cast<double>(idx.size())));
  }
  return static_cast<double>(correct) / static_cast<double>(dataset.size());
}

std::vector<harness::MetricsRow> train_classifier(model::Encoder& model, const data::SyntheticDataset& train,
                                                  const data::SyntheticDataset& val, const TrainSettings& settings,
                                                  const RowSink& sink) {
  if (model.frozen()) fail(Errc::InvalidConfig, "cannot train a frozen model");
  AdamW optimizer(model.parameters(), settings.optim);
  Rng rng(settings.shuffle_seed);
  std::vector<harness::MetricsRow> rows;
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= settings.epochs; ++epoch) {
    const auto batches = epoch_batches(train.size(), settings.batch_size, rng);
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const auto labels = train.batch_labels(batches[b]);
      harness::MetricsRow row;
      {
        Tape tape;
        TapeScope scope(tape);
        const auto out = model.forward(train.batch(batches[b]));
        const Tensor loss = cross_entropy(out.logits, labels);
        tape.backward(loss);
        row.loss_total = row.loss_stu = loss.item();
        row.train_acc = batch_accuracy(out.logits, labels);
      }
      row.grad_norm = optimizer.grad_norm();
      if (!std::isfinite(row.grad_norm)) fail(Errc::NonFinite, "gradient norm is not finite");
      optimizer.step();
      optimizer.zero_grad();
      row.step = ++step;
      row.epoch = epoch;
      if (b + 1 == batches.size()) row.val_acc = accuracy(model, val);
      if (sink) sink(row);
      rows.push_back(row);
    }
  }
  return rows;
}

std::vector<harness::MetricsRow> run_distillation(DistillState& state, const model::Encoder& teacher,
                                                  const data::SyntheticDataset& train,
                                                  const data::SyntheticDataset& val, const TrainSettings& settings,
                                                  const DistillHooks& hooks) {
  if (!teacher.frozen()) fail(Errc::InvalidConfig, "distillation requires a frozen teacher");
  const auto needed = state.teacher_layers_needed();
  std::optional<TeacherCache> cache;
  if (!needed.empty()) cache.emplace(teacher, train, needed);

  Rng rng(settings.shuffle_seed);
  std::vector<harness::MetricsRow> rows;
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= settings.epochs; ++epoch) {
    const auto batches = epoch_batches(train.size(), settings.batch_size, rng);
    for (std::size_t b = 0; b < batches.size(); ++b) {
      Batch batch{train.batch(batches[b]), train.batch_labels(batches[b]), {}};
      if (cache) batch.teacher = cache->gather(batches[b]);
      auto row = distill_step(state, batch).metrics;
      row.step = ++step;
      row.epoch = epoch;
      if (b + 1 == batches.size()) row.val_acc = accuracy(state.student, val);
      if (hooks.row) hooks.row(row);
      rows.push_back(row);
    }
    if (hooks.epoch_end) hooks.epoch_end(epoch, state);
  }
  return rows;
}

}  // namespace prockd::distill

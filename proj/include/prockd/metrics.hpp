#pragma once

#include <cstddef>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace prockd::harness {

struct MetricsRow {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double loss_total = 0.0;
  double loss_emb = 0.0;
  double loss_pro = 0.0;
  double loss_stu = 0.0;
  double train_acc = 0.0;
  std::optional<double> val_acc;  // set on the last step of each epoch
  double grad_norm = 0.0;         // not part of the CSV
};

inline constexpr const char* kMetricsHeader = "step,epoch,loss_total,loss_emb,loss_pro,loss_stu,train_acc,val_acc";

// Shortest round-trip decimal form, independent of the C++ locale.
std::string format_double(double v);
std::string metrics_csv(const std::vector<MetricsRow>& rows);
void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows);

}  // namespace prockd::harness

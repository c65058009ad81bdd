#include "prockd/metrics.hpp"

#include <charconv>
#include <fstream>

#include "prockd/error.hpp"

namespace prockd::harness {

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::string out = kMetricsHeader;
  out += '\n';
  for (const auto& r : rows) {
    out += std::to_string(r.step) + ',' + std::to_string(r.epoch) + ',' + format_double(r.loss_total) + ',' +
           format_double(r.loss_emb) + ',' + format_double(r.loss_pro) + ',' + format_double(r.loss_stu) + ',' +
           format_double(r.train_acc) + ',' + (r.val_acc ? format_double(*r.val_acc) : std::string()) + '\n';
  }
  return out;
}

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(Errc::IoError, "cannot write " + path);
  out << metrics_csv(rows);
}

}  // namespace prockd::harness

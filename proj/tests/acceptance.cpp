// Acceptance suite: one PASS/FAIL line per criterion, exit status 0 iff all
// pass. The behavioral runs use the default benchmark in configs/default.ini.

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <memory>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>
#include <unistd.h>

#include "oracles.hpp"
#include "prockd/augment.hpp"
#include "prockd/checkpoint.hpp"
#include "prockd/error.hpp"
#include "prockd/gradcheck_suite.hpp"
#include "prockd/losses.hpp"
#include "prockd/metrics.hpp"
#include "prockd/ops.hpp"
#include "prockd/prototype.hpp"
#include "prockd/runs.hpp"
#include "prockd/tape.hpp"

namespace fs = std::filesystem;
using namespace prockd;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

template <typename... Args>
std::string fmt(const char* f, Args... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

void note(const std::string& s) {
  std::fprintf(stderr, "  %s\n", s.c_str());
  std::fflush(stderr);
}

// ---- 1 -------------------------------------------------------------------

Outcome gradient_correctness() {
  const auto t0 = Clock::now();
  const auto results = check::run_gradcheck_suite("all");
  const double elapsed = seconds_since(t0);
  double worst = 0.0;
  std::size_t min_instances = SIZE_MAX;
  std::string failed;
  for (const auto& r : results) {
    worst = std::max(worst, r.max_rel_error);
    min_instances = std::min(min_instances, r.instances);
    if (!r.passed) failed += " " + r.name;
  }
  const bool pass = check::all_passed(results) && min_instances >= 20 && elapsed < 120.0;
  return {pass, fmt("%zu composites, >= %zu seeds each, max rel error %.2e, %.1fs%s", results.size(), min_instances,
                    worst, elapsed, failed.empty() ? "" : (" failed:" + failed).c_str())};
}

// ---- 2 -------------------------------------------------------------------

Outcome oracle_equivalence() {
  Rng rng(2024);
  double desc_err = 0.0, agg_err = 0.0, att_err = 0.0, aug_err = 0.0;
  for (int inst = 0; inst < 50; ++inst) {
    const std::size_t n = 1 + rng.index(4), d = 1 + rng.index(4);
    std::size_t h = 1 + rng.index(3), w = 1 + rng.index(3);
    const std::size_t b = 1 + rng.index(2), hw = h * w;
    auto bank = proto::PrototypeBank::create(n, d, rng.index(1u << 30));
    Tensor f = randn({b, d, h, w}, 1.0, rng);
    TapeScope no_tape(nullptr);
    const Tensor desc = proto::descriptors(bank, f);
    const Tensor out = proto::aggregate(bank, f, desc);
    for (std::size_t s = 0; s < b; ++s) {
      const auto fs_ = f.data().subspan(s * d * hw, d * hw);
      const auto ref = oracle::descriptors(bank, fs_, hw);
      desc_err = std::max(desc_err, oracle::max_abs_diff(desc.data().subspan(s * n * d, n * d), ref));
      const auto ref_out = oracle::aggregate(bank, fs_, desc.data().subspan(s * n * d, n * d), hw);
      agg_err = std::max(agg_err, oracle::max_abs_diff(out.data().subspan(s * d * hw, d * hw), ref_out));
    }

    const std::size_t t = 1 + rng.index(6), din = 1 + rng.index(5), da = 1 + rng.index(4), pd = 1 + rng.index(5);
    const std::size_t dout = rng.index(2) == 0 ? din : 1 + rng.index(5);
    auto params = augment::AugmentParams::create(pd, din, da, dout, rng.index(1u << 30));
    Tensor protos = randn({n, pd}, 1.0, rng), tokens = randn({t, din}, 1.0, rng);
    const Tensor a = augment::attention_map(params, protos, tokens);
    const Tensor o = augment::augment(params, protos, tokens);
    att_err = std::max(att_err, oracle::max_abs_diff(a.data(), oracle::attention(params, protos.data(), n,
                                                                                   tokens.data(), t)));
    aug_err = std::max(aug_err, oracle::max_abs_diff(o.data(), oracle::augment(params, protos.data(), n,
                                                                                 tokens.data(), t)));
  }
  const bool pass = desc_err <= 1e-10 && att_err <= 1e-10 && aug_err <= 1e-10 && agg_err <= 1e-10;
  return {pass, fmt("50 instances: descriptors %.1e, aggregation %.1e, attention %.1e, augmentation %.1e", desc_err,
                    agg_err, att_err, aug_err)};
}

// ---- 3 -------------------------------------------------------------------

Outcome analytic_anchors() {
  TapeScope no_tape(nullptr);
  const Tensor uniform = Tensor::zeros({3, 4});
  const double kl = kl_divergence(uniform, uniform).item();
  const std::vector<std::size_t> labels{0, 1, 3};
  const double ce = cross_entropy(uniform, labels).item();

  Rng rng(3);
  double closed_form = 0.0;
  for (int inst = 0; inst < 20; ++inst) {
    const std::size_t d = 1 + rng.index(4), h = 1 + rng.index(3), w = 1 + rng.index(3), hw = h * w;
    auto bank = proto::PrototypeBank::create(1, d, rng.index(1u << 30));
    Tensor f = randn({d, h, w}, 1.0, rng);
    const Tensor v = proto::descriptors(bank, f);
    for (std::size_t c = 0; c < d; ++c) {
      double expect = 0.0;
      for (std::size_t j = 0; j < hw; ++j) expect += f[c * hw + j] - bank.prototypes[c];
      closed_form = std::max(closed_form, std::abs(v[c] - expect));
    }
  }
  const auto map = distill::uniform_layer_map(12, 6).teacher_layers();
  const bool map_ok = map == std::vector<std::size_t>{2, 4, 6, 8, 10, 12};
  const bool pass =
      std::abs(kl) <= 1e-12 && std::abs(ce - std::log(4.0)) <= 1e-10 && closed_form <= 1e-12 && map_ok;
  return {pass, fmt("KL %.1e, CE - ln4 %.1e, single-prototype closed form %.1e, map(12,6) %s", kl,
                    ce - std::log(4.0), closed_form, map_ok ? "[2,4,6,8,10,12]" : "WRONG")};
}

// ---- 4 (shape and normalization parts; run invariants come from the runs) --

struct RunInvariants {
  bool teacher_constant = true;
  bool classifier_shared = true;
  std::size_t epochs_checked = 0;
};

double row_sum_error(const Tensor& t, std::size_t cols) {
  double worst = 0.0;
  for (std::size_t r = 0; r < t.numel() / cols; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += t[r * cols + c];
    worst = std::max(worst, std::abs(s - 1.0));
  }
  return worst;
}

Outcome structural_invariants(const RunInvariants& run, const model::Encoder& teacher,
                              const harness::TaskData& data) {
  Rng rng(4);
  TapeScope no_tape(nullptr);
  std::size_t shape_ok = 0;
  double norm_err = 0.0;
  for (int inst = 0; inst < 100; ++inst) {
    const std::size_t n = 1 + rng.index(8), d = 1 + rng.index(8), h = 1 + rng.index(5), w = 1 + rng.index(5);
    const std::size_t b = 1 + rng.index(3);
    auto bank = proto::PrototypeBank::create(n, d, rng.index(1u << 30));
    Tensor f = randn({b, d, h, w}, 1.0, rng);
    const auto po = proto::prototype_forward(bank, f);
    norm_err = std::max(norm_err, row_sum_error(softmax(proto::assignment_logits(bank, f), 2), n));

    const std::size_t t = 1 + rng.index(10), din = 1 + rng.index(8), da = 1 + rng.index(6);
    auto params = augment::AugmentParams::create(d, din, da, rng.index(1u << 30));
    Tensor tokens = randn({b, t, din}, 1.0, rng);
    const Tensor o = augment::augment(params, bank.prototypes, tokens);
    norm_err = std::max(norm_err, row_sum_error(augment::attention_map(params, bank.prototypes, tokens), n));
    if (po.output.shape() == f.shape() && o.shape() == tokens.shape()) ++shape_ok;
  }
  std::vector<std::size_t> idx(64);
  std::iota(idx.begin(), idx.end(), 0);
  const auto fwd = teacher.forward(data.val.batch(idx));
  for (const auto& layer : fwd.layers) norm_err = std::max(norm_err, row_sum_error(layer.attention, layer.tokens));

  const bool pass = shape_ok == 100 && norm_err <= 1e-9 && run.teacher_constant && run.classifier_shared &&
                    run.epochs_checked > 0;
  return {pass, fmt("shapes %zu/100, max softmax row error %.1e, teacher checksum constant %s, shared classifier "
                    "%s over %zu epochs",
                    shape_ok, norm_err, run.teacher_constant ? "yes" : "NO", run.classifier_shared ? "yes" : "NO",
                    run.epochs_checked)};
}

// ---- runs ----------------------------------------------------------------

struct SeedResult {
  double none = 0, fbkd = 0, proc = 0;
};

double final_val(const std::vector<harness::MetricsRow>& rows) { return rows.back().val_acc.value_or(0.0); }

std::string run_command(const std::string& cmd, int& status) {
  std::string out;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (pipe == nullptr) {
    status = -1;
    return out;
  }
  std::array<char, 4096> buf{};
  while (std::fgets(buf.data(), buf.size(), pipe) != nullptr) out += buf.data();
  const int raw = pclose(pipe);
  status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return out;
}

bool tensors_identical(const ParamList& a, const ParamList& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].name != b[i].name || a[i].tensor.shape() != b[i].tensor.shape()) return false;
    const auto x = a[i].tensor.data(), y = b[i].tensor.data();
    if (std::memcmp(x.data(), y.data(), x.size() * sizeof(double)) != 0) return false;
  }
  return true;
}

template <typename F>
Errc error_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return Errc::IoError;  // sentinel: nothing thrown
}

}  // namespace

int main(int argc, char** argv) {
  // Optional: acceptance <report-file> also writes the summary there.
  const std::string report_path = argc > 1 ? argv[1] : "";
  harness::tune_allocator();
  const auto start = Clock::now();
  std::map<int, std::pair<std::string, Outcome>> results;
  auto record = [&](int id, const std::string& title, const std::function<Outcome()>& fn) {
    std::fprintf(stderr, "[%d] %s ...\n", id, title.c_str());
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::fprintf(stderr, "[%d] %s: %s\n", id, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    results[id] = {title, o};
  };

  record(1, "gradient correctness", gradient_correctness);
  record(2, "oracle equivalence", oracle_equivalence);
  record(3, "analytic anchors", analytic_anchors);

  const fs::path work = fs::temp_directory_path() / ("prockd_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(work);
  const std::string config_path = PROCKD_DEFAULT_CONFIG;
  harness::DistillConfig config;
  try {
    config = harness::load_config(config_path);
  } catch (const std::exception& e) {
    std::printf("FAIL  cannot load %s: %s\n", config_path.c_str(), e.what());
    return 1;
  }

  // Behavioral benchmark: one teacher, five student seeds, three objectives.
  const auto bench_start = Clock::now();
  const auto teacher_data = harness::load_task(config, harness::Task::Teacher);
  const auto student_data = harness::load_task(config, harness::Task::Student);
  auto t0 = Clock::now();
  auto teacher_run = harness::train_teacher(config, teacher_data);
  const model::Encoder& teacher = teacher_run.teacher;
  note(fmt("teacher: val_acc %.4f in %.0fs", final_val(teacher_run.rows), seconds_since(t0)));

  RunInvariants invariants;
  std::vector<SeedResult> seeds;
  std::vector<harness::MetricsRow> none_rows_seed1;
  std::unique_ptr<distill::DistillState> proc_seed1;
  std::vector<harness::MetricsRow> proc_rows_seed1;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto c = config;
    c.seed = seed;
    SeedResult r;
    t0 = Clock::now();
    auto none = harness::run_distill(c, teacher, student_data, distill::Baseline::None);
    r.none = final_val(none.rows);
    auto fbkd = harness::run_distill(c, teacher, student_data, distill::Baseline::Fbkd);
    r.fbkd = final_val(fbkd.rows);
    distill::DistillHooks hooks;
    const auto before = checksum(teacher.parameters());
    hooks.epoch_end = [&](std::size_t, const distill::DistillState& s) {
      invariants.teacher_constant = invariants.teacher_constant && checksum(teacher.parameters()) == before;
      invariants.classifier_shared = invariants.classifier_shared && s.classifier_shared();
      ++invariants.epochs_checked;
    };
    auto proc = harness::run_distill(c, teacher, student_data, distill::Baseline::Proc, hooks);
    invariants.teacher_constant = invariants.teacher_constant &&
                                  proc.teacher_checksum_before == proc.teacher_checksum_after;
    r.proc = final_val(proc.rows);
    note(fmt("seed %lu: plain %.4f  fbkd %.4f  proc %.4f  (%.0fs)", static_cast<unsigned long>(seed), r.none, r.fbkd,
             r.proc, seconds_since(t0)));
    seeds.push_back(r);
    if (seed == 1) {
      none_rows_seed1 = none.rows;
      proc_seed1 = std::move(proc.state);
      proc_rows_seed1 = proc.rows;
    }
  }
  const double bench_seconds = seconds_since(bench_start);

  record(4, "structural invariants", [&] { return structural_invariants(invariants, teacher, teacher_data); });

  record(5, "degenerate-weight equivalence", [&] {
    auto c = config;
    c.seed = 1;
    model::Encoder student(c.student, derive_seed(c.seed, distill::kInitStream));
    const auto rows = distill::train_classifier(student, student_data.train, student_data.val,
                                                harness::student_settings(c));
    const std::string standalone = harness::metrics_csv(rows), distilled = harness::metrics_csv(none_rows_seed1);
    return Outcome{standalone == distilled,
                   fmt("%zu rows, %zu bytes, byte-identical: %s", rows.size(), standalone.size(),
                       standalone == distilled ? "yes" : "no")};
  });

  record(6, "cross-task gain", [&] {
    std::size_t beats_plain = 0, beats_fbkd = 0;
    std::string table;
    double mean_plain = 0, mean_fbkd = 0, mean_proc = 0;
    for (std::size_t i = 0; i < seeds.size(); ++i) {
      const auto& r = seeds[i];
      beats_plain += r.proc > r.none ? 1 : 0;
      beats_fbkd += (r.proc - r.none) > (r.fbkd - r.none) ? 1 : 0;
      mean_plain += r.none / 5;
      mean_fbkd += r.fbkd / 5;
      mean_proc += r.proc / 5;
      table += fmt(" s%zu:%.3f/%.3f/%.3f", i + 1, r.none, r.fbkd, r.proc);
    }
    const bool pass = beats_plain >= 4 && beats_fbkd >= 3 && bench_seconds < 1800.0;
    return Outcome{pass, fmt("proc > plain in %zu/5, proc gain > fbkd gain in %zu/5, mean plain/fbkd/proc "
                             "%.4f/%.4f/%.4f, %.0fs;",
                             beats_plain, beats_fbkd, mean_plain, mean_fbkd, mean_proc, bench_seconds) +
                         table};
  });

  const fs::path teacher_ckpt = work / "teacher.ckpt";
  record(7, "prototype-count ablation", [&] {
    harness::save_checkpoint(teacher_ckpt.string(), harness::teacher_checkpoint(teacher, config));
    int status = 0;
    const std::string cmd = std::string("\"") + PROCKD_CLI_PATH + "\" ablate-prototypes --counts 24,48,72,96 --config \"" +
                            config_path + "\" --teacher \"" + teacher_ckpt.string() + "\"";
    const std::string out = run_command(cmd, status);
    std::istringstream lines(out);
    std::string line;
    std::getline(lines, line);
    const bool header = line == "prototypes,val_acc,loss_total";
    std::vector<std::size_t> counts;
    std::string row72;
    bool finite = true;
    while (std::getline(lines, line)) {
      if (line.empty()) continue;
      const auto comma = line.find(',');
      counts.push_back(std::stoul(line.substr(0, comma)));
      const auto rest = line.substr(comma + 1);
      const auto comma2 = rest.find(',');
      finite = finite && std::isfinite(std::stod(rest.substr(0, comma2))) && std::isfinite(std::stod(rest.substr(comma2 + 1)));
      if (counts.back() == 72) row72 = rest;
    }
    const bool shape = counts == std::vector<std::size_t>{24, 48, 72, 96};
    // The 72-prototype row repeats the seed-1 run above (same config, same seed).
    const std::string expect = harness::format_double(final_val(proc_rows_seed1)) + "," +
                               harness::format_double(proc_rows_seed1.back().loss_total);
    const bool deterministic = row72 == expect;
    return Outcome{status == 0 && header && shape && finite && deterministic,
                   fmt("exit %d, %zu rows, counts ascending %s, row 72 reproduces the earlier run %s", status,
                       counts.size(), shape ? "yes" : "no", deterministic ? "yes" : "no")};
  });

  record(8, "persistence", [&] {
    const ParamList tensors = harness::student_checkpoint(*proc_seed1, config);
    const std::string bytes = harness::serialize_checkpoint(tensors);
    const bool roundtrip = tensors_identical(tensors, harness::deserialize_checkpoint(bytes));
    std::string corrupted = bytes;
    corrupted[corrupted.size() - 4 - 8 * 10] ^= 0x01;  // inside the payload
    const bool crc = error_of([&] { harness::deserialize_checkpoint(corrupted); }) == Errc::ChecksumMismatch;
    const bool truncated =
        error_of([&] { harness::deserialize_checkpoint(bytes.substr(0, bytes.size() / 2)); }) == Errc::FormatError;

    const fs::path path = work / "student.ckpt";
    const double before = distill::accuracy(proc_seed1->student, student_data.val);
    harness::save_checkpoint(path.string(), tensors);
    const auto loaded = harness::load_model(path.string());
    const double after = distill::accuracy(loaded.model, student_data.val);
    const double teacher_before = distill::accuracy(teacher, teacher_data.val);
    const double teacher_after = distill::accuracy(harness::load_teacher(teacher_ckpt.string()), teacher_data.val);
    const bool pass = roundtrip && crc && truncated && before == after && teacher_before == teacher_after;
    return Outcome{pass, fmt("bitwise round trip %s, corrupted payload rejected %s, truncated file rejected %s, "
                             "student accuracy %.4f -> %.4f, teacher %.4f -> %.4f",
                             roundtrip ? "yes" : "no", crc ? "yes" : "no", truncated ? "yes" : "no", before, after,
                             teacher_before, teacher_after)};
  });

  std::error_code ec;
  fs::remove_all(work, ec);

  bool all = true;
  std::string summary = fmt("Acceptance criteria (%.0fs total)\n", seconds_since(start));
  for (const auto& [id, entry] : results) {
    summary += fmt("%s  %d  %-30s ", entry.second.pass ? "PASS" : "FAIL", id, entry.first.c_str()) +
               entry.second.detail + "\n";
    all = all && entry.second.pass;
  }
  std::printf("\n%s", summary.c_str());
  if (!report_path.empty()) std::ofstream(report_path) << summary;
  return all ? 0 : 1;
}

#include "prockd/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "prockd/error.hpp"

namespace prockd::harness {
namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void config_error(std::size_t line, const std::string& msg) {
  fail(Errc::InvalidConfig, line ? "line " + std::to_string(line) + ": " + msg : msg);
}

std::size_t line_of(const LineIndex* lines, const std::string& key) {
  if (lines == nullptr) return 0;
  auto it = lines->find(key);
  return it == lines->end() ? 0 : it->second;
}

template <typename T>
T parse_number(std::string_view v, std::size_t line, const std::string& key) {
  T out{};
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size())
    config_error(line, "invalid value '" + std::string(v) + "' for " + key);
  return out;
}

bool parse_bool(std::string_view v, std::size_t line, const std::string& key) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  config_error(line, "invalid boolean '" + std::string(v) + "' for " + key);
}

std::string join(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

std::string fmt_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

void apply_encoder(model::EncoderConfig& enc, const std::string& key, std::string_view v, std::size_t line,
                   const std::string& full) {
  if (key == "layers") enc.layers = parse_number<std::size_t>(v, line, full);
  else if (key == "heads") enc.heads = parse_number<std::size_t>(v, line, full);
  else if (key == "hidden_dim") enc.hidden_dim = parse_number<std::size_t>(v, line, full);
  else if (key == "mlp_ratio") enc.mlp_ratio = parse_number<std::size_t>(v, line, full);
  else config_error(line, "unknown key " + full);
}

}  // namespace

std::vector<std::size_t> parse_index_list(std::string_view text) {
  std::vector<std::size_t> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find(',', start);
    if (end == std::string_view::npos) end = text.size();
    auto item = trim(text.substr(start, end - start));
    if (item.empty()) fail(Errc::InvalidConfig, "empty entry in list '" + std::string(text) + "'");
    std::size_t v = 0;
    auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (ec != std::errc{} || ptr != item.data() + item.size())
      fail(Errc::InvalidConfig, "invalid list entry '" + std::string(item) + "'");
    out.push_back(v);
    start = end + 1;
  }
  return out;
}

distill::LayerMap DistillConfig::layer_map() const {
  if (teacher_layers.empty()) return distill::uniform_layer_map(teacher.layers, student.layers);
  distill::LayerMap map;
  for (std::size_t j = 0; j < teacher_layers.size(); ++j) map.pairs.emplace_back(j + 1, teacher_layers[j]);
  return map;
}

void validate(const DistillConfig& c, const LineIndex* lines) {
  auto check = [lines](bool ok, const std::string& key, const std::string& msg) {
    if (!ok) config_error(line_of(lines, key), msg);
  };
  auto check_encoder = [&](const model::EncoderConfig& e, const std::string& sec) {
    check(e.layers >= 1, sec + ".layers", sec + ".layers must be >= 1");
    check(e.heads >= 1 && e.hidden_dim % e.heads == 0, sec + ".heads", sec + ".hidden_dim must be divisible by heads");
    check(e.mlp_ratio >= 1, sec + ".mlp_ratio", sec + ".mlp_ratio must be >= 1");
    check(e.patch_size >= 1 && e.image_size % e.patch_size == 0, "encoder.patch_size",
          "patch_size must divide the image size");
  };
  check_encoder(c.teacher, "teacher");
  check_encoder(c.student, "student");
  check(c.student.layers <= c.teacher.layers, "student.layers",
        "student depth " + std::to_string(c.student.layers) + " exceeds teacher depth " +
            std::to_string(c.teacher.layers));
  check(c.prototypes >= 1, "prototype.count", "prototype.count must be >= 1");
  check(c.attn_dim >= 1, "prototype.attn_dim", "prototype.attn_dim must be >= 1");
  check(!c.tap.empty(), "prototype.tap", "prototype.tap must name at least one layer");
  for (auto t : c.tap)
    check(t >= 1 && t <= c.teacher.layers, "prototype.tap", "tap layer " + std::to_string(t) + " out of range");
  check(c.weights.emb >= 0 && c.weights.pro >= 0 && c.weights.stu >= 0, "loss.lambda_emb",
        "loss weights must be nonnegative");
  check(c.weights.emb > 0 || c.weights.pro > 0 || c.weights.stu > 0, "loss.lambda_stu", "loss weights are all zero");
  if (!c.teacher_layers.empty()) {
    try {
      c.layer_map().validate(c.teacher.layers, c.student.layers);
    } catch (const Error& e) {
      config_error(line_of(lines, "loss.teacher_layers"), e.what());
    }
  }
  if (c.head_match == distill::HeadMatch::Subsample && c.weights.emb > 0)
    check(c.teacher.heads >= c.student.heads && c.teacher.heads % c.student.heads == 0, "student.heads",
          "teacher heads must be a multiple of student heads for subsampled head matching");
  check(c.optim.lr > 0, "optim.lr", "optim.lr must be positive");
  check(c.optim.weight_decay >= 0, "optim.weight_decay", "optim.weight_decay must be nonnegative");
  check(c.batch_size >= 1, "optim.batch_size", "optim.batch_size must be >= 1");
  check(c.epochs >= 1, "optim.epochs", "optim.epochs must be >= 1");
  check(c.teacher_epochs >= 1, "optim.teacher_epochs", "optim.teacher_epochs must be >= 1");

  const auto& d = c.data;
  check(d.teacher_classes.size() >= 2, "data.teacher_classes", "teacher task needs >= 2 classes");
  check(d.student_classes.size() >= 2, "data.student_classes", "student task needs >= 2 classes");
  for (auto k : d.teacher_classes) check(k < 10, "data.teacher_classes", "class ids must be in 0..9");
  for (auto k : d.student_classes) check(k < 10, "data.student_classes", "class ids must be in 0..9");
  const std::set<std::size_t> ts(d.teacher_classes.begin(), d.teacher_classes.end());
  const std::set<std::size_t> ss(d.student_classes.begin(), d.student_classes.end());
  check(ts.size() == d.teacher_classes.size(), "data.teacher_classes", "duplicate teacher class");
  check(ss.size() == d.student_classes.size(), "data.student_classes", "duplicate student class");
  if (d.mode == Mode::CrossTask) {
    bool overlap = false;
    for (auto k : ss) overlap = overlap || ts.count(k) > 0;
    check(!overlap, "data.student_classes", "teacher and student class sets overlap in cross-task mode");
  }
  check(d.train_per_class >= 1 && d.val_per_class >= 1, "data.train_per_class", "per-class sizes must be >= 1");
  check(d.imbalance >= 1.0, "data.imbalance", "data.imbalance must be >= 1");
  check(d.noise >= 0.0, "data.noise", "data.noise must be nonnegative");
}

DistillConfig parse_config(std::string_view text) {
  DistillConfig c;
  LineIndex lines;
  std::string section;
  std::size_t lineno = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view raw = text.substr(pos, end - pos);
    pos = end + 1;
    ++lineno;
    if (auto hash = raw.find('#'); hash != std::string_view::npos) raw = raw.substr(0, hash);
    auto line = trim(raw);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') config_error(lineno, "malformed section header");
      section = std::string(trim(line.substr(1, line.size() - 2)));
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string_view::npos) config_error(lineno, "expected key = value");
    const std::string key(trim(line.substr(0, eq)));
    const auto v = trim(line.substr(eq + 1));
    if (section.empty()) config_error(lineno, "key outside of a section");
    const std::string full = section + "." + key;
    if (lines.count(full)) config_error(lineno, "duplicate key " + full);
    lines[full] = lineno;
    const auto n = lineno;
    auto list = [&] {
      try {
        return parse_index_list(v);
      } catch (const Error&) {
        config_error(n, "invalid list for " + full);
      }
    };

    if (section == "teacher") apply_encoder(c.teacher, key, v, n, full);
    else if (section == "student") apply_encoder(c.student, key, v, n, full);
    else if (section == "encoder") {
      if (key == "patch_size") c.teacher.patch_size = c.student.patch_size = parse_number<std::size_t>(v, n, full);
      else if (key == "class_token") c.teacher.class_token = c.student.class_token = parse_bool(v, n, full);
      else config_error(n, "unknown key " + full);
    } else if (section == "prototype") {
      if (key == "count") c.prototypes = parse_number<std::size_t>(v, n, full);
      else if (key == "tap") c.tap = list();
      else if (key == "attn_dim") c.attn_dim = parse_number<std::size_t>(v, n, full);
      else if (key == "teacher_augment") c.teacher_augment = parse_bool(v, n, full);
      else if (key == "head_loss") c.proto_head = parse_bool(v, n, full);
      else config_error(n, "unknown key " + full);
    } else if (section == "loss") {
      if (key == "lambda_emb") c.weights.emb = parse_number<double>(v, n, full);
      else if (key == "lambda_pro") c.weights.pro = parse_number<double>(v, n, full);
      else if (key == "lambda_stu") c.weights.stu = parse_number<double>(v, n, full);
      else if (key == "head_match") {
        if (v == "subsample") c.head_match = distill::HeadMatch::Subsample;
        else if (v == "pool") c.head_match = distill::HeadMatch::Pool;
        else config_error(n, "head_match must be subsample or pool");
      } else if (key == "teacher_layers") c.teacher_layers = list();
      else config_error(n, "unknown key " + full);
    } else if (section == "optim") {
      if (key == "lr") c.optim.lr = parse_number<double>(v, n, full);
      else if (key == "weight_decay") c.optim.weight_decay = parse_number<double>(v, n, full);
      else if (key == "batch_size") c.batch_size = parse_number<std::size_t>(v, n, full);
      else if (key == "epochs") c.epochs = parse_number<std::size_t>(v, n, full);
      else if (key == "teacher_epochs") c.teacher_epochs = parse_number<std::size_t>(v, n, full);
      else config_error(n, "unknown key " + full);
    } else if (section == "data") {
      if (key == "mode") {
        if (v == "cross-task") c.data.mode = Mode::CrossTask;
        else if (v == "same-task") c.data.mode = Mode::SameTask;
        else config_error(n, "mode must be cross-task or same-task");
      } else if (key == "teacher_classes") c.data.teacher_classes = list();
      else if (key == "student_classes") c.data.student_classes = list();
      else if (key == "train_per_class") c.data.train_per_class = parse_number<std::size_t>(v, n, full);
      else if (key == "val_per_class") c.data.val_per_class = parse_number<std::size_t>(v, n, full);
      else if (key == "imbalance") c.data.imbalance = parse_number<double>(v, n, full);
      else if (key == "noise") c.data.noise = parse_number<double>(v, n, full);
      else if (key == "clutter") c.data.clutter = parse_number<std::size_t>(v, n, full);
      else if (key == "seed") c.data.seed = parse_number<std::uint64_t>(v, n, full);
      else config_error(n, "unknown key " + full);
    } else if (section == "run") {
      if (key == "seed") c.seed = parse_number<std::uint64_t>(v, n, full);
      else if (key == "teacher_seed") c.teacher_seed = parse_number<std::uint64_t>(v, n, full);
      else config_error(n, "unknown key " + full);
    } else {
      config_error(n, "unknown section [" + section + "]");
    }
  }
  c.student.num_classes = c.data.student_classes.size();
  c.teacher.num_classes = c.data.teacher_classes.size();
  validate(c, &lines);
  return c;
}

DistillConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::IoError, "cannot read config " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string DistillConfig::to_text() const {
  std::ostringstream os;
  auto enc = [&os](const char* name, const model::EncoderConfig& e) {
    os << '[' << name << "]\nlayers = " << e.layers << "\nheads = " << e.heads << "\nhidden_dim = " << e.hidden_dim
       << "\nmlp_ratio = " << e.mlp_ratio << "\n\n";
  };
  enc("teacher", teacher);
  enc("student", student);
  os << "[encoder]\npatch_size = " << student.patch_size << "\nclass_token = " << (student.class_token ? "true" : "false")
     << "\n\n";
  os << "[prototype]\ncount = " << prototypes << "\ntap = " << join(tap) << "\nattn_dim = " << attn_dim
     << "\nteacher_augment = " << (teacher_augment ? "true" : "false") << "\nhead_loss = " << (proto_head ? "true" : "false")
     << "\n\n";
  os << "[loss]\nlambda_emb = " << fmt_double(weights.emb) << "\nlambda_pro = " << fmt_double(weights.pro)
     << "\nlambda_stu = " << fmt_double(weights.stu)
     << "\nhead_match = " << (head_match == distill::HeadMatch::Pool ? "pool" : "subsample") << "\n";
  if (!teacher_layers.empty()) os << "teacher_layers = " << join(teacher_layers) << "\n";
  os << "\n[optim]\nlr = " << fmt_double(optim.lr) << "\nweight_decay = " << fmt_double(optim.weight_decay)
     << "\nbatch_size = " << batch_size << "\nepochs = " << epochs << "\nteacher_epochs = " << teacher_epochs << "\n\n";
  os << "[data]\nmode = " << (data.mode == Mode::CrossTask ? "cross-task" : "same-task")
     << "\nteacher_classes = " << join(data.teacher_classes) << "\nstudent_classes = " << join(data.student_classes)
     << "\ntrain_per_class = " << data.train_per_class << "\nval_per_class = " << data.val_per_class
     << "\nimbalance = " << fmt_double(data.imbalance) << "\nnoise = " << fmt_double(data.noise)
     << "\nclutter = " << data.clutter << "\nseed = " << data.seed << "\n\n";
  os << "[run]\nseed = " << seed << "\nteacher_seed = " << teacher_seed << "\n";
  return os.str();
}

}  // namespace prockd::harness

#include "cardiofuse/train/config.hpp"

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

namespace cardiofuse::train {

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
std::string fmt(std::size_t v) { return std::to_string(v); }
std::string fmt(bool v) { return v ? "true" : "false"; }

double parse_double(const std::string& s) {
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || errno != 0 || end != s.c_str() + s.size()) throw std::invalid_argument("not a number: '" + s + "'");
  return v;
}

std::uint64_t parse_uint(const std::string& s) {
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos)
    throw std::invalid_argument("not a nonnegative integer: '" + s + "'");
  errno = 0;
  const auto v = std::strtoull(s.c_str(), nullptr, 10);
  if (errno != 0) throw std::invalid_argument("out of range: '" + s + "'");
  return v;
}

bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw std::invalid_argument("not a boolean: '" + s + "'");
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) out.push_back(item);
  return out;
}

struct Setting {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

#define SIZE_SETTING(name, field) \
  Setting{name, [](const RunConfig& c) { return fmt(std::size_t(c.field)); }, \
          [](RunConfig& c, const std::string& v) { c.field = parse_uint(v); }}
#define DOUBLE_SETTING(name, field) \
  Setting{name, [](const RunConfig& c) { return fmt(double(c.field)); }, \
          [](RunConfig& c, const std::string& v) { c.field = parse_double(v); }}
#define BOOL_SETTING(name, field) \
  Setting{name, [](const RunConfig& c) { return fmt(bool(c.field)); }, \
          [](RunConfig& c, const std::string& v) { c.field = parse_bool(v); }}

const std::vector<Setting>& table() {
  static const std::vector<Setting> t{
      Setting{"preset", [](const RunConfig& c) { return c.preset; },
              [](RunConfig& c, const std::string& v) {
                const auto split_seed = c.split_seed;
                c = preset_config(v);
                c.split_seed = split_seed;
              }},
      SIZE_SETTING("split_seed", split_seed),
      SIZE_SETTING("seg.seed", seg.seed),
      SIZE_SETTING("seg.epochs", seg.epochs),
      DOUBLE_SETTING("seg.lr", seg.adam.lr),
      DOUBLE_SETTING("seg.dice_weight", seg.dice_weight),
      SIZE_SETTING("seg.height", seg.model.height),
      SIZE_SETTING("seg.width", seg.model.width),
      SIZE_SETTING("seg.patch", seg.model.patch),
      Setting{"seg.dims",
              [](const RunConfig& c) {
                std::string s;
                for (auto d : c.seg.model.dims) s += (s.empty() ? "" : ",") + std::to_string(d);
                return s;
              },
              [](RunConfig& c, const std::string& v) {
                std::vector<std::size_t> dims;
                for (const auto& p : split(v, ',')) dims.push_back(parse_uint(p));
                if (dims.empty()) throw std::invalid_argument("empty list");
                c.seg.model.dims = dims;
              }},
      SIZE_SETTING("seg.feature_dim", seg.model.feature_dim),
      SIZE_SETTING("text.seed", text.seed),
      SIZE_SETTING("text.epochs", text.epochs),
      SIZE_SETTING("text.batch", text.batch),
      DOUBLE_SETTING("text.lr", text.adam.lr),
      SIZE_SETTING("text.vocab_cap", text.vocab_cap),
      SIZE_SETTING("text.max_len", text.encoder.max_len),
      SIZE_SETTING("text.d_model", text.encoder.d_model),
      SIZE_SETTING("text.d_head", text.encoder.d_head),
      SIZE_SETTING("text.ffn", text.encoder.ffn),
      SIZE_SETTING("text.blocks", text.encoder.blocks),
      SIZE_SETTING("text.projected", text.encoder.projected),
      SIZE_SETTING("fuse.seed", fusion.seed),
      SIZE_SETTING("fuse.epochs", fusion.epochs),
      SIZE_SETTING("fuse.batch", fusion.batch),
      DOUBLE_SETTING("fuse.lr", fusion.adam.lr),
      DOUBLE_SETTING("fuse.weight_decay", fusion.adam.weight_decay),
      BOOL_SETTING("fuse.undersample", fusion.undersample),
      BOOL_SETTING("fuse.token_norm", fusion.token_norm),
      SIZE_SETTING("fuse.dim", fusion.fusion.dim),
      SIZE_SETTING("fuse.d_attn", fusion.fusion.d_attn),
      SIZE_SETTING("fuse.residual_blocks", fusion.fusion.residual_blocks),
      SIZE_SETTING("fuse.numeric_hidden", fusion.numeric.hidden),
      DOUBLE_SETTING("fuse.numeric_dropout", fusion.numeric.dropout),
      DOUBLE_SETTING("fuse.w_death", fusion.weights.death),
      DOUBLE_SETTING("fuse.w_cause", fusion.weights.cause),
      DOUBLE_SETTING("fuse.w_days", fusion.weights.days),
      DOUBLE_SETTING("fuse.w_macces", fusion.weights.macces),
      DOUBLE_SETTING("risk.low", fusion.thresholds.low),
      DOUBLE_SETTING("risk.high", fusion.thresholds.high),
      Setting{"fuse.strategy", [](const RunConfig& c) { return c.strategy.id(); },
              [](RunConfig& c, const std::string& v) { c.strategy = parse_strategy(v); }},
      Setting{"fuse.modalities", [](const RunConfig& c) { return subset_id(c.subset); },
              [](RunConfig& c, const std::string& v) { c.subset = parse_subset(v); }},
      SIZE_SETTING("importance.repeats", importance_repeats),
  };
  return t;
}

#undef SIZE_SETTING
#undef DOUBLE_SETTING
#undef BOOL_SETTING

}  // namespace

void RunConfig::set_seed(std::uint64_t seed) {
  split_seed = seg.seed = text.seed = fusion.seed = seed;
}

RunConfig preset_config(const std::string& name) {
  RunConfig c;
  c.preset = name;
  if (name == "desk") {
    c.seg.epochs = 50;
    c.text.epochs = 8;
    c.fusion.epochs = 50;
    // narrower fusion widths for ~550 training patients, picked on a
    // validation split carved from train
    c.fusion.fusion.dim = 32;
    c.fusion.fusion.d_attn = 16;
    c.fusion.numeric.hidden = 64;
    c.fusion.adam.weight_decay = 0.1;
    c.fusion.weights.macces = 2.0;
  } else if (name == "full") {
    c.seg.epochs = 500;
    c.text.epochs = 50;
    c.fusion.epochs = 500;
  } else {
    throw std::invalid_argument("preset: unknown preset '" + name + "' (expected desk or full)");
  }
  return c;
}

void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& s : table()) {
    if (s.key != key) continue;
    try {
      s.set(cfg, value);
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("config key '" + key + "': " + e.what());
    }
    return;
  }
  throw std::invalid_argument("unknown config key '" + key + "'");
}

RunConfig apply_settings(RunConfig base, const std::map<std::string, std::string>& settings) {
  if (auto it = settings.find("preset"); it != settings.end()) apply_setting(base, "preset", it->second);
  for (const auto& [k, v] : settings)
    if (k != "preset") apply_setting(base, k, v);
  return base;
}

std::map<std::string, std::string> settings_of(const RunConfig& cfg) {
  std::map<std::string, std::string> out;
  for (const auto& s : table()) out[s.key] = s.get(cfg);
  return out;
}

std::vector<std::string> setting_keys() {
  std::vector<std::string> keys;
  for (const auto& s : table()) keys.push_back(s.key);
  return keys;
}

std::map<std::string, std::string> read_settings(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument(path.string() + ": cannot open config file");
  std::map<std::string, std::string> out;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::invalid_argument(path.string() + ":" + std::to_string(n) + ": expected key=value");
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r"), b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return out;
}

fusion::AllocationStrategy parse_strategy(const std::string& id) {
  if (id == "self_reasoning") return fusion::AllocationStrategy::self_reasoning();
  const auto parts = split(id, '_');
  if (parts.size() == 4 && parts[0] == "fixed")
    return fusion::AllocationStrategy::fixed(parse_double(parts[1]) / 100, parse_double(parts[2]) / 100,
                                             parse_double(parts[3]) / 100);
  throw std::invalid_argument("unknown strategy '" + id + "' (self_reasoning or fixed_<text>_<cine>_<num> in percent)");
}

ModalitySubset parse_subset(const std::string& list) {
  ModalitySubset s{false, false, false};
  for (const auto& m : split(list, ',')) {
    if (m == "text") s.text = true;
    else if (m == "cine") s.cine = true;
    else if (m == "numeric") s.numeric = true;
    else throw std::invalid_argument("unknown modality '" + m + "'");
  }
  if (!s.text && !s.cine && !s.numeric) throw std::invalid_argument("empty modality list");
  return s;
}

std::string subset_id(const ModalitySubset& s) {
  std::string out;
  for (auto [on, name] : {std::pair{s.text, "text"}, {s.cine, "cine"}, {s.numeric, "numeric"}})
    if (on) out += (out.empty() ? "" : ",") + std::string(name);
  return out;
}

}  // namespace cardiofuse::train

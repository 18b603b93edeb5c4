#include "cardiofuse/train/artifacts.hpp"

#include <fstream>
#include <json.hpp>
#include <sstream>

#include "cardiofuse/error.hpp"

namespace cardiofuse::train {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kModelFormat = "cardiofuse-model-1";
constexpr const char* kSegFormat = "cardiofuse-segmenter-1";

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(path.string() + ": cannot open");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  out << j.dump(2) << "\n";
  if (!out) throw std::runtime_error(path.string() + ": write failed");
}

json seg_config_json(const cine::SegmenterConfig& c) {
  return {{"height", c.height}, {"width", c.width},     {"patch", c.patch}, {"dims", c.dims},
          {"classes", c.classes}, {"feature_dim", c.feature_dim}, {"heads", c.heads}};
}

cine::SegmenterConfig seg_config_from(const json& j) {
  cine::SegmenterConfig c;
  j.at("height").get_to(c.height);
  j.at("width").get_to(c.width);
  j.at("patch").get_to(c.patch);
  j.at("dims").get_to(c.dims);
  j.at("classes").get_to(c.classes);
  j.at("feature_dim").get_to(c.feature_dim);
  j.at("heads").get_to(c.heads);
  return c;
}

nn::ParamList text_params(const TextModel& t) {
  nn::ParamList p;
  t.encoder.collect(p, "text.");
  return p;
}

}  // namespace

void save_segmenter(const fs::path& dir, const cine::Segmenter& seg) {
  fs::create_directories(dir);
  write_json(dir / "segmenter.json", {{"format", kSegFormat}, {"config", seg_config_json(seg.config())}});
  save_params(dir / "segmenter.cfw", seg.params());
}

cine::Segmenter load_segmenter(const fs::path& dir) {
  const fs::path meta = dir / "segmenter.json";
  const json j = read_json(meta);
  cine::SegmenterConfig cfg;
  try {
    if (j.at("format").get<std::string>() != kSegFormat) throw FormatError(meta.string() + ": unknown format");
    cfg = seg_config_from(j.at("config"));
    cfg.validate();
  } catch (const json::exception& e) {
    throw FormatError(meta.string() + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw FormatError(meta.string() + ": " + e.what());
  }
  cine::Segmenter seg(cfg, 0);
  load_params(dir / "segmenter.cfw", seg.params());
  return seg;
}

void save_model(const fs::path& dir, const ModelArtifacts& a) {
  fs::create_directories(dir);
  const auto& tokens = a.text.vocab.tokens();
  json stats = json::array();
  for (const auto& s : a.schema.stats) stats.push_back({{"median", s.median}, {"min", s.min}, {"max", s.max}});
  write_json(dir / "model.json",
             {{"format", kModelFormat},
              {"config", settings_of(a.config)},
              {"vocab", std::vector<std::string>(tokens.begin() + text::kSep + 1, tokens.end())},
              {"schema", {{"names", a.schema.names}, {"stats", stats}}},
              {"segmenter", seg_config_json(a.segmenter.config())},
              {"death_offset", a.model.death_offset}});
  save_params(dir / "text.cfw", text_params(a.text));
  save_params(dir / "segmenter.cfw", a.segmenter.params());
  nn::ParamList fp;
  a.model.collect(fp);
  save_params(dir / "fusion.cfw", fp);
}

ModelArtifacts load_model(const fs::path& dir) {
  const fs::path meta = dir / "model.json";
  const json j = read_json(meta);
  ModelArtifacts a;
  cine::SegmenterConfig seg_cfg;
  try {
    if (j.at("format").get<std::string>() != kModelFormat) throw FormatError(meta.string() + ": unknown format");
    a.config = apply_settings(preset_config("desk"), j.at("config").get<std::map<std::string, std::string>>());
    a.text.vocab = text::Vocab(j.at("vocab").get<std::vector<std::string>>());
    j.at("schema").at("names").get_to(a.schema.names);
    for (const auto& s : j.at("schema").at("stats"))
      a.schema.stats.push_back({s.at("median").get<double>(), s.at("min").get<double>(), s.at("max").get<double>()});
    if (a.schema.stats.size() != a.schema.names.size()) throw FormatError(meta.string() + ": schema names and stats differ in length");
    seg_cfg = seg_config_from(j.at("segmenter"));
    seg_cfg.validate();
    a.model.death_offset = j.at("death_offset").get<double>();
  } catch (const json::exception& e) {
    throw FormatError(meta.string() + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw FormatError(meta.string() + ": " + e.what());
  }

  RngStream init(0);
  auto ecfg = a.config.text.encoder;
  ecfg.vocab_size = a.text.vocab.size();
  a.text.encoder = text::TextEncoder(ecfg, init);
  load_params(dir / "text.cfw", text_params(a.text));
  a.segmenter = cine::Segmenter(seg_cfg, 0);
  load_params(dir / "segmenter.cfw", a.segmenter.params());
  const double offset = a.model.death_offset;
  a.model = MultimodalModel(a.config.fusion, ecfg.d_model, seg_cfg.dims.back(), a.schema.features(), init);
  a.model.death_offset = offset;
  nn::ParamList fp;
  a.model.collect(fp);
  load_params(dir / "fusion.cfw", fp);
  return a;
}

}  // namespace cardiofuse::train

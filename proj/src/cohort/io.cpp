#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "cardiofuse/cohort/cohort.hpp"
#include "cardiofuse/error.hpp"

namespace cardiofuse::cohort {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kFormat = "cardiofuse-cohort-1";

json spec_to_json(const CohortSpec& s) {
  return {{"n_clinical", s.n_clinical},
          {"n_cine", s.n_cine},
          {"seed", s.seed},
          {"mu", s.mu},
          {"beta_text", s.beta_text},
          {"beta_cine", s.beta_cine},
          {"beta_num", s.beta_num},
          {"macces_noise", s.macces_noise},
          {"macces_cuts", s.macces_cuts},
          {"risk_low", s.risk_low},
          {"risk_high", s.risk_high},
          {"days_base", s.days_base},
          {"days_slope", s.days_slope},
          {"days_noise", s.days_noise},
          {"days_max", s.days_max},
          {"cause_priors", s.cause_priors},
          {"missing_rate", s.missing_rate},
          {"text_noise", s.text_noise},
          {"cine_height", s.cine_height},
          {"cine_width", s.cine_width},
          {"cine_depth", s.cine_depth},
          {"cine_noise", s.cine_noise}};
}

CohortSpec spec_from_json(const json& j) {
  CohortSpec s;
  j.at("n_clinical").get_to(s.n_clinical);
  j.at("n_cine").get_to(s.n_cine);
  j.at("seed").get_to(s.seed);
  j.at("mu").get_to(s.mu);
  j.at("beta_text").get_to(s.beta_text);
  j.at("beta_cine").get_to(s.beta_cine);
  j.at("beta_num").get_to(s.beta_num);
  j.at("macces_noise").get_to(s.macces_noise);
  j.at("macces_cuts").get_to(s.macces_cuts);
  j.at("risk_low").get_to(s.risk_low);
  j.at("risk_high").get_to(s.risk_high);
  j.at("days_base").get_to(s.days_base);
  j.at("days_slope").get_to(s.days_slope);
  j.at("days_noise").get_to(s.days_noise);
  j.at("days_max").get_to(s.days_max);
  j.at("cause_priors").get_to(s.cause_priors);
  j.at("missing_rate").get_to(s.missing_rate);
  j.at("text_noise").get_to(s.text_noise);
  j.at("cine_height").get_to(s.cine_height);
  j.at("cine_width").get_to(s.cine_width);
  j.at("cine_depth").get_to(s.cine_depth);
  j.at("cine_noise").get_to(s.cine_noise);
  return s;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, sep)) out.push_back(cell);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path.string() + ": cannot open");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
  if (!out) throw std::runtime_error(path.string() + ": write failed");
}

}  // namespace

void save_cohort(const Cohort& c, const fs::path& dir) {
  fs::create_directories(dir / "cine");
  fs::create_directories(dir / "masks");

  json patients = json::array();
  for (const auto& p : c.patients) {
    patients.push_back({{"id", p.id},
                        {"has_cine", p.has_cine},
                        {"outcome",
                         {{"death", p.outcome.death},
                          {"cause", p.outcome.cause},
                          {"days", p.outcome.days},
                          {"macces", p.outcome.macces},
                          {"risk", p.outcome.risk}}},
                        {"latent",
                         {{"text", p.latent.text},
                          {"cine", p.latent.cine},
                          {"numeric", p.latent.numeric},
                          {"z", p.latent.z}}}});
  }
  const json manifest = {{"format", kFormat},
                         {"seed", c.spec.seed},
                         {"spec", spec_to_json(c.spec)},
                         {"labels",
                          {{"cause", c.spec.labels.cause},
                           {"macces", c.spec.labels.macces},
                           {"risk", c.spec.labels.risk}}},
                         {"indicators", c.indicators},
                         {"patients", patients}};
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");

  std::string csv = "patient_id";
  for (const auto& name : c.indicators) csv += "," + name;
  csv += "\n";
  for (const auto& p : c.patients) {
    csv += p.id;
    for (const auto& v : p.numeric) csv += "," + (v ? format_double(*v) : std::string());
    csv += "\n";
  }
  write_file(dir / "numeric.csv", csv);

  std::string jsonl;
  for (const auto& p : c.patients) {
    json stages = json::array();
    for (const auto& s : p.text) stages.push_back({{"stage", s.stage}, {"day", s.day}, {"text", s.text}});
    jsonl += json{{"patient_id", p.id}, {"stages", stages}}.dump() + "\n";
  }
  write_file(dir / "text.jsonl", jsonl);

  for (const auto& p : c.patients) {
    if (!p.has_cine) continue;
    if (!p.cine || !p.mask) throw std::invalid_argument("save_cohort: patient " + p.id + " is flagged cine without a volume");
    cine::write_cfv(dir / "cine" / (p.id + ".cfv"), *p.cine);
    cine::write_cfm(dir / "masks" / (p.id + ".cfm"), *p.mask);
  }
}

Cohort load_cohort(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  Cohort c;
  try {
    const json m = json::parse(read_file(manifest_path));
    if (m.at("format").get<std::string>() != kFormat) throw FormatError(manifest_path.string() + ": unknown format");
    c.spec = spec_from_json(m.at("spec"));
    if (m.at("seed").get<std::uint64_t>() != c.spec.seed)
      throw FormatError(manifest_path.string() + ": seed disagrees with the generating spec");
    const json& labels = m.at("labels");
    labels.at("cause").get_to(c.spec.labels.cause);
    labels.at("macces").get_to(c.spec.labels.macces);
    labels.at("risk").get_to(c.spec.labels.risk);
    m.at("indicators").get_to(c.indicators);
    for (const auto& jp : m.at("patients")) {
      Patient p;
      jp.at("id").get_to(p.id);
      jp.at("has_cine").get_to(p.has_cine);
      const json& o = jp.at("outcome");
      o.at("death").get_to(p.outcome.death);
      o.at("cause").get_to(p.outcome.cause);
      o.at("days").get_to(p.outcome.days);
      o.at("macces").get_to(p.outcome.macces);
      o.at("risk").get_to(p.outcome.risk);
      const json& l = jp.at("latent");
      l.at("text").get_to(p.latent.text);
      l.at("cine").get_to(p.latent.cine);
      l.at("numeric").get_to(p.latent.numeric);
      l.at("z").get_to(p.latent.z);
      c.patients.push_back(std::move(p));
    }
  } catch (const json::exception& e) {
    throw FormatError(manifest_path.string() + ": " + e.what());
  }
  try {
    c.spec.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(manifest_path.string() + ": " + e.what());
  }
  if (c.patients.size() != c.spec.n_clinical)
    throw FormatError(manifest_path.string() + ": patient count disagrees with n_clinical");

  const fs::path csv_path = dir / "numeric.csv";
  {
    std::istringstream in(read_file(csv_path));
    std::string line;
    std::getline(in, line);
    const auto header = split(line, ',');
    if (header.empty() || header[0] != "patient_id" ||
        std::vector<std::string>(header.begin() + 1, header.end()) != c.indicators)
      throw FormatError(csv_path.string() + ": header does not match the manifest indicators");
    for (auto& p : c.patients) {
      if (!std::getline(in, line)) throw FormatError(csv_path.string() + ": missing row for patient " + p.id);
      const auto cells = split(line, ',');
      if (cells.size() != header.size() || cells[0] != p.id)
        throw FormatError(csv_path.string() + ": malformed row for patient " + p.id);
      for (std::size_t j = 1; j < cells.size(); ++j) {
        if (cells[j].empty()) {
          p.numeric.emplace_back();
          continue;
        }
        char* end = nullptr;
        errno = 0;
        const double v = std::strtod(cells[j].c_str(), &end);
        if (errno != 0 || end != cells[j].c_str() + cells[j].size())
          throw FormatError(csv_path.string() + ": bad value '" + cells[j] + "' for patient " + p.id);
        p.numeric.emplace_back(v);
      }
    }
    while (std::getline(in, line))
      if (!line.empty()) throw FormatError(csv_path.string() + ": rows beyond the manifest patients");
  }

  const fs::path text_path = dir / "text.jsonl";
  {
    std::istringstream in(read_file(text_path));
    std::string line;
    for (auto& p : c.patients) {
      if (!std::getline(in, line)) throw FormatError(text_path.string() + ": missing record for patient " + p.id);
      try {
        const json j = json::parse(line);
        if (j.at("patient_id").get<std::string>() != p.id)
          throw FormatError(text_path.string() + ": record order disagrees at patient " + p.id);
        for (const auto& s : j.at("stages"))
          p.text.push_back({s.at("stage").get<std::string>(), s.at("day").get<int>(), s.at("text").get<std::string>()});
      } catch (const json::exception& e) {
        throw FormatError(text_path.string() + ": patient " + p.id + ": " + e.what());
      }
    }
  }

  for (auto& p : c.patients) {
    if (!p.has_cine) continue;
    const fs::path vol = dir / "cine" / (p.id + ".cfv"), mask = dir / "masks" / (p.id + ".cfm");
    if (!fs::exists(vol)) throw FormatError(vol.string() + ": cine volume missing for patient " + p.id);
    if (!fs::exists(mask)) throw FormatError(mask.string() + ": mask missing for patient " + p.id);
    p.cine = cine::read_cfv(vol);
    p.mask = cine::read_cfm(mask);
    if (p.cine->height != p.mask->height || p.cine->width != p.mask->width || p.cine->depth != p.mask->depth)
      throw FormatError(mask.string() + ": mask shape disagrees with the volume for patient " + p.id);
  }
  return c;
}

}  // namespace cardiofuse::cohort

#include "cardiofuse/train/trace.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>

#include "cardiofuse/error.hpp"

namespace cardiofuse::train {

static_assert(std::endian::native == std::endian::little, "CFW1 I/O assumes a little-endian host");

void MetricTrace::add(const MetricRecord& r) {
  if (r.epoch != records.size() + 1) throw std::invalid_argument("MetricTrace: epochs must be consecutive from 1");
  records.push_back(r);
}

namespace {

std::string cell(const std::optional<double>& v) {
  if (!v) return "";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", *v);
  return buf;
}

}  // namespace

std::string MetricTrace::csv() const {
  bool seg = false;
  for (const auto& r : records) seg = seg || r.dsc.has_value();
  std::string out = "epoch,train_loss,test_loss,acc_death,acc_cause,acc_macces,acc_risk,acc_integrated";
  out += seg ? ",dsc,hd\n" : "\n";
  for (const auto& r : records) {
    out += std::to_string(r.epoch) + "," + cell(r.train_loss) + "," + cell(r.test_loss) + "," + cell(r.acc_death) + "," +
           cell(r.acc_cause) + "," + cell(r.acc_macces) + "," + cell(r.acc_risk) + "," + cell(r.acc_integrated);
    if (seg) out += "," + cell(r.dsc) + "," + cell(r.hd);
    out += "\n";
  }
  return out;
}

void MetricTrace::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  out << csv();
  if (!out) throw std::runtime_error(path.string() + ": write failed");
}

namespace {

constexpr char kMagic[4] = {'C', 'F', 'W', '1'};

template <typename T>
void put(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::ifstream& in, const std::filesystem::path& path) {
  T v;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw FormatError(path.string() + ": truncated weights file");
  return v;
}

}  // namespace

void save_params(const std::filesystem::path& path, const nn::ParamList& params) {
  std::ofstream out(path, std::ios::binary);
  out.write(kMagic, 4);
  put<std::uint64_t>(out, params.size());
  for (const auto& p : params) {
    put<std::uint64_t>(out, p.name.size());
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    const auto& shape = p.var.shape();
    put<std::uint64_t>(out, shape.size());
    for (auto d : shape) put<std::uint64_t>(out, d);
    out.write(reinterpret_cast<const char*>(p.var.value().data()),
              static_cast<std::streamsize>(p.var.size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error(path.string() + ": write failed");
}

void load_params(const std::filesystem::path& path, const nn::ParamList& params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path.string() + ": cannot open weights file");
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw FormatError(path.string() + ": not a CFW1 file");
  const auto count = get<std::uint64_t>(in, path);
  if (count != params.size())
    throw FormatError(path.string() + ": holds " + std::to_string(count) + " tensors, model has " +
                      std::to_string(params.size()));
  std::map<std::string, Var> by_name;
  for (const auto& p : params) by_name[p.name] = p.var;
  std::vector<std::pair<Var, NdArray>> staged;
  for (std::uint64_t k = 0; k < count; ++k) {
    const auto len = get<std::uint64_t>(in, path);
    if (len > 4096) throw FormatError(path.string() + ": corrupt tensor name");
    std::string name(len, '\0');
    if (!in.read(name.data(), static_cast<std::streamsize>(len))) throw FormatError(path.string() + ": truncated weights file");
    auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError(path.string() + ": unknown tensor '" + name + "'");
    const auto rank = get<std::uint64_t>(in, path);
    if (rank > 8) throw FormatError(path.string() + ": corrupt rank for '" + name + "'");
    Shape shape;
    for (std::uint64_t r = 0; r < rank; ++r) shape.push_back(get<std::uint64_t>(in, path));
    if (shape != it->second.shape()) throw FormatError(path.string() + ": shape mismatch for '" + name + "'");
    NdArray value(shape);
    if (!in.read(reinterpret_cast<char*>(value.data()), static_cast<std::streamsize>(value.size() * sizeof(double))))
      throw FormatError(path.string() + ": truncated weights file");
    if (!value.all_finite()) throw FormatError(path.string() + ": non-finite value in '" + name + "'");
    staged.emplace_back(it->second, std::move(value));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError(path.string() + ": trailing bytes");
  for (auto& [var, value] : staged) var.mutable_value() = std::move(value);
}

}  // namespace cardiofuse::train

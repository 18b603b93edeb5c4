#include "cardiofuse/text/text.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <stdexcept>

namespace cardiofuse::text {

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> out;
  std::string w;
  for (unsigned char ch : text) {
    if (std::isalnum(ch)) {
      w += static_cast<char>(std::tolower(ch));
    } else if (!w.empty()) {
      out.push_back(std::move(w));
      w.clear();
    }
  }
  if (!w.empty()) out.push_back(std::move(w));
  return out;
}

Vocab::Vocab() : Vocab(std::vector<std::string>{}) {}

Vocab::Vocab(const std::vector<std::string>& words) : tokens_{"[PAD]", "[UNK]", "[CLS]", "[SEP]"} {
  for (std::size_t i = 0; i < tokens_.size(); ++i) index_[tokens_[i]] = i;
  for (const auto& w : words) {
    if (!index_.emplace(w, tokens_.size()).second) throw std::invalid_argument("Vocab: duplicate token '" + w + "'");
    tokens_.push_back(w);
  }
}

std::size_t Vocab::id(const std::string& word) const {
  auto it = index_.find(word);
  return it == index_.end() ? kUnk : it->second;
}

Vocab build_vocab(const std::vector<std::string>& corpus, std::size_t cap) {
  std::map<std::string, std::pair<std::size_t, std::size_t>> stats;  // word -> (count, first seen)
  std::size_t position = 0;
  for (const auto& doc : corpus)
    for (const auto& w : split_words(doc)) {
      auto [it, fresh] = stats.emplace(w, std::make_pair(0, position++));
      it->second.first++;
    }
  if (stats.empty()) throw std::invalid_argument("build_vocab: corpus has no words");
  std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>> order(stats.begin(), stats.end());
  std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
    if (a.second.first != b.second.first) return a.second.first > b.second.first;
    return a.second.second < b.second.second;
  });
  if (cap > 0 && order.size() > cap) order.resize(cap);
  std::vector<std::string> words;
  for (const auto& [w, s] : order) words.push_back(w);
  return Vocab(words);
}

std::size_t TokenSeq::real() const {
  std::size_t n = 0;
  for (auto m : mask) n += m;
  return n;
}

TokenSeq tokenize(const std::string& text, const Vocab& vocab, std::size_t max_len) {
  if (max_len < 2) throw std::invalid_argument("tokenize: max_len must be at least 2");
  const auto words = split_words(text);
  TokenSeq t{std::vector<std::size_t>(max_len, kPad), std::vector<std::uint8_t>(max_len, 0)};
  const std::size_t kept = std::min(words.size(), max_len - 2);
  t.ids[0] = kCls;
  for (std::size_t i = 0; i < kept; ++i) t.ids[i + 1] = vocab.id(words[i]);
  t.ids[kept + 1] = kSep;
  std::fill(t.mask.begin(), t.mask.begin() + static_cast<std::ptrdiff_t>(kept + 2), 1);
  return t;
}

void TextEncoderConfig::validate() const {
  if (vocab_size <= kSep) throw std::invalid_argument("TextEncoderConfig: vocab_size must exceed the specials");
  if (max_len < 2 || d_model == 0 || d_head == 0 || ffn == 0 || projected == 0)
    throw std::invalid_argument("TextEncoderConfig: dimensions must be positive and max_len >= 2");
}

EncoderBlock::EncoderBlock(const TextEncoderConfig& cfg, RngStream& rng)
    : norm_attn(cfg.d_model),
      norm_ffn(cfg.d_model),
      attn(cfg.d_model, cfg.d_head, cfg.d_head, rng, cfg.d_model),
      ff1(cfg.d_model, cfg.ffn, rng),
      ff2(cfg.ffn, cfg.d_model, rng) {}

Var EncoderBlock::operator()(const Var& x) const {
  const Var h = norm_attn(x);
  const Var y = x + attn.output(attn::scaled_dot_attention(attn.wq(h), attn.wk(h), attn.wv(h)));
  return y + ff2(relu(ff1(norm_ffn(y))));
}

void EncoderBlock::collect(nn::ParamList& out, const std::string& prefix) const {
  norm_attn.collect(out, prefix + ".norm_attn");
  attn.collect(out, prefix + ".attn");
  norm_ffn.collect(out, prefix + ".norm_ffn");
  ff1.collect(out, prefix + ".ff1");
  ff2.collect(out, prefix + ".ff2");
}

namespace {

NdArray normal_table(std::size_t rows, std::size_t cols, double sd, RngStream& rng) {
  NdArray t({rows, cols});
  for (auto& v : t.values()) v = sd * rng.normal();
  return t;
}

}  // namespace

TextEncoder::TextEncoder(const TextEncoderConfig& cfg, RngStream& rng) : cfg_(cfg) {
  cfg.validate();
  embed = Var::parameter(normal_table(cfg.vocab_size, cfg.d_model, 0.02, rng));
  position = Var::parameter(normal_table(cfg.max_len, cfg.d_model, 0.02, rng));
  for (std::size_t b = 0; b < cfg.blocks; ++b) blocks.emplace_back(cfg, rng);
  final_norm = nn::LayerNorm(cfg.d_model);
  projection = nn::Linear(cfg.d_model, cfg.projected, rng);
}

Var TextEncoder::encode(const TokenSeq& t) const {
  if (t.ids.size() != t.mask.size()) throw std::invalid_argument("TextEncoder: ids and mask lengths differ");
  if (t.ids.size() > cfg_.max_len) throw std::invalid_argument("TextEncoder: sequence longer than max_len");
  std::vector<std::size_t> ids, pos;
  for (std::size_t i = 0; i < t.ids.size(); ++i) {
    if (t.ids[i] >= cfg_.vocab_size)
      throw std::invalid_argument("TextEncoder: token id " + std::to_string(t.ids[i]) + " outside the vocabulary");
    if (t.mask[i]) {
      ids.push_back(t.ids[i]);
      pos.push_back(i);
    }
  }
  if (ids.empty()) throw std::invalid_argument("TextEncoder: sequence has no real token");
  Var x = gather_rows(embed, ids) + gather_rows(position, pos);
  for (const auto& b : blocks) x = b(x);
  return mean_rows(final_norm(x));
}

Var TextEncoder::encode(const std::vector<TokenSeq>& batch) const {
  std::vector<Var> rows;
  rows.reserve(batch.size());
  for (const auto& t : batch) rows.push_back(encode(t));
  return concat_rows(rows);
}

Var TextEncoder::project(const Var& pooled) const {
  if (pooled.value().rank() != 2 || pooled.value().cols() != cfg_.d_model)
    throw std::invalid_argument("TextEncoder::project: expected rows of width " + std::to_string(cfg_.d_model));
  return projection(pooled);
}

void TextEncoder::collect(nn::ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + "embed", embed});
  out.push_back({prefix + "position", position});
  for (std::size_t b = 0; b < blocks.size(); ++b) blocks[b].collect(out, prefix + "block" + std::to_string(b));
  final_norm.collect(out, prefix + "final_norm");
  projection.collect(out, prefix + "projection");
}

}  // namespace cardiofuse::text

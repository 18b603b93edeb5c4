#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "cardiofuse/attention/attention.hpp"
#include "cardiofuse/tensor/layers.hpp"

namespace cardiofuse::text {

inline constexpr std::size_t kPad = 0, kUnk = 1, kCls = 2, kSep = 3;

// Lowercased words split on every non-alphanumeric character.
std::vector<std::string> split_words(const std::string& text);

class Vocab {
 public:
  Vocab();
  // Tokens as listed after the four specials, in id order.
  explicit Vocab(const std::vector<std::string>& words);

  std::size_t size() const { return tokens_.size(); }
  std::size_t id(const std::string& word) const;
  const std::string& token(std::size_t id) const { return tokens_.at(id); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  bool operator==(const Vocab& o) const { return tokens_ == o.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Words ordered by descending frequency, ties by first appearance; cap > 0
// keeps only that many words. Throws std::invalid_argument on a corpus
// without any word.
Vocab build_vocab(const std::vector<std::string>& corpus, std::size_t cap = 0);

struct TokenSeq {
  std::vector<std::size_t> ids;
  std::vector<std::uint8_t> mask;
  std::size_t real() const;
};

// [CLS] words [SEP] truncated so SEP stays the last kept token, padded to
// max_len.
TokenSeq tokenize(const std::string& text, const Vocab& vocab, std::size_t max_len);

struct TextEncoderConfig {
  std::size_t vocab_size = 0;
  std::size_t max_len = 64;
  std::size_t d_model = 768;
  std::size_t d_head = 64;
  std::size_t ffn = 128;
  std::size_t blocks = 2;
  std::size_t projected = 256;
  void validate() const;
};

// Pre-norm self-attention block, single head, ReLU feed-forward.
struct EncoderBlock {
  nn::LayerNorm norm_attn, norm_ffn;
  attn::ProjectionSet attn;
  nn::Linear ff1, ff2;

  EncoderBlock() = default;
  EncoderBlock(const TextEncoderConfig& cfg, RngStream& rng);
  Var operator()(const Var& x) const;
  void collect(nn::ParamList& out, const std::string& prefix) const;
};

class TextEncoder {
 public:
  TextEncoder() = default;
  TextEncoder(const TextEncoderConfig& cfg, RngStream& rng);

  // Mean over real positions of the final normalized token states, [1 x d].
  // Only real positions are materialized; a masked key carries zero
  // attention weight, so this equals the full masked computation.
  Var encode(const TokenSeq& t) const;
  // Rows of pooled vectors, [B x d].
  Var encode(const std::vector<TokenSeq>& batch) const;
  // d -> projected.
  Var project(const Var& pooled) const;

  const TextEncoderConfig& config() const { return cfg_; }
  void collect(nn::ParamList& out, const std::string& prefix) const;

  Var embed, position;
  std::vector<EncoderBlock> blocks;
  nn::LayerNorm final_norm;
  nn::Linear projection;

 private:
  TextEncoderConfig cfg_;
};

}  // namespace cardiofuse::text

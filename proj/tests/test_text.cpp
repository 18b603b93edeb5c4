#include <algorithm>
#include <cmath>

#include "cardiofuse/tensor/grad_check.hpp"
#include "cardiofuse/text/text.hpp"
#include "doctest.h"

using namespace cardiofuse;
using namespace cardiofuse::text;

namespace {

TextEncoderConfig tiny(std::size_t vocab) {
  TextEncoderConfig c;
  c.vocab_size = vocab;
  c.max_len = 8;
  c.d_model = 6;
  c.d_head = 4;
  c.ffn = 5;
  c.blocks = 2;
  c.projected = 3;
  return c;
}

// Full-length reference: every position is materialized and masked keys are
// excluded through the attention mask; pooling weights real positions only.
NdArray masked_reference(const TextEncoder& enc, const TokenSeq& t) {
  std::vector<std::size_t> pos(t.ids.size());
  for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = i;
  NdArray mask({t.ids.size()});
  for (std::size_t i = 0; i < pos.size(); ++i) mask[i] = t.mask[i];
  Var x = gather_rows(enc.embed, t.ids) + gather_rows(enc.position, pos);
  for (const auto& b : enc.blocks) {
    const Var h = b.norm_attn(x);
    const Var y = x + b.attn.output(attn::scaled_dot_attention(b.attn.wq(h), b.attn.wk(h), b.attn.wv(h), &mask));
    x = y + b.ff2(relu(b.ff1(b.norm_ffn(y))));
  }
  const NdArray states = enc.final_norm(x).value();
  NdArray out({1, states.cols()});
  for (std::size_t i = 0; i < states.rows(); ++i)
    for (std::size_t j = 0; j < states.cols(); ++j) out[j] += mask[i] * states.at(i, j) / double(t.real());
  return out;
}

}  // namespace

TEST_CASE("word splitting") {
  CHECK(split_words("Furosemide 40 mg, Bisoprolol 5mg.") ==
        std::vector<std::string>{"furosemide", "40", "mg", "bisoprolol", "5mg"});
  CHECK(split_words("  ,, ").empty());
}

TEST_CASE("build_vocab examples") {
  const auto v = build_vocab({"a b a"});
  CHECK(v.size() == 6);
  CHECK(v.token(4) == "a");
  CHECK(v.token(5) == "b");
  CHECK(v.id("zzz") == kUnk);
  CHECK(v.token(kPad) == "[PAD]");
  CHECK(v.token(kSep) == "[SEP]");
  const auto capped = build_vocab({"x y y", "z y"}, 1);
  CHECK(capped.size() == 5);
  CHECK(capped.token(4) == "y");
  CHECK(capped.id("x") == kUnk);
  CHECK_THROWS_AS(build_vocab({}), std::invalid_argument);
  CHECK_THROWS_AS(build_vocab({"", " ; "}), std::invalid_argument);
  CHECK(Vocab(std::vector<std::string>(v.tokens().begin() + 4, v.tokens().end())) == v);
  CHECK_THROWS_AS(Vocab({"a", "a"}), std::invalid_argument);
}

TEST_CASE("tokenize examples") {
  const auto v = build_vocab({"one two three four"});
  auto t = tokenize("", v, 8);
  CHECK(t.ids == std::vector<std::size_t>{kCls, kSep, kPad, kPad, kPad, kPad, kPad, kPad});
  CHECK(t.mask == std::vector<std::uint8_t>{1, 1, 0, 0, 0, 0, 0, 0});
  t = tokenize("one two three", v, 8);
  CHECK(t.real() == 5);
  CHECK(t.ids[1] == v.id("one"));
  std::string longtext;
  for (int i = 0; i < 100; ++i) longtext += "two ";
  t = tokenize(longtext, v, 8);
  CHECK(t.real() == 8);
  CHECK(t.ids.back() == kSep);
  CHECK(tokenize("ONE unknown", v, 6).ids[2] == kUnk);
  CHECK(tokenize("one", v, 2).ids == std::vector<std::size_t>{kCls, kSep});
  CHECK_THROWS_AS(tokenize("one", v, 1), std::invalid_argument);
}

TEST_CASE("tokenizer invariant over random strings") {
  const auto v = build_vocab({"alpha beta gamma delta", "beta 10 mg"});
  RngStream rng(31);
  const std::string alphabet = "abg 1,0.mM;-";
  for (int trial = 0; trial < 5000; ++trial) {
    std::string s;
    const auto len = rng.below(60);
    for (std::uint64_t i = 0; i < len; ++i) s += alphabet[rng.below(alphabet.size())];
    const std::size_t max_len = 2 + rng.below(20);
    const auto t = tokenize(s, v, max_len);
    REQUIRE(t.ids.size() == max_len);
    REQUIRE(t.mask.size() == max_len);
    for (std::size_t i = 0; i < max_len; ++i) CHECK((t.ids[i] == kPad) == (t.mask[i] == 0));
    CHECK(t.ids[0] == kCls);
    CHECK(t.ids[t.real() - 1] == kSep);
    CHECK(t.real() == std::min(max_len, split_words(s).size() + 2));
  }
}

TEST_CASE("encoder output contract") {
  const auto v = build_vocab({"a b c d e"});
  RngStream rng(3);
  TextEncoder enc(tiny(v.size()), rng);
  const auto t = tokenize("a b c", v, 8);
  const auto y = enc.encode(t).value();
  CHECK(y.shape() == Shape{1, 6});
  CHECK(enc.encode(t).value() == y);
  CHECK(enc.encode(tokenize("a b c", v, 8)).value() == y);
  const auto batch = enc.encode(std::vector<TokenSeq>{t, tokenize("d", v, 8)}).value();
  CHECK(batch.shape() == Shape{2, 6});
  CHECK(enc.project(enc.encode(t)).value().shape() == Shape{1, 3});

  auto bad = t;
  bad.ids[1] = v.size();
  CHECK_THROWS_AS(enc.encode(bad), std::invalid_argument);
  CHECK_THROWS_AS(enc.encode(tokenize("a", v, 9)), std::invalid_argument);
  CHECK_THROWS_AS(enc.project(Var::constant(NdArray({1, 5}))), std::invalid_argument);
  auto empty = t;
  std::fill(empty.mask.begin(), empty.mask.end(), 0);
  CHECK_THROWS_AS(enc.encode(empty), std::invalid_argument);
}

TEST_CASE("default encoder shape") {
  TextEncoderConfig cfg;
  cfg.vocab_size = 40;
  RngStream rng(1);
  TextEncoder enc(cfg, rng);
  const auto v = build_vocab({"furosemide 40 mg"});
  const auto pooled = enc.encode(tokenize("furosemide 40 mg", v, 64));
  CHECK(pooled.value().shape() == Shape{1, 768});
  CHECK(enc.project(pooled).value().shape() == Shape{1, 256});
}

TEST_CASE("masked positions never matter") {
  const auto v = build_vocab({"a b c d e f g"});
  RngStream rng(8);
  TextEncoder enc(tiny(v.size()), rng);
  RngStream gen(9);
  for (int trial = 0; trial < 300; ++trial) {
    std::string s;
    for (std::uint64_t i = 0, n = gen.below(7); i < n; ++i) s += v.token(4 + gen.below(7)) + " ";
    const auto t = tokenize(s, v, 8);
    const auto base = enc.encode(t).value();
    for (std::size_t p = t.real(); p < 8; ++p) {
      for (std::size_t sub = 0; sub < v.size(); ++sub) {
        auto u = t;
        u.ids[p] = sub;
        CHECK(enc.encode(u).value() == base);
      }
    }
  }
}

TEST_CASE("real-prefix encoding equals the full masked computation") {
  const auto v = build_vocab({"a b c d e f g"});
  RngStream rng(12);
  TextEncoder enc(tiny(v.size()), rng);
  RngStream gen(13);
  for (int trial = 0; trial < 200; ++trial) {
    TokenSeq t{std::vector<std::size_t>(8), std::vector<std::uint8_t>(8)};
    for (std::size_t i = 0; i < 8; ++i) {
      t.ids[i] = gen.below(v.size());
      t.mask[i] = gen.bernoulli(0.6);
    }
    if (t.real() == 0) t.mask[gen.below(8)] = 1;
    CHECK(max_abs_diff(enc.encode(t).value(), masked_reference(enc, t)) < 1e-12);
  }
}

TEST_CASE("single real token reduces to the per-token stack") {
  const auto v = build_vocab({"a b c"});
  RngStream rng(14);
  TextEncoder enc(tiny(v.size()), rng);
  for (std::size_t p = 0; p < 8; ++p) {
    for (std::size_t id = 0; id < v.size(); ++id) {
      TokenSeq t{std::vector<std::size_t>(8, kPad), std::vector<std::uint8_t>(8, 0)};
      t.ids[p] = id;
      t.mask[p] = 1;
      // With one key the attention weight is 1, so each block is
      // x + Wo Wv LN(x) followed by its feed-forward residual.
      Var x = gather_rows(enc.embed, {id}) + gather_rows(enc.position, {p});
      for (const auto& b : enc.blocks) {
        const Var y = x + b.attn.wo(b.attn.wv(b.norm_attn(x)));
        x = y + b.ff2(relu(b.ff1(b.norm_ffn(y))));
      }
      CHECK(max_abs_diff(enc.encode(t).value(), enc.final_norm(x).value()) < 1e-12);
    }
  }
}

TEST_CASE("projection is linear") {
  RngStream rng(15);
  TextEncoder enc(tiny(10), rng);
  enc.projection.bias.node()->value.fill(0.0);
  NdArray a({1, 6}), b({1, 6}), ab({1, 6});
  for (std::size_t i = 0; i < 6; ++i) {
    a[i] = rng.normal();
    b[i] = rng.normal();
    ab[i] = a[i] + b[i];
  }
  const auto pa = enc.project(Var::constant(a)).value(), pb = enc.project(Var::constant(b)).value();
  const auto pab = enc.project(Var::constant(ab)).value();
  for (std::size_t i = 0; i < 3; ++i) CHECK(pab[i] == doctest::Approx(pa[i] + pb[i]).epsilon(1e-12));
  const NdArray zero = enc.project(Var::constant(NdArray({1, 6}))).value();
  for (double x : zero.values()) CHECK(x == 0.0);
}

TEST_CASE("text encoder gradients") {
  const auto v = build_vocab({"a b c d"});
  RngStream rng(16);
  TextEncoder enc(tiny(v.size()), rng);
  const auto t1 = tokenize("a b c", v, 8), t2 = tokenize("d a", v, 8);
  NdArray mix({2, 3});
  for (auto& x : mix.values()) x = rng.normal();
  const Var w = Var::constant(mix);
  auto loss = [&] { return sum(tanh(enc.project(enc.encode(std::vector<TokenSeq>{t1, t2}))) * w); };
  nn::ParamList params;
  enc.collect(params, "text.");
  CHECK(params.front().name == "text.embed");
  CHECK(grad_check_params(loss, nn::vars_of(params)) < 1e-4);
}

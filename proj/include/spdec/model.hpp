#pragma once

// Post-layer-norm encoder-decoder transformer with sinusoidal positions.
// The decoder accepts left-padded batches: each row's positional encodings
// start after its padding run and PAD positions are invisible to attention.

#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "spdec/nn.hpp"
#include "spdec/types.hpp"

namespace spdec {

struct ModelConfig {
  int num_layers = 2;
  int num_heads = 4;
  int d_model = 64;
  int d_ff = 256;
  int vocab_size = 0;
  int max_len = 256;

  void validate() const {
    if (num_layers <= 0 || num_heads <= 0 || d_model <= 0 || d_ff <= 0 || vocab_size <= 0 ||
        max_len <= 0)
      throw ConfigError("model config fields must all be positive");
    if (d_model % num_heads != 0)
      throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by num_heads " +
                        std::to_string(num_heads));
    if (vocab_size < kNumSpecials)
      throw ConfigError("vocab_size must cover the four special tokens");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<float> data;

  std::int64_t numel() const {
    std::int64_t n = 1;
    for (auto s : shape) n *= s;
    return n;
  }
};

struct ParamSpec {
  std::string name;
  std::vector<std::int64_t> shape;
};

/// Every tensor a config requires, in canonical (serialization) order.
inline std::vector<ParamSpec> param_specs(const ModelConfig& c) {
  const std::int64_t d = c.d_model, ff = c.d_ff, v = c.vocab_size;
  std::vector<ParamSpec> specs;
  specs.push_back({"embedding", {v, d}});
  auto attn = [&](const std::string& p) {
    for (const char* m : {"q", "k", "v", "o"}) {
      specs.push_back({p + "." + m + ".weight", {d, d}});
      specs.push_back({p + "." + m + ".bias", {d}});
    }
  };
  auto norm = [&](const std::string& p) {
    specs.push_back({p + ".weight", {d}});
    specs.push_back({p + ".bias", {d}});
  };
  auto ffn = [&](const std::string& p) {
    specs.push_back({p + ".fc1.weight", {d, ff}});
    specs.push_back({p + ".fc1.bias", {ff}});
    specs.push_back({p + ".fc2.weight", {ff, d}});
    specs.push_back({p + ".fc2.bias", {d}});
  };
  for (int l = 0; l < c.num_layers; ++l) {
    const auto p = "encoder.layers." + std::to_string(l);
    attn(p + ".self_attn");
    norm(p + ".norm1");
    ffn(p + ".ffn");
    norm(p + ".norm2");
  }
  for (int l = 0; l < c.num_layers; ++l) {
    const auto p = "decoder.layers." + std::to_string(l);
    attn(p + ".self_attn");
    norm(p + ".norm1");
    attn(p + ".cross_attn");
    norm(p + ".norm2");
    ffn(p + ".ffn");
    norm(p + ".norm3");
  }
  specs.push_back({"output.weight", {d, v}});
  specs.push_back({"output.bias", {v}});
  return specs;
}

using ModelParams = std::map<std::string, Tensor>;

inline std::string shape_string(const std::vector<std::int64_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "," : "") + std::to_string(shape[i]);
  return s + "]";
}

/// Throws ShapeMismatch unless `params` holds exactly the tensors `config`
/// requires, each with its declared shape and element count.
inline void validate_params(const ModelParams& params, const ModelConfig& config) {
  const auto specs = param_specs(config);
  for (const auto& s : specs) {
    auto it = params.find(s.name);
    if (it == params.end()) throw ShapeMismatch("missing tensor '" + s.name + "'");
    if (it->second.shape != s.shape)
      throw ShapeMismatch("tensor '" + s.name + "' has shape " + shape_string(it->second.shape) +
                          ", expected " + shape_string(s.shape));
    if (static_cast<std::int64_t>(it->second.data.size()) != it->second.numel())
      throw ShapeMismatch("tensor '" + s.name + "' holds " + std::to_string(it->second.data.size()) +
                          " values for shape " + shape_string(s.shape));
  }
  if (params.size() != specs.size()) {
    std::map<std::string, int> known;
    for (const auto& s : specs) known[s.name] = 1;
    for (const auto& [name, t] : params)
      if (!known.count(name)) throw ShapeMismatch("unexpected tensor '" + name + "'");
  }
}

/// Randomly initialized parameters; deterministic for a given seed.
inline ModelParams random_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  ModelParams params;
  for (const auto& s : param_specs(config)) {
    Tensor t{s.shape, {}};
    t.data.resize(static_cast<std::size_t>(t.numel()));
    const bool is_norm = s.name.find(".norm") != std::string::npos;
    const bool is_bias = s.name.size() > 5 && s.name.ends_with(".bias");
    double mean = 0.0, stddev;
    if (is_norm && !is_bias) {
      mean = 1.0;
      stddev = 0.1;
    } else if (is_norm || is_bias) {
      stddev = 0.1;
    } else {
      // Embeddings are [V x d] and get scaled by sqrt(d) at lookup time.
      const auto fan_in = static_cast<double>(s.name == "embedding" ? s.shape[1] : s.shape[0]);
      stddev = 1.0 / std::sqrt(fan_in);
    }
    std::normal_distribution<double> dist(mean, stddev);
    for (auto& x : t.data) x = static_cast<float>(dist(rng));
    params.emplace(s.name, std::move(t));
  }
  return params;
}

/// Sinusoidal encoding of (position - offset). Left-padded rows pass their
/// pad count as offset so their first real token sits at position 0.
inline std::vector<float> positional_encoding(std::int64_t position, std::int64_t offset,
                                              int d_model) {
  const double p = static_cast<double>(position - offset);
  std::vector<float> pe(static_cast<std::size_t>(d_model));
  for (int i = 0; 2 * i < d_model; ++i) {
    const double angle = p / std::pow(10000.0, 2.0 * i / d_model);
    pe[2 * i] = static_cast<float>(std::sin(angle));
    if (2 * i + 1 < d_model) pe[2 * i + 1] = static_cast<float>(std::cos(angle));
  }
  return pe;
}

struct EncoderMemory {
  std::vector<float> states;         // [source_len x d_model]
  std::vector<std::uint8_t> is_pad;  // one entry per source position
  int d_model = 0;

  std::size_t length() const { return is_pad.size(); }
};

/// Rows of equal width; row b starts with pad_counts[b] PAD ids.
struct PaddedBatch {
  std::size_t rows = 0;
  std::size_t width = 0;
  std::vector<TokenId> ids;
  std::vector<std::size_t> pad_counts;

  std::span<const TokenId> row(std::size_t b) const {
    return {ids.data() + b * width, width};
  }
};

/// Left-pads sequences to the longest one.
inline PaddedBatch pad_left(const std::vector<TokenSequence>& seqs) {
  PaddedBatch batch;
  batch.rows = seqs.size();
  for (const auto& s : seqs) batch.width = std::max(batch.width, s.size());
  batch.ids.assign(batch.rows * batch.width, kPad);
  batch.pad_counts.resize(batch.rows);
  for (std::size_t b = 0; b < seqs.size(); ++b) {
    const auto pad = batch.width - seqs[b].size();
    batch.pad_counts[b] = pad;
    std::copy(seqs[b].begin(), seqs[b].end(), batch.ids.begin() + b * batch.width + pad);
  }
  return batch;
}

// Scores for every (row, position). Entries at PAD positions are unspecified.
struct LogitBatch {
  std::size_t rows = 0;
  std::size_t width = 0;
  std::size_t vocab = 0;
  std::vector<float> values;

  std::span<const float> at(std::size_t b, std::size_t pos) const {
    return {values.data() + (b * width + pos) * vocab, vocab};
  }
  std::span<float> at(std::size_t b, std::size_t pos) {
    return {values.data() + (b * width + pos) * vocab, vocab};
  }
};

// Throws MalformedPadding unless the row is exactly pad_count PADs followed by
// non-PAD ids.
inline void check_padding(std::span<const TokenId> row, std::size_t pad_count) {
  if (pad_count > row.size()) throw MalformedPadding("pad count exceeds row width");
  for (std::size_t j = 0; j < row.size(); ++j) {
    const bool pad = row[j] == kPad;
    if (pad != (j < pad_count))
      throw MalformedPadding("row has " + std::string(pad ? "PAD" : "a token") + " at position " +
                             std::to_string(j) + " with declared pad count " +
                             std::to_string(pad_count));
  }
}

class Transformer {
 public:
  using Memory = EncoderMemory;

  Transformer(ModelConfig config, ModelParams params)
      : config_(config), params_(std::make_shared<const ModelParams>(std::move(params))) {
    config_.validate();
    validate_params(*params_, config_);
    bind();
  }

  const ModelConfig& config() const { return config_; }
  const ModelParams& params() const { return *params_; }
  std::size_t vocab_size() const { return static_cast<std::size_t>(config_.vocab_size); }
  std::size_t max_positions() const { return static_cast<std::size_t>(config_.max_len); }

  EncoderMemory encode(const TokenSequence& source) const {
    check_ids(source, "source");
    const std::size_t d = dm(), n = source.size();
    EncoderMemory mem;
    mem.d_model = config_.d_model;
    mem.is_pad.resize(n);
    for (std::size_t i = 0; i < n; ++i) mem.is_pad[i] = source[i] == kPad ? 1 : 0;
    std::vector<float> x = embed(source);
    std::vector<float> tmp(n * d), q(n * d), k(n * d), v(n * d), ff(n * static_cast<std::size_t>(config_.d_ff));
    for (const auto& layer : enc_) {
      self_block(layer.self_attn, x.data(), n, q, k, v, tmp,
                 [&](std::size_t, std::size_t j) { return !mem.is_pad[j]; });
      add_norm(x.data(), tmp.data(), n, layer.norm1);
      ffn_block(layer.ffn, x.data(), n, ff, tmp);
      add_norm(x.data(), tmp.data(), n, layer.norm2);
    }
    mem.states = std::move(x);
    return mem;
  }

  /// Next-token logits for every non-PAD position of every row, all rows
  /// attending to the same encoder memory.
  LogitBatch decode_step(const EncoderMemory& memory, const PaddedBatch& batch) const {
    std::vector<const EncoderMemory*> mems(batch.rows, &memory);
    return decode_step(std::span<const EncoderMemory* const>(mems), batch);
  }

  /// As above with one memory per row.
  LogitBatch decode_step(std::span<const EncoderMemory* const> memories,
                         const PaddedBatch& batch) const {
    if (memories.size() != batch.rows)
      throw ConfigError("decode_step needs one memory per row");
    if (batch.width > max_positions())
      throw SequenceTooLong("decoder input width " + std::to_string(batch.width) +
                            " exceeds max_len " + std::to_string(config_.max_len));
    for (std::size_t b = 0; b < batch.rows; ++b) {
      check_padding(batch.row(b), batch.pad_counts[b]);
      check_ids(batch.row(b), "decoder input");
    }

    // Cross-attention keys/values depend only on the memory; compute them once
    // per distinct memory and layer.
    std::unordered_map<const EncoderMemory*, std::vector<CrossKV>> cross;
    for (const auto* m : memories)
      if (!cross.count(m)) cross.emplace(m, cross_kv(*m));

    LogitBatch out;
    out.rows = batch.rows;
    out.width = batch.width;
    out.vocab = vocab_size();
    out.values.assign(out.rows * out.width * out.vocab, 0.0f);
    for (std::size_t b = 0; b < batch.rows; ++b)
      decode_row(batch.row(b), batch.pad_counts[b], *memories[b], cross.at(memories[b]), out, b);
    return out;
  }

 private:
  struct Attn {
    const float *wq, *bq, *wk, *bk, *wv, *bv, *wo, *bo;
  };
  struct Norm {
    const float *gamma, *beta;
  };
  struct Ffn {
    const float *w1, *b1, *w2, *b2;
  };
  struct EncLayer {
    Attn self_attn;
    Norm norm1;
    Ffn ffn;
    Norm norm2;
  };
  struct DecLayer {
    Attn self_attn;
    Norm norm1;
    Attn cross_attn;
    Norm norm2;
    Ffn ffn;
    Norm norm3;
  };
  struct CrossKV {
    std::vector<float> k, v;
  };

  std::size_t dm() const { return static_cast<std::size_t>(config_.d_model); }

  const float* p(const std::string& name) const { return params_->at(name).data.data(); }

  Attn bind_attn(const std::string& pre) const {
    return {p(pre + ".q.weight"), p(pre + ".q.bias"), p(pre + ".k.weight"), p(pre + ".k.bias"),
            p(pre + ".v.weight"), p(pre + ".v.bias"), p(pre + ".o.weight"), p(pre + ".o.bias")};
  }
  Norm bind_norm(const std::string& pre) const { return {p(pre + ".weight"), p(pre + ".bias")}; }
  Ffn bind_ffn(const std::string& pre) const {
    return {p(pre + ".fc1.weight"), p(pre + ".fc1.bias"), p(pre + ".fc2.weight"),
            p(pre + ".fc2.bias")};
  }

  void bind() {
    embedding_ = p("embedding");
    out_w_ = p("output.weight");
    out_b_ = p("output.bias");
    for (int l = 0; l < config_.num_layers; ++l) {
      const auto e = "encoder.layers." + std::to_string(l);
      enc_.push_back({bind_attn(e + ".self_attn"), bind_norm(e + ".norm1"), bind_ffn(e + ".ffn"),
                      bind_norm(e + ".norm2")});
      const auto dpre = "decoder.layers." + std::to_string(l);
      dec_.push_back({bind_attn(dpre + ".self_attn"), bind_norm(dpre + ".norm1"),
                      bind_attn(dpre + ".cross_attn"), bind_norm(dpre + ".norm2"),
                      bind_ffn(dpre + ".ffn"), bind_norm(dpre + ".norm3")});
    }
  }

  void check_ids(std::span<const TokenId> ids, const char* what) const {
    if (ids.size() > max_positions())
      throw SequenceTooLong(std::string(what) + " length " + std::to_string(ids.size()) +
                            " exceeds max_len " + std::to_string(config_.max_len));
    for (auto id : ids)
      if (id < 0 || id >= config_.vocab_size)
        throw IdOutOfRange(std::string(what) + " id " + std::to_string(id) +
                           " outside vocabulary of size " + std::to_string(config_.vocab_size));
  }

  // Scaled embeddings plus positions; the first id sits at position 0.
  std::vector<float> embed(std::span<const TokenId> ids) const {
    const std::size_t d = dm();
    const float scale = std::sqrt(static_cast<float>(d));
    std::vector<float> x(ids.size() * d);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const auto pe = positional_encoding(static_cast<std::int64_t>(i), 0, config_.d_model);
      const float* e = embedding_ + static_cast<std::size_t>(ids[i]) * d;
      for (std::size_t t = 0; t < d; ++t) x[i * d + t] = e[t] * scale + pe[t];
    }
    return x;
  }

  template <class KeepFn>
  void self_block(const Attn& a, const float* x, std::size_t n, std::vector<float>& q,
                  std::vector<float>& k, std::vector<float>& v, std::vector<float>& out,
                  KeepFn&& keep) const {
    const std::size_t d = dm();
    nn::linear_rows(x, n, d, a.wq, a.bq, d, q.data());
    nn::linear_rows(x, n, d, a.wk, a.bk, d, k.data());
    nn::linear_rows(x, n, d, a.wv, a.bv, d, v.data());
    std::vector<float> ctx(n * d);
    nn::attention(q.data(), n, k.data(), v.data(), n, d, static_cast<std::size_t>(config_.num_heads),
                  keep, ctx.data());
    nn::linear_rows(ctx.data(), n, d, a.wo, a.bo, d, out.data());
  }

  void ffn_block(const Ffn& f, const float* x, std::size_t n, std::vector<float>& hidden,
                 std::vector<float>& out) const {
    const std::size_t d = dm(), ff = static_cast<std::size_t>(config_.d_ff);
    nn::linear_rows(x, n, d, f.w1, f.b1, ff, hidden.data());
    nn::relu(std::span<float>(hidden.data(), n * ff));
    nn::linear_rows(hidden.data(), n, ff, f.w2, f.b2, d, out.data());
  }

  void add_norm(float* x, const float* delta, std::size_t n, const Norm& norm) const {
    const std::size_t d = dm();
    for (std::size_t i = 0; i < n * d; ++i) x[i] += delta[i];
    for (std::size_t i = 0; i < n; ++i)
      nn::layer_norm(std::span<float>(x + i * d, d), norm.gamma, norm.beta);
  }

  std::vector<CrossKV> cross_kv(const EncoderMemory& m) const {
    const std::size_t d = dm(), s = m.length();
    std::vector<CrossKV> kv(dec_.size());
    for (std::size_t l = 0; l < dec_.size(); ++l) {
      kv[l].k.resize(s * d);
      kv[l].v.resize(s * d);
      nn::linear_rows(m.states.data(), s, d, dec_[l].cross_attn.wk, dec_[l].cross_attn.bk, d,
                      kv[l].k.data());
      nn::linear_rows(m.states.data(), s, d, dec_[l].cross_attn.wv, dec_[l].cross_attn.bv, d,
                      kv[l].v.data());
    }
    return kv;
  }

  // PAD positions take no part in the computation: the real suffix of the row
  // is embedded with positions offset by the pad count and attends causally
  // within itself.
  void decode_row(std::span<const TokenId> row, std::size_t pad, const EncoderMemory& mem,
                  const std::vector<CrossKV>& kv, LogitBatch& out, std::size_t b) const {
    const std::size_t d = dm(), n = row.size() - pad;
    if (n == 0) return;
    const float scale = std::sqrt(static_cast<float>(d));
    std::vector<float> x(n * d);
    for (std::size_t i = 0; i < n; ++i) {
      const auto pos = static_cast<std::int64_t>(pad + i);
      const auto pe = positional_encoding(pos, static_cast<std::int64_t>(pad), config_.d_model);
      const float* e = embedding_ + static_cast<std::size_t>(row[pad + i]) * d;
      for (std::size_t t = 0; t < d; ++t) x[i * d + t] = e[t] * scale + pe[t];
    }
    std::vector<float> tmp(n * d), q(n * d), k(n * d), v(n * d),
        hidden(n * static_cast<std::size_t>(config_.d_ff)), ctx(n * d);
    const auto heads = static_cast<std::size_t>(config_.num_heads);
    for (std::size_t l = 0; l < dec_.size(); ++l) {
      const auto& layer = dec_[l];
      self_block(layer.self_attn, x.data(), n, q, k, v, tmp,
                 [](std::size_t i, std::size_t j) { return j <= i; });
      add_norm(x.data(), tmp.data(), n, layer.norm1);

      nn::linear_rows(x.data(), n, d, layer.cross_attn.wq, layer.cross_attn.bq, d, q.data());
      nn::attention(q.data(), n, kv[l].k.data(), kv[l].v.data(), mem.length(), d, heads,
                    [&](std::size_t, std::size_t j) { return !mem.is_pad[j]; }, ctx.data());
      nn::linear_rows(ctx.data(), n, d, layer.cross_attn.wo, layer.cross_attn.bo, d, tmp.data());
      add_norm(x.data(), tmp.data(), n, layer.norm2);

      ffn_block(layer.ffn, x.data(), n, hidden, tmp);
      add_norm(x.data(), tmp.data(), n, layer.norm3);
    }
    for (std::size_t i = 0; i < n; ++i)
      nn::linear(std::span<const float>(x.data() + i * d, d), out_w_, out_b_, out.at(b, pad + i));
  }

  ModelConfig config_;
  std::shared_ptr<const ModelParams> params_;
  const float* embedding_ = nullptr;
  const float* out_w_ = nullptr;
  const float* out_b_ = nullptr;
  std::vector<EncLayer> enc_;
  std::vector<DecLayer> dec_;
};

}  // namespace spdec

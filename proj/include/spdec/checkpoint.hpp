#pragma once

// Checkpoint layout:
//   "SPDK1\n"
//   u64 LE header length, UTF-8 JSON header {config fields, tensors: [{name, shape}]}
//   f32 LE data of every tensor, concatenated in header order
//   u64 LE vocabulary length, vocabulary text (one token per line)

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>

#include <json.hpp>

#include "spdec/model.hpp"
#include "spdec/tokenizer.hpp"

namespace spdec {

inline constexpr std::string_view kCheckpointMagic = "SPDK1\n";

struct Checkpoint {
  ModelConfig config;
  ModelParams params;
  Vocabulary vocab;
  std::string header;  // JSON header exactly as stored
};

namespace detail {

inline void write_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline bool read_exact(std::istream& is, char* dst, std::size_t n) {
  is.read(dst, static_cast<std::streamsize>(n));
  return static_cast<std::size_t>(is.gcount()) == n;
}

inline std::uint64_t read_u64(std::istream& is, const std::string& what) {
  unsigned char b[8];
  if (!read_exact(is, reinterpret_cast<char*>(b), 8))
    throw TruncatedFile("file ends inside the " + what + " length");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

inline std::string read_block(std::istream& is, const std::string& what) {
  const auto n = read_u64(is, what);
  std::string s;
  // Grow in chunks so a corrupt length cannot trigger a huge allocation.
  constexpr std::size_t kChunk = 1 << 20;
  while (s.size() < n) {
    const std::size_t take = std::min<std::uint64_t>(kChunk, n - s.size());
    const std::size_t old = s.size();
    s.resize(old + take);
    if (!read_exact(is, s.data() + old, take))
      throw TruncatedFile("file ends inside the " + what + " (" + std::to_string(n) +
                          " bytes declared)");
  }
  return s;
}

inline std::string make_header(const ModelConfig& c) {
  nlohmann::ordered_json h;
  h["num_layers"] = c.num_layers;
  h["num_heads"] = c.num_heads;
  h["d_model"] = c.d_model;
  h["d_ff"] = c.d_ff;
  h["vocab_size"] = c.vocab_size;
  h["max_len"] = c.max_len;
  auto tensors = nlohmann::ordered_json::array();
  for (const auto& s : param_specs(c)) tensors.push_back({{"name", s.name}, {"shape", s.shape}});
  h["tensors"] = std::move(tensors);
  return h.dump();
}

inline void check_tensor_list(const nlohmann::json& tensors, const std::vector<ParamSpec>& specs) {
  if (!tensors.is_array()) throw ConfigError("checkpoint header: 'tensors' is not a list");
  for (std::size_t i = 0; i < std::max(specs.size(), tensors.size()); ++i) {
    if (i >= tensors.size()) throw ShapeMismatch("missing tensor '" + specs[i].name + "'");
    const auto name = tensors[i].at("name").get<std::string>();
    if (i >= specs.size()) throw ShapeMismatch("unexpected tensor '" + name + "'");
    const auto shape = tensors[i].at("shape").get<std::vector<std::int64_t>>();
    if (name != specs[i].name)
      throw ShapeMismatch("tensor '" + name + "' found where '" + specs[i].name + "' is expected");
    if (shape != specs[i].shape)
      throw ShapeMismatch("tensor '" + name + "' declared with shape " + shape_string(shape) +
                          ", config requires " + shape_string(specs[i].shape));
  }
}

inline ModelConfig parse_header(const std::string& text) {
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed checkpoint header: ") + e.what());
  }
  ModelConfig c;
  try {
    c.num_layers = h.at("num_layers").get<int>();
    c.num_heads = h.at("num_heads").get<int>();
    c.d_model = h.at("d_model").get<int>();
    c.d_ff = h.at("d_ff").get<int>();
    c.vocab_size = h.at("vocab_size").get<int>();
    c.max_len = h.at("max_len").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("checkpoint header missing config field: ") + e.what());
  }
  c.validate();
  try {
    check_tensor_list(h.at("tensors"), param_specs(c));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed tensor list in checkpoint header: ") + e.what());
  }
  return c;
}


}  // namespace detail

inline void save_checkpoint(std::ostream& os, const ModelParams& params, const ModelConfig& config,
                            const Vocabulary& vocab) {
  config.validate();
  validate_params(params, config);
  if (vocab.size() != static_cast<std::size_t>(config.vocab_size))
    throw ShapeMismatch("vocabulary has " + std::to_string(vocab.size()) +
                        " entries, config declares " + std::to_string(config.vocab_size));
  os.write(kCheckpointMagic.data(), static_cast<std::streamsize>(kCheckpointMagic.size()));
  const auto header = detail::make_header(config);
  detail::write_u64(os, header.size());
  os.write(header.data(), static_cast<std::streamsize>(header.size()));
  std::string buf;
  for (const auto& s : param_specs(config)) {
    const auto& data = params.at(s.name).data;
    buf.resize(data.size() * 4);
    for (std::size_t i = 0; i < data.size(); ++i) {
      const auto bits = std::bit_cast<std::uint32_t>(data[i]);
      for (int k = 0; k < 4; ++k) buf[i * 4 + k] = static_cast<char>((bits >> (8 * k)) & 0xff);
    }
    os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  }
  const auto vtext = vocab.to_string();
  detail::write_u64(os, vtext.size());
  os.write(vtext.data(), static_cast<std::streamsize>(vtext.size()));
  if (!os) throw Error("failed writing checkpoint");
}

inline void save_checkpoint(const std::string& path, const ModelParams& params,
                            const ModelConfig& config, const Vocabulary& vocab) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  save_checkpoint(os, params, config, vocab);
}

// Reads the magic and the JSON header only.
inline std::string read_checkpoint_header(std::istream& is) {
  std::string magic(kCheckpointMagic.size(), '\0');
  if (!detail::read_exact(is, magic.data(), magic.size()) || magic != kCheckpointMagic)
    throw BadMagic("not a checkpoint: magic bytes differ from 'SPDK1\\n'");
  return detail::read_block(is, "header");
}

inline Checkpoint load_checkpoint(std::istream& is) {
  Checkpoint ck;
  ck.header = read_checkpoint_header(is);
  ck.config = detail::parse_header(ck.header);
  std::string buf;
  for (const auto& s : param_specs(ck.config)) {
    Tensor t{s.shape, {}};
    const auto n = static_cast<std::size_t>(t.numel());
    buf.resize(n * 4);
    if (!detail::read_exact(is, buf.data(), buf.size()))
      throw TruncatedFile("file ends inside tensor '" + s.name + "' (shape " +
                          shape_string(s.shape) + ")");
    t.data.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::uint32_t bits = 0;
      for (int k = 0; k < 4; ++k)
        bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[i * 4 + k])) << (8 * k);
      t.data[i] = std::bit_cast<float>(bits);
    }
    ck.params.emplace(s.name, std::move(t));
  }
  ck.vocab = Vocabulary::from_string(detail::read_block(is, "vocabulary"));
  if (ck.vocab.size() != static_cast<std::size_t>(ck.config.vocab_size))
    throw ShapeMismatch("vocabulary block has " + std::to_string(ck.vocab.size()) +
                        " entries, header declares vocab_size " +
                        std::to_string(ck.config.vocab_size));
  return ck;
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open checkpoint '" + path + "'");
  return load_checkpoint(is);
}

}  // namespace spdec

// spdec: tokenize, build vocabularies, decode and benchmark with a
// checkpoint or the oracle model.
//
// Exit codes: 0 success, 1 usage error, 2 data error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "spdec/spdec.hpp"

using namespace spdec;

namespace {

constexpr int kUsage = 1;
constexpr int kData = 2;

// Data error with file/line context.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string input, output, checkpoint, oracle, vocab;
  std::vector<std::string> modes;
  std::size_t draft_length = 10;
  std::size_t max_drafts = 25;
  std::size_t beam_size = 5;
  std::size_t max_len = 200;
  std::size_t max_iters = 200;
  std::size_t jobs = 1;
  std::size_t repeats = 5;
  bool dilated = false;
  bool timing = false;
  // init-checkpoint
  std::uint64_t seed = 0;
  ModelConfig model;
};

struct Lines {
  std::string name;
  std::vector<std::string> text;
  std::vector<std::size_t> lineno;  // 1-based, blank lines skipped
};

Lines read_lines(const std::string& path) {
  Lines out;
  out.name = path.empty() ? "<stdin>" : path;
  std::ifstream file;
  if (!path.empty()) {
    file.open(path);
    if (!file) throw DataError(path + ": cannot open");
  }
  std::istream& in = path.empty() ? std::cin : file;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    out.text.push_back(line);
    out.lineno.push_back(n);
  }
  return out;
}

// Writes to --output, or stdout when none is given.
class Sink {
 public:
  explicit Sink(const std::string& path) {
    if (path.empty()) return;
    file_.open(path, std::ios::binary);
    if (!file_) throw DataError(path + ": cannot open for writing");
  }
  std::ostream& os() { return file_.is_open() ? file_ : std::cout; }

 private:
  std::ofstream file_;
};

Vocabulary read_vocab_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError(path + ": cannot open vocabulary");
  try {
    return Vocabulary::read(in);
  } catch (const Error& e) {
    throw DataError(path + ": " + e.what());
  }
}

struct LoadedModel {
  std::variant<Transformer, OracleModel> model;
  Vocabulary vocab;
};

LoadedModel load_model(const Options& o) {
  if (o.checkpoint.empty() && o.oracle.empty())
    throw UsageError("a model is required: pass --checkpoint FILE or --oracle FILE");
  if (!o.checkpoint.empty()) {
    try {
      auto ck = load_checkpoint(o.checkpoint);
      Transformer t(ck.config, std::move(ck.params));
      return {std::move(t), o.vocab.empty() ? std::move(ck.vocab) : read_vocab_file(o.vocab)};
    } catch (const Error& e) {
      throw DataError(o.checkpoint + ": " + e.what());
    }
  }
  OracleConfig cfg;
  try {
    cfg = load_oracle_config(o.oracle);
  } catch (const Error& e) {
    throw DataError(o.oracle + ": " + e.what());
  }
  const auto vocab_path = o.vocab.empty() ? cfg.vocab_path : o.vocab;
  if (vocab_path.empty())
    throw UsageError("the oracle needs a vocabulary: add 'vocab FILE' to " + o.oracle +
                     " or pass --vocab");
  auto vocab = read_vocab_file(vocab_path);
  try {
    OracleModel m(cfg.spec, vocab.size());
    return {std::move(m), std::move(vocab)};
  } catch (const Error& e) {
    throw DataError(o.oracle + ": " + e.what());
  }
}

StrategyConfig strategy(const Options& o, const std::string& mode) {
  StrategyConfig s;
  s.mode = parse_mode(mode);
  s.draft_length = o.draft_length;
  s.max_drafts = o.max_drafts;
  s.dilated_drafts = o.dilated;
  s.beam_size = o.beam_size;
  s.max_len = o.max_len;
  s.max_iters = o.max_iters;
  return s;
}

TokenSequence source_ids(const Lines& lines, std::size_t i, const Vocabulary& vocab) {
  try {
    return encode(tokenize(lines.text[i]), vocab, true);
  } catch (const Error& e) {
    throw DataError(lines.name + ":" + std::to_string(lines.lineno[i]) + ": " + e.what());
  }
}

int cmd_tokenize(const Options& o) {
  const auto lines = read_lines(o.input);
  Sink sink(o.output);
  for (std::size_t i = 0; i < lines.text.size(); ++i) {
    std::vector<std::string> toks;
    try {
      toks = tokenize(lines.text[i]);
    } catch (const Error& e) {
      throw DataError(lines.name + ":" + std::to_string(lines.lineno[i]) + ": " + e.what());
    }
    for (std::size_t t = 0; t < toks.size(); ++t) sink.os() << (t ? " " : "") << toks[t];
    sink.os() << '\n';
  }
  return 0;
}

int cmd_build_vocab(const Options& o) {
  const auto lines = read_lines(o.input);
  Vocabulary v;
  for (std::size_t i = 0; i < lines.text.size(); ++i) {
    try {
      for (const auto& t : tokenize(lines.text[i])) v.add(t);
    } catch (const Error& e) {
      throw DataError(lines.name + ":" + std::to_string(lines.lineno[i]) + ": " + e.what());
    }
  }
  Sink sink(o.output);
  v.write(sink.os());
  return 0;
}

template <class M>
void decode_all(const M& model, const Vocabulary& vocab, const Options& o, const Lines& lines,
                std::ostream& os) {
  const auto cfg = strategy(o, o.modes.front());
  std::vector<TokenSequence> sources;
  for (std::size_t i = 0; i < lines.text.size(); ++i) sources.push_back(source_ids(lines, i, vocab));
  std::vector<std::string> out(sources.size());
  parallel_for(sources.size(), o.jobs, [&](std::size_t i) {
    DecodeResult r;
    try {
      r = run_strategy(model, sources[i], cfg);
    } catch (const Error& e) {
      throw DataError(lines.name + ":" + std::to_string(lines.lineno[i]) + ": " + e.what());
    }
    nlohmann::ordered_json j;
    j["input"] = lines.text[i];
    auto outputs = nlohmann::ordered_json::array();
    for (const auto& h : r.hypotheses)
      outputs.push_back({{"smiles", detokenize(h.ids, vocab)}, {"logProb", h.log_prob}});
    j["outputs"] = std::move(outputs);
    j["stats"] = stats_json(r.stats, o.timing);
    out[i] = j.dump();
  });
  for (const auto& line : out) os << line << '\n';
}

int cmd_decode(const Options& o) {
  auto loaded = load_model(o);
  const auto lines = read_lines(o.input);
  Sink sink(o.output);
  std::visit([&](const auto& m) { decode_all(m, loaded.vocab, o, lines, sink.os()); }, loaded.model);
  return 0;
}

int cmd_bench(const Options& o) {
  auto loaded = load_model(o);
  const auto lines = read_lines(o.input);
  if (lines.text.empty()) throw DataError(lines.name + ": corpus is empty");
  std::vector<TokenSequence> corpus;
  for (std::size_t i = 0; i < lines.text.size(); ++i) corpus.push_back(source_ids(lines, i, loaded.vocab));
  std::vector<StrategyConfig> strategies;
  for (const auto& m : o.modes) strategies.push_back(strategy(o, m));
  const auto report = std::visit(
      [&](const auto& m) { return run_bench(m, corpus, strategies, o.repeats, 0, o.jobs); },
      loaded.model);
  if (!o.output.empty()) {
    Sink sink(o.output);
    write_report_jsonl(report, lines.text, sink.os());
  }
  print_report_table(report, std::cout);
  return 0;
}

int cmd_model_info(const Options& o) {
  if (o.checkpoint.empty()) throw UsageError("model-info needs --checkpoint FILE");
  std::ifstream in(o.checkpoint, std::ios::binary);
  if (!in) throw DataError(o.checkpoint + ": cannot open");
  try {
    std::cout << read_checkpoint_header(in) << '\n';
  } catch (const Error& e) {
    throw DataError(o.checkpoint + ": " + e.what());
  }
  return 0;
}

int cmd_init_checkpoint(const Options& o) {
  auto vocab = read_vocab_file(o.vocab);
  ModelConfig c = o.model;
  c.vocab_size = static_cast<int>(vocab.size());
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  std::ostringstream buf;
  save_checkpoint(buf, random_params(c, o.seed), c, vocab);
  Sink sink(o.output);
  sink.os() << buf.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  const CLI::Validator at_least_one(
      [](std::string& v) -> std::string {
        try {
          if (std::stoll(v) >= 1) return {};
        } catch (const std::exception&) {
        }
        return "must be an integer >= 1, got '" + v + "'";
      },
      "INT>=1");
  CLI::App app{"Speculative decoding for SMILES-to-SMILES transformers"};
  app.require_subcommand(1);
  Options o;

  auto add_io = [&](CLI::App* sub) {
    sub->add_option("--input", o.input, "Input file, one SMILES per line (default stdin)");
    sub->add_option("--output", o.output, "Output file (default stdout)");
  };
  auto add_model = [&](CLI::App* sub) {
    auto* ck = sub->add_option("--checkpoint", o.checkpoint, "Model checkpoint");
    auto* oracle = sub->add_option("--oracle", o.oracle, "Oracle model config file");
    ck->excludes(oracle);
    oracle->excludes(ck);
    sub->add_option("--vocab", o.vocab, "Vocabulary file (overrides the model's)");
  };
  auto add_decoding = [&](CLI::App* sub) {
    sub->add_option("--draft-length", o.draft_length, "Draft length")->capture_default_str();
    sub->add_option("--max-drafts", o.max_drafts, "Maximum number of drafts")
        ->capture_default_str()
        ->check(at_least_one);
    sub->add_flag("--dilated-drafts", o.dilated, "Also draft every-second-token windows");
    sub->add_option("--beam-size", o.beam_size, "Beam width for beam and sbs")
        ->capture_default_str()
        ->check(at_least_one);
    sub->add_option("--max-len", o.max_len, "Maximum generated tokens")
        ->capture_default_str()
        ->check(at_least_one);
    sub->add_option("--max-iters", o.max_iters, "Maximum sbs iterations")
        ->capture_default_str()
        ->check(at_least_one);
    sub->add_option("--jobs", o.jobs, "Worker threads across input lines")
        ->capture_default_str()
        ->check(at_least_one);
  };
  const auto modes = CLI::IsMember({"greedy", "greedy-spec", "beam", "sbs"});

  auto* tok = app.add_subcommand("tokenize", "Split SMILES into atomwise tokens");
  add_io(tok);

  auto* bv = app.add_subcommand("build-vocab", "Build a vocabulary file from a SMILES corpus");
  add_io(bv);

  auto* dec = app.add_subcommand("decode", "Decode every input line, JSONL output");
  add_io(dec);
  add_model(dec);
  add_decoding(dec);
  dec->add_option("--mode", o.modes, "greedy, greedy-spec, beam or sbs")
      ->expected(1)
      ->default_val("greedy")
      ->check(modes);
  dec->add_flag("--timing", o.timing, "Include wall time in stats (output no longer reproducible)");

  auto* bench = app.add_subcommand("bench", "Compare decoding strategies over a corpus");
  add_io(bench);
  add_model(bench);
  add_decoding(bench);
  bench
      ->add_option("--mode", o.modes, "Strategies to run; the first is the baseline (repeatable)")
      ->default_val(std::vector<std::string>{"greedy", "greedy-spec", "beam", "sbs"})
      ->check(modes);
  bench->add_option("--repeats", o.repeats, "Timed runs per strategy")
      ->capture_default_str()
      ->check(at_least_one);

  auto* info = app.add_subcommand("model-info", "Print a checkpoint's JSON header");
  info->add_option("--checkpoint", o.checkpoint, "Model checkpoint")->required();

  auto* init = app.add_subcommand("init-checkpoint", "Write a checkpoint with random weights");
  init->add_option("--vocab", o.vocab, "Vocabulary file")->required();
  init->add_option("--output", o.output, "Checkpoint path")->required();
  init->add_option("--seed", o.seed, "Random seed")->capture_default_str();
  init->add_option("--layers", o.model.num_layers)->capture_default_str();
  init->add_option("--heads", o.model.num_heads)->capture_default_str();
  init->add_option("--d-model", o.model.d_model)->capture_default_str();
  init->add_option("--d-ff", o.model.d_ff)->capture_default_str();
  init->add_option("--max-len", o.model.max_len)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*tok) return cmd_tokenize(o);
    if (*bv) return cmd_build_vocab(o);
    if (*dec) return cmd_decode(o);
    if (*bench) return cmd_bench(o);
    if (*info) return cmd_model_info(o);
    if (*init) return cmd_init_checkpoint(o);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }
  return 0;
}

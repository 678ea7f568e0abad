#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "json.hpp"

#include "pasttense/io.hpp"
#include "pasttense/lexicon.hpp"
#include "pasttense/model.hpp"

namespace pasttense {

// Checkpoint layout:
//   "PTCKPT1\n" <manifest byte length> "\n" <UTF-8 JSON manifest> "\n"
//   followed by every tensor as little-endian float32, row-major, in the
//   order listed by the manifest (byte offsets relative to the data start).
// Loading promotes values to float64.

inline constexpr const char* kCheckpointMagic = "PTCKPT1";

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"n_layers_enc", c.n_layers_enc}, {"n_layers_dec", c.n_layers_dec}, {"n_heads", c.n_heads},
          {"d_model", c.d_model},           {"d_ff", c.d_ff},                 {"dropout", c.dropout},
          {"use_copy", c.use_copy},         {"vocab_size", c.vocab_size},     {"max_len", c.max_len}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.n_layers_enc = j.at("n_layers_enc").get<int>();
  c.n_layers_dec = j.at("n_layers_dec").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.d_ff = j.at("d_ff").get<int>();
  c.dropout = j.at("dropout").get<double>();
  c.use_copy = j.at("use_copy").get<bool>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.max_len = j.at("max_len").get<int>();
  return c;
}

struct Checkpoint {
  ModelParams params;
  Vocab vocab;
  nlohmann::json meta;
};

inline std::string serialize_checkpoint(const ModelParams& p, const Vocab& vocab, const nlohmann::json& meta = nlohmann::json::object()) {
  static_assert(std::endian::native == std::endian::little, "checkpoint writer assumes a little-endian host");
  nlohmann::json m;
  m["format"] = "pasttense-checkpoint";
  m["version"] = 1;
  m["config"] = to_json(p.cfg);
  m["vocab"] = vocab.tokens();
  m["meta"] = meta;
  nlohmann::json index = nlohmann::json::array();
  std::size_t offset = 0;
  for (std::size_t i = 0; i < p.names().size(); ++i) {
    const auto& t = p.vars()[i].value();
    index.push_back({{"name", p.names()[i]}, {"shape", t.shape()}, {"offset", offset}, {"count", t.size()}});
    offset += t.size() * sizeof(float);
  }
  m["tensors"] = index;
  const std::string manifest = m.dump();
  std::string out = std::string(kCheckpointMagic) + "\n" + std::to_string(manifest.size()) + "\n" + manifest + "\n";
  const std::size_t data_start = out.size();
  out.resize(data_start + offset);
  std::size_t pos = data_start;
  for (auto& v : p.vars())
    for (double x : v.value().values()) {
      const float f = static_cast<float>(x);
      std::memcpy(out.data() + pos, &f, sizeof f);
      pos += sizeof f;
    }
  return out;
}

inline void save_checkpoint(const std::string& path, const ModelParams& p, const Vocab& vocab,
                            const nlohmann::json& meta = nlohmann::json::object()) {
  write_file(path, serialize_checkpoint(p, vocab, meta));
}

inline Checkpoint parse_checkpoint(const std::string& bytes, const std::string& origin) {
  auto fail = [&origin](const std::string& why) { return LoadError("checkpoint " + origin + ": " + why); };
  const std::string magic = std::string(kCheckpointMagic) + "\n";
  if (bytes.compare(0, magic.size(), magic) != 0) throw fail("bad magic");
  const std::size_t nl = bytes.find('\n', magic.size());
  if (nl == std::string::npos) throw fail("truncated header");
  std::size_t mlen = 0;
  try {
    mlen = std::stoull(bytes.substr(magic.size(), nl - magic.size()));
  } catch (const std::exception&) {
    throw fail("bad manifest length");
  }
  if (nl + 1 + mlen + 1 > bytes.size()) throw fail("truncated manifest");
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(bytes.substr(nl + 1, mlen));
  } catch (const std::exception& e) {
    throw fail(std::string("manifest is not JSON: ") + e.what());
  }
  const std::size_t data_start = nl + 1 + mlen + 1;
  Checkpoint ck;
  try {
    if (m.at("format") != "pasttense-checkpoint" || m.at("version") != 1) throw fail("unsupported format");
    const ModelConfig cfg = model_config_from_json(m.at("config"));
    cfg.validate();
    ck.vocab = Vocab(m.at("vocab").get<std::vector<std::string>>());
    ck.vocab.mark_labels(all_label_tokens());
    if (ck.vocab.size() != static_cast<std::size_t>(cfg.vocab_size)) throw fail("vocabulary size disagrees with config");
    ck.meta = m.value("meta", nlohmann::json::object());
    // Reference structure: names and shapes of a freshly initialised model.
    const ModelParams ref = init_params(cfg, Rng(0));
    const auto& idx = m.at("tensors");
    if (idx.size() != ref.names().size()) throw fail("tensor count disagrees with config");
    ck.params.cfg = cfg;
    ck.params.positions = sinusoidal_positions(cfg.max_len, cfg.d_model);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const std::string name = idx[i].at("name");
      const Shape shape = idx[i].at("shape").get<Shape>();
      const std::size_t off = idx[i].at("offset"), count = idx[i].at("count");
      if (name != ref.names()[i] || shape != ref.vars()[i].shape()) throw fail("tensor " + name + " does not match the config");
      if (count != shape_size(shape) || data_start + off + count * sizeof(float) > bytes.size()) throw fail("tensor " + name + " out of bounds");
      std::vector<double> vals(count);
      for (std::size_t k = 0; k < count; ++k) {
        float f;
        std::memcpy(&f, bytes.data() + data_start + off + k * sizeof f, sizeof f);
        vals[k] = static_cast<double>(f);
      }
      ck.params.add(name, Tensor(shape, std::move(vals)));
    }
  } catch (const LoadError&) {
    throw;
  } catch (const std::exception& e) {
    throw fail(e.what());
  }
  return ck;
}

inline Checkpoint load_checkpoint(const std::string& path) { return parse_checkpoint(read_file(path), path); }

}  // namespace pasttense

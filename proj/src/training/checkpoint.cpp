#include "stforge/training/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "stforge/dataio/binary_io.hpp"

namespace stforge {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr char kMagic[4] = {'S', 'T', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> read_optional(const nlohmann::json& j, const char* key) {
  const auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  return it->get<double>();
}

std::string shape_list(const Shape& s) { return shape_str(s); }

}  // namespace

json CheckpointMeta::to_json() const {
  return json{{"epoch", epoch},
              {"val_loss", optional_number(val_loss)},
              {"val_bleu", optional_number(val_bleu)},
              {"stage", stage},
              {"members", members}};
}

CheckpointMeta CheckpointMeta::from_json(const nlohmann::json& j) {
  CheckpointMeta m;
  m.epoch = j.value("epoch", 0);
  m.val_loss = read_optional(j, "val_loss");
  m.val_bleu = read_optional(j, "val_bleu");
  m.stage = j.value("stage", std::string());
  if (j.contains("members")) m.members = j.at("members").get<std::vector<std::string>>();
  return m;
}

Seq2Seq<float> Checkpoint::model() const {
  ParamMap<float> copy;
  for (const auto& [name, t] : params) copy[name] = t.clone(true);
  return Seq2Seq<float>(config, vocab.size(), std::move(copy));
}

Checkpoint make_checkpoint(const Seq2Seq<float>& model, const CharVocab& vocab, CheckpointMeta meta) {
  if (model.vocab_size() != vocab.size()) {
    throw CheckpointError("checkpoint: model has " + std::to_string(model.vocab_size()) +
                          " output symbols but the vocabulary has " + std::to_string(vocab.size()));
  }
  Checkpoint c{model.config(), vocab, std::move(meta), {}};
  for (const auto& [name, t] : model.params()) c.params[name] = t.clone(false);
  return c;
}

std::vector<unsigned char> encode_checkpoint(const Checkpoint& ckpt) {
  json symbols = json::array();
  for (char32_t ch : ckpt.vocab.symbols()) symbols.push_back(u32_to_utf8(std::u32string(1, ch)));
  json dir = json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : ckpt.params) {
    dir.push_back(json{{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += static_cast<std::uint64_t>(t.numel()) * sizeof(float);
  }
  const json header{{"format", "stforge-checkpoint"},
                    {"config", ckpt.config.to_json()},
                    {"vocab", json{{"size", ckpt.vocab.size()},
                                   {"fingerprint", ckpt.vocab.fingerprint()},
                                   {"symbols", symbols}}},
                    {"meta", ckpt.meta.to_json()},
                    {"params", dir}};
  const std::string text = header.dump();
  std::ostringstream out(std::ios::binary);
  out.write(kMagic, 4);
  io::put_u32(out, kVersion);
  io::put_u64(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, t] : ckpt.params) io::put_f32_block(out, t.data());
  const std::string bytes = out.str();
  return {bytes.begin(), bytes.end()};
}

void save_checkpoint(const fs::path& path, const Checkpoint& ckpt) {
  const auto bytes = encode_checkpoint(ckpt);
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("short write on checkpoint " + path.string());
  }
  fs::rename(tmp, path);
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  const std::string where = "checkpoint " + path.string();
  if (!in) throw CheckpointError("cannot open " + where);
  char magic[4];
  if (!in.read(magic, 4) || std::string(magic, 4) != std::string(kMagic, 4)) {
    throw CheckpointError(where + ": bad magic (not an STCK file)");
  }
  std::uint32_t version = 0;
  std::uint64_t header_len = 0;
  if (!io::get_u32(in, version) || !io::get_u64(in, header_len)) {
    throw CheckpointError(where + ": truncated header");
  }
  if (version != kVersion) {
    throw CheckpointError(where + ": unsupported version " + std::to_string(version));
  }
  const auto file_size = fs::file_size(path);
  if (header_len > file_size) throw CheckpointError(where + ": header length exceeds file size");
  std::string text(header_len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(header_len))) {
    throw CheckpointError(where + ": truncated header");
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(where + ": malformed header JSON (" + e.what() + ")");
  }

  Checkpoint ckpt;
  try {
    ckpt.config = ModelConfig::from_json(header.at("config"));
    std::u32string symbols;
    for (const auto& s : header.at("vocab").at("symbols")) {
      const auto cps = utf8_to_u32(s.get<std::string>());
      if (cps.size() != 1) throw CheckpointError(where + ": vocabulary entry is not a single character");
      symbols += cps;
    }
    ckpt.vocab = CharVocab(symbols);
    ckpt.meta = CheckpointMeta::from_json(header.at("meta"));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(where + ": incomplete header (" + e.what() + ")");
  }
  if (ckpt.vocab.fingerprint() != header.at("vocab").at("fingerprint").get<std::string>() ||
      ckpt.vocab.size() != header.at("vocab").at("size").get<int>()) {
    throw CheckpointError(where + ": vocabulary fingerprint does not match its symbol list");
  }

  const std::uint64_t payload_start = 16 + header_len;
  std::uint64_t expected_offset = 0;
  for (const auto& entry : header.at("params")) {
    const auto name = entry.at("name").get<std::string>();
    const auto shape = entry.at("shape").get<Shape>();
    if (entry.at("offset").get<std::uint64_t>() != expected_offset) {
      throw CheckpointError(where + ": parameter '" + name + "' has a non-contiguous offset");
    }
    std::vector<float> values(static_cast<std::size_t>(shape_numel(shape)));
    if (!io::get_f32_block(in, values)) {
      throw CheckpointError(where + ": payload truncated in parameter '" + name + "'");
    }
    expected_offset += values.size() * sizeof(float);
    ckpt.params[name] = Tensor<float>::from(shape, std::move(values));
  }
  if (payload_start + expected_offset != file_size) {
    throw CheckpointError(where + ": " + std::to_string(file_size - payload_start - expected_offset) +
                          " trailing bytes after the payload");
  }
  const auto layout = parameter_layout(ckpt.config, ckpt.vocab.size());
  if (layout.size() != ckpt.params.size()) {
    throw CheckpointError(where + ": holds " + std::to_string(ckpt.params.size()) + " tensors, config expects " +
                          std::to_string(layout.size()));
  }
  for (const auto& spec : layout) {
    const auto it = ckpt.params.find(spec.name);
    if (it == ckpt.params.end()) throw CheckpointError(where + ": missing tensor '" + spec.name + "'");
    if (it->second.shape() != spec.shape) {
      throw CheckpointError(where + ": tensor '" + spec.name + "' has shape " + shape_list(it->second.shape()) +
                            ", config expects " + shape_list(spec.shape));
    }
  }
  return ckpt;
}

void check_compatible(const Checkpoint& ckpt, const ModelConfig& config, const CharVocab& vocab) {
  if (ckpt.vocab.fingerprint() != vocab.fingerprint()) {
    throw CheckpointError("vocabulary fingerprint mismatch: checkpoint " + ckpt.vocab.fingerprint() + " vs " +
                          vocab.fingerprint());
  }
  const auto layout = parameter_layout(config, vocab.size());
  for (const auto& spec : layout) {
    const auto it = ckpt.params.find(spec.name);
    if (it == ckpt.params.end()) {
      throw CheckpointError("checkpoint lacks tensor '" + spec.name + "' required by the model config");
    }
    if (it->second.shape() != spec.shape) {
      throw CheckpointError("tensor '" + spec.name + "' has shape " + shape_list(it->second.shape()) +
                            " but the model config expects " + shape_list(spec.shape));
    }
  }
  if (layout.size() != ckpt.params.size()) {
    throw CheckpointError("checkpoint holds tensors the model config does not define");
  }
}

void check_same_layout(const Checkpoint& a, const Checkpoint& b) {
  if (a.vocab.fingerprint() != b.vocab.fingerprint()) {
    throw CheckpointError("vocabulary fingerprint mismatch: " + a.vocab.fingerprint() + " vs " +
                          b.vocab.fingerprint());
  }
  for (const auto& [name, t] : a.params) {
    const auto it = b.params.find(name);
    if (it == b.params.end()) throw CheckpointError("tensor '" + name + "' missing from one checkpoint");
    if (it->second.shape() != t.shape()) {
      throw CheckpointError("tensor '" + name + "' differs in shape: " + shape_list(t.shape()) + " vs " +
                            shape_list(it->second.shape()));
    }
  }
  for (const auto& [name, t] : b.params) {
    if (!a.params.count(name)) throw CheckpointError("tensor '" + name + "' missing from one checkpoint");
  }
}

}  // namespace stforge

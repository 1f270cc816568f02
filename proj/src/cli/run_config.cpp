#include "stforge/cli/run_config.hpp"

#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <set>

#include "stforge/util/json_fields.hpp"

namespace stforge::cli {

using json = nlohmann::ordered_json;
using util::ConfigError;
using util::read_field;
using util::require_known_keys;

namespace {

bool is_dataset(const std::string& name) { return name == "parallel" || name == "clean1" || name == "clean2"; }

bool safe_name(const std::string& name) {
  if (name.empty() || name.size() > 64) return false;
  for (char c : name) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-' || c == '_';
    if (!ok) return false;
  }
  return true;
}

json path_or_null(const std::optional<std::filesystem::path>& p) { return p ? json(p->string()) : json(nullptr); }

std::optional<std::filesystem::path> read_path(const nlohmann::json& j, const char* key,
                                               const std::filesystem::path& base) {
  const auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  if (!it->is_string()) throw ConfigError(std::string("data.") + key + ": expected a path string");
  return (base / it->get<std::string>()).lexically_normal();
}

}  // namespace

void RunConfig::validate() const {
  if (data.manifest.empty()) throw ConfigError("data.manifest: required");
  if (!cleaning.skip_alignment && !data.alignment) {
    throw ConfigError("data.alignment: required unless cleaning.skip_alignment is set");
  }
  if (!data.dev_manifest && data.dev_size == 0) throw ConfigError("data: set dev_size or dev_manifest");
  if (!(cleaning.bin_width > 0.0) || cleaning.min_bin_count == 0) {
    throw ConfigError("cleaning: need bin_width > 0 and min_bin_count >= 1");
  }
  model.validate();
  optimizer.validate();
  loss.validate();
  training.validate();
  decode.validate();
  average.validate();
  if (stages.empty()) throw ConfigError("training.stages: at least one stage");
  std::set<std::string> names;
  for (const auto& s : stages) {
    if (!safe_name(s.name)) throw ConfigError("training.stages: bad stage name '" + s.name + "'");
    if (!names.insert(s.name).second) throw ConfigError("training.stages: duplicate stage '" + s.name + "'");
    if (!is_dataset(s.data)) {
      throw ConfigError("training.stages." + s.name + ".data: expected parallel, clean1 or clean2, got '" + s.data +
                        "'");
    }
    if (s.max_epochs && *s.max_epochs < 0) throw ConfigError("training.stages." + s.name + ".max_epochs: negative");
  }
  for (const auto& e : ensemble) {
    if (!names.count(e)) throw ConfigError("training.ensemble: unknown stage '" + e + "'");
  }
}

json RunConfig::to_json() const {
  json j;
  j["data"] = json{{"manifest", data.manifest.string()},
                   {"alignment", path_or_null(data.alignment)},
                   {"dev_manifest", path_or_null(data.dev_manifest)},
                   {"dev_size", data.dev_size},
                   {"test_manifest", path_or_null(data.test_manifest)}};
  j["cleaning"] = json{{"bin_width", cleaning.bin_width},
                       {"min_bin_count", cleaning.min_bin_count},
                       {"skip_alignment", cleaning.skip_alignment}};
  j["model"] = model.to_json();
  j["optimizer"] = optimizer.to_json();
  j["loss"] = loss.to_json();
  auto training_json = training.to_json();
  json stage_list = json::array();
  for (const auto& s : stages) {
    stage_list.push_back(json{{"name", s.name},
                              {"data", s.data},
                              {"mode", to_string(s.mode)},
                              {"max_epochs", s.max_epochs ? json(*s.max_epochs) : json(nullptr)}});
  }
  training_json["stages"] = stage_list;
  training_json["ensemble"] = ensemble;
  j["training"] = training_json;
  auto decode_json = decode.to_json();
  decode_json["average"] = average.to_json();
  j["decode"] = decode_json;
  return j;
}

RunConfig RunConfig::from_json(const nlohmann::json& j, const std::filesystem::path& base) {
  require_known_keys(j, {"data", "cleaning", "model", "optimizer", "loss", "training", "decode"}, "config");
  RunConfig c;
  auto section = [&](const char* name) { return j.contains(name) ? j.at(name) : nlohmann::json::object(); };

  const auto data = section("data");
  require_known_keys(data, {"manifest", "alignment", "dev_manifest", "dev_size", "test_manifest"}, "data");
  if (auto m = read_path(data, "manifest", base)) c.data.manifest = *m;
  c.data.alignment = read_path(data, "alignment", base);
  c.data.dev_manifest = read_path(data, "dev_manifest", base);
  c.data.test_manifest = read_path(data, "test_manifest", base);
  read_field(data, "dev_size", c.data.dev_size, "data");

  const auto clean = section("cleaning");
  require_known_keys(clean, {"bin_width", "min_bin_count", "skip_alignment"}, "cleaning");
  read_field(clean, "bin_width", c.cleaning.bin_width, "cleaning");
  read_field(clean, "min_bin_count", c.cleaning.min_bin_count, "cleaning");
  read_field(clean, "skip_alignment", c.cleaning.skip_alignment, "cleaning");

  c.model = ModelConfig::from_json(section("model"));
  c.optimizer = OptimizerConfig::from_json(section("optimizer"));
  c.loss = LossConfig::from_json(section("loss"));

  auto training = section("training");
  if (!training.is_object()) throw ConfigError("training: expected a JSON object");
  if (training.contains("stages")) {
    const auto& list = training.at("stages");
    if (!list.is_array()) throw ConfigError("training.stages: expected an array");
    c.stages.clear();
    for (const auto& s : list) {
      require_known_keys(s, {"name", "data", "mode", "max_epochs"}, "training.stages");
      StageSpec spec;
      read_field(s, "name", spec.name, "training.stages");
      read_field(s, "data", spec.data, "training.stages");
      if (s.contains("mode")) {
        std::string mode;
        read_field(s, "mode", mode, "training.stages");
        try {
          spec.mode = finetune_mode_from_string(mode);
        } catch (const std::exception& e) {
          throw ConfigError(std::string("training.stages.mode: ") + e.what());
        }
      }
      if (s.contains("max_epochs") && !s.at("max_epochs").is_null()) {
        int epochs = 0;
        read_field(s, "max_epochs", epochs, "training.stages");
        spec.max_epochs = epochs;
      }
      c.stages.push_back(std::move(spec));
    }
    training.erase("stages");
  }
  if (training.contains("ensemble")) {
    read_field(training, "ensemble", c.ensemble, "training");
    training.erase("ensemble");
  }
  c.training = TrainConfig::from_json(training);

  auto decode = section("decode");
  if (!decode.is_object()) throw ConfigError("decode: expected a JSON object");
  if (decode.contains("average")) {
    c.average = AverageConfig::from_json(decode.at("average"));
    decode.erase("average");
  }
  c.decode = DecodeConfig::from_json(decode);
  c.validate();
  return c;
}

void apply_seed_override(RunConfig& cfg) {
  const char* env = std::getenv(kSeedEnv);
  if (!env || !*env) return;
  char* end = nullptr;
  errno = 0;
  const unsigned long long seed = std::strtoull(env, &end, 10);
  if (errno != 0 || *end != '\0' || env[0] == '-') {
    throw ConfigError(std::string(kSeedEnv) + ": not an unsigned integer: '" + env + "'");
  }
  cfg.training.seed = seed;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config: " + path.string() + ": " + e.what());
  }
  auto cfg = RunConfig::from_json(j, std::filesystem::absolute(path).parent_path());
  apply_seed_override(cfg);
  return cfg;
}

}  // namespace stforge::cli

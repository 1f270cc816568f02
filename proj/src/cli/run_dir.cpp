#include "stforge/cli/run_dir.hpp"

#include <unistd.h>

#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>

#include "stforge/dataio/binary_io.hpp"

namespace stforge::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

std::string file_hash(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CliError("missing-file", "cannot read " + path.string());
  const std::vector<unsigned char> bytes{std::istreambuf_iterator<char>(in), {}};
  return io::fnv1a_hex(bytes);
}

void write_text_atomic(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << text;
    if (!out) throw CliError("io", "cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

void write_json_atomic(const fs::path& path, const json& j) { write_text_atomic(path, j.dump(2) + "\n"); }

RunDir::RunDir(const fs::path& root, bool force) : root_(fs::absolute(root).lexically_normal()), force_(force) {
  for (const auto& d : {root_, manifests(), checkpoints(), logs(), reports()}) fs::create_directories(d);
  lock_ = root_ / ".lock";
  std::FILE* f = std::fopen(lock_.c_str(), "wx");
  if (!f) {
    std::string owner;
    std::ifstream(lock_) >> owner;
    lock_.clear();
    throw CliError("locked", "run directory " + root_.string() + " is locked by process " +
                                 (owner.empty() ? "?" : owner) + " (remove .lock if stale)");
  }
  std::fprintf(f, "%ld\n", static_cast<long>(::getpid()));
  std::fclose(f);
}

RunDir::~RunDir() {
  if (!lock_.empty()) {
    std::error_code ec;
    fs::remove(lock_, ec);
  }
}

const RunConfig& RunDir::bind_config(const fs::path& config_file) {
  const bool stored = fs::exists(config_path());
  if (config_file.empty() && !stored) {
    throw CliError("config", "no config.json in " + root_.string() + "; pass --config");
  }
  RunConfig cfg = load_run_config(config_file.empty() ? config_path() : config_file);
  const auto effective = cfg.to_json();
  bool write = !stored;
  if (stored) {
    std::ifstream in(config_path());
    const auto previous = json::parse(in);
    if (previous != effective) {
      if (!force_) {
        throw CliError("config-mismatch", "effective config differs from " + config_path().string() +
                                              "; use a new run directory or --force");
      }
      write = true;
    }
  }
  if (write) write_json_atomic(config_path(), effective);
  config_ = std::move(cfg);
  have_config_ = true;
  return config_;
}

const RunConfig& RunDir::config() const {
  if (!have_config_) throw CliError("config", "run config not loaded");
  return config_;
}

void RunDir::claim_outputs(const std::vector<fs::path>& paths) const {
  if (force_) return;
  for (const auto& p : paths) {
    if (fs::exists(p)) {
      throw CliError("exists", display(p) + " already exists; pass --force to overwrite");
    }
  }
}

void RunDir::clear_outputs(const std::vector<fs::path>& paths) const {
  for (const auto& p : paths) {
    std::error_code ec;
    fs::remove_all(p, ec);
  }
}

void RunDir::record_inputs(const std::vector<fs::path>& files) const {
  const auto path = manifests() / "inputs.json";
  json inputs = json::object();
  if (fs::exists(path)) {
    std::ifstream in(path);
    inputs = json::parse(in);
  }
  for (const auto& f : files) inputs[display(f)] = "fnv1a64:" + file_hash(f);
  // sorted keys keep the file independent of recording order
  json sorted = nlohmann::json(inputs);
  write_json_atomic(path, sorted);
}

std::string RunDir::display(const fs::path& p) const {
  const auto abs = fs::absolute(p).lexically_normal();
  const auto rel = abs.lexically_relative(root_);
  if (!rel.empty() && *rel.begin() != "..") return rel.generic_string();
  return abs.generic_string();
}

}  // namespace stforge::cli

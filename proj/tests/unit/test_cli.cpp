#include "doctest.h"

#include <cstdlib>
#include <fstream>
#include <iterator>
#include <sstream>

#include "stforge/cli/commands.hpp"
#include "stforge/cleaning/planted.hpp"
#include "support/temp_dir.hpp"

using namespace stforge;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "stforge");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(slurp(p)); }

void write_json(const fs::path& p, const nlohmann::json& j) { std::ofstream(p) << j.dump(2); }

/// Every regular file under `sub`, relative path -> bytes.
std::map<std::string, std::string> tree(const fs::path& root, const std::string& sub) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root / sub)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).generic_string()] = slurp(e.path());
  }
  return out;
}

std::set<std::string> manifest_ids(const fs::path& p) {
  std::set<std::string> ids;
  for (const auto& inst : read_manifest(p)) ids.insert(inst.utt_id);
  return ids;
}

void expect_single_line_error(const Outcome& r, const std::string& kind) {
  CHECK(r.code != 0);
  CHECK(std::count(r.err.begin(), r.err.end(), '\n') == 1);
  const auto j = nlohmann::json::parse(r.err);
  CHECK(j["error"] == kind);
}

/// Toy corpus plus a config with a three-stage P -> C1 -> C2 cascade.
fs::path cascade_config(const test::TempDir& dir) {
  const auto data = dir / "data";
  REQUIRE(invoke({"synth", "--out", data.string(), "--count", "40", "--seed", "3"}).code == 0);
  auto cfg = read_json(data / "config.json");
  cfg["model"]["dense1"] = 12;
  cfg["model"]["dense2"] = 8;
  cfg["model"]["enc_hidden"] = 8;
  cfg["model"]["dec_hidden"] = 16;
  cfg["model"]["deep_output_dim"] = 16;
  cfg["model"]["char_emb_dim"] = 8;
  cfg["training"]["max_epochs"] = 2;
  cfg["training"]["stages"] = nlohmann::json::array({
      {{"name", "P"}, {"data", "parallel"}},
      {{"name", "C1"}, {"data", "clean1"}, {"max_epochs", 1}},
      {{"name", "C2"}, {"data", "clean2"}, {"mode", "nag-anneal"}, {"max_epochs", 1}},
  });
  cfg["training"]["ensemble"] = {"C1", "C2"};
  write_json(data / "cascade.json", cfg);
  return data / "cascade.json";
}

}  // namespace

TEST_CASE("clean-align and clean-ratio on the planted corpus") {
  test::TempDir dir;
  const auto data = dir / "planted";
  REQUIRE(invoke({"synth", "--out", data.string(), "--kind", "planted"}).code == 0);
  const auto run = (dir / "run").string();
  const auto cfg = (data / "config.json").string();
  REQUIRE(invoke({"clean-align", "--run", run, "--config", cfg}).code == 0);
  const auto r = invoke({"clean-ratio", "--run", run});
  REQUIRE(r.code == 0);

  const auto planted = cleaning::make_planted_corpus();
  std::set<std::string> expected;
  for (const auto& inst : planted.corpus) {
    if (!planted.alignment_failures.count(inst.utt_id) && !planted.ratio_outliers.count(inst.utt_id)) {
      expected.insert(inst.utt_id);
    }
  }
  CHECK(manifest_ids(dir / "run/manifests/clean2.tsv") == expected);
  const auto align = read_json(dir / "run/reports/clean_align.json");
  const auto ratio = read_json(dir / "run/reports/clean_ratio.json");
  CHECK(align["removed_ids"].get<std::set<std::string>>() == planted.alignment_failures);
  CHECK(ratio["removed_ids"].get<std::set<std::string>>() == planted.ratio_outliers);
  for (const auto& rep : {align, ratio}) {
    CHECK(rep["input"].get<int>() == rep["removed"].get<int>() + rep["output"].get<int>());
  }
  CHECK(fs::exists(dir / "run/config.json"));
  const auto inputs = read_json(dir / "run/manifests/inputs.json");
  CHECK(inputs.size() == 62);  // manifest, alignment report, 60 feature files
}

TEST_CASE("outputs are never overwritten without force") {
  test::TempDir dir;
  const auto data = dir / "data";
  REQUIRE(invoke({"synth", "--out", data.string(), "--count", "16"}).code == 0);
  expect_single_line_error(invoke({"synth", "--out", data.string()}), "exists");
  const auto run = (dir / "run").string();
  const auto cfg = (data / "config.json").string();
  REQUIRE(invoke({"clean-align", "--run", run, "--config", cfg}).code == 0);
  const auto again = invoke({"clean-align", "--run", run});
  expect_single_line_error(again, "exists");
  CHECK(again.err.find("manifests/parallel.tsv") != std::string::npos);
  CHECK(invoke({"clean-align", "--run", run, "--force"}).code == 0);
  CHECK_FALSE(fs::exists(dir / "run/.lock"));
}

TEST_CASE("config errors are named and single-line") {
  test::TempDir dir;
  const auto data = dir / "data";
  REQUIRE(invoke({"synth", "--out", data.string(), "--count", "16"}).code == 0);
  auto cfg = read_json(data / "config.json");
  cfg["optimizer"] = {{"learning_rate", 0.1}};
  write_json(data / "bad.json", cfg);
  const auto r = invoke({"clean-align", "--run", (dir / "run").string(), "--config", (data / "bad.json").string()});
  expect_single_line_error(r, "config");
  CHECK(r.err.find("learning_rate") != std::string::npos);

  expect_single_line_error(invoke({"clean-align", "--run", (dir / "empty").string()}), "config");
  expect_single_line_error(invoke({"train", "--bogus"}), "usage");
  expect_single_line_error(invoke({"split", "--run", (dir / "run2").string(), "--config", (data / "config.json").string()}),
                           "missing-file");

  fs::create_directories(dir / "locked");
  std::ofstream(dir / "locked/.lock") << "12345\n";
  expect_single_line_error(invoke({"clean-align", "--run", (dir / "locked").string(), "--config",
                                (data / "config.json").string()}),
                           "locked");
  CHECK(fs::exists(dir / "locked/.lock"));
}

TEST_CASE("seed override from the environment") {
  test::TempDir dir;
  const auto data = dir / "data";
  REQUIRE(invoke({"synth", "--out", data.string(), "--count", "16"}).code == 0);
  const auto cfg = (data / "config.json").string();
  ::setenv(cli::kSeedEnv, "77", 1);
  const auto r = invoke({"clean-align", "--run", (dir / "run").string(), "--config", cfg});
  ::unsetenv(cli::kSeedEnv);
  REQUIRE(r.code == 0);
  CHECK(read_json(dir / "run/config.json")["training"]["seed"] == 77);
  // the stored config no longer matches the file without the override
  expect_single_line_error(invoke({"clean-ratio", "--run", (dir / "run").string(), "--config", cfg}), "config-mismatch");
  ::setenv(cli::kSeedEnv, "x1", 1);
  expect_single_line_error(invoke({"clean-align", "--run", (dir / "run3").string(), "--config", cfg}), "config");
  ::unsetenv(cli::kSeedEnv);
}

TEST_CASE("end-to-end smoke through the subcommands") {
  test::TempDir dir;
  const auto data = dir / "data";
  REQUIRE(invoke({"synth", "--out", data.string(), "--count", "40"}).code == 0);
  const auto run = (dir / "run").string();
  REQUIRE(invoke({"clean-align", "--run", run, "--config", (data / "config.json").string()}).code == 0);
  REQUIRE(invoke({"clean-ratio", "--run", run}).code == 0);
  REQUIRE(invoke({"split", "--run", run}).code == 0);
  REQUIRE(invoke({"vocab", "--run", run}).code == 0);
  const auto tr = invoke({"train", "--run", run, "--stage", "P", "--data", "clean2", "--epochs", "3"});
  REQUIRE_MESSAGE(tr.code == 0, tr.err);
  const auto log = slurp(dir / "run/logs/P.jsonl");
  CHECK(std::count(log.begin(), log.end(), '\n') == 4);
  const auto ckpt = (dir / "run/checkpoints/P/epoch_003.stck").string();
  REQUIRE(invoke({"translate", "--run", run, "--ckpt", ckpt}).code == 0);
  const auto sc = invoke({"score", "--run", run, "--hyp", (dir / "run/reports/translations_dev.txt").string()});
  REQUIRE(sc.code == 0);
  const auto score = read_json(dir / "run/reports/score_dev.json");
  for (const char* key : {"bleu", "precisions", "brevity_penalty", "hyp_len", "ref_len"}) CHECK(score.contains(key));
  CHECK(score["ref_len"].get<int>() > 0);

  const auto ft = invoke({"finetune", "--run", run, "--stage", "F", "--from", ckpt, "--mode", "adam-anneal", "--epochs",
                       "1", "--data", "clean1"});
  REQUIRE_MESSAGE(ft.code == 0, ft.err);
  CHECK(read_json(dir / "run/reports/train_F.json")["mode"] == "adam-anneal");

  // duplicated checkpoint averages to its own parameters
  const auto avg = invoke({"avg-ckpt", "--run", run, "--stage", "P", "--ckpt", ckpt, "--ckpt", ckpt, "--out",
                        (dir / "run/checkpoints/dup.stck").string()});
  REQUIRE_MESSAGE(avg.code == 0, avg.err);
  const auto a = load_checkpoint(ckpt);
  const auto b = load_checkpoint(dir / "run/checkpoints/dup.stck");
  for (const auto& [name, t] : a.params) {
    const auto& u = b.params.at(name);
    CHECK(std::equal(t.data().begin(), t.data().end(), u.data().begin()));
  }
  CHECK(b.meta.members.size() == 2);

  // a checkpoint from another vocabulary cannot join the ensemble
  auto foreign = a;
  foreign.vocab = CharVocab(U"xyz");
  foreign.params = Seq2Seq<float>(a.config, foreign.vocab.size(), 1).params();
  save_checkpoint(dir / "foreign.stck", foreign);
  expect_single_line_error(invoke({"translate", "--run", run, "--ckpt", ckpt, "--ckpt", (dir / "foreign.stck").string(),
                                "--out", (dir / "x.txt").string()}),
                           "ensemble");
}

TEST_CASE("cascade pipeline is reproducible") {
  test::TempDir dir;
  const auto cfg = cascade_config(dir).string();
  const auto first = invoke({"pipeline", "--run", (dir / "a").string(), "--config", cfg});
  REQUIRE_MESSAGE(first.code == 0, first.err);
  REQUIRE(invoke({"pipeline", "--run", (dir / "b").string(), "--config", cfg}).code == 0);
  for (const char* stage : {"P", "C1", "C2"}) {
    CHECK(fs::exists(dir / "a/checkpoints" / stage / "epoch_001.stck"));
    CHECK(fs::exists(dir / "a/checkpoints" / stage / "average.stck"));
  }
  CHECK(fs::exists(dir / "a/checkpoints/P/epoch_002.stck"));
  CHECK_FALSE(fs::exists(dir / "a/checkpoints/C1/epoch_002.stck"));
  CHECK(read_json(dir / "a/reports/ensemble.json")["members"].size() == 2);
  CHECK(read_json(dir / "a/reports/train_C2.json")["mode"] == "nag-anneal");
  CHECK(tree(dir / "a", "checkpoints") == tree(dir / "b", "checkpoints"));
  CHECK(tree(dir / "a", "reports") == tree(dir / "b", "reports"));
  CHECK(slurp(dir / "a/config.json") == slurp(dir / "b/config.json"));
  expect_single_line_error(invoke({"pipeline", "--run", (dir / "a").string()}), "exists");
}

TEST_CASE("a one-stage pipeline equals plain training") {
  test::TempDir dir;
  const auto data = dir / "data";
  REQUIRE(invoke({"synth", "--out", data.string(), "--count", "24"}).code == 0);
  auto cfg = read_json(data / "config.json");
  cfg["training"]["max_epochs"] = 2;
  cfg["model"]["dense1"] = 12;
  cfg["model"]["enc_hidden"] = 8;
  cfg["model"]["dec_hidden"] = 16;
  cfg["model"]["deep_output_dim"] = 16;
  write_json(data / "one.json", cfg);
  const auto c = (data / "one.json").string();
  REQUIRE(invoke({"pipeline", "--run", (dir / "pipe").string(), "--config", c}).code == 0);
  const auto run = (dir / "steps").string();
  for (const auto& args : std::vector<std::vector<std::string>>{{"clean-align", "--run", run, "--config", c},
                                                                {"clean-ratio", "--run", run},
                                                                {"split", "--run", run},
                                                                {"vocab", "--run", run},
                                                                {"train", "--run", run}}) {
    REQUIRE(invoke(args).code == 0);
  }
  CHECK(slurp(dir / "pipe/checkpoints/P/epoch_002.stck") == slurp(dir / "steps/checkpoints/P/epoch_002.stck"));
}

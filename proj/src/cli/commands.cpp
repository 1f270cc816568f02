#include "stforge/cli/commands.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "stforge/cleaning/planted.hpp"
#include "stforge/dataio/synthetic.hpp"
#include "stforge/inference/average.hpp"
#include "stforge/inference/decode.hpp"
#include "stforge/inference/evaluate.hpp"
#include "stforge/training/checkpoint.hpp"
#include "stforge/util/json_fields.hpp"

namespace stforge::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

std::vector<fs::path> feature_files(std::span<const CorpusInstance> corpus) {
  std::vector<fs::path> out;
  for (const auto& inst : corpus) out.push_back(inst.feature_path);
  return out;
}

std::set<std::string> ids_of(std::span<const CorpusInstance> corpus) {
  std::set<std::string> out;
  for (const auto& inst : corpus) out.insert(inst.utt_id);
  return out;
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CliError("missing-file", "cannot read " + path.string());
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  return lines;
}

std::vector<fs::path> epoch_checkpoints(const fs::path& dir) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto name = entry.path().filename().string();
    if (name.rfind("epoch_", 0) == 0 && entry.path().extension() == ".stck") out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

const StageSpec* find_stage(const RunConfig& cfg, const std::string& name) {
  for (const auto& s : cfg.stages) {
    if (s.name == name) return &s;
  }
  return nullptr;
}

}  // namespace

std::vector<CorpusInstance> read_run_manifest(const RunDir& run, const std::string& name) {
  const auto path = run.manifest(name);
  if (!fs::exists(path)) {
    throw CliError("missing-file", run.display(path) + " not found; run the step that produces it first");
  }
  return read_manifest(path);
}

std::vector<CorpusInstance> stage_corpus(const RunDir& run, const std::string& data) {
  auto corpus = read_run_manifest(run, data);
  const auto dev = ids_of(read_run_manifest(run, "dev"));
  std::erase_if(corpus, [&](const CorpusInstance& inst) { return dev.count(inst.utt_id) > 0; });
  if (corpus.empty()) throw CliError("data", "stage data '" + data + "' is empty after removing dev");
  return corpus;
}

void clean_align(RunDir& run) {
  const auto& cfg = run.config();
  const auto parallel_path = run.manifest("parallel");
  const auto clean1_path = run.manifest("clean1");
  const auto report_path = run.reports() / "clean_align.json";
  run.claim_outputs({parallel_path, clean1_path, report_path});
  auto corpus = read_manifest(cfg.data.manifest);
  std::vector<fs::path> inputs{cfg.data.manifest};
  const auto features = feature_files(corpus);
  inputs.insert(inputs.end(), features.begin(), features.end());

  std::vector<CorpusInstance> clean1;
  cleaning::CleaningReport report;
  if (cfg.cleaning.skip_alignment) {
    clean1 = corpus;
    report.filter = "alignment";
    report.params = json{{"skipped", true}};
    report.input = report.output = corpus.size();
  } else {
    const auto alignment = cleaning::read_alignment_report(*cfg.data.alignment);
    inputs.push_back(*cfg.data.alignment);
    auto result = cleaning::alignment_filter(corpus, alignment);
    clean1 = std::move(result.kept);
    report = std::move(result.report);
  }
  write_manifest(parallel_path, corpus);
  write_manifest(clean1_path, clean1);
  write_json_atomic(report_path, report.to_json());
  run.record_inputs(inputs);
}

void clean_ratio(RunDir& run) {
  const auto& cfg = run.config();
  const auto clean2_path = run.manifest("clean2");
  const auto report_path = run.reports() / "clean_ratio.json";
  run.claim_outputs({clean2_path, report_path});
  const auto clean1 = read_run_manifest(run, "clean1");
  auto result = cleaning::ratio_filter(clean1, cfg.cleaning.bin_width, cfg.cleaning.min_bin_count);
  result.report.params["histogram"] = result.histogram.to_json();
  write_manifest(clean2_path, result.kept);
  write_json_atomic(report_path, result.report.to_json());
}

void split(RunDir& run, const std::string& input) {
  const auto& cfg = run.config();
  const auto train_path = run.manifest("train");
  const auto dev_path = run.manifest("dev");
  const auto report_path = run.reports() / "split.json";
  run.claim_outputs({train_path, dev_path, report_path});
  const auto corpus = read_run_manifest(run, input);
  cleaning::DevSplit parts;
  if (cfg.data.dev_manifest) {
    parts.dev = read_manifest(*cfg.data.dev_manifest);
    const auto dev = ids_of(parts.dev);
    for (const auto& inst : corpus) {
      if (!dev.count(inst.utt_id)) parts.train.push_back(inst);
    }
    auto inputs = feature_files(parts.dev);
    inputs.push_back(*cfg.data.dev_manifest);
    run.record_inputs(inputs);
  } else {
    parts = cleaning::split_dev(corpus, cfg.data.dev_size, cfg.training.seed);
  }
  if (parts.train.empty() || parts.dev.empty()) throw CliError("data", "split leaves an empty train or dev set");
  write_manifest(train_path, parts.train);
  write_manifest(dev_path, parts.dev);
  write_json_atomic(report_path, json{{"input", input},
                                      {"seed", cfg.training.seed},
                                      {"train", parts.train.size()},
                                      {"dev", parts.dev.size()},
                                      {"dev_source", cfg.data.dev_manifest ? "dev_manifest" : "sampled"}});
}

CharVocab make_vocab(RunDir& run, const std::vector<std::string>& inputs) {
  const auto report_path = run.reports() / "vocab.json";
  run.claim_outputs({run.vocab_path(), report_path});
  std::set<std::string> dev;
  if (fs::exists(run.manifest("dev"))) dev = ids_of(read_run_manifest(run, "dev"));
  std::vector<CorpusInstance> all;
  for (const auto& name : inputs) {
    auto part = read_run_manifest(run, name);
    std::erase_if(part, [&](const CorpusInstance& inst) { return dev.count(inst.utt_id) > 0; });
    all.insert(all.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  const auto vocab = build_vocab(all);
  vocab.save(run.vocab_path());
  write_json_atomic(report_path, json{{"inputs", inputs},
                                      {"size", vocab.size()},
                                      {"fingerprint", vocab.fingerprint()},
                                      {"symbols", u32_to_utf8(vocab.symbols())}});
  return vocab;
}

TrainResult train_stage(RunDir& run, const StageSpec& stage, const fs::path& from) {
  const auto& cfg = run.config();
  const auto dir = run.stage_dir(stage.name);
  const auto log_path = run.logs() / (stage.name + ".jsonl");
  const auto report_path = run.reports() / ("train_" + stage.name + ".json");
  run.claim_outputs({dir, log_path, report_path});
  run.clear_outputs({dir});
  if (!fs::exists(run.vocab_path())) throw CliError("missing-file", "manifests/vocab.txt not found; run vocab first");
  const auto vocab = CharVocab::load(run.vocab_path());
  const auto train_set = stage_corpus(run, stage.data);
  const auto dev_set = read_run_manifest(run, "dev");

  TrainConfig tcfg = cfg.training;
  tcfg.stage = stage.name;
  if (stage.max_epochs) tcfg.max_epochs = *stage.max_epochs;
  TrainIO io;
  io.checkpoint_dir = dir;
  io.log_path = log_path;

  TrainResult result;
  if (from.empty()) {
    Seq2Seq<float> model(cfg.model, vocab.size(), cfg.training.seed);
    result = train(model, vocab, train_set, dev_set, cfg.optimizer, cfg.loss, tcfg, io);
  } else {
    const auto ckpt = load_checkpoint(from);
    run.record_inputs({from});
    result = finetune(ckpt, vocab, train_set, dev_set, stage.mode, cfg.optimizer, cfg.loss, tcfg, io).result;
  }

  json epochs = json::array();
  for (const auto& rec : result.epochs) {
    auto j = rec.to_json();
    j.erase("wall_time");
    j["improved"] = rec.improved;
    epochs.push_back(j);
  }
  json ckpts = json::array();
  for (const auto& p : result.checkpoints) ckpts.push_back(run.display(p));
  write_json_atomic(report_path, json{{"stage", stage.name},
                                      {"data", stage.data},
                                      {"init", from.empty() ? json(nullptr) : json(run.display(from))},
                                      {"mode", from.empty() ? json(nullptr) : json(to_string(stage.mode))},
                                      {"train_size", train_set.size()},
                                      {"dev_size", dev_set.size()},
                                      {"epochs", epochs},
                                      {"best_epoch", result.best_epoch},
                                      {"best_dev_loss", result.best_dev_loss},
                                      {"stop_reason", result.stop_reason},
                                      {"checkpoints", ckpts}});
  return result;
}

fs::path average_stage(RunDir& run, const std::string& stage, std::vector<fs::path> inputs, fs::path out) {
  const auto& cfg = run.config();
  if (inputs.empty()) inputs = epoch_checkpoints(run.stage_dir(stage));
  if (inputs.empty()) throw CliError("missing-file", "no checkpoints for stage '" + stage + "'");
  if (out.empty()) out = run.stage_dir(stage) / "average.stck";
  const auto report_path = run.reports() / ("avg_" + stage + ".json");
  run.claim_outputs({out, report_path});

  const std::size_t start = inputs.size() > cfg.average.window ? inputs.size() - cfg.average.window : 0;
  const auto dev_set = read_run_manifest(run, "dev");
  std::vector<Checkpoint> series;
  std::vector<double> bleus;
  std::vector<std::string> labels;
  json candidates = json::array();
  for (std::size_t i = start; i < inputs.size(); ++i) {
    series.push_back(load_checkpoint(inputs[i]));
    const auto eval = evaluate_checkpoint(series.back(), dev_set, cfg.decode, cfg.loss);
    bleus.push_back(eval.dev_bleu);
    labels.push_back(run.display(inputs[i]));
    candidates.push_back(json{{"checkpoint", labels.back()}, {"dev_bleu", eval.dev_bleu}, {"dev_loss", eval.dev_loss}});
  }
  const auto selected = select_for_average(bleus, cfg.average);
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    candidates[k]["selected"] = std::find(selected.begin(), selected.end(), k) != selected.end();
  }
  auto avg = average_checkpoints(series, bleus, cfg.average, labels);
  avg.meta.stage = stage;
  save_checkpoint(out, avg);
  write_json_atomic(report_path, json{{"stage", stage},
                                      {"window", cfg.average.window},
                                      {"margin", cfg.average.margin},
                                      {"candidates", candidates},
                                      {"members", avg.meta.members},
                                      {"output", run.display(out)}});
  return out;
}

fs::path translate_corpus(RunDir& run, const std::vector<fs::path>& checkpoints,
                          const std::vector<CorpusInstance>& corpus, const fs::path& out) {
  run.claim_outputs({out});
  if (checkpoints.empty()) throw CliError("usage", "translate: no checkpoints given");
  std::vector<Checkpoint> members;
  for (const auto& p : checkpoints) members.push_back(load_checkpoint(p));
  const auto ensemble = Ensemble::from_checkpoints(members);
  std::string text;
  for (const auto& line : translate(ensemble, corpus, run.config().decode)) text += line + "\n";
  write_text_atomic(out, text);
  return out;
}

BleuScore score_file(RunDir& run, const fs::path& hypotheses, const std::vector<CorpusInstance>& refs,
                     const fs::path& out) {
  run.claim_outputs({out});
  const auto hyps = read_lines(hypotheses);
  std::vector<std::string> ref_text;
  for (const auto& inst : refs) ref_text.push_back(inst.translation);
  const auto score = corpus_bleu(hyps, ref_text);
  write_json_atomic(out, score.to_json());
  return score;
}

void pipeline(RunDir& run) {
  const auto& cfg = run.config();
  auto step = [](const std::string& name, auto&& fn) {
    try {
      fn();
    } catch (const CliError& e) {
      throw CliError(e.kind(), "stage " + name + ": " + e.what());
    } catch (const std::exception& e) {
      throw CliError("stage-failed", "stage " + name + ": " + e.what());
    }
  };
  step("clean-align", [&] { clean_align(run); });
  step("clean-ratio", [&] { clean_ratio(run); });
  step("split", [&] { split(run, "clean2"); });
  step("vocab", [&] {
    std::set<std::string> names{"train"};
    for (const auto& s : cfg.stages) names.insert(s.data);
    make_vocab(run, std::vector<std::string>(names.begin(), names.end()));
  });
  std::map<std::string, fs::path> averages;
  fs::path previous;
  for (const auto& stage : cfg.stages) {
    step(stage.name, [&] {
      train_stage(run, stage, previous);
      previous = average_stage(run, stage.name, {}, {});
      averages[stage.name] = previous;
    });
  }
  std::vector<fs::path> final_models;
  if (cfg.ensemble.empty()) {
    final_models.push_back(previous);
  } else {
    json members = json::array();
    for (const auto& name : cfg.ensemble) {
      final_models.push_back(averages.at(name));
      members.push_back(run.display(averages.at(name)));
    }
    write_json_atomic(run.reports() / "ensemble.json", json{{"members", members}});
  }
  step("translate", [&] {
    const auto dev = read_run_manifest(run, "dev");
    translate_corpus(run, final_models, dev, run.reports() / "translations_dev.txt");
    score_file(run, run.reports() / "translations_dev.txt", dev, run.reports() / "score_dev.json");
    if (cfg.data.test_manifest) {
      const auto test = read_manifest(*cfg.data.test_manifest);
      auto inputs = feature_files(test);
      inputs.push_back(*cfg.data.test_manifest);
      run.record_inputs(inputs);
      translate_corpus(run, final_models, test, run.reports() / "translations_test.txt");
      score_file(run, run.reports() / "translations_test.txt", test, run.reports() / "score_test.json");
    }
  });
}

void synthesize(const fs::path& dir, const std::string& kind, int count, std::uint64_t seed, bool force) {
  if (fs::exists(dir / "parallel.tsv") && !force) {
    throw CliError("exists", (dir / "parallel.tsv").string() + " already exists; pass --force to overwrite");
  }
  std::vector<CorpusInstance> corpus;
  cleaning::AlignmentReport report;
  json config;
  if (kind == "planted") {
    auto planted = cleaning::make_planted_corpus(seed);
    corpus = std::move(planted.corpus);
    report = std::move(planted.report);
    config["cleaning"] = json{{"min_bin_count", 5}};
  } else if (kind == "toy") {
    ToyCorpusSpec spec;
    spec.count = count;
    spec.seed = seed;
    spec.min_chars = 1;
    spec.max_chars = 3;
    spec.min_words = 2;
    spec.max_words = 4;
    corpus = make_toy_corpus(spec);
    report = cleaning::aligned_report(corpus);
    // every tenth utterance gets an unaligned word
    for (std::size_t i = 0; i < corpus.size(); i += 10) report[corpus[i].utt_id].unaligned = {0};
    config["cleaning"] = json{{"min_bin_count", 2}};
  } else {
    throw CliError("usage", "synth: unknown kind '" + kind + "' (toy or planted)");
  }
  fs::create_directories(dir);
  write_corpus(dir, "parallel.tsv", corpus);
  cleaning::write_alignment_report(dir / "alignment.tsv", report);
  config["data"] = json{{"manifest", "parallel.tsv"},
                        {"alignment", "alignment.tsv"},
                        {"dev_size", std::max<std::size_t>(1, corpus.size() / 8)}};
  config["model"] = json{{"dense1", 32},       {"dense2", 16},    {"conv_channels", 4}, {"enc_hidden", 32},
                         {"enc_layers", 1},    {"char_emb_dim", 16}, {"dec_hidden", 64},   {"deep_output_dim", 64},
                         {"dropout", 0.0}};
  config["training"] = json{{"max_epochs", 3}, {"batch_size", 4}, {"seed", seed}};
  write_json_atomic(dir / "config.json", config);
}

namespace {

void print_error(std::ostream& err, const std::string& command, const std::string& kind, const std::string& message) {
  err << json{{"error", kind}, {"command", command}, {"message", message}}.dump() << '\n';
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"stforge: corpus cleaning, training, averaging and decoding for speech translation"};
  app.require_subcommand(1);

  std::string run_path, config_path, input, data, stage_name, from, mode, out_path, manifest_path, hyp_path;
  std::string kind = "toy";
  std::vector<std::string> ckpts, inputs;
  bool force = false;
  int count = 48;
  std::uint64_t seed = 1;
  std::optional<int> epochs;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--run", run_path, "run directory")->required();
    sub->add_option("--config", config_path, "config file (defaults to the run's config.json)");
    sub->add_flag("--force", force, "overwrite existing outputs");
  };
  auto* c_align = app.add_subcommand("clean-align", "alignment filter: Parallel -> Clean 1");
  common(c_align);
  auto* c_ratio = app.add_subcommand("clean-ratio", "frames/characters ratio filter: Clean 1 -> Clean 2");
  common(c_ratio);
  auto* c_split = app.add_subcommand("split", "hold out the dev set");
  common(c_split);
  std::string split_input = "clean2";
  c_split->add_option("--input", split_input, "manifest to split");
  auto* c_vocab = app.add_subcommand("vocab", "build the character vocabulary");
  common(c_vocab);
  c_vocab->add_option("--input", inputs, "manifests to read (default: train)");
  auto* c_train = app.add_subcommand("train", "train a stage from scratch");
  common(c_train);
  c_train->add_option("--stage", stage_name, "stage name (default: P)");
  c_train->add_option("--data", data, "parallel, clean1 or clean2");
  c_train->add_option("--epochs", epochs, "max epochs for this stage");
  auto* c_ft = app.add_subcommand("finetune", "restart training from a checkpoint");
  common(c_ft);
  c_ft->add_option("--stage", stage_name, "stage name")->required();
  c_ft->add_option("--from", from, "checkpoint to start from")->required();
  c_ft->add_option("--data", data, "parallel, clean1 or clean2");
  c_ft->add_option("--mode", mode, "same-policy, adam-anneal or nag-anneal");
  c_ft->add_option("--epochs", epochs, "max epochs for this stage");
  auto* c_avg = app.add_subcommand("avg-ckpt", "average the best of the last checkpoints");
  common(c_avg);
  c_avg->add_option("--stage", stage_name, "stage whose checkpoints are averaged")->required();
  c_avg->add_option("--ckpt", ckpts, "explicit candidate checkpoints, oldest first");
  c_avg->add_option("--out", out_path, "output checkpoint");
  auto* c_tr = app.add_subcommand("translate", "decode a manifest with one checkpoint or an ensemble");
  common(c_tr);
  c_tr->add_option("--ckpt", ckpts, "checkpoint; repeat for an ensemble")->required();
  c_tr->add_option("--input", input, "run manifest name (default: dev)");
  c_tr->add_option("--manifest", manifest_path, "external manifest instead of --input");
  c_tr->add_option("--out", out_path, "output text file");
  auto* c_score = app.add_subcommand("score", "corpus BLEU of a hypothesis file");
  common(c_score);
  c_score->add_option("--hyp", hyp_path, "hypotheses, one per line")->required();
  c_score->add_option("--input", input, "run manifest with the references (default: dev)");
  c_score->add_option("--manifest", manifest_path, "external reference manifest instead of --input");
  c_score->add_option("--out", out_path, "output JSON report");
  auto* c_pipe = app.add_subcommand("pipeline", "run every step of the configured cascade");
  common(c_pipe);
  auto* c_synth = app.add_subcommand("synth", "write a synthetic corpus with a starter config");
  c_synth->add_option("--out", out_path, "output directory")->required();
  c_synth->add_option("--kind", kind, "toy or planted");
  c_synth->add_option("--count", count, "number of toy utterances");
  c_synth->add_option("--seed", seed, "generator seed");
  c_synth->add_flag("--force", force, "overwrite existing outputs");

  std::string command = argc > 1 ? argv[1] : "";
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    print_error(err, command, "usage", e.what());
    return 2;
  }

  try {
    if (c_synth->parsed()) {
      synthesize(out_path, kind, count, seed, force);
      out << fs::path(out_path).string() << '\n';
      return 0;
    }
    RunDir run(run_path, force);
    run.bind_config(config_path);
    const auto& cfg = run.config();
    auto resolve_stage = [&](const std::string& name) {
      StageSpec s;
      if (const auto* known = find_stage(cfg, name)) s = *known;
      s.name = name;
      if (!data.empty()) s.data = data;
      if (!mode.empty()) s.mode = finetune_mode_from_string(mode);
      if (epochs) s.max_epochs = *epochs;
      return s;
    };
    if (input.empty()) input = "dev";
    auto reference_set = [&]() {
      if (!manifest_path.empty()) {
        auto corpus = read_manifest(manifest_path);
        run.record_inputs({fs::path(manifest_path)});
        return corpus;
      }
      return read_run_manifest(run, input);
    };
    if (c_align->parsed()) {
      clean_align(run);
    } else if (c_ratio->parsed()) {
      clean_ratio(run);
    } else if (c_split->parsed()) {
      split(run, split_input);
    } else if (c_vocab->parsed()) {
      const auto vocab = make_vocab(run, inputs.empty() ? std::vector<std::string>{"train"} : inputs);
      out << vocab.size() << ' ' << vocab.fingerprint() << '\n';
    } else if (c_train->parsed()) {
      const auto r = train_stage(run, resolve_stage(stage_name.empty() ? "P" : stage_name), {});
      out << "best epoch " << r.best_epoch << " dev loss " << r.best_dev_loss << '\n';
    } else if (c_ft->parsed()) {
      const auto r = train_stage(run, resolve_stage(stage_name), from);
      out << "best epoch " << r.best_epoch << " dev loss " << r.best_dev_loss << '\n';
    } else if (c_avg->parsed()) {
      std::vector<fs::path> paths(ckpts.begin(), ckpts.end());
      out << run.display(average_stage(run, stage_name, paths, out_path)) << '\n';
    } else if (c_tr->parsed()) {
      const auto corpus = reference_set();
      const std::string name = manifest_path.empty() ? input : fs::path(manifest_path).stem().string();
      const fs::path target = out_path.empty() ? run.reports() / ("translations_" + name + ".txt") : fs::path(out_path);
      std::vector<fs::path> paths(ckpts.begin(), ckpts.end());
      out << run.display(translate_corpus(run, paths, corpus, target)) << '\n';
    } else if (c_score->parsed()) {
      const auto corpus = reference_set();
      const std::string name = manifest_path.empty() ? input : fs::path(manifest_path).stem().string();
      const fs::path target = out_path.empty() ? run.reports() / ("score_" + name + ".json") : fs::path(out_path);
      out << score_file(run, hyp_path, corpus, target).to_json().dump() << '\n';
    } else if (c_pipe->parsed()) {
      pipeline(run);
    }
    return 0;
  } catch (const CliError& e) {
    print_error(err, command, e.kind(), e.what());
  } catch (const util::ConfigError& e) {
    print_error(err, command, "config", e.what());
  } catch (const CheckpointError& e) {
    print_error(err, command, "checkpoint", e.what());
  } catch (const EnsembleError& e) {
    print_error(err, command, "ensemble", e.what());
  } catch (const ManifestError& e) {
    print_error(err, command, "manifest", e.what());
  } catch (const std::exception& e) {
    print_error(err, command, "error", e.what());
  }
  return 1;
}

}  // namespace stforge::cli

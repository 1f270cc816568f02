#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "stforge/cli/run_dir.hpp"
#include "stforge/inference/bleu.hpp"
#include "stforge/training/trainer.hpp"

namespace stforge::cli {

/// Manifest names inside a run: parallel, clean1, clean2, train, dev, test.
std::vector<CorpusInstance> read_run_manifest(const RunDir& run, const std::string& name);

/// Stage data with the dev utterances removed.
std::vector<CorpusInstance> stage_corpus(const RunDir& run, const std::string& data);

void clean_align(RunDir& run);
void clean_ratio(RunDir& run);
void split(RunDir& run, const std::string& input);
/// Characters of the named manifests, dev utterances excluded.
CharVocab make_vocab(RunDir& run, const std::vector<std::string>& inputs);

/// `from` empty: train from scratch; otherwise fine-tune that checkpoint.
TrainResult train_stage(RunDir& run, const StageSpec& stage, const std::filesystem::path& from);

/// Evaluates the last window of candidates on dev and averages the
/// selection. Candidates default to the stage's epoch checkpoints.
std::filesystem::path average_stage(RunDir& run, const std::string& stage, std::vector<std::filesystem::path> inputs,
                                    std::filesystem::path out);

std::filesystem::path translate_corpus(RunDir& run, const std::vector<std::filesystem::path>& checkpoints,
                                       const std::vector<CorpusInstance>& corpus, const std::filesystem::path& out);

BleuScore score_file(RunDir& run, const std::filesystem::path& hypotheses, const std::vector<CorpusInstance>& refs,
                     const std::filesystem::path& out);

/// clean-align, clean-ratio, split, vocab, every stage with its average,
/// then translation and scoring of dev (and test when configured).
void pipeline(RunDir& run);

/// Writes `dir`/parallel.tsv, feats/, alignment.tsv and a starter config.json.
void synthesize(const std::filesystem::path& dir, const std::string& kind, int count, std::uint64_t seed,
                bool force);

/// Entry point; errors print one JSON line on `err` and return nonzero.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace stforge::cli

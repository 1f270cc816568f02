// Runs every acceptance property and prints one PASS/FAIL line for each.
// Exit status is nonzero if any property fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "stforge/cleaning/planted.hpp"
#include "stforge/cli/commands.hpp"
#include "stforge/inference/average.hpp"
#include "stforge/inference/bleu.hpp"
#include "stforge/inference/decode.hpp"
#include "stforge/training/loss.hpp"
#include "stforge/training/optim.hpp"
#include "support/model_gradcheck.hpp"
#include "support/op_gradcheck.hpp"
#include "support/overfit.hpp"
#include "support/temp_dir.hpp"
#include "support/tiny_model.hpp"

using namespace stforge;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = true;
  std::string detail;

  void expect(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + ("failed: " + what);
    }
  }
  void note(const std::string& s) { detail += (detail.empty() ? "" : "; ") + s; }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

bool bitwise_equal(const ParamMap<float>& a, const ParamMap<float>& b) {
  if (a.size() != b.size()) return false;
  for (const auto& [name, t] : a) {
    const auto it = b.find(name);
    if (it == b.end() || t.shape() != it->second.shape()) return false;
    if (!std::equal(t.data().begin(), t.data().end(), it->second.data().begin())) return false;
  }
  return true;
}

const test::Overfit& overfit() {
  static const test::Overfit fit = test::overfit_toy();
  return fit;
}

template <typename Scalar>
void gradient_family(Verdict& v, const char* label) {
  double worst = 0.0;
  for (const auto& r : test::op_gradcheck_suite<Scalar>(20)) {
    worst = std::max(worst, r.worst);
    v.expect(r.worst < GradCheckTolerance<Scalar>::kMaxRelError, std::string(label) + " " + r.op);
  }
  v.note(std::string(label) + " ops worst " + fmt("%.2e", worst));
}

template <typename Scalar>
void model_gradient(Verdict& v, const char* label, bool weight_norm, AttentionMode mode) {
  const auto r = test::full_model_gradcheck<Scalar>(weight_norm, mode, 20);
  v.expect(r.failures == 0, std::string(label) + " model: " + r.first_failure);
  v.note(std::string(label) + " model worst " + fmt("%.2e", r.worst));
}

Verdict gradient_suite() {
  Verdict v;
  const auto start = std::chrono::steady_clock::now();
  gradient_family<float>(v, "f32");
  gradient_family<double>(v, "f64");
  model_gradient<float>(v, "f32 wn/softmax", true, AttentionMode::kSoftmax);
  model_gradient<double>(v, "f64 wn/softmax", true, AttentionMode::kSoftmax);
  model_gradient<double>(v, "f64 plain/sigmoid", false, AttentionMode::kSigmoid);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  v.expect(secs < 120.0, "runtime under 2 min");
  v.note(fmt("%.1f s", secs));
  return v;
}

Verdict shape_law() {
  Verdict v;
  ModelConfig cfg;
  cfg.dense2 = 40;
  cfg.dropout = 0.0;
  Seq2Seq<float> model(cfg, 10, 1);
  const auto W = model.bind();
  RngStream rng(2);
  v.expect(cfg.conv_flat_width() == 160, "configured conv width 160");
  for (Index n : {4, 7, 8, 100, 101}) {
    const auto expected = static_cast<Index>(std::ceil(std::ceil(n / 2.0) / 2.0));
    const auto frames = test::random_frames<float>(n, rng);
    const auto flat = model.conv_features(W, frames, n, false, nullptr);
    const auto enc = model.encode(W, frames, n, false, nullptr);
    const std::string at = "n=" + std::to_string(n);
    v.expect(flat.dim(0) == expected && enc.length() == expected, at + " length");
    v.expect(flat.dim(1) == 160, at + " conv width");
  }
  v.note("n in {4,7,8,100,101}, width 160");
  return v;
}

Verdict overfit_oracle() {
  Verdict v;
  const auto start = std::chrono::steady_clock::now();
  const auto& fit = overfit();
  const auto& first = fit.result.epochs.front();
  const auto& last = fit.result.epochs.back();
  const double nll_drop = 1.0 - last.dev_nll / first.dev_nll;
  const double smoothed_drop = 1.0 - last.dev_loss / first.dev_loss;
  const auto hyps = translate(Ensemble::single(fit.model, fit.vocab), fit.corpus, DecodeConfig{});
  std::size_t exact = 0;
  for (std::size_t i = 0; i < hyps.size(); ++i) exact += hyps[i] == fit.corpus[i].translation;
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  v.expect(nll_drop >= 0.90, "loss drop >= 90%");
  v.expect(static_cast<double>(exact) >= 0.95 * static_cast<double>(hyps.size()), "exact >= 95%");
  v.expect(secs < 300.0, "runtime under 5 min");
  v.note("nll " + fmt("%.4f", first.dev_nll) + " -> " + fmt("%.4f", last.dev_nll) + " (drop " +
         fmt("%.1f%%", 100 * nll_drop) + ")");
  v.note("smoothed " + fmt("%.4f", first.dev_loss) + " -> " + fmt("%.4f", last.dev_loss) + " (drop " +
         fmt("%.1f%%", 100 * smoothed_drop) + ")");
  v.note("exact " + std::to_string(exact) + "/" + std::to_string(hyps.size()));
  v.note(fmt("%.1f s", secs));
  return v;
}

std::set<std::string> removal_ids(const cleaning::CleaningReport& r) {
  std::set<std::string> out;
  for (const auto& x : r.removals) out.insert(x.utt_id);
  return out;
}

Verdict cleaning_oracle() {
  Verdict v;
  const auto planted = cleaning::make_planted_corpus();
  v.expect(planted.corpus.size() == 60 && planted.alignment_failures.size() == 10 &&
               planted.ratio_outliers.size() == 8,
           "planted corpus sizes");
  const cleaning::CascadeParams params{0.5, 5, false};
  const auto lineage = cleaning::cascade(planted.corpus, &planted.report, params);
  v.expect(removal_ids(lineage.alignment_report) == planted.alignment_failures, "alignment removals");
  v.expect(removal_ids(lineage.ratio_report) == planted.ratio_outliers, "ratio removals");
  for (const auto* r : {&lineage.alignment_report, &lineage.ratio_report}) {
    v.expect(r->input == r->output + r->removed && r->removals.size() == r->removed, r->filter + " accounting");
  }
  v.expect(lineage.clean1.size() == lineage.alignment_report.output, "clean1 size");
  v.expect(lineage.clean2.size() == lineage.ratio_report.output, "clean2 size");
  v.expect(cleaning::alignment_filter(lineage.clean1, planted.report).removed.empty(), "alignment idempotent");
  v.expect(cleaning::ratio_filter(lineage.clean2, 0.5, 5).removed.empty(), "ratio idempotent");
  v.note("60 -> " + std::to_string(lineage.clean1.size()) + " -> " + std::to_string(lineage.clean2.size()));
  return v;
}

Verdict label_smoothing() {
  Verdict v;
  LossConfig cfg;
  const std::vector<int> target{0};
  auto p = Tensor<double>::from({1, 2}, {std::log(0.9), std::log(0.1)});
  const double two = label_smoothed_xent(p, target, cfg).item();
  v.expect(std::abs(two - 0.32508) <= 1e-4, "two-symbol loss");
  v.note("V=2 loss " + fmt("%.6f", two));
  double worst = 0.0;
  for (Index n : {2, 30, 100}) {
    const double l = label_smoothed_xent(Tensor<double>::zeros({1, n}), target, cfg).item();
    worst = std::max(worst, std::abs(l - std::log(static_cast<double>(n))));
  }
  v.expect(worst <= 1e-6, "uniform equals ln V");
  v.note("uniform |loss - ln V| " + fmt("%.1e", worst));
  return v;
}

Verdict clipping_annealing() {
  Verdict v;
  RngStream rng(11);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    ParamMap<float> params;
    for (int k = 0; k < 5; ++k) {
      auto t = Tensor<float>::zeros({23}, true);
      const double spread = trial % 2 ? 40.0 : 1.0;
      for (auto& g : t.grad()) g = static_cast<float>((rng.uniform_double() - 0.5) * spread);
      params["p" + std::to_string(k)] = t;
    }
    clip_grad_norm(params, 5.0);
    double sq = 0.0;
    for (const auto& [n, t] : params) {
      for (float g : t.grad()) sq += static_cast<double>(g) * g;
    }
    worst = std::max(worst, std::sqrt(sq));
  }
  v.expect(worst <= 5.0 + 1e-6, "post-clip norm");
  v.note("max post-clip norm " + fmt("%.7f", worst));
  AnnealState s;
  anneal_on_plateau(s, 1.0);
  for (int k = 1; k <= 5; ++k) {
    anneal_on_plateau(s, 1.0);
    v.expect(s.lr == 0.001 * std::pow(0.5, k), "lr after " + std::to_string(k) + " events");
  }
  v.note("lr after 5 events " + fmt("%.8g", s.lr));
  return v;
}

Checkpoint tiny_checkpoint(const CharVocab& vocab, std::uint64_t seed, int epoch = 0) {
  Seq2Seq<float> model(test::tiny_config(), vocab.size(), seed);
  CheckpointMeta meta;
  meta.epoch = epoch;
  return make_checkpoint(model, vocab, meta);
}

Verdict checkpoint_averaging() {
  Verdict v;
  using Sel = std::vector<std::size_t>;
  v.expect(select_for_average(std::vector<double>{10.0, 9.8, 9.4}) == Sel{0, 1}, "margin selection");
  v.expect(select_for_average(std::vector<double>{9.5, 10.0, 9.50000001}) == Sel{1, 2}, "exact margin excluded");
  std::vector<double> series(14, 1.0);
  series[0] = 50.0;
  v.expect(select_for_average(series) == Sel{4, 5, 6, 7, 8, 9, 10, 11, 12, 13}, "last ten only");
  series[13] = 1.6;
  v.expect(select_for_average(series) == Sel{13}, "single best");

  const CharVocab vocab(U"abc");
  const auto base = tiny_checkpoint(vocab, 5);
  v.expect(bitwise_equal(mean_checkpoint(std::vector<Checkpoint>(2, base)).params, base.params), "two duplicates");
  v.expect(bitwise_equal(mean_checkpoint(std::vector<Checkpoint>(7, base)).params, base.params), "seven duplicates");

  RngStream rng(4);
  auto a = tiny_checkpoint(vocab, 1, 1), b = tiny_checkpoint(vocab, 2, 2);
  bool exact = true;
  for (auto& [name, t] : a.params) {
    auto& u = b.params.at(name);
    for (Index i = 0; i < t.numel(); ++i) {
      // dyadic values: their mean is representable
      t.data()[i] = static_cast<float>(std::floor(rng.uniform_double() * 1024) / 256);
      u.data()[i] = static_cast<float>(std::floor(rng.uniform_double() * 1024) / 256);
    }
  }
  const auto mean = mean_checkpoint(std::vector<Checkpoint>{a, b});
  for (const auto& [name, t] : mean.params) {
    for (Index i = 0; i < t.numel(); ++i) {
      exact = exact && t[i] == (a.params.at(name)[i] + b.params.at(name)[i]) / 2.0f;
    }
  }
  v.expect(exact, "mean of two");
  v.note("selection, duplicates and mean exact");
  return v;
}

Verdict ensemble_identity() {
  Verdict v;
  const auto& fit = overfit();
  const auto ckpt = make_checkpoint(fit.model, fit.vocab, {});
  const auto single = Ensemble::from_checkpoints(std::vector<Checkpoint>{ckpt});
  const auto twice = Ensemble::from_checkpoints(std::vector<Checkpoint>{ckpt, ckpt});
  double worst = 0.0;
  std::size_t same = 0;
  for (const auto& inst : fit.corpus) {
    const auto frames = Tensor<float>::matrix(inst.features.frames);
    const Index n = inst.features.frames.rows();
    std::vector<std::vector<double>> ta, tb;
    const auto ha = decode(single, frames, n, DecodeConfig{}, &ta);
    const auto hb = decode(twice, frames, n, DecodeConfig{}, &tb);
    same += ha.ids == hb.ids;
    if (ta.size() != tb.size()) {
      worst = INFINITY;
      continue;
    }
    for (std::size_t s = 0; s < ta.size(); ++s) {
      for (std::size_t i = 0; i < ta[s].size(); ++i) {
        worst = std::max(worst, std::abs(std::exp(ta[s][i]) - std::exp(tb[s][i])));
        worst = std::max(worst, std::abs(ta[s][i] - tb[s][i]));
      }
    }
  }
  v.expect(worst <= 1e-6, "per-step distributions");
  v.expect(same == fit.corpus.size(), "greedy output");
  v.note(std::to_string(same) + "/" + std::to_string(fit.corpus.size()) + " identical, max diff " +
         fmt("%.1e", worst));
  const auto foreign = tiny_checkpoint(CharVocab(U"xyz"), 3);
  bool rejected = false;
  try {
    ensemble_compatibility(std::vector<Checkpoint>{ckpt, foreign});
  } catch (const EnsembleError&) {
    rejected = true;
  }
  v.expect(rejected, "fingerprint mismatch rejected");
  return v;
}

Verdict bleu() {
  Verdict v;
  const std::vector<std::string> refs{"the cat sat on the mat", "hello there world again"};
  v.expect(corpus_bleu(refs, refs).bleu == 100.0, "identity 100");
  const std::vector<std::string> h{"the the the the"}, r{"the cat sat down"};
  const auto degenerate = corpus_bleu(h, r);
  v.expect(degenerate.bleu == 0.0, "degenerate 0");

  const std::vector<std::string> hyps{"the cat sat on a mat", "a dog ran fast", "hello"};
  const std::vector<std::string> three{"the cat sat on the mat", "a dog ran", "hello world"};
  const auto j = corpus_bleu(hyps, three).to_json();
  const std::vector<double> expected_p{100.0 * 9 / 11, 100.0 * 5 / 8, 50.0, 25.0};
  bool precisions = j["precisions"].size() == 4;
  for (std::size_t k = 0; precisions && k < 4; ++k) {
    precisions = std::abs(j["precisions"][k].get<double>() - expected_p[k]) < 1e-9;
  }
  v.expect(precisions, "precisions");
  v.expect(j["brevity_penalty"].get<double>() == 1.0 && j["hyp_len"] == 11 && j["ref_len"] == 11, "lengths");
  const double expected = 100.0 * std::pow(9.0 / 11 * 5.0 / 8 * 0.5 * 0.25, 0.25);
  v.expect(std::abs(j["bleu"].get<double>() - expected) < 1e-9, "bleu value");
  const auto bp = corpus_bleu(std::vector<std::string>{"a b c d"}, std::vector<std::string>{"a b c d e f"});
  v.expect(std::abs(bp.brevity_penalty - std::exp(1.0 - 6.0 / 4.0)) < 1e-12, "brevity penalty");
  v.note("3-sentence bleu " + fmt("%.4f", j["bleu"].get<double>()));
  return v;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::map<std::string, std::string> tree(const fs::path& root, const std::string& sub) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root / sub)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).generic_string()] = slurp(e.path());
  }
  return out;
}

int invoke(std::vector<std::string> args, std::string* err = nullptr) {
  args.insert(args.begin(), "stforge");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, errs;
  const int code = cli::run_cli(static_cast<int>(argv.size()), argv.data(), out, errs);
  if (err) *err = errs.str();
  return code;
}

Verdict determinism() {
  Verdict v;
  test::TempDir dir;
  const auto data = dir / "data";
  std::string err;
  if (invoke({"synth", "--out", data.string(), "--count", "40", "--seed", "9"}, &err) != 0) {
    v.expect(false, "synth: " + err);
    return v;
  }
  auto cfg = nlohmann::json::parse(slurp(data / "config.json"));
  cfg["training"]["max_epochs"] = 2;
  cfg["training"]["stages"] = nlohmann::json::array({
      {{"name", "P"}, {"data", "parallel"}},
      {{"name", "C1"}, {"data", "clean1"}, {"max_epochs", 1}},
      {{"name", "C2"}, {"data", "clean2"}, {"mode", "adam-anneal"}, {"max_epochs", 1}},
  });
  cfg["training"]["ensemble"] = {"C1", "C2"};
  std::ofstream(data / "run.json") << cfg.dump(2);
  for (const char* run : {"a", "b"}) {
    if (invoke({"pipeline", "--run", (dir / run).string(), "--config", (data / "run.json").string()}, &err) != 0) {
      v.expect(false, std::string("pipeline ") + run + ": " + err);
      return v;
    }
  }
  const auto ca = tree(dir / "a", "checkpoints"), ra = tree(dir / "a", "reports");
  v.expect(!ca.empty() && ca == tree(dir / "b", "checkpoints"), "checkpoints identical");
  v.expect(ra.count("reports/translations_dev.txt") == 1, "translations written");
  v.expect(ra == tree(dir / "b", "reports"), "reports and translations identical");
  v.expect(tree(dir / "a", "manifests") == tree(dir / "b", "manifests"), "manifests identical");
  v.note(std::to_string(ca.size()) + " checkpoints, " + std::to_string(ra.size()) + " report files");
  return v;
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Verdict()>>> properties{
      {"gradient suite", gradient_suite},
      {"shape law", shape_law},
      {"overfit oracle", overfit_oracle},
      {"cleaning oracle", cleaning_oracle},
      {"label smoothing", label_smoothing},
      {"clipping and annealing", clipping_annealing},
      {"checkpoint averaging", checkpoint_averaging},
      {"ensemble identity", ensemble_identity},
      {"bleu", bleu},
      {"determinism", determinism},
  };
  int failed = 0;
  int index = 0;
  for (const auto& [name, run] : properties) {
    ++index;
    Verdict v;
    try {
      v = run();
    } catch (const std::exception& e) {
      v.pass = false;
      v.detail = std::string("exception: ") + e.what();
    }
    failed += !v.pass;
    std::printf("%s %2d %s: %s\n", v.pass ? "PASS" : "FAIL", index, name, v.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%zu passed\n", static_cast<int>(properties.size()) - failed, properties.size());
  return failed == 0 ? 0 : 1;
}

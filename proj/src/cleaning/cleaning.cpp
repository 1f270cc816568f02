#include "stforge/cleaning/cleaning.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include "stforge/dataio/vocab.hpp"
#include "stforge/tensor/rng.hpp"

namespace stforge::cleaning {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

AlignmentReport read_alignment_report(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open alignment report " + path.string());
  }
  AlignmentReport report;
  std::string line;
  int line_no = 0;
  auto fail = [&](const std::string& what) {
    throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": " + what);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
    if (t2 == std::string::npos || line.find('\t', t2 + 1) != std::string::npos) {
      fail("expected 3 tab-separated columns");
    }
    const std::string utt = line.substr(0, t1);
    AlignmentEntry entry;
    try {
      std::size_t used = 0;
      entry.n_words = std::stoi(line.substr(t1 + 1, t2 - t1 - 1), &used);
      if (used != t2 - t1 - 1) fail("malformed word count");
    } catch (const std::logic_error&) {
      fail("malformed word count");
    }
    if (entry.n_words < 0) fail("negative word count");
    std::stringstream indices(line.substr(t2 + 1));
    std::string item;
    while (std::getline(indices, item, ',')) {
      if (item.empty()) continue;
      int idx = -1;
      try {
        std::size_t used = 0;
        idx = std::stoi(item, &used);
        if (used != item.size()) fail("malformed word index '" + item + "'");
      } catch (const std::logic_error&) {
        fail("malformed word index '" + item + "'");
      }
      if (idx < 0 || idx >= entry.n_words) {
        fail("unaligned index " + std::to_string(idx) + " outside [0, " + std::to_string(entry.n_words) + ")");
      }
      entry.unaligned.push_back(idx);
    }
    if (!report.emplace(utt, std::move(entry)).second) {
      fail("duplicate utterance " + utt);
    }
  }
  return report;
}

void write_alignment_report(const fs::path& path, const AlignmentReport& report) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw std::runtime_error("cannot write alignment report " + path.string());
  }
  for (const auto& [utt, entry] : report) {
    out << utt << '\t' << entry.n_words << '\t';
    for (std::size_t i = 0; i < entry.unaligned.size(); ++i) out << (i ? "," : "") << entry.unaligned[i];
    out << '\n';
  }
}

json CleaningReport::to_json() const {
  json ids = json::array(), reasons = json::array();
  for (const auto& r : removals) {
    ids.push_back(r.utt_id);
    reasons.push_back(r.reason);
  }
  return json{{"filter", filter}, {"input", input},         {"removed", removed}, {"output", output},
              {"params", params}, {"removed_ids", ids},      {"reasons", reasons}};
}

std::int64_t RatioHistogram::bin_of(double r) const {
  return static_cast<std::int64_t>(std::floor(r / bin_width));
}

bool RatioHistogram::keeps(double r) const {
  const auto bin = bin_of(r);
  return bin >= keep_lo_bin && bin <= keep_hi_bin;
}

std::size_t RatioHistogram::total() const {
  std::size_t n = 0;
  for (const auto& [bin, count] : counts) n += count;
  return n;
}

json RatioHistogram::to_json() const {
  json bins = json::array();
  for (const auto& [bin, count] : counts) {
    bins.push_back(json{{"bin", bin}, {"lo", static_cast<double>(bin) * bin_width}, {"count", count}});
  }
  return json{{"bin_width", bin_width}, {"keep_range", json::array({keep_lo(), keep_hi()})}, {"bins", bins}};
}

double ratio(const CorpusInstance& instance) {
  const auto chars = utf8_to_u32(instance.transcription).size();
  if (chars == 0) {
    throw std::invalid_argument("ratio: " + instance.utt_id + " has an empty transcription");
  }
  return static_cast<double>(instance.features.num_frames()) / static_cast<double>(chars);
}

FilterResult alignment_filter(std::span<const CorpusInstance> corpus, const AlignmentReport& report) {
  FilterResult result;
  result.report.filter = "alignment";
  result.report.params = json{{"policy", "remove if any transcription word is unaligned"}};
  for (const auto& inst : corpus) {
    const auto it = report.find(inst.utt_id);
    if (it == report.end()) {
      throw std::invalid_argument("alignment_filter: utterance " + inst.utt_id + " missing from alignment report");
    }
    if (it->second.unaligned.empty()) {
      result.kept.push_back(inst);
    } else {
      result.removed.push_back(inst);
      result.report.removals.push_back({inst.utt_id, kReasonUnaligned});
    }
  }
  result.report.input = corpus.size();
  result.report.removed = result.removed.size();
  result.report.output = result.kept.size();
  return result;
}

RatioFilterResult ratio_filter(std::span<const CorpusInstance> corpus, double bin_width, std::size_t min_bin_count) {
  if (!(bin_width > 0.0)) {
    throw std::invalid_argument("ratio_filter: bin width must be positive");
  }
  if (min_bin_count < 1) {
    throw std::invalid_argument("ratio_filter: min_bin_count must be >= 1");
  }
  RatioFilterResult result;
  result.histogram.bin_width = bin_width;
  std::vector<double> ratios(corpus.size(), std::nan(""));
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (utf8_to_u32(corpus[i].transcription).empty()) continue;
    ratios[i] = ratio(corpus[i]);
    ++result.histogram.counts[result.histogram.bin_of(ratios[i])];
  }
  if (result.histogram.counts.empty()) {
    throw std::invalid_argument("ratio_filter: no instance has a transcription");
  }
  // modal bin; ties go to the lowest bin
  auto mode = result.histogram.counts.begin();
  for (auto it = result.histogram.counts.begin(); it != result.histogram.counts.end(); ++it) {
    if (it->second > mode->second) mode = it;
  }
  if (mode->second < min_bin_count) {
    throw std::invalid_argument("ratio_filter: threshold exceeds corpus density (largest bin holds " +
                                std::to_string(mode->second) + " < " + std::to_string(min_bin_count) + ")");
  }
  auto lo = mode, hi = mode;
  while (lo != result.histogram.counts.begin() && std::prev(lo)->second >= min_bin_count) --lo;
  while (std::next(hi) != result.histogram.counts.end() && std::next(hi)->second >= min_bin_count) ++hi;
  result.histogram.keep_lo_bin = lo->first;
  result.histogram.keep_hi_bin = hi->first;

  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (std::isnan(ratios[i])) {
      result.removed.push_back(corpus[i]);
      result.report.removals.push_back({corpus[i].utt_id, kReasonEmptyText});
    } else if (result.histogram.keeps(ratios[i])) {
      result.kept.push_back(corpus[i]);
    } else {
      result.removed.push_back(corpus[i]);
      result.report.removals.push_back({corpus[i].utt_id, kReasonRatio});
    }
  }
  result.report.filter = "ratio";
  result.report.params = json{{"bin_width", bin_width},
                              {"min_bin_count", min_bin_count},
                              {"keep_range", json::array({result.histogram.keep_lo(), result.histogram.keep_hi()})}};
  result.report.input = corpus.size();
  result.report.removed = result.removed.size();
  result.report.output = result.kept.size();
  return result;
}

DevSplit split_dev(std::span<const CorpusInstance> corpus, std::size_t n_dev, std::uint64_t seed) {
  if (n_dev >= corpus.size()) {
    throw std::invalid_argument("split_dev: n_dev " + std::to_string(n_dev) + " must be smaller than the corpus (" +
                                std::to_string(corpus.size()) + ")");
  }
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  RngStream rng(seed, 0x646576ULL);
  // partial Fisher-Yates: the first n_dev slots become a uniform sample
  for (std::size_t i = 0; i < n_dev; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.uniform_index(corpus.size() - i));
    std::swap(order[i], order[j]);
  }
  std::vector<bool> in_dev(corpus.size(), false);
  for (std::size_t i = 0; i < n_dev; ++i) in_dev[order[i]] = true;
  DevSplit split;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    (in_dev[i] ? split.dev : split.train).push_back(corpus[i]);
  }
  return split;
}

Lineage cascade(std::span<const CorpusInstance> corpus, const AlignmentReport* report, const CascadeParams& params,
                const fs::path* out_dir) {
  Lineage lineage;
  lineage.parallel.assign(corpus.begin(), corpus.end());
  if (params.skip_alignment) {
    lineage.clean1 = lineage.parallel;
    lineage.alignment_report.filter = "alignment";
    lineage.alignment_report.params = json{{"skipped", true}};
    lineage.alignment_report.input = lineage.alignment_report.output = corpus.size();
  } else {
    if (report == nullptr) {
      throw std::invalid_argument("cascade: alignment report required unless skip_alignment is set");
    }
    auto stage = alignment_filter(corpus, *report);
    lineage.clean1 = std::move(stage.kept);
    lineage.alignment_report = std::move(stage.report);
  }
  auto stage2 = ratio_filter(lineage.clean1, params.bin_width, params.min_bin_count);
  lineage.clean2 = std::move(stage2.kept);
  lineage.ratio_report = std::move(stage2.report);
  lineage.ratio_report.params["histogram"] = stage2.histogram.to_json();
  lineage.histogram = stage2.histogram;

  if (out_dir) {
    fs::create_directories(*out_dir / "manifests");
    fs::create_directories(*out_dir / "reports");
    write_manifest(*out_dir / "manifests" / "parallel.tsv", lineage.parallel);
    write_manifest(*out_dir / "manifests" / "clean1.tsv", lineage.clean1);
    write_manifest(*out_dir / "manifests" / "clean2.tsv", lineage.clean2);
    std::ofstream(*out_dir / "reports" / "clean_align.json") << lineage.alignment_report.to_json().dump(2) << '\n';
    std::ofstream(*out_dir / "reports" / "clean_ratio.json") << lineage.ratio_report.to_json().dump(2) << '\n';
  }
  return lineage;
}

}  // namespace stforge::cleaning

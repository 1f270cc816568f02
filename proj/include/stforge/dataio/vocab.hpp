#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace stforge {

struct CorpusInstance;

std::u32string utf8_to_u32(const std::string& utf8);
std::string u32_to_utf8(const std::u32string& text);

/// Character-level target vocabulary. Ids 0..3 are reserved; characters
/// follow in codepoint order starting at id 4.
class CharVocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr int kNumReserved = 4;

  CharVocab() : CharVocab(std::u32string{}) {}
  /// Deduplicates and sorts by codepoint.
  explicit CharVocab(std::u32string symbols);

  int size() const { return kNumReserved + static_cast<int>(symbols_.size()); }
  const std::u32string& symbols() const { return symbols_; }
  const std::string& fingerprint() const { return fingerprint_; }

  int id_of(char32_t c) const;
  /// Throws for reserved or out-of-range ids.
  char32_t symbol(int id) const;

  /// BOS, one id per character (UNK when unknown), EOS.
  std::vector<int> encode(const std::string& utf8) const;
  /// Drops reserved ids.
  std::string decode(std::span<const int> ids) const;

  /// UTF-8, 4 reserved-token lines then one symbol per line.
  void save(const std::filesystem::path& path) const;
  static CharVocab load(const std::filesystem::path& path);

  bool operator==(const CharVocab& other) const { return symbols_ == other.symbols_; }

 private:
  std::u32string symbols_;
  std::map<char32_t, int> index_;
  std::string fingerprint_;
};

/// Every character of every target translation; rejects an empty corpus.
CharVocab build_vocab(std::span<const CorpusInstance> corpus);

}  // namespace stforge

#include "stforge/dataio/vocab.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

#include "stforge/dataio/binary_io.hpp"
#include "stforge/dataio/manifest.hpp"

namespace stforge {

namespace {

const char* const kReservedNames[CharVocab::kNumReserved] = {"<pad>", "<s>", "</s>", "<unk>"};

[[noreturn]] void bad_utf8(std::size_t offset) {
  throw std::invalid_argument("invalid UTF-8 at byte " + std::to_string(offset));
}

}  // namespace

std::u32string utf8_to_u32(const std::string& utf8) {
  std::u32string out;
  out.reserve(utf8.size());
  std::size_t i = 0;
  while (i < utf8.size()) {
    const auto lead = static_cast<unsigned char>(utf8[i]);
    int extra = 0;
    char32_t cp = 0;
    if (lead < 0x80) {
      cp = lead;
    } else if ((lead & 0xE0) == 0xC0) {
      cp = lead & 0x1F;
      extra = 1;
    } else if ((lead & 0xF0) == 0xE0) {
      cp = lead & 0x0F;
      extra = 2;
    } else if ((lead & 0xF8) == 0xF0) {
      cp = lead & 0x07;
      extra = 3;
    } else {
      bad_utf8(i);
    }
    if (i + static_cast<std::size_t>(extra) >= utf8.size()) {
      bad_utf8(i);
    }
    for (int k = 1; k <= extra; ++k) {
      const auto cont = static_cast<unsigned char>(utf8[i + static_cast<std::size_t>(k)]);
      if ((cont & 0xC0) != 0x80) bad_utf8(i + static_cast<std::size_t>(k));
      cp = (cp << 6) | (cont & 0x3F);
    }
    static constexpr char32_t kMinForLength[4] = {0, 0x80, 0x800, 0x10000};
    if (cp < kMinForLength[extra] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) {
      bad_utf8(i);
    }
    out.push_back(cp);
    i += static_cast<std::size_t>(extra) + 1;
  }
  return out;
}

std::string u32_to_utf8(const std::u32string& text) {
  std::string out;
  for (char32_t cp : text) {
    if (cp < 0x80) {
      out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
      out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
      out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
      out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
  }
  return out;
}

CharVocab::CharVocab(std::u32string symbols) : symbols_(std::move(symbols)) {
  std::sort(symbols_.begin(), symbols_.end());
  symbols_.erase(std::unique(symbols_.begin(), symbols_.end()), symbols_.end());
  for (std::size_t i = 0; i < symbols_.size(); ++i) {
    if (symbols_[i] == U'\n' || symbols_[i] == U'\t' || symbols_[i] == U'\r') {
      throw std::invalid_argument("vocabulary cannot hold tab or newline characters");
    }
    index_.emplace(symbols_[i], kNumReserved + static_cast<int>(i));
  }
  std::string joined;
  for (char32_t c : symbols_) {
    joined += u32_to_utf8(std::u32string(1, c));
    joined.push_back('\n');
  }
  fingerprint_ = io::fnv1a_hex(joined);
}

int CharVocab::id_of(char32_t c) const {
  const auto it = index_.find(c);
  return it == index_.end() ? kUnk : it->second;
}

char32_t CharVocab::symbol(int id) const {
  if (id < kNumReserved || id >= size()) {
    throw std::out_of_range("vocabulary id " + std::to_string(id) + " is not a character");
  }
  return symbols_[static_cast<std::size_t>(id - kNumReserved)];
}

std::vector<int> CharVocab::encode(const std::string& utf8) const {
  const auto text = utf8_to_u32(utf8);
  std::vector<int> ids;
  ids.reserve(text.size() + 2);
  ids.push_back(kBos);
  for (char32_t c : text) ids.push_back(id_of(c));
  ids.push_back(kEos);
  return ids;
}

std::string CharVocab::decode(std::span<const int> ids) const {
  std::u32string text;
  for (int id : ids) {
    if (id >= kNumReserved && id < size()) text.push_back(symbol(id));
  }
  return u32_to_utf8(text);
}

void CharVocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write vocabulary " + path.string());
  for (const char* name : kReservedNames) out << name << '\n';
  for (char32_t c : symbols_) out << u32_to_utf8(std::u32string(1, c)) << '\n';
}

CharVocab CharVocab::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open vocabulary " + path.string());
  std::string line;
  for (int i = 0; i < kNumReserved; ++i) {
    if (!std::getline(in, line) || line != kReservedNames[i]) {
      throw std::runtime_error(path.string() + ":" + std::to_string(i + 1) + ": expected reserved token " +
                               kReservedNames[i]);
    }
  }
  std::u32string symbols;
  int line_no = kNumReserved;
  while (std::getline(in, line)) {
    ++line_no;
    const auto cps = utf8_to_u32(line);
    if (cps.size() != 1) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": expected exactly one character");
    }
    symbols.push_back(cps[0]);
  }
  return CharVocab(std::move(symbols));
}

CharVocab build_vocab(std::span<const CorpusInstance> corpus) {
  if (corpus.empty()) {
    throw std::invalid_argument("build_vocab: empty corpus");
  }
  std::u32string all;
  for (const auto& inst : corpus) all += utf8_to_u32(inst.translation);
  return CharVocab(std::move(all));
}

}  // namespace stforge

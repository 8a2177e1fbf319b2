#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "distillkit/corpus/types.hpp"

namespace distillkit::corpus {

// Byte-pair style subword vocabulary. Ids: reserved tokens, then whole-word
// specials (language tags), then the symbol alphabet, then merge results in
// merge order. Every word is encoded as "▁" followed by its characters before
// merges apply, so decoding restores word boundaries exactly.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr int kReserved = 4;
  static constexpr const char* kWordStart = "\xE2\x96\x81";

  Vocab();

  // Greedy most-frequent pair merging; ties go to the lexicographically
  // smallest (left, right) pair. Stops at `size` tokens or when no pair is
  // left. Throws ConfigError if `size` is below the alphabet size.
  static Vocab train(const std::vector<std::vector<std::string>>& sentences, int size,
                     const std::vector<std::string>& specials = {});

  // Subword ids without bos/eos.
  std::vector<int> encode(const std::vector<std::string>& words) const;
  std::vector<int> encode_word(const std::string& word) const;

  // Reserved ids are skipped; unknown ids become "<unk>".
  std::vector<std::string> decode(std::span<const int> ids) const;

  int size() const { return static_cast<int>(tokens_.size()); }
  int alphabet_size() const { return alphabet_size_; }
  const std::string& token(int id) const;
  int id(const std::string& token) const;
  bool contains(const std::string& token) const { return index_.count(token) > 0; }
  const std::vector<std::pair<std::string, std::string>>& merges() const { return merges_; }
  const std::vector<std::string>& tokens() const { return tokens_; }

  // Writes one token per line in id order, and the merges to
  // merges_path(path), one "left right" pair per line.
  void save(const std::filesystem::path& path) const;
  static Vocab load(const std::filesystem::path& path);
  static std::filesystem::path merges_path(const std::filesystem::path& path);

  bool operator==(const Vocab& other) const {
    return tokens_ == other.tokens_ && merges_ == other.merges_ && specials_ == other.specials_;
  }

 private:
  void add_token(const std::string& token);
  void rebuild_ranks();

  std::vector<std::string> tokens_;
  std::map<std::string, int> index_;
  std::vector<std::string> specials_;
  std::vector<std::pair<std::string, std::string>> merges_;
  std::map<std::pair<std::string, std::string>, int> merge_rank_;
  int alphabet_size_ = kReserved;
};

struct VocabPair {
  Vocab source;
  Vocab target;
};

// Source vocabulary over unified-script sources (language tags as specials)
// and target vocabulary over targets.
VocabPair train_subword_vocab(const Corpus& corpus, int size_src, int size_tgt);

}  // namespace distillkit::corpus

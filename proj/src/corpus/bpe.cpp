#include "distillkit/corpus/bpe.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "distillkit/corpus/script.hpp"
#include "distillkit/corpus/utf8.hpp"
#include "distillkit/errors.hpp"

namespace distillkit::corpus {

namespace {

const char* const kReservedNames[Vocab::kReserved] = {"<pad>", "<s>", "</s>", "<unk>"};

std::vector<std::string> initial_symbols(const std::string& word) {
  std::vector<std::string> symbols{Vocab::kWordStart};
  for (auto& cp : utf8::split_code_points(word)) symbols.push_back(std::move(cp));
  return symbols;
}

void apply_merge(std::vector<std::string>& symbols, const std::string& left, const std::string& right) {
  std::vector<std::string> merged;
  merged.reserve(symbols.size());
  for (std::size_t i = 0; i < symbols.size();) {
    if (i + 1 < symbols.size() && symbols[i] == left && symbols[i + 1] == right) {
      merged.push_back(left + right);
      i += 2;
    } else {
      merged.push_back(std::move(symbols[i]));
      ++i;
    }
  }
  symbols = std::move(merged);
}

}  // namespace

Vocab::Vocab() {
  for (const char* name : kReservedNames) add_token(name);
}

void Vocab::add_token(const std::string& token) {
  if (index_.emplace(token, static_cast<int>(tokens_.size())).second) tokens_.push_back(token);
}

void Vocab::rebuild_ranks() {
  merge_rank_.clear();
  for (std::size_t i = 0; i < merges_.size(); ++i) merge_rank_.emplace(merges_[i], static_cast<int>(i));
}

Vocab Vocab::train(const std::vector<std::vector<std::string>>& sentences, int size,
                   const std::vector<std::string>& specials) {
  Vocab vocab;
  for (const auto& s : specials) {
    vocab.add_token(s);
    vocab.specials_.push_back(s);
  }

  std::map<std::string, long> word_counts;
  for (const auto& sentence : sentences) {
    for (const auto& word : sentence) {
      if (std::find(specials.begin(), specials.end(), word) == specials.end()) ++word_counts[word];
    }
  }

  std::vector<std::vector<std::string>> words;
  std::vector<long> counts;
  std::set<std::string> alphabet;
  for (const auto& [word, count] : word_counts) {
    words.push_back(initial_symbols(word));
    counts.push_back(count);
    alphabet.insert(words.back().begin(), words.back().end());
  }
  alphabet.insert(kWordStart);
  for (const auto& symbol : alphabet) vocab.add_token(symbol);
  vocab.alphabet_size_ = vocab.size();
  if (size < vocab.alphabet_size_) {
    throw ConfigError("vocabulary size " + std::to_string(size) + " is below the alphabet size " +
                      std::to_string(vocab.alphabet_size_));
  }

  while (vocab.size() < size) {
    std::map<std::pair<std::string, std::string>, long> pair_counts;
    for (std::size_t w = 0; w < words.size(); ++w) {
      for (std::size_t i = 0; i + 1 < words[w].size(); ++i) pair_counts[{words[w][i], words[w][i + 1]}] += counts[w];
    }
    if (pair_counts.empty()) break;
    // The map iterates in lexicographic order, so the first maximum wins ties.
    auto best = pair_counts.begin();
    for (auto it = pair_counts.begin(); it != pair_counts.end(); ++it) {
      if (it->second > best->second) best = it;
    }
    const auto [left, right] = best->first;
    vocab.merges_.emplace_back(left, right);
    vocab.add_token(left + right);
    for (auto& w : words) apply_merge(w, left, right);
  }
  vocab.rebuild_ranks();
  return vocab;
}

std::vector<int> Vocab::encode_word(const std::string& word) const {
  if (std::find(specials_.begin(), specials_.end(), word) != specials_.end()) return {index_.at(word)};
  auto symbols = initial_symbols(word);
  for (;;) {
    int best_rank = -1;
    for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
      auto it = merge_rank_.find({symbols[i], symbols[i + 1]});
      if (it != merge_rank_.end() && (best_rank < 0 || it->second < best_rank)) {
        best_rank = it->second;
      }
    }
    if (best_rank < 0) break;
    const auto& [left, right] = merges_[best_rank];
    apply_merge(symbols, left, right);
  }
  std::vector<int> ids;
  ids.reserve(symbols.size());
  for (const auto& s : symbols) ids.push_back(id(s));
  return ids;
}

std::vector<int> Vocab::encode(const std::vector<std::string>& words) const {
  std::vector<int> ids;
  for (const auto& w : words) {
    auto piece = encode_word(w);
    ids.insert(ids.end(), piece.begin(), piece.end());
  }
  return ids;
}

std::vector<std::string> Vocab::decode(std::span<const int> ids) const {
  std::vector<std::string> words;
  bool open = false;
  const std::string start = kWordStart;
  for (int i : ids) {
    if (i == kPad || i == kBos || i == kEos) continue;
    if (i < 0 || i >= size() || i == kUnk) {
      words.emplace_back("<unk>");
      open = true;
      continue;
    }
    const auto& piece = tokens_[i];
    if (std::find(specials_.begin(), specials_.end(), piece) != specials_.end()) {
      words.push_back(piece);
      open = false;
    } else if (piece.starts_with(start)) {
      words.push_back(piece.substr(start.size()));
      open = true;
    } else if (open) {
      words.back() += piece;
    } else {
      words.push_back(piece);
      open = true;
    }
  }
  return words;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || id >= size()) throw Error("token id " + std::to_string(id) + " out of range");
  return tokens_[id];
}

int Vocab::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

std::filesystem::path Vocab::merges_path(const std::filesystem::path& path) {
  return std::filesystem::path(path.string() + ".merges");
}

void Vocab::save(const std::filesystem::path& path) const {
  {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    for (const auto& t : tokens_) out << t << '\n';
  }
  std::ofstream out(merges_path(path), std::ios::binary);
  if (!out) throw Error("cannot write " + merges_path(path).string());
  for (const auto& [l, r] : merges_) out << l << ' ' << r << '\n';
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PreconditionError("missing vocabulary " + path.string());
  std::vector<std::string> tokens;
  for (std::string line; std::getline(in, line);) tokens.push_back(line);
  if (tokens.size() < kReserved) throw Error("truncated vocabulary " + path.string());
  for (int i = 0; i < kReserved; ++i) {
    if (tokens[i] != kReservedNames[i]) throw Error("vocabulary " + path.string() + " lacks reserved tokens");
  }

  std::ifstream min(merges_path(path), std::ios::binary);
  if (!min) throw PreconditionError("missing merges " + merges_path(path).string());
  std::vector<std::pair<std::string, std::string>> merges;
  for (std::string line; std::getline(min, line);) {
    const auto sp = line.find(' ');
    if (sp == std::string::npos) throw Error("malformed merge line in " + merges_path(path).string());
    merges.emplace_back(line.substr(0, sp), line.substr(sp + 1));
  }

  Vocab vocab;
  bool in_alphabet = true;
  for (std::size_t i = kReserved; i < tokens.size(); ++i) {
    vocab.add_token(tokens[i]);
    if (is_language_tag(tokens[i])) {
      vocab.specials_.push_back(tokens[i]);
    } else if (in_alphabet && utf8::split_code_points(tokens[i]).size() > 1) {
      in_alphabet = false;
    }
    if (in_alphabet) vocab.alphabet_size_ = vocab.size();
  }
  vocab.merges_ = std::move(merges);
  vocab.rebuild_ranks();
  return vocab;
}

VocabPair train_subword_vocab(const Corpus& corpus, int size_src, int size_tgt) {
  if (corpus.empty()) throw Error("cannot train a vocabulary on an empty corpus");
  std::vector<std::vector<std::string>> sources, targets;
  std::set<std::string> tags;
  for (const auto& pair : corpus) {
    sources.push_back(pair.source);
    targets.push_back(pair.target);
    for (const auto& t : pair.source) {
      if (is_language_tag(t)) tags.insert(t);
    }
  }
  return {Vocab::train(sources, size_src, {tags.begin(), tags.end()}), Vocab::train(targets, size_tgt)};
}

}  // namespace distillkit::corpus

#include "distillkit/corpus/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "distillkit/corpus/script.hpp"
#include "distillkit/corpus/similarity.hpp"
#include "distillkit/corpus/utf8.hpp"
#include "distillkit/errors.hpp"

namespace distillkit::corpus {

using numerics::Rng;
using numerics::stable_hash;

namespace {

struct Grammar {
  std::vector<std::string> det{"the", "a", "this", "that", "every", "some"};
  std::vector<std::string> noun{"cat",    "dog",     "man",     "woman",   "child",  "bird",    "horse",
                                "farmer", "king",    "queen",   "teacher", "doctor", "river",   "tree",
                                "house",  "road",    "book",    "letter",  "song",   "city",    "village",
                                "garden", "field",   "boat",    "market",  "friend", "mother",  "father",
                                "stone",  "table",   "window",  "door",    "mountain", "forest", "school",
                                "temple", "student", "poet",    "soldier", "merchant"};
  std::vector<std::string> verb_t{"sees",    "finds", "loves", "carries", "builds", "reads", "writes", "paints",
                                  "follows", "helps", "calls", "watches", "takes",  "brings", "sells", "buys"};
  std::vector<std::string> verb_i{"sleeps", "runs", "sings", "waits", "laughs", "walks", "falls", "swims"};
  std::vector<std::string> adj{"big",   "small", "old",  "young", "red",  "green", "happy", "quiet",
                               "tall",  "dark",  "bright", "poor", "rich", "wise",  "brave", "slow"};
  std::vector<std::string> prep{"in", "on", "near", "under", "behind", "with", "from", "across"};
  std::vector<std::string> adv{"today", "slowly", "quickly", "again", "often", "there"};
  std::vector<std::string> conj{"and", "but"};
};

const Grammar& grammar() {
  static const Grammar g;
  return g;
}

const std::string& pick(Rng& rng, const std::vector<std::string>& words) {
  return words[rng.uniform_int(words.size())];
}

void noun_phrase(Rng& rng, std::vector<std::string>& out, bool allow_pp) {
  const auto& g = grammar();
  out.push_back(pick(rng, g.det));
  if (rng.bernoulli(0.4)) out.push_back(pick(rng, g.adj));
  out.push_back(pick(rng, g.noun));
  if (allow_pp && rng.bernoulli(0.2)) {
    out.push_back(pick(rng, g.prep));
    noun_phrase(rng, out, false);
  }
}

void clause(Rng& rng, std::vector<std::string>& out) {
  const auto& g = grammar();
  noun_phrase(rng, out, true);
  if (rng.bernoulli(0.65)) {
    out.push_back(pick(rng, g.verb_t));
    noun_phrase(rng, out, true);
    if (rng.bernoulli(0.3)) out.push_back(pick(rng, g.adv));
  } else {
    out.push_back(pick(rng, g.verb_i));
    if (rng.bernoulli(0.4)) out.push_back(pick(rng, g.adv));
    if (rng.bernoulli(0.4)) {
      out.push_back(pick(rng, g.prep));
      noun_phrase(rng, out, false);
    }
  }
}

std::array<char, kScriptLetters> permutation(std::uint64_t seed) {
  std::array<char, kScriptLetters> p{};
  std::iota(p.begin(), p.end(), 'a');
  Rng rng(seed);
  rng.shuffle(std::span<char>(p));
  return p;
}

int letter_index(char c) {
  if (c < 'a' || c > 'z') throw Error(std::string("character outside a-z: '") + c + "'");
  return c - 'a';
}

}  // namespace

const std::vector<std::string>& lexicon() {
  static const std::vector<std::string> words = [] {
    const auto& g = grammar();
    std::vector<std::string> all;
    for (const auto* group : {&g.det, &g.noun, &g.verb_t, &g.verb_i, &g.adj, &g.prep, &g.adv, &g.conj}) {
      all.insert(all.end(), group->begin(), group->end());
    }
    return all;
  }();
  return words;
}

std::vector<std::string> sample_sentence(Rng& rng, int min_len, int max_len) {
  if (min_len < 1 || max_len < min_len) throw ConfigError("invalid sentence length range");
  for (;;) {
    std::vector<std::string> out;
    clause(rng, out);
    if (rng.bernoulli(0.25)) {
      out.push_back(pick(rng, grammar().conj));
      clause(rng, out);
    }
    const auto n = static_cast<int>(out.size());
    if (n >= min_len && n <= max_len) return out;
  }
}

LetterCipher::LetterCipher(const LanguageSpec& spec) {
  forward_ = permutation(stable_hash("family:" + spec.family));
  Rng rng(stable_hash("language:" + spec.id));
  for (int swap = 0; swap < 2; ++swap) {
    const auto i = rng.uniform_int(kScriptLetters);
    auto j = rng.uniform_int(kScriptLetters - 1);
    if (j >= i) ++j;
    std::swap(forward_[i], forward_[j]);
  }
  for (int i = 0; i < kScriptLetters; ++i) inverse_[letter_index(forward_[i])] = static_cast<char>('a' + i);
}

char LetterCipher::encrypt(char c) const { return forward_[letter_index(c)]; }
char LetterCipher::decrypt(char c) const { return inverse_[letter_index(c)]; }

std::string LetterCipher::encrypt_word(const std::string& word) const {
  std::string out = word;
  for (auto& c : out) c = encrypt(c);
  return out;
}

std::string LetterCipher::decrypt_word(const std::string& word) const {
  std::string out = word;
  for (auto& c : out) c = decrypt(c);
  return out;
}

std::vector<std::string> reorder(std::vector<std::string> words, ReorderRule rule) {
  switch (rule) {
    case ReorderRule::identity: break;
    case ReorderRule::reverse: std::reverse(words.begin(), words.end()); break;
    case ReorderRule::swap_pairs:
      for (std::size_t i = 0; i + 1 < words.size(); i += 2) std::swap(words[i], words[i + 1]);
      break;
    case ReorderRule::rotate:
      if (!words.empty()) std::rotate(words.begin(), words.begin() + 1, words.end());
      break;
  }
  return words;
}

std::vector<std::string> unreorder(std::vector<std::string> words, ReorderRule rule) {
  if (rule == ReorderRule::rotate) {
    if (!words.empty()) std::rotate(words.rbegin(), words.rbegin() + 1, words.rend());
    return words;
  }
  return reorder(std::move(words), rule);
}

std::vector<std::string> render_source(const std::vector<std::string>& target, const LanguageSpec& spec) {
  const LetterCipher cipher(spec);
  std::vector<std::string> out;
  out.reserve(target.size());
  for (const auto& word : target) {
    std::string native;
    for (char c : word) native += utf8::encode(static_cast<char32_t>(spec.script_offset + (cipher.encrypt(c) - 'a')));
    out.push_back(std::move(native));
  }
  return reorder(std::move(out), spec.reorder);
}

std::vector<std::string> oracle_target(const SentencePair& pair, const LanguageSpec& spec) {
  const LetterCipher cipher(spec);
  std::vector<std::string> words;
  std::size_t begin = 0;
  if (!pair.source.empty() && is_language_tag(pair.source.front())) begin = 1;
  for (std::size_t i = begin; i < pair.source.size(); ++i) {
    std::string plain;
    for (char32_t cp : utf8::decode(pair.source[i])) {
      char letter;
      if (cp >= U'a' && cp <= U'z') {
        letter = static_cast<char>(cp);
      } else if (static_cast<std::int64_t>(cp) >= spec.script_offset &&
                 static_cast<std::int64_t>(cp) < spec.script_offset + kScriptLetters) {
        letter = static_cast<char>('a' + (cp - spec.script_offset));
      } else {
        throw Error("source character outside the script of '" + spec.id + "'");
      }
      plain.push_back(cipher.decrypt(letter));
    }
    words.push_back(std::move(plain));
  }
  return unreorder(std::move(words), spec.reorder);
}

std::vector<std::string> corrupt_target(const std::vector<std::string>& target, Rng& rng) {
  std::vector<std::string> out = target;
  const auto n = out.size();
  if (n >= 2 && rng.bernoulli(0.25)) {
    const std::size_t min_keep = (n + 1) / 2;
    const std::size_t keep = min_keep + rng.uniform_int(n - min_keep);
    out.resize(keep);
    return out;
  }
  const auto& words = lexicon();
  const std::size_t changes = 1 + rng.uniform_int(std::max<std::size_t>(1, n / 3));
  std::vector<std::size_t> positions(n);
  std::iota(positions.begin(), positions.end(), 0);
  rng.shuffle(std::span<std::size_t>(positions));
  for (std::size_t c = 0; c < changes && c < n; ++c) {
    auto& slot = out[positions[c]];
    auto idx = rng.uniform_int(words.size() - 1);
    const auto current = static_cast<std::size_t>(std::find(words.begin(), words.end(), slot) - words.begin());
    if (idx >= current) ++idx;
    slot = words[idx];
  }
  return out;
}

Corpus make_synthetic_corpus(const std::vector<LanguageSpec>& specs, std::uint64_t seed) {
  validate_specs(specs);
  std::vector<const LanguageSpec*> ordered;
  for (const auto& s : specs) ordered.push_back(&s);
  std::sort(ordered.begin(), ordered.end(), [](const auto* a, const auto* b) { return a->id < b->id; });

  Corpus out;
  Rng root(seed);
  for (const auto* spec : ordered) {
    Rng rng = root.fork(stable_hash("train:" + spec->id));
    for (std::int64_t i = 0; i < spec->pair_count; ++i) {
      SentencePair pair;
      pair.language = spec->id;
      const auto clean = sample_sentence(rng);
      pair.source = render_source(clean, *spec);
      pair.target = rng.bernoulli(spec->noise_rate) ? corrupt_target(clean, rng) : clean;
      pair.similarity = token_f1(pair.target, clean);
      out.push_back(std::move(pair));
    }
  }
  return out;
}

Corpus make_clean_set(const std::vector<LanguageSpec>& specs, std::int64_t per_language, std::uint64_t seed,
                      const std::string& salt) {
  validate_specs(specs);
  std::vector<const LanguageSpec*> ordered;
  for (const auto& s : specs) ordered.push_back(&s);
  std::sort(ordered.begin(), ordered.end(), [](const auto* a, const auto* b) { return a->id < b->id; });

  Corpus out;
  Rng root(seed);
  for (const auto* spec : ordered) {
    Rng rng = root.fork(stable_hash(salt + ":" + spec->id));
    for (std::int64_t i = 0; i < per_language; ++i) {
      SentencePair pair;
      pair.language = spec->id;
      pair.target = sample_sentence(rng);
      pair.source = render_source(pair.target, *spec);
      pair.similarity = 1.0;
      out.push_back(std::move(pair));
    }
  }
  return out;
}

std::vector<LanguageSpec> table1_specs(double scale, double noise_rate) {
  struct Row {
    const char* id;
    const char* family;
    std::int32_t offset;
    double millions;
  };
  // Native blocks follow the Indic Unicode layout; languages that share a
  // block use its two halves.
  static const Row rows[] = {
      {"as", "eastern", 0x09C0, 0.1}, {"or", "eastern", 0x0B00, 1.0},  {"pa", "western", 0x0A00, 3.0},
      {"gu", "western", 0x0A80, 3.1}, {"mr", "western", 0x0940, 3.6},  {"kn", "dravidian", 0x0C80, 4.1},
      {"te", "dravidian", 0x0C00, 4.9}, {"ta", "dravidian", 0x0B80, 5.3}, {"ml", "dravidian", 0x0D00, 5.9},
      {"bn", "eastern", 0x0980, 8.6}, {"hi", "western", 0x0900, 10.1},
  };
  std::vector<LanguageSpec> out;
  for (const auto& r : rows) {
    LanguageSpec s;
    s.id = r.id;
    s.family = r.family;
    s.script_offset = r.offset;
    s.reorder = family_reorder(s.family);
    s.pair_count = static_cast<std::int64_t>(std::llround(r.millions * 1e6 * scale));
    s.noise_rate = noise_rate;
    out.push_back(std::move(s));
  }
  return out;
}

ReorderRule family_reorder(const std::string& family) {
  if (family == "eastern") return ReorderRule::swap_pairs;
  if (family == "dravidian") return ReorderRule::reverse;
  return ReorderRule::identity;
}

void score_corpus(Corpus& corpus, const std::vector<LanguageSpec>& specs) {
  for (auto& pair : corpus) {
    pair.similarity = similarity_score(pair, oracle_target(pair, find_spec(specs, pair.language)));
  }
}

}  // namespace distillkit::corpus

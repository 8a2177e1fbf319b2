#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "distillkit/corpus/types.hpp"
#include "distillkit/numerics/rng.hpp"

namespace distillkit::corpus {

// Closed "English" vocabulary of the toy grammar, all lowercase a-z words.
const std::vector<std::string>& lexicon();

// Samples a grammatical sentence with min_len <= length <= max_len.
std::vector<std::string> sample_sentence(numerics::Rng& rng, int min_len = 3, int max_len = 20);

// Letter substitution shared by a family, plus two language-specific swaps.
// Independent of the corpus seed.
class LetterCipher {
 public:
  explicit LetterCipher(const LanguageSpec& spec);

  char encrypt(char c) const;
  char decrypt(char c) const;
  std::string encrypt_word(const std::string& word) const;
  std::string decrypt_word(const std::string& word) const;

 private:
  std::array<char, kScriptLetters> forward_{};
  std::array<char, kScriptLetters> inverse_{};
};

// Word order used by the three synthetic families.
ReorderRule family_reorder(const std::string& family);

std::vector<std::string> reorder(std::vector<std::string> words, ReorderRule rule);
std::vector<std::string> unreorder(std::vector<std::string> words, ReorderRule rule);

// Native-script source for an English target.
std::vector<std::string> render_source(const std::vector<std::string>& target, const LanguageSpec& spec);

// Recovers the clean target from a source in native or unified script
// (a leading language tag is skipped).
std::vector<std::string> oracle_target(const SentencePair& pair, const LanguageSpec& spec);

// Replaces some words or truncates; the result always differs as a multiset.
std::vector<std::string> corrupt_target(const std::vector<std::string>& target, numerics::Rng& rng);

// Native-script training corpus, scored against the oracle, ordered by
// language then index.
Corpus make_synthetic_corpus(const std::vector<LanguageSpec>& specs, std::uint64_t seed);

// Noise-free native-script pairs; `salt` separates dev and test streams.
Corpus make_clean_set(const std::vector<LanguageSpec>& specs, std::int64_t per_language, std::uint64_t seed,
                      const std::string& salt);

// Eleven languages with pair counts scaled from millions by `scale`
// (1e-3 gives 100 pairs for the smallest and 10,100 for the largest).
std::vector<LanguageSpec> table1_specs(double scale = 1e-3, double noise_rate = 0.85);

// Recomputes every similarity from the oracle target.
void score_corpus(Corpus& corpus, const std::vector<LanguageSpec>& specs);

}  // namespace distillkit::corpus

#pragma once

#include <string>
#include <vector>

#include "distillkit/corpus/types.hpp"

namespace distillkit::corpus {

std::string language_tag(const std::string& language);
bool is_language_tag(const std::string& token);

// Maps native-script source tokens into the shared a-z space and prepends
// the language tag. Throws Error on characters outside the language's range.
SentencePair unify_script(const SentencePair& pair, const LanguageSpec& spec);

// Inverse of unify_script: strips the tag and re-applies the script offset.
SentencePair native_script(const SentencePair& pair, const LanguageSpec& spec);

Corpus unify_corpus(const Corpus& corpus, const std::vector<LanguageSpec>& specs);

}  // namespace distillkit::corpus

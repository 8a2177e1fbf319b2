#include "distillkit/corpus/script.hpp"

#include "distillkit/corpus/utf8.hpp"
#include "distillkit/errors.hpp"

namespace distillkit::corpus {

std::string language_tag(const std::string& language) { return "__" + language + "__"; }

bool is_language_tag(const std::string& token) {
  return token.size() > 4 && token.starts_with("__") && token.ends_with("__");
}

SentencePair unify_script(const SentencePair& pair, const LanguageSpec& spec) {
  if (pair.language != spec.id) throw Error("pair language '" + pair.language + "' does not match '" + spec.id + "'");
  SentencePair out = pair;
  out.source.clear();
  out.source.reserve(pair.source.size() + 1);
  out.source.push_back(language_tag(spec.id));
  for (const auto& token : pair.source) {
    std::string unified;
    for (char32_t cp : utf8::decode(token)) {
      const auto offset = static_cast<std::int64_t>(cp) - spec.script_offset;
      if (offset < 0 || offset >= kScriptLetters) {
        throw Error("token '" + token + "' outside the script range of '" + spec.id + "'");
      }
      unified.push_back(static_cast<char>('a' + offset));
    }
    out.source.push_back(std::move(unified));
  }
  return out;
}

SentencePair native_script(const SentencePair& pair, const LanguageSpec& spec) {
  SentencePair out = pair;
  out.source.clear();
  for (const auto& token : pair.source) {
    if (is_language_tag(token)) continue;
    std::string native;
    for (char c : token) {
      if (c < 'a' || c > 'z') throw Error("token '" + token + "' is not in the unified script");
      native += utf8::encode(static_cast<char32_t>(spec.script_offset + (c - 'a')));
    }
    out.source.push_back(std::move(native));
  }
  return out;
}

Corpus unify_corpus(const Corpus& corpus, const std::vector<LanguageSpec>& specs) {
  Corpus out;
  out.reserve(corpus.size());
  for (const auto& pair : corpus) out.push_back(unify_script(pair, find_spec(specs, pair.language)));
  return out;
}

}  // namespace distillkit::corpus

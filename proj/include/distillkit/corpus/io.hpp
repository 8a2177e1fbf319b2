#pragma once

#include <filesystem>
#include <string>

#include "distillkit/corpus/types.hpp"

namespace distillkit::corpus {

// One record per line: language, provenance, similarity or "-", source and
// target tokens joined by single spaces, separated by tabs. Records are
// written in corpus order; shortest round-trip formatting keeps doubles exact.
std::string format_corpus(const Corpus& corpus);
Corpus parse_corpus(const std::string& text);

void write_corpus(const std::filesystem::path& path, const Corpus& corpus);
Corpus read_corpus(const std::filesystem::path& path);

// Stable sort by language id, keeping the original index order within a language.
void sort_by_language(Corpus& corpus);

std::string join_tokens(const std::vector<std::string>& tokens);
std::vector<std::string> split_tokens(const std::string& text);

}  // namespace distillkit::corpus

#include "distillkit/corpus/io.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "distillkit/errors.hpp"

namespace distillkit::corpus {

std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

std::vector<std::string> split_tokens(const std::string& text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find(' ', start);
    if (end == std::string::npos) end = text.size();
    if (end > start) out.push_back(text.substr(start, end - start));
    start = end + 1;
  }
  return out;
}

std::string format_corpus(const Corpus& corpus) {
  std::string out;
  char buf[64];
  for (const auto& p : corpus) {
    out += p.language;
    out += '\t';
    out += to_string(p.provenance);
    out += '\t';
    if (p.similarity) {
      auto [end, ec] = std::to_chars(buf, buf + sizeof buf, *p.similarity);
      out.append(buf, end);
    } else {
      out += '-';
    }
    out += '\t';
    out += join_tokens(p.source);
    out += '\t';
    out += join_tokens(p.target);
    out += '\n';
  }
  return out;
}

Corpus parse_corpus(const std::string& text) {
  Corpus out;
  std::istringstream in(text);
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (;;) {
      const auto tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() != 5) throw Error("corpus line " + std::to_string(line_no) + ": expected 5 fields");
    SentencePair p;
    p.language = fields[0];
    p.provenance = provenance_from_string(fields[1]);
    if (fields[2] != "-") {
      double v = 0.0;
      const auto* end = fields[2].data() + fields[2].size();
      auto [ptr, ec] = std::from_chars(fields[2].data(), end, v);
      if (ec != std::errc() || ptr != end) throw Error("corpus line " + std::to_string(line_no) + ": bad similarity");
      p.similarity = v;
    }
    p.source = split_tokens(fields[3]);
    p.target = split_tokens(fields[4]);
    if (p.source.empty() || p.target.empty()) {
      throw Error("corpus line " + std::to_string(line_no) + ": empty sequence");
    }
    out.push_back(std::move(p));
  }
  return out;
}

void write_corpus(const std::filesystem::path& path, const Corpus& corpus) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << format_corpus(corpus);
  if (!out) throw Error("write failed for " + path.string());
}

Corpus read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PreconditionError("missing corpus " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_corpus(buf.str());
}

void sort_by_language(Corpus& corpus) {
  std::stable_sort(corpus.begin(), corpus.end(),
                   [](const SentencePair& a, const SentencePair& b) { return a.language < b.language; });
}

}  // namespace distillkit::corpus

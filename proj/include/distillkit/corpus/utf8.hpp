#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace distillkit::corpus::utf8 {

std::string encode(char32_t cp);

// Throws distillkit::Error on malformed input.
std::u32string decode(std::string_view text);

// Splits a UTF-8 string into one string per code point.
std::vector<std::string> split_code_points(std::string_view text);

}  // namespace distillkit::corpus::utf8

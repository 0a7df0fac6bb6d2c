#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace privq::unicode {

/// Decodes UTF-8; invalid bytes decode to U+FFFD one byte at a time.
std::u32string decode(std::string_view s);
void append_utf8(std::string& out, char32_t cp);
std::string encode(std::u32string_view s);

/// Simple case folding for ASCII, Latin-1, Latin Extended-A, Greek and
/// Cyrillic. Other code points map to themselves.
char32_t to_lower(char32_t cp);

bool is_space(char32_t cp);

/// Letters and numbers. ASCII is exact; above ASCII everything except
/// punctuation/symbol blocks counts as a word character.
bool is_word(char32_t cp);

}  // namespace privq::unicode

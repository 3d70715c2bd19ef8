#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace dagrag {

// Lowercases ASCII letters, turns ASCII punctuation into spaces, splits on
// whitespace and drops empty terms. Bytes outside the ASCII range are kept
// verbatim so multi-byte UTF-8 text survives tokenization.
std::vector<std::string> normalize(std::string_view text);

// normalize(text).size() without materializing the terms.
std::size_t token_count(std::string_view text);

// Cuts `text` so that normalize(result) has at most `max_tokens` terms.
// The cut happens in the original string, right after the last byte of the
// final kept term, so the surviving prose stays readable.
std::string truncate_to_tokens(const std::string& text, std::size_t max_tokens);

}  // namespace dagrag

#include "dagrag/text.hpp"

#include <cctype>

namespace dagrag {

namespace {

inline bool is_term_byte(unsigned char c) {
    return std::isalnum(c) != 0 || c >= 0x80;
}

inline char fold(unsigned char c) {
    return c < 0x80 ? static_cast<char>(std::tolower(c)) : static_cast<char>(c);
}

}  // namespace

std::vector<std::string> normalize(std::string_view text) {
    std::vector<std::string> terms;
    std::string current;
    for (unsigned char c : text) {
        if (is_term_byte(c)) {
            current.push_back(fold(c));
        } else if (!current.empty()) {
            terms.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) {
        terms.push_back(std::move(current));
    }
    return terms;
}

std::size_t token_count(std::string_view text) {
    std::size_t count = 0;
    bool in_term = false;
    for (unsigned char c : text) {
        if (is_term_byte(c)) {
            if (!in_term) {
                ++count;
                in_term = true;
            }
        } else {
            in_term = false;
        }
    }
    return count;
}

std::string truncate_to_tokens(const std::string& text, std::size_t max_tokens) {
    if (max_tokens == 0) {
        return "";
    }
    std::size_t count = 0;
    bool in_term = false;
    std::size_t last_term_end = 0;
    for (std::size_t i = 0; i < text.size(); ++i) {
        unsigned char c = static_cast<unsigned char>(text[i]);
        if (is_term_byte(c)) {
            if (!in_term) {
                if (count == max_tokens) {
                    return text.substr(0, last_term_end);
                }
                ++count;
                in_term = true;
            }
            last_term_end = i + 1;
        } else {
            in_term = false;
        }
    }
    return text;
}

}  // namespace dagrag

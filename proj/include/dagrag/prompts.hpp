#pragma once

#include <map>
#include <string>
#include <vector>

#include "dagrag/llm.hpp"

namespace dagrag {

enum class TemplateName {
    decompose,
    merge,
    resolve,
    summarize,
    compose,
    judge,
    augment,
    proceed,
};

std::string to_string(TemplateName name);

// Placeholders appear in `body` only: {name} where name is lowercase
// [a-z][a-z0-9_]*. Any other braced text is literal, so JSON examples can be
// written directly in the body. `system` is never substituted.
struct PromptTemplate {
    TemplateName name;
    std::string system;
    std::string body;
};

const PromptTemplate& get_template(TemplateName name);

// Placeholder names referenced by the body, in first-appearance order,
// deduplicated.
std::vector<std::string> placeholders(const PromptTemplate& tpl);

// One system turn plus one user turn, with every placeholder in the body
// replaced by its binding. Substituted values are inserted verbatim and
// never rescanned. Throws MissingBinding.
std::vector<ChatTurn> render(const PromptTemplate& tpl,
                             const std::map<std::string, std::string>& bindings);

}  // namespace dagrag

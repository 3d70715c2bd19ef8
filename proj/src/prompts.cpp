#include "dagrag/prompts.hpp"

#include <array>
#include <stdexcept>

#include "dagrag/errors.hpp"

namespace dagrag {

namespace {

constexpr const char* kDecomposeSystem =
    "You decompose complex questions into minimal subquestions for step-by-step retrieval "
    "from a text corpus. Reply with strict JSON only, no prose before or after it.";

constexpr const char* kDecomposeBody =
    "Decompose the question below into at most {max_subproblems} atomic subquestions, each "
    "answerable by retrieving passages from a corpus. Order them so that prerequisites come "
    "first. When a subquestion needs the answer of an earlier one, write that reference "
    "inside its text as the placeholder {pN} where N is the 1-based position of the earlier "
    "subquestion, and record the dependency as an edge. A question that is already atomic "
    "becomes a single subquestion.\n"
    "\n"
    "Reply with JSON exactly of the form\n"
    "{\"subproblems\": [\"...\", \"...\"], \"edges\": [[0, 1]]}\n"
    "where each edge [i, j] gives 0-based list positions and means subquestion j depends on "
    "subquestion i.\n"
    "\n"
    "Question: {question}";

constexpr const char* kMergeSystem =
    "You write retrieval queries for a search engine. Reply with strict JSON only, no prose "
    "before or after it.";

constexpr const char* kMergeBody =
    "Combine the subquestions below into one self-contained retrieval query that covers "
    "every information need they express. Do not answer them and do not drop any of them.\n"
    "\n"
    "Reply with JSON exactly of the form\n"
    "{\"query\": \"...\"}\n"
    "\n"
    "Subquestions:\n"
    "{subproblems}";

constexpr const char* kSummarizeSystem =
    "You maintain the running notes of a research assistant. Reply with the notes text only.";

constexpr const char* kSummarizeBody =
    "Update the notes with the facts from the new passages that help answer the question. "
    "Keep every fact the notes already carry that is still relevant, drop boilerplate, and "
    "keep the notes under 300 words. Reply with the updated notes only.\n"
    "\n"
    "Question: {question}\n"
    "\n"
    "Current notes:\n"
    "{memory}\n"
    "\n"
    "New passages:\n"
    "{passages}";

constexpr const char* kResolveSystem =
    "You answer subquestions strictly from the provided notes, never from outside knowledge. "
    "Reply with strict JSON only, no prose before or after it.";

constexpr const char* kResolveBody =
    "Answer each subquestion below using only the notes. Keep each answer to a short "
    "phrase. Include one entry per subquestion, copying its id exactly.\n"
    "\n"
    "Reply with JSON exactly of the form\n"
    "{\"answers\": [{\"id\": \"...\", \"answer\": \"...\"}]}\n"
    "\n"
    "Question being investigated: {question}\n"
    "\n"
    "Notes:\n"
    "{memory}\n"
    "\n"
    "Subquestions:\n"
    "{subproblems}";

constexpr const char* kComposeSystem =
    "You produce final answers grounded in collected evidence. Reply with the answer only.";

constexpr const char* kComposeBody =
    "Answer the question using the resolved subquestions and the notes. Reply with the "
    "answer alone: a short phrase or sentence, no explanation.\n"
    "\n"
    "Question: {question}\n"
    "\n"
    "Resolved subquestions:\n"
    "{sub_answers}\n"
    "\n"
    "Notes:\n"
    "{memory}";

constexpr const char* kJudgeSystem =
    "You are a strict grader. Reply with exactly one word: yes or no.";

constexpr const char* kJudgeBody =
    "Question: {question}\n"
    "Gold answer: {gold}\n"
    "Candidate answer: {generated}\n"
    "\n"
    "Does the candidate convey the same answer as the gold? Reply yes or no.";

constexpr const char* kAugmentSystem =
    "You check whether a reasoning plan is missing a step. Reply with strict JSON only, no "
    "prose before or after it.";

constexpr const char* kAugmentBody =
    "Given the question, the subquestions answered so far, and the notes, decide whether "
    "one more subquestion must be answered before the question itself can be. If nothing "
    "is missing, reply\n"
    "{\"augment\": false, \"subproblem\": null, \"parents\": []}\n"
    "If a subquestion is missing, reply\n"
    "{\"augment\": true, \"subproblem\": \"...\", \"parents\": [\"...\"]}\n"
    "where parents lists the ids of answered subquestions the new one builds on. Reply "
    "with JSON exactly in one of those two forms.\n"
    "\n"
    "Question: {question}\n"
    "\n"
    "Answered subquestions:\n"
    "{resolved}\n"
    "\n"
    "Notes:\n"
    "{memory}";

constexpr const char* kProceedSystem =
    "You control an iterative retrieval loop. Reply with strict JSON only, no prose before "
    "or after it.";

constexpr const char* kProceedBody =
    "The subquestions below were just attempted. Review the notes and decide whether to "
    "move on to the next step or to retry the same subquestions with one more retrieval "
    "pass. Reply with JSON exactly of the form\n"
    "{\"proceed\": true}\n"
    "to move on, or\n"
    "{\"proceed\": false}\n"
    "to retry.\n"
    "\n"
    "Subquestions just attempted:\n"
    "{subproblems}\n"
    "\n"
    "Notes:\n"
    "{memory}";

const std::array<PromptTemplate, 8>& all_templates() {
    static const std::array<PromptTemplate, 8> templates = {{
        {TemplateName::decompose, kDecomposeSystem, kDecomposeBody},
        {TemplateName::merge, kMergeSystem, kMergeBody},
        {TemplateName::resolve, kResolveSystem, kResolveBody},
        {TemplateName::summarize, kSummarizeSystem, kSummarizeBody},
        {TemplateName::compose, kComposeSystem, kComposeBody},
        {TemplateName::judge, kJudgeSystem, kJudgeBody},
        {TemplateName::augment, kAugmentSystem, kAugmentBody},
        {TemplateName::proceed, kProceedSystem, kProceedBody},
    }};
    return templates;
}

bool is_ident_start(char c) { return (c >= 'a' && c <= 'z') || c == '_'; }
bool is_ident_char(char c) {
    return is_ident_start(c) || (c >= '0' && c <= '9');
}

// A placeholder is "{name}" with name entirely lowercase identifier
// characters. Everything else, braces included, is literal text.
template <typename OnPlaceholder, typename OnLiteral>
void scan_body(const std::string& body, OnPlaceholder on_placeholder, OnLiteral on_literal) {
    std::size_t i = 0;
    while (i < body.size()) {
        if (body[i] == '{') {
            std::size_t j = i + 1;
            if (j < body.size() && is_ident_start(body[j])) {
                while (j < body.size() && is_ident_char(body[j])) ++j;
                if (j < body.size() && body[j] == '}') {
                    on_placeholder(body.substr(i + 1, j - i - 1));
                    i = j + 1;
                    continue;
                }
            }
        }
        on_literal(body[i]);
        ++i;
    }
}

}  // namespace

std::string to_string(TemplateName name) {
    switch (name) {
        case TemplateName::decompose: return "decompose";
        case TemplateName::merge: return "merge";
        case TemplateName::resolve: return "resolve";
        case TemplateName::summarize: return "summarize";
        case TemplateName::compose: return "compose";
        case TemplateName::judge: return "judge";
        case TemplateName::augment: return "augment";
        case TemplateName::proceed: return "proceed";
    }
    throw std::logic_error("unhandled TemplateName value");
}

const PromptTemplate& get_template(TemplateName name) {
    for (const auto& tpl : all_templates()) {
        if (tpl.name == name) return tpl;
    }
    throw std::logic_error("unhandled TemplateName value");
}

std::vector<std::string> placeholders(const PromptTemplate& tpl) {
    std::vector<std::string> names;
    scan_body(
        tpl.body,
        [&](std::string name) {
            for (const auto& seen : names) {
                if (seen == name) return;
            }
            names.push_back(std::move(name));
        },
        [](char) {});
    return names;
}

std::vector<ChatTurn> render(const PromptTemplate& tpl,
                             const std::map<std::string, std::string>& bindings) {
    std::string user;
    user.reserve(tpl.body.size());
    scan_body(
        tpl.body,
        [&](std::string name) {
            auto it = bindings.find(name);
            if (it == bindings.end()) {
                throw MissingBinding("template \"" + to_string(tpl.name) +
                                         "\" has no binding for placeholder {" + name + "}",
                                     name);
            }
            user += it->second;
        },
        [&](char c) { user += c; });
    return {{Role::system, tpl.system}, {Role::user, user}};
}

}  // namespace dagrag

#include <doctest.h>

#include <map>
#include <string>
#include <vector>

#include "dagrag/errors.hpp"
#include "dagrag/prompts.hpp"

using namespace dagrag;

namespace {

std::vector<std::string> names_of(TemplateName name) {
    return placeholders(get_template(name));
}

}  // namespace

TEST_CASE("every template exists with a system turn and a body") {
    for (auto name : {TemplateName::decompose, TemplateName::merge, TemplateName::resolve,
                      TemplateName::summarize, TemplateName::compose, TemplateName::judge,
                      TemplateName::augment, TemplateName::proceed}) {
        const auto& tpl = get_template(name);
        CHECK(tpl.name == name);
        CHECK_FALSE(tpl.system.empty());
        CHECK_FALSE(tpl.body.empty());
        CHECK_FALSE(to_string(name).empty());
    }
}

TEST_CASE("placeholders are reported in first-appearance order, deduplicated") {
    CHECK(names_of(TemplateName::decompose) ==
          std::vector<std::string>{"max_subproblems", "question"});
    CHECK(names_of(TemplateName::merge) == std::vector<std::string>{"subproblems"});
    CHECK(names_of(TemplateName::summarize) ==
          std::vector<std::string>{"question", "memory", "passages"});
    CHECK(names_of(TemplateName::resolve) ==
          std::vector<std::string>{"question", "memory", "subproblems"});
    CHECK(names_of(TemplateName::compose) ==
          std::vector<std::string>{"question", "sub_answers", "memory"});
    CHECK(names_of(TemplateName::judge) ==
          std::vector<std::string>{"question", "gold", "generated"});
    CHECK(names_of(TemplateName::augment) ==
          std::vector<std::string>{"question", "resolved", "memory"});
    CHECK(names_of(TemplateName::proceed) == std::vector<std::string>{"subproblems", "memory"});

    PromptTemplate twice{TemplateName::merge, "s", "{subproblems} and {subproblems} again"};
    CHECK(placeholders(twice) == std::vector<std::string>{"subproblems"});
}

TEST_CASE("render substitutes bindings into the user turn only") {
    PromptTemplate tpl{TemplateName::merge, "system text", "ask {subproblems} now"};
    auto turns = render(tpl, {{"subproblems", "Q1\nQ2"}});
    REQUIRE(turns.size() == 2);
    CHECK(turns[0].role == Role::system);
    CHECK(turns[0].content == "system text");
    CHECK(turns[1].role == Role::user);
    CHECK(turns[1].content == "ask Q1\nQ2 now");
}

TEST_CASE("render throws MissingBinding naming the placeholder") {
    const auto& tpl = get_template(TemplateName::judge);
    try {
        render(tpl, {{"question", "q"}, {"gold", "g"}});
        FAIL("expected MissingBinding");
    } catch (const MissingBinding& e) {
        CHECK(e.placeholder == "generated");
        CHECK(std::string(e.what()).find("generated") != std::string::npos);
    }
}

TEST_CASE("braced text that is not a lowercase identifier stays literal") {
    PromptTemplate tpl{TemplateName::merge,
                       "s",
                       "Shape: {\"query\": \"...\"} keep {pN} and {Q} and {} and {2x} "
                       "but fill {subproblems}."};
    CHECK(placeholders(tpl) == std::vector<std::string>{"subproblems"});
    auto turns = render(tpl, {{"subproblems", "X"}});
    CHECK(turns[1].content ==
          "Shape: {\"query\": \"...\"} keep {pN} and {Q} and {} and {2x} but fill X.");

    // The shipped decompose body carries a JSON example and the literal {pN}
    // reference marker; both must survive rendering untouched.
    auto rendered = render(get_template(TemplateName::decompose),
                           {{"max_subproblems", "6"}, {"question", "who?"}});
    CHECK(rendered[1].content.find("{\"subproblems\":") != std::string::npos);
    CHECK(rendered[1].content.find("{pN}") != std::string::npos);
    CHECK(rendered[1].content.find("at most 6 atomic") != std::string::npos);
    CHECK(rendered[1].content.find("who?") != std::string::npos);
}

TEST_CASE("binding values are inserted verbatim, never rescanned") {
    PromptTemplate tpl{TemplateName::merge, "s", "a {subproblems} b"};
    auto turns = render(tpl, {{"subproblems", "{subproblems} {question}"}});
    CHECK(turns[1].content == "a {subproblems} {question} b");
}

TEST_CASE("unterminated brace at end of body is literal") {
    PromptTemplate tpl{TemplateName::merge, "s", "x {subproblems"};
    CHECK(placeholders(tpl).empty());
    auto turns = render(tpl, {});
    CHECK(turns[1].content == "x {subproblems");
}

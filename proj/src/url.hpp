#pragma once

#include <string>

namespace dagrag::detail {

struct SplitUrl {
    std::string base;  // scheme://host[:port]
    std::string path;  // leading slash, "/" when the url has no path
};

inline SplitUrl split_url(const std::string& url) {
    auto scheme_end = url.find("://");
    auto search_from = scheme_end == std::string::npos ? 0 : scheme_end + 3;
    auto path_start = url.find('/', search_from);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

}  // namespace dagrag::detail

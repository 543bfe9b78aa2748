#include "knnicl/net.hpp"

#include <httplib.h>

#include <cstdlib>
#include <stdexcept>

namespace knnicl::net {

namespace {

struct SplitUrl {
    std::string origin; // scheme://host[:port]
    std::string path;
};

SplitUrl split_url(const std::string& url) {
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw std::invalid_argument("URL without scheme: " + url);
    auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

} // namespace

HttpResponse post_json(const std::string& url, const std::string& body, const std::string& bearer_token,
                       std::chrono::seconds timeout) {
    auto parts = split_url(url);
    httplib::Client client(parts.origin);
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);
    httplib::Headers headers;
    if (!bearer_token.empty()) headers.emplace("Authorization", "Bearer " + bearer_token);
    auto res = client.Post(parts.path, headers, body, "application/json");
    if (!res) throw std::runtime_error("POST " + url + ": " + httplib::to_string(res.error()));
    return {res->status, res->body};
}

std::string env_or_empty(const std::string& name) {
    if (name.empty()) return {};
    const char* v = std::getenv(name.c_str());
    return v ? std::string(v) : std::string();
}

} // namespace knnicl::net

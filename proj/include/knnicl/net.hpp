#pragma once

#include <chrono>
#include <string>

namespace knnicl::net {

struct HttpResponse {
    int status = 0;
    std::string body;
};

/// POSTs a JSON body to an absolute http(s) URL. Returns the response;
/// throws std::runtime_error on a connection failure. `bearer_token` is sent
/// as an Authorization header when non-empty.
HttpResponse post_json(const std::string& url, const std::string& body, const std::string& bearer_token,
                       std::chrono::seconds timeout);

/// Value of the named environment variable, or empty.
std::string env_or_empty(const std::string& name);

} // namespace knnicl::net

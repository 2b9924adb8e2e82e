#pragma once

#include "falsify/error.hpp"

#include <httplib.h>

#include <chrono>
#include <memory>
#include <string>

namespace falsify::detail {

struct UrlParts {
    std::string origin;  // scheme://host[:port]
    std::string path;    // begins with '/'
};

inline UrlParts split_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    require(scheme_end != std::string::npos, "URL lacks a scheme: " + url, Errc::ConfigError);
    const auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

inline std::unique_ptr<httplib::Client> make_client(const std::string& origin, double timeout_s) {
    auto client = std::make_unique<httplib::Client>(origin);
    const auto us = std::chrono::microseconds(static_cast<long long>(timeout_s * 1e6));
    const auto sec = std::chrono::duration_cast<std::chrono::seconds>(us);
    const auto rest = us - sec;
    client->set_connection_timeout(sec.count(), rest.count());
    client->set_read_timeout(sec.count(), rest.count());
    client->set_write_timeout(sec.count(), rest.count());
    return client;
}

}  // namespace falsify::detail

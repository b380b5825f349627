#pragma once

// Live HTTPS transport for AudioFetcher. Kept separate so the rest of the
// library does not pull in the HTTP client.

#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include <httplib.h>

#include <chrono>
#include <string>

#include "ipascribe/corpus.hpp"

namespace ipascribe {

class HttpTransport : public Transport {
 public:
  explicit HttpTransport(std::chrono::seconds timeout = std::chrono::seconds(30),
                         std::string user_agent = "ipascribe/0.1")
      : timeout_(timeout), user_agent_(std::move(user_agent)) {}

  HttpResponse get(const std::string& url) override {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw ConfigError("not an absolute URL: " + url);
    const auto path_start = url.find('/', scheme_end + 3);
    const std::string origin = url.substr(0, path_start);
    const std::string path = path_start == std::string::npos ? "/" : url.substr(path_start);

    httplib::Client client(origin);
    client.set_follow_location(true);
    client.set_connection_timeout(timeout_);
    client.set_read_timeout(timeout_);
    auto res = client.Get(path, httplib::Headers{{"User-Agent", user_agent_}});
    if (!res) {
      const auto err = res.error();
      if (err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read)
        throw Timeout("request timed out: " + url);
      throw IoError("request failed (" + httplib::to_string(err) + "): " + url);
    }
    return {res->status, res->body};
  }

 private:
  std::chrono::seconds timeout_;
  std::string user_agent_;
};

}  // namespace ipascribe

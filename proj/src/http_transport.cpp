// The only translation unit that includes cpp-httplib.
#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include "sabm/provider.hpp"

namespace sabm {

namespace {

class HttplibTransport final : public HttpTransport {
 public:
  explicit HttplibTransport(int timeout_seconds) : timeout_(timeout_seconds) {}

  HttpResult post(const std::string& base_url, const std::string& path,
                  const std::map<std::string, std::string>& headers, const std::string& body) override {
    httplib::Client client(base_url);
    client.set_connection_timeout(timeout_, 0);
    client.set_read_timeout(timeout_, 0);
    client.set_write_timeout(timeout_, 0);
    httplib::Headers h;
    std::string content_type = "application/json";
    for (const auto& [k, v] : headers) {
      if (k == "Content-Type") {
        content_type = v;
      } else {
        h.emplace(k, v);
      }
    }
    auto res = client.Post(path, h, body, content_type);
    HttpResult out;
    if (!res) {
      out.error = httplib::to_string(res.error());
      return out;
    }
    out.status = res->status;
    out.body = res->body;
    return out;
  }

 private:
  int timeout_;
};

}  // namespace

std::unique_ptr<HttpTransport> make_httplib_transport(int timeout_seconds) {
  return std::make_unique<HttplibTransport>(timeout_seconds);
}

}  // namespace sabm

#include "support/http_client.hpp"

#include <httplib.h>

#include "support/fixtures.hpp"

namespace edgeai::testing {

namespace {

HttpResult convert(const httplib::Result& result)
{
  HttpResult out;
  if (!result) {
    return out;
  }
  out.status = result->status;
  out.body = result->body;
  for (const auto& [key, value] : result->headers) {
    out.headers[key] = value;
  }
  return out;
}

httplib::Client client(const std::string& host, int port)
{
  httplib::Client c(host, port);
  c.set_connection_timeout(2, 0);
  c.set_read_timeout(15, 0);
  return c;
}

}  // namespace

HttpResult http_get(const std::string& host, int port, const std::string& path)
{
  auto c = client(host, port);
  return convert(c.Get(path));
}

HttpResult http_post(const std::string& host, int port, const std::string& path,
                     const std::string& body, const std::string& content_type)
{
  auto c = client(host, port);
  return convert(c.Post(path, body, content_type));
}

HttpResult http_patch(const std::string& host, int port, const std::string& path,
                      const std::string& body)
{
  auto c = client(host, port);
  return convert(c.Patch(path, body, "application/json"));
}

SseReader::SseReader(std::string host, int port, std::string path)
{
  thread_ = std::thread([this, host = std::move(host), port, path = std::move(path)] {
    httplib::Client c(host, port);
    c.set_connection_timeout(2, 0);
    c.set_read_timeout(30, 0);
    (void)c.Get(path, [this](const char* data, std::size_t n) {
      feed(data, n);
      return !stopping_.load();
    });
    finished_ = true;
  });
}

SseReader::~SseReader()
{
  stop();
}

void SseReader::stop()
{
  stopping_ = true;
  if (thread_.joinable()) {
    thread_.join();
  }
}

void SseReader::feed(const char* data, std::size_t n)
{
  std::lock_guard lock(mutex_);
  buffer_.append(data, n);
  std::size_t end;
  while ((end = buffer_.find("\n\n")) != std::string::npos) {
    const std::string block = buffer_.substr(0, end);
    buffer_.erase(0, end + 2);
    SseEvent event;
    bool any = false;
    std::size_t pos = 0;
    while (pos <= block.size()) {
      std::size_t line_end = block.find('\n', pos);
      if (line_end == std::string::npos) {
        line_end = block.size();
      }
      const std::string line = block.substr(pos, line_end - pos);
      pos = line_end + 1;
      if (line.empty()) {
        continue;
      }
      if (line[0] == ':') {
        ++comments_;
        continue;
      }
      const auto colon = line.find(':');
      const std::string field = line.substr(0, colon);
      std::string value = colon == std::string::npos ? "" : line.substr(colon + 1);
      if (!value.empty() && value[0] == ' ') {
        value.erase(0, 1);
      }
      if (field == "id") {
        event.id = std::stoll(value);
      } else if (field == "event") {
        event.event = value;
      } else if (field == "data") {
        event.data += event.data.empty() ? value : "\n" + value;
      }
      any = true;
    }
    if (any) {
      events_.push_back(std::move(event));
    }
  }
}

std::vector<SseEvent> SseReader::events() const
{
  std::lock_guard lock(mutex_);
  return events_;
}

std::size_t SseReader::size() const
{
  std::lock_guard lock(mutex_);
  return events_.size();
}

std::size_t SseReader::comments() const
{
  std::lock_guard lock(mutex_);
  return comments_;
}

bool SseReader::wait_for(std::size_t n, std::chrono::milliseconds timeout) const
{
  return wait_until([&] { return size() >= n; }, timeout);
}

}  // namespace edgeai::testing

#pragma once

// MQTT 3.1.1 control-packet encoding and decoding. Covers the subset the
// session and the test broker speak: CONNECT/CONNACK, PUBLISH (QoS 0/1),
// PUBACK, SUBSCRIBE/SUBACK, UNSUBSCRIBE/UNSUBACK, PINGREQ/PINGRESP and
// DISCONNECT.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace edgeai::mqtt {

enum class PacketType : std::uint8_t {
  Connect = 1,
  Connack = 2,
  Publish = 3,
  Puback = 4,
  Pubrec = 5,
  Pubrel = 6,
  Pubcomp = 7,
  Subscribe = 8,
  Suback = 9,
  Unsubscribe = 10,
  Unsuback = 11,
  Pingreq = 12,
  Pingresp = 13,
  Disconnect = 14,
};

inline constexpr std::uint32_t kMaxRemainingLength = 268'435'455;

struct Packet {
  PacketType type{};
  std::uint8_t flags = 0;
  std::string body;
};

struct ConnectPacket {
  std::string client_id;
  std::uint16_t keepalive_s = 0;
  std::uint8_t protocol_level = 4;
  bool clean_session = true;
};

struct PublishPacket {
  std::string topic;
  std::string payload;
  std::uint8_t qos = 0;
  std::uint16_t packet_id = 0;
  bool dup = false;
  bool retain = false;
};

struct SubscribePacket {
  std::uint16_t packet_id = 0;
  std::vector<std::pair<std::string, std::uint8_t>> filters;
};

struct UnsubscribePacket {
  std::uint16_t packet_id = 0;
  std::vector<std::string> filters;
};

class DecodeError : public std::exception {
 public:
  explicit DecodeError(std::string what) : what_(std::move(what)) {}
  [[nodiscard]] const char* what() const noexcept override { return what_.c_str(); }

 private:
  std::string what_;
};

[[nodiscard]] std::string encode_remaining_length(std::uint32_t length);

[[nodiscard]] std::string encode_connect(const ConnectPacket& packet);
[[nodiscard]] std::string encode_connack(bool session_present, std::uint8_t return_code);
[[nodiscard]] std::string encode_publish(const PublishPacket& packet);
[[nodiscard]] std::string encode_puback(std::uint16_t packet_id);
[[nodiscard]] std::string encode_subscribe(const SubscribePacket& packet);
[[nodiscard]] std::string encode_suback(std::uint16_t packet_id,
                                        const std::vector<std::uint8_t>& return_codes);
[[nodiscard]] std::string encode_unsubscribe(const UnsubscribePacket& packet);
[[nodiscard]] std::string encode_unsuback(std::uint16_t packet_id);
[[nodiscard]] std::string encode_pingreq();
[[nodiscard]] std::string encode_pingresp();
[[nodiscard]] std::string encode_disconnect();

[[nodiscard]] ConnectPacket parse_connect(const Packet& packet);
// Returns the CONNACK return code.
[[nodiscard]] std::uint8_t parse_connack(const Packet& packet);
[[nodiscard]] PublishPacket parse_publish(const Packet& packet);
[[nodiscard]] SubscribePacket parse_subscribe(const Packet& packet);
[[nodiscard]] UnsubscribePacket parse_unsubscribe(const Packet& packet);
// PUBACK, SUBACK and UNSUBACK lead with the packet identifier.
[[nodiscard]] std::uint16_t parse_packet_id(const Packet& packet);

// Incremental framer over a byte stream.
class PacketReader {
 public:
  void feed(std::string_view bytes);
  // Throws DecodeError on a malformed fixed header.
  [[nodiscard]] std::optional<Packet> next();
  [[nodiscard]] std::size_t buffered() const noexcept { return buffer_.size() - offset_; }

 private:
  std::string buffer_;
  std::size_t offset_ = 0;
};

}  // namespace edgeai::mqtt

#include "edgeai/mqtt_codec.hpp"

namespace edgeai::mqtt {

namespace {

void put_u16(std::string& out, std::uint16_t value)
{
  out.push_back(static_cast<char>(value >> 8));
  out.push_back(static_cast<char>(value & 0xff));
}

void put_string(std::string& out, std::string_view text)
{
  if (text.size() > 0xffff) {
    throw DecodeError("string field longer than 65535 bytes");
  }
  put_u16(out, static_cast<std::uint16_t>(text.size()));
  out.append(text);
}

std::string frame(PacketType type, std::uint8_t flags, std::string_view body)
{
  if (body.size() > kMaxRemainingLength) {
    throw DecodeError("packet body too large");
  }
  std::string out;
  out.reserve(body.size() + 5);
  out.push_back(static_cast<char>((static_cast<std::uint8_t>(type) << 4) | (flags & 0x0f)));
  out += encode_remaining_length(static_cast<std::uint32_t>(body.size()));
  out.append(body);
  return out;
}

class Cursor {
 public:
  explicit Cursor(std::string_view data) : data_(data) {}

  std::uint8_t u8()
  {
    need(1);
    return static_cast<std::uint8_t>(data_[pos_++]);
  }

  std::uint16_t u16()
  {
    need(2);
    const auto hi = static_cast<std::uint8_t>(data_[pos_]);
    const auto lo = static_cast<std::uint8_t>(data_[pos_ + 1]);
    pos_ += 2;
    return static_cast<std::uint16_t>((hi << 8) | lo);
  }

  std::string str()
  {
    const std::uint16_t length = u16();
    need(length);
    std::string out(data_.substr(pos_, length));
    pos_ += length;
    return out;
  }

  std::string rest()
  {
    std::string out(data_.substr(pos_));
    pos_ = data_.size();
    return out;
  }

  [[nodiscard]] bool done() const noexcept { return pos_ >= data_.size(); }

 private:
  void need(std::size_t n) const
  {
    if (pos_ + n > data_.size()) {
      throw DecodeError("truncated packet");
    }
  }

  std::string_view data_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_remaining_length(std::uint32_t length)
{
  std::string out;
  do {
    std::uint8_t byte = length % 128;
    length /= 128;
    if (length > 0) {
      byte |= 0x80;
    }
    out.push_back(static_cast<char>(byte));
  } while (length > 0);
  return out;
}

std::string encode_connect(const ConnectPacket& packet)
{
  std::string body;
  put_string(body, "MQTT");
  body.push_back(static_cast<char>(packet.protocol_level));
  body.push_back(static_cast<char>(packet.clean_session ? 0x02 : 0x00));
  put_u16(body, packet.keepalive_s);
  put_string(body, packet.client_id);
  return frame(PacketType::Connect, 0, body);
}

std::string encode_connack(bool session_present, std::uint8_t return_code)
{
  std::string body;
  body.push_back(static_cast<char>(session_present ? 1 : 0));
  body.push_back(static_cast<char>(return_code));
  return frame(PacketType::Connack, 0, body);
}

std::string encode_publish(const PublishPacket& packet)
{
  std::string body;
  put_string(body, packet.topic);
  if (packet.qos > 0) {
    put_u16(body, packet.packet_id);
  }
  body.append(packet.payload);
  const auto flags = static_cast<std::uint8_t>((packet.dup ? 0x08 : 0) | ((packet.qos & 0x03) << 1) |
                                               (packet.retain ? 0x01 : 0));
  return frame(PacketType::Publish, flags, body);
}

std::string encode_puback(std::uint16_t packet_id)
{
  std::string body;
  put_u16(body, packet_id);
  return frame(PacketType::Puback, 0, body);
}

std::string encode_subscribe(const SubscribePacket& packet)
{
  std::string body;
  put_u16(body, packet.packet_id);
  for (const auto& [filter, qos] : packet.filters) {
    put_string(body, filter);
    body.push_back(static_cast<char>(qos));
  }
  return frame(PacketType::Subscribe, 0x02, body);
}

std::string encode_suback(std::uint16_t packet_id, const std::vector<std::uint8_t>& return_codes)
{
  std::string body;
  put_u16(body, packet_id);
  for (auto rc : return_codes) {
    body.push_back(static_cast<char>(rc));
  }
  return frame(PacketType::Suback, 0, body);
}

std::string encode_unsubscribe(const UnsubscribePacket& packet)
{
  std::string body;
  put_u16(body, packet.packet_id);
  for (const auto& filter : packet.filters) {
    put_string(body, filter);
  }
  return frame(PacketType::Unsubscribe, 0x02, body);
}

std::string encode_unsuback(std::uint16_t packet_id)
{
  std::string body;
  put_u16(body, packet_id);
  return frame(PacketType::Unsuback, 0, body);
}

std::string encode_pingreq() { return frame(PacketType::Pingreq, 0, {}); }
std::string encode_pingresp() { return frame(PacketType::Pingresp, 0, {}); }
std::string encode_disconnect() { return frame(PacketType::Disconnect, 0, {}); }

ConnectPacket parse_connect(const Packet& packet)
{
  Cursor cursor(packet.body);
  if (cursor.str() != "MQTT") {
    throw DecodeError("unsupported protocol name");
  }
  ConnectPacket out;
  out.protocol_level = cursor.u8();
  const std::uint8_t flags = cursor.u8();
  out.clean_session = (flags & 0x02) != 0;
  out.keepalive_s = cursor.u16();
  out.client_id = cursor.str();
  return out;
}

std::uint8_t parse_connack(const Packet& packet)
{
  Cursor cursor(packet.body);
  (void)cursor.u8();
  return cursor.u8();
}

PublishPacket parse_publish(const Packet& packet)
{
  Cursor cursor(packet.body);
  PublishPacket out;
  out.dup = (packet.flags & 0x08) != 0;
  out.qos = static_cast<std::uint8_t>((packet.flags >> 1) & 0x03);
  out.retain = (packet.flags & 0x01) != 0;
  if (out.qos > 2) {
    throw DecodeError("invalid QoS");
  }
  out.topic = cursor.str();
  if (out.qos > 0) {
    out.packet_id = cursor.u16();
  }
  out.payload = cursor.rest();
  return out;
}

SubscribePacket parse_subscribe(const Packet& packet)
{
  Cursor cursor(packet.body);
  SubscribePacket out;
  out.packet_id = cursor.u16();
  while (!cursor.done()) {
    std::string filter = cursor.str();
    const std::uint8_t qos = cursor.u8();
    out.filters.emplace_back(std::move(filter), qos);
  }
  if (out.filters.empty()) {
    throw DecodeError("SUBSCRIBE without filters");
  }
  return out;
}

UnsubscribePacket parse_unsubscribe(const Packet& packet)
{
  Cursor cursor(packet.body);
  UnsubscribePacket out;
  out.packet_id = cursor.u16();
  while (!cursor.done()) {
    out.filters.push_back(cursor.str());
  }
  return out;
}

std::uint16_t parse_packet_id(const Packet& packet)
{
  Cursor cursor(packet.body);
  return cursor.u16();
}

void PacketReader::feed(std::string_view bytes)
{
  if (offset_ > 0 && offset_ == buffer_.size()) {
    buffer_.clear();
    offset_ = 0;
  } else if (offset_ > 65536) {
    buffer_.erase(0, offset_);
    offset_ = 0;
  }
  buffer_.append(bytes);
}

std::optional<Packet> PacketReader::next()
{
  const std::size_t available = buffer_.size() - offset_;
  if (available < 2) {
    return std::nullopt;
  }
  const auto header = static_cast<std::uint8_t>(buffer_[offset_]);
  std::uint32_t length = 0;
  std::uint32_t multiplier = 1;
  std::size_t index = 1;
  while (true) {
    if (index >= available) {
      return std::nullopt;
    }
    if (index > 4) {
      throw DecodeError("malformed remaining length");
    }
    const auto byte = static_cast<std::uint8_t>(buffer_[offset_ + index]);
    length += (byte & 0x7f) * multiplier;
    multiplier *= 128;
    ++index;
    if ((byte & 0x80) == 0) {
      break;
    }
  }
  if (available < index + length) {
    return std::nullopt;
  }
  const auto type = static_cast<std::uint8_t>(header >> 4);
  if (type == 0 || type == 15) {
    throw DecodeError("reserved packet type");
  }
  Packet packet;
  packet.type = static_cast<PacketType>(type);
  packet.flags = header & 0x0f;
  packet.body = buffer_.substr(offset_ + index, length);
  offset_ += index + length;
  return packet;
}

}  // namespace edgeai::mqtt

#include "sboxsim/sw_channel.hpp"

namespace sboxsim {

const char* sw_err_name(SwErr e) {
  switch (e) {
    case SwErr::Ok: return "Ok";
    case SwErr::Empty: return "Empty";
    case SwErr::AuthFailure: return "AuthFailure";
    case SwErr::FreshnessFailure: return "FreshnessFailure";
  }
  return "?";
}

crypto::AeadNonce SwChannel::make_nonce(unsigned direction,
                                        std::uint64_t counter) {
  crypto::AeadNonce nonce{};
  nonce[0] = static_cast<std::uint8_t>(direction & 1);
  for (int i = 0; i < 8; ++i) {
    nonce[1 + i] = static_cast<std::uint8_t>(counter >> (8 * i));
  }
  return nonce;
}

void SwChannel::send(unsigned direction, std::span<const std::uint8_t> payload) {
  direction &= 1;
  const std::uint64_t counter = ++send_counter_[direction];
  WireMessage msg;
  msg.counter = counter;
  msg.sealed = crypto::aead_seal(key_, make_nonce(direction, counter), payload);
  mailbox_[direction].push_back(std::move(msg));
}

SwErr SwChannel::recv(unsigned direction, std::vector<std::uint8_t>& out) {
  direction &= 1;
  out.clear();
  auto& box = mailbox_[direction];
  if (box.empty()) return SwErr::Empty;
  WireMessage msg = std::move(box.front());
  box.pop_front();
  // Strict next-counter: a skipped or stale counter means a dropped or
  // replayed message, surfaced instead of silently consumed.
  if (msg.counter != recv_counter_[direction] + 1) {
    return SwErr::FreshnessFailure;
  }
  if (!crypto::aead_open(key_, make_nonce(direction, msg.counter), msg.sealed,
                         out)) {
    return SwErr::AuthFailure;
  }
  ++recv_counter_[direction];
  return SwErr::Ok;
}

}  // namespace sboxsim

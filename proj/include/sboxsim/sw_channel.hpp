#pragma once

#include <cstdint>
#include <deque>
#include <span>
#include <vector>

#include "sboxsim/crypto.hpp"

namespace sboxsim {

enum class SwErr : std::uint8_t {
  Ok = 0,
  Empty,
  AuthFailure,
  FreshnessFailure,
};

const char* sw_err_name(SwErr e);

// Software-encrypted baseline channel over untrusted shared memory: AEAD
// with per-direction counters. The mailbox is plain memory the adversarial
// OS may reorder, drop or rewrite; tampering is detected, never consumed.
class SwChannel {
 public:
  struct WireMessage {
    std::uint64_t counter = 0;  // travels in the clear, bound via the nonce
    crypto::Sealed sealed;
  };

  explicit SwChannel(const crypto::AeadKey& key) : key_(key) {}

  void send(unsigned direction, std::span<const std::uint8_t> payload);
  SwErr recv(unsigned direction, std::vector<std::uint8_t>& out);

  // Untrusted memory, exposed for adversary scripts.
  std::deque<WireMessage>& mailbox(unsigned direction) {
    return mailbox_[direction & 1];
  }

  static crypto::AeadNonce make_nonce(unsigned direction,
                                      std::uint64_t counter);

 private:
  crypto::AeadKey key_;
  std::deque<WireMessage> mailbox_[2];
  std::uint64_t send_counter_[2] = {0, 0};
  std::uint64_t recv_counter_[2] = {0, 0};
};

}  // namespace sboxsim

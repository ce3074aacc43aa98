#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "sboxsim/types.hpp"

namespace sboxsim::crypto {

Digest sha256(std::span<const std::uint8_t> data);

// Incremental SHA-256, used for enclave measurement accumulation.
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(std::span<const std::uint8_t> data);
  Digest finish();

 private:
  void* ctx_;
};

inline constexpr std::size_t kAeadKeyBytes = 32;
inline constexpr std::size_t kAeadNonceBytes = 12;
inline constexpr std::size_t kAeadTagBytes = 16;

using AeadKey = std::array<std::uint8_t, kAeadKeyBytes>;
using AeadNonce = std::array<std::uint8_t, kAeadNonceBytes>;
using AeadTag = std::array<std::uint8_t, kAeadTagBytes>;

struct Sealed {
  std::vector<std::uint8_t> ciphertext;
  AeadTag tag;
};

// AES-256-GCM. seal never fails for well-formed inputs; open returns false
// on tag mismatch and leaves `plaintext` empty.
Sealed aead_seal(const AeadKey& key, const AeadNonce& nonce,
                 std::span<const std::uint8_t> plaintext);
bool aead_open(const AeadKey& key, const AeadNonce& nonce, const Sealed& sealed,
               std::vector<std::uint8_t>& plaintext);

}  // namespace sboxsim::crypto

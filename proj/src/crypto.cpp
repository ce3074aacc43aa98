#include "sboxsim/crypto.hpp"

#include <openssl/evp.h>

#include <cstdio>
#include <stdexcept>

namespace sboxsim {

std::string to_hex(const std::uint8_t* data, std::size_t len) {
  static const char* digits = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (std::size_t i = 0; i < len; ++i) {
    out.push_back(digits[data[i] >> 4]);
    out.push_back(digits[data[i] & 0xf]);
  }
  return out;
}

const char* access_kind_name(AccessKind k) {
  switch (k) {
    case AccessKind::Read: return "read";
    case AccessKind::Write: return "write";
    case AccessKind::Execute: return "execute";
  }
  return "?";
}

const char* enclave_kind_name(EnclaveKind k) {
  switch (k) {
    case EnclaveKind::Normal: return "normal";
    case EnclaveKind::BiEnclave: return "bi-enclave";
    case EnclaveKind::Monitor: return "monitor";
  }
  return "?";
}

namespace crypto {

Sha256::Sha256() : ctx_(EVP_MD_CTX_new()) {
  if (!ctx_ || EVP_DigestInit_ex(static_cast<EVP_MD_CTX*>(ctx_), EVP_sha256(),
                                 nullptr) != 1) {
    throw std::runtime_error("sha256 init failed");
  }
}

Sha256::~Sha256() { EVP_MD_CTX_free(static_cast<EVP_MD_CTX*>(ctx_)); }

void Sha256::update(std::span<const std::uint8_t> data) {
  if (EVP_DigestUpdate(static_cast<EVP_MD_CTX*>(ctx_), data.data(),
                       data.size()) != 1) {
    throw std::runtime_error("sha256 update failed");
  }
}

Digest Sha256::finish() {
  Digest out{};
  unsigned int len = 0;
  if (EVP_DigestFinal_ex(static_cast<EVP_MD_CTX*>(ctx_), out.data(), &len) !=
          1 ||
      len != out.size()) {
    throw std::runtime_error("sha256 final failed");
  }
  return out;
}

Digest sha256(std::span<const std::uint8_t> data) {
  Sha256 h;
  h.update(data);
  return h.finish();
}

Sealed aead_seal(const AeadKey& key, const AeadNonce& nonce,
                 std::span<const std::uint8_t> plaintext) {
  EVP_CIPHER_CTX* ctx = EVP_CIPHER_CTX_new();
  if (!ctx) throw std::runtime_error("aead ctx alloc failed");

  Sealed out;
  out.ciphertext.resize(plaintext.size());
  int len = 0;
  bool ok = EVP_EncryptInit_ex(ctx, EVP_aes_256_gcm(), nullptr, key.data(),
                               nonce.data()) == 1 &&
            (plaintext.empty() ||
             EVP_EncryptUpdate(ctx, out.ciphertext.data(), &len,
                               plaintext.data(),
                               static_cast<int>(plaintext.size())) == 1) &&
            EVP_EncryptFinal_ex(ctx, out.ciphertext.data() + len, &len) == 1 &&
            EVP_CIPHER_CTX_ctrl(ctx, EVP_CTRL_GCM_GET_TAG, kAeadTagBytes,
                                out.tag.data()) == 1;
  EVP_CIPHER_CTX_free(ctx);
  if (!ok) throw std::runtime_error("aead seal failed");
  return out;
}

bool aead_open(const AeadKey& key, const AeadNonce& nonce, const Sealed& sealed,
               std::vector<std::uint8_t>& plaintext) {
  EVP_CIPHER_CTX* ctx = EVP_CIPHER_CTX_new();
  if (!ctx) throw std::runtime_error("aead ctx alloc failed");

  plaintext.assign(sealed.ciphertext.size(), 0);
  int len = 0;
  AeadTag tag = sealed.tag;
  bool ok =
      EVP_DecryptInit_ex(ctx, EVP_aes_256_gcm(), nullptr, key.data(),
                         nonce.data()) == 1 &&
      (sealed.ciphertext.empty() ||
       EVP_DecryptUpdate(ctx, plaintext.data(), &len, sealed.ciphertext.data(),
                         static_cast<int>(sealed.ciphertext.size())) == 1) &&
      EVP_CIPHER_CTX_ctrl(ctx, EVP_CTRL_GCM_SET_TAG, kAeadTagBytes,
                          tag.data()) == 1 &&
      EVP_DecryptFinal_ex(ctx, plaintext.data() + len, &len) == 1;
  EVP_CIPHER_CTX_free(ctx);
  if (!ok) plaintext.clear();
  return ok;
}

}  // namespace crypto
}  // namespace sboxsim

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>

namespace sboxsim {

using PhysPage = std::uint64_t;
using VirtPage = std::uint64_t;
using EnclaveId = std::uint64_t;
using ProcessId = std::uint64_t;
using CpuId = std::uint32_t;

inline constexpr std::size_t kPageBytes = 4096;

// Co-owner SECS page numbers are carried in a 52-bit EPCM field.
inline constexpr unsigned kCoOwnerFieldBits = 52;
inline constexpr PhysPage kCoOwnerMax = (PhysPage{1} << kCoOwnerFieldBits) - 1;

using Digest = std::array<std::uint8_t, 32>;

std::string to_hex(const std::uint8_t* data, std::size_t len);
inline std::string to_hex(const Digest& d) { return to_hex(d.data(), d.size()); }

// Permission bits, EPCM-style.
enum Perm : std::uint8_t {
  kPermRead = 1,
  kPermWrite = 2,
  kPermExec = 4,
  kPermRW = kPermRead | kPermWrite,
  kPermRX = kPermRead | kPermExec,
  kPermRWX = kPermRead | kPermWrite | kPermExec,
};

enum class AccessKind : std::uint8_t { Read, Write, Execute };

inline std::uint8_t perm_bit(AccessKind k) {
  switch (k) {
    case AccessKind::Read: return kPermRead;
    case AccessKind::Write: return kPermWrite;
    case AccessKind::Execute: return kPermExec;
  }
  return 0;
}

const char* access_kind_name(AccessKind k);

enum class PageKind : std::uint8_t { Regular, SecsPage, SharePending };

// Execution mode of a logical processor: untrusted, or inside one enclave.
using Mode = std::optional<EnclaveId>;

enum class EnclaveKind : std::uint8_t { Normal, BiEnclave, Monitor };

const char* enclave_kind_name(EnclaveKind k);

}  // namespace sboxsim

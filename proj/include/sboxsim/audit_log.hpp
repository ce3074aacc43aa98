#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sboxsim/crypto.hpp"
#include "sboxsim/types.hpp"

namespace sboxsim {

struct ResourceDelta {
  std::uint64_t file_read = 0;
  std::uint64_t file_written = 0;
  std::uint64_t net = 0;

  bool operator==(const ResourceDelta&) const = default;
};

struct LogEntry {
  std::uint64_t seq = 0;
  EnclaveId enclave = 0;
  std::uint64_t sysno = 0;
  ResourceDelta delta;
  Digest prev_hash{};
  Digest entry_hash{};
};

// Hash-chained, append-only resource accounting. Any mutation of a
// committed entry breaks the chain from that index on.
class AccountingLog {
 public:
  const LogEntry& append(EnclaveId enclave, std::uint64_t sysno,
                         const ResourceDelta& delta);

  // First index whose hash no longer verifies, or nullopt if intact.
  std::optional<std::size_t> verify_chain() const;

  const std::vector<LogEntry>& entries() const { return entries_; }
  // Tamper surface for adversary tests.
  LogEntry& entry_mut(std::size_t i) { return entries_.at(i); }

  ResourceDelta totals() const;

  std::string export_jsonl() const;
  // Sealed under the monitor's key: AEAD over the JSON-lines export.
  crypto::Sealed sealed_export(const crypto::AeadKey& key) const;

  static Digest entry_digest(const LogEntry& e);

 private:
  std::vector<LogEntry> entries_;
};

}  // namespace sboxsim

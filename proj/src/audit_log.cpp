#include "sboxsim/audit_log.hpp"

#include <sstream>

#include "json.hpp"

namespace sboxsim {

namespace {

void put_le64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

}  // namespace

Digest AccountingLog::entry_digest(const LogEntry& e) {
  std::vector<std::uint8_t> buf;
  buf.reserve(6 * 8 + 32);
  put_le64(buf, e.seq);
  put_le64(buf, e.enclave);
  put_le64(buf, e.sysno);
  put_le64(buf, e.delta.file_read);
  put_le64(buf, e.delta.file_written);
  put_le64(buf, e.delta.net);
  buf.insert(buf.end(), e.prev_hash.begin(), e.prev_hash.end());
  return crypto::sha256(std::span(buf));
}

const LogEntry& AccountingLog::append(EnclaveId enclave, std::uint64_t sysno,
                                      const ResourceDelta& delta) {
  LogEntry e;
  e.seq = entries_.size();
  e.enclave = enclave;
  e.sysno = sysno;
  e.delta = delta;
  e.prev_hash = entries_.empty() ? Digest{} : entries_.back().entry_hash;
  e.entry_hash = entry_digest(e);
  entries_.push_back(std::move(e));
  return entries_.back();
}

std::optional<std::size_t> AccountingLog::verify_chain() const {
  Digest prev{};
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const LogEntry& e = entries_[i];
    if (e.seq != i || e.prev_hash != prev || entry_digest(e) != e.entry_hash) {
      return i;
    }
    prev = e.entry_hash;
  }
  return std::nullopt;
}

ResourceDelta AccountingLog::totals() const {
  ResourceDelta t;
  for (const LogEntry& e : entries_) {
    t.file_read += e.delta.file_read;
    t.file_written += e.delta.file_written;
    t.net += e.delta.net;
  }
  return t;
}

std::string AccountingLog::export_jsonl() const {
  std::ostringstream out;
  for (const LogEntry& e : entries_) {
    nlohmann::ordered_json j = {
        {"seq", e.seq},
        {"enclave", e.enclave},
        {"sysno", e.sysno},
        {"file_read", e.delta.file_read},
        {"file_written", e.delta.file_written},
        {"net", e.delta.net},
        {"prev_hash", to_hex(e.prev_hash)},
        {"entry_hash", to_hex(e.entry_hash)},
    };
    out << j.dump() << "\n";
  }
  return out.str();
}

crypto::Sealed AccountingLog::sealed_export(const crypto::AeadKey& key) const {
  const std::string text = export_jsonl();
  crypto::AeadNonce nonce{};  // one export per key in this model
  return crypto::aead_seal(
      key, nonce,
      std::span(reinterpret_cast<const std::uint8_t*>(text.data()),
                text.size()));
}

}  // namespace sboxsim
